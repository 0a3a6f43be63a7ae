//! Run configuration: a TOML file whose every field can be overridden from
//! the command line.

use std::path::{Path, PathBuf};

use bmim_core::comparators::QgcOptions;
use bmim_core::data::ColumnRoles;
use bmim_core::posterior::CurveOptions;
use bmim_core::simulation::ScenarioKind;
use bmim_core::{Hyperparameters, IndexSpec, KernelConfig, MethodKind, SamplerSettings};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    pub method: MethodKind,
    /// Grouping such as `"1-8;9-10;11-18"`, required for `bmim`.
    pub groups: Option<String>,
    pub outcome: String,
    /// Exposure columns; every remaining column when absent.
    pub exposures: Option<Vec<String>>,
    pub covariates: Vec<String>,
    /// Center and scale exposures before fitting.
    pub standardize: bool,
    pub kernel: KernelConfig,
    pub qgc: QgcOptions,
    pub hyper: Hyperparameters,
    pub sampler: SamplerSettings,
    pub summary: SummaryConfig,
    pub cv: CvConfig,
    pub simulate: SimulateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            out: PathBuf::from("bmim-out"),
            method: MethodKind::Bmim,
            groups: None,
            outcome: "y".into(),
            exposures: None,
            covariates: Vec::new(),
            standardize: true,
            kernel: KernelConfig::Gaussian,
            qgc: QgcOptions::default(),
            hyper: Hyperparameters::default(),
            sampler: SamplerSettings::default(),
            summary: SummaryConfig::default(),
            cv: CvConfig::default(),
            simulate: SimulateConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SummaryConfig {
    pub curves: CurveOptions,
    /// Percentiles at which the partner index is held in interaction grids.
    pub interaction_percentiles: Vec<f64>,
    pub contrast_hi: f64,
    pub contrast_lo: f64,
    /// Also write one restricted contrast per index.
    pub index_contrasts: bool,
    /// Write every draw as CSV next to the binary chain.
    pub export_csv: bool,
}

impl Default for SummaryConfig {
    fn default() -> Self {
        Self {
            curves: CurveOptions::default(),
            interaction_percentiles: vec![0.1, 0.5, 0.9],
            contrast_hi: 0.6,
            contrast_lo: 0.5,
            index_contrasts: true,
            export_csv: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub folds: usize,
    /// Methods compared; the configured `method` when empty.
    pub methods: Vec<MethodKind>,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self { folds: 5, methods: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub scenarios: Vec<ScenarioKind>,
    pub sigma: f64,
    pub replicates: usize,
    pub n_total: usize,
    pub n_train: usize,
    pub methods: Vec<MethodKind>,
    pub cv_folds: Option<usize>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            scenarios: vec![ScenarioKind::A, ScenarioKind::B],
            sigma: 0.5,
            replicates: 20,
            n_total: 500,
            n_train: 300,
            methods: MethodKind::ALL.to_vec(),
            cv_folds: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("invalid configuration: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn roles(&self) -> ColumnRoles {
        ColumnRoles {
            outcome: self.outcome.clone(),
            exposures: self.exposures.clone(),
            covariates: self.covariates.clone(),
        }
    }

    pub fn data_path(&self) -> Result<&Path, CliError> {
        self.data
            .as_deref()
            .ok_or_else(|| CliError::Config("no data file given (--data or `data = ...`)".into()))
    }

    /// Parsed grouping for `p` exposures, if one is configured.
    pub fn index_spec(&self, p: usize) -> Result<Option<IndexSpec>, CliError> {
        self.groups
            .as_deref()
            .map(|g| IndexSpec::parse(g, p).map_err(CliError::from))
            .transpose()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.method == MethodKind::Bmim && self.groups.is_none() {
            return Err(CliError::Config("method bmim needs `groups` (e.g. \"1-8;9-10;11-18\")".into()));
        }
        if self.qgc.q < 2 {
            return Err(CliError::Config("qgc.q must be at least 2".into()));
        }
        if let KernelConfig::Polynomial { degree } = self.kernel {
            if degree == 0 {
                return Err(CliError::Config("polynomial degree must be at least 1".into()));
            }
        }
        if self.cv.folds < 2 {
            return Err(CliError::Config("cv.folds must be at least 2".into()));
        }
        self.hyper.validate()?;
        self.sampler.validate()?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form of this configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("configuration serializes");
        hex::encode(Sha256::digest(&json))
    }
}

pub fn file_hash(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
