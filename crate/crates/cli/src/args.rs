//! Command-line flags. Values given here override the configuration file.

use std::path::PathBuf;

use bmim_core::simulation::ScenarioKind;
use bmim_core::{KernelConfig, MethodKind};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::{cmd_cv, cmd_fit, cmd_predict, cmd_simulate, cmd_summarize, CliError, Manifest, Result, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "bmim", version, about = "Bayesian multiple index models for exposure mixtures")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelName {
    Gaussian,
    Poly,
}

#[derive(Debug, Default, Args)]
pub struct GlobalArgs {
    /// Input CSV with a header row.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub chains: Option<usize>,
    #[arg(long, global = true)]
    pub iters: Option<usize>,
    #[arg(long, global = true)]
    pub burnin: Option<usize>,
    #[arg(long, global = true)]
    pub thin: Option<usize>,
    #[arg(long, global = true, value_parser = parse_method)]
    pub method: Option<MethodKind>,
    /// Index grouping, e.g. "1-8;9-10;11-18".
    #[arg(long, global = true)]
    pub groups: Option<String>,
    #[arg(long, global = true, value_enum)]
    pub kernel: Option<KernelName>,
    /// Polynomial kernel degree (implies --kernel poly).
    #[arg(long, global = true)]
    pub degree: Option<u32>,
    /// Quantile bins for qgc.
    #[arg(long, global = true)]
    pub q: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the configured method and store the chain.
    Fit {
        /// Also write every draw as CSV.
        #[arg(long)]
        export_csv: bool,
        /// Rerun the configuration stored in a manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Weight tables and index-wise curves from a stored chain.
    Summarize {
        #[arg(long)]
        grid: Option<usize>,
        /// Quantile at which the other indices are held.
        #[arg(long)]
        fix_quantile: Option<f64>,
    },
    /// Overall contrast and interaction grids from a stored chain.
    Predict {
        #[arg(long)]
        hi: Option<f64>,
        #[arg(long)]
        lo: Option<f64>,
        /// Comma-separated percentiles for the partner index.
        #[arg(long, value_delimiter = ',')]
        percentiles: Option<Vec<f64>>,
    },
    /// K-fold cross-validated prediction error.
    Cv {
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long, value_delimiter = ',', value_parser = parse_method)]
        methods: Option<Vec<MethodKind>>,
    },
    /// Simulation study on synthetic correlated exposures.
    Simulate {
        #[arg(long, value_delimiter = ',', value_parser = parse_scenario)]
        scenarios: Option<Vec<ScenarioKind>>,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long, value_delimiter = ',', value_parser = parse_method)]
        methods: Option<Vec<MethodKind>>,
        #[arg(long)]
        cv_folds: Option<usize>,
    },
}

fn parse_method(s: &str) -> std::result::Result<MethodKind, String> {
    s.parse().map_err(|e: bmim_core::Error| e.to_string())
}

fn parse_scenario(s: &str) -> std::result::Result<ScenarioKind, String> {
    s.parse().map_err(|e: bmim_core::Error| e.to_string())
}

impl GlobalArgs {
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(v) = &self.data {
            cfg.data = Some(v.clone());
        }
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        let s = &mut cfg.sampler;
        if let Some(v) = self.seed {
            s.seed = v;
        }
        if let Some(v) = self.chains {
            s.chains = v;
        }
        if let Some(v) = self.iters {
            s.iterations = v;
        }
        if let Some(v) = self.burnin {
            s.burn_in = v;
        }
        if let Some(v) = self.thin {
            s.thin = v;
        }
        if let Some(v) = self.method {
            cfg.method = v;
        }
        if let Some(v) = &self.groups {
            cfg.groups = Some(v.clone());
        }
        if let Some(v) = self.q {
            cfg.qgc.q = v;
        }
        match (self.kernel, self.degree) {
            (Some(KernelName::Gaussian), Some(_)) => {
                return Err(CliError::Config("--degree only applies to --kernel poly".into()));
            }
            (Some(KernelName::Gaussian), None) => cfg.kernel = KernelConfig::Gaussian,
            (_, Some(d)) => cfg.kernel = KernelConfig::polynomial(d)?,
            (Some(KernelName::Poly), None) => {
                if !matches!(cfg.kernel, KernelConfig::Polynomial { .. }) {
                    return Err(CliError::Config("--kernel poly needs --degree".into()));
                }
            }
            (None, None) => {}
        }
        Ok(())
    }
}

impl Cli {
    /// Configuration after layering file, manifest and flags, in that order.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.global.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Command::Fit { manifest: Some(path), .. } = &self.command {
            cfg = Manifest::load(path)?.config;
        }
        self.global.apply(&mut cfg)?;
        match &self.command {
            Command::Fit { export_csv, .. } => {
                if *export_csv {
                    cfg.summary.export_csv = true;
                }
            }
            Command::Summarize { grid, fix_quantile } => {
                if let Some(g) = grid {
                    cfg.summary.curves.grid_size = *g;
                }
                if let Some(f) = fix_quantile {
                    cfg.summary.curves.fix_quantile = *f;
                }
            }
            Command::Predict { hi, lo, percentiles } => {
                if let Some(v) = hi {
                    cfg.summary.contrast_hi = *v;
                }
                if let Some(v) = lo {
                    cfg.summary.contrast_lo = *v;
                }
                if let Some(v) = percentiles {
                    cfg.summary.interaction_percentiles = v.clone();
                }
            }
            Command::Cv { folds, methods } => {
                if let Some(v) = folds {
                    cfg.cv.folds = *v;
                }
                if let Some(v) = methods {
                    cfg.cv.methods = v.clone();
                }
            }
            Command::Simulate { scenarios, replicates, sigma, methods, cv_folds } => {
                let sim = &mut cfg.simulate;
                if let Some(v) = scenarios {
                    sim.scenarios = v.clone();
                }
                if let Some(v) = replicates {
                    sim.replicates = *v;
                }
                if let Some(v) = sigma {
                    sim.sigma = *v;
                }
                if let Some(v) = methods {
                    sim.methods = v.clone();
                }
                if cv_folds.is_some() {
                    sim.cv_folds = *cv_folds;
                }
            }
        }
        Ok(cfg)
    }

    pub fn run(&self) -> Result<Vec<PathBuf>> {
        let cfg = self.resolve()?;
        match self.command {
            Command::Fit { .. } => cmd_fit(&cfg),
            Command::Summarize { .. } => cmd_summarize(&cfg),
            Command::Predict { .. } => cmd_predict(&cfg),
            Command::Cv { .. } => cmd_cv(&cfg),
            Command::Simulate { .. } => cmd_simulate(&cfg),
        }
    }
}
