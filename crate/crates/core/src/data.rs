//! Analysis inputs: the dataset, exposure transforms and index groupings.

use std::collections::HashSet;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

pub const INTERCEPT: &str = "(Intercept)";

/// Outcome `y` (length N), exposures `X` (N×P) and covariates `Z` (N×q).
///
/// When `q > 0` the first covariate column is the all-ones intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Array1<f64>,
    x: Array2<f64>,
    z: Array2<f64>,
    outcome_name: String,
    exposure_names: Vec<String>,
    covariate_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        y: Array1<f64>,
        x: Array2<f64>,
        z: Array2<f64>,
        outcome_name: impl Into<String>,
        exposure_names: Vec<String>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let n = y.len();
        if x.nrows() != n || z.nrows() != n {
            return Err(Error::Dimension(format!(
                "y has {n} rows, X has {}, Z has {}",
                x.nrows(),
                z.nrows()
            )));
        }
        if exposure_names.len() != x.ncols() || covariate_names.len() != z.ncols() {
            return Err(Error::Dimension("column labels do not match matrix widths".into()));
        }
        if n <= z.ncols() {
            return Err(Error::Dataset(format!(
                "need more observations ({n}) than covariates ({})",
                z.ncols()
            )));
        }
        if x.ncols() == 0 {
            return Err(Error::Dataset("at least one exposure is required".into()));
        }
        let outcome_name = outcome_name.into();
        let mut seen = HashSet::new();
        for name in std::iter::once(&outcome_name)
            .chain(&exposure_names)
            .chain(&covariate_names)
        {
            if !seen.insert(name.as_str()) {
                return Err(Error::Dataset(format!("duplicate column label {name:?}")));
            }
        }
        if y.iter().chain(x.iter()).chain(z.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Dataset("missing or non-finite values".into()));
        }
        if z.ncols() > 0 && z.column(0).iter().any(|&v| v != 1.0) {
            return Err(Error::Dataset("first covariate column must be the intercept".into()));
        }
        Ok(Self { y, x, z, outcome_name, exposure_names, covariate_names })
    }

    /// Builds a dataset with an intercept column prepended to `covariates`.
    pub fn with_intercept(
        y: Array1<f64>,
        x: Array2<f64>,
        covariates: Array2<f64>,
        exposure_names: Vec<String>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let n = y.len();
        if covariates.nrows() != n {
            return Err(Error::Dimension("covariate rows differ from outcome length".into()));
        }
        let mut z = Array2::ones((n, covariates.ncols() + 1));
        z.slice_mut(ndarray::s![.., 1..]).assign(&covariates);
        let mut names = vec![INTERCEPT.to_string()];
        names.extend(covariate_names);
        Self::new(y, x, z, "y", exposure_names, names)
    }

    pub fn y(&self) -> &Array1<f64> {
        &self.y
    }
    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }
    pub fn z(&self) -> &Array2<f64> {
        &self.z
    }
    pub fn n(&self) -> usize {
        self.y.len()
    }
    pub fn p(&self) -> usize {
        self.x.ncols()
    }
    pub fn q(&self) -> usize {
        self.z.ncols()
    }
    pub fn outcome_name(&self) -> &str {
        &self.outcome_name
    }
    pub fn exposure_names(&self) -> &[String] {
        &self.exposure_names
    }
    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }
    pub fn has_intercept(&self) -> bool {
        self.q() > 0
    }

    /// Rows `rows` of every matrix, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        Self::new(
            self.y.select(Axis(0), rows),
            self.x.select(Axis(0), rows),
            self.z.select(Axis(0), rows),
            self.outcome_name.clone(),
            self.exposure_names.clone(),
            self.covariate_names.clone(),
        )
    }

    /// Same observations with exposures replaced (e.g. after standardizing).
    pub fn with_exposures(&self, x: Array2<f64>) -> Result<Self> {
        Self::new(
            self.y.clone(),
            x,
            self.z.clone(),
            self.outcome_name.clone(),
            self.exposure_names.clone(),
            self.covariate_names.clone(),
        )
    }

    /// Loads a CSV file with a header row. An intercept column is prepended to
    /// the covariates.
    pub fn from_csv(path: impl AsRef<Path>, roles: &ColumnRoles) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let header: Vec<String> = reader.headers()?.iter().map(|s| s.trim().to_string()).collect();
        let find = |name: &str| -> Result<usize> {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Dataset(format!("column {name:?} not found in header")))
        };
        let y_col = find(&roles.outcome)?;
        let cov_cols = roles.covariates.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
        let exposure_names: Vec<String> = match &roles.exposures {
            Some(list) => list.clone(),
            None => header
                .iter()
                .filter(|h| **h != roles.outcome && !roles.covariates.contains(h))
                .cloned()
                .collect(),
        };
        let exp_cols = exposure_names.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;

        let mut y = Vec::new();
        let mut xs = Vec::new();
        let mut zs = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            let get = |col: usize| -> Result<f64> {
                let raw = record.get(col).unwrap_or("").trim();
                raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    Error::Dataset(format!(
                        "row {} column {:?}: missing or non-numeric value {raw:?}",
                        row + 2,
                        header[col]
                    ))
                })
            };
            y.push(get(y_col)?);
            for &c in &exp_cols {
                xs.push(get(c)?);
            }
            zs.push(1.0);
            for &c in &cov_cols {
                zs.push(get(c)?);
            }
        }
        let n = y.len();
        let x = Array2::from_shape_vec((n, exp_cols.len()), xs)
            .map_err(|e| Error::Dimension(e.to_string()))?;
        let z = Array2::from_shape_vec((n, cov_cols.len() + 1), zs)
            .map_err(|e| Error::Dimension(e.to_string()))?;
        let mut cov_names = vec![INTERCEPT.to_string()];
        cov_names.extend(roles.covariates.iter().cloned());
        Self::new(Array1::from(y), x, z, roles.outcome.clone(), exposure_names, cov_names)
    }
}

/// Which CSV columns play which role. `exposures = None` takes every column
/// that is neither the outcome nor a covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnRoles {
    pub outcome: String,
    pub exposures: Option<Vec<String>>,
    pub covariates: Vec<String>,
}

/// Partition of the P exposure columns (0-based) into M index groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexSpec {
    groups: Vec<Vec<usize>>,
}

impl IndexSpec {
    pub fn new(groups: Vec<Vec<usize>>, p: usize) -> Result<Self> {
        let spec = Self { groups };
        validate_index_spec(&spec, p)?;
        Ok(spec)
    }

    /// One index holding every exposure.
    pub fn single(p: usize) -> Self {
        Self { groups: vec![(0..p).collect()] }
    }

    /// One index per exposure.
    pub fn singletons(p: usize) -> Self {
        Self { groups: (0..p).map(|j| vec![j]).collect() }
    }

    /// Consecutive blocks of the given sizes.
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        let mut start = 0;
        let groups = sizes
            .iter()
            .map(|&s| {
                let g = (start..start + s).collect::<Vec<_>>();
                start += s;
                g
            })
            .collect();
        Self::new(groups, start)
    }

    /// Parses `"1-8;9-10;11-18"` style groupings (1-based, inclusive ranges,
    /// comma-separated lists allowed inside a group).
    pub fn parse(text: &str, p: usize) -> Result<Self> {
        let mut groups = Vec::new();
        for group in text.split(';').map(str::trim).filter(|g| !g.is_empty()) {
            let mut cols = Vec::new();
            for part in group.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let bad = || Error::IndexSpec(format!("cannot parse {part:?}"));
                if let Some((a, b)) = part.split_once('-') {
                    let a: usize = a.trim().parse().map_err(|_| bad())?;
                    let b: usize = b.trim().parse().map_err(|_| bad())?;
                    if a == 0 || b < a {
                        return Err(bad());
                    }
                    cols.extend((a..=b).map(|c| c - 1));
                } else {
                    let a: usize = part.parse().map_err(|_| bad())?;
                    if a == 0 {
                        return Err(bad());
                    }
                    cols.push(a - 1);
                }
            }
            groups.push(cols);
        }
        Self::new(groups, p)
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }
    pub fn num_indices(&self) -> usize {
        self.groups.len()
    }
    pub fn sizes(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }
    pub fn num_exposures(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    /// Renders the grouping in the 1-based text form accepted by [`parse`](Self::parse).
    pub fn to_text(&self) -> String {
        self.groups
            .iter()
            .map(|g| g.iter().map(|c| (c + 1).to_string()).collect::<Vec<_>>().join(","))
            .collect::<Vec<_>>()
            .join(";")
    }
}

/// Checks that the groups partition `{0, …, p-1}`. Errors report 1-based
/// column numbers.
pub fn validate_index_spec(spec: &IndexSpec, p: usize) -> Result<()> {
    if spec.groups.is_empty() {
        return Err(Error::IndexSpec("at least one index is required".into()));
    }
    let mut owner: Vec<Option<usize>> = vec![None; p];
    for (m, group) in spec.groups.iter().enumerate() {
        if group.is_empty() {
            return Err(Error::IndexSpec(format!("index {} is empty", m + 1)));
        }
        for &c in group {
            if c >= p {
                return Err(Error::IndexSpec(format!(
                    "column {} is out of range (P = {p})",
                    c + 1
                )));
            }
            if let Some(prev) = owner[c] {
                return Err(Error::IndexSpec(format!(
                    "column {} appears in index {} and index {}",
                    c + 1,
                    prev + 1,
                    m + 1
                )));
            }
            owner[c] = Some(m);
        }
    }
    if let Some(c) = owner.iter().position(Option::is_none) {
        return Err(Error::IndexSpec(format!("column {} is not assigned to any index", c + 1)));
    }
    Ok(())
}

/// Column means and sample standard deviations used to standardize exposures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationRecord {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl StandardizationRecord {
    pub fn apply(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_width(x)?;
        let mut out = x.clone();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| (v - self.means[j]) / self.sds[j]);
        }
        Ok(out)
    }

    pub fn invert(&self, x_std: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_width(x_std)?;
        let mut out = x_std.clone();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| v * self.sds[j] + self.means[j]);
        }
        Ok(out)
    }

    fn check_width(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.means.len() {
            return Err(Error::Dimension(format!(
                "record has {} columns, matrix has {}",
                self.means.len(),
                x.ncols()
            )));
        }
        Ok(())
    }
}

/// Centers each column to mean 0 and scales to sample sd 1.
pub fn standardize(x: &Array2<f64>) -> Result<(Array2<f64>, StandardizationRecord)> {
    let mut means = Vec::with_capacity(x.ncols());
    let mut sds = Vec::with_capacity(x.ncols());
    for (j, col) in x.columns().into_iter().enumerate() {
        let v = col.to_vec();
        let m = stats::mean(&v);
        let sd = stats::sample_sd(&v);
        if !(sd > 0.0) || !sd.is_finite() {
            return Err(Error::ConstantColumn { column: j, name: format!("column {}", j + 1) });
        }
        means.push(m);
        sds.push(sd);
    }
    let record = StandardizationRecord { means, sds };
    let out = record.apply(x)?;
    Ok((out, record))
}

/// Empirical quantile cut points at levels `j/q`, `j = 1..q-1`, by linear
/// interpolation of order statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileCuts {
    pub cuts: Vec<f64>,
}

impl QuantileCuts {
    pub fn fit(values: ArrayView1<f64>, q: usize) -> Result<Self> {
        if q < 2 {
            return Err(Error::InvalidArgument(format!("quantile count q = {q} must be at least 2")));
        }
        if values.is_empty() {
            return Err(Error::InvalidArgument("cannot score an empty vector".into()));
        }
        let sorted = stats::sorted(&values.to_vec());
        let cuts = (1..q)
            .map(|j| stats::quantile_sorted(&sorted, j as f64 / q as f64))
            .collect();
        Ok(Self { cuts })
    }

    /// Number of cut points strictly below `v`.
    pub fn score(&self, v: f64) -> usize {
        self.cuts.iter().filter(|&&c| c < v).count()
    }
}

/// Scores each value by the number of its own sample's quantile cut points
/// lying strictly below it, giving integers in `0..q`.
pub fn quantile_score(x: ArrayView1<f64>, q: usize) -> Result<Vec<usize>> {
    let cuts = QuantileCuts::fit(x, q)?;
    Ok(x.iter().map(|&v| cuts.score(v)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn standardize_small_column() {
        let x = array![[1.0], [2.0], [3.0]];
        let (xs, rec) = standardize(&x).unwrap();
        assert_eq!(rec.means, vec![2.0]);
        assert_eq!(rec.sds, vec![1.0]);
        assert_eq!(xs, array![[-1.0], [0.0], [1.0]]);
    }

    #[test]
    fn standardize_is_idempotent() {
        let x = array![[0.3, 9.0], [1.7, -2.0], [4.1, 5.5], [2.2, 0.1]];
        let (once, _) = standardize(&x).unwrap();
        let (twice, _) = standardize(&once).unwrap();
        for (a, b) in once.iter().zip(twice.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_column_is_rejected() {
        let x = array![[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]];
        match standardize(&x) {
            Err(Error::ConstantColumn { column, .. }) => assert_eq!(column, 1),
            other => panic!("expected constant column error, got {other:?}"),
        }
    }

    #[test]
    fn quartile_scores() {
        let s = quantile_score(array![10.0, 20.0, 30.0, 40.0].view(), 4).unwrap();
        assert_eq!(s, vec![0, 1, 2, 3]);
        let s = quantile_score(array![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0].view(), 4).unwrap();
        assert_eq!(s, vec![0, 0, 1, 1, 2, 2, 3, 3]);
        let s = quantile_score(array![4.0, 4.0, 4.0].view(), 3).unwrap();
        assert_eq!(s, vec![0, 0, 0]);
    }

    #[test]
    fn quantile_score_needs_two_bins() {
        assert!(quantile_score(array![1.0, 2.0].view(), 1).is_err());
        assert!(quantile_score(Array1::<f64>::zeros(0).view(), 4).is_err());
    }

    #[test]
    fn ties_share_a_score() {
        let s = quantile_score(array![1.0, 2.0, 2.0, 2.0, 3.0].view(), 4).unwrap();
        assert_eq!(s[1], s[2]);
        assert_eq!(s[2], s[3]);
    }

    #[test]
    fn nhanes_grouping_is_valid() {
        let spec = IndexSpec::parse("1-8;9-10;11-18", 18).unwrap();
        assert_eq!(spec.sizes(), vec![8, 2, 8]);
        assert_eq!(spec.to_text().split(';').count(), 3);
    }

    #[test]
    fn overlap_and_gap_are_named() {
        let err = IndexSpec::new(vec![vec![0], vec![0, 1]], 2).unwrap_err();
        assert!(err.to_string().contains("column 1"), "{err}");
        let err = IndexSpec::new(vec![vec![0]], 2).unwrap_err();
        assert!(err.to_string().contains("column 2"), "{err}");
        let err = IndexSpec::new(vec![vec![0, 5]], 2).unwrap_err();
        assert!(err.to_string().contains("column 6"), "{err}");
    }

    #[test]
    fn dataset_rejects_duplicates_and_short_data() {
        let y = array![1.0, 2.0];
        let x = array![[1.0], [2.0]];
        let z = array![[1.0, 0.0], [1.0, 1.0]];
        let err = Dataset::new(y.clone(), x.clone(), z, "y", vec!["a".into()], vec!["c".into(), "d".into()]);
        assert!(err.is_err(), "N must exceed q");
        let z = array![[1.0], [1.0]];
        let err = Dataset::new(y, x, z, "y", vec!["y".into()], vec!["c".into()]);
        assert!(err.is_err(), "duplicate labels");
    }
}
