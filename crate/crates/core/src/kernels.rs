//! Index kernels over multi-index projections.
//!
//! With index values `e_m = x_mᵀθ*_m`, the Gaussian kernel is
//! `exp(-Σ_m (e_m - e'_m)²)` and the polynomial kernel is
//! `(1 + Σ_m e_m e'_m)^d`. Every kernel here is computed from the
//! projected index values, so raw exposure rows and index-space points share
//! one code path.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::IndexSpec;
use crate::error::{Error, Result};

/// Unconstrained index weights `θ*_m`, one vector per index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSet {
    per_index: Vec<Vec<f64>>,
}

impl WeightSet {
    pub fn new(per_index: Vec<Vec<f64>>, spec: &IndexSpec) -> Result<Self> {
        let sizes = spec.sizes();
        if per_index.len() != sizes.len()
            || per_index.iter().zip(&sizes).any(|(w, &s)| w.len() != s)
        {
            return Err(Error::Dimension(format!(
                "weight lengths {:?} do not match index sizes {sizes:?}",
                per_index.iter().map(Vec::len).collect::<Vec<_>>()
            )));
        }
        if per_index.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("weights must be finite".into()));
        }
        Ok(Self { per_index })
    }

    pub fn zeros(spec: &IndexSpec) -> Self {
        Self { per_index: spec.sizes().into_iter().map(|s| vec![0.0; s]).collect() }
    }

    /// Splits a flat vector (index-major order) into per-index blocks.
    pub fn from_flat(flat: &[f64], spec: &IndexSpec) -> Result<Self> {
        let mut it = flat.iter().copied();
        let per_index = spec.sizes().into_iter().map(|s| it.by_ref().take(s).collect()).collect();
        if flat.len() != spec.num_exposures() {
            return Err(Error::Dimension("flat weight length differs from P".into()));
        }
        Self::new(per_index, spec)
    }

    pub fn flat(&self) -> Vec<f64> {
        self.per_index.iter().flatten().copied().collect()
    }

    pub fn num_indices(&self) -> usize {
        self.per_index.len()
    }

    pub fn index(&self, m: usize) -> &[f64] {
        &self.per_index[m]
    }

    pub fn index_mut(&mut self, m: usize) -> &mut [f64] {
        &mut self.per_index[m]
    }

    pub fn indices(&self) -> &[Vec<f64>] {
        &self.per_index
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KernelConfig {
    Gaussian,
    Polynomial { degree: u32 },
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig::Gaussian
    }
}

impl KernelConfig {
    pub fn polynomial(degree: u32) -> Result<Self> {
        if degree == 0 {
            return Err(Error::InvalidArgument("polynomial degree must be at least 1".into()));
        }
        Ok(KernelConfig::Polynomial { degree })
    }

    /// Contribution of one index to the pair sum.
    #[inline]
    pub(crate) fn pair_term(&self, a: f64, b: f64) -> f64 {
        match self {
            KernelConfig::Gaussian => {
                let d = a - b;
                d * d
            }
            KernelConfig::Polynomial { .. } => a * b,
        }
    }

    /// Kernel value from the summed pair terms.
    #[inline]
    pub(crate) fn from_pair_sum(&self, s: f64) -> f64 {
        match self {
            KernelConfig::Gaussian => (-s).exp(),
            KernelConfig::Polynomial { degree } => (1.0 + s).powi(*degree as i32),
        }
    }
}

/// Query locations for cross-kernel matrices.
#[derive(Debug, Clone, Copy)]
pub enum QueryPoints<'a> {
    /// Raw exposure rows (G×P); projected with the weights before use.
    Exposures(ArrayView2<'a, f64>),
    /// Points already in index space (G×M), in the units of `xᵀθ*`.
    Index(ArrayView2<'a, f64>),
}

/// Index values `E_im = x_imᵀθ*_m` (N×M).
pub fn project(x: ArrayView2<f64>, spec: &IndexSpec, w: &WeightSet) -> Result<Array2<f64>> {
    if x.ncols() != spec.num_exposures() {
        return Err(Error::Dimension(format!(
            "exposure matrix has {} columns, grouping covers {}",
            x.ncols(),
            spec.num_exposures()
        )));
    }
    if w.num_indices() != spec.num_indices() {
        return Err(Error::Dimension("weights and grouping disagree on M".into()));
    }
    let mut e = Array2::zeros((x.nrows(), spec.num_indices()));
    for (m, group) in spec.groups().iter().enumerate() {
        let theta = w.index(m);
        if theta.len() != group.len() {
            return Err(Error::Dimension(format!("index {} weight length", m + 1)));
        }
        for (i, row) in x.rows().into_iter().enumerate() {
            e[[i, m]] = group.iter().zip(theta).map(|(&c, &t)| row[c] * t).sum();
        }
    }
    Ok(e)
}

fn project_row(row: ArrayView1<f64>, spec: &IndexSpec, w: &WeightSet) -> Result<Vec<f64>> {
    let x = row.insert_axis(ndarray::Axis(0));
    Ok(project(x, spec, w)?.row(0).to_vec())
}

pub fn gaussian_entry(
    x: ArrayView1<f64>,
    x2: ArrayView1<f64>,
    spec: &IndexSpec,
    w: &WeightSet,
) -> Result<f64> {
    entry(x, x2, spec, w, KernelConfig::Gaussian)
}

pub fn polynomial_entry(
    x: ArrayView1<f64>,
    x2: ArrayView1<f64>,
    spec: &IndexSpec,
    w: &WeightSet,
    degree: u32,
) -> Result<f64> {
    entry(x, x2, spec, w, KernelConfig::polynomial(degree)?)
}

fn entry(
    x: ArrayView1<f64>,
    x2: ArrayView1<f64>,
    spec: &IndexSpec,
    w: &WeightSet,
    cfg: KernelConfig,
) -> Result<f64> {
    if x.len() != x2.len() {
        return Err(Error::Dimension("rows differ in length".into()));
    }
    let a = project_row(x, spec, w)?;
    let b = project_row(x2, spec, w)?;
    let s: f64 = a.iter().zip(&b).map(|(&u, &v)| cfg.pair_term(u, v)).sum();
    Ok(cfg.from_pair_sum(s))
}

/// N×N kernel matrix over the rows of `x`.
pub fn gram_matrix(
    x: ArrayView2<f64>,
    spec: &IndexSpec,
    w: &WeightSet,
    cfg: KernelConfig,
) -> Result<Array2<f64>> {
    let e = project(x, spec, w)?;
    Ok(gram_from_index(e.view(), cfg))
}

/// G×N kernel matrix between query points and the rows of `x`.
pub fn cross_matrix(
    query: QueryPoints,
    x: ArrayView2<f64>,
    spec: &IndexSpec,
    w: &WeightSet,
    cfg: KernelConfig,
) -> Result<Array2<f64>> {
    let e = project(x, spec, w)?;
    let e_new = match query {
        QueryPoints::Exposures(q) => project(q, spec, w)?,
        QueryPoints::Index(q) => {
            if q.ncols() != spec.num_indices() {
                return Err(Error::Dimension(format!(
                    "index-space queries have {} columns, model has {} indices",
                    q.ncols(),
                    spec.num_indices()
                )));
            }
            q.to_owned()
        }
    };
    Ok(cross_from_index(e_new.view(), e.view(), cfg))
}

/// Kernel matrix over index-space points (rows of `e`).
pub fn gram_from_index(e: ArrayView2<f64>, cfg: KernelConfig) -> Array2<f64> {
    let n = e.nrows();
    let mut k = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = e.row(i).iter().zip(e.row(j)).map(|(&a, &b)| cfg.pair_term(a, b)).sum();
            let v = cfg.from_pair_sum(s);
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
    }
    k
}

/// Kernel matrix between index-space points `e_new` (rows) and `e` (columns).
pub fn cross_from_index(e_new: ArrayView2<f64>, e: ArrayView2<f64>, cfg: KernelConfig) -> Array2<f64> {
    let mut k = Array2::zeros((e_new.nrows(), e.nrows()));
    for (g, qrow) in e_new.rows().into_iter().enumerate() {
        for (j, orow) in e.rows().into_iter().enumerate() {
            let s: f64 = qrow.iter().zip(orow).map(|(&a, &b)| cfg.pair_term(a, b)).sum();
            k[[g, j]] = cfg.from_pair_sum(s);
        }
    }
    k
}

/// Lower-triangular running sums `S_ij = Σ_m term(E_im, E_jm)`, updated one
/// index column at a time during sampling.
#[derive(Debug, Clone)]
pub(crate) struct PairSums {
    cfg: KernelConfig,
    sums: Array2<f64>,
}

impl PairSums {
    pub fn new(e: ArrayView2<f64>, cfg: KernelConfig) -> Self {
        let n = e.nrows();
        let mut sums = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..=i {
                sums[[i, j]] =
                    e.row(i).iter().zip(e.row(j)).map(|(&a, &b)| cfg.pair_term(a, b)).sum();
            }
        }
        Self { cfg, sums }
    }

    /// Sums after replacing index column `old` by `new`.
    pub fn replaced(&self, old: ArrayView1<f64>, new: ArrayView1<f64>) -> Self {
        let n = self.sums.nrows();
        let mut sums = self.sums.as_standard_layout().into_owned();
        let (old, new) = (old.to_vec(), new.to_vec());
        for i in 0..n {
            let mut row = sums.row_mut(i);
            let row = &mut row.as_slice_mut().expect("row-major")[..=i];
            let (oi, ni) = (old[i], new[i]);
            match self.cfg {
                KernelConfig::Gaussian => {
                    for ((s, &nj), &oj) in row.iter_mut().zip(&new[..=i]).zip(&old[..=i]) {
                        let (dn, dold) = (ni - nj, oi - oj);
                        *s += dn * dn - dold * dold;
                    }
                }
                KernelConfig::Polynomial { .. } => {
                    for ((s, &nj), &oj) in row.iter_mut().zip(&new[..=i]).zip(&old[..=i]) {
                        *s += ni * nj - oi * oj;
                    }
                }
            }
        }
        Self { cfg: self.cfg, sums }
    }

    /// `I + scale·K`, lower triangle only.
    pub fn shifted_gram(&self, scale: f64) -> Array2<f64> {
        let n = self.sums.nrows();
        let mut v = Array2::zeros((n, n));
        for i in 0..n {
            let src = self.sums.row(i);
            let mut dst = v.row_mut(i);
            let dst = &mut dst.as_slice_mut().expect("row-major")[..=i];
            for (d, &s) in dst.iter_mut().zip(src.iter()) {
                *d = scale * self.cfg.from_pair_sum(s);
            }
            dst[i] += 1.0;
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn one_index(p: usize) -> IndexSpec {
        IndexSpec::single(p)
    }

    #[test]
    fn gaussian_entry_values() {
        let spec = one_index(2);
        let w = WeightSet::new(vec![vec![1.0, 0.0]], &spec).unwrap();
        let v = gaussian_entry(array![0.0, 0.0].view(), array![1.0, 0.0].view(), &spec, &w).unwrap();
        assert!((v - (-1f64).exp()).abs() < 1e-15);
        let same = gaussian_entry(array![0.3, 2.0].view(), array![0.3, 2.0].view(), &spec, &w).unwrap();
        assert_eq!(same, 1.0);
        let zero = WeightSet::zeros(&spec);
        let v = gaussian_entry(array![5.0, 1.0].view(), array![-3.0, 2.0].view(), &spec, &zero).unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn polynomial_entry_values() {
        let spec = one_index(1);
        let w = WeightSet::new(vec![vec![1.0]], &spec).unwrap();
        let x = array![2.0];
        let x2 = array![3.0];
        assert_eq!(polynomial_entry(x.view(), x2.view(), &spec, &w, 1).unwrap(), 7.0);
        assert_eq!(polynomial_entry(x.view(), x2.view(), &spec, &w, 2).unwrap(), 49.0);
        let zero = WeightSet::zeros(&spec);
        assert_eq!(polynomial_entry(x.view(), x2.view(), &spec, &zero, 3).unwrap(), 1.0);
        assert!(polynomial_entry(x.view(), x2.view(), &spec, &w, 0).is_err());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let spec = one_index(2);
        let w = WeightSet::zeros(&spec);
        assert!(gaussian_entry(array![0.0].view(), array![1.0].view(), &spec, &w).is_err());
        assert!(WeightSet::new(vec![vec![1.0]], &spec).is_err());
    }

    #[test]
    fn gram_matrix_small_cases() {
        let spec = one_index(2);
        let w = WeightSet::new(vec![vec![0.7, -0.2]], &spec).unwrap();
        let k = gram_matrix(array![[1.0, 2.0]].view(), &spec, &w, KernelConfig::Gaussian).unwrap();
        assert_eq!(k, array![[1.0]]);
        let x = array![[1.0, 2.0], [0.5, 0.1], [1.0, 2.0]];
        let k = gram_matrix(x.view(), &spec, &w, KernelConfig::Gaussian).unwrap();
        assert_eq!(k[[0, 0]], 1.0);
        assert_eq!(k[[0, 2]], 1.0);
        assert_eq!(k[[2, 2]], 1.0);
        assert_eq!(k[[0, 1]], k[[1, 0]]);
    }

    #[test]
    fn cross_matrix_cases() {
        let spec = one_index(1);
        let w = WeightSet::new(vec![vec![1.0]], &spec).unwrap();
        let x = array![[0.5], [2.0], [0.5]];
        let empty = Array2::<f64>::zeros((0, 1));
        let k = cross_matrix(QueryPoints::Index(empty.view()), x.view(), &spec, &w, KernelConfig::Gaussian)
            .unwrap();
        assert_eq!(k.dim(), (0, 3));
        let q = array![[0.5]];
        let k = cross_matrix(QueryPoints::Exposures(q.view()), x.view(), &spec, &w, KernelConfig::Gaussian)
            .unwrap();
        assert_eq!(k[[0, 0]], 1.0);
        assert_eq!(k[[0, 2]], 1.0);
        let e = array![[1.3]];
        let k = cross_matrix(QueryPoints::Index(e.view()), x.view(), &spec, &w, KernelConfig::Gaussian)
            .unwrap();
        assert!((k[[0, 1]] - (-(1.3f64 - 2.0).powi(2)).exp()).abs() < 1e-15);
        let bad = array![[1.0, 2.0]];
        assert!(cross_matrix(QueryPoints::Index(bad.view()), x.view(), &spec, &w, KernelConfig::Gaussian)
            .is_err());
    }

    #[test]
    fn pair_sum_updates_match_direct_gram() {
        let spec = IndexSpec::from_sizes(&[2, 1]).unwrap();
        let x = array![[0.1, 0.2, -1.0], [1.5, -0.3, 0.2], [0.0, 0.9, 0.4], [-0.7, 0.1, 0.0]];
        let w0 = WeightSet::new(vec![vec![0.5, 0.5], vec![1.0]], &spec).unwrap();
        let w1 = WeightSet::new(vec![vec![0.5, -0.8], vec![1.0]], &spec).unwrap();
        for cfg in [KernelConfig::Gaussian, KernelConfig::Polynomial { degree: 2 }] {
            let e0 = project(x.view(), &spec, &w0).unwrap();
            let e1 = project(x.view(), &spec, &w1).unwrap();
            let sums = PairSums::new(e0.view(), cfg).replaced(e0.column(0), e1.column(0));
            let v = sums.shifted_gram(2.0);
            let k = gram_matrix(x.view(), &spec, &w1, cfg).unwrap();
            for i in 0..4 {
                for j in 0..=i {
                    let expect = 2.0 * k[[i, j]] + if i == j { 1.0 } else { 0.0 };
                    assert!((v[[i, j]] - expect).abs() < 1e-12);
                }
            }
        }
    }
}
