//! Cholesky factorization with escalating diagonal jitter.

use ndarray::{Array1, Array2};
use std::os::raw::{c_char, c_int};


use crate::error::{Error, Result};

pub(crate) const JITTER_START: f64 = 1e-10;
pub(crate) const JITTER_MAX: f64 = 1e-6;

/// Lower Cholesky factor `L` of `A + jitter·I`.
#[derive(Debug, Clone)]
pub(crate) struct Factor {
    pub l: Array2<f64>,
    pub jitter: f64,
}

/// Factors a symmetric matrix (only the lower triangle is read). On failure
/// retries with `1e-10·I` added, escalating by ×10 up to `1e-6`.
pub(crate) fn cholesky_jittered(a: Array2<f64>) -> Result<Factor> {
    let backup = a.clone();
    cholesky_jittered_with(a, || backup.clone())
}

/// As [`cholesky_jittered`], regenerating the input with `rebuild` when a
/// jittered retry is needed instead of keeping a copy up front.
pub(crate) fn cholesky_jittered_with(a: Array2<f64>, rebuild: impl Fn() -> Array2<f64>) -> Result<Factor> {
    let n = a.nrows();
    if n == 0 {
        return Ok(Factor { l: a, jitter: 0.0 });
    }
    if let Some(l) = potrf_lower(a) {
        return Ok(Factor { l, jitter: 0.0 });
    }
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX * (1.0 + 1e-9) {
        let mut b = rebuild();
        b.diag_mut().mapv_inplace(|d| d + jitter);
        if let Some(l) = potrf_lower(b) {
            return Ok(Factor { l, jitter });
        }
        jitter *= 10.0;
    }
    Err(Error::NotPositiveDefinite { max_jitter: JITTER_MAX })
}

/// Row-major lower Cholesky factor. A row-major lower triangle is the
/// column-major upper triangle, so LAPACK is called with `'U'` on the raw
/// buffer without any transposition.
fn potrf_lower(a: Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    let mut a = if a.is_standard_layout() { a } else { a.as_standard_layout().into_owned() };
    let dim = n as c_int;
    let mut info: c_int = 0;
    // SAFETY: `a` is an owned, contiguous n×n buffer and LAPACK writes only
    // within it.
    unsafe {
        lapack_sys::dpotrf_(&(b'U' as c_char), &dim, a.as_mut_ptr(), &dim, &mut info);
    }
    if info != 0 || a.diag().iter().any(|d| !(d.is_finite() && *d > 0.0)) {
        return None;
    }
    for i in 0..n {
        a.row_mut(i).as_slice_mut().expect("row-major")[i + 1..].fill(0.0);
    }
    Some(a)
}

impl Factor {
    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diag().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// `L⁻¹ B`.
    pub fn forward(&self, b: &Array2<f64>) -> Array2<f64> {
        let (n, r) = b.dim();
        // Columns of B laid out contiguously, i.e. column-major.
        let mut buf: Vec<f64> = b.t().iter().copied().collect();
        self.trtrs(b'T', r, &mut buf);
        Array2::from_shape_vec((r, n), buf).expect("shape preserved").reversed_axes().as_standard_layout().into_owned()
    }

    pub fn forward_vec(&self, b: &Array1<f64>) -> Array1<f64> {
        let mut x = b.to_vec();
        self.trtrs(b'T', 1, &mut x);
        Array1::from(x)
    }

    /// `L⁻ᵀ b`.
    pub fn backward_vec(&self, b: &Array1<f64>) -> Array1<f64> {
        let mut x = b.to_vec();
        self.trtrs(b'N', 1, &mut x);
        Array1::from(x)
    }

    /// Solves with the row-major `L`, which LAPACK sees as the column-major
    /// upper factor `U = Lᵀ`: `trans = 'T'` applies `L⁻¹`, `'N'` applies `L⁻ᵀ`.
    fn trtrs(&self, trans: u8, nrhs: usize, b: &mut [f64]) {
        let n = self.dim();
        if n == 0 || nrhs == 0 {
            return;
        }
        assert_eq!(b.len(), n * nrhs);
        let l = self.l.as_slice().expect("factor is row-major");
        let (dim, cols) = (n as c_int, nrhs as c_int);
        let mut info: c_int = 0;
        // SAFETY: `l` is n×n, `b` is n×nrhs column-major; both contiguous.
        unsafe {
            lapack_sys::dtrtrs_(
                &(b'U' as c_char),
                &(trans as c_char),
                &(b'N' as c_char),
                &dim,
                &cols,
                l.as_ptr(),
                &dim,
                b.as_mut_ptr(),
                &dim,
                &mut info,
            );
        }
        assert_eq!(info, 0, "triangular solve with a valid factor");
    }

    /// `A⁻¹ b`.
    pub fn solve_vec(&self, b: &Array1<f64>) -> Array1<f64> {
        self.backward_vec(&self.forward_vec(b))
    }

    /// `A⁻¹`.
    #[cfg(test)]
    pub fn inverse(&self) -> Array2<f64> {
        let n = self.dim();
        let w = self.forward(&Array2::eye(n));
        w.t().dot(&w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn factor_and_solve() {
        let a = array![[4.0, 2.0], [2.0, 3.0]];
        let f = cholesky_jittered(a.clone()).unwrap();
        assert_eq!(f.jitter, 0.0);
        assert!((f.log_det() - 8f64.ln()).abs() < 1e-12);
        let x = f.solve_vec(&array![1.0, 2.0]);
        let back = a.dot(&x);
        assert!((back[0] - 1.0).abs() < 1e-12 && (back[1] - 2.0).abs() < 1e-12);
        let inv = f.inverse();
        let eye = a.dot(&inv);
        assert!((eye[[0, 1]]).abs() < 1e-12 && (eye[[1, 1]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn singular_matrix_gets_jitter() {
        let a = Array2::from_elem((3, 3), 1.0);
        let f = cholesky_jittered(a).unwrap();
        assert!(f.jitter >= JITTER_START && f.jitter <= JITTER_MAX);
    }

    #[test]
    fn indefinite_matrix_fails() {
        let a = array![[1.0, 0.0], [0.0, -1.0]];
        assert!(matches!(cholesky_jittered(a), Err(Error::NotPositiveDefinite { .. })));
    }
}
