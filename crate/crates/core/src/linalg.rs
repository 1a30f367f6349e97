//! Dense linear-algebra helpers shared by every model: jittered Cholesky
//! factorization and the triangular solves built on top of it.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Relative jitter schedule, expressed as multiples of `trace(K)/N`.
pub const JITTER_START: f64 = 1e-10;
pub const JITTER_MAX: f64 = 1e-4;

/// Cholesky factor of a symmetric positive-definite matrix, possibly after
/// adding a diagonal jitter.
#[derive(Clone, Debug)]
pub struct CholFactor {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl CholFactor {
    /// Factorizes `k`. The exact matrix is tried first; on failure a jitter of
    /// `1e-10·trace/N` is added and multiplied by ten until `1e-4·trace/N`.
    pub fn new(k: DMatrix<f64>) -> Result<Self> {
        if k.nrows() != k.ncols() {
            return Err(Error::Input(format!(
                "Cholesky needs a square matrix, got {}x{}",
                k.nrows(),
                k.ncols()
            )));
        }
        if k.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite entry in covariance matrix".into()));
        }
        let n = k.nrows();
        if let Some(chol) = k.clone().cholesky() {
            return Ok(Self { chol, jitter: 0.0 });
        }
        let mut scale = k.trace() / n.max(1) as f64;
        if !(scale.is_finite() && scale > 0.0) {
            scale = 1.0;
        }
        let mut jitter = JITTER_START * scale;
        let limit = JITTER_MAX * scale * (1.0 + 1e-9);
        let mut last = jitter;
        while jitter <= limit {
            let mut kj = k.clone();
            for i in 0..n {
                kj[(i, i)] += jitter;
            }
            if let Some(chol) = kj.cholesky() {
                return Ok(Self { chol, jitter });
            }
            last = jitter;
            jitter *= 10.0;
        }
        Err(Error::Cholesky { jitter: last })
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// Diagonal jitter that was added before the factorization succeeded.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Lower-triangular factor `L` with `L·Lᵀ = K + jitter·I`.
    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// `L⁻¹·B`.
    pub fn solve_lower(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = b.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut out);
        out
    }

    pub fn solve_lower_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut out = b.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut out);
        out
    }

    /// `K⁻¹·B`.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    /// `log det K`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }
}

/// Column-wise sum of squares, i.e. `diag(VᵀV)`.
pub fn col_sq_norms(v: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(v.ncols(), v.column_iter().map(|c| c.norm_squared()))
}

/// Row-wise sum of the elementwise product, i.e. `diag(A·Bᵀ)`.
pub fn row_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DVector<f64> {
    debug_assert_eq!(a.shape(), b.shape());
    let mut out = DVector::zeros(a.nrows());
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            out[i] += a[(i, j)] * b[(i, j)];
        }
    }
    out
}

/// `(M + Mᵀ)/2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Stacks two matrices with the same column count vertically.
pub fn vstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.ncols(), b.ncols(), "vstack column mismatch");
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
    out.rows_mut(0, a.nrows()).copy_from(a);
    out.rows_mut(a.nrows(), b.nrows()).copy_from(b);
    out
}

/// Concatenates two vectors.
pub fn vconcat(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

/// Symmetric eigenvalues, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// True when the smallest eigenvalue is at least `-rel_tol·max(|λ_max|, tiny)`.
pub fn is_psd(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    if m.nrows() == 0 {
        return true;
    }
    let ev = sym_eigenvalues(m);
    let largest = ev.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    ev[0] >= -rel_tol * largest.max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_factor_has_no_jitter() {
        let k = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let f = CholFactor::new(k.clone()).unwrap();
        assert_eq!(f.jitter(), 0.0);
        let l = f.l();
        assert!((&l * l.transpose() - k).abs().max() < 1e-14);
        assert!(l[(0, 0)] > 0.0 && l[(1, 1)] > 0.0 && l[(0, 1)] == 0.0);
    }

    #[test]
    fn singular_matrix_gets_jitter() {
        let k = DMatrix::from_element(3, 3, 1.0);
        let f = CholFactor::new(k).unwrap();
        assert!(f.jitter() > 0.0);
        assert!(f.jitter() <= JITTER_MAX * 1.0 + 1e-18);
    }

    #[test]
    fn indefinite_matrix_fails_with_last_jitter() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        match CholFactor::new(k) {
            // trace is zero, so the jitter scale falls back to 1.
            Err(Error::Cholesky { jitter }) => assert!((jitter - 1e-4).abs() < 1e-12),
            other => panic!("expected Cholesky failure, got {other:?}"),
        }
    }

    #[test]
    fn empty_matrix_factorizes() {
        let f = CholFactor::new(DMatrix::zeros(0, 0)).unwrap();
        assert_eq!(f.dim(), 0);
        assert_eq!(f.log_det(), 0.0);
        let v = f.solve_vec(&DVector::zeros(0));
        assert_eq!(v.len(), 0);
    }

    #[test]
    fn solves_agree_with_inverse() {
        let k = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let f = CholFactor::new(k.clone()).unwrap();
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 1.0, -1.0, 3.0]);
        let x = f.solve(&b);
        assert!((&k * &x - &b).abs().max() < 1e-12);
        let v = f.solve_lower(&b);
        assert!((f.l() * v - b).abs().max() < 1e-12);
        assert!((f.log_det() - k.determinant().ln()).abs() < 1e-12);
    }
}
