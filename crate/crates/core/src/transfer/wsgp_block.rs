//! Blocked inverse of `K = [[A, B], [Bᵀ, D]]` with `A` block-diagonal (one
//! block per source task), via per-block Cholesky factors and the Schur
//! complement `S = D − BᵀA⁻¹B`.

use nalgebra::{DMatrix, DVector};

use crate::error::{input_err, Error, Result};
use crate::linalg::CholFactor;

/// Floating-point operation estimates for the factorization step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FlopCount {
    /// Work actually done: `Σ N_ν³/3` for the blocks, `Σ N_ν² N_t` for
    /// `A⁻¹B`, `N_s N_t²` for `BᵀA⁻¹B` and `N_t³/3` for the Schur factor.
    pub blocked: u64,
    /// Work of one dense Cholesky of the whole matrix, `(Σ N)³/3`.
    pub dense: u64,
}

#[derive(Clone, Debug)]
pub struct BlockInverse {
    blocks: Vec<CholFactor>,
    offsets: Vec<usize>,
    n_s: usize,
    /// `A⁻¹B`, `N_s × N_t`.
    ainv_b: DMatrix<f64>,
    b: DMatrix<f64>,
    schur: CholFactor,
    flops: FlopCount,
}

/// Factorizes `[[blockdiag(a_blocks), b], [bᵀ, d]]` without forming `A⁻¹`.
pub fn block_inverse_wsgp(a_blocks: Vec<DMatrix<f64>>, b: DMatrix<f64>, d: DMatrix<f64>) -> Result<BlockInverse> {
    let n_s: usize = a_blocks.iter().map(|a| a.nrows()).sum();
    let n_t = d.nrows();
    if b.nrows() != n_s || b.ncols() != n_t || d.ncols() != n_t {
        return input_err(format!(
            "block sizes inconsistent: A is {n_s}, B is {}x{}, D is {}x{}",
            b.nrows(),
            b.ncols(),
            d.nrows(),
            d.ncols()
        ));
    }
    let mut blocks = Vec::with_capacity(a_blocks.len());
    let mut offsets = Vec::with_capacity(a_blocks.len());
    let mut ainv_b = DMatrix::zeros(n_s, n_t);
    let mut blocked: u64 = 0;
    let mut off = 0;
    for a in a_blocks {
        let n = a.nrows();
        let f = CholFactor::new(a)?;
        let rows = f.solve(&b.rows(off, n).into_owned());
        ainv_b.rows_mut(off, n).copy_from(&rows);
        blocked += (n as u64).pow(3) / 3 + (n as u64).pow(2) * n_t as u64;
        offsets.push(off);
        blocks.push(f);
        off += n;
    }
    let s = d - b.tr_mul(&ainv_b);
    blocked += n_s as u64 * (n_t as u64).pow(2) + (n_t as u64).pow(3) / 3;
    let schur = CholFactor::new(s).map_err(|e| match e {
        Error::Cholesky { jitter } => Error::Numerical(format!("singular Schur complement (last jitter {jitter:e})")),
        other => other,
    })?;
    let n = (n_s + n_t) as u64;
    Ok(BlockInverse {
        blocks,
        offsets,
        n_s,
        ainv_b,
        b,
        schur,
        flops: FlopCount { blocked, dense: n.pow(3) / 3 },
    })
}

impl BlockInverse {
    pub fn dim(&self) -> usize {
        self.n_s + self.schur.dim()
    }

    pub fn flops(&self) -> FlopCount {
        self.flops
    }

    fn solve_a(&self, r: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(r.nrows(), r.ncols());
        for (f, &off) in self.blocks.iter().zip(&self.offsets) {
            let n = f.dim();
            out.rows_mut(off, n).copy_from(&f.solve(&r.rows(off, n).into_owned()));
        }
        out
    }

    /// `K⁻¹ R`.
    pub fn solve(&self, r: &DMatrix<f64>) -> DMatrix<f64> {
        let n_t = self.schur.dim();
        let r_s = r.rows(0, self.n_s).into_owned();
        let r_t = r.rows(self.n_s, n_t).into_owned();
        let y_s = self.solve_a(&r_s);
        let v_t = self.schur.solve(&(r_t - self.b.tr_mul(&y_s)));
        let v_s = y_s - &self.ainv_b * &v_t;
        let mut out = DMatrix::zeros(r.nrows(), r.ncols());
        out.rows_mut(0, self.n_s).copy_from(&v_s);
        out.rows_mut(self.n_s, n_t).copy_from(&v_t);
        out
    }

    pub fn solve_vec(&self, r: &DVector<f64>) -> DVector<f64> {
        let m = DMatrix::from_column_slice(r.len(), 1, r.as_slice());
        self.solve(&m).column(0).into_owned()
    }

    /// `log det K = Σ log det A_ν + log det S`.
    pub fn log_det(&self) -> f64 {
        self.blocks.iter().map(CholFactor::log_det).sum::<f64>() + self.schur.log_det()
    }

    /// Dense `K⁻¹` assembled from the blocks:
    /// `[[A⁻¹ + P S⁻¹ Pᵀ, −P S⁻¹], [−S⁻¹ Pᵀ, S⁻¹]]` with `P = A⁻¹B`.
    pub fn inverse(&self) -> DMatrix<f64> {
        let n_t = self.schur.dim();
        let n = self.n_s + n_t;
        let s_inv = self.schur.inverse();
        let p_sinv = &self.ainv_b * &s_inv;
        let mut out = DMatrix::zeros(n, n);
        for (f, &off) in self.blocks.iter().zip(&self.offsets) {
            let k = f.dim();
            out.view_mut((off, off), (k, k)).copy_from(&f.inverse());
        }
        let mut tl = out.view_mut((0, 0), (self.n_s, self.n_s));
        tl += &p_sinv * self.ainv_b.transpose();
        out.view_mut((0, self.n_s), (self.n_s, n_t)).copy_from(&(-&p_sinv));
        out.view_mut((self.n_s, 0), (n_t, self.n_s)).copy_from(&(-p_sinv.transpose()));
        out.view_mut((self.n_s, self.n_s), (n_t, n_t)).copy_from(&s_inv);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &g * g.transpose() + DMatrix::identity(n, n) * n as f64 * 0.5
    }

    fn assemble(a: &[DMatrix<f64>], b: &DMatrix<f64>, d: &DMatrix<f64>) -> DMatrix<f64> {
        let n_s = b.nrows();
        let n = n_s + d.nrows();
        let mut k = DMatrix::zeros(n, n);
        let mut off = 0;
        for blk in a {
            let m = blk.nrows();
            k.view_mut((off, off), (m, m)).copy_from(blk);
            off += m;
        }
        k.view_mut((0, n_s), b.shape()).copy_from(b);
        k.view_mut((n_s, 0), (b.ncols(), n_s)).copy_from(&b.transpose());
        k.view_mut((n_s, n_s), d.shape()).copy_from(d);
        k
    }

    #[test]
    fn identity_blocks_without_coupling() {
        let a = vec![DMatrix::identity(2, 2), DMatrix::identity(3, 3)];
        let d = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let inv = block_inverse_wsgp(a, DMatrix::zeros(5, 2), d.clone()).unwrap().inverse();
        let mut expected = DMatrix::identity(7, 7);
        expected.view_mut((5, 5), (2, 2)).copy_from(&d.try_inverse().unwrap());
        assert!((inv - expected).abs().max() < 1e-14);
    }

    #[test]
    fn matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // a random SPD matrix with the required zero pattern between sources
        let full = random_spd(13, &mut rng);
        let mut k = full.clone();
        for i in 0..5 {
            for j in 5..10 {
                k[(i, j)] = 0.0;
                k[(j, i)] = 0.0;
            }
        }
        k += DMatrix::identity(13, 13) * 13.0;
        let a = vec![k.view((0, 0), (5, 5)).into_owned(), k.view((5, 5), (5, 5)).into_owned()];
        let b = k.view((0, 10), (10, 3)).into_owned();
        let d = k.view((10, 10), (3, 3)).into_owned();
        assert_eq!(assemble(&a, &b, &d), k);
        let bi = block_inverse_wsgp(a, b, d).unwrap();
        let v = DVector::from_fn(13, |i, _| (i as f64).sin());
        let dense = k.clone().cholesky().unwrap();
        assert!((bi.solve_vec(&v) - dense.solve(&v)).abs().max() < 1e-8);
        assert!((bi.log_det() - 2.0 * dense.l().diagonal().map(f64::ln).sum()).abs() < 1e-8);
        assert!((bi.inverse() - dense.inverse()).abs().max() < 1e-8);
    }

    #[test]
    fn flops_scale_with_block_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Vec<DMatrix<f64>> = (0..8).map(|_| random_spd(20, &mut rng)).collect();
        let bi = block_inverse_wsgp(a, DMatrix::zeros(160, 5), DMatrix::identity(5, 5)).unwrap();
        let f = bi.flops();
        // 8·20³/3 + 8·20²·5 + 160·25 + 5³/3 against 165³/3
        assert_eq!(f.blocked, 8 * (8000 / 3 + 2000) + 4000 + 41);
        assert!(f.blocked * 20 < f.dense);
    }

    #[test]
    fn inconsistent_sizes_rejected() {
        assert!(block_inverse_wsgp(vec![DMatrix::identity(2, 2)], DMatrix::zeros(3, 1), DMatrix::identity(1, 1)).is_err());
    }
}
