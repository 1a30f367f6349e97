//! Sequential hierarchy of GP levels: sources first, target last. Each level's
//! prior mean is the posterior mean of the level below plus a constant offset.
//! The level kinds differ in how the posterior covariance below is carried up:
//!
//! * [`Inheritance::Bayesian`]: prior covariance `k_l + Σ_{l−1}` for both
//!   conditioning and evidence;
//! * [`Inheritance::Boosted`]: conditioning uses `k_l` alone and the covariance
//!   below is pushed through the level's smoother `α = k(·, X)G⁻¹`, adding
//!   `Σ − αΣ(X, ·) − Σ(·, X)αᵀ + αΣ(X, X)αᵀ`;
//! * [`Inheritance::MeanOnly`]: the covariance below is dropped.
//!
//! Each level caches its posterior on the stacked inputs of every level above
//! it. A query climbs the chain once carrying its cross covariance with those
//! inputs, so no level is ever refactorized after it is added.

use nalgebra::{DMatrix, DVector};

use crate::data::TaskDataset;
use crate::error::{input_err, Result};
use crate::gp::{GaussianPrediction, MarginalPrediction};
use crate::kernel::{se_ard, se_ard_sym, KernelHyperparams};
use crate::linalg::{col_sq_norms, row_dot, symmetrize, vconcat, vstack, CholFactor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Inheritance {
    Bayesian,
    Boosted,
    MeanOnly,
}

/// One level: hyperparameters in observation units, data, constant mean offset.
#[derive(Clone, Debug)]
pub struct LevelSpec {
    pub hp: KernelHyperparams,
    pub data: TaskDataset,
    pub mean_offset: f64,
}

impl LevelSpec {
    pub fn new(hp: KernelHyperparams, data: TaskDataset, mean_offset: f64) -> Self {
        Self { hp, data, mean_offset }
    }
}

#[derive(Clone, Debug)]
enum QueryCov {
    Full(DMatrix<f64>),
    Diag(DVector<f64>),
}

#[derive(Clone, Debug)]
struct LevelFit {
    factor: CholFactor,
    weights: DVector<f64>,
    /// Posterior of the level below at this level's inputs.
    prev_mean_x: DVector<f64>,
    prev_xx: DMatrix<f64>,
    /// Stacked inputs of every level above.
    z: DMatrix<f64>,
    /// `L⁻¹ (k(X, Z) + Σ_{l−1}(X, Z))` for Bayesian, `L⁻¹ k(X, Z)` otherwise.
    u: DMatrix<f64>,
    /// Boosted only: `G⁻¹ k(X, Z)` and `Σ_{l−1}(X, Z) − Σ_{l−1}(X, X) G⁻¹ k(X, Z)`.
    a_z: DMatrix<f64>,
    m_z: DMatrix<f64>,
    /// This level's posterior on `Z`.
    z_mean: DVector<f64>,
    z_cov: DMatrix<f64>,
}

/// A fitted level hierarchy. Immutable; `push` and `with_top` return new chains
/// that share no mutable state with the original.
#[derive(Clone, Debug)]
pub struct LevelChain {
    levels: Vec<LevelSpec>,
    modes: Vec<Inheritance>,
    fits: Vec<LevelFit>,
    dim: usize,
    /// Whether covariance caches are maintained; not needed when every level is
    /// mean-only.
    caches: bool,
}

impl LevelChain {
    pub fn build(levels: Vec<LevelSpec>, modes: Vec<Inheritance>) -> Result<Self> {
        if levels.is_empty() {
            return input_err("a level chain needs at least one level");
        }
        if modes.len() != levels.len() {
            return input_err("one inheritance mode per level is required");
        }
        let caches = modes.iter().any(|m| *m != Inheritance::MeanOnly);
        let dim = levels[0].data.dim();
        let mut chain = Self {
            levels: Vec::new(),
            modes: Vec::new(),
            fits: Vec::new(),
            dim,
            caches,
        };
        for (spec, mode) in levels.into_iter().zip(modes) {
            chain = chain.push(spec, mode)?;
        }
        Ok(chain)
    }

    pub fn levels(&self) -> &[LevelSpec] {
        &self.levels
    }

    pub fn modes(&self) -> &[Inheritance] {
        &self.modes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn top(&self) -> &LevelSpec {
        self.levels.last().expect("non-empty chain")
    }

    /// Adds a level on top, extending the caches of the existing levels to the
    /// new inputs. Existing factorizations are reused.
    pub fn push(&self, spec: LevelSpec, mode: Inheritance) -> Result<Self> {
        if spec.data.dim() != self.dim || spec.hp.dim() != self.dim {
            return input_err(format!(
                "level has input dimension {} / kernel dimension {}, chain has {}",
                spec.data.dim(),
                spec.hp.dim(),
                self.dim
            ));
        }
        if mode != Inheritance::MeanOnly && !self.caches {
            let mut levels = self.levels.clone();
            levels.push(spec);
            let mut modes = self.modes.clone();
            modes.push(mode);
            let mut chain = Self {
                levels: Vec::new(),
                modes: Vec::new(),
                fits: Vec::new(),
                dim: self.dim,
                caches: true,
            };
            for (s, m) in levels.into_iter().zip(modes) {
                chain = chain.push(s, m)?;
            }
            return Ok(chain);
        }

        let x = spec.data.inputs();
        let n = x.nrows();
        let mut fits = self.fits.clone();
        let (prev_mean_x, prev_xx) = if self.caches {
            let total: usize = self.levels.iter().map(|l| l.data.len()).sum();
            let mut mean = DVector::zeros(n);
            let mut cov = QueryCov::Full(DMatrix::zeros(n, n));
            let mut qz = DMatrix::zeros(n, total);
            for (l, lower) in self.levels.iter().enumerate() {
                let nl = lower.data.len();
                let qx = qz.columns(0, nl).into_owned();
                let rest = qz.columns(nl, qz.ncols() - nl).into_owned();
                let (mn, cv, nqz) = step(lower, self.modes[l], &self.fits[l], x, mean, cov, &qx, Some(rest));
                let nqz = nqz.expect("cross covariance requested");
                let QueryCov::Full(cv_full) = &cv else { unreachable!() };
                extend_fit(&mut fits[l], lower, self.modes[l], x, &qx.transpose(), &mn, cv_full, &nqz);
                mean = mn;
                cov = cv;
                qz = nqz;
            }
            let QueryCov::Full(mut c) = cov else { unreachable!() };
            symmetrize(&mut c);
            (mean, c)
        } else {
            (self.mean_at(x), DMatrix::zeros(n, n))
        };

        let mut g = se_ard_sym(spec.hp.signal_variance(), &spec.hp.lengthscales(), x);
        if mode == Inheritance::Bayesian {
            g += &prev_xx;
        }
        let noise = spec.hp.noise_variance();
        for i in 0..n {
            g[(i, i)] += noise;
        }
        let factor = CholFactor::new(g)?;
        let weights = factor.solve_vec(&(spec.data.observations() - prev_mean_x.add_scalar(spec.mean_offset)));
        fits.push(LevelFit {
            factor,
            weights,
            prev_mean_x,
            prev_xx,
            z: DMatrix::zeros(0, self.dim),
            u: DMatrix::zeros(n, 0),
            a_z: DMatrix::zeros(n, 0),
            m_z: DMatrix::zeros(n, 0),
            z_mean: DVector::zeros(0),
            z_cov: DMatrix::zeros(0, 0),
        });
        let mut levels = self.levels.clone();
        levels.push(spec);
        let mut modes = self.modes.clone();
        modes.push(mode);
        Ok(Self {
            levels,
            modes,
            fits,
            dim: self.dim,
            caches: self.caches,
        })
    }

    /// The chain without its top level. Lower factorizations are kept.
    pub fn pop(&self) -> Result<Self> {
        if self.levels.len() < 2 {
            return input_err("cannot remove the only level of a chain");
        }
        let n_top = self.top().data.len();
        let mut fits = self.fits[..self.fits.len() - 1].to_vec();
        for f in fits.iter_mut().filter(|_| self.caches) {
            let nz = f.z.nrows() - n_top;
            f.z = f.z.rows(0, nz).into_owned();
            f.u = f.u.columns(0, nz).into_owned();
            if f.a_z.ncols() > 0 {
                f.a_z = f.a_z.columns(0, nz).into_owned();
                f.m_z = f.m_z.columns(0, nz).into_owned();
            }
            f.z_mean = f.z_mean.rows(0, nz).into_owned();
            f.z_cov = f.z_cov.view((0, 0), (nz, nz)).into_owned();
        }
        let k = self.levels.len() - 1;
        Ok(Self {
            levels: self.levels[..k].to_vec(),
            modes: self.modes[..k].to_vec(),
            fits,
            dim: self.dim,
            caches: self.caches,
        })
    }

    /// Replaces the top level, reusing every lower factorization.
    pub fn with_top(&self, top: LevelSpec) -> Result<Self> {
        let mode = *self.modes.last().expect("non-empty chain");
        if self.levels.len() == 1 {
            return Self::build(vec![top], vec![mode]);
        }
        self.pop()?.push(top, mode)
    }

    /// Posterior mean and covariance of the level below the top, evaluated at
    /// the top level's inputs.
    pub fn inherited_at_top(&self) -> (&DVector<f64>, &DMatrix<f64>) {
        let f = self.fits.last().expect("non-empty chain");
        (&f.prev_mean_x, &f.prev_xx)
    }

    fn check_dim(&self, xq: &DMatrix<f64>) -> Result<()> {
        if xq.ncols() != self.dim {
            return input_err(format!("query has {} columns, model expects {}", xq.ncols(), self.dim));
        }
        Ok(())
    }

    /// Top-level posterior mean of an all-mean-only chain: `O(m N)` per level.
    fn mean_at(&self, xq: &DMatrix<f64>) -> DVector<f64> {
        debug_assert!(!self.caches);
        let mut mean = DVector::zeros(xq.nrows());
        for (spec, fit) in self.levels.iter().zip(&self.fits) {
            let k = se_ard(spec.hp.signal_variance(), &spec.hp.lengthscales(), xq, spec.data.inputs());
            mean = mean.add_scalar(spec.mean_offset) + k * &fit.weights;
        }
        mean
    }

    fn climb(&self, xq: &DMatrix<f64>, full: bool) -> (DVector<f64>, QueryCov) {
        let m = xq.nrows();
        let mut mean = DVector::zeros(m);
        let mut cov = if full {
            QueryCov::Full(DMatrix::zeros(m, m))
        } else {
            QueryCov::Diag(DVector::zeros(m))
        };
        if !self.caches {
            for (l, spec) in self.levels.iter().enumerate() {
                let qx = DMatrix::zeros(m, spec.data.len());
                let (mn, cv, _) = step(spec, self.modes[l], &self.fits[l], xq, mean, cov, &qx, None);
                mean = mn;
                cov = cv;
            }
            return (mean, cov);
        }
        let total: usize = self.levels.iter().map(|l| l.data.len()).sum();
        let mut qz = DMatrix::zeros(m, total);
        for (l, spec) in self.levels.iter().enumerate() {
            let n = spec.data.len();
            let qx = qz.columns(0, n).into_owned();
            let rest = qz.columns(n, qz.ncols() - n).into_owned();
            let (mn, cv, nqz) = step(spec, self.modes[l], &self.fits[l], xq, mean, cov, &qx, Some(rest));
            mean = mn;
            cov = cv;
            qz = nqz.expect("cross covariance requested");
        }
        (mean, cov)
    }

    /// Top-level posterior mean and full covariance at `xq`.
    pub fn predict(&self, xq: &DMatrix<f64>) -> Result<GaussianPrediction> {
        self.check_dim(xq)?;
        let (mean, cov) = self.climb(xq, true);
        let QueryCov::Full(mut covariance) = cov else { unreachable!() };
        symmetrize(&mut covariance);
        Ok(GaussianPrediction { mean, covariance })
    }

    /// Top-level posterior mean and marginal variances at `xq`.
    pub fn predict_marginal(&self, xq: &DMatrix<f64>) -> Result<MarginalPrediction> {
        self.check_dim(xq)?;
        let (mean, cov) = self.climb(xq, false);
        let QueryCov::Diag(v) = cov else { unreachable!() };
        Ok(MarginalPrediction {
            mean,
            variance: v.map(|x| x.max(0.0)),
        })
    }

    /// Top-level posterior mean at `xq`.
    pub fn predict_mean(&self, xq: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_dim(xq)?;
        if !self.caches {
            return Ok(self.mean_at(xq));
        }
        Ok(self.climb(xq, false).0)
    }

    /// The top level's prediction before it sees any of its own data.
    pub fn top_prior(&self, xq: &DMatrix<f64>) -> Result<GaussianPrediction> {
        let top = self.top();
        let empty = LevelSpec::new(top.hp.clone(), TaskDataset::empty(self.dim, top.data.task_id), top.mean_offset);
        self.with_top(empty)?.predict(xq)
    }
}

/// Extends level `l`'s caches with the columns of a new level `x` placed on top.
/// `prev_xt` is `Σ_{l−1}(X_l, x)`; `mean_t`, `cov_tt`, `cov_tz` are level `l`'s
/// posterior at `x` and its cross covariance with the existing `Z_l`.
#[allow(clippy::too_many_arguments)]
fn extend_fit(
    fit: &mut LevelFit,
    spec: &LevelSpec,
    mode: Inheritance,
    x: &DMatrix<f64>,
    prev_xt: &DMatrix<f64>,
    mean_t: &DVector<f64>,
    cov_tt: &DMatrix<f64>,
    cov_tz: &DMatrix<f64>,
) {
    let k_xt = se_ard(spec.hp.signal_variance(), &spec.hp.lengthscales(), spec.data.inputs(), x);
    let u_t = match mode {
        Inheritance::Bayesian => fit.factor.solve_lower(&(&k_xt + prev_xt)),
        _ => fit.factor.solve_lower(&k_xt),
    };
    fit.u = hstack(&fit.u, &u_t);
    if mode == Inheritance::Boosted {
        let a_t = fit.factor.solve(&k_xt);
        let m_t = prev_xt - &fit.prev_xx * &a_t;
        fit.a_z = hstack(&fit.a_z, &a_t);
        fit.m_z = hstack(&fit.m_z, &m_t);
    }
    let nz = fit.z.nrows();
    let nt = x.nrows();
    fit.z = vstack(&fit.z, x);
    fit.z_mean = vconcat(&fit.z_mean, mean_t);
    let mut c = DMatrix::zeros(nz + nt, nz + nt);
    c.view_mut((0, 0), (nz, nz)).copy_from(&fit.z_cov);
    c.view_mut((nz, 0), (nt, nz)).copy_from(cov_tz);
    c.view_mut((0, nz), (nz, nt)).copy_from(&cov_tz.transpose());
    c.view_mut((nz, nz), (nt, nt)).copy_from(cov_tt);
    fit.z_cov = c;
}

fn hstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// Moves a query from the posterior of level `l − 1` to that of level `l`.
/// `prev_qx` and `prev_qz` are the query's cross covariance with `X_l` and
/// `Z_l` under level `l − 1`.
#[allow(clippy::too_many_arguments)]
fn step(
    spec: &LevelSpec,
    mode: Inheritance,
    fit: &LevelFit,
    xq: &DMatrix<f64>,
    prev_mean: DVector<f64>,
    prev_qq: QueryCov,
    prev_qx: &DMatrix<f64>,
    prev_qz: Option<DMatrix<f64>>,
) -> (DVector<f64>, QueryCov, Option<DMatrix<f64>>) {
    let sf = spec.hp.signal_variance();
    let ls = spec.hp.lengthscales();
    let k_qx = se_ard(sf, &ls, xq, spec.data.inputs());
    let k_qq = match &prev_qq {
        QueryCov::Full(_) => QueryCov::Full(se_ard_sym(sf, &ls, xq)),
        QueryCov::Diag(d) => QueryCov::Diag(DVector::from_element(d.len(), sf)),
    };
    let k_qz = prev_qz.as_ref().map(|_| se_ard(sf, &ls, xq, &fit.z));
    let base = prev_mean.add_scalar(spec.mean_offset);

    match mode {
        Inheritance::Bayesian => {
            let p_qx = &k_qx + prev_qx;
            let mean = base + &p_qx * &fit.weights;
            let v = fit.factor.solve_lower(&p_qx.transpose());
            let cov = match (k_qq, prev_qq) {
                (QueryCov::Full(k), QueryCov::Full(p)) => QueryCov::Full(k + p - v.tr_mul(&v)),
                (QueryCov::Diag(k), QueryCov::Diag(p)) => QueryCov::Diag(k + p - col_sq_norms(&v)),
                _ => unreachable!(),
            };
            let qz = prev_qz.map(|pz| k_qz.unwrap() + pz - v.tr_mul(&fit.u));
            (mean, cov, qz)
        }
        Inheritance::MeanOnly => {
            let mean = base + &k_qx * &fit.weights;
            let v = fit.factor.solve_lower(&k_qx.transpose());
            let cov = match k_qq {
                QueryCov::Full(k) => QueryCov::Full(k - v.tr_mul(&v)),
                QueryCov::Diag(k) => QueryCov::Diag(k - col_sq_norms(&v)),
            };
            let qz = prev_qz.map(|_| k_qz.unwrap() - v.tr_mul(&fit.u));
            (mean, cov, qz)
        }
        Inheritance::Boosted => {
            let mean = base + &k_qx * &fit.weights;
            let v = fit.factor.solve_lower(&k_qx.transpose());
            let alpha = fit.factor.solve(&k_qx.transpose()).transpose();
            let alpha_c = &alpha * &fit.prev_xx;
            let cov = match (k_qq, prev_qq) {
                (QueryCov::Full(k), QueryCov::Full(p)) => {
                    let cross = &alpha * prev_qx.transpose();
                    let boost = p - &cross - cross.transpose() + &alpha_c * alpha.transpose();
                    QueryCov::Full(k - v.tr_mul(&v) + boost)
                }
                (QueryCov::Diag(k), QueryCov::Diag(p)) => {
                    let boost = p - 2.0 * row_dot(&alpha, prev_qx) + row_dot(&alpha_c, &alpha);
                    QueryCov::Diag(k - col_sq_norms(&v) + boost)
                }
                _ => unreachable!(),
            };
            let qz = prev_qz.map(|pz| {
                let post = k_qz.unwrap() - v.tr_mul(&fit.u);
                post + pz - prev_qx * &fit.a_z - &alpha * &fit.m_z
            });
            (mean, cov, qz)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{ConditionedGP, PriorMean};

    fn line(xs: &[f64], f: impl Fn(f64) -> f64, id: usize) -> TaskDataset {
        let rows: Vec<Vec<f64>> = xs.iter().map(|x| vec![*x]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| f(*x)).collect();
        TaskDataset::from_rows(&rows, &ys, id).unwrap()
    }

    fn levels() -> Vec<LevelSpec> {
        vec![
            LevelSpec::new(
                KernelHyperparams::new(1.0, &[0.6], 0.01).unwrap(),
                line(&[0.0, 0.4, 0.9, 1.5, 2.2], f64::sin, 0),
                0.1,
            ),
            LevelSpec::new(
                KernelHyperparams::new(0.5, &[0.8], 0.02).unwrap(),
                line(&[0.1, 0.7, 1.8], |x| x.sin() + 0.3 * x, 1),
                -0.2,
            ),
            LevelSpec::new(
                KernelHyperparams::new(0.3, &[1.1], 0.03).unwrap(),
                line(&[0.5, 1.2], |x| x.sin() + 0.2, 2),
                0.05,
            ),
        ]
    }

    fn queries() -> DMatrix<f64> {
        DMatrix::from_column_slice(5, 1, &[-0.5, 0.3, 1.0, 1.9, 3.0])
    }

    const MODES: [Inheritance; 3] = [Inheritance::Bayesian, Inheritance::Boosted, Inheritance::MeanOnly];

    #[test]
    fn single_level_is_plain_gp() {
        let spec = levels().remove(0);
        let gp = ConditionedGP::condition(&spec.hp, &spec.data, PriorMean::Constant(spec.mean_offset)).unwrap();
        for mode in MODES {
            let chain = LevelChain::build(vec![spec.clone()], vec![mode]).unwrap();
            let a = chain.predict(&queries()).unwrap();
            let b = gp.predict(&queries()).unwrap();
            assert!((a.mean - b.mean).abs().max() < 1e-12);
            assert!((a.covariance - b.covariance).abs().max() < 1e-12);
        }
    }

    #[test]
    fn marginal_matches_full_diagonal() {
        for mode in MODES {
            let chain = LevelChain::build(levels(), vec![mode; 3]).unwrap();
            let full = chain.predict(&queries()).unwrap();
            let marg = chain.predict_marginal(&queries()).unwrap();
            assert!((&full.mean - &marg.mean).abs().max() < 1e-12);
            assert!((full.variances() - marg.variance).abs().max() < 1e-12, "{mode:?}");
        }
    }

    #[test]
    fn with_top_matches_fresh_build() {
        for mode in MODES {
            let chain = LevelChain::build(levels(), vec![mode; 3]).unwrap();
            let mut new_top = levels().remove(2);
            new_top.data = line(&[0.2, 0.9, 1.4, 2.5], |x| x.cos(), 2);
            let swapped = chain.with_top(new_top.clone()).unwrap();
            let mut lv = levels();
            lv[2] = new_top;
            let fresh = LevelChain::build(lv, vec![mode; 3]).unwrap();
            let a = swapped.predict(&queries()).unwrap();
            let b = fresh.predict(&queries()).unwrap();
            assert!((a.mean - b.mean).abs().max() < 1e-10);
            assert!((a.covariance - b.covariance).abs().max() < 1e-10);
        }
    }

    #[test]
    fn lower_level_prediction_unchanged_by_push() {
        let lv = levels();
        for mode in MODES {
            let two = LevelChain::build(lv[..2].to_vec(), vec![mode; 2]).unwrap();
            let three = LevelChain::build(lv.clone(), vec![mode; 3]).unwrap();
            let popped = three.pop().unwrap();
            let a = two.predict(&queries()).unwrap();
            let b = popped.predict(&queries()).unwrap();
            assert!((a.mean - b.mean).abs().max() < 1e-10);
            assert!((a.covariance - b.covariance).abs().max() < 1e-10);
        }
    }

    #[test]
    fn bayesian_mean_matches_dense_inference() {
        // f_0 ~ GP(c_0, k_0), f_1 = f_0 + g + c_1, g ~ GP(0, k_1); the sequential
        // posterior equals exact inference on the stacked observations.
        let lv = levels()[..2].to_vec();
        let chain = LevelChain::build(lv.clone(), vec![Inheritance::Bayesian; 2]).unwrap();
        let (x0, x1) = (lv[0].data.inputs(), lv[1].data.inputs());
        let k0 = |a: &DMatrix<f64>, b: &DMatrix<f64>| se_ard(1.0, &[0.6], a, b);
        let k1 = |a: &DMatrix<f64>, b: &DMatrix<f64>| se_ard(0.5, &[0.8], a, b);
        let x = vstack(x0, x1);
        let n0 = x0.nrows();
        let n = x.nrows();
        let mut k = k0(&x, &x);
        k.view_mut((n0, n0), (n - n0, n - n0)).add_assign(&k1(x1, x1));
        for i in 0..n {
            k[(i, i)] += if i < n0 { 0.01 } else { 0.02 };
        }
        let mut mu = DVector::from_element(n, 0.1);
        for i in n0..n {
            mu[i] += -0.2;
        }
        let y = vconcat(lv[0].data.observations(), lv[1].data.observations());
        let xq = queries();
        let mut kq = k0(&xq, &x);
        kq.columns_mut(n0, n - n0).add_assign(&k1(&xq, x1));
        let kinv = k.clone().try_inverse().unwrap();
        let mean = DVector::from_element(xq.nrows(), -0.1) + &kq * &kinv * (y - mu);
        let cov = k0(&xq, &xq) + k1(&xq, &xq) - &kq * &kinv * kq.transpose();
        let p = chain.predict(&xq).unwrap();
        assert!((p.mean - mean).abs().max() < 1e-9);
        assert!((p.covariance - cov).abs().max() < 1e-9);
    }

    use std::ops::AddAssign;

    #[test]
    fn empty_top_gives_inherited_prior() {
        let lv = levels();
        let chain = LevelChain::build(lv[..2].to_vec(), vec![Inheritance::Bayesian; 2]).unwrap();
        let below = LevelChain::build(lv[..1].to_vec(), vec![Inheritance::Bayesian]).unwrap();
        let p = chain.top_prior(&queries()).unwrap();
        let q = below.predict(&queries()).unwrap();
        let k = se_ard_sym(0.5, &[0.8], &queries());
        assert!((p.mean - q.mean.add_scalar(-0.2)).abs().max() < 1e-12);
        assert!((p.covariance - (q.covariance + k)).abs().max() < 1e-12);
    }

    #[test]
    fn covariances_are_psd() {
        let xq = DMatrix::from_fn(15, 1, |i, _| -1.0 + 0.25 * i as f64);
        for mode in MODES {
            for single_layer in [false, true] {
                let mut modes = vec![mode; 3];
                if single_layer {
                    modes[0] = Inheritance::MeanOnly;
                    modes[1] = Inheritance::MeanOnly;
                }
                let chain = LevelChain::build(levels(), modes).unwrap();
                let p = chain.predict(&xq).unwrap();
                assert!(crate::linalg::is_psd(&p.covariance, 1e-9), "{mode:?}");
            }
        }
    }
}
