//! Brute-force and Monte-Carlo checks of the closed-form transfer models.
//!
//! The Monte-Carlo estimators use only GP primitives (kernel, Cholesky,
//! conditioned source GP) so they are independent of the transfer code they
//! validate. Each check reports a statistic and the bound it must not exceed.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Normalization, TaskDataset};
use crate::error::{input_err, Error, Result};
use crate::families::{generate_source_data, Family, FamilyTask};
use crate::gp::{ConditionedGP, PriorMean};
use crate::kernel::{kernel_eval, KernelHyperparams};
use crate::likelihood::log_marginal_likelihood_with_covariance;
use crate::linalg::CholFactor;
use crate::transfer::joint::{joint_log_likelihood, StackedData};
use crate::transfer::{
    block_inverse_wsgp, BoostVariant, ComponentKernel, GpboModel, Inheritance, JointKind, JointLayout, JointModel,
    JointParams, LevelChain, LevelSpec, ModelKind, SequentialKind, SequentialModel, SolverKind, TransferModel,
};

/// Smallest sample count accepted by the Monte-Carlo averages.
pub const MIN_SAMPLES: usize = 100;
/// Tolerance, in standard errors, for model-versus-oracle comparisons.
pub const MODEL_SE_TOLERANCE: f64 = 3.0;
/// Tolerance, in standard errors, for pure sampling identities.
pub const SAMPLING_SE_TOLERANCE: f64 = 4.0;
const SAMPLE_BATCH: usize = 1024;

/// Moment-matched Gaussian summary of a Monte-Carlo mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub samples: usize,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub mean_se: DVector<f64>,
    pub covariance_se: DMatrix<f64>,
    /// `1 / Σ wᵢ²`; equals `samples` for uniform weights.
    pub effective_samples: f64,
}

impl McEstimate {
    /// Largest `|Δ| / SE` over mean and covariance entries. Entries with a
    /// vanishing SE count only if `|Δ|` exceeds `floor`.
    pub fn worst_z(&self, mean: &DVector<f64>, cov: &DMatrix<f64>, floor: f64) -> f64 {
        let mut worst: f64 = 0.0;
        let mut upd = |d: f64, se: f64| {
            let z = if se > 0.0 {
                (d.abs() - floor).max(0.0) / se
            } else if d.abs() > floor {
                f64::INFINITY
            } else {
                0.0
            };
            worst = worst.max(z);
        };
        for i in 0..self.mean.len() {
            upd(self.mean[i] - mean[i], self.mean_se[i]);
            for j in 0..=i {
                upd(self.covariance[(i, j)] - cov[(i, j)], self.covariance_se[(i, j)]);
            }
        }
        worst
    }
}

/// Square-root factor of a PSD matrix; the zero matrix maps to zero.
fn psd_factor(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if c.iter().all(|v| *v == 0.0) {
        return Ok(DMatrix::zeros(c.nrows(), c.ncols()));
    }
    CholFactor::new(c.clone())
        .map(|f| f.l())
        .map_err(|e| Error::Numerical(format!("sampling covariance is not factorizable: {e}")))
}

/// `rows × m` standard normals, drawn in parallel batches with one stream
/// per batch so the result does not depend on the thread count.
fn standard_normals<R: Rng + ?Sized>(rows: usize, m: usize, rng: &mut R) -> DMatrix<f64> {
    let seed: u64 = rng.random();
    let batches: Vec<Vec<f64>> = (0..m.div_ceil(SAMPLE_BATCH))
        .into_par_iter()
        .map(|b| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(b as u64);
            let cols = SAMPLE_BATCH.min(m - b * SAMPLE_BATCH);
            (0..rows * cols).map(|_| r.sample(StandardNormal)).collect()
        })
        .collect();
    DMatrix::from_column_slice(rows, m, &batches.concat())
}

fn stack_rows(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
    out.rows_mut(0, a.nrows()).copy_from(a);
    out.rows_mut(a.nrows(), b.nrows()).copy_from(b);
    out
}

/// Weighted mixture of Gaussians `N(means[:, i], within)`.
fn mixture(means: &DMatrix<f64>, within: &DMatrix<f64>, log_w: &[f64]) -> McEstimate {
    let (n, m) = means.shape();
    let top = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = log_w.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = raw.iter().sum();
    let w: Vec<f64> = raw.iter().map(|r| r / total).collect();
    let sum_w2: f64 = w.iter().map(|v| v * v).sum();

    let mean = DVector::from_fn(n, |j, _| (0..m).map(|i| w[i] * means[(j, i)]).sum());
    let dev = DMatrix::from_fn(n, m, |j, i| means[(j, i)] - mean[j]);
    // reliability-weight correction; reduces to m/(m−1) for uniform weights
    let corr = 1.0 / (1.0 - sum_w2);
    let mut between = DMatrix::zeros(n, n);
    for i in 0..m {
        let d = dev.column(i);
        between.ger(w[i] * corr, &d, &d, 1.0);
    }
    let mean_se = DVector::from_fn(n, |j, _| (0..m).map(|i| (w[i] * dev[(j, i)]).powi(2)).sum::<f64>().sqrt());
    let covariance_se = DMatrix::from_fn(n, n, |j, k| {
        (0..m)
            .map(|i| (w[i] * (dev[(j, i)] * dev[(k, i)] - between[(j, k)])).powi(2))
            .sum::<f64>()
            .sqrt()
    });
    McEstimate {
        samples: m,
        mean,
        covariance: within + between,
        mean_se,
        covariance_se,
        effective_samples: 1.0 / sum_w2,
    }
}

/// Source-posterior draws at `X_t ∪ X_q` pushed through target conditioning.
/// Returns per-sample target means, the shared within-sample covariance and
/// per-sample log evidence of the target data.
fn conditioned_samples<R: Rng + ?Sized>(
    source_gp: &ConditionedGP,
    target: &TaskDataset,
    target_hp: &KernelHyperparams,
    xq: &DMatrix<f64>,
    m: usize,
    rng: &mut R,
) -> Result<(DMatrix<f64>, DMatrix<f64>, Vec<f64>)> {
    if m < MIN_SAMPLES {
        return input_err(format!("need at least {MIN_SAMPLES} samples, got {m}"));
    }
    if target.dim() != xq.ncols() || target_hp.dim() != xq.ncols() {
        return input_err("target data, hyperparameters and queries must share the input dimension");
    }
    let n_t = target.len();
    let n_q = xq.nrows();
    let xt = target.inputs();
    let points = stack_rows(xt, xq);
    let src = source_gp.predict(&points)?;
    let l = psd_factor(&src.covariance)?;
    let mut f = l * standard_normals(n_t + n_q, m, rng);
    for mut col in f.column_iter_mut() {
        col += &src.mean;
    }
    let f_t = f.rows(0, n_t).into_owned();
    let mut means = f.rows(n_t, n_q).into_owned();

    let k_qq = kernel_eval(target_hp, xq, xq)?;
    if n_t == 0 {
        return Ok((means, k_qq, vec![0.0; m]));
    }
    let mut k_tt = kernel_eval(target_hp, xt, xt)?;
    for i in 0..n_t {
        k_tt[(i, i)] += target_hp.noise_variance();
    }
    let a = CholFactor::new(k_tt)?;
    let k_tq = kernel_eval(target_hp, xt, xq)?;
    let a_inv_k = a.solve(&k_tq);
    let within = k_qq - k_tq.tr_mul(&a_inv_k);
    let mut resid = -f_t;
    for mut col in resid.column_iter_mut() {
        col += target.observations();
    }
    means += a_inv_k.tr_mul(&resid);
    let white = a.solve_lower(&resid);
    let log_w = white.column_iter().map(|c| -0.5 * c.norm_squared()).collect();
    Ok((means, within, log_w))
}

/// Target prediction under the average of the sample-induced target priors.
///
/// Each source-posterior draw `f_s` defines a target prior `GP(f_s, k_t)`; the
/// average of these priors is conditioned on the target data by weighting each
/// draw's posterior with its evidence for `(X_t, y_t)`.
pub fn mc_prior_average<R: Rng + ?Sized>(
    source_gp: &ConditionedGP,
    target: &TaskDataset,
    target_hp: &KernelHyperparams,
    xq: &DMatrix<f64>,
    m: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    let (means, within, log_w) = conditioned_samples(source_gp, target, target_hp, xq, m, rng)?;
    Ok(mixture(&means, &within, &log_w))
}

/// Equal-weight average of the per-draw target posteriors; the source
/// posterior is not updated by the target data.
pub fn mc_posterior_average<R: Rng + ?Sized>(
    source_gp: &ConditionedGP,
    target: &TaskDataset,
    target_hp: &KernelHyperparams,
    xq: &DMatrix<f64>,
    m: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    let (means, within, _) = conditioned_samples(source_gp, target, target_hp, xq, m, rng)?;
    Ok(mixture(&means, &within, &vec![0.0; m]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Report {
    pub samples: usize,
    pub expected_mean: DVector<f64>,
    pub expected_covariance: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub mean_se: DVector<f64>,
    pub covariance_se: DMatrix<f64>,
    pub worst_z: f64,
    pub passed: bool,
}

/// Samples `ε ~ N(0, I)`, then `Y | ε ~ N(μ + Lε, Σ)`, and compares the
/// empirical moments of `Y` with `N(μ, Σ + LLᵀ)` at 4 standard errors.
pub fn lemma1_check<R: Rng + ?Sized>(
    mu: &DVector<f64>,
    l: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    m: usize,
    rng: &mut R,
) -> Result<Lemma1Report> {
    let n = mu.len();
    if l.nrows() != n || sigma.shape() != (n, n) {
        return input_err("mu, L and Sigma have inconsistent shapes");
    }
    if m < 2 {
        return input_err("need at least two samples");
    }
    let s = psd_factor(sigma)?;
    let eps = standard_normals(l.ncols(), m, rng);
    let zeta = standard_normals(n, m, rng);
    let mut y = l * eps + s * zeta;
    for mut col in y.column_iter_mut() {
        col += mu;
    }
    let est = mixture(&y, &DMatrix::zeros(n, n), &vec![0.0; m]);
    let expected_covariance = sigma + l * l.transpose();
    let scale = 1.0 + expected_covariance.amax() + mu.amax();
    let worst_z = est.worst_z(mu, &expected_covariance, 1e-12 * scale);
    Ok(Lemma1Report {
        samples: m,
        expected_mean: mu.clone(),
        expected_covariance,
        mean: est.mean,
        covariance: est.covariance,
        mean_se: est.mean_se,
        covariance_se: est.covariance_se,
        worst_z,
        passed: worst_z <= SAMPLING_SE_TOLERANCE,
    })
}

/// A random `(μ, L, Σ)` with `n` rows and a random number of columns in `L`.
pub fn random_lemma1_instance<R: Rng + ?Sized>(n: usize, rng: &mut R) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
    let k = rng.random_range(1..=n);
    let mu = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let l = DMatrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let sigma = &a * a.transpose() / n as f64;
    (mu, l, sigma)
}

/// Fixed one-dimensional source/target instance for the closed-form checks.
#[derive(Clone, Debug)]
pub struct ReferenceInstance {
    pub source: TaskDataset,
    pub target: TaskDataset,
    pub source_hp: KernelHyperparams,
    pub target_hp: KernelHyperparams,
    pub queries: DMatrix<f64>,
}

impl ReferenceInstance {
    /// `n_s` source and `n_t` target points on `[-4, 4]`, five queries.
    pub fn new(n_s: usize, n_t: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<Vec<f64>> = (0..n_s).map(|_| vec![rng.random_range(-4.0..4.0)]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x[0].sin() + 0.05 * rng.sample::<f64, _>(StandardNormal)).collect();
        let xt: Vec<Vec<f64>> = (0..n_t).map(|_| vec![rng.random_range(-4.0..4.0)]).collect();
        let yt: Vec<f64> = xt
            .iter()
            .map(|x| x[0].sin() + 0.3 * x[0] + 0.05 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Ok(Self {
            source: TaskDataset::from_rows(&xs, &ys, 0)?,
            target: if n_t == 0 { TaskDataset::empty(1, 1) } else { TaskDataset::from_rows(&xt, &yt, 1)? },
            source_hp: KernelHyperparams::new(1.0, &[1.2], 0.01)?,
            target_hp: KernelHyperparams::new(0.3, &[2.0], 0.005)?,
            queries: DMatrix::from_column_slice(5, 1, &[-4.5, -1.7, 0.2, 2.4, 5.0]),
        })
    }

    pub fn source_gp(&self) -> Result<ConditionedGP> {
        ConditionedGP::condition(&self.source_hp, &self.source, PriorMean::Zero)
    }

    /// Two-level sequential model with the instance's fixed kernels.
    pub fn sequential(&self, kind: SequentialKind) -> Result<SequentialModel> {
        SequentialModel::from_levels(
            kind,
            BoostVariant::Recursive,
            vec![
                LevelSpec::new(self.source_hp.clone(), self.source.clone(), 0.0),
                LevelSpec::new(self.target_hp.clone(), self.target.clone(), 0.0),
            ],
        )
    }

    /// Hierarchical joint model whose components are the two fixed kernels.
    pub fn hgp(&self) -> Result<JointModel> {
        let layout = JointLayout::new(JointKind::Hgp, 2, 1)?;
        let comp = |hp: &KernelHyperparams| ComponentKernel {
            signal_variance: hp.signal_variance(),
            lengthscales: hp.lengthscales(),
        };
        let params = JointParams::from_parts(
            layout,
            &[comp(&self.source_hp), comp(&self.target_hp)],
            &[self.source_hp.noise_variance(), self.target_hp.noise_variance()],
            &[],
        )?;
        JointModel::condition(params, std::slice::from_ref(&self.source), &self.target, Normalization::IDENTITY, SolverKind::Dense)
    }
}

/// Which checks `run_verification` executes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerifyScope {
    None,
    Lemma1,
    Props,
    Corollary,
    Gradient,
    Blocked,
    Degenerate,
    All,
}

impl VerifyScope {
    pub const NAMES: [&'static str; 8] = ["none", "lemma1", "props", "corollary", "gradient", "blocked", "degenerate", "all"];

    fn includes(self, s: VerifyScope) -> bool {
        self == s || (self == Self::All && s != Self::None)
    }
}

impl FromStr for VerifyScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Self::None),
            "lemma1" => Ok(Self::Lemma1),
            "props" => Ok(Self::Props),
            "corollary" => Ok(Self::Corollary),
            "gradient" => Ok(Self::Gradient),
            "blocked" => Ok(Self::Blocked),
            "degenerate" => Ok(Self::Degenerate),
            "all" => Ok(Self::All),
            other => Err(Error::Input(format!("unknown verification scope '{other}' (expected one of {:?})", Self::NAMES))),
        }
    }
}

/// Outcome of one check: passes when `statistic <= tolerance`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub suite: String,
    pub name: String,
    pub passed: bool,
    pub statistic: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckResult {
    fn new(suite: &str, name: impl Into<String>, statistic: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self {
            suite: suite.into(),
            name: name.into(),
            passed: statistic <= tolerance,
            statistic,
            tolerance,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}/{}: {:.3e} (limit {:.3e}) {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.suite,
            self.name,
            self.statistic,
            self.tolerance,
            self.detail
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub checks: Vec<CheckResult>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

fn vec_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}

/// Lemma-1 sampling identity on `n` random 3×3 instances.
pub fn lemma1_suite(n: usize, m: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let (mu, l, sigma) = random_lemma1_instance(3, &mut rng);
            let r = lemma1_check(&mu, &l, &sigma, m, &mut rng)?;
            Ok(CheckResult::new("lemma1", format!("instance {i}"), r.worst_z, SAMPLING_SE_TOLERANCE, format!("rank(L) = {}, M = {m}", l.ncols())))
        })
        .collect()
}

/// Closed-form SHGP and BHGP against the Monte-Carlo averages.
pub fn props_suite(m: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let inst = ReferenceInstance::new(8, 4, seed)?;
    let src = inst.source_gp()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let xq = &inst.queries;
    let shgp = inst.sequential(SequentialKind::Shgp)?.predict(xq)?;
    let bhgp = inst.sequential(SequentialKind::Bhgp)?.predict(xq)?;
    let mhgp = inst.sequential(SequentialKind::Mhgp)?.predict(xq)?;
    let prior = mc_prior_average(&src, &inst.target, &inst.target_hp, xq, m, &mut rng)?;
    let post = mc_posterior_average(&src, &inst.target, &inst.target_hp, xq, m, &mut rng)?;
    Ok(vec![
        CheckResult::new(
            "props",
            "shgp vs prior average",
            prior.worst_z(&shgp.mean, &shgp.covariance, 1e-12),
            MODEL_SE_TOLERANCE,
            format!("M = {m}, effective samples {:.0}", prior.effective_samples),
        ),
        CheckResult::new(
            "props",
            "bhgp vs posterior average",
            post.worst_z(&bhgp.mean, &bhgp.covariance, 1e-12),
            MODEL_SE_TOLERANCE,
            format!("M = {m}"),
        ),
        CheckResult::new("props", "bhgp mean equals mhgp mean", vec_diff(&bhgp.mean, &mhgp.mean), 1e-10, "max abs difference"),
    ])
}

/// Hierarchical joint GP on source data equals the sequential target prior.
pub fn corollary_suite(n: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let n_s = rng.random_range(3..12);
            let mut inst = ReferenceInstance::new(n_s, 0, rng.random())?;
            inst.source_hp = KernelHyperparams::new(rng.random_range(0.3..2.0), &[rng.random_range(0.3..2.0)], rng.random_range(1e-3..0.1))?;
            inst.target_hp = KernelHyperparams::new(rng.random_range(0.05..1.0), &[rng.random_range(0.3..3.0)], rng.random_range(1e-3..0.1))?;
            let h = inst.hgp()?.predict(&inst.queries)?;
            let s = inst.sequential(SequentialKind::Shgp)?.target_prior(&inst.queries)?;
            let err = vec_diff(&h.mean, &s.mean).max(max_abs_diff(&h.covariance, &s.covariance));
            Ok(CheckResult::new("corollary", format!("instance {i}"), err, 1e-8, format!("N_s = {n_s}")))
        })
        .collect()
}

/// Relative error of the analytic log-evidence gradient against central
/// differences in the raw parameterization.
pub fn gradient_check<R: Rng + ?Sized>(rng: &mut R) -> Result<(f64, String)> {
    let dim = rng.random_range(1..=3);
    let n = rng.random_range(4..=15);
    let x = DMatrix::from_fn(n, dim, |_, _| rng.random_range(-2.0..2.0));
    let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let ls: Vec<f64> = (0..dim).map(|_| rng.random_range(0.3..3.0)).collect();
    let hp = KernelHyperparams::new(rng.random_range(0.2..3.0), &ls, rng.random_range(1e-3..0.5))?;
    let extra = if rng.random_bool(0.5) {
        let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        Some(&a * a.transpose() * (0.1 / n as f64))
    } else {
        None
    };
    let raw = hp.to_raw();
    let value = |r: &[f64]| -> Result<f64> {
        let h = KernelHyperparams::from_raw(r)?;
        Ok(log_marginal_likelihood_with_covariance(&h, &x, &y, extra.as_ref())?.value)
    };
    let analytic = log_marginal_likelihood_with_covariance(&hp, &x, &y, extra.as_ref())?.gradient;
    let mut num = vec![0.0; raw.len()];
    for (k, g) in num.iter_mut().enumerate() {
        let h = 1e-5 * (1.0 + raw[k].abs());
        let mut p = raw.clone();
        p[k] += h;
        let fp = value(&p)?;
        p[k] -= 2.0 * h;
        let fm = value(&p)?;
        *g = (fp - fm) / (2.0 * h);
    }
    let diff: f64 = analytic.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = num.iter().map(|b| b * b).sum::<f64>().sqrt();
    Ok((diff / norm.max(1e-8), format!("N = {n}, D = {dim}, extra covariance: {}", extra.is_some())))
}

pub fn gradient_suite(n: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let (err, detail) = gradient_check(&mut rng)?;
            Ok(CheckResult::new("gradient", format!("instance {i}"), err, 1e-4, detail))
        })
        .collect()
}

/// Random WSGP covariance on two sources plus a target, as the stacked
/// matrix and its blocks.
pub fn random_wsgp_system<R: Rng + ?Sized>(rng: &mut R) -> Result<(DMatrix<f64>, Vec<usize>, JointParams)> {
    let dim = rng.random_range(1..=3);
    let sizes = [rng.random_range(3..20), rng.random_range(3..20), rng.random_range(1..10)];
    let tasks: Vec<TaskDataset> = sizes
        .iter()
        .enumerate()
        .map(|(t, &n)| {
            let x = DMatrix::from_fn(n, dim, |_, _| rng.random_range(0.0..1.0));
            let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            TaskDataset::new(x, y, t)
        })
        .collect::<Result<_>>()?;
    let layout = JointLayout::new(JointKind::Wsgp, 3, dim)?;
    let raw: Vec<f64> = (0..layout.n_raw()).map(|_| rng.random_range(-1.5..1.5)).collect();
    let params = JointParams::new(layout, raw)?;
    let data = StackedData::new(&tasks[..2], &tasks[2])?;
    let k = params.kernel().train_matrix(&data.x, &data.tasks);
    Ok((k, data.sizes.clone(), params))
}

/// Blocked WSGP solves against dense Cholesky.
pub fn blocked_suite(n: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let (k, sizes, _) = random_wsgp_system(&mut rng)?;
            let n_s: usize = sizes[..sizes.len() - 1].iter().sum();
            let n_t = sizes[sizes.len() - 1];
            let mut off = 0;
            let a_blocks = sizes[..sizes.len() - 1]
                .iter()
                .map(|&s| {
                    let b = k.view((off, off), (s, s)).into_owned();
                    off += s;
                    b
                })
                .collect();
            let b = k.view((0, n_s), (n_s, n_t)).into_owned();
            let d = k.view((n_s, n_s), (n_t, n_t)).into_owned();
            let blocked = block_inverse_wsgp(a_blocks, b, d)?;
            let dense = CholFactor::new(k.clone())?;
            let r = DMatrix::from_fn(k.nrows(), 2, |_, _| rng.sample::<f64, _>(StandardNormal));
            let xd = dense.solve(&r);
            let xb = blocked.solve(&r);
            let err = (&xd - &xb).amax() / xd.amax().max(1.0);
            let ld = (dense.log_det() - blocked.log_det()).abs() / dense.log_det().abs().max(1.0);
            Ok(CheckResult::new(
                "blocked",
                format!("instance {i}"),
                err.max(ld),
                1e-8,
                format!("blocks {sizes:?}, flops blocked {} vs dense {}", blocked.flops().blocked, blocked.flops().dense),
            ))
        })
        .collect()
}

/// Cases where the models must coincide exactly.
pub fn degenerate_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let empty = ReferenceInstance::new(8, 0, seed)?;
    let s = empty.sequential(SequentialKind::Shgp)?.predict(&empty.queries)?;
    let b = empty.sequential(SequentialKind::Bhgp)?.predict(&empty.queries)?;
    out.push(CheckResult::new(
        "degenerate",
        "empty target: shgp equals bhgp",
        vec_diff(&s.mean, &b.mean).max(max_abs_diff(&s.covariance, &b.covariance)),
        1e-8,
        "",
    ));

    let zc = zero_source_covariance_instance()?;
    let preds: Vec<_> = [SequentialKind::Shgp, SequentialKind::Bhgp, SequentialKind::Mhgp]
        .into_iter()
        .map(|k| zc.sequential(k)?.predict(&zc.queries))
        .collect::<Result<_>>()?;
    let err = preds[1..]
        .iter()
        .map(|p| vec_diff(&p.mean, &preds[0].mean).max(max_abs_diff(&p.covariance, &preds[0].covariance)))
        .fold(0.0, f64::max);
    out.push(CheckResult::new("degenerate", "zero source covariance: shgp, bhgp, mhgp agree", err, 1e-8, ""));

    let (wsgp, gpbo, xq) = wsgp_zero_weight_pair(seed)?;
    let pw = wsgp.predict(&xq)?;
    let pg = gpbo.predict(&xq)?;
    out.push(CheckResult::new(
        "degenerate",
        "wsgp with zero weight equals gpbo",
        vec_diff(&pw.mean, &pg.mean).max(max_abs_diff(&pw.covariance, &pg.covariance)),
        1e-10,
        "",
    ));
    Ok(out)
}

/// Noise-free source whose inputs cover every target input and query, with
/// points far apart relative to the lengthscale: the source posterior
/// covariance vanishes at all points that matter.
pub fn zero_source_covariance_instance() -> Result<ReferenceInstance> {
    let xs: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 * 10.0]).collect();
    let ys: Vec<f64> = xs.iter().map(|x| (x[0] / 7.0).sin()).collect();
    let xt = [vec![10.0], vec![30.0], vec![60.0]];
    let yt = [0.4, -0.2, 1.1];
    Ok(ReferenceInstance {
        source: TaskDataset::from_rows(&xs, &ys, 0)?,
        target: TaskDataset::from_rows(&xt, &yt, 1)?,
        source_hp: KernelHyperparams::new(1.0, &[0.5], 0.0)?,
        target_hp: KernelHyperparams::new(0.5, &[15.0], 0.01)?,
        queries: DMatrix::from_column_slice(4, 1, &[0.0, 20.0, 40.0, 70.0]),
    })
}

/// WSGP with every source weight at zero and the GPBO on the same target
/// kernel.
pub fn wsgp_zero_weight_pair(seed: u64) -> Result<(JointModel, GpboModel, DMatrix<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let src = generate_source_data(&Family::Forrester.canonical(), 10, 0.1, 0, &mut rng)?;
    let tgt_task = FamilyTask::Forrester { a: 0.7, b: 3.0, c: -1.0 };
    let tgt = generate_source_data(&tgt_task, 5, 0.1, 1, &mut rng)?;
    let hp_t = KernelHyperparams::new(1.3, &[0.2], 0.02)?;
    let layout = JointLayout::new(JointKind::Wsgp, 2, 1)?;
    let params = JointParams::from_parts(
        layout,
        &[
            ComponentKernel { signal_variance: 0.8, lengthscales: vec![0.3] },
            ComponentKernel { signal_variance: hp_t.signal_variance(), lengthscales: hp_t.lengthscales() },
        ],
        &[0.05, hp_t.noise_variance()],
        &[f64::NEG_INFINITY],
    )?;
    let wsgp = JointModel::condition(params, &[src], &tgt, Normalization::IDENTITY, SolverKind::Dense)?;
    let gpbo = GpboModel::condition(hp_t, &tgt, Normalization::IDENTITY)?;
    let xq = DMatrix::from_column_slice(4, 1, &[0.0, 0.3, 0.55, 1.0]);
    Ok((wsgp, gpbo, xq))
}

/// Runs the checks selected by `scope`; `None` yields an empty report.
pub fn run_verification(scope: VerifyScope, seed: u64) -> Result<VerificationReport> {
    let mut checks = Vec::new();
    if scope.includes(VerifyScope::Lemma1) {
        checks.extend(lemma1_suite(20, 20_000, seed)?);
    }
    if scope.includes(VerifyScope::Props) {
        checks.extend(props_suite(5000, seed)?);
    }
    if scope.includes(VerifyScope::Corollary) {
        checks.extend(corollary_suite(10, seed)?);
    }
    if scope.includes(VerifyScope::Gradient) {
        checks.extend(gradient_suite(50, seed)?);
    }
    if scope.includes(VerifyScope::Blocked) {
        checks.extend(blocked_suite(10, seed)?);
    }
    if scope.includes(VerifyScope::Degenerate) {
        checks.extend(degenerate_suite(seed)?);
    }
    Ok(VerificationReport { checks })
}

/// Part of the training or prediction pipeline that is timed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimingStage {
    MetaTrain,
    TargetTrain,
    Predict,
}

impl TimingStage {
    pub fn name(self) -> &'static str {
        match self {
            Self::MetaTrain => "meta-train",
            Self::TargetTrain => "target-train",
            Self::Predict => "predict",
        }
    }
}

impl fmt::Display for TimingStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TimingStage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Self::MetaTrain, Self::TargetTrain, Self::Predict]
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Input(format!("unknown timing stage '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub kind: ModelKind,
    pub stage: TimingStage,
    pub n_sources: usize,
    pub n_source_points: usize,
    pub n_target_points: usize,
    pub rep: usize,
    pub ms: f64,
    /// Operations per timed batch; raised until a batch spans the minimum
    /// measurable duration.
    pub batch: usize,
}

/// Least-squares slope of `ln(min ms)` against `ln N_s`. Interference only
/// adds time, so the fastest repetition is the least biased estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub kind: ModelKind,
    pub stage: TimingStage,
    pub slope: f64,
    pub intercept: f64,
    /// `(N_s, min ms)` per grid point.
    pub points: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingConfig {
    pub kinds: Vec<ModelKind>,
    #[serde(default = "default_stages")]
    pub stages: Vec<TimingStage>,
    pub source_points: Vec<usize>,
    pub target_points: usize,
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_stages() -> Vec<TimingStage> {
    vec![TimingStage::TargetTrain]
}

impl TimingConfig {
    pub fn new(kinds: Vec<ModelKind>, source_points: Vec<usize>, target_points: usize, reps: usize) -> Self {
        Self {
            kinds,
            stages: default_stages(),
            source_points,
            target_points,
            reps,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kinds.is_empty() {
            return input_err("timing needs at least one model kind");
        }
        if self.stages.is_empty() {
            return input_err("timing needs at least one stage");
        }
        if self.source_points.is_empty() || self.source_points.contains(&0) {
            return input_err("the source-size grid must be non-empty and positive");
        }
        if self.source_points.windows(2).any(|w| w[0] >= w[1]) {
            return input_err("the source-size grid must be strictly ascending");
        }
        if self.target_points == 0 {
            return input_err("timing needs at least one target point");
        }
        if self.reps < 3 {
            return input_err("timing needs at least 3 repetitions");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub records: Vec<TimingRecord>,
    pub slopes: Vec<SlopeFit>,
}

impl TimingReport {
    pub fn slope(&self, kind: ModelKind, stage: TimingStage) -> Option<f64> {
        self.slopes.iter().find(|s| s.kind == kind && s.stage == stage).map(|s| s.slope)
    }
}

/// Batches shorter than this are dominated by timer and scheduler noise.
const MIN_BATCH_MS: f64 = 20.0;
const MAX_BATCH: usize = 1 << 16;
const TIMING_DIM: usize = 6;
const TIMING_QUERIES: usize = 100;

struct Workload {
    source: TaskDataset,
    target: TaskDataset,
    hp: KernelHyperparams,
    source_level: LevelChain,
    /// Source level as MHGP builds it: no covariance caches.
    source_mean: LevelChain,
    queries: DMatrix<f64>,
}

type TimedOp<'a> = Box<dyn Fn() -> Result<()> + 'a>;

impl Workload {
    fn new(n_s: usize, n_t: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let source = generate_source_data(&Family::Hartmann6.canonical(), n_s, 0.1, 0, &mut rng)?;
        let target_task = Family::Hartmann6.sample_task(&mut rng);
        let target = generate_source_data(&target_task, n_t, 0.1, 1, &mut rng)?;
        let hp = KernelHyperparams::isotropic(TIMING_DIM, 1.0, 0.5, 0.01)?;
        let source_level = LevelChain::build(vec![LevelSpec::new(hp.clone(), source.clone(), 0.0)], vec![Inheritance::Bayesian])?;
        let source_mean = LevelChain::build(vec![LevelSpec::new(hp.clone(), source.clone(), 0.0)], vec![Inheritance::MeanOnly])?;
        let queries = DMatrix::from_fn(TIMING_QUERIES, TIMING_DIM, |_, _| rng.random_range(0.0..1.0));
        Ok(Self {
            source,
            target,
            hp,
            source_level,
            source_mean,
            queries,
        })
    }

    fn joint_params(&self, kind: JointKind) -> Result<JointParams> {
        let layout = JointLayout::new(kind, 2, TIMING_DIM)?;
        let mut raw = Vec::with_capacity(layout.n_raw());
        for _ in 0..layout.n_kernels() {
            raw.push(self.hp.raw_signal());
            raw.extend_from_slice(self.hp.raw_lengthscales());
        }
        raw.extend(std::iter::repeat_n(self.hp.raw_noise(), layout.n_tasks));
        raw.resize(layout.n_raw(), 0.0);
        JointParams::new(layout, raw)
    }

    fn model(&self, kind: ModelKind) -> Result<TransferModel> {
        if let Some(j) = kind.joint_kind() {
            let solver = if j == JointKind::Wsgp { SolverKind::Blocked } else { SolverKind::Dense };
            let m = JointModel::condition(self.joint_params(j)?, std::slice::from_ref(&self.source), &self.target, Normalization::IDENTITY, solver)?;
            return Ok(TransferModel::Joint(m));
        }
        if let Some(s) = kind.sequential_kind() {
            let levels = vec![
                LevelSpec::new(self.hp.clone(), self.source.clone(), 0.0),
                LevelSpec::new(self.hp.clone(), self.target.clone(), 0.0),
            ];
            return SequentialModel::from_levels(s, BoostVariant::Recursive, levels).map(TransferModel::Sequential);
        }
        GpboModel::condition(self.hp.clone(), &self.target, Normalization::IDENTITY).map(TransferModel::Gpbo)
    }

    /// The timed operation, or `None` if the stage does not exist for `kind`.
    fn operation(&self, kind: ModelKind, stage: TimingStage) -> Result<Option<TimedOp<'_>>> {
        let xt = self.target.inputs();
        let yt = self.target.observations();
        let op: TimedOp<'_> = match (stage, kind.joint_kind(), kind.sequential_kind()) {
            (TimingStage::Predict, _, _) => {
                let model = self.model(kind)?;
                Box::new(move || model.predict_marginal(&self.queries).map(drop))
            }
            (TimingStage::MetaTrain, None, Some(_)) => Box::new(move || {
                log_marginal_likelihood_with_covariance(&self.hp, self.source.inputs(), self.source.observations(), None).map(drop)
            }),
            (TimingStage::MetaTrain, _, _) => return Ok(None),
            (TimingStage::TargetTrain, Some(j), _) => {
                let params = self.joint_params(j)?;
                let data = StackedData::new(std::slice::from_ref(&self.source), &self.target)?;
                let solver = if j == JointKind::Wsgp { SolverKind::Blocked } else { SolverKind::Dense };
                Box::new(move || joint_log_likelihood(&params, &data, solver).map(drop))
            }
            (TimingStage::TargetTrain, None, Some(SequentialKind::Shgp)) => Box::new(move || {
                let p = self.source_level.predict(xt)?;
                log_marginal_likelihood_with_covariance(&self.hp, xt, &(yt - p.mean), Some(&p.covariance)).map(drop)
            }),
            (TimingStage::TargetTrain, None, Some(SequentialKind::Bhgp)) => Box::new(move || {
                let p = self.source_level.predict(xt)?;
                log_marginal_likelihood_with_covariance(&self.hp, xt, &(yt - p.mean), None).map(drop)
            }),
            (TimingStage::TargetTrain, None, Some(SequentialKind::Mhgp)) => Box::new(move || {
                let m = self.source_mean.predict_mean(xt)?;
                log_marginal_likelihood_with_covariance(&self.hp, xt, &(yt - m), None).map(drop)
            }),
            (TimingStage::TargetTrain, None, None) => {
                Box::new(move || log_marginal_likelihood_with_covariance(&self.hp, xt, yt, None).map(drop))
            }
        };
        Ok(Some(op))
    }
}

fn time_batch(op: &dyn Fn() -> Result<()>, batch: usize) -> Result<f64> {
    let t = Instant::now();
    for _ in 0..batch {
        op()?;
    }
    Ok(t.elapsed().as_secs_f64() * 1e3)
}

/// Untimed warm-up that also picks the batch size.
fn calibrate(op: &dyn Fn() -> Result<()>) -> Result<usize> {
    let mut batch = 1;
    loop {
        let ms = time_batch(op, batch)?;
        if ms >= MIN_BATCH_MS || batch >= MAX_BATCH {
            return Ok(batch);
        }
        let grow = (MIN_BATCH_MS / ms.max(1e-6)).ceil() as usize;
        batch = (batch * grow.clamp(2, 1024)).min(MAX_BATCH);
    }
}

/// Ordinary least squares `y = a + b x`; returns `(b, a)`.
pub fn fit_line(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (b, my - b * mx)
}

/// Times one log-evidence-and-gradient evaluation per kind and stage over a
/// grid of source sizes, on a single thread, and fits log-log slopes.
pub fn timing_sweep(config: &TimingConfig) -> Result<TimingReport> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Numerical(format!("cannot create timing thread pool: {e}")))?;
    pool.install(|| {
        let workloads = config
            .source_points
            .iter()
            .map(|&n_s| Workload::new(n_s, config.target_points, config.seed))
            .collect::<Result<Vec<_>>>()?;
        let mut cells = Vec::new();
        for (work, &n_s) in workloads.iter().zip(&config.source_points) {
            for &kind in &config.kinds {
                for &stage in &config.stages {
                    if let Some(op) = work.operation(kind, stage)? {
                        let batch = calibrate(op.as_ref())?;
                        cells.push((n_s, kind, stage, op, batch, Vec::with_capacity(config.reps)));
                    }
                }
            }
        }
        // repetitions are interleaved across the grid so that load drift
        // affects every grid point alike
        for _ in 0..config.reps {
            for (_, _, _, op, batch, times) in &mut cells {
                times.push(time_batch(op.as_ref(), *batch)? / *batch as f64);
            }
        }
        let mut report = TimingReport::default();
        for (n_s, kind, stage, _, batch, times) in cells {
            for (rep, ms) in times.into_iter().enumerate() {
                report.records.push(TimingRecord {
                    kind,
                    stage,
                    n_sources: 1,
                    n_source_points: n_s,
                    n_target_points: config.target_points,
                    rep,
                    ms,
                    batch,
                });
            }
        }
        for &kind in &config.kinds {
            for &stage in &config.stages {
                let mut points = Vec::new();
                for &n_s in &config.source_points {
                    let ms: Vec<f64> = report
                        .records
                        .iter()
                        .filter(|r| r.kind == kind && r.stage == stage && r.n_source_points == n_s)
                        .map(|r| r.ms)
                        .collect();
                    if !ms.is_empty() {
                        points.push((n_s, ms.iter().copied().fold(f64::INFINITY, f64::min)));
                    }
                }
                if points.len() >= 2 {
                    let logs: Vec<(f64, f64)> = points.iter().map(|(n, t)| ((*n as f64).ln(), t.ln())).collect();
                    let (slope, intercept) = fit_line(&logs);
                    report.slopes.push(SlopeFit { kind, stage, slope, intercept, points });
                }
            }
        }
        Ok(report)
    })
}
