//! Multi-start maximum-likelihood hyperparameter estimation.
//!
//! Initial guesses follow `x₀ = softplus(x₀')`, `x₀' ~ N(0, 1)`; since the
//! optimizer works on the unconstrained values, each start is just a standard
//! normal vector clamped into the box bounds.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::data::TaskDataset;
use crate::error::{input_err, Error, Result};
use crate::gp::PriorMean;
use crate::kernel::{raw_lower_bound, raw_upper_bound, KernelHyperparams};
use crate::likelihood::log_marginal_likelihood_with_covariance;
use crate::optim::{minimize_box, LbfgsbOptions};

pub const DEFAULT_RESTARTS: usize = 10;

#[derive(Clone, Debug)]
pub struct OptimizeOptions {
    pub n_restarts: usize,
    pub lbfgs: LbfgsbOptions,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            n_restarts: DEFAULT_RESTARTS,
            lbfgs: LbfgsbOptions::default(),
        }
    }
}

/// One restart's start point and outcome.
#[derive(Clone, Debug)]
pub struct RestartRecord {
    pub initial: Vec<f64>,
    /// Objective (to be maximized) at the initial point, if it evaluated.
    pub initial_value: Option<f64>,
    pub outcome: std::result::Result<(Vec<f64>, f64), String>,
}

#[derive(Clone, Debug)]
pub struct MultiStartResult {
    pub best: Vec<f64>,
    pub best_value: f64,
    pub best_index: usize,
    pub restarts: Vec<RestartRecord>,
}

/// Maximizes `objective` (value, gradient) over the box from `n_restarts`
/// standard-normal starting points. Restarts run in parallel; the best value
/// wins, ties going to the lower restart index.
pub fn multi_start<F, R>(
    objective: F,
    lower: &[f64],
    upper: &[f64],
    n_restarts: usize,
    lbfgs: &LbfgsbOptions,
    rng: &mut R,
) -> Result<MultiStartResult>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)> + Sync,
    R: Rng + ?Sized,
{
    if n_restarts == 0 {
        return input_err("n_restarts must be at least 1");
    }
    let n = lower.len();
    let starts: Vec<Vec<f64>> = (0..n_restarts)
        .map(|_| {
            (0..n)
                .map(|i| {
                    let z: f64 = rng.sample(StandardNormal);
                    z.clamp(lower[i], upper[i])
                })
                .collect()
        })
        .collect();
    multi_start_from(objective, lower, upper, starts, lbfgs)
}

/// As [`multi_start`] with explicit starting points.
pub fn multi_start_from<F>(
    objective: F,
    lower: &[f64],
    upper: &[f64],
    starts: Vec<Vec<f64>>,
    lbfgs: &LbfgsbOptions,
) -> Result<MultiStartResult>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)> + Sync,
{
    if starts.is_empty() {
        return input_err("at least one starting point is required");
    }
    let neg = |x: &[f64]| objective(x).map(|(v, g)| (-v, g.into_iter().map(|d| -d).collect()));
    let restarts: Vec<RestartRecord> = starts
        .into_par_iter()
        .map(|initial| {
            let initial_value = objective(&initial).ok().map(|(v, _)| v).filter(|v| v.is_finite());
            let outcome = minimize_box(neg, &initial, lower, upper, lbfgs)
                .map(|m| (m.x, -m.value))
                .map_err(|e| e.to_string());
            RestartRecord {
                initial,
                initial_value,
                outcome,
            }
        })
        .collect();

    let mut best: Option<(usize, &Vec<f64>, f64)> = None;
    for (i, r) in restarts.iter().enumerate() {
        if let Ok((x, v)) = &r.outcome {
            if best.is_none_or(|(_, _, bv)| *v > bv) {
                best = Some((i, x, *v));
            }
        }
    }
    match best {
        Some((i, x, v)) => Ok(MultiStartResult {
            best: x.clone(),
            best_value: v,
            best_index: i,
            restarts,
        }),
        None => Err(Error::OptimizationFailed(
            restarts
                .iter()
                .enumerate()
                .map(|(i, r)| format!("restart {i}: {}", r.outcome.as_ref().err().cloned().unwrap_or_default()))
                .collect(),
        )),
    }
}

/// Box bounds `[softplus⁻¹(1e-6), softplus⁻¹(1e3)]` for `n` raw parameters.
pub fn raw_bounds(n: usize) -> (Vec<f64>, Vec<f64>) {
    (vec![raw_lower_bound(); n], vec![raw_upper_bound(); n])
}

/// Maximum-likelihood SE-ARD hyperparameters for `data` under `prior_mean`.
pub fn optimize_hyperparameters<R: Rng + ?Sized>(
    data: &TaskDataset,
    prior_mean: &PriorMean,
    n_restarts: usize,
    rng: &mut R,
) -> Result<KernelHyperparams> {
    if data.is_empty() {
        return input_err("hyperparameter optimization needs at least one observation");
    }
    let residual = data.observations() - prior_mean.eval(data.inputs());
    let opts = OptimizeOptions {
        n_restarts,
        ..Default::default()
    };
    fit_kernel(data.inputs(), &residual, None, &opts, rng).map(|(hp, _)| hp)
}

/// Maximum-likelihood fit of `residual ~ N(0, k(X, X) + C + σ²I)`.
/// Returns the hyperparameters and the attained log evidence.
pub fn fit_kernel<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    residual: &DVector<f64>,
    extra_cov: Option<&DMatrix<f64>>,
    opts: &OptimizeOptions,
    rng: &mut R,
) -> Result<(KernelHyperparams, f64)> {
    let (lower, upper) = raw_bounds(x.ncols() + 2);
    let objective = |raw: &[f64]| {
        let hp = KernelHyperparams::from_raw(raw)?;
        let l = log_marginal_likelihood_with_covariance(&hp, x, residual, extra_cov)?;
        Ok((l.value, l.gradient))
    };
    let r = multi_start(objective, &lower, &upper, opts.n_restarts, &opts.lbfgs, rng)?;
    Ok((KernelHyperparams::from_raw(&r.best)?, r.best_value))
}
