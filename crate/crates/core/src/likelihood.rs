//! Gaussian log marginal likelihood with analytic gradients in unconstrained
//! hyperparameter space.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::data::TaskDataset;
use crate::error::{input_err, Result};
use crate::gp::PriorMean;
use crate::kernel::{se_ard_sym, sigmoid, KernelHyperparams};
use crate::linalg::CholFactor;

/// Log evidence and its gradient with respect to the unconstrained
/// hyperparameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct LmlValue {
    pub value: f64,
    pub gradient: Vec<f64>,
}

/// `log p(y | X, θ)` for `y ~ N(m(X), k(X, X) + σ²I)`.
pub fn log_marginal_likelihood(hp: &KernelHyperparams, data: &TaskDataset, prior_mean: &PriorMean) -> Result<LmlValue> {
    if data.is_empty() {
        return input_err("log marginal likelihood needs at least one observation");
    }
    let residual = data.observations() - prior_mean.eval(data.inputs());
    log_marginal_likelihood_with_covariance(hp, data.inputs(), &residual, None)
}

/// Log evidence of `residual ~ N(0, k(X, X) + C + σ²I)` where `C` is an
/// optional fixed (hyperparameter-independent) covariance.
pub fn log_marginal_likelihood_with_covariance(
    hp: &KernelHyperparams,
    x: &DMatrix<f64>,
    residual: &DVector<f64>,
    extra_cov: Option<&DMatrix<f64>>,
) -> Result<LmlValue> {
    let n = x.nrows();
    if n == 0 {
        return input_err("log marginal likelihood needs at least one observation");
    }
    if residual.len() != n {
        return input_err("residual length does not match input rows");
    }
    if x.ncols() != hp.dim() {
        return input_err(format!(
            "inputs have {} columns, kernel has {} lengthscales",
            x.ncols(),
            hp.dim()
        ));
    }
    if let Some(c) = extra_cov {
        if c.shape() != (n, n) {
            return input_err("extra covariance has the wrong shape");
        }
    }
    let sf = hp.signal_variance();
    let ls = hp.lengthscales();
    let kse = se_ard_sym(sf, &ls, x);
    let mut k = kse.clone();
    if let Some(c) = extra_cov {
        k += c;
    }
    let noise = hp.noise_variance();
    for i in 0..n {
        k[(i, i)] += noise;
    }
    let factor = CholFactor::new(k)?;
    let alpha = factor.solve_vec(residual);
    let value = -0.5 * residual.dot(&alpha) - 0.5 * factor.log_det() - 0.5 * n as f64 * (2.0 * PI).ln();

    // ∂L/∂θ = ½ tr((ααᵀ − K⁻¹) ∂K/∂θ)
    let kinv = factor.inverse();
    let dim = ls.len();
    let inv_l3: Vec<f64> = ls.iter().map(|l| 1.0 / (l * l * l)).collect();
    let mut g_signal = 0.0;
    let mut g_ls = vec![0.0; dim];
    let mut g_noise = 0.0;
    for j in 0..n {
        let wjj = alpha[j] * alpha[j] - kinv[(j, j)];
        g_signal += 0.5 * wjj * kse[(j, j)];
        g_noise += 0.5 * wjj;
        for i in (j + 1)..n {
            let w = (alpha[i] * alpha[j] - kinv[(i, j)]) * kse[(i, j)];
            g_signal += w;
            for d in 0..dim {
                let diff = x[(i, d)] - x[(j, d)];
                g_ls[d] += w * diff * diff * inv_l3[d];
            }
        }
    }
    let mut gradient = Vec::with_capacity(dim + 2);
    gradient.push(g_signal / sf * sigmoid(hp.raw_signal()));
    for (d, g) in g_ls.iter().enumerate() {
        gradient.push(g * sigmoid(hp.raw_lengthscales()[d]));
    }
    gradient.push(g_noise * sigmoid(hp.raw_noise()));
    Ok(LmlValue { value, gradient })
}
