//! Squared-exponential kernel with automatic relevance determination (SE-ARD)
//! and its softplus-parameterized hyperparameters.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{input_err, Result};

/// `log(1 + exp(x))`, evaluated without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`]. `softplus_inv(0) = -inf`.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y + (-(-y).exp_m1()).ln()
    } else {
        y.exp_m1().ln()
    }
}

/// Derivative of [`softplus`].
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Lower optimizer bound in unconstrained space (constrained value 1e-6).
pub fn raw_lower_bound() -> f64 {
    softplus_inv(1e-6)
}

/// Upper optimizer bound in unconstrained space (constrained value 1e3).
pub fn raw_upper_bound() -> f64 {
    softplus_inv(1e3)
}

/// SE-ARD hyperparameters stored in unconstrained (pre-softplus) space.
///
/// The unconstrained vector layout used by the optimizers is
/// `[signal, lengthscale_1, ..., lengthscale_D, noise]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "ConstrainedRepr", try_from = "ConstrainedRepr")]
pub struct KernelHyperparams {
    raw_signal: f64,
    raw_lengthscales: Vec<f64>,
    raw_noise: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ConstrainedRepr {
    signal_variance: f64,
    lengthscales: Vec<f64>,
    noise_variance: f64,
}

impl From<KernelHyperparams> for ConstrainedRepr {
    fn from(hp: KernelHyperparams) -> Self {
        Self {
            signal_variance: hp.signal_variance(),
            lengthscales: hp.lengthscales(),
            noise_variance: hp.noise_variance(),
        }
    }
}

impl TryFrom<ConstrainedRepr> for KernelHyperparams {
    type Error = crate::Error;

    fn try_from(r: ConstrainedRepr) -> Result<Self> {
        KernelHyperparams::new(r.signal_variance, &r.lengthscales, r.noise_variance)
    }
}

impl KernelHyperparams {
    /// Builds hyperparameters from constrained values. Signal variance and
    /// lengthscales must be strictly positive; the noise variance may be zero.
    pub fn new(signal_variance: f64, lengthscales: &[f64], noise_variance: f64) -> Result<Self> {
        if !(signal_variance.is_finite() && signal_variance > 0.0) {
            return input_err(format!("signal variance must be positive, got {signal_variance}"));
        }
        if lengthscales.is_empty() {
            return input_err("at least one lengthscale is required");
        }
        if let Some(l) = lengthscales.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return input_err(format!("lengthscales must be positive, got {l}"));
        }
        if !(noise_variance.is_finite() && noise_variance >= 0.0) {
            return input_err(format!("noise variance must be non-negative, got {noise_variance}"));
        }
        Ok(Self {
            raw_signal: softplus_inv(signal_variance),
            raw_lengthscales: lengthscales.iter().map(|&l| softplus_inv(l)).collect(),
            raw_noise: softplus_inv(noise_variance),
        })
    }

    /// Isotropic convenience constructor.
    pub fn isotropic(dim: usize, signal_variance: f64, lengthscale: f64, noise_variance: f64) -> Result<Self> {
        Self::new(signal_variance, &vec![lengthscale; dim], noise_variance)
    }

    /// Builds hyperparameters from an unconstrained vector of length `dim + 2`.
    pub fn from_raw(raw: &[f64]) -> Result<Self> {
        if raw.len() < 3 {
            return input_err(format!("raw hyperparameter vector too short: {}", raw.len()));
        }
        if raw.iter().any(|v| v.is_nan()) {
            return input_err("raw hyperparameters contain NaN");
        }
        Ok(Self {
            raw_signal: raw[0],
            raw_lengthscales: raw[1..raw.len() - 1].to_vec(),
            raw_noise: raw[raw.len() - 1],
        })
    }

    pub fn to_raw(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_raw());
        v.push(self.raw_signal);
        v.extend_from_slice(&self.raw_lengthscales);
        v.push(self.raw_noise);
        v
    }

    /// Number of unconstrained parameters (`dim + 2`).
    pub fn n_raw(&self) -> usize {
        self.raw_lengthscales.len() + 2
    }

    pub fn dim(&self) -> usize {
        self.raw_lengthscales.len()
    }

    pub fn signal_variance(&self) -> f64 {
        softplus(self.raw_signal)
    }

    pub fn lengthscales(&self) -> Vec<f64> {
        self.raw_lengthscales.iter().map(|&r| softplus(r)).collect()
    }

    pub fn noise_variance(&self) -> f64 {
        softplus(self.raw_noise)
    }

    pub fn raw_signal(&self) -> f64 {
        self.raw_signal
    }

    pub fn raw_lengthscales(&self) -> &[f64] {
        &self.raw_lengthscales
    }

    pub fn raw_noise(&self) -> f64 {
        self.raw_noise
    }

    pub fn with_noise_variance(&self, noise_variance: f64) -> Result<Self> {
        Self::new(self.signal_variance(), &self.lengthscales(), noise_variance)
    }

    /// Multiplies signal and noise variance by `factor` (used to move between
    /// normalized and original observation units).
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.signal_variance() * factor,
            &self.lengthscales(),
            self.noise_variance() * factor,
        )
    }
}

/// SE-ARD kernel matrix `k(A, B)`; noise is not added.
pub fn kernel_eval(hp: &KernelHyperparams, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.ncols() != hp.dim() || b.ncols() != hp.dim() {
        return input_err(format!(
            "kernel dimension mismatch: lengthscales have {} entries, inputs have {} and {} columns",
            hp.dim(),
            a.ncols(),
            b.ncols()
        ));
    }
    Ok(se_ard(hp.signal_variance(), &hp.lengthscales(), a, b))
}

/// Unchecked SE-ARD evaluation with constrained values.
pub(crate) fn se_ard(signal_variance: f64, lengthscales: &[f64], a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let m = b.nrows();
    let inv: Vec<f64> = lengthscales.iter().map(|l| 1.0 / l).collect();
    let mut out = DMatrix::zeros(n, m);
    for j in 0..m {
        for i in 0..n {
            let mut d2 = 0.0;
            for (d, s) in inv.iter().enumerate() {
                let diff = (a[(i, d)] - b[(j, d)]) * s;
                d2 += diff * diff;
            }
            out[(i, j)] = signal_variance * (-0.5 * d2).exp();
        }
    }
    out
}

/// Symmetric SE-ARD matrix `k(A, A)`, computing only one triangle.
pub(crate) fn se_ard_sym(signal_variance: f64, lengthscales: &[f64], a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let inv: Vec<f64> = lengthscales.iter().map(|l| 1.0 / l).collect();
    let mut out = DMatrix::zeros(n, n);
    for j in 0..n {
        out[(j, j)] = signal_variance;
        for i in (j + 1)..n {
            let mut d2 = 0.0;
            for (d, s) in inv.iter().enumerate() {
                let diff = (a[(i, d)] - a[(j, d)]) * s;
                d2 += diff * diff;
            }
            let v = signal_variance * (-0.5 * d2).exp();
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_roundtrip() {
        for &y in &[1e-6, 1e-3, 0.5, 1.0, 7.0, 45.0, 1e3] {
            let back = softplus(softplus_inv(y));
            assert!((back - y).abs() <= 1e-12 * y.max(1.0), "{y} -> {back}");
        }
        assert_eq!(softplus(softplus_inv(0.0)), 0.0);
    }

    #[test]
    fn zero_distance_gives_signal_variance() {
        let hp = KernelHyperparams::new(2.5, &[0.3, 4.0], 0.1).unwrap();
        let x = DMatrix::from_row_slice(1, 2, &[0.7, -1.2]);
        let k = kernel_eval(&hp, &x, &x).unwrap();
        assert!((k[(0, 0)] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn one_dimensional_value() {
        let hp = KernelHyperparams::new(1.0, &[1.0], 0.0).unwrap();
        let a = DMatrix::from_row_slice(1, 1, &[0.0]);
        let b = DMatrix::from_row_slice(1, 1, &[2.0]);
        let k = kernel_eval(&hp, &a, &b).unwrap();
        assert!((k[(0, 0)] - 0.135_335_283_236_612_7).abs() < 1e-12);
    }

    #[test]
    fn flat_kernel_limit() {
        let hp = KernelHyperparams::new(1.7, &[1e9, 1e9], 0.0).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 3.0, -4.0]);
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, -5.0, 2.0, 10.0, 10.0]);
        let k = kernel_eval(&hp, &a, &b).unwrap();
        assert!(k.iter().all(|v| (v - 1.7).abs() < 1e-9));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let hp = KernelHyperparams::new(1.0, &[1.0, 1.0], 0.0).unwrap();
        let a = DMatrix::zeros(2, 3);
        assert!(kernel_eval(&hp, &a, &a).is_err());
    }

    #[test]
    fn symmetric_matches_general() {
        let a = DMatrix::from_row_slice(3, 2, &[0.1, 0.2, -1.0, 0.5, 2.0, 2.0]);
        let g = se_ard(1.3, &[0.7, 2.0], &a, &a);
        let s = se_ard_sym(1.3, &[0.7, 2.0], &a);
        assert!((g - s).abs().max() < 1e-15);
    }

    #[test]
    fn constrained_serde_roundtrip() {
        let hp = KernelHyperparams::new(0.8, &[0.2, 3.0], 0.01).unwrap();
        let s = serde_json::to_string(&hp).unwrap();
        assert!(s.contains("signal_variance"));
        let back: KernelHyperparams = serde_json::from_str(&s).unwrap();
        assert!((back.signal_variance() - 0.8).abs() < 1e-12);
        assert!((back.noise_variance() - 0.01).abs() < 1e-12);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(KernelHyperparams::new(0.0, &[1.0], 0.1).is_err());
        assert!(KernelHyperparams::new(1.0, &[-1.0], 0.1).is_err());
        assert!(KernelHyperparams::new(1.0, &[1.0], -0.1).is_err());
        assert!(KernelHyperparams::new(1.0, &[], 0.1).is_err());
    }
}
