//! Exact single-task GP conditioning.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::data::TaskDataset;
use crate::error::{input_err, Result};
use crate::kernel::{se_ard, se_ard_sym, KernelHyperparams};
use crate::linalg::{col_sq_norms, symmetrize, CholFactor};

type MeanFn = dyn Fn(&DMatrix<f64>) -> DVector<f64> + Send + Sync;

/// Prior mean function of a GP.
#[derive(Clone, Default)]
pub enum PriorMean {
    #[default]
    Zero,
    Constant(f64),
    Function(Arc<MeanFn>),
}

impl PriorMean {
    pub fn function(f: impl Fn(&DMatrix<f64>) -> DVector<f64> + Send + Sync + 'static) -> Self {
        Self::Function(Arc::new(f))
    }

    pub fn eval(&self, x: &DMatrix<f64>) -> DVector<f64> {
        match self {
            Self::Zero => DVector::zeros(x.nrows()),
            Self::Constant(c) => DVector::from_element(x.nrows(), *c),
            Self::Function(f) => {
                let v = f(x);
                assert_eq!(v.len(), x.nrows(), "prior mean returned the wrong number of values");
                v
            }
        }
    }
}

impl fmt::Debug for PriorMean {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => write!(f, "Zero"),
            Self::Constant(c) => write!(f, "Constant({c})"),
            Self::Function(_) => write!(f, "Function(..)"),
        }
    }
}

/// Joint Gaussian over a set of query points.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPrediction {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianPrediction {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Marginal variances, clamped at zero.
    pub fn variances(&self) -> DVector<f64> {
        self.covariance.diagonal().map(|v| v.max(0.0))
    }

    pub fn std_devs(&self) -> DVector<f64> {
        self.variances().map(f64::sqrt)
    }

    /// Marginal view (mean, clamped variance).
    pub fn marginal(&self) -> MarginalPrediction {
        MarginalPrediction {
            mean: self.mean.clone(),
            variance: self.variances(),
        }
    }
}

/// Posterior means and marginal variances only.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalPrediction {
    pub mean: DVector<f64>,
    pub variance: DVector<f64>,
}

/// A GP conditioned on one dataset. Immutable once built.
#[derive(Clone, Debug)]
pub struct ConditionedGP {
    hp: KernelHyperparams,
    data: TaskDataset,
    prior_mean: PriorMean,
    factor: CholFactor,
    weights: DVector<f64>,
}

impl ConditionedGP {
    /// Conditions `GP(prior_mean, k_hp)` on `data` with noise `hp.noise_variance()`.
    /// An empty dataset yields the prior.
    pub fn condition(hp: &KernelHyperparams, data: &TaskDataset, prior_mean: PriorMean) -> Result<Self> {
        if data.dim() != hp.dim() {
            return input_err(format!(
                "data has {} input dimensions, kernel has {}",
                data.dim(),
                hp.dim()
            ));
        }
        let x = data.inputs();
        let mut k = se_ard_sym(hp.signal_variance(), &hp.lengthscales(), x);
        let noise = hp.noise_variance();
        for i in 0..k.nrows() {
            k[(i, i)] += noise;
        }
        let factor = CholFactor::new(k)?;
        let residual = data.observations() - prior_mean.eval(x);
        let weights = factor.solve_vec(&residual);
        Ok(Self {
            hp: hp.clone(),
            data: data.clone(),
            prior_mean,
            factor,
            weights,
        })
    }

    pub fn hyperparams(&self) -> &KernelHyperparams {
        &self.hp
    }

    pub fn data(&self) -> &TaskDataset {
        &self.data
    }

    pub fn prior_mean(&self) -> &PriorMean {
        &self.prior_mean
    }

    /// Cholesky factor of `k(X, X) + σ²I` (plus any jitter).
    pub fn factor(&self) -> &CholFactor {
        &self.factor
    }

    /// `(k(X, X) + σ²I)⁻¹ (y − m(X))`.
    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    fn check_dim(&self, xq: &DMatrix<f64>) -> Result<()> {
        if xq.ncols() != self.hp.dim() {
            return input_err(format!(
                "query points have {} columns, model expects {}",
                xq.ncols(),
                self.hp.dim()
            ));
        }
        Ok(())
    }

    fn cross(&self, xq: &DMatrix<f64>) -> DMatrix<f64> {
        se_ard(self.hp.signal_variance(), &self.hp.lengthscales(), self.data.inputs(), xq)
    }

    /// Posterior mean and full covariance at `xq`.
    pub fn predict(&self, xq: &DMatrix<f64>) -> Result<GaussianPrediction> {
        self.check_dim(xq)?;
        let kxq = self.cross(xq);
        let mean = self.prior_mean.eval(xq) + kxq.tr_mul(&self.weights);
        let v = self.factor.solve_lower(&kxq);
        let mut cov = se_ard_sym(self.hp.signal_variance(), &self.hp.lengthscales(), xq) - v.tr_mul(&v);
        symmetrize(&mut cov);
        Ok(GaussianPrediction { mean, covariance: cov })
    }

    /// Posterior mean and marginal variances at `xq`, without forming the
    /// query covariance.
    pub fn predict_marginal(&self, xq: &DMatrix<f64>) -> Result<MarginalPrediction> {
        self.check_dim(xq)?;
        let kxq = self.cross(xq);
        let mean = self.prior_mean.eval(xq) + kxq.tr_mul(&self.weights);
        let v = self.factor.solve_lower(&kxq);
        let sf = self.hp.signal_variance();
        let variance = col_sq_norms(&v).map(|s| (sf - s).max(0.0));
        Ok(MarginalPrediction { mean, variance })
    }

    /// Posterior mean at `xq`.
    pub fn predict_mean(&self, xq: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_dim(xq)?;
        Ok(self.prior_mean.eval(xq) + self.cross(xq).tr_mul(&self.weights))
    }
}
