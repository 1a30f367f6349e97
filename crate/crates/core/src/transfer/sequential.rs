//! Modular training of the level hierarchies. Level `l` is fitted on the
//! residuals of its data about the posterior mean of levels `< l`, normalized
//! independently; lower levels are frozen once fitted.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{normalize_targets, TaskDataset};
use crate::error::{input_err, Result};
use crate::gp::{GaussianPrediction, MarginalPrediction};
use crate::hyperopt::{fit_kernel, OptimizeOptions};

use super::chain::{Inheritance, LevelChain, LevelSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SequentialKind {
    Shgp,
    Bhgp,
    Mhgp,
}

/// Where the boost term is applied in a multi-source BHGP.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoostVariant {
    /// Every level inherits boosted covariance from the level below.
    #[default]
    Recursive,
    /// Sources transfer means only; the boost is applied at the target.
    SingleLayer,
}

impl SequentialKind {
    /// Inheritance mode of level `level` in a chain of `n_levels`.
    pub fn mode(self, variant: BoostVariant, level: usize, n_levels: usize) -> Inheritance {
        match self {
            Self::Shgp => Inheritance::Bayesian,
            Self::Mhgp => Inheritance::MeanOnly,
            Self::Bhgp => match variant {
                BoostVariant::Recursive => Inheritance::Boosted,
                BoostVariant::SingleLayer if level + 1 == n_levels => Inheritance::Boosted,
                BoostVariant::SingleLayer => Inheritance::MeanOnly,
            },
        }
    }
}

/// A trained sequential model: frozen source levels plus a target level.
#[derive(Clone, Debug)]
pub struct SequentialModel {
    kind: SequentialKind,
    variant: BoostVariant,
    sources: LevelChain,
    chain: LevelChain,
}

/// Hyperparameters of one level in a chain, fitted on residuals about the
/// chain's current top. An empty level inherits the top's kernel.
fn fit_level<R: Rng + ?Sized>(
    kind: SequentialKind,
    below: Option<&LevelChain>,
    data: &TaskDataset,
    opts: &OptimizeOptions,
    rng: &mut R,
) -> Result<LevelSpec> {
    if data.is_empty() {
        return match below {
            Some(c) => Ok(LevelSpec::new(c.top().hp.clone(), data.clone(), 0.0)),
            None => input_err("the first source task must have observations"),
        };
    }
    let x = data.inputs();
    let (prior_mean, prior_cov) = match (below, kind) {
        (None, _) => (nalgebra::DVector::zeros(data.len()), None),
        (Some(c), SequentialKind::Shgp) => {
            let p = c.predict(x)?;
            (p.mean, Some(p.covariance))
        }
        (Some(c), _) => (c.predict_mean(x)?, None),
    };
    let (z, norm) = normalize_targets(&(data.observations() - prior_mean));
    let s2 = norm.std * norm.std;
    let extra: Option<DMatrix<f64>> = prior_cov.map(|c| c / s2);
    let (hp, _) = fit_kernel(x, &z, extra.as_ref(), opts, rng)?;
    Ok(LevelSpec::new(hp.scaled(s2)?, data.clone(), norm.mean))
}

fn add_level(chain: Option<LevelChain>, spec: LevelSpec, mode: Inheritance) -> Result<LevelChain> {
    match chain {
        None => LevelChain::build(vec![spec], vec![mode]),
        Some(c) => c.push(spec, mode),
    }
}

/// Fits the sources one level at a time, then the target with every source
/// parameter frozen.
pub fn train_sequential<R: Rng + ?Sized>(
    kind: SequentialKind,
    variant: BoostVariant,
    sources: &[TaskDataset],
    target: &TaskDataset,
    opts: &OptimizeOptions,
    rng: &mut R,
) -> Result<SequentialModel> {
    if sources.is_empty() {
        return input_err("sequential models need at least one source task");
    }
    let n_levels = sources.len() + 1;
    let mut chain: Option<LevelChain> = None;
    for (l, src) in sources.iter().enumerate() {
        let spec = fit_level(kind, chain.as_ref(), src, opts, rng)?;
        chain = Some(add_level(chain, spec, kind.mode(variant, l, n_levels))?);
    }
    let sources = chain.expect("at least one source");
    SequentialModel::from_sources(kind, variant, sources).retrain_target(target, opts, rng)
}

impl SequentialModel {
    /// A model with fitted sources and an empty target level.
    fn from_sources(kind: SequentialKind, variant: BoostVariant, sources: LevelChain) -> Self {
        Self {
            kind,
            variant,
            chain: sources.clone(),
            sources,
        }
    }

    /// Builds a model from fixed levels (sources first, target last).
    pub fn from_levels(kind: SequentialKind, variant: BoostVariant, levels: Vec<LevelSpec>) -> Result<Self> {
        if levels.len() < 2 {
            return input_err("need at least one source level and a target level");
        }
        let n = levels.len();
        let modes = (0..n).map(|l| kind.mode(variant, l, n)).collect();
        let chain = LevelChain::build(levels, modes)?;
        let sources = chain.pop()?;
        Ok(Self {
            kind,
            variant,
            sources,
            chain,
        })
    }

    /// Refits only the target level on new target data; source levels and
    /// their factorizations are reused unchanged.
    pub fn retrain_target<R: Rng + ?Sized>(&self, target: &TaskDataset, opts: &OptimizeOptions, rng: &mut R) -> Result<Self> {
        let spec = fit_level(self.kind, Some(&self.sources), target, opts, rng)?;
        self.with_target_level(spec)
    }

    /// Replaces the target level with fixed hyperparameters and data.
    pub fn with_target_level(&self, spec: LevelSpec) -> Result<Self> {
        let n = self.sources.levels().len() + 1;
        let mode = self.kind.mode(self.variant, n - 1, n);
        Ok(Self {
            kind: self.kind,
            variant: self.variant,
            sources: self.sources.clone(),
            chain: self.sources.push(spec, mode)?,
        })
    }

    pub fn kind(&self) -> SequentialKind {
        self.kind
    }

    pub fn variant(&self) -> BoostVariant {
        self.variant
    }

    /// All levels, sources first.
    pub fn levels(&self) -> &[LevelSpec] {
        self.chain.levels()
    }

    pub fn chain(&self) -> &LevelChain {
        &self.chain
    }

    pub fn source_chain(&self) -> &LevelChain {
        &self.sources
    }

    pub fn predict(&self, xq: &DMatrix<f64>) -> Result<GaussianPrediction> {
        self.chain.predict(xq)
    }

    pub fn predict_marginal(&self, xq: &DMatrix<f64>) -> Result<MarginalPrediction> {
        self.chain.predict_marginal(xq)
    }

    /// Target prediction before conditioning on any target data.
    pub fn target_prior(&self, xq: &DMatrix<f64>) -> Result<GaussianPrediction> {
        self.chain.top_prior(xq)
    }
}
