//! Transfer-learning surrogate models.
//!
//! Joint models ([`joint`]) fit every parameter on the stacked data of all
//! tasks. Sequential models ([`sequential`]) fit the sources once, then only
//! the target level. [`TransferModel`] wraps both plus the target-only GP
//! baseline behind one interface.

pub mod chain;
pub mod joint;
pub mod sequential;
pub mod wsgp_block;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{normalize_targets, Normalization, TaskDataset};
use crate::error::{input_err, Error, Result};
use crate::gp::{ConditionedGP, GaussianPrediction, MarginalPrediction, PriorMean};
use crate::hyperopt::{fit_kernel, OptimizeOptions};
use crate::kernel::KernelHyperparams;

pub use chain::{Inheritance, LevelChain, LevelSpec};
pub use joint::{
    build_joint_kernel, train_joint, ComponentKernel, CoregionalizationSpec, JointKernel, JointKind, JointLayout, JointModel,
    JointParams, SolverKind,
};
pub use sequential::{train_sequential, BoostVariant, SequentialKind, SequentialModel};
pub use wsgp_block::{block_inverse_wsgp, BlockInverse, FlopCount};

/// Every surrogate, including the target-only baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gpbo,
    Mtgp,
    Mtkgp,
    Wsgp,
    Hgp,
    Shgp,
    Bhgp,
    Mhgp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 8] = [
        Self::Gpbo,
        Self::Mtgp,
        Self::Mtkgp,
        Self::Wsgp,
        Self::Hgp,
        Self::Shgp,
        Self::Bhgp,
        Self::Mhgp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Gpbo => "gpbo",
            Self::Mtgp => "mtgp",
            Self::Mtkgp => "mtkgp",
            Self::Wsgp => "wsgp",
            Self::Hgp => "hgp",
            Self::Shgp => "shgp",
            Self::Bhgp => "bhgp",
            Self::Mhgp => "mhgp",
        }
    }

    pub fn joint_kind(self) -> Option<JointKind> {
        match self {
            Self::Mtgp => Some(JointKind::Mtgp),
            Self::Mtkgp => Some(JointKind::Mtkgp),
            Self::Wsgp => Some(JointKind::Wsgp),
            Self::Hgp => Some(JointKind::Hgp),
            _ => None,
        }
    }

    pub fn sequential_kind(self) -> Option<SequentialKind> {
        match self {
            Self::Shgp => Some(SequentialKind::Shgp),
            Self::Bhgp => Some(SequentialKind::Bhgp),
            Self::Mhgp => Some(SequentialKind::Mhgp),
            _ => None,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|k| k.name() == lower)
            .ok_or_else(|| Error::Input(format!("unknown model kind '{s}'")))
    }
}

/// Training settings shared by every model kind.
#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    pub optimize: OptimizeOptions,
    pub boost: BoostVariant,
}

/// Target-only GP on normalized observations.
#[derive(Clone, Debug)]
pub struct GpboModel {
    gp: ConditionedGP,
    norm: Normalization,
}

impl GpboModel {
    /// Kernel used before any target data exist: unit signal and lengthscale.
    pub fn default_hyperparams(dim: usize) -> Result<KernelHyperparams> {
        KernelHyperparams::isotropic(dim, 1.0, 1.0, 1e-6)
    }

    pub fn train<R: Rng + ?Sized>(target: &TaskDataset, opts: &OptimizeOptions, rng: &mut R) -> Result<Self> {
        if target.is_empty() {
            return Self::condition(Self::default_hyperparams(target.dim())?, target, Normalization::IDENTITY);
        }
        let (z, norm) = normalize_targets(target.observations());
        let (hp, _) = fit_kernel(target.inputs(), &z, None, opts, rng)?;
        Self::condition(hp, target, norm)
    }

    /// Conditions with hyperparameters in normalized units.
    pub fn condition(hp: KernelHyperparams, target: &TaskDataset, norm: Normalization) -> Result<Self> {
        let data = target.with_observations(norm.apply(target.observations()))?;
        Ok(Self {
            gp: ConditionedGP::condition(&hp, &data, PriorMean::Zero)?,
            norm,
        })
    }

    pub fn hyperparams(&self) -> &KernelHyperparams {
        self.gp.hyperparams()
    }

    pub fn normalization(&self) -> Normalization {
        self.norm
    }

    pub fn predict(&self, xq: &DMatrix<f64>) -> Result<GaussianPrediction> {
        let p = self.gp.predict(xq)?;
        let s2 = self.norm.std * self.norm.std;
        Ok(GaussianPrediction {
            mean: self.norm.invert(&p.mean),
            covariance: p.covariance * s2,
        })
    }

    pub fn predict_marginal(&self, xq: &DMatrix<f64>) -> Result<MarginalPrediction> {
        let p = self.gp.predict_marginal(xq)?;
        let s2 = self.norm.std * self.norm.std;
        Ok(MarginalPrediction {
            mean: self.norm.invert(&p.mean),
            variance: p.variance * s2,
        })
    }
}

/// A trained surrogate of any kind. Immutable; prediction is pure.
#[derive(Clone, Debug)]
pub enum TransferModel {
    Gpbo(GpboModel),
    Joint(JointModel),
    Sequential(SequentialModel),
}

impl TransferModel {
    /// Trains `kind` on `sources` and `target`. The baseline ignores sources.
    pub fn train<R: Rng + ?Sized>(
        kind: ModelKind,
        sources: &[TaskDataset],
        target: &TaskDataset,
        opts: &TrainOptions,
        rng: &mut R,
    ) -> Result<Self> {
        if let Some(j) = kind.joint_kind() {
            return train_joint(j, sources, target, &opts.optimize, rng).map(Self::Joint);
        }
        if let Some(s) = kind.sequential_kind() {
            return train_sequential(s, opts.boost, sources, target, &opts.optimize, rng).map(Self::Sequential);
        }
        GpboModel::train(target, &opts.optimize, rng).map(Self::Gpbo)
    }

    /// Refits on new target data: joint models and the baseline retrain fully,
    /// sequential models refit the target level only.
    pub fn update_target<R: Rng + ?Sized>(
        &self,
        sources: &[TaskDataset],
        target: &TaskDataset,
        opts: &TrainOptions,
        rng: &mut R,
    ) -> Result<Self> {
        match self {
            Self::Sequential(m) => m.retrain_target(target, &opts.optimize, rng).map(Self::Sequential),
            _ => Self::train(self.kind(), sources, target, opts, rng),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Self::Gpbo(_) => ModelKind::Gpbo,
            Self::Joint(m) => match m.params().layout.kind {
                JointKind::Mtgp => ModelKind::Mtgp,
                JointKind::Mtkgp => ModelKind::Mtkgp,
                JointKind::Wsgp => ModelKind::Wsgp,
                JointKind::Hgp => ModelKind::Hgp,
            },
            Self::Sequential(m) => match m.kind() {
                SequentialKind::Shgp => ModelKind::Shgp,
                SequentialKind::Bhgp => ModelKind::Bhgp,
                SequentialKind::Mhgp => ModelKind::Mhgp,
            },
        }
    }

    pub fn predict(&self, xq: &DMatrix<f64>) -> Result<GaussianPrediction> {
        match self {
            Self::Gpbo(m) => m.predict(xq),
            Self::Joint(m) => m.predict(xq),
            Self::Sequential(m) => m.predict(xq),
        }
    }

    pub fn predict_marginal(&self, xq: &DMatrix<f64>) -> Result<MarginalPrediction> {
        match self {
            Self::Gpbo(m) => m.predict_marginal(xq),
            Self::Joint(m) => m.predict_marginal(xq),
            Self::Sequential(m) => m.predict_marginal(xq),
        }
    }

    /// Structured description of the trained model for persistence.
    pub fn to_document(&self, sources: &[TaskDataset], target: &TaskDataset) -> ModelDocument {
        let tasks = sources
            .iter()
            .chain(std::iter::once(target))
            .map(|d| TaskRef {
                task_id: d.task_id,
                n_observations: d.len(),
            })
            .collect();
        let parameters = match self {
            Self::Gpbo(m) => ModelParameters::Single {
                kernel: m.hyperparams().clone(),
                normalization: m.normalization(),
            },
            Self::Joint(m) => ModelParameters::Joint {
                params: m.params().clone(),
                normalization: m.normalization(),
            },
            Self::Sequential(m) => ModelParameters::Sequential {
                boost: m.variant(),
                levels: m
                    .levels()
                    .iter()
                    .map(|l| LevelDocument {
                        kernel: l.hp.clone(),
                        mean_offset: l.mean_offset,
                    })
                    .collect(),
            },
        };
        ModelDocument {
            format_version: ModelDocument::FORMAT_VERSION,
            kind: self.kind(),
            tasks,
            parameters,
        }
    }

    /// Rebuilds a model from a document and the datasets it references.
    pub fn from_document(doc: &ModelDocument, sources: &[TaskDataset], target: &TaskDataset) -> Result<Self> {
        if doc.format_version != ModelDocument::FORMAT_VERSION {
            return input_err(format!("unsupported model format version {}", doc.format_version));
        }
        let supplied: Vec<(usize, usize)> = sources
            .iter()
            .chain(std::iter::once(target))
            .map(|d| (d.task_id, d.len()))
            .collect();
        let recorded: Vec<(usize, usize)> = doc.tasks.iter().map(|t| (t.task_id, t.n_observations)).collect();
        if supplied != recorded {
            return input_err("datasets do not match the task references of the model document");
        }
        match (&doc.parameters, doc.kind) {
            (ModelParameters::Single { kernel, normalization }, ModelKind::Gpbo) => {
                GpboModel::condition(kernel.clone(), target, *normalization).map(Self::Gpbo)
            }
            (ModelParameters::Joint { params, normalization }, kind) if kind.joint_kind() == Some(params.layout.kind) => {
                let solver = if params.layout.kind == JointKind::Wsgp { SolverKind::Blocked } else { SolverKind::Dense };
                JointModel::condition(params.clone(), sources, target, *normalization, solver).map(Self::Joint)
            }
            (ModelParameters::Sequential { boost, levels }, kind) if kind.sequential_kind().is_some() => {
                if levels.len() != sources.len() + 1 {
                    return input_err("level count does not match the task count");
                }
                let specs = levels
                    .iter()
                    .zip(sources.iter().chain(std::iter::once(target)))
                    .map(|(l, d)| LevelSpec::new(l.kernel.clone(), d.clone(), l.mean_offset))
                    .collect();
                SequentialModel::from_levels(kind.sequential_kind().unwrap(), *boost, specs).map(Self::Sequential)
            }
            _ => input_err("model parameters do not match the model kind"),
        }
    }
}

/// Identifies a dataset the model was conditioned on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskRef {
    pub task_id: usize,
    pub n_observations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelDocument {
    pub kernel: KernelHyperparams,
    pub mean_offset: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ModelParameters {
    Single {
        kernel: KernelHyperparams,
        normalization: Normalization,
    },
    Joint {
        params: JointParams,
        normalization: Normalization,
    },
    Sequential {
        boost: BoostVariant,
        levels: Vec<LevelDocument>,
    },
}

/// Persisted form of a trained model: hyperparameters in constrained space plus
/// references to the task data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format_version: u32,
    pub kind: ModelKind,
    pub tasks: Vec<TaskRef>,
    pub parameters: ModelParameters,
}

impl ModelDocument {
    pub const FORMAT_VERSION: u32 = 1;
}
