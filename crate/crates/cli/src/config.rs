//! Experiment configuration read from TOML.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use transfer_gp::bo::DEFAULT_BETA;
use transfer_gp::families::Family;
use transfer_gp::oracles::VerifyScope;
use transfer_gp::transfer::BoostVariant;
use transfer_gp::ModelKind;

use crate::error::{io_err, CliError, Result};

/// What is being optimized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum Benchmark {
    /// Random members of a function family. `fixed_tasks` selects the fixed
    /// Alpine source and target functions instead of random draws.
    Family {
        family: Family,
        #[serde(default)]
        fixed_tasks: bool,
    },
    /// Tabulated evaluations; see [`crate::ingest`].
    Discrete {
        file: PathBuf,
        #[serde(default)]
        target_task: Option<String>,
    },
}

/// Either a number of seeds (`0..n`) or explicit seed indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    Count(u64),
    List(Vec<u64>),
}

impl Seeds {
    pub fn indices(&self) -> Vec<u64> {
        match self {
            Self::Count(n) => (0..*n).collect(),
            Self::List(v) => v.clone(),
        }
    }
}

fn default_beta() -> f64 {
    DEFAULT_BETA
}

fn default_tasks() -> usize {
    1
}

fn default_timing() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub benchmark: Benchmark,
    /// Number of source tasks.
    pub n_s: usize,
    /// Points per source; for discrete benchmarks the downsampled size.
    pub points_per_source: usize,
    pub sigma_s: f64,
    pub sigma_t: f64,
    pub models: Vec<ModelKind>,
    pub iterations: usize,
    pub seeds: Seeds,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Suites run before the experiments; any failure aborts the run.
    #[serde(default)]
    pub verification: Vec<VerifyScope>,
    #[serde(default)]
    pub master_seed: u64,
    /// Problem instances per seed.
    #[serde(default = "default_tasks")]
    pub tasks: usize,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub boost: BoostVariant,
    /// Hyperparameter restarts per training; library default when absent.
    #[serde(default)]
    pub restarts: Option<usize>,
    /// Writes wall-clock columns; off gives byte-reproducible traces.
    #[serde(default = "default_timing")]
    pub timing: bool,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`; a relative benchmark file is resolved against the
    /// config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Benchmark::Discrete { file, .. } = &mut cfg.benchmark {
            if file.is_relative() {
                if let Some(dir) = path.parent() {
                    *file = dir.join(&*file);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.iterations < 1 {
            return bad("iterations must be at least 1".into());
        }
        if self.models.is_empty() {
            return bad("at least one model is required".into());
        }
        let mut seen = HashSet::new();
        if let Some(m) = self.models.iter().find(|m| !seen.insert(**m)) {
            return bad(format!("model {m} is listed twice"));
        }
        let seeds = self.seeds.indices();
        if seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        let mut seen = HashSet::new();
        if let Some(s) = seeds.iter().find(|s| !seen.insert(**s)) {
            return bad(format!("seed {s} is listed twice"));
        }
        if !(self.sigma_s >= 0.0 && self.sigma_t >= 0.0) {
            return bad("noise levels must be non-negative".into());
        }
        if !(self.beta >= 0.0) {
            return bad("beta must be non-negative".into());
        }
        if self.tasks < 1 {
            return bad("tasks must be at least 1".into());
        }
        if self.restarts == Some(0) {
            return bad("restarts must be at least 1".into());
        }
        let needs_sources = self.models.iter().any(|m| *m != ModelKind::Gpbo);
        if needs_sources && (self.n_s == 0 || self.points_per_source == 0) {
            return bad("transfer models need n_s >= 1 and points_per_source >= 1".into());
        }
        if let Benchmark::Family { family, fixed_tasks: true } = self.benchmark {
            if family != Family::Alpine {
                return bad(format!("fixed tasks exist only for alpine, not {family}"));
            }
            if self.n_s > 5 {
                return bad("the fixed alpine benchmark has five sources".into());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BRANIN: &str = r#"
n_s = 1
points_per_source = 40
sigma_s = 1.0
sigma_t = 1.0
models = ["gpbo", "hgp", "shgp"]
iterations = 30
seeds = 30

[benchmark]
family = "branin"
"#;

    #[test]
    fn parses_family_config() {
        let c = ExperimentConfig::from_toml(BRANIN).unwrap();
        assert_eq!(c.benchmark, Benchmark::Family { family: Family::Branin, fixed_tasks: false });
        assert_eq!(c.seeds.indices().len(), 30);
        assert_eq!(c.beta, 3.0);
        assert!(c.timing);
        assert_eq!(c.models, vec![ModelKind::Gpbo, ModelKind::Hgp, ModelKind::Shgp]);
    }

    #[test]
    fn parses_discrete_config_and_seed_list() {
        let text = BRANIN.replace("family = \"branin\"", "file = \"svm.csv\"").replace("seeds = 30", "seeds = [3, 7]");
        let c = ExperimentConfig::from_toml(&text).unwrap();
        assert!(matches!(c.benchmark, Benchmark::Discrete { .. }));
        assert_eq!(c.seeds.indices(), vec![3, 7]);
    }

    #[test]
    fn rejects_invalid_values() {
        for (from, to) in [
            ("iterations = 30", "iterations = 0"),
            ("seeds = 30", "seeds = [1, 1]"),
            ("sigma_s = 1.0", "sigma_s = -1.0"),
            ("models = [\"gpbo\", \"hgp\", \"shgp\"]", "models = []"),
            ("models = [\"gpbo\", \"hgp\", \"shgp\"]", "models = [\"gp\"]"),
            ("n_s = 1", "n_s = 1\nunknown_key = 2"),
            ("family = \"branin\"", "family = \"branin\"\nfixed_tasks = true"),
        ] {
            let text = BRANIN.replace(from, to);
            assert!(ExperimentConfig::from_toml(&text).is_err(), "{to}");
        }
    }
}
