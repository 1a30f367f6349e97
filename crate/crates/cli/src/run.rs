//! The seed × model × task grid: execution, per-run traces and aggregation.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use transfer_gp::bo::{run_bo, BOTrace, BoConfig, Objective, RegretReference};
use transfer_gp::families::{alpine_fixed_sources, default_grid_density, generate_source_data, true_maximum, true_minimum, FamilyTask, ALPINE_SLOPE};
use transfer_gp::oracles::{run_verification, VerificationReport};
use transfer_gp::{ModelKind, TaskDataset, TrainOptions};

use crate::config::{Benchmark, ExperimentConfig};
use crate::error::{io_err, CliError, Result};
use crate::ingest::{build_discrete_benchmark, read_discrete_table, DiscreteTable};

/// Bit-exact trace header.
pub const TRACE_HEADER: &str = "seed,model,task,iteration,x_json,y,best_so_far,simple_regret,adtm,train_ms,acq_ms";

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Stable seed for one cell of the grid. Depends only on its own
/// coordinates, so adding models or seeds leaves other runs unchanged.
pub fn derive_seed(master: u64, label: &str, task: usize, seed_index: u64) -> u64 {
    [fnv1a(label), task as u64, seed_index]
        .into_iter()
        .fold(splitmix(master), |h, v| splitmix(h ^ splitmix(v)))
}

/// One problem: target objective, source data and regret reference.
#[derive(Clone, Debug)]
pub struct Instance {
    pub objective: Objective,
    pub sources: Vec<TaskDataset>,
    pub reference: RegretReference,
}

/// Draws the problem for `(task, seed_index)`; shared by every model.
pub fn build_instance(cfg: &ExperimentConfig, table: Option<&DiscreteTable>, task: usize, seed_index: u64) -> Result<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, "instance", task, seed_index));
    match (&cfg.benchmark, table) {
        (Benchmark::Family { family, fixed_tasks }, _) => {
            let (source_tasks, target): (Vec<FamilyTask>, FamilyTask) = if *fixed_tasks {
                let all = alpine_fixed_sources();
                (all[..cfg.n_s].to_vec(), FamilyTask::Alpine { s: 0.0, c: ALPINE_SLOPE })
            } else {
                let s = (0..cfg.n_s).map(|_| family.sample_task(&mut rng)).collect();
                (s, family.sample_task(&mut rng))
            };
            let sources = source_tasks
                .iter()
                .enumerate()
                .map(|(i, t)| generate_source_data(t, cfg.points_per_source, cfg.sigma_s, i, &mut rng))
                .collect::<transfer_gp::Result<Vec<_>>>()?;
            let density = default_grid_density(target.dim());
            let lo = true_minimum(&target, density)?.f;
            let hi = true_maximum(&target, density)?.f;
            Ok(Instance {
                objective: Objective::Family { task: target, sigma: cfg.sigma_t },
                sources,
                reference: RegretReference { true_min: lo, y_min: lo, y_max: hi },
            })
        }
        (Benchmark::Discrete { target_task, .. }, Some(table)) => {
            let b = build_discrete_benchmark(table, target_task.as_deref(), Some(cfg.n_s), Some(cfg.points_per_source), &mut rng)?;
            let values = b.target_values();
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Ok(Instance {
                objective: b.objective,
                sources: b.sources,
                reference: RegretReference { true_min: lo, y_min: lo, y_max: hi },
            })
        }
        (Benchmark::Discrete { .. }, None) => Err(CliError::Config("discrete benchmark table not loaded".into())),
    }
}

/// Grid coordinates of one run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunKey {
    pub model: ModelKind,
    pub task: usize,
    pub seed: u64,
}

impl RunKey {
    pub fn stem(&self) -> String {
        format!("{}_task{}_seed{}", self.model, self.task, self.seed)
    }
}

/// One CSV row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub seed: u64,
    pub model: ModelKind,
    pub task: usize,
    pub iteration: usize,
    pub x_json: String,
    pub y: f64,
    pub best_so_far: f64,
    pub simple_regret: Option<f64>,
    pub adtm: Option<f64>,
    pub train_ms: f64,
    pub acq_ms: f64,
}

pub fn trace_rows(key: RunKey, trace: &BOTrace, timing: bool) -> Vec<TraceRow> {
    trace
        .records
        .iter()
        .map(|r| TraceRow {
            seed: key.seed,
            model: key.model,
            task: key.task,
            iteration: r.iteration,
            x_json: serde_json::to_string(&r.x).expect("finite inputs serialize"),
            y: r.y,
            best_so_far: r.best_so_far,
            simple_regret: r.simple_regret,
            adtm: r.adtm,
            train_ms: if timing { r.train_ms } else { 0.0 },
            acq_ms: if timing { r.acq_ms } else { 0.0 },
        })
        .collect()
}

pub fn write_trace_csv(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(TRACE_HEADER.split(','))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if header.join(",") != TRACE_HEADER {
        return Err(CliError::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "unexpected trace header".into(),
        });
    }
    r.deserialize().map(|row| row.map_err(CliError::from)).collect()
}

/// Completion marker written after a run's trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed { iteration: Option<usize>, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureEntry {
    pub model: ModelKind,
    pub task: usize,
    pub seed: u64,
    pub iteration: Option<usize>,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: ModelKind,
    /// Completed runs contributing to the means.
    pub runs: usize,
    pub failed_runs: usize,
    pub mean_regret: Vec<f64>,
    pub sem_regret: Vec<f64>,
    pub mean_adtm: Vec<f64>,
    pub sem_adtm: Vec<f64>,
    pub mean_train_ms: Vec<f64>,
    pub mean_acq_ms: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub iterations: usize,
    pub models: Vec<ModelSummary>,
    pub failures: Vec<FailureEntry>,
}

impl RunSummary {
    pub fn model(&self, kind: ModelKind) -> Option<&ModelSummary> {
        self.models.iter().find(|m| m.model == kind)
    }
}

/// Mean and standard error (sample std over `√n`; zero for one value).
pub fn mean_sem(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Pure aggregation of trace rows. Rows of failed runs are ignored.
pub fn summarize(rows: &[TraceRow], models: &[ModelKind], iterations: usize, failures: Vec<FailureEntry>) -> RunSummary {
    let failed = |r: &TraceRow| failures.iter().any(|f| f.model == r.model && f.task == r.task && f.seed == r.seed);
    let summaries = models
        .iter()
        .map(|&model| {
            let mine: Vec<&TraceRow> = rows.iter().filter(|r| r.model == model && !failed(r)).collect();
            let mut runs: Vec<(usize, u64)> = mine.iter().map(|r| (r.task, r.seed)).collect();
            runs.sort_unstable();
            runs.dedup();
            let mut s = ModelSummary {
                model,
                runs: runs.len(),
                failed_runs: failures.iter().filter(|f| f.model == model).count(),
                mean_regret: Vec::with_capacity(iterations),
                sem_regret: Vec::with_capacity(iterations),
                mean_adtm: Vec::with_capacity(iterations),
                sem_adtm: Vec::with_capacity(iterations),
                mean_train_ms: Vec::with_capacity(iterations),
                mean_acq_ms: Vec::with_capacity(iterations),
            };
            for it in 1..=iterations {
                let at: Vec<&&TraceRow> = mine.iter().filter(|r| r.iteration == it).collect();
                let (m, e) = mean_sem(&at.iter().filter_map(|r| r.simple_regret).collect::<Vec<_>>());
                s.mean_regret.push(m);
                s.sem_regret.push(e);
                let (m, e) = mean_sem(&at.iter().filter_map(|r| r.adtm).collect::<Vec<_>>());
                s.mean_adtm.push(m);
                s.sem_adtm.push(e);
                s.mean_train_ms.push(mean_sem(&at.iter().map(|r| r.train_ms).collect::<Vec<_>>()).0);
                s.mean_acq_ms.push(mean_sem(&at.iter().map(|r| r.acq_ms).collect::<Vec<_>>()).0);
            }
            s
        })
        .collect();
    RunSummary {
        iterations,
        models: summaries,
        failures,
    }
}

/// Result of a complete `run`.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub total: usize,
    pub failed: usize,
    /// Runs skipped because a completion marker already existed.
    pub resumed: usize,
    pub summary: RunSummary,
    pub verification: Option<VerificationReport>,
    pub out_dir: PathBuf,
}

impl RunOutcome {
    /// More than half of the runs failed.
    pub fn is_failure(&self) -> bool {
        2 * self.failed > self.total
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

fn train_options(cfg: &ExperimentConfig) -> TrainOptions {
    let mut t = TrainOptions {
        boost: cfg.boost,
        ..TrainOptions::default()
    };
    if let Some(r) = cfg.restarts {
        t.optimize.n_restarts = r;
    }
    t
}

fn execute(cfg: &ExperimentConfig, key: RunKey, instance: &Instance) -> (Vec<TraceRow>, RunStatus) {
    let mut bo = BoConfig::new(key.model, instance.objective.clone(), instance.sources.clone(), cfg.iterations, derive_seed(cfg.master_seed, key.model.name(), key.task, key.seed));
    bo.beta = cfg.beta;
    bo.train = train_options(cfg);
    bo.reference = Some(instance.reference);
    match run_bo(&bo) {
        Ok(trace) => {
            let rows = trace_rows(key, &trace, cfg.timing);
            let status = match trace.failure {
                None => RunStatus::Ok,
                Some(f) => RunStatus::Failed {
                    iteration: Some(f.iteration),
                    message: f.message,
                },
            };
            (rows, status)
        }
        Err(e) => (
            Vec::new(),
            RunStatus::Failed {
                iteration: None,
                message: e.to_string(),
            },
        ),
    }
}

/// Runs the grid into `out_dir` on `jobs` worker threads. Runs with a
/// completion marker are not repeated. Traces and summary are rebuilt from
/// the per-run files in a final single-threaded pass.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path, jobs: usize) -> Result<RunOutcome> {
    cfg.validate()?;
    let runs_dir = out_dir.join("runs");
    fs::create_dir_all(&runs_dir).map_err(io_err(&runs_dir))?;

    let mut verification = None;
    if !cfg.verification.is_empty() {
        let mut report = VerificationReport::default();
        for scope in &cfg.verification {
            report.checks.extend(run_verification(*scope, cfg.master_seed)?.checks);
        }
        write_json(&out_dir.join("verification.json"), &report)?;
        if !report.passed() {
            let names: Vec<String> = report.failures().map(|c| format!("{}/{}", c.suite, c.name)).collect();
            return Err(CliError::Config(format!("verification failed: {}", names.join(", "))));
        }
        verification = Some(report);
    }

    let table = match &cfg.benchmark {
        Benchmark::Discrete { file, .. } => Some(read_discrete_table(file)?),
        Benchmark::Family { .. } => None,
    };
    let seeds = cfg.seeds.indices();
    let cells: Vec<(usize, u64)> = (0..cfg.tasks).flat_map(|t| seeds.iter().map(move |&s| (t, s))).collect();
    let keys: Vec<RunKey> = cells
        .iter()
        .flat_map(|&(task, seed)| cfg.models.iter().map(move |&model| RunKey { model, task, seed }))
        .collect();
    let done = |k: &RunKey| runs_dir.join(format!("{}.done", k.stem())).exists() && runs_dir.join(format!("{}.csv", k.stem())).exists();
    let resumed = keys.iter().filter(|k| done(k)).count();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {jobs} workers: {e}")))?;
    pool.install(|| -> Result<()> {
        let pending_cells: Vec<(usize, u64)> = cells
            .iter()
            .copied()
            .filter(|&(t, s)| keys.iter().any(|k| k.task == t && k.seed == s && !done(k)))
            .collect();
        let instances: Vec<((usize, u64), std::result::Result<Instance, String>)> = pending_cells
            .par_iter()
            .map(|&(t, s)| ((t, s), build_instance(cfg, table.as_ref(), t, s).map_err(|e| e.to_string())))
            .collect();
        keys.par_iter().filter(|k| !done(k)).try_for_each(|k| -> Result<()> {
            let inst = &instances.iter().find(|(c, _)| *c == (k.task, k.seed)).expect("instance built").1;
            let (rows, status) = match inst {
                Ok(inst) => execute(cfg, *k, inst),
                Err(msg) => (
                    Vec::new(),
                    RunStatus::Failed {
                        iteration: None,
                        message: format!("problem setup: {msg}"),
                    },
                ),
            };
            write_trace_csv(&runs_dir.join(format!("{}.csv", k.stem())), &rows)?;
            write_json(&runs_dir.join(format!("{}.done", k.stem())), &status)
        })
    })?;

    let mut all_rows = Vec::new();
    let mut failures = Vec::new();
    for k in &keys {
        let marker = runs_dir.join(format!("{}.done", k.stem()));
        let text = fs::read_to_string(&marker).map_err(io_err(&marker))?;
        if let RunStatus::Failed { iteration, message } = serde_json::from_str(&text)? {
            failures.push(FailureEntry {
                model: k.model,
                task: k.task,
                seed: k.seed,
                iteration,
                message,
            });
        }
        all_rows.extend(read_trace_csv(&runs_dir.join(format!("{}.csv", k.stem())))?);
    }
    write_trace_csv(&out_dir.join("traces.csv"), &all_rows)?;
    let failed = failures.len();
    let summary = summarize(&all_rows, &cfg.models, cfg.iterations, failures);
    write_json(&out_dir.join("summary.json"), &summary)?;
    Ok(RunOutcome {
        total: keys.len(),
        failed,
        resumed,
        summary,
        verification,
        out_dir: out_dir.to_path_buf(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_depend_only_on_own_coordinates() {
        let a = derive_seed(7, "hgp", 0, 3);
        assert_eq!(a, derive_seed(7, "hgp", 0, 3));
        assert_ne!(a, derive_seed(7, "shgp", 0, 3));
        assert_ne!(a, derive_seed(7, "hgp", 1, 3));
        assert_ne!(a, derive_seed(7, "hgp", 0, 4));
        assert_ne!(a, derive_seed(8, "hgp", 0, 3));
    }

    #[test]
    fn sem_is_sample_std_over_root_n() {
        let (m, e) = mean_sem(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        let sd = (5.0f64 / 3.0).sqrt();
        assert!((e - sd / 2.0).abs() < 1e-15);
        assert_eq!(mean_sem(&[3.0]), (3.0, 0.0));
    }

    fn row(model: ModelKind, seed: u64, it: usize, regret: f64) -> TraceRow {
        TraceRow {
            seed,
            model,
            task: 0,
            iteration: it,
            x_json: "[0.5]".into(),
            y: 1.0,
            best_so_far: 1.0,
            simple_regret: Some(regret),
            adtm: Some(regret / 10.0),
            train_ms: 1.0,
            acq_ms: 2.0,
        }
    }

    #[test]
    fn summary_excludes_failed_runs() {
        let rows = vec![
            row(ModelKind::Gpbo, 0, 1, 2.0),
            row(ModelKind::Gpbo, 1, 1, 4.0),
            row(ModelKind::Gpbo, 2, 1, 100.0),
        ];
        let failures = vec![FailureEntry {
            model: ModelKind::Gpbo,
            task: 0,
            seed: 2,
            iteration: Some(2),
            message: "x".into(),
        }];
        let s = summarize(&rows, &[ModelKind::Gpbo], 1, failures);
        let g = s.model(ModelKind::Gpbo).unwrap();
        assert_eq!(g.runs, 2);
        assert_eq!(g.failed_runs, 1);
        assert_eq!(g.mean_regret, vec![3.0]);
        assert_eq!(g.sem_regret, vec![1.0]);
    }

    #[test]
    fn trace_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let mut rows = vec![row(ModelKind::Hgp, 0, 1, 0.25), row(ModelKind::Hgp, 0, 2, 0.125)];
        rows[1].simple_regret = None;
        rows[1].x_json = "[0.1,0.2]".into();
        write_trace_csv(&p, &rows).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().next().unwrap(), TRACE_HEADER);
        assert_eq!(read_trace_csv(&p).unwrap(), rows);
    }
}
