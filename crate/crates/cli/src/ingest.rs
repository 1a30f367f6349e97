//! Discrete benchmarks from tabulated evaluations.
//!
//! The file is a CSV with a header: `task_id`, then one column per feature,
//! then the objective. Rows of one task need not be contiguous.

use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use transfer_gp::bo::Objective;
use transfer_gp::TaskDataset;

use crate::error::{CliError, Result};

/// All rows of one task, in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskTable {
    pub id: String,
    pub features: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

/// Parsed file: tasks in order of first appearance.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteTable {
    pub feature_names: Vec<String>,
    pub tasks: Vec<TaskTable>,
}

/// A target pool plus source datasets ready for the optimization loop.
#[derive(Clone, Debug)]
pub struct DiscreteBenchmark {
    pub target_id: String,
    pub source_ids: Vec<String>,
    /// Deduplicated target rows with their values.
    pub objective: Objective,
    pub sources: Vec<TaskDataset>,
}

impl DiscreteBenchmark {
    pub fn target_values(&self) -> &[f64] {
        match &self.objective {
            Objective::Table { values, .. } => values,
            Objective::Family { .. } => unreachable!("discrete benchmarks hold tables"),
        }
    }
}

pub fn read_discrete_table(path: &Path) -> Result<DiscreteTable> {
    let file = std::fs::File::open(path).map_err(crate::error::io_err(path))?;
    parse_discrete_table(file, path)
}

/// Parses CSV text; `path` only labels error messages.
pub fn parse_discrete_table<R: std::io::Read>(reader: R, path: &Path) -> Result<DiscreteTable> {
    let parse_err = |line: u64, message: String| CliError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() < 3 {
        return Err(parse_err(1, "need a task_id column, at least one feature and an objective column".into()));
    }
    if &header[0] != "task_id" {
        return Err(parse_err(1, format!("first column must be 'task_id', found '{}'", &header[0])));
    }
    let n_feat = header.len() - 2;
    let feature_names = header.iter().skip(1).take(n_feat).map(String::from).collect();
    let mut tasks: Vec<TaskTable> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let mut nums = Vec::with_capacity(n_feat + 1);
        for (k, field) in record.iter().enumerate().skip(1) {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line, format!("column '{}': '{field}' is not a number", &header[k])))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("column '{}' is not finite", &header[k])));
            }
            nums.push(v);
        }
        let id = &record[0];
        if id.is_empty() {
            return Err(parse_err(line, "empty task_id".into()));
        }
        let value = nums.pop().expect("objective column");
        let task = match tasks.iter_mut().position(|t| t.id == id) {
            Some(i) => &mut tasks[i],
            None => {
                tasks.push(TaskTable {
                    id: id.to_string(),
                    features: Vec::new(),
                    values: Vec::new(),
                });
                tasks.last_mut().expect("just pushed")
            }
        };
        task.features.push(nums);
        task.values.push(value);
    }
    Ok(DiscreteTable { feature_names, tasks })
}

fn dedup_rows(features: &[Vec<f64>], values: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut vals = Vec::new();
    for (f, v) in features.iter().zip(values) {
        let bits: Vec<u64> = f.iter().map(|x| x.to_bits()).collect();
        if !rows.iter().any(|r| r.iter().map(|x| x.to_bits()).eq(bits.iter().copied())) {
            rows.push(f.clone());
            vals.push(*v);
        }
    }
    (rows, vals)
}

/// Picks the target (named, or uniformly at random) and `n_sources` other
/// tasks uniformly without replacement (all others when `None`). Sources
/// with more than `downsample` rows are subsampled without replacement;
/// target rows are kept whole and deduplicated with the first occurrence
/// retained.
pub fn build_discrete_benchmark<R: Rng + ?Sized>(
    table: &DiscreteTable,
    target_task: Option<&str>,
    n_sources: Option<usize>,
    downsample: Option<usize>,
    rng: &mut R,
) -> Result<DiscreteBenchmark> {
    if table.tasks.len() < 2 {
        return Err(CliError::Config(format!("a discrete benchmark needs at least 2 tasks, found {}", table.tasks.len())));
    }
    let t_idx = match target_task {
        Some(id) => table
            .tasks
            .iter()
            .position(|t| t.id == id)
            .ok_or_else(|| CliError::Config(format!("target task '{id}' not in the table")))?,
        None => rng.random_range(0..table.tasks.len()),
    };
    let others: Vec<usize> = (0..table.tasks.len()).filter(|&i| i != t_idx).collect();
    let n_s = n_sources.unwrap_or(others.len());
    if n_s == 0 || n_s > others.len() {
        return Err(CliError::Config(format!("requested {n_s} source tasks, {} available", others.len())));
    }
    let mut chosen: Vec<usize> = sample(rng, others.len(), n_s).into_iter().map(|k| others[k]).collect();
    chosen.sort_unstable();

    let mut sources = Vec::with_capacity(n_s);
    for (sid, &ti) in chosen.iter().enumerate() {
        let task = &table.tasks[ti];
        let keep: Vec<usize> = match downsample {
            Some(k) if k < task.values.len() => {
                let mut idx = sample(rng, task.values.len(), k).into_vec();
                idx.sort_unstable();
                idx
            }
            _ => (0..task.values.len()).collect(),
        };
        let rows: Vec<Vec<f64>> = keep.iter().map(|&i| task.features[i].clone()).collect();
        let ys: Vec<f64> = keep.iter().map(|&i| task.values[i]).collect();
        sources.push(TaskDataset::from_rows(&rows, &ys, sid)?);
    }
    let target = &table.tasks[t_idx];
    let (candidates, values) = dedup_rows(&target.features, &target.values);
    Ok(DiscreteBenchmark {
        target_id: target.id.clone(),
        source_ids: chosen.iter().map(|&i| table.tasks[i].id.clone()).collect(),
        objective: Objective::Table { candidates, values },
        sources,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn table(text: &str) -> Result<DiscreteTable> {
        parse_discrete_table(text.as_bytes(), Path::new("mem.csv"))
    }

    fn two_tasks() -> String {
        let mut s = String::from("task_id,a,b,objective\n");
        for t in ["src", "tgt"] {
            for i in 0..10 {
                s.push_str(&format!("{t},{i},{},{}\n", i * 2, i as f64 * 0.5));
            }
        }
        s
    }

    #[test]
    fn downsampling_applies_to_sources_only() {
        let t = table(&two_tasks()).unwrap();
        let b = build_discrete_benchmark(&t, Some("tgt"), None, Some(5), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(b.sources.len(), 1);
        assert_eq!(b.sources[0].len(), 5);
        assert_eq!(b.target_values().len(), 10);
        assert_eq!(b.target_id, "tgt");
    }

    #[test]
    fn duplicate_target_rows_keep_first() {
        let text = "task_id,x,objective\ns,0,1\nt,1,5\nt,2,6\nt,1,7\n";
        let b = build_discrete_benchmark(&table(text).unwrap(), Some("t"), None, None, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        match b.objective {
            Objective::Table { candidates, values } => {
                assert_eq!(candidates, vec![vec![1.0], vec![2.0]]);
                assert_eq!(values, vec![5.0, 6.0]);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = table("task_id,x,objective\na,1,2\na,oops,3\n").unwrap_err();
        assert!(matches!(err, CliError::Parse { line: 3, .. }), "{err}");
        let err = table("task_id,x,objective\na,1,2\na,1\n").unwrap_err();
        assert!(matches!(err, CliError::Parse { line: 3, .. }), "{err}");
        assert!(table("id,x,objective\na,1,2\n").is_err());
    }

    #[test]
    fn single_task_rejected() {
        let t = table("task_id,x,objective\na,1,2\na,2,3\n").unwrap();
        assert!(build_discrete_benchmark(&t, None, None, None, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn seeded_selection_is_reproducible() {
        let mut s = String::from("task_id,x,objective\n");
        for t in 0..6 {
            for i in 0..4 {
                s.push_str(&format!("task{t},{i},{}\n", t * i));
            }
        }
        let t = table(&s).unwrap();
        let a = build_discrete_benchmark(&t, None, Some(3), Some(2), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = build_discrete_benchmark(&t, None, Some(3), Some(2), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a.target_id, b.target_id);
        assert_eq!(a.source_ids, b.source_ids);
        assert_eq!(a.source_ids.len(), 3);
        assert!(!a.source_ids.contains(&a.target_id));
        assert_eq!(a.sources[1].task_id, 1);
    }
}
