//! Parameterized synthetic benchmark families, task sampling, noisy data
//! generation and certified minima.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::{Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::TaskDataset;
use crate::error::{input_err, Error, Result};
use crate::optim::{minimize_box, LbfgsbOptions};

pub const HARTMANN3_A: [[f64; 3]; 4] = [[3.0, 10.0, 30.0], [0.1, 10.0, 35.0], [3.0, 10.0, 30.0], [0.1, 10.0, 35.0]];

pub const HARTMANN3_P: [[f64; 3]; 4] = [
    [0.3689, 0.1170, 0.2673],
    [0.4699, 0.4387, 0.7470],
    [0.1091, 0.8732, 0.5547],
    [0.0381, 0.5743, 0.8828],
];

pub const HARTMANN6_A: [[f64; 6]; 4] = [
    [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
    [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
    [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
    [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
];

pub const HARTMANN6_P: [[f64; 6]; 4] = [
    [0.1312, 0.1696, 0.5569, 0.0124, 0.8283, 0.5886],
    [0.2329, 0.4135, 0.8307, 0.3736, 0.1004, 0.9991],
    [0.2348, 0.1451, 0.3522, 0.2883, 0.3047, 0.6650],
    [0.4047, 0.8828, 0.8732, 0.5743, 0.1091, 0.0381],
];

/// Hartmann weights of the original functions.
pub const HARTMANN_ALPHA: [f64; 4] = [1.0, 1.2, 3.0, 3.2];

/// Alpine slope of the original function.
pub const ALPINE_SLOPE: f64 = 0.1;

/// Grid-search evaluation budget of [`true_minimum`].
pub const GRID_BUDGET: u64 = 10_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Forrester,
    Alpine,
    Branin,
    Hartmann3,
    Hartmann6,
}

impl Family {
    pub const ALL: [Family; 5] = [Self::Forrester, Self::Alpine, Self::Branin, Self::Hartmann3, Self::Hartmann6];

    pub fn name(self) -> &'static str {
        match self {
            Self::Forrester => "forrester",
            Self::Alpine => "alpine",
            Self::Branin => "branin",
            Self::Hartmann3 => "hartmann3",
            Self::Hartmann6 => "hartmann6",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            Self::Forrester | Self::Alpine => 1,
            Self::Branin => 2,
            Self::Hartmann3 => 3,
            Self::Hartmann6 => 6,
        }
    }

    pub fn bounds(self) -> Vec<(f64, f64)> {
        match self {
            Self::Forrester => vec![(0.0, 1.0)],
            Self::Alpine => vec![(-10.0, 10.0)],
            Self::Branin => vec![(-5.0, 10.0), (0.0, 15.0)],
            Self::Hartmann3 => vec![(0.0, 1.0); 3],
            Self::Hartmann6 => vec![(0.0, 1.0); 6],
        }
    }

    /// Parameter ranges `(name, low, high)` of the family distribution.
    /// Alpine draws its shift from a fixed set instead.
    pub fn parameter_ranges(self) -> Vec<(&'static str, f64, f64)> {
        match self {
            Self::Forrester => vec![("a", 0.2, 3.0), ("b", -5.0, 15.0), ("c", -5.0, 5.0)],
            Self::Alpine => vec![("s", PI / 12.0, 5.0 * PI / 12.0)],
            Self::Branin => vec![
                ("a", 0.5, 1.5),
                ("b", 0.1, 0.15),
                ("c", 1.0, 2.0),
                ("r", 5.0, 7.0),
                ("s", 8.0, 12.0),
                ("t", 0.03, 0.05),
            ],
            Self::Hartmann3 | Self::Hartmann6 => vec![
                ("alpha1", 1.00, 1.02),
                ("alpha2", 1.18, 1.20),
                ("alpha3", 2.8, 3.0),
                ("alpha4", 3.2, 3.4),
            ],
        }
    }

    /// The original (unperturbed) member of the family.
    pub fn canonical(self) -> FamilyTask {
        match self {
            Self::Forrester => FamilyTask::Forrester { a: 1.0, b: 0.0, c: 0.0 },
            Self::Alpine => FamilyTask::Alpine { s: 0.0, c: ALPINE_SLOPE },
            Self::Branin => FamilyTask::Branin {
                a: 1.0,
                b: 5.1 / (4.0 * PI * PI),
                c: 5.0 / PI,
                r: 6.0,
                s: 10.0,
                t: 1.0 / (8.0 * PI),
            },
            Self::Hartmann3 => FamilyTask::Hartmann3 { alpha: HARTMANN_ALPHA },
            Self::Hartmann6 => FamilyTask::Hartmann6 { alpha: HARTMANN_ALPHA },
        }
    }

    /// Draws a task from the family distribution. Alpine picks one of the
    /// fixed shifts `kπ/12`, `k = 1..5`.
    pub fn sample_task<R: Rng + ?Sized>(self, rng: &mut R) -> FamilyTask {
        let mut u = |lo: f64, hi: f64| rng.random_range(lo..=hi);
        match self {
            Self::Forrester => FamilyTask::Forrester {
                a: u(0.2, 3.0),
                b: u(-5.0, 15.0),
                c: u(-5.0, 5.0),
            },
            Self::Alpine => {
                let k = rng.random_range(1..=5);
                FamilyTask::Alpine {
                    s: k as f64 * PI / 12.0,
                    c: ALPINE_SLOPE,
                }
            }
            Self::Branin => FamilyTask::Branin {
                a: u(0.5, 1.5),
                b: u(0.1, 0.15),
                c: u(1.0, 2.0),
                r: u(5.0, 7.0),
                s: u(8.0, 12.0),
                t: u(0.03, 0.05),
            },
            Self::Hartmann3 | Self::Hartmann6 => {
                let alpha = [u(1.00, 1.02), u(1.18, 1.20), u(2.8, 3.0), u(3.2, 3.4)];
                if self == Self::Hartmann3 {
                    FamilyTask::Hartmann3 { alpha }
                } else {
                    FamilyTask::Hartmann6 { alpha }
                }
            }
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|f| f.name() == lower)
            .ok_or_else(|| Error::Input(format!("unknown function family '{s}'")))
    }
}

fn default_alpine_slope() -> f64 {
    ALPINE_SLOPE
}

/// One member of a family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum FamilyTask {
    /// `a(6x − 2)² sin(12x − 4) + b(x − ½) − c`
    Forrester { a: f64, b: f64, c: f64 },
    /// `x sin(x + π + s) + c x`
    Alpine {
        s: f64,
        #[serde(default = "default_alpine_slope")]
        c: f64,
    },
    /// `a(x₂ − b x₁² + c x₁ − r)² + s(1 − t) cos x₁ + s`
    Branin { a: f64, b: f64, c: f64, r: f64, s: f64, t: f64 },
    Hartmann3 { alpha: [f64; 4] },
    Hartmann6 { alpha: [f64; 4] },
}

fn hartmann<const D: usize>(x: &[f64], alpha: &[f64; 4], a: &[[f64; D]; 4], p: &[[f64; D]; 4]) -> f64 {
    -(0..4)
        .map(|i| {
            let e: f64 = (0..D).map(|j| a[i][j] * (x[j] - p[i][j]).powi(2)).sum();
            alpha[i] * (-e).exp()
        })
        .sum::<f64>()
}

impl FamilyTask {
    pub fn family(&self) -> Family {
        match self {
            Self::Forrester { .. } => Family::Forrester,
            Self::Alpine { .. } => Family::Alpine,
            Self::Branin { .. } => Family::Branin,
            Self::Hartmann3 { .. } => Family::Hartmann3,
            Self::Hartmann6 { .. } => Family::Hartmann6,
        }
    }

    pub fn dim(&self) -> usize {
        self.family().dim()
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.family().bounds()
    }

    /// Parameter values in the order of [`Family::parameter_ranges`].
    pub fn parameters(&self) -> Vec<f64> {
        match self {
            Self::Forrester { a, b, c } => vec![*a, *b, *c],
            Self::Alpine { s, .. } => vec![*s],
            Self::Branin { a, b, c, r, s, t } => vec![*a, *b, *c, *r, *s, *t],
            Self::Hartmann3 { alpha } | Self::Hartmann6 { alpha } => alpha.to_vec(),
        }
    }

    /// Exact function value; `x` must lie in the input box.
    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        let bounds = self.bounds();
        if x.len() != bounds.len() {
            return input_err(format!("{} expects {} inputs, got {}", self.family(), bounds.len(), x.len()));
        }
        for (v, (lo, hi)) in x.iter().zip(&bounds) {
            if !(v >= lo && v <= hi) {
                return input_err(format!("input {v} outside [{lo}, {hi}] for {}", self.family()));
            }
        }
        Ok(self.value(x))
    }

    /// Function value without the box check.
    pub fn value(&self, x: &[f64]) -> f64 {
        match *self {
            Self::Forrester { a, b, c } => {
                let v = x[0];
                a * (6.0 * v - 2.0).powi(2) * (12.0 * v - 4.0).sin() + b * (v - 0.5) - c
            }
            Self::Alpine { s, c } => x[0] * (x[0] + PI + s).sin() + c * x[0],
            Self::Branin { a, b, c, r, s, t } => {
                let inner = x[1] - b * x[0] * x[0] + c * x[0] - r;
                a * inner * inner + s * (1.0 - t) * x[0].cos() + s
            }
            Self::Hartmann3 { ref alpha } => hartmann(x, alpha, &HARTMANN3_A, &HARTMANN3_P),
            Self::Hartmann6 { ref alpha } => hartmann(x, alpha, &HARTMANN6_A, &HARTMANN6_P),
        }
    }

    /// Evaluates every row of `x`.
    pub fn evaluate_rows(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(x.nrows());
        for i in 0..x.nrows() {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            out[i] = self.evaluate(&row)?;
        }
        Ok(out)
    }

    /// Evaluates at `x` and adds `N(0, σ²)` noise.
    pub fn observe<R: Rng + ?Sized>(&self, x: &[f64], sigma: f64, rng: &mut R) -> Result<NoisySample> {
        if !(sigma >= 0.0) {
            return input_err(format!("noise standard deviation must be non-negative, got {sigma}"));
        }
        let f = self.evaluate(x)?;
        let eps = if sigma > 0.0 {
            Normal::new(0.0, sigma).expect("valid normal").sample(rng)
        } else {
            0.0
        };
        Ok(NoisySample { x: x.to_vec(), f, y: f + eps })
    }
}

/// Fixed Alpine tasks: sources `s = kπ/12, k = 1..5`, target `s = 0`.
pub fn alpine_fixed_sources() -> Vec<FamilyTask> {
    (1..=5)
        .map(|k| FamilyTask::Alpine {
            s: k as f64 * PI / 12.0,
            c: ALPINE_SLOPE,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoisySample {
    pub x: Vec<f64>,
    pub f: f64,
    pub y: f64,
}

/// A point drawn uniformly from the box.
pub fn sample_uniform<R: Rng + ?Sized>(bounds: &[(f64, f64)], rng: &mut R) -> Vec<f64> {
    bounds.iter().map(|(lo, hi)| rng.random_range(*lo..=*hi)).collect()
}

/// `n` uniform inputs with observations `f(x) + N(0, σ²)`.
pub fn generate_source_data<R: Rng + ?Sized>(task: &FamilyTask, n: usize, sigma: f64, task_id: usize, rng: &mut R) -> Result<TaskDataset> {
    let bounds = task.bounds();
    let mut data = TaskDataset::empty(bounds.len(), task_id);
    for _ in 0..n {
        let x = sample_uniform(&bounds, rng);
        let s = task.observe(&x, sigma, rng)?;
        data.push(&s.x, s.y)?;
    }
    Ok(data)
}

/// Minimizer and minimum of a task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskMinimum {
    pub x: Vec<f64>,
    pub f: f64,
}

fn cache() -> &'static Mutex<HashMap<String, TaskMinimum>> {
    static CACHE: OnceLock<Mutex<HashMap<String, TaskMinimum>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn cache_key(task: &FamilyTask, density: usize, sign: f64) -> String {
    let params: Vec<String> = task.parameters().iter().map(|p| format!("{:x}", p.to_bits())).collect();
    let extra = match task {
        FamilyTask::Alpine { c, .. } => format!("{:x}", c.to_bits()),
        _ => String::new(),
    };
    format!("{}:{}:{}:{density}:{sign}", task.family(), params.join(","), extra)
}

/// Local polish of `x0` by box-constrained quasi-Newton with central-difference
/// gradients.
fn polish(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], bounds: &[(f64, f64)]) -> (Vec<f64>, f64) {
    let lower: Vec<f64> = bounds.iter().map(|b| b.0).collect();
    let upper: Vec<f64> = bounds.iter().map(|b| b.1).collect();
    let obj = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let v = f(x);
        let mut g = vec![0.0; x.len()];
        for d in 0..x.len() {
            let h = 1e-7 * (upper[d] - lower[d]);
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[d] = (x[d] + h).min(upper[d]);
            xm[d] = (x[d] - h).max(lower[d]);
            g[d] = (f(&xp) - f(&xm)) / (xp[d] - xm[d]);
        }
        Ok((v, g))
    };
    let opts = LbfgsbOptions { max_iter: 500, pgtol: 1e-10, ..Default::default() };
    match minimize_box(obj, x0, &lower, &upper, &opts) {
        Ok(m) if m.value <= f(x0) => (m.x, m.value),
        _ => (x0.to_vec(), f(x0)),
    }
}

fn minimize(task: &FamilyTask, density: usize, sign: f64) -> Result<TaskMinimum> {
    let key = cache_key(task, density, sign);
    if let Some(m) = cache().lock().expect("minimum cache poisoned").get(&key) {
        return Ok(m.clone());
    }
    let bounds = task.bounds();
    let dim = bounds.len();
    let f = |x: &[f64]| sign * task.value(x);
    let result = if dim <= 3 {
        if density < 2 {
            return input_err("grid density must be at least 2 points per dimension");
        }
        let requested = (density as u64).checked_pow(dim as u32).unwrap_or(u64::MAX);
        if requested > GRID_BUDGET {
            return Err(Error::BudgetExceeded {
                requested,
                limit: GRID_BUDGET,
            });
        }
        let mut best = (vec![0.0; dim], f64::INFINITY);
        let mut idx = vec![0usize; dim];
        let mut x = vec![0.0; dim];
        for _ in 0..requested {
            for d in 0..dim {
                let (lo, hi) = bounds[d];
                x[d] = lo + (hi - lo) * idx[d] as f64 / (density - 1) as f64;
            }
            let v = f(&x);
            if v < best.1 {
                best = (x.clone(), v);
            }
            for d in 0..dim {
                idx[d] += 1;
                if idx[d] < density {
                    break;
                }
                idx[d] = 0;
            }
        }
        polish(&f, &best.0, &bounds)
    } else {
        // fixed stream: the certificate must not depend on caller RNG state
        let mut rng = ChaCha8Rng::seed_from_u64(0x4d1e);
        let mut best = (vec![0.0; dim], f64::INFINITY);
        for _ in 0..100 {
            let x0 = sample_uniform(&bounds, &mut rng);
            let (x, v) = polish(&f, &x0, &bounds);
            if v < best.1 {
                best = (x, v);
            }
        }
        best
    };
    let m = TaskMinimum {
        x: result.0,
        f: sign * result.1,
    };
    cache().lock().expect("minimum cache poisoned").insert(key, m.clone());
    Ok(m)
}

/// Certified minimum: a full grid of `grid_density` points per dimension
/// (≤ [`GRID_BUDGET`] evaluations) polished locally for `D ≤ 3`; 100-start local
/// descent for higher dimensions. Results are cached per task.
pub fn true_minimum(task: &FamilyTask, grid_density: usize) -> Result<TaskMinimum> {
    minimize(task, grid_density, 1.0)
}

/// Maximum of the task, certified the same way as [`true_minimum`].
pub fn true_maximum(task: &FamilyTask, grid_density: usize) -> Result<TaskMinimum> {
    minimize(task, grid_density, -1.0)
}

/// Default grid density for a dimension that stays within the budget.
pub fn default_grid_density(dim: usize) -> usize {
    match dim {
        1 => 20_001,
        2 => 1_001,
        3 => 201,
        _ => 2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hartmann_matrices_checksum() {
        let flat3: Vec<f64> = HARTMANN3_A.iter().flatten().copied().collect();
        let p3: Vec<f64> = HARTMANN3_P.iter().flatten().map(|v| (v * 1e4).round()).collect();
        let flat6: Vec<f64> = HARTMANN6_A.iter().flatten().copied().collect();
        let p6: Vec<f64> = HARTMANN6_P.iter().flatten().map(|v| (v * 1e4).round()).collect();
        let sum = |v: &[f64]| v.iter().sum::<f64>();
        let weighted = |v: &[f64]| v.iter().enumerate().map(|(i, x)| (i + 1) as f64 * x).sum::<f64>();
        assert!((sum(&flat3) - 176.2).abs() < 1e-9);
        assert!((weighted(&flat3) - 1275.4).abs() < 1e-9);
        assert_eq!(sum(&p3), 54410.0);
        assert_eq!(weighted(&p3), 399934.0);
        assert!((sum(&flat6) - 184.7).abs() < 1e-9);
        assert!((weighted(&flat6) - 2376.7).abs() < 1e-9);
        assert_eq!(sum(&p6), 101095.0);
        assert_eq!(weighted(&p6), 1309783.0);
    }

    #[test]
    fn forrester_at_origin() {
        let v = Family::Forrester.canonical().evaluate(&[0.0]).unwrap();
        assert!((v - 4.0 * (-4.0f64).sin()).abs() < 1e-12);
        assert!((v - 3.0272).abs() < 1e-4);
    }

    #[test]
    fn alpine_vanishes_at_origin() {
        for k in 0..12 {
            let t = FamilyTask::Alpine { s: k as f64 * 0.37, c: ALPINE_SLOPE };
            assert_eq!(t.evaluate(&[0.0]).unwrap(), 0.0);
        }
    }

    #[test]
    fn hartmann_is_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for fam in [Family::Hartmann3, Family::Hartmann6] {
            let t = fam.sample_task(&mut rng);
            for _ in 0..500 {
                let x = sample_uniform(&t.bounds(), &mut rng);
                assert!(t.evaluate(&x).unwrap() < 0.0);
            }
        }
    }

    #[test]
    fn out_of_box_rejected() {
        assert!(Family::Forrester.canonical().evaluate(&[1.5]).is_err());
        assert!(Family::Branin.canonical().evaluate(&[0.0]).is_err());
    }

    #[test]
    fn forrester_draws_cover_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a: Vec<f64> = (0..10_000)
            .map(|_| match Family::Forrester.sample_task(&mut rng) {
                FamilyTask::Forrester { a, .. } => a,
                _ => unreachable!(),
            })
            .collect();
        let lo = a.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(lo >= 0.2 && hi <= 3.0);
        assert!((hi - lo) / 2.8 >= 0.95);
    }

    #[test]
    fn sampling_is_reproducible() {
        for fam in Family::ALL {
            let a = fam.sample_task(&mut ChaCha8Rng::seed_from_u64(9));
            let b = fam.sample_task(&mut ChaCha8Rng::seed_from_u64(9));
            assert_eq!(a, b);
        }
    }

    #[test]
    fn alpine_fixed_shifts() {
        let s: Vec<f64> = alpine_fixed_sources().iter().map(|t| t.parameters()[0]).collect();
        for (k, v) in s.iter().enumerate() {
            assert!((v - (k + 1) as f64 * PI / 12.0).abs() < 1e-15);
        }
    }

    #[test]
    fn source_data_noise_level() {
        let t = Family::Branin.canonical();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(generate_source_data(&t, 0, 1.0, 0, &mut rng).unwrap().is_empty());
        let exact = generate_source_data(&t, 50, 0.0, 0, &mut rng).unwrap();
        assert_eq!(exact.observations(), &t.evaluate_rows(exact.inputs()).unwrap());
        let d = generate_source_data(&t, 10_000, 0.5, 0, &mut rng).unwrap();
        let r = d.observations() - t.evaluate_rows(d.inputs()).unwrap();
        let m = r.mean();
        let sd = (r.map(|v| (v - m).powi(2)).sum() / r.len() as f64).sqrt();
        assert!((sd - 0.5).abs() < 0.025);
    }

    #[test]
    fn branin_canonical_minimum() {
        let m = true_minimum(&Family::Branin.canonical(), 1001).unwrap();
        assert!((m.f - 0.397887).abs() < 1e-5, "{m:?}");
    }

    #[test]
    fn alpine_minimum_matches_dense_grid() {
        let t = Family::Alpine.canonical();
        let m = true_minimum(&t, 20_001).unwrap();
        let grid = (0..=200_000).map(|i| t.value(&[-10.0 + 1e-4 * i as f64])).fold(f64::INFINITY, f64::min);
        assert!(m.f <= grid + 1e-12 && m.f > grid - 1e-6);
    }

    #[test]
    fn minimum_bounds_random_probes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for fam in Family::ALL {
            let t = fam.sample_task(&mut rng);
            let m = true_minimum(&t, default_grid_density(fam.dim())).unwrap();
            for _ in 0..10_000 {
                let x = sample_uniform(&t.bounds(), &mut rng);
                assert!(m.f <= t.value(&x) + 1e-12, "{fam}");
            }
        }
    }

    #[test]
    fn grid_budget_enforced() {
        match true_minimum(&Family::Hartmann3.canonical(), 1000) {
            Err(Error::BudgetExceeded { requested, limit }) => {
                assert_eq!(requested, 1_000_000_000);
                assert_eq!(limit, GRID_BUDGET);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn constant_task_minimum() {
        // a = b = c = 0 makes Forrester identically zero
        let t = FamilyTask::Forrester { a: 0.0, b: 0.0, c: 0.0 };
        assert_eq!(true_minimum(&t, 11).unwrap().f, 0.0);
    }

    #[test]
    fn hartmann6_canonical_minimum() {
        let m = true_minimum(&Family::Hartmann6.canonical(), 2).unwrap();
        assert!((m.f + 3.32237).abs() < 1e-4, "{m:?}");
    }

    #[test]
    fn task_descriptor_round_trip() {
        let t = Family::Branin.sample_task(&mut ChaCha8Rng::seed_from_u64(0));
        let s = serde_json::to_string(&t).unwrap();
        assert!(s.contains("\"family\":\"branin\""));
        assert_eq!(serde_json::from_str::<FamilyTask>(&s).unwrap(), t);
        let a: FamilyTask = serde_json::from_str(r#"{"family":"alpine","s":0.5}"#).unwrap();
        assert_eq!(a, FamilyTask::Alpine { s: 0.5, c: ALPINE_SLOPE });
    }
}
