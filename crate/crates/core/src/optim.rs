//! Box-constrained limited-memory quasi-Newton minimization (projected
//! L-BFGS with an Armijo backtracking search along the projection path).

use std::collections::VecDeque;

use crate::error::{input_err, Error, Result};

#[derive(Clone, Debug)]
pub struct LbfgsbOptions {
    /// Number of correction pairs kept.
    pub memory: usize,
    pub max_iter: usize,
    /// Stop when the projected gradient's max-norm falls below this.
    pub pgtol: f64,
    /// Stop when the relative decrease of the objective falls below this.
    pub ftol: f64,
}

impl Default for LbfgsbOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iter: 200,
            pgtol: 1e-5,
            ftol: 1e7 * f64::EPSILON,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BoxMinimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, l), u) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(*l, *u);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f` over the box `[lower, upper]`, starting from `x0` (projected
/// into the box). `f` returns the value and gradient; an `Err` from `f` during
/// the line search is treated as an infinite value. The returned point is never
/// worse than the projected start.
pub fn minimize_box<F>(mut f: F, x0: &[f64], lower: &[f64], upper: &[f64], opts: &LbfgsbOptions) -> Result<BoxMinimum>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = x0.len();
    if lower.len() != n || upper.len() != n {
        return input_err("bound vectors must match the parameter count");
    }
    if lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
        return input_err("lower bound exceeds upper bound");
    }
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let (mut fx, mut g) = f(&x)?;
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("objective not finite at the starting point".into()));
    }
    let mut evaluations = 1;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        let pg_norm = x
            .iter()
            .zip(&g)
            .enumerate()
            .map(|(i, (xi, gi))| ((xi - gi).clamp(lower[i], upper[i]) - xi).abs())
            .fold(0.0, f64::max);
        if pg_norm < opts.pgtol {
            converged = true;
            break;
        }
        iterations += 1;

        let free: Vec<bool> = (0..n)
            .map(|i| !((x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0)))
            .collect();
        let masked = |v: &mut Vec<f64>| {
            for (vi, fi) in v.iter_mut().zip(&free) {
                if !fi {
                    *vi = 0.0;
                }
            }
        };

        // two-loop recursion on the free subspace
        let mut q = g.clone();
        masked(&mut q);
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += si * (a - b);
            }
        }
        let mut d: Vec<f64> = q.iter().map(|v| -v).collect();
        masked(&mut d);
        if dot(&d, &g) >= 0.0 {
            history.clear();
            d = g.iter().map(|v| -v).collect();
            masked(&mut d);
        }

        let dmax = d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if dmax == 0.0 {
            converged = true;
            break;
        }
        let mut t = if history.is_empty() { (1.0 / dmax).min(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..40 {
            let mut xn: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + t * di).collect();
            project(&mut xn, lower, upper);
            let step: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            if step.iter().all(|s| *s == 0.0) {
                break;
            }
            let decrease = dot(&g, &step);
            evaluations += 1;
            if let Ok((fnew, gnew)) = f(&xn) {
                if fnew.is_finite() && gnew.iter().all(|v| v.is_finite()) && fnew <= fx + 1e-4 * decrease {
                    accepted = Some((xn, fnew, gnew, step));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((xn, fnew, gnew, s)) = accepted else {
            break;
        };
        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * dot(&y, &y) {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        let rel = (fx - fnew) / fx.abs().max(fnew.abs()).max(1.0);
        x = xn;
        fx = fnew;
        g = gnew;
        if rel <= opts.ftol {
            converged = true;
            break;
        }
    }

    Ok(BoxMinimum {
        x,
        value: fx,
        iterations,
        evaluations,
        converged,
    })
}
