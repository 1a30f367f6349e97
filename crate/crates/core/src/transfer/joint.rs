//! Joint multi-task GPs over the stacked data of all tasks with kernel
//! `k((x, i), (x', j)) = Σ_ν W_ν[i, j] k_ν(x, x') + δ σ_i²`.
//!
//! Tasks are indexed `0..T` with sources first and the target last. Unconstrained
//! parameter layout: one `[signal, ℓ_1..ℓ_D]` group per kernel, then one noise
//! per task, then the coregionalization parameters of the kind.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{normalize_targets, Normalization, TaskDataset};
use crate::error::{input_err, Result};
use crate::gp::{GaussianPrediction, MarginalPrediction};
use crate::hyperopt::{multi_start, OptimizeOptions};
use crate::kernel::{raw_lower_bound, raw_upper_bound, se_ard, se_ard_sym, sigmoid, softplus, softplus_inv};
use crate::linalg::{row_dot, symmetrize, CholFactor};

use super::wsgp_block::{block_inverse_wsgp, BlockInverse};

/// Box bound on the unconstrained entries of the low-rank factor `Λ`.
pub const LAMBDA_BOUND: f64 = 31.622_776_601_683_793;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Mtgp,
    Mtkgp,
    Wsgp,
    Hgp,
}

/// Sizes that fix the unconstrained parameter layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointLayout {
    pub kind: JointKind,
    pub n_tasks: usize,
    pub dim: usize,
}

impl JointLayout {
    pub fn new(kind: JointKind, n_tasks: usize, dim: usize) -> Result<Self> {
        if n_tasks < 2 {
            return input_err("joint models need at least one source and a target");
        }
        if dim == 0 {
            return input_err("input dimension must be positive");
        }
        Ok(Self { kind, n_tasks, dim })
    }

    pub fn n_kernels(&self) -> usize {
        match self.kind {
            JointKind::Mtkgp => 1,
            _ => self.n_tasks,
        }
    }

    /// Rank of `Λ` in `W = ΛΛᵀ + diag(κ)`.
    pub fn rank(&self) -> usize {
        self.n_tasks.min(2)
    }

    fn noise_offset(&self) -> usize {
        self.n_kernels() * (1 + self.dim)
    }

    fn coreg_offset(&self) -> usize {
        self.noise_offset() + self.n_tasks
    }

    fn coreg_per_kernel(&self) -> usize {
        self.n_tasks * self.rank() + self.n_tasks
    }

    pub fn n_raw(&self) -> usize {
        self.coreg_offset()
            + match self.kind {
                JointKind::Mtgp | JointKind::Mtkgp => self.n_kernels() * self.coreg_per_kernel(),
                JointKind::Wsgp => self.n_tasks - 1,
                JointKind::Hgp => 0,
            }
    }

    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n_raw();
        let mut lower = vec![raw_lower_bound(); n];
        let mut upper = vec![raw_upper_bound(); n];
        if matches!(self.kind, JointKind::Mtgp | JointKind::Mtkgp) {
            let r = self.rank();
            for nu in 0..self.n_kernels() {
                let base = self.coreg_offset() + nu * self.coreg_per_kernel();
                for i in base..base + self.n_tasks * r {
                    lower[i] = -LAMBDA_BOUND;
                    upper[i] = LAMBDA_BOUND;
                }
            }
        }
        (lower, upper)
    }
}

/// Coregionalization matrices of a joint model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoregionalizationSpec {
    pub kind: JointKind,
    /// One `T × T` matrix per kernel.
    pub matrices: Vec<DMatrix<f64>>,
    /// WSGP source weights `w_ν ≥ 0`; empty for other kinds.
    pub source_weights: Vec<f64>,
}

impl CoregionalizationSpec {
    pub fn n_tasks(&self) -> usize {
        self.matrices.first().map_or(0, |m| m.nrows())
    }

    /// The fixed hierarchical pattern: `W_ν[i, j] = 1` iff `i, j ≥ ν`.
    pub fn hierarchical(n_tasks: usize) -> Self {
        let matrices = (0..n_tasks)
            .map(|nu| DMatrix::from_fn(n_tasks, n_tasks, |i, j| if i >= nu && j >= nu { 1.0 } else { 0.0 }))
            .collect();
        Self {
            kind: JointKind::Hgp,
            matrices,
            source_weights: Vec::new(),
        }
    }

    /// `W_ν = e_ν e_νᵀ + w_ν (e_ν + e_T)(e_ν + e_T)ᵀ` for sources, `e_T e_Tᵀ`
    /// for the target kernel.
    pub fn weighted_source(weights: &[f64]) -> Self {
        let t = weights.len() + 1;
        let mut matrices = Vec::with_capacity(t);
        for (nu, &w) in weights.iter().enumerate() {
            let mut m = DMatrix::zeros(t, t);
            m[(nu, nu)] = 1.0 + w;
            m[(nu, t - 1)] = w;
            m[(t - 1, nu)] = w;
            m[(t - 1, t - 1)] = w;
            matrices.push(m);
        }
        let mut last = DMatrix::zeros(t, t);
        last[(t - 1, t - 1)] = 1.0;
        matrices.push(last);
        Self {
            kind: JointKind::Wsgp,
            matrices,
            source_weights: weights.to_vec(),
        }
    }
}

/// Constrained view of one SE component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentKernel {
    pub signal_variance: f64,
    pub lengthscales: Vec<f64>,
}

/// The stacked multi-task kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointKernel {
    pub coregionalization: CoregionalizationSpec,
    pub kernels: Vec<ComponentKernel>,
    pub noise_variances: Vec<f64>,
}

/// Assembles the stacked kernel. MTKGP takes a single shared component.
pub fn build_joint_kernel(
    spec: CoregionalizationSpec,
    kernels: Vec<ComponentKernel>,
    noise_variances: Vec<f64>,
) -> Result<JointKernel> {
    let t = spec.n_tasks();
    if spec.matrices.len() != kernels.len() {
        return input_err(format!("{} coregionalization matrices for {} kernels", spec.matrices.len(), kernels.len()));
    }
    if spec.kind == JointKind::Mtkgp && kernels.len() != 1 {
        return input_err("MTKGP shares a single kernel across tasks");
    }
    if noise_variances.len() != t || spec.matrices.iter().any(|m| m.shape() != (t, t)) {
        return input_err("coregionalization and noise sizes disagree with the task count");
    }
    let dim = kernels.first().map_or(0, |k| k.lengthscales.len());
    if kernels.iter().any(|k| k.lengthscales.len() != dim) {
        return input_err("component kernels have different input dimensions");
    }
    Ok(JointKernel {
        coregionalization: spec,
        kernels,
        noise_variances,
    })
}

impl JointKernel {
    pub fn n_tasks(&self) -> usize {
        self.noise_variances.len()
    }

    pub fn dim(&self) -> usize {
        self.kernels[0].lengthscales.len()
    }

    /// `k((x, i), (x', j))`; the noise term applies when `i = j` and the inputs
    /// are bitwise equal.
    pub fn eval(&self, x: &[f64], i: usize, xp: &[f64], j: usize) -> Result<f64> {
        let t = self.n_tasks();
        if i >= t || j >= t {
            return input_err(format!("task index out of range: ({i}, {j}) with {t} tasks"));
        }
        if x.len() != self.dim() || xp.len() != self.dim() {
            return input_err("input dimension mismatch");
        }
        let a = DMatrix::from_row_slice(1, x.len(), x);
        let b = DMatrix::from_row_slice(1, xp.len(), xp);
        let mut v = 0.0;
        for (w, k) in self.coregionalization.matrices.iter().zip(&self.kernels) {
            v += w[(i, j)] * se_ard(k.signal_variance, &k.lengthscales, &a, &b)[(0, 0)];
        }
        if i == j && x.iter().zip(xp).all(|(p, q)| p.to_bits() == q.to_bits()) {
            v += self.noise_variances[i];
        }
        Ok(v)
    }

    /// Noise-free cross covariance between task-labelled point sets.
    pub fn cross(&self, xa: &DMatrix<f64>, ta: &[usize], xb: &DMatrix<f64>, tb: &[usize]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(xa.nrows(), xb.nrows());
        for (w, k) in self.coregionalization.matrices.iter().zip(&self.kernels) {
            let r = se_ard(k.signal_variance, &k.lengthscales, xa, xb);
            for j in 0..xb.nrows() {
                for i in 0..xa.nrows() {
                    out[(i, j)] += w[(ta[i], tb[j])] * r[(i, j)];
                }
            }
        }
        out
    }

    /// Covariance of the observations: noise added once per observation.
    pub fn train_matrix(&self, x: &DMatrix<f64>, tasks: &[usize]) -> DMatrix<f64> {
        let mut k = self.cross(x, tasks, x, tasks);
        symmetrize(&mut k);
        for (i, &t) in tasks.iter().enumerate() {
            k[(i, i)] += self.noise_variances[t];
        }
        k
    }
}

/// Unconstrained joint parameters. Serializes in constrained form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "ConstrainedJointParams", try_from = "ConstrainedJointParams")]
pub struct JointParams {
    pub layout: JointLayout,
    pub raw: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ConstrainedJointParams {
    layout: JointLayout,
    kernels: Vec<ComponentKernel>,
    noise_variances: Vec<f64>,
    /// Row-major `T × rank` factor per kernel (MTGP, MTKGP).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    lambda: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    kappa: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    source_weights: Vec<f64>,
}

impl From<JointParams> for ConstrainedJointParams {
    fn from(p: JointParams) -> Self {
        let k = p.kernel();
        let (mut lambda, mut kappa) = (Vec::new(), Vec::new());
        if matches!(p.layout.kind, JointKind::Mtgp | JointKind::Mtkgp) {
            for nu in 0..p.layout.n_kernels() {
                let (l, kp) = p.lambda_kappa(nu);
                lambda.push(l.transpose().as_slice().to_vec());
                kappa.push(kp);
            }
        }
        Self {
            layout: p.layout,
            kernels: k.kernels,
            noise_variances: k.noise_variances,
            lambda,
            kappa,
            source_weights: k.coregionalization.source_weights,
        }
    }
}

impl TryFrom<ConstrainedJointParams> for JointParams {
    type Error = crate::Error;

    fn try_from(c: ConstrainedJointParams) -> Result<Self> {
        let mut coreg = Vec::new();
        for (l, k) in c.lambda.iter().zip(&c.kappa) {
            coreg.extend_from_slice(l);
            coreg.extend(k.iter().map(|v| softplus_inv(*v)));
        }
        coreg.extend(c.source_weights.iter().map(|v| softplus_inv(*v)));
        JointParams::from_parts(c.layout, &c.kernels, &c.noise_variances, &coreg)
    }
}

impl JointParams {
    pub fn new(layout: JointLayout, raw: Vec<f64>) -> Result<Self> {
        if raw.len() != layout.n_raw() {
            return input_err(format!("expected {} raw parameters, got {}", layout.n_raw(), raw.len()));
        }
        Ok(Self { layout, raw })
    }

    fn component_raw(&self, nu: usize) -> &[f64] {
        let b = 1 + self.layout.dim;
        &self.raw[nu * b..(nu + 1) * b]
    }

    fn lambda_kappa(&self, nu: usize) -> (DMatrix<f64>, Vec<f64>) {
        let t = self.layout.n_tasks;
        let r = self.layout.rank();
        let base = self.layout.coreg_offset() + nu * self.layout.coreg_per_kernel();
        let lambda = DMatrix::from_row_slice(t, r, &self.raw[base..base + t * r]);
        let kappa = self.raw[base + t * r..base + t * r + t].iter().map(|v| softplus(*v)).collect();
        (lambda, kappa)
    }

    pub fn coregionalization(&self) -> CoregionalizationSpec {
        let t = self.layout.n_tasks;
        match self.layout.kind {
            JointKind::Hgp => CoregionalizationSpec::hierarchical(t),
            JointKind::Wsgp => {
                let off = self.layout.coreg_offset();
                let w: Vec<f64> = self.raw[off..off + t - 1].iter().map(|v| softplus(*v)).collect();
                CoregionalizationSpec::weighted_source(&w)
            }
            kind @ (JointKind::Mtgp | JointKind::Mtkgp) => {
                let matrices = (0..self.layout.n_kernels())
                    .map(|nu| {
                        let (l, k) = self.lambda_kappa(nu);
                        &l * l.transpose() + DMatrix::from_diagonal(&DVector::from_vec(k))
                    })
                    .collect();
                CoregionalizationSpec {
                    kind,
                    matrices,
                    source_weights: Vec::new(),
                }
            }
        }
    }

    pub fn kernel(&self) -> JointKernel {
        let kernels = (0..self.layout.n_kernels())
            .map(|nu| {
                let r = self.component_raw(nu);
                ComponentKernel {
                    signal_variance: softplus(r[0]),
                    lengthscales: r[1..].iter().map(|v| softplus(*v)).collect(),
                }
            })
            .collect();
        let off = self.layout.noise_offset();
        let noise_variances = self.raw[off..off + self.layout.n_tasks].iter().map(|v| softplus(*v)).collect();
        JointKernel {
            coregionalization: self.coregionalization(),
            kernels,
            noise_variances,
        }
    }

    /// Inverse of [`JointParams::kernel`] for the kernel components and noises;
    /// coregionalization parameters are taken from `coreg_raw`.
    pub fn from_parts(layout: JointLayout, kernels: &[ComponentKernel], noise_variances: &[f64], coreg_raw: &[f64]) -> Result<Self> {
        if kernels.len() != layout.n_kernels() || noise_variances.len() != layout.n_tasks {
            return input_err("component or noise count does not match the layout");
        }
        let mut raw = Vec::with_capacity(layout.n_raw());
        for k in kernels {
            if k.lengthscales.len() != layout.dim {
                return input_err("component kernel dimension does not match the layout");
            }
            raw.push(softplus_inv(k.signal_variance));
            raw.extend(k.lengthscales.iter().map(|l| softplus_inv(*l)));
        }
        raw.extend(noise_variances.iter().map(|n| softplus_inv(*n)));
        raw.extend_from_slice(coreg_raw);
        Self::new(layout, raw)
    }
}

/// Task-ordered concatenation of all observations.
#[derive(Clone, Debug)]
pub struct StackedData {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub tasks: Vec<usize>,
    /// Row count per task.
    pub sizes: Vec<usize>,
}

impl StackedData {
    /// Stacks `sources` then `target`; task indices follow that order.
    pub fn new(sources: &[TaskDataset], target: &TaskDataset) -> Result<Self> {
        let dim = target.dim();
        if sources.iter().any(|s| s.dim() != dim) {
            return input_err("all tasks must share the input dimension");
        }
        let all: Vec<&TaskDataset> = sources.iter().chain(std::iter::once(target)).collect();
        let n: usize = all.iter().map(|d| d.len()).sum();
        let mut x = DMatrix::zeros(n, dim);
        let mut y = DVector::zeros(n);
        let mut tasks = Vec::with_capacity(n);
        let mut sizes = Vec::with_capacity(all.len());
        let mut off = 0;
        for (t, d) in all.iter().enumerate() {
            let m = d.len();
            x.rows_mut(off, m).copy_from(d.inputs());
            y.rows_mut(off, m).copy_from(d.observations());
            tasks.extend(std::iter::repeat_n(t, m));
            sizes.push(m);
            off += m;
        }
        Ok(Self { x, y, tasks, sizes })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// How the stacked covariance is inverted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolverKind {
    Dense,
    /// Source blocks plus Schur complement; valid only for WSGP.
    Blocked,
}

#[derive(Clone, Debug)]
enum Solver {
    Dense(CholFactor),
    Blocked(BlockInverse),
}

impl Solver {
    fn factor(k: DMatrix<f64>, sizes: &[usize], kind: SolverKind) -> Result<Self> {
        match kind {
            SolverKind::Dense => Ok(Self::Dense(CholFactor::new(k)?)),
            SolverKind::Blocked => {
                let n_t = *sizes.last().expect("target block");
                let n_s = k.nrows() - n_t;
                let mut blocks = Vec::with_capacity(sizes.len() - 1);
                let mut off = 0;
                for &m in &sizes[..sizes.len() - 1] {
                    blocks.push(k.view((off, off), (m, m)).into_owned());
                    off += m;
                }
                let b = k.view((0, n_s), (n_s, n_t)).into_owned();
                let d = k.view((n_s, n_s), (n_t, n_t)).into_owned();
                Ok(Self::Blocked(block_inverse_wsgp(blocks, b, d)?))
            }
        }
    }

    fn solve(&self, r: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Self::Dense(f) => f.solve(r),
            Self::Blocked(b) => b.solve(r),
        }
    }

    fn solve_vec(&self, r: &DVector<f64>) -> DVector<f64> {
        match self {
            Self::Dense(f) => f.solve_vec(r),
            Self::Blocked(b) => b.solve_vec(r),
        }
    }

    fn log_det(&self) -> f64 {
        match self {
            Self::Dense(f) => f.log_det(),
            Self::Blocked(b) => b.log_det(),
        }
    }

    fn inverse(&self) -> DMatrix<f64> {
        match self {
            Self::Dense(f) => f.inverse(),
            Self::Blocked(b) => b.inverse(),
        }
    }
}

/// Log evidence of the stacked (normalized) observations and its gradient
/// with respect to the unconstrained parameters.
pub fn joint_log_likelihood(params: &JointParams, data: &StackedData, solver: SolverKind) -> Result<(f64, Vec<f64>)> {
    let layout = params.layout;
    let n = data.len();
    if n == 0 {
        return input_err("joint likelihood needs at least one observation");
    }
    let kernel = params.kernel();
    let coreg = &kernel.coregionalization;
    let n_k = layout.n_kernels();
    let t = layout.n_tasks;
    let d = layout.dim;
    // unit-variance correlations per component
    let corr: Vec<DMatrix<f64>> = kernel.kernels.iter().map(|k| se_ard_sym(1.0, &k.lengthscales, &data.x)).collect();
    let mut k = DMatrix::zeros(n, n);
    for nu in 0..n_k {
        let sf = kernel.kernels[nu].signal_variance;
        let w = &coreg.matrices[nu];
        for j in 0..n {
            for i in 0..n {
                k[(i, j)] += w[(data.tasks[i], data.tasks[j])] * sf * corr[nu][(i, j)];
            }
        }
    }
    for i in 0..n {
        k[(i, i)] += kernel.noise_variances[data.tasks[i]];
    }
    let f = Solver::factor(k, &data.sizes, solver)?;
    let alpha = f.solve_vec(&data.y);
    let value = -0.5 * data.y.dot(&alpha) - 0.5 * f.log_det() - 0.5 * n as f64 * (2.0 * PI).ln();

    let kinv = f.inverse();
    let inv_l3: Vec<Vec<f64>> = kernel.kernels.iter().map(|c| c.lengthscales.iter().map(|l| 1.0 / (l * l * l)).collect()).collect();
    let mut g_sf = vec![0.0; n_k];
    let mut g_ls = vec![vec![0.0; d]; n_k];
    let mut g_noise = vec![0.0; t];
    // S_ν[i, j] = Σ_{a ∈ i, b ∈ j} (ααᵀ − K⁻¹)_ab k_ν(x_a, x_b)
    let mut s_task = vec![DMatrix::<f64>::zeros(t, t); n_k];
    for b in 0..n {
        let tb = data.tasks[b];
        for a in b..n {
            let ta = data.tasks[a];
            let s = alpha[a] * alpha[b] - kinv[(a, b)];
            let wt = if a == b { 0.5 } else { 1.0 };
            if a == b {
                g_noise[ta] += 0.5 * s;
            }
            for nu in 0..n_k {
                let r = corr[nu][(a, b)];
                let kv = kernel.kernels[nu].signal_variance * r;
                let c = coreg.matrices[nu][(ta, tb)];
                g_sf[nu] += wt * s * c * r;
                if c != 0.0 && a != b {
                    for dd in 0..d {
                        let diff = data.x[(a, dd)] - data.x[(b, dd)];
                        g_ls[nu][dd] += s * c * kv * diff * diff * inv_l3[nu][dd];
                    }
                }
                if a == b {
                    s_task[nu][(ta, ta)] += s * kv;
                } else {
                    s_task[nu][(ta, tb)] += s * kv;
                    s_task[nu][(tb, ta)] += s * kv;
                }
            }
        }
    }

    let mut grad = vec![0.0; layout.n_raw()];
    for nu in 0..n_k {
        let r = params.component_raw(nu);
        let base = nu * (1 + d);
        grad[base] = g_sf[nu] * sigmoid(r[0]);
        for dd in 0..d {
            grad[base + 1 + dd] = g_ls[nu][dd] * sigmoid(r[1 + dd]);
        }
    }
    let off = layout.noise_offset();
    for i in 0..t {
        grad[off + i] = g_noise[i] * sigmoid(params.raw[off + i]);
    }
    let off = layout.coreg_offset();
    match layout.kind {
        JointKind::Hgp => {}
        JointKind::Wsgp => {
            for nu in 0..t - 1 {
                let s = &s_task[nu];
                let u = s[(nu, nu)] + 2.0 * s[(nu, t - 1)] + s[(t - 1, t - 1)];
                grad[off + nu] = 0.5 * u * sigmoid(params.raw[off + nu]);
            }
        }
        JointKind::Mtgp | JointKind::Mtkgp => {
            let rk = layout.rank();
            for nu in 0..n_k {
                let (lambda, _) = params.lambda_kappa(nu);
                let sl = &s_task[nu] * &lambda;
                let base = off + nu * layout.coreg_per_kernel();
                for i in 0..t {
                    for q in 0..rk {
                        grad[base + i * rk + q] = sl[(i, q)];
                    }
                    let kr = base + t * rk + i;
                    grad[kr] = 0.5 * s_task[nu][(i, i)] * sigmoid(params.raw[kr]);
                }
            }
        }
    }
    Ok((value, grad))
}

/// A joint model conditioned on all observations. Predictions are for the
/// target task (the last one).
#[derive(Clone, Debug)]
pub struct JointModel {
    params: JointParams,
    kernel: JointKernel,
    data: StackedData,
    norm: Normalization,
    solver: Solver,
    alpha: DVector<f64>,
    log_likelihood: f64,
}

impl JointModel {
    /// Conditions the joint GP with fixed parameters. `norm` maps observations
    /// to the scale the parameters were fitted on.
    pub fn condition(
        params: JointParams,
        sources: &[TaskDataset],
        target: &TaskDataset,
        norm: Normalization,
        solver: SolverKind,
    ) -> Result<Self> {
        if sources.len() + 1 != params.layout.n_tasks {
            return input_err(format!("{} tasks supplied, layout expects {}", sources.len() + 1, params.layout.n_tasks));
        }
        if solver == SolverKind::Blocked && params.layout.kind != JointKind::Wsgp {
            return input_err("the blocked solver requires the WSGP block structure");
        }
        let mut data = StackedData::new(sources, target)?;
        if data.x.ncols() != params.layout.dim {
            return input_err("data dimension does not match the layout");
        }
        data.y = norm.apply(&data.y);
        let kernel = params.kernel();
        let k = kernel.train_matrix(&data.x, &data.tasks);
        let solver = Solver::factor(k, &data.sizes, solver)?;
        let alpha = solver.solve_vec(&data.y);
        let n = data.len() as f64;
        let log_likelihood = -0.5 * data.y.dot(&alpha) - 0.5 * solver.log_det() - 0.5 * n * (2.0 * PI).ln();
        Ok(Self {
            params,
            kernel,
            data,
            norm,
            solver,
            alpha,
            log_likelihood,
        })
    }

    pub fn params(&self) -> &JointParams {
        &self.params
    }

    pub fn kernel(&self) -> &JointKernel {
        &self.kernel
    }

    pub fn normalization(&self) -> Normalization {
        self.norm
    }

    /// Log evidence of the normalized observations.
    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    fn target_cross(&self, xq: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<usize>)> {
        if xq.ncols() != self.params.layout.dim {
            return input_err(format!("query has {} columns, model expects {}", xq.ncols(), self.params.layout.dim));
        }
        let tq = vec![self.params.layout.n_tasks - 1; xq.nrows()];
        Ok((self.kernel.cross(xq, &tq, &self.data.x, &self.data.tasks), tq))
    }

    pub fn predict(&self, xq: &DMatrix<f64>) -> Result<GaussianPrediction> {
        let (kq, tq) = self.target_cross(xq)?;
        let s = self.norm.std;
        let mean = (&kq * &self.alpha).map(|v| self.norm.mean + s * v);
        let kqq = self.kernel.cross(xq, &tq, xq, &tq);
        let mut cov = (kqq - &kq * self.solver.solve(&kq.transpose())) * (s * s);
        symmetrize(&mut cov);
        Ok(GaussianPrediction { mean, covariance: cov })
    }

    pub fn predict_marginal(&self, xq: &DMatrix<f64>) -> Result<MarginalPrediction> {
        let (kq, _) = self.target_cross(xq)?;
        let s = self.norm.std;
        let mean = (&kq * &self.alpha).map(|v| self.norm.mean + s * v);
        let t = self.params.layout.n_tasks - 1;
        let prior: f64 = self
            .kernel
            .coregionalization
            .matrices
            .iter()
            .zip(&self.kernel.kernels)
            .map(|(w, k)| w[(t, t)] * k.signal_variance)
            .sum();
        let reduce = row_dot(&kq, &self.solver.solve(&kq.transpose()).transpose());
        let variance = reduce.map(|r| ((prior - r) * s * s).max(0.0));
        Ok(MarginalPrediction { mean, variance })
    }
}

/// Fits all joint parameters by multi-start maximum likelihood on the jointly
/// normalized observations, then conditions the model.
pub fn train_joint<R: Rng + ?Sized>(
    kind: JointKind,
    sources: &[TaskDataset],
    target: &TaskDataset,
    opts: &OptimizeOptions,
    rng: &mut R,
) -> Result<JointModel> {
    if sources.is_empty() {
        return input_err("joint models need at least one source task");
    }
    let layout = JointLayout::new(kind, sources.len() + 1, target.dim())?;
    let mut data = StackedData::new(sources, target)?;
    if data.is_empty() {
        return input_err("joint models need at least one observation");
    }
    let (z, norm) = normalize_targets(&data.y);
    data.y = z;
    let solver = if kind == JointKind::Wsgp { SolverKind::Blocked } else { SolverKind::Dense };
    let (lower, upper) = layout.bounds();
    let objective = |raw: &[f64]| joint_log_likelihood(&JointParams::new(layout, raw.to_vec())?, &data, solver);
    let best = multi_start(objective, &lower, &upper, opts.n_restarts, &opts.lbfgs, rng)?;
    JointModel::condition(JointParams::new(layout, best.best)?, sources, target, norm, solver)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{ConditionedGP, PriorMean};
    use crate::kernel::KernelHyperparams;
    use crate::linalg::is_psd;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn task(xs: &[f64], f: impl Fn(f64) -> f64, id: usize) -> TaskDataset {
        let rows: Vec<Vec<f64>> = xs.iter().map(|x| vec![*x]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| f(*x)).collect();
        TaskDataset::from_rows(&rows, &ys, id).unwrap()
    }

    fn random_params(kind: JointKind, t: usize, seed: u64) -> JointParams {
        let layout = JointLayout::new(kind, t, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = (0..layout.n_raw()).map(|_| rng.random_range(-1.0..1.0)).collect();
        JointParams::new(layout, raw).unwrap()
    }

    const KINDS: [JointKind; 4] = [JointKind::Mtgp, JointKind::Mtkgp, JointKind::Wsgp, JointKind::Hgp];

    #[test]
    fn hgp_single_source_cross_term_is_source_kernel() {
        let spec = CoregionalizationSpec::hierarchical(2);
        let ks = ComponentKernel { signal_variance: 1.3, lengthscales: vec![0.7] };
        let kt = ComponentKernel { signal_variance: 0.4, lengthscales: vec![0.2] };
        let jk = build_joint_kernel(spec, vec![ks, kt], vec![0.1, 0.2]).unwrap();
        let v = jk.eval(&[0.3], 0, &[1.0], 1).unwrap();
        assert!((v - 1.3 * (-0.5f64).exp()).abs() < 1e-14);
        let same = jk.eval(&[0.3], 1, &[0.3], 1).unwrap();
        assert!((same - (1.3 + 0.4 + 0.2)).abs() < 1e-14);
        assert!(jk.eval(&[0.3], 2, &[0.3], 0).is_err());
    }

    #[test]
    fn wsgp_zero_weight_has_no_cross_terms() {
        let jk = build_joint_kernel(
            CoregionalizationSpec::weighted_source(&[0.0]),
            vec![
                ComponentKernel { signal_variance: 1.0, lengthscales: vec![0.5] },
                ComponentKernel { signal_variance: 2.0, lengthscales: vec![0.5] },
            ],
            vec![0.0, 0.0],
        )
        .unwrap();
        for x in [-1.0, 0.0, 0.4] {
            assert_eq!(jk.eval(&[x], 0, &[0.1], 1).unwrap(), 0.0);
        }
    }

    #[test]
    fn coregionalization_matrices_are_psd() {
        for kind in KINDS {
            for seed in 0..5 {
                let p = random_params(kind, 3, seed);
                for w in p.coregionalization().matrices {
                    assert!(is_psd(&w, 1e-10), "{kind:?}");
                }
            }
        }
    }

    #[test]
    fn stacked_covariance_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = DMatrix::from_fn(24, 1, |_, _| rng.random_range(-2.0..2.0));
        let tasks: Vec<usize> = (0..24).map(|i| i % 3).collect();
        for kind in KINDS {
            let jk = random_params(kind, 3, 4).kernel();
            let k = jk.cross(&x, &tasks, &x, &tasks);
            assert!(is_psd(&k, 1e-8), "{kind:?}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let s0 = task(&[-1.0, -0.3, 0.4, 1.2], |x| x.sin(), 0);
        let s1 = task(&[-0.8, 0.0, 0.9], |x| x.sin() + 0.5 * x, 1);
        let t = task(&[-0.2, 0.6], |x| x.cos(), 2);
        let data = StackedData::new(&[s0, s1], &t).unwrap();
        for kind in KINDS {
            let solver = if kind == JointKind::Wsgp { SolverKind::Blocked } else { SolverKind::Dense };
            let p = random_params(kind, 3, 21);
            let (_, g) = joint_log_likelihood(&p, &data, solver).unwrap();
            for i in 0..p.raw.len() {
                let h = 1e-6;
                let mut up = p.raw.clone();
                up[i] += h;
                let mut dn = p.raw.clone();
                dn[i] -= h;
                let fu = joint_log_likelihood(&JointParams::new(p.layout, up).unwrap(), &data, solver).unwrap().0;
                let fd = joint_log_likelihood(&JointParams::new(p.layout, dn).unwrap(), &data, solver).unwrap().0;
                let num = (fu - fd) / (2.0 * h);
                assert!((num - g[i]).abs() < 1e-5 * num.abs().max(1.0), "{kind:?} param {i}: fd {num} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn blocked_and_dense_predictions_agree() {
        let s0 = task(&[-1.0, -0.3, 0.4, 1.2, 1.9], |x| x.sin(), 0);
        let s1 = task(&[-0.8, 0.0, 0.9, 1.4, 2.0], |x| x.sin() + 0.5 * x, 1);
        let t = task(&[-0.2, 0.6, 1.1], |x| x.cos(), 2);
        let p = random_params(JointKind::Wsgp, 3, 2);
        let norm = Normalization { mean: 0.3, std: 1.7 };
        let dense = JointModel::condition(p.clone(), &[s0.clone(), s1.clone()], &t, norm, SolverKind::Dense).unwrap();
        let blocked = JointModel::condition(p, &[s0, s1], &t, norm, SolverKind::Blocked).unwrap();
        let xq = DMatrix::from_column_slice(4, 1, &[-1.5, 0.1, 0.7, 2.5]);
        let a = dense.predict(&xq).unwrap();
        let b = blocked.predict(&xq).unwrap();
        assert!((a.mean - b.mean).abs().max() < 1e-8);
        assert!((a.covariance - b.covariance).abs().max() < 1e-8);
        assert!((dense.log_likelihood() - blocked.log_likelihood()).abs() < 1e-8);
    }

    #[test]
    fn wsgp_zero_weight_equals_target_only_gp() {
        let s0 = task(&[-1.0, -0.3, 0.4, 1.2], |x| 3.0 * x.sin(), 0);
        let t = task(&[-0.2, 0.6, 1.1], |x| x.cos(), 1);
        let layout = JointLayout::new(JointKind::Wsgp, 2, 1).unwrap();
        let comps = [
            ComponentKernel { signal_variance: 1.1, lengthscales: vec![0.5] },
            ComponentKernel { signal_variance: 0.7, lengthscales: vec![0.8] },
        ];
        // softplus(-800) underflows to exactly zero
        let p = JointParams::from_parts(layout, &comps, &[0.05, 0.02], &[-800.0]).unwrap();
        let model = JointModel::condition(p, &[s0], &t, Normalization::IDENTITY, SolverKind::Blocked).unwrap();
        let hp = KernelHyperparams::new(0.7, &[0.8], 0.02).unwrap();
        let gp = ConditionedGP::condition(&hp, &t, PriorMean::Zero).unwrap();
        let xq = DMatrix::from_column_slice(3, 1, &[-1.0, 0.3, 2.0]);
        let a = model.predict(&xq).unwrap();
        let b = gp.predict(&xq).unwrap();
        assert!((a.mean - b.mean).abs().max() < 1e-10);
        assert!((a.covariance - b.covariance).abs().max() < 1e-10);
    }

    #[test]
    fn mtkgp_identity_coregionalization_is_independent() {
        let s0 = task(&[-1.0, 0.4, 1.2], |x| 3.0 * x.sin(), 0);
        let t = task(&[-0.2, 0.6], |x| x.cos(), 1);
        let layout = JointLayout::new(JointKind::Mtkgp, 2, 1).unwrap();
        let comps = [ComponentKernel { signal_variance: 1.0, lengthscales: vec![0.6] }];
        // Λ = 0, κ = softplus(softplus⁻¹(1)) = 1
        let one = softplus_inv(1.0);
        let p = JointParams::from_parts(layout, &comps, &[0.01, 0.03], &[0.0, 0.0, 0.0, 0.0, one, one]).unwrap();
        let model = JointModel::condition(p, &[s0], &t, Normalization::IDENTITY, SolverKind::Dense).unwrap();
        let gp = ConditionedGP::condition(&KernelHyperparams::new(1.0, &[0.6], 0.03).unwrap(), &t, PriorMean::Zero).unwrap();
        let xq = DMatrix::from_column_slice(2, 1, &[0.0, 1.5]);
        let a = model.predict(&xq).unwrap();
        let b = gp.predict(&xq).unwrap();
        assert!((a.mean - b.mean).abs().max() < 1e-10);
        assert!((a.covariance - b.covariance).abs().max() < 1e-10);
    }

    #[test]
    fn marginal_matches_full() {
        let s0 = task(&[-1.0, -0.3, 0.4, 1.2], |x| x.sin(), 0);
        let t = task(&[-0.2, 0.6], |x| x.cos(), 1);
        for kind in KINDS {
            let p = random_params(kind, 2, 8);
            let solver = if kind == JointKind::Wsgp { SolverKind::Blocked } else { SolverKind::Dense };
            let m = JointModel::condition(p, &[s0.clone()], &t, Normalization { mean: 1.0, std: 2.0 }, solver).unwrap();
            let xq = DMatrix::from_column_slice(3, 1, &[-0.5, 0.2, 3.0]);
            let full = m.predict(&xq).unwrap();
            let marg = m.predict_marginal(&xq).unwrap();
            assert!((&full.mean - &marg.mean).abs().max() < 1e-12);
            assert!((full.variances() - marg.variance).abs().max() < 1e-10);
        }
    }

    #[test]
    fn training_is_deterministic_and_handles_empty_target() {
        let s0 = task(&[-1.0, -0.3, 0.4, 1.2, 1.6], |x| x.sin(), 0);
        let empty = TaskDataset::empty(1, 1);
        let opts = OptimizeOptions { n_restarts: 2, ..Default::default() };
        for kind in KINDS {
            let a = train_joint(kind, &[s0.clone()], &empty, &opts, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
            let b = train_joint(kind, &[s0.clone()], &empty, &opts, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
            assert_eq!(a.params(), b.params());
            let p = a.predict(&DMatrix::from_column_slice(1, 1, &[0.0])).unwrap();
            assert!(p.mean[0].is_finite() && p.covariance[(0, 0)] >= 0.0);
        }
    }

    #[test]
    fn params_round_trip_through_constrained_form() {
        for kind in KINDS {
            let p = random_params(kind, 3, 12);
            let json = serde_json::to_string(&p).unwrap();
            let q: JointParams = serde_json::from_str(&json).unwrap();
            for (a, b) in p.raw.iter().zip(&q.raw) {
                assert!((a - b).abs() < 1e-9, "{kind:?}: {a} vs {b}");
            }
        }
    }
}
