//! Alternating block minimization of the penalized logistic objective.
//!
//! Every block update (the dictionaries `B_v`, the locations `A_v`, then the
//! covariate coefficients) reduces to a penalized logistic regression with a
//! fixed per-sample offset, solved by accelerated proximal gradient with
//! backtracking and a monotone restart.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{mean_logistic_loss, sigmoid, Dataset, FactorSet, PenaltyConfig, SkpdModel};
use crate::shift::{default_shift, shift_into, ShiftSpec};
use crate::tensor::{axpy_slice, dot, rearrange_into, DenseTensor, Matrix, PowerIteration, ShapeConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Maximum number of outer (full sweep) iterations.
    pub max_outer: usize,
    /// Stop once the relative objective change of a sweep falls below this.
    pub outer_tol: f64,
    pub inner_max_iter: usize,
    /// Stationarity tolerance of the inner solver (infinity norm of the
    /// proximal-gradient step).
    pub inner_tol: f64,
    pub line_search_beta: f64,
    pub accelerate: bool,
    /// Rescale each `(A_{v,r}, B_{v,r})` pair after a factor update so that
    /// the penalty is minimal for the unchanged product.
    pub rebalance: bool,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_outer: 30,
            outer_tol: 1e-5,
            inner_max_iter: 500,
            inner_tol: 1e-6,
            line_search_beta: 0.5,
            accelerate: true,
            rebalance: true,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_outer == 0 || self.inner_max_iter == 0 {
            return Err(Error::InvalidConfig("iteration limits must be at least 1".into()));
        }
        if !(self.outer_tol > 0.0 && self.inner_tol > 0.0) {
            return Err(Error::InvalidConfig("tolerances must be positive".into()));
        }
        if !(self.line_search_beta > 0.0 && self.line_search_beta < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "line_search_beta {} outside (0,1)",
                self.line_search_beta
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Penalty {
    L1 { lambda: f64 },
    /// `λ (α‖w‖₁ + (1−α)‖w‖²₂)`.
    ElasticNet { lambda: f64, alpha: f64 },
}

impl Penalty {
    fn l1_weight(&self) -> f64 {
        match *self {
            Penalty::L1 { lambda } => lambda,
            Penalty::ElasticNet { lambda, alpha } => lambda * alpha,
        }
    }

    fn ridge_weight(&self) -> f64 {
        match *self {
            Penalty::L1 { .. } => 0.0,
            Penalty::ElasticNet { lambda, alpha } => lambda * (1.0 - alpha),
        }
    }
}

/// Soft thresholding, the proximal map of `t‖·‖₁`.
#[inline]
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// `min_w  (1/n) Σ logloss(design_i·w + offset_i, y_i) + penalty(w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PenalizedLogisticProblem {
    pub design: Matrix,
    pub labels: Vec<f64>,
    pub offset: Vec<f64>,
    pub penalty: Penalty,
    /// Coordinates exempt from the penalty (the intercept).
    pub unpenalized: Vec<usize>,
    pub warm_start: Vec<f64>,
}

impl PenalizedLogisticProblem {
    pub fn validate(&self) -> Result<()> {
        let n = self.design.rows();
        if self.labels.len() != n || self.offset.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "design has {n} rows, {} labels, {} offsets",
                self.labels.len(),
                self.offset.len()
            )));
        }
        if self.warm_start.len() != self.design.cols() {
            return Err(Error::ShapeMismatch(format!(
                "warm start of length {} for {} columns",
                self.warm_start.len(),
                self.design.cols()
            )));
        }
        if n == 0 {
            return Err(Error::InsufficientData("no rows".into()));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(self.design.data()) || !finite(&self.offset) || !finite(&self.warm_start) {
            return Err(Error::NonFinite("penalized logistic problem".into()));
        }
        if self.unpenalized.iter().any(|&j| j >= self.design.cols()) {
            return Err(Error::InvalidConfig("unpenalized index out of range".into()));
        }
        Ok(())
    }

    /// `design · w + offset`.
    pub fn linear_predictor(&self, w: &[f64]) -> Vec<f64> {
        let mut eta = self.design.matvec(w);
        axpy_slice(&mut eta, 1.0, &self.offset);
        eta
    }

    pub fn data_loss(&self, w: &[f64]) -> f64 {
        mean_logistic_loss(&self.linear_predictor(w), &self.labels)
    }

    /// Gradient of the data term at the given linear predictor.
    pub fn gradient_at(&self, eta: &[f64]) -> Vec<f64> {
        let n = eta.len() as f64;
        let resid: Vec<f64> = eta
            .iter()
            .zip(&self.labels)
            .map(|(&e, &y)| (sigmoid(e) - y) / n)
            .collect();
        self.design.matvec_t(&resid)
    }

    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        self.gradient_at(&self.linear_predictor(w))
    }

    fn is_free(&self, j: usize) -> bool {
        self.unpenalized.contains(&j)
    }

    pub fn penalty_value(&self, w: &[f64]) -> f64 {
        let (l1, ridge) = (self.penalty.l1_weight(), self.penalty.ridge_weight());
        w.iter()
            .enumerate()
            .filter(|(j, _)| !self.is_free(*j))
            .map(|(_, &v)| l1 * v.abs() + ridge * v * v)
            .sum()
    }

    pub fn objective(&self, w: &[f64]) -> f64 {
        self.data_loss(w) + self.penalty_value(w)
    }

    /// Proximal map of `step · penalty`:
    /// `soft(v, step·λα) / (1 + 2·step·λ(1−α))`.
    pub fn prox(&self, v: &[f64], step: f64) -> Vec<f64> {
        let (l1, ridge) = (self.penalty.l1_weight(), self.penalty.ridge_weight());
        let shrink = 1.0 / (1.0 + 2.0 * step * ridge);
        v.iter()
            .enumerate()
            .map(|(j, &x)| {
                if self.is_free(j) {
                    x
                } else {
                    soft_threshold(x, step * l1) * shrink
                }
            })
            .collect()
    }

    /// `‖w − prox(w − ∇f(w)/L)‖_∞`.
    pub fn stationarity(&self, w: &[f64], grad: &[f64], lipschitz: f64) -> f64 {
        let step = 1.0 / lipschitz;
        let v: Vec<f64> = w.iter().zip(grad).map(|(x, g)| x - step * g).collect();
        self.prox(&v, step)
            .iter()
            .zip(w)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub w: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stationarity: f64,
    /// Final accepted Lipschitz estimate (inverse step size).
    pub lipschitz: f64,
}

/// Solves the problem from its warm start. Never returns an iterate with a
/// larger objective than the warm start; hitting the iteration limit is
/// reported through `converged = false`, not as an error.
pub fn solve_penalized_logistic(p: &PenalizedLogisticProblem, cfg: &SolverConfig) -> Result<SolveResult> {
    solve_with_hint(p, cfg, None)
}

/// Rounding allowance of the sufficient-decrease test.
fn slack(f: f64) -> f64 {
    1e-12 * f.abs().max(1.0)
}

pub(crate) fn solve_with_hint(
    p: &PenalizedLogisticProblem,
    cfg: &SolverConfig,
    lipschitz_hint: Option<f64>,
) -> Result<SolveResult> {
    p.validate()?;
    cfg.validate()?;
    let n = p.design.rows();
    let m = p.design.cols();

    let mut x = p.warm_start.clone();
    let mut eta_x = p.linear_predictor(&x);
    let mut f_x = mean_logistic_loss(&eta_x, &p.labels);
    let mut obj_x = f_x + p.penalty_value(&x);
    let mut grad_x = p.gradient_at(&eta_x);

    let mut lipschitz = match lipschitz_hint {
        Some(l) if l.is_finite() && l > 0.0 => l,
        _ => {
            let fro2: f64 = p.design.data().iter().map(|v| v * v).sum();
            (fro2 / (4.0 * n as f64 * n.min(m).max(1) as f64)).max(1e-12)
        }
    };
    if m == 0 {
        return Ok(SolveResult {
            w: x,
            objective: obj_x,
            iterations: 0,
            converged: true,
            stationarity: 0.0,
            lipschitz,
        });
    }

    let mut stationarity = p.stationarity(&x, &grad_x, lipschitz);
    if stationarity <= cfg.inner_tol {
        return Ok(SolveResult {
            w: x,
            objective: obj_x,
            iterations: 0,
            converged: true,
            stationarity,
            lipschitz,
        });
    }

    let mut y = x.clone();
    let mut eta_y = eta_x.clone();
    let mut f_y = f_x;
    let mut grad_y = grad_x.clone();
    let mut momentum = false;
    let mut t = 1.0f64;
    let mut converged = false;
    let mut iterations = 0;

    // Set when the previous step was accepted without backtracking; the next
    // step then first tries a larger step size so that L tracks the local
    // curvature, which matters once the loss saturates.
    let mut grow = false;
    while iterations < cfg.inner_max_iter {
        iterations += 1;

        if grow {
            lipschitz *= cfg.line_search_beta;
        }
        grow = true;
        // Backtracking from y.
        let (z, eta_z, f_z) = loop {
            let step = 1.0 / lipschitz;
            let v: Vec<f64> = y.iter().zip(&grad_y).map(|(a, g)| a - step * g).collect();
            let z = p.prox(&v, step);
            let eta_z = p.linear_predictor(&z);
            let f_z = mean_logistic_loss(&eta_z, &p.labels);
            let mut lin = 0.0;
            let mut sq = 0.0;
            for ((zi, yi), gi) in z.iter().zip(&y).zip(&grad_y) {
                let d = zi - yi;
                lin += gi * d;
                sq += d * d;
            }
            let bound = f_y + lin + 0.5 * lipschitz * sq;
            if f_z <= bound + slack(f_y) || lipschitz > 1e300 {
                break (z, eta_z, f_z);
            }
            lipschitz /= cfg.line_search_beta;
            grow = false;
        };
        let obj_z = f_z + p.penalty_value(&z);

        if obj_z.is_nan() || obj_z > obj_x {
            if momentum {
                // Restart from the best point without momentum.
                y.clone_from(&x);
                eta_y.clone_from(&eta_x);
                f_y = f_x;
                grad_y.clone_from(&grad_x);
                t = 1.0;
                momentum = false;
                continue;
            }
            // A plain proximal step from x no longer decreases the objective;
            // either x is stationary or the decrease is below rounding.
            converged = stationarity <= cfg.inner_tol || obj_z - obj_x <= slack(obj_x);
            break;
        }

        let x_prev = std::mem::replace(&mut x, z);
        let eta_prev = std::mem::replace(&mut eta_x, eta_z);
        f_x = f_z;
        obj_x = obj_z;
        grad_x = p.gradient_at(&eta_x);
        stationarity = p.stationarity(&x, &grad_x, lipschitz);
        if stationarity <= cfg.inner_tol {
            converged = true;
            break;
        }

        if cfg.accelerate {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_next;
            t = t_next;
            if beta > 0.0 {
                y = x.iter().zip(&x_prev).map(|(a, b)| a + beta * (a - b)).collect();
                eta_y = eta_x.iter().zip(&eta_prev).map(|(a, b)| a + beta * (a - b)).collect();
                f_y = mean_logistic_loss(&eta_y, &p.labels);
                grad_y = p.gradient_at(&eta_y);
                momentum = true;
                continue;
            }
        }
        y.clone_from(&x);
        eta_y.clone_from(&eta_x);
        f_y = f_x;
        grad_y.clone_from(&grad_x);
        momentum = false;
    }

    Ok(SolveResult {
        w: x,
        objective: obj_x,
        iterations,
        converged,
        stationarity,
        lipschitz,
    })
}

/// Which parameter block an update touched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Block {
    Init,
    B(usize),
    A(usize),
    Gamma,
}

impl std::fmt::Display for Block {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Block::Init => write!(f, "init"),
            Block::B(v) => write!(f, "B{}", v + 1),
            Block::A(v) => write!(f, "A{}", v + 1),
            Block::Gamma => write!(f, "gamma"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub outer: usize,
    pub block: Block,
    pub objective: f64,
    pub inner_iterations: usize,
    pub inner_converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Objective after initialization and after every block update.
    pub trace: Vec<TraceEntry>,
    /// Objective at the end of each outer iteration.
    pub outer_objectives: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `‖A_{v,r}‖₀` indexed by view, then factor.
    pub a_nonzeros: Vec<Vec<usize>>,
    /// Views whose initialization fell back to random unit vectors.
    pub init_fallback_views: Vec<usize>,
    pub inner_nonconverged: usize,
    pub training_accuracy: f64,
    pub final_objective: f64,
}

/// Rearranged copies of every training tensor for each view, computed once per
/// fit.
#[derive(Debug, Clone)]
pub struct Workspace {
    cfg: ShapeConfig,
    shift: ShiftSpec,
    /// `views[v][i]` is `K(X_{v,i})`, `p × d` row-major.
    views: Vec<Vec<Vec<f64>>>,
    z: Vec<Vec<f64>>,
    labels: Vec<f64>,
}

impl Workspace {
    pub fn new(data: &Dataset, cfg: &ShapeConfig, use_shift: bool) -> Result<Self> {
        if data.dims() != cfg.full_dims() {
            return Err(Error::ShapeMismatch(format!(
                "data dims {:?} do not match configuration dims {:?}",
                data.dims(),
                cfg.full_dims()
            )));
        }
        let shift = if use_shift { default_shift(cfg) } else { ShiftSpec::default() };
        let n_views = if use_shift { 2 } else { 1 };
        let dims = cfg.full_dims();
        let volume = cfg.p() * cfg.d();
        let mut views = vec![Vec::with_capacity(data.len()); n_views];
        let mut shifted = vec![0.0; volume];
        for s in data.samples() {
            let mut r0 = vec![0.0; volume];
            rearrange_into(s.x.data(), cfg, &mut r0);
            views[0].push(r0);
            if use_shift {
                shift_into(s.x.data(), dims, &shift, &mut shifted);
                let mut r1 = vec![0.0; volume];
                rearrange_into(&shifted, cfg, &mut r1);
                views[1].push(r1);
            }
        }
        Ok(Self {
            cfg: *cfg,
            shift,
            views,
            z: data.samples().iter().map(|s| s.z.clone()).collect(),
            labels: data.labels(),
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    pub fn shift_spec(&self) -> &ShiftSpec {
        &self.shift
    }

    fn check_model(&self, model: &SkpdModel) -> Result<()> {
        if model.cfg != self.cfg || model.n_views() != self.n_views() || model.q() != self.z[0].len() {
            return Err(Error::ShapeMismatch(
                "model geometry does not match the workspace".into(),
            ));
        }
        Ok(())
    }

    /// `Σ_r vec(A_{v,r})ᵀ K(X_{v,i}) vec(B_{v,r})` for every sample.
    pub fn view_terms(&self, model: &SkpdModel, v: usize) -> Vec<f64> {
        let (p, d) = (self.cfg.p(), self.cfg.d());
        let factors = &model.views[v];
        self.views[v]
            .iter()
            .map(|xt| {
                let mut total = 0.0;
                for (a, b) in factors.a.iter().zip(&factors.b) {
                    let (a, b) = (a.data(), b.data());
                    for k in 0..p {
                        if a[k] != 0.0 {
                            total += a[k] * dot(&xt[k * d..(k + 1) * d], b);
                        }
                    }
                }
                total
            })
            .collect()
    }

    fn covariate_terms(&self, model: &SkpdModel) -> Vec<f64> {
        self.z
            .iter()
            .map(|z| dot(z, &model.gamma) + model.intercept)
            .collect()
    }

    /// Sum of the image terms of every view other than `v`, plus `zᵀγ`. The
    /// intercept is left out because the image blocks carry it as their last,
    /// unpenalized coordinate.
    fn offset_excluding(&self, model: &SkpdModel, v: usize) -> Vec<f64> {
        let mut offset: Vec<f64> = self.z.iter().map(|z| dot(z, &model.gamma)).collect();
        for other in 0..self.n_views() {
            if other != v {
                axpy_slice(&mut offset, 1.0, &self.view_terms(model, other));
            }
        }
        offset
    }

    pub fn linear_predictors(&self, model: &SkpdModel) -> Vec<f64> {
        let mut eta = self.covariate_terms(model);
        for v in 0..self.n_views() {
            axpy_slice(&mut eta, 1.0, &self.view_terms(model, v));
        }
        eta
    }

    pub fn objective(&self, model: &SkpdModel) -> f64 {
        mean_logistic_loss(&self.linear_predictors(model), &self.labels) + model.penalty_value()
    }

    /// Dictionary update for view `v`: row `i` concatenates
    /// `K(X_{v,i})ᵀ vec(A_{v,r})` over `r`, followed by a 1 for the intercept.
    pub fn b_problem(&self, model: &SkpdModel, v: usize) -> Result<PenalizedLogisticProblem> {
        self.check_model(model)?;
        let (p, d) = (self.cfg.p(), self.cfg.d());
        let factors = &model.views[v];
        let rank = factors.rank();
        let mut design = Vec::with_capacity(self.n() * d * rank);
        for xt in &self.views[v] {
            for a in &factors.a {
                let mut row = vec![0.0; d];
                for (k, &ak) in a.data().iter().enumerate() {
                    if ak != 0.0 {
                        axpy_slice(&mut row, ak, &xt[k * d..(k + 1) * d]);
                    }
                }
                debug_assert_eq!(a.len(), p);
                design.extend_from_slice(&row);
            }
            design.push(1.0);
        }
        let pen = model.penalties;
        let mut warm_start: Vec<f64> = factors.b.iter().flat_map(|b| b.data().iter().copied()).collect();
        warm_start.push(model.intercept);
        Ok(PenalizedLogisticProblem {
            design: Matrix::from_vec(self.n(), d * rank + 1, design)?,
            labels: self.labels.clone(),
            offset: self.offset_excluding(model, v),
            penalty: Penalty::ElasticNet {
                lambda: pen.lambda_b,
                alpha: pen.alpha,
            },
            unpenalized: vec![d * rank],
            warm_start,
        })
    }

    /// Location update for view `v`: row `i` concatenates
    /// `K(X_{v,i}) vec(B_{v,r})` over `r`, followed by a 1 for the intercept.
    pub fn a_problem(&self, model: &SkpdModel, v: usize) -> Result<PenalizedLogisticProblem> {
        self.check_model(model)?;
        let (p, d) = (self.cfg.p(), self.cfg.d());
        let factors = &model.views[v];
        let rank = factors.rank();
        let mut design = Vec::with_capacity(self.n() * p * rank);
        for xt in &self.views[v] {
            for b in &factors.b {
                let b = b.data();
                design.extend((0..p).map(|k| dot(&xt[k * d..(k + 1) * d], b)));
            }
            design.push(1.0);
        }
        let mut warm_start: Vec<f64> = factors.a.iter().flat_map(|a| a.data().iter().copied()).collect();
        warm_start.push(model.intercept);
        Ok(PenalizedLogisticProblem {
            design: Matrix::from_vec(self.n(), p * rank + 1, design)?,
            labels: self.labels.clone(),
            offset: self.offset_excluding(model, v),
            penalty: Penalty::L1 {
                lambda: model.penalties.lambda_a,
            },
            unpenalized: vec![p * rank],
            warm_start,
        })
    }

    /// Covariate update: design `[zᵢᵀ, 1]`, offset the image terms of all
    /// views. The trailing intercept column is unpenalized, so the problem has
    /// `q + 1` coordinates even when `q = 0`.
    pub fn gamma_problem(&self, model: &SkpdModel) -> Result<PenalizedLogisticProblem> {
        self.check_model(model)?;
        let q = model.q();
        let mut design = Vec::with_capacity(self.n() * (q + 1));
        for z in &self.z {
            design.extend_from_slice(z);
            design.push(1.0);
        }
        let mut offset = vec![0.0; self.n()];
        for v in 0..self.n_views() {
            axpy_slice(&mut offset, 1.0, &self.view_terms(model, v));
        }
        let mut warm_start = model.gamma.clone();
        warm_start.push(model.intercept);
        Ok(PenalizedLogisticProblem {
            design: Matrix::from_vec(self.n(), q + 1, design)?,
            labels: self.labels.clone(),
            offset,
            penalty: Penalty::L1 {
                lambda: model.penalties.lambda_gamma,
            },
            unpenalized: vec![q],
            warm_start,
        })
    }
}

fn split_intercept(w: &[f64]) -> Result<(&[f64], f64)> {
    match w.split_last() {
        Some((&intercept, rest)) if intercept.is_finite() => Ok((rest, intercept)),
        Some(_) => Err(Error::NonFinite("intercept".into())),
        None => Err(Error::ShapeMismatch("empty coefficient vector".into())),
    }
}

fn split_into_factors(w: &[f64], shape: &[usize], rank: usize) -> Result<Vec<DenseTensor>> {
    let size: usize = shape.iter().product();
    if w.len() != size * rank {
        return Err(Error::ShapeMismatch(format!(
            "{} coefficients for {rank} factors of size {size}",
            w.len()
        )));
    }
    w.chunks(size)
        .map(|c| DenseTensor::from_vec(shape, c.to_vec()))
        .collect()
}

impl SkpdModel {
    /// Replaces the dictionaries of view `v` and the intercept with
    /// `[vec(B_{v,1}), …, vec(B_{v,R}), intercept]`.
    pub fn set_b(&mut self, v: usize, w: &[f64]) -> Result<()> {
        let (factors, intercept) = split_intercept(w)?;
        let rank = self.rank();
        self.views[v].b = split_into_factors(factors, &self.cfg.patch_shape(), rank)?;
        self.intercept = intercept;
        Ok(())
    }

    /// Replaces the locations of view `v` and the intercept with
    /// `[vec(A_{v,1}), …, vec(A_{v,R}), intercept]`.
    pub fn set_a(&mut self, v: usize, w: &[f64]) -> Result<()> {
        let (factors, intercept) = split_intercept(w)?;
        let rank = self.rank();
        self.views[v].a = split_into_factors(factors, &self.cfg.grid_shape(), rank)?;
        self.intercept = intercept;
        Ok(())
    }

    /// Writes `[γ, intercept]`.
    pub fn set_gamma(&mut self, w: &[f64]) -> Result<()> {
        if w.len() != self.q() + 1 {
            return Err(Error::ShapeMismatch(format!(
                "{} coefficients for q={} plus intercept",
                w.len(),
                self.q()
            )));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("covariate coefficients".into()));
        }
        self.gamma = w[..self.q()].to_vec();
        self.intercept = w[self.q()];
        Ok(())
    }
}

/// Positive root of `a c³ − b c − 2e = 0`, the minimizer of
/// `a c + b / c + e / c²` over `c > 0`.
fn balancing_scale(a: f64, b: f64, e: f64) -> f64 {
    let f = |c: f64| a * c * c * c - b * c - 2.0 * e;
    // f(0) < 0 and f grows without bound; bracket then bisect.
    let mut hi = 1.0;
    while f(hi) < 0.0 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Replaces every `(A_r, B_r)` by `(c A_r, B_r / c)` with the `c` that
/// minimizes `λa‖cA‖₁ + λb(α‖B/c‖₁ + (1−α)‖B/c‖²)`. The Kronecker product
/// is unchanged, so the penalty can only go down.
pub fn rebalance(factors: &mut FactorSet, penalties: &PenaltyConfig) {
    for (a, b) in factors.a.iter_mut().zip(factors.b.iter_mut()) {
        let ca = penalties.lambda_a * a.l1_norm();
        let cb = penalties.lambda_b * penalties.alpha * b.l1_norm();
        let ce = penalties.lambda_b * (1.0 - penalties.alpha) * b.frobenius_norm().powi(2);
        if ca.is_nan() || ca <= 0.0 || (cb + ce).is_nan() || cb + ce <= 0.0 {
            continue;
        }
        let c = balancing_scale(ca, cb, ce);
        let before = ca + cb + ce;
        let after = ca * c + cb / c + ce / (c * c);
        if c.is_finite() && c > 0.0 && after < before {
            *a = a.scale(c);
            *b = b.scale(1.0 / c);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Initialization {
    pub model: SkpdModel,
    /// Views whose weighted sum vanished (or whose power iteration did not
    /// converge) and were seeded with random orthonormal vectors instead.
    pub fallback_views: Vec<usize>,
}

/// Spectral start: `A_{v,r}` are the top-`R` left singular vectors of
/// `Σᵢ yᵢ K(X_{v,i})`, every `B_{v,r}` is all ones and `γ = 0`.
pub fn initialize(
    data: &Dataset,
    cfg: &ShapeConfig,
    rank: usize,
    use_shift: bool,
    penalties: PenaltyConfig,
    seed: u64,
) -> Result<Initialization> {
    let ws = Workspace::new(data, cfg, use_shift)?;
    initialize_from_workspace(&ws, data.q(), cfg, rank, penalties, seed)
}

fn initialize_from_workspace(
    ws: &Workspace,
    q: usize,
    cfg: &ShapeConfig,
    rank: usize,
    penalties: PenaltyConfig,
    seed: u64,
) -> Result<Initialization> {
    let (p, d) = (cfg.p(), cfg.d());
    if rank == 0 || rank > p.min(d) {
        return Err(Error::InvalidConfig(format!(
            "rank {rank} must be in 1..={} for p={p}, d={d}",
            p.min(d)
        )));
    }
    let mut views = Vec::with_capacity(ws.n_views());
    let mut fallback_views = Vec::new();
    for v in 0..ws.n_views() {
        let mut weighted = vec![0.0; p * d];
        for (xt, &y) in ws.views[v].iter().zip(&ws.labels) {
            if y != 0.0 {
                axpy_slice(&mut weighted, y, xt);
            }
        }
        let weighted = Matrix::from_vec(p, d, weighted)?;
        let power = PowerIteration {
            seed: seed.wrapping_add(v as u64),
            ..Default::default()
        };
        let vectors = if weighted.frobenius_norm() == 0.0 {
            None
        } else {
            match power.left_singular(&weighted, rank) {
                Ok(s) => Some(s.vectors),
                Err(Error::SvdNotConverged { .. }) => None,
                Err(e) => return Err(e),
            }
        };
        let vectors = match vectors {
            Some(v) => v,
            None => {
                fallback_views.push(v);
                random_orthonormal(p, rank, seed.wrapping_add(0x9e37_79b9 + v as u64))
            }
        };
        let a = vectors
            .into_iter()
            .map(|u| DenseTensor::from_vec(&cfg.grid_shape(), u))
            .collect::<Result<Vec<_>>>()?;
        let b = (0..rank)
            .map(|_| DenseTensor::filled(&cfg.patch_shape(), 1.0))
            .collect::<Result<Vec<_>>>()?;
        views.push(FactorSet::new(cfg, a, b)?);
    }
    let model = SkpdModel::new(*cfg, ws.shift, views, vec![0.0; q], 0.0, penalties)?;
    Ok(Initialization { model, fallback_views })
}

fn random_orthonormal(len: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    while out.len() < count {
        let mut u: Vec<f64> = (0..len).map(|_| rng.random::<f64>() - 0.5).collect();
        for _ in 0..2 {
            for b in &out {
                let c = dot(&u, b);
                axpy_slice(&mut u, -c, b);
            }
        }
        let norm = dot(&u, &u).sqrt();
        if norm > 1e-8 {
            u.iter_mut().for_each(|x| *x /= norm);
            crate::tensor::fix_sign(&mut u);
            out.push(u);
        }
    }
    out
}

/// Fits the classifier: spectral initialization followed by alternating
/// `B`/`A` updates for each view and a covariate update, repeated until the
/// relative objective change of a sweep drops below `solver.outer_tol`.
pub fn fit(
    data: &Dataset,
    cfg: &ShapeConfig,
    rank: usize,
    penalties: PenaltyConfig,
    use_shift: bool,
    solver: &SolverConfig,
) -> Result<(SkpdModel, FitReport)> {
    solver.validate()?;
    let (neg, pos) = data.class_counts();
    if neg == 0 || pos == 0 {
        return Err(Error::SingleClass);
    }
    let ws = Workspace::new(data, cfg, use_shift)?;
    let init = initialize_from_workspace(&ws, data.q(), cfg, rank, penalties, solver.seed)?;
    let mut model = init.model;

    let mut trace = Vec::new();
    let mut objective = ws.objective(&model);
    if !objective.is_finite() {
        return Err(Error::Diverged("initial objective is not finite".into()));
    }
    trace.push(TraceEntry {
        outer: 0,
        block: Block::Init,
        objective,
        inner_iterations: 0,
        inner_converged: true,
    });

    // One Lipschitz estimate per block, carried across sweeps.
    let n_views = ws.n_views();
    let mut hints: Vec<Option<f64>> = vec![None; 2 * n_views + 1];
    let mut outer_objectives = Vec::new();
    let mut inner_nonconverged = 0;
    let mut converged = false;
    let mut iterations = 0;

    let mut run_block = |model: &mut SkpdModel, block: Block, outer: usize| -> Result<f64> {
        let (problem, slot) = match block {
            Block::B(v) => (ws.b_problem(model, v)?, 2 * v),
            Block::A(v) => (ws.a_problem(model, v)?, 2 * v + 1),
            Block::Gamma => (ws.gamma_problem(model)?, 2 * n_views),
            Block::Init => unreachable!(),
        };
        let hint = hints[slot].map(|l| l * solver.line_search_beta);
        let result = solve_with_hint(&problem, solver, hint)?;
        hints[slot] = Some(result.lipschitz);
        match block {
            Block::B(v) => model.set_b(v, &result.w)?,
            Block::A(v) => model.set_a(v, &result.w)?,
            _ => model.set_gamma(&result.w)?,
        }
        if let (Block::B(v) | Block::A(v), true) = (block, solver.rebalance) {
            let penalties = model.penalties;
            rebalance(&mut model.views[v], &penalties);
        }
        let objective = ws.objective(model);
        if !objective.is_finite() {
            return Err(Error::Diverged(format!("objective became non-finite after {block} update")));
        }
        if !result.converged {
            inner_nonconverged += 1;
        }
        trace.push(TraceEntry {
            outer,
            block,
            objective,
            inner_iterations: result.iterations,
            inner_converged: result.converged,
        });
        Ok(objective)
    };

    for outer in 1..=solver.max_outer {
        iterations = outer;
        let previous = objective;
        for v in 0..n_views {
            run_block(&mut model, Block::B(v), outer)?;
            run_block(&mut model, Block::A(v), outer)?;
        }
        objective = run_block(&mut model, Block::Gamma, outer)?;
        outer_objectives.push(objective);
        let change = (previous - objective).abs() / previous.abs().max(f64::MIN_POSITIVE);
        if change < solver.outer_tol {
            converged = true;
            break;
        }
    }

    let eta = ws.linear_predictors(&model);
    let correct = eta
        .iter()
        .zip(&ws.labels)
        .filter(|(&e, &y)| f64::from(crate::model::classify_proba(sigmoid(e), 0.5)) == y)
        .count();
    let report = FitReport {
        trace,
        outer_objectives,
        iterations,
        converged,
        a_nonzeros: model
            .views
            .iter()
            .map(|v| v.a.iter().map(|a| a.count_nonzero()).collect())
            .collect(),
        init_fallback_views: init.fallback_views,
        inner_nonconverged,
        training_accuracy: correct as f64 / ws.n() as f64,
        final_objective: objective,
    };
    Ok((model, report))
}
