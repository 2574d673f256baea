//! ADAM and L-BFGS over a flat parameter vector.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Differentiable objective driven by the minimizers.
pub trait Objective {
    /// Loss at `x`; `grad` is overwritten with its gradient.
    fn evaluate(&mut self, x: &[f64], grad: &mut [f64]) -> Result<f64>;

    /// Called at the start point and after every accepted step. The most
    /// recent `evaluate` call was at `progress.params`.
    fn accepted(&mut self, _progress: &Progress<'_>) -> Control {
        Control::Continue
    }
}

impl<F> Objective for F
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
{
    fn evaluate(&mut self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        self(x, grad)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Progress<'a> {
    pub iteration: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub params: &'a [f64],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    /// Loss reached the threshold.
    Converged,
    /// Iteration budget used up.
    BudgetExhausted,
    /// No acceptable step within the evaluation limit.
    LineSearchFailed,
    /// Gradient vanished.
    Stationary,
    /// Halted by [`Objective::accepted`].
    Stopped,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Converged => "converged",
            Status::BudgetExhausted => "budget_exhausted",
            Status::LineSearchFailed => "line_search_failed",
            Status::Stationary => "stationary",
            Status::Stopped => "stopped",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopCriteria {
    pub loss_threshold: f64,
    pub max_iters: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimReport {
    pub status: Status,
    /// Accepted steps taken.
    pub iterations: usize,
    pub evaluations: usize,
    pub final_loss: f64,
    pub best_loss: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_finite(grad: &[f64]) -> Result<()> {
    match grad.iter().position(|g| !g.is_finite()) {
        Some(index) => Err(Error::NonFiniteGradient { index }),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize, config: AdamConfig) -> Self {
        AdamState {
            config,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// One bias-corrected update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::DimensionMismatch {
                expected: self.m.len(),
                actual: grad.len().min(params.len()),
            });
        }
        check_finite(grad)?;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step(mut state: AdamState, params: &[f64], grad: &[f64]) -> Result<(Vec<f64>, AdamState)> {
    let mut p = params.to_vec();
    state.step(&mut p, grad)?;
    Ok((p, state))
}

/// Full-batch ADAM until the loss threshold or the step budget.
pub fn adam_minimize(
    objective: &mut dyn Objective,
    params: &mut [f64],
    config: AdamConfig,
    stop: StopCriteria,
) -> Result<OptimReport> {
    let mut state = AdamState::new(params.len(), config);
    let mut grad = vec![0.0; params.len()];
    let mut best = f64::INFINITY;
    let mut evaluations = 0;
    let mut k = 0;
    loop {
        let loss = objective.evaluate(params, &mut grad)?;
        evaluations += 1;
        best = best.min(loss);
        let progress = Progress {
            iteration: k,
            loss,
            grad_norm: norm(&grad),
            params,
        };
        let control = objective.accepted(&progress);
        if control == Control::Continue && !loss.is_finite() {
            return Err(Error::NonFiniteGradient { index: 0 });
        }
        let status = if control == Control::Stop {
            Some(Status::Stopped)
        } else if loss <= stop.loss_threshold {
            Some(Status::Converged)
        } else if k >= stop.max_iters {
            Some(Status::BudgetExhausted)
        } else {
            None
        };
        if let Some(status) = status {
            return Ok(OptimReport {
                status,
                iterations: k,
                evaluations,
                final_loss: loss,
                best_loss: best,
            });
        }
        state.step(params, &grad)?;
        k += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LbfgsConfig {
    pub history: usize,
    pub c1: f64,
    pub c2: f64,
    pub max_evals: usize,
    pub curvature_eps: f64,
    /// Stop when the largest gradient entry is at most this.
    pub grad_tol: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            history: 20,
            c1: 1e-4,
            c2: 0.9,
            max_evals: 25,
            curvature_eps: 1e-10,
            grad_tol: 1e-12,
        }
    }
}

/// Curvature pairs of the limited-memory inverse Hessian.
#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsState {
    pub config: LbfgsConfig,
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    skipped: usize,
}

impl LbfgsState {
    pub fn new(config: LbfgsConfig) -> Self {
        LbfgsState {
            config,
            pairs: VecDeque::with_capacity(config.history),
            skipped: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Pairs rejected by the curvature guard so far.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        self.pairs.iter().map(|(s, y, _)| (s.as_slice(), y.as_slice()))
    }

    pub fn clear(&mut self) {
        self.pairs.clear();
    }

    /// Store `(s, y)` unless `sᵀy` fails the curvature guard. The guard is
    /// relative (`sᵀy > eps·|s|·|y|`) so it keeps working at tiny losses.
    pub fn push(&mut self, s: Vec<f64>, y: Vec<f64>) -> bool {
        let sy = dot(&s, &y);
        if !(sy > self.config.curvature_eps * norm(&s) * norm(&y)) {
            self.skipped += 1;
            return false;
        }
        if self.config.history == 0 {
            return false;
        }
        if self.pairs.len() == self.config.history {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
        true
    }

    /// `−H·g` by the two-loop recursion.
    pub fn direction(&self, grad: &[f64]) -> Vec<f64> {
        let mut q = grad.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = self.pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }
}

struct Trial {
    alpha: f64,
    f: f64,
    dphi: f64,
    x: Vec<f64>,
    g: Vec<f64>,
}

struct LineSearch<'a> {
    objective: &'a mut dyn Objective,
    x0: &'a [f64],
    d: &'a [f64],
    f0: f64,
    dphi0: f64,
    c1: f64,
    c2: f64,
    evals_left: usize,
    evaluations: usize,
}

impl LineSearch<'_> {
    fn probe(&mut self, alpha: f64) -> Result<Trial> {
        self.evals_left -= 1;
        self.evaluations += 1;
        let x: Vec<f64> = self.x0.iter().zip(self.d).map(|(a, b)| a + alpha * b).collect();
        let mut g = vec![0.0; x.len()];
        let mut f = self.objective.evaluate(&x, &mut g)?;
        let mut dphi = dot(&g, self.d);
        if !f.is_finite() || !dphi.is_finite() {
            f = f64::INFINITY;
            dphi = f64::NAN;
        }
        Ok(Trial { alpha, f, dphi, x, g })
    }

    fn armijo(&self, t: &Trial) -> bool {
        t.f <= self.f0 + self.c1 * t.alpha * self.dphi0
    }

    fn curvature(&self, t: &Trial) -> bool {
        t.dphi.abs() <= -self.c2 * self.dphi0
    }

    /// Strong-Wolfe search with bracketing and cubic zoom.
    fn run(&mut self, alpha_init: f64) -> Result<Option<Trial>> {
        let mut prev = Trial {
            alpha: 0.0,
            f: self.f0,
            dphi: self.dphi0,
            x: Vec::new(),
            g: Vec::new(),
        };
        let mut alpha = alpha_init;
        let mut first = true;
        while self.evals_left > 0 {
            let t = self.probe(alpha)?;
            if !self.armijo(&t) || (!first && t.f >= prev.f) {
                return self.zoom(prev, t);
            }
            if self.curvature(&t) {
                return Ok(Some(t));
            }
            if t.dphi >= 0.0 {
                return self.zoom(t, prev);
            }
            alpha = 2.0 * t.alpha;
            prev = t;
            first = false;
        }
        Ok(None)
    }

    fn zoom(&mut self, mut lo: Trial, mut hi: Trial) -> Result<Option<Trial>> {
        while self.evals_left > 0 {
            let (a, b) = (lo.alpha.min(hi.alpha), lo.alpha.max(hi.alpha));
            if b - a <= 1e-16 * b.max(1.0) {
                break;
            }
            let mut alpha = cubic_min(&lo, &hi).unwrap_or(0.5 * (lo.alpha + hi.alpha));
            let margin = 0.1 * (b - a);
            alpha = alpha.clamp(a + margin, b - margin);
            let t = self.probe(alpha)?;
            if !self.armijo(&t) || t.f >= lo.f {
                hi = t;
            } else {
                if self.curvature(&t) {
                    return Ok(Some(t));
                }
                if t.dphi * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = t;
            }
        }
        // the low end satisfies sufficient decrease; take it if it moved
        Ok((lo.alpha > 0.0 && !lo.x.is_empty()).then_some(lo))
    }
}

/// Minimizer of the cubic through two trials with known slopes.
fn cubic_min(a: &Trial, b: &Trial) -> Option<f64> {
    if !(a.f.is_finite() && b.f.is_finite() && a.dphi.is_finite() && b.dphi.is_finite()) {
        return None;
    }
    let d1 = a.dphi + b.dphi - 3.0 * (a.f - b.f) / (a.alpha - b.alpha);
    let disc = d1 * d1 - a.dphi * b.dphi;
    if disc < 0.0 {
        return None;
    }
    let d2 = (b.alpha - a.alpha).signum() * disc.sqrt();
    let den = b.dphi - a.dphi + 2.0 * d2;
    if den == 0.0 {
        return None;
    }
    let alpha = b.alpha - (b.alpha - a.alpha) * (b.dphi + d2 - d1) / den;
    alpha.is_finite().then_some(alpha)
}

/// L-BFGS with a strong-Wolfe line search.
///
/// A failed line search is retried once along the steepest-descent direction
/// with the history cleared before the run gives up. Accepted steps satisfy
/// sufficient decrease, so the final iterate is the best one seen.
pub fn lbfgs_minimize(
    objective: &mut dyn Objective,
    params: &mut [f64],
    state: &mut LbfgsState,
    stop: StopCriteria,
) -> Result<OptimReport> {
    let cfg = state.config;
    let n = params.len();
    let mut g = vec![0.0; n];
    let mut f = objective.evaluate(params, &mut g)?;
    let mut evaluations = 1;
    let mut k = 0;
    loop {
        let progress = Progress {
            iteration: k,
            loss: f,
            grad_norm: norm(&g),
            params,
        };
        let control = objective.accepted(&progress);
        if control == Control::Continue {
            if !f.is_finite() {
                return Err(Error::NonFiniteGradient { index: 0 });
            }
            check_finite(&g)?;
        }
        let status = if control == Control::Stop {
            Some(Status::Stopped)
        } else if f <= stop.loss_threshold {
            Some(Status::Converged)
        } else if g.iter().all(|v| v.abs() <= cfg.grad_tol) {
            Some(Status::Stationary)
        } else if k >= stop.max_iters {
            Some(Status::BudgetExhausted)
        } else {
            None
        };
        if let Some(status) = status {
            return Ok(OptimReport {
                status,
                iterations: k,
                evaluations,
                final_loss: f,
                best_loss: f,
            });
        }

        let mut accepted = None;
        for attempt in 0..2 {
            if attempt == 1 {
                state.clear();
            }
            let mut d = state.direction(&g);
            let mut dphi0 = dot(&g, &d);
            if !(dphi0 < 0.0) {
                state.clear();
                d = g.iter().map(|v| -v).collect();
                dphi0 = -dot(&g, &g);
            }
            let alpha_init = if state.is_empty() {
                (1.0 / norm(&g)).min(1.0)
            } else {
                1.0
            };
            let mut ls = LineSearch {
                objective: &mut *objective,
                x0: params,
                d: &d,
                f0: f,
                dphi0,
                c1: cfg.c1,
                c2: cfg.c2,
                evals_left: cfg.max_evals,
                evaluations: 0,
            };
            let trial = ls.run(alpha_init)?;
            evaluations += ls.evaluations;
            if let Some(t) = trial {
                accepted = Some(t);
                break;
            }
            if state.is_empty() {
                break;
            }
        }
        let Some(t) = accepted else {
            // re-evaluate so the objective's last evaluation matches `params`
            f = objective.evaluate(params, &mut g)?;
            evaluations += 1;
            return Ok(OptimReport {
                status: Status::LineSearchFailed,
                iterations: k,
                evaluations,
                final_loss: f,
                best_loss: f,
            });
        };
        let s: Vec<f64> = t.x.iter().zip(params.iter()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = t.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        state.push(s, y);
        params.copy_from_slice(&t.x);
        g = t.g;
        f = t.f;
        k += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_is_lr_sized() {
        let (p, st) = adam_step(AdamState::new(1, AdamConfig::default()), &[1.0], &[2.0]).unwrap();
        assert!((1.0 - p[0] - 3e-4).abs() < 1e-10);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn adam_zero_gradient() {
        let (p, st) = adam_step(AdamState::new(2, AdamConfig::default()), &[1.0, -2.0], &[0.0; 2]).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn adam_rejects_nan() {
        let mut st = AdamState::new(2, AdamConfig::default());
        let mut p = [0.0, 0.0];
        assert!(matches!(
            st.step(&mut p, &[1.0, f64::NAN]),
            Err(Error::NonFiniteGradient { index: 1 })
        ));
    }

    #[test]
    fn adam_minimizes_square() {
        let mut obj = |x: &[f64], g: &mut [f64]| {
            g[0] = 2.0 * x[0];
            Ok(x[0] * x[0])
        };
        let mut p = [1.0];
        let stop = StopCriteria {
            loss_threshold: 1e-6,
            max_iters: 20000,
        };
        let r = adam_minimize(&mut obj, &mut p, AdamConfig::default(), stop).unwrap();
        assert!(p[0].abs() < 1e-3);
        assert_eq!(r.status, Status::Converged);
    }

    #[test]
    fn lbfgs_quadratic() {
        let a = [[3.0, 0.5], [0.5, 1.0]];
        let b = [1.0, -2.0];
        let mut obj = |x: &[f64], g: &mut [f64]| {
            let ax = [a[0][0] * x[0] + a[0][1] * x[1], a[1][0] * x[0] + a[1][1] * x[1]];
            g[0] = ax[0] - b[0];
            g[1] = ax[1] - b[1];
            Ok(0.5 * (x[0] * ax[0] + x[1] * ax[1]) - b[0] * x[0] - b[1] * x[1])
        };
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        let xs = [
            (a[1][1] * b[0] - a[0][1] * b[1]) / det,
            (a[0][0] * b[1] - a[1][0] * b[0]) / det,
        ];
        let mut p = [0.0, 0.0];
        let mut st = LbfgsState::new(LbfgsConfig::default());
        let stop = StopCriteria {
            loss_threshold: f64::NEG_INFINITY,
            max_iters: 10,
        };
        lbfgs_minimize(&mut obj, &mut p, &mut st, stop).unwrap();
        assert!((p[0] - xs[0]).abs() < 1e-10 && (p[1] - xs[1]).abs() < 1e-10, "{p:?}");
    }

    #[test]
    fn lbfgs_stationary_start() {
        let mut calls = 0;
        let mut obj = |_: &[f64], g: &mut [f64]| {
            calls += 1;
            g.fill(0.0);
            Ok(1.0)
        };
        let mut p = [0.3, 0.7];
        let mut st = LbfgsState::new(LbfgsConfig::default());
        let stop = StopCriteria {
            loss_threshold: 0.0,
            max_iters: 100,
        };
        let r = lbfgs_minimize(&mut obj, &mut p, &mut st, stop).unwrap();
        assert_eq!(r.status, Status::Stationary);
        assert_eq!(r.iterations, 0);
        assert_eq!(p, [0.3, 0.7]);
        assert_eq!(calls, 1);
    }

    #[test]
    fn curvature_guard() {
        let mut st = LbfgsState::new(LbfgsConfig::default());
        assert!(!st.push(vec![1.0, 0.0], vec![-1.0, 0.0]));
        assert!(!st.push(vec![1.0, 0.0], vec![1e-12, 1.0]));
        assert!(st.push(vec![1e-6, 0.0], vec![1e-6, 0.0]));
        assert_eq!(st.len(), 1);
        assert_eq!(st.skipped(), 2);
    }

    fn rosenbrock(x: &[f64], g: &mut [f64]) -> Result<f64> {
        let (a, b) = (x[0], x[1]);
        g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
        g[1] = 200.0 * (b - a * a);
        Ok((1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2))
    }

    struct Recorder(Vec<f64>);

    impl Objective for Recorder {
        fn evaluate(&mut self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
            rosenbrock(x, grad)
        }

        fn accepted(&mut self, p: &Progress<'_>) -> Control {
            self.0.push(p.loss);
            Control::Continue
        }
    }

    #[test]
    fn lbfgs_rosenbrock_monotone() {
        let mut obj = Recorder(Vec::new());
        let mut p = [-1.2, 1.0];
        let mut st = LbfgsState::new(LbfgsConfig::default());
        let stop = StopCriteria {
            loss_threshold: f64::NEG_INFINITY,
            max_iters: 200,
        };
        let r = lbfgs_minimize(&mut obj, &mut p, &mut st, stop).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-5 && (p[1] - 1.0).abs() < 1e-5, "{p:?} {r:?}");
        assert!(obj.0.windows(2).all(|w| w[1] <= w[0]));
        for (s, y) in st.pairs() {
            assert!(dot(s, y) > 1e-10 * norm(s) * norm(y));
        }
        let mut again = [-1.2, 1.0];
        lbfgs_minimize(&mut Recorder(Vec::new()), &mut again, &mut LbfgsState::new(LbfgsConfig::default()), stop)
            .unwrap();
        assert_eq!(p, again);
    }
}
