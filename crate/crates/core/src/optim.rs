//! Limited-memory BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    pub max_line_search: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self { memory: 10, max_iter: 200, grad_tol: 1e-9, c1: 1e-4, c2: 0.9, max_line_search: 40 }
    }
}

impl LbfgsConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.memory >= 1
            && self.grad_tol >= 0.0
            && 0.0 < self.c1
            && self.c1 < self.c2
            && self.c2 < 1.0
            && self.max_line_search >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid L-BFGS config {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsReport {
    pub x: DVector<f64>,
    pub value: f64,
    pub gradient: DVector<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    /// Gradient norm fell below the tolerance.
    pub converged: bool,
}

struct Objective<F> {
    f: F,
    evaluations: usize,
}

impl<F: FnMut(&DVector<f64>) -> (f64, DVector<f64>)> Objective<F> {
    fn eval(&mut self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        self.evaluations += 1;
        let (v, g) = (self.f)(x);
        if v.is_finite() && g.iter().all(|c| c.is_finite()) {
            (v, g)
        } else {
            (f64::INFINITY, g)
        }
    }
}

struct Trial {
    alpha: f64,
    value: f64,
    grad: DVector<f64>,
    slope: f64,
}

/// Minimizes `f`, which returns the value and gradient at a point.
pub fn minimize<F>(f: F, x0: DVector<f64>, cfg: &LbfgsConfig) -> Result<LbfgsReport>
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    cfg.validate()?;
    let mut obj = Objective { f, evaluations: 0 };
    let mut x = x0;
    let (mut value, mut grad) = obj.eval(&x);
    if !value.is_finite() {
        return Err(Error::Domain("objective is not finite at the initial point".into()));
    }
    let mut history: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    while iterations < cfg.max_iter && grad.norm() >= cfg.grad_tol {
        let mut dir = two_loop(&grad, &history);
        if dir.dot(&grad) >= 0.0 {
            history.clear();
            dir = -&grad;
        }
        let alpha0 = if history.is_empty() { (1.0 / grad.norm()).min(1.0) } else { 1.0 };
        let Some(step) = line_search(&mut obj, &x, value, &grad, &dir, alpha0, cfg) else {
            if history.is_empty() {
                break;
            }
            history.clear();
            continue;
        };
        iterations += 1;
        let s = &dir * step.alpha;
        let y = &step.grad - &grad;
        let sy = s.dot(&y);
        x += &s;
        value = step.value;
        grad = step.grad;
        if sy > 1e-12 * s.norm() * y.norm() {
            if history.len() == cfg.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
    }
    let converged = grad.norm() < cfg.grad_tol;
    Ok(LbfgsReport { x, value, gradient: grad, iterations, evaluations: obj.evaluations, converged })
}

fn two_loop(grad: &DVector<f64>, history: &VecDeque<(DVector<f64>, DVector<f64>, f64)>) -> DVector<f64> {
    let mut q = grad.clone();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * s.dot(&q);
        q.axpy(-a, y, 1.0);
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        q *= s.dot(y) / y.norm_squared();
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * y.dot(&q);
        q.axpy(a - b, s, 1.0);
    }
    -q
}

fn line_search<F>(
    obj: &mut Objective<F>,
    x: &DVector<f64>,
    f0: f64,
    g0: &DVector<f64>,
    dir: &DVector<f64>,
    alpha0: f64,
    cfg: &LbfgsConfig,
) -> Option<Trial>
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let d0 = g0.dot(dir);
    let mut evals = 0;
    let probe = |obj: &mut Objective<F>, alpha: f64| {
        let (value, grad) = obj.eval(&(x + dir * alpha));
        let slope = grad.dot(dir);
        Trial { alpha, value, grad, slope }
    };
    let armijo = |t: &Trial| t.value <= f0 + cfg.c1 * t.alpha * d0;
    let curvature = |t: &Trial| t.slope.abs() <= -cfg.c2 * d0;

    let mut prev = Trial { alpha: 0.0, value: f0, grad: g0.clone(), slope: d0 };
    let mut alpha = alpha0;
    let mut best: Option<Trial> = None;
    let (mut lo, mut hi) = loop {
        if evals >= cfg.max_line_search {
            return best;
        }
        evals += 1;
        let t = probe(obj, alpha);
        if !armijo(&t) || (prev.alpha > 0.0 && t.value >= prev.value) {
            break (prev, t);
        }
        if curvature(&t) {
            return Some(t);
        }
        if t.slope >= 0.0 {
            break (t, prev);
        }
        alpha = (2.0 * alpha).min(1e10);
        if best.as_ref().is_none_or(|b| t.value < b.value) {
            best = Some(Trial { alpha: t.alpha, value: t.value, grad: t.grad.clone(), slope: t.slope });
        }
        prev = t;
    };
    // `lo` satisfies sufficient decrease with the lowest value seen so far.
    while evals < cfg.max_line_search {
        evals += 1;
        let (a, b) = (lo.alpha.min(hi.alpha), lo.alpha.max(hi.alpha));
        let width = b - a;
        if width <= f64::EPSILON * b.max(1.0) {
            break;
        }
        let mut alpha = cubic_min(&lo, &hi).unwrap_or(0.5 * (a + b));
        if !(alpha > a + 0.1 * width && alpha < b - 0.1 * width) {
            alpha = 0.5 * (a + b);
        }
        let t = probe(obj, alpha);
        if !armijo(&t) || t.value >= lo.value {
            hi = t;
        } else {
            if curvature(&t) {
                return Some(t);
            }
            if t.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = t;
        }
    }
    (lo.alpha > 0.0 && lo.value < f0).then_some(lo)
}

/// Minimizer of the cubic interpolating values and slopes at two trials.
fn cubic_min(p: &Trial, q: &Trial) -> Option<f64> {
    if !p.value.is_finite() || !q.value.is_finite() {
        return None;
    }
    let d1 = p.slope + q.slope - 3.0 * (p.value - q.value) / (p.alpha - q.alpha);
    let disc = d1 * d1 - p.slope * q.slope;
    if disc < 0.0 {
        return None;
    }
    let d2 = (q.alpha - p.alpha).signum() * disc.sqrt();
    let alpha = q.alpha - (q.alpha - p.alpha) * (q.slope + d2 - d1) / (q.slope - p.slope + 2.0 * d2);
    alpha.is_finite().then_some(alpha)
}
