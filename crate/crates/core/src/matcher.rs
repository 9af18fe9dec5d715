//! Entropic optimal-transport matching, split into per-class branches.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::elements::SemanticClass;
use crate::encoder::{cost_matrix, cost_matrix_backward, CostMatrix, EmbeddingSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SinkhornConfig {
    pub mu: f64,
    pub max_iter: usize,
    /// L1 row-marginal violation at which iteration stops.
    pub tol: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self { mu: 0.1, max_iter: 100, tol: 1e-9 }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0) || self.max_iter == 0 || !(self.tol >= 0.0) {
            return Err(Error::Config(format!("invalid sinkhorn config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub p: DMatrix<f64>,
    pub r: DVector<f64>,
    pub s: DVector<f64>,
    pub mu: f64,
    pub converged: bool,
    /// L1 row-marginal violation after the last iteration.
    pub violation: f64,
    pub iterations: usize,
    /// Log-potentials after each iteration, kept for the backward pass.
    trace: Vec<(DVector<f64>, DVector<f64>)>,
}

impl TransportPlan {
    fn empty(m: usize, n: usize, mu: f64) -> Self {
        Self {
            p: DMatrix::zeros(m, n),
            r: DVector::from_element(m, if m > 0 { 1.0 / m as f64 } else { 0.0 }),
            s: DVector::from_element(n, if n > 0 { 1.0 / n as f64 } else { 0.0 }),
            mu,
            converged: true,
            violation: 0.0,
            iterations: 0,
            trace: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    /// Largest absolute error over both marginals.
    pub fn marginal_error(&self) -> f64 {
        let rows = (self.p.column_sum() - &self.r).amax();
        let cols = (self.p.row_sum().transpose() - &self.s).amax();
        rows.max(cols)
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn check_prior(v: &DVector<f64>, name: &str) -> Result<()> {
    if v.iter().any(|x| !(*x > 0.0)) || (v.sum() - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("{name} must be positive and sum to one")));
    }
    Ok(())
}

/// Log-domain Sinkhorn scaling for `min <P, M> - mu H(P)` over `U(r, s)`.
pub fn sinkhorn(m: &CostMatrix, r: &DVector<f64>, s: &DVector<f64>, cfg: &SinkhornConfig) -> Result<TransportPlan> {
    cfg.validate()?;
    let cost = &m.0;
    let (rows, cols) = cost.shape();
    if r.len() != rows || s.len() != cols {
        return Err(Error::ShapeMismatch("priors do not match the cost matrix".into()));
    }
    if cost.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("cost matrix has non-finite entries".into()));
    }
    if rows == 0 || cols == 0 {
        return Ok(TransportPlan::empty(rows, cols, cfg.mu));
    }
    check_prior(r, "row prior")?;
    check_prior(s, "column prior")?;
    let c = cost.map(|v| -v / cfg.mu);
    let log_r = r.map(f64::ln);
    let log_s = s.map(f64::ln);
    let mut a = DVector::zeros(rows);
    let mut b = DVector::zeros(cols);
    let mut trace = Vec::new();
    let mut violation = f64::INFINITY;
    let mut plan = DMatrix::zeros(rows, cols);
    for _ in 0..cfg.max_iter {
        for i in 0..rows {
            a[i] = log_r[i] - log_sum_exp((0..cols).map(|j| b[j] + c[(i, j)]));
        }
        for j in 0..cols {
            b[j] = log_s[j] - log_sum_exp((0..rows).map(|i| a[i] + c[(i, j)]));
        }
        trace.push((a.clone(), b.clone()));
        plan = DMatrix::from_fn(rows, cols, |i, j| (a[i] + b[j] + c[(i, j)]).exp());
        violation = (plan.column_sum() - r).lp_norm(1);
        if violation < cfg.tol {
            break;
        }
    }
    Ok(TransportPlan {
        p: plan,
        r: r.clone(),
        s: s.clone(),
        mu: cfg.mu,
        converged: violation < cfg.tol,
        violation,
        iterations: trace.len(),
        trace,
    })
}

pub fn uniform_sinkhorn(m: &CostMatrix, cfg: &SinkhornConfig) -> Result<TransportPlan> {
    let (rows, cols) = m.0.shape();
    let r = DVector::from_element(rows, 1.0 / rows.max(1) as f64);
    let s = DVector::from_element(cols, 1.0 / cols.max(1) as f64);
    sinkhorn(m, &r, &s, cfg)
}

/// Gradient on the cost matrix by reverse mode through the recorded
/// iterations.
pub fn sinkhorn_backward(plan: &TransportPlan, m: &CostMatrix, upstream: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (rows, cols) = plan.p.shape();
    if m.0.shape() != (rows, cols) || upstream.shape() != (rows, cols) {
        return Err(Error::ShapeMismatch("sinkhorn backward shapes differ".into()));
    }
    if plan.is_empty() {
        return Ok(DMatrix::zeros(rows, cols));
    }
    let c = m.0.map(|v| -v / plan.mu);
    let g = upstream.component_mul(&plan.p);
    let mut dc = g.clone();
    let mut da: DVector<f64> = g.column_sum();
    let mut db: DVector<f64> = g.row_sum().transpose();
    for t in (0..plan.trace.len()).rev() {
        let (a, b) = &plan.trace[t];
        let mut da_acc = da.clone();
        for j in 0..cols {
            let w = db[j] / plan.s[j];
            if w == 0.0 {
                continue;
            }
            for i in 0..rows {
                let beta = (a[i] + c[(i, j)] + b[j]).exp() * w;
                da_acc[i] -= beta;
                dc[(i, j)] -= beta;
            }
        }
        let b_prev = if t == 0 { DVector::zeros(cols) } else { plan.trace[t - 1].1.clone() };
        let mut db_prev = DVector::zeros(cols);
        for i in 0..rows {
            let w = da_acc[i] / plan.r[i];
            if w == 0.0 {
                continue;
            }
            for j in 0..cols {
                let alpha = (b_prev[j] + c[(i, j)] + a[i]).exp() * w;
                db_prev[j] -= alpha;
                dc[(i, j)] -= alpha;
            }
        }
        db = db_prev;
        da = DVector::zeros(rows);
    }
    Ok(dc / -plan.mu)
}

/// One semantic branch: a class, the global indices of its members on both
/// sides, and the transport between them.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub class: SemanticClass,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub cost: CostMatrix,
    pub plan: TransportPlan,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BranchedPlans {
    pub branches: Vec<Branch>,
}

impl BranchedPlans {
    pub fn branch(&self, class: SemanticClass) -> Option<&Branch> {
        self.branches.iter().find(|b| b.class == class)
    }

    /// The plans assembled into one `m x n` matrix (zero across classes).
    pub fn dense(&self, m: usize, n: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(m, n);
        for b in &self.branches {
            for (bi, &i) in b.rows.iter().enumerate() {
                for (bj, &j) in b.cols.iter().enumerate() {
                    out[(i, j)] = b.plan.p[(bi, bj)];
                }
            }
        }
        out
    }
}

fn gather(z: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), z.ncols(), |r, c| z[(idx[r], c)])
}

/// Partitions by class and runs uniform-prior Sinkhorn per class.
pub fn match_branches(zf: &EmbeddingSet, zp: &EmbeddingSet, cfg: &SinkhornConfig) -> Result<BranchedPlans> {
    let mut classes: Vec<SemanticClass> = zf.classes.iter().chain(&zp.classes).copied().collect();
    classes.sort();
    classes.dedup();
    let mut branches = Vec::with_capacity(classes.len());
    for class in classes {
        let rows: Vec<usize> = (0..zf.len()).filter(|&i| zf.classes[i] == class).collect();
        let cols: Vec<usize> = (0..zp.len()).filter(|&j| zp.classes[j] == class).collect();
        let cost = cost_matrix(&gather(&zf.z, &rows), &gather(&zp.z, &cols))?;
        let plan = uniform_sinkhorn(&cost, cfg)?;
        branches.push(Branch { class, rows, cols, cost, plan });
    }
    Ok(BranchedPlans { branches })
}

/// Back-propagates per-branch plan gradients to both embedding matrices.
pub fn match_branches_backward(
    zf: &EmbeddingSet,
    zp: &EmbeddingSet,
    plans: &BranchedPlans,
    upstream: &[DMatrix<f64>],
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if upstream.len() != plans.branches.len() {
        return Err(Error::ShapeMismatch("one upstream gradient per branch expected".into()));
    }
    let mut dzf = DMatrix::zeros(zf.len(), zf.dim());
    let mut dzp = DMatrix::zeros(zp.len(), zp.dim());
    for (b, g) in plans.branches.iter().zip(upstream) {
        if b.plan.is_empty() {
            continue;
        }
        let dm = sinkhorn_backward(&b.plan, &b.cost, g)?;
        let (df, dp) = cost_matrix_backward(&gather(&zf.z, &b.rows), &gather(&zp.z, &b.cols), &b.cost, &dm);
        for (bi, &i) in b.rows.iter().enumerate() {
            let mut row = dzf.row_mut(i);
            row += df.row(bi);
        }
        for (bj, &j) in b.cols.iter().enumerate() {
            let mut row = dzp.row_mut(j);
            row += dp.row(bj);
        }
    }
    Ok((dzf, dzp))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    /// Index into the 2D elements.
    pub i: usize,
    /// Index into the 3D elements.
    pub j: usize,
    pub probability: f64,
}

pub const MIN_MATCHES: usize = 4;

/// All plan entries as global triples, sorted by probability descending
/// then `(i, j)` ascending, truncated to `top_k`.
pub fn rank_matches(plans: &BranchedPlans, top_k: usize) -> Vec<Match> {
    let mut all: Vec<Match> = plans
        .branches
        .iter()
        .flat_map(|b| {
            b.rows.iter().enumerate().flat_map(move |(bi, &i)| {
                b.cols
                    .iter()
                    .enumerate()
                    .map(move |(bj, &j)| Match { i, j, probability: b.plan.p[(bi, bj)] })
            })
        })
        .collect();
    all.sort_by(|x, y| {
        y.probability
            .total_cmp(&x.probability)
            .then(x.i.cmp(&y.i))
            .then(x.j.cmp(&y.j))
    });
    all.truncate(top_k);
    all
}

/// [`rank_matches`] with the minimum-size contract enforced.
pub fn prioritized_matches(plans: &BranchedPlans, top_k: usize) -> Result<Vec<Match>> {
    if top_k < MIN_MATCHES {
        return Err(Error::Config(format!("top_k must be at least {MIN_MATCHES}, got {top_k}")));
    }
    let total: usize = plans.branches.iter().map(|b| b.rows.len() * b.cols.len()).sum();
    if total < MIN_MATCHES {
        return Err(Error::InsufficientMatches { needed: MIN_MATCHES, got: total });
    }
    Ok(rank_matches(plans, top_k))
}

/// Matches as CSV lines `i,j,probability`.
pub fn matches_to_csv(matches: &[Match]) -> String {
    let mut out = String::from("i,j,probability\n");
    for m in matches {
        out.push_str(&format!("{},{},{}\n", m.i, m.j, m.probability));
    }
    out
}
