//! Training objective, implicit differentiation through the pose
//! refinement, and the Adam training loop.

use nalgebra::DMatrix;
use num_dual::{gradient, DualNum};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::elements::Taxonomy;
use crate::encoder::{encode_backward_into, EncoderWeights};
use crate::error::{Error, Result};
use crate::geometry::{rotate, rotation_angle, Pose, Vec3};
use crate::matcher::{match_branches, match_branches_backward, prioritized_matches, BranchedPlans, SinkhornConfig};
use crate::optim::LbfgsConfig;
use crate::pipeline::gate_mask;
use crate::pose::{params, ransac_p3p, weighted_pnpl, LineMode, Mat6, PnplProblem, RansacConfig, Vec6};
use crate::synthetic::ScenePair;

/// `Σ (1 - 2 C_ij) P_ij`.
pub fn correspondence_loss(p: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<f64> {
    if p.shape() != c.shape() {
        return Err(Error::ShapeMismatch(format!("plan {:?} vs ground truth {:?}", p.shape(), c.shape())));
    }
    Ok(p.zip_fold(c, 0.0, |acc, pij, cij| acc + (1.0 - 2.0 * cij) * pij))
}

/// Geodesic rotation angle (radians) plus translation distance (meters).
pub fn pose_loss(pose: &Pose, gt: &Pose) -> f64 {
    let r = gt.rotation_matrix().transpose() * pose.rotation_matrix();
    rotation_angle(&r) + (pose.translation - gt.translation).norm()
}

pub fn total_loss(lc: f64, lp: f64, gamma_p: f64) -> f64 {
    lc + gamma_p * lp
}

/// Sine and cosine of the relative rotation angle as functions of `r`.
fn relative_sin_cos<D: DualNum<Primitive = f64> + Copy>(r: &[D; 3], gt: &nalgebra::Matrix3<f64>) -> (D, D) {
    // M = R_gt^T R(r); column b of R(r) is R(r) e_b.
    let cols: Vec<[D; 3]> = (0..3)
        .map(|b| {
            let mut e = [D::from(0.0); 3];
            e[b] = D::from(1.0);
            rotate(r, &e)
        })
        .collect();
    let m = |a: usize, b: usize| {
        let mut s = D::from(0.0);
        for c in 0..3 {
            s += cols[b][c] * gt[(c, a)];
        }
        s
    };
    let trace = m(0, 0) + m(1, 1) + m(2, 2);
    let w = [(m(2, 1) - m(1, 2)) * 0.5, (m(0, 2) - m(2, 0)) * 0.5, (m(1, 0) - m(0, 1)) * 0.5];
    let s2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
    let sin = if s2.re() > 0.0 { s2.sqrt() } else { D::from(0.0) };
    (sin, (trace - 1.0) * 0.5)
}

/// Gradient of [`pose_loss`] with respect to `(r, t)`; zero where the loss
/// is not differentiable.
pub fn pose_loss_gradient(pose: &Pose, gt: &Pose) -> Vec6 {
    let rgt = gt.rotation_matrix();
    let r0 = nalgebra::SVector::<f64, 3>::from(pose.rotation);
    let (s, ds) = gradient(|r| relative_sin_cos(&[r[0], r[1], r[2]], &rgt).0, &r0);
    let (c, dc) = gradient(|r| relative_sin_cos(&[r[0], r[1], r[2]], &rgt).1, &r0);
    let mut g = Vec6::zeros();
    if s > 1e-12 {
        let drot = (ds * c - dc * s) / (s * s + c * c);
        g.fixed_rows_mut::<3>(0).copy_from(&drot);
    }
    let dt = pose.translation - gt.translation;
    let n = dt.norm();
    if n > 0.0 {
        g.fixed_rows_mut::<3>(3).copy_from(&(dt / n));
    }
    g
}

/// Plan gradients of a scalar loss through the refined pose.
#[derive(Debug, Clone, PartialEq)]
pub struct PnplBackward {
    pub point: DMatrix<f64>,
    pub line: DMatrix<f64>,
    /// The exact Hessian was not positive definite and the Gauss-Newton
    /// approximation was used.
    pub gauss_newton: bool,
}

/// Largest admissible Hessian condition number.
pub const MAX_CONDITION: f64 = 1e10;

fn point_residual_vector<D: DualNum<Primitive = f64> + Copy>(f: &Vec3, p: &Vec3, r: &[D; 3], t: &[D; 3], k: usize) -> D {
    let x = rotate(r, &[D::from(p.x), D::from(p.y), D::from(p.z)]);
    let x = [x[0] + t[0], x[1] + t[1], x[2] + t[2]];
    let inv = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt().recip();
    -(x[k] * inv) + f[k]
}

/// `g` with `line_cost = g² / 2`.
fn line_root<D: DualNum<Primitive = f64> + Copy>(n: &Vec3, q: &Vec3, r: &[D; 3], t: &[D; 3]) -> D {
    let x = rotate(r, &[D::from(q.x), D::from(q.y), D::from(q.z)]);
    let x = [x[0] + t[0], x[1] + t[1], x[2] + t[2]];
    let inv = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt().recip();
    let c = (x[0] * n.x + x[1] * n.y + x[2] * n.z) * inv;
    let rem = -(c * c) + 1.0;
    let root = if rem.re() > 0.0 { rem.sqrt() } else { D::from(0.0) };
    c * ((root + 1.0).recip() * 2.0).sqrt()
}

fn split<D: Copy>(x: &nalgebra::SVector<D, 6>) -> ([D; 3], [D; 3]) {
    ([x[0], x[1], x[2]], [x[3], x[4], x[5]])
}

/// Gauss-Newton approximation of the objective Hessian.
pub fn gauss_newton_hessian(problem: &PnplProblem, pose: &Pose) -> Mat6 {
    let x0 = params(pose);
    let mut h = Mat6::zeros();
    let plan = &problem.point.plan;
    for j in 0..plan.ncols() {
        for i in 0..plan.nrows() {
            let w = plan[(i, j)];
            if w == 0.0 {
                continue;
            }
            let (f, p) = (problem.point.bearings[i], problem.point.points[j]);
            for k in 0..3 {
                let (_, g) = gradient(|x| { let (r, t) = split(&x); point_residual_vector(&f, &p, &r, &t, k) }, &x0);
                h += g * g.transpose() * w;
            }
        }
    }
    let plan = &problem.line.plan;
    for j in 0..plan.ncols() {
        for i in 0..plan.nrows() {
            let w = plan[(i, j)];
            if w == 0.0 {
                continue;
            }
            let n = *problem.normal(i);
            let p = problem.line.points[j];
            let q = p + problem.line.directions3d[j];
            let ends: Vec<Vec3> = match problem.line_mode {
                LineMode::Offset => vec![q],
                LineMode::BothEndpoints => vec![p, q],
            };
            for e in ends {
                let (_, g) = gradient(|x| { let (r, t) = split(&x); line_root(&n, &e, &r, &t) }, &x0);
                h += g * g.transpose() * w;
            }
        }
    }
    h
}

/// Implicit-function gradient: with `H` the objective Hessian at the
/// optimum and `λ = H⁻¹ ū`, `∂L/∂P_ij = -λ · ∇ρ_ij`.
pub fn pnpl_backward(problem: &PnplProblem, pose: &Pose, upstream: &Vec6) -> Result<PnplBackward> {
    let (m, n) = problem.point.plan.shape();
    let (m2, n2) = problem.line.plan.shape();
    if upstream.iter().all(|u| *u == 0.0) {
        return Ok(PnplBackward { point: DMatrix::zeros(m, n), line: DMatrix::zeros(m2, n2), gauss_newton: false });
    }
    let (_, _, h) = problem.hessian(pose);
    let h = (h + h.transpose()) * 0.5;
    let mut gauss_newton = false;
    let mut eig = h.symmetric_eigen();
    if !(eig.eigenvalues.min() > 0.0) {
        gauss_newton = true;
        let gn = gauss_newton_hessian(problem, pose);
        eig = ((gn + gn.transpose()) * 0.5).symmetric_eigen();
    }
    let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    if !(lo > 0.0) || hi / lo > MAX_CONDITION {
        return Err(Error::DegenerateProblem(format!(
            "pose Hessian is singular or ill-conditioned (eigenvalues {lo:.3e} .. {hi:.3e})"
        )));
    }
    let lambda = eig.eigenvectors
        * Vec6::from_fn(|k, _| (eig.eigenvectors.column(k).dot(upstream)) / eig.eigenvalues[k]);
    let x0 = params(pose);
    let point = DMatrix::from_fn(m, n, |i, j| {
        let (_, g) = gradient(|x| { let (r, t) = split(&x); problem.point_term(i, j, &r, &t) }, &x0);
        -lambda.dot(&g)
    });
    let line = DMatrix::from_fn(m2, n2, |i, j| {
        let (_, g) = gradient(|x| { let (r, t) = split(&x); problem.line_term(i, j, &r, &t) }, &x0);
        -lambda.dot(&g)
    });
    Ok(PnplBackward { point, line, gauss_newton })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub gamma_p: f64,
    /// Epochs trained with `gamma_p = 0` before the pose loss is enabled.
    pub warmup_epochs: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub sinkhorn: SinkhornConfig,
    pub ransac: RansacConfig,
    pub refine: LbfgsConfig,
    pub gate: f64,
    pub line_mode: LineMode,
    /// Worker threads for per-pair gradients; 0 uses all cores.
    pub threads: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            gamma_p: 1.0,
            warmup_epochs: 120,
            epochs: 200,
            learning_rate: 5e-4,
            batch_size: 12,
            sinkhorn: SinkhornConfig::default(),
            ransac: RansacConfig::default(),
            refine: LbfgsConfig::default(),
            gate: 0.02,
            line_mode: LineMode::Offset,
            threads: 0,
        }
    }
}

impl LossConfig {
    /// Short schedule for desk-scale runs: 30 warm-up epochs, then 20 joint.
    pub fn desk() -> Self {
        Self { warmup_epochs: 30, epochs: 50, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_p >= 0.0) || !(self.learning_rate > 0.0) || self.batch_size == 0 || !(self.gate > 0.0) {
            return Err(Error::Config(format!("invalid loss config {self:?}")));
        }
        self.sinkhorn.validate()?;
        self.ransac.validate()?;
        self.refine.validate()
    }

    /// Pose-loss multiplier in effect for `epoch` (0-based).
    pub fn gamma_at(&self, epoch: usize) -> f64 {
        if epoch < self.warmup_epochs {
            0.0
        } else {
            self.gamma_p
        }
    }
}

/// Losses of one pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairLoss {
    pub lc: f64,
    /// `None` when the pose loss was not evaluated or the pose solve failed.
    pub lp: Option<f64>,
    pub gauss_newton: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub epoch: usize,
    pub gamma_p: f64,
    /// Mean correspondence loss.
    pub lc: f64,
    /// Mean pose loss over pairs where it was evaluated.
    pub lp: Option<f64>,
    pub total: f64,
    pub pose_failures: usize,
    pub gauss_newton_fallbacks: usize,
    pub per_pair: Vec<PairLoss>,
}

impl LossReport {
    fn from_pairs(epoch: usize, gamma_p: f64, per_pair: Vec<PairLoss>) -> Self {
        let k = per_pair.len().max(1) as f64;
        let lc = per_pair.iter().map(|p| p.lc).sum::<f64>() / k;
        let lps: Vec<f64> = per_pair.iter().filter_map(|p| p.lp).collect();
        let lp = (!lps.is_empty()).then(|| lps.iter().sum::<f64>() / lps.len() as f64);
        let pose_failures = if gamma_p > 0.0 { per_pair.len() - lps.len() } else { 0 };
        let gauss_newton_fallbacks = per_pair.iter().filter(|p| p.gauss_newton).count();
        Self {
            epoch,
            gamma_p,
            lc,
            lp,
            total: total_loss(lc, lp.unwrap_or(0.0), gamma_p),
            pose_failures,
            gauss_newton_fallbacks,
            per_pair,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Losses of the initial weights, before any update.
    pub initial: LossReport,
    pub epochs: Vec<LossReport>,
    /// Number of pose-refinement solves performed during training.
    pub pose_solver_calls: usize,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,gamma_p,lc,lp,total,pose_failures,gauss_newton_fallbacks\n");
        for r in std::iter::once(&self.initial).chain(&self.epochs) {
            let lp = r.lp.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.epoch, r.gamma_p, r.lc, lp, r.total, r.pose_failures, r.gauss_newton_fallbacks
            ));
        }
        out
    }
}

fn branch_correspondence(plans: &BranchedPlans, pair: &ScenePair) -> Vec<DMatrix<f64>> {
    plans
        .branches
        .iter()
        .map(|b| {
            DMatrix::from_fn(b.rows.len(), b.cols.len(), |bi, bj| {
                if pair.gt_correspondence.contains(b.rows[bi], b.cols[bj]) {
                    1.0
                } else {
                    0.0
                }
            })
        })
        .collect()
}

/// Result of the differentiable pose stage for one pair.
struct PoseStage {
    lp: f64,
    dense: DMatrix<f64>,
    gauss_newton: bool,
}

fn pose_stage(
    pair: &ScenePair,
    plans: &BranchedPlans,
    tax: &Taxonomy,
    cfg: &LossConfig,
    gamma_p: f64,
    with_grad: bool,
) -> Result<PoseStage> {
    let e2 = &pair.elements2d;
    let e3 = &pair.submap.elements;
    let (m, n) = (e2.len(), e3.len());
    let matches = prioritized_matches(plans, cfg.ransac.top_k)?;
    let coarse = ransac_p3p(&matches, e2, e3, tax, &cfg.ransac)?;
    let mask = gate_mask(e2, e3, &coarse.pose, cfg.gate);
    let plan = plans.dense(m, n).component_mul(&mask);
    let problem = PnplProblem::from_elements(e2, e3, &plan, tax, cfg.line_mode)?;
    if problem.correspondence_count() == 0 {
        return Err(Error::InsufficientMatches { needed: 1, got: 0 });
    }
    let refined = weighted_pnpl(&problem, &coarse.pose, &cfg.refine)?;
    let lp = pose_loss(&refined.pose, &pair.gt_pose);
    if !lp.is_finite() {
        return Err(Error::Domain("non-finite pose loss".into()));
    }
    if !with_grad {
        return Ok(PoseStage { lp, dense: DMatrix::zeros(m, n), gauss_newton: false });
    }
    let upstream = pose_loss_gradient(&refined.pose, &pair.gt_pose) * gamma_p;
    let back = pnpl_backward(&problem, &refined.pose, &upstream)?;
    let mut dense = back.point;
    for (a, &i) in problem.line.rows.iter().enumerate() {
        for (b, &j) in problem.line.cols.iter().enumerate() {
            dense[(i, j)] += back.line[(a, b)];
        }
    }
    Ok(PoseStage { lp, dense: dense.component_mul(&mask), gauss_newton: back.gauss_newton })
}

/// Forward pass of one pair; accumulates the gradient of
/// `L_c + gamma_p L_p` into `grad` when given.
pub fn pair_loss(
    pair: &ScenePair,
    weights: &EncoderWeights,
    tax: &Taxonomy,
    cfg: &LossConfig,
    gamma_p: f64,
    grad: Option<&mut EncoderWeights>,
) -> Result<PairLoss> {
    let (zf, cf) = weights.encode_image(&pair.elements2d)?;
    let (zp, cp) = weights.encode_map(&pair.submap.elements, &pair.submap.origin)?;
    let plans = match_branches(&zf, &zp, &cfg.sinkhorn)?;
    let truth = branch_correspondence(&plans, pair);
    let mut lc = 0.0;
    let mut upstream = Vec::with_capacity(truth.len());
    for (b, c) in plans.branches.iter().zip(&truth) {
        lc += correspondence_loss(&b.plan.p, c)?;
        upstream.push(c.map(|v| 1.0 - 2.0 * v));
    }
    let mut lp = None;
    let mut gauss_newton = false;
    if gamma_p > 0.0 {
        if let Ok(stage) = pose_stage(pair, &plans, tax, cfg, gamma_p, grad.is_some()) {
            lp = Some(stage.lp);
            gauss_newton = stage.gauss_newton;
            for (g, b) in upstream.iter_mut().zip(&plans.branches) {
                for (bi, &i) in b.rows.iter().enumerate() {
                    for (bj, &j) in b.cols.iter().enumerate() {
                        g[(bi, bj)] += stage.dense[(i, j)];
                    }
                }
            }
        }
    }
    if let Some(grad) = grad {
        let (dzf, dzp) = match_branches_backward(&zf, &zp, &plans, &upstream)?;
        encode_backward_into(&cf, weights, &dzf, grad)?;
        encode_backward_into(&cp, weights, &dzp, grad)?;
    }
    Ok(PairLoss { lc, lp, gauss_newton })
}

/// Losses of `weights` over a dataset without updating anything.
pub fn evaluate_losses(
    dataset: &[ScenePair],
    weights: &EncoderWeights,
    tax: &Taxonomy,
    cfg: &LossConfig,
    gamma_p: f64,
) -> Result<LossReport> {
    let per_pair = parallel_map(dataset, cfg.threads, |pair| pair_loss(pair, weights, tax, cfg, gamma_p, None))?;
    Ok(LossReport::from_pairs(0, gamma_p, per_pair))
}

fn worker_count(threads: usize, jobs: usize) -> usize {
    let auto = std::thread::available_parallelism().map_or(1, |n| n.get());
    let t = if threads == 0 { auto } else { threads };
    t.clamp(1, jobs.max(1))
}

/// Order-preserving parallel map over a slice; `threads == 0` uses all cores.
pub fn parallel_map<T: Sync, R: Send>(
    items: &[T],
    threads: usize,
    f: impl Fn(&T) -> Result<R> + Sync,
) -> Result<Vec<R>> {
    let workers = worker_count(threads, items.len());
    if workers <= 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    let results: Vec<Result<Vec<R>>> = std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| s.spawn(|| part.iter().map(&f).collect::<Result<Vec<R>>>()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

/// Adam optimizer state.
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: i32,
    m: EncoderWeights,
    v: EncoderWeights,
}

impl Adam {
    pub fn new(weights: &EncoderWeights, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: weights.zeros_like(),
            v: weights.zeros_like(),
        }
    }

    pub fn update(&mut self, weights: &mut EncoderWeights, grad: &EncoderWeights) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let tensors = weights.tensors_mut().into_iter().zip(grad.tensors());
        let state = self.m.tensors_mut().into_iter().zip(self.v.tensors_mut());
        for ((w, g), (m, v)) in tensors.zip(state) {
            for k in 0..w.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                w[k] -= self.learning_rate * (m[k] / c1) / ((v[k] / c2).sqrt() + self.epsilon);
            }
        }
    }
}

/// Trains both encoder streams on `dataset`. Deterministic for a given seed.
pub fn train(
    dataset: &[ScenePair],
    weights: &EncoderWeights,
    cfg: &LossConfig,
    seed: u64,
    tax: &Taxonomy,
) -> Result<(EncoderWeights, TrainHistory)> {
    cfg.validate()?;
    weights.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("training dataset is empty".into()));
    }
    if let Some(k) = dataset.iter().position(|p| !p.valid) {
        return Err(Error::Config(format!("training pair {k} is not valid")));
    }
    let mut w = weights.clone();
    let initial = evaluate_losses(dataset, &w, tax, cfg, cfg.gamma_at(0))?;
    let mut adam = Adam::new(&w, cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut pose_solver_calls = 0;
    for epoch in 0..cfg.epochs {
        let gamma_p = cfg.gamma_at(epoch);
        order.shuffle(&mut rng);
        let mut per_pair = Vec::with_capacity(dataset.len());
        for batch in order.chunks(cfg.batch_size) {
            let pairs: Vec<&ScenePair> = batch.iter().map(|&k| &dataset[k]).collect();
            let results = parallel_map(&pairs, cfg.threads, |pair| {
                let mut g = w.zeros_like();
                let loss = pair_loss(pair, &w, tax, cfg, gamma_p, Some(&mut g))?;
                Ok((loss, g))
            })?;
            let mut grad = w.zeros_like();
            let scale = 1.0 / pairs.len() as f64;
            for (loss, g) in results {
                grad.add_scaled(&g, scale);
                per_pair.push(loss);
            }
            if gamma_p > 0.0 {
                pose_solver_calls += pairs.len();
            }
            adam.update(&mut w, &grad);
        }
        epochs.push(LossReport::from_pairs(epoch + 1, gamma_p, per_pair));
    }
    Ok((w, TrainHistory { initial, epochs, pose_solver_calls }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn correspondence_loss_examples() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let p = DMatrix::from_element(2, 2, 0.25);
        assert!((correspondence_loss(&p, &c).unwrap() - 0.5).abs() < 1e-15);
        let id = DMatrix::identity(3, 3);
        assert_eq!(correspondence_loss(&id, &id).unwrap(), -3.0);
        assert!(correspondence_loss(&p, &DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn pose_loss_examples() {
        let gt = Pose::identity();
        assert_eq!(pose_loss(&gt, &gt), 0.0);
        let rot = Pose::new(Vec3::new(0.0, 0.0, FRAC_PI_2), Vec3::zeros());
        assert!((pose_loss(&rot, &gt) - FRAC_PI_2).abs() < 1e-12);
        let shift = Pose::new(Vec3::zeros(), Vec3::new(3.0, 4.0, 0.0));
        assert!((pose_loss(&shift, &gt) - 5.0).abs() < 1e-12);
        assert_eq!(total_loss(0.5, 0.3, 0.0), 0.5);
        assert!((total_loss(0.5, 0.3, 1.0) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn pose_loss_gradient_matches_differences() {
        let gt = Pose::new(Vec3::new(0.1, 0.2, -0.3), Vec3::new(1.0, 0.0, 2.0));
        let pose = Pose::new(Vec3::new(0.3, -0.1, 0.2), Vec3::new(0.5, 0.4, 1.0));
        let g = pose_loss_gradient(&pose, &gt);
        let x = pose.to_params();
        for k in 0..6 {
            let h = 1e-6;
            let (mut a, mut b) = (x, x);
            a[k] += h;
            b[k] -= h;
            let fd = (pose_loss(&Pose::from_params(&a), &gt) - pose_loss(&Pose::from_params(&b), &gt)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-7, "{k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn warmup_schedule() {
        let cfg = LossConfig { warmup_epochs: 2, ..Default::default() };
        assert_eq!(cfg.gamma_at(1), 0.0);
        assert_eq!(cfg.gamma_at(2), 1.0);
    }
}
