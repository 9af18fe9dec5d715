//! Camera pose estimation: P3P-RANSAC initialization and the weighted
//! point-and-line refinement.

pub mod p3p;
pub mod ransac;

use nalgebra::{DMatrix, DVector, SMatrix, SVector};
use num_dual::{gradient, hessian, DualNum};
use serde::{Deserialize, Serialize};

use crate::elements::{Element2D, Element3D, Taxonomy};
use crate::error::{Error, Result};
use crate::geometry::{line_cost, plane_normal, point_cost, rotation_exp, rotation_log_unchecked, Pose, Vec3};
use crate::optim::{minimize, LbfgsConfig};

pub use p3p::p3p;
pub use ransac::{ransac_p3p, CoarseResult, RansacConfig};

pub type Vec6 = SVector<f64, 6>;
pub type Mat6 = SMatrix<f64, 6, 6>;

/// Which map points the line term constrains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineMode {
    /// The single offset point `p + v3d`.
    #[default]
    Offset,
    /// Both `p` and `p + v3d`.
    BothEndpoints,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointBranch {
    pub bearings: Vec<Vec3>,
    pub points: Vec<Vec3>,
    /// `bearings.len() x points.len()` weights.
    pub plan: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineBranch {
    pub bearings: Vec<Vec3>,
    pub directions2d: Vec<Vec3>,
    pub points: Vec<Vec3>,
    pub directions3d: Vec<Vec3>,
    pub plan: DMatrix<f64>,
    /// Global 2D index of each row.
    pub rows: Vec<usize>,
    /// Global 3D index of each column.
    pub cols: Vec<usize>,
}

impl LineBranch {
    pub fn empty() -> Self {
        Self {
            bearings: Vec::new(),
            directions2d: Vec::new(),
            points: Vec::new(),
            directions3d: Vec::new(),
            plan: DMatrix::zeros(0, 0),
            rows: Vec::new(),
            cols: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnplProblem {
    pub point: PointBranch,
    pub line: LineBranch,
    pub line_mode: LineMode,
    normals: Vec<Vec3>,
}

fn check_plan(plan: &DMatrix<f64>, rows: usize, cols: usize, name: &str) -> Result<()> {
    if plan.shape() != (rows, cols) {
        return Err(Error::ShapeMismatch(format!(
            "{name} plan is {:?}, expected ({rows}, {cols})",
            plan.shape()
        )));
    }
    if plan.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::Domain(format!("{name} plan has negative or non-finite weights")));
    }
    Ok(())
}

impl PnplProblem {
    pub fn new(point: PointBranch, line: LineBranch, line_mode: LineMode) -> Result<Self> {
        check_plan(&point.plan, point.bearings.len(), point.points.len(), "point")?;
        let (m2, n2) = (line.bearings.len(), line.points.len());
        check_plan(&line.plan, m2, n2, "line")?;
        if line.directions2d.len() != m2
            || line.directions3d.len() != n2
            || line.rows.len() != m2
            || line.cols.len() != n2
        {
            return Err(Error::ShapeMismatch("line branch fields have inconsistent lengths".into()));
        }
        let normals = line
            .bearings
            .iter()
            .zip(&line.directions2d)
            .map(|(f, v)| plane_normal(f, v))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { point, line, line_mode, normals })
    }

    /// Point branch over all elements with the dense `m x n` plan; line
    /// branch over the line-like elements with the matching sub-plan.
    pub fn from_elements(
        elements2d: &[Element2D],
        elements3d: &[Element3D],
        plan: &DMatrix<f64>,
        tax: &Taxonomy,
        line_mode: LineMode,
    ) -> Result<Self> {
        let point = PointBranch {
            bearings: elements2d.iter().map(|e| *e.bearing.as_vector()).collect(),
            points: elements3d.iter().map(|e| e.point).collect(),
            plan: plan.clone(),
        };
        check_plan(plan, elements2d.len(), elements3d.len(), "point")?;
        let rows: Vec<usize> = (0..elements2d.len()).filter(|&i| tax.is_line_like(elements2d[i].class)).collect();
        let cols: Vec<usize> = (0..elements3d.len()).filter(|&j| tax.is_line_like(elements3d[j].class)).collect();
        let line = LineBranch {
            bearings: rows.iter().map(|&i| *elements2d[i].bearing.as_vector()).collect(),
            directions2d: rows.iter().map(|&i| elements2d[i].direction).collect(),
            points: cols.iter().map(|&j| elements3d[j].point).collect(),
            directions3d: cols.iter().map(|&j| elements3d[j].direction).collect(),
            plan: DMatrix::from_fn(rows.len(), cols.len(), |a, b| plan[(rows[a], cols[b])]),
            rows,
            cols,
        };
        Self::new(point, line, line_mode)
    }

    pub fn normal(&self, row: usize) -> &Vec3 {
        &self.normals[row]
    }

    pub fn point_term<D: DualNum<Primitive = f64> + Copy>(&self, i: usize, j: usize, r: &[D; 3], t: &[D; 3]) -> D {
        point_cost(&self.point.bearings[i], &self.point.points[j], r, t)
    }

    pub fn line_term<D: DualNum<Primitive = f64> + Copy>(&self, i: usize, j: usize, r: &[D; 3], t: &[D; 3]) -> D {
        let n = &self.normals[i];
        let p = self.line.points[j];
        let q = p + self.line.directions3d[j];
        match self.line_mode {
            LineMode::Offset => line_cost(n, &q, r, t),
            LineMode::BothEndpoints => line_cost(n, &p, r, t) + line_cost(n, &q, r, t),
        }
    }

    pub fn objective_generic<D: DualNum<Primitive = f64> + Copy>(&self, r: &[D; 3], t: &[D; 3]) -> D {
        let mut total = D::from(0.0);
        for ((i, j), w) in nonzero(&self.point.plan) {
            total += self.point_term(i, j, r, t) * w;
        }
        for ((i, j), w) in nonzero(&self.line.plan) {
            total += self.line_term(i, j, r, t) * w;
        }
        total
    }

    pub fn objective(&self, pose: &Pose) -> f64 {
        let x = pose.to_params();
        self.objective_generic(&[x[0], x[1], x[2]], &[x[3], x[4], x[5]])
    }

    /// Value and gradient with respect to `(r, t)`.
    pub fn gradient(&self, pose: &Pose) -> (f64, Vec6) {
        gradient(|x| self.objective_generic(&[x[0], x[1], x[2]], &[x[3], x[4], x[5]]), &params(pose))
    }

    /// Value, gradient and Hessian with respect to `(r, t)`.
    pub fn hessian(&self, pose: &Pose) -> (f64, Vec6, Mat6) {
        hessian(|x| self.objective_generic(&[x[0], x[1], x[2]], &[x[3], x[4], x[5]]), &params(pose))
    }

    /// Number of nonzero plan entries across both branches.
    pub fn correspondence_count(&self) -> usize {
        nonzero(&self.point.plan).count() + nonzero(&self.line.plan).count()
    }
}

pub fn params(pose: &Pose) -> Vec6 {
    Vec6::from(pose.to_params())
}

fn nonzero(plan: &DMatrix<f64>) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
    let rows = plan.nrows();
    plan.iter()
        .enumerate()
        .filter(|(_, w)| **w != 0.0)
        .map(move |(k, w)| ((k % rows, k / rows), *w))
}

/// Angle-axis with angle in `[0, π]`.
pub fn canonical(pose: &Pose) -> Pose {
    if pose.rotation.norm() <= std::f64::consts::PI {
        return *pose;
    }
    Pose::new(rotation_log_unchecked(&rotation_exp(&pose.rotation)), pose.translation)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnplResult {
    pub pose: Pose,
    pub value: f64,
    pub initial_value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Quasi-Newton minimization of the plan-weighted point and line objective.
pub fn weighted_pnpl(problem: &PnplProblem, init: &Pose, cfg: &LbfgsConfig) -> Result<PnplResult> {
    if !init.is_finite() {
        return Err(Error::Domain("initial pose is not finite".into()));
    }
    let initial_value = problem.objective(init);
    if !initial_value.is_finite() {
        return Err(Error::Domain("objective is not finite at the initial pose".into()));
    }
    let report = minimize(
        |x: &DVector<f64>| {
            let (v, g) = problem.gradient(&Pose::from_params(x.as_slice()));
            (v, DVector::from_column_slice(g.as_slice()))
        },
        DVector::from_column_slice(&init.to_params()),
        cfg,
    )?;
    Ok(PnplResult {
        pose: canonical(&Pose::from_params(report.x.as_slice())),
        value: report.value,
        initial_value,
        gradient_norm: report.gradient.norm(),
        iterations: report.iterations,
        converged: report.converged,
    })
}

fn check_boolean(plan: &DMatrix<f64>, name: &str) -> Result<()> {
    if plan.iter().any(|w| *w != 0.0 && *w != 1.0) {
        return Err(Error::Domain(format!("{name} plan is not boolean")));
    }
    let rows_ok = plan.row_iter().all(|r| r.sum() <= 1.0);
    let cols_ok = plan.column_iter().all(|c| c.sum() <= 1.0);
    if !(rows_ok && cols_ok) {
        return Err(Error::Domain(format!("{name} plan is not one-to-one")));
    }
    Ok(())
}

fn key(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn cmp_keys(a: &[[f64; 3]], b: &[[f64; 3]]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        for (p, q) in x.iter().zip(y) {
            let o = p.total_cmp(q);
            if o.is_ne() {
                return o;
            }
        }
    }
    std::cmp::Ordering::Equal
}

/// Canonical one-to-one problem: correspondences sorted by their geometry so
/// the result does not depend on input order.
fn canonical_problem(problem: &PnplProblem) -> Result<PnplProblem> {
    let mut pts: Vec<(Vec3, Vec3)> = nonzero(&problem.point.plan)
        .map(|((i, j), _)| (problem.point.bearings[i], problem.point.points[j]))
        .collect();
    pts.sort_by(|a, b| cmp_keys(&[key(&a.0), key(&a.1)], &[key(&b.0), key(&b.1)]));
    let mut lines: Vec<(Vec3, Vec3, Vec3, Vec3)> = nonzero(&problem.line.plan)
        .map(|((i, j), _)| {
            (
                problem.line.bearings[i],
                problem.line.directions2d[i],
                problem.line.points[j],
                problem.line.directions3d[j],
            )
        })
        .collect();
    lines.sort_by(|a, b| {
        cmp_keys(&[key(&a.0), key(&a.1), key(&a.2), key(&a.3)], &[key(&b.0), key(&b.1), key(&b.2), key(&b.3)])
    });
    let point = PointBranch {
        bearings: pts.iter().map(|p| p.0).collect(),
        points: pts.iter().map(|p| p.1).collect(),
        plan: DMatrix::identity(pts.len(), pts.len()),
    };
    let line = LineBranch {
        bearings: lines.iter().map(|l| l.0).collect(),
        directions2d: lines.iter().map(|l| l.1).collect(),
        points: lines.iter().map(|l| l.2).collect(),
        directions3d: lines.iter().map(|l| l.3).collect(),
        plan: DMatrix::identity(lines.len(), lines.len()),
        rows: (0..lines.len()).collect(),
        cols: (0..lines.len()).collect(),
    };
    PnplProblem::new(point, line, problem.line_mode)
}

/// Starts refined by [`direct_pnpl`] besides the caller's initial pose.
const DIRECT_STARTS: usize = 3;
/// Cap on the P3P triples tried for initialization.
const DIRECT_TRIPLES: usize = 20;

/// Refinement with boolean one-to-one plans. Starting points are the given
/// pose and the P3P solutions of the point correspondences.
pub fn direct_pnpl(problem: &PnplProblem, init: &Pose, cfg: &LbfgsConfig) -> Result<PnplResult> {
    check_boolean(&problem.point.plan, "point")?;
    check_boolean(&problem.line.plan, "line")?;
    let count = problem.correspondence_count();
    if count < 4 {
        return Err(Error::InsufficientMatches { needed: 4, got: count });
    }
    let canon = canonical_problem(problem)?;
    let mut starts = vec![*init];
    let n = canon.point.points.len();
    let mut triples = 0;
    'outer: for a in 0..n {
        for b in a + 1..n {
            for c in b + 1..n {
                if triples == DIRECT_TRIPLES {
                    break 'outer;
                }
                triples += 1;
                let f = [canon.point.bearings[a], canon.point.bearings[b], canon.point.bearings[c]];
                let p = [canon.point.points[a], canon.point.points[b], canon.point.points[c]];
                starts.extend(p3p(&f, &p));
            }
        }
    }
    let mut scored: Vec<(f64, usize)> = starts
        .iter()
        .enumerate()
        .map(|(k, s)| (canon.objective(s), k))
        .filter(|(v, _)| v.is_finite())
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut best: Option<PnplResult> = None;
    for &(_, k) in scored.iter().take(DIRECT_STARTS) {
        let r = weighted_pnpl(&canon, &starts[k], cfg)?;
        if best.as_ref().is_none_or(|b| r.value < b.value) {
            best = Some(r);
        }
    }
    let mut best = best.ok_or_else(|| Error::Domain("no finite starting pose".into()))?;
    best.initial_value = canon.objective(init);
    Ok(best)
}
