#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semloc::geometry::{Pose, Vec3};
use semloc::pose::{LineBranch, LineMode, PnplProblem, PointBranch};

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A camera near the origin looking down +z at points 4 to 12 m away.
pub fn random_pose(rng: &mut impl Rng) -> Pose {
    let r = Vec3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2));
    let t = Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
    Pose::new(r, t)
}

pub fn random_points(rng: &mut impl Rng, n: usize) -> Vec<Vec3> {
    (0..n)
        .map(|_| Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-2.0..2.0), rng.random_range(4.0..12.0)))
        .collect()
}

/// Normalized image-plane direction from `a` to `b` under `pose`.
pub fn image_direction(pose: &Pose, a: &Vec3, b: &Vec3) -> Vec3 {
    let (x, y) = (pose.transform(a), pose.transform(b));
    Vec3::new(y.x / y.z - x.x / x.z, y.y / y.z - x.y / x.z, 0.0).normalize()
}

/// Points and vertical lines seen from `pose`, bearings perturbed by `noise`
/// radians, with the given plans.
pub fn problem_from(
    pose: &Pose,
    points: &[Vec3],
    lines: &[Vec3],
    noise: f64,
    rng: &mut impl Rng,
    point_plan: DMatrix<f64>,
    line_plan: DMatrix<f64>,
) -> PnplProblem {
    let mut jitter = |v: Vec3| {
        let d = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        (v.normalize() + d * noise).normalize()
    };
    let point = PointBranch {
        bearings: points.iter().map(|p| jitter(pose.transform(p))).collect(),
        points: points.to_vec(),
        plan: point_plan,
    };
    let down = -Vec3::y();
    let line = LineBranch {
        bearings: lines.iter().map(|p| jitter(pose.transform(p))).collect(),
        directions2d: lines.iter().map(|p| image_direction(pose, p, &(p + down))).collect(),
        points: lines.to_vec(),
        directions3d: vec![down; lines.len()],
        plan: line_plan,
        rows: (0..lines.len()).collect(),
        cols: (0..lines.len()).collect(),
    };
    PnplProblem::new(point, line, LineMode::Offset).unwrap()
}
