//! P3P-RANSAC over a prioritized match list.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::elements::{Element2D, Element3D, Taxonomy};
use crate::error::{Error, Result};
use crate::geometry::{angle_between, plane_normal, Pose, Vec3};
use crate::matcher::Match;

use super::p3p::p3p;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    /// Inlier angular threshold in radians.
    pub theta: f64,
    pub max_iterations: usize,
    pub top_k: usize,
    pub seed: u64,
    /// Inlier rate below which the result is flagged as not confident.
    pub confidence_floor: f64,
    /// Sample matches proportionally to their probability instead of uniformly.
    pub weighted_sampling: bool,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            theta: 0.003,
            max_iterations: 1000,
            top_k: 50,
            seed: 0,
            confidence_floor: 0.3,
            weighted_sampling: false,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0) || self.max_iterations == 0 || self.top_k < 4 {
            return Err(Error::Config(format!("invalid RANSAC config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoarseResult {
    pub pose: Pose,
    /// Positions in the match list that are inliers under `pose`.
    pub inlier_indices: Vec<usize>,
    pub inlier_rate: f64,
    /// Mean angular error of the inliers.
    pub mean_error: f64,
    /// Inlier count plus one for every pole whose bottom direction also agrees.
    pub score: usize,
    pub confident: bool,
    pub iterations: usize,
}

/// Inlier evaluation of one pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Support {
    pub inliers: Vec<usize>,
    pub score: usize,
    pub mean_error: f64,
}

impl Support {
    fn better_than(&self, other: &Support) -> bool {
        self.score > other.score || (self.score == other.score && self.mean_error < other.mean_error)
    }
}

/// A match `(i, j)` is an inlier when `j` is the same-class map element
/// closest in angle to bearing `i` under `pose` and that angle is below
/// `theta`. Line-like matches earn an extra point when `p + v3d` lies on the
/// plane back-projected from the observed pole within `theta`.
pub fn support(
    pose: &Pose,
    matches: &[Match],
    elements2d: &[Element2D],
    elements3d: &[Element3D],
    tax: &Taxonomy,
    theta: f64,
) -> Support {
    let dirs: Vec<Option<Vec3>> = elements3d
        .iter()
        .map(|e| {
            let x = pose.transform(&e.point);
            (x.norm() > 1e-12).then(|| x.normalize())
        })
        .collect();
    let mut nearest: Vec<Option<Option<(usize, f64)>>> = vec![None; elements2d.len()];
    let mut inliers = Vec::new();
    let mut score = 0;
    let mut err_sum = 0.0;
    for (k, m) in matches.iter().enumerate() {
        let e2 = &elements2d[m.i];
        if elements3d[m.j].class != e2.class {
            continue;
        }
        let near = *nearest[m.i].get_or_insert_with(|| {
            let f = e2.bearing.as_vector();
            let mut best: Option<(usize, f64)> = None;
            for (j, d) in dirs.iter().enumerate() {
                if elements3d[j].class != e2.class {
                    continue;
                }
                if let Some(d) = d {
                    let a = angle_between(f, d);
                    if best.is_none_or(|b| a < b.1) {
                        best = Some((j, a));
                    }
                }
            }
            best
        });
        let Some((j, err)) = near else { continue };
        if j != m.j || !(err < theta) {
            continue;
        }
        inliers.push(k);
        score += 1;
        err_sum += err;
        if tax.is_line_like(e2.class) {
            let e3 = &elements3d[m.j];
            if let Ok(n) = plane_normal(e2.bearing.as_vector(), &e2.direction) {
                let x = pose.transform(&(e3.point + e3.direction));
                if x.norm() > 1e-12 && (n.dot(&x) / x.norm()).abs().min(1.0).asin() < theta {
                    score += 1;
                }
            }
        }
    }
    let mean_error = if inliers.is_empty() { f64::INFINITY } else { err_sum / inliers.len() as f64 };
    Support { inliers, score, mean_error }
}

fn sample(
    rng: &mut ChaCha8Rng,
    matches: &[Match],
    weights: Option<&WeightedIndex<f64>>,
) -> Option<[usize; 4]> {
    let mut picked: Vec<usize> = Vec::with_capacity(4);
    for _ in 0..100 {
        let k = match weights {
            Some(w) => w.sample(rng),
            None => rng.random_range(0..matches.len()),
        };
        let m = matches[k];
        let clash = picked.iter().any(|&q| q == k || matches[q].i == m.i || matches[q].j == m.j);
        if !clash {
            picked.push(k);
            if picked.len() == 4 {
                return Some([picked[0], picked[1], picked[2], picked[3]]);
            }
        }
    }
    None
}

/// Randomized search for the pose with the highest inlier support. Each
/// iteration solves P3P on three sampled matches and keeps the candidate
/// that best explains a fourth.
pub fn ransac_p3p(
    matches: &[Match],
    elements2d: &[Element2D],
    elements3d: &[Element3D],
    tax: &Taxonomy,
    cfg: &RansacConfig,
) -> Result<CoarseResult> {
    cfg.validate()?;
    if matches.len() < 4 {
        return Err(Error::InsufficientMatches { needed: 4, got: matches.len() });
    }
    if matches.iter().any(|m| m.i >= elements2d.len() || m.j >= elements3d.len()) {
        return Err(Error::ShapeMismatch("match index out of range".into()));
    }
    let weights = if cfg.weighted_sampling {
        WeightedIndex::new(matches.iter().map(|m| m.probability.max(0.0))).ok()
    } else {
        None
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(Pose, Support)> = None;
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        iterations += 1;
        let Some(idx) = sample(&mut rng, matches, weights.as_ref()) else { continue };
        let f = [0, 1, 2].map(|q| *elements2d[matches[idx[q]].i].bearing.as_vector());
        let p = [0, 1, 2].map(|q| elements3d[matches[idx[q]].j].point);
        let check = matches[idx[3]];
        let fv = elements2d[check.i].bearing.as_vector();
        let pv = elements3d[check.j].point;
        let candidate = p3p(&f, &p)
            .into_iter()
            .map(|pose| (angle_between(fv, &pose.transform(&pv)), pose))
            .min_by(|a, b| a.0.total_cmp(&b.0));
        let Some((_, pose)) = candidate else { continue };
        let s = support(&pose, matches, elements2d, elements3d, tax, cfg.theta);
        if best.as_ref().is_none_or(|(_, b)| s.better_than(b)) {
            let done = s.inliers.len() == matches.len();
            best = Some((pose, s));
            if done {
                break;
            }
        }
    }
    let (pose, s) = best.ok_or_else(|| Error::DegenerateGeometry("no P3P sample produced a pose".into()))?;
    let inlier_rate = s.inliers.len() as f64 / matches.len() as f64;
    Ok(CoarseResult {
        pose,
        inlier_rate,
        mean_error: s.mean_error,
        score: s.score,
        confident: inlier_rate >= cfg.confidence_floor,
        inlier_indices: s.inliers,
        iterations,
    })
}
