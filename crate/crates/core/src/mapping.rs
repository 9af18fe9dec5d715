//! Map construction from stereo observations: two-ray triangulation and
//! per-class density clustering to merge duplicates.

use serde::{Deserialize, Serialize};

use crate::elements::{Element2D, Element3D, SemanticClass, Taxonomy};
use crate::error::{Error, Result};
use crate::geometry::{plane_normal, Pose, Vec3};

/// Minimum angle between the two viewing rays, radians.
pub const MIN_RAY_ANGLE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StereoObservation {
    pub left: Element2D,
    pub right: Element2D,
    /// World-to-camera pose of the left camera.
    pub left_pose: Pose,
    pub right_pose: Pose,
}

fn ray(pose: &Pose, f: &Vec3) -> (Vec3, Vec3) {
    let rt = pose.rotation_matrix().transpose();
    (pose.camera_center(), (rt * f).normalize())
}

/// Midpoint of the common perpendicular of two rays `c + s d`.
fn closest_midpoint(c1: &Vec3, d1: &Vec3, c2: &Vec3, d2: &Vec3) -> Vec3 {
    let w0 = c1 - c2;
    let (a, b, c) = (d1.dot(d1), d1.dot(d2), d2.dot(d2));
    let (d, e) = (d1.dot(&w0), d2.dot(&w0));
    let denom = a * c - b * b;
    let s = (b * e - c * d) / denom;
    let u = (a * e - b * d) / denom;
    ((c1 + d1 * s) + (c2 + d2 * u)) * 0.5
}

/// Reconstructs a map element from a left/right observation pair.
pub fn triangulate(obs: &StereoObservation, tax: &Taxonomy) -> Result<Element3D> {
    if obs.left.class != obs.right.class {
        return Err(Error::Domain("stereo observations disagree on class".into()));
    }
    let (c1, d1) = ray(&obs.left_pose, obs.left.bearing.as_vector());
    let (c2, d2) = ray(&obs.right_pose, obs.right.bearing.as_vector());
    if (c1 - c2).norm() <= 1e-6 {
        return Err(Error::Domain("stereo baseline is zero".into()));
    }
    if d1.cross(&d2).norm().atan2(d1.dot(&d2)) <= MIN_RAY_ANGLE {
        return Err(Error::DegenerateGeometry("viewing rays are nearly parallel".into()));
    }
    let point = closest_midpoint(&c1, &d1, &c2, &d2);
    if !tax.is_line_like(obs.left.class) {
        return Element3D::new(point, Vec3::zeros(), obs.left.class, tax);
    }
    let normal = |e: &Element2D, pose: &Pose| -> Result<Vec3> {
        Ok(pose.rotation_matrix().transpose() * plane_normal(e.bearing.as_vector(), &e.direction)?)
    };
    let n1 = normal(&obs.left, &obs.left_pose)?;
    let n2 = normal(&obs.right, &obs.right_pose)?;
    let dir = n1.cross(&n2);
    if dir.norm() < 1e-9 {
        return Err(Error::DegenerateGeometry("pole planes coincide".into()));
    }
    let mut dir = dir.normalize();
    // Orient toward the bottom as seen in the left image.
    let f = obs.left.bearing.as_vector();
    let x = obs.left_pose.transform(&(point + dir));
    let shift = Vec3::new(x.x / x.z - f.x / f.z, x.y / x.z - f.y / f.z, 0.0);
    if shift.dot(&obs.left.direction) < 0.0 {
        dir = -dir;
    }
    Element3D::new(point, dir, obs.left.class, tax)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    /// Neighborhood radius, meters.
    pub eps: f64,
    /// Neighborhood size (self included) that makes a core point.
    pub min_pts: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self { eps: 0.5, min_pts: 2 }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) || self.min_pts == 0 {
            return Err(Error::Config(format!("invalid cluster config {self:?}")));
        }
        Ok(())
    }
}

/// DBSCAN labels: `Some(cluster)` or `None` for noise. Clusters are numbered
/// in order of their lowest-index core point; border points join the first
/// cluster that reaches them.
pub fn dbscan(points: &[Vec3], cfg: &ClusterConfig) -> Vec<Option<usize>> {
    let n = points.len();
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| (points[i] - points[j]).norm() <= cfg.eps).collect())
        .collect();
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= cfg.min_pts).collect();
    let mut labels = vec![None; n];
    let mut next = 0;
    for start in 0..n {
        if !core[start] || labels[start].is_some() {
            continue;
        }
        labels[start] = Some(next);
        let mut stack = vec![start];
        while let Some(p) = stack.pop() {
            for &q in &neighbors[p] {
                if labels[q].is_none() {
                    labels[q] = Some(next);
                    if core[q] {
                        stack.push(q);
                    }
                }
            }
        }
        next += 1;
    }
    labels
}

fn merge(members: &[&Element3D]) -> Element3D {
    if members.len() == 1 {
        return *members[0];
    }
    let k = members.len() as f64;
    let point = members.iter().map(|e| e.point).sum::<Vec3>() / k;
    let dir_sum: Vec3 = members.iter().map(|e| e.direction).sum();
    let direction = if members[0].direction == Vec3::zeros() {
        Vec3::zeros()
    } else if dir_sum.norm() > 1e-12 {
        dir_sum.normalize()
    } else {
        members[0].direction
    };
    Element3D { point, direction, class: members[0].class }
}

fn dedup_once(elements: &[Element3D], cfg: &ClusterConfig) -> Vec<Element3D> {
    let mut classes: Vec<SemanticClass> = elements.iter().map(|e| e.class).collect();
    classes.sort();
    classes.dedup();
    // (lowest original index, merged element)
    let mut out: Vec<(usize, Element3D)> = Vec::with_capacity(elements.len());
    for class in classes {
        let idx: Vec<usize> = (0..elements.len()).filter(|&i| elements[i].class == class).collect();
        let pts: Vec<Vec3> = idx.iter().map(|&i| elements[i].point).collect();
        let labels = dbscan(&pts, cfg);
        let clusters = labels.iter().flatten().max().map_or(0, |m| m + 1);
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); clusters];
        for (k, label) in labels.iter().enumerate() {
            match label {
                Some(c) => groups[*c].push(idx[k]),
                None => out.push((idx[k], elements[idx[k]])),
            }
        }
        for g in groups {
            let members: Vec<&Element3D> = g.iter().map(|&i| &elements[i]).collect();
            out.push((g[0], merge(&members)));
        }
    }
    out.sort_by_key(|(i, _)| *i);
    out.into_iter().map(|(_, e)| e).collect()
}

/// Merges duplicates per class until no further merge happens, so applying
/// it again is the identity. Unclustered points are kept unchanged.
pub fn deduplicate(elements: &[Element3D], cfg: &ClusterConfig) -> Result<Vec<Element3D>> {
    cfg.validate()?;
    let mut current = elements.to_vec();
    loop {
        let next = dedup_once(&current, cfg);
        if next.len() == current.len() {
            return Ok(next);
        }
        current = next;
    }
}
