//! End-to-end localization of one frame.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::elements::{crop_submap, Element2D, Element3D, SemanticClass, SubMap, Taxonomy};
use crate::encoder::EncoderWeights;
use crate::error::{Error, Result};
use crate::geometry::{angle_between, Pose, Vec3};
use crate::matcher::{match_branches, prioritized_matches, BranchedPlans, SinkhornConfig};
use crate::optim::LbfgsConfig;
use crate::pose::{direct_pnpl, ransac_p3p, weighted_pnpl, LineMode, PnplProblem, RansacConfig};
use crate::synthetic::{camera_pose, GpsPrior, MIN_ELEMENTS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalizeConfig {
    pub crop_radius: f64,
    pub sinkhorn: SinkhornConfig,
    pub ransac: RansacConfig,
    pub refine: LbfgsConfig,
    /// Plan entries whose angular error under the coarse pose exceeds this
    /// many radians are dropped before refinement.
    pub gate: f64,
    pub line_mode: LineMode,
    /// Take the direct path when every class has at most one element per side.
    pub simple_scene_path: bool,
    /// Camera height above the prior, used as the direct-path initial guess.
    pub camera_height: f64,
    pub weights_path: Option<String>,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        Self {
            crop_radius: 20.0,
            sinkhorn: SinkhornConfig::default(),
            ransac: RansacConfig::default(),
            refine: LbfgsConfig::default(),
            gate: 0.02,
            line_mode: LineMode::Offset,
            simple_scene_path: true,
            camera_height: 1.65,
            weights_path: None,
        }
    }
}

impl LocalizeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.crop_radius > 0.0) || !(self.gate > 0.0) {
            return Err(Error::Config("crop radius and gate must be positive".into()));
        }
        self.sinkhorn.validate()?;
        self.ransac.validate()?;
        self.refine.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathTaken {
    Direct,
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchSize {
    pub class: SemanticClass,
    pub observed: usize,
    pub mapped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub path: PathTaken,
    pub branch_sizes: Vec<BranchSize>,
    pub matches: usize,
    pub inlier_rate: Option<f64>,
    pub confident: Option<bool>,
    pub coarse_pose: Option<Pose>,
    /// Plan entries kept for refinement.
    pub refined_correspondences: usize,
    pub objective: f64,
    pub converged: bool,
}

/// Every class has at most one element on each side, so classes alone fix
/// the correspondences.
pub fn is_simple_scene(plans: &BranchedPlans) -> bool {
    plans.branches.iter().all(|b| b.rows.len() <= 1 && b.cols.len() <= 1)
}

/// Boolean plan pairing the lone members of each class.
pub fn class_plan(plans: &BranchedPlans, m: usize, n: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m, n);
    for b in &plans.branches {
        if let (&[i], &[j]) = (b.rows.as_slice(), b.cols.as_slice()) {
            out[(i, j)] = 1.0;
        }
    }
    out
}

/// 1 where the classes agree and the bearing of `i` lies within `gate` of
/// map element `j` under `pose`, else 0.
pub fn gate_mask(elements2d: &[Element2D], elements3d: &[Element3D], pose: &Pose, gate: f64) -> DMatrix<f64> {
    let dirs: Vec<Vec3> = elements3d.iter().map(|e| pose.transform(&e.point)).collect();
    DMatrix::from_fn(elements2d.len(), elements3d.len(), |i, j| {
        let e = &elements2d[i];
        let ok = e.class == elements3d[j].class
            && dirs[j].norm() > 1e-12
            && angle_between(e.bearing.as_vector(), &dirs[j]) < gate;
        if ok {
            1.0
        } else {
            0.0
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Localization {
    pub pose: Pose,
    pub diagnostics: Diagnostics,
}

/// Localizes against a submap already expressed in the prior's local frame.
pub fn localize_local(
    elements2d: &[Element2D],
    submap: &SubMap,
    weights: &EncoderWeights,
    tax: &Taxonomy,
    cfg: &LocalizeConfig,
) -> Result<Localization> {
    cfg.validate()?;
    if elements2d.len() < MIN_ELEMENTS {
        return Err(Error::InsufficientElements { needed: MIN_ELEMENTS, got: elements2d.len() });
    }
    let e3 = &submap.elements;
    let (zf, _) = weights.encode_image(elements2d)?;
    let (zp, _) = weights.encode_map(e3, &submap.origin)?;
    let plans = match_branches(&zf, &zp, &cfg.sinkhorn)?;
    let branch_sizes = plans
        .branches
        .iter()
        .map(|b| BranchSize { class: b.class, observed: b.rows.len(), mapped: b.cols.len() })
        .collect();
    let (m, n) = (elements2d.len(), e3.len());

    if cfg.simple_scene_path && is_simple_scene(&plans) {
        let plan = class_plan(&plans, m, n);
        let problem = PnplProblem::from_elements(elements2d, e3, &plan, tax, cfg.line_mode)?;
        let init = camera_pose(submap.origin + Vec3::new(0.0, 0.0, cfg.camera_height), 0.0, 0.0, 0.0);
        let r = direct_pnpl(&problem, &init, &cfg.refine)?;
        let refined_correspondences = problem.correspondence_count();
        return Ok(Localization {
            pose: r.pose,
            diagnostics: Diagnostics {
                path: PathTaken::Direct,
                branch_sizes,
                matches: refined_correspondences,
                inlier_rate: None,
                confident: None,
                coarse_pose: None,
                refined_correspondences,
                objective: r.value,
                converged: r.converged,
            },
        });
    }

    let matches = prioritized_matches(&plans, cfg.ransac.top_k)?;
    let coarse = ransac_p3p(&matches, elements2d, e3, tax, &cfg.ransac)?;
    let mask = gate_mask(elements2d, e3, &coarse.pose, cfg.gate);
    let plan = plans.dense(m, n).component_mul(&mask);
    let problem = PnplProblem::from_elements(elements2d, e3, &plan, tax, cfg.line_mode)?;
    let kept = problem.correspondence_count();
    let (pose, objective, converged) = if kept == 0 {
        (coarse.pose, 0.0, false)
    } else {
        let r = weighted_pnpl(&problem, &coarse.pose, &cfg.refine)?;
        (r.pose, r.value, r.converged)
    };
    Ok(Localization {
        pose,
        diagnostics: Diagnostics {
            path: PathTaken::Weighted,
            branch_sizes,
            matches: matches.len(),
            inlier_rate: Some(coarse.inlier_rate),
            confident: Some(coarse.confident),
            coarse_pose: Some(coarse.pose),
            refined_correspondences: kept,
            objective,
            converged,
        },
    })
}

/// Crops the world map around the prior, localizes in the prior's local
/// frame and returns the world-to-camera pose.
pub fn localize(
    elements2d: &[Element2D],
    map: &[Element3D],
    prior: &GpsPrior,
    weights: &EncoderWeights,
    tax: &Taxonomy,
    cfg: &LocalizeConfig,
) -> Result<Localization> {
    if elements2d.len() < MIN_ELEMENTS {
        return Err(Error::InsufficientElements { needed: MIN_ELEMENTS, got: elements2d.len() });
    }
    let cropped = crop_submap(map, prior.position, cfg.crop_radius)?;
    let local_to_world = prior.local_to_world();
    let to_local = local_to_world.inverse();
    let submap = SubMap {
        elements: cropped.elements.iter().map(|e| e.transformed(&to_local)).collect(),
        origin: Vec3::zeros(),
        radius: cfg.crop_radius,
    };
    let mut out = localize_local(elements2d, &submap, weights, tax, cfg)?;
    out.pose = out.pose.compose(&to_local);
    out.diagnostics.coarse_pose = out.diagnostics.coarse_pose.map(|p| p.compose(&to_local));
    Ok(out)
}
