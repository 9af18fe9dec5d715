mod common;

use common::{problem_from, random_points, random_pose, rng};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use semloc::elements::{Element3D, SemanticClass, SubMap, Taxonomy};
use semloc::encoder::{EncoderConfig, EncoderWeights};
use semloc::error::Error;
use semloc::eval::{rotation_error_deg, translation_error};
use semloc::geometry::{angular_error, CameraIntrinsics, Pose, Vec3};
use semloc::matcher::Match;
use semloc::optim::LbfgsConfig;
use semloc::pipeline::{gate_mask, localize_local, LocalizeConfig, PathTaken};
use semloc::pose::p3p::p3p;
use semloc::pose::{direct_pnpl, ransac_p3p, weighted_pnpl, LineMode, PnplProblem, RansacConfig};
use semloc::synthetic::{camera_pose, render_view, synthesize_pair, FrameConfig, NoiseConfig, ScenePair};

fn tax() -> Taxonomy {
    Taxonomy::default()
}

fn gt_problem(pair: &ScenePair) -> PnplProblem {
    let plan = pair.gt_correspondence.matrix();
    PnplProblem::from_elements(&pair.elements2d, &pair.submap.elements, &plan, &tax(), LineMode::Offset).unwrap()
}

fn level_init(pair: &ScenePair) -> Pose {
    camera_pose(pair.submap.origin + Vec3::new(0.0, 0.0, 1.65), 0.0, 0.0, 0.0)
}

#[test]
fn noise_free_frames_are_recovered_exactly() {
    let cfg = FrameConfig::default();
    for seed in 0..100 {
        let pair = synthesize_pair(&cfg, seed, &tax()).unwrap();
        let r = direct_pnpl(&gt_problem(&pair), &level_init(&pair), &LbfgsConfig::default()).unwrap();
        let rte = translation_error(&r.pose, &pair.gt_pose);
        let rre = rotation_error_deg(&r.pose, &pair.gt_pose);
        assert!(rte < 1e-4 && rre < 1e-4, "seed {seed}: RTE {rte:e} m, RRE {rre:e} deg");
        assert!(r.value <= r.initial_value);
    }
}

#[test]
fn far_initialization_is_rescued_by_minimal_solves() {
    let pair = synthesize_pair(&FrameConfig::default(), 11, &tax()).unwrap();
    let behind = Pose::new(Vec3::new(0.0, std::f64::consts::PI * 0.9, 0.0), Vec3::new(30.0, -20.0, 5.0));
    let r = direct_pnpl(&gt_problem(&pair), &behind, &LbfgsConfig::default()).unwrap();
    assert!(translation_error(&r.pose, &pair.gt_pose) < 1e-4);
}

#[test]
fn four_points_from_identity() {
    let mut r = rng(8);
    let gt = random_pose(&mut r);
    let pts = random_points(&mut r, 4);
    let p = problem_from(&gt, &pts, &[], 0.0, &mut r, DMatrix::identity(4, 4), DMatrix::zeros(0, 0));
    let res = direct_pnpl(&p, &Pose::identity(), &LbfgsConfig::default()).unwrap();
    assert!(translation_error(&res.pose, &gt) < 1e-4);
    assert!(rotation_error_deg(&res.pose, &gt) < 1e-4);
}

#[test]
fn pole_resolves_three_point_ambiguity() {
    let mut tried = 0;
    for seed in 0..200 {
        let mut r = rng(seed);
        let gt = random_pose(&mut r);
        let pts = random_points(&mut r, 3);
        let pole = random_points(&mut r, 1);
        let p = problem_from(&gt, &pts, &pole, 0.0, &mut r, DMatrix::identity(3, 3), DMatrix::identity(1, 1));
        let bearings = [0, 1, 2].map(|k| p.point.bearings[k]);
        let candidates = p3p(&bearings, &[pts[0], pts[1], pts[2]]);
        let Some(alt) = candidates.iter().find(|c| translation_error(c, &gt) > 0.1) else { continue };
        tried += 1;
        assert!(p.objective(alt) > 1e-6, "seed {seed}: the pole should rule out the mirror solution");
        let res = direct_pnpl(&p, &Pose::identity(), &LbfgsConfig::default()).unwrap();
        assert!(translation_error(&res.pose, &gt) < 1e-4, "seed {seed}");
        if tried == 10 {
            break;
        }
    }
    assert_eq!(tried, 10, "too few ambiguous instances");
}

#[test]
fn direct_requires_boolean_one_to_one_plans() {
    let mut r = rng(1);
    let gt = random_pose(&mut r);
    let pts = random_points(&mut r, 5);
    let mut plan = DMatrix::identity(5, 5);
    plan[(0, 0)] = 0.5;
    let p = problem_from(&gt, &pts, &[], 0.0, &mut r, plan, DMatrix::zeros(0, 0));
    assert!(matches!(direct_pnpl(&p, &gt, &LbfgsConfig::default()), Err(Error::Domain(_))));
    let p = problem_from(&gt, &pts[..3], &[], 0.0, &mut r, DMatrix::identity(3, 3), DMatrix::zeros(0, 0));
    assert!(matches!(
        direct_pnpl(&p, &gt, &LbfgsConfig::default()),
        Err(Error::InsufficientMatches { needed: 4, got: 3 })
    ));
}

/// Ground-truth matches plus as many wrong ones, all equally likely.
fn contaminated_matches(pair: &ScenePair, rng: &mut impl Rng) -> Vec<Match> {
    let truth: Vec<(usize, usize)> = pair.gt_correspondence.pairs().collect();
    let n3 = pair.submap.elements.len();
    let mut list: Vec<(usize, usize)> = truth.clone();
    while list.len() < 2 * truth.len() {
        let (i, j) = (rng.random_range(0..pair.elements2d.len()), rng.random_range(0..n3));
        if !pair.gt_correspondence.contains(i, j) && !list.contains(&(i, j)) {
            list.push((i, j));
        }
    }
    list.shuffle(rng);
    let p = 1.0 / list.len() as f64;
    list.into_iter().map(|(i, j)| Match { i, j, probability: p }).collect()
}

fn ransac_then_refine(pair: &ScenePair, matches: &[Match], seed: u64) -> Pose {
    let tax = tax();
    let e3 = &pair.submap.elements;
    let cfg = RansacConfig { seed, ..RansacConfig::default() };
    let coarse = ransac_p3p(matches, &pair.elements2d, e3, &tax, &cfg).unwrap();
    for &k in &coarse.inlier_indices {
        let m = matches[k];
        let err = angular_error(&pair.elements2d[m.i].bearing, &e3[m.j].point, &coarse.pose).unwrap();
        assert!(err < cfg.theta);
    }
    let mut plan = DMatrix::zeros(pair.elements2d.len(), e3.len());
    for m in matches {
        plan[(m.i, m.j)] = m.probability;
    }
    let plan = plan.component_mul(&gate_mask(&pair.elements2d, e3, &coarse.pose, 0.02));
    let problem = PnplProblem::from_elements(&pair.elements2d, e3, &plan, &tax, LineMode::Offset).unwrap();
    weighted_pnpl(&problem, &coarse.pose, &LbfgsConfig::default()).unwrap().pose
}

#[test]
fn ransac_tolerates_half_outliers() {
    let cfg = FrameConfig { noise: NoiseConfig { pixel_sigma: 1.0, ..NoiseConfig::noise_free() }, ..Default::default() };
    let mut ok = 0;
    for seed in 0..100 {
        let pair = synthesize_pair(&cfg, 1000 + seed, &tax()).unwrap();
        let matches = contaminated_matches(&pair, &mut rng(seed));
        let pose = ransac_then_refine(&pair, &matches, seed);
        if translation_error(&pose, &pair.gt_pose) < 0.1 {
            ok += 1;
        }
    }
    assert!(ok >= 95, "{ok}/100 trials recovered");
}

fn shuffled(problem: &PnplProblem, seed: u64) -> PnplProblem {
    let mut r = rng(seed);
    let (m, n) = problem.point.plan.shape();
    let mut rows: Vec<usize> = (0..m).collect();
    let mut cols: Vec<usize> = (0..n).collect();
    rows.shuffle(&mut r);
    cols.shuffle(&mut r);
    let mut p = problem.clone();
    p.point.bearings = rows.iter().map(|&i| problem.point.bearings[i]).collect();
    p.point.points = cols.iter().map(|&j| problem.point.points[j]).collect();
    p.point.plan = DMatrix::from_fn(m, n, |a, b| problem.point.plan[(rows[a], cols[b])]);
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn direct_ignores_correspondence_order(seed in 0u64..10_000, order in 0u64..10_000) {
        let mut r = rng(seed);
        let gt = random_pose(&mut r);
        let pts = random_points(&mut r, 6);
        let lines = random_points(&mut r, 2);
        let p = problem_from(&gt, &pts, &lines, 0.001, &mut r, DMatrix::identity(6, 6), DMatrix::identity(2, 2));
        let init = Pose::identity();
        let a = direct_pnpl(&p, &init, &LbfgsConfig::default()).unwrap();
        let b = direct_pnpl(&shuffled(&p, order), &init, &LbfgsConfig::default()).unwrap();
        prop_assert_eq!(a.pose, b.pose);
    }

    #[test]
    fn refinement_never_increases_the_objective(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let gt = random_pose(&mut r);
        let pts = random_points(&mut r, 5);
        let lines = random_points(&mut r, 2);
        let pp = DMatrix::from_fn(5, 5, |_, _| r.random_range(0.0..0.2));
        let lp = DMatrix::from_fn(2, 2, |_, _| r.random_range(0.0..0.5));
        let p = problem_from(&gt, &pts, &lines, 0.01, &mut r, pp, lp);
        let init = random_pose(&mut r);
        let res = weighted_pnpl(&p, &init, &LbfgsConfig::default()).unwrap();
        prop_assert!(res.value <= res.initial_value);
        prop_assert!(res.pose.is_finite());
    }
}

/// One element of each class in front of a level camera.
fn sparse_scene() -> (SubMap, Pose) {
    let t = tax();
    let elements = vec![
        Element3D::new(Vec3::new(10.0, 2.0, 4.0), -Vec3::z(), SemanticClass(0), &t).unwrap(),
        Element3D::new(Vec3::new(12.0, -3.0, 2.5), Vec3::zeros(), SemanticClass(1), &t).unwrap(),
        Element3D::new(Vec3::new(9.0, -1.0, 3.0), Vec3::zeros(), SemanticClass(2), &t).unwrap(),
        Element3D::new(Vec3::new(14.0, 1.0, 2.2), Vec3::zeros(), SemanticClass(3), &t).unwrap(),
    ];
    let submap = SubMap { elements, origin: Vec3::zeros(), radius: 20.0 };
    (submap, camera_pose(Vec3::new(0.5, 0.3, 1.65), 0.05, 0.0, 0.0))
}

#[test]
fn simple_scene_takes_the_direct_path() {
    let (submap, gt) = sparse_scene();
    let k = CameraIntrinsics::wide_1382x512();
    let pair = render_view(&submap, &gt, &k, &NoiseConfig::noise_free(), 0, &tax()).unwrap();
    assert_eq!(pair.elements2d.len(), 4);
    let w = EncoderWeights::init(EncoderConfig::desk(), 0).unwrap();
    let l = localize_local(&pair.elements2d, &pair.submap, &w, &tax(), &LocalizeConfig::default()).unwrap();
    assert_eq!(l.diagnostics.path, PathTaken::Direct);
    assert!(translation_error(&l.pose, &gt) < 1e-4);
    assert!(rotation_error_deg(&l.pose, &gt) < 1e-4);

    let few = &pair.elements2d[..3];
    let r = localize_local(few, &pair.submap, &w, &tax(), &LocalizeConfig::default());
    assert!(matches!(r, Err(Error::InsufficientElements { needed: 4, got: 3 })));
}
