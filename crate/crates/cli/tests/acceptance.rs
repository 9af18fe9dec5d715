//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use common::{problem_from, random_points, random_pose, rel_err, rng};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use semloc::elements::{Element3D, SemanticClass, Taxonomy};
use semloc::encoder::{encode, encode_backward, CostMatrix, EncoderConfig, EncoderWeights, Stream};
use semloc::eval::{evaluate, rotation_error_deg, translation_error, EvalConfig};
use semloc::geometry::{
    angular_error, line_residual, point_residual, rotation_exp, rotation_log, Bearing, Pose, Vec3,
};
use semloc::learning::{pnpl_backward, train, LossConfig, TrainHistory};
use semloc::mapping::{dbscan, triangulate, ClusterConfig};
use semloc::matcher::{sinkhorn, sinkhorn_backward, uniform_sinkhorn, Match, SinkhornConfig};
use semloc::optim::LbfgsConfig;
use semloc::pipeline::{gate_mask, localize_local, LocalizeConfig};
use semloc::pose::{direct_pnpl, params, ransac_p3p, weighted_pnpl, LineMode, PnplProblem, RansacConfig, Vec6};
use semloc::synthetic::{
    camera_pose, synthesize_dataset, synthesize_pair, synthesize_stereo, FrameConfig, NoiseConfig, ScenePair,
    StereoConfig,
};

const TRAIN_SEED: u64 = 1;
const HELD_OUT_SEED: u64 = 2;
const BENCH_SEED: u64 = 3;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn tax() -> Taxonomy {
    Taxonomy::default()
}

fn bench_frames() -> FrameConfig {
    FrameConfig {
        noise: NoiseConfig { pixel_sigma: 1.0, dropout_rate: 0.2, outlier_rate_2d: 0.1, clutter_rate_3d: 0.1 },
        ..FrameConfig::default()
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn localize_all(pairs: &[ScenePair], weights: &EncoderWeights) -> Vec<Option<Pose>> {
    let cfg = LocalizeConfig::default();
    pairs.iter().map(|p| localize_local(&p.elements2d, &p.submap, weights, &tax(), &cfg).ok().map(|l| l.pose)).collect()
}

struct Trained {
    init: EncoderWeights,
    weights: EncoderWeights,
    history: TrainHistory,
    seconds: f64,
}

/// Desk-scale weights trained once on one core and shared by criteria 1 and 6.
fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let data = synthesize_dataset(&bench_frames(), 30, TRAIN_SEED, &tax()).unwrap();
        let init = EncoderWeights::init(EncoderConfig::desk(), 0).unwrap();
        let cfg = LossConfig { threads: 1, ..LossConfig::desk() };
        let (weights, history) = train(&data, &init, &cfg, 0, &tax()).unwrap();
        Trained { init, weights, history, seconds: start.elapsed().as_secs_f64() }
    })
}

fn benchmark() -> Outcome {
    let weights = &trained().weights;
    let pairs = synthesize_dataset(&bench_frames(), 200, BENCH_SEED, &tax()).unwrap();
    let start = Instant::now();
    let poses = localize_all(&pairs, weights);
    let seconds = start.elapsed().as_secs_f64();
    let rte: Vec<f64> =
        poses.iter().zip(&pairs).map(|(p, t)| p.map_or(f64::INFINITY, |p| translation_error(&p, &t.gt_pose))).collect();
    let rre: Vec<f64> =
        poses.iter().zip(&pairs).map(|(p, t)| p.map_or(f64::INFINITY, |p| rotation_error_deg(&p, &t.gt_pose))).collect();
    let under = rte.iter().filter(|e| **e < 1.0).count() as f64 / rte.len() as f64;
    let failures = poses.iter().filter(|p| p.is_none()).count();
    let (mt, mr) = (median(&rte), median(&rre));
    outcome(
        mt < 0.5 && mr < 1.0 && under >= 0.9 && seconds < 600.0,
        format!(
            "median RTE {mt:.4} m, median RRE {mr:.4} deg, {:.1}% under 1 m, {failures} failures, {seconds:.1} s",
            100.0 * under
        ),
    )
}

fn gt_problem(pair: &ScenePair) -> PnplProblem {
    let plan = pair.gt_correspondence.matrix();
    PnplProblem::from_elements(&pair.elements2d, &pair.submap.elements, &plan, &tax(), LineMode::Offset).unwrap()
}

fn oracle_recovery() -> Outcome {
    let start = Instant::now();
    let cfg = FrameConfig::default();
    let mut ok = 0;
    let (mut worst_t, mut worst_r) = (0.0f64, 0.0f64);
    for seed in 0..100 {
        let pair = synthesize_pair(&cfg, seed, &tax()).unwrap();
        let init = camera_pose(pair.submap.origin + Vec3::new(0.0, 0.0, 1.65), 0.0, 0.0, 0.0);
        let r = direct_pnpl(&gt_problem(&pair), &init, &LbfgsConfig::default()).unwrap();
        let (t, a) = (translation_error(&r.pose, &pair.gt_pose), rotation_error_deg(&r.pose, &pair.gt_pose));
        worst_t = worst_t.max(t);
        worst_r = worst_r.max(a);
        if t < 1e-4 && a < 1e-4 {
            ok += 1;
        }
    }
    let seconds = start.elapsed().as_secs_f64();
    outcome(
        ok == 100 && seconds < 1.0,
        format!("{ok}/100 seeds, worst RTE {worst_t:.2e} m, worst RRE {worst_r:.2e} deg, {seconds:.3} s"),
    )
}

fn contaminated_matches(pair: &ScenePair, rng: &mut impl Rng) -> Vec<Match> {
    let truth: Vec<(usize, usize)> = pair.gt_correspondence.pairs().collect();
    let n3 = pair.submap.elements.len();
    let mut list = truth.clone();
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

fn robustness() -> Outcome {
    let cfg = FrameConfig { noise: NoiseConfig { pixel_sigma: 1.0, ..NoiseConfig::noise_free() }, ..Default::default() };
    let t = tax();
    let mut ok = 0;
    for trial in 0..100 {
        let pair = synthesize_pair(&cfg, 1000 + trial, &t).unwrap();
        let matches = contaminated_matches(&pair, &mut rng(trial));
        let e3 = &pair.submap.elements;
        let rc = RansacConfig { theta: 0.003, max_iterations: 1000, seed: trial, ..RansacConfig::default() };
        let Ok(coarse) = ransac_p3p(&matches, &pair.elements2d, e3, &t, &rc) else { continue };
        let mut plan = DMatrix::zeros(pair.elements2d.len(), e3.len());
        for m in &matches {
            plan[(m.i, m.j)] = m.probability;
        }
        let plan = plan.component_mul(&gate_mask(&pair.elements2d, e3, &coarse.pose, 0.02));
        let problem = PnplProblem::from_elements(&pair.elements2d, e3, &plan, &t, LineMode::Offset).unwrap();
        let pose = weighted_pnpl(&problem, &coarse.pose, &LbfgsConfig::default()).unwrap().pose;
        if translation_error(&pose, &pair.gt_pose) < 0.1 {
            ok += 1;
        }
    }
    outcome(ok >= 95, format!("{ok}/100 trials with RTE < 0.1 m at 50% outliers"))
}

/// Minimizer of the 2x2 entropic program, by bisection on the free entry.
fn entropic_2x2(m: &DMatrix<f64>, r: &DVector<f64>, s: &DVector<f64>, mu: f64) -> DMatrix<f64> {
    let build = |x: f64| DMatrix::from_row_slice(2, 2, &[x, r[0] - x, s[0] - x, r[1] - s[0] + x]);
    let slope = |x: f64| {
        let p = build(x);
        (m[(0, 0)] - m[(0, 1)] - m[(1, 0)] + m[(1, 1)])
            + mu * (p[(0, 0)].ln() - p[(0, 1)].ln() - p[(1, 0)].ln() + p[(1, 1)].ln())
    };
    let (mut lo, mut hi) = (0f64.max(s[0] - r[1]), r[0].min(s[0]));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if slope(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    build(0.5 * (lo + hi))
}

fn transport() -> Outcome {
    let cfg = SinkhornConfig::default();
    let mut r = rng(44);
    let (mut converged, mut marginal_worst, mut shift_worst) = (0, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let (rows, cols) = (r.random_range(1..=20), r.random_range(1..=30));
        let m = DMatrix::from_fn(rows, cols, |_, _| r.random_range(0.0..2.0));
        let c = r.random_range(-5.0..5.0);
        let a = uniform_sinkhorn(&CostMatrix(m.clone()), &cfg).unwrap();
        let b = uniform_sinkhorn(&CostMatrix(m.add_scalar(c)), &cfg).unwrap();
        shift_worst = shift_worst.max((&a.p - &b.p).amax());
        if a.converged {
            converged += 1;
            marginal_worst = marginal_worst.max(a.marginal_error());
        }
    }
    let mut oracle_worst = 0.0f64;
    let tight = SinkhornConfig { max_iter: 10_000, ..cfg };
    for _ in 0..200 {
        let m = DMatrix::from_fn(2, 2, |_, _| r.random_range(0.0..1.0));
        let r0 = r.random_range(0.2..0.8);
        let s0 = r.random_range(0.2..0.8);
        let (rv, sv) = (DVector::from_vec(vec![r0, 1.0 - r0]), DVector::from_vec(vec![s0, 1.0 - s0]));
        let plan = sinkhorn(&CostMatrix(m.clone()), &rv, &sv, &tight).unwrap();
        oracle_worst = oracle_worst.max((plan.p - entropic_2x2(&m, &rv, &sv, tight.mu)).amax());
    }
    outcome(
        marginal_worst < 1e-6 && shift_worst < 1e-9 && oracle_worst < 1e-6,
        format!(
            "{converged}/1000 converged at defaults, worst marginal {marginal_worst:.2e}, \
             worst shift change {shift_worst:.2e}, worst 2x2 deviation {oracle_worst:.2e}"
        ),
    )
}

fn soft_problem(seed: u64) -> (PnplProblem, Pose) {
    let mut r = rng(seed);
    let gt = random_pose(&mut r);
    let pts = random_points(&mut r, 5);
    let lines = random_points(&mut r, 2);
    let pp = DMatrix::from_fn(5, 5, |i, j| if i == j { r.random_range(0.1..0.2) } else { r.random_range(0.0..0.01) });
    let lp = DMatrix::from_fn(2, 2, |i, j| if i == j { r.random_range(0.2..0.4) } else { r.random_range(0.0..0.02) });
    (problem_from(&gt, &pts, &lines, 0.002, &mut r, pp, lp), gt)
}

fn differentiation() -> Outcome {
    const H: f64 = 1e-5;
    let start = Instant::now();
    let mut r = rng(4);

    let w = EncoderWeights::init(EncoderConfig { blocks: 2, dim: 8, ..Default::default() }, 21).unwrap();
    let x = DMatrix::from_fn(5, 10, |_, _| r.random_range(-1.0..1.0));
    let classes: Vec<SemanticClass> = (0..5).map(|i| SemanticClass(i % 4)).collect();
    let u = DMatrix::from_fn(5, 8, |_, _| r.random_range(-1.0..1.0));
    let enc_loss = |w: &EncoderWeights, x: &DMatrix<f64>| {
        encode(x, classes.clone(), w, Stream::Image).unwrap().0.z.component_mul(&u).sum()
    };
    let (_, cache) = encode(&x, classes.clone(), &w, Stream::Image).unwrap();
    let (g, dx) = encode_backward(&cache, &w, &u).unwrap();
    let mut enc = 0.0f64;
    for t in 0..w.tensors().len() {
        for e in 0..w.tensors()[t].len() {
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp.tensors_mut()[t][e] += H;
            wm.tensors_mut()[t][e] -= H;
            let numeric = (enc_loss(&wp, &x) - enc_loss(&wm, &x)) / (2.0 * H);
            enc = enc.max(rel_err(g.tensors()[t][e], numeric, 1e-6));
        }
    }
    for i in 0..5 {
        for c in 0..10 {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[(i, c)] += H;
            xm[(i, c)] -= H;
            let numeric = (enc_loss(&w, &xp) - enc_loss(&w, &xm)) / (2.0 * H);
            enc = enc.max(rel_err(dx[(i, c)], numeric, 1e-6));
        }
    }

    let scfg = SinkhornConfig { mu: 0.1, max_iter: 300, tol: 0.0 };
    let mut sk = 0.0f64;
    for (rows, cols) in [(2, 2), (3, 4)] {
        let m = DMatrix::from_fn(rows, cols, |_, _| r.random_range(0.0..1.0));
        let u = DMatrix::from_fn(rows, cols, |_, _| r.random_range(-1.0..1.0));
        let loss = |m: &DMatrix<f64>| uniform_sinkhorn(&CostMatrix(m.clone()), &scfg).unwrap().p.component_mul(&u).sum();
        let plan = uniform_sinkhorn(&CostMatrix(m.clone()), &scfg).unwrap();
        let g = sinkhorn_backward(&plan, &CostMatrix(m.clone()), &u).unwrap();
        for i in 0..rows {
            for j in 0..cols {
                let (mut mp, mut mm) = (m.clone(), m.clone());
                mp[(i, j)] += H;
                mm[(i, j)] -= H;
                sk = sk.max(rel_err(g[(i, j)], (loss(&mp) - loss(&mm)) / (2.0 * H), 1e-6));
            }
        }
    }

    let mut pg = 0.0f64;
    let mut ib = 0.0f64;
    let tight = LbfgsConfig { grad_tol: 1e-14, max_iter: 2000, ..Default::default() };
    for seed in 0..3 {
        let (problem, gt) = soft_problem(seed);
        let p = gt.to_params();
        let shifted: Vec<f64> = p.iter().map(|v| v + 0.03).collect();
        let at = Pose::from_params(&shifted);
        let (_, grad) = problem.gradient(&at);
        let q = at.to_params();
        for k in 0..6 {
            let (mut a, mut b) = (q, q);
            a[k] += H;
            b[k] -= H;
            let numeric = (problem.objective(&Pose::from_params(&a)) - problem.objective(&Pose::from_params(&b))) / (2.0 * H);
            pg = pg.max(rel_err(grad[k], numeric, 1e-8));
        }

        let sol = weighted_pnpl(&problem, &gt, &tight).unwrap().pose;
        let up = Vec6::from_fn(|_, _| r.random_range(-1.0..1.0));
        let back = pnpl_backward(&problem, &sol, &up).unwrap();
        let objective = |p: &PnplProblem| up.dot(&params(&weighted_pnpl(p, &sol, &tight).unwrap().pose));
        let step = 1e-3;
        for i in 0..5 {
            for j in 0..5 {
                let (mut a, mut b) = (problem.clone(), problem.clone());
                a.point.plan[(i, j)] += step;
                b.point.plan[(i, j)] -= step;
                let numeric = (objective(&a) - objective(&b)) / (2.0 * step);
                ib = ib.max(rel_err(back.point[(i, j)], numeric, 1e-4));
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                let (mut a, mut b) = (problem.clone(), problem.clone());
                a.line.plan[(i, j)] += step;
                b.line.plan[(i, j)] -= step;
                let numeric = (objective(&a) - objective(&b)) / (2.0 * step);
                ib = ib.max(rel_err(back.line[(i, j)], numeric, 1e-4));
            }
        }
    }
    let seconds = start.elapsed().as_secs_f64();
    outcome(
        enc < 1e-4 && sk < 1e-4 && pg < 1e-5 && ib < 1e-3 && seconds < 120.0,
        format!(
            "encoder {enc:.2e}, sinkhorn {sk:.2e}, pose gradient {pg:.2e}, pnpl backward {ib:.2e} \
             worst relative error, {seconds:.2} s"
        ),
    )
}

fn training() -> Outcome {
    let t = trained();
    let initial = t.history.initial.lc;
    let last = t.history.epochs.last().map_or(initial, |e| e.lc);
    let held = synthesize_dataset(&bench_frames(), 40, HELD_OUT_SEED, &tax()).unwrap();
    let gt: Vec<Pose> = held.iter().map(|p| p.gt_pose).collect();
    let cfg = EvalConfig::default();
    let before = evaluate(&localize_all(&held, &t.init), &gt, &cfg).unwrap();
    let after = evaluate(&localize_all(&held, &t.weights), &gt, &cfg).unwrap();
    let m0 = before.rte_stats.map_or(f64::INFINITY, |s| s.q2);
    let m1 = after.rte_stats.map_or(f64::INFINITY, |s| s.q2);
    let reduction = 1.0 - last / initial;
    outcome(
        reduction >= 0.5 && m0 >= 2.0 * m1 && t.seconds < 900.0,
        format!(
            "L_c {initial:.4} -> {last:.4} ({:.1}% lower), held-out median RTE {m0:.4} -> {m1:.4} m, \
             training {:.1} s",
            100.0 * reduction,
            t.seconds
        ),
    )
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Connected components of the eps-graph with singletons as noise.
fn components(points: &[Vec3], eps: f64) -> Vec<Option<usize>> {
    let n = points.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in 0..i {
            if (points[i] - points[j]).norm() <= eps {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
    let mut labels = vec![None; n];
    let mut next = 0;
    let mut out = vec![None; n];
    for i in 0..n {
        if roots.iter().filter(|&&r| r == roots[i]).count() < 2 {
            continue;
        }
        out[i] = Some(*labels[roots[i]].get_or_insert_with(|| {
            next += 1;
            next - 1
        }));
    }
    out
}

fn random_unit(r: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
        if v.norm() > 0.1 && v.norm() <= 1.0 {
            return v.normalize();
        }
    }
}

fn geometry() -> Outcome {
    use std::f64::consts::PI;
    let start = Instant::now();
    let mut r = rng(7);
    let mut failures: Vec<&str> = Vec::new();

    let mut roundtrip = 0.0f64;
    for _ in 0..1000 {
        let v = random_unit(&mut r) * r.random_range(0.0..PI - 1e-3);
        roundtrip = roundtrip.max((rotation_log(&rotation_exp(&v)).unwrap() - v).norm());
    }
    if roundtrip > 1e-9 {
        failures.push("exp/log");
    }

    let id = Pose::identity();
    let z = Bearing::new(Vec3::z()).unwrap();
    let f = Bearing::new(Vec3::new(0.1, 0.2, 0.3)).unwrap();
    let clamp_ok = angular_error(&z, &Vec3::new(0.0, 0.0, 3.0), &id).unwrap() == 0.0
        && (angular_error(&z, &Vec3::new(0.0, 0.0, -2.0), &id).unwrap() - PI).abs() < 1e-15
        && angular_error(&f, &(f.as_vector() * 7.0), &id).unwrap() < 1e-7;
    if !clamp_ok {
        failures.push("clamping");
    }

    let mut ranges_ok = true;
    for _ in 0..1000 {
        let u = random_unit(&mut r);
        let f = Bearing::new(Vec3::new(u.x, u.y, u.z.abs().max(0.05))).unwrap();
        let pose = Pose::new(random_unit(&mut r) * r.random_range(0.0..3.0), random_unit(&mut r) * 2.0);
        let p = random_unit(&mut r) * r.random_range(0.5..10.0);
        let d = random_unit(&mut r);
        if pose.transform(&p).norm() < 1e-6 {
            continue;
        }
        let e = angular_error(&f, &p, &pose).unwrap();
        let rho = point_residual(&f, &p, &pose).unwrap();
        ranges_ok &= (0.0..=PI).contains(&e) && (0.0..=2.0).contains(&rho);
        let v = random_unit(&mut r);
        let v2d = Vec3::new(v.x, v.y, 0.0);
        if f.as_vector().cross(&v2d).norm() > 1e-6 && pose.transform(&(p + d)).norm() > 1e-6 {
            ranges_ok &= (0.0..=1.0).contains(&line_residual(&f, &v2d, &p, &d, &pose).unwrap());
        }
    }
    if !ranges_ok {
        failures.push("residual ranges");
    }

    let t = tax();
    let survey = synthesize_stereo(&StereoConfig::default(), 5, &t).unwrap();
    let mut tri = 0.0f64;
    for (obs, &j) in survey.observations.iter().zip(&survey.sources) {
        let e: Element3D = triangulate(obs, &t).unwrap();
        tri = tri.max((e.point - survey.world[j].point).norm());
    }
    if tri >= 1e-9 {
        failures.push("triangulation");
    }

    let cfg = ClusterConfig { eps: 0.7, min_pts: 2 };
    let mut dedup_ok = true;
    for _ in 0..200 {
        let pts: Vec<Vec3> = (0..20)
            .map(|_| Vec3::new(r.random_range(0.0..4.0), r.random_range(0.0..4.0), r.random_range(0.0..1.0)))
            .collect();
        dedup_ok &= dbscan(&pts, &cfg) == components(&pts, cfg.eps);
    }
    if !dedup_ok {
        failures.push("clustering");
    }

    let seconds = start.elapsed().as_secs_f64();
    outcome(
        failures.is_empty() && seconds < 30.0,
        format!(
            "exp/log {roundtrip:.2e}, triangulation {tri:.2e} m over {} observations, failed: [{}], {seconds:.2} s",
            survey.observations.len(),
            failures.join(", ")
        ),
    )
}

fn run_cli(config: &Path, dir: &Path) {
    let d = |name: &str| dir.join(name).display().to_string();
    let steps: Vec<Vec<String>> = vec![
        vec!["synth".into(), "--out".into(), d(""), "--seed".into(), "7".into(), "--frames".into(), "6".into()],
        vec!["map-build".into(), "--stereo".into(), d("stereo.json"), "--out".into(), d("map.json")],
        vec![
            "train".into(),
            "--pairs".into(),
            d("pairs.jsonl"),
            "--out".into(),
            d("weights.json"),
            "--seed".into(),
            "3".into(),
            "--history".into(),
            d("history.csv"),
        ],
        vec![
            "localize".into(),
            "--input".into(),
            d("pairs.jsonl"),
            "--out".into(),
            d("poses.json"),
            "--weights-path".into(),
            d("weights.json"),
        ],
        vec!["eval".into(), "--estimates".into(), d("poses.json"), "--truth".into(), d("pairs.jsonl"), "--out".into(), d("summary.json")],
        vec!["plot-data".into(), "--summary".into(), d("summary.json"), "--out".into(), d("histogram.csv")],
    ];
    for args in steps {
        let out = Command::new(env!("CARGO_BIN_EXE_semloc"))
            .arg("--config")
            .arg(config)
            .args(&args)
            .output()
            .expect("run semloc");
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let config = root.path().join("config.json");
    std::fs::write(&config, r#"{"training": {"warmup_epochs": 1, "epochs": 2, "batch_size": 3}}"#).unwrap();
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    run_cli(&config, &a);
    run_cli(&config, &b);
    let mut names: Vec<String> =
        std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    names.sort();
    let differing: Vec<&String> =
        names.iter().filter(|n| std::fs::read(a.join(n)).ok() != std::fs::read(b.join(n)).ok()).collect();
    outcome(
        differing.is_empty() && names.len() == 9,
        format!("{} output files compared, differing: {differing:?}", names.len()),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        ("synthetic benchmark", benchmark),
        ("oracle pose recovery", oracle_recovery),
        ("robustness to outliers", robustness),
        ("transport correctness", transport),
        ("differentiation", differentiation),
        ("training progress", training),
        ("geometry", geometry),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let o = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|e| {
                let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
                outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
            });
        println!("criterion {} ({name}): {} | {}", k + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
