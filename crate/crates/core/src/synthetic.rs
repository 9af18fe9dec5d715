//! Seeded synthetic scenes, camera views and ground truth.
//!
//! All randomness flows from explicit `u64` seeds through ChaCha8, so equal
//! seeds give bit-identical output on every platform.

use nalgebra::{DMatrix, Rotation3};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::elements::{crop_submap, Element2D, Element3D, SemanticClass, SubMap, Taxonomy};
use crate::error::{Error, Result};
use crate::geometry::{Bearing, CameraIntrinsics, Pose, Vec3};
use crate::mapping::StereoObservation;

/// Minimum camera depth for an element to count as visible, meters.
pub const MIN_DEPTH: f64 = 0.5;

/// Minimum number of 2D elements for a usable frame.
pub const MIN_ELEMENTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub n_poles: usize,
    pub n_signs: usize,
    /// Side of the square area, meters, centered on the world origin.
    pub area_extent: f64,
    /// Pole peak height range, meters.
    pub height_range: (f64, f64),
    /// Sign midpoint height range, meters.
    pub sign_height_range: (f64, f64),
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_poles: 30,
            n_signs: 40,
            area_extent: 36.0,
            height_range: (3.0, 5.5),
            sign_height_range: (1.8, 3.5),
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.height_range;
        let (slo, shi) = self.sign_height_range;
        if !(self.area_extent > 0.0) || !(lo <= hi) || !(slo <= shi) {
            return Err(Error::Config(format!("invalid scene config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Gaussian pixel noise on 2D detections.
    pub pixel_sigma: f64,
    /// Probability that a visible element is missed.
    pub dropout_rate: f64,
    /// Probability, per true detection, of an extra spurious detection.
    pub outlier_rate_2d: f64,
    /// Probability, per map element, of an extra spurious map element.
    pub clutter_rate_3d: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self::noise_free()
    }
}

impl NoiseConfig {
    pub fn noise_free() -> Self {
        Self { pixel_sigma: 0.0, dropout_rate: 0.0, outlier_rate_2d: 0.0, clutter_rate_3d: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [self.dropout_rate, self.outlier_rate_2d, self.clutter_rate_3d];
        if !(self.pixel_sigma >= 0.0) || rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Config(format!("invalid noise config {self:?}")));
        }
        Ok(())
    }
}

/// Ground-truth 2D-to-3D assignment: at most one map element per
/// observation and at most one observation per map element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Correspondences {
    cols: usize,
    rows: Vec<Option<usize>>,
}

impl Correspondences {
    pub fn new(cols: usize, rows: Vec<Option<usize>>) -> Result<Self> {
        let mut used = vec![false; cols];
        for j in rows.iter().flatten() {
            if *j >= cols || used[*j] {
                return Err(Error::Domain(format!("map element {j} matched twice or out of range")));
            }
            used[*j] = true;
        }
        Ok(Self { cols, rows })
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        Self { cols, rows: vec![None; rows] }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows.len(), self.cols)
    }

    pub fn get(&self, row: usize) -> Option<usize> {
        self.rows[row]
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.rows[row] == Some(col)
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.rows.iter().enumerate().filter_map(|(i, j)| j.map(|j| (i, j)))
    }

    pub fn count(&self) -> usize {
        self.rows.iter().flatten().count()
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let mut c = DMatrix::zeros(self.rows.len(), self.cols);
        for (i, j) in self.pairs() {
            c[(i, j)] = 1.0;
        }
        c
    }
}

/// One frame: observations, the submap they are matched against, and truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePair {
    pub elements2d: Vec<Element2D>,
    pub submap: SubMap,
    pub gt_pose: Pose,
    pub gt_correspondence: Correspondences,
    /// At least [`MIN_ELEMENTS`] observations.
    pub valid: bool,
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// World-frame elements placed uniformly over the square extent. Poles are
/// vertical with direction `(0, 0, -1)`; signs get a uniform sign class.
pub fn generate_scene(cfg: &SceneConfig, tax: &Taxonomy) -> Result<Vec<Element3D>> {
    cfg.validate()?;
    let mut rng = rng_for(cfg.seed);
    let half = cfg.area_extent / 2.0;
    let signs: Vec<SemanticClass> = tax.sign_classes().collect();
    let mut out = Vec::with_capacity(cfg.n_poles + cfg.n_signs);
    for _ in 0..cfg.n_poles {
        let p = Vec3::new(
            rng.random_range(-half..half),
            rng.random_range(-half..half),
            uniform(&mut rng, cfg.height_range),
        );
        out.push(Element3D { point: p, direction: -Vec3::z(), class: tax.pole() });
    }
    for _ in 0..cfg.n_signs {
        let p = Vec3::new(
            rng.random_range(-half..half),
            rng.random_range(-half..half),
            uniform(&mut rng, cfg.sign_height_range),
        );
        let class = if signs.is_empty() {
            return Err(Error::Config("taxonomy has no sign classes".into()));
        } else {
            signs[rng.random_range(0..signs.len())]
        };
        out.push(Element3D { point: p, direction: Vec3::zeros(), class });
    }
    Ok(out)
}

/// Ground contact of a pole: follow the direction down to `z = 0`, or one
/// meter when the direction does not descend.
pub fn pole_bottom(e: &Element3D) -> Vec3 {
    if e.direction.z < -1e-9 && e.point.z > 0.0 {
        e.point + e.direction * (e.point.z / -e.direction.z)
    } else {
        e.point + e.direction
    }
}

fn pixel_noise(rng: &mut impl Rng, sigma: f64) -> (f64, f64) {
    if sigma > 0.0 {
        let n = Normal::new(0.0, sigma).expect("sigma is finite and positive");
        (n.sample(rng), n.sample(rng))
    } else {
        (0.0, 0.0)
    }
}

fn observe(
    e: &Element3D,
    pose: &Pose,
    k: &CameraIntrinsics,
    sigma: f64,
    rng: &mut impl Rng,
    tax: &Taxonomy,
) -> Option<Element2D> {
    let x = pose.transform(&e.point);
    if x.z <= MIN_DEPTH {
        return None;
    }
    let (u, v) = k.project(&x)?;
    if !k.contains(u, v) {
        return None;
    }
    let (du, dv) = pixel_noise(rng, sigma);
    let (u, v) = (u + du, v + dv);
    if !k.contains(u, v) {
        return None;
    }
    let bearing = Bearing::new(k.lift(u, v)).ok()?;
    let direction = if tax.is_line_like(e.class) {
        let xb = pose.transform(&pole_bottom(e));
        let xb = if xb.z > MIN_DEPTH { xb } else { pose.transform(&(e.point + e.direction)) };
        let (ub, vb) = k.project(&xb)?;
        let (dub, dvb) = pixel_noise(rng, sigma);
        let d = k.lift(ub + dub, vb + dvb) - k.lift(u, v);
        if d.norm() < 1e-12 {
            return None;
        }
        d.normalize()
    } else {
        Vec3::zeros()
    };
    Some(Element2D { bearing, direction, class: e.class })
}

fn random_class(rng: &mut impl Rng, tax: &Taxonomy) -> SemanticClass {
    SemanticClass(rng.random_range(0..tax.len()))
}

/// Projects the submap through `pose` and applies noise, dropout, spurious
/// detections and map clutter. Element order on both sides is shuffled.
pub fn render_view(
    submap: &SubMap,
    pose: &Pose,
    k: &CameraIntrinsics,
    noise: &NoiseConfig,
    seed: u64,
    tax: &Taxonomy,
) -> Result<ScenePair> {
    noise.validate()?;
    k.validate()?;
    let mut rng = rng_for(seed);

    // (observation, index of its map element in `submap`)
    let mut observed: Vec<(Element2D, Option<usize>)> = Vec::new();
    for (j, e) in submap.elements.iter().enumerate() {
        let Some(obs) = observe(e, pose, k, noise.pixel_sigma, &mut rng, tax) else {
            continue;
        };
        if rng.random::<f64>() < noise.dropout_rate {
            continue;
        }
        observed.push((obs, Some(j)));
    }

    let true_count = observed.len();
    for _ in 0..true_count {
        if rng.random::<f64>() >= noise.outlier_rate_2d {
            continue;
        }
        let u = rng.random_range(0.0..k.width);
        let v = rng.random_range(0.0..k.height);
        let class = random_class(&mut rng, tax);
        let direction = if tax.is_line_like(class) {
            let a: f64 = rng.random_range(-0.5..0.5);
            Vec3::new(a.sin(), a.cos(), 0.0)
        } else {
            Vec3::zeros()
        };
        let bearing = Bearing::new(k.lift(u, v))?;
        observed.push((Element2D { bearing, direction, class }, None));
    }

    let mut map: Vec<(Element3D, Option<usize>)> =
        submap.elements.iter().enumerate().map(|(j, e)| (*e, Some(j))).collect();
    let (zlo, zhi) = submap
        .elements
        .iter()
        .map(|e| e.point.z)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), z| (a.min(z), b.max(z)));
    let zrange = if zlo.is_finite() { (zlo, zhi) } else { (0.0, 5.0) };
    for _ in 0..submap.elements.len() {
        if rng.random::<f64>() >= noise.clutter_rate_3d {
            continue;
        }
        let radius = submap.radius * rng.random::<f64>().sqrt();
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let class = random_class(&mut rng, tax);
        let point = Vec3::new(
            submap.origin.x + radius * angle.cos(),
            submap.origin.y + radius * angle.sin(),
            uniform(&mut rng, zrange),
        );
        let direction = if tax.is_line_like(class) { -Vec3::z() } else { Vec3::zeros() };
        map.push((Element3D { point, direction, class }, None));
    }

    observed.shuffle(&mut rng);
    map.shuffle(&mut rng);

    let mut new_index = vec![usize::MAX; submap.elements.len()];
    for (pos, (_, src)) in map.iter().enumerate() {
        if let Some(src) = src {
            new_index[*src] = pos;
        }
    }
    let rows = observed.iter().map(|(_, src)| src.map(|j| new_index[j])).collect();
    let gt_correspondence = Correspondences::new(map.len(), rows)?;
    let elements2d: Vec<Element2D> = observed.into_iter().map(|(e, _)| e).collect();
    let valid = elements2d.len() >= MIN_ELEMENTS;
    Ok(ScenePair {
        elements2d,
        submap: SubMap {
            elements: map.into_iter().map(|(e, _)| e).collect(),
            origin: submap.origin,
            radius: submap.radius,
        },
        gt_pose: *pose,
        gt_correspondence,
        valid,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Yaw drawn uniformly from `[-max_yaw, max_yaw]`, radians.
    pub max_yaw: f64,
    /// Per-axis horizontal translation drawn from `[-max_shift, max_shift]`, meters.
    pub max_shift: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { max_yaw: std::f64::consts::PI, max_shift: 5.0 }
    }
}

/// Random rigid yaw + horizontal shift of the submap. Returns the transform
/// `A` applied to the elements; compose the ground truth as `gt ∘ A⁻¹`.
pub fn augment(submap: &SubMap, cfg: &AugmentConfig, seed: u64) -> (SubMap, Pose) {
    let mut rng = rng_for(seed);
    let draw = |rng: &mut ChaCha8Rng, a: f64| if a > 0.0 { rng.random_range(-a..=a) } else { 0.0 };
    let yaw = draw(&mut rng, cfg.max_yaw);
    let dx = draw(&mut rng, cfg.max_shift);
    let dy = draw(&mut rng, cfg.max_shift);
    let adjustment = Pose::new(Vec3::new(0.0, 0.0, yaw), Vec3::new(dx, dy, 0.0));
    if yaw == 0.0 && dx == 0.0 && dy == 0.0 {
        return (submap.clone(), adjustment);
    }
    let elements = submap.elements.iter().map(|e| e.transformed(&adjustment)).collect();
    let out = SubMap {
        elements,
        origin: submap.origin,
        radius: submap.radius + dx.hypot(dy),
    };
    (out, adjustment)
}

/// Applies an augmentation to a whole pair, keeping the ground truth consistent.
pub fn augment_pair(pair: &ScenePair, cfg: &AugmentConfig, seed: u64) -> ScenePair {
    let (submap, adjustment) = augment(&pair.submap, cfg, seed);
    ScenePair {
        submap,
        gt_pose: pair.gt_pose.compose(&adjustment.inverse()),
        ..pair.clone()
    }
}

/// World-to-camera pose of a level camera at `center` looking along `yaw`
/// (counter-clockwise from +x), optionally tilted by `(roll, pitch)`.
pub fn camera_pose(center: Vec3, yaw: f64, roll: f64, pitch: f64) -> Pose {
    let forward = Vec3::new(yaw.cos(), yaw.sin(), 0.0);
    let right = Vec3::new(yaw.sin(), -yaw.cos(), 0.0);
    let down = -Vec3::z();
    let level = nalgebra::Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
    let tilt = Rotation3::from_euler_angles(pitch, 0.0, roll).into_inner();
    let r = tilt * level;
    let rotation = crate::geometry::rotation_log_unchecked(&r);
    Pose::new(rotation, -(r * center))
}

/// Position and heading prior, e.g. from GPS.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsPrior {
    pub position: Vec3,
    pub yaw: f64,
}

impl GpsPrior {
    /// Transform from the prior's local frame (origin at the prior, x along
    /// its heading, z up) into the world frame.
    pub fn local_to_world(&self) -> Pose {
        Pose::new(Vec3::new(0.0, 0.0, self.yaw), self.position)
    }
}

/// Camera placement and prior error model for dataset frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrameConfig {
    pub scene: SceneConfig,
    pub noise: NoiseConfig,
    pub intrinsics: CameraIntrinsics,
    pub crop_radius: f64,
    pub camera_height: f64,
    /// Distance of the camera behind the scene's southern edge, meters.
    pub standoff: f64,
    /// Uniform lateral placement range, meters.
    pub lateral_jitter: f64,
    /// Uniform heading range around north, radians.
    pub heading_jitter: f64,
    /// Gaussian roll/pitch, radians.
    pub tilt_sigma: f64,
    /// Gaussian horizontal error of the position prior, meters.
    pub gps_sigma: f64,
    /// Gaussian error of the heading prior, radians.
    pub gps_heading_sigma: f64,
    pub augment: Option<AugmentConfig>,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            noise: NoiseConfig::noise_free(),
            intrinsics: CameraIntrinsics::wide_1382x512(),
            crop_radius: 20.0,
            camera_height: 1.65,
            standoff: 2.0,
            lateral_jitter: 4.0,
            heading_jitter: 0.5,
            tilt_sigma: 0.01,
            gps_sigma: 1.0,
            gps_heading_sigma: 0.03,
            augment: None,
        }
    }
}

/// Builds one frame from `seed`: a fresh scene, a camera facing into it, a
/// noisy prior, the submap cropped around the prior and expressed in the
/// prior's local frame, and the rendered observations.
pub fn synthesize_pair(cfg: &FrameConfig, seed: u64, tax: &Taxonomy) -> Result<ScenePair> {
    let mut rng = rng_for(seed);
    let scene_cfg = SceneConfig { seed: rng.next_u64(), ..cfg.scene };
    let world = generate_scene(&scene_cfg, tax)?;

    let half = cfg.scene.area_extent / 2.0;
    let lateral = if cfg.lateral_jitter > 0.0 {
        rng.random_range(-cfg.lateral_jitter..cfg.lateral_jitter)
    } else {
        0.0
    };
    let heading_offset = if cfg.heading_jitter > 0.0 {
        rng.random_range(-cfg.heading_jitter..cfg.heading_jitter)
    } else {
        0.0
    };
    let yaw = std::f64::consts::FRAC_PI_2 + heading_offset;
    let center = Vec3::new(lateral, -half - cfg.standoff, cfg.camera_height);
    let (roll, pitch) = pixel_noise(&mut rng, cfg.tilt_sigma);
    let cam = camera_pose(center, yaw, roll, pitch);

    let (ex, ey) = pixel_noise(&mut rng, cfg.gps_sigma);
    let (eyaw, _) = pixel_noise(&mut rng, cfg.gps_heading_sigma);
    let prior = GpsPrior { position: Vec3::new(center.x + ex, center.y + ey, 0.0), yaw: yaw + eyaw };

    let cropped = crop_submap(&world, prior.position, cfg.crop_radius)?;
    let to_local = prior.local_to_world().inverse();
    let local = SubMap {
        elements: cropped.elements.iter().map(|e| e.transformed(&to_local)).collect(),
        origin: Vec3::zeros(),
        radius: cfg.crop_radius,
    };
    let gt_local = cam.compose(&prior.local_to_world());
    let pair = render_view(&local, &gt_local, &cfg.intrinsics, &cfg.noise, rng.next_u64(), tax)?;
    Ok(match &cfg.augment {
        Some(a) => augment_pair(&pair, a, rng.next_u64()),
        None => pair,
    })
}

/// `count` valid frames. Invalid draws (fewer than four observations) are
/// skipped; the sequence of attempted seeds is fixed by `seed`.
pub fn synthesize_dataset(
    cfg: &FrameConfig,
    count: usize,
    seed: u64,
    tax: &Taxonomy,
) -> Result<Vec<ScenePair>> {
    let mut rng = rng_for(seed);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count {
        attempts += 1;
        if attempts > 100 * count.max(1) {
            return Err(Error::Config("scene configuration rarely yields valid frames".into()));
        }
        let pair = synthesize_pair(cfg, rng.next_u64(), tax)?;
        if pair.valid {
            out.push(pair);
        }
    }
    Ok(out)
}

/// Stereo rig survey of one world scene, the input to map building.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StereoConfig {
    pub scene: SceneConfig,
    pub intrinsics: CameraIntrinsics,
    /// Rig positions, evenly spaced along the scene's south-north axis.
    pub stations: usize,
    /// Left-to-right camera offset, meters.
    pub baseline: f64,
    pub camera_height: f64,
    pub pixel_sigma: f64,
}

impl Default for StereoConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            intrinsics: CameraIntrinsics::wide_1382x512(),
            stations: 6,
            baseline: 0.54,
            camera_height: 1.65,
            pixel_sigma: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StereoSurvey {
    pub world: Vec<Element3D>,
    pub observations: Vec<StereoObservation>,
    /// Index into `world` of the element behind each observation.
    pub sources: Vec<usize>,
}

/// Every element seen by both cameras of a rig yields one observation pair.
pub fn synthesize_stereo(cfg: &StereoConfig, seed: u64, tax: &Taxonomy) -> Result<StereoSurvey> {
    cfg.intrinsics.validate()?;
    if cfg.stations == 0 || !(cfg.baseline > 0.0) || !(cfg.pixel_sigma >= 0.0) {
        return Err(Error::Config(format!("invalid stereo config {cfg:?}")));
    }
    let mut rng = rng_for(seed);
    let scene_cfg = SceneConfig { seed: rng.next_u64(), ..cfg.scene };
    let world = generate_scene(&scene_cfg, tax)?;
    let half = cfg.scene.area_extent / 2.0;
    let step = cfg.scene.area_extent / cfg.stations as f64;
    let yaw = std::f64::consts::FRAC_PI_2;
    let mut observations = Vec::new();
    let mut sources = Vec::new();
    for s in 0..cfg.stations {
        let center = Vec3::new(0.0, -half - 2.0 + s as f64 * step, cfg.camera_height);
        let left_pose = camera_pose(center, yaw, 0.0, 0.0);
        let right_pose = camera_pose(center + Vec3::new(cfg.baseline, 0.0, 0.0), yaw, 0.0, 0.0);
        for (j, e) in world.iter().enumerate() {
            let left = observe(e, &left_pose, &cfg.intrinsics, cfg.pixel_sigma, &mut rng, tax);
            let right = observe(e, &right_pose, &cfg.intrinsics, cfg.pixel_sigma, &mut rng, tax);
            if let (Some(left), Some(right)) = (left, right) {
                observations.push(StereoObservation { left, right, left_pose, right_pose });
                sources.push(j);
            }
        }
    }
    Ok(StereoSurvey { world, observations, sources })
}
