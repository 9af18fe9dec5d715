//! Localization accuracy metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Histogram bin width for RTE, meters.
    pub rte_bin_width: f64,
    /// Histogram bin width for RRE, degrees.
    pub rre_bin_width: f64,
    pub rte_threshold: f64,
    pub rre_threshold_deg: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { rte_bin_width: 0.1, rre_bin_width: 0.1, rte_threshold: 1.0, rre_threshold_deg: 1.0 }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [self.rte_bin_width, self.rre_bin_width, self.rte_threshold, self.rre_threshold_deg];
        if all.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Config(format!("invalid eval config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
}

/// Counts over `[k w, (k+1) w)`, from zero up to the largest value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], bin_width: f64) -> Self {
        let mut counts: Vec<usize> = Vec::new();
        for v in values {
            let k = (v.max(0.0) / bin_width).floor() as usize;
            if counts.len() <= k {
                counts.resize(k + 1, 0);
            }
            counts[k] += 1;
        }
        Self { bin_width, counts }
    }

    /// `(lower edge, upper edge, count)` per bin.
    pub fn bins(&self) -> impl Iterator<Item = (f64, f64, usize)> + '_ {
        let w = self.bin_width;
        self.counts.iter().enumerate().map(move |(k, &c)| (k as f64 * w, (k + 1) as f64 * w, c))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub frames: usize,
    /// Frames without an estimate. They count against the fractions but are
    /// excluded from the error statistics.
    pub failures: usize,
    /// Per frame, `None` for failures.
    pub rte: Vec<Option<f64>>,
    pub rre_deg: Vec<Option<f64>>,
    pub rte_stats: Option<Stats>,
    pub rre_stats: Option<Stats>,
    pub rte_histogram: Histogram,
    pub rre_histogram: Histogram,
    pub rte_threshold: f64,
    pub rre_threshold_deg: f64,
    pub fraction_rte_under: f64,
    pub fraction_rre_under: f64,
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn stats(values: &[f64]) -> Option<Stats> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(Stats {
        mean: v.iter().sum::<f64>() / v.len() as f64,
        q1: quantile(&v, 0.25),
        q2: quantile(&v, 0.5),
        q3: quantile(&v, 0.75),
    })
}

pub fn translation_error(estimate: &Pose, gt: &Pose) -> f64 {
    (estimate.translation - gt.translation).norm()
}

/// Geodesic angle between the two rotations, degrees.
pub fn rotation_error_deg(estimate: &Pose, gt: &Pose) -> f64 {
    let r = estimate.rotation_matrix().transpose() * gt.rotation_matrix();
    crate::geometry::rotation_angle(&r).to_degrees()
}

pub fn evaluate(estimates: &[Option<Pose>], gt: &[Pose], cfg: &EvalConfig) -> Result<EvalSummary> {
    cfg.validate()?;
    if estimates.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} estimates for {} ground-truth poses",
            estimates.len(),
            gt.len()
        )));
    }
    let rte: Vec<Option<f64>> =
        estimates.iter().zip(gt).map(|(e, g)| e.as_ref().map(|e| translation_error(e, g))).collect();
    let rre_deg: Vec<Option<f64>> =
        estimates.iter().zip(gt).map(|(e, g)| e.as_ref().map(|e| rotation_error_deg(e, g))).collect();
    let ok_t: Vec<f64> = rte.iter().flatten().copied().collect();
    let ok_r: Vec<f64> = rre_deg.iter().flatten().copied().collect();
    let frames = gt.len();
    let fraction = |v: &[f64], t: f64| {
        if frames == 0 {
            0.0
        } else {
            v.iter().filter(|x| **x < t).count() as f64 / frames as f64
        }
    };
    Ok(EvalSummary {
        frames,
        failures: frames - ok_t.len(),
        rte_stats: stats(&ok_t),
        rre_stats: stats(&ok_r),
        rte_histogram: Histogram::new(&ok_t, cfg.rte_bin_width),
        rre_histogram: Histogram::new(&ok_r, cfg.rre_bin_width),
        rte_threshold: cfg.rte_threshold,
        rre_threshold_deg: cfg.rre_threshold_deg,
        fraction_rte_under: fraction(&ok_t, cfg.rte_threshold),
        fraction_rre_under: fraction(&ok_r, cfg.rre_threshold_deg),
        rte,
        rre_deg,
    })
}

/// Histogram rows `metric,lower,upper,count`.
pub fn histogram_csv(summary: &EvalSummary) -> String {
    let mut out = String::from("metric,lower,upper,count\n");
    for (name, h) in [("rte_m", &summary.rte_histogram), ("rre_deg", &summary.rre_histogram)] {
        for (lo, hi, c) in h.bins() {
            out.push_str(&format!("{name},{lo},{hi},{c}\n"));
        }
    }
    out
}
