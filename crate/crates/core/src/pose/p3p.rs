//! Minimal three-point absolute pose (Grunert's quartic).

use nalgebra::{Complex, DMatrix, Matrix3};

use crate::geometry::{angle_between, Mat3, Pose, Vec3};

/// Candidates whose three reprojections all fall below this angle are kept.
pub const P3P_TOLERANCE: f64 = 1e-6;

/// Poses mapping each `points[k]` onto `bearings[k]`; empty when degenerate.
pub fn p3p(bearings: &[Vec3; 3], points: &[Vec3; 3]) -> Vec<Pose> {
    let [f1, f2, f3] = bearings.map(|f| f.normalize());
    let [p1, p2, p3] = *points;
    let scale = (p2 - p1).norm().max((p3 - p1).norm()).max(1e-300);
    if (p2 - p1).cross(&(p3 - p1)).norm() <= 1e-9 * scale * scale {
        return Vec::new();
    }
    if f1.cross(&f2).norm() < 1e-12 || f1.cross(&f3).norm() < 1e-12 || f2.cross(&f3).norm() < 1e-12 {
        return Vec::new();
    }
    let a2 = (p2 - p3).norm_squared();
    let b2 = (p1 - p3).norm_squared();
    let c2 = (p1 - p2).norm_squared();
    let ca = f2.dot(&f3);
    let cb = f1.dot(&f3);
    let cg = f1.dot(&f2);

    let amc = (a2 - c2) / b2;
    let apc = (a2 + c2) / b2;
    let a4 = (amc - 1.0).powi(2) - 4.0 * c2 / b2 * ca * ca;
    let a3 = 4.0
        * (amc * (1.0 - amc) * cb - (1.0 - apc) * ca * cg + 2.0 * c2 / b2 * ca * ca * cb);
    let a2c = 2.0
        * (amc * amc - 1.0 + 2.0 * amc * amc * cb * cb + 2.0 * (b2 - c2) / b2 * ca * ca
            - 4.0 * apc * ca * cb * cg
            + 2.0 * (b2 - a2) / b2 * cg * cg);
    let a1 = 4.0 * (-amc * (1.0 + amc) * cb + 2.0 * a2 / b2 * cg * cg * cb - (1.0 - apc) * ca * cg);
    let a0 = (1.0 + amc).powi(2) - 4.0 * a2 / b2 * cg * cg;
    let coeffs = [a4, a3, a2c, a1, a0];

    let mut poses: Vec<Pose> = Vec::new();
    for v in real_roots(&coeffs) {
        if !(v > 0.0) {
            continue;
        }
        let denom = 2.0 * (cg - v * ca);
        if denom.abs() < 1e-14 {
            continue;
        }
        let u = ((amc - 1.0) * v * v - 2.0 * amc * cb * v + 1.0 + amc) / denom;
        let d = 1.0 + v * v - 2.0 * v * cb;
        if !(u > 0.0) || !(d > 0.0) {
            continue;
        }
        let s1 = (b2 / d).sqrt();
        let cam = [f1 * s1, f2 * (u * s1), f3 * (v * s1)];
        let Some(pose) = absolute_orientation(points, &cam) else { continue };
        let ok = (0..3).all(|k| angle_between(&bearings[k], &pose.transform(&points[k])) < P3P_TOLERANCE);
        let dup = poses.iter().any(|q| {
            (q.translation - pose.translation).norm() < 1e-9 && (q.rotation - pose.rotation).norm() < 1e-9
        });
        if ok && !dup {
            poses.push(pose);
        }
    }
    poses
}

/// Rigid transform taking `src` onto `dst` in the least-squares sense.
pub fn absolute_orientation(src: &[Vec3; 3], dst: &[Vec3; 3]) -> Option<Pose> {
    let cs = (src[0] + src[1] + src[2]) / 3.0;
    let cd = (dst[0] + dst[1] + dst[2]) / 3.0;
    let mut h = Matrix3::zeros();
    for k in 0..3 {
        h += (src[k] - cs) * (dst[k] - cd).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let v = vt.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r: Mat3 = v * Mat3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * u.transpose();
    let pose = Pose::from_matrix(&r, cd - r * cs).ok()?;
    pose.is_finite().then_some(pose)
}

/// Real roots of `c[0] x^n + ... + c[n]`, polished with Newton steps.
pub fn real_roots(coeffs: &[f64]) -> Vec<f64> {
    let max = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if max == 0.0 || !max.is_finite() {
        return Vec::new();
    }
    let start = coeffs.iter().position(|c| c.abs() > 1e-12 * max).unwrap_or(coeffs.len());
    let c = &coeffs[start..];
    let n = c.len().saturating_sub(1);
    if n == 0 {
        return Vec::new();
    }
    let mut companion = DMatrix::zeros(n, n);
    for k in 0..n {
        companion[(0, k)] = -c[k + 1] / c[0];
    }
    for k in 1..n {
        companion[(k, k - 1)] = 1.0;
    }
    let eig: Vec<Complex<f64>> = companion.complex_eigenvalues().iter().copied().collect();
    let eval = |x: f64| {
        let mut p = 0.0;
        let mut dp = 0.0;
        for &ck in c {
            dp = dp * x + p;
            p = p * x + ck;
        }
        (p, dp)
    };
    let mut roots = Vec::new();
    for z in eig {
        if z.im.abs() > 1e-3 * (1.0 + z.re.abs()) {
            continue;
        }
        let mut x = z.re;
        for _ in 0..20 {
            let (p, dp) = eval(x);
            if dp == 0.0 {
                break;
            }
            let step = p / dp;
            x -= step;
            if step.abs() <= 1e-15 * (1.0 + x.abs()) {
                break;
            }
        }
        if x.is_finite() {
            roots.push(x);
        }
    }
    roots
}
