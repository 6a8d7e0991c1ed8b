//! Reconstruction error metrics.

use crate::photomodel::{forward, ForwardModelParams, Quadrant};

/// Mean `|ẑ − z̄|` over masked pixels of all views, in micrometres.
/// Pixels without a finite prediction are skipped.
pub fn eval_depth(pred: &[Vec<f64>], gt: &[Vec<f64>], masks: &[Vec<bool>], scene_scale: f64) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((p, g), m) in pred.iter().zip(gt).zip(masks) {
        for i in 0..m.len() {
            if m[i] && p[i].is_finite() && g[i].is_finite() {
                sum += (p[i] - g[i]).abs();
                n += 1;
            }
        }
    }
    if n == 0 {
        return 0.0;
    }
    sum / n as f64 * scene_scale
}

pub fn angle_deg(a: [f64; 3], b: [f64; 3]) -> f64 {
    let c = [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ];
    let sin = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
    let cos = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    sin.atan2(cos).to_degrees()
}

fn nonzero(n: [f64; 3]) -> bool {
    n.iter().all(|v| v.is_finite()) && n != [0.0; 3]
}

/// Mean angle in degrees between predicted and true normals over masked
/// pixels; pixels without a prediction are skipped.
pub fn eval_normal(pred: &[Vec<[f64; 3]>], gt: &[Vec<[f64; 3]>], masks: &[Vec<bool>]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((p, g), m) in pred.iter().zip(gt).zip(masks) {
        for i in 0..m.len() {
            if m[i] && nonzero(p[i]) && nonzero(g[i]) {
                sum += angle_deg(p[i], g[i]);
                n += 1;
            }
        }
    }
    if n == 0 {
        return 0.0;
    }
    sum / n as f64
}

/// Mean absolute difference between two forward models along each
/// quadrant's own azimuth, `θ` uniform on [0°, 60°] with `t` samples.
pub fn eval_bse_model(est: &ForwardModelParams, gt: &ForwardModelParams, t: usize) -> f64 {
    let t = t.max(2);
    let mut sum = 0.0;
    for q in Quadrant::ALL {
        let az = q.azimuth(gt.detector_rotation);
        for k in 0..t {
            let theta = (60.0 * k as f64 / (t - 1) as f64).to_radians();
            sum += (gt.intensity_at(q, theta, az) - est.intensity_at(q, theta, az)).abs();
        }
    }
    sum / (4 * t) as f64
}

/// Shadow accuracy in percent between two sets of per-view, per-quadrant
/// shadow maps. Symmetric in its two map arguments.
pub fn shadow_accuracy(a: &[[Vec<f64>; 4]], b: &[[Vec<f64>; 4]], masks: &[Vec<bool>]) -> f64 {
    let mut ratios = Vec::new();
    for ((va, vb), m) in a.iter().zip(b).zip(masks) {
        for q in 0..4 {
            let (mut num, mut den) = (0.0, 0.0);
            for i in 0..m.len() {
                if m[i] && va[q][i].is_finite() && vb[q][i].is_finite() {
                    num += (va[q][i] - vb[q][i]).abs();
                    den += va[q][i] + vb[q][i];
                }
            }
            if den > 0.0 {
                ratios.push(num / den);
            }
        }
    }
    if ratios.is_empty() {
        return 100.0;
    }
    100.0 * (1.0 - ratios.iter().sum::<f64>() / ratios.len() as f64)
}

/// Estimated shadows `|F(n̂; Φ̂) − b′|` for one view; NaN where the normal
/// is missing or faces away.
pub fn estimated_shadows(est: &ForwardModelParams, normals: &[[f64; 3]], images: &[Vec<f64>; 4]) -> [Vec<f64>; 4] {
    let view = est.view();
    std::array::from_fn(|qi| {
        let q = Quadrant::ALL[qi];
        normals
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                if nonzero(n) && n[2] > 0.0 {
                    (forward(n, q, &view, est.detector_rotation, est.kind) - images[qi][i]).abs()
                } else {
                    f64::NAN
                }
            })
            .collect()
    })
}

/// Shadow accuracy of `est` given predicted camera-frame normals, observed
/// images and true shadow maps.
pub fn eval_shadow(
    est: &ForwardModelParams,
    normals: &[Vec<[f64; 3]>],
    images: &[[Vec<f64>; 4]],
    shadows: &[[Vec<f64>; 4]],
    masks: &[Vec<bool>],
) -> f64 {
    let estimated: Vec<[Vec<f64>; 4]> = normals
        .iter()
        .zip(images)
        .map(|(n, b)| estimated_shadows(est, n, b))
        .collect();
    shadow_accuracy(shadows, &estimated, masks)
}
