//! Unbiased, occlusion-aware volume rendering of an SDF along a ray.

use rand::Rng;

use crate::diffcore::Real;

use super::{Aabb, FieldError, SdfFieldParams};

/// Rays whose accumulated weight falls below this are treated as misses.
pub const HIT_THRESHOLD: f64 = 0.5;
/// Below this total weight depth and normal are undefined.
pub const MIN_WEIGHT_SUM: f64 = 1e-8;
/// Keeps the opacity ratio finite once the CDF underflows behind a surface.
const ALPHA_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: [f64; 3],
    pub direction: [f64; 3],
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    /// Ray clipped to `bounds`; `None` if it misses the box.
    pub fn through_box(origin: [f64; 3], direction: [f64; 3], bounds: &Aabb) -> Option<Ray> {
        let n = (direction[0].powi(2) + direction[1].powi(2) + direction[2].powi(2)).sqrt();
        let dir = [direction[0] / n, direction[1] / n, direction[2] / n];
        let (t0, t1) = bounds.intersect(origin, dir)?;
        let t_near = t0.max(0.0);
        (t1 > t_near).then_some(Ray {
            origin,
            direction: dir,
            t_near,
            t_far: t1,
        })
    }

    pub fn at(&self, t: f64) -> [f64; 3] {
        [
            self.origin[0] + t * self.direction[0],
            self.origin[1] + t * self.direction[1],
            self.origin[2] + t * self.direction[2],
        ]
    }
}

/// Stratified sample depths, one per equal-width stratum; centred when no
/// random source is given.
pub fn stratified_depths<R: Rng>(ray: &Ray, n: usize, rng: Option<&mut R>) -> Vec<f64> {
    let step = (ray.t_far - ray.t_near) / n as f64;
    match rng {
        Some(rng) => (0..n)
            .map(|k| ray.t_near + (k as f64 + rng.random::<f64>()) * step)
            .collect(),
        None => (0..n).map(|k| ray.t_near + (k as f64 + 0.5) * step).collect(),
    }
}

/// Per-ray compositing result.
#[derive(Clone, Debug)]
pub struct Composite<S> {
    pub depth: S,
    pub normal: [S; 3],
    pub hit_weight: S,
    /// Interval weights `w_k`, one per consecutive sample pair.
    pub weights: Vec<S>,
    /// `false` when the total weight is too small to define depth/normal;
    /// `depth` and `normal` are then meaningless.
    pub defined: bool,
}

impl<S: Real> Composite<S> {
    pub fn is_hit(&self) -> bool {
        self.defined && self.hit_weight.value() >= HIT_THRESHOLD
    }
}

/// Composite per-sample SDF values and gradients at depths `t` into depth,
/// normal and accumulated weight.
///
/// Opacity of interval `k` is `max((Φ(s_k) − Φ(s_{k+1})) / Φ(s_k), 0)` with
/// `Φ` the logistic sigmoid scaled by `sharpness`; weights follow the usual
/// front-to-back transmittance product. Depth is taken at interval midpoints
/// and the normal is the weight-averaged mean of the interval end gradients.
pub fn composite<S: Real>(t: &[f64], sdf: &[S], grad: &[[S; 3]], sharpness: S) -> Composite<S> {
    assert!(t.len() >= 2 && t.len() == sdf.len() && t.len() == grad.len());
    let cdf: Vec<S> = sdf.iter().map(|&s| (s * sharpness).sigmoid()).collect();
    let n = t.len() - 1;
    let mut weights = Vec::with_capacity(n);
    let mut transmittance: Option<S> = None;
    for k in 0..n {
        let alpha = ((cdf[k] - cdf[k + 1]) / (cdf[k] + ALPHA_EPS)).max_const(0.0);
        let w = match transmittance {
            None => alpha,
            Some(tr) => alpha * tr,
        };
        transmittance = Some(match transmittance {
            None => alpha.rsub(1.0),
            Some(tr) => tr * alpha.rsub(1.0),
        });
        weights.push(w);
    }
    let hit_weight = S::sum(&weights);
    let defined = hit_weight.value() >= MIN_WEIGHT_SUM;
    let mids: Vec<S> = (0..n).map(|k| weights[k] * (0.5 * (t[k] + t[k + 1]))).collect();
    let depth = S::sum(&mids) / hit_weight;
    let mut normal_acc = [hit_weight; 3];
    for (d, slot) in normal_acc.iter_mut().enumerate() {
        let terms: Vec<S> = (0..n)
            .map(|k| weights[k] * ((grad[k][d] + grad[k + 1][d]) * 0.5))
            .collect();
        *slot = S::sum(&terms);
    }
    let len = S::norm(&normal_acc);
    let normal = if len.value() > crate::diffcore::NORM_GUARD {
        [normal_acc[0] / len, normal_acc[1] / len, normal_acc[2] / len]
    } else {
        normal_acc
    };
    Composite {
        depth,
        normal,
        hit_weight,
        weights,
        defined: defined && len.value() > crate::diffcore::NORM_GUARD,
    }
}

/// Samples along a ray with their field values and compositing weights.
#[derive(Clone, Debug)]
pub struct RaySample {
    pub depths: Vec<f64>,
    pub positions: Vec<[f64; 3]>,
    pub sdf: Vec<f64>,
    pub sdf_gradient: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderOutput {
    pub depth: f64,
    pub normal: [f64; 3],
    pub hit_weight: f64,
    pub defined: bool,
}

impl RenderOutput {
    pub fn is_hit(&self) -> bool {
        self.defined && self.hit_weight >= HIT_THRESHOLD
    }
}

/// Evaluate the field at deterministic stratum centres along `ray`.
pub fn sample_ray(field: &SdfFieldParams, ray: &Ray, n_samples: usize) -> RaySample {
    let depths = stratified_depths::<rand_chacha::ChaCha8Rng>(ray, n_samples, None);
    sample_at(field, ray, depths)
}

pub(crate) fn sample_at(field: &SdfFieldParams, ray: &Ray, depths: Vec<f64>) -> RaySample {
    let mut sc = field.scratch();
    let positions: Vec<[f64; 3]> = depths.iter().map(|&t| ray.at(t)).collect();
    let evals: Vec<_> = positions.iter().map(|&p| field.eval_with(p, &mut sc)).collect();
    let sdf: Vec<f64> = evals.iter().map(|e| e.sdf).collect();
    let sdf_gradient: Vec<[f64; 3]> = evals.iter().map(|e| e.grad).collect();
    let c = composite(&depths, &sdf, &sdf_gradient, field.sharpness());
    RaySample {
        depths,
        positions,
        sdf,
        sdf_gradient,
        weights: c.weights,
    }
}

pub fn render_ray(
    field: &SdfFieldParams,
    ray: &Ray,
    n_samples: usize,
) -> Result<RenderOutput, FieldError> {
    if n_samples < 2 {
        return Err(FieldError::TooFewSamples(n_samples));
    }
    let s = sample_ray(field, ray, n_samples);
    Ok(render_samples(&s.depths, &s.sdf, &s.sdf_gradient, field.sharpness()))
}

/// Composite already-evaluated samples (plain floating point).
pub fn render_samples(t: &[f64], sdf: &[f64], grad: &[[f64; 3]], sharpness: f64) -> RenderOutput {
    let c = composite(t, sdf, grad, sharpness);
    RenderOutput {
        depth: c.depth,
        normal: c.normal,
        hit_weight: c.hit_weight,
        defined: c.defined,
    }
}
