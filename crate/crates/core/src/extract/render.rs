//! Per-view depth and normal maps from a field or a depth map.

use rayon::prelude::*;

use crate::dataset::Camera;
use crate::field::{render_ray, render_samples, sample_ray, Aabb, Ray, SdfFieldParams, HIT_THRESHOLD};

#[derive(Clone, Debug, PartialEq)]
pub struct ViewMaps {
    /// Ray depth, NaN where the total weight is too small to define one.
    pub depth: Vec<f64>,
    /// Unit camera-frame normals, zero where undefined.
    pub normal: Vec<[f64; 3]>,
    pub hit_weight: Vec<f64>,
}

impl ViewMaps {
    pub fn hits(&self) -> Vec<bool> {
        self.hit_weight.iter().map(|&w| w >= HIT_THRESHOLD).collect()
    }
}

pub fn render_view(field: &SdfFieldParams, camera: &Camera, bounds: &Aabb, samples: usize) -> ViewMaps {
    let px: Vec<(f64, [f64; 3], f64)> = (0..camera.pixel_count())
        .into_par_iter()
        .map(|i| {
            let (o, d) = camera.ray(i / camera.width, i % camera.width);
            let Some(ray) = Ray::through_box(o, d, bounds) else {
                return (f64::NAN, [0.0; 3], 0.0);
            };
            match render_ray(field, &ray, samples) {
                Ok(r) if r.defined => (r.depth, camera.to_camera(r.normal), r.hit_weight),
                Ok(r) => (f64::NAN, [0.0; 3], r.hit_weight),
                Err(_) => (f64::NAN, [0.0; 3], 0.0),
            }
        })
        .collect();
    ViewMaps {
        depth: px.iter().map(|p| p.0).collect(),
        normal: px.iter().map(|p| p.1).collect(),
        hit_weight: px.iter().map(|p| p.2).collect(),
    }
}

/// Depth and normal of the first zero crossing of the field along each ray:
/// the sign change is located on `samples` stratum centres, refined by
/// bisection, and the normal is the normalised field gradient there.
/// Undefined (NaN, zero normal) where no crossing is found.
pub fn surface_view(field: &SdfFieldParams, camera: &Camera, bounds: &Aabb, samples: usize) -> ViewMaps {
    let px: Vec<(f64, [f64; 3], f64)> = (0..camera.pixel_count())
        .into_par_iter()
        .map(|i| {
            let (o, d) = camera.ray(i / camera.width, i % camera.width);
            let Some(ray) = Ray::through_box(o, d, bounds) else {
                return (f64::NAN, [0.0; 3], 0.0);
            };
            let s = sample_ray(field, &ray, samples.max(2));
            let weight = render_samples(&s.depths, &s.sdf, &s.sdf_gradient, field.sharpness()).hit_weight;
            let first = if s.sdf[0] <= 0.0 {
                None
            } else {
                s.sdf.windows(2).position(|w| w[0] > 0.0 && w[1] <= 0.0)
            };
            let Some(k) = first else {
                return (f64::NAN, [0.0; 3], weight);
            };
            let (mut a, mut b) = (s.depths[k], s.depths[k + 1]);
            for _ in 0..BISECTIONS {
                let m = 0.5 * (a + b);
                if field.sdf(ray.at(m)) > 0.0 {
                    a = m;
                } else {
                    b = m;
                }
            }
            let t = 0.5 * (a + b);
            let g = field.sdf_gradient(ray.at(t));
            let len = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
            if !(len > 0.0) || !len.is_finite() {
                return (t, [0.0; 3], weight);
            }
            (t, camera.to_camera([g[0] / len, g[1] / len, g[2] / len]), weight)
        })
        .collect();
    ViewMaps {
        depth: px.iter().map(|p| p.0).collect(),
        normal: px.iter().map(|p| p.1).collect(),
        hit_weight: px.iter().map(|p| p.2).collect(),
    }
}

const BISECTIONS: usize = 40;

/// Camera-frame normals of the surface described by a ray-depth map, from
/// central differences of the back-projected points (one-sided next to
/// missing pixels). Zero where no neighbour pair is available.
pub fn normals_from_depth(camera: &Camera, depth: &[f64]) -> Vec<[f64; 3]> {
    let (w, h) = (camera.width, camera.height);
    let pos = camera.position();
    let point = |r: usize, c: usize| -> Option<[f64; 3]> {
        let t = depth[r * w + c];
        if !t.is_finite() {
            return None;
        }
        let (o, d) = camera.ray(r, c);
        let p = [o[0] + t * d[0] - pos[0], o[1] + t * d[1] - pos[1], o[2] + t * d[2] - pos[2]];
        Some(camera.to_camera(p))
    };
    let diff = |a: Option<[f64; 3]>, b: Option<[f64; 3]>| a.zip(b).map(|(a, b)| [a[0] - b[0], a[1] - b[1], a[2] - b[2]]);
    (0..w * h)
        .map(|i| {
            let (r, c) = (i / w, i % w);
            let here = point(r, c);
            if here.is_none() {
                return [0.0; 3];
            }
            let left = if c > 0 { point(r, c - 1) } else { None };
            let right = if c + 1 < w { point(r, c + 1) } else { None };
            let up = if r > 0 { point(r - 1, c) } else { None };
            let down = if r + 1 < h { point(r + 1, c) } else { None };
            let du = diff(right, left).or(diff(right, here)).or(diff(here, left));
            let dv = diff(down, up).or(diff(down, here)).or(diff(here, up));
            let (Some(du), Some(dv)) = (du, dv) else {
                return [0.0; 3];
            };
            let n = [
                du[1] * dv[2] - du[2] * dv[1],
                du[2] * dv[0] - du[0] * dv[2],
                du[0] * dv[1] - du[1] * dv[0],
            ];
            let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            if len == 0.0 {
                return [0.0; 3];
            }
            let s = if n[2] < 0.0 { -1.0 } else { 1.0 } / len;
            [n[0] * s, n[1] * s, n[2] * s]
        })
        .collect()
}
