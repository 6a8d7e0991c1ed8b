//! Synthetic multi-view 4Q-BSE datasets from analytic scenes.

mod scene;

pub use scene::{trace, SceneKind, PARABOLOID_HEIGHT, PARABOLOID_RADIUS, SLAB_TOP, SPHERE_RADIUS};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Camera, Dataset, GroundTruth, View};
use crate::field::Aabb;
use crate::photomodel::{forward, ForwardKind, ForwardModelParams, Quadrant};

/// Default noise level of the quadrant images (intensity units).
pub const BSE_SIGMA: f64 = 0.9142;
/// Confidence assigned to every coarse-depth pixel.
pub const COARSE_CONFIDENCE: f32 = 0.2;

pub const IMAGE_WIDTH: usize = 128;
pub const IMAGE_HEIGHT: usize = 96;
pub const PIXEL_SIZE: f64 = 0.8 / 128.0;
pub const CAMERA_DISTANCE: f64 = 1.5;

/// Quadrant-varied ground-truth forward model used by default.
pub fn default_phi() -> ForwardModelParams {
    ForwardModelParams {
        c: [31.0, 29.0, 30.0, 32.0],
        d: [24.0, 26.0, 25.0, 23.0],
        e: [40.0, 42.0, 38.0, 41.0],
        p: [0.3, -0.1, 0.4, -0.05],
        detector_rotation: 0.0,
        kind: ForwardKind::Polynomial,
    }
}

/// Tilt poses: two orthogonal axes, −45° to 45° in 5° steps, the untilted
/// pose counted once.
#[derive(Clone, Debug, PartialEq)]
pub struct Rig {
    /// (tilt about x, tilt about y) in degrees.
    pub poses: Vec<(f64, f64)>,
}

impl Rig {
    pub fn full() -> Self {
        Self::subset(1)
    }

    /// Poses whose tilt index is a multiple of `stride`.
    pub fn subset(stride: usize) -> Self {
        let stride = stride.max(1) as i32;
        let mut poses = Vec::new();
        for k in -9..=9 {
            if k % stride == 0 {
                poses.push((5.0 * k as f64, 0.0));
            }
        }
        for k in -9..=9 {
            if k != 0 && k % stride == 0 {
                poses.push((0.0, 5.0 * k as f64));
            }
        }
        Rig { poses }
    }

    /// The subset with the most poses not exceeding `n` (at least one pose).
    pub fn with_view_count(n: usize) -> Self {
        (1..=10)
            .map(Rig::subset)
            .filter(|r| r.poses.len() <= n.max(1))
            .max_by_key(|r| r.poses.len())
            .unwrap_or_else(|| Rig::subset(10))
    }

    pub fn cameras(&self, width: usize, height: usize, pixel_size: f64) -> Vec<Camera> {
        self.poses
            .iter()
            .map(|&(tx, ty)| Camera::tilted(tx, ty, CAMERA_DISTANCE, width, height, pixel_size))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub scene: SceneKind,
    pub views: usize,
    pub width: usize,
    pub height: usize,
    pub pixel_size: f64,
    /// Micrometres per scene unit.
    pub scene_scale: f64,
    pub phi: ForwardModelParams,
    pub sigma: f64,
    pub shadows: bool,
    pub light_samples: usize,
    /// Gaussian blur standard deviation of the coarse depth, pixels.
    pub blur_radius: f64,
    /// Coarse-depth noise amplitude as a fraction of the scene height range.
    pub noise_amp: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            scene: SceneKind::Sphere,
            views: 9,
            width: IMAGE_WIDTH,
            height: IMAGE_HEIGHT,
            pixel_size: PIXEL_SIZE,
            scene_scale: 50.0,
            phi: default_phi(),
            sigma: BSE_SIGMA,
            shadows: true,
            light_samples: 64,
            blur_radius: 3.0,
            noise_amp: 0.02,
            seed: 0,
        }
    }
}

/// Per-view ground-truth geometry before shading.
#[derive(Clone, Debug)]
pub struct GeometryMaps {
    pub depth: Vec<f64>,
    /// World-space hit points (meaningless on background).
    pub points: Vec<[f64; 3]>,
    pub normal_world: Vec<[f64; 3]>,
    pub normal_cam: Vec<[f64; 3]>,
}

impl GeometryMaps {
    pub fn foreground(&self) -> Vec<bool> {
        self.depth.iter().map(|d| d.is_finite()).collect()
    }
}

/// Sphere-traced depth and analytic normals for one camera.
pub fn render_ground_truth(scene: SceneKind, camera: &Camera) -> GeometryMaps {
    let n = camera.pixel_count();
    let rows: Vec<(f64, [f64; 3], [f64; 3], [f64; 3])> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (o, d) = camera.ray(i / camera.width, i % camera.width);
            let hit = Aabb::UNIT.intersect(o, d).and_then(|(t0, t1)| trace(scene, o, d, t0.max(0.0), t1));
            match hit {
                Some(t) => {
                    let p = [o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]];
                    let nw = scene.normal(p);
                    (t, p, nw, camera.to_camera(nw))
                }
                None => (f64::NAN, [0.0; 3], [0.0; 3], [0.0; 3]),
            }
        })
        .collect();
    GeometryMaps {
        depth: rows.iter().map(|r| r.0).collect(),
        points: rows.iter().map(|r| r.1).collect(),
        normal_world: rows.iter().map(|r| r.2).collect(),
        normal_cam: rows.iter().map(|r| r.3).collect(),
    }
}

/// Quadrant light: annular sector in the camera frame above the sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadrantLight {
    pub inner: f64,
    pub outer: f64,
    pub elevation: f64,
    pub azimuth: f64,
    pub half_angle: f64,
}

impl QuadrantLight {
    /// Lights for a scene of the given extent, centred on each quadrant azimuth.
    pub fn for_quadrant(q: Quadrant, detector_rotation: f64, extent: f64) -> Self {
        Self {
            inner: 2.0 * extent,
            outer: 6.0 * extent,
            elevation: 10.0 * extent,
            azimuth: q.azimuth(detector_rotation),
            half_angle: std::f64::consts::FRAC_PI_4,
        }
    }

    /// Camera-frame point for unit-square coordinates, uniform in area.
    pub fn point(&self, u: f64, v: f64) -> [f64; 3] {
        let r = (self.inner.powi(2) + u * (self.outer.powi(2) - self.inner.powi(2))).sqrt();
        let a = self.azimuth + (2.0 * v - 1.0) * self.half_angle;
        [r * a.cos(), r * a.sin(), self.elevation]
    }
}

fn pixel_seed(seed: u64, view: usize, pixel: usize, salt: u64) -> u64 {
    let mut x = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [view as u64, pixel as u64, salt] {
        x = (x ^ v).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        x ^= x >> 31;
    }
    x
}

/// Fraction of each quadrant light hidden from every foreground pixel,
/// by stratified Monte Carlo with `samples` shadow rays.
pub fn occlusion_fractions(
    scene: SceneKind,
    camera: &Camera,
    geo: &GeometryMaps,
    detector_rotation: f64,
    samples: usize,
    seed: u64,
    view: usize,
) -> [Vec<f64>; 4] {
    let lights = Quadrant::ALL.map(|q| QuadrantLight::for_quadrant(q, detector_rotation, 1.0));
    let samples = samples.max(1);
    // nu × nv = samples strata, as close to square as the count allows
    let nu = (1..=samples).filter(|k| samples % k == 0 && k * k <= samples).max().unwrap_or(1);
    let nv = samples / nu;
    let n = camera.pixel_count();
    let per_pixel: Vec<[f64; 4]> = (0..n)
        .into_par_iter()
        .map(|i| {
            if !geo.depth[i].is_finite() {
                return [0.0; 4];
            }
            let nw = geo.normal_world[i];
            let p = geo.points[i];
            let start = [p[0] + 1e-4 * nw[0], p[1] + 1e-4 * nw[1], p[2] + 1e-4 * nw[2]];
            let mut rng = ChaCha8Rng::seed_from_u64(pixel_seed(seed, view, i, 1));
            let mut out = [0.0; 4];
            for (qi, light) in lights.iter().enumerate() {
                let mut blocked = 0usize;
                for s in 0..samples {
                    let u = ((s % nu) as f64 + rng.random::<f64>()) / nu as f64;
                    let v = ((s / nu) as f64 + rng.random::<f64>()) / nv as f64;
                    let lw = camera.to_world(light.point(u, v));
                    let d = [lw[0] - start[0], lw[1] - start[1], lw[2] - start[2]];
                    let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                    let dir = [d[0] / len, d[1] / len, d[2] / len];
                    if dir[0] * nw[0] + dir[1] * nw[1] + dir[2] * nw[2] <= 0.0 {
                        blocked += 1;
                        continue;
                    }
                    let exit = Aabb::UNIT.intersect(start, dir).map_or(0.0, |(_, t1)| t1);
                    if trace(scene, start, dir, 0.0, exit.min(len)).is_some() {
                        blocked += 1;
                    }
                }
                out[qi] = blocked as f64 / samples as f64;
            }
            out
        })
        .collect();
    std::array::from_fn(|q| per_pixel.iter().map(|v| v[q]).collect())
}

/// Shadow-free intensities `F(n̄; Φ̄)` per quadrant (zero on background).
pub fn shade(geo: &GeometryMaps, phi: &ForwardModelParams) -> [Vec<f64>; 4] {
    let view = phi.view();
    std::array::from_fn(|qi| {
        let q = Quadrant::ALL[qi];
        geo.normal_cam
            .iter()
            .zip(&geo.depth)
            .map(|(n, d)| {
                if d.is_finite() {
                    let nz = [n[0], n[1], n[2].max(1e-6)];
                    forward(nz, q, &view, phi.detector_rotation, phi.kind)
                } else {
                    0.0
                }
            })
            .collect()
    })
}

/// Shadow intensity `ψ̄ = occluded fraction × F(n̄; Φ̄)`.
pub fn render_shadows(
    scene: SceneKind,
    camera: &Camera,
    geo: &GeometryMaps,
    phi: &ForwardModelParams,
    samples: usize,
    seed: u64,
    view: usize,
) -> [Vec<f64>; 4] {
    let frac = occlusion_fractions(scene, camera, geo, phi.detector_rotation, samples, seed, view);
    let clean = shade(geo, phi);
    std::array::from_fn(|q| frac[q].iter().zip(&clean[q]).map(|(f, c)| f * c).collect())
}

/// `b′ = F − ψ̄ + N(0, σ²)` before quantisation; background is `e_q` plus noise.
pub fn synthesize_bse(
    geo: &GeometryMaps,
    shadow: &[Vec<f64>; 4],
    phi: &ForwardModelParams,
    sigma: f64,
    rng: &mut impl Rng,
) -> [Vec<f64>; 4] {
    let clean = shade(geo, phi);
    let noise = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
    std::array::from_fn(|q| {
        (0..geo.depth.len())
            .map(|i| {
                let base = if geo.depth[i].is_finite() {
                    clean[q][i] - shadow[q][i]
                } else {
                    phi.e[q]
                };
                if sigma > 0.0 {
                    base + noise.sample(rng)
                } else {
                    base
                }
            })
            .collect()
    })
}

/// Clamp to [0, 255] and round to 8 bits.
pub fn quantize(img: &[f64]) -> Vec<u8> {
    img.iter().map(|v| v.clamp(0.0, 255.0).round() as u8).collect()
}

/// Smooth band-limited 3D displacement field.
#[derive(Clone, Debug)]
pub struct SmoothNoise {
    waves: Vec<([f64; 3], f64, f64)>,
}

impl SmoothNoise {
    pub fn new(amplitude: f64, rng: &mut impl Rng) -> Self {
        let k = 4;
        let waves = (0..k)
            .map(|_| {
                let dir: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
                let n = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt().max(1e-9);
                let freq = std::f64::consts::TAU / rng.random_range(0.3..0.7);
                (
                    [dir[0] / n * freq, dir[1] / n * freq, dir[2] / n * freq],
                    rng.random_range(0.0..std::f64::consts::TAU),
                    amplitude / k as f64,
                )
            })
            .collect();
        Self { waves }
    }

    pub fn at(&self, p: [f64; 3]) -> f64 {
        self.waves
            .iter()
            .map(|(w, ph, a)| a * (w[0] * p[0] + w[1] * p[1] + w[2] * p[2] + ph).sin())
            .sum()
    }
}

/// Gaussian blur restricted to finite pixels (normalised convolution).
pub fn blur_masked(img: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return img.to_vec();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-r..=r).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let pass = |src: &[f64], wsum: &[f64], horizontal: bool| -> (Vec<f64>, Vec<f64>) {
        let mut out = vec![0.0; src.len()];
        let mut wout = vec![0.0; src.len()];
        for y in 0..height as isize {
            for x in 0..width as isize {
                let (mut acc, mut wacc) = (0.0, 0.0);
                for (ki, k) in (-r..=r).enumerate() {
                    let (xx, yy) = if horizontal { (x + k, y) } else { (x, y + k) };
                    if xx < 0 || yy < 0 || xx >= width as isize || yy >= height as isize {
                        continue;
                    }
                    let j = yy as usize * width + xx as usize;
                    acc += kernel[ki] * src[j];
                    wacc += kernel[ki] * wsum[j];
                }
                let i = y as usize * width + x as usize;
                out[i] = acc;
                wout[i] = wacc;
            }
        }
        (out, wout)
    };
    let valid: Vec<f64> = img.iter().map(|v| if v.is_finite() { 1.0 } else { 0.0 }).collect();
    let masked: Vec<f64> = img.iter().map(|v| if v.is_finite() { *v } else { 0.0 }).collect();
    let (h, hw) = pass(&masked, &valid, true);
    let (v, vw) = pass(&h, &hw, false);
    img.iter()
        .enumerate()
        .map(|(i, orig)| if orig.is_finite() && vw[i] > 0.0 { v[i] / vw[i] } else { f64::NAN })
        .collect()
}

/// Coarse depth prior: blurred ground-truth depth plus smooth noise, with
/// uniform confidence on the foreground.
pub fn degrade_depth(
    geo: &GeometryMaps,
    width: usize,
    height: usize,
    blur_radius: f64,
    noise: Option<&SmoothNoise>,
) -> (Vec<f64>, Vec<f64>) {
    let mut z = blur_masked(&geo.depth, width, height, blur_radius);
    if let Some(noise) = noise {
        for (i, v) in z.iter_mut().enumerate() {
            if v.is_finite() {
                *v += noise.at(geo.points[i]);
            }
        }
    }
    let w = z.iter().map(|v| if v.is_finite() { COARSE_CONFIDENCE as f64 } else { 0.0 }).collect();
    (z, w)
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// Build a complete dataset.
pub fn simulate(cfg: &SimConfig) -> Dataset {
    let rig = Rig::with_view_count(cfg.views);
    let cameras = rig.cameras(cfg.width, cfg.height, cfg.pixel_size);
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let depth_noise = SmoothNoise::new(cfg.noise_amp * cfg.scene.height_range(), &mut master);
    let views = cameras
        .into_iter()
        .enumerate()
        .map(|(vi, camera)| {
            let geo = render_ground_truth(cfg.scene, &camera);
            let shadow = if cfg.shadows {
                render_shadows(cfg.scene, &camera, &geo, &cfg.phi, cfg.light_samples, cfg.seed, vi)
            } else {
                std::array::from_fn(|_| vec![0.0; camera.pixel_count()])
            };
            let mut rng = ChaCha8Rng::seed_from_u64(pixel_seed(cfg.seed, vi, 0, 2));
            let bse = synthesize_bse(&geo, &shadow, &cfg.phi, cfg.sigma, &mut rng);
            let noise = (cfg.noise_amp > 0.0).then_some(&depth_noise);
            let (z, w) = degrade_depth(&geo, cfg.width, cfg.height, cfg.blur_radius, noise);
            let (tx, ty) = rig.poses[vi];
            View {
                name: format!("view{vi:02}_tx{tx:+03.0}_ty{ty:+03.0}"),
                camera,
                coarse_depth: to_f32(&z),
                confidence: to_f32(&w),
                bse: std::array::from_fn(|q| quantize(&bse[q])),
                ground_truth: Some(GroundTruth {
                    depth: to_f32(&geo.depth),
                    normal: geo.normal_cam.iter().map(|n| n.map(|v| v as f32)).collect(),
                    shadow: std::array::from_fn(|q| to_f32(&shadow[q])),
                }),
            }
        })
        .collect();
    Dataset {
        width: cfg.width,
        height: cfg.height,
        views,
        scene_scale: cfg.scene_scale,
        bounds: Aabb::UNIT,
        phi_gt: Some(cfg.phi.clone()),
        sigma: Some(cfg.sigma),
        scene: Some(cfg.scene.name().to_string()),
    }
}
