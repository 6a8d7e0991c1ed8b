//! Ray batches drawn uniformly over (view, pixel) pairs.

use rand::Rng;

use crate::dataset::Dataset;
use crate::field::{stratified_depths, Ray};
use crate::photomodel::ps_gradients;

use super::TrainError;

#[derive(Clone, Debug, PartialEq)]
pub struct RaySpec {
    pub view: usize,
    pub row: usize,
    pub col: usize,
    /// Coarse depth along the ray, NaN where the prior has none.
    pub z: f64,
    pub w: f64,
    pub b: [f64; 4],
    pub ray: Ray,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RayBatch {
    pub rays: Vec<RaySpec>,
    /// Sample depths per ray.
    pub depths: Vec<Vec<f64>>,
}

impl RayBatch {
    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }

    fn spec(dataset: &Dataset, view: usize, row: usize, col: usize) -> Option<RaySpec> {
        let v = dataset.views.get(view)?;
        if row >= v.camera.height || col >= v.camera.width {
            return None;
        }
        let (o, d) = v.camera.ray(row, col);
        let ray = Ray::through_box(o, d, &dataset.bounds)?;
        let i = row * v.camera.width + col;
        Some(RaySpec {
            view,
            row,
            col,
            z: v.coarse_depth[i] as f64,
            w: v.confidence[i] as f64,
            b: std::array::from_fn(|q| v.bse[q][i] as f64),
            ray,
        })
    }

    /// `n_rays` rays with jittered stratified samples; pixels whose ray
    /// misses the bounding box are redrawn.
    pub fn sample<R: Rng>(dataset: &Dataset, n_rays: usize, n_samples: usize, rng: &mut R) -> Self {
        let mut rays = Vec::with_capacity(n_rays);
        let mut depths = Vec::with_capacity(n_rays);
        let mut misses = 0usize;
        while rays.len() < n_rays {
            let view = rng.random_range(0..dataset.views.len());
            let cam = &dataset.views[view].camera;
            let row = rng.random_range(0..cam.height);
            let col = rng.random_range(0..cam.width);
            match Self::spec(dataset, view, row, col) {
                Some(s) => {
                    depths.push(stratified_depths(&s.ray, n_samples, Some(&mut *rng)));
                    rays.push(s);
                }
                None => {
                    misses += 1;
                    assert!(misses < 1_000_000, "no camera ray meets the bounding box");
                }
            }
        }
        Self { rays, depths }
    }

    /// Rays through given `(view, row, col)` pixels, samples at stratum
    /// centres. Pixels outside the image or missing the box are skipped.
    pub fn from_pixels(dataset: &Dataset, pixels: &[(usize, usize, usize)], n_samples: usize) -> Self {
        let mut rays = Vec::new();
        let mut depths = Vec::new();
        for &(v, r, c) in pixels {
            if let Some(s) = Self::spec(dataset, v, r, c) {
                depths.push(stratified_depths::<rand_chacha::ChaCha8Rng>(&s.ray, n_samples, None));
                rays.push(s);
            }
        }
        Self { rays, depths }
    }
}

pub(crate) fn validate_dataset(ds: &Dataset) -> Result<(), TrainError> {
    let bad = |m: String| Err(TrainError::InvalidDataset(m));
    if ds.views.is_empty() {
        return bad("no views".into());
    }
    for v in &ds.views {
        let n = v.camera.pixel_count();
        if n == 0 {
            return bad(format!("view {} has an empty image", v.name));
        }
        if v.coarse_depth.len() != n || v.confidence.len() != n {
            return bad(format!("view {} depth/confidence size differs from {n} pixels", v.name));
        }
        if let Some(q) = v.bse.iter().position(|b| b.len() != n) {
            return bad(format!("view {} BSE image {} has the wrong size", v.name, q));
        }
    }
    if !ds.views.iter().any(|v| v.coarse_depth.iter().any(|z| z.is_finite())) {
        return bad("no view carries a coarse depth".into());
    }
    Ok(())
}

/// Unscaled (`d/c = 1`) photometric-stereo slopes of one view.
#[derive(Clone, Debug)]
pub struct PsSlopes {
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
    pub width: usize,
}

pub fn ps_slopes(ds: &Dataset) -> Result<Vec<PsSlopes>, TrainError> {
    ds.views
        .iter()
        .map(|v| {
            let imgs: [Vec<f64>; 4] = std::array::from_fn(|q| v.bse[q].iter().map(|&x| x as f64).collect());
            let g = ps_gradients(
                [&imgs[0], &imgs[1], &imgs[2], &imgs[3]],
                v.camera.width,
                v.camera.height,
                1.0,
                ds.detector_rotation(),
            )?;
            Ok(PsSlopes {
                gx: g.gx,
                gy: g.gy,
                width: v.camera.width,
            })
        })
        .collect()
}
