//! Evaluation of a reconstruction against simulator ground truth, with the
//! coarse input and the photometric-stereo baseline scored the same way.

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Projection};
use crate::field::SdfFieldParams;
use crate::photomodel::{ps_gradients, ps_reconstruct, ForwardModelParams, PsOptions};

use super::metrics::{eval_bse_model, eval_depth, eval_normal, eval_shadow, shadow_accuracy};
use super::render::{normals_from_depth, surface_view};
use super::ExtractError;

pub const REPORT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewRow {
    pub view: String,
    /// Micrometres.
    pub e_depth: f64,
    /// Degrees.
    pub e_normal: f64,
    /// Percent.
    pub s_shadow: Option<f64>,
    /// Fraction of foreground pixels with a prediction.
    pub coverage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodRow {
    pub method: String,
    pub e_depth: f64,
    pub e_normal: f64,
    /// Intensity units; only for methods with a forward model.
    pub e_bse: Option<f64>,
    pub s_shadow: Option<f64>,
    pub per_view: Vec<ViewRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub version: u32,
    pub scene: Option<String>,
    pub scene_scale: f64,
    /// The evaluated reconstruction first, then the coarse input and the
    /// photometric-stereo baseline.
    pub methods: Vec<MethodRow>,
}

impl EvalReport {
    pub fn method(&self, name: &str) -> Option<&MethodRow> {
        self.methods.iter().find(|m| m.method == name)
    }

    pub fn validate(&self) -> Result<(), ExtractError> {
        if self.version != REPORT_VERSION {
            return Err(ExtractError::BadReport(format!("unsupported version {}", self.version)));
        }
        for m in &self.methods {
            let rows = m.per_view.iter().map(|v| (v.e_depth, v.e_normal, v.s_shadow));
            for (d, n, s) in std::iter::once((m.e_depth, m.e_normal, m.s_shadow)).chain(rows) {
                if !(d >= 0.0 && n >= 0.0) {
                    return Err(ExtractError::BadReport(format!("{}: negative or NaN error", m.method)));
                }
                if let Some(s) = s {
                    if !(0.0..=100.0).contains(&s) {
                        return Err(ExtractError::BadReport(format!("{}: shadow score {s} outside [0, 100]", m.method)));
                    }
                }
            }
            if m.e_bse.is_some_and(|e| !(e >= 0.0)) {
                return Err(ExtractError::BadReport(format!("{}: negative e_bse", m.method)));
            }
        }
        Ok(())
    }
}

/// Depth and camera-frame normal maps of one method, per view.
#[derive(Clone, Debug)]
pub struct MethodMaps {
    pub name: String,
    pub depth: Vec<Vec<f64>>,
    pub normal: Vec<Vec<[f64; 3]>>,
    pub phi: Option<ForwardModelParams>,
    /// Shadow maps to score instead of deriving them from `phi`.
    pub shadow: Option<Vec<[Vec<f64>; 4]>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub samples_per_ray: usize,
    pub bse_angle_samples: usize,
    pub baselines: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            samples_per_ray: 256,
            bse_angle_samples: 64,
            baselines: true,
        }
    }
}

struct Truth {
    depth: Vec<Vec<f64>>,
    normal: Vec<Vec<[f64; 3]>>,
    shadow: Vec<[Vec<f64>; 4]>,
    masks: Vec<Vec<bool>>,
    images: Vec<[Vec<f64>; 4]>,
}

fn truth(ds: &Dataset) -> Result<Truth, ExtractError> {
    let mut t = Truth {
        depth: Vec::new(),
        normal: Vec::new(),
        shadow: Vec::new(),
        masks: Vec::new(),
        images: Vec::new(),
    };
    for v in &ds.views {
        let gt = v.ground_truth.as_ref().ok_or_else(|| ExtractError::NoGroundTruth(v.name.clone()))?;
        t.depth.push(gt.depth.iter().map(|&x| x as f64).collect());
        t.normal.push(gt.normal.iter().map(|n| n.map(|x| x as f64)).collect());
        t.shadow.push(std::array::from_fn(|q| gt.shadow[q].iter().map(|&x| x as f64).collect()));
        t.masks.push(gt.foreground());
        t.images.push(std::array::from_fn(|q| v.bse[q].iter().map(|&x| x as f64).collect()));
    }
    Ok(t)
}

fn score(ds: &Dataset, t: &Truth, m: &MethodMaps, opts: &EvalOptions) -> MethodRow {
    let mut per_view = Vec::new();
    for (i, v) in ds.views.iter().enumerate() {
        let one = |x: &[Vec<bool>]| vec![x[i].clone()];
        let masks = one(&t.masks);
        let fg = masks[0].iter().filter(|&&b| b).count();
        let covered = (0..masks[0].len())
            .filter(|&k| masks[0][k] && m.depth[i][k].is_finite())
            .count();
        let s_shadow = match (&m.shadow, &m.phi) {
            (Some(sh), _) => Some(shadow_accuracy(&[t.shadow[i].clone()], &[sh[i].clone()], &masks)),
            (None, Some(phi)) => Some(eval_shadow(
                phi,
                &[m.normal[i].clone()],
                &[t.images[i].clone()],
                &[t.shadow[i].clone()],
                &masks,
            )),
            (None, None) => None,
        };
        per_view.push(ViewRow {
            view: v.name.clone(),
            e_depth: eval_depth(&[m.depth[i].clone()], &[t.depth[i].clone()], &masks, ds.scene_scale),
            e_normal: eval_normal(&[m.normal[i].clone()], &[t.normal[i].clone()], &masks),
            s_shadow,
            coverage: if fg == 0 { 1.0 } else { covered as f64 / fg as f64 },
        });
    }
    let s_shadow = match (&m.shadow, &m.phi) {
        (Some(sh), _) => Some(shadow_accuracy(&t.shadow, sh, &t.masks)),
        (None, Some(phi)) => Some(eval_shadow(phi, &m.normal, &t.images, &t.shadow, &t.masks)),
        (None, None) => None,
    };
    MethodRow {
        method: m.name.clone(),
        e_depth: eval_depth(&m.depth, &t.depth, &t.masks, ds.scene_scale),
        e_normal: eval_normal(&m.normal, &t.normal, &t.masks),
        e_bse: match (&m.phi, &ds.phi_gt) {
            (Some(est), Some(gt)) => Some(eval_bse_model(est, gt, opts.bse_angle_samples)),
            _ => None,
        },
        s_shadow,
        per_view,
    }
}

/// The coarse prior as a method: its depth and finite-difference normals.
pub fn coarse_maps(ds: &Dataset) -> MethodMaps {
    let depth: Vec<Vec<f64>> = ds
        .views
        .iter()
        .map(|v| v.coarse_depth.iter().map(|&x| x as f64).collect())
        .collect();
    let normal = ds
        .views
        .iter()
        .zip(&depth)
        .map(|(v, d)| normals_from_depth(&v.camera, d))
        .collect();
    MethodMaps {
        name: "coarse_input".into(),
        depth,
        normal,
        phi: None,
        shadow: None,
    }
}

/// Per-view photometric stereo with the true mean `d/c` when known. Heights
/// are turned into ray depths and shifted to the coarse prior's mean.
pub fn ps_maps(ds: &Dataset) -> Result<MethodMaps, ExtractError> {
    let d_over_c = ds.phi_gt.as_ref().map_or(1.0, |p| {
        p.d.iter().sum::<f64>() / p.c.iter().sum::<f64>()
    });
    let rotation = ds.detector_rotation();
    let mut depth = Vec::new();
    let mut normal = Vec::new();
    for v in &ds.views {
        let (w, h) = (v.camera.width, v.camera.height);
        let pixel_size = match v.camera.projection {
            Projection::Orthographic { pixel_size } => pixel_size,
            Projection::Pinhole { .. } => v.camera.pixel_footprint(
                v.coarse_depth.iter().copied().filter(|z| z.is_finite()).map(f64::from).sum::<f64>()
                    / v.coarse_depth.iter().filter(|z| z.is_finite()).count().max(1) as f64,
            ),
        };
        let imgs: [Vec<f64>; 4] = std::array::from_fn(|q| v.bse[q].iter().map(|&x| x as f64).collect());
        let fg: Vec<bool> = v.coarse_depth.iter().map(|z| z.is_finite()).collect();
        let opts = PsOptions {
            d_over_c,
            detector_rotation: rotation,
            pixel_size,
            target_range: None,
        };
        let images = [&imgs[0][..], &imgs[1][..], &imgs[2][..], &imgs[3][..]];
        let height = ps_reconstruct(images, w, h, &fg, &opts)?;
        let (mut sum, mut n) = (0.0, 0usize);
        for (hh, z) in height.iter().zip(&v.coarse_depth) {
            if hh.is_finite() && z.is_finite() {
                sum += *z as f64 + hh;
                n += 1;
            }
        }
        let offset = if n > 0 { sum / n as f64 } else { 0.0 };
        depth.push(height.iter().map(|hh| offset - hh).collect());
        let g = ps_gradients(images, w, h, d_over_c, rotation)?;
        normal.push(
            (0..w * h)
                .map(|i| {
                    if !fg[i] {
                        return [0.0; 3];
                    }
                    let l = (g.gx[i] * g.gx[i] + g.gy[i] * g.gy[i] + 1.0).sqrt();
                    [-g.gx[i] / l, -g.gy[i] / l, 1.0 / l]
                })
                .collect(),
        );
    }
    Ok(MethodMaps {
        name: "ps".into(),
        depth,
        normal,
        phi: None,
        shadow: None,
    })
}

/// Depth and normal maps of the zero-level surface of a trained field.
pub fn field_maps(field: &SdfFieldParams, phi: Option<&ForwardModelParams>, ds: &Dataset, samples: usize) -> MethodMaps {
    let mut depth = Vec::new();
    let mut normal = Vec::new();
    for v in &ds.views {
        let m = surface_view(field, &v.camera, &field.bounds, samples);
        depth.push(m.depth);
        normal.push(m.normal);
    }
    MethodMaps {
        name: "ours".into(),
        depth,
        normal,
        phi: phi.cloned(),
        shadow: None,
    }
}

/// Ground truth scored against itself.
pub fn ground_truth_maps(ds: &Dataset) -> Result<MethodMaps, ExtractError> {
    let t = truth(ds)?;
    Ok(MethodMaps {
        name: "ground_truth".into(),
        depth: t.depth,
        normal: t.normal,
        phi: ds.phi_gt.clone(),
        shadow: Some(t.shadow),
    })
}

/// Score `primary`, followed by the coarse input and (optionally) the
/// photometric-stereo baseline.
pub fn evaluate_maps(ds: &Dataset, primary: &MethodMaps, opts: &EvalOptions) -> Result<EvalReport, ExtractError> {
    let t = truth(ds)?;
    let mut methods = vec![score(ds, &t, primary, opts), score(ds, &t, &coarse_maps(ds), opts)];
    if opts.baselines {
        methods.push(score(ds, &t, &ps_maps(ds)?, opts));
    }
    Ok(EvalReport {
        version: REPORT_VERSION,
        scene: ds.scene.clone(),
        scene_scale: ds.scene_scale,
        methods,
    })
}

pub fn evaluate_field(
    field: &SdfFieldParams,
    phi: Option<&ForwardModelParams>,
    ds: &Dataset,
    opts: &EvalOptions,
) -> Result<EvalReport, ExtractError> {
    truth(ds)?;
    evaluate_maps(ds, &field_maps(field, phi, ds, opts.samples_per_ray), opts)
}
