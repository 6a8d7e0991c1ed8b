//! Batch loss and its gradient with respect to field and forward-model
//! parameters.
//!
//! Field values enter each ray's tape as leaves. The tape yields adjoints of
//! every sample's SDF value and gradient, which the field's hand-written
//! backward pass turns into parameter gradients.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Camera;
use crate::diffcore::{Real, Tape, Var};
use crate::field::{composite, SdfFieldParams};
use crate::photomodel::{forward, phi_variance, Quadrant};

use super::batch::PsSlopes;
use super::phi::LearnedPhi;
use super::{MaskMode, RayBatch};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub depth: f64,
    pub eikonal: f64,
    pub bse: f64,
    pub phi: f64,
    pub opacity: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub depth: f64,
    pub eikonal: f64,
    pub bse: f64,
    pub phi: f64,
    pub opacity: f64,
}

impl LossTerms {
    pub fn named(&self) -> [(&'static str, f64); 5] {
        [
            ("depth", self.depth),
            ("eikonal", self.eikonal),
            ("bse", self.bse),
            ("phi", self.phi),
            ("opacity", self.opacity),
        ]
    }

    pub fn sum(&self) -> f64 {
        self.depth + self.eikonal + self.bse + self.phi + self.opacity
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub rays: usize,
    pub hit_rays: usize,
    /// Rays supervised by the coarse depth.
    pub depth_rays: usize,
    /// Rays supervised photometrically.
    pub bse_rays: usize,
    /// Photometric residuals considered (normaliser of the term).
    pub bse_units: usize,
    pub bse_kept: usize,
}

pub struct ObjectiveSettings<'a> {
    pub weights: Weights,
    /// `None` switches the photometric term and the Φ regulariser off.
    pub mask: Option<MaskMode>,
    pub alpha: f64,
    pub cos_cutoff: f64,
    pub cameras: Vec<&'a Camera>,
    pub ps: Option<&'a [PsSlopes]>,
}

pub struct Objective {
    pub terms: LossTerms,
    pub total: f64,
    pub stats: BatchStats,
    /// Empty unless gradients were requested.
    pub field_grad: Vec<f64>,
    pub phi_grad: Vec<f64>,
}

impl Objective {
    pub fn weighted(&self, w: &Weights) -> LossTerms {
        LossTerms {
            depth: w.depth * self.terms.depth,
            eikonal: w.eikonal * self.terms.eikonal,
            bse: w.bse * self.terms.bse,
            phi: w.phi * self.terms.phi,
            opacity: w.opacity * self.terms.opacity,
        }
    }
}

/// Adjoints of one term with respect to a ray's leaves.
struct Leaves {
    ds: Vec<f64>,
    dg: Vec<[f64; 3]>,
    d_log_sharpness: f64,
    dphi: Vec<f64>,
}

struct RayResult {
    positions: Vec<[f64; 3]>,
    grads: Vec<[f64; 3]>,
    hit: bool,
    depth: Option<(f64, Option<Leaves>)>,
    bse: Option<(f64, usize, usize, Option<Leaves>)>,
    opacity: Option<(f64, Option<Leaves>)>,
}

fn rotate_to_camera<S: Real>(cam: &Camera, n: [S; 3]) -> [S; 3] {
    let r = &cam.pose;
    std::array::from_fn(|i| n[0] * r[0][i] + n[1] * r[1][i] + n[2] * r[2][i])
}

fn leaves(tape: &Tape, out: Var<'_>, s: &[Var<'_>], g: &[[Var<'_>; 3]], ls: Var<'_>, n_phi: usize) -> Leaves {
    let adj = tape.backward(&[(out, 1.0)]);
    Leaves {
        ds: s.iter().map(|&v| adj.of(v)).collect(),
        dg: g.iter().map(|gk| gk.map(|v| adj.of(v))).collect(),
        d_log_sharpness: adj.of(ls),
        dphi: adj.param_grads(n_phi),
    }
}

fn eval_ray(
    field: &SdfFieldParams,
    phi: &LearnedPhi,
    batch: &RayBatch,
    j: usize,
    set: &ObjectiveSettings<'_>,
    want_grad: bool,
) -> RayResult {
    let spec = &batch.rays[j];
    let t = &batch.depths[j];
    let mut sc = field.scratch();
    let positions: Vec<[f64; 3]> = t.iter().map(|&tk| spec.ray.at(tk)).collect();
    let evals: Vec<_> = positions.iter().map(|&p| field.eval_with(p, &mut sc)).collect();

    let tape = Tape::with_capacity(t.len() * 48 + 256);
    let s: Vec<Var> = evals.iter().map(|e| tape.input(e.sdf)).collect();
    let g: Vec<[Var; 3]> = evals.iter().map(|e| e.grad.map(|v| tape.input(v))).collect();
    let ls = tape.input(field.params[field.layout().log_sharpness]);
    let phi_vars: Vec<Var> = phi.raw.iter().enumerate().map(|(i, &v)| tape.param(i, v)).collect();
    let comp = composite(t, &s, &g, ls.exp());
    let hit = comp.is_hit();
    let n_phi = phi.len();
    let grads_of = |out: Var<'_>| want_grad.then(|| leaves(&tape, out, &s, &g, ls, n_phi));

    let depth = (hit && spec.z.is_finite()).then(|| {
        let term = (comp.depth - spec.z).abs() * spec.w;
        (term.value(), grads_of(term))
    });
    // opaque where the prior has a surface, empty elsewhere
    let miss = if spec.z.is_finite() { comp.hit_weight.rsub(1.0) } else { comp.hit_weight };
    let opacity = Some((miss.value(), grads_of(miss)));

    let mut bse = None;
    if let (Some(mask), true) = (set.mask, hit) {
        let cam = set.cameras[spec.view];
        let n = rotate_to_camera(cam, comp.normal);
        let len = Real::norm(&[n[0].value(), n[1].value(), n[2].value()]);
        if len > 0.0 && n[2].value() / len > set.cos_cutoff {
            match (phi.view(&phi_vars), set.ps) {
                (Some(view), _) => {
                    let mut acc: Option<Var> = None;
                    let mut kept = 0;
                    for q in Quadrant::ALL {
                        let f = forward(n, q, &view, phi.detector_rotation, phi.kind());
                        let r = f - spec.b[q.index()];
                        let keep = match mask {
                            MaskMode::AllOnes => true,
                            MaskMode::Dynamic => r.value().abs() < set.alpha * view.d[q.index()].value(),
                        };
                        if keep {
                            kept += 1;
                            let a = r.abs();
                            acc = Some(acc.map_or(a, |x| x + a));
                        }
                    }
                    bse = Some(match acc {
                        Some(term) => (term.value(), 4, kept, grads_of(term)),
                        None => (0.0, 4, 0, None),
                    });
                }
                (None, Some(ps)) => {
                    let slopes = &ps[spec.view];
                    let i = spec.row * slopes.width + spec.col;
                    let scale = (-phi_vars[0]).exp();
                    let ex = (n[0] / n[2]) + scale * slopes.gx[i];
                    let ey = (n[1] / n[2]) + scale * slopes.gy[i];
                    let term = ex.abs() + ey.abs();
                    bse = Some((term.value(), 2, 2, grads_of(term)));
                }
                (None, None) => unreachable!("ratio mode without slopes"),
            }
        }
    }

    RayResult {
        positions,
        grads: evals.iter().map(|e| e.grad).collect(),
        hit,
        depth,
        bse,
        opacity,
    }
}

/// Batch objective `Σ λ·term`; gradients only when `want_grad`.
pub fn evaluate(
    field: &SdfFieldParams,
    phi: &LearnedPhi,
    batch: &RayBatch,
    set: &ObjectiveSettings<'_>,
    want_grad: bool,
) -> Objective {
    let results: Vec<RayResult> = (0..batch.len())
        .into_par_iter()
        .map(|j| eval_ray(field, phi, batch, j, set, want_grad))
        .collect();

    let mut stats = BatchStats {
        rays: batch.len(),
        ..Default::default()
    };
    let mut sums = LossTerms::default();
    let mut samples = 0usize;
    for r in &results {
        stats.hit_rays += r.hit as usize;
        if let Some((v, _)) = &r.depth {
            stats.depth_rays += 1;
            sums.depth += v;
        }
        if let Some((v, units, kept, _)) = &r.bse {
            stats.bse_rays += 1;
            stats.bse_units += units;
            stats.bse_kept += kept;
            sums.bse += v;
        }
        if let Some((v, _)) = &r.opacity {
            sums.opacity += v;
        }
        for g in &r.grads {
            sums.eikonal += (Real::norm(&g[..]) - 1.0).powi(2);
        }
        samples += r.grads.len();
    }
    let per = |n: usize| if n == 0 { 0.0 } else { 1.0 / n as f64 };
    let norm_depth = per(stats.depth_rays);
    let norm_bse = per(stats.bse_units);
    let norm_bg = per(batch.len());
    let norm_eik = per(samples);
    let mut terms = LossTerms {
        depth: sums.depth * norm_depth,
        eikonal: sums.eikonal * norm_eik,
        bse: sums.bse * norm_bse,
        phi: 0.0,
        opacity: sums.opacity * norm_bg,
    };

    let w = set.weights;
    let mut phi_grad = vec![0.0; phi.len()];
    if set.mask.is_some() {
        let tape = Tape::new();
        let vars: Vec<Var> = phi.raw.iter().enumerate().map(|(i, &v)| tape.param(i, v)).collect();
        if let Some(view) = phi.view(&vars) {
            let reg = phi_variance(&view);
            terms.phi = reg.value();
            if want_grad && w.phi > 0.0 {
                tape.backward(&[(reg, w.phi)]).accumulate_params(&mut phi_grad);
            }
        }
    }
    let total = w.depth * terms.depth
        + w.eikonal * terms.eikonal
        + w.bse * terms.bse
        + w.phi * terms.phi
        + w.opacity * terms.opacity;

    let mut field_grad = Vec::new();
    if want_grad {
        field_grad = vec![0.0; field.len()];
        let ls_slot = field.layout().log_sharpness;
        let c_depth = w.depth * norm_depth;
        let c_bse = w.bse * norm_bse;
        let c_bg = w.opacity * norm_bg;
        let c_eik = w.eikonal * norm_eik;
        let mut sc = field.scratch();
        for r in &results {
            let n = r.positions.len();
            let mut ds = vec![0.0; n];
            let mut dg = vec![[0.0; 3]; n];
            let mut add = |l: &Leaves, c: f64, phi_grad: &mut [f64]| {
                for k in 0..n {
                    ds[k] += c * l.ds[k];
                    for d in 0..3 {
                        dg[k][d] += c * l.dg[k][d];
                    }
                }
                field_grad[ls_slot] += c * l.d_log_sharpness;
                for (pg, lg) in phi_grad.iter_mut().zip(&l.dphi) {
                    *pg += c * lg;
                }
            };
            if let Some((_, Some(l))) = &r.depth {
                add(l, c_depth, &mut phi_grad);
            }
            if let Some((_, _, _, Some(l))) = &r.bse {
                add(l, c_bse, &mut phi_grad);
            }
            if let Some((_, Some(l))) = &r.opacity {
                add(l, c_bg, &mut phi_grad);
            }
            for k in 0..n {
                let g = r.grads[k];
                let len = Real::norm(&g[..]);
                if len > 0.0 {
                    let f = c_eik * 2.0 * (len - 1.0) / len;
                    for d in 0..3 {
                        dg[k][d] += f * g[d];
                    }
                }
            }
            for k in 0..n {
                if ds[k] == 0.0 && dg[k] == [0.0; 3] {
                    continue;
                }
                let x = r.positions[k];
                field.eval_with(x, &mut sc);
                field.backward_with(x, ds[k], dg[k], &mut field_grad, &mut sc);
            }
        }
    }

    Objective {
        terms,
        total,
        stats,
        field_grad,
        phi_grad,
    }
}
