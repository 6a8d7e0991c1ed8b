//! Staged optimisation of the SDF field and the forward-model parameters.

mod batch;
mod objective;
mod phi;
#[cfg(test)]
mod tests;

pub use batch::{ps_slopes, PsSlopes, RayBatch, RaySpec};
pub use objective::{evaluate, BatchStats, LossTerms, Objective, ObjectiveSettings, Weights};
pub use phi::{LearnedPhi, PhiMode};

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rayon::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::diffcore::AdamState;
use crate::field::{render_ray, FieldConfig, SdfFieldParams};
use crate::photomodel::{forward, normal_to_angles, ForwardModelParams, PhotoError, Quadrant};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("dataset unusable for training: {0}")]
    InvalidDataset(String),
    #[error("non-finite {term} loss at step {step}")]
    NonFinite { step: usize, term: &'static str },
    #[error(transparent)]
    Photo(#[from] PhotoError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    None,
    /// Photometric-stereo slopes replace the learned forward model.
    NoBseF,
    /// Secant emission instead of the polynomial correction.
    NoPolyR,
    /// One `(c, d, e)` shared by all quadrants.
    No4qVar,
    /// Stage two runs until the end; no shadow mask.
    NoSMask,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::None,
        Ablation::NoBseF,
        Ablation::NoPolyR,
        Ablation::No4qVar,
        Ablation::NoSMask,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoBseF => "no_bse_f",
            Ablation::NoPolyR => "no_poly_r",
            Ablation::No4qVar => "no_4q_var",
            Ablation::NoSMask => "no_s_mask",
        }
    }

    pub fn phi_mode(self) -> PhiMode {
        match self {
            Ablation::NoBseF => PhiMode::Ratio,
            Ablation::NoPolyR => PhiMode::Secant,
            Ablation::No4qVar => PhiMode::Shared,
            Ablation::None | Ablation::NoSMask => PhiMode::Full,
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.to_ascii_lowercase().replace('-', "_");
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == key)
            .ok_or_else(|| {
                let names: Vec<_> = Ablation::ALL.iter().map(|a| a.name()).collect();
                format!("unknown ablation '{s}' (expected one of {})", names.join(", "))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Geometry,
    Photometric,
    Masked,
}

impl Stage {
    pub fn number(self) -> u8 {
        match self {
            Stage::Geometry => 1,
            Stage::Photometric => 2,
            Stage::Masked => 3,
        }
    }
}

/// Shadow mask applied to the photometric residuals.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    AllOnes,
    /// Recomputed from the current residuals every batch.
    Dynamic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    /// Weight of the accumulated-opacity term: rays with a coarse depth
    /// should be opaque, rays without one empty.
    pub lambda_opacity: f64,
    pub t1: usize,
    pub t2: usize,
    pub t3: usize,
    pub alpha: f64,
    pub rays_per_batch: usize,
    pub samples_per_ray: usize,
    pub tilt_cutoff_deg: f64,
    pub learning_rate: f64,
    /// Learning rate at the last step relative to `learning_rate`; the rate
    /// decays exponentially in between. 1 keeps it constant.
    pub final_lr_ratio: f64,
    pub seed: u64,
    pub ablation: Ablation,
    pub field: FieldConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.1,
            lambda2: 0.1,
            lambda3: 1.0,
            lambda4: 1.0,
            lambda_opacity: 0.1,
            t1: 1000,
            t2: 2000,
            t3: 3000,
            alpha: 0.5,
            rays_per_batch: 256,
            samples_per_ray: 1024,
            tilt_cutoff_deg: 60.0,
            learning_rate: 0.01,
            final_lr_ratio: 1.0,
            seed: 0,
            ablation: Ablation::None,
            field: FieldConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Weights used for fabricated microstructures and simulated scenes.
    pub fn microstructure() -> Self {
        Self {
            lambda1: 0.5,
            alpha: 0.25,
            ..Self::default()
        }
    }

    /// Settings for 128×96 simulated scenes on a CPU budget of a few
    /// minutes: shorter schedule and batches, a grid whose finest level is
    /// near the image resolution, photometric weights scaled to the depth
    /// term's magnitude, and a decaying learning rate.
    pub fn desk() -> Self {
        let mut field = FieldConfig::default();
        field.grid.levels = 8;
        field.grid.growth = 1.3;
        field.grid.log2_table_size = 15;
        Self {
            lambda3: 0.005,
            lambda4: 0.0005,
            t1: 500,
            t2: 1000,
            t3: 1500,
            rays_per_batch: 128,
            samples_per_ray: 96,
            final_lr_ratio: 0.03,
            field,
            ..Self::microstructure()
        }
    }

    /// Learning rate used for update number `step` (1-based).
    pub fn learning_rate_at(&self, step: usize) -> f64 {
        let frac = (step.saturating_sub(1)) as f64 / self.t3.saturating_sub(1).max(1) as f64;
        self.learning_rate * self.final_lr_ratio.powf(frac.min(1.0))
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if !(0 < self.t1 && self.t1 < self.t2 && self.t2 < self.t3) {
            return bad(format!(
                "stage boundaries must satisfy 0 < t1 < t2 < t3, got {}, {}, {}",
                self.t1, self.t2, self.t3
            ));
        }
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
            ("lambda_opacity", self.lambda_opacity),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite value >= 0, got {v}"));
            }
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be > 0, got {}", self.alpha));
        }
        if self.rays_per_batch == 0 {
            return bad("rays_per_batch must be >= 1".into());
        }
        if self.samples_per_ray < 2 {
            return bad(format!("samples_per_ray must be >= 2, got {}", self.samples_per_ray));
        }
        if !(self.tilt_cutoff_deg > 0.0 && self.tilt_cutoff_deg < 90.0) {
            return bad(format!("tilt_cutoff_deg must lie in (0, 90), got {}", self.tilt_cutoff_deg));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.final_lr_ratio > 0.0 && self.final_lr_ratio <= 1.0) {
            return bad(format!("final_lr_ratio must lie in (0, 1], got {}", self.final_lr_ratio));
        }
        if self.field.hidden == 0 || self.field.grid.levels == 0 {
            return bad("field needs at least one hidden unit and one grid level".into());
        }
        Ok(())
    }

    /// Stage of 1-based step `step`.
    pub fn stage(&self, step: usize) -> Stage {
        if step <= self.t1 {
            Stage::Geometry
        } else if step <= self.t2 || self.ablation == Ablation::NoSMask {
            Stage::Photometric
        } else {
            Stage::Masked
        }
    }

    /// Photometric mask in force at `stage`, `None` when the term is off.
    pub fn mask(&self, stage: Stage) -> Option<MaskMode> {
        match stage {
            Stage::Geometry => None,
            Stage::Photometric => Some(MaskMode::AllOnes),
            Stage::Masked if self.ablation == Ablation::NoBseF => Some(MaskMode::AllOnes),
            Stage::Masked => Some(MaskMode::Dynamic),
        }
    }
}

/// One JSONL record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub stage: u8,
    pub mask: Option<MaskMode>,
    pub loss: f64,
    /// Unweighted terms.
    pub terms: LossTerms,
    /// λ-weighted terms; they sum to `loss`.
    pub weighted: LossTerms,
    /// Fraction of photometric residuals kept by the mask.
    pub mask_fill: Option<f64>,
    pub hit_rays: usize,
    pub bse_rays: usize,
    pub sharpness: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub phi: Option<ForwardModelParams>,
}

pub fn write_logs(path: &Path, logs: &[StepLog]) -> Result<(), TrainError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for l in logs {
        serde_json::to_writer(&mut out, l)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_logs(path: &Path) -> Result<Vec<StepLog>, TrainError> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// `(1/M) Σ w_j |ẑ_j − z_j|` over rays with a prediction (`Some`) and a
/// finite target.
pub fn depth_loss(z_hat: &[Option<f64>], z: &[f64], w: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut m = 0usize;
    for ((zh, &zt), &wt) in z_hat.iter().zip(z).zip(w) {
        if let (Some(zh), true) = (zh, zt.is_finite()) {
            sum += wt * (zh - zt).abs();
            m += 1;
        }
    }
    if m == 0 {
        0.0
    } else {
        sum / m as f64
    }
}

/// Mean squared deviation of the gradient norms from one.
pub fn eikonal_loss(grads: &[[f64; 3]]) -> f64 {
    if grads.is_empty() {
        return 0.0;
    }
    grads
        .iter()
        .map(|g| ((g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt() - 1.0).powi(2))
        .sum::<f64>()
        / grads.len() as f64
}

/// Photometric MAE over rays with a camera-frame normal (`None` for no-hit)
/// and tilt below `tilt_cutoff_deg`. Returns the loss and the fraction of
/// residuals kept by the mask.
pub fn bse_loss(
    normals: &[Option<[f64; 3]>],
    b: &[[f64; 4]],
    params: &ForwardModelParams,
    mask: MaskMode,
    alpha: f64,
    tilt_cutoff_deg: f64,
) -> (f64, f64) {
    let view = params.view();
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut kept = 0usize;
    for (n, obs) in normals.iter().zip(b) {
        let Some(n) = n else { continue };
        let Ok(angles) = normal_to_angles(*n) else { continue };
        if angles.theta.to_degrees() >= tilt_cutoff_deg {
            continue;
        }
        count += 4;
        for q in Quadrant::ALL {
            let f = forward(*n, q, &view, params.detector_rotation, params.kind);
            let r = (f - obs[q.index()]).abs();
            let keep = match mask {
                MaskMode::AllOnes => true,
                MaskMode::Dynamic => r < alpha * params.d[q.index()],
            };
            if keep {
                sum += r;
                kept += 1;
            }
        }
    }
    if count == 0 {
        return (0.0, 0.0);
    }
    if kept == 0 {
        log::warn!("shadow mask rejected every residual in the batch");
    }
    (sum / count as f64, kept as f64 / count as f64)
}

/// Everything a finished run produces.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub field: SdfFieldParams,
    pub phi: ForwardModelParams,
    /// Learned slope scale of the photometric-stereo ablation.
    pub d_over_c: Option<f64>,
    pub logs: Vec<StepLog>,
}

/// Stateful optimiser; [`train`] drives it to the end.
pub struct Trainer<'a> {
    dataset: &'a Dataset,
    config: TrainConfig,
    field: SdfFieldParams,
    phi: LearnedPhi,
    field_opt: AdamState,
    phi_opt: AdamState,
    last_weights: Option<Weights>,
    calibrated: bool,
    rng: ChaCha8Rng,
    step: usize,
    ps: Option<Vec<batch::PsSlopes>>,
    logs: Vec<StepLog>,
    empty_mask_steps: usize,
}

const PHI_LOG_EVERY: usize = 100;
const CALIBRATION_RAYS: usize = 2048;

impl<'a> Trainer<'a> {
    pub fn new(dataset: &'a Dataset, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        batch::validate_dataset(dataset)?;
        let field = SdfFieldParams::new(config.field.clone(), dataset.bounds, dataset.scene_scale, config.seed);
        let mode = config.ablation.phi_mode();
        let phi = LearnedPhi::init(dataset, mode);
        let ps = (mode == PhiMode::Ratio).then(|| batch::ps_slopes(dataset)).transpose()?;
        let field_opt = AdamState::with_learning_rate(field.len(), config.learning_rate);
        let phi_opt = AdamState::with_learning_rate(phi.raw.len(), config.learning_rate);
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_7a1e);
        Ok(Self {
            dataset,
            config,
            field,
            phi,
            field_opt,
            phi_opt,
            last_weights: None,
            calibrated: false,
            rng,
            step: 0,
            ps,
            logs: Vec::new(),
            empty_mask_steps: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn field(&self) -> &SdfFieldParams {
        &self.field
    }

    pub fn phi(&self) -> &LearnedPhi {
        &self.phi
    }

    pub fn logs(&self) -> &[StepLog] {
        &self.logs
    }

    /// Steps taken so far.
    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.config.t3
    }

    pub(crate) fn settings(&self, stage: Stage) -> ObjectiveSettings<'_> {
        let c = &self.config;
        let mask = c.mask(stage);
        ObjectiveSettings {
            weights: Weights {
                depth: c.lambda1,
                eikonal: c.lambda2,
                bse: if mask.is_some() { c.lambda3 } else { 0.0 },
                phi: if mask.is_some() { c.lambda4 } else { 0.0 },
                opacity: c.lambda_opacity,
            },
            mask,
            alpha: c.alpha,
            cos_cutoff: c.tilt_cutoff_deg.to_radians().cos(),
            cameras: self.dataset.views.iter().map(|v| &v.camera).collect(),
            ps: self.ps.as_deref(),
        }
    }

    /// One optimiser step.
    pub fn step(&mut self) -> Result<&StepLog, TrainError> {
        let step = self.step + 1;
        let stage = self.config.stage(step);
        if !self.calibrated && self.config.mask(stage).is_some() && self.config.lambda3 > 0.0 {
            self.calibrate_phi();
            self.calibrated = true;
        }
        let batch = RayBatch::sample(
            self.dataset,
            self.config.rays_per_batch,
            self.config.samples_per_ray,
            &mut self.rng,
        );
        let settings = self.settings(stage);
        let obj = evaluate(&self.field, &self.phi, &batch, &settings, true);
        let mask = settings.mask;
        let weights = settings.weights;
        let weighted = obj.weighted(&weights);
        drop(settings);
        for (name, v) in obj.terms.named().into_iter().chain(weighted.named()) {
            if !v.is_finite() {
                return Err(TrainError::NonFinite { step, term: name });
            }
        }
        if !obj.total.is_finite() {
            return Err(TrainError::NonFinite { step, term: "total" });
        }
        if mask == Some(MaskMode::Dynamic) && obj.stats.bse_units > 0 {
            if obj.stats.bse_kept == 0 {
                self.empty_mask_steps += 1;
                let epoch = self.epoch_steps();
                if self.empty_mask_steps == epoch {
                    log::warn!("shadow mask has been empty for {epoch} consecutive steps (one epoch)");
                }
            } else {
                self.empty_mask_steps = 0;
            }
        }
        // Moments accumulated under other weights would turn the first
        // photometric gradients into a burst of oversized steps.
        if self.last_weights.is_some_and(|w| w != weights) {
            self.field_opt.reset();
        }
        self.last_weights = Some(weights);
        let lr = self.config.learning_rate_at(step);
        self.field_opt.learning_rate = lr;
        self.phi_opt.learning_rate = lr;
        self.field_opt
            .step(&mut self.field.params, &obj.field_grad)
            .expect("optimizer sized from the field");
        if mask.is_some() {
            self.phi_opt
                .step(&mut self.phi.raw, &obj.phi_grad)
                .expect("optimizer sized from phi");
        }
        self.step = step;
        let mask_fill = (obj.stats.bse_units > 0)
            .then(|| obj.stats.bse_kept as f64 / obj.stats.bse_units as f64);
        let phi = (step % PHI_LOG_EVERY == 0 || step == self.config.t3).then(|| self.phi.params());
        self.logs.push(StepLog {
            step,
            stage: stage.number(),
            mask,
            loss: obj.total,
            terms: obj.terms,
            weighted,
            mask_fill,
            hit_rays: obj.stats.hit_rays,
            bse_rays: obj.stats.bse_rays,
            sharpness: self.field.sharpness(),
            phi,
        });
        Ok(self.logs.last().expect("just pushed"))
    }

    /// Least-squares fit of the forward model to the current geometry, run
    /// once when the photometric terms switch on.
    fn calibrate_phi(&mut self) {
        let batch = RayBatch::sample(self.dataset, CALIBRATION_RAYS, self.config.samples_per_ray, &mut self.rng);
        let cos_cutoff = self.config.tilt_cutoff_deg.to_radians().cos();
        let obs: Vec<([f64; 3], [f64; 4])> = batch
            .rays
            .par_iter()
            .filter_map(|spec| {
                let r = render_ray(&self.field, &spec.ray, self.config.samples_per_ray).ok()?;
                if !r.is_hit() {
                    return None;
                }
                let n = self.dataset.views[spec.view].camera.to_camera(r.normal);
                (n[2] > cos_cutoff).then_some((n, spec.b))
            })
            .collect();
        if !self.phi.calibrate(&obs) {
            log::warn!("forward model calibration failed on {} rays; keeping the initial values", obs.len());
            return;
        }
        // refit without the observations the shadow mask would reject
        let params = self.phi.params();
        let alpha = self.config.alpha;
        let lit: Vec<_> = obs
            .iter()
            .filter(|(n, b)| {
                Quadrant::ALL.iter().all(|&q| {
                    let f = forward(*n, q, &params.view(), params.detector_rotation, params.kind);
                    (f - b[q.index()]).abs() < alpha * params.d[q.index()]
                })
            })
            .copied()
            .collect();
        if lit.len() * 4 >= obs.len() && self.phi.calibrate(&lit) {
            log::info!("forward model calibrated on {} of {} rays: {:?}", lit.len(), obs.len(), self.phi.params());
        } else {
            log::info!("forward model calibrated on {} rays: {:?}", obs.len(), self.phi.params());
        }
    }

    /// Steps needed to visit every pixel once on average.
    fn epoch_steps(&self) -> usize {
        let pixels: usize = self.dataset.views.iter().map(|v| v.camera.pixel_count()).sum();
        pixels.div_ceil(self.config.rays_per_batch).max(1)
    }

    pub fn run(mut self) -> Result<TrainOutput, TrainError> {
        while !self.is_finished() {
            let log = self.step()?;
            if log.step % 100 == 0 {
                log::info!(
                    "step {} stage {} loss {:.5} sharpness {:.1}",
                    log.step,
                    log.stage,
                    log.loss,
                    log.sharpness
                );
            }
        }
        Ok(self.finish())
    }

    pub fn finish(self) -> TrainOutput {
        TrainOutput {
            phi: self.phi.params(),
            d_over_c: self.phi.d_over_c(),
            field: self.field,
            logs: self.logs,
        }
    }
}

pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutput, TrainError> {
    Trainer::new(dataset, config.clone())?.run()
}
