use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::Projection;
use crate::extract::{
    evaluate_field, evaluate_maps, ground_truth_maps, marching_cubes, EvalOptions, EvalReport, TriangleMesh,
};
use crate::field::SdfFieldParams;
use crate::photomodel::{ps_reconstruct, ForwardModelParams, PsOptions};
use crate::simulator::{simulate, Rig, SceneKind, SimConfig};
use crate::trainer::{write_logs, Ablation, Trainer};

use super::config::RunConfig;
use super::manifest::{load_dataset, save_dataset};
use super::maps::{write_map, MapHeader};
use super::{partial_path, write_atomic, CliError, Command};

pub const FIELD_FILE: &str = "field.ckpt";
pub const PHI_FILE: &str = "phi.json";
pub const LOG_FILE: &str = "log.jsonl";
pub const CONFIG_FILE: &str = "config.toml";
pub const DIGEST_FILE: &str = "digests.json";
pub const BASELINE_REPORT: &str = "baseline.json";
const CHECKPOINT_META_VERSION: u32 = 1;

/// Contents of `phi.json` in a checkpoint directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub version: u32,
    pub ablation: Ablation,
    pub steps: usize,
    pub phi: ForwardModelParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_over_c: Option<f64>,
}

/// SHA-256 of each checkpoint file, hex encoded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Digests {
    pub files: std::collections::BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::file(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Run `write` against a temporary sibling of `path`, then rename it into place.
fn commit<E>(path: &Path, write: impl FnOnce(&Path) -> Result<(), E>) -> Result<(), CliError>
where
    CliError: From<E>,
{
    let tmp = partial_path(path);
    if let Err(e) = write(&tmp) {
        let _ = std::fs::remove_file(&tmp);
        return Err(e.into());
    }
    std::fs::rename(&tmp, path).map_err(|e| CliError::file(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::file(dir, e))
}

fn read_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::file(path, e))?;
    RunConfig::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Simulate {
            scene,
            views,
            seed,
            config,
            out,
        } => cmd_simulate(&scene, views, seed, config.as_deref(), &out),
        Command::Train {
            dataset,
            config,
            seed,
            ablation,
            out,
        } => cmd_train(dataset, config.as_deref(), seed, ablation.as_deref(), out).map(|_| ()),
        Command::Baseline { dataset, view, out } => cmd_baseline(&dataset, view, &out).map(|_| ()),
        Command::Eval {
            checkpoint,
            dataset,
            ground_truth,
            config,
            out,
        } => cmd_eval(checkpoint.as_deref(), &dataset, ground_truth, config.as_deref(), &out).map(|_| ()),
        Command::Mesh {
            checkpoint,
            resolution,
            out,
        } => cmd_mesh(&checkpoint, resolution, &out).map(|_| ()),
    }
}

pub fn cmd_simulate(scene: &str, views: Option<usize>, seed: Option<u64>, config: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let scene: SceneKind = scene.parse().map_err(CliError::Invalid)?;
    let mut cfg = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::file(p, e))?;
            toml::from_str::<SimConfig>(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => SimConfig::default(),
    };
    cfg.scene = scene;
    if let Some(n) = views {
        cfg.views = n;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let counts: std::collections::BTreeSet<usize> = (1..=10).map(|s| Rig::subset(s).poses.len()).collect();
    if !counts.contains(&cfg.views) {
        let list: Vec<String> = counts.iter().map(|n| n.to_string()).collect();
        return Err(CliError::Invalid(format!(
            "--views {} is not a tilt-rig subset (choose one of {})",
            cfg.views,
            list.join(", ")
        )));
    }
    if cfg.width == 0 || cfg.height == 0 || !(cfg.pixel_size > 0.0) || !(cfg.scene_scale > 0.0) {
        return Err(CliError::Config("image size, pixel_size and scene_scale must be positive".into()));
    }
    cfg.phi.validate()?;
    let ds = simulate(&cfg);
    save_dataset(&ds, out)?;
    log::info!("wrote {} views of '{}' to {}", ds.views.len(), scene, out.display());
    Ok(())
}

/// Train and write a checkpoint directory; returns its path.
pub fn cmd_train(
    dataset: Option<PathBuf>,
    config: Option<&Path>,
    seed: Option<u64>,
    ablation: Option<&str>,
    out: Option<PathBuf>,
) -> Result<PathBuf, CliError> {
    let mut cfg = match config {
        Some(p) => read_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    if let Some(a) = ablation {
        cfg.set_ablation(a.parse().map_err(CliError::Invalid)?);
    }
    if dataset.is_some() {
        cfg.dataset = dataset;
    }
    if out.is_some() {
        cfg.out = out;
    }
    cfg.validate()?;
    let data_dir = cfg
        .dataset
        .clone()
        .ok_or_else(|| CliError::Invalid("no dataset given (--dataset or `dataset` in the config)".into()))?;
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| CliError::Invalid("no output directory given (--out or `out` in the config)".into()))?;
    let ds = load_dataset(&data_dir)?;
    let trainer = Trainer::new(&ds, cfg.train.clone())?;
    create_dir(&out)?;
    let result = trainer.run()?;

    commit(&out.join(FIELD_FILE), |p| result.field.save(p))?;
    let meta = CheckpointMeta {
        version: CHECKPOINT_META_VERSION,
        ablation: cfg.train.ablation,
        steps: result.logs.len(),
        phi: result.phi.clone(),
        d_over_c: result.d_over_c,
    };
    write_json(&out.join(PHI_FILE), &meta)?;
    commit(&out.join(LOG_FILE), |p| write_logs(p, &result.logs))?;
    write_atomic(&out.join(CONFIG_FILE), cfg.to_toml()?.as_bytes())?;
    let mut files = std::collections::BTreeMap::new();
    for name in [FIELD_FILE, PHI_FILE, LOG_FILE, CONFIG_FILE] {
        files.insert(name.to_string(), sha256_file(&out.join(name))?);
    }
    write_json(&out.join(DIGEST_FILE), &Digests { files })?;
    log::info!("checkpoint written to {}", out.display());
    Ok(out)
}

/// A loaded checkpoint directory.
pub struct Checkpoint {
    pub field: SdfFieldParams,
    pub meta: CheckpointMeta,
    pub config: Option<RunConfig>,
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint, CliError> {
    let digest_path = dir.join(DIGEST_FILE);
    if digest_path.is_file() {
        let text = std::fs::read_to_string(&digest_path).map_err(|e| CliError::file(&digest_path, e))?;
        let d: Digests = serde_json::from_str(&text).map_err(|e| CliError::Format(format!("{DIGEST_FILE}: {e}")))?;
        for (name, want) in &d.files {
            let p = dir.join(name);
            if !p.is_file() {
                continue;
            }
            if &sha256_file(&p)? != want {
                return Err(CliError::Format(format!("{}: digest mismatch", p.display())));
            }
        }
    }
    let field_path = dir.join(FIELD_FILE);
    if !field_path.is_file() {
        return Err(CliError::Invalid(format!("missing {}", field_path.display())));
    }
    let field = SdfFieldParams::load(&field_path)?;
    let meta_path = dir.join(PHI_FILE);
    let text = std::fs::read_to_string(&meta_path).map_err(|e| CliError::file(&meta_path, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| CliError::Format(format!("{PHI_FILE}: {e}")))?;
    if meta.version != CHECKPOINT_META_VERSION {
        return Err(CliError::Format(format!("{PHI_FILE}: unsupported version {}", meta.version)));
    }
    let cfg_path = dir.join(CONFIG_FILE);
    let config = if cfg_path.is_file() { Some(read_config(&cfg_path)?) } else { None };
    Ok(Checkpoint { field, meta, config })
}

pub fn cmd_eval(
    checkpoint: Option<&Path>,
    dataset: &Path,
    ground_truth: bool,
    config: Option<&Path>,
    out: &Path,
) -> Result<EvalReport, CliError> {
    let ckpt = match (checkpoint, ground_truth) {
        (_, true) => None,
        (Some(dir), false) => Some(load_checkpoint(dir)?),
        (None, false) => return Err(CliError::Invalid("eval needs --checkpoint or --ground-truth".into())),
    };
    let run = match config {
        Some(p) => Some(read_config(p)?),
        None => ckpt.as_ref().and_then(|c| c.config.clone()),
    }
    .unwrap_or_default();
    let opts = EvalOptions {
        samples_per_ray: run.eval_samples,
        baselines: run.baselines,
        ..EvalOptions::default()
    };
    let ds = load_dataset(dataset)?;
    if ds.views.iter().any(|v| v.ground_truth.is_none()) {
        return Err(CliError::Invalid(format!("{}: eval needs ground truth for every view", dataset.display())));
    }
    let report = match &ckpt {
        None => evaluate_maps(&ds, &ground_truth_maps(&ds)?, &opts)?,
        Some(c) => evaluate_field(&c.field, Some(&c.meta.phi), &ds, &opts)?,
    };
    report.validate()?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_json(out, &report)?;
    Ok(report)
}

pub const MESH_OBJ: &str = "mesh.obj";
pub const MESH_PLY: &str = "mesh.ply";
pub const MESH_SIDECAR: &str = "mesh.json";

pub fn cmd_mesh(checkpoint: &Path, resolution: usize, out: &Path) -> Result<TriangleMesh, CliError> {
    if resolution < 8 {
        return Err(CliError::Invalid(format!("--resolution must be >= 8, got {resolution}")));
    }
    let ckpt = load_checkpoint(checkpoint)?;
    create_dir(out)?;
    let mesh = marching_cubes(&ckpt.field, resolution)?;
    write_mesh(&mesh, out, resolution, ckpt.field.bounds)?;
    Ok(mesh)
}

fn write_mesh(mesh: &TriangleMesh, out: &Path, resolution: usize, bounds: crate::field::Aabb) -> Result<(), CliError> {
    commit(&out.join(MESH_OBJ), |p| mesh.write_obj(p))?;
    commit(&out.join(MESH_PLY), |p| mesh.write_ply(p))?;
    write_json(&out.join(MESH_SIDECAR), &mesh.sidecar(resolution, bounds))
}

pub const BASELINE_HEIGHT: &str = "ps_height.map";
pub const BASELINE_MESH: &str = "ps_height.obj";

/// Summary of a photometric-stereo baseline run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineReport {
    pub view: String,
    pub d_over_c: f64,
    /// Scene units per pixel used to integrate slopes.
    pub pixel_size: f64,
    pub valid_pixels: usize,
    /// Peak-to-peak height, micrometres.
    pub height_range_um: f64,
    /// Height RMSE against the ground truth after removing the mean
    /// offset, micrometres.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rmse_um: Option<f64>,
}

pub fn cmd_baseline(dataset: &Path, view: usize, out: &Path) -> Result<BaselineReport, CliError> {
    let ds = load_dataset(dataset)?;
    let v = ds.views.get(view).ok_or_else(|| {
        CliError::Invalid(format!("--view {view} out of range (dataset has {} views)", ds.views.len()))
    })?;
    let (w, h) = (ds.width, ds.height);
    let d_over_c = ds
        .phi_gt
        .as_ref()
        .map_or(1.0, |p| p.d.iter().sum::<f64>() / p.c.iter().sum::<f64>());
    let fg: Vec<bool> = v.coarse_depth.iter().map(|z| z.is_finite()).collect();
    let pixel_size = match v.camera.projection {
        Projection::Orthographic { pixel_size } => pixel_size,
        Projection::Pinhole { .. } => {
            let (s, n) = v
                .coarse_depth
                .iter()
                .filter(|z| z.is_finite())
                .fold((0.0, 0usize), |(s, n), &z| (s + z as f64, n + 1));
            v.camera.pixel_footprint(s / n.max(1) as f64)
        }
    };
    let imgs: [Vec<f64>; 4] = std::array::from_fn(|q| v.bse[q].iter().map(|&x| x as f64).collect());
    let opts = PsOptions {
        d_over_c,
        detector_rotation: ds.detector_rotation(),
        pixel_size,
        target_range: None,
    };
    let height = ps_reconstruct([&imgs[0], &imgs[1], &imgs[2], &imgs[3]], w, h, &fg, &opts)?;
    let rmse_um = v.ground_truth.as_ref().and_then(|gt| height_rmse(&height, &gt.depth)).map(|r| r * ds.scene_scale);
    let finite: Vec<f64> = height.iter().copied().filter(|x| x.is_finite()).collect();
    let range = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max) - finite.iter().copied().fold(f64::INFINITY, f64::min);
    let report = BaselineReport {
        view: v.name.clone(),
        d_over_c,
        pixel_size,
        valid_pixels: finite.len(),
        height_range_um: if finite.is_empty() { 0.0 } else { range * ds.scene_scale },
        rmse_um,
    };
    create_dir(out)?;
    let as_f32: Vec<f32> = height.iter().map(|&x| x as f32).collect();
    write_map(&out.join(BASELINE_HEIGHT), &MapHeader::new(h, w, 1), &as_f32)?;
    let mesh = heightfield_mesh(&height, w, h, pixel_size, ds.scene_scale);
    commit(&out.join(BASELINE_MESH), |p| mesh.write_obj(p))?;
    write_json(&out.join(BASELINE_REPORT), &report)?;
    Ok(report)
}

/// RMSE between `height` and the height implied by the true ray depth
/// (`-depth`), after matching means over pixels valid in both.
fn height_rmse(height: &[f64], gt_depth: &[f32]) -> Option<f64> {
    let pairs: Vec<(f64, f64)> = height
        .iter()
        .zip(gt_depth)
        .filter(|(a, b)| a.is_finite() && b.is_finite())
        .map(|(&a, &b)| (a, -(b as f64)))
        .collect();
    if pairs.is_empty() {
        return None;
    }
    let n = pairs.len() as f64;
    let shift = pairs.iter().map(|(a, b)| b - a).sum::<f64>() / n;
    Some((pairs.iter().map(|(a, b)| (a + shift - b).powi(2)).sum::<f64>() / n).sqrt())
}

/// Grid mesh in image coordinates: x right, y down the rows, z = height.
/// Cells with any invalid corner are left open.
pub fn heightfield_mesh(height: &[f64], width: usize, rows: usize, pixel_size: f64, scene_scale: f64) -> TriangleMesh {
    let mut index = vec![u32::MAX; height.len()];
    let mut mesh = TriangleMesh {
        scene_scale,
        ..TriangleMesh::default()
    };
    for (i, &z) in height.iter().enumerate() {
        if z.is_finite() {
            index[i] = mesh.vertices.len() as u32;
            mesh.vertices.push([(i % width) as f64 * pixel_size, (i / width) as f64 * pixel_size, z]);
        }
    }
    for r in 0..rows.saturating_sub(1) {
        for c in 0..width.saturating_sub(1) {
            let [a, b, d, e] = [r * width + c, r * width + c + 1, (r + 1) * width + c, (r + 1) * width + c + 1].map(|i| index[i]);
            if [a, b, d, e].contains(&u32::MAX) {
                continue;
            }
            // counter-clockwise seen from +z in a y-down image frame
            mesh.triangles.push([a, d, b]);
            mesh.triangles.push([b, d, e]);
        }
    }
    mesh
}
