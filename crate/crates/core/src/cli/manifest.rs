//! On-disk dataset: `manifest.json` next to per-view map files and PNG
//! quadrant images.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{Camera, Dataset, GroundTruth, Projection, View};
use crate::field::Aabb;
use crate::photomodel::ForwardModelParams;

use super::maps::{read_map, write_map, MapHeader};
use super::{write_atomic, CliError};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
/// Largest accepted deviation of a pose's rotation block from a rotation.
pub const RIGID_TOLERANCE: f64 = 1e-6;

const QUADRANT_NAMES: [&str; 4] = ["a", "b", "c", "d"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub width: usize,
    pub height: usize,
    /// Micrometres per scene unit.
    pub scene_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<String>,
    #[serde(default = "unit_bounds")]
    pub bounds: Aabb,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_gt: Option<ForwardModelParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    pub views: Vec<ViewEntry>,
}

fn unit_bounds() -> Aabb {
    Aabb::UNIT
}

/// One view; paths are relative to the manifest directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewEntry {
    pub name: String,
    pub pose: [[f64; 4]; 4],
    pub projection: Projection,
    pub depth: PathBuf,
    pub confidence: PathBuf,
    /// Quadrant images A–D, 8-bit grayscale PNG.
    pub bse: [PathBuf; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<TruthEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthEntry {
    pub depth: PathBuf,
    pub normal: PathBuf,
    pub shadow: PathBuf,
}

impl DatasetManifest {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let m: Self = serde_json::from_str(text).map_err(|e| CliError::Format(format!("manifest: {e}")))?;
        if m.version != MANIFEST_VERSION {
            return Err(CliError::Format(format!(
                "manifest version {} is not supported (expected {MANIFEST_VERSION})",
                m.version
            )));
        }
        Ok(m)
    }

    /// Structural checks that need no file access.
    pub fn check(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Invalid(m));
        if self.width == 0 || self.height == 0 {
            return bad(format!("image size {}x{} is empty", self.width, self.height));
        }
        if self.views.is_empty() {
            return bad("manifest lists no views".into());
        }
        if !(self.scene_scale > 0.0 && self.scene_scale.is_finite()) {
            return bad(format!("scene_scale must be > 0, got {}", self.scene_scale));
        }
        let b = &self.bounds;
        if !(0..3).all(|k| b.min[k] < b.max[k]) {
            return bad(format!("bounds {:?}..{:?} are empty", b.min, b.max));
        }
        for v in &self.views {
            let cam = self.camera(v);
            let err = cam.rotation_error();
            if !(err <= RIGID_TOLERANCE) {
                return bad(format!(
                    "view {}: pose is not a rigid transform (rotation error {err:.3e})",
                    v.name
                ));
            }
            if v.pose[3] != [0.0, 0.0, 0.0, 1.0] {
                return bad(format!("view {}: last pose row must be 0 0 0 1", v.name));
            }
            let ok = match v.projection {
                Projection::Orthographic { pixel_size } => pixel_size > 0.0 && pixel_size.is_finite(),
                Projection::Pinhole { focal_px } => focal_px > 0.0 && focal_px.is_finite(),
            };
            if !ok {
                return bad(format!("view {}: projection {:?} is invalid", v.name, v.projection));
            }
        }
        Ok(())
    }

    fn camera(&self, v: &ViewEntry) -> Camera {
        Camera {
            pose: v.pose,
            width: self.width,
            height: self.height,
            projection: v.projection,
        }
    }
}

fn read_png(path: &Path, width: usize, height: usize) -> Result<Vec<u8>, CliError> {
    let img = image::open(path).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))?;
    if img.width() as usize != width || img.height() as usize != height {
        return Err(CliError::Format(format!(
            "{}: image is {}x{}, expected {width}x{height}",
            path.display(),
            img.width(),
            img.height()
        )));
    }
    if img.color() != image::ColorType::L8 {
        return Err(CliError::Format(format!(
            "{}: expected 8-bit grayscale, found {:?}",
            path.display(),
            img.color()
        )));
    }
    Ok(img.into_luma8().into_raw())
}

fn encode_png(data: &[u8], width: usize, height: usize) -> Result<Vec<u8>, CliError> {
    let mut out = std::io::Cursor::new(Vec::new());
    image::GrayImage::from_raw(width as u32, height as u32, data.to_vec())
        .ok_or_else(|| CliError::Format("image buffer size mismatch".into()))?
        .write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| CliError::Format(format!("PNG encoding failed: {e}")))?;
    Ok(out.into_inner())
}

/// Read and fully validate a dataset directory.
pub fn load_dataset(dir: &Path) -> Result<Dataset, CliError> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::file(&path, e))?;
    let m = DatasetManifest::parse(&text)?;
    m.check()?;
    for v in &m.views {
        let mut files = vec![&v.depth, &v.confidence];
        files.extend(v.bse.iter());
        if let Some(t) = &v.ground_truth {
            files.extend([&t.depth, &t.normal, &t.shadow]);
        }
        for f in files {
            let p = dir.join(f);
            if !p.is_file() {
                return Err(CliError::Invalid(format!("view {}: missing file {}", v.name, p.display())));
            }
        }
    }
    let (w, h) = (m.width, m.height);
    let mut views = Vec::with_capacity(m.views.len());
    for v in &m.views {
        let bse = [
            read_png(&dir.join(&v.bse[0]), w, h)?,
            read_png(&dir.join(&v.bse[1]), w, h)?,
            read_png(&dir.join(&v.bse[2]), w, h)?,
            read_png(&dir.join(&v.bse[3]), w, h)?,
        ];
        let ground_truth = match &v.ground_truth {
            Some(t) => {
                let normal = read_map(&dir.join(&t.normal), h, w, 3)?;
                let shadow = read_map(&dir.join(&t.shadow), h, w, 4)?;
                Some(GroundTruth {
                    depth: read_map(&dir.join(&t.depth), h, w, 1)?,
                    normal: normal.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
                    shadow: std::array::from_fn(|q| shadow.iter().skip(q).step_by(4).copied().collect()),
                })
            }
            None => None,
        };
        views.push(View {
            name: v.name.clone(),
            camera: m.camera(v),
            coarse_depth: read_map(&dir.join(&v.depth), h, w, 1)?,
            confidence: read_map(&dir.join(&v.confidence), h, w, 1)?,
            bse,
            ground_truth,
        });
    }
    Ok(Dataset {
        width: w,
        height: h,
        views,
        scene_scale: m.scene_scale,
        bounds: m.bounds,
        phi_gt: m.phi_gt,
        sigma: m.sigma,
        scene: m.scene,
    })
}

/// Write `ds` under `dir` (created if needed); returns the manifest.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<DatasetManifest, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::file(dir, e))?;
    let (w, h) = (ds.width, ds.height);
    let mut entries = Vec::with_capacity(ds.views.len());
    for v in &ds.views {
        let name = |suffix: &str| PathBuf::from(format!("{}_{suffix}", v.name));
        let depth = name("depth.map");
        let confidence = name("confidence.map");
        write_map(&dir.join(&depth), &MapHeader::new(h, w, 1), &v.coarse_depth)?;
        write_map(&dir.join(&confidence), &MapHeader::new(h, w, 1), &v.confidence)?;
        let bse: [PathBuf; 4] = std::array::from_fn(|q| name(&format!("bse_{}.png", QUADRANT_NAMES[q])));
        for q in 0..4 {
            write_atomic(&dir.join(&bse[q]), &encode_png(&v.bse[q], w, h)?)?;
        }
        let ground_truth = match &v.ground_truth {
            Some(t) => {
                let entry = TruthEntry {
                    depth: name("gt_depth.map"),
                    normal: name("gt_normal.map"),
                    shadow: name("gt_shadow.map"),
                };
                write_map(&dir.join(&entry.depth), &MapHeader::new(h, w, 1), &t.depth)?;
                let normal: Vec<f32> = t.normal.iter().flatten().copied().collect();
                write_map(&dir.join(&entry.normal), &MapHeader::new(h, w, 3), &normal)?;
                let shadow: Vec<f32> = (0..w * h).flat_map(|i| (0..4).map(move |q| (q, i))).map(|(q, i)| t.shadow[q][i]).collect();
                write_map(&dir.join(&entry.shadow), &MapHeader::new(h, w, 4), &shadow)?;
                Some(entry)
            }
            None => None,
        };
        entries.push(ViewEntry {
            name: v.name.clone(),
            pose: v.camera.pose,
            projection: v.camera.projection,
            depth,
            confidence,
            bse,
            ground_truth,
        });
    }
    let m = DatasetManifest {
        version: MANIFEST_VERSION,
        width: w,
        height: h,
        scene_scale: ds.scene_scale,
        scene: ds.scene.clone(),
        bounds: ds.bounds,
        phi_gt: ds.phi_gt.clone(),
        sigma: ds.sigma,
        views: entries,
    };
    let mut text = serde_json::to_string_pretty(&m)?;
    text.push('\n');
    write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes())?;
    Ok(m)
}
