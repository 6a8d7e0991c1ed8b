//! In-memory multi-view dataset: cameras, coarse depth priors, quadrant
//! images and optional ground truth.

use serde::{Deserialize, Serialize};

use crate::field::Aabb;
use crate::photomodel::ForwardModelParams;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Projection {
    /// Parallel rays; `pixel_size` in scene units.
    Orthographic { pixel_size: f64 },
    /// Perspective; focal length in pixels, principal point at the image centre.
    Pinhole { focal_px: f64 },
}

/// Camera looking along its local −z axis (the beam direction).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Camera {
    /// Camera-to-world rigid transform, row-major 4×4.
    pub pose: [[f64; 4]; 4],
    pub width: usize,
    pub height: usize,
    pub projection: Projection,
}

fn mat_vec(r: &[[f64; 4]; 4], v: [f64; 3]) -> [f64; 3] {
    [
        r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
        r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
        r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2],
    ]
}

impl Camera {
    /// Orthographic camera on a sphere of radius `distance` around the
    /// origin, tilted by `tilt_x` about the world x axis and then `tilt_y`
    /// about the world y axis (degrees).
    pub fn tilted(tilt_x_deg: f64, tilt_y_deg: f64, distance: f64, width: usize, height: usize, pixel_size: f64) -> Self {
        let (sx, cx) = tilt_x_deg.to_radians().sin_cos();
        let (sy, cy) = tilt_y_deg.to_radians().sin_cos();
        let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
        let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
        let mut r = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                r[i][j] = (0..3).map(|k| ry[i][k] * rx[k][j]).sum();
            }
        }
        let mut pose = [[0.0; 4]; 4];
        for i in 0..3 {
            pose[i][..3].copy_from_slice(&r[i]);
            pose[i][3] = r[i][2] * distance;
        }
        pose[3][3] = 1.0;
        Camera {
            pose,
            width,
            height,
            projection: Projection::Orthographic { pixel_size },
        }
    }

    pub fn position(&self) -> [f64; 3] {
        [self.pose[0][3], self.pose[1][3], self.pose[2][3]]
    }

    pub fn to_world(&self, v: [f64; 3]) -> [f64; 3] {
        mat_vec(&self.pose, v)
    }

    /// Rotate a world direction into the camera frame.
    pub fn to_camera(&self, v: [f64; 3]) -> [f64; 3] {
        let r = &self.pose;
        [
            r[0][0] * v[0] + r[1][0] * v[1] + r[2][0] * v[2],
            r[0][1] * v[0] + r[1][1] * v[1] + r[2][1] * v[2],
            r[0][2] * v[0] + r[1][2] * v[1] + r[2][2] * v[2],
        ]
    }

    /// Largest deviation of the rotation block from orthonormality.
    pub fn rotation_error(&self) -> f64 {
        let r = &self.pose;
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - want).abs());
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        worst.max((det - 1.0).abs())
    }

    /// World ray (origin, unit direction) through the centre of pixel `(row, col)`.
    /// Rows run along the camera +y axis, columns along +x.
    pub fn ray(&self, row: usize, col: usize) -> ([f64; 3], [f64; 3]) {
        let u = col as f64 + 0.5 - self.width as f64 / 2.0;
        let v = row as f64 + 0.5 - self.height as f64 / 2.0;
        let pos = self.position();
        match self.projection {
            Projection::Orthographic { pixel_size } => {
                let off = self.to_world([u * pixel_size, v * pixel_size, 0.0]);
                (
                    [pos[0] + off[0], pos[1] + off[1], pos[2] + off[2]],
                    self.to_world([0.0, 0.0, -1.0]),
                )
            }
            Projection::Pinhole { focal_px } => {
                let d = [u, v, -focal_px];
                let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                (pos, self.to_world([d[0] / n, d[1] / n, d[2] / n]))
            }
        }
    }

    /// Scene-space length of one pixel at depth `t` (for slope scaling).
    pub fn pixel_footprint(&self, t: f64) -> f64 {
        match self.projection {
            Projection::Orthographic { pixel_size } => pixel_size,
            Projection::Pinhole { focal_px } => t / focal_px,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// Simulator-only maps used for evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    /// Ray depth, NaN on background.
    pub depth: Vec<f32>,
    /// Unit normals in the camera frame (zero on background).
    pub normal: Vec<[f32; 3]>,
    /// Shadow intensity per quadrant A–D.
    pub shadow: [Vec<f32>; 4],
}

impl GroundTruth {
    pub fn foreground(&self) -> Vec<bool> {
        self.depth.iter().map(|d| d.is_finite()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub name: String,
    pub camera: Camera,
    /// Coarse depth prior along camera rays, NaN where unknown.
    pub coarse_depth: Vec<f32>,
    pub confidence: Vec<f32>,
    /// Quadrant images A–D.
    pub bse: [Vec<u8>; 4],
    pub ground_truth: Option<GroundTruth>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub width: usize,
    pub height: usize,
    pub views: Vec<View>,
    /// Micrometres per scene unit.
    pub scene_scale: f64,
    pub bounds: Aabb,
    pub phi_gt: Option<ForwardModelParams>,
    pub sigma: Option<f64>,
    pub scene: Option<String>,
}

impl Dataset {
    pub fn detector_rotation(&self) -> f64 {
        self.phi_gt.as_ref().map_or(0.0, |p| p.detector_rotation)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_view_looks_down() {
        let cam = Camera::tilted(0.0, 0.0, 1.5, 4, 3, 0.1);
        let (o, d) = cam.ray(0, 0);
        assert_eq!(d, [0.0, 0.0, -1.0]);
        assert!((o[0] + 0.15).abs() < 1e-12 && (o[1] + 0.1).abs() < 1e-12 && (o[2] - 1.5).abs() < 1e-12);
        assert!(cam.rotation_error() < 1e-12);
    }

    #[test]
    fn tilted_camera_is_rigid_and_aims_at_origin() {
        for (tx, ty) in [(30.0, 0.0), (0.0, -45.0), (15.0, 20.0)] {
            let cam = Camera::tilted(tx, ty, 1.5, 8, 6, 0.1);
            assert!(cam.rotation_error() < 1e-12);
            let p = cam.position();
            let d = cam.to_world([0.0, 0.0, -1.0]);
            let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            for k in 0..3 {
                assert!((d[k] + p[k] / n).abs() < 1e-12);
            }
            let v = [0.3, -0.2, 0.9];
            let back = cam.to_camera(cam.to_world(v));
            for k in 0..3 {
                assert!((back[k] - v[k]).abs() < 1e-12);
            }
        }
    }
}
