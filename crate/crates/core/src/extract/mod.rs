//! Mesh extraction and reconstruction metrics.

mod mesh;
mod metrics;
mod render;
mod report;
mod tables;
#[cfg(test)]
mod tests;

pub use mesh::{marching_cubes, marching_cubes_fn, MeshSidecar, TriangleMesh};
pub use metrics::{
    angle_deg, estimated_shadows, eval_bse_model, eval_depth, eval_normal, eval_shadow, shadow_accuracy,
};
pub use render::{normals_from_depth, render_view, surface_view, ViewMaps};
pub use report::{
    coarse_maps, evaluate_field, evaluate_maps, field_maps, ground_truth_maps, ps_maps, EvalOptions, EvalReport,
    MethodMaps, MethodRow, ViewRow, REPORT_VERSION,
};

use thiserror::Error;

use crate::photomodel::PhotoError;

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("marching cubes needs resolution >= 8, got {0}")]
    Resolution(usize),
    #[error("invalid mesh: {0}")]
    BadMesh(String),
    #[error("view {0} has no ground truth")]
    NoGroundTruth(String),
    #[error("invalid report: {0}")]
    BadReport(String),
    #[error(transparent)]
    Photo(#[from] PhotoError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
