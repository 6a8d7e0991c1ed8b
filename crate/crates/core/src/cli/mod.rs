//! Command-line front end: `simulate | train | baseline | eval | mesh`.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod maps;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

pub use commands::{CheckpointMeta, Digests, BASELINE_REPORT, CONFIG_FILE, DIGEST_FILE, FIELD_FILE, LOG_FILE, PHI_FILE};
pub use config::{Preset, RunConfig};
pub use manifest::{load_dataset, save_dataset, DatasetManifest, TruthEntry, ViewEntry, MANIFEST_FILE, MANIFEST_VERSION};
pub use maps::{decode_map, encode_map, read_map, write_map, MapHeader, MAP_MAGIC};

pub const THREADS_ENV: &str = "NFSEM_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("config: {0}")]
    Config(String),
    #[error("format: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Train(#[from] crate::trainer::TrainError),
    #[error(transparent)]
    Extract(#[from] crate::extract::ExtractError),
    #[error(transparent)]
    Field(#[from] crate::field::FieldError),
    #[error(transparent)]
    Photo(#[from] crate::photomodel::PhotoError),
}

impl CliError {
    pub fn file(path: &Path, source: std::io::Error) -> Self {
        CliError::File {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Write through a sibling temporary file and rename, so a crash never
/// leaves a truncated output under the final name.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = partial_path(path);
    std::fs::write(&tmp, bytes).map_err(|e| CliError::file(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::file(path, e))
}

pub(crate) fn partial_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".partial");
    path.with_file_name(name)
}

#[derive(Debug, Parser)]
#[command(name = "nfsem", version, about = "Neural-field surface reconstruction from four-quadrant BSE images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset with ground truth.
    Simulate {
        /// plane, sphere, paraboloid, pyramid, wall or composite.
        #[arg(long)]
        scene: String,
        /// Number of views taken from the tilt rig (default 9).
        #[arg(long)]
        views: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// TOML overrides of the simulator settings.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a field on a dataset and write a checkpoint directory.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// none, no_bse_f, no_poly_r, no_4q_var or no_s_mask.
        #[arg(long)]
        ablation: Option<String>,
        /// Checkpoint directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Photometric-stereo height map of one view.
    Baseline {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 0)]
        view: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint (or the ground truth) and write the report JSON.
    Eval {
        #[arg(long, required_unless_present = "ground_truth")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        /// Score the dataset's ground truth instead of a checkpoint.
        #[arg(long, conflicts_with = "checkpoint")]
        ground_truth: bool,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Report file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract the zero level set as OBJ and PLY.
    Mesh {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 256)]
        resolution: usize,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Cap the global worker pool from `NFSEM_THREADS`, if set.
pub fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Invalid(format!("{THREADS_ENV} must be a positive integer, got '{v}'")))?;
    // a pool built earlier in the process wins; that is fine for tests
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    commands::dispatch(cli.command)
}

/// Parse `args` (program name first) and run; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
