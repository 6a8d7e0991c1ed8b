//! C ABI over `nfsem`.
//!
//! Every function returns an [`NfsemStatus`]. Objects cross the boundary as
//! opaque pointers created by `nfsem_*_new/load/...` and released with the
//! matching `nfsem_*_free`. After a non-zero status,
//! [`nfsem_last_error_message`] describes the failure for the calling thread.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use nfsem::cli::{load_dataset, save_dataset, CliError, RunConfig};
use nfsem::dataset::Dataset;
use nfsem::extract::{marching_cubes, TriangleMesh};
use nfsem::field::SdfFieldParams;
use nfsem::photomodel::ForwardModelParams;
use nfsem::simulator::{simulate, SimConfig};
use nfsem::trainer::train;

/// Result of every call. Zero is success.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NfsemStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// An argument or input file failed validation.
    InvalidArgument = 2,
    Io = 3,
    /// A file exists but could not be parsed.
    Format = 4,
    /// Training diverged or was misconfigured.
    Train = 5,
    /// The output buffer is too small; nothing was written.
    BufferTooSmall = 6,
    /// A Rust panic was caught at the boundary.
    Internal = 7,
}

/// A loaded or simulated dataset.
pub struct NfsemDataset(Dataset);

/// A trained field with its forward model, if any.
pub struct NfsemModel {
    field: SdfFieldParams,
    phi: Option<ForwardModelParams>,
}

pub struct NfsemMesh(TriangleMesh);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

struct Failure(NfsemStatus, String);

impl From<CliError> for Failure {
    fn from(e: CliError) -> Self {
        let status = match &e {
            CliError::Invalid(_) | CliError::Config(_) => NfsemStatus::InvalidArgument,
            CliError::Format(_) | CliError::Json(_) => NfsemStatus::Format,
            CliError::File { .. } | CliError::Io(_) => NfsemStatus::Io,
            CliError::Train(_) => NfsemStatus::Train,
            _ => NfsemStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(NfsemStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> NfsemStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            NfsemStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            NfsemStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(NfsemStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure(NfsemStatus::NullArgument, format!("{what} is null")))
}

fn out_arg<T>(out: *mut *mut T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(NfsemStatus::NullArgument, "output pointer is null".into()));
    }
    Ok(())
}

/// Copy `src` into a caller buffer of `len` bytes, NUL terminated. `needed`
/// (optional) receives the required size including the terminator.
unsafe fn copy_out(src: &str, buf: *mut c_char, len: usize, needed: *mut usize) -> Result<(), Failure> {
    let n = src.len() + 1;
    if !needed.is_null() {
        *needed = n;
    }
    if buf.is_null() || len < n {
        return Err(Failure(NfsemStatus::BufferTooSmall, format!("buffer needs {n} bytes, got {len}")));
    }
    std::ptr::copy_nonoverlapping(src.as_ptr(), buf as *mut u8, src.len());
    *buf.add(src.len()) = 0;
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn nfsem_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the last failed call on this thread. Follows the buffer
/// convention of the other string getters; an empty string after success.
#[no_mangle]
pub unsafe extern "C" fn nfsem_last_error_message(buf: *mut c_char, len: usize, needed: *mut usize) -> NfsemStatus {
    let msg = LAST_ERROR.with(|e| e.borrow().clone());
    let n = msg.len() + 1;
    if !needed.is_null() {
        *needed = n;
    }
    if buf.is_null() || len < n {
        return NfsemStatus::BufferTooSmall;
    }
    std::ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, msg.len());
    *buf.add(msg.len()) = 0;
    NfsemStatus::Ok
}

/// Render a synthetic scene. `config_toml` may be null; otherwise it holds
/// simulator settings in TOML.
#[no_mangle]
pub unsafe extern "C" fn nfsem_dataset_simulate(
    scene: *const c_char,
    views: u32,
    seed: u64,
    config_toml: *const c_char,
    out: *mut *mut NfsemDataset,
) -> NfsemStatus {
    guard(|| {
        out_arg(out)?;
        let scene = str_arg(scene, "scene")?.parse().map_err(invalid)?;
        let mut cfg: SimConfig = if config_toml.is_null() {
            SimConfig::default()
        } else {
            toml::from_str(str_arg(config_toml, "config")?).map_err(|e| invalid(format!("config: {e}")))?
        };
        cfg.scene = scene;
        cfg.views = views as usize;
        cfg.seed = seed;
        if cfg.width == 0 || cfg.height == 0 || cfg.views == 0 {
            return Err(invalid("image size and view count must be positive"));
        }
        *out = Box::into_raw(Box::new(NfsemDataset(simulate(&cfg))));
        Ok(())
    })
}

/// Load a dataset directory holding `manifest.json`.
#[no_mangle]
pub unsafe extern "C" fn nfsem_dataset_load(dir: *const c_char, out: *mut *mut NfsemDataset) -> NfsemStatus {
    guard(|| {
        out_arg(out)?;
        let ds = load_dataset(&PathBuf::from(str_arg(dir, "dir")?))?;
        *out = Box::into_raw(Box::new(NfsemDataset(ds)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn nfsem_dataset_save(ds: *const NfsemDataset, dir: *const c_char) -> NfsemStatus {
    guard(|| {
        let ds = ref_arg(ds, "dataset")?;
        save_dataset(&ds.0, &PathBuf::from(str_arg(dir, "dir")?))?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn nfsem_dataset_view_count(ds: *const NfsemDataset, out: *mut u32) -> NfsemStatus {
    guard(|| {
        let ds = ref_arg(ds, "dataset")?;
        if out.is_null() {
            return Err(Failure(NfsemStatus::NullArgument, "output pointer is null".into()));
        }
        *out = ds.0.views.len() as u32;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn nfsem_dataset_free(ds: *mut NfsemDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Train on `ds`. `config_toml` uses the run-config format of the `nfsem`
/// tool and may be null for the defaults.
#[no_mangle]
pub unsafe extern "C" fn nfsem_train(
    ds: *const NfsemDataset,
    config_toml: *const c_char,
    out: *mut *mut NfsemModel,
) -> NfsemStatus {
    guard(|| {
        out_arg(out)?;
        let ds = ref_arg(ds, "dataset")?;
        let cfg = if config_toml.is_null() {
            RunConfig::default()
        } else {
            RunConfig::parse(str_arg(config_toml, "config")?)?
        };
        let result = train(&ds.0, &cfg.train).map_err(|e| Failure(NfsemStatus::Train, e.to_string()))?;
        *out = Box::into_raw(Box::new(NfsemModel {
            field: result.field,
            phi: Some(result.phi),
        }));
        Ok(())
    })
}

/// Load a field checkpoint file (`field.ckpt`). The model has no forward
/// model attached.
#[no_mangle]
pub unsafe extern "C" fn nfsem_model_load(path: *const c_char, out: *mut *mut NfsemModel) -> NfsemStatus {
    guard(|| {
        out_arg(out)?;
        let path = PathBuf::from(str_arg(path, "path")?);
        let field = SdfFieldParams::load(&path).map_err(|e| Failure(NfsemStatus::Format, format!("{}: {e}", path.display())))?;
        *out = Box::into_raw(Box::new(NfsemModel { field, phi: None }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn nfsem_model_save(model: *const NfsemModel, path: *const c_char) -> NfsemStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        m.field
            .save(&path)
            .map_err(|e| Failure(NfsemStatus::Io, format!("{}: {e}", path.display())))
    })
}

/// Signed distance at `n` points (`xyz` holds 3n doubles, scene units)
/// into `out` (n doubles).
#[no_mangle]
pub unsafe extern "C" fn nfsem_model_sdf(model: *const NfsemModel, xyz: *const f64, n: usize, out: *mut f64) -> NfsemStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        if n == 0 {
            return Ok(());
        }
        if xyz.is_null() || out.is_null() {
            return Err(Failure(NfsemStatus::NullArgument, "point or output buffer is null".into()));
        }
        let pts = std::slice::from_raw_parts(xyz, 3 * n);
        let dst = std::slice::from_raw_parts_mut(out, n);
        for (d, p) in dst.iter_mut().zip(pts.chunks_exact(3)) {
            *d = m.field.sdf([p[0], p[1], p[2]]);
        }
        Ok(())
    })
}

/// Learned forward model as JSON. `NfsemStatus::InvalidArgument` when the
/// model was loaded from a bare field checkpoint.
#[no_mangle]
pub unsafe extern "C" fn nfsem_model_phi_json(
    model: *const NfsemModel,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> NfsemStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let phi = m.phi.as_ref().ok_or_else(|| invalid("model carries no forward model"))?;
        let text = serde_json::to_string(phi).map_err(|e| Failure(NfsemStatus::Internal, e.to_string()))?;
        copy_out(&text, buf, len, needed)
    })
}

#[no_mangle]
pub unsafe extern "C" fn nfsem_model_free(model: *mut NfsemModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Marching cubes of the zero level set on a `resolution`³ grid.
#[no_mangle]
pub unsafe extern "C" fn nfsem_mesh_extract(model: *const NfsemModel, resolution: u32, out: *mut *mut NfsemMesh) -> NfsemStatus {
    guard(|| {
        out_arg(out)?;
        let m = ref_arg(model, "model")?;
        let mesh = marching_cubes(&m.field, resolution as usize).map_err(|e| invalid(e.to_string()))?;
        *out = Box::into_raw(Box::new(NfsemMesh(mesh)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn nfsem_mesh_counts(mesh: *const NfsemMesh, vertices: *mut usize, triangles: *mut usize) -> NfsemStatus {
    guard(|| {
        let m = ref_arg(mesh, "mesh")?;
        if vertices.is_null() || triangles.is_null() {
            return Err(Failure(NfsemStatus::NullArgument, "output pointer is null".into()));
        }
        *vertices = m.0.vertices.len();
        *triangles = m.0.triangles.len();
        Ok(())
    })
}

/// Copy vertex positions (3 doubles each) and triangle indices (3 uint32
/// each). `vertex_len` and `index_len` count elements, not bytes.
#[no_mangle]
pub unsafe extern "C" fn nfsem_mesh_copy(
    mesh: *const NfsemMesh,
    vertices: *mut f64,
    vertex_len: usize,
    indices: *mut u32,
    index_len: usize,
) -> NfsemStatus {
    guard(|| {
        let m = ref_arg(mesh, "mesh")?;
        let (nv, ni) = (3 * m.0.vertices.len(), 3 * m.0.triangles.len());
        if vertex_len < nv || index_len < ni {
            return Err(Failure(
                NfsemStatus::BufferTooSmall,
                format!("need {nv} vertex and {ni} index elements"),
            ));
        }
        if (nv > 0 && vertices.is_null()) || (ni > 0 && indices.is_null()) {
            return Err(Failure(NfsemStatus::NullArgument, "output buffer is null".into()));
        }
        if nv > 0 {
            let v = std::slice::from_raw_parts_mut(vertices, nv);
            for (d, s) in v.chunks_exact_mut(3).zip(&m.0.vertices) {
                d.copy_from_slice(s);
            }
        }
        if ni > 0 {
            let t = std::slice::from_raw_parts_mut(indices, ni);
            for (d, s) in t.chunks_exact_mut(3).zip(&m.0.triangles) {
                d.copy_from_slice(s);
            }
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn nfsem_mesh_write_obj(mesh: *const NfsemMesh, path: *const c_char) -> NfsemStatus {
    guard(|| {
        let m = ref_arg(mesh, "mesh")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        m.0.write_obj(&path).map_err(|e| Failure(NfsemStatus::Io, format!("{}: {e}", path.display())))
    })
}

#[no_mangle]
pub unsafe extern "C" fn nfsem_mesh_free(mesh: *mut NfsemMesh) {
    if !mesh.is_null() {
        drop(Box::from_raw(mesh));
    }
}
