//! C ABI over the relighting and latent-editing library.
//!
//! Objects are opaque handles created by `pa_*_new`/`pa_*_load` functions and
//! released with the matching `pa_*_free`. Every fallible call returns a
//! [`PaStatus`]; the message of the most recent failure on the calling thread
//! is available through [`pa_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use photoapp::envmap::{fibonacci_basis, resample_to_basis, LatLongEnvMap, LightBasis, LightWeights};
use photoapp::latent_edit::{ConditionVector, LatentCode, PhotoAppNet};
use photoapp::olat::{relight, CameraPose, OlatStack};
use photoapp::radiometry_io::HdrImage;
use photoapp::training::read_checkpoint_file;
use photoapp::Error;

/// Result codes shared by every function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Format = 4,
    Parameter = 5,
    Shape = 6,
    Numeric = 7,
    Config = 8,
    Capability = 9,
    Version = 10,
    Corrupt = 11,
    BufferTooSmall = 12,
    Panic = 13,
}

/// Spherical light basis.
pub struct PaBasis(LightBasis);

/// Lat-long HDR environment map.
pub struct PaEnvMap(LatLongEnvMap);

/// One-light-at-a-time image stack of a single identity and camera.
pub struct PaStack(OlatStack);

/// Trained latent-editing network.
pub struct PaNet(PhotoAppNet<f32>);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(err: &Error) -> PaStatus {
    match err {
        Error::Format(_) | Error::Json(_) => PaStatus::Format,
        Error::Truncated(_) | Error::Corrupt(_) => PaStatus::Corrupt,
        Error::Unsupported(_) | Error::Capability(_) => PaStatus::Capability,
        Error::Parameter(_) => PaStatus::Parameter,
        Error::Shape(_) => PaStatus::Shape,
        Error::Numeric(_) => PaStatus::Numeric,
        Error::Config(_) => PaStatus::Config,
        Error::Version(_) => PaStatus::Version,
        Error::Io { .. } => PaStatus::Io,
    }
}

struct Fail(PaStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PaStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            PaStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(PaStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(PaStatus::InvalidUtf8, "path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn handle_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn copy_out(src: &[f32], out: *mut f32, out_len: usize) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    if out_len < src.len() {
        return Err(Fail(
            PaStatus::BufferTooSmall,
            format!("output needs {} floats, buffer holds {out_len}", src.len()),
        ));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

unsafe fn free_handle<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Copies the last error message of this thread into `buf` as a NUL-terminated
/// string, truncating if needed. Returns the full message length in bytes
/// (excluding the terminator).
#[no_mangle]
pub unsafe extern "C" fn pa_last_error_message(buf: *mut c_char, buf_len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && buf_len > 0 {
            let n = msg.len().min(buf_len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Near-uniform basis of `n` directions with equal solid angles.
#[no_mangle]
pub unsafe extern "C" fn pa_basis_fibonacci(n: usize, out: *mut *mut PaBasis) -> PaStatus {
    guard(|| store(out, PaBasis(fibonacci_basis(n)?)))
}

/// Reads a basis text file (one `x y z solid_angle` line per light).
#[no_mangle]
pub unsafe extern "C" fn pa_basis_load(path: *const c_char, out: *mut *mut PaBasis) -> PaStatus {
    guard(|| store(out, PaBasis(LightBasis::load(path_arg(path)?)?)))
}

/// Number of lights, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn pa_basis_len(basis: *const PaBasis) -> usize {
    basis.as_ref().map_or(0, |b| b.0.len())
}

#[no_mangle]
pub unsafe extern "C" fn pa_basis_free(basis: *mut PaBasis) {
    free_handle(basis);
}

/// Reads a Radiance `.hdr` environment map.
#[no_mangle]
pub unsafe extern "C" fn pa_envmap_load(path: *const c_char, out: *mut *mut PaEnvMap) -> PaStatus {
    guard(|| store(out, PaEnvMap(LatLongEnvMap::load(path_arg(path)?)?)))
}

/// Map of constant radiance.
#[no_mangle]
pub unsafe extern "C" fn pa_envmap_constant(
    width: usize,
    height: usize,
    r: f32,
    g: f32,
    b: f32,
    out: *mut *mut PaEnvMap,
) -> PaStatus {
    guard(|| store(out, PaEnvMap(LatLongEnvMap::constant(width, height, [r, g, b])?)))
}

#[no_mangle]
pub unsafe extern "C" fn pa_envmap_free(env: *mut PaEnvMap) {
    free_handle(env);
}

/// Bins `env` onto `basis`, writing `3 * pa_basis_len(basis)` RGB weights.
#[no_mangle]
pub unsafe extern "C" fn pa_envmap_resample(
    env: *const PaEnvMap,
    basis: *const PaBasis,
    out_weights: *mut f32,
    out_len: usize,
) -> PaStatus {
    guard(|| {
        let env = handle_arg(env, "envmap")?;
        let basis = handle_arg(basis, "basis")?;
        let w = resample_to_basis(&env.0, &basis.0)?;
        copy_out(w.values(), out_weights, out_len)
    })
}

/// Builds a stack from `lights` interleaved RGB images of `width * height`
/// pixels, stored one after another in `data`.
#[no_mangle]
pub unsafe extern "C" fn pa_stack_new(
    width: usize,
    height: usize,
    lights: usize,
    data: *const f32,
    data_len: usize,
    out: *mut *mut PaStack,
) -> PaStatus {
    guard(|| {
        let per = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(3))
            .ok_or_else(|| Fail(PaStatus::Parameter, "image size overflows".into()))?;
        if per.checked_mul(lights) != Some(data_len) {
            return Err(Fail(
                PaStatus::Shape,
                format!("{lights} images of {width}x{height} need {} floats, got {data_len}", per * lights),
            ));
        }
        let data = slice_arg(data, data_len, "image data")?;
        let images = data
            .chunks_exact(per.max(1))
            .map(|c| HdrImage::new(width, height, c.to_vec()))
            .collect::<photoapp::Result<Vec<_>>>()?;
        let pose = CameraPose::new(0.0, 0.0, 0.0)?;
        store(out, PaStack(OlatStack::new("ffi", "ffi", pose, images)?))
    })
}

/// Reads `lights` images named `light_000.hdr ..` from a directory.
#[no_mangle]
pub unsafe extern "C" fn pa_stack_load(dir: *const c_char, lights: usize, out: *mut *mut PaStack) -> PaStatus {
    guard(|| {
        let pose = CameraPose::new(0.0, 0.0, 0.0)?;
        store(out, PaStack(OlatStack::load_dir(path_arg(dir)?, lights, "ffi", "ffi", pose)?))
    })
}

/// Writes width, height and light count; any output pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn pa_stack_info(
    stack: *const PaStack,
    width: *mut usize,
    height: *mut usize,
    lights: *mut usize,
) -> PaStatus {
    guard(|| {
        let s = handle_arg(stack, "stack")?;
        let (w, h) = s.0.dims();
        for (p, v) in [(width, w), (height, h), (lights, s.0.light_count())] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pa_stack_free(stack: *mut PaStack) {
    free_handle(stack);
}

/// Weighted sum of the stack images. `weights` holds three values per light;
/// `out_rgb` receives `width * height * 3` floats.
#[no_mangle]
pub unsafe extern "C" fn pa_relight(
    stack: *const PaStack,
    weights: *const f32,
    weights_len: usize,
    out_rgb: *mut f32,
    out_len: usize,
) -> PaStatus {
    guard(|| {
        let s = handle_arg(stack, "stack")?;
        let w = LightWeights::new(slice_arg(weights, weights_len, "weights")?.to_vec())?;
        copy_out(relight(&s.0, &w)?.data(), out_rgb, out_len)
    })
}

/// Loads network parameters from a checkpoint file.
#[no_mangle]
pub unsafe extern "C" fn pa_net_load(path: *const c_char, out: *mut *mut PaNet) -> PaStatus {
    guard(|| store(out, PaNet(read_checkpoint_file(path_arg(path)?)?.net)))
}

/// Latent length (blocks times block width), or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn pa_net_latent_len(net: *const PaNet) -> usize {
    net.as_ref().map_or(0, |n| n.0.config().blocks * n.0.config().latent_dim)
}

/// Number of environment values the network expects, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn pa_net_env_len(net: *const PaNet) -> usize {
    net.as_ref().map_or(0, |n| n.0.config().env_dim)
}

#[no_mangle]
pub unsafe extern "C" fn pa_net_free(net: *mut PaNet) {
    free_handle(net);
}

/// Edits `latent` towards the target illumination `env` and pose
/// (`yaw`, `pitch`, `roll` in radians). `p` and `q` are 0 or 1; `q` is ignored
/// by networks trained without it.
#[no_mangle]
pub unsafe extern "C" fn pa_net_apply(
    net: *const PaNet,
    latent: *const f32,
    latent_len: usize,
    env: *const f32,
    env_len: usize,
    yaw: f64,
    pitch: f64,
    roll: f64,
    p: u8,
    q: u8,
    out_latent: *mut f32,
    out_len: usize,
) -> PaStatus {
    guard(|| {
        let net = &handle_arg(net, "network")?.0;
        let cfg = net.config();
        let code = LatentCode::with_shape(
            cfg.blocks,
            cfg.latent_dim,
            slice_arg(latent, latent_len, "latent")?.to_vec(),
        )?;
        let env = LightWeights::new(slice_arg(env, env_len, "env")?.to_vec())?;
        let cond = ConditionVector::new(env, CameraPose::new(yaw, pitch, roll)?, p, cfg.use_q.then_some(q))?;
        copy_out(net.apply(&code, &cond)?.data(), out_latent, out_len)
    })
}
