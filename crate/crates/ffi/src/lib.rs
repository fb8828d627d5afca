//! C ABI over the `promogen` library.
//!
//! Every fallible function returns a [`PmgStatus`]. On failure a description is
//! stored per thread and can be read with [`pmg_last_error_message`]. Models are
//! opaque [`PmgModel`] handles created by [`pmg_model_load`] and released with
//! [`pmg_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use ndarray::Array2;
use promogen::curriculum::k_min_for_stage;
use promogen::filter::{count_valid, sample_anchors, FilterParams};
use promogen::motion::{AnchorSet, Trajectory};
use promogen::pipeline::{load_checkpoint, ModelGenerator};
use promogen::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PmgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Infeasible = 3,
    Io = 4,
    Format = 5,
    Version = 6,
    Checksum = 7,
    BufferTooSmall = 8,
    Overflow = 9,
    NonFinite = 10,
    Panic = 11,
}

/// A loaded checkpoint ready for sampling.
pub struct PmgModel {
    generator: ModelGenerator,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(err: &Error) -> PmgStatus {
    match err {
        Error::Infeasible { .. } => PmgStatus::Infeasible,
        Error::Io(_) => PmgStatus::Io,
        Error::Format(_) | Error::Json(_) => PmgStatus::Format,
        Error::Version { .. } => PmgStatus::Version,
        Error::Checksum(_) => PmgStatus::Checksum,
        Error::NonFinite => PmgStatus::NonFinite,
        _ => PmgStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (PmgStatus, String)>) -> PmgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            PmgStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PmgStatus::Panic
        }
    }
}

fn lib(err: Error) -> (PmgStatus, String) {
    (status_of(&err), err.to_string())
}

fn null(name: &str) -> (PmgStatus, String) {
    (PmgStatus::NullPointer, format!("`{name}` is null"))
}

/// Message for the most recent failure on this thread; empty after a success.
/// The pointer stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn pmg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a NUL-terminated string with static lifetime.
#[no_mangle]
pub extern "C" fn pmg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Number of valid anchor placements for `(n, f_n, f_s)`.
/// Returns `Overflow` when the count does not fit in 64 bits.
///
/// # Safety
/// `out` must be null or point to writable memory for one `uint64_t`.
#[no_mangle]
pub unsafe extern "C" fn pmg_fm_count_valid(n: usize, f_n: usize, f_s: usize, out: *mut u64) -> PmgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let params = FilterParams::new(n, f_n, f_s).map_err(lib)?;
        let count = u64::try_from(count_valid(&params))
            .map_err(|_| (PmgStatus::Overflow, "count exceeds 64 bits".to_string()))?;
        // SAFETY: checked non-null; caller guarantees validity.
        unsafe { *out = count };
        Ok(())
    })
}

/// Draws `f_n` sorted anchor positions in `[0, n)` with consecutive gaps of at least `f_s + 1`.
///
/// # Safety
/// `out` must be null or point to `out_len` writable `size_t` values.
#[no_mangle]
pub unsafe extern "C" fn pmg_fm_sample(
    n: usize,
    f_n: usize,
    f_s: usize,
    seed: u64,
    out: *mut usize,
    out_len: usize,
) -> PmgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if out_len < f_n {
            return Err((PmgStatus::BufferTooSmall, format!("need {f_n} slots, got {out_len}")));
        }
        let params = FilterParams::new(n, f_n, f_s).map_err(lib)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let anchors = sample_anchors(&params, &mut rng).map_err(lib)?;
        // SAFETY: checked non-null and length above.
        let dst = unsafe { std::slice::from_raw_parts_mut(out, f_n) };
        dst.copy_from_slice(&anchors);
        Ok(())
    })
}

/// Minimum anchor count for curriculum `stage` (1-based) out of `e_stage` stages.
///
/// # Safety
/// `out` must be null or point to one writable `size_t`.
#[no_mangle]
pub unsafe extern "C" fn pmg_k_min_for_stage(stage: usize, e_stage: usize, out: *mut usize) -> PmgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let k = k_min_for_stage(stage, e_stage).map_err(lib)?;
        // SAFETY: checked non-null.
        unsafe { *out = k };
        Ok(())
    })
}

/// Loads a checkpoint file. On success `*out` receives a handle owned by the caller.
///
/// # Safety
/// `path` must be null or a NUL-terminated string; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn pmg_model_load(path: *const c_char, out: *mut *mut PmgModel) -> PmgStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        // SAFETY: caller guarantees a NUL-terminated string.
        let path = unsafe { CStr::from_ptr(path) }
            .to_str()
            .map_err(|_| (PmgStatus::InvalidArgument, "path is not valid UTF-8".to_string()))?;
        let ckpt = load_checkpoint(Path::new(path)).map_err(lib)?;
        let generator = ModelGenerator::new(&ckpt, ckpt.config.diffusion.sampler()).map_err(lib)?;
        // SAFETY: checked non-null.
        unsafe { *out = Box::into_raw(Box::new(PmgModel { generator })) };
        Ok(())
    })
}

/// Releases a handle from [`pmg_model_load`]. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pmg_model_free(model: *mut PmgModel) {
    if !model.is_null() {
        // SAFETY: handle came from Box::into_raw in pmg_model_load.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Per-frame feature width `D` of the model's motions (0 for a null handle).
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pmg_model_feature_dim(model: *const PmgModel) -> usize {
    // SAFETY: caller guarantees a live handle or null.
    unsafe { model.as_ref() }.map_or(0, |m| m.generator.denoiser.config.feature_dim)
}

/// Anchor pose width of the model (0 for a null handle).
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pmg_model_anchor_dim(model: *const PmgModel) -> usize {
    // SAFETY: caller guarantees a live handle or null.
    unsafe { model.as_ref() }.map_or(0, |m| m.generator.denoiser.config.anchor_dim)
}

/// Samples one motion of `frames` frames into `out` (row-major, `frames * D` doubles).
///
/// `trajectory` is null or `frames * 3` row-major pelvis positions.
/// `anchor_positions` and `anchor_poses` are null when `anchor_count` is 0;
/// otherwise they hold strictly increasing frame indices and `anchor_count * A`
/// row-major poses, where `A` is [`pmg_model_anchor_dim`].
/// `steps == 0` keeps the checkpoint's sampler step count.
///
/// # Safety
/// All non-null pointers must reference at least the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn pmg_model_sample(
    model: *const PmgModel,
    frames: usize,
    trajectory: *const f64,
    anchor_positions: *const usize,
    anchor_poses: *const f64,
    anchor_count: usize,
    steps: usize,
    seed: u64,
    out: *mut f64,
    out_len: usize,
) -> PmgStatus {
    guard(|| {
        // SAFETY: caller guarantees a live handle or null.
        let model = unsafe { model.as_ref() }.ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        if frames == 0 {
            return Err((PmgStatus::InvalidArgument, "frames must be positive".into()));
        }
        let d = model.generator.denoiser.config.feature_dim;
        let need = frames * d;
        if out_len < need {
            return Err((PmgStatus::BufferTooSmall, format!("need {need} doubles, got {out_len}")));
        }
        let trajectory = if trajectory.is_null() {
            None
        } else {
            // SAFETY: caller guarantees frames * 3 values.
            let v = unsafe { std::slice::from_raw_parts(trajectory, frames * 3) }.to_vec();
            let m = Array2::from_shape_vec((frames, 3), v).map_err(|e| (PmgStatus::InvalidArgument, e.to_string()))?;
            Some(Trajectory::new(m).map_err(lib)?)
        };
        let anchors = if anchor_count == 0 {
            None
        } else {
            if anchor_positions.is_null() {
                return Err(null("anchor_positions"));
            }
            if anchor_poses.is_null() {
                return Err(null("anchor_poses"));
            }
            let a = model.generator.denoiser.config.anchor_dim;
            // SAFETY: caller guarantees anchor_count positions and anchor_count * A poses.
            let pos = unsafe { std::slice::from_raw_parts(anchor_positions, anchor_count) }.to_vec();
            let poses = unsafe { std::slice::from_raw_parts(anchor_poses, anchor_count * a) }.to_vec();
            let poses = Array2::from_shape_vec((anchor_count, a), poses)
                .map_err(|e| (PmgStatus::InvalidArgument, e.to_string()))?;
            Some(AnchorSet::new(pos, poses).map_err(lib)?)
        };
        let custom;
        let generator = if steps > 0 && steps != model.generator.sampler.steps {
            let mut g = model.generator.clone();
            g.sampler.steps = steps;
            custom = g;
            &custom
        } else {
            &model.generator
        };
        let motion = generator
            .sample(trajectory.as_ref(), anchors.as_ref(), Some(frames), seed)
            .map_err(lib)?;
        // SAFETY: checked non-null and length above.
        let dst = unsafe { std::slice::from_raw_parts_mut(out, need) };
        for (d, s) in dst.iter_mut().zip(motion.features.iter()) {
            *d = *s;
        }
        Ok(())
    })
}
