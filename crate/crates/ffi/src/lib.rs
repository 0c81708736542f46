//! C ABI over `plain_mamba`.
//!
//! Every fallible function returns a [`PmStatus`]; on failure the message is
//! available from [`pm_last_error`] on the same thread. Objects are opaque
//! handles created by `*_new`/`*_init`/`*_load` and released by `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use plain_mamba::analysis::{count_flops, count_flops_attention, count_params, AttentionBaselineConfig, FlopsReport};
use plain_mamba::io::{load_weights, save_weights, Dtype};
use plain_mamba::model::{init_params, model_forward, ModelConfig, Preset, Weights};
use plain_mamba::scan_geometry::{generate_continuous_paths, generate_raster_paths, PathSet};
use plain_mamba::{Error, NdArray};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Shape = 4,
    Numerical = 5,
    Parse = 6,
    Format = 7,
    Manifest = 8,
    Io = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

impl From<&Error> for PmStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Config(_) => PmStatus::Config,
            Error::Shape { .. } => PmStatus::Shape,
            Error::Domain(_) | Error::NonFinite { .. } | Error::Diverged { .. } => PmStatus::Numerical,
            Error::Parse { .. } => PmStatus::Parse,
            Error::Format(_) => PmStatus::Format,
            Error::Manifest(_) => PmStatus::Manifest,
            Error::Io { .. } => PmStatus::Io,
            Error::Block { source, .. } => PmStatus::from(source.as_ref()),
        }
    }
}

/// MAC counts of one forward pass.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PmFlops {
    pub token_mixing: u64,
    pub channel_mixing: u64,
    pub other: u64,
    pub total: u64,
    pub peak_bytes: u64,
}

impl From<&FlopsReport> for PmFlops {
    fn from(r: &FlopsReport) -> Self {
        Self {
            token_mixing: r.token_mixing(),
            channel_mixing: r.channel_mixing(),
            other: r.other(),
            total: r.total(),
            peak_bytes: r.peak_bytes,
        }
    }
}

/// Opaque model handle: a preset configuration plus its weights.
pub struct PmModel {
    config: ModelConfig,
    weights: Weights,
}

/// Opaque handle to four scan paths over a grid.
pub struct PmPathSet {
    paths: PathSet,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(PmStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(PmStatus::from(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            PmStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            PmStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(PmStatus::NullPointer, format!("{what} is null"))
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(PmStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn read_preset(p: *const c_char) -> Result<Preset, Failure> {
    Ok(read_str(p, "preset")?.parse::<Preset>()?)
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call into this library.
#[no_mangle]
pub extern "C" fn pm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Total learnable parameters of a preset (`"L1"`, `"L2"`, `"L3"`, `"toy"`).
///
/// # Safety
/// `preset` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pm_count_params(preset: *const c_char, out: *mut u64) -> PmStatus {
    guard(|| {
        let preset = read_preset(preset)?;
        *out_ref(out, "out")? = count_params(&preset.config()).total as u64;
        Ok(())
    })
}

/// MAC counts of a preset at `height × width` pixels.
///
/// # Safety
/// `preset` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pm_count_flops(preset: *const c_char, height: usize, width: usize, out: *mut PmFlops) -> PmStatus {
    guard(|| {
        let preset = read_preset(preset)?;
        let rep = count_flops(&preset.config(), height, width)?;
        *out_ref(out, "out")? = PmFlops::from(&rep);
        Ok(())
    })
}

/// MAC counts of the DeiT-C224 attention baseline.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pm_count_flops_attention(height: usize, width: usize, out: *mut PmFlops) -> PmStatus {
    guard(|| {
        let rep = count_flops_attention(&AttentionBaselineConfig::deit_c224(), height, width)?;
        *out_ref(out, "out")? = PmFlops::from(&rep);
        Ok(())
    })
}

/// Freshly initialized model for a preset.
///
/// # Safety
/// `preset` must be a NUL-terminated string; `out` must be writable. The
/// handle written to `*out` must be released with [`pm_model_free`].
#[no_mangle]
pub unsafe extern "C" fn pm_model_init(preset: *const c_char, seed: u64, out: *mut *mut PmModel) -> PmStatus {
    guard(|| {
        let slot = out_ref(out, "out")?;
        *slot = ptr::null_mut();
        let config = read_preset(preset)?.config();
        let weights = init_params(&config, seed)?;
        *slot = Box::into_raw(Box::new(PmModel { config, weights }));
        Ok(())
    })
}

/// Loads a `PMWB` weight file, checking it against the preset.
///
/// # Safety
/// `preset` and `path` must be NUL-terminated strings; `out` must be
/// writable. Release the handle with [`pm_model_free`].
#[no_mangle]
pub unsafe extern "C" fn pm_model_load(preset: *const c_char, path: *const c_char, out: *mut *mut PmModel) -> PmStatus {
    guard(|| {
        let slot = out_ref(out, "out")?;
        *slot = ptr::null_mut();
        let config = read_preset(preset)?.config();
        let weights = load_weights(read_str(path, "path")?, &config)?;
        *slot = Box::into_raw(Box::new(PmModel { config, weights }));
        Ok(())
    })
}

/// Writes the model's weights; `single_precision` selects `f32` storage.
///
/// # Safety
/// `model` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pm_model_save(model: *const PmModel, path: *const c_char, single_precision: bool) -> PmStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let dtype = if single_precision { Dtype::F32 } else { Dtype::F64 };
        save_weights(&model.weights, read_str(path, "path")?, dtype)?;
        Ok(())
    })
}

/// Number of logits [`pm_model_forward`] writes; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pm_model_num_classes(model: *const PmModel) -> usize {
    model.as_ref().map_or(0, |m| m.config.num_classes)
}

/// Classifies an `height × width × 3` row-major image with values in `[0, 1]`.
///
/// # Safety
/// `model` must be a live handle, `pixels` must point to
/// `height * width * 3` doubles and `logits` to `logits_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn pm_model_forward(
    model: *const PmModel,
    pixels: *const f64,
    height: usize,
    width: usize,
    logits: *mut f64,
    logits_len: usize,
) -> PmStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if pixels.is_null() {
            return Err(null("pixels"));
        }
        if logits.is_null() {
            return Err(null("logits"));
        }
        let classes = model.config.num_classes;
        if logits_len < classes {
            return Err(Failure(
                PmStatus::BufferTooSmall,
                format!("logits buffer holds {logits_len}, need {classes}"),
            ));
        }
        let n = height
            .checked_mul(width)
            .and_then(|v| v.checked_mul(3))
            .ok_or_else(|| Failure(PmStatus::InvalidArgument, "image size overflows".into()))?;
        let image = NdArray::new(&[height, width, 3], std::slice::from_raw_parts(pixels, n).to_vec())?;
        let out = model_forward(&image, &model.weights, &model.config)?;
        std::slice::from_raw_parts_mut(logits, classes).copy_from_slice(out.data());
        Ok(())
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pm_model_free(model: *mut PmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// The four scan paths over an `height × width` grid; `raster` selects the
/// non-continuous baseline.
///
/// # Safety
/// `out` must be writable. Release the handle with [`pm_paths_free`].
#[no_mangle]
pub unsafe extern "C" fn pm_paths_new(height: usize, width: usize, raster: bool, out: *mut *mut PmPathSet) -> PmStatus {
    guard(|| {
        let slot = out_ref(out, "out")?;
        *slot = ptr::null_mut();
        let paths = if raster {
            generate_raster_paths(height, width)?
        } else {
            generate_continuous_paths(height, width)?
        };
        *slot = Box::into_raw(Box::new(PmPathSet { paths }));
        Ok(())
    })
}

/// Cells per path (`height * width`); 0 for a null handle.
///
/// # Safety
/// `paths` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pm_paths_len(paths: *const PmPathSet) -> usize {
    paths.as_ref().map_or(0, |p| p.paths.cells())
}

unsafe fn path_slot<'a, T>(
    paths: *const PmPathSet,
    path: usize,
    out: *mut T,
    len: usize,
) -> Result<(&'a plain_mamba::ScanPath, &'a mut [T]), Failure> {
    let set = paths.as_ref().ok_or_else(|| null("paths"))?;
    if path >= 4 {
        return Err(Failure(PmStatus::InvalidArgument, format!("path index {path} (expected 0..4)")));
    }
    if out.is_null() {
        return Err(null("out"));
    }
    let n = set.paths.cells();
    if len < n {
        return Err(Failure(PmStatus::BufferTooSmall, format!("buffer holds {len}, need {n}")));
    }
    Ok((set.paths.path(path), std::slice::from_raw_parts_mut(out, n)))
}

/// Row-major cell index visited at each step of path `path` (0..4).
///
/// # Safety
/// `paths` must be a live handle and `out` must hold `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn pm_paths_order(paths: *const PmPathSet, path: usize, out: *mut usize, len: usize) -> PmStatus {
    guard(|| {
        let (p, dst) = path_slot(paths, path, out, len)?;
        dst.copy_from_slice(p.order());
        Ok(())
    })
}

/// Direction label of each step: 0 right, 1 left, 2 down, 3 up, 4 begin.
///
/// # Safety
/// `paths` must be a live handle and `out` must hold `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn pm_paths_directions(paths: *const PmPathSet, path: usize, out: *mut u8, len: usize) -> PmStatus {
    guard(|| {
        let (p, dst) = path_slot(paths, path, out, len)?;
        for (d, dir) in dst.iter_mut().zip(p.directions()) {
            *d = dir.index() as u8;
        }
        Ok(())
    })
}

/// Releases a path-set handle. Null is ignored.
///
/// # Safety
/// `paths` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pm_paths_free(paths: *mut PmPathSet) {
    if !paths.is_null() {
        drop(Box::from_raw(paths));
    }
}
