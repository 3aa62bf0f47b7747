//! C interface to the compseg metrics, kernel activations and trained
//! checkpoints.
//!
//! Every function returns a [`CsStatus`]. On failure a message is kept per
//! thread and can be read with [`cs_last_error`] until the next failing call
//! on that thread. Arrays are row-major; label grids are `height * width`
//! bytes with 0 as background.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use candle_core::{Device, Tensor};
use compseg::data::{normalize_intensities, Domain, Image, Mask, Spacing};
use compseg::metrics::{assd, dsc, largest_component, Connectivity};
use compseg::nn::images_to_tensor;
use compseg::seg::probs_to_masks;
use compseg::train::{load_checkpoint, Model, TrainState};
use compseg::translation::DOWNSAMPLING_FACTOR;
use compseg::vmf::{activations, normalize_features, KernelBank};
use compseg::{Error, Grid};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Io = 4,
    Checkpoint = 5,
    /// The model has no kernel bank (a baseline checkpoint).
    NoKernels = 6,
    Internal = 7,
    Panic = 8,
}

/// Opaque handle to a loaded checkpoint.
pub struct CsModel {
    state: TrainState,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CsModelInfo {
    pub height: usize,
    pub width: usize,
    /// Foreground classes; label grids hold values `0..=num_classes`.
    pub num_classes: u8,
    /// Zero for baseline checkpoints.
    pub num_kernels: usize,
    pub feature_height: usize,
    pub feature_width: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(CsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } | Error::Decode { .. } => CsStatus::Io,
            Error::Checkpoint { .. } => CsStatus::Checkpoint,
            Error::Shape(_) => CsStatus::ShapeMismatch,
            Error::Tensor(_) | Error::NonFinite { .. } => CsStatus::Internal,
            Error::MissingMask { .. }
            | Error::InvalidArgument(_)
            | Error::Config(_)
            | Error::ZeroKernel(_)
            | Error::NotNormalized(_)
            | Error::EmptySplit(_)
            | Error::UnknownClass { .. } => CsStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<candle_core::Error> for Failure {
    fn from(e: candle_core::Error) -> Self {
        Error::from(e).into()
    }
}

type FfiResult<T = ()> = Result<T, Failure>;

fn fail<T>(status: CsStatus, msg: impl Into<String>) -> FfiResult<T> {
    Err(Failure(status, msg.into()))
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> FfiResult) -> CsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CsStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            CsStatus::Panic
        }
    }
}

fn area(height: usize, width: usize) -> FfiResult<usize> {
    match height.checked_mul(width) {
        Some(n) if n > 0 => Ok(n),
        _ => fail(CsStatus::InvalidArgument, format!("bad grid size {height}x{width}")),
    }
}

/// # Safety
/// `ptr` must be null or valid for `len` reads.
unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> FfiResult<&'a [T]> {
    if ptr.is_null() {
        return fail(CsStatus::NullPointer, format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// # Safety
/// `ptr` must be null or valid for `len` writes.
unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, what: &str) -> FfiResult<&'a mut [T]> {
    if ptr.is_null() {
        return fail(CsStatus::NullPointer, format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn write<T>(ptr: *mut T, value: T, what: &str) -> FfiResult {
    if ptr.is_null() {
        return fail(CsStatus::NullPointer, format!("{what} is null"));
    }
    ptr.write(value);
    Ok(())
}

unsafe fn mask(ptr: *const u8, height: usize, width: usize, num_classes: u8, what: &str) -> FfiResult<Mask> {
    let labels = slice(ptr, area(height, width)?, what)?;
    Ok(Mask::new(Grid::from_vec(height, width, labels.to_vec())?, num_classes)?)
}

fn connectivity(neighbours: u32) -> FfiResult<Connectivity> {
    match neighbours {
        4 => Ok(Connectivity::Four),
        8 => Ok(Connectivity::Eight),
        n => fail(CsStatus::InvalidArgument, format!("connectivity must be 4 or 8, got {n}")),
    }
}

/// Message of the last failed call on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Dice similarity (percent) of `class_id` between two label grids. Both
/// grids empty for the class gives 100.
///
/// # Safety
/// `pred` and `target` must point to `height * width` bytes; `out` to one
/// double.
#[no_mangle]
pub unsafe extern "C" fn cs_dsc(
    pred: *const u8,
    target: *const u8,
    height: usize,
    width: usize,
    num_classes: u8,
    class_id: u8,
    out: *mut f64,
) -> CsStatus {
    guard(|| {
        let p = mask(pred, height, width, num_classes, "pred")?;
        let t = mask(target, height, width, num_classes, "target")?;
        write(out, dsc(&p, &t, class_id)?, "out")
    })
}

/// Average symmetric surface distance in millimetres. `*defined` is false
/// (and `*out` NaN) when either grid lacks the class.
///
/// # Safety
/// As [`cs_dsc`]; `defined` must point to one bool.
#[no_mangle]
pub unsafe extern "C" fn cs_assd(
    pred: *const u8,
    target: *const u8,
    height: usize,
    width: usize,
    num_classes: u8,
    class_id: u8,
    spacing_row_mm: f64,
    spacing_col_mm: f64,
    neighbours: u32,
    out: *mut f64,
    defined: *mut bool,
) -> CsStatus {
    guard(|| {
        let p = mask(pred, height, width, num_classes, "pred")?;
        let t = mask(target, height, width, num_classes, "target")?;
        let sp = Spacing::new(spacing_row_mm, spacing_col_mm)?;
        let d = assd(&p, &t, class_id, sp, connectivity(neighbours)?)?;
        write(defined, d.is_some(), "defined")?;
        write(out, d.unwrap_or(f64::NAN), "out")
    })
}

/// Copies `pred` to `out`, keeping only the largest connected component of
/// `class_id` (earliest in raster order on ties).
///
/// # Safety
/// `pred` and `out` must each hold `height * width` bytes.
#[no_mangle]
pub unsafe extern "C" fn cs_largest_component(
    pred: *const u8,
    height: usize,
    width: usize,
    num_classes: u8,
    class_id: u8,
    neighbours: u32,
    out: *mut u8,
) -> CsStatus {
    guard(|| {
        let p = mask(pred, height, width, num_classes, "pred")?;
        if class_id == 0 || class_id > num_classes {
            return fail(CsStatus::InvalidArgument, format!("class {class_id} not in 1..={num_classes}"));
        }
        let kept = largest_component(&p, class_id, connectivity(neighbours)?);
        slice_mut(out, height * width, "out")?.copy_from_slice(kept.labels.as_slice());
        Ok(())
    })
}

/// Kernel activations of `num_positions` feature vectors. `kernels` is
/// `num_kernels x channels` and is rescaled to unit rows; features are
/// normalized per position. `out` receives `num_positions x num_kernels`
/// values, each row summing to 1 when `normalize` is set.
///
/// # Safety
/// Pointers must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn cs_vmf_activations(
    kernels: *const f64,
    num_kernels: usize,
    channels: usize,
    sigma: f64,
    features: *const f64,
    num_positions: usize,
    normalize: bool,
    out: *mut f64,
) -> CsStatus {
    guard(|| {
        let mu = slice(kernels, area(num_kernels, channels)?, "kernels")?;
        let z = slice(features, area(num_positions, channels)?, "features")?;
        let out = slice_mut(out, num_positions * num_kernels, "out")?;
        if !(sigma > 0.0 && sigma.is_finite()) {
            return fail(CsStatus::InvalidArgument, format!("sigma must be positive, got {sigma}"));
        }
        let dev = Device::Cpu;
        let bank = KernelBank::from_directions(&Tensor::from_slice(mu, (num_kernels, channels), &dev)?, sigma)?;
        // positions along the height axis of a (1, C, N, 1) map
        let z = Tensor::from_slice(z, (num_positions, channels), &dev)?.t()?.reshape((1, channels, num_positions, 1))?;
        let comp = activations(&bank, &normalize_features(&z)?.values, normalize)?;
        let a = comp.activations.reshape((num_kernels, num_positions))?.t()?.flatten_all()?.to_vec1::<f64>()?;
        out.copy_from_slice(&a);
        Ok(())
    })
}

/// Loads a checkpoint. Free the handle with [`cs_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must point to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn cs_model_load(path: *const c_char, out: *mut *mut CsModel) -> CsStatus {
    guard(|| {
        if path.is_null() {
            return fail(CsStatus::NullPointer, "path is null");
        }
        let path = match CStr::from_ptr(path).to_str() {
            Ok(p) => p,
            Err(_) => return fail(CsStatus::InvalidArgument, "path is not UTF-8"),
        };
        if out.is_null() {
            return fail(CsStatus::NullPointer, "out is null");
        }
        let state = load_checkpoint(Path::new(path))?.into_state()?;
        out.write(Box::into_raw(Box::new(CsModel { state })));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`cs_model_load`] and not be used afterwards.
/// Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn cs_model_free(model: *mut CsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

unsafe fn model_ref<'a>(model: *const CsModel) -> FfiResult<&'a CsModel> {
    model.as_ref().map_or_else(|| fail(CsStatus::NullPointer, "model is null"), Ok)
}

fn info(m: &CsModel) -> CsModelInfo {
    let (height, width) = m.state.image_size;
    let num_kernels = match &m.state.model {
        Model::Proposed(p) => p.bank.num_kernels(),
        Model::Baseline(_) => 0,
    };
    let (feature_height, feature_width) = if num_kernels > 0 {
        (height / DOWNSAMPLING_FACTOR, width / DOWNSAMPLING_FACTOR)
    } else {
        (0, 0)
    };
    CsModelInfo {
        height,
        width,
        num_classes: m.state.num_classes(),
        num_kernels,
        feature_height,
        feature_width,
    }
}

/// # Safety
/// `model` must be a live handle; `out` must point to a `CsModelInfo`.
#[no_mangle]
pub unsafe extern "C" fn cs_model_info(model: *const CsModel, out: *mut CsModelInfo) -> CsStatus {
    guard(|| write(out, info(model_ref(model)?), "out"))
}

/// Raw intensities are min-max scaled like images read from disk.
unsafe fn input(m: &CsModel, pixels: *const f32, height: usize, width: usize) -> FfiResult<Tensor> {
    if (height, width) != m.state.image_size {
        return fail(
            CsStatus::ShapeMismatch,
            format!("image is {height}x{width}, model expects {:?}", m.state.image_size),
        );
    }
    let raw: Vec<f64> = slice(pixels, area(height, width)?, "pixels")?.iter().map(|&v| v as f64).collect();
    let image = Image {
        id: "ffi".into(),
        domain: Domain::Target,
        spacing: Spacing::isotropic(),
        pixels: Grid::from_vec(height, width, normalize_intensities(&raw))?,
    };
    Ok(images_to_tensor(&[&image], m.state.cfg.dtype())?)
}

/// Segments one target-domain image into `height * width` labels.
///
/// # Safety
/// `pixels` must hold `height * width` floats and `out_labels` as many bytes.
#[no_mangle]
pub unsafe extern "C" fn cs_model_segment(
    model: *const CsModel,
    pixels: *const f32,
    height: usize,
    width: usize,
    out_labels: *mut u8,
) -> CsStatus {
    guard(|| {
        let m = model_ref(model)?;
        let y = input(m, pixels, height, width)?;
        let masks = probs_to_masks(&m.state.model.predict(&y)?, m.state.num_classes())?;
        slice_mut(out_labels, height * width, "out_labels")?.copy_from_slice(masks[0].labels.as_slice());
        Ok(())
    })
}

/// Kernel activations of one image, `num_kernels x feature_height x
/// feature_width` (see [`CsModelInfo`]); `out_len` must equal that product.
///
/// # Safety
/// `pixels` must hold `height * width` floats and `out` `out_len` floats.
#[no_mangle]
pub unsafe extern "C" fn cs_model_composition(
    model: *const CsModel,
    pixels: *const f32,
    height: usize,
    width: usize,
    normalize: bool,
    out: *mut f32,
    out_len: usize,
) -> CsStatus {
    guard(|| {
        let m = model_ref(model)?;
        let i = info(m);
        if i.num_kernels == 0 {
            return fail(CsStatus::NoKernels, "baseline checkpoints have no kernel activations");
        }
        let want = i.num_kernels * i.feature_height * i.feature_width;
        if out_len != want {
            return fail(CsStatus::ShapeMismatch, format!("out_len is {out_len}, need {want}"));
        }
        let y = input(m, pixels, height, width)?;
        let comp = m
            .state
            .model
            .composition(&y, normalize)?
            .expect("proposed model has a kernel bank");
        let values = comp.activations.to_dtype(candle_core::DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        slice_mut(out, out_len, "out")?.copy_from_slice(&values);
        Ok(())
    })
}
