//! C interface to winconv.
//!
//! Every fallible call returns a `WcStatus`; results come back through out
//! pointers. On failure `wc_last_error` holds a message for the calling
//! thread. Handles are opaque and owned by the caller, who frees them with
//! the matching `*_free` function. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use winconv::attacks::{deepfool, DeepFoolConfig};
use winconv::nn::{load_checkpoint, model_init, save_checkpoint, Model, ModelSpec, TrainState};
use winconv::ortho::{build_dbt, ortho_deviation};
use winconv::spectral::{dft2_mag, kernel_frequency_response, leakage_metrics, Spectrum2D};
use winconv::window::{hamming_1d, make_window, WindowFamily, WindowSpec};
use winconv::{Error, Rng, Tensor};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WcStatus {
    Ok = 0,
    NullPointer = 1,
    Shape = 2,
    Size = 3,
    Axis = 4,
    Range = 5,
    Undefined = 6,
    Format = 7,
    Io = 8,
    Config = 9,
    Data = 10,
    Numeric = 11,
    InvalidArgument = 12,
    BufferTooSmall = 13,
    Panic = 14,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WcWindowFamily {
    Rectangular = 0,
    Hamming = 1,
}

/// Opaque n-dimensional array of doubles.
pub struct WcTensor(Tensor);

/// Opaque network with its weights.
pub struct WcModel(Model);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct WcLeakage {
    pub peak_mainlobe: f64,
    pub peak_sidelobe: f64,
    /// `-INFINITY` when there is no sidelobe.
    pub sidelobe_db: f64,
    pub out_of_band_energy_fraction: f64,
    pub mainlobe_bins: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct WcDeepFoolResult {
    pub success: bool,
    pub iterations: usize,
    pub perturbation_norm: f64,
    pub clean_prediction: usize,
    pub final_prediction: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: &str) {
    LAST_ERROR.with(|e| {
        let mut e = e.borrow_mut();
        e.clear();
        e.extend_from_slice(msg.as_bytes());
    });
}

fn status_of(e: &Error) -> WcStatus {
    match e {
        Error::Shape(_) => WcStatus::Shape,
        Error::Size(_) => WcStatus::Size,
        Error::Axis(_) => WcStatus::Axis,
        Error::Range(_) => WcStatus::Range,
        Error::Undefined(_) => WcStatus::Undefined,
        Error::Format { .. } => WcStatus::Format,
        Error::Io { .. } => WcStatus::Io,
        Error::Config(_) => WcStatus::Config,
        Error::Data(_) => WcStatus::Data,
        Error::Numeric(_) => WcStatus::Numeric,
    }
}

enum Fail {
    Lib(Error),
    Null(&'static str),
    Arg(String),
    Small(usize),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> WcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => WcStatus::Ok,
        Ok(Err(Fail::Lib(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(&format!("{what} is NULL"));
            WcStatus::NullPointer
        }
        Ok(Err(Fail::Arg(msg))) => {
            set_error(&msg);
            WcStatus::InvalidArgument
        }
        Ok(Err(Fail::Small(need))) => {
            set_error(&format!("buffer too small, {need} elements needed"));
            WcStatus::BufferTooSmall
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("internal panic: {msg}"));
            WcStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out<T>(p: *mut T, v: T, what: &'static str) -> Result<(), Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    p.write(v);
    Ok(())
}

unsafe fn copy_out(src: &[f64], dst: *mut f64, cap: usize) -> Result<(), Fail> {
    if cap < src.len() {
        return Err(Fail::Small(src.len()));
    }
    if !src.is_empty() {
        if dst.is_null() {
            return Err(Fail::Null("output buffer"));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    }
    Ok(())
}

unsafe fn path(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| Fail::Arg("path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

/// Boxes `v` into a caller-owned handle; nothing is allocated when `p` is NULL.
unsafe fn put<T>(p: *mut *mut T, v: T, what: &'static str) -> Result<(), Fail> {
    out(p, ptr::null_mut(), what)?;
    p.write(Box::into_raw(Box::new(v)));
    Ok(())
}

/// Copies the calling thread's last error message (NUL terminated,
/// truncated to `cap`) into `buf` and returns the full message length.
///
/// # Safety
/// `buf` must be NULL or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn wc_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = e.len().min(cap - 1);
            ptr::copy_nonoverlapping(e.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        e.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn wc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// New tensor of the given shape, copying `len` row-major values.
///
/// # Safety
/// `shape` must point to `ndim` values and `data` to `len` values.
#[no_mangle]
pub unsafe extern "C" fn wc_tensor_new(
    shape: *const usize,
    ndim: usize,
    data: *const f64,
    len: usize,
    out_tensor: *mut *mut WcTensor,
) -> WcStatus {
    guard(|| {
        let shape = slice(shape, ndim, "shape")?;
        let data = slice(data, len, "data")?;
        let t = Tensor::from_vec(shape, data.to_vec())?;
        put(out_tensor, WcTensor(t), "out_tensor")
    })
}

/// # Safety
/// `t` must be NULL or a handle from this library that was not freed yet.
#[no_mangle]
pub unsafe extern "C" fn wc_tensor_free(t: *mut WcTensor) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// # Safety
/// `t` must be a live tensor handle.
#[no_mangle]
pub unsafe extern "C" fn wc_tensor_ndim(t: *const WcTensor) -> usize {
    t.as_ref().map_or(0, |t| t.0.ndim())
}

/// # Safety
/// `t` must be a live tensor handle.
#[no_mangle]
pub unsafe extern "C" fn wc_tensor_len(t: *const WcTensor) -> usize {
    t.as_ref().map_or(0, |t| t.0.len())
}

/// # Safety
/// `t` must be a live tensor handle and `shape` hold `cap` values.
#[no_mangle]
pub unsafe extern "C" fn wc_tensor_shape(t: *const WcTensor, shape: *mut usize, cap: usize) -> WcStatus {
    guard(|| {
        let s = borrow(t, "tensor")?.0.shape();
        if cap < s.len() {
            return Err(Fail::Small(s.len()));
        }
        if !s.is_empty() {
            if shape.is_null() {
                return Err(Fail::Null("shape"));
            }
            ptr::copy_nonoverlapping(s.as_ptr(), shape, s.len());
        }
        Ok(())
    })
}

/// # Safety
/// `t` must be a live tensor handle and `data` hold `cap` values.
#[no_mangle]
pub unsafe extern "C" fn wc_tensor_data(t: *const WcTensor, data: *mut f64, cap: usize) -> WcStatus {
    guard(|| copy_out(borrow(t, "tensor")?.0.data(), data, cap))
}

/// The `k` Hamming coefficients.
///
/// # Safety
/// `out_coeffs` must hold `cap` values.
#[no_mangle]
pub unsafe extern "C" fn wc_hamming_1d(k: usize, out_coeffs: *mut f64, cap: usize) -> WcStatus {
    guard(|| copy_out(&hamming_1d(k)?, out_coeffs, cap))
}

/// `[k_rows, k_cols]` window coefficients.
///
/// # Safety
/// `out_tensor` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wc_window_2d(
    family: WcWindowFamily,
    k_rows: usize,
    k_cols: usize,
    out_tensor: *mut *mut WcTensor,
) -> WcStatus {
    guard(|| {
        let family = match family {
            WcWindowFamily::Rectangular => WindowFamily::Rectangular,
            WcWindowFamily::Hamming => WindowFamily::Hamming,
        };
        let w = make_window(WindowSpec { family, k_rows, k_cols })?;
        put(out_tensor, WcTensor(w.coeffs().clone()), "out_tensor")
    })
}

/// Unnormalized 2-D DFT magnitude of a square `[P, P]` tensor.
///
/// # Safety
/// `x` must be a live tensor handle and `out_tensor` writable.
#[no_mangle]
pub unsafe extern "C" fn wc_dft2_mag(x: *const WcTensor, out_tensor: *mut *mut WcTensor) -> WcStatus {
    guard(|| {
        let s = dft2_mag(&borrow(x, "x")?.0)?;
        put(out_tensor, WcTensor(s.magnitude().clone()), "out_tensor")
    })
}

/// Magnitude response of a `[k, k]` kernel on a `p x p` grid.
///
/// # Safety
/// `kernel` must be a live tensor handle and `out_tensor` writable.
#[no_mangle]
pub unsafe extern "C" fn wc_kernel_frequency_response(
    kernel: *const WcTensor,
    p: usize,
    out_tensor: *mut *mut WcTensor,
) -> WcStatus {
    guard(|| {
        let s = kernel_frequency_response(&borrow(kernel, "kernel")?.0, p)?;
        put(out_tensor, WcTensor(s.magnitude().clone()), "out_tensor")
    })
}

/// Main lobe and sidelobe figures of a `[P, P]` magnitude spectrum.
///
/// # Safety
/// `spectrum` must be a live tensor handle and `out_report` writable.
#[no_mangle]
pub unsafe extern "C" fn wc_leakage_metrics(
    spectrum: *const WcTensor,
    threshold_db: f64,
    out_report: *mut WcLeakage,
) -> WcStatus {
    guard(|| {
        let s = Spectrum2D::from_magnitude(borrow(spectrum, "spectrum")?.0.clone())?;
        let r = leakage_metrics(&s, threshold_db)?;
        let v = WcLeakage {
            peak_mainlobe: r.peak_mainlobe,
            peak_sidelobe: r.peak_sidelobe,
            sidelobe_db: r.sidelobe_db,
            out_of_band_energy_fraction: r.out_of_band_energy_fraction,
            mainlobe_bins: r.mainlobe_bins,
        };
        out(out_report, v, "out_report")
    })
}

/// Freshly initialized model from a JSON model spec.
///
/// # Safety
/// `spec_json` must be a NUL-terminated string and `out_model` writable.
#[no_mangle]
pub unsafe extern "C" fn wc_model_from_spec_json(
    spec_json: *const c_char,
    seed: u64,
    out_model: *mut *mut WcModel,
) -> WcStatus {
    guard(|| {
        if spec_json.is_null() {
            return Err(Fail::Null("spec_json"));
        }
        let text = CStr::from_ptr(spec_json).to_str().map_err(|_| Fail::Arg("spec is not UTF-8".into()))?;
        let spec: ModelSpec = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let m = model_init(&spec, &mut Rng::new(seed))?;
        put(out_model, WcModel(m), "out_model")
    })
}

/// # Safety
/// `dir` must be a NUL-terminated path and `out_model` writable.
#[no_mangle]
pub unsafe extern "C" fn wc_model_load(dir: *const c_char, out_model: *mut *mut WcModel) -> WcStatus {
    guard(|| {
        let (m, _) = load_checkpoint(&path(dir)?)?;
        put(out_model, WcModel(m), "out_model")
    })
}

/// # Safety
/// `model` must be a live handle and `dir` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn wc_model_save(model: *const WcModel, dir: *const c_char) -> WcStatus {
    guard(|| {
        save_checkpoint(&borrow(model, "model")?.0, TrainState::default(), &path(dir)?)?;
        Ok(())
    })
}

/// # Safety
/// `m` must be NULL or a handle from this library that was not freed yet.
#[no_mangle]
pub unsafe extern "C" fn wc_model_free(m: *mut WcModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn wc_model_num_outputs(model: *const WcModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.spec().num_outputs)
}

/// Number of conv layers.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn wc_model_num_convs(model: *const WcModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.convs().len())
}

/// Writes `[C, H, W]` into `shape`.
///
/// # Safety
/// `model` must be a live handle and `shape` hold 3 values.
#[no_mangle]
pub unsafe extern "C" fn wc_model_input_shape(model: *const WcModel, shape: *mut usize) -> WcStatus {
    guard(|| {
        let s = borrow(model, "model")?.0.spec().input_shape;
        if shape.is_null() {
            return Err(Fail::Null("shape"));
        }
        ptr::copy_nonoverlapping(s.as_ptr(), shape, 3);
        Ok(())
    })
}

/// Outputs `[B, n]` for a `[B, C, H, W]` batch.
///
/// # Safety
/// Handles must be live and `out_tensor` writable.
#[no_mangle]
pub unsafe extern "C" fn wc_model_predict(
    model: *const WcModel,
    batch: *const WcTensor,
    out_tensor: *mut *mut WcTensor,
) -> WcStatus {
    guard(|| {
        let y = borrow(model, "model")?.0.predict(&borrow(batch, "batch")?.0)?;
        put(out_tensor, WcTensor(y), "out_tensor")
    })
}

/// Effective (windowed) kernel `[k, k, C, M]` of conv layer `layer`.
///
/// # Safety
/// `model` must be a live handle and `out_tensor` writable.
#[no_mangle]
pub unsafe extern "C" fn wc_model_effective_kernel(
    model: *const WcModel,
    layer: usize,
    out_tensor: *mut *mut WcTensor,
) -> WcStatus {
    guard(|| {
        let m = &borrow(model, "model")?.0;
        let conv = m
            .convs()
            .get(layer)
            .ok_or_else(|| Fail::Arg(format!("layer {layer} out of range, model has {}", m.convs().len())))?;
        put(out_tensor, WcTensor(conv.effective_kernel()), "out_tensor")
    })
}

/// Orthogonality deviation of conv layer `layer` at the model's input shape.
///
/// # Safety
/// `model` must be a live handle and `out_d` writable.
#[no_mangle]
pub unsafe extern "C" fn wc_model_ortho_deviation(model: *const WcModel, layer: usize, out_d: *mut f64) -> WcStatus {
    guard(|| {
        let m = &borrow(model, "model")?.0;
        let shapes = m.spec().activation_shapes()?;
        let conv = m
            .convs()
            .get(layer)
            .ok_or_else(|| Fail::Arg(format!("layer {layer} out of range, model has {}", m.convs().len())))?;
        let d = ortho_deviation(&build_dbt(conv, shapes[layer])?)?;
        out(out_d, d, "out_d")
    })
}

/// DeepFool on one `[C, H, W]` image of a classifier. When `out_image` is
/// not NULL it receives the perturbed image, or NULL if there is none.
///
/// # Safety
/// Handles must be live, `out_result` writable, `out_image` NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn wc_deepfool(
    model: *const WcModel,
    image: *const WcTensor,
    label: usize,
    max_iter: usize,
    overshoot: f64,
    out_result: *mut WcDeepFoolResult,
    out_image: *mut *mut WcTensor,
) -> WcStatus {
    guard(|| {
        let m = &borrow(model, "model")?.0;
        if label >= m.spec().num_outputs {
            return Err(Fail::Arg(format!("label {label} >= {} classes", m.spec().num_outputs)));
        }
        let cfg = DeepFoolConfig { max_iter, overshoot };
        if max_iter == 0 || !(overshoot >= 0.0) {
            return Err(Fail::Arg("max_iter must be >= 1 and overshoot >= 0".into()));
        }
        let o = deepfool(m, &borrow(image, "image")?.0, label, &cfg)?;
        let r = WcDeepFoolResult {
            success: o.success,
            iterations: o.iterations,
            perturbation_norm: o.perturbation_norm,
            clean_prediction: o.clean_prediction,
            final_prediction: o.final_prediction,
        };
        out(out_result, r, "out_result")?;
        if !out_image.is_null() {
            out_image.write(ptr::null_mut());
            if let Some(img) = o.perturbed {
                put(out_image, WcTensor(img), "out_image")?;
            }
        }
        Ok(())
    })
}
