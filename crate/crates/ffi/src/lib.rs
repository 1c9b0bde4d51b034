//! C ABI over compressed model containers.
//!
//! Every function returns a [`WpStatus`]; on failure the message is available from
//! [`wp_last_error_message`] on the same thread until the next call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use weightpress::container::{compute_stats, reconstruct_dense, CompressedModel};
use weightpress::engine::CompressedRunner;
use weightpress::model::Matrix;
use weightpress::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    /// Malformed, corrupt or inconsistent container data.
    Format = 4,
    Shape = 5,
    BufferTooSmall = 6,
    Internal = 7,
}

/// Loaded container plus its decoded execution form. Opaque to C.
pub struct WpModel {
    model: CompressedModel,
    runner: CompressedRunner,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> WpStatus {
    match e {
        Error::Io(_) => WpStatus::Io,
        Error::Format(_) | Error::Corruption(_) | Error::Consistency(_) | Error::Coding(_) => WpStatus::Format,
        Error::Shape(_) => WpStatus::Shape,
        Error::Argument(_) | Error::Config(_) | Error::Divergence { .. } => WpStatus::InvalidArgument,
    }
}

fn fail(status: WpStatus, msg: impl Into<String>) -> WpStatus {
    set_error(msg);
    status
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), WpStatus>) -> WpStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => WpStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(WpStatus::Internal, "internal panic"),
    }
}

fn check(e: Error) -> WpStatus {
    let s = status_of(&e);
    fail(s, e.to_string())
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), WpStatus> {
    if p.is_null() {
        Err(fail(WpStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

fn build(model: CompressedModel) -> Result<Box<WpModel>, WpStatus> {
    let runner = CompressedRunner::new(&model).map_err(check)?;
    Ok(Box::new(WpModel { model, runner }))
}

unsafe fn model_ref<'a>(m: *const WpModel) -> Result<&'a WpModel, WpStatus> {
    non_null(m, "model")?;
    Ok(&*m)
}

/// Message for the last failure on this thread, or NULL. Valid until the next call.
#[no_mangle]
pub extern "C" fn wp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn wp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a container file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wp_model_load(path: *const c_char, out: *mut *mut WpModel) -> WpStatus {
    guard(|| {
        non_null(path, "path")?;
        non_null(out, "out")?;
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(WpStatus::InvalidArgument, "path is not UTF-8"))?;
        let model = CompressedModel::load(Path::new(path)).map_err(check)?;
        *out = Box::into_raw(build(model)?);
        Ok(())
    })
}

/// Parses a container from memory.
///
/// # Safety
/// `data` must point to `len` readable bytes and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wp_model_from_bytes(data: *const u8, len: usize, out: *mut *mut WpModel) -> WpStatus {
    guard(|| {
        non_null(data, "data")?;
        non_null(out, "out")?;
        let bytes = std::slice::from_raw_parts(data, len);
        let model = CompressedModel::from_bytes(bytes).map_err(check)?;
        *out = Box::into_raw(build(model)?);
        Ok(())
    })
}

/// Releases a model. NULL is ignored.
///
/// # Safety
/// `model` must come from `wp_model_load` or `wp_model_from_bytes` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn wp_model_free(model: *mut WpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live model and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wp_model_layer_count(model: *const WpModel, out: *mut usize) -> WpStatus {
    guard(|| {
        let m = model_ref(model)?;
        non_null(out, "out")?;
        *out = m.model.layers().len();
        Ok(())
    })
}

/// Output rows and input columns of layer `index`.
///
/// # Safety
/// `model` must be a live model; `rows` and `cols` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn wp_model_layer_shape(
    model: *const WpModel,
    index: usize,
    rows: *mut usize,
    cols: *mut usize,
) -> WpStatus {
    guard(|| {
        let m = model_ref(model)?;
        non_null(rows, "rows")?;
        non_null(cols, "cols")?;
        let layer = m.model.layers().get(index).ok_or_else(|| {
            fail(WpStatus::InvalidArgument, format!("layer {index} out of range ({} layers)", m.model.layers().len()))
        })?;
        let (r, c) = layer.shape();
        *rows = r;
        *cols = c;
        Ok(())
    })
}

/// Class probabilities for `batch` row-major inputs, computed with the compressed kernels.
///
/// # Safety
/// `input` must hold `batch * input_dim` floats and `output` `output_len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn wp_model_forward(
    model: *const WpModel,
    input: *const f32,
    batch: usize,
    output: *mut f32,
    output_len: usize,
) -> WpStatus {
    guard(|| {
        let m = model_ref(model)?;
        non_null(input, "input")?;
        non_null(output, "output")?;
        let layers = m.model.layers();
        let in_dim = layers[0].shape().1;
        let out_dim = layers[layers.len() - 1].shape().0;
        if batch == 0 {
            return Err(fail(WpStatus::InvalidArgument, "batch must be at least 1"));
        }
        if output_len < batch * out_dim {
            return Err(fail(
                WpStatus::BufferTooSmall,
                format!("output holds {output_len} floats, need {}", batch * out_dim),
            ));
        }
        let x = Matrix::from_vec(batch, in_dim, std::slice::from_raw_parts(input, batch * in_dim).to_vec()).map_err(check)?;
        let probs = m.runner.forward(&x).map_err(check)?;
        std::slice::from_raw_parts_mut(output, batch * out_dim).copy_from_slice(probs.as_slice());
        Ok(())
    })
}

/// Dense row-major weights of layer `index` as stored (after decoding).
///
/// # Safety
/// `model` must be a live model and `output` must hold `output_len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn wp_model_reconstruct_layer(
    model: *const WpModel,
    index: usize,
    output: *mut f32,
    output_len: usize,
) -> WpStatus {
    guard(|| {
        let m = model_ref(model)?;
        non_null(output, "output")?;
        let layer = m
            .model
            .layers()
            .get(index)
            .ok_or_else(|| fail(WpStatus::InvalidArgument, format!("layer {index} out of range")))?;
        let dense = reconstruct_dense(layer).map_err(check)?;
        if output_len < dense.len() {
            return Err(fail(
                WpStatus::BufferTooSmall,
                format!("output holds {output_len} floats, need {}", dense.len()),
            ));
        }
        std::slice::from_raw_parts_mut(output, dense.len()).copy_from_slice(dense.as_slice());
        Ok(())
    })
}

/// Per-layer storage table as CSV. Free the string with `wp_string_free`.
///
/// # Safety
/// `model` must be a live model and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wp_model_stats_csv(model: *const WpModel, out: *mut *mut c_char) -> WpStatus {
    guard(|| {
        let m = model_ref(model)?;
        non_null(out, "out")?;
        let csv = compute_stats(&m.model, 32).map_err(check)?.to_csv();
        *out = CString::new(csv)
            .map_err(|_| fail(WpStatus::Internal, "stats contain NUL"))?
            .into_raw();
        Ok(())
    })
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn wp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
