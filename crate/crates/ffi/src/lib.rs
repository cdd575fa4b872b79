//! C ABI over `crenet`.
//!
//! Objects cross the boundary as opaque handles created by `cren_*_new`,
//! `cren_*_load` or `cren_*_read` and released by the matching `cren_*_free`.
//! Every fallible call returns a [`CrenStatus`]; on failure a message is
//! available from [`cren_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use crenet::enhance::make_condition;
use crenet::imgio::{read_image, write_image};
use crenet::lossmetrics::{psnr, ssim_index, SsimParams};
use crenet::netcore::{load_weights, save_weights};
use crenet::trainer::enhance_full;
use crenet::{ConditionMap, CreNetWeights, EnhancerSpec, Error, Image};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrenStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Shape = 5,
    Corrupt = 6,
    Internal = 7,
}

/// Opaque RGB image with values in [0, 1].
pub struct CrenImage(Image);

/// Opaque per-pixel brightness condition.
pub struct CrenCondition(ConditionMap);

/// Opaque network weights.
pub struct CrenModel(CreNetWeights<f32>);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> CrenStatus {
    match err {
        Error::Io { .. } => CrenStatus::Io,
        Error::Format(_) | Error::Unsupported(_) => CrenStatus::Format,
        Error::Shape(_) | Error::DimensionOverflow { .. } => CrenStatus::Shape,
        Error::Truncated | Error::BadMagic | Error::BadVersion(_) | Error::BadChecksum { .. } | Error::Layout(_) => {
            CrenStatus::Corrupt
        }
        Error::InvalidParam(_) | Error::Dataset(_) => CrenStatus::InvalidArgument,
    }
}

/// Runs `f`, mapping errors and panics to a status and the thread's last
/// error message.
fn guard(f: impl FnOnce() -> Result<(), (CrenStatus, String)>) -> CrenStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CrenStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            CrenStatus::Internal
        }
    }
}

fn lib(e: Error) -> (CrenStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (CrenStatus, String) {
    (CrenStatus::NullPointer, format!("{what} is NULL"))
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> Result<&'a T, (CrenStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, (CrenStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (CrenStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), (CrenStatus, String)> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cren_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cren_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates an image from `height * width * 3` interleaved RGB floats in [0, 1].
///
/// # Safety
/// `rgb` must point to `height * width * 3` readable floats; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn cren_image_new(
    height: usize,
    width: usize,
    rgb: *const f32,
    out: *mut *mut CrenImage,
) -> CrenStatus {
    guard(|| {
        if rgb.is_null() {
            return Err(null("rgb"));
        }
        let len = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(3))
            .ok_or_else(|| {
                lib(Error::DimensionOverflow {
                    width: width as u64,
                    height: height as u64,
                })
            })?;
        let data = std::slice::from_raw_parts(rgb, len).to_vec();
        put(out, CrenImage(Image::from_vec(height, width, data).map_err(lib)?))
    })
}

/// Reads a binary PPM or 8-bit RGB PNG.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cren_image_read(path: *const c_char, out: *mut *mut CrenImage) -> CrenStatus {
    guard(|| {
        let path = text(path, "path")?;
        put(out, CrenImage(read_image(path).map_err(lib)?))
    })
}

/// Writes PNG when the path ends in `.png`, binary PPM otherwise.
///
/// # Safety
/// `image` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cren_image_write(image: *const CrenImage, path: *const c_char) -> CrenStatus {
    guard(|| {
        let image = get(image, "image")?;
        write_image(&image.0, text(path, "path")?).map_err(lib)
    })
}

/// # Safety
/// `image` must be a live handle; `height` and `width` writable.
#[no_mangle]
pub unsafe extern "C" fn cren_image_dims(image: *const CrenImage, height: *mut usize, width: *mut usize) -> CrenStatus {
    guard(|| {
        let image = get(image, "image")?;
        if height.is_null() || width.is_null() {
            return Err(null("dimension output"));
        }
        (*height, *width) = image.0.dims();
        Ok(())
    })
}

/// Copies the interleaved RGB data into `buffer`, which must hold at least
/// `height * width * 3` floats (`len` is its capacity in floats).
///
/// # Safety
/// `image` must be a live handle; `buffer` must have `len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn cren_image_copy_data(image: *const CrenImage, buffer: *mut f32, len: usize) -> CrenStatus {
    guard(|| {
        let data = get(image, "image")?.0.data();
        if buffer.is_null() {
            return Err(null("buffer"));
        }
        if len < data.len() {
            return Err((
                CrenStatus::InvalidArgument,
                format!("buffer holds {len} floats, image needs {}", data.len()),
            ));
        }
        ptr::copy_nonoverlapping(data.as_ptr(), buffer, data.len());
        Ok(())
    })
}

/// # Safety
/// `image` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cren_image_free(image: *mut CrenImage) {
    if !image.is_null() {
        drop(Box::from_raw(image));
    }
}

/// Builds a condition map from an image with a classical enhancer:
/// `gamma:<g>`, `he`, `lahe[:tile[:clip]]` or `lime[:radius[:eps]]`.
///
/// # Safety
/// `image` must be a live handle, `spec` a NUL-terminated string, `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn cren_condition_make(
    image: *const CrenImage,
    spec: *const c_char,
    out: *mut *mut CrenCondition,
) -> CrenStatus {
    guard(|| {
        let image = get(image, "image")?;
        let spec: EnhancerSpec = text(spec, "spec")?.parse().map_err(lib)?;
        put(out, CrenCondition(make_condition(&image.0, &spec).map_err(lib)?))
    })
}

/// Creates a condition map from `height * width` values in [0, 1].
///
/// # Safety
/// `values` must point to `height * width` readable floats; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cren_condition_new(
    height: usize,
    width: usize,
    values: *const f32,
    out: *mut *mut CrenCondition,
) -> CrenStatus {
    guard(|| {
        if values.is_null() {
            return Err(null("values"));
        }
        let len = height.checked_mul(width).ok_or_else(|| {
            lib(Error::DimensionOverflow {
                width: width as u64,
                height: height as u64,
            })
        })?;
        let data = std::slice::from_raw_parts(values, len).to_vec();
        put(out, CrenCondition(ConditionMap::new(height, width, data).map_err(lib)?))
    })
}

/// # Safety
/// `cond` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cren_condition_free(cond: *mut CrenCondition) {
    if !cond.is_null() {
        drop(Box::from_raw(cond));
    }
}

/// He-initialized weights from a seed.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cren_model_init(seed: u64, out: *mut *mut CrenModel) -> CrenStatus {
    guard(|| put(out, CrenModel(CreNetWeights::init(seed))))
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cren_model_load(path: *const c_char, out: *mut *mut CrenModel) -> CrenStatus {
    guard(|| {
        let path = text(path, "path")?;
        put(out, CrenModel(load_weights(path).map_err(lib)?))
    })
}

/// # Safety
/// `model` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cren_model_save(model: *const CrenModel, path: *const c_char) -> CrenStatus {
    guard(|| {
        let model = get(model, "model")?;
        save_weights(&model.0, text(path, "path")?).map_err(lib)
    })
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cren_model_free(model: *mut CrenModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Runs the network on a whole image under `cond` (same size as `image`).
///
/// # Safety
/// `model`, `image`, `cond` must be live handles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cren_enhance(
    model: *const CrenModel,
    image: *const CrenImage,
    cond: *const CrenCondition,
    out: *mut *mut CrenImage,
) -> CrenStatus {
    guard(|| {
        let model = get(model, "model")?;
        let image = get(image, "image")?;
        let cond = get(cond, "condition")?;
        put(out, CrenImage(enhance_full(&model.0, &image.0, &cond.0).map_err(lib)?))
    })
}

/// PSNR in dB over all channels, capped at 99.
///
/// # Safety
/// `a`, `b` must be live handles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cren_psnr(a: *const CrenImage, b: *const CrenImage, out: *mut f64) -> CrenStatus {
    guard(|| {
        let (a, b) = (get(a, "a")?, get(b, "b")?);
        let v = psnr(&a.0, &b.0).map_err(lib)?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

/// SSIM of the V channels (11x11 Gaussian window, sigma 1.5).
///
/// # Safety
/// `a`, `b` must be live handles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cren_ssim(a: *const CrenImage, b: *const CrenImage, out: *mut f64) -> CrenStatus {
    guard(|| {
        let (a, b) = (get(a, "a")?, get(b, "b")?);
        let v = ssim_index(&a.0, &b.0, &SsimParams::default()).map_err(lib)?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}
