//! C ABI over `wisa_lab`.
//!
//! Every function returns a [`WisaStatus`]. On failure the message is kept in
//! a thread-local slot readable through [`wisa_last_error_message`]. Objects
//! cross the boundary as opaque handles that must be released with their
//! matching `_free` function; strings returned to the caller are released
//! with [`wisa_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wisa_lab::backbone::Model;
use wisa_lab::mopa::{perturb, GatingVector};
use wisa_lab::numcore::Tensor;
use wisa_lab::physchema::{self, PhysicalAnnotation, QuantitativeProperties, SciNotation, NUM_CATEGORIES};
use wisa_lab::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WisaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Schema = 4,
    Dimension = 5,
    Numeric = 6,
    Usage = 7,
    Io = 8,
    BufferTooSmall = 9,
    Panic = 10,
    Other = 11,
}

/// A parsed physical annotation.
pub struct WisaAnnotation(PhysicalAnnotation);

/// A loaded model checkpoint.
pub struct WisaModel(Model);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> WisaStatus {
    match e {
        Error::Parse { .. } => WisaStatus::Parse,
        Error::Schema { .. } => WisaStatus::Schema,
        Error::Dimension(_) => WisaStatus::Dimension,
        Error::Numeric(_) => WisaStatus::Numeric,
        Error::Usage(_) => WisaStatus::Usage,
        Error::Io { .. } => WisaStatus::Io,
        _ => WisaStatus::Other,
    }
}

struct Fail(WisaStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(WisaStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> WisaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => WisaStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            WisaStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

fn gate_from(values: &[f64]) -> Result<GatingVector, Fail> {
    Ok(GatingVector::from_slice(values)?)
}

/// Message of the last failure on this thread, or null. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn wisa_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Number of physical categories (and gate entries).
#[no_mangle]
pub extern "C" fn wisa_num_categories() -> usize {
    NUM_CATEGORIES
}

/// Splits `value` into a coefficient in [1, 10) (or 0) and a decimal exponent.
///
/// # Safety
/// `coefficient` and `exponent` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn wisa_sci_encode(value: f64, coefficient: *mut f64, exponent: *mut i32) -> WisaStatus {
    guard(|| {
        let c = out(coefficient, "coefficient")?;
        let e = out(exponent, "exponent")?;
        let s = physchema::encode_scientific(value)?;
        *c = s.coefficient;
        *e = s.exponent;
        Ok(())
    })
}

/// # Safety
/// `value` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn wisa_sci_decode(coefficient: f64, exponent: i32, value: *mut f64) -> WisaStatus {
    guard(|| {
        *out(value, "value")? = physchema::decode_scientific(SciNotation::new(coefficient, exponent));
        Ok(())
    })
}

/// Parses annotation JSON (`len` bytes, UTF-8, no terminator needed).
///
/// # Safety
/// `json` must point to `len` readable bytes and `handle` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn wisa_annotation_parse(json: *const u8, len: usize, handle: *mut *mut WisaAnnotation) -> WisaStatus {
    guard(|| {
        let h = out(handle, "handle")?;
        *h = ptr::null_mut();
        let bytes = slice(json, len, "json")?;
        let a = physchema::parse(bytes)?;
        *h = Box::into_raw(Box::new(WisaAnnotation(a)));
        Ok(())
    })
}

/// # Safety
/// `handle` must be null or come from [`wisa_annotation_parse`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn wisa_annotation_free(handle: *mut WisaAnnotation) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Counts rule violations; `strict` also enforces the group rules.
///
/// # Safety
/// `handle` must be a live annotation and `count` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn wisa_annotation_validate(handle: *const WisaAnnotation, strict: bool, count: *mut usize) -> WisaStatus {
    guard(|| {
        let a = handle.as_ref().ok_or_else(|| null("handle"))?;
        *out(count, "count")? = physchema::validate(&a.0, strict).len();
        Ok(())
    })
}

/// Writes the annotation's gate (one 0/1 entry per category) into `gate`,
/// which must hold at least [`wisa_num_categories`] values.
///
/// # Safety
/// `handle` must be a live annotation and `gate` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn wisa_annotation_gating(handle: *const WisaAnnotation, gate: *mut f64, len: usize) -> WisaStatus {
    guard(|| {
        let a = handle.as_ref().ok_or_else(|| null("handle"))?;
        if len < NUM_CATEGORIES {
            return Err(Fail(
                WisaStatus::BufferTooSmall,
                format!("gate buffer holds {len}, needs {NUM_CATEGORIES}"),
            ));
        }
        let dst = slice_mut(gate, NUM_CATEGORIES, "gate")?;
        dst.copy_from_slice(physchema::to_gating_vector(&a.0.qualitative).values());
        Ok(())
    })
}

/// Canonical JSON of the annotation as a NUL-terminated string owned by the
/// caller (release with [`wisa_string_free`]).
///
/// # Safety
/// `handle` must be a live annotation and `json` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn wisa_annotation_to_json(handle: *const WisaAnnotation, json: *mut *mut c_char) -> WisaStatus {
    guard(|| {
        let dst = out(json, "json")?;
        *dst = ptr::null_mut();
        let a = handle.as_ref().ok_or_else(|| null("handle"))?;
        let s = String::from_utf8(physchema::serialize(&a.0)).map_err(|e| Fail(WisaStatus::InvalidUtf8, e.to_string()))?;
        *dst = CString::new(s).map_err(|e| Fail(WisaStatus::Other, e.to_string()))?.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn wisa_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Training-time gate perturbation of a binary gate: each entry flips
/// (1 to 0.1, 0 to 1) with probability `prob`, drawn from `seed`.
///
/// # Safety
/// `gate` must hold `len` readable values and `perturbed` `len` writable ones.
#[no_mangle]
pub unsafe extern "C" fn wisa_perturb(
    gate: *const f64,
    len: usize,
    prob: f64,
    seed: u64,
    perturbed: *mut f64,
) -> WisaStatus {
    guard(|| {
        let g = gate_from(slice(gate, len, "gate")?)?;
        let dst = slice_mut(perturbed, len, "perturbed")?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        dst.copy_from_slice(perturb(&g, prob, &mut rng)?.values());
        Ok(())
    })
}

/// Loads a checkpoint written by `wisa-lab train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `handle` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn wisa_model_load(path: *const c_char, handle: *mut *mut WisaModel) -> WisaStatus {
    guard(|| {
        let h = out(handle, "handle")?;
        *h = ptr::null_mut();
        if path.is_null() {
            return Err(null("path"));
        }
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|e| Fail(WisaStatus::InvalidUtf8, e.to_string()))?;
        let m = Model::load(Path::new(p))?;
        *h = Box::into_raw(Box::new(WisaModel(m)));
        Ok(())
    })
}

/// # Safety
/// `handle` must be null or come from [`wisa_model_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn wisa_model_free(handle: *mut WisaModel) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Clip geometry the model expects, as frames, height, width.
///
/// # Safety
/// `handle` must be a live model and `shape` valid for three writes.
#[no_mangle]
pub unsafe extern "C" fn wisa_model_clip_shape(handle: *const WisaModel, shape: *mut usize) -> WisaStatus {
    guard(|| {
        let m = handle.as_ref().ok_or_else(|| null("handle"))?;
        slice_mut(shape, 3, "shape")?.copy_from_slice(&m.0.config.clip_shape());
        Ok(())
    })
}

/// Category probabilities for a clip in [-1, 1] (row-major frames, height,
/// width) read as the noisy input at `timestep`, with empty text and zero
/// quantitative properties. A null `gate` means all ones.
///
/// # Safety
/// `clip` must hold `clip_len` values, `gate` (if not null) the category
/// count, and `probabilities` `prob_len` writable values.
#[no_mangle]
pub unsafe extern "C" fn wisa_model_classify(
    handle: *const WisaModel,
    clip: *const f64,
    clip_len: usize,
    timestep: usize,
    gate: *const f64,
    probabilities: *mut f64,
    prob_len: usize,
) -> WisaStatus {
    guard(|| {
        let m = &handle.as_ref().ok_or_else(|| null("handle"))?.0;
        if prob_len < NUM_CATEGORIES {
            return Err(Fail(
                WisaStatus::BufferTooSmall,
                format!("probability buffer holds {prob_len}, needs {NUM_CATEGORIES}"),
            ));
        }
        let shape = m.config.clip_shape();
        let x = Tensor::new(&shape, slice(clip, clip_len, "clip")?.to_vec())?;
        let g = if gate.is_null() {
            GatingVector::ones()
        } else {
            gate_from(slice(gate, NUM_CATEGORIES, "gate")?)?
        };
        let cond = m.conditioning("", "", g, QuantitativeProperties::zero());
        let r = m.classify(&x, timestep, &cond)?;
        slice_mut(probabilities, NUM_CATEGORIES, "probabilities")?.copy_from_slice(&r.probabilities);
        Ok(())
    })
}
