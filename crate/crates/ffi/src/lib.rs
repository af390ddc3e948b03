//! C interface to the semcom simulator.
//!
//! Every fallible call returns a [`SemcomStatus`]. On failure a message is
//! kept per thread and can be copied out with
//! [`semcom_last_error_message`]. Handles are opaque and must be released
//! with their matching `_free` function. Matrices are row-major `double`
//! arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use ndarray::{ArrayView2, ArrayViewMut2};
use semcom::channel::{Channel, ChannelConfig, ChannelMode, QamConfig};
use semcom::eval::{classify_batch, harmonic_mean};
use semcom::train::Checkpoint;
use semcom::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SemcomStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimMismatch = 3,
    Io = 4,
    Format = 5,
    NotFound = 6,
    Config = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SemcomChannelMode {
    Analog = 0,
    Digital16qam = 1,
}

/// A trained model loaded from a stage-two checkpoint.
pub struct SemcomModel {
    ckpt: Checkpoint,
}

/// A stateful noisy channel with its own random stream.
pub struct SemcomChannel {
    inner: Channel,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> SemcomStatus {
    match e {
        Error::Io { .. } => SemcomStatus::Io,
        Error::DimMismatch { .. } => SemcomStatus::DimMismatch,
        Error::NotFound { .. } => SemcomStatus::NotFound,
        Error::Config { .. } => SemcomStatus::Config,
        Error::InvalidArgument(_) | Error::CategoryOverlap(_) => SemcomStatus::InvalidArgument,
        _ => SemcomStatus::Format,
    }
}

struct Fail(SemcomStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(SemcomStatus::NullPointer, format!("`{what}` is null"))
}

/// Runs `f`, records any error or panic and maps it to a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SemcomStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            SemcomStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            SemcomStatus::Panic
        }
    }
}

unsafe fn matrix<'a>(ptr: *const f64, rows: usize, cols: usize, what: &str) -> Result<ArrayView2<'a, f64>, Fail> {
    if ptr.is_null() {
        return Err(null(what));
    }
    let len = rows.checked_mul(cols).ok_or_else(|| Fail(SemcomStatus::InvalidArgument, "matrix too large".into()))?;
    let data = std::slice::from_raw_parts(ptr, len);
    Ok(ArrayView2::from_shape((rows, cols), data).expect("shape matches length"))
}

unsafe fn matrix_mut<'a>(ptr: *mut f64, rows: usize, cols: usize, what: &str) -> Result<ArrayViewMut2<'a, f64>, Fail> {
    if ptr.is_null() {
        return Err(null(what));
    }
    let len = rows.checked_mul(cols).ok_or_else(|| Fail(SemcomStatus::InvalidArgument, "matrix too large".into()))?;
    let data = std::slice::from_raw_parts_mut(ptr, len);
    Ok(ArrayViewMut2::from_shape((rows, cols), data).expect("shape matches length"))
}

unsafe fn model<'a>(m: *const SemcomModel) -> Result<&'a SemcomModel, Fail> {
    m.as_ref().ok_or_else(|| null("model"))
}

/// Copies `s` plus a terminating NUL into `buf`. Returns the number of bytes
/// needed, including the NUL, whether or not it fit.
unsafe fn copy_str(s: &str, buf: *mut c_char, len: usize) -> usize {
    let needed = s.len() + 1;
    if !buf.is_null() && len > 0 {
        let n = s.len().min(len - 1);
        std::ptr::copy_nonoverlapping(s.as_ptr().cast::<c_char>(), buf, n);
        *buf.add(n) = 0;
    }
    needed
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn semcom_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf`, truncating if
/// needed. Returns the buffer size required for the full message.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn semcom_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| copy_str(&e.borrow(), buf, len))
}

/// Harmonic mean of seen and unseen accuracy.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn semcom_harmonic_mean(seen: f64, unseen: f64, out: *mut f64) -> SemcomStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = harmonic_mean(seen, unseen)?;
        Ok(())
    })
}

/// Loads a checkpoint that has completed stage two.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn semcom_model_load(path: *const c_char, out: *mut *mut SemcomModel) -> SemcomStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = std::ptr::null_mut();
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Fail(SemcomStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let ckpt = Checkpoint::load(Path::new(path))?;
        if ckpt.stage < 2 {
            return Err(Fail(
                SemcomStatus::InvalidArgument,
                format!("checkpoint has only completed stage {}", ckpt.stage),
            ));
        }
        *out = Box::into_raw(Box::new(SemcomModel { ckpt }));
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a handle from [`semcom_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn semcom_model_free(m: *mut SemcomModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Feature, semantic and channel-symbol widths plus the symbol standard
/// deviation measured during training. Any output pointer may be null.
///
/// # Safety
/// `m` must be a live handle; non-null outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn semcom_model_dims(
    m: *const SemcomModel,
    feature: *mut usize,
    semantic: *mut usize,
    symbols: *mut usize,
    sigma_s: *mut f64,
) -> SemcomStatus {
    guard(|| {
        let m = model(m)?;
        let d = m.ckpt.codec.dims();
        if let Some(p) = feature.as_mut() {
            *p = d.feature;
        }
        if let Some(p) = semantic.as_mut() {
            *p = d.semantic;
        }
        if let Some(p) = symbols.as_mut() {
            *p = d.symbols;
        }
        if let Some(p) = sigma_s.as_mut() {
            *p = m.ckpt.sigma_s;
        }
        Ok(())
    })
}

/// Number of candidate categories, seen and unseen together.
///
/// # Safety
/// `m` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn semcom_model_category_count(m: *const SemcomModel, out: *mut usize) -> SemcomStatus {
    guard(|| {
        let m = model(m)?;
        *out.as_mut().ok_or_else(|| null("out"))? = m.ckpt.embeddings.len();
        Ok(())
    })
}

/// Copies the label of category `index` into `buf` and reports whether it
/// was seen in training. `needed` receives the buffer size required; the
/// call fails with `BUFFER_TOO_SMALL` when `len` is short.
///
/// # Safety
/// `m` must be a live handle; `buf` valid for `len` bytes; other outputs
/// null or valid.
#[no_mangle]
pub unsafe extern "C" fn semcom_model_category(
    m: *const SemcomModel,
    index: usize,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
    seen: *mut bool,
) -> SemcomStatus {
    guard(|| {
        let m = model(m)?;
        let table = &m.ckpt.embeddings;
        if index >= table.len() {
            return Err(Fail(
                SemcomStatus::InvalidArgument,
                format!("category index {index} out of range 0..{}", table.len()),
            ));
        }
        let label = table.label(index);
        let n = copy_str(label, buf, len);
        if let Some(p) = needed.as_mut() {
            *p = n;
        }
        if let Some(p) = seen.as_mut() {
            *p = table.is_seen(index);
        }
        if n > len {
            return Err(Fail(SemcomStatus::BufferTooSmall, format!("label needs {n} bytes")));
        }
        Ok(())
    })
}

/// Encodes `rows` feature vectors into power-normalized channel symbols.
/// `out` holds `rows * symbols` values.
///
/// # Safety
/// `features` must hold `rows * cols` values and `out` `rows * symbols`.
#[no_mangle]
pub unsafe extern "C" fn semcom_model_transmit(
    m: *const SemcomModel,
    features: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
) -> SemcomStatus {
    guard(|| {
        let m = model(m)?;
        let x = matrix(features, rows, cols, "features")?;
        let z = m.ckpt.codec.transmit(&x)?;
        matrix_mut(out, rows, z.ncols(), "out")?.assign(&z);
        Ok(())
    })
}

/// Decodes received symbols into semantic vectors. `out` holds
/// `rows * semantic` values.
///
/// # Safety
/// `symbols` must hold `rows * cols` values and `out` `rows * semantic`.
#[no_mangle]
pub unsafe extern "C" fn semcom_model_receive(
    m: *const SemcomModel,
    symbols: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
) -> SemcomStatus {
    guard(|| {
        let m = model(m)?;
        let z = matrix(symbols, rows, cols, "symbols")?;
        let s = m.ckpt.codec.receive(&z)?;
        matrix_mut(out, rows, s.ncols(), "out")?.assign(&s);
        Ok(())
    })
}

/// Nearest-embedding category index for each semantic vector.
///
/// # Safety
/// `semantics` must hold `rows * cols` values and `out` `rows` indices.
#[no_mangle]
pub unsafe extern "C" fn semcom_model_classify(
    m: *const SemcomModel,
    semantics: *const f64,
    rows: usize,
    cols: usize,
    out: *mut usize,
) -> SemcomStatus {
    guard(|| {
        let m = model(m)?;
        let s = matrix(semantics, rows, cols, "semantics")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let idx = classify_batch(&s, &m.ckpt.embeddings.vectors().view())?;
        std::slice::from_raw_parts_mut(out, rows).copy_from_slice(&idx);
        Ok(())
    })
}

/// Creates a channel. `qam_bits` and `sigma_s` set the quantizer of the
/// digital mode (clip range of four symbol deviations) and are ignored in
/// analog mode.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn semcom_channel_new(
    mode: SemcomChannelMode,
    snr_db: f64,
    gain: f64,
    seed: u64,
    qam_bits: u32,
    sigma_s: f64,
    out: *mut *mut SemcomChannel,
) -> SemcomStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = std::ptr::null_mut();
        let (mode, qam) = match mode {
            SemcomChannelMode::Analog => (ChannelMode::Analog, None),
            SemcomChannelMode::Digital16qam => {
                (ChannelMode::Digital16qam, Some(QamConfig::for_symbol_std(qam_bits, sigma_s)?))
            }
        };
        let inner = Channel::new(ChannelConfig { gain, snr_db, mode, seed }, qam)?;
        *out = Box::into_raw(Box::new(SemcomChannel { inner }));
        Ok(())
    })
}

/// # Safety
/// `c` must be null or a handle from [`semcom_channel_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn semcom_channel_free(c: *mut SemcomChannel) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Passes `rows * cols` symbols through the channel, advancing its random
/// stream. `out` has the same shape as the input.
///
/// # Safety
/// `c` must be a live handle; `symbols` and `out` must hold `rows * cols`
/// values and may not overlap.
#[no_mangle]
pub unsafe extern "C" fn semcom_channel_transmit(
    c: *mut SemcomChannel,
    symbols: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
) -> SemcomStatus {
    guard(|| {
        let c = c.as_mut().ok_or_else(|| null("channel"))?;
        let z = matrix(symbols, rows, cols, "symbols")?;
        let y = c.inner.transmit(&z)?;
        matrix_mut(out, rows, cols, "out")?.assign(&y);
        Ok(())
    })
}
