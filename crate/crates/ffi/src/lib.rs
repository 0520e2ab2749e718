//! C ABI over `adsel-core`.
//!
//! Objects cross the boundary as opaque pointers created by `*_new`/`*_load`
//! functions and released by the matching `*_free`. Every fallible call
//! returns an [`AdselStatus`]; the message of the last failure on the
//! calling thread is available from [`adsel_last_error`]. Strings returned
//! through out-parameters are owned by the caller and must be released with
//! [`adsel_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use adsel_core::config::{parse_pairs, RunConfig};
use adsel_core::data::{load_csv, TimeSeries};
use adsel_core::online::Branch;
use adsel_core::pipeline::{run_offline, SelectionReport};
use adsel_core::rank::{aggregate_with, Orientation, Ranking};
use adsel_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdselStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Config = 4,
    Runtime = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdselBranch {
    Ensemble = 0,
    Single = 1,
}

/// A multivariate series with optional labels.
pub struct AdselSeries(TimeSeries);

/// Run configuration built from `key = value` pairs.
pub struct AdselConfig {
    pairs: Vec<(String, String)>,
    cfg: RunConfig,
}

/// Result of an offline selection.
pub struct AdselSelection(SelectionReport);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> AdselStatus {
    match e {
        Error::Io { .. } | Error::Csv(_) | Error::Parse { .. } => AdselStatus::Io,
        Error::Config(_) => AdselStatus::Config,
        Error::InvalidInput(_) | Error::DimensionMismatch { .. } => AdselStatus::InvalidArgument,
        Error::Stage { source, .. } => match status_of(source) {
            AdselStatus::Io => AdselStatus::Io,
            _ => AdselStatus::Runtime,
        },
        _ => AdselStatus::Runtime,
    }
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (AdselStatus, String)>) -> AdselStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            AdselStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            AdselStatus::Panic
        }
    }
}

fn core_err(e: Error) -> (AdselStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(name: &str) -> (AdselStatus, String) {
    (AdselStatus::NullPointer, format!("`{name}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, (AdselStatus, String)> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (AdselStatus::InvalidArgument, format!("`{name}` is not UTF-8")))
}

fn into_c_string(s: String) -> Result<*mut c_char, (AdselStatus, String)> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| (AdselStatus::Runtime, "string contains a NUL byte".into()))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn adsel_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn adsel_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn adsel_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Copies `rows * dims` row-major values and, if `labels` is non-null,
/// `rows` labels (0 or 1) into a new series.
///
/// # Safety
/// `values` must point to `rows * dims` doubles; `labels` must be null or
/// point to `rows` bytes; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn adsel_series_new(
    values: *const f64,
    rows: usize,
    dims: usize,
    labels: *const u8,
    out: *mut *mut AdselSeries,
) -> AdselStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if values.is_null() {
            return Err(null("values"));
        }
        let n = rows
            .checked_mul(dims)
            .ok_or((AdselStatus::InvalidArgument, "rows * dims overflows".to_string()))?;
        let v = std::slice::from_raw_parts(values, n).to_vec();
        let l = (!labels.is_null()).then(|| std::slice::from_raw_parts(labels, rows).to_vec());
        let s = TimeSeries::new("ffi", v, dims, l).map_err(core_err)?;
        *out = Box::into_raw(Box::new(AdselSeries(s)));
        Ok(())
    })
}

/// Loads a CSV with one column per feature and an optional `label` column.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn adsel_series_load_csv(path: *const c_char, out: *mut *mut AdselSeries) -> AdselStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = str_arg(path, "path")?;
        let s = load_csv(path).map_err(core_err)?;
        *out = Box::into_raw(Box::new(AdselSeries(s)));
        Ok(())
    })
}

/// Number of rows, or 0 for null.
///
/// # Safety
/// `series` must be null or a live series handle.
#[no_mangle]
pub unsafe extern "C" fn adsel_series_len(series: *const AdselSeries) -> usize {
    series.as_ref().map_or(0, |s| s.0.len())
}

/// # Safety
/// `series` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn adsel_series_free(series: *mut AdselSeries) {
    if !series.is_null() {
        drop(Box::from_raw(series));
    }
}

/// A default configuration.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn adsel_config_new(out: *mut *mut AdselConfig) -> AdselStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = Box::into_raw(Box::new(AdselConfig {
            pairs: Vec::new(),
            cfg: RunConfig::default(),
        }));
        Ok(())
    })
}

fn rebuild(pairs: &[(String, String)]) -> Result<RunConfig, (AdselStatus, String)> {
    let mut cfg = RunConfig::default();
    cfg.apply_all(pairs).map_err(core_err)?;
    Ok(cfg)
}

/// Sets one key. On failure the configuration is unchanged.
///
/// # Safety
/// `config` must be a live handle; `key` and `value` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn adsel_config_set(
    config: *mut AdselConfig,
    key: *const c_char,
    value: *const c_char,
) -> AdselStatus {
    guard(|| {
        let c = config.as_mut().ok_or_else(|| null("config"))?;
        let mut pairs = c.pairs.clone();
        pairs.push((str_arg(key, "key")?.trim().into(), str_arg(value, "value")?.trim().into()));
        c.cfg = rebuild(&pairs)?;
        c.pairs = pairs;
        Ok(())
    })
}

/// Applies a whole `key = value` text, as in a config file.
///
/// # Safety
/// `config` must be a live handle; `text` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn adsel_config_parse(config: *mut AdselConfig, text: *const c_char) -> AdselStatus {
    guard(|| {
        let c = config.as_mut().ok_or_else(|| null("config"))?;
        let mut pairs = c.pairs.clone();
        pairs.extend(parse_pairs(str_arg(text, "text")?).map_err(core_err)?);
        c.cfg = rebuild(&pairs)?;
        c.pairs = pairs;
        Ok(())
    })
}

/// # Safety
/// `config` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn adsel_config_free(config: *mut AdselConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Offline selection on the offline split of `series`.
///
/// # Safety
/// `series` and `config` must be live handles; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn adsel_select(
    series: *const AdselSeries,
    config: *const AdselConfig,
    out: *mut *mut AdselSelection,
) -> AdselStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let s = series.as_ref().ok_or_else(|| null("series"))?;
        let c = config.as_ref().ok_or_else(|| null("config"))?;
        let sel = run_offline(&s.0, &c.cfg).map_err(core_err)?;
        *out = Box::into_raw(Box::new(AdselSelection(sel.report)));
        Ok(())
    })
}

/// Writes the branch chosen for deployment.
///
/// # Safety
/// `selection` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn adsel_selection_designated(
    selection: *const AdselSelection,
    out: *mut AdselBranch,
) -> AdselStatus {
    guard(|| {
        let s = selection.as_ref().ok_or_else(|| null("selection"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = match s.0.designated {
            Branch::Ensemble => AdselBranch::Ensemble,
            Branch::Single => AdselBranch::Single,
        };
        Ok(())
    })
}

/// Id of the top single detector; free with [`adsel_string_free`].
///
/// # Safety
/// `selection` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn adsel_selection_top(selection: *const AdselSelection, out: *mut *mut c_char) -> AdselStatus {
    guard(|| {
        let s = selection.as_ref().ok_or_else(|| null("selection"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = into_c_string(s.0.single.id.clone())?;
        Ok(())
    })
}

/// The selection report as one JSON object (durations excluded); free
/// with [`adsel_string_free`].
///
/// # Safety
/// `selection` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn adsel_selection_json(selection: *const AdselSelection, out: *mut *mut c_char) -> AdselStatus {
    guard(|| {
        let s = selection.as_ref().ok_or_else(|| null("selection"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let json = serde_json::to_string(&s.0).map_err(|e| (AdselStatus::Runtime, e.to_string()))?;
        *out = into_c_string(json)?;
        Ok(())
    })
}

/// # Safety
/// `selection` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn adsel_selection_free(selection: *mut AdselSelection) {
    if !selection.is_null() {
        drop(Box::from_raw(selection));
    }
}

/// Fuses rankings given as a JSON array of id arrays, e.g.
/// `[["a","b"],["b","a"]]`. `literal` selects the literal transition
/// orientation. Writes the consensus as a JSON array of ids.
///
/// # Safety
/// `rankings_json` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn adsel_aggregate(
    rankings_json: *const c_char,
    literal: bool,
    out: *mut *mut c_char,
) -> AdselStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = str_arg(rankings_json, "rankings_json")?;
        let lists: Vec<Vec<String>> =
            serde_json::from_str(text).map_err(|e| (AdselStatus::InvalidArgument, e.to_string()))?;
        let rankings: Vec<Ranking> = lists.into_iter().map(Ranking::new).collect();
        let orientation = if literal {
            Orientation::Literal
        } else {
            Orientation::WinnerMass
        };
        let c = aggregate_with(&rankings, orientation).map_err(core_err)?;
        let json = serde_json::to_string(&c.ranking.ids).map_err(|e| (AdselStatus::Runtime, e.to_string()))?;
        *out = into_c_string(json)?;
        Ok(())
    })
}
