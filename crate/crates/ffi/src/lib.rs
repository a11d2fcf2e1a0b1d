//! C ABI over the buoynet core.
//!
//! Conventions:
//! * every fallible call returns a `BnStatus`; results go through out-pointers
//! * on failure a message is kept per thread, readable via `bn_last_error`
//! * handles are opaque and released with their matching `*_free`
//! * strings returned by a handle stay valid until that handle is freed
//!
//! Panics never cross the boundary; they surface as `BN_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use buoynet::crc::crc16_ccitt_false;
use buoynet::frame::{decode_frame, encode_frame, FrameError, FRAME_LEN};
use buoynet::pathloss::{fit_log_model, PathLossError, PathLossModel, RssiSample};
use buoynet::runner::{run, RunReport};
use buoynet::{LoraFrame, Scenario};

/// Length of an encoded radio frame in bytes.
pub const BN_FRAME_LEN: usize = 20;
const _: () = assert!(BN_FRAME_LEN == FRAME_LEN);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    NoSolution = 3,
    FitFailed = 4,
    FrameTruncated = 5,
    FrameNotAFrame = 6,
    FrameUnsupportedVersion = 7,
    FrameCorrupt = 8,
    FrameOutOfRange = 9,
    BufferTooSmall = 10,
    ScenarioInvalid = 11,
    Panic = 99,
}

/// Decoded frame fields, mirroring the wire layout.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BnFrame {
    pub version: u8,
    pub node_id: u16,
    pub seq: u16,
    pub temp_centi_c: i16,
    pub lat_e7: i32,
    pub lon_e7: i32,
    pub battery_mv: u16,
}

impl From<LoraFrame> for BnFrame {
    fn from(f: LoraFrame) -> Self {
        Self {
            version: f.version,
            node_id: f.node_id,
            seq: f.seq,
            temp_centi_c: f.temp_centi_c,
            lat_e7: f.lat_e7,
            lon_e7: f.lon_e7,
            battery_mv: f.battery_mv,
        }
    }
}

impl From<BnFrame> for LoraFrame {
    fn from(f: BnFrame) -> Self {
        Self {
            version: f.version,
            node_id: f.node_id,
            seq: f.seq,
            temp_centi_c: f.temp_centi_c,
            lat_e7: f.lat_e7,
            lon_e7: f.lon_e7,
            battery_mv: f.battery_mv,
        }
    }
}

/// `rssi = a * ln(d / distance_unit_m) + b`. `r_squared` is NaN when unknown.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BnModel {
    pub a: f64,
    pub b: f64,
    pub r_squared: f64,
    pub distance_unit_m: f64,
}

impl From<PathLossModel> for BnModel {
    fn from(m: PathLossModel) -> Self {
        Self {
            a: m.a,
            b: m.b,
            r_squared: m.r_squared.unwrap_or(f64::NAN),
            distance_unit_m: m.distance_unit_m,
        }
    }
}

impl From<&BnModel> for PathLossModel {
    fn from(m: &BnModel) -> Self {
        PathLossModel::new(m.a, m.b, m.distance_unit_m)
    }
}

/// Accumulates (distance, rssi) samples for a least-squares fit.
pub struct BnFitter {
    unit_m: f64,
    samples: Vec<RssiSample>,
}

/// A completed scenario run.
pub struct BnRun {
    report: RunReport,
    telemetry: CString,
    stats: CString,
    fit: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn fail(status: BnStatus, msg: impl Into<String>) -> BnStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> BnStatus) -> BnStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(BnStatus::Panic, "internal panic"),
    }
}

fn frame_status(e: &FrameError) -> BnStatus {
    match e {
        FrameError::Truncated(_) => BnStatus::FrameTruncated,
        FrameError::NotAFrame(_) => BnStatus::FrameNotAFrame,
        FrameError::UnsupportedVersion(_) => BnStatus::FrameUnsupportedVersion,
        FrameError::Corrupt { .. } => BnStatus::FrameCorrupt,
        FrameError::OutOfRange { .. } => BnStatus::FrameOutOfRange,
    }
}

fn pathloss_status(e: &PathLossError) -> BnStatus {
    match e {
        PathLossError::NoSolution { .. } => BnStatus::NoSolution,
        PathLossError::InsufficientData(_)
        | PathLossError::SingularFit
        | PathLossError::DegenerateData => BnStatus::FitFailed,
        _ => BnStatus::InvalidArgument,
    }
}

fn text(s: &str) -> CString {
    CString::new(s.replace('\0', " ")).expect("interior NULs removed")
}

/// Message for the most recent failure on this thread, or NULL.
/// Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn bn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// CRC-16/CCITT-FALSE of `len` bytes. NULL with `len == 0` is allowed.
///
/// # Safety
/// `data` must point to `len` readable bytes unless `len` is 0.
#[no_mangle]
pub unsafe extern "C" fn bn_crc16(data: *const u8, len: usize) -> u16 {
    if len == 0 {
        return crc16_ccitt_false(&[]);
    }
    if data.is_null() {
        return 0;
    }
    crc16_ccitt_false(std::slice::from_raw_parts(data, len))
}

/// Encodes `frame` into `out`, which must hold `BN_FRAME_LEN` bytes.
///
/// # Safety
/// `frame` must be valid for reads; `out` valid for `out_len` writes.
#[no_mangle]
pub unsafe extern "C" fn bn_frame_encode(
    frame: *const BnFrame,
    out: *mut u8,
    out_len: usize,
) -> BnStatus {
    guard(|| {
        if frame.is_null() || out.is_null() {
            return fail(BnStatus::NullArgument, "frame and out must be non-null");
        }
        if out_len < FRAME_LEN {
            return fail(
                BnStatus::BufferTooSmall,
                format!("need {FRAME_LEN} bytes, got {out_len}"),
            );
        }
        match encode_frame(&LoraFrame::from(*frame)) {
            Ok(bytes) => {
                ptr::copy_nonoverlapping(bytes.as_ptr(), out, FRAME_LEN);
                BnStatus::Ok
            }
            Err(e) => fail(frame_status(&e), e.to_string()),
        }
    })
}

/// Decodes exactly `len` bytes into `out`.
///
/// # Safety
/// `data` must point to `len` readable bytes; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn bn_frame_decode(
    data: *const u8,
    len: usize,
    out: *mut BnFrame,
) -> BnStatus {
    guard(|| {
        if out.is_null() || (data.is_null() && len > 0) {
            return fail(BnStatus::NullArgument, "data and out must be non-null");
        }
        let bytes = if len == 0 {
            &[][..]
        } else {
            std::slice::from_raw_parts(data, len)
        };
        match decode_frame(bytes) {
            Ok(f) => {
                *out = f.into();
                BnStatus::Ok
            }
            Err(e) => fail(frame_status(&e), e.to_string()),
        }
    })
}

/// Mean RSSI in dBm at `distance_m`.
///
/// # Safety
/// `model` must be valid for reads and `out` for writes.
#[no_mangle]
pub unsafe extern "C" fn bn_rssi_at(
    model: *const BnModel,
    distance_m: f64,
    out: *mut f64,
) -> BnStatus {
    guard(|| {
        if model.is_null() || out.is_null() {
            return fail(BnStatus::NullArgument, "model and out must be non-null");
        }
        match PathLossModel::from(&*model).rssi_at(distance_m) {
            Ok(v) => {
                *out = v;
                BnStatus::Ok
            }
            Err(e) => fail(pathloss_status(&e), e.to_string()),
        }
    })
}

/// Distance in meters at which the mean RSSI falls to `sensitivity_dbm`.
///
/// # Safety
/// `model` must be valid for reads and `out` for writes.
#[no_mangle]
pub unsafe extern "C" fn bn_max_range(
    model: *const BnModel,
    sensitivity_dbm: f64,
    out: *mut f64,
) -> BnStatus {
    guard(|| {
        if model.is_null() || out.is_null() {
            return fail(BnStatus::NullArgument, "model and out must be non-null");
        }
        match PathLossModel::from(&*model).max_range(sensitivity_dbm) {
            Ok(v) => {
                *out = v;
                BnStatus::Ok
            }
            Err(e) => fail(pathloss_status(&e), e.to_string()),
        }
    })
}

/// The reference model with a 60 m distance unit.
#[no_mangle]
pub extern "C" fn bn_reference_model() -> BnModel {
    PathLossModel::reference().into()
}

/// New empty fitter; free with `bn_fitter_free`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn bn_fitter_new(unit_m: f64, out: *mut *mut BnFitter) -> BnStatus {
    guard(|| {
        if out.is_null() {
            return fail(BnStatus::NullArgument, "out must be non-null");
        }
        if !(unit_m > 0.0 && unit_m.is_finite()) {
            return fail(
                BnStatus::InvalidArgument,
                format!("unit_m must be positive, got {unit_m}"),
            );
        }
        *out = Box::into_raw(Box::new(BnFitter {
            unit_m,
            samples: Vec::new(),
        }));
        BnStatus::Ok
    })
}

/// # Safety
/// `fitter` must come from `bn_fitter_new`.
#[no_mangle]
pub unsafe extern "C" fn bn_fitter_add(
    fitter: *mut BnFitter,
    distance_m: f64,
    rssi_dbm: f64,
) -> BnStatus {
    guard(|| {
        let Some(f) = fitter.as_mut() else {
            return fail(BnStatus::NullArgument, "fitter must be non-null");
        };
        match RssiSample::new(distance_m, rssi_dbm) {
            Ok(s) => {
                f.samples.push(s);
                BnStatus::Ok
            }
            Err(e) => fail(pathloss_status(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `fitter` must come from `bn_fitter_new`, or be NULL.
#[no_mangle]
pub unsafe extern "C" fn bn_fitter_len(fitter: *const BnFitter) -> usize {
    fitter.as_ref().map_or(0, |f| f.samples.len())
}

/// # Safety
/// `fitter` must come from `bn_fitter_new`; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn bn_fitter_fit(fitter: *const BnFitter, out: *mut BnModel) -> BnStatus {
    guard(|| {
        let (Some(f), false) = (fitter.as_ref(), out.is_null()) else {
            return fail(BnStatus::NullArgument, "fitter and out must be non-null");
        };
        match fit_log_model(&f.samples, f.unit_m) {
            Ok(m) => {
                *out = m.into();
                BnStatus::Ok
            }
            Err(e) => fail(pathloss_status(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `fitter` must come from `bn_fitter_new` and not be used afterwards. NULL is a no-op.
#[no_mangle]
pub unsafe extern "C" fn bn_fitter_free(fitter: *mut BnFitter) {
    if !fitter.is_null() {
        drop(Box::from_raw(fitter));
    }
}

/// Parses a JSON scenario and runs it to completion; free with `bn_run_free`.
///
/// # Safety
/// `scenario_json` must be a NUL-terminated string; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn bn_run_scenario(
    scenario_json: *const c_char,
    out: *mut *mut BnRun,
) -> BnStatus {
    guard(|| {
        if scenario_json.is_null() || out.is_null() {
            return fail(
                BnStatus::NullArgument,
                "scenario_json and out must be non-null",
            );
        }
        let Ok(json) = CStr::from_ptr(scenario_json).to_str() else {
            return fail(BnStatus::InvalidArgument, "scenario_json is not UTF-8");
        };
        let scenario = match Scenario::from_json(json) {
            Ok(s) => s,
            Err(e) => return fail(BnStatus::ScenarioInvalid, e.to_string()),
        };
        let report = run(&scenario);
        let handle = BnRun {
            telemetry: text(&report.telemetry_jsonl),
            stats: text(&report.stats_json()),
            fit: text(&report.fit_json()),
            report,
        };
        *out = Box::into_raw(Box::new(handle));
        BnStatus::Ok
    })
}

/// Telemetry as JSON lines, in monitor ingestion order.
///
/// # Safety
/// `run` must come from `bn_run_scenario`, or be NULL.
#[no_mangle]
pub unsafe extern "C" fn bn_run_telemetry(run: *const BnRun) -> *const c_char {
    run.as_ref().map_or(ptr::null(), |r| r.telemetry.as_ptr())
}

/// Pipeline counters as a JSON object.
///
/// # Safety
/// `run` must come from `bn_run_scenario`, or be NULL.
#[no_mangle]
pub unsafe extern "C" fn bn_run_stats_json(run: *const BnRun) -> *const c_char {
    run.as_ref().map_or(ptr::null(), |r| r.stats.as_ptr())
}

/// RSSI fit over stored readings, or `{"error": ...}`.
///
/// # Safety
/// `run` must come from `bn_run_scenario`, or be NULL.
#[no_mangle]
pub unsafe extern "C" fn bn_run_fit_json(run: *const BnRun) -> *const c_char {
    run.as_ref().map_or(ptr::null(), |r| r.fit.as_ptr())
}

/// Number of readings the monitor stored.
///
/// # Safety
/// `run` must come from `bn_run_scenario`, or be NULL.
#[no_mangle]
pub unsafe extern "C" fn bn_run_stored_count(run: *const BnRun) -> u64 {
    run.as_ref().map_or(0, |r| r.report.stats.monitor.ingested)
}

/// 1 when emitted, delivered, published and stored counts reconcile.
///
/// # Safety
/// `run` must come from `bn_run_scenario`, or be NULL.
#[no_mangle]
pub unsafe extern "C" fn bn_run_balanced(run: *const BnRun) -> i32 {
    run.as_ref()
        .map_or(0, |r| i32::from(r.report.stats.conservation.balanced))
}

/// # Safety
/// `run` must come from `bn_run_scenario` and not be used afterwards. NULL is a no-op.
#[no_mangle]
pub unsafe extern "C" fn bn_run_free(run: *mut BnRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}
