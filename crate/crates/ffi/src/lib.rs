//! C ABI over the trace-analysis engine.
//!
//! Handles are opaque; every fallible call returns a [`RopocopStatus`] and
//! leaves a message retrievable via [`ropocop_last_error`] on failure.
//! Strings returned through out-pointers are owned by the caller and must be
//! released with [`ropocop_string_free`]. The generated header lives at
//! `include/ropocop.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use ropocop::analyze::{
    analyze_events, Alarm, AnalysisOutcome, AnalysisReport, AnalyzeOptions, Analyzer,
};
use ropocop::config::{parse_config, DetectorConfig};
use ropocop::depplus::DepMode;
use ropocop::trace::{parse_event_line, parse_header_line, TraceReader};

/// Run the indirect-branch-run detector.
pub const ROPOCOP_DETECTOR_ANTICRA: u32 = 1;
/// Run the image-map target check.
pub const ROPOCOP_DETECTOR_DEPPLUS: u32 = 2;

/// Call outcome. Anything but `Ok` leaves a message in
/// `ropocop_last_error()`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RopocopStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Config = 4,
    Trace = 5,
    InvalidArgument = 6,
    Panic = 7,
}

/// Scan-mode selector for the image-map detector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RopocopDepMode {
    /// Use whatever the config says.
    UseConfig = 0,
    FullScan = 1,
    Watermark = 2,
}

/// Opaque detector configuration.
pub struct RopocopConfig {
    inner: DetectorConfig,
}

/// Opaque incremental analyzer. Feed trace lines in order, starting with the
/// header line; not thread-safe, one analyzer per thread.
pub struct RopocopAnalyzer {
    analyzer: Analyzer,
    opts: AnalyzeOptions,
    alarms: Vec<Alarm>,
    header_seen: bool,
    line: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let cleaned: Vec<u8> = msg.bytes().filter(|&b| b != 0).collect();
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = CString::new(cleaned).expect("nul bytes stripped");
    });
}

fn fail(status: RopocopStatus, msg: impl AsRef<str>) -> RopocopStatus {
    set_last_error(msg.as_ref());
    status
}

fn guard(f: impl FnOnce() -> RopocopStatus) -> RopocopStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(RopocopStatus::Panic, "internal panic"),
    }
}

/// # Safety
/// `ptr` must be null or a valid nul-terminated string.
unsafe fn cstr_arg<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, RopocopStatus> {
    if ptr.is_null() {
        return Err(fail(
            RopocopStatus::NullArgument,
            format!("{what} must not be null"),
        ));
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        fail(
            RopocopStatus::InvalidUtf8,
            format!("{what} is not valid UTF-8"),
        )
    })
}

fn build_opts(
    cfg: &DetectorConfig,
    detectors: u32,
    mode: RopocopDepMode,
) -> Result<AnalyzeOptions, RopocopStatus> {
    if detectors == 0 || detectors & !(ROPOCOP_DETECTOR_ANTICRA | ROPOCOP_DETECTOR_DEPPLUS) != 0 {
        return Err(fail(
            RopocopStatus::InvalidArgument,
            format!("invalid detector mask {detectors:#x}"),
        ));
    }
    Ok(AnalyzeOptions {
        anticra: detectors & ROPOCOP_DETECTOR_ANTICRA != 0,
        depplus: detectors & ROPOCOP_DETECTOR_DEPPLUS != 0,
        depplus_mode: match mode {
            RopocopDepMode::UseConfig => cfg.depplus.mode,
            RopocopDepMode::FullScan => DepMode::FullScan,
            RopocopDepMode::Watermark => DepMode::Watermark,
        },
        fail_fast: false,
    })
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn ropocop_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the last failing call on this thread. Valid until the next
/// failing call; do not free.
#[no_mangle]
pub extern "C" fn ropocop_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Default detector configuration. Free with `ropocop_config_free`.
#[no_mangle]
pub extern "C" fn ropocop_config_default() -> *mut RopocopConfig {
    Box::into_raw(Box::new(RopocopConfig {
        inner: DetectorConfig::default(),
    }))
}

/// Loads a TOML config file.
///
/// # Safety
/// `path` must be a valid nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ropocop_config_load(
    path: *const c_char,
    out: *mut *mut RopocopConfig,
) -> RopocopStatus {
    guard(|| {
        if out.is_null() {
            return fail(RopocopStatus::NullArgument, "out must not be null");
        }
        let path = match cstr_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => return fail(RopocopStatus::Io, format!("reading {path}: {e}")),
        };
        match parse_config(&text) {
            Ok(doc) => {
                *out = Box::into_raw(Box::new(RopocopConfig {
                    inner: doc.detector,
                }));
                RopocopStatus::Ok
            }
            Err(e) => fail(RopocopStatus::Config, format!("parsing {path}: {e}")),
        }
    })
}

/// # Safety
/// `cfg` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ropocop_config_free(cfg: *mut RopocopConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Creates an analyzer. `detectors` is a mask of `ROPOCOP_DETECTOR_*` bits.
///
/// # Safety
/// `cfg` must be a live config handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ropocop_analyzer_new(
    cfg: *const RopocopConfig,
    detectors: u32,
    mode: RopocopDepMode,
    out: *mut *mut RopocopAnalyzer,
) -> RopocopStatus {
    guard(|| {
        if cfg.is_null() || out.is_null() {
            return fail(RopocopStatus::NullArgument, "cfg and out must not be null");
        }
        let cfg = &(*cfg).inner;
        let opts = match build_opts(cfg, detectors, mode) {
            Ok(o) => o,
            Err(s) => return s,
        };
        *out = Box::into_raw(Box::new(RopocopAnalyzer {
            analyzer: Analyzer::new(cfg, opts),
            opts,
            alarms: Vec::new(),
            header_seen: false,
            line: 0,
        }));
        RopocopStatus::Ok
    })
}

/// Feeds one line of a trace, header first. Alarms accumulate on the handle.
///
/// # Safety
/// `analyzer` must be a live analyzer handle; `line` a valid string.
#[no_mangle]
pub unsafe extern "C" fn ropocop_analyzer_feed_line(
    analyzer: *mut RopocopAnalyzer,
    line: *const c_char,
) -> RopocopStatus {
    guard(|| {
        if analyzer.is_null() {
            return fail(RopocopStatus::NullArgument, "analyzer must not be null");
        }
        let text = match cstr_arg(line, "line") {
            Ok(t) => t,
            Err(s) => return s,
        };
        let a = &mut *analyzer;
        a.line += 1;
        let text = text.trim_end_matches(['\n', '\r']);
        if !a.header_seen {
            return match parse_header_line(a.line, text) {
                Ok(()) => {
                    a.header_seen = true;
                    RopocopStatus::Ok
                }
                Err(e) => fail(RopocopStatus::Trace, e.to_string()),
            };
        }
        let event = match parse_event_line(a.line, text) {
            Ok(ev) => ev,
            Err(e) => return fail(RopocopStatus::Trace, e.to_string()),
        };
        match a.analyzer.observe(&event) {
            Ok(alarms) => {
                a.alarms.extend(alarms);
                RopocopStatus::Ok
            }
            Err(e) => fail(RopocopStatus::Trace, e.to_string()),
        }
    })
}

/// # Safety
/// `analyzer` must be a live analyzer handle.
#[no_mangle]
pub unsafe extern "C" fn ropocop_analyzer_alarm_count(analyzer: *const RopocopAnalyzer) -> u64 {
    if analyzer.is_null() {
        return 0;
    }
    (*analyzer).alarms.len() as u64
}

/// Event index of the first alarm, or -1 when clean.
///
/// # Safety
/// `analyzer` must be a live analyzer handle.
#[no_mangle]
pub unsafe extern "C" fn ropocop_analyzer_first_alarm_index(
    analyzer: *const RopocopAnalyzer,
) -> i64 {
    if analyzer.is_null() {
        return -1;
    }
    (*analyzer)
        .alarms
        .first()
        .map_or(-1, |a| a.event_index() as i64)
}

/// # Safety
/// `analyzer` must be a live analyzer handle.
#[no_mangle]
pub unsafe extern "C" fn ropocop_analyzer_events_seen(analyzer: *const RopocopAnalyzer) -> u64 {
    if analyzer.is_null() {
        return 0;
    }
    (*analyzer).analyzer.events_seen()
}

fn report_cstring(trace: &str, opts: &AnalyzeOptions, outcome: &AnalysisOutcome) -> CString {
    let json = AnalysisReport::new(trace, opts, outcome).to_json_pretty();
    CString::new(json).expect("JSON has no interior nul")
}

/// Renders the JSON report for everything fed so far.
///
/// # Safety
/// `analyzer` must be a live handle, `trace_name` a valid string, `out` a
/// valid pointer. Free the result with `ropocop_string_free`.
#[no_mangle]
pub unsafe extern "C" fn ropocop_analyzer_report_json(
    analyzer: *const RopocopAnalyzer,
    trace_name: *const c_char,
    out: *mut *mut c_char,
) -> RopocopStatus {
    guard(|| {
        if analyzer.is_null() || out.is_null() {
            return fail(
                RopocopStatus::NullArgument,
                "analyzer and out must not be null",
            );
        }
        let name = match cstr_arg(trace_name, "trace_name") {
            Ok(n) => n,
            Err(s) => return s,
        };
        let a = &*analyzer;
        let outcome = AnalysisOutcome {
            alarms: a.alarms.clone(),
            events: a.analyzer.events_seen(),
            blocks: a.analyzer.blocks_seen(),
            truncated: false,
        };
        *out = report_cstring(name, &a.opts, &outcome).into_raw();
        RopocopStatus::Ok
    })
}

/// # Safety
/// `analyzer` must come from `ropocop_analyzer_new` and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ropocop_analyzer_free(analyzer: *mut RopocopAnalyzer) {
    if !analyzer.is_null() {
        drop(Box::from_raw(analyzer));
    }
}

/// One-shot analysis of a trace file. On success `out_alarms` holds the
/// alarm count and, when `out_report_json` is non-null, a JSON report the
/// caller frees with `ropocop_string_free`.
///
/// # Safety
/// `cfg` must be a live config handle; `path` a valid string; `out_alarms`
/// valid; `out_report_json` null or valid.
#[no_mangle]
pub unsafe extern "C" fn ropocop_analyze_file(
    cfg: *const RopocopConfig,
    path: *const c_char,
    detectors: u32,
    mode: RopocopDepMode,
    out_alarms: *mut u64,
    out_report_json: *mut *mut c_char,
) -> RopocopStatus {
    guard(|| {
        if cfg.is_null() || out_alarms.is_null() {
            return fail(
                RopocopStatus::NullArgument,
                "cfg and out_alarms must not be null",
            );
        }
        let path = match cstr_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let cfg = &(*cfg).inner;
        let opts = match build_opts(cfg, detectors, mode) {
            Ok(o) => o,
            Err(s) => return s,
        };
        let file = match File::open(Path::new(path)) {
            Ok(f) => f,
            Err(e) => return fail(RopocopStatus::Io, format!("opening {path}: {e}")),
        };
        let reader = TraceReader::new(BufReader::new(file));
        match analyze_events(reader, cfg, opts) {
            Ok(outcome) => {
                *out_alarms = outcome.alarms.len() as u64;
                if !out_report_json.is_null() {
                    *out_report_json = report_cstring(path, &opts, &outcome).into_raw();
                }
                RopocopStatus::Ok
            }
            Err(e) => fail(RopocopStatus::Trace, e.to_string()),
        }
    })
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must have been returned by this library and not freed already.
#[no_mangle]
pub unsafe extern "C" fn ropocop_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    fn cstring(s: &str) -> CString {
        CString::new(s).unwrap()
    }

    fn staged_trace_file(dir: &Path) -> std::path::PathBuf {
        let events = ropocop::synth::generate(&ropocop::GenSpec {
            seed: 5,
            kind: ropocop::GenKind::TwoStaged(ropocop::synth::TwoStagedParams::default()),
        })
        .unwrap();
        let bytes = ropocop::trace::encode_trace(&events).unwrap();
        let path = dir.join("staged.rtrc");
        std::fs::write(&path, bytes).unwrap();
        path
    }

    #[test]
    fn one_shot_file_analysis() {
        let dir = tempfile::tempdir().unwrap();
        let path = staged_trace_file(dir.path());
        let cfg = ropocop_config_default();
        let c_path = cstring(path.to_str().unwrap());

        let mut alarms = u64::MAX;
        let mut report: *mut c_char = ptr::null_mut();
        let status = unsafe {
            ropocop_analyze_file(
                cfg,
                c_path.as_ptr(),
                ROPOCOP_DETECTOR_ANTICRA | ROPOCOP_DETECTOR_DEPPLUS,
                RopocopDepMode::UseConfig,
                &mut alarms,
                &mut report,
            )
        };
        assert_eq!(status, RopocopStatus::Ok);
        assert_eq!(alarms, 1);
        let json = unsafe { CStr::from_ptr(report) }.to_str().unwrap();
        let v: serde_json::Value = serde_json::from_str(json).unwrap();
        assert_eq!(v["schema"], "ropocop-report");
        assert_eq!(v["summary"]["depplus_alarms"], 1);
        unsafe {
            ropocop_string_free(report);
            ropocop_config_free(cfg);
        }
    }

    #[test]
    fn detector_mask_selects_detectors() {
        let dir = tempfile::tempdir().unwrap();
        let path = staged_trace_file(dir.path());
        let cfg = ropocop_config_default();
        let c_path = cstring(path.to_str().unwrap());
        let mut alarms = u64::MAX;
        let status = unsafe {
            ropocop_analyze_file(
                cfg,
                c_path.as_ptr(),
                ROPOCOP_DETECTOR_ANTICRA,
                RopocopDepMode::UseConfig,
                &mut alarms,
                ptr::null_mut(),
            )
        };
        assert_eq!(status, RopocopStatus::Ok);
        assert_eq!(alarms, 0);

        let status = unsafe {
            ropocop_analyze_file(
                cfg,
                c_path.as_ptr(),
                0,
                RopocopDepMode::UseConfig,
                &mut alarms,
                ptr::null_mut(),
            )
        };
        assert_eq!(status, RopocopStatus::InvalidArgument);
        unsafe { ropocop_config_free(cfg) };
    }

    #[test]
    fn line_feeding_matches_file_analysis() {
        let dir = tempfile::tempdir().unwrap();
        let path = staged_trace_file(dir.path());
        let text = std::fs::read_to_string(&path).unwrap();

        let cfg = ropocop_config_default();
        let mut analyzer: *mut RopocopAnalyzer = ptr::null_mut();
        let status = unsafe {
            ropocop_analyzer_new(
                cfg,
                ROPOCOP_DETECTOR_ANTICRA | ROPOCOP_DETECTOR_DEPPLUS,
                RopocopDepMode::FullScan,
                &mut analyzer,
            )
        };
        assert_eq!(status, RopocopStatus::Ok);
        for line in text.lines() {
            let c_line = cstring(line);
            let status = unsafe { ropocop_analyzer_feed_line(analyzer, c_line.as_ptr()) };
            assert_eq!(status, RopocopStatus::Ok);
        }
        unsafe {
            assert_eq!(ropocop_analyzer_alarm_count(analyzer), 1);
            assert!(ropocop_analyzer_first_alarm_index(analyzer) > 0);

            let mut report: *mut c_char = ptr::null_mut();
            let name = cstring("staged.rtrc");
            let status = ropocop_analyzer_report_json(analyzer, name.as_ptr(), &mut report);
            assert_eq!(status, RopocopStatus::Ok);
            let v: serde_json::Value =
                serde_json::from_str(CStr::from_ptr(report).to_str().unwrap()).unwrap();
            assert_eq!(v["summary"]["alarms"], 1);
            ropocop_string_free(report);
            ropocop_analyzer_free(analyzer);
            ropocop_config_free(cfg);
        }
    }

    #[test]
    fn errors_set_the_thread_local_message() {
        let cfg = ropocop_config_default();
        let mut analyzer: *mut RopocopAnalyzer = ptr::null_mut();
        unsafe {
            ropocop_analyzer_new(cfg, 3, RopocopDepMode::UseConfig, &mut analyzer);
            // Missing header first.
            let bad = cstring("{\"ev\":\"alloc\"}");
            let status = ropocop_analyzer_feed_line(analyzer, bad.as_ptr());
            assert_eq!(status, RopocopStatus::Trace);
            let msg = CStr::from_ptr(ropocop_last_error()).to_str().unwrap();
            assert!(msg.contains("line 1"), "{msg}");
            ropocop_analyzer_free(analyzer);

            let mut out: *mut RopocopConfig = ptr::null_mut();
            let missing = cstring("/nonexistent/x.toml");
            let status = ropocop_config_load(missing.as_ptr(), &mut out);
            assert_eq!(status, RopocopStatus::Io);
            ropocop_config_free(cfg);
        }
    }

    #[test]
    fn version_is_a_static_string() {
        let v = unsafe { CStr::from_ptr(ropocop_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}
