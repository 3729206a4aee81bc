//! C ABI for profiling, storing and replaying profiles.
//!
//! Every fallible function returns a [`SynStatus`] and writes its result
//! through an out-pointer. On failure, [`synm_last_error`] describes the most
//! recent error on the calling thread. Objects are opaque handles released
//! with their matching `*_free` function; strings returned to the caller are
//! released with [`synm_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use synmirror::emulator::{self, AtomConfig, EmulationError, EmulationReport};
use synmirror::model::{self, Profile, ProfileKey, Tags};
use synmirror::profiler::{self, ProfileError, ProfilerConfig};
use synmirror::store::{self, Store, StoreError, StoreLocation};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullArgument = 1,
    /// An argument was out of range or not valid UTF-8/JSON.
    InvalidArgument = 2,
    Io = 3,
    /// A stored or supplied profile could not be parsed.
    Parse = 4,
    NotFound = 5,
    /// The profile exceeds the document backend's limits.
    TooLarge = 6,
    /// The command to profile could not be started.
    Launch = 7,
    /// Hardware counters are unavailable and fallback was not allowed.
    Capability = 8,
    Emulation = 9,
    /// A Rust panic was caught at the boundary.
    Panic = 10,
}

/// A profile: header, time series, totals and derived metrics.
pub struct SynProfile(Profile);

/// An open profile store.
pub struct SynStore(Store);

/// The outcome of replaying a profile.
pub struct SynReport(EmulationReport);

/// Whole-run totals of a profile.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SynTotals {
    pub runtime: f64,
    pub cycles_used: u64,
    pub instructions: u64,
    pub cycles_stalled_frontend: u64,
    pub cycles_stalled_backend: u64,
    pub bytes_read: u64,
    pub bytes_written: u64,
    pub mem_allocated: u64,
    pub mem_freed: u64,
    pub rss_max: u64,
    pub peak: u64,
    pub efficiency: f64,
    pub utilization: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(SynStatus, String);

type FfiResult<T> = Result<T, Failure>;

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

/// Runs `f`, converting errors and panics to a status and recording the
/// message.
fn guard(f: impl FnOnce() -> FfiResult<()>) -> SynStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SynStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SynStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(SynStatus::NullArgument, format!("{what} is NULL"))
}

/// # Safety
/// `s` is NULL or a valid NUL-terminated string.
unsafe fn str_arg<'a>(s: *const c_char, what: &str) -> FfiResult<&'a str> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s).to_str().map_err(|_| Failure(SynStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

/// # Safety
/// `items` is NULL (with `len == 0`) or points to `len` valid strings.
unsafe fn str_array<'a>(items: *const *const c_char, len: usize, what: &str) -> FfiResult<Vec<&'a str>> {
    if len == 0 {
        return Ok(Vec::new());
    }
    if items.is_null() {
        return Err(null(what));
    }
    std::slice::from_raw_parts(items, len).iter().map(|&s| str_arg(s, what)).collect()
}

/// # Safety
/// `out` is NULL or valid for a write.
unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> FfiResult<()> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).map_or(ptr::null_mut(), CString::into_raw)
}

/// # Safety
/// `p` is NULL or a live handle created by this library.
unsafe fn handle<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    p.as_ref().ok_or_else(|| null(what))
}

fn store_failure(e: StoreError) -> Failure {
    let status = match &e {
        StoreError::Io { .. } => SynStatus::Io,
        StoreError::Parse { .. } | StoreError::Version { .. } => SynStatus::Parse,
        StoreError::NotFound(_) => SynStatus::NotFound,
        StoreError::TooLarge { .. } => SynStatus::TooLarge,
        StoreError::UnsupportedUrl(_) => SynStatus::InvalidArgument,
    };
    Failure(status, e.to_string())
}

fn profile_failure(e: ProfileError) -> Failure {
    let status = match &e {
        ProfileError::InvalidConfig(_) => SynStatus::InvalidArgument,
        ProfileError::Launch(_) => SynStatus::Launch,
        ProfileError::Capability(_) => SynStatus::Capability,
        ProfileError::Io(_) => SynStatus::Io,
    };
    Failure(status, e.to_string())
}

fn emulation_failure(e: EmulationError) -> Failure {
    let status = match &e {
        EmulationError::Config(_) => SynStatus::InvalidArgument,
        EmulationError::FsTarget { .. } => SynStatus::Io,
        _ => SynStatus::Emulation,
    };
    Failure(status, e.to_string())
}

fn parse_tags(items: &[&str]) -> FfiResult<Tags> {
    items.iter().map(|t| model::parse_tag(t).map_err(|e| Failure(SynStatus::InvalidArgument, e.to_string()))).collect()
}

/// Message of the last failed call on this thread, or an empty string. The
/// pointer stays valid until the next call into this library on the same
/// thread.
#[no_mangle]
pub extern "C" fn synm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn synm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Frees a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` is NULL or a string returned by this library that was not yet freed.
#[no_mangle]
pub unsafe extern "C" fn synm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Profiles `argv[0..argc]` until it exits, sampling every `period` seconds
/// (0 selects the default). With `fallback` set, cycles are estimated from
/// CPU time when hardware counters are unavailable. `tags` holds `ntags`
/// `key=value` strings.
///
/// # Safety
/// `argv` points to `argc` valid strings, `tags` to `ntags` valid strings
/// (or is NULL when `ntags` is 0), and `out` is valid for a write.
#[no_mangle]
pub unsafe extern "C" fn synm_profile_run(
    argv: *const *const c_char,
    argc: usize,
    period: f64,
    fallback: bool,
    tags: *const *const c_char,
    ntags: usize,
    out: *mut *mut SynProfile,
) -> SynStatus {
    guard(|| {
        let argv: Vec<String> = str_array(argv, argc, "argv")?.into_iter().map(String::from).collect();
        let mut config = ProfilerConfig { fallback_counters: fallback, ..Default::default() };
        if period != 0.0 {
            config.sample_period = period;
        }
        config.tags = parse_tags(&str_array(tags, ntags, "tags")?)?;
        let p = profiler::profile(&argv, config).map_err(profile_failure)?;
        write_out(out, Box::into_raw(Box::new(SynProfile(p))), "out")
    })
}

/// Parses a profile from its stored text form.
///
/// # Safety
/// `text` is a valid string and `out` is valid for a write.
#[no_mangle]
pub unsafe extern "C" fn synm_profile_from_json(text: *const c_char, out: *mut *mut SynProfile) -> SynStatus {
    guard(|| {
        let p = store::decode(str_arg(text, "text")?.as_bytes(), "<memory>").map_err(store_failure)?;
        write_out(out, Box::into_raw(Box::new(SynProfile(p))), "out")
    })
}

/// Reads a profile file.
///
/// # Safety
/// `path` is a valid string and `out` is valid for a write.
#[no_mangle]
pub unsafe extern "C" fn synm_profile_load_file(path: *const c_char, out: *mut *mut SynProfile) -> SynStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let text = std::fs::read(path).map_err(|e| Failure(SynStatus::Io, format!("{path}: {e}")))?;
        let p = store::decode(&text, path).map_err(store_failure)?;
        write_out(out, Box::into_raw(Box::new(SynProfile(p))), "out")
    })
}

/// Serializes a profile to its stored text form; free with
/// [`synm_string_free`].
///
/// # Safety
/// `profile` is a live handle and `out` is valid for a write.
#[no_mangle]
pub unsafe extern "C" fn synm_profile_to_json(profile: *const SynProfile, out: *mut *mut c_char) -> SynStatus {
    guard(|| {
        let p = handle(profile, "profile")?;
        let text = String::from_utf8(store::encode(&p.0)).expect("encoded profiles are UTF-8");
        write_out(out, into_c_string(text), "out")
    })
}

/// Copies the profile's totals and derived metrics into `out`.
///
/// # Safety
/// `profile` is a live handle and `out` is valid for a write.
#[no_mangle]
pub unsafe extern "C" fn synm_profile_totals(profile: *const SynProfile, out: *mut SynTotals) -> SynStatus {
    guard(|| {
        let p = &handle(profile, "profile")?.0;
        let t = &p.totals;
        let totals = SynTotals {
            runtime: p.runtime,
            cycles_used: t.cycles_used,
            instructions: t.instructions,
            cycles_stalled_frontend: t.cycles_stalled_frontend,
            cycles_stalled_backend: t.cycles_stalled_backend,
            bytes_read: t.bytes_read,
            bytes_written: t.bytes_written,
            mem_allocated: t.mem_allocated,
            mem_freed: t.mem_freed,
            rss_max: t.rss_max,
            peak: t.peak,
            efficiency: p.derived.efficiency,
            utilization: p.derived.utilization,
        };
        write_out(out, totals, "out")
    })
}

/// Number of samples across all series.
///
/// # Safety
/// `profile` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn synm_profile_sample_count(profile: *const SynProfile) -> usize {
    profile.as_ref().map_or(0, |p| p.0.sample_count())
}

/// Releases a profile. NULL is ignored.
///
/// # Safety
/// `profile` is NULL or a live handle that is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn synm_profile_free(profile: *mut SynProfile) {
    if !profile.is_null() {
        drop(Box::from_raw(profile));
    }
}

/// `cycles_used / (cycles_used + stalled_frontend + stalled_backend)`.
/// All-zero input yields 0 with `*degenerate` set.
///
/// # Safety
/// `out` is valid for a write; `degenerate` is NULL or valid for a write.
#[no_mangle]
pub unsafe extern "C" fn synm_efficiency(
    cycles_used: u64,
    stalled_frontend: u64,
    stalled_backend: u64,
    out: *mut f64,
    degenerate: *mut bool,
) -> SynStatus {
    guard(|| {
        let e = model::efficiency(cycles_used, stalled_frontend, stalled_backend);
        if !degenerate.is_null() {
            degenerate.write(e.degenerate);
        }
        write_out(out, e.value, "out")
    })
}

/// `cycles_used / (max_freq * elapsed * cores)`, not clamped to 1.
///
/// # Safety
/// `out` is valid for a write.
#[no_mangle]
pub unsafe extern "C" fn synm_utilization(
    cycles_used: u64,
    elapsed: f64,
    max_freq: u64,
    cores: u32,
    out: *mut f64,
) -> SynStatus {
    guard(|| {
        let u = model::utilization(cycles_used, elapsed, max_freq, cores)
            .map_err(|e| Failure(SynStatus::InvalidArgument, e.to_string()))?;
        write_out(out, u, "out")
    })
}

/// Opens a store: a directory path, a `mem://name` URL, or NULL for the
/// location configured in the environment.
///
/// # Safety
/// `location` is NULL or a valid string, and `out` is valid for a write.
#[no_mangle]
pub unsafe extern "C" fn synm_store_open(location: *const c_char, out: *mut *mut SynStore) -> SynStatus {
    guard(|| {
        let loc = if location.is_null() {
            StoreLocation::from_env()
        } else {
            StoreLocation::parse(str_arg(location, "location")?)
        };
        let s = Store::open(&loc).map_err(store_failure)?;
        write_out(out, Box::into_raw(Box::new(SynStore(s))), "out")
    })
}

/// Saves a profile; `*id` receives its new id (free with
/// [`synm_string_free`]).
///
/// # Safety
/// `store` and `profile` are live handles and `id` is valid for a write.
#[no_mangle]
pub unsafe extern "C" fn synm_store_save(
    store: *const SynStore,
    profile: *const SynProfile,
    id: *mut *mut c_char,
) -> SynStatus {
    guard(|| {
        let s = handle(store, "store")?;
        let p = handle(profile, "profile")?;
        let new_id = s.0.save(&p.0).map_err(store_failure)?;
        write_out(id, into_c_string(new_id), "id")
    })
}

/// Loads a profile by id.
///
/// # Safety
/// `store` is a live handle, `id` a valid string and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn synm_store_load(
    store: *const SynStore,
    id: *const c_char,
    out: *mut *mut SynProfile,
) -> SynStatus {
    guard(|| {
        let s = handle(store, "store")?;
        let p = s.0.load(str_arg(id, "id")?).map_err(store_failure)?;
        write_out(out, Box::into_raw(Box::new(SynProfile(p))), "out")
    })
}

/// Looks up profiles of `command` with exactly the given tags. `*count`
/// receives the number of matches; `*newest` (if not NULL) receives the most
/// recent one, or NULL when nothing matches. No match is not an error.
///
/// # Safety
/// `store` is a live handle, `command` a valid string, `tags` points to
/// `ntags` valid strings (or is NULL when `ntags` is 0), `count` is valid
/// for a write and `newest` is NULL or valid for a write.
#[no_mangle]
pub unsafe extern "C" fn synm_store_find(
    store: *const SynStore,
    command: *const c_char,
    tags: *const *const c_char,
    ntags: usize,
    count: *mut usize,
    newest: *mut *mut SynProfile,
) -> SynStatus {
    guard(|| {
        let s = handle(store, "store")?;
        let key = ProfileKey::new(str_arg(command, "command")?, parse_tags(&str_array(tags, ntags, "tags")?)?);
        let found = s.0.find(&key).map_err(store_failure)?;
        write_out(count, found.len(), "count")?;
        if !newest.is_null() {
            let first = found.into_iter().next().map_or(ptr::null_mut(), |p| Box::into_raw(Box::new(SynProfile(p))));
            newest.write(first);
        }
        Ok(())
    })
}

/// Closes a store. NULL is ignored.
///
/// # Safety
/// `store` is NULL or a live handle that is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn synm_store_free(store: *mut SynStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// Replays a profile. `config_json` is NULL for the defaults or a JSON
/// object whose fields override them (for example
/// `{"io_block_size_write": 4096}`).
///
/// # Safety
/// `profile` is a live handle, `config_json` is NULL or a valid string, and
/// `out` is valid for a write.
#[no_mangle]
pub unsafe extern "C" fn synm_emulate(
    profile: *const SynProfile,
    config_json: *const c_char,
    out: *mut *mut SynReport,
) -> SynStatus {
    guard(|| {
        let p = handle(profile, "profile")?;
        let config: AtomConfig = if config_json.is_null() {
            AtomConfig::default()
        } else {
            serde_json::from_str(str_arg(config_json, "config_json")?)
                .map_err(|e| Failure(SynStatus::InvalidArgument, format!("bad emulation config: {e}")))?
        };
        let r = emulator::emulate(&p.0, &config).map_err(emulation_failure)?;
        write_out(out, Box::into_raw(Box::new(SynReport(r))), "out")
    })
}

/// Wall-clock seconds of the replay, from the first sample's start to the
/// last sample's end.
///
/// # Safety
/// `report` is a live handle and `out` is valid for a write.
#[no_mangle]
pub unsafe extern "C" fn synm_report_tx(report: *const SynReport, out: *mut f64) -> SynStatus {
    guard(|| write_out(out, handle(report, "report")?.0.tx, "out"))
}

/// Serializes a report to JSON; free with [`synm_string_free`].
///
/// # Safety
/// `report` is a live handle and `out` is valid for a write.
#[no_mangle]
pub unsafe extern "C" fn synm_report_to_json(report: *const SynReport, out: *mut *mut c_char) -> SynStatus {
    guard(|| {
        let r = handle(report, "report")?;
        write_out(out, into_c_string(r.0.to_json()), "out")
    })
}

/// Releases a report. NULL is ignored.
///
/// # Safety
/// `report` is NULL or a live handle that is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn synm_report_free(report: *mut SynReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}
