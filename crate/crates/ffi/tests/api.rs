//! The C ABI exercised from Rust, plus a C program built against the header.

use std::ffi::{c_char, CStr, CString};
use std::ptr;

use synmirror_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(synm_last_error()) }.to_string_lossy().into_owned()
}

fn take_string(s: *mut c_char) -> String {
    assert!(!s.is_null());
    let out = unsafe { CStr::from_ptr(s) }.to_string_lossy().into_owned();
    unsafe { synm_string_free(s) };
    out
}

fn run(argv: &[&str], tags: &[&str]) -> (SynStatus, *mut SynProfile) {
    let args: Vec<CString> = argv.iter().map(|a| CString::new(*a).unwrap()).collect();
    let ptrs: Vec<*const c_char> = args.iter().map(|a| a.as_ptr()).collect();
    let tags: Vec<CString> = tags.iter().map(|t| CString::new(*t).unwrap()).collect();
    let tag_ptrs: Vec<*const c_char> = tags.iter().map(|t| t.as_ptr()).collect();
    let mut out = ptr::null_mut();
    let st =
        unsafe { synm_profile_run(ptrs.as_ptr(), ptrs.len(), 0.1, true, tag_ptrs.as_ptr(), tag_ptrs.len(), &mut out) };
    (st, out)
}

#[test]
fn profile_store_and_replay() {
    let (st, p) = run(&["sh", "-c", "head -c 1000000 /dev/zero > /dev/null"], &["case=ffi"]);
    assert_eq!(st, SynStatus::Ok, "{}", last_error());
    assert_eq!(last_error(), "");

    let mut totals = SynTotals::default();
    assert_eq!(unsafe { synm_profile_totals(p, &mut totals) }, SynStatus::Ok);
    assert!(totals.runtime > 0.0);

    // Text form round-trips.
    let mut text = ptr::null_mut();
    assert_eq!(unsafe { synm_profile_to_json(p, &mut text) }, SynStatus::Ok);
    let text = CString::new(take_string(text)).unwrap();
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { synm_profile_from_json(text.as_ptr(), &mut back) }, SynStatus::Ok);
    let mut again = SynTotals::default();
    unsafe { synm_profile_totals(back, &mut again) };
    assert_eq!(again, totals);
    assert_eq!(unsafe { synm_profile_sample_count(back) }, unsafe { synm_profile_sample_count(p) });
    unsafe { synm_profile_free(back) };

    // Store, find and load.
    let dir = tempfile::tempdir().unwrap();
    let loc = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut store = ptr::null_mut();
    assert_eq!(unsafe { synm_store_open(loc.as_ptr(), &mut store) }, SynStatus::Ok);
    let mut id = ptr::null_mut();
    assert_eq!(unsafe { synm_store_save(store, p, &mut id) }, SynStatus::Ok);
    let id = CString::new(take_string(id)).unwrap();
    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { synm_store_load(store, id.as_ptr(), &mut loaded) }, SynStatus::Ok);
    unsafe { synm_profile_free(loaded) };

    let cmd = CString::new("sh -c head -c 1000000 /dev/zero > /dev/null").unwrap();
    let tag = CString::new("case=ffi").unwrap();
    let tags = [tag.as_ptr()];
    let (mut count, mut newest) = (0usize, ptr::null_mut());
    assert_eq!(
        unsafe { synm_store_find(store, cmd.as_ptr(), tags.as_ptr(), 1, &mut count, &mut newest) },
        SynStatus::Ok
    );
    assert_eq!(count, 1);
    assert!(!newest.is_null());
    unsafe { synm_profile_free(newest) };
    assert_eq!(unsafe { synm_store_find(store, cmd.as_ptr(), ptr::null(), 0, &mut count, &mut newest) }, SynStatus::Ok);
    assert_eq!(count, 0);
    assert!(newest.is_null());

    let missing = CString::new("0/0").unwrap();
    assert_eq!(unsafe { synm_store_load(store, missing.as_ptr(), &mut loaded) }, SynStatus::NotFound);
    assert!(!last_error().is_empty());
    unsafe { synm_store_free(store) };

    // Replay with a partial configuration.
    let fs = tempfile::tempdir().unwrap();
    let config = CString::new(format!(
        r#"{{"io_block_size_write": 4096, "fs_target": "{}", "calibration_path": "{}/cal.json"}}"#,
        fs.path().display(),
        dir.path().display()
    ))
    .unwrap();
    let mut report = ptr::null_mut();
    assert_eq!(unsafe { synm_emulate(p, config.as_ptr(), &mut report) }, SynStatus::Ok, "{}", last_error());
    let mut tx = -1.0;
    assert_eq!(unsafe { synm_report_tx(report, &mut tx) }, SynStatus::Ok);
    assert!(tx >= 0.0);
    let mut json = ptr::null_mut();
    assert_eq!(unsafe { synm_report_to_json(report, &mut json) }, SynStatus::Ok);
    let v: serde_json::Value = serde_json::from_str(&take_string(json)).unwrap();
    assert_eq!(v["config"]["io_block_size_write"], 4096);
    unsafe { synm_report_free(report) };
    unsafe { synm_profile_free(p) };
}

#[test]
fn errors_are_reported() {
    let (st, p) = run(&["/nonexistent/command"], &[]);
    assert_eq!(st, SynStatus::Launch);
    assert!(p.is_null());
    assert!(last_error().contains("/nonexistent/command"));

    let (st, _) = run(&["true"], &["no-equals-sign"]);
    assert_eq!(st, SynStatus::InvalidArgument);

    let mut out = ptr::null_mut();
    assert_eq!(unsafe { synm_profile_from_json(ptr::null(), &mut out) }, SynStatus::NullArgument);
    let bad = CString::new("{ not a profile").unwrap();
    assert_eq!(unsafe { synm_profile_from_json(bad.as_ptr(), &mut out) }, SynStatus::Parse);

    let (st, p) = run(&["true"], &[]);
    assert_eq!(st, SynStatus::Ok);
    let cfg = CString::new(r#"{"io_block_size_write": "big"}"#).unwrap();
    let mut report = ptr::null_mut();
    assert_eq!(unsafe { synm_emulate(p, cfg.as_ptr(), &mut report) }, SynStatus::InvalidArgument);
    assert!(last_error().contains("config"));
    let cfg = CString::new(r#"{"compute_workers": 0}"#).unwrap();
    assert_eq!(unsafe { synm_emulate(p, cfg.as_ptr(), &mut report) }, SynStatus::InvalidArgument);
    unsafe { synm_profile_free(p) };

    let url = CString::new("mongodb://localhost").unwrap();
    let mut store = ptr::null_mut();
    assert_eq!(unsafe { synm_store_open(url.as_ptr(), &mut store) }, SynStatus::InvalidArgument);

    // Freeing NULL is a no-op.
    unsafe {
        synm_profile_free(ptr::null_mut());
        synm_store_free(ptr::null_mut());
        synm_report_free(ptr::null_mut());
        synm_string_free(ptr::null_mut());
    }
}

#[test]
fn document_backend_limit_is_a_status() {
    let text = {
        let mut p = synmirror::model::Profile::new("big", Default::default(), synmirror::host::detect_system(), 0.1);
        p.series.cpu = (0..synmirror::store::MAX_DOCUMENT_SAMPLES + 1)
            .map(|i| synmirror::model::CpuSample { t: i as f64 * 0.1, ..Default::default() })
            .collect();
        p.recompute();
        CString::new(synmirror::store::encode(&p)).unwrap()
    };
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { synm_profile_from_json(text.as_ptr(), &mut p) }, SynStatus::Ok);
    let url = CString::new("mem://ffi-limit").unwrap();
    let mut store = ptr::null_mut();
    assert_eq!(unsafe { synm_store_open(url.as_ptr(), &mut store) }, SynStatus::Ok);
    let mut id = ptr::null_mut();
    assert_eq!(unsafe { synm_store_save(store, p, &mut id) }, SynStatus::TooLarge);
    assert!(id.is_null());
    assert!(last_error().contains("file backend"));
    unsafe {
        synm_store_free(store);
        synm_profile_free(p);
    }
}

#[test]
fn formulas() {
    let (mut v, mut degenerate) = (-1.0, false);
    assert_eq!(unsafe { synm_efficiency(60, 30, 10, &mut v, &mut degenerate) }, SynStatus::Ok);
    assert_eq!(v, 0.6);
    assert!(!degenerate);
    assert_eq!(unsafe { synm_efficiency(0, 0, 0, &mut v, &mut degenerate) }, SynStatus::Ok);
    assert_eq!(v, 0.0);
    assert!(degenerate);
    assert_eq!(unsafe { synm_utilization(2_000_000_000, 1.0, 2_000_000_000, 2, &mut v) }, SynStatus::Ok);
    assert_eq!(v, 0.5);
    assert_eq!(unsafe { synm_utilization(1, 0.0, 1, 1, &mut v) }, SynStatus::InvalidArgument);
    assert_eq!(unsafe { synm_efficiency(1, 1, 1, ptr::null_mut(), ptr::null_mut()) }, SynStatus::NullArgument);
    assert!(!unsafe { CStr::from_ptr(synm_version()) }.to_bytes().is_empty());
}

const C_SMOKE: &str = r#"
#include <stdio.h>
#include "synmirror.h"

int main(void) {
    const char *argv[] = {"true"};
    SynProfile *p = NULL;
    if (synm_profile_run(argv, 1, 0.1, true, NULL, 0, &p) != SYN_STATUS_OK) {
        fprintf(stderr, "%s\n", synm_last_error());
        return 1;
    }
    SynTotals t;
    if (synm_profile_totals(p, &t) != SYN_STATUS_OK || t.runtime <= 0.0) return 2;
    double e = 0.0;
    bool degenerate = false;
    if (synm_efficiency(3, 1, 0, &e, &degenerate) != SYN_STATUS_OK || e != 0.75) return 3;
    char *json = NULL;
    if (synm_profile_to_json(p, &json) != SYN_STATUS_OK) return 4;
    synm_string_free(json);
    synm_profile_free(p);
    printf("ok %s\n", synm_version());
    return 0;
}
"#;

/// Compiles and runs a C program against the generated header and the shared
/// library. Skipped when no C compiler or shared library is present.
#[test]
fn c_program_links_against_the_header() {
    let crate_dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    let header_dir = crate_dir.join("include");
    assert!(header_dir.join("synmirror.h").exists(), "header not generated");
    // Test binaries live in target/<profile>/deps; the library one level up.
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().and_then(|d| d.parent()).unwrap().to_path_buf();
    if !lib_dir.join("libsynmirror_ffi.so").exists() {
        eprintln!("shared library not built; skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(&src, C_SMOKE).unwrap();
    let bin = dir.path().join("smoke");
    let built = std::process::Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg(&src)
        .arg("-I")
        .arg(&header_dir)
        .arg("-L")
        .arg(&lib_dir)
        .arg(format!("-Wl,-rpath,{}", lib_dir.display()))
        .arg("-lsynmirror_ffi")
        .arg("-o")
        .arg(&bin)
        .status();
    match built {
        Ok(s) => assert!(s.success(), "C smoke program failed to compile"),
        Err(_) => {
            eprintln!("no C compiler; skipping");
            return;
        }
    }
    let out = std::process::Command::new(&bin).env("SYNMIRROR_FALLBACK", "1").output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
