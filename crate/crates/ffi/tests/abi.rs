use std::ffi::{CStr, CString};
use std::ptr;

use upsilon_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(upsilon_last_error()) }.to_string_lossy().into_owned()
}

fn program(src: &str) -> *mut UpsilonProgram {
    let src = CString::new(src).unwrap();
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { upsilon_program_from_mnemonics(src.as_ptr(), &mut p) }, UpsilonStatus::Ok);
    p
}

#[test]
fn program_properties() {
    let p = program("+.");
    let mut bits = 0;
    let mut w = 0.0;
    let mut text = ptr::null_mut();
    unsafe {
        assert_eq!(upsilon_program_length_bits(p, &mut bits), UpsilonStatus::Ok);
        assert_eq!(upsilon_program_prior_weight(p, &mut w), UpsilonStatus::Ok);
        assert_eq!(upsilon_program_describe(p, &mut text), UpsilonStatus::Ok);
        assert_eq!(CStr::from_ptr(text).to_str().unwrap(), "len=11 hex=6500 # +.");
        upsilon_string_free(text);
        upsilon_program_free(p);
    }
    assert_eq!(bits, 11);
    assert_eq!(w, 2f64.powi(-11));
}

#[test]
fn fixture_round_trip() {
    let line = CString::new("len=11 hex=6500").unwrap();
    let mut p = ptr::null_mut();
    let mut bits = 0;
    unsafe {
        assert_eq!(upsilon_program_from_fixture(line.as_ptr(), &mut p), UpsilonStatus::Ok);
        assert_eq!(upsilon_program_length_bits(p, &mut bits), UpsilonStatus::Ok);
        upsilon_program_free(p);
    }
    assert_eq!(bits, 11);
    let bad = CString::new("len=3 hex=").unwrap();
    assert_eq!(unsafe { upsilon_program_from_fixture(bad.as_ptr(), &mut p) }, UpsilonStatus::InvalidArgument);
}

#[test]
fn invalid_program_sets_error() {
    let src = CString::new("[[").unwrap();
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { upsilon_program_from_mnemonics(src.as_ptr(), &mut p) }, UpsilonStatus::InvalidProgram);
    assert!(p.is_null());
    assert!(!last_error().is_empty());
    assert_eq!(unsafe { upsilon_program_from_mnemonics(ptr::null(), &mut p) }, UpsilonStatus::NullPointer);
}

#[test]
fn process_steps() {
    // writes a reward of 1/255 once, then halts
    let p = program(">+<.");
    let mut e = ptr::null_mut();
    let (mut o, mut r, mut halted) = (9, 9, true);
    unsafe {
        assert_eq!(upsilon_process_new(p, 1, &mut e), UpsilonStatus::Ok);
        assert_eq!(upsilon_process_step(e, 0, &mut o, &mut r), UpsilonStatus::InvalidArgument);
        assert_eq!(upsilon_process_step(e, -1, &mut o, &mut r), UpsilonStatus::Ok);
        assert_eq!((o, r), (0, 1));
        assert_eq!(upsilon_process_step(e, 5, &mut o, &mut r), UpsilonStatus::InvalidArgument);
        assert_eq!(upsilon_process_step(e, 1, &mut o, &mut r), UpsilonStatus::Ok);
        assert_eq!((o, r), (0, 0));
        assert_eq!(upsilon_process_is_halted(e, &mut halted), UpsilonStatus::Ok);
        upsilon_process_free(e);
        upsilon_program_free(p);
    }
    assert!(halted);
}

#[test]
fn run_config_returns_report() {
    let cfg = CString::new("seed = 1\nagents = [\"random\"]\nenvironment = \"constant\"\nconstant_schedule = [255]\nepisodes = 3").unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { upsilon_run_config(cfg.as_ptr(), &mut out) }, UpsilonStatus::Ok);
    let json: serde_json::Value = serde_json::from_str(unsafe { CStr::from_ptr(out) }.to_str().unwrap()).unwrap();
    unsafe { upsilon_string_free(out) };
    assert_eq!(json["agents"][0]["upsilon"], 1.0);

    let bad = CString::new("seed = 1\nagents = [\"nobody\"]").unwrap();
    assert_eq!(unsafe { upsilon_run_config(bad.as_ptr(), &mut out) }, UpsilonStatus::InvalidConfig);
    assert!(last_error().contains("nobody"));
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(upsilon_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
