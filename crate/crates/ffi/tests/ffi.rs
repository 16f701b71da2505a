use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use prefelicit::model::Response;
use prefelicit::session::{Session, SessionConfig};
use prefelicit_ffi::*;

const FAST: &str = r#"{"dims":2,"mh":{"m_samples":600,"burn_in":100},"mi":{"m_outer":24,"m_inner":4,"n_candidates":4},"stop":{"max_steps":5}}"#;

fn new_session(json: &str, seed: u64) -> *mut PeSession {
    let cfg = CString::new(json).unwrap();
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { pe_session_new_with_config(cfg.as_ptr(), seed, &mut s) }, PeStatus::Ok);
    assert!(!s.is_null());
    s
}

fn last_error() -> String {
    let p = pe_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn lifecycle_matches_the_engine() {
    let s = new_session(FAST, 21);
    let mut responses = Vec::new();
    let (mut x_ref, mut x_alt) = ([0.0; 2], [0.0; 2]);
    let mut step = 0usize;
    let mut status = PeSessionStatus::AwaitingResponse;
    unsafe {
        let mut rsu = 0.0;
        assert_eq!(pe_session_rsu(s, &mut rsu), PeStatus::InvalidState);
        let mut theta = [0.0; 2];
        assert_eq!(pe_session_estimate(s, theta.as_mut_ptr(), ptr::null_mut(), 2), PeStatus::InvalidState);
        while status == PeSessionStatus::AwaitingResponse {
            assert_eq!(pe_session_step(s, &mut step), PeStatus::Ok);
            assert_eq!(step, responses.len() + 1);
            assert_eq!(pe_session_current_trial(s, x_ref.as_mut_ptr(), x_alt.as_mut_ptr(), 2), PeStatus::Ok);
            assert!(x_ref.iter().chain(&x_alt).all(|v| (0.0..=1.0).contains(v)));
            let r = u8::from(x_alt[1] > x_ref[1]);
            assert_eq!(pe_session_submit(s, r), PeStatus::Ok);
            responses.push(Response::from_bit(r).unwrap());
            assert_eq!(pe_session_status(s, &mut status), PeStatus::Ok);
        }
        assert_eq!(status, PeSessionStatus::MaxStepsReached);
        assert_eq!(pe_session_current_trial(s, x_ref.as_mut_ptr(), x_alt.as_mut_ptr(), 2), PeStatus::InvalidState);
        assert!(last_error().contains("finished"));

        let (mut theta, mut lambda) = ([0.0; 2], [0.0; 2]);
        assert_eq!(pe_session_estimate(s, theta.as_mut_ptr(), lambda.as_mut_ptr(), 2), PeStatus::Ok);
        assert_eq!(pe_session_rsu(s, &mut rsu), PeStatus::Ok);

        let cfg: SessionConfig = serde_json::from_str(FAST).unwrap();
        let direct = Session::replay(cfg, 21, &responses).unwrap();
        let est = direct.state.estimate().unwrap();
        assert_eq!(theta.to_vec(), est.theta);
        assert_eq!(lambda.to_vec(), est.lambda);
        assert_eq!(rsu, direct.state.rsu().unwrap());

        let mut json = ptr::null_mut();
        assert_eq!(pe_session_to_json(s, &mut json), PeStatus::Ok);
        let restored: Session = serde_json::from_str(CStr::from_ptr(json).to_str().unwrap()).unwrap();
        assert_eq!(restored, direct);
        pe_string_free(json);
        pe_session_free(s);
    }
}

#[test]
fn argument_errors_are_reported() {
    unsafe {
        let mut s = ptr::null_mut();
        assert_eq!(pe_session_new(0, 1, &mut s), PeStatus::InvalidArgument);
        assert!(s.is_null());
        assert!(last_error().contains("dims"));
        assert_eq!(pe_session_new(2, 1, ptr::null_mut()), PeStatus::InvalidArgument);

        let bad = CString::new("{not json").unwrap();
        assert_eq!(pe_session_new_with_config(bad.as_ptr(), 1, &mut s), PeStatus::InvalidArgument);
        assert_eq!(pe_session_new_with_config(ptr::null(), 1, &mut s), PeStatus::InvalidArgument);

        let s = new_session(FAST, 3);
        assert!(pe_last_error_message().is_null());
        let mut buf = [0.0; 3];
        let mut other = [0.0; 3];
        assert_eq!(pe_session_current_trial(s, buf.as_mut_ptr(), other.as_mut_ptr(), 3), PeStatus::InvalidArgument);
        assert_eq!(pe_session_current_trial(s, ptr::null_mut(), other.as_mut_ptr(), 2), PeStatus::InvalidArgument);
        assert_eq!(pe_session_submit(s, 2), PeStatus::InvalidArgument);
        let mut step = 0;
        assert_eq!(pe_session_step(s, &mut step), PeStatus::Ok);
        assert_eq!(step, 1);
        assert_eq!(pe_session_step(ptr::null(), &mut step), PeStatus::InvalidArgument);
        pe_session_free(s);
        pe_session_free(ptr::null_mut());
    }
}

#[test]
fn default_constructor_uses_default_settings() {
    unsafe {
        let mut s = ptr::null_mut();
        assert_eq!(pe_session_new(3, 9, &mut s), PeStatus::Ok);
        let mut d = 0;
        assert_eq!(pe_session_dims(s, &mut d), PeStatus::Ok);
        assert_eq!(d, 3);
        let mut json = ptr::null_mut();
        assert_eq!(pe_session_to_json(s, &mut json), PeStatus::Ok);
        let restored: Session = serde_json::from_str(CStr::from_ptr(json).to_str().unwrap()).unwrap();
        assert_eq!(restored, Session::new(SessionConfig { dims: 3, ..SessionConfig::default() }, 9).unwrap());
        pe_string_free(json);
        pe_session_free(s);
    }
}

#[test]
fn header_declares_every_entry_point() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/prefelicit.h")).unwrap();
    for name in [
        "pe_session_new",
        "pe_session_new_with_config",
        "pe_session_free",
        "pe_session_dims",
        "pe_session_current_trial",
        "pe_session_submit",
        "pe_session_estimate",
        "pe_session_rsu",
        "pe_session_status",
        "pe_session_step",
        "pe_session_to_json",
        "pe_string_free",
        "pe_last_error_message",
        "typedef struct PeSession PeSession",
        "PE_STATUS_INVALID_STATE = 2",
        "PE_SESSION_STATUS_MAX_STEPS_REACHED = 2",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

/// Directory holding the built cdylib, next to this test executable.
fn lib_dir() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let dir = exe.parent()?.parent()?.to_path_buf();
    let name = format!("{}prefelicit_ffi{}", std::env::consts::DLL_PREFIX, std::env::consts::DLL_SUFFIX);
    dir.join(&name).exists().then_some(dir)
}

#[test]
fn c_program_drives_a_session() {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler");
        return;
    }
    let lib = lib_dir().expect("cdylib next to the test binary");
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let out = tempfile::tempdir().unwrap();
    let exe = out.path().join("smoke");
    let status = Command::new(&cc)
        .arg(root.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(root.join("include"))
        .arg("-L")
        .arg(&lib)
        .args(["-lprefelicit_ffi", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let run = Command::new(&exe).env("LD_LIBRARY_PATH", &lib).env("DYLD_LIBRARY_PATH", &lib).output().unwrap();
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(run.status.success(), "{stdout} {}", String::from_utf8_lossy(&run.stderr));
    assert!(stdout.starts_with("answered=4 status=2"));
}
