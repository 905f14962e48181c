use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use phaseflow_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(pf_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

fn vdp_trajectory(steps: usize) -> *mut PfTrajectory {
    let sys = CString::new(r#"{"name":"vdp","mu":2.0}"#).unwrap();
    let mut t = ptr::null_mut();
    let st = unsafe { pf_trajectory_generate(sys.as_ptr(), [1.0, 1.0].as_ptr(), 2, 0.1, steps, &mut t) };
    assert_eq!(st, PfStatus::Ok, "{}", last_error());
    t
}

#[test]
fn targets_match_closed_forms() {
    let mut out = [0.0; 2];
    assert_eq!(unsafe { pf_vdp_target([1.0, 1.0].as_ptr(), 2.0, out.as_mut_ptr()) }, PfStatus::Ok);
    assert_eq!(out, [1.0, -1.0]);
    assert_eq!(unsafe { pf_yg_target([0.0, 0.0].as_ptr(), out.as_mut_ptr()) }, PfStatus::Ok);
    assert_eq!(out, [2.5, 9.2]);
    assert_eq!(unsafe { pf_vdp_target(ptr::null(), 2.0, out.as_mut_ptr()) }, PfStatus::NullPointer);
    assert!(last_error().contains("null"));
}

#[test]
fn trajectory_round_trip_through_files() {
    let t = vdp_trajectory(399);
    let (mut len, mut dim, mut dt) = (0usize, 0usize, 0.0);
    assert_eq!(unsafe { pf_trajectory_shape(t, &mut len, &mut dim, &mut dt) }, PfStatus::Ok);
    assert_eq!((len, dim, dt), (400, 2, 0.1));

    let mut small = vec![0.0; 10];
    assert_eq!(
        unsafe { pf_trajectory_copy_states(t, small.as_mut_ptr(), small.len()) },
        PfStatus::BufferTooSmall
    );
    let mut states = vec![0.0; len * dim];
    assert_eq!(unsafe { pf_trajectory_copy_states(t, states.as_mut_ptr(), states.len()) }, PfStatus::Ok);
    assert_eq!(&states[..4], &[1.0, 1.0, 1.1, 0.9]);

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("t.csv").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { pf_trajectory_save(t, path.as_ptr()) }, PfStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { pf_trajectory_load(path.as_ptr(), &mut back) }, PfStatus::Ok);
    let mut again = vec![0.0; len * dim];
    unsafe { pf_trajectory_copy_states(back, again.as_mut_ptr(), again.len()) };
    assert_eq!(states, again);

    let missing = CString::new(dir.path().join("none.csv").to_str().unwrap()).unwrap();
    let mut none = ptr::null_mut();
    assert_eq!(unsafe { pf_trajectory_load(missing.as_ptr(), &mut none) }, PfStatus::Parse);
    assert!(none.is_null());
    unsafe {
        pf_trajectory_free(t);
        pf_trajectory_free(back);
        pf_trajectory_free(ptr::null_mut());
    }
}

#[test]
fn sindy_model_through_handles() {
    let t = vdp_trajectory(399);
    let mut m = ptr::null_mut();
    let trajs = [t as *const PfTrajectory];
    assert_eq!(unsafe { pf_sindy_fit(trajs.as_ptr(), 1, 3, 2e-4, &mut m) }, PfStatus::Ok);
    let mut dim = 0;
    unsafe { pf_model_dim(m, &mut dim) };
    assert_eq!(dim, 2);
    let mut y = [0.0; 2];
    assert_eq!(unsafe { pf_model_predict(m, [1.0, 1.0].as_ptr(), y.as_mut_ptr()) }, PfStatus::Ok);
    assert!((y[0] - 1.0).abs() < 1e-6 && (y[1] + 1.0).abs() < 1e-6);
    let mut jac = [0.0; 4];
    assert_eq!(unsafe { pf_model_jacobian(m, [0.5, -1.0].as_ptr(), jac.as_mut_ptr()) }, PfStatus::Ok);
    // d/dx1 of mu(1-x1^2)x2 - x1 at (0.5,-1) is -2 mu x1 x2 - 1 = 1.
    assert!((jac[2] - 1.0).abs() < 1e-6);

    let mut r = ptr::null_mut();
    assert_eq!(unsafe { pf_model_rollout(m, [1.0, 1.0].as_ptr(), 0.1, 50, &mut r) }, PfStatus::Ok);
    let mut len = 0;
    unsafe { pf_trajectory_shape(r, &mut len, ptr::null_mut(), ptr::null_mut()) };
    assert_eq!(len, 51);

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("s.json").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { pf_model_save(m, path.as_ptr()) }, PfStatus::Ok);
    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { pf_model_load(path.as_ptr(), &mut loaded) }, PfStatus::Ok);
    let mut y2 = [0.0; 2];
    unsafe { pf_model_predict(loaded, [1.0, 1.0].as_ptr(), y2.as_mut_ptr()) };
    assert_eq!(y, y2);
    unsafe {
        pf_model_free(m);
        pf_model_free(loaded);
        pf_trajectory_free(r);
        pf_trajectory_free(t);
    }
}

#[test]
fn network_training_and_bad_config() {
    let t = vdp_trajectory(199);
    let trajs = [t as *const PfTrajectory];
    let bad = CString::new(r#"{"layer_sizes":[2,4,2],"activation":{"kind":"tanh"},"bogus":1}"#).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { pf_model_train(trajs.as_ptr(), 1, bad.as_ptr(), &mut m) }, PfStatus::Config);
    assert!(m.is_null());

    let cfg = CString::new(r#"{"layer_sizes":[2,8,2],"activation":{"kind":"tanh"},"epochs":20,"seed":3}"#).unwrap();
    assert_eq!(unsafe { pf_model_train(trajs.as_ptr(), 1, cfg.as_ptr(), &mut m) }, PfStatus::Ok, "{}", last_error());
    let mut y = [0.0; 2];
    assert_eq!(unsafe { pf_model_predict(m, [0.5, 0.5].as_ptr(), y.as_mut_ptr()) }, PfStatus::Ok);
    assert!(y.iter().all(|v| v.is_finite()));
    unsafe {
        pf_model_free(m);
        pf_trajectory_free(t);
    }
}

#[test]
fn divergence_returns_partial_trajectory() {
    let sys = CString::new(r#"{"name":"vdp","mu":2.0}"#).unwrap();
    let mut t = ptr::null_mut();
    let st = unsafe { pf_trajectory_generate(sys.as_ptr(), [50.0, 50.0].as_ptr(), 2, 0.5, 100, &mut t) };
    assert_eq!(st, PfStatus::Diverged);
    assert!(last_error().contains("diverged"));
    if !t.is_null() {
        let mut len = 0;
        unsafe { pf_trajectory_shape(t, &mut len, ptr::null_mut(), ptr::null_mut()) };
        assert!(len >= 2 && len < 101);
        unsafe { pf_trajectory_free(t) };
    }
}

#[test]
fn dct_and_r2() {
    let u = [3.0; 16];
    let mut a = [0.0; 4];
    assert_eq!(unsafe { pf_dct_reduce(u.as_ptr(), 16, 4, a.as_mut_ptr()) }, PfStatus::Ok);
    assert!((a[0] - 12.0).abs() < 1e-12 && a[1..].iter().all(|v| v.abs() < 1e-12));
    assert_eq!(unsafe { pf_dct_reduce(u.as_ptr(), 16, 17, a.as_mut_ptr()) }, PfStatus::Shape);

    let y = [1.0, 2.0, 3.0, 4.0];
    let mut r2 = 0.0;
    assert_eq!(unsafe { pf_r2_score(y.as_ptr(), y.as_ptr(), 4, 1, &mut r2) }, PfStatus::Ok);
    assert_eq!(r2, 1.0);
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/phaseflow.h");
    let text = std::fs::read_to_string(header).unwrap();
    for name in ["pf_model_rollout", "pf_last_error_message", "PF_STATUS_DIVERGED", "typedef struct PfModel PfModel"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let Ok(status) = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", header])
        .status()
    else {
        eprintln!("no C compiler; skipping syntax check");
        return;
    };
    assert!(status.success());
}
