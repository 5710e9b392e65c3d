use std::ffi::{c_char, CStr, CString};
use std::ptr;

use ilsim_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    unsafe {
        ilsim_last_error(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

#[test]
fn signal_space_shape_and_uniform_entropy() {
    unsafe {
        let mut space = ptr::null_mut();
        assert_eq!(ilsim_signal_space_new(&mut space), IlsimStatus::Ok);
        let (mut h, mut x, mut y) = (0, 0, 0);
        assert_eq!(ilsim_space_shape(space, &mut h, &mut x, &mut y), IlsimStatus::Ok);
        assert_eq!((h, x, y), (256, 4, 4));

        let mut belief = ptr::null_mut();
        assert_eq!(ilsim_belief_uniform(space, &mut belief), IlsimStatus::Ok);
        let mut ent = 0.0;
        assert_eq!(ilsim_belief_entropy(belief, &mut ent), IlsimStatus::Ok);
        assert!((ent - 256f64.ln()).abs() < 1e-12);

        ilsim_belief_free(belief);
        ilsim_space_free(space);
    }
}

#[test]
fn coding_prior_is_normalized() {
    unsafe {
        let mut belief = ptr::null_mut();
        assert_eq!(ilsim_belief_coding_prior(2.0, &mut belief), IlsimStatus::Ok);
        let mut probs = vec![0.0; 256];
        assert_eq!(ilsim_belief_probs(belief, probs.as_mut_ptr(), probs.len()), IlsimStatus::Ok);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(ilsim_belief_probs(belief, probs.as_mut_ptr(), 10), IlsimStatus::BufferTooSmall);
        ilsim_belief_free(belief);
    }
}

#[test]
fn acre_posterior_matches_direct_count() {
    unsafe {
        let mut space = ptr::null_mut();
        assert_eq!(ilsim_acre_space_new(3, &mut space), IlsimStatus::Ok);
        let mut prior = ptr::null_mut();
        assert_eq!(ilsim_belief_uniform(space, &mut prior), IlsimStatus::Ok);

        // Inputs are mask - 1; object A alone (mask 1) lights up.
        let xs = [0usize];
        let ys = [0usize];
        let mut post = ptr::null_mut();
        assert_eq!(ilsim_posterior_update(prior, space, xs.as_ptr(), ys.as_ptr(), 1, 0.0, &mut post), IlsimStatus::Ok);
        let mut probs = vec![0.0; 27];
        assert_eq!(ilsim_belief_probs(post, probs.as_mut_ptr(), 27), IlsimStatus::Ok);
        // Rules with A on: 9 of 27, index digit 0 == 0.
        for (h, p) in probs.iter().enumerate() {
            let expected = if h % 3 == 0 { 1.0 / 9.0 } else { 0.0 };
            assert!((p - expected).abs() < 1e-12, "rule {h}: {p}");
        }

        let xs = [0usize, 0];
        let ys = [0usize, 1];
        let mut bad = ptr::null_mut();
        assert_eq!(
            ilsim_posterior_update(prior, space, xs.as_ptr(), ys.as_ptr(), 2, 0.0, &mut bad),
            IlsimStatus::Contradiction
        );
        assert!(bad.is_null());
        assert!(!last_error().is_empty());

        ilsim_belief_free(post);
        ilsim_belief_free(prior);
        ilsim_space_free(space);
    }
}

#[test]
fn null_and_bad_arguments_are_reported() {
    unsafe {
        assert_eq!(ilsim_signal_space_new(ptr::null_mut()), IlsimStatus::NullPointer);
        let mut space = ptr::null_mut();
        assert_eq!(ilsim_acre_space_new(0, &mut space), IlsimStatus::InvalidArgument);
        assert!(last_error().contains("object count"));
        let mut belief = ptr::null_mut();
        assert_eq!(ilsim_belief_uniform(ptr::null(), &mut belief), IlsimStatus::NullPointer);
        ilsim_space_free(ptr::null_mut());
        ilsim_belief_free(ptr::null_mut());

        assert_eq!(ilsim_signal_space_new(&mut space), IlsimStatus::Ok);
        let w = [1.0; 3];
        assert_eq!(ilsim_belief_from_weights(space, w.as_ptr(), 3, &mut belief), IlsimStatus::InvalidArgument);
        let w = [-1.0; 256];
        assert_ne!(ilsim_belief_from_weights(space, w.as_ptr(), 256, &mut belief), IlsimStatus::Ok);
        ilsim_space_free(space);
    }
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(ilsim_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn run_config_reports_config_errors_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = CString::new(dir.path().join("run").to_str().unwrap()).unwrap();
    let base = CString::new(dir.path().to_str().unwrap()).unwrap();

    let broken = CString::new("task = \"signal\"\nnot_a_key = 3\n").unwrap();
    assert_eq!(unsafe { ilsim_run_config(broken.as_ptr(), base.as_ptr(), out.as_ptr()) }, IlsimStatus::Config);

    let cfg = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/signal_lewis.toml")).unwrap();
    let cfg = CString::new(cfg).unwrap();
    assert_eq!(
        unsafe { ilsim_run_config(cfg.as_ptr(), base.as_ptr(), out.as_ptr()) },
        IlsimStatus::Ok,
        "{}",
        last_error()
    );
    assert!(dir.path().join("run/manifest.json").exists());
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/ilsim.h")).unwrap();
    for name in [
        "ilsim_last_error",
        "ilsim_version",
        "ilsim_signal_space_new",
        "ilsim_acre_space_new",
        "ilsim_space_free",
        "ilsim_space_shape",
        "ilsim_belief_uniform",
        "ilsim_belief_coding_prior",
        "ilsim_belief_from_weights",
        "ilsim_belief_free",
        "ilsim_belief_probs",
        "ilsim_belief_entropy",
        "ilsim_posterior_update",
        "ilsim_run_config",
        "typedef struct IlsimSpace IlsimSpace",
        "ILSIM_STATUS_CONTRADICTION = 4",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}
