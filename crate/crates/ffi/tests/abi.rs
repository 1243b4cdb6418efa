use std::ffi::{c_void, CStr, CString};
use std::ptr;

use govid::experiment::{excitation, Scenario};
use govid::plants::{build_model, default_table, input_channels, tap_channels, ModelKind, OperatingPoint};
use govid_ffi::*;

fn new_model(kind: GovidModelKind, dt: f64) -> *mut GovidModel {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { govid_model_new(kind, dt, &mut m) }, GovidStatus::Ok);
    assert!(!m.is_null());
    m
}

#[test]
fn simulate_matches_the_library() {
    let s = Scenario::training().with_duration(5.0);
    let op = OperatingPoint::default();
    for (ck, kind) in [(GovidModelKind::Ggov1, ModelKind::Ggov1), (GovidModelKind::St6b, ModelKind::St6b)] {
        let inputs = excitation(kind, &s, &op).unwrap();
        let expected = build_model(kind, &default_table(kind), s.dt, op)
            .unwrap()
            .simulate(&inputs)
            .unwrap();
        let m = new_model(ck, s.dt);
        let names = input_channels(kind);
        let width = unsafe { govid_model_input_count(m) };
        let taps = unsafe { govid_model_tap_count(m) };
        assert_eq!(width, names.len());
        assert_eq!(taps, tap_channels(kind).len());
        let n = inputs.len();
        let mut flat = vec![0.0; n * width];
        for (j, name) in names.iter().enumerate() {
            for (k, v) in inputs.channel(name).unwrap().iter().enumerate() {
                flat[k * width + j] = *v;
            }
        }
        let mut out = vec![0.0; n * taps];
        assert_eq!(unsafe { govid_model_simulate(m, flat.as_ptr(), n, out.as_mut_ptr()) }, GovidStatus::Ok);
        for j in 0..taps {
            let name = unsafe { CStr::from_ptr(govid_model_tap_name(m, j)) }.to_str().unwrap();
            let col = expected.channel(name).unwrap();
            for k in 0..n {
                assert_eq!(out[k * taps + j], col[k], "{name} at {k}");
            }
        }
        assert!(unsafe { govid_model_tap_name(m, taps) }.is_null());
        unsafe { govid_model_free(m) };
    }
}

#[test]
fn parameters_round_trip_and_unknown_names_fail() {
    let m = new_model(GovidModelKind::Ggov1, 0.001);
    let name = CString::new("K_pgov").unwrap();
    let mut v = 0.0;
    unsafe {
        assert_eq!(govid_model_get_param(m, name.as_ptr(), &mut v), GovidStatus::Ok);
        assert_eq!(v, 3.10);
        assert_eq!(govid_model_set_param(m, name.as_ptr(), 2.5), GovidStatus::Ok);
        govid_model_get_param(m, name.as_ptr(), &mut v);
        assert_eq!(v, 2.5);
        let bad = CString::new("K_nope").unwrap();
        assert_eq!(govid_model_set_param(m, bad.as_ptr(), 1.0), GovidStatus::UnknownParameter);
        let msg = CStr::from_ptr(govid_last_error()).to_str().unwrap().to_string();
        assert!(msg.contains("K_nope"), "{msg}");
        // an invalid value leaves the previous model in place
        let t = CString::new("T_pelec").unwrap();
        assert_eq!(govid_model_set_param(m, t.as_ptr(), -1.0), GovidStatus::ModelError);
        govid_model_get_param(m, t.as_ptr(), &mut v);
        assert_eq!(v, 1.10);
        govid_model_free(m);
    }
}

#[test]
fn bad_rate_is_a_model_error() {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { govid_model_new(GovidModelKind::St6b, 0.0, &mut m) }, GovidStatus::ModelError);
    assert!(m.is_null());
}

extern "C" fn sphere(x: *const f64, dim: usize, user: *mut c_void) -> f64 {
    let calls = unsafe { &mut *(user as *mut usize) };
    *calls += 1;
    let x = unsafe { std::slice::from_raw_parts(x, dim) };
    x.iter().map(|v| v * v).sum()
}

#[test]
fn cuckoo_search_through_a_callback() {
    let dim = 5;
    let lo = vec![-5.0; dim];
    let hi = vec![5.0; dim];
    let mut cfg = govid_cs_default_config();
    cfg.seed = 3;
    cfg.stop_threshold = 0.0;
    let mut calls = 0usize;
    let mut best = vec![0.0; dim];
    let mut res = GovidCsResult::default();
    let status = unsafe {
        govid_cs_minimize(
            dim,
            lo.as_ptr(),
            hi.as_ptr(),
            &cfg,
            Some(sphere),
            &mut calls as *mut usize as *mut c_void,
            best.as_mut_ptr(),
            &mut res,
        )
    };
    assert_eq!(status, GovidStatus::Ok);
    assert_eq!(res.generations, cfg.max_generations);
    assert_eq!(res.evaluations, calls);
    assert!(res.best_fitness < 1e-3, "{}", res.best_fitness);
    let direct: f64 = best.iter().map(|v| v * v).sum();
    assert_eq!(direct, res.best_fitness);

    let status = unsafe {
        govid_cs_minimize(dim, lo.as_ptr(), hi.as_ptr(), &cfg, None, ptr::null_mut(), best.as_mut_ptr(), &mut res)
    };
    assert_eq!(status, GovidStatus::NullPointer);
    cfg.p_a = 2.0;
    let status = unsafe {
        govid_cs_minimize(
            dim,
            lo.as_ptr(),
            hi.as_ptr(),
            &cfg,
            Some(sphere),
            &mut calls as *mut usize as *mut c_void,
            best.as_mut_ptr(),
            &mut res,
        )
    };
    assert_eq!(status, GovidStatus::OptimizerError);
}

#[test]
fn statistics() {
    let y = [1.0, 2.0, 3.0, 4.0];
    let yhat = [1.0, 2.5, 3.0, 3.0];
    let (mut m, mut idx) = (0.0, 0.0);
    unsafe {
        assert_eq!(govid_mse(y.as_ptr(), yhat.as_ptr(), 4, &mut m), GovidStatus::Ok);
        assert_eq!(govid_error_index_percent(y.as_ptr(), yhat.as_ptr(), 4, &mut idx), GovidStatus::Ok);
    }
    assert_eq!(m, (0.25 + 1.0) / 4.0);
    assert_eq!(idx, 100.0 * m);

    // alternating residual: every odd lag correlates at -1, even at +1
    let e: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let mut w = GovidWhiteness::default();
    unsafe {
        assert_eq!(govid_whiteness(e.as_ptr(), e.len(), 25, 0.01, 1, &mut w), GovidStatus::Ok);
    }
    assert_eq!(w.pass, 0);
    assert!((w.beta_squared - 7.373).abs() < 1e-3);
    assert!(w.threshold == w.chi2_threshold);
    let status = unsafe { govid_whiteness(e.as_ptr(), e.len(), 25, 0.9, 0, &mut w) };
    assert_eq!(status, GovidStatus::InvalidArgument);
}
