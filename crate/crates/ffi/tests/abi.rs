use std::ffi::{CStr, CString};
use std::ptr;

use aoi_sampler_ffi::*;

fn model(spec: &str) -> *mut AoiModel {
    let s = CString::new(spec).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(
        unsafe { aoi_model_parse(s.as_ptr(), &mut m) },
        AoiStatus::Ok
    );
    assert!(!m.is_null());
    m
}

fn last_error() -> String {
    let p = aoi_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn window() -> AoiSamplerConfig {
    AoiSamplerConfig {
        gamma_lb: 0.1,
        gamma_ub: 1.0,
        d_lb: 0.5,
        v: 10.0,
        inv_f_max: 0.0,
        wait_cap: f64::INFINITY,
    }
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(aoi_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn oracle_on_uniform() {
    let m = model("uniform:0,1");
    let mut sol = AoiOracleSolution::default();
    assert_eq!(
        unsafe { aoi_oracle_solve(m, f64::INFINITY, 1e-10, &mut sol) },
        AoiStatus::Ok
    );
    assert!((sol.gamma_star - 0.3221853546260856).abs() < 1e-8);
    assert_eq!(sol.nu_star, 0.0);
    assert!((sol.aoi_star - 0.8221853546260856).abs() < 1e-8);

    assert_eq!(
        unsafe { aoi_oracle_solve(m, 1.0, 1e-10, &mut sol) },
        AoiStatus::Ok
    );
    assert!((sol.beta - 1.0).abs() < 1e-8 && (sol.aoi_star - 1.0).abs() < 1e-8);

    let mut aoi = 0.0;
    assert_eq!(
        unsafe { aoi_stationary_aoi(m, 1.0, &mut aoi) },
        AoiStatus::Ok
    );
    assert!((aoi - 1.0).abs() < 1e-12);
    unsafe { aoi_model_free(m) };
}

#[test]
fn json_and_short_model_forms_agree() {
    let a = model("lognormal:1,1.3");
    let b = model(r#"{"kind": "lognormal", "mu": 1, "sigma": 1.3}"#);
    let (mut ma, mut mb) = (AoiMoments::default(), AoiMoments::default());
    let (mut ta, mut tb) = (
        AoiThresholdIntegrals::default(),
        AoiThresholdIntegrals::default(),
    );
    unsafe {
        assert_eq!(aoi_model_moments(a, &mut ma), AoiStatus::Ok);
        assert_eq!(aoi_model_moments(b, &mut mb), AoiStatus::Ok);
        assert_eq!(aoi_threshold_integrals(a, 2.0, &mut ta), AoiStatus::Ok);
        assert_eq!(aoi_threshold_integrals(b, 2.0, &mut tb), AoiStatus::Ok);
    }
    assert_eq!(ma.mean, mb.mean);
    assert!((ma.mean - (1.0f64 + 0.845).exp()).abs() < 1e-12);
    assert!(ma.upper_support.is_infinite());
    assert_eq!(ta.e_max, tb.e_max);
    assert!(ta.e_max >= 2.0f64.max(ma.mean));
    let mut c = 0.0;
    assert_eq!(
        unsafe { aoi_model_cdf(a, 1.0f64.exp(), &mut c) },
        AoiStatus::Ok
    );
    assert!((c - 0.5).abs() < 1e-12);
    unsafe {
        aoi_model_free(a);
        aoi_model_free(b);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    let bad = CString::new("uniform:1,0").unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(
        unsafe { aoi_model_parse(bad.as_ptr(), &mut m) },
        AoiStatus::InvalidParameter
    );
    assert!(m.is_null());
    assert!(!last_error().is_empty());

    assert_eq!(
        unsafe { aoi_model_parse(ptr::null(), &mut m) },
        AoiStatus::NullPointer
    );
    assert!(last_error().contains("spec"));

    let bytes = [0xffu8, 0xfe, 0];
    assert_eq!(
        unsafe { aoi_model_parse(bytes.as_ptr().cast(), &mut m) },
        AoiStatus::InvalidUtf8
    );

    let good = model("deterministic:1");
    let mut sol = AoiOracleSolution::default();
    assert_eq!(
        unsafe { aoi_oracle_solve(good, 0.0, 1e-10, &mut sol) },
        AoiStatus::InvalidParameter
    );
    assert_eq!(
        unsafe { aoi_oracle_solve(good, f64::INFINITY, 0.0, &mut sol) },
        AoiStatus::InvalidParameter
    );
    assert_eq!(
        unsafe { aoi_oracle_solve(good, f64::INFINITY, 1e-10, ptr::null_mut()) },
        AoiStatus::NullPointer
    );
    assert_eq!(
        unsafe { aoi_oracle_solve(good, f64::INFINITY, 1e-10, &mut sol) },
        AoiStatus::Ok
    );
    assert!(aoi_last_error_message().is_null());
    assert!((sol.gamma_star - 0.5).abs() < 1e-9);
    unsafe { aoi_model_free(good) };
}

#[test]
fn gamma_bounds_and_scalars() {
    let mut b = AoiGammaBounds::default();
    assert_eq!(
        unsafe { aoi_gamma_bounds(0.5, 0.5, 1.0 / 3.0, 1.0 / 3.0, f64::INFINITY, &mut b) },
        AoiStatus::Ok
    );
    assert!(b.gamma_lb <= 0.3221853546260856 && 0.3221853546260856 <= b.gamma_ub);
    assert_eq!(
        unsafe { aoi_gamma_bounds(-1.0, 0.5, 0.1, 0.1, f64::INFINITY, &mut b) },
        AoiStatus::InvalidParameter
    );
    assert_eq!(aoi_step_size(1, 0.5), 1.0);
    assert_eq!(aoi_step_size(3, 0.5), 0.4);
    assert_eq!(aoi_cycle_area(1.0, 2.0, 1.0), 2.0 + 4.5);
}

#[test]
fn sampler_round_trip() {
    let config = window();
    let mut s = ptr::null_mut();
    assert_eq!(
        unsafe { aoi_sampler_new(&config, 7, &mut s) },
        AoiStatus::Ok
    );
    let mut st = AoiSamplerState::default();
    assert_eq!(unsafe { aoi_sampler_state(s, &mut st) }, AoiStatus::Ok);
    assert_eq!(st.k, 1);
    assert!((0.1..=1.0).contains(&st.gamma));
    assert_eq!(st.debt, 0.0);
    for delay in [0.2, 0.9, 0.4, 0.0, 1.7] {
        let mut w = -1.0;
        assert_eq!(
            unsafe { aoi_sampler_decide_wait(s, delay, &mut w) },
            AoiStatus::Ok
        );
        assert_eq!(w, (st.gamma - delay).max(0.0));
        assert_eq!(unsafe { aoi_sampler_observe(s, delay, w) }, AoiStatus::Ok);
        assert_eq!(unsafe { aoi_sampler_state(s, &mut st) }, AoiStatus::Ok);
        assert!((0.1..=1.0).contains(&st.gamma));
    }
    assert_eq!(st.k, 6);
    assert_eq!(
        unsafe { aoi_sampler_observe(s, f64::NAN, 0.0) },
        AoiStatus::InvalidParameter
    );
    let mut w = 0.0;
    assert_eq!(
        unsafe { aoi_sampler_decide_wait(s, -1.0, &mut w) },
        AoiStatus::InvalidParameter
    );
    unsafe { aoi_sampler_free(s) };
}

#[test]
fn sampler_matches_reference_step() {
    // gamma = 0.5, D = 0.2, W = 0.3, L = 0.5: g = 0.125 - 0.25 = -0.125, eta_1 = 1.
    let config = window();
    let state = AoiSamplerState {
        k: 1,
        gamma: 0.5,
        debt: 0.0,
    };
    let mut s = ptr::null_mut();
    assert_eq!(
        unsafe { aoi_sampler_with_state(&config, &state, &mut s) },
        AoiStatus::Ok
    );
    let mut w = 0.0;
    assert_eq!(
        unsafe { aoi_sampler_decide_wait(s, 0.2, &mut w) },
        AoiStatus::Ok
    );
    assert!((w - 0.3).abs() < 1e-15);
    assert_eq!(unsafe { aoi_sampler_observe(s, 0.2, w) }, AoiStatus::Ok);
    let mut st = AoiSamplerState::default();
    assert_eq!(unsafe { aoi_sampler_state(s, &mut st) }, AoiStatus::Ok);
    assert_eq!(st.k, 2);
    assert!((st.gamma - 0.375).abs() < 1e-15);
    unsafe { aoi_sampler_free(s) };

    let outside = AoiSamplerState {
        k: 1,
        gamma: 2.0,
        debt: 0.0,
    };
    assert_eq!(
        unsafe { aoi_sampler_with_state(&config, &outside, &mut s) },
        AoiStatus::InvalidParameter
    );
    let bad = AoiSamplerConfig {
        gamma_lb: 1.0,
        gamma_ub: 0.5,
        ..config
    };
    assert_eq!(
        unsafe { aoi_sampler_new(&bad, 1, &mut s) },
        AoiStatus::InvalidParameter
    );
}

#[test]
fn wait_cap_is_counted_not_enforced() {
    let config = AoiSamplerConfig {
        wait_cap: 0.1,
        ..window()
    };
    let state = AoiSamplerState {
        k: 1,
        gamma: 0.9,
        debt: 0.0,
    };
    let mut s = ptr::null_mut();
    assert_eq!(
        unsafe { aoi_sampler_with_state(&config, &state, &mut s) },
        AoiStatus::Ok
    );
    let mut w = 0.0;
    assert_eq!(
        unsafe { aoi_sampler_decide_wait(s, 0.0, &mut w) },
        AoiStatus::Ok
    );
    assert_eq!(w, 0.9);
    assert_eq!(unsafe { aoi_sampler_observe(s, 0.0, w) }, AoiStatus::Ok);
    let mut n = 0;
    assert_eq!(
        unsafe { aoi_sampler_wait_cap_exceedances(s, &mut n) },
        AoiStatus::Ok
    );
    assert_eq!(n, 1);
    unsafe { aoi_sampler_free(s) };
}

fn json_call(f: impl FnOnce(*mut *mut std::ffi::c_char) -> AoiStatus) -> serde_json::Value {
    let mut out = ptr::null_mut();
    assert_eq!(f(&mut out), AoiStatus::Ok, "{}", last_error());
    let v = serde_json::from_str(unsafe { CStr::from_ptr(out) }.to_str().unwrap()).unwrap();
    unsafe { aoi_string_free(out) };
    v
}

#[test]
fn simulation_through_json() {
    let cfg = CString::new(
        r#"{"model": {"kind": "uniform", "a": 0, "b": 1}, "cycles": 2000, "seed": 5}"#,
    )
    .unwrap();
    let a = json_call(|out| unsafe { aoi_simulate_json(cfg.as_ptr(), out) });
    let b = json_call(|out| unsafe { aoi_simulate_json(cfg.as_ptr(), out) });
    assert_eq!(a, b);
    assert_eq!(a["result"]["cycles"], 2000);
    assert!(a["result"]["aoi_ratio"].as_f64().unwrap() > 0.8);
    assert_eq!(a["metadata"]["version"], env!("CARGO_PKG_VERSION"));

    let e = json_call(|out| unsafe { aoi_ensemble_json(cfg.as_ptr(), 3, out) });
    assert_eq!(e["summary"]["runs"], 3);

    let bad =
        CString::new(r#"{"model": {"kind": "uniform", "a": 0, "b": 1}, "cycles": 10, "typo": 1}"#)
            .unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { aoi_simulate_json(bad.as_ptr(), &mut out) },
        AoiStatus::InvalidParameter
    );
    assert!(out.is_null());
    assert!(last_error().contains("typo"));
    assert_eq!(
        unsafe { aoi_ensemble_json(cfg.as_ptr(), 1, &mut out) },
        AoiStatus::InvalidParameter
    );
}

#[test]
fn free_functions_accept_null() {
    unsafe {
        aoi_model_free(ptr::null_mut());
        aoi_sampler_free(ptr::null_mut());
        aoi_string_free(ptr::null_mut());
    }
}
