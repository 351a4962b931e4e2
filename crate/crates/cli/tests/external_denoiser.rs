use std::time::Duration;

use hpnp::denoise::{native_dct_denoise, ExternalDenoiser};
use hpnp::solver::reconstruct_observed;
use hpnp::{presets, BlockSensor, DenoiseError, DenoiseRequest, Denoiser, DenoiserKind, Image};

const ECHO: &str = env!("CARGO_BIN_EXE_hpnp-echo-denoiser");

fn spawn(flags: &[&str], timeout: Duration) -> ExternalDenoiser {
    let mut cmd = vec![ECHO.to_owned()];
    cmd.extend(flags.iter().map(|s| s.to_string()));
    ExternalDenoiser::spawn(&cmd, timeout).unwrap()
}

fn f32_image(h: usize, w: usize, seed: u32) -> Image {
    Image::from_fn(h, w, |r, c| {
        let v = ((r as u32 * 131 + c as u32 * 71 + seed * 17) % 2551) as f32 / 10.0 + 0.03125;
        f64::from(v)
    })
}

#[test]
fn echo_round_trip_is_bit_exact() {
    let mut d = spawn(&[], Duration::from_secs(10));
    for (i, (h, w)) in [(8, 8), (5, 13), (96, 96), (1, 1)].into_iter().enumerate() {
        let img = f32_image(h, w, i as u32);
        let out = d.denoise(&DenoiseRequest::new(img.clone(), 12.5).unwrap()).unwrap();
        assert_eq!(out, img);
    }
}

#[test]
fn values_travel_as_f32() {
    let mut d = spawn(&[], Duration::from_secs(10));
    let img = Image::from_fn(4, 4, |r, c| 0.1 + r as f64 / 3.0 + c as f64);
    let out = d.denoise(&DenoiseRequest::new(img.clone(), 5.0).unwrap()).unwrap();
    for (a, b) in img.data().iter().zip(out.data()) {
        assert_eq!(*b, f64::from(*a as f32));
    }
}

#[test]
fn sigma_zero_skips_the_child() {
    // The child would die on the first request; sigma 0 must never reach it.
    let mut d = spawn(&["--exit-after", "0"], Duration::from_secs(10));
    let img = Image::from_fn(3, 3, |r, c| (r * 3 + c) as f64 + 0.123);
    assert_eq!(d.denoise(&DenoiseRequest::new(img.clone(), 0.0).unwrap()).unwrap(), img);
}

#[test]
fn native_mode_matches_in_process_denoiser() {
    let mut d = spawn(&["--native"], Duration::from_secs(10));
    let img = f32_image(40, 33, 3);
    let remote = d.denoise(&DenoiseRequest::new(img.clone(), 20.0).unwrap()).unwrap();
    let local = native_dct_denoise(&img, 20.0);
    assert!(remote.max_abs_diff(&local) < 1e-3);
}

#[test]
fn corrupted_magic_is_a_protocol_error() {
    let mut d = spawn(&["--bad-magic"], Duration::from_secs(10));
    let err = d.denoise(&DenoiseRequest::new(f32_image(8, 8, 0), 3.0).unwrap()).unwrap_err();
    assert!(matches!(err, DenoiseError::Protocol { .. }), "{err}");
    // a failed bridge stays failed
    let again = d.denoise(&DenoiseRequest::new(f32_image(8, 8, 0), 3.0).unwrap()).unwrap_err();
    assert!(matches!(again, DenoiseError::Protocol { .. }));
}

#[test]
fn wrong_dimensions_are_rejected() {
    let mut d = spawn(&["--wrong-size"], Duration::from_secs(10));
    let err = d.denoise(&DenoiseRequest::new(f32_image(6, 9, 0), 3.0).unwrap()).unwrap_err();
    match err {
        DenoiseError::Shape { expected, got } => {
            assert_eq!(expected, (9, 6));
            assert_eq!(got, (10, 6));
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn slow_child_times_out() {
    let mut d = spawn(&["--sleep", "5"], Duration::from_millis(200));
    let err = d.denoise(&DenoiseRequest::new(f32_image(8, 8, 0), 3.0).unwrap()).unwrap_err();
    assert!(matches!(err, DenoiseError::Timeout(_)), "{err}");
}

#[test]
fn crash_reports_exit_status_and_stderr() {
    let mut d = spawn(&["--exit-after", "1"], Duration::from_secs(10));
    let req = DenoiseRequest::new(f32_image(8, 8, 0), 3.0).unwrap();
    d.denoise(&req).unwrap();
    let err = d.denoise(&req).unwrap_err();
    match &err {
        DenoiseError::Exited { stderr, .. } => assert!(stderr.contains("exiting after 1"), "{err}"),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn truncated_response_is_an_error() {
    let mut d = spawn(&["--truncate"], Duration::from_secs(10));
    let err = d.denoise(&DenoiseRequest::new(f32_image(8, 8, 0), 3.0).unwrap()).unwrap_err();
    assert!(
        matches!(err, DenoiseError::Exited { .. } | DenoiseError::Protocol { .. }),
        "{err}"
    );
}

#[test]
fn missing_program_fails_to_spawn() {
    let err = DenoiserKind::external("/nonexistent/denoiser --flag").start().err().unwrap();
    assert!(matches!(err, DenoiseError::Spawn { .. }), "{err}");
}

#[test]
fn solver_runs_through_external_denoiser() {
    let img = f32_image(32, 32, 9);
    let sensor = BlockSensor::new(32, 0.4, 3).unwrap();
    let meas = sensor.measure(&img).unwrap();
    let cfg = presets::resolve("pnp", &["max_iters = 3".into()]).unwrap();

    let mut native = cfg.denoiser.start().unwrap();
    let a = reconstruct_observed(&sensor, &meas, &cfg, None, native.as_mut(), &mut |_| {}).unwrap();
    let mut external = spawn(&["--native"], Duration::from_secs(10));
    let b = reconstruct_observed(&sensor, &meas, &cfg, None, &mut external, &mut |_| {}).unwrap();
    assert_eq!(a.iterations(), b.iterations());
    assert!(a.image.max_abs_diff(&b.image) < 0.05, "{}", a.image.max_abs_diff(&b.image));
}
