use hpnp_web::demo::{DemoError, DemoSession};

fn ramp(w: usize, h: usize) -> Vec<u8> {
    (0..w * h).map(|i| ((i % w) * 2 + (i / w)) as u8).collect()
}

#[test]
fn session_crops_to_block_grid() {
    let s = DemoSession::new(&ramp(70, 40), 70, 40).unwrap();
    assert_eq!((s.width(), s.height()), (64, 32));
    assert_eq!(s.original().len(), 64 * 32);
    assert!(matches!(DemoSession::new(&ramp(20, 40), 20, 40), Err(DemoError::TooSmall(20, 40))));
    assert!(DemoSession::new(&ramp(40, 40)[..100], 40, 40).is_err());
}

#[test]
fn measure_then_reconstruct_improves() {
    let mut s = DemoSession::new(&ramp(64, 64), 64, 64).unwrap();
    assert!(matches!(s.reconstruct("", 2), Err(DemoError::NotMeasured)));
    let init = s.measure(0.3, 7).unwrap();
    assert_eq!(init.len(), 64 * 64);
    let init_psnr = s.last_psnr();
    let rec = s.reconstruct("pnp", 5).unwrap();
    assert_eq!(rec.len(), 64 * 64);
    assert!(s.last_psnr() > init_psnr, "{} vs {init_psnr}", s.last_psnr());
    assert!(s.last_iterations() >= 1 && s.last_iterations() <= 5);
    assert!(s.reconstruct("no-such-preset", 1).is_err());
}

#[test]
fn denoise_returns_both_images() {
    let mut s = DemoSession::new(&ramp(32, 32), 32, 32).unwrap();
    let out = s.noisy_and_denoised(20.0, 1).unwrap();
    assert_eq!(out.len(), 2 * 32 * 32);
    assert!(s.last_psnr() > 20.0);
}

#[test]
fn preset_list_is_exposed() {
    assert!(hpnp_web::preset_names().iter().any(|n| n == "r0.3"));
}
