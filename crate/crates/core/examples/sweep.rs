//! Parameter sweep on one image: `cargo run --release --example sweep -- IMG RATIO [key=value ...]`.

use hpnp::{load_image, presets, psnr, reconstruct, BlockSensor};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let img = load_image(&args[0]).expect("image");
    let ratio: f64 = args[1].parse().expect("ratio");
    let overrides: Vec<String> = args[2..].iter().map(|kv| kv.replacen('=', " = ", 1)).collect();
    let preset = overrides
        .iter()
        .find_map(|o| o.strip_prefix("preset = ").map(str::to_owned))
        .unwrap_or_else(|| presets::for_ratio(ratio));
    let overrides: Vec<String> = overrides.into_iter().filter(|o| !o.starts_with("preset")).collect();
    let cfg = presets::resolve(&preset, &overrides).expect("preset");
    let sensor = BlockSensor::new(32, ratio, 7).unwrap();
    let meas = sensor.measure(&img).unwrap();
    let t = std::time::Instant::now();
    let rec = reconstruct(&sensor, &meas, &cfg, Some(&img)).unwrap();
    let trace: Vec<String> = rec
        .history
        .iter()
        .step_by(5)
        .map(|r| format!("{:.2}", r.psnr.unwrap()))
        .collect();
    let n = rec.history.len() as f64;
    let avg = |f: fn(&hpnp::solver::PhaseTimings) -> f64| rec.history.iter().map(|r| f(&r.timings)).sum::<f64>() / n;
    eprintln!(
        "per-iter: group {:.3} lowrank {:.3} x {:.3} z {:.3} total {:.3}",
        avg(|t| t.grouping),
        avg(|t| t.lowrank),
        avg(|t| t.x_update),
        avg(|t| t.z_update),
        avg(|t| t.total)
    );
    println!(
        "init {:.2} final {:.2} iters {} ({:.1}s) trace {}",
        psnr(&img, &rec.initial).unwrap(),
        psnr(&img, &rec.image).unwrap(),
        rec.iterations(),
        t.elapsed().as_secs_f64(),
        trace.join(" ")
    );
}
