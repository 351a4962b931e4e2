//! Reference peer for the denoiser wire protocol. Echoes each request's
//! pixels back unchanged (or runs the native DCT denoiser with `--native`).
//! The fault flags exist for exercising the client's error handling.

use std::io::{self, BufReader, BufWriter, Write};
use std::time::Duration;

use clap::Parser;
use hpnp::denoise::{encode_response, native_dct_denoise, read_frame, REQUEST_MAGIC};
use hpnp::Image;

#[derive(Parser)]
#[command(name = "hpnp-echo-denoiser")]
struct Opts {
    /// Answer with the native DCT denoiser instead of echoing.
    #[arg(long)]
    native: bool,
    /// Answer with a corrupted response magic.
    #[arg(long)]
    bad_magic: bool,
    /// Answer with a frame one pixel wider than requested.
    #[arg(long)]
    wrong_size: bool,
    /// Sleep this many seconds before each answer.
    #[arg(long, value_name = "SECS")]
    sleep: Option<f64>,
    /// Exit without answering once this many requests have been served.
    #[arg(long, value_name = "N")]
    exit_after: Option<usize>,
    /// Write half a response, then exit.
    #[arg(long)]
    truncate: bool,
}

fn main() -> io::Result<()> {
    let opts = Opts::parse();
    let mut input = BufReader::new(io::stdin().lock());
    let mut output = BufWriter::new(io::stdout().lock());
    let mut served = 0;
    while let Some(frame) = read_frame(&mut input, REQUEST_MAGIC, true)? {
        if opts.exit_after == Some(served) {
            eprintln!("exiting after {served} requests");
            std::process::exit(3);
        }
        if let Some(secs) = opts.sleep {
            std::thread::sleep(Duration::from_secs_f64(secs));
        }
        let sigma = frame.sigma.unwrap_or(0.0);
        let mut pixels = if opts.native && sigma > 0.0 {
            let img = Image::new(frame.height, frame.width, frame.pixels.iter().map(|&v| v as f64).collect())
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
            native_dct_denoise(&img, sigma as f64).data().iter().map(|&v| v as f32).collect()
        } else {
            frame.pixels
        };
        let mut width = frame.width;
        if opts.wrong_size {
            width += 1;
            pixels.extend(std::iter::repeat_n(0.0, frame.height));
        }
        let mut bytes = encode_response(width, frame.height, &pixels);
        if opts.bad_magic {
            bytes[..8].copy_from_slice(b"XXXXXXXX");
        }
        if opts.truncate {
            bytes.truncate(bytes.len() / 2);
            output.write_all(&bytes)?;
            output.flush()?;
            std::process::exit(4);
        }
        output.write_all(&bytes)?;
        output.flush()?;
        served += 1;
    }
    Ok(())
}
