//! Runs the stage-by-stage quarter-turn checks on a random decoder in both
//! precisions, then on a decoder with a positional table injected before the
//! transformer, which must fail the mixing stage.
//!
//! cargo run --release --example equivariance_check -- [n]

use symdec::decoder::equivariance::{run_checks, ProbeShape};
use symdec::decoder::DecoderConfig;

fn main() -> symdec::Result<()> {
    let n = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(8);
    let cfg = DecoderConfig { n, ..DecoderConfig::desk_toy() };
    let shape = ProbeShape::default();
    println!("== f64, C{n}\n{}", run_checks::<f64>(&cfg, &shape, 0)?);
    println!("== f32, C{n}\n{}", run_checks::<f32>(&cfg, &shape, 0)?);
    let broken = DecoderConfig { inject_positional_encoding: true, ..cfg };
    let r = run_checks::<f64>(&broken, &shape, 0)?;
    println!("== positional encoding injected: failing stages {:?}", r.failing_stages());
    Ok(())
}
