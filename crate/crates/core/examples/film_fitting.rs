//! Fits only the FiLM maps on tokens shifted by a prompt-dependent offset
//! and compares the held-out error with the noise floor and with leaving the
//! tokens alone.
//!
//! cargo run --release --example film_fitting -- [noise] [offset]

use symdec::filmfit::{run_film_fit, FilmFitConfig};

fn main() -> symdec::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let base = FilmFitConfig::default();
    let cfg = FilmFitConfig { noise: args.first().copied().unwrap_or(base.noise), offset: args.get(1).copied().unwrap_or(base.offset), ..base };
    let r = run_film_fit(&cfg)?;
    println!("noise floor   {:.6}", r.noise_floor);
    println!("FiLM fitted   {:.6}  ({:+.1}% vs floor)", r.film_mse, 100.0 * r.excess_over_floor());
    println!("no FiLM       {:.6}", r.baseline_mse);
    Ok(())
}
