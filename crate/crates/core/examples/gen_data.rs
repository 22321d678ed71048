//! Writes the desk-toy synthetic dataset (train/val/test) to a directory.
//!
//! cargo run --release --example gen_data -- [out dir] [train images]

use std::path::PathBuf;

use symdec::cli::cmd_gen_data;
use symdec::config::RunConfig;

fn main() -> symdec::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "data".into()));
    let count = args.next().and_then(|a| a.parse().ok());
    let summary = cmd_gen_data(&RunConfig::desk_toy(), &out, count)?;
    for (split, n, elements) in summary.splits {
        println!("{split:<5} {n:>4} images  {elements:>4} symmetry elements");
    }
    println!("written to {}", out.display());
    Ok(())
}
