//! Scores a model on a synthetic validation split: max-F1 with its
//! threshold, robustness under small rotations and prediction consistency.
//! Without a checkpoint the model is freshly initialized, which gives the
//! floor to compare trained runs against.
//!
//! cargo run --release --example evaluate -- [checkpoint dir]

use std::path::Path;

use symdec::cli::evaluate;
use symdec::config::RunConfig;
use symdec::model::Model;
use symdec::synthdata::generate_split;
use symdec::training::load_checkpoint;

fn main() -> symdec::Result<()> {
    let cfg = RunConfig::desk_toy();
    let model = match std::env::args().nth(1) {
        Some(dir) => load_checkpoint(Path::new(&dir), Some(&cfg.model_spec()))?.0,
        None => Model::init(cfg.model_spec(), &cfg.text_tokens()?, cfg.seed)?,
    };
    let val = generate_split(&cfg.scene(), "val", cfg.data.val)?;
    let report = evaluate(&cfg, &model, &val, Some(cfg.eval.robustness), Some(cfg.eval.consistency), cfg.eval.consistency_samples)?;
    print!("{}", report.to_text());
    Ok(())
}
