//! Predicts a heatmap for one synthetic scene and writes the image, the
//! ground truth and the prediction as PGM/PNG files. Without a checkpoint
//! the model is freshly initialized.
//!
//! cargo run --release --example predict -- [checkpoint dir]

use std::path::Path;

use symdec::config::RunConfig;
use symdec::heatmap::Heatmap;
use symdec::imageio::{save_png, write_pgm};
use symdec::model::Model;
use symdec::synthdata::{generate_split, rasterize_gt};
use symdec::training::load_checkpoint;

fn main() -> symdec::Result<()> {
    let cfg = RunConfig::desk_toy();
    let model = match std::env::args().nth(1) {
        Some(dir) => load_checkpoint(Path::new(&dir), Some(&cfg.model_spec()))?.0,
        None => Model::init(cfg.model_spec(), &cfg.text_tokens()?, cfg.seed)?,
    };
    let sample = generate_split(&cfg.scene(), "test", 1)?.remove(0);
    let heat = model.predict(&sample.image)?;
    let (h, w) = (heat.height(), heat.width());
    let gt: Heatmap = rasterize_gt(&sample.annotation, h, w, cfg.task, &cfg.gt)?;

    let out = Path::new("predict_out");
    std::fs::create_dir_all(out).map_err(|e| symdec::Error::io(out, e))?;
    save_png(out.join("image.png"), &sample.image)?;
    write_pgm(out.join("gt.pgm"), &gt)?;
    write_pgm(out.join("pred.pgm"), &heat)?;
    let max = heat.scores().data().iter().cloned().fold(0.0f32, f32::max);
    println!("{h}x{w} heatmap, max score {max:.3}, {} gt pixels; files in {}", gt.count_positive(), out.display());
    Ok(())
}
