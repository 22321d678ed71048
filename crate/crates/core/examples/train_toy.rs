//! Trains the desk-toy preset on synthetic reflection scenes held in memory
//! and reports validation F1.
//!
//! cargo run --release --example train_toy -- [epochs] [train images]

use symdec::config::RunConfig;
use symdec::metrics::{f1_max, predict_split, EvalItem};
use symdec::model::Model;
use symdec::synthdata::generate_split;
use symdec::training::{train, OptimState};

fn main() -> symdec::Result<()> {
    env_logger::init();
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut cfg = RunConfig::desk_toy();
    cfg.train.epochs = args.first().copied().unwrap_or(cfg.train.epochs);
    let n_train = args.get(1).copied().unwrap_or(cfg.data.train);
    cfg.validate()?;

    let scene = cfg.scene();
    let train_set = generate_split(&scene, "train", n_train)?;
    let val = EvalItem::from_samples(&generate_split(&scene, "val", cfg.data.val)?);

    let mut model = Model::init(cfg.model_spec(), &cfg.text_tokens()?, cfg.seed)?;
    let mut optim = OptimState::new(&model.params, cfg.optim);
    let tc = cfg.train_config();
    let spe = tc.steps_per_epoch(train_set.len());
    train(&mut model, &mut optim, &train_set, &tc, None, |r, m, _| {
        if r.step % spe == 0 {
            let (p, g) = predict_split(m, &val, tc.task, &tc.gt)?;
            let f1 = f1_max(&p, &g, &cfg.f1_options())?;
            println!("epoch {:>3}  loss {:>9.3}  val F1 {:.3} at tau {:.2}  {:.0}s", r.epoch + 1, r.loss, f1.f1, f1.tau, r.wall);
        }
        Ok(())
    })?;
    Ok(())
}
