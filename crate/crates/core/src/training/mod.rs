//! Focal-loss training of the encoder, prompt embeddings and decoder.

pub mod adam;
pub mod augment;
pub mod checkpoint;
pub mod focal;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::heatmap::Heatmap;
use crate::model::{logits_on, Model, TEXT_PARAM};
use crate::params::{Bound, ParamSet};
use crate::synthdata::{rasterize_gt, GtStyle, Sample, Task};
use crate::tensor::{Scalar, Tensor};

pub use adam::{AdamConfig, LrSchedule, OptimState};
pub use augment::{augment, AugmentConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use focal::{focal_loss, FocalConfig, FocalWithLogits};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub task: Task,
    pub focal: FocalConfig,
    pub adam: AdamConfig,
    pub augment: AugmentConfig,
    pub gt: GtStyle,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            task: Task::Reflection,
            focal: FocalConfig::for_task(Task::Reflection),
            adam: AdamConfig::default(),
            augment: AugmentConfig::default(),
            gt: GtStyle::default(),
            batch_size: 8,
            epochs: 30,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        self.focal.validate()?;
        self.adam.validate()?;
        self.augment.validate()
    }

    pub fn steps_per_epoch(&self, samples: usize) -> u64 {
        samples.div_ceil(self.batch_size) as u64
    }
}

/// Focal loss of one image on a tape.
pub fn loss_on<'t, T: Scalar>(tape: &'t Tape<T>, p: &Bound<'t, T>, model: &crate::model::ModelSpec, image: &Tensor<T>, gt: &Heatmap<T>, focal: &FocalConfig) -> Result<Var<'t, T>> {
    let logits = logits_on(tape, p, image, model)?;
    tape.apply(FocalWithLogits::new(gt, *focal)?, &[logits])
}

/// One Adam update on the mean focal loss of `batch`. Items are processed in
/// order and their gradients summed in that order.
pub fn train_step(batch: &[(Tensor, Heatmap)], model: &mut Model, optim: &mut OptimState, focal: &FocalConfig) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::config("empty batch"));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grads = model.params.zeros_like();
    let mut loss = 0.0f64;
    for (i, (image, gt)) in batch.iter().enumerate() {
        let tape = Tape::checked();
        let bound = model.params.bind(&tape);
        let l = loss_on(&tape, &bound, &model.spec, image, gt, focal)?.scale(scale)?;
        let v = l.value().item() as f64;
        if !v.is_finite() {
            return Err(Error::numeric(format!("loss of batch item {i}"), format!("value {v}")));
        }
        loss += v;
        grads.accumulate(&bound.gradients(&tape.backward(l)?))?;
    }
    if !model.text_trainable {
        if let Some(g) = grads.get_mut(TEXT_PARAM) {
            *g = Tensor::zeros(g.shape());
        }
    }
    if let Some((name, i)) = grads.first_non_finite() {
        return Err(Error::numeric(format!("gradient of `{name}`"), format!("element {i} is not finite")));
    }
    optim.update(&mut model.params, &grads)?;
    if let Some((name, i)) = model.params.first_non_finite() {
        return Err(Error::numeric(format!("parameter `{name}` after update"), format!("element {i} is not finite")));
    }
    Ok(loss)
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Updates taken after this step.
    pub step: u64,
    pub epoch: u64,
    pub loss: f64,
    pub lr: f64,
    /// Seconds since this run started.
    pub wall: f64,
}

const ORDER_SALT: u64 = 0x0dd5_eed5_0f_da7a;
const AUGMENT_SALT: u64 = 0xa6_a6e7_5a17;

/// Sample order of an epoch, a pure function of `(seed, epoch)`.
pub fn epoch_order(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ORDER_SALT);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Augmented image and rasterized ground truth for sample `idx` in `epoch`.
pub fn prepare_sample(sample: &Sample, cfg: &TrainConfig, epoch: u64, idx: usize) -> Result<(Tensor, Heatmap)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ AUGMENT_SALT);
    rng.set_stream(epoch.wrapping_mul(1 << 32).wrapping_add(idx as u64));
    let (image, ann) = augment(&sample.image, &sample.annotation, &cfg.augment, &mut rng)?;
    let gt = rasterize_gt(&ann, sample.height(), sample.width(), cfg.task, &cfg.gt)?;
    Ok((image, gt))
}

/// Trains until `optim.step` reaches `stop_at` (at most `epochs` full
/// passes). The position in the data stream is derived from `optim.step`,
/// so a run restored from a checkpoint continues exactly where it stopped.
pub fn train(model: &mut Model, optim: &mut OptimState, data: &[Sample], cfg: &TrainConfig, stop_at: Option<u64>, mut on_step: impl FnMut(&StepRecord, &Model, &OptimState) -> Result<()>) -> Result<Vec<StepRecord>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::config("no training samples"));
    }
    let spe = cfg.steps_per_epoch(data.len());
    let last = (cfg.epochs as u64 * spe).min(stop_at.unwrap_or(u64::MAX));
    let start = Instant::now();
    let mut records = Vec::new();
    let mut order: Option<(u64, Vec<usize>)> = None;
    while optim.step < last {
        let (epoch, pos) = (optim.step / spe, (optim.step % spe) as usize);
        if order.as_ref().map(|(e, _)| *e) != Some(epoch) {
            order = Some((epoch, epoch_order(cfg.seed, epoch, data.len())));
        }
        let idx = &order.as_ref().expect("set above").1;
        let chunk = &idx[pos * cfg.batch_size..((pos + 1) * cfg.batch_size).min(data.len())];
        let batch = chunk.iter().map(|&i| prepare_sample(&data[i], cfg, epoch, i)).collect::<Result<Vec<_>>>()?;
        let lr = optim.lr();
        let loss = train_step(&batch, model, optim, &cfg.focal)?;
        let rec = StepRecord { step: optim.step, epoch, loss, lr, wall: start.elapsed().as_secs_f64() };
        on_step(&rec, model, optim)?;
        records.push(rec);
    }
    Ok(records)
}

/// Gradients of the mean focal loss over `batch` without updating.
pub fn batch_gradients<T: Scalar>(params: &ParamSet<T>, spec: &crate::model::ModelSpec, batch: &[(Tensor<T>, Heatmap<T>)], focal: &FocalConfig) -> Result<(f64, ParamSet<T>)> {
    let mut grads = params.zeros_like();
    let mut loss = 0.0;
    for (image, gt) in batch {
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let l = loss_on(&tape, &bound, spec, image, gt, focal)?.scale(1.0 / batch.len() as f64)?;
        loss += l.value().item().to_f64();
        grads.accumulate(&bound.gradients(&tape.backward(l)?))?;
    }
    Ok((loss, grads))
}
