//! α-balanced focal loss on heatmaps.

use serde::{Deserialize, Serialize};

use crate::autodiff::AdjointRule;
use crate::error::{Error, Result};
use crate::heatmap::Heatmap;
use crate::synthdata::Task;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FocalConfig {
    /// Weight of positive pixels; negatives get `1 − alpha`.
    pub alpha: f64,
    /// Focusing exponent.
    pub lambda: f64,
    /// Probability clamp.
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_eps() -> f64 {
    1e-7
}

impl FocalConfig {
    pub fn for_task(task: Task) -> Self {
        let alpha = match task {
            Task::Reflection => 0.85,
            Task::Rotation => 0.95,
        };
        Self { alpha, lambda: 2.0, eps: default_eps() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config(format!("focal alpha {} is outside (0, 1)", self.alpha)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::config(format!("focal lambda {} is negative", self.lambda)));
        }
        if !(self.eps > 0.0 && self.eps <= 1e-3) {
            return Err(Error::config(format!("focal eps {} is outside (0, 1e-3]", self.eps)));
        }
        Ok(())
    }
}

impl Default for FocalConfig {
    fn default() -> Self {
        Self::for_task(Task::Reflection)
    }
}

/// Per-pixel loss for `s`, the clamped probability assigned to the true
/// class, with weight `a`.
fn pixel_loss(s: f64, a: f64, lambda: f64) -> f64 {
    -a * (1.0 - s).powf(lambda) * s.ln()
}

fn check_pair<T: Scalar>(pred: &Tensor<T>, gt: &Heatmap<T>) -> Result<()> {
    if pred.shape() != gt.scores().shape() {
        return Err(Error::shape(format!("prediction {:?} vs ground truth {:?}", pred.shape(), gt.scores().shape())));
    }
    if !gt.is_binary() {
        return Err(Error::config("focal loss needs a binary ground truth"));
    }
    Ok(())
}

/// Summed focal loss of a probability map against a binary ground truth.
pub fn focal_loss<T: Scalar>(pred: &Heatmap<T>, gt: &Heatmap<T>, cfg: &FocalConfig) -> Result<f64> {
    cfg.validate()?;
    check_pair(pred.scores(), gt)?;
    let (lo, hi) = (cfg.eps, 1.0 - cfg.eps);
    Ok(pred
        .scores()
        .data()
        .iter()
        .zip(gt.scores().data())
        .map(|(&p, &g)| {
            let p = p.to_f64().clamp(lo, hi);
            if g > T::zero() {
                pixel_loss(p, cfg.alpha, cfg.lambda)
            } else {
                pixel_loss(1.0 - p, 1.0 - cfg.alpha, cfg.lambda)
            }
        })
        .sum())
}

/// Focal loss applied to logits, fused with the sigmoid for stability.
/// Input `[H, W]` logits, output a scalar sum. The ground truth is fixed.
pub struct FocalWithLogits<T: Scalar> {
    gt: Tensor<T>,
    cfg: FocalConfig,
}

impl<T: Scalar> FocalWithLogits<T> {
    pub fn new(gt: &Heatmap<T>, cfg: FocalConfig) -> Result<Self> {
        cfg.validate()?;
        if !gt.is_binary() {
            return Err(Error::config("focal loss needs a binary ground truth"));
        }
        Ok(Self { gt: gt.scores().clone(), cfg })
    }

    /// `(s, weight, sign)` for one pixel: `s` is the probability of the
    /// true class before clamping, `sign` is `ds/dz / s(1−s)`.
    fn terms(&self, z: f64, g: T) -> (f64, f64, f64) {
        if g > T::zero() {
            (crate::autodiff::ops::sigmoid(z), self.cfg.alpha, 1.0)
        } else {
            (crate::autodiff::ops::sigmoid(-z), 1.0 - self.cfg.alpha, -1.0)
        }
    }
}

impl<T: Scalar> AdjointRule<T> for FocalWithLogits<T> {
    fn name(&self) -> &'static str {
        "focal_with_logits"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let z = inputs[0];
        if z.shape() != self.gt.shape() {
            return Err(Error::shape(format!("logits {:?} vs ground truth {:?}", z.shape(), self.gt.shape())));
        }
        let (lo, hi) = (self.cfg.eps, 1.0 - self.cfg.eps);
        let total: f64 = z
            .data()
            .iter()
            .zip(self.gt.data())
            .map(|(&z, &g)| {
                let (s, a, _) = self.terms(z.to_f64(), g);
                pixel_loss(s.clamp(lo, hi), a, self.cfg.lambda)
            })
            .sum();
        Ok(Tensor::scalar(T::of(total)))
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, cot: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        if !needs[0] {
            return vec![None];
        }
        let (lo, hi) = (self.cfg.eps, 1.0 - self.cfg.eps);
        let lambda = self.cfg.lambda;
        let c = cot.item().to_f64();
        let data = inputs[0]
            .data()
            .iter()
            .zip(self.gt.data())
            .map(|(&z, &g)| {
                let (s, a, sign) = self.terms(z.to_f64(), g);
                if s < lo || s > hi {
                    return T::zero();
                }
                // d/dz of −a(1−s)^λ log s with ds/dz = sign·s(1−s)
                let d = sign * a * (1.0 - s).powf(lambda) * (lambda * s * s.ln() - (1.0 - s));
                T::of(c * d)
            })
            .collect();
        vec![Some(Tensor::new(inputs[0].shape(), data).expect("same shape"))]
    }
}
