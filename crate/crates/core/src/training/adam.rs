//! Adam with a constant or exponentially decaying learning rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LrSchedule {
    Constant { lr: f64 },
    /// `lr · rate^(step / decay_steps)`.
    Exponential { lr: f64, rate: f64, decay_steps: u64 },
}

impl LrSchedule {
    pub fn at(&self, step: u64) -> f64 {
        match *self {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::Exponential { lr, rate, decay_steps } => lr * rate.powf(step as f64 / decay_steps.max(1) as f64),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub schedule: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { schedule: LrSchedule::Constant { lr: 1e-3 }, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    /// Small initial rate decayed by 10× over `total_steps`.
    pub fn paper(total_steps: u64) -> Self {
        Self {
            schedule: LrSchedule::Exponential { lr: 1e-5, rate: 0.1, decay_steps: total_steps.max(1) },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lr = match self.schedule {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::Exponential { lr, rate, .. } => {
                if !(rate > 0.0 && rate <= 1.0) {
                    return Err(Error::config(format!("decay rate {rate} is outside (0, 1]")));
                }
                lr
            }
        };
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::config(format!("learning rate {lr} must be positive")));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::config("Adam needs betas in [0, 1) and a positive eps"));
        }
        Ok(())
    }
}

/// Moment accumulators and the number of updates taken.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub m: ParamSet,
    pub v: ParamSet,
    pub step: u64,
    pub cfg: AdamConfig,
}

impl OptimState {
    pub fn new(params: &ParamSet, cfg: AdamConfig) -> Self {
        Self { m: params.zeros_like(), v: params.zeros_like(), step: 0, cfg }
    }

    /// Learning rate of the next update.
    pub fn lr(&self) -> f64 {
        self.cfg.schedule.at(self.step)
    }

    /// One bias-corrected Adam update in place.
    pub fn update(&mut self, params: &mut ParamSet, grads: &ParamSet) -> Result<()> {
        let lr = self.lr();
        self.step += 1;
        let AdamConfig { beta1, beta2, eps, .. } = self.cfg;
        let t = self.step as i32;
        let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
        for (name, p) in params.iter_mut() {
            let g = grads.get(name)?;
            let m = self.m.get_mut(name).ok_or_else(|| Error::config(format!("no first moment for `{name}`")))?;
            let v = self.v.get_mut(name).ok_or_else(|| Error::config(format!("no second moment for `{name}`")))?;
            if g.shape() != p.shape() || m.shape() != p.shape() || v.shape() != p.shape() {
                return Err(Error::shape(format!("optimizer shapes disagree for `{name}`")));
            }
            let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
            for i in 0..pd.len() {
                let gi = g.data()[i] as f64;
                let mi = beta1 * md[i] as f64 + (1.0 - beta1) * gi;
                let vi = beta2 * vd[i] as f64 + (1.0 - beta2) * gi * gi;
                md[i] = mi as f32;
                vd[i] = vi as f32;
                pd[i] -= (lr * (mi / c1) / ((vi / c2).sqrt() + eps)) as f32;
            }
        }
        Ok(())
    }
}
