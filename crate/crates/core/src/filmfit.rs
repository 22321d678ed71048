//! Fitting only a FiLM layer to undo a prompt-dependent offset on tokens.
//!
//! Tokens are built as `Z = Z* − δ(t) + ε`. With `γ ≡ 1` and `β(z_t) = δ(t)`
//! the modulated tokens differ from `Z*` by the noise alone, so a fitted
//! FiLM should reach the noise floor while the untouched tokens carry the
//! extra `E‖δ‖²`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::decoder::film_on;
use crate::error::{Error, Result};
use crate::nn;
use crate::params::ParamSet;
use crate::tensor::Tensor;
use crate::training::{AdamConfig, LrSchedule};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilmFitConfig {
    /// Token width `d`.
    pub dim: usize,
    pub text_dim: usize,
    pub prompts: usize,
    /// Tokens per prompt in the training and held-out sets.
    pub tokens: usize,
    /// Standard deviation of `ε`.
    pub noise: f64,
    /// Standard deviation of the entries of `δ(t)`; 0 removes the offset.
    pub offset: f64,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for FilmFitConfig {
    fn default() -> Self {
        Self { dim: 16, text_dim: 8, prompts: 4, tokens: 256, noise: 0.1, offset: 1.0, steps: 400, lr: 0.05, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilmFitReport {
    /// `E[ε²]`, per element.
    pub noise_floor: f64,
    /// Held-out `‖γ ⊙ Z + β − Z*‖²` per element after fitting.
    pub film_mse: f64,
    /// Held-out `‖Z − Z*‖²` per element.
    pub baseline_mse: f64,
}

impl FilmFitReport {
    /// `film_mse / noise_floor − 1`.
    pub fn excess_over_floor(&self) -> f64 {
        self.film_mse / self.noise_floor - 1.0
    }
}

struct Split {
    /// Per prompt: corrupted tokens and clean targets, `[tokens, d]` each.
    pairs: Vec<(Tensor<f64>, Tensor<f64>)>,
    noise_sq: f64,
}

fn make_split(cfg: &FilmFitConfig, deltas: &[Tensor<f64>], rng: &mut ChaCha8Rng) -> Split {
    let mut pairs = Vec::with_capacity(cfg.prompts);
    let mut noise_sq = 0.0;
    for delta in deltas {
        let clean = Tensor::<f64>::randn(&[cfg.tokens, cfg.dim], 1.0, rng);
        let eps = Tensor::<f64>::randn(&[cfg.tokens, cfg.dim], cfg.noise, rng);
        noise_sq += eps.data().iter().map(|v| v * v).sum::<f64>();
        let d = delta.data();
        let corrupted = Tensor::from_fn(&[cfg.tokens, cfg.dim], |i| clean.data()[i] - d[i % cfg.dim] + eps.data()[i]);
        pairs.push((corrupted, clean));
    }
    Split { pairs, noise_sq: noise_sq / (cfg.prompts * cfg.tokens * cfg.dim) as f64 }
}

fn mse(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

/// Fits `film.gamma` and `film.beta` with Adam on the training split and
/// reports held-out errors.
pub fn run_film_fit(cfg: &FilmFitConfig) -> Result<FilmFitReport> {
    if cfg.dim == 0 || cfg.text_dim == 0 || cfg.prompts == 0 || cfg.tokens == 0 || !(cfg.noise > 0.0) || !(cfg.offset >= 0.0) {
        return Err(Error::config("film fit: sizes must be positive, noise positive and offset non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let text = Tensor::<f64>::randn(&[cfg.prompts, cfg.text_dim], 1.0, &mut rng);
    let deltas: Vec<Tensor<f64>> = (0..cfg.prompts).map(|_| Tensor::randn(&[cfg.dim], cfg.offset, &mut rng)).collect();
    let train = make_split(cfg, &deltas, &mut rng);
    let test = make_split(cfg, &deltas, &mut rng);

    // same initialization as the decoder's FiLM: γ starts at 1, β at 0
    let mut params = ParamSet::<f64>::new();
    let std = 1.0 / (cfg.text_dim as f64).sqrt();
    params.init_linear("film.gamma", cfg.text_dim, cfg.dim, std, &mut rng);
    params.insert("film.gamma.bias", Tensor::full(&[cfg.dim], 1.0));
    params.init_linear("film.beta", cfg.text_dim, cfg.dim, std, &mut rng);

    let forward = |params: &ParamSet<f64>, split: &Split, grads: bool| -> Result<(f64, Option<ParamSet<f64>>)> {
        let tape = Tape::new();
        let p = params.bind(&tape);
        let t = tape.constant(text.clone());
        let (gamma, beta) = (nn::linear(t, &p, "film.gamma")?, nn::linear(t, &p, "film.beta")?);
        let n = (cfg.prompts * cfg.tokens * cfg.dim) as f64;
        let mut total = None;
        for (i, (z, clean)) in split.pairs.iter().enumerate() {
            let out = film_on(tape.constant(z.clone()), gamma.select_row(i)?, beta.select_row(i)?)?;
            let diff = out.add(tape.constant(clean.scale(-1.0)))?;
            let l = diff.mul(diff)?.sum_all()?.scale(1.0 / n)?;
            total = Some(match total {
                None => l,
                Some(acc) => l.add(acc)?,
            });
        }
        let total = total.expect("at least one prompt");
        let value = total.value().item();
        Ok((value, if grads { Some(p.gradients(&tape.backward(total)?)) } else { None }))
    };

    let adam = AdamConfig { schedule: LrSchedule::Constant { lr: cfg.lr }, ..AdamConfig::default() };
    let mut state = Adam64::new(&params, adam);
    for _ in 0..cfg.steps {
        let (_, g) = forward(&params, &train, true)?;
        state.update(&mut params, &g.expect("requested"))?;
    }
    let (film_mse, _) = forward(&params, &test, false)?;
    let baseline_mse = test.pairs.iter().map(|(z, c)| mse(z, c)).sum::<f64>() / cfg.prompts as f64;
    Ok(FilmFitReport { noise_floor: test.noise_sq, film_mse, baseline_mse })
}

/// Adam over `f64` parameters; the training optimizer stores `f32`.
struct Adam64 {
    m: ParamSet<f64>,
    v: ParamSet<f64>,
    step: u64,
    cfg: AdamConfig,
}

impl Adam64 {
    fn new(params: &ParamSet<f64>, cfg: AdamConfig) -> Self {
        Self { m: params.zeros_like(), v: params.zeros_like(), step: 0, cfg }
    }

    fn update(&mut self, params: &mut ParamSet<f64>, grads: &ParamSet<f64>) -> Result<()> {
        self.step += 1;
        let lr = self.cfg.schedule.at(self.step - 1);
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let (c1, c2) = (1.0 - b1.powi(self.step as i32), 1.0 - b2.powi(self.step as i32));
        let names: Vec<String> = params.names().cloned().collect();
        for name in names {
            let g = grads.get(&name)?.data().to_vec();
            let m = self.m.get_mut(&name).expect("same names").data_mut();
            m.iter_mut().zip(&g).for_each(|(m, g)| *m = b1 * *m + (1.0 - b1) * g);
            let m = m.to_vec();
            let v = self.v.get_mut(&name).expect("same names").data_mut();
            v.iter_mut().zip(&g).for_each(|(v, g)| *v = b2 * *v + (1.0 - b2) * g * g);
            let v = v.to_vec();
            let p = params.get_mut(&name).expect("same names").data_mut();
            for i in 0..p.len() {
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.cfg.eps);
            }
        }
        Ok(())
    }
}
