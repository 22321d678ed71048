//! Executable quarter-turn equivariance checks, stage by stage and for the
//! whole decoder.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::PatchTokens;
use crate::error::{Error, Result};
use crate::gridmath;
use crate::params::ParamSet;
use crate::tensor::{Scalar, Tensor};

use super::{
    act_quarter_turns, aggregate, decode_logits, film, group, to_grid, token_rotate, transformer_block, upsample_head, DecoderConfig,
};

/// Default tolerance: `1e-5` in single precision, `1e-10` in double.
pub fn tolerance<T: Scalar>() -> f64 {
    if std::mem::size_of::<T>() <= 4 {
        1e-5
    } else {
        1e-10
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageCheck {
    pub stage: &'static str,
    pub quarter_turns: i64,
    pub deviation: f64,
    pub tolerance: f64,
}

impl StageCheck {
    pub fn passed(&self) -> bool {
        self.deviation < self.tolerance
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EquivarianceReport {
    pub checks: Vec<StageCheck>,
}

impl EquivarianceReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(StageCheck::passed)
    }

    /// Distinct failing stage names, in check order.
    pub fn failing_stages(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        for c in self.checks.iter().filter(|c| !c.passed()) {
            if !out.contains(&c.stage) {
                out.push(c.stage);
            }
        }
        out
    }

    /// Largest deviation recorded for `stage`.
    pub fn max_deviation(&self, stage: &str) -> Option<f64> {
        self.checks
            .iter()
            .filter(|c| c.stage == stage)
            .map(|c| c.deviation)
            .reduce(f64::max)
    }

    pub fn extend(&mut self, other: EquivarianceReport) {
        self.checks.extend(other.checks);
    }
}

impl fmt::Display for EquivarianceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{:<8} theta={:>3}  max_dev={:.3e}  tol={:.0e}  {}",
                c.stage,
                c.quarter_turns * 90,
                c.deviation,
                c.tolerance,
                if c.passed() { "ok" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

fn dev<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    Ok(a.max_abs_diff(b)?.to_f64())
}

/// Applies the token permutation to a `[M·M, d]` matrix.
fn permute_rows<T: Scalar>(tokens: &Tensor<T>, k: i64) -> Result<Tensor<T>> {
    let (count, d) = (tokens.shape()[0], tokens.shape()[1]);
    let m = (count as f64).sqrt().round() as usize;
    let pt = PatchTokens::new(tokens.reshape(&[m, m, d])?, 1, (m, m))?;
    Ok(token_rotate(&pt, k).matrix())
}

fn record(stage: &'static str, k: i64, deviation: f64, tol: f64) -> StageCheck {
    StageCheck {
        stage,
        quarter_turns: k,
        deviation,
        tolerance: tol,
    }
}

/// Step ①: FiLM commutes with token permutation.
pub fn check_film<T: Scalar>(tokens: &PatchTokens<T>, text: &Tensor<T>, params: &ParamSet<T>) -> Result<EquivarianceReport> {
    let tol = tolerance::<T>();
    let mut checks = Vec::new();
    let dt = text.shape()[1];
    for row in 0..text.shape()[0] {
        let zt = Tensor::new(&[dt], text.data()[row * dt..(row + 1) * dt].to_vec())?;
        let base = film(&zt, tokens, params)?;
        let base_pt = PatchTokens::new(base, tokens.patch_size, tokens.image_size)?;
        for k in 1..4 {
            let lhs = film(&zt, &token_rotate(tokens, k), params)?;
            let rhs = token_rotate(&base_pt, k).tokens;
            checks.push(record("film", k, dev(&lhs, &rhs)?, tol));
        }
    }
    Ok(EquivarianceReport { checks })
}

/// Step ②: per-prompt transformer plus weighted aggregation commute with
/// token permutation.
pub fn check_mixing<T: Scalar>(per_prompt: &[Tensor<T>], params: &ParamSet<T>, cfg: &DecoderConfig) -> Result<EquivarianceReport> {
    let tol = tolerance::<T>();
    let logits = params.get("agg.logits")?;
    let mixed: Vec<Tensor<T>> = per_prompt
        .iter()
        .map(|x| transformer_block(x, params, cfg))
        .collect::<Result<_>>()?;
    let base = aggregate(&mixed, logits)?;
    let mut checks = Vec::new();
    for k in 1..4 {
        let moved: Vec<Tensor<T>> = per_prompt
            .iter()
            .map(|x| transformer_block(&permute_rows(x, k)?, params, cfg))
            .collect::<Result<_>>()?;
        let lhs = aggregate(&moved, logits)?;
        checks.push(record("mixing", k, dev(&lhs, &permute_rows(&base, k)?)?, tol));
    }
    Ok(EquivarianceReport { checks })
}

/// Grid reassembly turns the token permutation into a planar rotation.
pub fn check_grid<T: Scalar>(tokens: &Tensor<T>) -> Result<EquivarianceReport> {
    let base = to_grid(tokens)?;
    let mut checks = Vec::new();
    for k in 1..4 {
        let lhs = to_grid(&permute_rows(tokens, k)?)?;
        let rhs = gridmath::rotate90(&base, k)?;
        checks.push(record("grid", k, dev(&lhs, &rhs)?, tolerance::<T>()));
    }
    Ok(EquivarianceReport { checks })
}

/// Lifting (with frame alignment) intertwines planar rotation with the
/// group action on `[n, C, h, w]`.
pub fn check_lift<T: Scalar>(grid: &Tensor<T>, n: usize) -> Result<EquivarianceReport> {
    use crate::autodiff::AdjointRule;
    let la = |f: &Tensor<T>| -> Result<Tensor<T>> { group::AlignFrame { n }.forward(&[&group::lift(f, n)?]) };
    let base = la(grid)?;
    let mut checks = Vec::new();
    for k in 1..4 {
        let lhs = la(&gridmath::rotate90(grid, k)?)?;
        let rhs = act_quarter_turns(&base, k)?;
        checks.push(record("lift", k, dev(&lhs, &rhs)?, tolerance::<T>()));
    }
    Ok(EquivarianceReport { checks })
}

/// Step ③: the G-conv/upsampling head maps the group action to a planar
/// rotation of the heatmap.
pub fn check_head<T: Scalar>(g: &Tensor<T>, side: usize, params: &ParamSet<T>, cfg: &DecoderConfig) -> Result<EquivarianceReport> {
    let base = upsample_head(g, side, side, params, cfg)?.into_tensor();
    let mut checks = Vec::new();
    for k in 1..4 {
        let lhs = upsample_head(&act_quarter_turns(g, k)?, side, side, params, cfg)?.into_tensor();
        let rhs = gridmath::rotate90(&base, k)?;
        checks.push(record("head", k, dev(&lhs, &rhs)?, tolerance::<T>()));
    }
    Ok(EquivarianceReport { checks })
}

/// The full claim on heatmaps: `decode(T_θ Z) = R_θ decode(Z)`.
pub fn check_decode<T: Scalar>(tokens: &PatchTokens<T>, text: &Tensor<T>, params: &ParamSet<T>, cfg: &DecoderConfig) -> Result<EquivarianceReport> {
    let heat = |z: &PatchTokens<T>| -> Result<Tensor<T>> {
        Ok(decode_logits(z, text, params, cfg)?.map(crate::autodiff::ops::sigmoid))
    };
    let base = heat(tokens)?;
    let mut checks = Vec::new();
    for k in 1..4 {
        let lhs = heat(&token_rotate(tokens, k))?;
        let rhs = gridmath::rotate90(&base, k)?;
        checks.push(record("decode", k, dev(&lhs, &rhs)?, tolerance::<T>()));
    }
    Ok(EquivarianceReport { checks })
}

/// Sizes of the random problem used by [`run_checks`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProbeShape {
    pub grid: usize,
    pub d_enc: usize,
    pub d_txt: usize,
    pub prompts: usize,
    pub image: usize,
}

impl Default for ProbeShape {
    fn default() -> Self {
        Self {
            grid: 6,
            d_enc: 12,
            d_txt: 8,
            prompts: 3,
            image: 30,
        }
    }
}

/// Random decoder parameters with non-trivial biases and aggregation
/// logits.
pub fn random_params<T: Scalar>(cfg: &DecoderConfig, shape: &ProbeShape, rng: &mut ChaCha8Rng) -> ParamSet<T> {
    let mut params = super::init_decoder::<T, _>(cfg, shape.d_enc, shape.d_txt, shape.prompts, rng);
    let names: Vec<String> = params.names().filter(|n| n.ends_with("bias") || n.ends_with("logits")).cloned().collect();
    for name in names {
        let s = params.get(&name).expect("listed").shape().to_vec();
        let noise = Tensor::<T>::randn(&s, 0.2, rng);
        let v = params.get_mut(&name).expect("listed");
        *v = v.zip_map(&noise, |a, b| a + b).expect("same shape");
    }
    params
}

/// Runs every stage check and the full claim on random inputs.
pub fn run_checks<T: Scalar>(cfg: &DecoderConfig, shape: &ProbeShape, seed: u64) -> Result<EquivarianceReport> {
    cfg.validate()?;
    if cfg.n % 4 != 0 {
        return Err(Error::config(format!("quarter-turn checks need 4 | n, got n = {}", cfg.n)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = shape.grid;
    let tokens = PatchTokens::new(Tensor::<T>::randn(&[m, m, shape.d_enc], 1.0, &mut rng), 1, (shape.image, shape.image))?;
    let text = Tensor::<T>::randn(&[shape.prompts, shape.d_txt], 1.0, &mut rng);
    let params = random_params::<T>(cfg, shape, &mut rng);

    let mut report = check_film(&tokens, &text, &params)?;
    let per_prompt: Vec<Tensor<T>> = (0..shape.prompts)
        .map(|_| Tensor::randn(&[m * m, cfg.dim], 1.0, &mut rng))
        .collect();
    report.extend(check_mixing(&per_prompt, &params, cfg)?);
    let flat = Tensor::<T>::randn(&[m * m, cfg.dim], 1.0, &mut rng);
    report.extend(check_grid(&flat)?);
    report.extend(check_lift(&to_grid(&flat)?, cfg.n)?);
    let g = Tensor::<T>::randn(&[cfg.n, cfg.dim, m, m], 1.0, &mut rng);
    report.extend(check_head(&g, shape.image, &params, cfg)?);
    report.extend(check_decode(&tokens, &text, &params, cfg)?);
    Ok(report)
}
