//! Rotation-equivariant heatmap decoder.
//!
//! Per prompt: project the patch tokens, modulate them with FiLM
//! coefficients computed from the prompt embedding, and mix them with a
//! transformer that carries no positional information. The per-prompt token
//! sets are averaged with softmax weights, put back on the `M×M` grid,
//! lifted to `C_n`, and decoded by three G-convolution + 2× upsampling
//! stages. The rotation axis is mean-pooled and a sigmoid gives the heatmap.

pub mod equivariance;
pub mod gconv;
pub mod group;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ops::ConvexCombine, Tape, Var};
use crate::encoder::PatchTokens;
use crate::error::{Error, Result};
use crate::gridmath;
use crate::heatmap::Heatmap;
use crate::nn::{self, TransformerSpec};
use crate::params::{Bound, ParamSet};
use crate::sapg::TextTokens;
use crate::tensor::{Scalar, Tensor};

pub use gconv::{gconv, GConv};
pub use group::{act_quarter_turns, lift, AlignFrame, Lift};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderConfig {
    /// Order of the rotation group `C_n`.
    pub n: usize,
    /// Token width `d` after projection.
    pub dim: usize,
    /// Transformer depth `L_B`.
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// G-convolution channel pipeline, starting at `dim` and ending at 1.
    pub channels: Vec<usize>,
    pub kernel: usize,
    /// Adds a sinusoidal position table before the transformer. Only used to
    /// show that the equivariance checks detect a broken decoder.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub inject_positional_encoding: bool,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self::desk_toy()
    }
}

impl DecoderConfig {
    pub fn desk_toy() -> Self {
        Self {
            n: 8,
            dim: 16,
            layers: 2,
            heads: 2,
            mlp_ratio: 4,
            channels: vec![16, 8, 4, 1],
            kernel: 3,
            inject_positional_encoding: false,
        }
    }

    pub fn paper() -> Self {
        Self {
            n: 8,
            dim: 64,
            layers: 3,
            heads: 4,
            mlp_ratio: 4,
            channels: vec![64, 32, 16, 1],
            kernel: 3,
            inject_positional_encoding: false,
        }
    }

    pub fn transformer(&self) -> TransformerSpec {
        TransformerSpec {
            dim: self.dim,
            heads: self.heads,
            layers: self.layers,
            mlp_ratio: self.mlp_ratio,
        }
    }

    /// Number of G-convolution + upsampling stages.
    pub fn stages(&self) -> usize {
        self.channels.len() - 1
    }

    /// Whether the decoder is claimed equivariant to quarter turns.
    pub fn c4_subgroup(&self) -> bool {
        self.n % 4 == 0 && !self.inject_positional_encoding
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("decoder: n must be positive"));
        }
        if self.n % 4 != 0 {
            if self.n == 6 {
                log::warn!("decoder: n = 6 does not contain C4; quarter-turn equivariance is not guaranteed");
            } else {
                return Err(Error::config(format!("decoder: n = {} is not a multiple of 4", self.n)));
            }
        }
        if self.channels.len() < 2 || self.channels[0] != self.dim || *self.channels.last().unwrap() != 1 {
            return Err(Error::config(format!(
                "decoder: channel pipeline {:?} must start at d = {} and end at 1",
                self.channels, self.dim
            )));
        }
        if self.channels.contains(&0) {
            return Err(Error::config("decoder: channel counts must be positive"));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::config("decoder: kernel size must be odd"));
        }
        self.transformer().validate("decoder")
    }
}

/// Decoder parameters. Linear maps use `1/√fan_in` Gaussians, the FiLM gain
/// bias starts at 1, G-conv filters use He initialization and the prompt
/// aggregation logits start at 0 (uniform weights).
pub fn init_decoder<T: Scalar, R: Rng + ?Sized>(cfg: &DecoderConfig, d_enc: usize, d_txt: usize, prompts: usize, rng: &mut R) -> ParamSet<T> {
    let d = cfg.dim;
    let mut p = ParamSet::new();
    p.init_linear("proj", d_enc, d, 1.0 / (d_enc as f64).sqrt(), rng);
    p.init_linear("film.gamma", d_txt, d, 1.0 / (d_txt as f64).sqrt(), rng);
    p.insert("film.gamma.bias", Tensor::full(&[d], T::one()));
    p.init_linear("film.beta", d_txt, d, 1.0 / (d_txt as f64).sqrt(), rng);
    nn::init_transformer(&mut p, "mix", &cfg.transformer(), rng);
    p.insert("agg.logits", Tensor::zeros(&[prompts]));
    let k = cfg.kernel;
    for (i, pair) in cfg.channels.windows(2).enumerate() {
        let (ci, co) = (pair[0], pair[1]);
        let fan_in = ci * cfg.n * k * k;
        p.insert(
            format!("head.conv{i}.filter"),
            Tensor::randn(&[co, ci, cfg.n, k, k], (2.0 / fan_in as f64).sqrt(), rng),
        );
        p.insert(format!("head.conv{i}.bias"), Tensor::zeros(&[co]));
    }
    p
}

/// Fixed sinusoidal table `[tokens, d]`.
pub fn positional_table<T: Scalar>(tokens: usize, d: usize) -> Tensor<T> {
    Tensor::from_fn(&[tokens, d], |i| {
        let (t, c) = ((i / d) as f64, i % d);
        let freq = 10000f64.powf(-((c / 2 * 2) as f64) / d as f64);
        T::of(if c % 2 == 0 { (t * freq).sin() } else { (t * freq).cos() })
    })
}

/// `γ ⊙ z_p + β` on every row of `zp [tokens, d]`.
pub fn film_on<'t, T: Scalar>(zp: Var<'t, T>, gamma: Var<'t, T>, beta: Var<'t, T>) -> Result<Var<'t, T>> {
    zp.mul_row(gamma)?.add_row(beta)
}

/// The decoder transformer `B` over `[tokens, d]`.
pub fn mix_on<'t, T: Scalar>(x: Var<'t, T>, p: &Bound<'t, T>, cfg: &DecoderConfig) -> Result<Var<'t, T>> {
    let x = if cfg.inject_positional_encoding {
        let s = x.shape();
        x.add(x.tape().constant(positional_table(s[0], s[1])))?
    } else {
        x
    };
    nn::transformer(x, p, "mix", &cfg.transformer())
}

/// `Σ_t softmax(logits)_t · branch_t`.
pub fn aggregate_on<'t, T: Scalar>(branches: &[Var<'t, T>], logits: Var<'t, T>) -> Result<Var<'t, T>> {
    if branches.is_empty() {
        return Err(Error::shape("aggregate: no prompts"));
    }
    let k = logits.value().len();
    if k != branches.len() {
        return Err(Error::shape(format!("aggregate: {k} logits for {} prompts", branches.len())));
    }
    let w = logits.reshape(&[1, k])?.softmax_rows()?.reshape(&[k])?;
    let mut inputs = Vec::with_capacity(k + 1);
    inputs.push(w);
    inputs.extend_from_slice(branches);
    logits.tape().apply(ConvexCombine, &inputs)
}

fn grid_side(tokens: usize) -> Result<usize> {
    let m = (tokens as f64).sqrt().round() as usize;
    if m * m != tokens {
        return Err(Error::shape(format!("{tokens} tokens do not form a square grid")));
    }
    Ok(m)
}

/// `[M·M, d] → [d, M, M]`.
pub fn to_grid_on<'t, T: Scalar>(tokens: Var<'t, T>) -> Result<Var<'t, T>> {
    let s = tokens.shape();
    let m = grid_side(s[0])?;
    tokens.transpose()?.reshape(&[s[1], m, m])
}

/// G-convolution stages, rotation mean-pool and resize; returns logits
/// `[H, W]` for a lifted map `[n, d, M, M]`.
pub fn head_on<'t, T: Scalar>(g: Var<'t, T>, p: &Bound<'t, T>, cfg: &DecoderConfig, out: (usize, usize)) -> Result<Var<'t, T>> {
    let stages = cfg.stages();
    let mut g = g;
    for i in 0..stages {
        g = gconv::gconv_var(
            g,
            p.get(&format!("head.conv{i}.filter"))?,
            p.get(&format!("head.conv{i}.bias"))?,
            cfg.n,
        )?;
        if i + 1 < stages {
            g = g.relu()?;
        }
        let s = g.shape();
        g = g.resize(2 * s[2], 2 * s[3])?;
    }
    g.mean_axis0()?.resize(out.0, out.1)?.reshape(&[out.0, out.1])
}

/// Full decoder on a tape: `tokens [M·M, D_enc]`, `text [P, D_txt]`,
/// returns heatmap logits `[H, W]`.
pub fn decode_on<'t, T: Scalar>(tokens: Var<'t, T>, text: Var<'t, T>, p: &Bound<'t, T>, cfg: &DecoderConfig, out: (usize, usize)) -> Result<Var<'t, T>> {
    let zp = nn::linear(tokens, p, "proj")?;
    let gammas = nn::linear(text, p, "film.gamma")?;
    let betas = nn::linear(text, p, "film.beta")?;
    let prompts = text.shape()[0];
    let mut branches = Vec::with_capacity(prompts);
    for t in 0..prompts {
        let f = film_on(zp, gammas.select_row(t)?, betas.select_row(t)?)?;
        branches.push(mix_on(f, p, cfg)?);
    }
    let mixed = aggregate_on(&branches, p.get("agg.logits")?)?;
    let grid = to_grid_on(mixed)?;
    let lifted = group::align_var(group::lift_var(grid, cfg.n)?, cfg.n)?;
    head_on(lifted, p, cfg, out)
}

fn frozen<T: Scalar, F>(params: &ParamSet<T>, f: F) -> Result<Tensor<T>>
where
    F: for<'t> FnOnce(&'t Tape<T>, &Bound<'t, T>) -> Result<Var<'t, T>>,
{
    let tape = Tape::new();
    let bound = params.bind_frozen(&tape);
    let out = f(&tape, &bound)?;
    let v = (*out.value()).clone();
    Ok(v)
}

/// FiLM-modulated projected tokens for one prompt embedding: `[M, M, d]`.
pub fn film<T: Scalar>(z_t: &Tensor<T>, tokens: &PatchTokens<T>, params: &ParamSet<T>) -> Result<Tensor<T>> {
    let m = tokens.grid();
    let out = frozen(params, |tape, p| {
        let zp = nn::linear(tape.constant(tokens.matrix()), p, "proj")?;
        let zt = tape.constant(z_t.reshape(&[1, z_t.len()])?);
        let g = nn::linear(zt, p, "film.gamma")?;
        let b = nn::linear(zt, p, "film.beta")?;
        film_on(zp, g, b)
    })?;
    let d = out.shape()[1];
    out.into_shape(&[m, m, d])
}

/// The decoder transformer on `[M·M, d]` tokens.
pub fn transformer_block<T: Scalar>(tokens: &Tensor<T>, params: &ParamSet<T>, cfg: &DecoderConfig) -> Result<Tensor<T>> {
    frozen(params, |tape, p| mix_on(tape.constant(tokens.clone()), p, cfg))
}

/// Softmax-weighted combination of per-prompt token sets.
pub fn aggregate<T: Scalar>(per_prompt: &[Tensor<T>], logits: &Tensor<T>) -> Result<Tensor<T>> {
    let tape = Tape::new();
    let branches: Vec<_> = per_prompt.iter().map(|t| tape.constant(t.clone())).collect();
    let out = aggregate_on(&branches, tape.constant(logits.clone()))?;
    let v = (*out.value()).clone();
    Ok(v)
}

/// `[M·M, d] → [d, M, M]` with `F[:, i, j]` = token `i·M + j`.
pub fn to_grid<T: Scalar>(tokens: &Tensor<T>) -> Result<Tensor<T>> {
    if tokens.rank() != 2 {
        return Err(Error::shape(format!("to_grid needs [tokens, d], got {:?}", tokens.shape())));
    }
    let (count, d) = (tokens.shape()[0], tokens.shape()[1]);
    let m = grid_side(count)?;
    Ok(Tensor::from_fn(&[d, m, m], |i| tokens.data()[(i % (m * m)) * d + i / (m * m)]))
}

/// Inverse of [`to_grid`].
pub fn from_grid<T: Scalar>(grid: &Tensor<T>) -> Result<Tensor<T>> {
    let (d, m, m2) = grid.planes()?;
    if m != m2 || grid.rank() != 3 {
        return Err(Error::shape(format!("from_grid needs [d, M, M], got {:?}", grid.shape())));
    }
    Ok(Tensor::from_fn(&[m * m, d], |i| grid.data()[(i % d) * m * m + i / d]))
}

/// Moves token `(i, j)` to `π_θ(i, j)` for `θ = k·90°`, so that
/// `to_grid ∘ token_rotate = rotate90 ∘ to_grid`.
pub fn token_rotate<T: Scalar>(tokens: &PatchTokens<T>, k: i64) -> PatchTokens<T> {
    let m = tokens.grid();
    let d = tokens.dim();
    let k = k.rem_euclid(4) as usize;
    let src = tokens.tokens.data();
    let mut out = Vec::with_capacity(src.len());
    for a in 0..m {
        for b in 0..m {
            let s = gridmath::rotate90_source(m, k, a, b);
            out.extend_from_slice(&src[s * d..(s + 1) * d]);
        }
    }
    PatchTokens {
        tokens: Tensor::new(tokens.tokens.shape(), out).expect("same shape"),
        patch_size: tokens.patch_size,
        image_size: tokens.image_size,
    }
}

/// Heatmap logits for a lifted map `[n, d, M, M]`.
pub fn upsample_head_logits<T: Scalar>(g: &Tensor<T>, h: usize, w: usize, params: &ParamSet<T>, cfg: &DecoderConfig) -> Result<Tensor<T>> {
    frozen(params, |tape, p| head_on(tape.constant(g.clone()), p, cfg, (h, w)))
}

pub fn upsample_head<T: Scalar>(g: &Tensor<T>, h: usize, w: usize, params: &ParamSet<T>, cfg: &DecoderConfig) -> Result<Heatmap<T>> {
    Heatmap::new(sigmoid_all(&upsample_head_logits(g, h, w, params, cfg)?))
}

fn sigmoid_all<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    t.map(crate::autodiff::ops::sigmoid)
}

/// Heatmap logits at the token grid's source image size.
pub fn decode_logits<T: Scalar>(tokens: &PatchTokens<T>, text: &Tensor<T>, params: &ParamSet<T>, cfg: &DecoderConfig) -> Result<Tensor<T>> {
    let out = frozen(params, |tape, p| {
        decode_on(tape.constant(tokens.matrix()), tape.constant(text.clone()), p, cfg, tokens.image_size)
    })?;
    if let Some(i) = out.first_non_finite() {
        return Err(Error::numeric("decoder output", format!("element {i} is not finite")));
    }
    Ok(out)
}

pub fn decode<T: Scalar>(tokens: &PatchTokens<T>, text: &TextTokens<T>, params: &ParamSet<T>, cfg: &DecoderConfig) -> Result<Heatmap<T>> {
    Heatmap::new(sigmoid_all(&decode_logits(tokens, &text.embeddings, params, cfg)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> DecoderConfig {
        DecoderConfig {
            n: 4,
            dim: 4,
            layers: 1,
            heads: 2,
            mlp_ratio: 2,
            channels: vec![4, 3, 2, 1],
            kernel: 3,
            inject_positional_encoding: false,
        }
    }

    fn setup(cfg: &DecoderConfig, seed: u64, prompts: usize) -> (PatchTokens<f64>, Tensor<f64>, ParamSet<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tokens = PatchTokens::new(Tensor::randn(&[4, 4, 6], 1.0, &mut rng), 4, (16, 16)).unwrap();
        let text = Tensor::randn(&[prompts, 5], 1.0, &mut rng);
        let params = init_decoder(cfg, 6, 5, prompts, &mut rng);
        (tokens, text, params)
    }

    #[test]
    fn film_identity_and_hand_value() {
        let tape = Tape::<f64>::new();
        let zp = tape.constant(Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap());
        let ones = tape.constant(Tensor::full(&[2], 1.0));
        let zeros = tape.constant(Tensor::zeros(&[2]));
        assert_eq!(*film_on(zp, ones, zeros).unwrap().value(), *zp.value());
        let g = tape.constant(Tensor::new(&[2], vec![2.0, 3.0]).unwrap());
        let b = tape.constant(Tensor::new(&[2], vec![1.0, -1.0]).unwrap());
        assert_eq!(film_on(zp, g, b).unwrap().value().data(), &[3.0, 5.0]);
    }

    #[test]
    fn aggregate_cases() {
        let a = Tensor::<f64>::from_fn(&[3, 2], |i| i as f64);
        let b = Tensor::<f64>::from_fn(&[3, 2], |i| 10.0 - i as f64);
        assert_eq!(aggregate(&[a.clone()], &Tensor::zeros(&[1])).unwrap(), a);
        let same = aggregate(&[a.clone(), a.clone()], &Tensor::new(&[2], vec![0.3, -2.0]).unwrap()).unwrap();
        assert!(same.max_abs_diff(&a).unwrap() < 1e-12);
        // softmax(0, ln 3) = (0.25, 0.75)
        let w = aggregate(&[a.clone(), b.clone()], &Tensor::new(&[2], vec![0.0, 3f64.ln()]).unwrap()).unwrap();
        let expect = a.zip_map(&b, |x, y| 0.25 * x + 0.75 * y).unwrap();
        assert!(w.max_abs_diff(&expect).unwrap() < 1e-12);
        assert!(aggregate::<f64>(&[], &Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn grid_round_trip_and_spot_check() {
        let t = Tensor::<f32>::from_fn(&[9, 2], |i| i as f32);
        let g = to_grid(&t).unwrap();
        assert_eq!(g.shape(), &[2, 3, 3]);
        assert_eq!((g.at(&[0, 0, 0]), g.at(&[1, 0, 0])), (0.0, 1.0));
        assert_eq!(g.at(&[1, 1, 2]), t.at(&[5, 1]));
        assert_eq!(from_grid(&g).unwrap(), t);
        assert!(to_grid(&Tensor::<f32>::zeros(&[8, 2])).is_err());
        let tape = Tape::new();
        assert_eq!(*to_grid_on(tape.constant(t.clone())).unwrap().value(), g);
    }

    #[test]
    fn token_rotate_matches_grid_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tokens = PatchTokens::new(Tensor::<f32>::randn(&[5, 5, 3], 1.0, &mut rng), 8, (40, 40)).unwrap();
        assert_eq!(token_rotate(&tokens, 0), tokens);
        let mut t = tokens.clone();
        for k in 1..4 {
            let r = token_rotate(&tokens, k);
            let lhs = to_grid(&r.matrix()).unwrap();
            let rhs = gridmath::rotate90(&to_grid(&tokens.matrix()).unwrap(), k).unwrap();
            assert_eq!(lhs, rhs);
        }
        for _ in 0..4 {
            t = token_rotate(&t, 1);
        }
        assert_eq!(t, tokens);
    }

    #[test]
    fn decode_is_deterministic_and_bounded() {
        let cfg = tiny();
        let (tokens, text, params) = setup(&cfg, 2, 3);
        let text = TextTokens {
            embeddings: text,
            trainable: true,
        };
        let a = decode(&tokens, &text, &params, &cfg).unwrap();
        assert_eq!(a, decode(&tokens, &text, &params, &cfg).unwrap());
        assert_eq!((a.height(), a.width()), (16, 16));
        assert!(a.scores().data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn duplicated_prompt_matches_single() {
        let cfg = tiny();
        let (tokens, text, params) = setup(&cfg, 3, 1);
        let one = decode_logits(&tokens, &text, &params, &cfg).unwrap();
        let mut p5 = params.clone();
        p5.insert("agg.logits", Tensor::new(&[5], vec![0.1, -0.4, 2.0, 0.0, 1.0]).unwrap());
        let text5 = Tensor::from_fn(&[5, 5], |i| text.data()[i % 5]);
        let five = decode_logits(&tokens, &text5, &p5, &cfg).unwrap();
        assert!(one.max_abs_diff(&five).unwrap() < 1e-12);
    }

    #[test]
    fn constant_input_gives_constant_heatmap() {
        // center-only filters see no zero padding, so the map stays constant
        let cfg = tiny();
        let (_, _, mut params) = setup(&cfg, 4, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut v = vec![0.7f64; 4];
        for i in 0..3 {
            let (ci, co) = (cfg.channels[i], cfg.channels[i + 1]);
            let centers = Tensor::<f64>::randn(&[co, ci, 4], 0.5, &mut rng);
            let bias = Tensor::<f64>::randn(&[co], 0.5, &mut rng);
            let filt = Tensor::from_fn(&[co, ci, 4, 3, 3], |j| if j % 9 == 4 { centers.data()[j / 9] } else { 0.0 });
            params.insert(format!("head.conv{i}.filter"), filt);
            params.insert(format!("head.conv{i}.bias"), bias.clone());
            v = (0..co)
                .map(|o| {
                    let s: f64 = (0..ci).map(|c| (0..4).map(|t| centers.at(&[o, c, t])).sum::<f64>() * v[c]).sum();
                    let a = s + bias.data()[o];
                    if i < 2 { a.max(0.0) } else { a }
                })
                .collect();
        }
        let g = Tensor::<f64>::full(&[4, 4, 5, 5], 0.7);
        let out = upsample_head(&g, 9, 9, &params, &cfg).unwrap();
        let expect = crate::autodiff::ops::sigmoid(v[0]);
        assert!(out.scores().data().iter().all(|&x| (x - expect).abs() < 1e-12));
    }

    #[test]
    fn config_validation() {
        let mut c = DecoderConfig::desk_toy();
        assert!(c.validate().is_ok());
        c.n = 6;
        assert!(c.validate().is_ok());
        c.n = 5;
        assert!(c.validate().is_err());
        let mut c = DecoderConfig::paper();
        assert!(c.validate().is_ok());
        c.channels = vec![32, 1];
        assert!(c.validate().is_err());
    }
}
