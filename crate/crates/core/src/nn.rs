//! Shared layers: linear maps, layer normalization and pre-norm transformer
//! blocks without positional encoding.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{concat_cols, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamSet};
use crate::tensor::Scalar;

pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerSpec {
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub mlp_ratio: usize,
}

impl TransformerSpec {
    pub fn validate(&self, what: &str) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || self.mlp_ratio == 0 {
            return Err(Error::config(format!("{what}: dim, heads and mlp_ratio must be positive")));
        }
        if self.dim % self.heads != 0 {
            return Err(Error::config(format!(
                "{what}: dim {} is not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        Ok(())
    }
}

pub fn linear<'t, T: Scalar>(x: Var<'t, T>, p: &Bound<'t, T>, prefix: &str) -> Result<Var<'t, T>> {
    x.matmul(p.get(&format!("{prefix}.weight"))?)?
        .add_row(p.get(&format!("{prefix}.bias"))?)
}

pub fn layer_norm<'t, T: Scalar>(x: Var<'t, T>, p: &Bound<'t, T>, prefix: &str) -> Result<Var<'t, T>> {
    x.layer_norm_rows()?
        .mul_row(p.get(&format!("{prefix}.scale"))?)?
        .add_row(p.get(&format!("{prefix}.shift"))?)
}

pub fn init_transformer<T: Scalar, R: Rng + ?Sized>(params: &mut ParamSet<T>, prefix: &str, spec: &TransformerSpec, rng: &mut R) {
    let d = spec.dim;
    for l in 0..spec.layers {
        let p = format!("{prefix}.layer{l}");
        params.init_layer_norm(&format!("{p}.ln1"), d);
        params.init_linear(&format!("{p}.attn.qkv"), d, 3 * d, INIT_STD, rng);
        params.init_linear(&format!("{p}.attn.out"), d, d, INIT_STD, rng);
        params.init_layer_norm(&format!("{p}.ln2"), d);
        params.init_linear(&format!("{p}.mlp.fc1"), d, spec.mlp_ratio * d, INIT_STD, rng);
        params.init_linear(&format!("{p}.mlp.fc2"), spec.mlp_ratio * d, d, INIT_STD, rng);
    }
}

fn attention<'t, T: Scalar>(h: Var<'t, T>, p: &Bound<'t, T>, prefix: &str, spec: &TransformerSpec) -> Result<Var<'t, T>> {
    let d = spec.dim;
    let dh = d / spec.heads;
    let qkv = linear(h, p, &format!("{prefix}.qkv"))?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(spec.heads);
    for head in 0..spec.heads {
        let q = qkv.slice_cols(head * dh, dh)?;
        let k = qkv.slice_cols(d + head * dh, dh)?;
        let v = qkv.slice_cols(2 * d + head * dh, dh)?;
        let weights = q.matmul_t(k)?.scale(scale)?.softmax_rows()?;
        heads.push(weights.matmul(v)?);
    }
    let merged = if heads.len() == 1 { heads[0] } else { concat_cols(&heads)? };
    linear(merged, p, &format!("{prefix}.out"))
}

/// `spec.layers` pre-norm layers over a `[tokens, dim]` matrix.
pub fn transformer<'t, T: Scalar>(x: Var<'t, T>, p: &Bound<'t, T>, prefix: &str, spec: &TransformerSpec) -> Result<Var<'t, T>> {
    let mut x = x;
    for l in 0..spec.layers {
        let lp = format!("{prefix}.layer{l}");
        let h = layer_norm(x, p, &format!("{lp}.ln1"))?;
        x = x.add(attention(h, p, &format!("{lp}.attn"), spec)?)?;
        let h = layer_norm(x, p, &format!("{lp}.ln2"))?;
        let h = linear(h, p, &format!("{lp}.mlp.fc1"))?.gelu()?;
        x = x.add(linear(h, p, &format!("{lp}.mlp.fc2"))?)?;
    }
    Ok(x)
}
