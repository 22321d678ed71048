//! Patch-token encoders: a small trainable patch transformer, and a loader
//! for token grids exported by an external backbone.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::gridmath::csym;
use crate::nn::{self, TransformerSpec, INIT_STD};
use crate::params::{Bound, ParamSet};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            image_size: 128,
            patch_size: 8,
            dim: 32,
            layers: 2,
            heads: 2,
            mlp_ratio: 4,
        }
    }
}

impl EncoderConfig {
    /// Side of the token grid.
    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn patch_dim(&self) -> usize {
        3 * self.patch_size * self.patch_size
    }

    pub fn transformer(&self) -> TransformerSpec {
        TransformerSpec {
            dim: self.dim,
            heads: self.heads,
            layers: self.layers,
            mlp_ratio: self.mlp_ratio,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.image_size < self.patch_size {
            return Err(Error::config(format!(
                "encoder: image size {} cannot hold a {}-pixel patch",
                self.image_size, self.patch_size
            )));
        }
        self.transformer().validate("encoder")
    }
}

/// The `M×M` token grid of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchTokens<T: Scalar = f32> {
    /// `[M, M, D]`.
    pub tokens: Tensor<T>,
    pub patch_size: usize,
    /// Source image `(H, W)`.
    pub image_size: (usize, usize),
}

impl<T: Scalar> PatchTokens<T> {
    pub fn new(tokens: Tensor<T>, patch_size: usize, image_size: (usize, usize)) -> Result<Self> {
        if tokens.rank() != 3 || tokens.shape()[0] != tokens.shape()[1] {
            return Err(Error::shape(format!(
                "patch tokens must be [M, M, D], got {:?}",
                tokens.shape()
            )));
        }
        Ok(Self {
            tokens,
            patch_size,
            image_size,
        })
    }

    pub fn grid(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.tokens.shape()[2]
    }

    /// Tokens as a `[M·M, D]` matrix, row-major over `(i, j)`.
    pub fn matrix(&self) -> Tensor<T> {
        let m = self.grid();
        self.tokens.reshape(&[m * m, self.dim()]).expect("same length")
    }

    pub fn cast<U: Scalar>(&self) -> PatchTokens<U> {
        PatchTokens {
            tokens: self.tokens.cast(),
            patch_size: self.patch_size,
            image_size: self.image_size,
        }
    }
}

/// Splits a square `[3, H, W]` image into `P×P` patches, each flattened
/// channel-major then row-major. Trailing rows and columns that do not fill
/// a patch are dropped.
pub fn patchify<T: Scalar>(image: &Tensor<T>, p: usize) -> Result<Tensor<T>> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::shape(format!("patchify needs [3, H, W], got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    if h != w {
        return Err(Error::shape(format!("patchify needs a square image, got {h}x{w}")));
    }
    if p == 0 || h < p {
        return Err(Error::shape(format!("patch size {p} does not fit a {h}x{w} image")));
    }
    let m = h / p;
    let dim = 3 * p * p;
    let src = image.data();
    let mut out = Vec::with_capacity(m * m * dim);
    for i in 0..m {
        for j in 0..m {
            for c in 0..3 {
                for r in 0..p {
                    let row = (c * h + i * p + r) * w + j * p;
                    out.extend_from_slice(&src[row..row + p]);
                }
            }
        }
    }
    Tensor::new(&[m, m, dim], out)
}

/// Inverse of [`patchify`] onto the cropped `M·P` square.
pub fn unpatchify<T: Scalar>(patches: &Tensor<T>, p: usize) -> Result<Tensor<T>> {
    let s = patches.shape();
    if s.len() != 3 || s[0] != s[1] || s[2] != 3 * p * p {
        return Err(Error::shape(format!("unpatchify: bad patch grid {s:?} for P={p}")));
    }
    let m = s[0];
    let side = m * p;
    let mut out = vec![T::zero(); 3 * side * side];
    let src = patches.data();
    let dim = 3 * p * p;
    for i in 0..m {
        for j in 0..m {
            let base = (i * m + j) * dim;
            for c in 0..3 {
                for r in 0..p {
                    let dst = (c * side + i * p + r) * side + j * p;
                    let from = base + (c * p + r) * p;
                    out[dst..dst + p].copy_from_slice(&src[from..from + p]);
                }
            }
        }
    }
    Tensor::new(&[3, side, side], out)
}

/// Gaussian (std 0.02) weights and zero biases for the patch transformer.
pub fn init_encoder<T: Scalar, R: Rng + ?Sized>(cfg: &EncoderConfig, rng: &mut R) -> ParamSet<T> {
    let m = cfg.grid();
    let mut p = ParamSet::new();
    p.init_linear("patch", cfg.patch_dim(), cfg.dim, INIT_STD, rng);
    p.insert("pos", Tensor::randn(&[m * m, cfg.dim], INIT_STD, rng));
    nn::init_transformer(&mut p, "blocks", &cfg.transformer(), rng);
    p.init_layer_norm("ln_out", cfg.dim);
    p
}

/// Records the encoder on a tape. `patches` is the `[M, M, 3P²]` output of
/// [`patchify`]; the result is a `[M·M, D]` token matrix.
pub fn encode_on<'t, T: Scalar>(tape: &'t Tape<T>, patches: &Tensor<T>, p: &Bound<'t, T>, cfg: &EncoderConfig) -> Result<Var<'t, T>> {
    let m = patches.shape()[0];
    let flat = tape.constant(patches.reshape(&[m * m, patches.shape()[2]])?);
    let x = nn::linear(flat, p, "patch")?.add(p.get("pos")?)?;
    let x = nn::transformer(x, p, "blocks", &cfg.transformer())?;
    nn::layer_norm(x, p, "ln_out")
}

/// Forward pass of the patch transformer on a `[3, H, W]` image.
pub fn encode<T: Scalar>(image: &Tensor<T>, params: &ParamSet<T>, cfg: &EncoderConfig) -> Result<PatchTokens<T>> {
    let patches = patchify(image, cfg.patch_size)?;
    let m = patches.shape()[0];
    let tape = Tape::new();
    let bound = params.bind_frozen(&tape);
    let out = encode_on(&tape, &patches, &bound, cfg)?;
    let tokens = out.value().reshape(&[m, m, cfg.dim])?;
    if let Some(i) = tokens.first_non_finite() {
        return Err(Error::numeric("encoder output", format!("element {i} is not finite")));
    }
    PatchTokens::new(tokens, cfg.patch_size, (image.shape()[1], image.shape()[2]))
}

/// Metadata stored next to an exported token file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSidecar {
    pub patch_size: usize,
    pub image_size: [usize; 2],
    /// Free-form provenance written by the exporter (model id, layer).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

/// `tokens.csym` → `tokens.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn save_tokens(path: impl AsRef<Path>, tokens: &PatchTokens) -> Result<()> {
    let path = path.as_ref();
    csym::write(path, &tokens.tokens)?;
    let meta = TokenSidecar {
        patch_size: tokens.patch_size,
        image_size: [tokens.image_size.0, tokens.image_size.1],
        source: None,
    };
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(&meta).expect("plain struct");
    std::fs::write(&side, text + "\n").map_err(|e| Error::io(side, e))
}

/// Reads a rank-3 CSYM token grid and its JSON sidecar.
pub fn load_tokens(path: impl AsRef<Path>) -> Result<PatchTokens> {
    let path = path.as_ref();
    let tokens = csym::read_rank(path, 3)?;
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: TokenSidecar = serde_json::from_str(&text).map_err(|e| Error::Format {
        field: "sidecar",
        detail: format!("{}: {e}", side.display()),
    })?;
    if tokens.shape()[0] != tokens.shape()[1] {
        return Err(Error::Format {
            field: "shape",
            detail: format!("token grid {:?} is not square", tokens.shape()),
        });
    }
    PatchTokens::new(tokens, meta.patch_size, (meta.image_size[0], meta.image_size[1]))
}
