//! The end-to-end detector: patch encoder, prompt embeddings and decoder,
//! plus the square-input reshaping protocol.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::decoder::{self, DecoderConfig};
use crate::encoder::{self, EncoderConfig, PatchTokens};
use crate::error::{Error, Result};
use crate::gridmath::resize_bilinear;
use crate::heatmap::Heatmap;
use crate::params::{Bound, ParamSet};
use crate::sapg::TextTokens;
use crate::tensor::{Scalar, Tensor};

pub const TEXT_PARAM: &str = "text.embeddings";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    /// Prompt embedding width.
    pub text_dim: usize,
    /// Number of prompts.
    pub prompts: usize,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate()?;
        if self.text_dim == 0 || self.prompts == 0 {
            return Err(Error::config("text dimension and prompt count must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    /// `encoder.*`, `decoder.*` and [`TEXT_PARAM`].
    pub params: ParamSet,
    pub text_trainable: bool,
}

/// Records image → logits `[S, S]` on a tape for a square `[3, S, S]` input.
pub fn logits_on<'t, T: Scalar>(tape: &'t Tape<T>, p: &Bound<'t, T>, image: &Tensor<T>, spec: &ModelSpec) -> Result<Var<'t, T>> {
    let patches = encoder::patchify(image, spec.encoder.patch_size)?;
    let tokens = encoder::encode_on(tape, &patches, &p.scope("encoder"), &spec.encoder)?;
    let out = (image.shape()[1], image.shape()[2]);
    decoder::decode_on(tokens, p.get(TEXT_PARAM)?, &p.scope("decoder"), &spec.decoder, out)
}

impl Model {
    pub fn init(spec: ModelSpec, text: &TextTokens, seed: u64) -> Result<Self> {
        spec.validate()?;
        text.embeddings.expect_shape(&[spec.prompts, spec.text_dim])?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        params.extend_prefixed("encoder", encoder::init_encoder(&spec.encoder, &mut rng));
        params.extend_prefixed(
            "decoder",
            decoder::init_decoder(&spec.decoder, spec.encoder.dim, spec.text_dim, spec.prompts, &mut rng),
        );
        params.insert(TEXT_PARAM, text.embeddings.clone());
        Ok(Self { spec, params, text_trainable: text.trainable })
    }

    pub fn text(&self) -> Result<TextTokens> {
        Ok(TextTokens { embeddings: self.params.get(TEXT_PARAM)?.clone(), trainable: self.text_trainable })
    }

    pub fn decoder_params(&self) -> ParamSet {
        self.params.sub("decoder")
    }

    pub fn tokens(&self, image: &Tensor) -> Result<PatchTokens> {
        encoder::encode(image, &self.params.sub("encoder"), &self.spec.encoder)
    }

    /// Logits for a square image whose side is a multiple of the patch size.
    pub fn logits(&self, image: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let bound = self.params.bind_frozen(&tape);
        let out = logits_on(&tape, &bound, image, &self.spec)?;
        let v = (*out.value()).clone();
        if let Some(i) = v.first_non_finite() {
            return Err(Error::numeric("model output", format!("element {i} is not finite")));
        }
        Ok(v)
    }

    /// Heatmap at the input resolution for an image of any size, through
    /// [`Placement`].
    pub fn predict(&self, image: &Tensor) -> Result<Heatmap> {
        let (square, place) = Placement::fit(image, self.spec.encoder.image_size)?;
        let heat = Heatmap::new(self.logits(&square)?.map(crate::autodiff::ops::sigmoid))?;
        place.restore(&heat)
    }
}

/// How an image was fitted into the model's square input: scaled so the
/// longer side equals the input size, then zero-padded at the bottom and
/// right.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Placement {
    pub original: (usize, usize),
    pub scaled: (usize, usize),
    pub side: usize,
}

impl Placement {
    pub fn new(h: usize, w: usize, side: usize) -> Result<Self> {
        if h == 0 || w == 0 || side == 0 {
            return Err(Error::shape("image and target sizes must be positive"));
        }
        let scale = side as f64 / h.max(w) as f64;
        let fit = |v: usize| ((v as f64 * scale).round() as usize).clamp(1, side);
        Ok(Self { original: (h, w), scaled: (fit(h), fit(w)), side })
    }

    /// `[C, H, W]` → `[C, side, side]`.
    pub fn fit(image: &Tensor, side: usize) -> Result<(Tensor, Self)> {
        let (c, h, w) = image.planes()?;
        let place = Self::new(h, w, side)?;
        let (sh, sw) = place.scaled;
        let scaled = if (sh, sw) == (h, w) { image.clone() } else { resize_bilinear(image, sh, sw)? };
        if (sh, sw) == (side, side) {
            return Ok((scaled, place));
        }
        let src = scaled.data();
        let mut out = vec![0.0f32; c * side * side];
        for ch in 0..c {
            for r in 0..sh {
                let from = ch * sh * sw + r * sw;
                let to = ch * side * side + r * side;
                out[to..to + sw].copy_from_slice(&src[from..from + sw]);
            }
        }
        Ok((Tensor::new(&[c, side, side], out)?, place))
    }

    /// Crops the padding off a `side × side` map and resizes to the original size.
    pub fn restore(&self, map: &Heatmap) -> Result<Heatmap> {
        if (map.height(), map.width()) != (self.side, self.side) {
            return Err(Error::shape(format!("expected a {0}x{0} map, got {1}x{2}", self.side, map.height(), map.width())));
        }
        let (sh, sw) = self.scaled;
        let d = map.scores().data();
        let cropped = Tensor::from_fn(&[sh, sw], |i| d[(i / sw) * self.side + i % sw]);
        let (h, w) = self.original;
        let out = if (sh, sw) == (h, w) { cropped } else { resize_bilinear(&cropped, h, w)? };
        // bilinear weights are convex, clamp only guards rounding
        Heatmap::new(out.map(|v| v.clamp(0.0, 1.0)))
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::sapg::{build_prompt_set, embed_prompts, PromptPolicy, Vocabulary};

    pub(crate) fn micro_spec() -> ModelSpec {
        ModelSpec {
            encoder: EncoderConfig { image_size: 16, patch_size: 4, dim: 8, layers: 1, heads: 2, mlp_ratio: 2 },
            decoder: DecoderConfig { n: 4, dim: 4, layers: 1, heads: 1, mlp_ratio: 2, channels: vec![4, 2, 1], kernel: 3, inject_positional_encoding: false },
            text_dim: 6,
            prompts: 2,
        }
    }

    pub(crate) fn micro_model() -> Model {
        let spec = micro_spec();
        let set = build_prompt_set(&Vocabulary::builtin(), spec.prompts, 2, PromptPolicy::Sequential, 0).unwrap();
        Model::init(spec.clone(), &embed_prompts(&set, spec.text_dim, 0).unwrap(), 1).unwrap()
    }

    #[test]
    fn predict_keeps_input_size() {
        let m = micro_model();
        let img = Tensor::from_fn(&[3, 10, 7], |i| ((i * 13) % 17) as f32 / 17.0);
        let heat = m.predict(&img).unwrap();
        assert_eq!((heat.height(), heat.width()), (10, 7));
    }

    #[test]
    fn padded_prediction_matches_direct_square() {
        let m = micro_model();
        let img = Tensor::from_fn(&[3, 12, 16], |i| ((i * 7) % 11) as f32 / 11.0);
        let heat = m.predict(&img).unwrap();
        let (square, _) = Placement::fit(&img, 16).unwrap();
        let direct = m.logits(&square).unwrap().map(crate::autodiff::ops::sigmoid);
        for r in 0..12 {
            for c in 0..16 {
                assert!((heat.get(r, c) - direct.at(&[r, c])).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn placement_scales_longer_side() {
        let p = Placement::new(417, 300, 128).unwrap();
        assert_eq!(p.scaled, (128, 92));
        let (img, _) = Placement::fit(&Tensor::full(&[3, 20, 10], 1.0), 16).unwrap();
        assert_eq!(img.shape(), &[3, 16, 16]);
        assert_eq!(img.at(&[0, 15, 7]), 1.0);
        assert_eq!(img.at(&[0, 15, 8]), 0.0);
    }

    #[test]
    fn rejects_wrong_text_shape() {
        let spec = micro_spec();
        let text = TextTokens { embeddings: Tensor::zeros(&[3, 6]), trainable: true };
        assert!(Model::init(spec, &text, 0).is_err());
    }
}
