//! Run configuration: a strict TOML schema with two shipped presets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decoder::DecoderConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::metrics::{F1Options, TransformFamily};
use crate::model::ModelSpec;
use crate::sapg::{self, PromptPolicy, PromptSet, TextTokens, Vocabulary};
use crate::synthdata::{GtStyle, SceneSpec, Task};
use crate::training::{AdamConfig, AugmentConfig, FocalConfig, TrainConfig};

pub const SEED_ENV: &str = "SYMDEC_SEED";
pub const PRESETS: [&str; 2] = ["desk-toy", "paper-geometry"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    /// Width of the prompt embeddings before the FiLM projection.
    pub text_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptSection {
    /// Number of prompts `M`.
    pub m: usize,
    /// Classes per prompt `K`.
    pub k: usize,
    pub policy: PromptPolicy,
    pub seed: u64,
    /// One class per line; the built-in list when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocabulary: Option<PathBuf>,
    /// Precomputed `[M, D_txt]` embeddings; random ones when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub epochs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub rho: f64,
    pub macro_average: bool,
    pub robustness: TransformFamily,
    pub consistency: TransformFamily,
    pub consistency_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSection {
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    pub output: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub task: Task,
    pub scene: SceneSpec,
    pub data: DataSection,
    pub model: ModelSection,
    pub prompts: PromptSection,
    /// Task defaults when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub focal: Option<FocalConfig>,
    pub optim: AdamConfig,
    pub augment: AugmentConfig,
    pub gt: GtStyle,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub paths: PathSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk_toy()
    }
}

impl RunConfig {
    /// 128-pixel images, 8-pixel patches, `d = 16`, `L_B = 2`, `C_8`.
    pub fn desk_toy() -> Self {
        Self {
            seed: 0,
            task: Task::Reflection,
            // a dark background keeps shape-vs-background separable per patch
            scene: SceneSpec { background: [0.0, 0.3], ..SceneSpec::default() },
            data: DataSection { train: 64, val: 16, test: 16 },
            model: ModelSection { encoder: EncoderConfig::default(), decoder: DecoderConfig::desk_toy(), text_dim: 64 },
            prompts: PromptSection { m: 25, k: 4, policy: PromptPolicy::Sequential, seed: 0, vocabulary: None, embeddings: None },
            focal: None,
            optim: AdamConfig::default(),
            augment: AugmentConfig::default(),
            gt: GtStyle::default(),
            train: TrainSection { batch_size: 8, epochs: 30 },
            eval: EvalSection {
                rho: 0.0,
                macro_average: false,
                robustness: TransformFamily::default_rotation(),
                consistency: TransformFamily::default_rotation(),
                consistency_samples: 4,
            },
            paths: PathSection { dataset: "data".into(), checkpoint: "checkpoint".into(), output: "out".into() },
        }
    }

    /// 417-pixel inputs, 16-pixel patches (a 26×26 grid), `d = 64`,
    /// `L_B = 3`, `C_8`, token and text widths of the exported features.
    pub fn paper_geometry() -> Self {
        let mut c = Self::desk_toy();
        c.scene = SceneSpec { height: 417, width: 417, radius: [30.0, 80.0], ..SceneSpec::default() };
        c.model = ModelSection {
            encoder: EncoderConfig { image_size: 417, patch_size: 16, dim: 768, layers: 2, heads: 12, mlp_ratio: 4 },
            decoder: DecoderConfig::paper(),
            text_dim: 512,
        };
        c.train.epochs = 500;
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk-toy" => Ok(Self::desk_toy()),
            "paper-geometry" => Ok(Self::paper_geometry()),
            _ => Err(Error::config(format!("unknown preset `{name}`, expected one of {}", PRESETS.join(", ")))),
        }
    }

    /// Parses TOML; absent keys take `desk-toy` values, unknown keys fail.
    pub fn from_toml(text: &str) -> Result<Self> {
        Self::overlay(&Self::desk_toy(), text)
    }

    /// `base` with the keys present in `text` replaced, table by table. A
    /// table with a `kind` tag replaces its counterpart whole.
    pub fn overlay(base: &Self, text: &str) -> Result<Self> {
        fn merge(a: &mut toml::Table, b: toml::Table) {
            for (k, v) in b {
                match (a.get_mut(&k), v) {
                    (Some(toml::Value::Table(x)), toml::Value::Table(y)) if !y.contains_key("kind") => merge(x, y),
                    (_, v) => {
                        a.insert(k, v);
                    }
                }
            }
        }
        let err = |e: toml::de::Error| Error::config(format!("config: {}", e.message()));
        let mut merged: toml::Table = base.to_toml().parse().map_err(err)?;
        merge(&mut merged, text.parse().map_err(err)?);
        toml::from_str(&merged.to_string()).map_err(err)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies `SYMDEC_SEED` if set.
    pub fn with_env(mut self) -> Result<Self> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v.trim().parse().map_err(|_| Error::config(format!("{SEED_ENV}=`{v}` is not an unsigned integer")))?;
        }
        Ok(self)
    }

    pub fn focal(&self) -> FocalConfig {
        self.focal.unwrap_or_else(|| FocalConfig::for_task(self.task))
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            encoder: self.model.encoder.clone(),
            decoder: self.model.decoder.clone(),
            text_dim: self.model.text_dim,
            prompts: self.prompts.m,
        }
    }

    pub fn scene(&self) -> SceneSpec {
        SceneSpec { seed: self.seed, ..self.scene.clone() }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            task: self.task,
            focal: self.focal(),
            adam: self.optim,
            augment: self.augment,
            gt: self.gt,
            batch_size: self.train.batch_size,
            epochs: self.train.epochs,
            seed: self.seed,
        }
    }

    pub fn f1_options(&self) -> F1Options {
        F1Options { rho: self.eval.rho, macro_average: self.eval.macro_average, ..F1Options::default() }
    }

    pub fn vocabulary(&self) -> Result<Vocabulary> {
        match &self.prompts.vocabulary {
            Some(p) => Vocabulary::from_file(p),
            None => Ok(Vocabulary::builtin()),
        }
    }

    pub fn prompt_set(&self) -> Result<PromptSet> {
        let p = &self.prompts;
        sapg::build_prompt_set(&self.vocabulary()?, p.m, p.k, p.policy, p.seed)
    }

    /// Loaded embeddings when configured, otherwise seeded random ones.
    pub fn text_tokens(&self) -> Result<TextTokens> {
        let text = match &self.prompts.embeddings {
            Some(path) => sapg::load_text_embeddings(path)?,
            None => sapg::embed_prompts(&self.prompt_set()?, self.model.text_dim, self.prompts.seed)?,
        };
        text.embeddings.expect_shape(&[self.prompts.m, self.model.text_dim]).map_err(|_| {
            Error::config(format!(
                "prompt embeddings are {:?}, the configuration expects [{}, {}]",
                text.embeddings.shape(),
                self.prompts.m,
                self.model.text_dim
            ))
        })?;
        Ok(text)
    }

    /// Every cross-field constraint; nothing is written before this passes.
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.model_spec().validate()?;
        let e = &self.model.encoder;
        if e.image_size / e.patch_size < 2 {
            return Err(Error::config(format!("encoder: {} / {} leaves fewer than 2 tokens per side", e.image_size, e.patch_size)));
        }
        if self.prompts.m == 0 || self.prompts.k == 0 {
            return Err(Error::config("prompts: M and K must be positive"));
        }
        if self.prompts.embeddings.is_none() {
            self.prompt_set()?;
        }
        self.train_config().validate()?;
        if !(self.gt.width >= 1.0 && self.gt.sigma > 0.0) {
            return Err(Error::config(format!("gt: width {} must be at least 1 and sigma {} positive", self.gt.width, self.gt.sigma)));
        }
        if self.train.epochs == 0 {
            return Err(Error::config("train: epochs must be positive"));
        }
        if !(self.eval.rho >= 0.0) || self.eval.consistency_samples == 0 {
            return Err(Error::config("eval: rho must be non-negative and consistency_samples positive"));
        }
        for fam in [self.eval.robustness, self.eval.consistency] {
            if let TransformFamily::Rotation { min, max } = fam {
                if !(min <= max && min.is_finite() && max.is_finite()) {
                    return Err(Error::config(format!("eval: rotation range [{min}, {max}] is empty")));
                }
            }
        }
        Ok(())
    }
}
