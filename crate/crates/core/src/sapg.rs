//! Semantic-aware prompt grouping: a fixed set of `M` prompts, each made of
//! `K` frequent object-class names, plus trainable embeddings for them.

use std::collections::HashSet;
use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridmath::csym;
use crate::tensor::{Scalar, Tensor};

/// The 100 most frequent object classes of the reference vocabulary.
pub const BUILTIN_VOCABULARY: &str = include_str!("../data/vocabulary.txt");

/// Ordered, de-duplicated object-class names.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    classes: Vec<String>,
}

impl Vocabulary {
    pub fn new<S: AsRef<str>>(classes: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for c in classes {
            let c = c.as_ref().trim();
            if c.is_empty() {
                continue;
            }
            if !seen.insert(c.to_string()) {
                return Err(Error::config(format!("vocabulary repeats `{c}`")));
            }
            out.push(c.to_string());
        }
        if out.is_empty() {
            return Err(Error::config("vocabulary is empty"));
        }
        Ok(Self { classes: out })
    }

    pub fn builtin() -> Self {
        Self::parse(BUILTIN_VOCABULARY).expect("builtin vocabulary is valid")
    }

    /// One class per line; blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        Self::new(text.lines())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptPolicy {
    #[default]
    Sequential,
    Shuffled,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptSet {
    prompts: Vec<String>,
    pub k: usize,
    pub policy: PromptPolicy,
    pub seed: u64,
}

impl PromptSet {
    pub fn prompts(&self) -> &[String] {
        &self.prompts
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    /// One prompt per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for p in &self.prompts {
            s.push_str(p);
            s.push('\n');
        }
        s
    }
}

/// Groups `m·k` distinct classes into `m` prompts of `k` names each.
pub fn build_prompt_set(vocab: &Vocabulary, m: usize, k: usize, policy: PromptPolicy, seed: u64) -> Result<PromptSet> {
    if m == 0 || k == 0 {
        return Err(Error::config(format!("prompt set needs M ≥ 1 and K ≥ 1, got M={m}, K={k}")));
    }
    let needed = m * k;
    if needed > vocab.len() {
        return Err(Error::Capacity {
            requested: needed,
            available: vocab.len(),
        });
    }
    let mut order: Vec<usize> = (0..vocab.len()).collect();
    if policy == PromptPolicy::Shuffled {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let prompts = order[..needed]
        .chunks(k)
        .map(|chunk| {
            chunk
                .iter()
                .map(|&i| vocab.classes[i].as_str())
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    Ok(PromptSet {
        prompts,
        k,
        policy,
        seed,
    })
}

/// Prompt embeddings `[M, D_txt]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TextTokens<T: Scalar = f32> {
    pub embeddings: Tensor<T>,
    pub trainable: bool,
}

impl<T: Scalar> TextTokens<T> {
    pub fn count(&self) -> usize {
        self.embeddings.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.embeddings.shape()[1]
    }
}

fn word_hash(word: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write(word.to_lowercase().as_bytes());
    h.finish()
}

fn word_vector(word: &str, d: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(word_hash(word) ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    (0..d)
        .map(|_| rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut rng))
        .collect()
}

/// Deterministic stand-in text encoder: every word seeds its own Gaussian
/// vector and a prompt is the unit-normalized sum of its word vectors.
pub fn embed_prompts(prompts: &PromptSet, d: usize, seed: u64) -> Result<TextTokens> {
    if d == 0 {
        return Err(Error::config("text embedding dimension must be positive"));
    }
    let mut data = Vec::with_capacity(prompts.len() * d);
    for (i, p) in prompts.prompts().iter().enumerate() {
        let mut acc = vec![0.0f64; d];
        let mut words = 0;
        for w in p.split_whitespace() {
            for (a, v) in acc.iter_mut().zip(word_vector(w, d, seed)) {
                *a += v;
            }
            words += 1;
        }
        if words == 0 {
            return Err(Error::config(format!("prompt {i} is empty")));
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::numeric(format!("prompt {i}"), "word vectors cancel"));
        }
        data.extend(acc.iter().map(|v| (v / norm) as f32));
    }
    Ok(TextTokens {
        embeddings: Tensor::new(&[prompts.len(), d], data)?,
        trainable: true,
    })
}

pub fn save_text_embeddings(path: impl AsRef<Path>, text: &TextTokens) -> Result<()> {
    csym::write(path, &text.embeddings)
}

/// Reads a rank-2 CSYM embedding table; loaded embeddings are trainable.
pub fn load_text_embeddings(path: impl AsRef<Path>) -> Result<TextTokens> {
    Ok(TextTokens {
        embeddings: csym::read_rank(path, 2)?,
        trainable: true,
    })
}
