//! Checkpoint directories: `manifest.json`, `params/<name>.csym` and, when
//! an optimizer is saved, `adam_m/<name>.csym` and `adam_v/<name>.csym`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, OptimState};
use crate::error::{Error, Result};
use crate::gridmath::csym;
use crate::model::{Model, ModelSpec};
use crate::params::ParamSet;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimEntry {
    step: u64,
    config: AdamConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    model: ModelSpec,
    text_trainable: bool,
    params: Vec<TensorEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    optimizer: Option<OptimEntry>,
}

fn write_set(dir: &Path, sub: &str, set: &ParamSet) -> Result<()> {
    let d = dir.join(sub);
    fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    for (name, t) in set.iter() {
        csym::write(d.join(format!("{name}.csym")), t)?;
    }
    Ok(())
}

fn read_set(dir: &Path, sub: &str, entries: &[TensorEntry]) -> Result<ParamSet> {
    let mut set = ParamSet::new();
    for e in entries {
        let t = csym::read(dir.join(sub).join(format!("{}.csym", e.name)))?;
        if t.shape() != e.shape.as_slice() {
            return Err(Error::Format {
                field: "shape",
                detail: format!("{sub}/{} is {:?}, manifest says {:?}", e.name, t.shape(), e.shape),
            });
        }
        set.insert(e.name.clone(), t);
    }
    Ok(set)
}

pub fn save_checkpoint(dir: impl AsRef<Path>, model: &Model, optim: Option<&OptimState>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_set(dir, "params", &model.params)?;
    if let Some(o) = optim {
        write_set(dir, "adam_m", &o.m)?;
        write_set(dir, "adam_v", &o.v)?;
    }
    let manifest = Manifest {
        version: CHECKPOINT_VERSION,
        model: model.spec.clone(),
        text_trainable: model.text_trainable,
        params: model.params.iter().map(|(n, t)| TensorEntry { name: n.clone(), shape: t.shape().to_vec() }).collect(),
        optimizer: optim.map(|o| OptimEntry { step: o.step, config: o.cfg }),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format { field: "manifest", detail: e.to_string() })?;
    let mp = dir.join("manifest.json");
    fs::write(&mp, text + "\n").map_err(|e| Error::io(&mp, e))
}

/// Loads a checkpoint; with `expected`, any architecture difference is a
/// configuration error.
pub fn load_checkpoint(dir: impl AsRef<Path>, expected: Option<&ModelSpec>) -> Result<(Model, Option<OptimState>)> {
    let dir = dir.as_ref();
    let mp = dir.join("manifest.json");
    let text = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format { field: "manifest", detail: e.to_string() })?;
    if m.version != CHECKPOINT_VERSION {
        return Err(Error::Format { field: "version", detail: format!("checkpoint version {} is not {CHECKPOINT_VERSION}", m.version) });
    }
    if let Some(want) = expected {
        spec_mismatch(&m.model, want)?;
    }
    m.model.validate()?;
    let params = read_set(dir, "params", &m.params)?;
    let optim = match m.optimizer {
        Some(o) => Some(OptimState { m: read_set(dir, "adam_m", &m.params)?, v: read_set(dir, "adam_v", &m.params)?, step: o.step, cfg: o.config }),
        None => None,
    };
    Ok((Model { spec: m.model, params, text_trainable: m.text_trainable }, optim))
}

fn spec_mismatch(found: &ModelSpec, want: &ModelSpec) -> Result<()> {
    let (f, w) = (&found.decoder, &want.decoder);
    let mut diffs = Vec::new();
    if f.n != w.n {
        diffs.push(format!("n {} vs {}", f.n, w.n));
    }
    if f.dim != w.dim {
        diffs.push(format!("d {} vs {}", f.dim, w.dim));
    }
    if f.layers != w.layers {
        diffs.push(format!("L_B {} vs {}", f.layers, w.layers));
    }
    if f.channels != w.channels {
        diffs.push(format!("channels {:?} vs {:?}", f.channels, w.channels));
    }
    if diffs.is_empty() && found != want {
        diffs.push("encoder, text or remaining decoder settings differ".into());
    }
    if diffs.is_empty() {
        Ok(())
    } else {
        Err(Error::config(format!("checkpoint does not match the configuration: {}", diffs.join(", "))))
    }
}
