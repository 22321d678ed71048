//! On-disk datasets: `images/NNNN.png`, `annotations/NNNN.txt` and a
//! `manifest.json` per split.

use std::fs;
use std::hash::Hasher;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::annotation::Annotation;
use super::scene::{generate_scene, SceneSpec};
use crate::error::{Error, Result};
use crate::imageio::{load_image, save_png};
use crate::tensor::Tensor;

pub const DATASET_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub image: String,
    pub annotation: String,
    /// Original `[height, width]`.
    pub size: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub split: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<SceneSpec>,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    pub annotation: Annotation,
}

impl Sample {
    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }
}

/// Generator for sample `index` of `split`, independent of every other sample.
pub fn sample_rng(seed: u64, split: &str, index: usize) -> ChaCha8Rng {
    let mut h = fnv::FnvHasher::default();
    h.write(split.as_bytes());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ h.finish());
    rng.set_stream(index as u64);
    rng
}

pub fn generate_split(spec: &SceneSpec, split: &str, count: usize) -> Result<Vec<Sample>> {
    spec.validate()?;
    (0..count)
        .map(|i| {
            let (image, annotation, _) = generate_scene(spec, &mut sample_rng(spec.seed, split, i))?;
            Ok(Sample { image, annotation })
        })
        .collect()
}

/// Writes one split into `dir`, which must not already hold a manifest.
pub fn write_dataset(spec: &SceneSpec, split: &str, count: usize, dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    if count == 0 {
        return Err(Error::config("dataset count must be positive"));
    }
    let samples = generate_split(spec, split, count)?;
    write_samples(&samples, split, Some(spec.clone()), dir)
}

pub fn write_samples(samples: &[Sample], split: &str, scene: Option<SceneSpec>, dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    for sub in ["images", "annotations"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut entries = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let image = format!("images/{i:04}.png");
        let annotation = format!("annotations/{i:04}.txt");
        save_png(dir.join(&image), &s.image)?;
        let ap = dir.join(&annotation);
        fs::write(&ap, s.annotation.to_text()).map_err(|e| Error::io(&ap, e))?;
        entries.push(ManifestEntry { image, annotation, size: [s.height(), s.width()] });
    }
    let manifest = DatasetManifest { version: DATASET_VERSION, split: split.to_string(), scene, entries };
    let mp = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format { field: "manifest", detail: e.to_string() })?;
    fs::write(&mp, text + "\n").map_err(|e| Error::io(&mp, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let mp = dir.as_ref().join(MANIFEST_FILE);
    let text = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let m: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Format { field: "manifest", detail: e.to_string() })?;
    if m.version != DATASET_VERSION {
        return Err(Error::Format {
            field: "version",
            detail: format!("manifest version {} is not {DATASET_VERSION}", m.version),
        });
    }
    Ok(m)
}

pub fn read_dataset(dir: impl AsRef<Path>) -> Result<(DatasetManifest, Vec<Sample>)> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let samples = manifest
        .entries
        .iter()
        .map(|e| read_entry(dir, e))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, samples))
}

fn read_entry(dir: &Path, e: &ManifestEntry) -> Result<Sample> {
    let ip: PathBuf = dir.join(&e.image);
    let ap: PathBuf = dir.join(&e.annotation);
    for p in [&ip, &ap] {
        if !p.is_file() {
            return Err(Error::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, format!("manifest entry `{}` is missing", e.image))));
        }
    }
    let image = load_image(&ip)?;
    if image.shape()[1..] != e.size {
        return Err(Error::Format {
            field: "size",
            detail: format!("{} is {:?}, manifest says {:?}", e.image, &image.shape()[1..], e.size),
        });
    }
    let text = fs::read_to_string(&ap).map_err(|err| Error::io(&ap, err))?;
    Ok(Sample { image, annotation: Annotation::parse(&text)? })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SceneSpec {
        SceneSpec { height: 48, width: 48, radius: [6.0, 12.0], seed: 5, ..SceneSpec::default() }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let written = generate_split(&small(), "train", 10).unwrap();
        write_dataset(&small(), "train", 10, dir.path()).unwrap();
        let (m, read) = read_dataset(dir.path()).unwrap();
        assert_eq!(m.entries.len(), 10);
        assert_eq!(m.split, "train");
        for (a, b) in written.iter().zip(&read) {
            assert_eq!(a.image, b.image);
            for (p, q) in a.annotation.axes.iter().zip(&b.annotation.axes) {
                assert!((p.x0 - q.x0).abs() < 1e-9 && (p.y1 - q.y1).abs() < 1e-9);
            }
            assert_eq!(a.annotation, b.annotation);
        }
    }

    #[test]
    fn same_seed_gives_identical_bytes() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        write_dataset(&small(), "val", 4, a.path()).unwrap();
        write_dataset(&small(), "val", 4, b.path()).unwrap();
        for f in ["manifest.json", "images/0003.png", "annotations/0002.txt"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn splits_differ() {
        let a = generate_split(&small(), "train", 1).unwrap();
        let b = generate_split(&small(), "val", 1).unwrap();
        assert_ne!(a[0].image, b[0].image);
    }

    #[test]
    fn missing_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&small(), "train", 3, dir.path()).unwrap();
        fs::remove_file(dir.path().join("images/0001.png")).unwrap();
        let err = read_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("0001.png"), "{err}");
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&small(), "train", 1, dir.path()).unwrap();
        let mp = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&mp).unwrap().replace("\"version\": 1", "\"version\": 9");
        fs::write(&mp, text).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::Format { field: "version", .. })));
    }

    #[test]
    fn zero_count_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(write_dataset(&small(), "train", 0, dir.path()).unwrap_err().exit_code(), 2);
    }
}
