//! Paired image/annotation augmentation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridmath::{rotate90, rotate_bilinear, RotationAngle};
use crate::synthdata::{Annotation, GeoTransform};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    /// Random multiples of 90° (square images only).
    pub quarter_turns: bool,
    /// Small rotations drawn uniformly from `[−d, d]` degrees.
    pub small_rotation: f64,
    /// Brightness offset drawn from `[−b, b]`.
    pub brightness: f64,
    /// Contrast scale drawn from `[1 − c, 1 + c]`.
    pub contrast: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { quarter_turns: true, small_rotation: 15.0, brightness: 0.1, contrast: 0.1 }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self { quarter_turns: false, small_rotation: 0.0, brightness: 0.0, contrast: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=45.0).contains(&self.small_rotation) {
            return Err(Error::config(format!("small rotation range {} is outside [0, 45] degrees", self.small_rotation)));
        }
        if self.small_rotation > 15.0 {
            log::warn!("small rotation range {}° is wider than the usual 15°", self.small_rotation);
        }
        if !(0.0..=0.5).contains(&self.brightness) || !(0.0..1.0).contains(&self.contrast) {
            return Err(Error::config("brightness must lie in [0, 0.5] and contrast in [0, 1)"));
        }
        Ok(())
    }
}

/// Applies one random geometric transform to both the image and the
/// annotation, then color jitter to the image. The ground truth must be
/// re-rasterized from the returned annotation.
pub fn augment<R: Rng + ?Sized>(image: &Tensor, ann: &Annotation, cfg: &AugmentConfig, rng: &mut R) -> Result<(Tensor, Annotation)> {
    let (_, h, w) = image.planes()?;
    let mut image = image.clone();
    let mut ann = ann.clone();
    if cfg.quarter_turns && h == w {
        let k = rng.random_range(0..4i64);
        if k != 0 {
            image = rotate90(&image, k)?;
            ann = ann.transformed(GeoTransform::Rotate(RotationAngle::quarter_turns(k)), h, w);
        }
    }
    if cfg.small_rotation > 0.0 {
        let deg = rng.random_range(-cfg.small_rotation..=cfg.small_rotation);
        let angle = RotationAngle::degrees(deg);
        image = rotate_bilinear(&image, angle, 0.0)?;
        ann = ann.transformed(GeoTransform::Rotate(angle), h, w);
    }
    if cfg.brightness > 0.0 || cfg.contrast > 0.0 {
        let b = if cfg.brightness > 0.0 { rng.random_range(-cfg.brightness..=cfg.brightness) } else { 0.0 };
        let c = if cfg.contrast > 0.0 { rng.random_range(1.0 - cfg.contrast..=1.0 + cfg.contrast) } else { 1.0 };
        image = image.map(|v| (((v as f64 - 0.5) * c + 0.5 + b).clamp(0.0, 1.0)) as f32);
    }
    Ok((image, ann))
}
