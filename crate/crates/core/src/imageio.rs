//! RGB image loading and heatmap image emission.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::heatmap::Heatmap;
use crate::tensor::Tensor;

/// Reads an image as `[3, H, W]` with values in `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let img = image::open(path)
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    let mut data = vec![0.0f32; 3 * h * w];
    for (i, px) in raw.chunks_exact(3).enumerate() {
        for ch in 0..3 {
            data[ch * h * w + i] = px[ch] as f32 / 255.0;
        }
    }
    Tensor::new(&[3, h, w], data)
}

/// Writes a `[3, H, W]` tensor as 8-bit RGB PNG, rounding `255·v`.
pub fn save_png(path: impl AsRef<Path>, img: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let (c, h, w) = img.planes()?;
    if c != 3 {
        return Err(Error::shape(format!("expected 3 channels, got {c}")));
    }
    let d = img.data();
    let mut raw = Vec::with_capacity(3 * h * w);
    for i in 0..h * w {
        for ch in 0..3 {
            raw.push(to_byte(d[ch * h * w + i]));
        }
    }
    let buf = image::RgbImage::from_raw(w as u32, h as u32, raw).ok_or_else(|| Error::shape("image buffer size"))?;
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary PGM (`P5`) bytes with pixel values `round(255·score)`.
pub fn pgm_bytes(map: &Heatmap) -> Vec<u8> {
    let (h, w) = (map.height(), map.width());
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(map.scores().data().iter().map(|&v| to_byte(v)));
    out
}

pub fn write_pgm(path: impl AsRef<Path>, map: &Heatmap) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&pgm_bytes(map)).map_err(|e| Error::io(path, e))
}
