//! Symmetry annotations, their geometric transforms and rasterization.
//!
//! Coordinates follow image convention: `x` is the column, `y` the row,
//! pixel centers sit at integers.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridmath::RotationAngle;
use crate::heatmap::Heatmap;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    #[default]
    Reflection,
    Rotation,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Segment {
    pub fn length(&self) -> f64 {
        (self.x1 - self.x0).hypot(self.y1 - self.y0)
    }

    /// Euclidean distance from `(x, y)` to the segment.
    pub fn distance(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (self.x1 - self.x0, self.y1 - self.y0);
        let len2 = dx * dx + dy * dy;
        let t = if len2 == 0.0 {
            0.0
        } else {
            (((x - self.x0) * dx + (y - self.y0) * dy) / len2).clamp(0.0, 1.0)
        };
        (x - (self.x0 + t * dx)).hypot(y - (self.y0 + t * dy))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Center {
    pub x: f64,
    pub y: f64,
    /// Rotation order.
    pub k: u32,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Annotation {
    pub axes: Vec<Segment>,
    pub centers: Vec<Center>,
}

/// A planar map `(x, y) → (x', y')` applied to annotations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GeoTransform {
    /// Rotation about the image center, matching `rotate_bilinear`.
    Rotate(RotationAngle),
    /// Mirror across the vertical center line.
    FlipHorizontal,
}

impl GeoTransform {
    pub fn apply(&self, x: f64, y: f64, h: usize, w: usize) -> (f64, f64) {
        let (cr, cc) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        match self {
            GeoTransform::Rotate(angle) => {
                // grids index (row, col); a source point q lands at c + r_θ(q − c)
                let (dr, dc) = angle.forward_map(y - cr, x - cc);
                (cc + dc, cr + dr)
            }
            GeoTransform::FlipHorizontal => ((w as f64 - 1.0) - x, y),
        }
    }
}

impl Annotation {
    pub fn is_empty(&self) -> bool {
        self.axes.is_empty() && self.centers.is_empty()
    }

    /// Maps every element; axes are clipped to the image and dropped when
    /// shorter than one pixel, centers outside the image are dropped.
    pub fn transformed(&self, t: GeoTransform, h: usize, w: usize) -> Self {
        let (xmax, ymax) = (w as f64 - 1.0, h as f64 - 1.0);
        let axes = self
            .axes
            .iter()
            .filter_map(|s| {
                let (x0, y0) = t.apply(s.x0, s.y0, h, w);
                let (x1, y1) = t.apply(s.x1, s.y1, h, w);
                clip(Segment { x0, y0, x1, y1 }, xmax, ymax).filter(|c| c.length() > 1.0)
            })
            .collect();
        let centers = self
            .centers
            .iter()
            .filter_map(|c| {
                let (x, y) = t.apply(c.x, c.y, h, w);
                (x >= 0.0 && y >= 0.0 && x <= xmax && y <= ymax).then_some(Center { x, y, k: c.k })
            })
            .collect();
        Self { axes, centers }
    }

    /// Line-oriented text: `axis x0 y0 x1 y1` and `center x y k`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for a in &self.axes {
            let _ = writeln!(s, "axis {} {} {} {}", a.x0, a.y0, a.x1, a.y1);
        }
        for c in &self.centers {
            let _ = writeln!(s, "center {} {} {}", c.x, c.y, c.k);
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut ann = Annotation::default();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |detail: String| Error::Format {
                field: "annotation",
                detail: format!("line {}: {detail}", no + 1),
            };
            let mut parts = line.split_whitespace();
            let tag = parts.next().unwrap_or_default();
            let nums: Vec<f64> = parts
                .map(|p| p.parse::<f64>().map_err(|e| bad(format!("`{p}`: {e}"))))
                .collect::<Result<_>>()?;
            match (tag, nums.as_slice()) {
                ("axis", &[x0, y0, x1, y1]) => ann.axes.push(Segment { x0, y0, x1, y1 }),
                ("center", &[x, y, k]) if k >= 2.0 && k.fract() == 0.0 => ann.centers.push(Center { x, y, k: k as u32 }),
                _ => return Err(bad(format!("cannot parse `{line}`"))),
            }
        }
        Ok(ann)
    }
}

/// Clips a segment to `[0, xmax] × [0, ymax]` (Liang–Barsky).
fn clip(s: Segment, xmax: f64, ymax: f64) -> Option<Segment> {
    let (dx, dy) = (s.x1 - s.x0, s.y1 - s.y0);
    let mut t0: f64 = 0.0;
    let mut t1: f64 = 1.0;
    for (p, q) in [(-dx, s.x0), (dx, xmax - s.x0), (-dy, s.y0), (dy, ymax - s.y0)] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    if t0 > t1 {
        return None;
    }
    if t0 == 0.0 && t1 == 1.0 {
        return Some(s);
    }
    Some(Segment {
        x0: s.x0 + t0 * dx,
        y0: s.y0 + t0 * dy,
        x1: s.x0 + t1 * dx,
        y1: s.y0 + t1 * dy,
    })
}

/// Stroke width and center spread of the ground-truth rasters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GtStyle {
    /// Reflection stroke width in pixels.
    pub width: f64,
    /// Rotation-center Gaussian σ in pixels.
    pub sigma: f64,
}

impl Default for GtStyle {
    fn default() -> Self {
        Self { width: 3.0, sigma: 3.0 }
    }
}

/// Binary ground truth: pixels within `width/2` of an axis (reflection), or
/// where `exp(−r²/2σ²) ≥ 0.5` around a center (rotation).
pub fn rasterize_gt(ann: &Annotation, h: usize, w: usize, task: Task, style: &GtStyle) -> Result<Heatmap> {
    if h == 0 || w == 0 {
        return Err(Error::shape("raster size must be positive"));
    }
    let mut out = vec![0.0f32; h * w];
    match task {
        Task::Reflection => {
            if style.width < 1.0 {
                return Err(Error::config(format!("stroke width {} is below 1 pixel", style.width)));
            }
            let half = style.width / 2.0;
            for s in &ann.axes {
                let (lo_x, hi_x) = (s.x0.min(s.x1) - half, s.x0.max(s.x1) + half);
                let (lo_y, hi_y) = (s.y0.min(s.y1) - half, s.y0.max(s.y1) + half);
                for r in span(lo_y, hi_y, h) {
                    for c in span(lo_x, hi_x, w) {
                        if s.distance(c as f64, r as f64) <= half {
                            out[r * w + c] = 1.0;
                        }
                    }
                }
            }
        }
        Task::Rotation => {
            if style.sigma <= 0.0 {
                return Err(Error::config("rotation sigma must be positive"));
            }
            // exp(-r²/2σ²) ≥ 1/2  ⇔  r² ≤ 2σ² ln 2
            let r2max = 2.0 * style.sigma * style.sigma * std::f64::consts::LN_2;
            let reach = r2max.sqrt();
            for c in &ann.centers {
                for r in span(c.y - reach, c.y + reach, h) {
                    for col in span(c.x - reach, c.x + reach, w) {
                        let d2 = (col as f64 - c.x).powi(2) + (r as f64 - c.y).powi(2);
                        if d2 <= r2max {
                            out[r * w + col] = 1.0;
                        }
                    }
                }
            }
        }
    }
    if ann.is_empty() {
        log::debug!("rasterizing an empty annotation");
    }
    Heatmap::new(Tensor::new(&[h, w], out)?)
}

fn span(lo: f64, hi: f64, n: usize) -> std::ops::Range<usize> {
    let a = lo.floor().max(0.0) as usize;
    let b = ((hi.ceil() + 1.0).max(0.0) as usize).min(n);
    a.min(b)..b
}
