//! Procedural scenes of symmetric shapes with analytic symmetry elements.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::annotation::{Annotation, Center, Segment};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeFamily {
    Ellipse,
    Rectangle,
    Polygon,
    Star,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    /// Inclusive range of shapes per scene.
    pub shapes: [usize; 2],
    pub families: Vec<ShapeFamily>,
    /// Circumradius range in pixels.
    pub radius: [f64; 2],
    /// Vertex (or point) count range for polygons and stars.
    pub vertices: [u32; 2],
    /// Range each background channel is drawn from.
    #[serde(default = "full_range")]
    pub background: [f64; 2],
    /// Minimum per-channel contrast between a shape and the background.
    pub min_contrast: f64,
    /// Amplitude of a linear color ramp across each shape.
    pub texture: f64,
    /// Standard deviation of additive pixel noise.
    pub noise: f64,
    pub seed: u64,
}

fn full_range() -> [f64; 2] {
    [0.0, 1.0]
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            height: 128,
            width: 128,
            shapes: [1, 3],
            families: vec![ShapeFamily::Ellipse, ShapeFamily::Rectangle, ShapeFamily::Polygon, ShapeFamily::Star],
            radius: [10.0, 22.0],
            vertices: [3, 8],
            background: full_range(),
            min_contrast: 0.25,
            texture: 0.1,
            noise: 0.03,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height < 8 || self.width < 8 {
            return Err(Error::config(format!("scene size {}x{} is below 8x8", self.height, self.width)));
        }
        if self.shapes[0] == 0 || self.shapes[0] > self.shapes[1] {
            return Err(Error::config(format!("shape count range {:?} must be nonempty and start at 1 or more", self.shapes)));
        }
        if self.families.is_empty() {
            return Err(Error::config("at least one shape family is required"));
        }
        if !(self.radius[0] >= 3.0 && self.radius[0] <= self.radius[1]) {
            return Err(Error::config(format!("radius range {:?} must start at 3 or more", self.radius)));
        }
        if 2.0 * self.radius[1] + 2.0 > self.height.min(self.width) as f64 {
            return Err(Error::config(format!("radius {} does not fit a {}x{} scene", self.radius[1], self.height, self.width)));
        }
        if self.vertices[0] < 3 || self.vertices[0] > self.vertices[1] {
            return Err(Error::config(format!("vertex range {:?} must start at 3 or more", self.vertices)));
        }
        if !(0.0 <= self.background[0] && self.background[0] <= self.background[1] && self.background[1] <= 1.0) {
            return Err(Error::config(format!("background range {:?} must lie in [0, 1]", self.background)));
        }
        if !(0.0..=0.5).contains(&self.min_contrast) || !(0.0..=0.5).contains(&self.texture) || !(0.0..=0.5).contains(&self.noise) {
            return Err(Error::config("contrast, texture and noise must lie in [0, 0.5]"));
        }
        Ok(())
    }
}

/// A placed shape. Angles are radians measured from the +x (column) axis
/// towards +y (row).
#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64, angle: f64 },
    Rectangle { cx: f64, cy: f64, half_w: f64, half_h: f64, angle: f64 },
    Polygon { cx: f64, cy: f64, radius: f64, k: u32, angle: f64 },
    Star { cx: f64, cy: f64, outer: f64, inner: f64, k: u32, angle: f64 },
}

impl Shape {
    pub fn center(&self) -> (f64, f64) {
        match *self {
            Shape::Ellipse { cx, cy, .. }
            | Shape::Rectangle { cx, cy, .. }
            | Shape::Polygon { cx, cy, .. }
            | Shape::Star { cx, cy, .. } => (cx, cy),
        }
    }

    pub fn bounding_radius(&self) -> f64 {
        match *self {
            Shape::Ellipse { rx, ry, .. } => rx.max(ry),
            Shape::Rectangle { half_w, half_h, .. } => half_w.hypot(half_h),
            Shape::Polygon { radius, .. } => radius,
            Shape::Star { outer, .. } => outer,
        }
    }

    pub fn rotation_order(&self) -> u32 {
        match *self {
            Shape::Ellipse { rx, ry, .. } if rx == ry => 2,
            Shape::Ellipse { .. } => 2,
            Shape::Rectangle { half_w, half_h, .. } if half_w == half_h => 4,
            Shape::Rectangle { .. } => 2,
            Shape::Polygon { k, .. } | Shape::Star { k, .. } => k,
        }
    }

    /// Boundary polygon for vertex-based shapes.
    fn vertices(&self) -> Option<Vec<(f64, f64)>> {
        match *self {
            Shape::Polygon { cx, cy, radius, k, angle } => Some(
                (0..k)
                    .map(|i| {
                        let a = angle + 2.0 * PI * i as f64 / k as f64;
                        (cx + radius * a.cos(), cy + radius * a.sin())
                    })
                    .collect(),
            ),
            Shape::Star { cx, cy, outer, inner, k, angle } => Some(
                (0..2 * k)
                    .map(|i| {
                        let a = angle + PI * i as f64 / k as f64;
                        let r = if i % 2 == 0 { outer } else { inner };
                        (cx + r * a.cos(), cy + r * a.sin())
                    })
                    .collect(),
            ),
            _ => None,
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (cx, cy) = self.center();
        match *self {
            Shape::Ellipse { rx, ry, angle, .. } => {
                let (u, v) = to_frame(x - cx, y - cy, angle);
                (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
            }
            Shape::Rectangle { half_w, half_h, angle, .. } => {
                let (u, v) = to_frame(x - cx, y - cy, angle);
                u.abs() <= half_w && v.abs() <= half_h
            }
            _ => point_in_polygon(&self.vertices().unwrap_or_default(), x, y),
        }
    }

    /// Reflection axes as chords through the center, clipped to the shape.
    pub fn axes(&self) -> Vec<Segment> {
        let (cx, cy) = self.center();
        let chord = |dir: f64, forward: f64, backward: f64| Segment {
            x0: cx - backward * dir.cos(),
            y0: cy - backward * dir.sin(),
            x1: cx + forward * dir.cos(),
            y1: cy + forward * dir.sin(),
        };
        match *self {
            Shape::Ellipse { rx, ry, angle, .. } => {
                vec![chord(angle, rx, rx), chord(angle + PI / 2.0, ry, ry)]
            }
            Shape::Rectangle { half_w, half_h, angle, .. } => {
                let mut v = vec![chord(angle, half_w, half_w), chord(angle + PI / 2.0, half_h, half_h)];
                if half_w == half_h {
                    let d = half_w * std::f64::consts::SQRT_2;
                    v.push(chord(angle + PI / 4.0, d, d));
                    v.push(chord(angle + 3.0 * PI / 4.0, d, d));
                }
                v
            }
            Shape::Polygon { radius, k, angle, .. } => {
                // direction j·π/k hits a vertex for even j and an edge midpoint for odd j
                let apothem = radius * (PI / k as f64).cos();
                let reach = |j: u32| if j % 2 == 0 { radius } else { apothem };
                (0..k).map(|j| chord(angle + PI * j as f64 / k as f64, reach(j), reach(j + k))).collect()
            }
            Shape::Star { outer, inner, k, angle, .. } => {
                let reach = |j: u32| if j % 2 == 0 { outer } else { inner };
                (0..k).map(|j| chord(angle + PI * j as f64 / k as f64, reach(j), reach(j + k))).collect()
            }
        }
    }

    fn sample<R: Rng + ?Sized>(family: ShapeFamily, cx: f64, cy: f64, r: f64, spec: &SceneSpec, rng: &mut R) -> Self {
        let angle = rng.random_range(0.0..PI);
        let k = rng.random_range(spec.vertices[0]..=spec.vertices[1]);
        match family {
            ShapeFamily::Ellipse => Shape::Ellipse { cx, cy, rx: r, ry: r * rng.random_range(0.45..0.8), angle },
            ShapeFamily::Rectangle => {
                let t = rng.random_range(0.3..0.65f64);
                Shape::Rectangle { cx, cy, half_w: r * (1.0 - t * t).sqrt(), half_h: r * t, angle }
            }
            ShapeFamily::Polygon => Shape::Polygon { cx, cy, radius: r, k, angle },
            ShapeFamily::Star => Shape::Star { cx, cy, outer: r, inner: r * rng.random_range(0.4..0.6), k: k.max(4), angle },
        }
    }
}

fn to_frame(dx: f64, dy: f64, angle: f64) -> (f64, f64) {
    let (s, c) = angle.sin_cos();
    (c * dx + s * dy, -s * dx + c * dy)
}

fn point_in_polygon(v: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut inside = false;
    let mut j = v.len().wrapping_sub(1);
    for i in 0..v.len() {
        let ((xi, yi), (xj, yj)) = (v[i], v[j]);
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

const PLACEMENT_TRIES: usize = 200;

/// Places non-overlapping shapes and paints them over a noisy background.
/// Pixel values are quantized to multiples of 1/255 so PNG storage is lossless.
pub fn generate_scene<R: Rng + ?Sized>(spec: &SceneSpec, rng: &mut R) -> Result<(Tensor, Annotation, Vec<Shape>)> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let count = rng.random_range(spec.shapes[0]..=spec.shapes[1]);
    let mut shapes: Vec<Shape> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut placed = None;
        for _ in 0..PLACEMENT_TRIES {
            let family = spec.families[rng.random_range(0..spec.families.len())];
            let r = rng.random_range(spec.radius[0]..=spec.radius[1]);
            let cx = rng.random_range(r + 1.0..=w as f64 - 2.0 - r);
            let cy = rng.random_range(r + 1.0..=h as f64 - 2.0 - r);
            let clear = shapes.iter().all(|s| {
                let (ox, oy) = s.center();
                (ox - cx).hypot(oy - cy) > s.bounding_radius() + r + 2.0
            });
            if clear {
                placed = Some(Shape::sample(family, cx, cy, r, spec, rng));
                break;
            }
        }
        match placed {
            Some(s) => shapes.push(s),
            None if !shapes.is_empty() => break,
            None => return Err(Error::Generation(format!("no room for a shape after {PLACEMENT_TRIES} tries"))),
        }
    }

    let [b0, b1] = spec.background;
    let background: [f64; 3] = std::array::from_fn(|_| if b0 == b1 { b0 } else { rng.random_range(b0..b1) });
    let mut img = vec![0.0f64; 3 * h * w];
    for ch in 0..3 {
        img[ch * h * w..(ch + 1) * h * w].fill(background[ch]);
    }
    for shape in &shapes {
        let color = loop {
            let c: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
            let contrast = c.iter().zip(&background).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if contrast >= spec.min_contrast {
                break c;
            }
        };
        let ramp = rng.random_range(0.0..2.0 * PI);
        let (rs, rc) = ramp.sin_cos();
        let (cx, cy) = shape.center();
        let rad = shape.bounding_radius();
        let (r0, r1) = ((cy - rad).floor().max(0.0) as usize, ((cy + rad).ceil() as usize + 1).min(h));
        let (c0, c1) = ((cx - rad).floor().max(0.0) as usize, ((cx + rad).ceil() as usize + 1).min(w));
        for r in r0..r1 {
            for c in c0..c1 {
                let (x, y) = (c as f64, r as f64);
                if shape.contains(x, y) {
                    let shade = spec.texture * ((x - cx) * rc + (y - cy) * rs) / rad;
                    for ch in 0..3 {
                        img[ch * h * w + r * w + c] = color[ch] + shade;
                    }
                }
            }
        }
    }
    if spec.noise > 0.0 {
        let normal = Normal::new(0.0, spec.noise).map_err(|e| Error::config(e.to_string()))?;
        for v in &mut img {
            *v += normal.sample(rng);
        }
    }
    let data = img.into_iter().map(|v| ((v.clamp(0.0, 1.0) * 255.0).round() / 255.0) as f32).collect();
    let image = Tensor::new(&[3, h, w], data)?;

    let mut ann = Annotation::default();
    for s in &shapes {
        ann.axes.extend(s.axes());
        let (x, y) = s.center();
        ann.centers.push(Center { x, y, k: s.rotation_order() });
    }
    Ok((image, ann, shapes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn centroid(s: &Shape) -> (f64, f64) {
        match s.vertices() {
            Some(v) => {
                // area centroid of the boundary polygon
                let (mut a, mut x, mut y) = (0.0, 0.0, 0.0);
                for i in 0..v.len() {
                    let (p, q) = (v[i], v[(i + 1) % v.len()]);
                    let cross = p.0 * q.1 - q.0 * p.1;
                    a += cross;
                    x += (p.0 + q.0) * cross;
                    y += (p.1 + q.1) * cross;
                }
                (x / (3.0 * a), y / (3.0 * a))
            }
            None => s.center(),
        }
    }

    fn line_distance(s: &Segment, (x, y): (f64, f64)) -> f64 {
        let (dx, dy) = (s.x1 - s.x0, s.y1 - s.y0);
        ((x - s.x0) * dy - (y - s.y0) * dx).abs() / dx.hypot(dy)
    }

    #[test]
    fn pentagon_has_five_axes_through_center() {
        let p = Shape::Polygon { cx: 30.0, cy: 20.0, radius: 10.0, k: 5, angle: 0.3 };
        let axes = p.axes();
        assert_eq!(axes.len(), 5);
        for a in &axes {
            assert!(line_distance(a, (30.0, 20.0)) < 1e-9);
        }
        assert_eq!(p.rotation_order(), 5);
    }

    #[test]
    fn axis_endpoints_lie_on_boundary() {
        let shapes = [
            Shape::Polygon { cx: 0.0, cy: 0.0, radius: 10.0, k: 5, angle: 0.2 },
            Shape::Polygon { cx: 0.0, cy: 0.0, radius: 10.0, k: 6, angle: 0.0 },
            Shape::Star { cx: 0.0, cy: 0.0, outer: 10.0, inner: 5.0, k: 5, angle: 0.7 },
            Shape::Ellipse { cx: 0.0, cy: 0.0, rx: 9.0, ry: 4.0, angle: 1.0 },
            Shape::Rectangle { cx: 0.0, cy: 0.0, half_w: 8.0, half_h: 3.0, angle: 0.4 },
        ];
        for s in &shapes {
            for a in s.axes() {
                for (x, y) in [(a.x0, a.y0), (a.x1, a.y1)] {
                    // just inside is in the shape, just outside is not
                    let (ux, uy) = (x / x.hypot(y), y / x.hypot(y));
                    assert!(s.contains(x - 1e-6 * ux, y - 1e-6 * uy), "{s:?}");
                    assert!(!s.contains(x + 1e-6 * ux, y + 1e-6 * uy), "{s:?}");
                }
            }
        }
    }

    #[test]
    fn circle_scene_center() {
        let spec = SceneSpec { shapes: [1, 1], families: vec![ShapeFamily::Ellipse], ..SceneSpec::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (_, ann, shapes) = generate_scene(&spec, &mut rng).unwrap();
        let (cx, cy) = shapes[0].center();
        let circle = Shape::Ellipse { cx, cy, rx: 7.0, ry: 7.0, angle: 0.0 };
        assert_eq!((ann.centers[0].x, ann.centers[0].y), circle.center());
        for a in circle.axes() {
            assert!(line_distance(&a, (cx, cy)) < 1e-9);
        }
    }

    #[test]
    fn same_seed_same_scene() {
        let spec = SceneSpec::default();
        let a = generate_scene(&spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = generate_scene(&spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn pixels_are_byte_quantized() {
        let (img, _, _) = generate_scene(&SceneSpec::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for &v in img.data() {
            let b = (v * 255.0).round();
            assert_eq!((b / 255.0) as f32, v);
        }
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(SceneSpec { shapes: [0, 2], ..SceneSpec::default() }.validate().is_err());
        assert!(SceneSpec { families: vec![], ..SceneSpec::default() }.validate().is_err());
        assert!(SceneSpec { radius: [10.0, 70.0], ..SceneSpec::default() }.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn axes_pass_through_centroid(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (_, ann, shapes) = generate_scene(&SceneSpec::default(), &mut rng).unwrap();
            prop_assert!(!shapes.is_empty());
            prop_assert_eq!(ann.centers.len(), shapes.len());
            for s in &shapes {
                let c = centroid(s);
                for a in s.axes() {
                    prop_assert!(line_distance(&a, c) < 1e-6);
                    prop_assert!(a.length() > 1.0);
                    for v in [a.x0, a.x1] { prop_assert!((0.0..=127.0).contains(&v)); }
                    for v in [a.y0, a.y1] { prop_assert!((0.0..=127.0).contains(&v)); }
                }
            }
        }
    }
}
