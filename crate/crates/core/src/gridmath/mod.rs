//! Planar grid operations: exact quarter-turn rotations, bilinear rotations
//! and corner-aligned bilinear resizing.
//!
//! All operations act on the last two axes of a tensor and treat every
//! leading axis as a batch of independent planes. Axis `-2` is the row
//! coordinate `x`, axis `-1` the column coordinate `y`, and rotations are
//! taken about the continuous grid center `((H-1)/2, (W-1)/2)`.
//!
//! The rotation `R_θ` of a plane reads each output coordinate `p` from the
//! source coordinate `r_{-θ}(p)` where
//!
//! ```text
//! r_{-θ}(x, y) = ( cos θ · x + sin θ · y,
//!                 -sin θ · x + cos θ · y )
//! ```

pub mod csym;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// A planar rotation angle in degrees, normalized to `[0, 360)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotationAngle {
    degrees: f64,
}

impl RotationAngle {
    pub fn degrees(degrees: f64) -> Self {
        let mut d = degrees.rem_euclid(360.0);
        if d >= 360.0 {
            d = 0.0;
        }
        Self { degrees: d }
    }

    pub fn quarter_turns(k: i64) -> Self {
        Self::degrees(90.0 * k.rem_euclid(4) as f64)
    }

    pub fn as_degrees(&self) -> f64 {
        self.degrees
    }

    /// True when the angle is a multiple of 90°.
    pub fn is_exact(&self) -> bool {
        self.exact_quarter_turns().is_some()
    }

    pub fn exact_quarter_turns(&self) -> Option<usize> {
        let q = self.degrees / 90.0;
        (q.fract() == 0.0).then_some(q as usize % 4)
    }

    /// `(cos θ, sin θ)`, exact for multiples of 90°.
    pub fn cos_sin(&self) -> (f64, f64) {
        match self.exact_quarter_turns() {
            Some(0) => (1.0, 0.0),
            Some(1) => (0.0, 1.0),
            Some(2) => (-1.0, 0.0),
            Some(3) => (0.0, -1.0),
            _ => {
                let r = self.degrees.to_radians();
                (r.cos(), r.sin())
            }
        }
    }

    /// Applies `r_{-θ}` to a displacement `(x, y)`.
    pub fn inverse_map(&self, x: f64, y: f64) -> (f64, f64) {
        let (c, s) = self.cos_sin();
        (c * x + s * y, -s * x + c * y)
    }

    /// Applies `r_θ` to a displacement; the forward map of a point under `R_θ`.
    pub fn forward_map(&self, x: f64, y: f64) -> (f64, f64) {
        let (c, s) = self.cos_sin();
        (c * x - s * y, s * x + c * y)
    }
}

/// Source flat index (within a plane) read by each output cell of a
/// quarter-turn rotation of an `n×n` plane.
pub(crate) fn rotate90_source(n: usize, k: usize, a: usize, b: usize) -> usize {
    let last = n - 1;
    let (sa, sb) = match k % 4 {
        0 => (a, b),
        1 => (b, last - a),
        2 => (last - a, last - b),
        _ => (last - b, a),
    };
    sa * n + sb
}

/// Exact rotation by `k·90°` of every plane. The planes must be square.
pub fn rotate90<T: Scalar>(grid: &Tensor<T>, k: i64) -> Result<Tensor<T>> {
    let (planes, h, w) = grid.planes()?;
    if h != w {
        return Err(Error::shape(format!(
            "rotate90 needs square planes, got {h}x{w}"
        )));
    }
    let k = k.rem_euclid(4) as usize;
    if k == 0 {
        return Ok(grid.clone());
    }
    let n = h;
    let src = grid.data();
    let mut out = vec![T::zero(); grid.len()];
    for p in 0..planes {
        let base = p * n * n;
        for a in 0..n {
            for b in 0..n {
                out[base + a * n + b] = src[base + rotate90_source(n, k, a, b)];
            }
        }
    }
    Ok(Tensor::from_parts(grid.shape().to_vec(), out))
}

/// Precomputed bilinear taps of a rotation: output pixel `o` reads
/// `Σ w · src[i]` plus `pad_weight[o] · pad`.
#[derive(Clone, Debug)]
pub(crate) struct RotationTaps {
    pub taps: Vec<Vec<(usize, f64)>>,
    pub pad_weight: Vec<f64>,
}

impl RotationTaps {
    pub fn new(h: usize, w: usize, angle: RotationAngle) -> Self {
        let ca = (h as f64 - 1.0) / 2.0;
        let cb = (w as f64 - 1.0) / 2.0;
        let mut taps = Vec::with_capacity(h * w);
        let mut pad_weight = Vec::with_capacity(h * w);
        for a in 0..h {
            for b in 0..w {
                let (dx, dy) = angle.inverse_map(a as f64 - ca, b as f64 - cb);
                let (sx, sy) = (ca + dx, cb + dy);
                let (list, pad) = bilinear_taps(h, w, sx, sy);
                taps.push(list);
                pad_weight.push(pad);
            }
        }
        Self { taps, pad_weight }
    }
}

/// Bilinear taps for sampling an `h×w` plane at `(sx, sy)`. Returns the
/// in-bounds taps and the total weight falling outside the grid.
pub(crate) fn bilinear_taps(h: usize, w: usize, sx: f64, sy: f64) -> (Vec<(usize, f64)>, f64) {
    // snap values within rounding noise of an integer
    let snap = |v: f64| {
        let r = v.round();
        if (v - r).abs() < 1e-9 {
            r
        } else {
            v
        }
    };
    let (sx, sy) = (snap(sx), snap(sy));
    let x0 = sx.floor();
    let y0 = sy.floor();
    let tx = sx - x0;
    let ty = sy - y0;
    let mut list = Vec::with_capacity(4);
    let mut pad = 0.0;
    for (dx, wx) in [(0.0, 1.0 - tx), (1.0, tx)] {
        for (dy, wy) in [(0.0, 1.0 - ty), (1.0, ty)] {
            let weight = wx * wy;
            if weight == 0.0 {
                continue;
            }
            let xi = x0 + dx;
            let yi = y0 + dy;
            if xi >= 0.0 && yi >= 0.0 && (xi as usize) < h && (yi as usize) < w {
                list.push((xi as usize * w + yi as usize, weight));
            } else {
                pad += weight;
            }
        }
    }
    (list, pad)
}

/// Rotation by an arbitrary angle with bilinear interpolation; coordinates
/// falling outside the source plane read `pad`.
pub fn rotate_bilinear<T: Scalar>(grid: &Tensor<T>, angle: RotationAngle, pad: T) -> Result<Tensor<T>> {
    let (_, h, w) = grid.planes()?;
    if h != w {
        return Err(Error::shape(format!(
            "rotate_bilinear needs square planes, got {h}x{w}"
        )));
    }
    let taps = RotationTaps::new(h, w, angle);
    Ok(apply_rotation_taps(grid, &taps, pad))
}

pub(crate) fn apply_rotation_taps<T: Scalar>(grid: &Tensor<T>, taps: &RotationTaps, pad: T) -> Tensor<T> {
    let plane = taps.taps.len();
    let src = grid.data();
    let mut out = vec![T::zero(); grid.len()];
    for (p, chunk) in out.chunks_mut(plane).enumerate() {
        let base = p * plane;
        for (o, slot) in chunk.iter_mut().enumerate() {
            let mut acc = T::of(taps.pad_weight[o]) * pad;
            for &(i, wgt) in &taps.taps[o] {
                acc = acc + T::of(wgt) * src[base + i];
            }
            *slot = acc;
        }
    }
    Tensor::from_parts(grid.shape().to_vec(), out)
}

/// Transpose of [`apply_rotation_taps`] with respect to the grid.
pub(crate) fn apply_rotation_taps_adjoint<T: Scalar>(cot: &Tensor<T>, taps: &RotationTaps) -> Tensor<T> {
    let plane = taps.taps.len();
    let g = cot.data();
    let mut out = vec![T::zero(); cot.len()];
    for (p, chunk) in out.chunks_mut(plane).enumerate() {
        let base = p * plane;
        for o in 0..plane {
            let go = g[base + o];
            for &(i, wgt) in &taps.taps[o] {
                chunk[i] = chunk[i] + T::of(wgt) * go;
            }
        }
    }
    Tensor::from_parts(cot.shape().to_vec(), out)
}

/// One axis of a corner-aligned linear interpolation: output index `i`
/// reads `x[i0] + t·(x[i0+1] − x[i0])`.
#[derive(Clone, Debug)]
pub(crate) struct AxisWeights {
    pub taps: Vec<(usize, f64)>,
    pub n_in: usize,
}

impl AxisWeights {
    pub fn new(n_in: usize, n_out: usize) -> Self {
        let taps = (0..n_out)
            .map(|i| {
                if n_out == 1 || n_in == 1 {
                    return (0, 0.0);
                }
                let src = (i * (n_in - 1)) as f64 / (n_out - 1) as f64;
                let i0 = (src.floor() as usize).min(n_in - 1);
                let t = src - i0 as f64;
                if i0 == n_in - 1 {
                    (i0, 0.0)
                } else {
                    (i0, t)
                }
            })
            .collect();
        Self { taps, n_in }
    }

    #[inline]
    fn sample<T: Scalar>(&self, i: usize, read: impl Fn(usize) -> T) -> T {
        let (i0, t) = self.taps[i];
        let a = read(i0);
        if t == 0.0 {
            a
        } else {
            a + T::of(t) * (read(i0 + 1) - a)
        }
    }

    #[inline]
    fn scatter<T: Scalar>(&self, i: usize, g: T, mut write: impl FnMut(usize, T)) {
        let (i0, t) = self.taps[i];
        if t == 0.0 {
            write(i0, g);
        } else {
            let tt = T::of(t);
            write(i0, g - tt * g);
            write(i0 + 1, tt * g);
        }
    }
}

/// Corner-aligned bilinear resize of every plane to `out_h × out_w`.
pub fn resize_bilinear<T: Scalar>(grid: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (planes, h, w) = grid.planes()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::shape("resize target must be positive"));
    }
    let ah = AxisWeights::new(h, out_h);
    let aw = AxisWeights::new(w, out_w);
    let src = grid.data();
    let mut out = vec![T::zero(); planes * out_h * out_w];
    let mut tmp = vec![T::zero(); out_h * w];
    for p in 0..planes {
        let base = p * h * w;
        for i in 0..out_h {
            for c in 0..w {
                tmp[i * w + c] = ah.sample(i, |r| src[base + r * w + c]);
            }
        }
        let obase = p * out_h * out_w;
        for i in 0..out_h {
            for j in 0..out_w {
                out[obase + i * out_w + j] = aw.sample(j, |c| tmp[i * w + c]);
            }
        }
    }
    let mut shape = grid.shape().to_vec();
    let r = shape.len();
    shape[r - 2] = out_h;
    shape[r - 1] = out_w;
    Ok(Tensor::from_parts(shape, out))
}

/// Transpose of [`resize_bilinear`] mapping an output cotangent back onto
/// the `h × w` source planes.
pub(crate) fn resize_bilinear_adjoint<T: Scalar>(cot: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let r = cot.rank();
    let out_h = cot.shape()[r - 2];
    let out_w = cot.shape()[r - 1];
    let planes = cot.len() / (out_h * out_w);
    let ah = AxisWeights::new(h, out_h);
    let aw = AxisWeights::new(w, out_w);
    debug_assert_eq!(ah.n_in, h);
    let g = cot.data();
    let mut out = vec![T::zero(); planes * h * w];
    let mut tmp = vec![T::zero(); out_h * w];
    for p in 0..planes {
        tmp.iter_mut().for_each(|v| *v = T::zero());
        let obase = p * out_h * out_w;
        for i in 0..out_h {
            for j in 0..out_w {
                let gv = g[obase + i * out_w + j];
                aw.scatter(j, gv, |c, v| tmp[i * w + c] = tmp[i * w + c] + v);
            }
        }
        let base = p * h * w;
        for i in 0..out_h {
            for c in 0..w {
                let gv = tmp[i * w + c];
                ah.scatter(i, gv, |row, v| out[base + row * w + c] = out[base + row * w + c] + v);
            }
        }
    }
    let mut shape = cot.shape().to_vec();
    shape[r - 2] = h;
    shape[r - 1] = w;
    Tensor::from_parts(shape, out)
}

/// Corner-aligned bilinear upsampling by an integer factor.
pub fn bilinear_upsample<T: Scalar>(grid: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor == 0 {
        return Err(Error::shape("upsampling factor must be at least 1"));
    }
    let (_, h, w) = grid.planes()?;
    resize_bilinear(grid, h * factor, w * factor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        Tensor::randn(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Loops over every coordinate, applies the rotation matrix about the
    /// center and rounds to the nearest cell.
    fn rotation_oracle(grid: &Tensor<f64>, k: i64) -> Tensor<f64> {
        let shape = grid.shape().to_vec();
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let theta = (k as f64 * 90.0).to_radians();
        let center = (h as f64 - 1.0) / 2.0;
        Tensor::from_fn(&shape, |flat| {
            let ch = flat / (h * w);
            let x = (flat / w) % h;
            let y = flat % w;
            let (dx, dy) = (x as f64 - center, y as f64 - center);
            let sx = theta.cos() * dx + theta.sin() * dy + center;
            let sy = -theta.sin() * dx + theta.cos() * dy + center;
            assert!(ch < c);
            grid.at(&[ch, sx.round() as usize, sy.round() as usize])
        })
    }

    #[test]
    fn rotate90_zero_is_identity() {
        let g = random(&[2, 5, 5], 1);
        assert_eq!(rotate90(&g, 0).unwrap(), g);
    }

    #[test]
    fn rotate90_small_grid_matches_matrix_oracle() {
        let g = Tensor::<f64>::new(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let expected = rotation_oracle(&g, 1);
        assert_eq!(rotate90(&g, 1).unwrap(), expected);
        assert_eq!(expected.data(), &[2.0, 4.0, 1.0, 3.0]);
    }

    #[test]
    fn rotate90_matches_oracle_for_all_turns() {
        for n in [3, 4, 7] {
            let g = random(&[2, n, n], n as u64);
            for k in 0..4 {
                assert_eq!(rotate90(&g, k).unwrap(), rotation_oracle(&g, k));
            }
        }
    }

    #[test]
    fn rotate90_rejects_non_square() {
        let g = random(&[1, 3, 4], 0);
        assert!(matches!(rotate90(&g, 1), Err(Error::Shape(_))));
    }

    #[test]
    fn bilinear_rotation_zero_and_quarter_turns() {
        let g = random(&[3, 6, 6], 2).cast::<f32>();
        assert_eq!(rotate_bilinear(&g, RotationAngle::degrees(0.0), 0.0).unwrap(), g);
        for k in 1..4 {
            let a = rotate_bilinear(&g, RotationAngle::quarter_turns(k), 0.0).unwrap();
            let b = rotate90(&g, k).unwrap();
            assert!(a.max_abs_diff(&b).unwrap() < 1e-6);
        }
    }

    #[test]
    fn bilinear_rotation_fixes_center_impulse() {
        let mut g = Tensor::<f64>::zeros(&[1, 7, 7]);
        g.data_mut()[3 * 7 + 3] = 1.0;
        for deg in [13.0, 45.0, 137.5, 290.0] {
            let r = rotate_bilinear(&g, RotationAngle::degrees(deg), 0.0).unwrap();
            assert_eq!(r.at(&[0, 3, 3]), 1.0);
        }
    }

    #[test]
    fn bilinear_rotation_reads_pad_outside() {
        let g = Tensor::<f64>::full(&[1, 5, 5], 1.0);
        let r = rotate_bilinear(&g, RotationAngle::degrees(45.0), -2.0).unwrap();
        // corners rotate out of the source square
        assert!(r.at(&[0, 0, 0]) < 1.0);
        assert_eq!(r.at(&[0, 2, 2]), 1.0);
    }

    #[test]
    fn upsample_hand_values() {
        // corner-aligned, 2 -> 4 samples at 0, 1/3, 2/3, 1
        let g = Tensor::<f64>::new(&[1, 2, 2], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let u = bilinear_upsample(&g, 2).unwrap();
        assert_eq!(u.shape(), &[1, 4, 4]);
        let row = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for i in 0..4 {
            for j in 0..4 {
                assert!((u.at(&[0, i, j]) - row[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn upsample_factor_one_is_identity() {
        let g = random(&[2, 3, 3], 9);
        assert_eq!(bilinear_upsample(&g, 1).unwrap(), g);
    }

    #[test]
    fn resize_adjoint_is_transpose() {
        let x = random(&[2, 3, 5], 4);
        let y = random(&[2, 7, 4], 5);
        let ax = resize_bilinear(&x, 7, 4).unwrap();
        let aty = resize_bilinear_adjoint(&y, 3, 5);
        assert!((ax.dot(&y) - x.dot(&aty)).abs() < 1e-12);
    }

    #[test]
    fn rotation_adjoint_is_transpose() {
        let x = random(&[2, 6, 6], 6);
        let y = random(&[2, 6, 6], 7);
        let taps = RotationTaps::new(6, 6, RotationAngle::degrees(33.0));
        let ax = apply_rotation_taps(&x, &taps, 0.0);
        let aty = apply_rotation_taps_adjoint(&y, &taps);
        assert!((ax.dot(&y) - x.dot(&aty)).abs() < 1e-12);
    }

    #[test]
    fn angle_normalization() {
        assert_eq!(RotationAngle::degrees(-90.0).as_degrees(), 270.0);
        assert_eq!(RotationAngle::degrees(720.0).exact_quarter_turns(), Some(0));
        assert!(!RotationAngle::degrees(45.0).is_exact());
    }

    proptest! {
        #[test]
        fn rotate90_inverse_and_permutation(n in 1usize..7, c in 1usize..3, k in 0i64..4, seed in 0u64..1000) {
            let g = random(&[c, n, n], seed);
            let r = rotate90(&g, k).unwrap();
            prop_assert_eq!(rotate90(&r, 4 - k).unwrap(), g.clone());
            let mut a: Vec<f64> = g.data().to_vec();
            let mut b: Vec<f64> = r.data().to_vec();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn upsample_constant_is_exact(v in -100.0f64..100.0, n in 1usize..6, f in 1usize..5) {
            let g = Tensor::<f64>::full(&[2, n, n], v);
            let u = bilinear_upsample(&g, f).unwrap();
            prop_assert!(u.data().iter().all(|&x| x == v));
        }

        #[test]
        fn upsample_commutes_with_quarter_turns(n in 2usize..7, f in 1usize..4, k in 1i64..4, seed in 0u64..1000) {
            let g = random(&[2, n, n], seed);
            let a = bilinear_upsample(&rotate90(&g, k).unwrap(), f).unwrap();
            let b = rotate90(&bilinear_upsample(&g, f).unwrap(), k).unwrap();
            prop_assert!(a.max_abs_diff(&b).unwrap() < 1e-12);
        }
    }
}
