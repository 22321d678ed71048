//! Group convolution on the roto-translation group `ℤ² ⋊ C_n`.
//!
//! Output slice `θ` reads every input slice `θ'` through the filter
//! `ψ[(θ' − θ) mod n]` spatially rotated by `θ`. Spatial filter rotation is
//! a bilinear resampling of the zero-padded `k×k` kernel about its center,
//! which is an exact index permutation at multiples of 90°.

use crate::autodiff::{AdjointRule, Var};
use crate::error::{Error, Result};
use crate::gridmath::{RotationAngle, RotationTaps};
use crate::tensor::{Scalar, Tensor};

/// Dense `k²×k²` resampling matrices, one per rotation slot:
/// `K_θ[s] = Σ_{s'} S_θ[s][s'] · ψ[s']`.
#[derive(Clone, Debug)]
pub struct FilterRotations {
    pub n: usize,
    pub k: usize,
    mats: Vec<Vec<f64>>,
}

impl FilterRotations {
    pub fn new(n: usize, k: usize) -> Self {
        let kk = k * k;
        let mats = (0..n)
            .map(|t| {
                let taps = RotationTaps::new(k, k, slot_angle(n, t));
                let mut m = vec![0.0; kk * kk];
                for (s, list) in taps.taps.iter().enumerate() {
                    for &(src, w) in list {
                        m[s * kk + src] += w;
                    }
                }
                m
            })
            .collect();
        Self { n, k, mats }
    }

    pub fn matrix(&self, slot: usize) -> &[f64] {
        &self.mats[slot]
    }
}

/// Angle of rotation slot `t` in `C_n`.
pub fn slot_angle(n: usize, t: usize) -> RotationAngle {
    if (4 * t) % n == 0 {
        RotationAngle::quarter_turns((4 * t / n) as i64)
    } else {
        RotationAngle::degrees(360.0 * t as f64 / n as f64)
    }
}

/// One G-convolution layer. Inputs: `x [n, C_in, h, w]`, filter bank
/// `ψ [C_out, C_in, n, k, k]`, bias `[C_out]`; output `[n, C_out, h, w]`.
pub struct GConv {
    rot: FilterRotations,
}

impl GConv {
    pub fn new(n: usize, k: usize) -> Self {
        Self {
            rot: FilterRotations::new(n, k),
        }
    }

    fn dims<T: Scalar>(&self, x: &Tensor<T>, psi: &Tensor<T>, bias: &Tensor<T>) -> Result<Dims> {
        let (n, k) = (self.rot.n, self.rot.k);
        let xs = x.shape();
        let ps = psi.shape();
        if xs.len() != 4 || xs[0] != n {
            return Err(Error::shape(format!("gconv input must be [{n}, C, h, w], got {xs:?}")));
        }
        if ps.len() != 5 || ps[1] != xs[1] || ps[2] != n || ps[3] != k || ps[4] != k {
            return Err(Error::shape(format!(
                "gconv filter must be [C_out, {}, {n}, {k}, {k}], got {ps:?}",
                xs[1]
            )));
        }
        if bias.len() != ps[0] {
            return Err(Error::shape(format!("gconv bias of length {} for {} outputs", bias.len(), ps[0])));
        }
        let r = k / 2;
        if k % 2 == 0 || r >= xs[2] || r >= xs[3] {
            return Err(Error::shape(format!(
                "{k}x{k} filter does not fit a padded {}x{} map",
                xs[2], xs[3]
            )));
        }
        Ok(Dims {
            n,
            ci: xs[1],
            co: ps[0],
            h: xs[2],
            w: xs[3],
            k,
        })
    }

    /// Stacked filters for output slot `t`: `[C_out, n·C_in·k²]`, columns
    /// ordered `(θ', c_in, s)`.
    fn slot_weights<T: Scalar>(&self, psi: &Tensor<T>, d: &Dims, t: usize) -> Vec<T> {
        let kk = d.k * d.k;
        let s_mat = self.rot.matrix(t);
        let cols = d.n * d.ci * kk;
        let p = psi.data();
        let mut w = vec![T::zero(); d.co * cols];
        for co in 0..d.co {
            for tp in 0..d.n {
                let rel = (tp + d.n - t) % d.n;
                for ci in 0..d.ci {
                    let src = ((co * d.ci + ci) * d.n + rel) * kk;
                    let dst = co * cols + (tp * d.ci + ci) * kk;
                    for s in 0..kk {
                        let mut acc = T::zero();
                        for s2 in 0..kk {
                            let m = s_mat[s * kk + s2];
                            if m != 0.0 {
                                acc = acc + T::of(m) * p[src + s2];
                            }
                        }
                        w[dst + s] = acc;
                    }
                }
            }
        }
        w
    }
}

#[derive(Clone, Copy, Debug)]
struct Dims {
    n: usize,
    ci: usize,
    co: usize,
    h: usize,
    w: usize,
    k: usize,
}

/// `[planes·k², h·w]` patch matrix with zero padding `k/2`.
fn im2col<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let r = (k / 2) as isize;
    let hw = h * w;
    let mut col = vec![T::zero(); planes * k * k * hw];
    for p in 0..planes {
        let plane = &x[p * hw..(p + 1) * hw];
        for s in 0..k * k {
            let dx = (s / k) as isize - r;
            let dy = (s % k) as isize - r;
            let row = &mut col[(p * k * k + s) * hw..(p * k * k + s + 1) * hw];
            let y_lo = (-dy).max(0) as usize;
            let y_hi = (w as isize - dy).min(w as isize) as usize;
            for i in 0..h {
                let si = i as isize + dx;
                if si < 0 || si >= h as isize {
                    continue;
                }
                let src = si as usize * w;
                for j in y_lo..y_hi {
                    row[i * w + j] = plane[src + (j as isize + dy) as usize];
                }
            }
        }
    }
    col
}

/// Transpose of [`im2col`].
fn col2im<T: Scalar>(col: &[T], planes: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let r = (k / 2) as isize;
    let hw = h * w;
    let mut x = vec![T::zero(); planes * hw];
    for p in 0..planes {
        let plane = &mut x[p * hw..(p + 1) * hw];
        for s in 0..k * k {
            let dx = (s / k) as isize - r;
            let dy = (s % k) as isize - r;
            let row = &col[(p * k * k + s) * hw..(p * k * k + s + 1) * hw];
            let y_lo = (-dy).max(0) as usize;
            let y_hi = (w as isize - dy).min(w as isize) as usize;
            for i in 0..h {
                let si = i as isize + dx;
                if si < 0 || si >= h as isize {
                    continue;
                }
                let dst = si as usize * w;
                for j in y_lo..y_hi {
                    let v = &mut plane[dst + (j as isize + dy) as usize];
                    *v = *v + row[i * w + j];
                }
            }
        }
    }
    x
}

impl<T: Scalar> AdjointRule<T> for GConv {
    fn name(&self) -> &'static str {
        "gconv"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (x, psi, bias) = (inputs[0], inputs[1], inputs[2]);
        let d = self.dims(x, psi, bias)?;
        let hw = d.h * d.w;
        let cols = d.n * d.ci * d.k * d.k;
        let col = im2col(x.data(), d.n * d.ci, d.h, d.w, d.k);
        let mut out = vec![T::zero(); d.n * d.co * hw];
        for t in 0..d.n {
            let w = self.slot_weights(psi, &d, t);
            let slab = &mut out[t * d.co * hw..(t + 1) * d.co * hw];
            for (co, row) in slab.chunks_mut(hw).enumerate() {
                row.iter_mut().for_each(|v| *v = bias.data()[co]);
            }
            T::gemm(d.co, cols, hw, &w, false, &col, false, slab, true);
        }
        Tensor::new(&[d.n, d.co, d.h, d.w], out)
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, cot: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (x, psi, bias) = (inputs[0], inputs[1], inputs[2]);
        let d = self.dims(x, psi, bias).expect("checked in forward");
        let hw = d.h * d.w;
        let kk = d.k * d.k;
        let cols = d.n * d.ci * kk;
        let col = im2col(x.data(), d.n * d.ci, d.h, d.w, d.k);
        let g = cot.data();

        let mut dcol = needs[0].then(|| vec![T::zero(); cols * hw]);
        let mut dpsi = needs[1].then(|| vec![T::zero(); psi.len()]);
        let mut dw = vec![T::zero(); d.co * cols];
        for t in 0..d.n {
            let gt = &g[t * d.co * hw..(t + 1) * d.co * hw];
            if let Some(dcol) = dcol.as_mut() {
                let w = self.slot_weights(psi, &d, t);
                T::gemm(cols, d.co, hw, &w, true, gt, false, dcol, true);
            }
            if let Some(dpsi) = dpsi.as_mut() {
                T::gemm(d.co, hw, cols, gt, false, &col, true, &mut dw, false);
                let s_mat = self.rot.matrix(t);
                for co in 0..d.co {
                    for tp in 0..d.n {
                        let rel = (tp + d.n - t) % d.n;
                        for ci in 0..d.ci {
                            let src = co * cols + (tp * d.ci + ci) * kk;
                            let dst = ((co * d.ci + ci) * d.n + rel) * kk;
                            for s in 0..kk {
                                let gv = dw[src + s];
                                if gv == T::zero() {
                                    continue;
                                }
                                for s2 in 0..kk {
                                    let m = s_mat[s * kk + s2];
                                    if m != 0.0 {
                                        dpsi[dst + s2] = dpsi[dst + s2] + T::of(m) * gv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        let dx = dcol.map(|c| Tensor::new(x.shape(), col2im(&c, d.n * d.ci, d.h, d.w, d.k)).expect("same shape"));
        let dpsi = dpsi.map(|v| Tensor::new(psi.shape(), v).expect("same shape"));
        let db = needs[2].then(|| {
            let mut acc = vec![T::zero(); d.co];
            for t in 0..d.n {
                for (co, a) in acc.iter_mut().enumerate() {
                    let base = (t * d.co + co) * hw;
                    *a = *a + g[base..base + hw].iter().copied().sum::<T>();
                }
            }
            Tensor::new(bias.shape(), acc).expect("same shape")
        });
        vec![dx, dpsi, db]
    }
}

/// Records one G-convolution on the tape.
pub fn gconv_var<'t, T: Scalar>(x: Var<'t, T>, psi: Var<'t, T>, bias: Var<'t, T>, n: usize) -> Result<Var<'t, T>> {
    let k = psi.shape().get(3).copied().unwrap_or(0);
    x.tape().apply(GConv::new(n, k), &[x, psi, bias])
}

/// Forward-only G-convolution.
pub fn gconv<T: Scalar>(x: &Tensor<T>, psi: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let n = x.shape().first().copied().unwrap_or(0);
    let k = psi.shape().get(3).copied().unwrap_or(0);
    if n == 0 || k == 0 {
        return Err(Error::shape("gconv needs rank-4 input and rank-5 filters"));
    }
    GConv::new(n, k).forward(&[x, psi, bias])
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::autodiff::check_adjoint;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Bilinear value of the zero-padded `k×k` kernel plane at offset `(u, v)`
    /// from its center.
    fn kernel_at(plane: &[f64], k: usize, u: f64, v: f64) -> f64 {
        let r = (k / 2) as f64;
        let clean = |z: f64| if (z - z.round()).abs() < 1e-9 { z.round() } else { z };
        let (a, b) = (clean(u + r), clean(v + r));
        let (a0, b0) = (a.floor(), b.floor());
        let mut acc = 0.0;
        for (ia, wa) in [(a0, 1.0 - (a - a0)), (a0 + 1.0, a - a0)] {
            for (ib, wb) in [(b0, 1.0 - (b - b0)), (b0 + 1.0, b - b0)] {
                if wa * wb == 0.0 || ia < 0.0 || ib < 0.0 || ia >= k as f64 || ib >= k as f64 {
                    continue;
                }
                acc += wa * wb * plane[ia as usize * k + ib as usize];
            }
        }
        acc
    }

    /// Direct evaluation of the G-convolution sum.
    pub(crate) fn brute_force(x: &Tensor<f64>, psi: &Tensor<f64>, bias: &Tensor<f64>) -> Tensor<f64> {
        let [n, ci, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
        let (co, k) = (psi.shape()[0], psi.shape()[3]);
        let mut out = Tensor::zeros(&[n, co, h, w]);
        let mut vals = vec![0.0; out.len()];
        for t in 0..n {
            let ang = (t as f64 * 360.0 / n as f64).to_radians();
            let (c, s) = if (4 * t) % n == 0 {
                [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)][4 * t / n]
            } else {
                (ang.cos(), ang.sin())
            };
            for o in 0..co {
                for px in 0..h {
                    for py in 0..w {
                        let mut acc = bias.data()[o];
                        for tp in 0..n {
                            let rel = (tp + n - t) % n;
                            for c_in in 0..ci {
                                let base = ((o * ci + c_in) * n + rel) * k * k;
                                let plane = &psi.data()[base..base + k * k];
                                for qx in 0..h {
                                    for qy in 0..w {
                                        let dx = qx as f64 - px as f64;
                                        let dy = qy as f64 - py as f64;
                                        // the rotated filter keeps the k×k support
                                        if dx.abs() > (k / 2) as f64 || dy.abs() > (k / 2) as f64 {
                                            continue;
                                        }
                                        // r_{-θ} applied to the displacement
                                        let u = c * dx + s * dy;
                                        let v = -s * dx + c * dy;
                                        acc += x.at(&[tp, c_in, qx, qy]) * kernel_at(plane, k, u, v);
                                    }
                                }
                            }
                        }
                        vals[((t * co + o) * h + px) * w + py] = acc;
                    }
                }
            }
        }
        out = Tensor::new(out.shape(), vals).unwrap();
        out
    }

    fn random_case(rng: &mut ChaCha8Rng, n: usize, ci: usize, co: usize, h: usize) -> [Tensor<f64>; 3] {
        [
            Tensor::randn(&[n, ci, h, h], 1.0, rng),
            Tensor::randn(&[co, ci, n, 3, 3], 1.0, rng),
            Tensor::randn(&[co], 1.0, rng),
        ]
    }

    #[test]
    fn delta_filter_is_identity() {
        // exact for C4; at 45° the bilinear resampling spreads a delta kernel
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f64>::randn(&[4, 2, 5, 5], 1.0, &mut rng);
        let mut psi = Tensor::<f64>::zeros(&[2, 2, 4, 3, 3]);
        let idx = |co: usize, ci: usize| ((co * 2 + ci) * 4) * 9 + 4;
        let mut data = psi.data().to_vec();
        data[idx(0, 0)] = 1.0;
        data[idx(1, 1)] = 1.0;
        psi = Tensor::new(psi.shape(), data).unwrap();
        let out = gconv(&x, &psi, &Tensor::zeros(&[2])).unwrap();
        assert!(out.max_abs_diff(&x).unwrap() < 1e-15);
    }

    #[test]
    fn all_ones_interior_is_n_times_nine() {
        let x = Tensor::<f64>::full(&[4, 1, 5, 5], 1.0);
        let psi = Tensor::<f64>::full(&[1, 1, 4, 3, 3], 1.0);
        let out = gconv(&x, &psi, &Tensor::zeros(&[1])).unwrap();
        for t in 0..4 {
            for i in 1..4 {
                for j in 1..4 {
                    assert_eq!(out.at(&[t, 0, i, j]), 36.0);
                }
            }
        }
        // corners see 4 of 9 taps
        assert_eq!(out.at(&[0, 0, 0, 0]), 16.0);
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (n, ci, co, h) in [(4, 2, 3, 5), (8, 2, 2, 6), (6, 1, 2, 4), (8, 4, 1, 7)] {
            let [x, psi, b] = random_case(&mut rng, n, ci, co, h);
            let fast = gconv(&x, &psi, &b).unwrap();
            let slow = brute_force(&x, &psi, &b);
            assert!(fast.max_abs_diff(&slow).unwrap() < 1e-10, "n={n}");
        }
    }

    /// `(L_φ G)[θ] = R_φ G[θ − φ]` for a quarter turn `φ`.
    fn act(g: &Tensor<f64>, quarter: usize) -> Tensor<f64> {
        let n = g.shape()[0];
        let slab = g.len() / n;
        let shift = quarter * n / 4;
        let mut out = Vec::with_capacity(g.len());
        for t in 0..n {
            let src = (t + n - shift) % n;
            let sl = Tensor::new(&g.shape()[1..], g.data()[src * slab..(src + 1) * slab].to_vec()).unwrap();
            out.extend(crate::gridmath::rotate90(&sl, quarter as i64).unwrap().into_data());
        }
        Tensor::new(g.shape(), out).unwrap()
    }

    #[test]
    fn c4_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [4, 8] {
            let [x, psi, b] = random_case(&mut rng, n, 2, 2, 6);
            let y = gconv(&x, &psi, &b).unwrap();
            for q in 1..4 {
                let lhs = gconv(&act(&x, q), &psi, &b).unwrap();
                assert!(lhs.max_abs_diff(&act(&y, q)).unwrap() < 1e-10);
            }
        }
    }

    #[test]
    fn adjoint_passes_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for n in [4, 8] {
            let ci = rng.random_range(1..3);
            let [x, psi, b] = random_case(&mut rng, n, ci, 2, 4);
            let err = check_adjoint(&GConv::new(n, 3), &[x, psi, b], 9).unwrap();
            assert!(err < 1e-6, "n={n} err={err}");
        }
    }

    #[test]
    fn rejects_mismatched_filters() {
        let x = Tensor::<f64>::zeros(&[4, 2, 5, 5]);
        let psi = Tensor::<f64>::zeros(&[1, 3, 4, 3, 3]);
        assert!(matches!(gconv(&x, &psi, &Tensor::zeros(&[1])), Err(Error::Shape(_))));
        let big = Tensor::<f64>::zeros(&[1, 2, 4, 5, 5]);
        let tiny = Tensor::<f64>::zeros(&[4, 2, 2, 2]);
        assert!(matches!(gconv(&tiny, &big, &Tensor::zeros(&[1])), Err(Error::Shape(_))));
    }
}
