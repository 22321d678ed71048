//! Maps between planar feature maps and feature maps on `ℤ² ⋊ C_n`.

use crate::autodiff::{AdjointRule, Var};
use crate::error::{Error, Result};
use crate::gridmath::{self, RotationTaps};
use crate::tensor::{Scalar, Tensor};

use super::gconv::slot_angle;

/// Rotation of a `[C, h, w]` stack by one slot angle, with its transpose.
#[derive(Clone, Debug)]
struct SlotRotation {
    quarter: Option<i64>,
    taps: Option<RotationTaps>,
}

impl SlotRotation {
    fn new(n: usize, t: usize, side: usize) -> Self {
        let angle = slot_angle(n, t);
        match angle.exact_quarter_turns() {
            Some(q) => Self {
                quarter: Some(q as i64),
                taps: None,
            },
            None => Self {
                quarter: None,
                taps: Some(RotationTaps::new(side, side, angle)),
            },
        }
    }

    fn apply<T: Scalar>(&self, x: &Tensor<T>) -> Tensor<T> {
        match (&self.quarter, &self.taps) {
            (Some(q), _) => gridmath::rotate90(x, *q).expect("square planes"),
            (None, Some(taps)) => gridmath::apply_rotation_taps(x, taps, T::zero()),
            _ => unreachable!(),
        }
    }

    fn adjoint<T: Scalar>(&self, x: &Tensor<T>) -> Tensor<T> {
        match (&self.quarter, &self.taps) {
            (Some(q), _) => gridmath::rotate90(x, -*q).expect("square planes"),
            (None, Some(taps)) => gridmath::apply_rotation_taps_adjoint(x, taps),
            _ => unreachable!(),
        }
    }
}

fn square_stack<T: Scalar>(name: &str, x: &Tensor<T>, rank: usize) -> Result<usize> {
    let s = x.shape();
    if s.len() != rank || s[rank - 1] != s[rank - 2] {
        return Err(Error::shape(format!("{name}: expected rank-{rank} square planes, got {s:?}")));
    }
    Ok(s[rank - 1])
}

fn slab<T: Scalar>(x: &Tensor<T>, i: usize) -> Tensor<T> {
    let n = x.shape()[0];
    let len = x.len() / n;
    Tensor::new(&x.shape()[1..], x.data()[i * len..(i + 1) * len].to_vec()).expect("slab")
}

/// `[C, h, w] → [n, C, h, w]` with slot `t` holding `R_{θ_t} F`.
pub struct Lift {
    pub n: usize,
}

impl<T: Scalar> AdjointRule<T> for Lift {
    fn name(&self) -> &'static str {
        "lift"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let side = square_stack("lift", inputs[0], 3)?;
        let mut out = Vec::with_capacity(self.n * inputs[0].len());
        for t in 0..self.n {
            out.extend(SlotRotation::new(self.n, t, side).apply(inputs[0]).into_data());
        }
        let mut shape = vec![self.n];
        shape.extend_from_slice(inputs[0].shape());
        Tensor::new(&shape, out)
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, cot: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        if !needs[0] {
            return vec![None];
        }
        let side = inputs[0].shape()[2];
        let mut acc = Tensor::zeros(inputs[0].shape());
        for t in 0..self.n {
            acc.add_assign(&SlotRotation::new(self.n, t, side).adjoint(&slab(cot, t)));
        }
        vec![Some(acc)]
    }
}

/// Re-expresses a lifted map in the frame where the group acts by rotating
/// every slot and shifting the rotation axis: `H[θ] = R_θ P[−θ]`.
///
/// Applied after [`Lift`] this gives `H[θ] = R_θ R_{−θ} F`, which is `F`
/// itself at multiples of 90°.
pub struct AlignFrame {
    pub n: usize,
}

impl<T: Scalar> AdjointRule<T> for AlignFrame {
    fn name(&self) -> &'static str {
        "align_frame"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let x = inputs[0];
        let side = square_stack("align_frame", x, 4)?;
        if x.shape()[0] != self.n {
            return Err(Error::shape(format!("align_frame: {} slots for n={}", x.shape()[0], self.n)));
        }
        let mut out = Vec::with_capacity(x.len());
        for t in 0..self.n {
            let src = (self.n - t) % self.n;
            out.extend(SlotRotation::new(self.n, t, side).apply(&slab(x, src)).into_data());
        }
        Tensor::new(x.shape(), out)
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, cot: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        if !needs[0] {
            return vec![None];
        }
        let x = inputs[0];
        let side = x.shape()[3];
        let len = x.len() / self.n;
        let mut out = vec![T::zero(); x.len()];
        for t in 0..self.n {
            let src = (self.n - t) % self.n;
            let g = SlotRotation::new(self.n, t, side).adjoint(&slab(cot, t));
            out[src * len..(src + 1) * len].copy_from_slice(g.data());
        }
        vec![Some(Tensor::new(x.shape(), out).expect("same shape"))]
    }
}

pub fn lift_var<'t, T: Scalar>(f: Var<'t, T>, n: usize) -> Result<Var<'t, T>> {
    f.tape().apply(Lift { n }, &[f])
}

pub fn align_var<'t, T: Scalar>(g: Var<'t, T>, n: usize) -> Result<Var<'t, T>> {
    g.tape().apply(AlignFrame { n }, &[g])
}

/// Rotated copies of `F [C, h, w]`, ascending angle: `[n, C, h, w]`.
pub fn lift<T: Scalar>(f: &Tensor<T>, n: usize) -> Result<Tensor<T>> {
    Lift { n }.forward(&[f])
}

/// Group action of `k` quarter turns on `[n, C, h, w]`: every slot rotated
/// by `k·90°` and the rotation axis shifted by `k·n/4`.
pub fn act_quarter_turns<T: Scalar>(g: &Tensor<T>, k: i64) -> Result<Tensor<T>> {
    let n = g.shape().first().copied().unwrap_or(0);
    if n == 0 || n % 4 != 0 || g.rank() != 4 {
        return Err(Error::shape(format!(
            "quarter-turn action needs [4m, C, h, w], got {:?}",
            g.shape()
        )));
    }
    let k = k.rem_euclid(4) as usize;
    let shift = k * n / 4;
    let mut out = Vec::with_capacity(g.len());
    for t in 0..n {
        out.extend(gridmath::rotate90(&slab(g, (t + n - shift) % n), k as i64)?.into_data());
    }
    Tensor::new(g.shape(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check_adjoint;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lift_slots_are_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = Tensor::<f32>::randn(&[3, 5, 5], 1.0, &mut rng);
        let g = lift(&f, 4).unwrap();
        assert_eq!(g.shape(), &[4, 3, 5, 5]);
        assert_eq!(slab(&g, 0), f);
        for k in 1..4 {
            assert_eq!(slab(&g, k), gridmath::rotate90(&f, k as i64).unwrap());
        }
        let g8 = lift(&f, 8).unwrap();
        assert_eq!(slab(&g8, 2), gridmath::rotate90(&f, 1).unwrap());
        let b = gridmath::rotate_bilinear(&f, slot_angle(8, 1), 0.0).unwrap();
        assert_eq!(slab(&g8, 1), b);
    }

    #[test]
    fn align_after_lift_replicates_for_c4() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = Tensor::<f64>::randn(&[2, 6, 6], 1.0, &mut rng);
        let h = AlignFrame { n: 4 }.forward(&[&lift(&f, 4).unwrap()]).unwrap();
        for t in 0..4 {
            assert_eq!(slab(&h, t), f);
        }
    }

    #[test]
    fn lift_then_align_is_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [4, 8, 12] {
            let f = Tensor::<f64>::randn(&[2, 7, 7], 1.0, &mut rng);
            let la = |x: &Tensor<f64>| AlignFrame { n }.forward(&[&lift(x, n).unwrap()]).unwrap();
            let base = la(&f);
            for q in 1..4 {
                let lhs = la(&gridmath::rotate90(&f, q).unwrap());
                let rhs = act_quarter_turns(&base, q).unwrap();
                assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12, "n={n} q={q}");
            }
        }
    }

    #[test]
    fn adjoints_pass_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = Tensor::<f64>::randn(&[2, 5, 5], 1.0, &mut rng);
        assert!(check_adjoint(&Lift { n: 8 }, &[f], 1).unwrap() < 1e-8);
        let g = Tensor::<f64>::randn(&[8, 2, 5, 5], 1.0, &mut rng);
        assert!(check_adjoint(&AlignFrame { n: 8 }, &[g], 2).unwrap() < 1e-8);
    }
}
