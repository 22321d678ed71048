//! Elementary differentiable operations.

use crate::error::{Error, Result};
use crate::gridmath::{self, RotationAngle, RotationTaps};
use crate::tensor::{Scalar, Tensor};

use super::AdjointRule;

fn same_shape<T: Scalar>(name: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{name}: operand shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn matrix_dims<T: Scalar>(name: &str, t: &Tensor<T>) -> Result<(usize, usize)> {
    match t.shape() {
        [m, n] => Ok((*m, *n)),
        s => Err(Error::shape(format!("{name}: expected a matrix, got shape {s:?}"))),
    }
}

fn last_axis<T: Scalar>(name: &str, t: &Tensor<T>) -> Result<usize> {
    t.shape()
        .last()
        .copied()
        .ok_or_else(|| Error::shape(format!("{name}: empty shape")))
}

fn needed<T: Scalar>(need: bool, f: impl FnOnce() -> Tensor<T>) -> Option<Tensor<T>> {
    need.then(f)
}

pub struct Add;

impl<T: Scalar> AdjointRule<T> for Add {
    fn name(&self) -> &'static str {
        "add"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        same_shape("add", inputs[0], inputs[1])?;
        inputs[0].zip_map(inputs[1], |a, b| a + b)
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, cot: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![needed(needs[0], || cot.clone()), needed(needs[1], || cot.clone())]
    }
}

pub struct Sub;

impl<T: Scalar> AdjointRule<T> for Sub {
    fn name(&self) -> &'static str {
        "sub"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        same_shape("sub", inputs[0], inputs[1])?;
        inputs[0].zip_map(inputs[1], |a, b| a - b)
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, cot: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![
            needed(needs[0], || cot.clone()),
            needed(needs[1], || cot.map(|g| -g)),
        ]
    }
}

pub struct Mul;

impl<T: Scalar> AdjointRule<T> for Mul {
    fn name(&self) -> &'static str {
        "mul"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        same_shape("mul", inputs[0], inputs[1])?;
        inputs[0].zip_map(inputs[1], |a, b| a * b)
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, cot: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (a, b) = (inputs[0], inputs[1]);
        vec![
            needed(needs[0], || cot.zip_map(b, |g, y| g * y).expect("shapes checked")),
            needed(needs[1], || cot.zip_map(a, |g, x| g * x).expect("shapes checked")),
        ]
    }
}

pub struct Scale(pub f64);

impl<T: Scalar> AdjointRule<T> for Scale {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        Ok(inputs[0].scale(T::of(self.0)))
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, cot: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![needed(needs[0], || cot.scale(T::of(self.0)))]
    }
}

/// Matrix product `a · b`, or `a · bᵀ` when `trans_b`.
pub struct MatMul {
    pub trans_b: bool,
}

impl<T: Scalar> AdjointRule<T> for MatMul {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (m, k) = matrix_dims("matmul", inputs[0])?;
        let (r, c) = matrix_dims("matmul", inputs[1])?;
        let (k2, n) = if self.trans_b { (c, r) } else { (r, c) };
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul: inner dimensions {k} and {k2} differ"
            )));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, inputs[0].data(), false, inputs[1].data(), self.trans_b, &mut out, false);
        Ok(Tensor::from_parts(vec![m, n], out))
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, cot: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (a, b) = (inputs[0], inputs[1]);
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let n = cot.shape()[1];
        let da = needed(needs[0], || {
            let mut out = vec![T::zero(); m * k];
            // b stored [k, n] needs a transpose; stored [n, k] is already bᵀ
            T::gemm(m, n, k, cot.data(), false, b.data(), !self.trans_b, &mut out, false);
            Tensor::from_parts(vec![m, k], out)
        });
        let db = needed(needs[1], || {
            if self.trans_b {
                let mut out = vec![T::zero(); n * k];
                T::gemm(n, m, k, cot.data(), true, a.data(), false, &mut out, false);
                Tensor::from_parts(vec![n, k], out)
            } else {
                let mut out = vec![T::zero(); k * n];
                T::gemm(k, m, n, a.data(), true, cot.data(), false, &mut out, false);
                Tensor::from_parts(vec![k, n], out)
            }
        });
        vec![da, db]
    }
}

/// Adds a vector to every row (last axis).
pub struct AddRow;

impl<T: Scalar> AdjointRule<T> for AddRow {
    fn name(&self) -> &'static str {
        "add_row"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let n = last_axis("add_row", inputs[0])?;
        if inputs[1].len() != n {
            return Err(Error::shape(format!(
                "add_row: bias of length {} for rows of length {n}",
                inputs[1].len()
            )));
        }
        let b = inputs[1].data();
        let mut out = inputs[0].clone();
        for row in out.data_mut().chunks_mut(n) {
            for (v, &bv) in row.iter_mut().zip(b) {
                *v = *v + bv;
            }
        }
        Ok(out)
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, cot: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let n = inputs[1].len();
        let db = needed(needs[1], || {
            let mut acc = vec![T::zero(); n];
            for row in cot.data().chunks(n) {
                for (a, &g) in acc.iter_mut().zip(row) {
                    *a = *a + g;
                }
            }
            Tensor::from_parts(inputs[1].shape().to_vec(), acc)
        });
        vec![needed(needs[0], || cot.clone()), db]
    }
}

/// Multiplies every row (last axis) elementwise by a vector.
pub struct MulRow;

impl<T: Scalar> AdjointRule<T> for MulRow {
    fn name(&self) -> &'static str {
        "mul_row"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let n = last_axis("mul_row", inputs[0])?;
        if inputs[1].len() != n {
            return Err(Error::shape(format!(
                "mul_row: gain of length {} for rows of length {n}",
                inputs[1].len()
            )));
        }
        let g = inputs[1].data();
        let mut out = inputs[0].clone();
        for row in out.data_mut().chunks_mut(n) {
            for (v, &gv) in row.iter_mut().zip(g) {
                *v = *v * gv;
            }
        }
        Ok(out)
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, cot: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (x, gain) = (inputs[0], inputs[1]);
        let n = gain.len();
        let dx = needed(needs[0], || {
            let mut out = cot.clone();
            for row in out.data_mut().chunks_mut(n) {
                for (v, &gv) in row.iter_mut().zip(gain.data()) {
                    *v = *v * gv;
                }
            }
            out
        });
        let dg = needed(needs[1], || {
            let mut acc = vec![T::zero(); n];
            for (crow, xrow) in cot.data().chunks(n).zip(x.data().chunks(n)) {
                for ((a, &g), &xv) in acc.iter_mut().zip(crow).zip(xrow) {
                    *a = *a + g * xv;
                }
            }
            Tensor::from_parts(gain.shape().to_vec(), acc)
        });
        vec![dx, dg]
    }
}

fn transpose<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let (m, n) = (t.shape()[0], t.shape()[1]);
    let src = t.data();
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = src[i * n + j];
        }
    }
    Tensor::from_parts(vec![n, m], out)
}

pub struct Transpose2;

impl<T: Scalar> AdjointRule<T> for Transpose2 {
    fn name(&self) -> &'static str {
        "transpose"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        matrix_dims("transpose", inputs[0])?;
        Ok(transpose(inputs[0]))
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, cot: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![needed(needs[0], || transpose(cot))]
    }
}

pub struct Reshape(pub Vec<usize>);

impl<T: Scalar> AdjointRule<T> for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        inputs[0].reshape(&self.0)
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, cot: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![needed(needs[0], || {
            cot.reshape(inputs[0].shape()).expect("element counts agree")
        })]
    }
}

pub struct SliceCols {
    pub start: usize,
    pub len: usize,
}

impl<T: Scalar> AdjointRule<T> for SliceCols {
    fn name(&self) -> &'static str {
        "slice_cols"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (m, n) = matrix_dims("slice_cols", inputs[0])?;
        if self.len == 0 || self.start + self.len > n {
            return Err(Error::shape(format!(
                "slice_cols: columns {}..{} of {n}",
                self.start,
                self.start + self.len
            )));
        }
        let mut out = Vec::with_capacity(m * self.len);
        for row in inputs[0].data().chunks(n) {
            out.extend_from_slice(&row[self.start..self.start + self.len]);
        }
        Ok(Tensor::from_parts(vec![m, self.len], out))
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, cot: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![needed(needs[0], || {
            let (m, n) = (inputs[0].shape()[0], inputs[0].shape()[1]);
            let mut out = vec![T::zero(); m * n];
            for (i, row) in cot.data().chunks(self.len).enumerate() {
                out[i * n + self.start..i * n + self.start + self.len].copy_from_slice(row);
            }
            Tensor::from_parts(vec![m, n], out)
        })]
    }
}

pub struct ConcatCols;

impl<T: Scalar> AdjointRule<T> for ConcatCols {
    fn name(&self) -> &'static str {
        "concat_cols"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (m, _) = matrix_dims("concat_cols", inputs[0])?;
        let mut widths = Vec::with_capacity(inputs.len());
        for t in inputs {
            let (mi, ni) = matrix_dims("concat_cols", t)?;
            if mi != m {
                return Err(Error::shape("concat_cols: row counts differ"));
            }
            widths.push(ni);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (t, &w) in inputs.iter().zip(&widths) {
                out.extend_from_slice(&t.data()[i * w..(i + 1) * w]);
            }
        }
        Ok(Tensor::from_parts(vec![m, total], out))
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, cot: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let total = cot.shape()[1];
        let mut offset = 0;
        inputs
            .iter()
            .zip(needs)
            .map(|(t, &need)| {
                let (m, w) = (t.shape()[0], t.shape()[1]);
                let start = offset;
                offset += w;
                needed(need, || {
                    let mut out = Vec::with_capacity(m * w);
                    for i in 0..m {
                        out.extend_from_slice(&cot.data()[i * total + start..i * total + start + w]);
                    }
                    Tensor::from_parts(vec![m, w], out)
                })
            })
            .collect()
    }
}

/// Row `r` of a matrix as a `[1, n]` matrix.
pub struct SelectRow(pub usize);

impl<T: Scalar> AdjointRule<T> for SelectRow {
    fn name(&self) -> &'static str {
        "select_row"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (m, n) = matrix_dims("select_row", inputs[0])?;
        if self.0 >= m {
            return Err(Error::shape(format!("select_row: row {} of {m}", self.0)));
        }
        Ok(Tensor::from_parts(
            vec![1, n],
            inputs[0].data()[self.0 * n..(self.0 + 1) * n].to_vec(),
        ))
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, cot: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![needed(needs[0], || {
            let n = inputs[0].shape()[1];
            let mut out = Tensor::zeros(inputs[0].shape());
            out.data_mut()[self.0 * n..(self.0 + 1) * n].copy_from_slice(cot.data());
            out
        })]
    }
}

/// Softmax over the last axis.
pub struct SoftmaxRows;

impl<T: Scalar> AdjointRule<T> for SoftmaxRows {
    fn name(&self) -> &'static str {
        "softmax_rows"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let n = last_axis("softmax_rows", inputs[0])?;
        let mut out = inputs[0].clone();
        for row in out.data_mut().chunks_mut(n) {
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total = total + *v;
            }
            for v in row.iter_mut() {
                *v = *v / total;
            }
        }
        Ok(out)
    }

    fn backward(&self, _: &[&Tensor<T>], out: &Tensor<T>, cot: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![needed(needs[0], || {
            let n = *out.shape().last().expect("non-empty");
            let mut dx = cot.clone();
            for (drow, yrow) in dx.data_mut().chunks_mut(n).zip(out.data().chunks(n)) {
                let dot: T = drow.iter().zip(yrow).map(|(&g, &y)| g * y).sum();
                for (d, &y) in drow.iter_mut().zip(yrow) {
                    *d = y * (*d - dot);
                }
            }
            dx
        })]
    }
}

/// Normalizes every row (last axis) to zero mean and unit variance; the
/// affine part of layer normalization is applied separately.
pub struct LayerNormRows {
    pub eps: f64,
}

impl<T: Scalar> AdjointRule<T> for LayerNormRows {
    fn name(&self) -> &'static str {
        "layer_norm_rows"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let n = last_axis("layer_norm_rows", inputs[0])?;
        let nf = T::of(n as f64);
        let eps = T::of(self.eps);
        let mut out = inputs[0].clone();
        for row in out.data_mut().chunks_mut(n) {
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let inv = T::one() / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
        }
        Ok(out)
    }

    fn backward(&self, inputs: &[&Tensor<T>], out: &Tensor<T>, cot: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![needed(needs[0], || {
            let n = *out.shape().last().expect("non-empty");
            let nf = T::of(n as f64);
            let eps = T::of(self.eps);
            let mut dx = cot.clone();
            for ((drow, yrow), xrow) in dx
                .data_mut()
                .chunks_mut(n)
                .zip(out.data().chunks(n))
                .zip(inputs[0].data().chunks(n))
            {
                let mean = xrow.iter().copied().sum::<T>() / nf;
                let var = xrow.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
                let inv = T::one() / (var + eps).sqrt();
                let g_mean = drow.iter().copied().sum::<T>() / nf;
                let gy_mean = drow.iter().zip(yrow).map(|(&g, &y)| g * y).sum::<T>() / nf;
                for (d, &y) in drow.iter_mut().zip(yrow) {
                    *d = inv * (*d - g_mean - y * gy_mean);
                }
            }
            dx
        })]
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// GELU, tanh approximation.
pub struct Gelu;

impl<T: Scalar> AdjointRule<T> for Gelu {
    fn name(&self) -> &'static str {
        "gelu"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let c = T::of(GELU_C);
        let a = T::of(0.044715);
        let half = T::of(0.5);
        Ok(inputs[0].map(|x| half * x * (T::one() + (c * (x + a * x * x * x)).tanh())))
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, cot: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![needed(needs[0], || {
            let c = T::of(GELU_C);
            let a = T::of(0.044715);
            let half = T::of(0.5);
            let three = T::of(3.0);
            inputs[0]
                .zip_map(cot, |x, g| {
                    let t = (c * (x + a * x * x * x)).tanh();
                    let dt = (T::one() - t * t) * c * (T::one() + three * a * x * x);
                    g * (half * (T::one() + t) + half * x * dt)
                })
                .expect("same shape")
        })]
    }
}

pub struct Relu;

impl<T: Scalar> AdjointRule<T> for Relu {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        Ok(inputs[0].map(|x| if x > T::zero() { x } else { T::zero() }))
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, cot: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![needed(needs[0], || {
            inputs[0]
                .zip_map(cot, |x, g| if x > T::zero() { g } else { T::zero() })
                .expect("same shape")
        })]
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub struct Sigmoid;

impl<T: Scalar> AdjointRule<T> for Sigmoid {
    fn name(&self) -> &'static str {
        "sigmoid"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        Ok(inputs[0].map(sigmoid))
    }

    fn backward(&self, _: &[&Tensor<T>], out: &Tensor<T>, cot: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![needed(needs[0], || {
            out.zip_map(cot, |y, g| g * y * (T::one() - y)).expect("same shape")
        })]
    }
}

/// `Σ_k w_k · x_k` for inputs `[w, x_1, …, x_K]` with `w` of length `K`.
pub struct ConvexCombine;

impl<T: Scalar> AdjointRule<T> for ConvexCombine {
    fn name(&self) -> &'static str {
        "convex_combine"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (w, xs) = inputs.split_first().ok_or_else(|| Error::shape("convex_combine: no inputs"))?;
        if xs.is_empty() {
            return Err(Error::shape("convex_combine: no branches to combine"));
        }
        if w.len() != xs.len() {
            return Err(Error::shape(format!(
                "convex_combine: {} weights for {} branches",
                w.len(),
                xs.len()
            )));
        }
        let mut out = Tensor::zeros(xs[0].shape());
        for (&wk, x) in w.data().iter().zip(xs) {
            same_shape("convex_combine", xs[0], x)?;
            for (o, &v) in out.data_mut().iter_mut().zip(x.data()) {
                *o = *o + wk * v;
            }
        }
        Ok(out)
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, cot: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let w = inputs[0];
        let mut grads = Vec::with_capacity(inputs.len());
        grads.push(needed(needs[0], || {
            Tensor::from_parts(
                w.shape().to_vec(),
                inputs[1..].iter().map(|x| x.dot(cot)).collect(),
            )
        }));
        for (k, &need) in needs[1..].iter().enumerate() {
            grads.push(needed(need, || cot.scale(w.data()[k])));
        }
        grads
    }
}

/// Exact quarter-turn rotation of every plane.
pub struct Rotate90(pub i64);

impl<T: Scalar> AdjointRule<T> for Rotate90 {
    fn name(&self) -> &'static str {
        "rotate90"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        gridmath::rotate90(inputs[0], self.0)
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, cot: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![needed(needs[0], || {
            gridmath::rotate90(cot, -self.0).expect("square planes")
        })]
    }
}

/// Bilinear rotation of every plane.
pub struct RotateBilinear {
    pub angle: RotationAngle,
    pub pad: f64,
}

impl<T: Scalar> AdjointRule<T> for RotateBilinear {
    fn name(&self) -> &'static str {
        "rotate_bilinear"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        gridmath::rotate_bilinear(inputs[0], self.angle, T::of(self.pad))
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, cot: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![needed(needs[0], || {
            let (_, h, w) = inputs[0].planes().expect("checked in forward");
            gridmath::apply_rotation_taps_adjoint(cot, &RotationTaps::new(h, w, self.angle))
        })]
    }
}

/// Corner-aligned bilinear resize of every plane.
pub struct Resize {
    pub h: usize,
    pub w: usize,
}

impl<T: Scalar> AdjointRule<T> for Resize {
    fn name(&self) -> &'static str {
        "resize"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        gridmath::resize_bilinear(inputs[0], self.h, self.w)
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, cot: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![needed(needs[0], || {
            let (_, h, w) = inputs[0].planes().expect("checked in forward");
            gridmath::resize_bilinear_adjoint(cot, h, w)
        })]
    }
}

/// Mean over the leading axis.
pub struct MeanAxis0;

impl<T: Scalar> AdjointRule<T> for MeanAxis0 {
    fn name(&self) -> &'static str {
        "mean_axis0"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let x = inputs[0];
        if x.rank() < 2 {
            return Err(Error::shape("mean_axis0 needs at least two axes"));
        }
        let n = x.shape()[0];
        let inner = x.len() / n;
        let mut out = vec![T::zero(); inner];
        for chunk in x.data().chunks(inner) {
            for (o, &v) in out.iter_mut().zip(chunk) {
                *o = *o + v;
            }
        }
        let inv = T::one() / T::of(n as f64);
        out.iter_mut().for_each(|v| *v = *v * inv);
        Ok(Tensor::from_parts(x.shape()[1..].to_vec(), out))
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, cot: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![needed(needs[0], || {
            let n = inputs[0].shape()[0];
            let inv = T::one() / T::of(n as f64);
            let mut out = Vec::with_capacity(inputs[0].len());
            for _ in 0..n {
                out.extend(cot.data().iter().map(|&g| g * inv));
            }
            Tensor::from_parts(inputs[0].shape().to_vec(), out)
        })]
    }
}

pub struct SumAll;

impl<T: Scalar> AdjointRule<T> for SumAll {
    fn name(&self) -> &'static str {
        "sum_all"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        Ok(Tensor::scalar(inputs[0].sum()))
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, cot: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![needed(needs[0], || Tensor::full(inputs[0].shape(), cot.item()))]
    }
}
