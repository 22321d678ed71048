//! Tape-based reverse-mode differentiation.
//!
//! Every differentiable operation is an [`AdjointRule`]: a forward map plus
//! the transpose of its Jacobian applied to an output cotangent. A [`Tape`]
//! records the rules applied to [`Var`]s and replays them backwards.

pub mod check;
pub mod ops;

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub use check::{check_adjoint, check_function, GradCheckReport};

/// Forward evaluation plus vector-Jacobian product of one operation.
pub trait AdjointRule<T: Scalar> {
    fn name(&self) -> &'static str;

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>>;

    /// Input cotangents for an output cotangent. Entry `i` may be `None`
    /// when `needs[i]` is false; when present it has the shape of input `i`.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        cotangent: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>>;
}

struct Node<T: Scalar> {
    value: Rc<Tensor<T>>,
    inputs: Vec<usize>,
    rule: Option<Box<dyn AdjointRule<T>>>,
    requires_grad: bool,
}

pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    check_finite: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value recorded on a tape.
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Scalar> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T: Scalar> Copy for Var<'_, T> {}

impl<T: Scalar> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}", self.id)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            check_finite: false,
        }
    }

    /// A tape that fails with a numeric error naming the operation as soon
    /// as any recorded value is non-finite.
    pub fn checked() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            check_finite: true,
        }
    }

    fn push(&self, node: Node<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A value that gradients are not propagated into.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(Node {
            value: Rc::new(value),
            inputs: Vec::new(),
            rule: None,
            requires_grad: false,
        })
    }

    /// A differentiable leaf.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(Node {
            value: Rc::new(value),
            inputs: Vec::new(),
            rule: None,
            requires_grad: true,
        })
    }

    pub fn apply<R: AdjointRule<T> + 'static>(&self, rule: R, inputs: &[Var<'_, T>]) -> Result<Var<'_, T>> {
        let (value, requires_grad) = {
            let nodes = self.nodes.borrow();
            let values: Vec<&Tensor<T>> = inputs.iter().map(|v| nodes[v.id].value.as_ref()).collect();
            let requires_grad = inputs.iter().any(|v| nodes[v.id].requires_grad);
            (rule.forward(&values)?, requires_grad)
        };
        if self.check_finite {
            if let Some(i) = value.first_non_finite() {
                return Err(Error::numeric(
                    format!("{} (node {})", rule.name(), self.len()),
                    format!("element {i} of output shape {:?} is not finite", value.shape()),
                ));
            }
        }
        Ok(self.push(Node {
            value: Rc::new(value),
            inputs: inputs.iter().map(|v| v.id).collect(),
            rule: Some(Box::new(rule)),
            requires_grad,
        }))
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reverse sweep from a single-element output seeded with 1.
    pub fn backward(&self, root: Var<'_, T>) -> Result<Gradients<T>> {
        let len = self.nodes.borrow()[root.id].value.len();
        if len != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar root, got {len} elements"
            )));
        }
        let seed = {
            let nodes = self.nodes.borrow();
            Tensor::full(nodes[root.id].value.shape(), T::one())
        };
        self.backward_with(root, seed)
    }

    /// Reverse sweep from `root` with an explicit output cotangent.
    pub fn backward_with(&self, root: Var<'_, T>, cotangent: Tensor<T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        cotangent.expect_shape(nodes[root.id].value.shape())?;
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.id] = Some(cotangent);
        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            let Some(rule) = node.rule.as_ref() else {
                continue;
            };
            if !node.requires_grad {
                continue;
            }
            let Some(cot) = grads[id].take() else {
                continue;
            };
            let values: Vec<&Tensor<T>> = node.inputs.iter().map(|&i| nodes[i].value.as_ref()).collect();
            let needs: Vec<bool> = node.inputs.iter().map(|&i| nodes[i].requires_grad).collect();
            let input_grads = rule.backward(&values, &node.value, &cot, &needs);
            for ((&input, grad), &need) in node.inputs.iter().zip(input_grads).zip(&needs) {
                if !need {
                    continue;
                }
                let Some(grad) = grad else { continue };
                if self.check_finite {
                    if let Some(i) = grad.first_non_finite() {
                        return Err(Error::numeric(
                            format!("backward of {} (node {id})", rule.name()),
                            format!("cotangent element {i} is not finite"),
                        ));
                    }
                }
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&grad),
                    slot @ None => *slot = Some(grad),
                }
            }
            // keep gradients of leaves only
            if !node.inputs.is_empty() {
                grads[id] = None;
            }
        }
        Ok(Gradients { grads })
    }
}

/// Cotangents of the leaves reached by a reverse sweep.
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient of `var`, or zeros shaped like its value when unreached.
    pub fn get_or_zeros(&self, var: Var<'_, T>) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.value().shape()))
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    fn unary<R: AdjointRule<T> + 'static>(self, rule: R) -> Result<Self> {
        self.tape.apply(rule, &[self])
    }

    fn binary<R: AdjointRule<T> + 'static>(self, rule: R, other: Self) -> Result<Self> {
        self.tape.apply(rule, &[self, other])
    }

    pub fn add(self, other: Self) -> Result<Self> {
        self.binary(ops::Add, other)
    }

    pub fn mul(self, other: Self) -> Result<Self> {
        self.binary(ops::Mul, other)
    }

    pub fn scale(self, factor: f64) -> Result<Self> {
        self.unary(ops::Scale(factor))
    }

    pub fn matmul(self, other: Self) -> Result<Self> {
        self.binary(ops::MatMul { trans_b: false }, other)
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(self, other: Self) -> Result<Self> {
        self.binary(ops::MatMul { trans_b: true }, other)
    }

    pub fn add_row(self, bias: Self) -> Result<Self> {
        self.binary(ops::AddRow, bias)
    }

    pub fn mul_row(self, gain: Self) -> Result<Self> {
        self.binary(ops::MulRow, gain)
    }

    pub fn transpose(self) -> Result<Self> {
        self.unary(ops::Transpose2)
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        self.unary(ops::Reshape(shape.to_vec()))
    }

    pub fn slice_cols(self, start: usize, len: usize) -> Result<Self> {
        self.unary(ops::SliceCols { start, len })
    }

    pub fn select_row(self, row: usize) -> Result<Self> {
        self.unary(ops::SelectRow(row))
    }

    pub fn softmax_rows(self) -> Result<Self> {
        self.unary(ops::SoftmaxRows)
    }

    pub fn layer_norm_rows(self) -> Result<Self> {
        self.unary(ops::LayerNormRows { eps: 1e-5 })
    }

    pub fn gelu(self) -> Result<Self> {
        self.unary(ops::Gelu)
    }

    pub fn relu(self) -> Result<Self> {
        self.unary(ops::Relu)
    }

    pub fn sigmoid(self) -> Result<Self> {
        self.unary(ops::Sigmoid)
    }

    pub fn rotate90(self, k: i64) -> Result<Self> {
        self.unary(ops::Rotate90(k))
    }

    pub fn resize(self, h: usize, w: usize) -> Result<Self> {
        self.unary(ops::Resize { h, w })
    }

    pub fn mean_axis0(self) -> Result<Self> {
        self.unary(ops::MeanAxis0)
    }

    pub fn sum_all(self) -> Result<Self> {
        self.unary(ops::SumAll)
    }

    pub fn mean_all(self) -> Result<Self> {
        let n = self.value().len();
        self.sum_all()?.scale(1.0 / n as f64)
    }
}

/// Concatenates 2-D vars along the column axis.
pub fn concat_cols<'t, T: Scalar>(parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    let first = parts.first().ok_or_else(|| Error::shape("concat of nothing"))?;
    first.tape.apply(ops::ConcatCols, parts)
}

/// Sum of several equally shaped vars.
pub fn sum_vars<'t, T: Scalar>(parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    let mut iter = parts.iter();
    let mut acc = *iter.next().ok_or_else(|| Error::shape("sum of nothing"))?;
    for &p in iter {
        acc = acc.add(p)?;
    }
    Ok(acc)
}
