use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Per-pixel symmetry scores in `[0, 1]`, shape `[H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap<T: Scalar = f32> {
    scores: Tensor<T>,
}

impl<T: Scalar> Heatmap<T> {
    pub fn new(scores: Tensor<T>) -> Result<Self> {
        if scores.rank() != 2 {
            return Err(Error::shape(format!("heatmap must be [H, W], got {:?}", scores.shape())));
        }
        if let Some(i) = scores
            .data()
            .iter()
            .position(|&v| !(v >= T::zero() && v <= T::one()))
        {
            return Err(Error::numeric(
                "heatmap",
                format!("element {i} = {} is outside [0, 1]", scores.data()[i]),
            ));
        }
        Ok(Self { scores })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Self {
            scores: Tensor::zeros(&[h, w]),
        }
    }

    pub fn height(&self) -> usize {
        self.scores.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.scores.shape()[1]
    }

    pub fn scores(&self) -> &Tensor<T> {
        &self.scores
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.scores
    }

    pub fn get(&self, x: usize, y: usize) -> T {
        self.scores.data()[x * self.width() + y]
    }

    pub fn is_binary(&self) -> bool {
        self.scores.data().iter().all(|&v| v == T::zero() || v == T::one())
    }

    pub fn count_positive(&self) -> usize {
        self.scores.data().iter().filter(|&&v| v > T::zero()).count()
    }

    pub fn cast<U: Scalar>(&self) -> Heatmap<U> {
        Heatmap {
            scores: self.scores.cast(),
        }
    }
}
