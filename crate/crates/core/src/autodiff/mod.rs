//! Dense reverse-mode differentiation over small vectors and matrices.
//!
//! Forward computations are recorded on a [`Tape`]; [`Tape::backward`]
//! replays the recorded operations in reverse to accumulate exact partial
//! derivatives. [`grad_check`] compares those partials to central
//! differences, and [`Adam`] applies adaptive-moment updates to parameter
//! tensors.

mod gradcheck;
mod optim;
mod tape;

pub use gradcheck::grad_check;
pub use optim::{Adam, AdamConfig};
pub use tape::{Axis, Gradients, Tape, Var};
pub(crate) use tape::weighted_bce_value;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn len(self) -> usize {
        match self {
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }
}

/// A dense array of scalars, row-major when it is a matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Shape,
    values: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Shape, values: Vec<S>) -> Result<Self> {
        if shape.len() != values.len() {
            return Err(Error::Shape {
                op: "tensor",
                detail: format!("shape {shape:?} needs {} values, got {}", shape.len(), values.len()),
            });
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self { shape, values: vec![S::zero(); shape.len()] }
    }

    pub fn vector(values: Vec<S>) -> Self {
        Self { shape: Shape::Vector(values.len()), values }
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<S>) -> Result<Self> {
        Self::new(Shape::Matrix(rows, cols), values)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Element `(row, col)` of a matrix.
    pub fn at(&self, row: usize, col: usize) -> S {
        match self.shape {
            Shape::Matrix(_, cols) => self.values[row * cols + col],
            Shape::Vector(_) => {
                debug_assert_eq!(col, 0);
                self.values[row]
            }
        }
    }

    /// Column `col` of a matrix, copied out.
    pub fn column(&self, col: usize) -> Vec<S> {
        match self.shape {
            Shape::Matrix(rows, cols) => (0..rows).map(|r| self.values[r * cols + col]).collect(),
            Shape::Vector(_) => vec![self.values[col]],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
