//! Dense tensors with reverse-mode automatic differentiation.
//!
//! The `Graph` records every operation of a forward pass in topological
//! order; `Graph::backward` replays the records in exact reverse order and
//! accumulates gradients into each node. The main path runs in `f32`; all
//! operations are generic over [`Scalar`] so the same graph code can run in
//! `f64` shadow mode for finite-difference gradient checks.

mod check;
mod graph;
#[cfg(test)]
mod op_tests;

pub use check::{finite_diff_check, GradCheckReport, SampleSpec};
pub use graph::{Graph, NodeId};

use std::io::{self, Write};

use crate::error::{Error, Result};

/// Element type of tensors: `f32` on the main path, `f64` in shadow mode.
pub trait Scalar:
    num_traits::Float
    + num_traits::NumAssign
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn from_f32(v: f32) -> Self;
    fn to_f32(self) -> f32;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_f32(v: f32) -> Self {
        v
    }
    #[inline]
    fn to_f32(self) -> f32 {
        self
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn from_f32(v: f32) -> Self {
        v as f64
    }
    #[inline]
    fn to_f32(self) -> f32 {
        self as f32
    }
}

/// Dense row-major tensor with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::BadShape {
                op: "Tensor::new",
                shape: shape.to_vec(),
                detail: format!("shape wants {numel} elements, data has {}", data.len()),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); numel],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, yes: bool) {
        self.requires_grad = yes;
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub(crate) fn grad_slot(&mut self) -> &mut Option<Vec<T>> {
        &mut self.grad
    }

    /// Number of rows when the tensor is viewed as rows of its last dimension.
    pub fn rows(&self) -> usize {
        match self.shape.last() {
            Some(&last) if last > 0 => self.data.len() / last,
            _ => 0,
        }
    }

    /// Size of the last dimension.
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(0)
    }

    /// Copy of the values with no gradient state.
    pub fn detached(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.clone(),
            grad: None,
            requires_grad: false,
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
            grad: None,
            requires_grad: self.requires_grad,
        }
    }

    /// Debug dump: one line with the shape, then row-major decimal floats
    /// (one line per row for rank-2 tensors).
    pub fn write_dump<W: Write>(&self, w: &mut W) -> io::Result<()> {
        let dims: Vec<String> = self.shape.iter().map(|d| d.to_string()).collect();
        writeln!(w, "{}", dims.join(" "))?;
        if self.shape.len() == 2 {
            let cols = self.shape[1];
            for row in self.data.chunks(cols.max(1)) {
                let vals: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
                writeln!(w, "{}", vals.join(" "))?;
            }
        } else {
            let vals: Vec<String> = self.data.iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{}", vals.join(" "))?;
        }
        Ok(())
    }

    pub fn dump_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_dump(&mut buf).expect("write to Vec cannot fail");
        String::from_utf8(buf).expect("dump is ascii")
    }
}
