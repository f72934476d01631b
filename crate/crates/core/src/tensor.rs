//! Dense row-major `f64` tensors.
//!
//! The data buffer is reference counted so that recording a tensor on a
//! [`Tape`](crate::tape::Tape) never copies it. Mutation goes through
//! [`Tensor::data_mut`], which clones the buffer only if a tape still holds it.

use std::sync::Arc;

use crate::error::{shape_err, Error, Result};

/// Initial contents for [`Tensor::create`].
#[derive(Clone, Debug)]
pub enum Fill {
    Value(f64),
    Values(Vec<f64>),
}

impl From<f64> for Fill {
    fn from(v: f64) -> Self {
        Fill::Value(v)
    }
}

impl From<Vec<f64>> for Fill {
    fn from(v: Vec<f64>) -> Self {
        Fill::Values(v)
    }
}

#[derive(Clone, Debug)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return shape_err("tensor shape must have at least one axis");
    }
    if shape.iter().any(|&d| d == 0) {
        return shape_err(format!("all extents must be >= 1, got {shape:?}"));
    }
    Ok(())
}

impl Tensor {
    pub fn create(shape: &[usize], fill: impl Into<Fill>) -> Result<Self> {
        check_shape(shape)?;
        let n = numel(shape);
        let data = match fill.into() {
            Fill::Value(v) => vec![v; n],
            Fill::Values(values) => {
                if values.len() != n {
                    return shape_err(format!(
                        "{} values supplied for shape {shape:?} ({n} elements)",
                        values.len()
                    ));
                }
                values
            }
        };
        Ok(Self::from_parts(shape.to_vec(), Arc::new(data)))
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::create(shape, 0.0)
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::create(shape, data)
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_parts(vec![1], Arc::new(vec![v]))
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Arc<Vec<f64>>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        }
    }

    /// Marks the tensor as a trainable leaf.
    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn shared_data(&self) -> &Arc<Vec<f64>> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Adds `g` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[f64]) -> Result<()> {
        if g.len() != self.len() {
            return shape_err(format!(
                "gradient of length {} for tensor of length {}",
                g.len(),
                self.len()
            ));
        }
        match &mut self.grad {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => self.grad = Some(g.to_vec()),
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        check_shape(shape)?;
        if numel(shape) != self.len() {
            return shape_err(format!("cannot reshape {:?} to {shape:?}", self.shape));
        }
        Ok(Self::from_parts(shape.to_vec(), Arc::clone(&self.data)))
    }

    pub fn item(&self) -> Result<f64> {
        if self.shape != [1] {
            return Err(Error::NotScalar(self.shape.clone()));
        }
        Ok(self.data[0])
    }
}

/// Elementwise binary operators.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

impl BinaryOp {
    pub(crate) fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
        }
    }
}

/// Pointwise `a op b` without recording; see [`Tape::elementwise`](crate::tape::Tape::elementwise)
/// for the differentiable version.
pub fn elementwise(op: BinaryOp, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return shape_err(format!("{:?} vs {:?}", a.shape(), b.shape()));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| op.apply(x, y))
        .collect();
    Tensor::create(a.shape(), Fill::Values(data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn create_fills_and_copies() {
        assert_eq!(Tensor::create(&[2, 2], 0.0).unwrap().data(), &[0.0; 4]);
        assert_eq!(
            Tensor::create(&[3], vec![1.0, 2.0, 3.0]).unwrap().data(),
            &[1.0, 2.0, 3.0]
        );
    }

    #[test]
    fn create_rejects_length_mismatch() {
        let err = Tensor::create(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn create_rejects_zero_extent() {
        assert!(Tensor::zeros(&[2, 0]).is_err());
        assert!(Tensor::zeros(&[]).is_err());
    }

    #[test]
    fn elementwise_cases() {
        let a = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_vec(&[2], vec![3.0, 4.0]).unwrap();
        assert_eq!(elementwise(BinaryOp::Add, &a, &b).unwrap().data(), &[4.0, 6.0]);
        assert_eq!(elementwise(BinaryOp::Sub, &a, &a).unwrap().data(), &[0.0, 0.0]);
        let c = Tensor::zeros(&[3]).unwrap();
        assert!(elementwise(BinaryOp::Mul, &a, &c).is_err());
    }

    #[test]
    fn data_mut_does_not_alias_clones() {
        let a = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let mut b = a.clone();
        b.data_mut()[0] = 9.0;
        assert_eq!(a.data(), &[1.0, 2.0]);
        assert_eq!(b.data(), &[9.0, 2.0]);
    }

    #[test]
    fn grad_accumulates() {
        let mut a = Tensor::zeros(&[2]).unwrap().with_requires_grad(true);
        a.accumulate_grad(&[1.0, 2.0]).unwrap();
        a.accumulate_grad(&[1.0, 2.0]).unwrap();
        assert_eq!(a.grad().unwrap(), &[2.0, 4.0]);
        assert!(a.accumulate_grad(&[1.0]).is_err());
    }
}
