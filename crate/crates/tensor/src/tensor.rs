use std::fmt;

use crate::element::{DType, Element};
use crate::error::{arg_err, shape_err, Result};

/// Dense row-major tensor.
///
/// Activations use N×C×H×W layout and convolution weights O×I×kH×kW.
/// `grad` is only populated on parameters after a backward pass has been
/// written back into them.
#[derive(Clone, PartialEq)]
pub struct Tensor<T: Element> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
}

impl<T: Element> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(shape_err(
                "from_vec",
                format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
            grad: None,
            requires_grad: false,
        })
    }

    /// Builds from `f64` literals, handy in tests and fixtures.
    pub fn from_f64s(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::from_vec(shape, values.iter().map(|&v| T::from_f64_lossy(v)).collect())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self::full(&[], value)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn dtype(&self) -> DType {
        T::DTYPE
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [T]> {
        self.grad.as_deref_mut()
    }

    /// Replaces the gradient buffer. The buffer must match the data length.
    pub fn set_grad(&mut self, grad: Vec<T>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(shape_err(
                "set_grad",
                format!("gradient has {} values, tensor has {}", grad.len(), self.data.len()),
            ));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Mutable access to data and gradient at the same time.
    pub fn data_and_grad_mut(&mut self) -> (&mut [T], Option<&[T]>) {
        (&mut self.data, self.grad.as_deref())
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    /// Data-only copy: drops the gradient buffer and the requires-grad flag.
    pub fn detached(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.clone(),
            grad: None,
            requires_grad: false,
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(shape_err(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape),
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data.clone(),
            grad: None,
            requires_grad: false,
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
            requires_grad: false,
        }
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&v| U::from_f64_lossy(v.as_f64()))
                .collect(),
            grad: None,
            requires_grad: false,
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        if self.data.is_empty() {
            return T::nan();
        }
        self.sum() / T::from_usize(self.data.len()).unwrap()
    }

    pub fn min_value(&self) -> T {
        self.data.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max_value(&self) -> T {
        self.data.iter().copied().fold(T::neg_infinity(), T::max)
    }

    /// Extents of a rank-4 tensor.
    pub fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        match self.shape.as_slice() {
            &[n, c, h, w] => Ok((n, c, h, w)),
            other => Err(shape_err(op, format!("expected rank-4 N×C×H×W, got {other:?}"))),
        }
    }

    /// Extracts sample `n` of an N×… tensor as a 1×… tensor.
    pub fn batch_item(&self, n: usize) -> Result<Self> {
        if self.rank() == 0 || n >= self.shape[0] {
            return Err(arg_err(
                "batch_item",
                format!("index {n} out of range for shape {:?}", self.shape),
            ));
        }
        let per = self.numel() / self.shape[0];
        let mut shape = self.shape.clone();
        shape[0] = 1;
        Self::from_vec(&shape, self.data[n * per..(n + 1) * per].to_vec())
    }

    /// Concatenates along axis 0.
    pub fn stack_batch(items: &[Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| arg_err("stack_batch", "no tensors to stack"))?;
        let inner = &first.shape[1..];
        let mut data = Vec::with_capacity(first.numel() * items.len());
        let mut n = 0;
        for t in items {
            if t.rank() != first.rank() || &t.shape[1..] != inner {
                return Err(shape_err(
                    "stack_batch",
                    format!("{:?} vs {:?}", t.shape, first.shape),
                ));
            }
            n += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = n;
        Self::from_vec(&shape, data)
    }

    /// Adds a leading axis of extent one.
    pub fn unsqueeze0(&self) -> Self {
        let mut shape = Vec::with_capacity(self.rank() + 1);
        shape.push(1);
        shape.extend_from_slice(&self.shape);
        Self {
            shape,
            data: self.data.clone(),
            grad: None,
            requires_grad: false,
        }
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        let head: Vec<_> = self.data.iter().take(PREVIEW).collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("dtype", &T::DTYPE)
            .field(
                "data",
                &format_args!(
                    "{head:?}{}",
                    if self.numel() > PREVIEW { " …" } else { "" }
                ),
            )
            .field("has_grad", &self.grad.is_some())
            .finish()
    }
}

/// Row-major strides for `shape`.
pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}
