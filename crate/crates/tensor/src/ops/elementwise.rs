//! Pointwise arithmetic, activations and reductions.
//!
//! Binary operations broadcast only along singleton axes: both operands must
//! have the same rank and every axis must either match or be 1 on one side.

use std::rc::Rc;

use crate::element::Element;
use crate::error::{arg_err, shape_err, Result};
use crate::tape::Var;
use crate::tensor::{strides_of, Tensor};

pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a == b {
        return Ok(a.to_vec());
    }
    if a.len() != b.len() {
        return Err(shape_err(op, format!("cannot broadcast {a:?} with {b:?}")));
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(shape_err(op, format!("cannot broadcast {a:?} with {b:?}"))),
        })
        .collect()
}

/// For each element of `out_shape`, the flat offset of the element of
/// `in_shape` it reads under singleton broadcasting.
fn broadcast_offsets(out_shape: &[usize], in_shape: &[usize]) -> Vec<usize> {
    let numel: usize = out_shape.iter().product();
    let in_strides = strides_of(in_shape);
    let eff: Vec<usize> = in_shape
        .iter()
        .zip(&in_strides)
        .map(|(&d, &s)| if d == 1 { 0 } else { s })
        .collect();
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    let mut out = Vec::with_capacity(numel);
    for _ in 0..numel {
        out.push(offset);
        for axis in (0..rank).rev() {
            idx[axis] += 1;
            offset += eff[axis];
            if idx[axis] < out_shape[axis] {
                break;
            }
            offset -= eff[axis] * idx[axis];
            idx[axis] = 0;
        }
    }
    out
}

fn zip_broadcast<T: Element>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    out_shape: &[usize],
    f: impl Fn(T, T) -> T,
) -> Tensor<T> {
    let data = if a.shape() == b.shape() {
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
    } else {
        let oa = broadcast_offsets(out_shape, a.shape());
        let ob = broadcast_offsets(out_shape, b.shape());
        oa.iter()
            .zip(&ob)
            .map(|(&i, &j)| f(a.data()[i], b.data()[j]))
            .collect()
    };
    Tensor::from_vec(out_shape, data).expect("broadcast output length")
}

/// Sums a broadcast gradient back down to `shape`.
pub(crate) fn reduce_to<T: Element>(grad: Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if grad.shape() == shape {
        return grad;
    }
    let offsets = broadcast_offsets(grad.shape(), shape);
    let mut out = Tensor::zeros(shape);
    let dst = out.data_mut();
    for (&o, &g) in offsets.iter().zip(grad.data()) {
        dst[o] = dst[o] + g;
    }
    out
}

fn unary<'t, T: Element>(
    x: &Var<'t, T>,
    forward: impl Fn(T) -> T,
    derivative: impl Fn(T, T) -> T + 'static,
) -> Var<'t, T> {
    // `derivative(x, y)` is dy/dx evaluated at input x with output y.
    let out = x.value.map(forward);
    let xin = Rc::clone(&x.value);
    let y = Rc::new(out.clone());
    x.tape.record(
        out,
        &[x],
        Box::new(move |g, _| {
            let data = g
                .data()
                .iter()
                .zip(xin.data().iter().zip(y.data()))
                .map(|(&g, (&x, &y))| g * derivative(x, y))
                .collect();
            vec![Some(Tensor::from_vec(g.shape(), data).unwrap())]
        }),
    )
}

impl<'t, T: Element> Var<'t, T> {
    pub fn add(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(other)?;
        let shape = broadcast_shape("add", self.shape(), other.shape())?;
        let out = zip_broadcast(&self.value, &other.value, &shape, |a, b| a + b);
        let (sa, sb) = (self.shape().to_vec(), other.shape().to_vec());
        Ok(self.tape.record(
            out,
            &[self, other],
            Box::new(move |g, needs| {
                vec![
                    needs[0].then(|| reduce_to(g.clone(), &sa)),
                    needs[1].then(|| reduce_to(g.clone(), &sb)),
                ]
            }),
        ))
    }

    pub fn sub(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(other)?;
        let shape = broadcast_shape("sub", self.shape(), other.shape())?;
        let out = zip_broadcast(&self.value, &other.value, &shape, |a, b| a - b);
        let (sa, sb) = (self.shape().to_vec(), other.shape().to_vec());
        Ok(self.tape.record(
            out,
            &[self, other],
            Box::new(move |g, needs| {
                vec![
                    needs[0].then(|| reduce_to(g.clone(), &sa)),
                    needs[1].then(|| reduce_to(g.map(|v| -v), &sb)),
                ]
            }),
        ))
    }

    /// Element-wise (Hadamard) product.
    pub fn mul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(other)?;
        let shape = broadcast_shape("mul", self.shape(), other.shape())?;
        let out = zip_broadcast(&self.value, &other.value, &shape, |a, b| a * b);
        let (a, b) = (Rc::clone(&self.value), Rc::clone(&other.value));
        Ok(self.tape.record(
            out,
            &[self, other],
            Box::new(move |g, needs| {
                let ga = needs[0].then(|| {
                    reduce_to(zip_broadcast(g, &b, g.shape(), |g, b| g * b), a.shape())
                });
                let gb = needs[1].then(|| {
                    reduce_to(zip_broadcast(g, &a, g.shape(), |g, a| g * a), b.shape())
                });
                vec![ga, gb]
            }),
        ))
    }

    pub fn div(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(other)?;
        let shape = broadcast_shape("div", self.shape(), other.shape())?;
        let out = zip_broadcast(&self.value, &other.value, &shape, |a, b| a / b);
        let (a, b) = (Rc::clone(&self.value), Rc::clone(&other.value));
        Ok(self.tape.record(
            out,
            &[self, other],
            Box::new(move |g, needs| {
                let ga = needs[0].then(|| {
                    reduce_to(zip_broadcast(g, &b, g.shape(), |g, b| g / b), a.shape())
                });
                let gb = needs[1].then(|| {
                    // d(a/b)/db = -a/b²
                    let ab = zip_broadcast(&a, &b, g.shape(), |a, b| -a / (b * b));
                    reduce_to(zip_broadcast(g, &ab, g.shape(), |g, q| g * q), b.shape())
                });
                vec![ga, gb]
            }),
        ))
    }

    /// Multiplies every element by a constant.
    pub fn scale(&self, factor: T) -> Var<'t, T> {
        unary(self, move |x| x * factor, move |_, _| factor)
    }

    pub fn add_scalar(&self, offset: T) -> Var<'t, T> {
        unary(self, move |x| x + offset, |_, _| T::one())
    }

    pub fn neg(&self) -> Var<'t, T> {
        self.scale(-T::one())
    }

    pub fn sigmoid(&self) -> Var<'t, T> {
        unary(
            self,
            |x| T::one() / (T::one() + (-x).exp()),
            |_, y| y * (T::one() - y),
        )
    }

    pub fn leaky_relu(&self, slope: T) -> Var<'t, T> {
        unary(
            self,
            move |x| if x > T::zero() { x } else { x * slope },
            move |x, _| if x > T::zero() { T::one() } else { slope },
        )
    }

    /// Saturates to `[lo, hi]`. NaN passes through unchanged so that
    /// upstream faults stay visible.
    pub fn clamp(&self, lo: T, hi: T) -> Result<Var<'t, T>> {
        if lo > hi || lo.is_nan() || hi.is_nan() {
            return Err(arg_err("clamp", format!("empty interval [{lo}, {hi}]")));
        }
        Ok(unary(
            self,
            move |x| {
                if x < lo {
                    lo
                } else if x > hi {
                    hi
                } else {
                    x
                }
            },
            move |x, _| {
                if x >= lo && x <= hi {
                    T::one()
                } else {
                    T::zero()
                }
            },
        ))
    }

    /// Absolute value; the subgradient at zero is taken as zero.
    pub fn abs(&self) -> Var<'t, T> {
        unary(
            self,
            |x| x.abs(),
            |x, _| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    /// Sum of every element, as a rank-0 scalar.
    pub fn sum_all(&self) -> Var<'t, T> {
        let out = Tensor::scalar(self.value.sum());
        let shape = self.shape().to_vec();
        self.tape.record(
            out,
            &[self],
            Box::new(move |g, _| vec![Some(Tensor::full(&shape, g.data()[0]))]),
        )
    }

    /// Mean of every element, as a rank-0 scalar.
    pub fn mean_all(&self) -> Result<Var<'t, T>> {
        let n = self.value.numel();
        if n == 0 {
            return Err(arg_err("mean_all", "empty tensor"));
        }
        let inv = T::one() / T::from_usize(n).unwrap();
        Ok(self.sum_all().scale(inv))
    }

    /// Per-plane mean: N×C×H×W → N×C×1×1. This is global adaptive average
    /// pooling.
    pub fn spatial_mean(&self) -> Result<Var<'t, T>> {
        let (n, c, h, w) = self.value.dims4("spatial_mean")?;
        let plane = h * w;
        if plane == 0 {
            return Err(arg_err("spatial_mean", "empty spatial extent"));
        }
        let inv = T::one() / T::from_usize(plane).unwrap();
        let data = self
            .value
            .data()
            .chunks_exact(plane)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let out = Tensor::from_vec(&[n, c, 1, 1], data)?;
        let shape = self.shape().to_vec();
        Ok(self.tape.record(
            out,
            &[self],
            Box::new(move |g, _| {
                let mut data = Vec::with_capacity(n * c * plane);
                for &gv in g.data() {
                    data.extend(std::iter::repeat(gv * inv).take(plane));
                }
                vec![Some(Tensor::from_vec(&shape, data).unwrap())]
            }),
        ))
    }

    /// Same data, new extents.
    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t, T>> {
        let out = self.value.reshape(shape)?;
        let orig = self.shape().to_vec();
        Ok(self.tape.record(
            out,
            &[self],
            Box::new(move |g, _| vec![Some(g.reshape(&orig).unwrap())]),
        ))
    }

    /// Global average pooling to N×C×1×1.
    pub fn adaptive_avg_pool_global(&self) -> Result<Var<'t, T>> {
        self.spatial_mean()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tape;

    #[test]
    fn broadcast_rules() {
        assert_eq!(
            broadcast_shape("t", &[2, 3, 4, 4], &[1, 3, 1, 1]).unwrap(),
            vec![2, 3, 4, 4]
        );
        assert_eq!(
            broadcast_shape("t", &[2, 1, 4, 4], &[2, 3, 4, 4]).unwrap(),
            vec![2, 3, 4, 4]
        );
        assert!(broadcast_shape("t", &[2, 3, 4, 4], &[2, 2, 4, 4]).is_err());
        assert!(broadcast_shape("t", &[3, 4, 4], &[1, 3, 4, 4]).is_err());
    }

    #[test]
    fn sigmoid_of_zero() {
        let tape = Tape::<f64>::no_grad();
        let x = tape.constant(Tensor::zeros(&[1]));
        assert_eq!(x.sigmoid().value().data(), &[0.5]);
    }

    #[test]
    fn clamp_saturates() {
        let tape = Tape::<f64>::no_grad();
        let x = tape.constant(Tensor::from_vec(&[3], vec![-0.2, 0.4, 1.2]).unwrap());
        assert_eq!(x.clamp(0.0, 1.0).unwrap().value().data(), &[0.0, 0.4, 1.0]);
    }

    #[test]
    fn clamp_keeps_nan() {
        let tape = Tape::<f64>::no_grad();
        let x = tape.constant(Tensor::from_vec(&[1], vec![f64::NAN]).unwrap());
        assert!(x.clamp(0.0, 1.0).unwrap().value().data()[0].is_nan());
    }

    #[test]
    fn broadcast_grad_reduces_over_singletons() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::ones(&[2, 3, 2, 2]));
        let b = tape.leaf(Tensor::from_vec(&[1, 3, 1, 1], vec![1.0, 2.0, 3.0]).unwrap());
        let loss = x.mul(&b).unwrap().sum_all();
        let grads = tape.backward(&loss).unwrap();
        // each channel sees 2 samples × 4 pixels of ones
        assert_eq!(grads.get(&b).unwrap().data(), &[8.0, 8.0, 8.0]);
        assert_eq!(grads.get(&x).unwrap().data()[4], 2.0);
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let tape = Tape::<f32>::new();
        let a = tape.leaf(Tensor::ones(&[1, 2, 2, 2]));
        let b = tape.leaf(Tensor::ones(&[1, 3, 2, 2]));
        assert!(a.add(&b).is_err());
    }

    #[test]
    fn spatial_mean_values() {
        let tape = Tape::<f64>::no_grad();
        let x = tape.constant(Tensor::from_vec(&[1, 1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap());
        assert_eq!(x.spatial_mean().unwrap().value().data(), &[1.5]);
        let flat = tape.constant(Tensor::full(&[1, 2, 3, 3], 0.7));
        for v in flat.spatial_mean().unwrap().value().data() {
            assert!((v - 0.7).abs() < 1e-15);
        }
        let empty = tape.constant(Tensor::zeros(&[1, 1, 0, 3]));
        assert!(empty.spatial_mean().is_err());
    }

    #[test]
    fn spatial_mean_gradient_is_uniform() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64s(&[1, 1, 2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap());
        let loss = x.spatial_mean().unwrap().sum_all();
        let grads = tape.backward(&loss).unwrap();
        for g in grads.get(&x).unwrap().data() {
            assert!((g - 1.0 / 6.0).abs() < 1e-15);
        }
    }
}
