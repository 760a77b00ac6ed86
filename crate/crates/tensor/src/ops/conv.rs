//! 2-D convolution via im2col + GEMM, with grouped/depthwise support.

use std::rc::Rc;

use crate::element::Element;
use crate::error::{arg_err, shape_err, Result};
use crate::tape::Var;
use crate::tensor::Tensor;

/// Stride, zero padding and group count of a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dOptions {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for Conv2dOptions {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

impl Conv2dOptions {
    /// Stride 1, "same" padding for an odd kernel.
    pub fn same(kernel: usize) -> Self {
        Self {
            padding: kernel / 2,
            ..Self::default()
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    groups: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn new(
        input: &[usize],
        weight: &[usize],
        bias: Option<&[usize]>,
        opts: Conv2dOptions,
    ) -> Result<Self> {
        let &[n, cin, h, w] = input else {
            return Err(shape_err("conv2d", format!("input must be N×C×H×W, got {input:?}")));
        };
        let &[cout, cin_g, kh, kw] = weight else {
            return Err(shape_err("conv2d", format!("weight must be O×I×kH×kW, got {weight:?}")));
        };
        if opts.stride == 0 {
            return Err(arg_err("conv2d", "stride must be positive"));
        }
        if opts.groups == 0 {
            return Err(arg_err("conv2d", "groups must be positive"));
        }
        if cin % opts.groups != 0 || cout % opts.groups != 0 {
            return Err(shape_err(
                "conv2d",
                format!(
                    "channels in={cin} out={cout} must both be divisible by groups={}",
                    opts.groups
                ),
            ));
        }
        if cin_g * opts.groups != cin {
            return Err(shape_err(
                "conv2d",
                format!(
                    "weight expects {} input channels per group, input has {cin} over {} groups",
                    cin_g, opts.groups
                ),
            ));
        }
        if kh == 0 || kw == 0 {
            return Err(shape_err("conv2d", "empty kernel"));
        }
        if h + 2 * opts.padding < kh || w + 2 * opts.padding < kw {
            return Err(shape_err(
                "conv2d",
                format!(
                    "padded input {}×{} smaller than kernel {kh}×{kw}",
                    h + 2 * opts.padding,
                    w + 2 * opts.padding
                ),
            ));
        }
        if let Some(b) = bias {
            if b != [cout] {
                return Err(shape_err(
                    "conv2d",
                    format!("bias must have shape [{cout}], got {b:?}"),
                ));
            }
        }
        Ok(Self {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride: opts.stride,
            pad: opts.padding,
            groups: opts.groups,
            ho: (h + 2 * opts.padding - kh) / opts.stride + 1,
            wo: (w + 2 * opts.padding - kw) / opts.stride + 1,
        })
    }

    fn cin_g(&self) -> usize {
        self.cin / self.groups
    }

    fn cout_g(&self) -> usize {
        self.cout / self.groups
    }

    /// Rows of the im2col matrix for one group.
    fn k(&self) -> usize {
        self.cin_g() * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.ho * self.wo
    }

    /// 1×1, stride 1, no padding: the input plane already is the column matrix.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn input_offset(&self, n: usize, g: usize) -> usize {
        (n * self.cin + g * self.cin_g()) * self.h * self.w
    }

    fn output_offset(&self, n: usize, g: usize) -> usize {
        (n * self.cout + g * self.cout_g()) * self.p()
    }
}

/// Unrolls the receptive fields of one sample/group into a K×P matrix.
fn im2col<T: Element>(src: &[T], geo: &Geometry, cols: &mut [T]) {
    let (h, w, p) = (geo.h as isize, geo.w as isize, geo.p());
    let mut row = 0;
    for c in 0..geo.cin_g() {
        let plane = &src[c * geo.h * geo.w..(c + 1) * geo.h * geo.w];
        for ki in 0..geo.kh {
            for kj in 0..geo.kw {
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..geo.ho {
                    let iy = (oy * geo.stride + ki) as isize - geo.pad as isize;
                    let line = &mut dst[oy * geo.wo..(oy + 1) * geo.wo];
                    if iy < 0 || iy >= h {
                        line.fill(T::zero());
                        continue;
                    }
                    let src_row = &plane[iy as usize * geo.w..(iy as usize + 1) * geo.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * geo.stride + kj) as isize - geo.pad as isize;
                        *v = if ix < 0 || ix >= w {
                            T::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatter-adds a K×P column matrix back onto one sample/group of the input.
fn col2im<T: Element>(cols: &[T], geo: &Geometry, dst: &mut [T]) {
    let (h, w, p) = (geo.h as isize, geo.w as isize, geo.p());
    let mut row = 0;
    for c in 0..geo.cin_g() {
        let plane = &mut dst[c * geo.h * geo.w..(c + 1) * geo.h * geo.w];
        for ki in 0..geo.kh {
            for kj in 0..geo.kw {
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..geo.ho {
                    let iy = (oy * geo.stride + ki) as isize - geo.pad as isize;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    let base = iy as usize * geo.w;
                    for ox in 0..geo.wo {
                        let ix = (ox * geo.stride + kj) as isize - geo.pad as isize;
                        if ix >= 0 && ix < w {
                            let d = &mut plane[base + ix as usize];
                            *d = *d + src[oy * geo.wo + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn forward<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geo: &Geometry,
) -> Tensor<T> {
    let (k, p, cout_g) = (geo.k(), geo.p(), geo.cout_g());
    let mut out = vec![T::zero(); geo.n * geo.cout * p];
    let mut cols = if geo.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); k * p]
    };
    let wdata = weight.data();
    for n in 0..geo.n {
        for g in 0..geo.groups {
            let in_off = geo.input_offset(n, g);
            let src = &x.data()[in_off..in_off + geo.cin_g() * geo.h * geo.w];
            let colmat: &[T] = if geo.is_pointwise() {
                src
            } else {
                im2col(src, geo, &mut cols);
                &cols
            };
            let w_g = &wdata[g * cout_g * k..(g + 1) * cout_g * k];
            let out_off = geo.output_offset(n, g);
            let dst = &mut out[out_off..out_off + cout_g * p];
            if let Some(b) = bias {
                for (co, row) in dst.chunks_exact_mut(p).enumerate() {
                    row.fill(b.data()[g * cout_g + co]);
                }
            }
            T::gemm(
                cout_g,
                k,
                p,
                T::one(),
                w_g,
                k as isize,
                1,
                colmat,
                p as isize,
                1,
                if bias.is_some() { T::one() } else { T::zero() },
                dst,
                p as isize,
                1,
            );
        }
    }
    Tensor::from_vec(&[geo.n, geo.cout, geo.ho, geo.wo], out).expect("conv output length")
}

struct ConvGrads<T: Element> {
    input: Option<Tensor<T>>,
    weight: Option<Tensor<T>>,
    bias: Option<Tensor<T>>,
}

fn backward<T: Element>(
    grad_out: &Tensor<T>,
    x: &Tensor<T>,
    weight: &Tensor<T>,
    geo: &Geometry,
    needs: (bool, bool, bool),
) -> ConvGrads<T> {
    let (k, p, cout_g) = (geo.k(), geo.p(), geo.cout_g());
    let (need_x, need_w, need_b) = needs;
    let g_all = grad_out.data();

    let bias = need_b.then(|| {
        let mut db = vec![T::zero(); geo.cout];
        for n in 0..geo.n {
            for (co, d) in db.iter_mut().enumerate() {
                let off = (n * geo.cout + co) * p;
                *d = *d + g_all[off..off + p].iter().copied().sum::<T>();
            }
        }
        Tensor::from_vec(&[geo.cout], db).unwrap()
    });

    let mut dx = need_x.then(|| vec![T::zero(); x.numel()]);
    let mut dw = need_w.then(|| vec![T::zero(); weight.numel()]);
    if need_x || need_w {
        let mut cols = vec![T::zero(); k * p];
        let mut dcols = if need_x {
            vec![T::zero(); k * p]
        } else {
            Vec::new()
        };
        let wdata = weight.data();
        for n in 0..geo.n {
            for g in 0..geo.groups {
                let out_off = geo.output_offset(n, g);
                let gy = &g_all[out_off..out_off + cout_g * p];
                let in_off = geo.input_offset(n, g);
                let in_len = geo.cin_g() * geo.h * geo.w;
                if let Some(dw) = dw.as_mut() {
                    let src = &x.data()[in_off..in_off + in_len];
                    let colmat: &[T] = if geo.is_pointwise() {
                        src
                    } else {
                        im2col(src, geo, &mut cols);
                        &cols
                    };
                    // dW_g += dY_g · colsᵀ
                    T::gemm(
                        cout_g,
                        p,
                        k,
                        T::one(),
                        gy,
                        p as isize,
                        1,
                        colmat,
                        1,
                        p as isize,
                        T::one(),
                        &mut dw[g * cout_g * k..(g + 1) * cout_g * k],
                        k as isize,
                        1,
                    );
                }
                if let Some(dx) = dx.as_mut() {
                    let w_g = &wdata[g * cout_g * k..(g + 1) * cout_g * k];
                    let dst = &mut dx[in_off..in_off + in_len];
                    if geo.is_pointwise() {
                        // dX_g += W_gᵀ · dY_g, written straight into the input layout
                        T::gemm(k, cout_g, p, T::one(), w_g, 1, k as isize, gy, p as isize, 1,
                            T::one(), dst, p as isize, 1);
                    } else {
                        T::gemm(k, cout_g, p, T::one(), w_g, 1, k as isize, gy, p as isize, 1,
                            T::zero(), &mut dcols, p as isize, 1);
                        col2im(&dcols, geo, dst);
                    }
                }
            }
        }
    }
    ConvGrads {
        input: dx.map(|d| Tensor::from_vec(x.shape(), d).unwrap()),
        weight: dw.map(|d| Tensor::from_vec(weight.shape(), d).unwrap()),
        bias,
    }
}

/// Forward convolution on plain tensors.
pub fn conv2d_tensor<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    opts: Conv2dOptions,
) -> Result<Tensor<T>> {
    let geo = Geometry::new(x.shape(), weight.shape(), bias.map(|b| b.shape()), opts)?;
    Ok(forward(x, weight, bias, &geo))
}

impl<'t, T: Element> Var<'t, T> {
    /// Zero-padded cross-correlation, `self` being N×Cin×H×W and `weight`
    /// Cout×(Cin/groups)×kH×kW.
    pub fn conv2d(
        &self,
        weight: &Var<'t, T>,
        bias: Option<&Var<'t, T>>,
        opts: Conv2dOptions,
    ) -> Result<Var<'t, T>> {
        self.same_tape(weight)?;
        if let Some(b) = bias {
            self.same_tape(b)?;
        }
        let geo = Geometry::new(self.shape(), weight.shape(), bias.map(|b| b.shape()), opts)?;
        let out = forward(&self.value, &weight.value, bias.map(|b| &*b.value), &geo);
        let x = Rc::clone(&self.value);
        let w = Rc::clone(&weight.value);
        let mut inputs = vec![self, weight];
        if let Some(b) = bias {
            inputs.push(b);
        }
        let has_bias = bias.is_some();
        Ok(self.tape.record(
            out,
            &inputs,
            Box::new(move |g, needs| {
                let grads = backward(
                    g,
                    &x,
                    &w,
                    &geo,
                    (needs[0], needs[1], has_bias && needs[2]),
                );
                let mut v = vec![grads.input, grads.weight];
                if has_bias {
                    v.push(grads.bias);
                }
                v
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tape;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn unit_kernel_is_identity() {
        let x = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let w = t(&[1, 1, 1, 1], &[1.0]);
        let b = t(&[1], &[0.0]);
        let y = conv2d_tensor(&x, &w, Some(&b), Conv2dOptions::default()).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn shape_formula() {
        let x = Tensor::<f32>::zeros(&[2, 8, 16, 16]);
        let w = Tensor::<f32>::zeros(&[4, 8, 3, 3]);
        let y = conv2d_tensor(&x, &w, None, Conv2dOptions::same(3)).unwrap();
        assert_eq!(y.shape(), &[2, 4, 16, 16]);
        let strided = conv2d_tensor(
            &x,
            &w,
            None,
            Conv2dOptions {
                stride: 2,
                padding: 1,
                groups: 1,
            },
        )
        .unwrap();
        assert_eq!(strided.shape(), &[2, 4, 8, 8]);
    }

    #[test]
    fn rejects_bad_arguments() {
        let x = Tensor::<f32>::zeros(&[1, 4, 5, 5]);
        let w = Tensor::<f32>::zeros(&[2, 4, 3, 3]);
        let zero_stride = Conv2dOptions {
            stride: 0,
            ..Conv2dOptions::default()
        };
        assert!(conv2d_tensor(&x, &w, None, zero_stride).is_err());
        // channel mismatch
        let w3 = Tensor::<f32>::zeros(&[2, 3, 3, 3]);
        let err = conv2d_tensor(&x, &w3, None, Conv2dOptions::default()).unwrap_err();
        assert!(err.to_string().contains("input channels"));
        // groups not dividing channels
        let wg = Tensor::<f32>::zeros(&[3, 2, 3, 3]);
        assert!(conv2d_tensor(&x, &wg, None, Conv2dOptions::default().with_groups(2)).is_err());
        // kernel larger than padded input
        let big = Tensor::<f32>::zeros(&[2, 4, 7, 7]);
        assert!(conv2d_tensor(&x, &big, None, Conv2dOptions::default()).is_err());
        // bias length
        let b = Tensor::<f32>::zeros(&[3]);
        assert!(conv2d_tensor(&x, &w, Some(&b), Conv2dOptions::default()).is_err());
    }

    #[test]
    fn depthwise_identity() {
        let x = t(&[1, 3, 2, 2], &(0..12).map(f64::from).collect::<Vec<_>>());
        let w = t(&[3, 1, 1, 1], &[1.0, 1.0, 1.0]);
        let y = conv2d_tensor(&x, &w, None, Conv2dOptions::default().with_groups(3)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn bias_gradient_sums_output_grad() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::ones(&[2, 1, 3, 3]));
        let w = tape.leaf(Tensor::ones(&[2, 1, 3, 3]));
        let b = tape.leaf(Tensor::zeros(&[2]));
        let y = x.conv2d(&w, Some(&b), Conv2dOptions::same(3)).unwrap();
        let grads = tape.backward(&y.sum_all()).unwrap();
        assert_eq!(grads.get(&b).unwrap().data(), &[18.0, 18.0]);
    }
}
