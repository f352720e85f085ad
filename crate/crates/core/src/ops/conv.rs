//! Direct 3D convolution over NCDHW tensors with zero padding.
//!
//! The kernels walk output rows and accumulate `weight * input_row` slices, so
//! every output element is reduced in the same fixed order on every run.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Output extent along one axis: `floor((extent + 2*padding - k) / stride) + 1`.
pub fn conv_output_extent(extent: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (extent + 2 * padding - kernel) / stride + 1
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    n: usize,
    c: usize,
    o: usize,
    k: usize,
    stride: usize,
    padding: usize,
    input: [usize; 3],
    output: [usize; 3],
}

impl Geometry {
    fn in_spatial(&self) -> usize {
        self.input.iter().product()
    }

    fn out_spatial(&self) -> usize {
        self.output.iter().product()
    }

    fn k3(&self) -> usize {
        self.k * self.k * self.k
    }

    /// Output index range along `axis` for which kernel tap `tap` lands inside the input.
    fn valid_range(&self, axis: usize, tap: usize) -> (usize, usize) {
        let (s, p) = (self.stride, self.padding);
        let extent = self.input[axis];
        let lo = if p > tap { (p - tap).div_ceil(s) } else { 0 };
        if extent - 1 + p < tap {
            return (0, 0);
        }
        let hi = ((extent - 1 + p - tap) / s + 1).min(self.output[axis]);
        (lo.min(hi), hi)
    }

    fn ranges(&self) -> [Vec<(usize, usize)>; 3] {
        std::array::from_fn(|axis| (0..self.k).map(|t| self.valid_range(axis, t)).collect())
    }
}

fn validate<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Geometry> {
    if stride < 1 {
        return Err(Error::config("conv3d stride must be >= 1"));
    }
    let [n, c, d, h, w] = input.dims5()?;
    let [o, wc, kd, kh, kw] = weight.dims5()?;
    if kd != kh || kh != kw {
        return Err(Error::shape(format!(
            "conv3d kernel must be cubic, got {kd}x{kh}x{kw}"
        )));
    }
    if kd % 2 == 0 {
        return Err(Error::config(format!("conv3d kernel size {kd} is even")));
    }
    if wc != c {
        return Err(Error::shape(format!(
            "conv3d weight expects {wc} input channels, input has {c}"
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [o] {
            return Err(Error::shape(format!(
                "conv3d bias shape {:?}, expected [{o}]",
                b.shape()
            )));
        }
    }
    let input_ext = [d, h, w];
    for e in input_ext {
        if e + 2 * padding < kd {
            return Err(Error::shape(format!(
                "conv3d input extent {e} with padding {padding} is smaller than kernel {kd}"
            )));
        }
    }
    Ok(Geometry {
        n,
        c,
        o,
        k: kd,
        stride,
        padding,
        input: input_ext,
        output: input_ext.map(|e| conv_output_extent(e, kd, stride, padding)),
    })
}

/// Computes `out[n,o,p] = bias[o] + sum_{c,tap} weight[o,c,tap] * input[n,c,p*stride+tap-padding]`.
pub fn conv3d<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = validate(input, weight, bias, stride, padding)?;
    let ranges = g.ranges();
    let (si, so, k3) = (g.in_spatial(), g.out_spatial(), g.k3());
    let [_, hi, wi] = g.input;
    let [_, ho, wo] = g.output;
    let pointwise = g.k == 1 && g.stride == 1 && g.padding == 0;

    let x = input.data();
    let wt = weight.data();
    let mut out = vec![T::zero(); g.n * g.o * so];

    for n in 0..g.n {
        for o in 0..g.o {
            let dst = &mut out[(n * g.o + o) * so..(n * g.o + o + 1) * so];
            if let Some(b) = bias {
                dst.fill(b.data()[o]);
            }
            for c in 0..g.c {
                let src = &x[(n * g.c + c) * si..(n * g.c + c + 1) * si];
                let wbase = (o * g.c + c) * k3;
                if pointwise {
                    let w = wt[wbase];
                    for (a, &b) in dst.iter_mut().zip(src) {
                        *a = *a + w * b;
                    }
                    continue;
                }
                for kd in 0..g.k {
                    let (d_lo, d_hi) = ranges[0][kd];
                    for kh in 0..g.k {
                        let (h_lo, h_hi) = ranges[1][kh];
                        for kw in 0..g.k {
                            let (w_lo, w_hi) = ranges[2][kw];
                            if w_lo >= w_hi {
                                continue;
                            }
                            let w = wt[wbase + (kd * g.k + kh) * g.k + kw];
                            for od in d_lo..d_hi {
                                let id = od * g.stride + kd - g.padding;
                                for oh in h_lo..h_hi {
                                    let ih = oh * g.stride + kh - g.padding;
                                    let orow = &mut dst[(od * ho + oh) * wo..][w_lo..w_hi];
                                    let ibase = (id * hi + ih) * wi;
                                    if g.stride == 1 {
                                        let iw0 = ibase + w_lo + kw - g.padding;
                                        let irow = &src[iw0..iw0 + orow.len()];
                                        for (a, &b) in orow.iter_mut().zip(irow) {
                                            *a = *a + w * b;
                                        }
                                    } else {
                                        for (j, a) in orow.iter_mut().enumerate() {
                                            let iw = (w_lo + j) * g.stride + kw - g.padding;
                                            *a = *a + w * src[ibase + iw];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts_unchecked(
        vec![g.n, g.o, g.output[0], g.output[1], g.output[2]],
        out,
    ))
}

/// Gradients of [`conv3d`] with respect to input, weight and bias.
pub struct Conv3dGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

pub fn conv3d_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: usize,
    need: [bool; 3],
) -> Result<Conv3dGrads<T>> {
    let g = validate(input, weight, None, stride, padding)?;
    let expected = [g.n, g.o, g.output[0], g.output[1], g.output[2]];
    if grad_out.shape() != expected {
        return Err(Error::shape(format!(
            "conv3d upstream gradient {:?}, expected {expected:?}",
            grad_out.shape()
        )));
    }
    let ranges = g.ranges();
    let (si, so, k3) = (g.in_spatial(), g.out_spatial(), g.k3());
    let [_, hi, wi] = g.input;
    let [_, ho, wo] = g.output;
    let pointwise = g.k == 1 && g.stride == 1 && g.padding == 0;
    let x = input.data();
    let wt = weight.data();
    let gy = grad_out.data();

    let grad_input = need[0].then(|| {
        let mut gx = vec![T::zero(); g.n * g.c * si];
        for n in 0..g.n {
            for c in 0..g.c {
                let dst = &mut gx[(n * g.c + c) * si..(n * g.c + c + 1) * si];
                for o in 0..g.o {
                    let src = &gy[(n * g.o + o) * so..(n * g.o + o + 1) * so];
                    let wbase = (o * g.c + c) * k3;
                    if pointwise {
                        let w = wt[wbase];
                        for (a, &b) in dst.iter_mut().zip(src) {
                            *a = *a + w * b;
                        }
                        continue;
                    }
                    for kd in 0..g.k {
                        let (d_lo, d_hi) = ranges[0][kd];
                        for kh in 0..g.k {
                            let (h_lo, h_hi) = ranges[1][kh];
                            for kw in 0..g.k {
                                let (w_lo, w_hi) = ranges[2][kw];
                                if w_lo >= w_hi {
                                    continue;
                                }
                                let w = wt[wbase + (kd * g.k + kh) * g.k + kw];
                                for od in d_lo..d_hi {
                                    let id = od * g.stride + kd - g.padding;
                                    for oh in h_lo..h_hi {
                                        let ih = oh * g.stride + kh - g.padding;
                                        let orow = &src[(od * ho + oh) * wo..][w_lo..w_hi];
                                        let ibase = (id * hi + ih) * wi;
                                        if g.stride == 1 {
                                            let iw0 = ibase + w_lo + kw - g.padding;
                                            let irow = &mut dst[iw0..iw0 + orow.len()];
                                            for (a, &b) in irow.iter_mut().zip(orow) {
                                                *a = *a + w * b;
                                            }
                                        } else {
                                            for (j, &b) in orow.iter().enumerate() {
                                                let iw = (w_lo + j) * g.stride + kw - g.padding;
                                                dst[ibase + iw] = dst[ibase + iw] + w * b;
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Tensor::from_parts_unchecked(input.shape().to_vec(), gx)
    });

    let grad_weight = need[1].then(|| {
        let mut gw = vec![T::zero(); g.o * g.c * k3];
        for o in 0..g.o {
            for c in 0..g.c {
                for kd in 0..g.k {
                    let (d_lo, d_hi) = ranges[0][kd];
                    for kh in 0..g.k {
                        let (h_lo, h_hi) = ranges[1][kh];
                        for kw in 0..g.k {
                            let (w_lo, w_hi) = ranges[2][kw];
                            let mut acc = 0.0f64;
                            if w_lo < w_hi {
                                for n in 0..g.n {
                                    let src = &x[(n * g.c + c) * si..(n * g.c + c + 1) * si];
                                    let up = &gy[(n * g.o + o) * so..(n * g.o + o + 1) * so];
                                    if pointwise {
                                        acc += dot(up, src).as_f64();
                                        continue;
                                    }
                                    for od in d_lo..d_hi {
                                        let id = od * g.stride + kd - g.padding;
                                        for oh in h_lo..h_hi {
                                            let ih = oh * g.stride + kh - g.padding;
                                            let orow = &up[(od * ho + oh) * wo..][w_lo..w_hi];
                                            let ibase = (id * hi + ih) * wi;
                                            let row = if g.stride == 1 {
                                                let iw0 = ibase + w_lo + kw - g.padding;
                                                dot(orow, &src[iw0..iw0 + orow.len()])
                                            } else {
                                                orow.iter().enumerate().fold(
                                                    T::zero(),
                                                    |s, (j, &b)| {
                                                        let iw = (w_lo + j) * g.stride + kw
                                                            - g.padding;
                                                        s + b * src[ibase + iw]
                                                    },
                                                )
                                            };
                                            acc += row.as_f64();
                                        }
                                    }
                                }
                            }
                            gw[(o * g.c + c) * k3 + (kd * g.k + kh) * g.k + kw] = T::from_f64(acc);
                        }
                    }
                }
            }
        }
        Tensor::from_parts_unchecked(weight.shape().to_vec(), gw)
    });

    let grad_bias = need[2].then(|| {
        let gb = (0..g.o)
            .map(|o| {
                let total: f64 = (0..g.n)
                    .map(|n| crate::tensor::sum_f64(&gy[(n * g.o + o) * so..(n * g.o + o + 1) * so]))
                    .sum();
                T::from_f64(total)
            })
            .collect();
        Tensor::from_parts_unchecked(vec![g.o], gb)
    });

    Ok(Conv3dGrads {
        input: grad_input,
        weight: grad_weight,
        bias: grad_bias,
    })
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    // four lanes so the reduction vectorizes; lane order is fixed
    let mut lanes = [T::zero(); 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for l in 0..4 {
            lanes[l] = lanes[l] + a[4 * i + l] * b[4 * i + l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 4..a.len() {
        tail = tail + a[i] * b[i];
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}
