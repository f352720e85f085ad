use crate::error::{Error, Result};
use crate::tensor::{order_free_sum, sum_f64, Real, Tensor};

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn add<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "add: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Ok(Tensor::from_parts_unchecked(a.shape().to_vec(), data))
}

fn linear_dims<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<(usize, usize, usize)> {
    let (&[n, f], &[k, wf]) = (x.shape(), w.shape()) else {
        return Err(Error::shape(format!(
            "linear expects x [N,F] and W [K,F], got {:?} and {:?}",
            x.shape(),
            w.shape()
        )));
    };
    if wf != f || b.shape() != [k] {
        return Err(Error::shape(format!(
            "linear: x {:?}, W {:?}, b {:?} do not conform",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    Ok((n, f, k))
}

/// `y[n,k] = sum_f W[k,f] * x[n,f] + b[k]`.
pub fn linear<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, f, k) = linear_dims(x, w, b)?;
    let mut out = Vec::with_capacity(n * k);
    for row in x.data().chunks_exact(f) {
        for (wrow, &bias) in w.data().chunks_exact(f).zip(b.data()) {
            let acc = row
                .iter()
                .zip(wrow)
                .fold(0.0f64, |a, (&xv, &wv)| a + (xv * wv).as_f64());
            out.push(T::from_f64(acc) + bias);
        }
    }
    Ok(Tensor::from_parts_unchecked(vec![n, k], out))
}

pub(crate) fn linear_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    gy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, f, k) = linear_dims(x, w, b)?;
    let gyd = gy.data();
    let mut gx = vec![T::zero(); n * f];
    for i in 0..n {
        for j in 0..f {
            let acc = (0..k).fold(0.0f64, |a, kk| a + (gyd[i * k + kk] * w.data()[kk * f + j]).as_f64());
            gx[i * f + j] = T::from_f64(acc);
        }
    }
    let mut gw = vec![T::zero(); k * f];
    for kk in 0..k {
        for j in 0..f {
            let acc = (0..n).fold(0.0f64, |a, i| a + (gyd[i * k + kk] * x.data()[i * f + j]).as_f64());
            gw[kk * f + j] = T::from_f64(acc);
        }
    }
    let gb = (0..k)
        .map(|kk| T::from_f64((0..n).fold(0.0, |a, i| a + gyd[i * k + kk].as_f64())))
        .collect();
    Ok((
        Tensor::from_parts_unchecked(vec![n, f], gx),
        Tensor::from_parts_unchecked(vec![k, f], gw),
        Tensor::from_parts_unchecked(vec![k], gb),
    ))
}

/// Mean over every spatial location per (n, c); `[N, C, ...] -> [N, C]`.
///
/// The reduction is independent of location order, so permuting locations
/// leaves the result bit-identical.
pub fn global_avg_pool<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() < 3 {
        return Err(Error::shape(format!(
            "global_avg_pool expects [N, C, spatial...], got {:?}",
            x.shape()
        )));
    }
    let (n, c) = (x.shape()[0], x.shape()[1]);
    let m: usize = x.shape()[2..].iter().product();
    let data = x
        .data()
        .chunks_exact(m)
        .map(|s| T::from_f64(order_free_sum(s) / m as f64))
        .collect();
    Ok(Tensor::from_parts_unchecked(vec![n, c], data))
}

/// `sum_i weights[i] * x[i]`, a rank-0 result.
pub fn weighted_sum<T: Real>(x: &Tensor<T>, weights: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != weights.shape() {
        return Err(Error::shape(format!(
            "weighted_sum: {:?} vs {:?}",
            x.shape(),
            weights.shape()
        )));
    }
    let acc = x
        .data()
        .iter()
        .zip(weights.data())
        .fold(0.0f64, |a, (&v, &w)| a + (v * w).as_f64());
    Ok(Tensor::scalar(T::from_f64(acc)))
}

pub fn sum<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    Tensor::scalar(T::from_f64(sum_f64(x.data())))
}
