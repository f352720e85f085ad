//! Adam with coupled L2 regularization, step-decay learning rate and
//! micro-batch gradient accumulation.
//!
//! ```text
//! g     = grad + lambda * param          (decayed parameters only)
//! m     = beta1 * m + (1 - beta1) * g
//! v     = beta2 * v + (1 - beta2) * g^2
//! param = param - lr * m_hat / (sqrt(v_hat) + eps)
//! ```
//! with `m_hat = m / (1 - beta1^t)` and `v_hat = v / (1 - beta2^t)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub eta: f64,
    pub eps: f64,
    pub lambda: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            eta: 1e-3,
            eps: 1e-5,
            lambda: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
        }
    }
}

impl AdamHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eps > 0.0 && self.lambda >= 0.0) {
            return Err(Error::config(format!(
                "adam hyperparameters must be positive: eta={} eps={} lambda={}",
                self.eta, self.eps, self.lambda
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::config(format!("{name}={b} must lie in (0, 1)")));
            }
        }
        Ok(())
    }
}

/// First/second moments per parameter and the optimizer step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let m: Vec<Tensor<T>> = shapes.into_iter().map(|s| Tensor::zeros(s.to_vec())).collect();
        Self {
            v: m.clone(),
            m,
            t: 0,
        }
    }

    pub fn for_params(params: &[Tensor<T>]) -> Self {
        Self::new(params.iter().map(Tensor::shape))
    }
}

/// Learning rate for `epoch`: `base * 10^-(epoch / 100)`.
pub fn lr_at(epoch: usize, base: f64) -> f64 {
    base * 10f64.powi(-((epoch / 100) as i32))
}

/// Applies one Adam update in place.
///
/// `decay[i]` selects whether parameter `i` receives the L2 term. Non-finite
/// gradients abort the step before any parameter changes.
pub fn adam_step<T: Real>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    decay: &[bool],
    names: &[String],
    state: &mut AdamState<T>,
    hyper: &AdamHyper,
    lr: f64,
) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::config(format!("learning rate must be > 0, got {lr}")));
    }
    let n = params.len();
    if grads.len() != n || decay.len() != n || state.m.len() != n || names.len() != n {
        return Err(Error::shape(format!(
            "adam_step: {n} params, {} grads, {} decay flags, {} moment slots",
            grads.len(),
            decay.len(),
            state.m.len()
        )));
    }
    for i in 0..n {
        if grads[i].shape() != params[i].shape() || state.m[i].shape() != params[i].shape() {
            return Err(Error::shape(format!(
                "parameter `{}`: shape {:?}, gradient {:?}",
                names[i],
                params[i].shape(),
                grads[i].shape()
            )));
        }
        if let Some(bad) = grads[i].data().iter().find(|v| !v.is_finite()) {
            return Err(Error::Numerics {
                param: names[i].clone(),
                detail: format!("gradient contains {bad}"),
            });
        }
    }

    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (hyper.beta1, hyper.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let (tb1, tb2) = (T::from_f64(b1), T::from_f64(b2));
    let (ob1, ob2) = (T::from_f64(1.0 - b1), T::from_f64(1.0 - b2));
    for i in 0..n {
        let lambda = if decay[i] { T::from_f64(hyper.lambda) } else { T::zero() };
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let w = params[i].data_mut();
        for (((w, &g), mi), vi) in w.iter_mut().zip(grads[i].data()).zip(m).zip(v) {
            let g = g + lambda * *w;
            *mi = tb1 * *mi + ob1 * g;
            *vi = tb2 * *vi + ob2 * g * g;
            let m_hat = mi.as_f64() / c1;
            let v_hat = vi.as_f64() / c2;
            let step = lr * m_hat / (v_hat.sqrt() + hyper.eps);
            *w = T::from_f64(w.as_f64() - step);
        }
    }
    Ok(())
}

/// Running gradient sums over micro-batches.
#[derive(Debug, Clone, PartialEq)]
pub struct Accumulator<T> {
    sums: Vec<Tensor<T>>,
    micro_count: usize,
    target_count: usize,
    average: bool,
}

impl<T: Real> Accumulator<T> {
    /// Averaging accumulator over `target_count` micro-batches.
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a [usize]>, target_count: usize) -> Result<Self> {
        if target_count == 0 {
            return Err(Error::config("accumulation count must be >= 1"));
        }
        Ok(Self {
            sums: shapes.into_iter().map(|s| Tensor::zeros(s.to_vec())).collect(),
            micro_count: 0,
            target_count,
            average: true,
        })
    }

    /// Emit the plain sum instead of the mean when flushing.
    pub fn summing(mut self) -> Self {
        self.average = false;
        self
    }

    pub fn micro_count(&self) -> usize {
        self.micro_count
    }

    pub fn target_count(&self) -> usize {
        self.target_count
    }

    pub fn is_ready(&self) -> bool {
        self.micro_count >= self.target_count
    }

    pub fn is_empty(&self) -> bool {
        self.micro_count == 0
    }

    /// Adds one micro-batch of gradients.
    pub fn accumulate(&mut self, grads: &[Tensor<T>]) -> Result<()> {
        if grads.len() != self.sums.len() {
            return Err(Error::shape(format!(
                "{} gradients for {} accumulator slots",
                grads.len(),
                self.sums.len()
            )));
        }
        if self.is_ready() {
            return Err(Error::config("accumulator is full; flush before adding more"));
        }
        for (s, g) in self.sums.iter().zip(grads) {
            if s.shape() != g.shape() {
                return Err(Error::shape(format!(
                    "gradient shape {:?} vs slot {:?}",
                    g.shape(),
                    s.shape()
                )));
            }
        }
        for (s, g) in self.sums.iter_mut().zip(grads) {
            *s = crate::ops::add(s, g)?;
        }
        self.micro_count += 1;
        Ok(())
    }

    /// Returns the effective gradient and resets the sums.
    ///
    /// Flushing before `target_count` micro-batches is an error unless
    /// `partial` is set (end of epoch); a partial flush averages over the
    /// micro-batches actually seen.
    pub fn flush(&mut self, partial: bool) -> Result<Vec<Tensor<T>>> {
        if self.micro_count == 0 {
            return Err(Error::config("flush of an empty accumulator"));
        }
        if !self.is_ready() && !partial {
            return Err(Error::config(format!(
                "flush after {} of {} micro-batches without partial flag",
                self.micro_count, self.target_count
            )));
        }
        let divisor = if self.average {
            T::from_usize(self.micro_count)
        } else {
            T::one()
        };
        let out = self
            .sums
            .iter_mut()
            .map(|s| {
                let mean = s.map(|v| v / divisor);
                *s = Tensor::zeros(s.shape().to_vec());
                mean
            })
            .collect();
        self.micro_count = 0;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::new([1], vec![v]).unwrap()
    }

    fn step(w: f64, g: f64, hyper: AdamHyper) -> f64 {
        let mut p = scalar(w);
        let mut state = AdamState::for_params(std::slice::from_ref(&p));
        adam_step(
            &mut [&mut p],
            &[scalar(g)],
            &[true],
            &["w".to_string()],
            &mut state,
            &hyper,
            hyper.eta,
        )
        .unwrap();
        p.data()[0]
    }

    #[test]
    fn zero_gradient_without_decay_is_fixed_point() {
        let hyper = AdamHyper {
            lambda: 0.0,
            ..AdamHyper::default()
        };
        assert_eq!(step(0.37, 0.0, hyper), 0.37);
    }

    #[test]
    fn first_step_closed_form() {
        let hyper = AdamHyper {
            lambda: 0.0,
            ..AdamHyper::default()
        };
        let expected = 1.0 - 1e-3 * (2.0 / (2.0 + 1e-5));
        assert!((step(1.0, 2.0, hyper) - expected).abs() < 1e-15);
        assert!((expected - 0.999000005).abs() < 1e-12);
    }

    #[test]
    fn l2_only_first_step() {
        let w = step(1.0, 0.0, AdamHyper::default());
        let expected = 1.0 - 1e-3 * (1e-4 / (1e-4 + 1e-5));
        assert!((w - expected).abs() < 1e-15);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut p = scalar(1.0);
        let mut state = AdamState::for_params(std::slice::from_ref(&p));
        let err = adam_step(
            &mut [&mut p],
            &[scalar(f64::NAN)],
            &[false],
            &["stem.conv_a.weight".to_string()],
            &mut state,
            &AdamHyper::default(),
            1e-3,
        )
        .unwrap_err();
        match err {
            Error::Numerics { param, .. } => assert_eq!(param, "stem.conv_a.weight"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(p.data()[0], 1.0);
        assert_eq!(state.t, 0);
    }

    #[test]
    fn lr_schedule() {
        assert_eq!(lr_at(0, 1e-3), 1e-3);
        assert_eq!(lr_at(99, 1e-3), 1e-3);
        assert!((lr_at(100, 1e-3) - 1e-4).abs() < 1e-18);
        assert!((lr_at(499, 1e-3) - 1e-7).abs() < 1e-20);
    }

    #[test]
    fn accumulator_means() {
        let shape: &[usize] = &[1];
        let mut acc = Accumulator::<f64>::new([shape], 16).unwrap();
        for i in 1..=16 {
            acc.accumulate(&[scalar(i as f64)]).unwrap();
        }
        assert_eq!(acc.flush(false).unwrap()[0].data(), &[8.5]);
        assert!(acc.is_empty());

        for _ in 0..16 {
            acc.accumulate(&[scalar(0.25)]).unwrap();
        }
        assert_eq!(acc.flush(false).unwrap()[0].data(), &[0.25]);
    }

    #[test]
    fn early_flush_needs_partial_flag() {
        let shape: &[usize] = &[1];
        let mut acc = Accumulator::<f32>::new([shape], 16).unwrap();
        acc.accumulate(&[Tensor::new([1], vec![3.0]).unwrap()]).unwrap();
        acc.accumulate(&[Tensor::new([1], vec![5.0]).unwrap()]).unwrap();
        assert!(matches!(acc.flush(false), Err(Error::Config(_))));
        assert_eq!(acc.flush(true).unwrap()[0].data(), &[4.0]);
    }
}
