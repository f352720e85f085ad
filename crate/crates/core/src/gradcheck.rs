//! Central finite-difference checks of tape gradients (double precision).

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Outcome of a gradient check over one or more inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(1, |analytic|, |numeric|)`.
    pub max_rel_error: f64,
    /// `(input index, element index)` of the worst element.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

/// Fixed projection used to turn a non-scalar output into a scalar.
fn projection(shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |i| 1.0 + 0.5 * ((i as f64) * 0.618_034 + 0.3).sin())
}

fn scalar_out<F>(f: &F, tape: &mut Tape<f64>, inputs: &[Var]) -> Result<Var>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let out = f(tape, inputs)?;
    if tape.value(out).len() == 1 {
        return Ok(out);
    }
    let w = projection(tape.value(out).shape());
    tape.weighted_sum(out, w)
}

fn evaluate<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = scalar_out(f, &mut tape, &vars)?;
    tape.value(out).item()
}

/// Checks the gradient of `f` with respect to every element of every input.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor<f64>], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = scalar_out(&f, &mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for (ii, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[ii].shape().to_vec()));
        for e in 0..inputs[ii].len() {
            let base = inputs[ii].data()[e];
            probe[ii] = with_element(&inputs[ii], e, base + h);
            let plus = evaluate(&f, &probe)?;
            probe[ii] = with_element(&inputs[ii], e, base - h);
            let minus = evaluate(&f, &probe)?;
            probe[ii] = inputs[ii].clone();

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.data()[e];
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((ii, e));
            }
        }
    }
    Ok(report)
}

/// Single-input form of [`grad_check_many`]; returns the max relative error.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let report = grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), h)?;
    Ok(report.max_rel_error)
}

fn with_element(t: &Tensor<f64>, index: usize, value: f64) -> Tensor<f64> {
    let mut data = t.data().to_vec();
    data[index] = value;
    Tensor::new(t.shape().to_vec(), data).expect("shape unchanged")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::DEFAULT_NORM_EPS;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_is_exact() {
        let x = Tensor::new([6], vec![0.3, -0.2, 1.1, 0.05, -0.7, 0.9]).unwrap();
        let err = grad_check(|_, v| Ok(v), &x, 1e-5).unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn relu_away_from_kink() {
        let h = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Tensor::from_fn([20], |_| {
            let m: f64 = rng.random_range(20.0 * h..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        });
        let err = grad_check(|t, v| t.relu(v), &x, h).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn instance_norm_random_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::from_fn([2, 2, 2, 3, 2], |_| rng.random_range(-2.0..2.0));
        let gamma = Tensor::from_fn([2], |_| rng.random_range(0.5..1.5));
        let beta = Tensor::from_fn([2], |_| rng.random_range(-0.5..0.5));
        let report = grad_check_many(
            |t, v| t.instance_norm3d(v[0], v[1], v[2], DEFAULT_NORM_EPS),
            &[x, gamma, beta],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-5, "{report:?}");
    }
}
