//! Finite-difference verification of adjoint rules.
//!
//! The analytic gradient of a random scalar projection `s = Σ r ⊙ f(x)` is
//! compared against central differences with step `1e-4`. The error for
//! one input is `max_j |a_j − n_j| / max(‖a‖∞, ‖n‖∞)`; the reported error is
//! the maximum over inputs.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{AdjointRule, Tape, Var};

pub const FD_STEP: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Worst relative error over all inputs.
    pub max_rel_error: f64,
    /// Per-input relative errors, in input order.
    pub per_input: Vec<f64>,
    /// Number of coordinates perturbed.
    pub coords_checked: usize,
}

fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if scale < 1e-12 {
        return analytic
            .iter()
            .zip(numeric)
            .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    }
    analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs() / scale))
}

fn projection(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_ad))
}

fn finite_or_fail(t: &Tensor<f64>, location: impl FnOnce() -> String) -> Result<()> {
    match t.first_non_finite() {
        Some(i) => Err(Error::numeric(location(), format!("element {i} is not finite"))),
        None => Ok(()),
    }
}

fn compare(
    inputs: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    seed: u64,
    max_coords: Option<usize>,
    mut objective: impl FnMut(&[Tensor<f64>]) -> Result<f64>,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(17));
    let mut per_input = Vec::with_capacity(inputs.len());
    let mut coords_checked = 0;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, grad) in analytic.iter().enumerate() {
        let len = inputs[i].len();
        let coords: Vec<usize> = match max_coords {
            Some(m) if m < len => {
                let mut c = sample(&mut rng, len, m).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..len).collect(),
        };
        let mut a = Vec::with_capacity(coords.len());
        let mut n = Vec::with_capacity(coords.len());
        for &j in &coords {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + FD_STEP;
            let plus = objective(&work)?;
            work[i].data_mut()[j] = orig - FD_STEP;
            let minus = objective(&work)?;
            work[i].data_mut()[j] = orig;
            let fd = (plus - minus) / (2.0 * FD_STEP);
            if !fd.is_finite() {
                return Err(Error::numeric(
                    format!("input {i} element {j}"),
                    "finite difference is not finite",
                ));
            }
            a.push(grad.data()[j]);
            n.push(fd);
        }
        coords_checked += coords.len();
        per_input.push(relative_error(&a, &n));
    }
    Ok(GradCheckReport {
        max_rel_error: per_input.iter().fold(0.0, |m: f64, &e| m.max(e)),
        per_input,
        coords_checked,
    })
}

/// Checks a single rule; returns the maximum relative error.
pub fn check_adjoint(rule: &dyn AdjointRule<f64>, inputs: &[Tensor<f64>], seed: u64) -> Result<f64> {
    for (i, x) in inputs.iter().enumerate() {
        finite_or_fail(x, || format!("{} input {i}", rule.name()))?;
    }
    let refs: Vec<&Tensor<f64>> = inputs.iter().collect();
    let out = rule.forward(&refs)?;
    finite_or_fail(&out, || format!("{} output", rule.name()))?;
    let r = projection(out.shape(), seed);
    let needs = vec![true; inputs.len()];
    let grads = rule.backward(&refs, &out, &r, &needs);
    let analytic: Vec<Tensor<f64>> = grads
        .into_iter()
        .enumerate()
        .map(|(i, g)| {
            let g = g.ok_or_else(|| {
                Error::numeric(format!("{} input {i}", rule.name()), "no cotangent returned")
            })?;
            g.expect_shape(inputs[i].shape())?;
            finite_or_fail(&g, || format!("{} cotangent {i}", rule.name()))?;
            Ok(g)
        })
        .collect::<Result<_>>()?;
    let report = compare(inputs, &analytic, seed, None, |xs| {
        let refs: Vec<&Tensor<f64>> = xs.iter().collect();
        Ok(rule.forward(&refs)?.dot(&r))
    })?;
    Ok(report.max_rel_error)
}

/// Checks the gradient of an arbitrary tape-built function with respect to
/// all of `inputs`. With `max_coords`, at most that many randomly chosen
/// coordinates per input are perturbed.
pub fn check_function<F>(f: F, inputs: &[Tensor<f64>], seed: u64, max_coords: Option<usize>) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let tape = Tape::checked();
    let vars: Vec<Var<'_, f64>> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let out = f(&tape, &vars)?;
    let out_value = out.value();
    let r = projection(out_value.shape(), seed);
    let grads = tape.backward_with(out, r.clone())?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.get_or_zeros(v)).collect();
    compare(inputs, &analytic, seed, max_coords, |xs| {
        let tape = Tape::checked();
        let vars: Vec<Var<'_, f64>> = xs.iter().map(|x| tape.param(x.clone())).collect();
        let out = f(&tape, &vars)?;
        let v = out.value().dot(&r);
        Ok(v)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ops;

    #[test]
    fn catches_a_wrong_adjoint() {
        struct Bad;
        impl AdjointRule<f64> for Bad {
            fn name(&self) -> &'static str {
                "bad"
            }
            fn forward(&self, inputs: &[&Tensor<f64>]) -> Result<Tensor<f64>> {
                Ok(inputs[0].map(|x| x * x))
            }
            fn backward(&self, inputs: &[&Tensor<f64>], _: &Tensor<f64>, cot: &Tensor<f64>, _: &[bool]) -> Vec<Option<Tensor<f64>>> {
                // missing factor of two
                vec![Some(inputs[0].zip_map(cot, |x, g| x * g).unwrap())]
            }
        }
        let x = Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        assert!(check_adjoint(&Bad, &[x], 0).unwrap() > 0.1);
    }

    #[test]
    fn non_finite_input_is_reported() {
        let x = Tensor::new(&[2], vec![1.0, f64::NAN]).unwrap();
        let err = check_adjoint(&ops::Relu, &[x], 0).unwrap_err();
        assert!(err.to_string().contains("relu input 0"));
    }

    #[test]
    fn composite_function() {
        let a = Tensor::from_fn(&[3, 4], |i| (i as f64 * 0.3).sin());
        let b = Tensor::from_fn(&[4, 2], |i| (i as f64 * 0.7).cos());
        let report = check_function(
            |_, v| v[0].matmul(v[1])?.gelu()?.softmax_rows(),
            &[a, b],
            3,
            None,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
        assert_eq!(report.coords_checked, 20);
    }
}
