//! Central finite-difference verification of taped gradients.

use alloc::vec::Vec;

use super::{ParamSet, Tape, Tensor, Var};
use crate::Result;

/// Step for central differences.
pub const STEP: f64 = 1e-5;
/// Denominator floor of the relative error.
pub const FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Largest relative error between the taped gradient of `f` and central
/// differences, over every element of every input.
///
/// `f` maps tracked inputs to a scalar loss and must be deterministic.
pub fn max_relative_error<F>(inputs: &[Tensor<f64>], f: F) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var<f64>]) -> Result<Var<f64>>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var<f64>> = inputs.iter().map(|x| tape.input(x.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(&loss)?;

    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::inference();
        let vars: Vec<Var<f64>> = values.iter().map(|x| tape.constant(x.clone())).collect();
        Ok(f(&mut tape, &vars)?.value().item())
    };

    let mut worst = 0.0f64;
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads
            .of(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        for j in 0..inputs[i].numel() {
            let x = inputs[i].data()[j];
            probe[i].data_mut()[j] = x + STEP;
            let plus = eval(&probe)?;
            probe[i].data_mut()[j] = x - STEP;
            let minus = eval(&probe)?;
            probe[i].data_mut()[j] = x;
            let numeric = (plus - minus) / (2.0 * STEP);
            worst = worst.max(relative_error(analytic.data()[j], numeric));
        }
    }
    Ok(worst)
}

/// Like [`max_relative_error`] for a function of a parameter set and one
/// input tensor; every parameter scalar and every input scalar is probed.
pub fn max_relative_error_params<F>(params: &ParamSet<f64>, input: &Tensor<f64>, f: F) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &ParamSet<f64>, &Var<f64>) -> Result<Var<f64>>,
{
    let mut tape = Tape::new();
    let x = tape.input(input.clone());
    let loss = f(&mut tape, params, &x)?;
    let grads = tape.backward(&loss)?;
    let mut accumulated = params.clone();
    accumulated.zero_grad();
    accumulated.accumulate(&grads);

    let eval = |p: &ParamSet<f64>, x: &Tensor<f64>| -> Result<f64> {
        let mut tape = Tape::inference();
        let x = tape.constant(x.clone());
        Ok(f(&mut tape, p, &x)?.value().item())
    };

    let mut worst = 0.0f64;
    let mut probe = params.clone();
    for index in 0..params.len() {
        let analytic = accumulated.by_index(index).grad_or_zeros();
        let base = params.by_index(index).value.as_ref().clone();
        for j in 0..base.numel() {
            let mut shifted = base.clone();
            shifted.data_mut()[j] = base.data()[j] + STEP;
            probe.set_value(index, shifted.clone())?;
            let plus = eval(&probe, input)?;
            shifted.data_mut()[j] = base.data()[j] - STEP;
            probe.set_value(index, shifted)?;
            let minus = eval(&probe, input)?;
            worst = worst.max(relative_error(analytic.data()[j], (plus - minus) / (2.0 * STEP)));
        }
        probe.set_value(index, base)?;
    }

    let analytic = grads.of(&x).cloned().unwrap_or_else(|| Tensor::zeros(input.shape()));
    let mut shifted = input.clone();
    for j in 0..input.numel() {
        shifted.data_mut()[j] = input.data()[j] + STEP;
        let plus = eval(params, &shifted)?;
        shifted.data_mut()[j] = input.data()[j] - STEP;
        let minus = eval(params, &shifted)?;
        shifted.data_mut()[j] = input.data()[j];
        worst = worst.max(relative_error(analytic.data()[j], (plus - minus) / (2.0 * STEP)));
    }
    Ok(worst)
}
