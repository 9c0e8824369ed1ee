use rand::seq::index::sample;

use super::layers::Mode;
use super::model::{CnnModel, PARAM_NAMES};
use super::tensor::Tensor;
use super::NnRng;
use crate::error::Result;

/// Smallest denominator used for relative error. Below this, differences
/// are at the level of finite-difference roundoff and are compared
/// absolutely against it.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(parameter name, entries checked, worst relative error)`
    pub per_param: Vec<(&'static str, usize, f64)>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares backprop gradients of the full loss (cross-entropy plus L2)
/// against central differences, on up to `per_layer` randomly chosen
/// entries of every parameter tensor. Runs in eval mode so dropout cannot
/// perturb the comparison.
pub fn grad_check(
    model: &CnnModel<f64>,
    input: &Tensor<f64>,
    label: usize,
    lambda: f64,
    eps: f64,
    per_layer: usize,
    rng: &mut NnRng,
) -> Result<GradCheckReport> {
    let analytic = model.batch_gradients(&[input], &[label], lambda, Mode::Eval, rng)?.grads;
    let mut probe = model.clone();
    let mut per_param = Vec::with_capacity(PARAM_NAMES.len());
    let mut worst_all: f64 = 0.0;

    for (p, name) in PARAM_NAMES.iter().enumerate() {
        let len = model.params()[p].len();
        let picks: Vec<usize> =
            if len <= per_layer { (0..len).collect() } else { sample(rng, len, per_layer).into_vec() };
        let mut worst: f64 = 0.0;
        for &i in &picks {
            let original = probe.params()[p].data()[i];
            probe.params_mut()[p].data_mut()[i] = original + eps;
            let plus = probe.batch_loss(&[input], &[label], lambda, Mode::Eval, rng)?;
            probe.params_mut()[p].data_mut()[i] = original - eps;
            let minus = probe.batch_loss(&[input], &[label], lambda, Mode::Eval, rng)?;
            probe.params_mut()[p].data_mut()[i] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(analytic.0[p].data()[i], numeric));
        }
        worst_all = worst_all.max(worst);
        per_param.push((*name, picks.len(), worst));
    }
    Ok(GradCheckReport { max_relative_error: worst_all, per_param })
}
