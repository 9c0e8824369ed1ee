use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First/second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let first: Vec<Vec<T>> = params.into_iter().map(|p| vec![T::zero(); p.len()]).collect();
        let second = first.clone();
        Self { config, step: 0, first, second }
    }
}

/// One bias-corrected Adam update over every parameter tensor.
pub fn adam_step<T: Real>(params: &mut [&mut Tensor<T>], grads: &[&Tensor<T>], state: &mut AdamState<T>) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(Error::Shape(format!(
            "adam: {} params, {} grads, {} moment buffers",
            params.len(),
            grads.len(),
            state.first.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.len() != state.first[i].len() {
            return Err(Error::Shape(format!("adam: tensor {i} param {:?} vs grad {:?}", p.shape(), g.shape())));
        }
    }

    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let step_size = T::lit(c.learning_rate / (1.0 - c.beta1.powi(t)));
    let v_corr = T::lit(1.0 / (1.0 - c.beta2.powi(t)));
    let (b1, b2, eps) = (T::lit(c.beta1), T::lit(c.beta2), T::lit(c.epsilon));
    let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);

    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.first.iter_mut().zip(state.second.iter_mut())) {
        for (((w, &gr), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + one_b1 * gr;
            *vi = b2 * *vi + one_b2 * gr * gr;
            *w = *w - step_size * *mi / ((*vi * v_corr).sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut w = Tensor::<f64>::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let g = Tensor::from_vec(&[3], vec![0.3, -7.0, 1e-3]).unwrap();
        let mut st = AdamState::new(AdamConfig::default(), [&w]);
        adam_step(&mut [&mut w], &[&g], &mut st).unwrap();
        let want = [1.0 - 1e-3, -2.0 + 1e-3, 0.5 - 1e-3];
        for (a, b) in w.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut w = Tensor::<f32>::from_vec(&[2], vec![0.25, -4.0]).unwrap();
        let g = Tensor::zeros(&[2]);
        let mut st = AdamState::new(AdamConfig::default(), [&w]);
        for _ in 0..100 {
            adam_step(&mut [&mut w], &[&g], &mut st).unwrap();
        }
        assert_eq!(w.data(), &[0.25, -4.0]);
    }

    #[test]
    fn quadratic_bowl_converges() {
        // Minimize f(w) = w², gradient 2w, starting from w = 1.
        let mut w = Tensor::<f64>::from_vec(&[1], vec![1.0]).unwrap();
        let mut st = AdamState::new(AdamConfig { learning_rate: 1e-2, ..Default::default() }, [&w]);
        for _ in 0..200 {
            let g = Tensor::from_vec(&[1], vec![2.0 * w.data()[0]]).unwrap();
            adam_step(&mut [&mut w], &[&g], &mut st).unwrap();
        }
        assert!(w.data()[0].abs() < 0.1, "w = {}", w.data()[0]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut w = Tensor::<f64>::zeros(&[2]);
        let g = Tensor::zeros(&[3]);
        let mut st = AdamState::new(AdamConfig::default(), [&w]);
        assert!(adam_step(&mut [&mut w], &[&g], &mut st).is_err());
    }
}
