use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// L2 coefficient added to the gradient before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

/// First and second moment buffers, one per parameter.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros = |p: &crate::nn::Param| vec![0.0; p.tensor.len()];
        AdamState {
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
        }
    }
}

/// One Adam update at step `t` (1-based) from the gradients stored on the
/// parameters. Missing gradients count as zero.
pub fn adam_step(params: &mut ParamSet, state: &mut AdamState, t: u64, config: &AdamConfig) -> Result<()> {
    if t < 1 {
        return Err(Error::contract("Adam step counter starts at 1"));
    }
    if state.m.len() != params.len() {
        return Err(Error::contract("optimiser state does not match the parameter set"));
    }
    let c1 = 1.0 - config.beta1.powi(t as i32);
    let c2 = 1.0 - config.beta2.powi(t as i32);
    for (k, p) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        let grad = p.tensor.grad().map(|g| g.to_vec());
        let values = p.tensor.values_mut();
        for i in 0..values.len() {
            let g = grad.as_ref().map_or(0.0, |g| g[i]) + config.weight_decay * values[i];
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            values[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Init;

    fn scalar(value: f64) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.add("theta", &[1], Init::Zeros);
        ps.get_mut(0).tensor.values_mut()[0] = value;
        ps
    }

    fn set_grad(ps: &mut ParamSet, g: f64) {
        let t = &mut ps.get_mut(0).tensor;
        t.zero_grad();
        t.accumulate_grad(&[g]).unwrap();
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let mut ps = scalar(0.37);
        set_grad(&mut ps, 0.0);
        let mut st = AdamState::new(&ps);
        let cfg = AdamConfig { weight_decay: 0.0, ..AdamConfig::default() };
        for t in 1..=5 {
            adam_step(&mut ps, &mut st, t, &cfg).unwrap();
        }
        assert_eq!(ps.get(0).tensor.values(), &[0.37]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [3.0, -0.02] {
            let mut ps = scalar(1.0);
            set_grad(&mut ps, g);
            let mut st = AdamState::new(&ps);
            let cfg = AdamConfig { weight_decay: 0.0, ..AdamConfig::default() };
            adam_step(&mut ps, &mut st, 1, &cfg).unwrap();
            let step = ps.get(0).tensor.values()[0] - 1.0;
            assert!((step + 1e-3 * g.signum()).abs() < 1e-9, "{step}");
        }
    }

    #[test]
    fn step_zero_is_rejected() {
        let mut ps = scalar(1.0);
        let mut st = AdamState::new(&ps);
        assert!(adam_step(&mut ps, &mut st, 0, &AdamConfig::default()).is_err());
    }

    #[test]
    fn quadratic_converges() {
        let mut ps = scalar(1.0);
        let mut st = AdamState::new(&ps);
        let cfg = AdamConfig { learning_rate: 0.1, weight_decay: 0.0, ..AdamConfig::default() };
        for t in 1..=100 {
            let theta = ps.get(0).tensor.values()[0];
            set_grad(&mut ps, 2.0 * theta);
            adam_step(&mut ps, &mut st, t, &cfg).unwrap();
        }
        assert!(ps.get(0).tensor.values()[0].abs() < 0.1);
    }

    #[test]
    fn weight_decay_pulls_towards_zero() {
        let mut ps = scalar(2.0);
        set_grad(&mut ps, 0.0);
        let mut st = AdamState::new(&ps);
        adam_step(&mut ps, &mut st, 1, &AdamConfig::default()).unwrap();
        assert!(ps.get(0).tensor.values()[0] < 2.0);
    }
}
