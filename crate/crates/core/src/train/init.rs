use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::nn::{Init, Model, ParamSet};

/// `√(6 / (fan_in + fan_out))`
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Draws every `Init::Xavier` parameter from `U(−a, a)` with the Xavier
/// bound `a`, zeroes `Init::Zeros` and fills `Init::Ones`. Parameters are
/// visited in registration order, so a seed fixes the whole model.
pub fn xavier_uniform_params(params: &mut ParamSet, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in params.iter_mut() {
        let values = p.tensor.values_mut();
        match p.init {
            Init::Xavier { fan_in, fan_out } => {
                let a = xavier_bound(fan_in, fan_out);
                values.iter_mut().for_each(|v| *v = rng.random_range(-a..a));
            }
            Init::Zeros => values.fill(0.0),
            Init::Ones => values.fill(1.0),
        }
        p.tensor.zero_grad();
    }
}

pub fn xavier_uniform_init(model: &mut Model, seed: u64) {
    xavier_uniform_params(model.params_mut(), seed);
}
