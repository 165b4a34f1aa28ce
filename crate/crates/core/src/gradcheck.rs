//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates forward values; it never touches
//! [`Tape::backward`], so it is an independent oracle for the tape's
//! backward rules.

use crate::error::Result;
use crate::tensor::{Tape, Tensor, Var};

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Per-input comparison between tape and finite-difference gradients.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)` per input.
    pub relative_errors: Vec<f64>,
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
}

impl GradCheck {
    pub fn max_relative_error(&self) -> f64 {
        self.relative_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Relative error between two gradient vectors, norm-wise.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Evaluates `f` on a fresh tape with `inputs` as gradient-tracked leaves
/// and compares the backward pass with central differences of step `h`.
///
/// `f` must return a one-element tensor.
pub fn check<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();

    let eval = |probe: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = probe.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.value(out).item()
    };

    let mut numeric = Vec::with_capacity(inputs.len());
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for k in 0..inputs.len() {
        let mut g = vec![0.0; inputs[k].len()];
        for (i, gi) in g.iter_mut().enumerate() {
            let orig = inputs[k].values()[i];
            probe[k].values_mut()[i] = orig + h;
            let plus = eval(&probe)?;
            probe[k].values_mut()[i] = orig - h;
            let minus = eval(&probe)?;
            probe[k].values_mut()[i] = orig;
            *gi = (plus - minus) / (2.0 * h);
        }
        numeric.push(g);
    }
    let relative_errors = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(a, n))
        .collect();
    Ok(GradCheck {
        relative_errors,
        analytic,
        numeric,
    })
}

/// Deterministic pseudo-random tensor with entries in `[-scale, scale)`.
pub fn random_tensor(shape: &[usize], seed: u64, scale: f64) -> Tensor {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let values = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), values).expect("shape and value count agree")
}
