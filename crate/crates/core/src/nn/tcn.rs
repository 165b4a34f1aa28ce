//! Temporal convolutional block: stacked causal dilated convolutions, each
//! wrapped in a ReLU residual.

use serde::{Deserialize, Serialize};

use super::params::{Init, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TcnConfig {
    pub filters: usize,
    pub kernel_size: usize,
    /// One dilation factor per layer.
    pub dilations: Vec<usize>,
}

impl Default for TcnConfig {
    fn default() -> Self {
        TcnConfig {
            filters: 64,
            kernel_size: 3,
            dilations: vec![1, 2, 4, 8, 16],
        }
    }
}

impl TcnConfig {
    /// Exponential schedule `rate·2^i` for `layers` layers, each factor
    /// capped at `max_dilation` (normally the window length).
    pub fn exponential(rate: usize, layers: usize, max_dilation: usize) -> Vec<usize> {
        (0..layers)
            .map(|i| (rate << i).min(max_dilation.max(1)))
            .collect()
    }

    /// `1 + Σ (k − 1)·d`: how many past steps (including the current one)
    /// can influence one output step.
    pub fn receptive_field(&self) -> usize {
        1 + self
            .dilations
            .iter()
            .map(|d| (self.kernel_size - 1) * d)
            .sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size == 0 {
            return Err(Error::config("kernel_size must be >= 1"));
        }
        if self.filters == 0 || self.dilations.is_empty() {
            return Err(Error::config("TCN needs at least one layer and one filter"));
        }
        if self.dilations.contains(&0) {
            return Err(Error::config("dilations must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct TcnLayer {
    weight: usize,
    bias: usize,
    dilation: usize,
}

/// Parameter slots and wiring of a TCN block.
///
/// Layer `l` has weight `[filters, in_channels, kernel_size]`; tap `i` of
/// the kernel multiplies `x(t − d·i)`. When the raw input has a channel count
/// other than `filters`, the first residual goes through a learned 1×1
/// projection.
#[derive(Clone, Debug)]
pub struct TcnBlock {
    config: TcnConfig,
    in_channels: usize,
    layers: Vec<TcnLayer>,
    projection: Option<(usize, usize)>,
}

impl TcnBlock {
    pub fn new(params: &mut ParamSet, name: &str, in_channels: usize, config: TcnConfig) -> Result<Self> {
        config.validate()?;
        let k = config.kernel_size;
        let f = config.filters;
        let mut layers = Vec::with_capacity(config.dilations.len());
        for (l, &dilation) in config.dilations.iter().enumerate() {
            let cin = if l == 0 { in_channels } else { f };
            let weight = params.add(
                format!("{name}.layer{l}.weight"),
                &[f, cin, k],
                Init::Xavier {
                    fan_in: cin * k,
                    fan_out: f * k,
                },
            );
            let bias = params.add(format!("{name}.layer{l}.bias"), &[f], Init::Zeros);
            layers.push(TcnLayer { weight, bias, dilation });
        }
        let projection = (in_channels != f).then(|| {
            let w = params.add(
                format!("{name}.projection.weight"),
                &[f, in_channels, 1],
                Init::Xavier {
                    fan_in: in_channels,
                    fan_out: f,
                },
            );
            let b = params.add(format!("{name}.projection.bias"), &[f], Init::Zeros);
            (w, b)
        });
        Ok(TcnBlock {
            config,
            in_channels,
            layers,
            projection,
        })
    }

    pub fn config(&self) -> &TcnConfig {
        &self.config
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.config.filters
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Causal dilated convolution of layer `layer` on `x[B, C, T]`.
    pub fn causal_conv1d(&self, tape: &mut Tape, vars: &[Var], x: Var, layer: usize) -> Result<Var> {
        let l = &self.layers[layer];
        tape.causal_conv1d(x, vars[l.weight], Some(vars[l.bias]), l.dilation)
    }

    /// `ReLU(conv_output + x̃)`, with `x̃` the 1×1 projection of `x` on the
    /// first layer when channel counts differ.
    pub fn residual(&self, tape: &mut Tape, vars: &[Var], x: Var, conv_output: Var, layer: usize) -> Result<Var> {
        let projection = if layer == 0 {
            self.projection.map(|(w, b)| (vars[w], vars[b]))
        } else {
            None
        };
        tcn_residual(tape, x, conv_output, projection)
    }

    /// Runs every layer on `x[B, C, T]`, returning `[B, filters, T]`.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let shape = tape.shape(x);
        if shape.len() != 3 || shape[1] != self.in_channels {
            return Err(Error::dim("tcn input", shape, &[self.in_channels]));
        }
        let mut h = x;
        for layer in 0..self.layers.len() {
            let y = self.causal_conv1d(tape, vars, h, layer)?;
            h = self.residual(tape, vars, h, y, layer)?;
        }
        Ok(h)
    }
}

/// Residual join `ReLU(y + x̃)`; `projection` (a 1×1 convolution weight and
/// bias) maps `x` to `y`'s channel count first.
pub fn tcn_residual(tape: &mut Tape, x: Var, y: Var, projection: Option<(Var, Var)>) -> Result<Var> {
    let (sx, sy) = (tape.shape(x).to_vec(), tape.shape(y).to_vec());
    if sx.len() != 3 || sy.len() != 3 || sx[0] != sy[0] || sx[2] != sy[2] {
        return Err(Error::dim("tcn_residual", &sx, &sy));
    }
    let skip = match projection {
        Some((w, b)) => tape.causal_conv1d(x, w, Some(b), 1)?,
        None => x,
    };
    let sum = tape.add(y, skip)?;
    Ok(tape.relu(sum))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check, random_tensor, FD_STEP};
    use crate::tensor::Tensor;

    fn conv_once(x: &[f64], kernel: &[f64], dilation: usize) -> Vec<f64> {
        let mut tape = Tape::new();
        let xv = tape.constant(Tensor::new(vec![1, 1, x.len()], x.to_vec()).unwrap());
        let w = tape.constant(Tensor::new(vec![1, 1, kernel.len()], kernel.to_vec()).unwrap());
        let y = tape.causal_conv1d(xv, w, None, dilation).unwrap();
        tape.values(y).to_vec()
    }

    #[test]
    fn identity_and_shift_kernels() {
        let x = [0.3, -1.0, 2.5, 4.0, 0.1];
        assert_eq!(conv_once(&x, &[1.0, 0.0, 0.0], 1), x.to_vec());
        assert_eq!(conv_once(&[1.0, 2.0, 3.0, 4.0], &[0.0, 0.0, 1.0], 1), vec![0.0, 0.0, 1.0, 2.0]);
        // dilation 2 on the last tap delays by 4
        assert_eq!(conv_once(&[1.0, 2.0, 3.0, 4.0, 5.0], &[0.0, 0.0, 1.0], 2), vec![0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn channel_mismatch_is_a_dimension_error() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 2, 5]));
        let w = tape.constant(Tensor::zeros(&[4, 3, 3]));
        assert!(matches!(tape.causal_conv1d(x, w, None, 1), Err(Error::Dimension { .. })));
    }

    #[test]
    fn future_perturbation_never_reaches_the_past() {
        let steps = 20;
        let x = random_tensor(&[1, 2, steps], 1, 1.0);
        let w = random_tensor(&[3, 2, 3], 2, 1.0);
        let run = |x: &Tensor| {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let wv = tape.constant(w.clone());
            let y = tape.causal_conv1d(xv, wv, None, 4).unwrap();
            tape.value(y).clone()
        };
        let base = run(&x);
        for t in 0..steps - 1 {
            let mut probe = x.clone();
            for c in 0..2 {
                probe.values_mut()[c * steps + t + 1] += 0.5;
            }
            let out = run(&probe);
            for f in 0..3 {
                for s in 0..=t {
                    assert_eq!(out.at(&[0, f, s]), base.at(&[0, f, s]), "t={t} s={s}");
                }
            }
        }
    }

    #[test]
    fn residual_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, 2, 3], vec![0.0, 1.0, 2.0, 3.0, 0.5, 0.25]).unwrap());
        let zero = tape.constant(Tensor::zeros(&[1, 2, 3]));
        let out = tcn_residual(&mut tape, x, zero, None).unwrap();
        assert_eq!(tape.values(out), tape.values(x));
        let neg = tape.scale(x, -1.0);
        let out = tcn_residual(&mut tape, x, neg, None).unwrap();
        assert!(tape.values(out).iter().all(|&v| v == 0.0));
        let short = tape.constant(Tensor::zeros(&[1, 2, 2]));
        assert!(tcn_residual(&mut tape, x, short, None).is_err());
    }

    #[test]
    fn residual_gradient_through_both_paths() {
        let x = random_tensor(&[2, 3, 6], 5, 1.0);
        let w = random_tensor(&[4, 3, 3], 6, 1.0);
        let pw = random_tensor(&[4, 3, 1], 7, 1.0);
        let pb = random_tensor(&[4], 8, 0.5);
        let report = check(&[x, w, pw, pb], FD_STEP, |tape, v| {
            let y = tape.causal_conv1d(v[0], v[1], None, 2)?;
            let z = tcn_residual(tape, v[0], y, Some((v[2], v[3])))?;
            let z = tape.mul(z, z)?;
            Ok(tape.sum(z))
        })
        .unwrap();
        assert!(report.max_relative_error() < 1e-5, "{:?}", report.relative_errors);
    }

    #[test]
    fn default_receptive_field_is_63() {
        assert_eq!(TcnConfig::default().receptive_field(), 63);
    }

    #[test]
    fn exponential_schedule_caps_at_window() {
        assert_eq!(TcnConfig::exponential(1, 5, 125), vec![1, 2, 4, 8, 16]);
        assert_eq!(TcnConfig::exponential(16, 5, 125), vec![16, 32, 64, 125, 125]);
        assert_eq!(TcnConfig::exponential(8, 5, 31), vec![8, 16, 31, 31, 31]);
    }

    #[test]
    fn projection_only_when_channels_differ() {
        let mut p = ParamSet::new();
        let block = TcnBlock::new(&mut p, "tcn", 14, TcnConfig::default()).unwrap();
        assert!(p.index_of("tcn.projection.weight").is_some());
        assert_eq!(block.out_channels(), 64);
        let mut q = ParamSet::new();
        TcnBlock::new(&mut q, "tcn", 64, TcnConfig::default()).unwrap();
        assert!(q.index_of("tcn.projection.weight").is_none());
        // 14·64·3 + 64 + 4·(64·64·3 + 64) + 14·64 + 64
        assert_eq!(p.count(), 2752 + 4 * 12352 + 960);
    }
}
