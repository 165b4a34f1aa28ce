//! Multi-head self-attention and the gated attention block.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::linear::Linear;
use super::params::{Init, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub d_model: usize,
    pub heads: usize,
    pub dropout: f64,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            d_model: 128,
            heads: 8,
            dropout: 0.2,
        }
    }
}

impl AttentionConfig {
    pub fn d_k(&self) -> usize {
        self.d_model / self.heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d_model == 0 || self.d_model % self.heads != 0 {
            return Err(Error::config(format!(
                "d_model {} is not divisible into {} heads",
                self.d_model, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout rate {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Applies inverted dropout when an RNG is supplied (training), and is the
/// identity otherwise.
pub fn maybe_dropout(tape: &mut Tape, x: Var, rate: f64, rng: Option<&mut dyn RngCore>) -> Result<Var> {
    match rng {
        Some(rng) if rate > 0.0 => tape.dropout(x, rate, rng),
        _ => Ok(x),
    }
}

/// Reborrows an optional RNG for one call, keeping the original usable.
pub fn reborrow<'a>(rng: &'a mut Option<&mut dyn RngCore>) -> Option<&'a mut dyn RngCore> {
    match rng {
        Some(r) => Some(&mut **r),
        None => None,
    }
}

/// Output of one attention call.
#[derive(Clone, Copy, Debug)]
pub struct Attended {
    /// `[B, T, d_model]`
    pub output: Var,
    /// `[B, heads, T, T]`; each row sums to one.
    pub weights: Var,
}

/// Scaled dot-product self-attention with `heads` heads of width
/// `d_k = d_model / heads`. The Q, K and V projections are stored as one
/// `[d_model, d_model]` matrix each; head `h` owns columns
/// `h·d_k .. (h+1)·d_k`.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    config: AttentionConfig,
}

impl MultiHeadAttention {
    pub fn new(params: &mut ParamSet, name: &str, config: AttentionConfig) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        Ok(MultiHeadAttention {
            query: Linear::without_bias(params, &format!("{name}.query"), d, d),
            key: Linear::without_bias(params, &format!("{name}.key"), d, d),
            value: Linear::without_bias(params, &format!("{name}.value"), d, d),
            output: Linear::new(params, &format!("{name}.output"), d, d),
            config,
        })
    }

    pub fn config(&self) -> &AttentionConfig {
        &self.config
    }

    /// `[B, T, d_model] -> [B·heads, T, d_k]`
    fn split_heads(&self, tape: &mut Tape, x: Var, batch: usize, steps: usize) -> Result<Var> {
        let (h, dk) = (self.config.heads, self.config.d_k());
        let x = tape.reshape(x, &[batch, steps, h, dk])?;
        let x = tape.permute(x, &[0, 2, 1, 3])?;
        tape.reshape(x, &[batch * h, steps, dk])
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Attended> {
        let s = tape.shape(x).to_vec();
        if s.len() != 3 || s[2] != self.config.d_model {
            return Err(Error::dim("multi_head_attention", &s, &[self.config.d_model]));
        }
        let (batch, steps) = (s[0], s[1]);
        let (h, dk) = (self.config.heads, self.config.d_k());
        let q = self.query.forward(tape, vars, x)?;
        let k = self.key.forward(tape, vars, x)?;
        let v = self.value.forward(tape, vars, x)?;
        let q = self.split_heads(tape, q, batch, steps)?;
        let k = self.split_heads(tape, k, batch, steps)?;
        let v = self.split_heads(tape, v, batch, steps)?;
        let scores = tape.batch_matmul(q, k, true)?;
        let scores = tape.scale(scores, 1.0 / (dk as f64).sqrt());
        let weights = tape.softmax(scores, 2)?;
        let heads = tape.batch_matmul(weights, v, false)?;
        let heads = tape.reshape(heads, &[batch, h, steps, dk])?;
        let heads = tape.permute(heads, &[0, 2, 1, 3])?;
        let joined = tape.reshape(heads, &[batch, steps, h * dk])?;
        let output = self.output.forward(tape, vars, joined)?;
        let weights = tape.reshape(weights, &[batch, h, steps, steps])?;
        Ok(Attended { output, weights })
    }
}

/// `σ(x·W_g) ⊙ x`, with `W_g` square over the last axis.
pub fn gated_output(tape: &mut Tape, x: Var, w_g: Var) -> Result<Var> {
    let gate = tape.matmul(x, w_g)?;
    let gate = tape.sigmoid(gate);
    tape.mul(gate, x)
}

/// Attention, dropout, a linear feed-forward map, a sigmoid gate and layer
/// normalisation, in that order.
#[derive(Clone, Debug)]
pub struct GatedAttentionBlock {
    pub attention: MultiHeadAttention,
    pub feed_forward: Linear,
    pub gate: usize,
    pub norm_gain: usize,
    pub norm_bias: usize,
}

impl GatedAttentionBlock {
    pub fn new(params: &mut ParamSet, name: &str, config: AttentionConfig) -> Result<Self> {
        let attention = MultiHeadAttention::new(params, &format!("{name}.mha"), config)?;
        let d = config.d_model;
        let feed_forward = Linear::new(params, &format!("{name}.ff"), d, d);
        let gate = params.add(
            format!("{name}.gate.weight"),
            &[d, d],
            Init::Xavier { fan_in: d, fan_out: d },
        );
        let norm_gain = params.add(format!("{name}.norm.gain"), &[d], Init::Ones);
        let norm_bias = params.add(format!("{name}.norm.bias"), &[d], Init::Zeros);
        Ok(GatedAttentionBlock {
            attention,
            feed_forward,
            gate,
            norm_gain,
            norm_bias,
        })
    }

    pub fn d_model(&self) -> usize {
        self.attention.config.d_model
    }

    /// `rng` is `Some` in training mode only.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var, rng: Option<&mut dyn RngCore>) -> Result<Attended> {
        let att = self.attention.forward(tape, vars, x)?;
        let y = maybe_dropout(tape, att.output, self.attention.config.dropout, rng)?;
        let y = self.feed_forward.forward(tape, vars, y)?;
        let y = gated_output(tape, y, vars[self.gate])?;
        let y = tape.layer_norm(y, vars[self.norm_gain], vars[self.norm_bias])?;
        Ok(Attended {
            output: y,
            weights: att.weights,
        })
    }
}

/// Two-layer ReLU network `d → d → d`, used where the gated attention block
/// is ablated away.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub first: Linear,
    pub second: Linear,
}

impl FeedForward {
    pub fn new(params: &mut ParamSet, name: &str, d: usize) -> Self {
        FeedForward {
            first: Linear::new(params, &format!("{name}.fc1"), d, d),
            second: Linear::new(params, &format!("{name}.fc2"), d, d),
        }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let y = self.first.forward(tape, vars, x)?;
        let y = tape.relu(y);
        self.second.forward(tape, vars, y)
    }
}
