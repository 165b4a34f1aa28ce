//! A compact temporal fusion transformer used as a comparison baseline.
//!
//! Keeps the pieces the modified model drops: variable selection, a static
//! context (a learned vector, since the inputs carry no static covariates)
//! that seeds the LSTM state and enriches the sequence, gate-add-norm
//! skips, and interpretable multi-head attention with a shared value
//! projection.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::attention::{maybe_dropout, reborrow};
use super::linear::Linear;
use super::lstm::LstmParams;
use super::params::{Init, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TftConfig {
    pub in_channels: usize,
    pub hidden: usize,
    pub heads: usize,
    pub dropout: f64,
}

impl TftConfig {
    pub fn new(in_channels: usize) -> Self {
        TftConfig {
            in_channels,
            hidden: 64,
            heads: 4,
            dropout: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.hidden == 0 {
            return Err(Error::config("TFT sizes must be positive"));
        }
        if self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(Error::config(format!(
                "TFT hidden {} is not divisible into {} heads",
                self.hidden, self.heads
            )));
        }
        Ok(())
    }
}

/// Gated linear unit `σ(x·W_a + b_a) ⊙ (x·W_b + b_b)`.
#[derive(Clone, Debug)]
struct Glu {
    gate: Linear,
    value: Linear,
}

impl Glu {
    fn new(params: &mut ParamSet, name: &str, input: usize, output: usize) -> Self {
        Glu {
            gate: Linear::new(params, &format!("{name}.gate"), input, output),
            value: Linear::new(params, &format!("{name}.value"), input, output),
        }
    }

    fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let g = self.gate.forward(tape, vars, x)?;
        let g = tape.sigmoid(g);
        let v = self.value.forward(tape, vars, x)?;
        tape.mul(g, v)
    }
}

/// `LayerNorm(skip + GLU(dropout(x)))`.
#[derive(Clone, Debug)]
struct GateAddNorm {
    glu: Glu,
    gain: usize,
    bias: usize,
}

impl GateAddNorm {
    fn new(params: &mut ParamSet, name: &str, input: usize, output: usize) -> Self {
        let glu = Glu::new(params, &format!("{name}.glu"), input, output);
        let gain = params.add(format!("{name}.norm.gain"), &[output], Init::Ones);
        let bias = params.add(format!("{name}.norm.bias"), &[output], Init::Zeros);
        GateAddNorm { glu, gain, bias }
    }

    fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        x: Var,
        skip: Var,
        dropout: f64,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        let x = maybe_dropout(tape, x, dropout, rng)?;
        let y = self.glu.forward(tape, vars, x)?;
        let y = tape.add(y, skip)?;
        tape.layer_norm(y, vars[self.gain], vars[self.bias])
    }
}

/// Gated residual network with an optional context input.
#[derive(Clone, Debug)]
struct Grn {
    hidden_in: Linear,
    context: Option<Linear>,
    hidden_out: Linear,
    skip: Option<Linear>,
    out: GateAddNorm,
}

impl Grn {
    fn new(params: &mut ParamSet, name: &str, input: usize, hidden: usize, output: usize, context: bool) -> Self {
        Grn {
            hidden_in: Linear::new(params, &format!("{name}.fc1"), input, hidden),
            context: context.then(|| Linear::without_bias(params, &format!("{name}.context"), hidden, hidden)),
            hidden_out: Linear::new(params, &format!("{name}.fc2"), hidden, hidden),
            skip: (input != output).then(|| Linear::new(params, &format!("{name}.skip"), input, output)),
            out: GateAddNorm::new(params, &format!("{name}.out"), hidden, output),
        }
    }

    fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        a: Var,
        context: Option<Var>,
        dropout: f64,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        let mut h = self.hidden_in.forward(tape, vars, a)?;
        if let (Some(layer), Some(c)) = (&self.context, context) {
            let c = layer.forward(tape, vars, c)?;
            h = tape.add(h, c)?;
        }
        let h = tape.elu(h);
        let h = self.hidden_out.forward(tape, vars, h)?;
        let skip = match &self.skip {
            Some(s) => s.forward(tape, vars, a)?,
            None => a,
        };
        self.out.forward(tape, vars, h, skip, dropout, rng)
    }
}

#[derive(Clone, Debug)]
pub struct Tft {
    config: TftConfig,
    embed_weight: usize,
    embed_bias: usize,
    selection: Grn,
    static_vector: usize,
    static_enrichment_context: Grn,
    static_state_h: Grn,
    static_state_c: Grn,
    lstm: LstmParams,
    lstm_gate: GateAddNorm,
    enrichment: Grn,
    query: Linear,
    key: Linear,
    value: Linear,
    attention_out: Linear,
    attention_gate: GateAddNorm,
    position_wise: Grn,
    output_gate: GateAddNorm,
    head: Linear,
}

/// Output of [`Tft::forward`].
pub struct TftOutput {
    /// `[B]`
    pub prediction: Var,
    /// `[B, heads, T, T]`
    pub attention: Var,
    /// `[B, T, C]`, softmax over variables.
    pub variable_weights: Var,
}

impl Tft {
    pub fn new(params: &mut ParamSet, name: &str, config: TftConfig) -> Result<Self> {
        config.validate()?;
        let (c, d) = (config.in_channels, config.hidden);
        let dk = d / config.heads;
        let embed_weight = params.add(
            format!("{name}.embed.weight"),
            &[c, 1, d],
            Init::Xavier { fan_in: 1, fan_out: d },
        );
        let embed_bias = params.add(format!("{name}.embed.bias"), &[c, d], Init::Zeros);
        Ok(Tft {
            embed_weight,
            embed_bias,
            selection: Grn::new(params, &format!("{name}.selection"), c * d, d, c, false),
            static_vector: params.add(
                format!("{name}.static"),
                &[1, d],
                Init::Xavier { fan_in: 1, fan_out: d },
            ),
            static_enrichment_context: Grn::new(params, &format!("{name}.static_enrichment"), d, d, d, false),
            static_state_h: Grn::new(params, &format!("{name}.static_h"), d, d, d, false),
            static_state_c: Grn::new(params, &format!("{name}.static_c"), d, d, d, false),
            lstm: LstmParams::new(params, &format!("{name}.lstm"), d, d),
            lstm_gate: GateAddNorm::new(params, &format!("{name}.lstm_gate"), d, d),
            enrichment: Grn::new(params, &format!("{name}.enrichment"), d, d, d, true),
            query: Linear::without_bias(params, &format!("{name}.attention.query"), d, d),
            key: Linear::without_bias(params, &format!("{name}.attention.key"), d, d),
            value: Linear::without_bias(params, &format!("{name}.attention.value"), d, dk),
            attention_out: Linear::new(params, &format!("{name}.attention.output"), dk, d),
            attention_gate: GateAddNorm::new(params, &format!("{name}.attention_gate"), d, d),
            position_wise: Grn::new(params, &format!("{name}.position_wise"), d, d, d, false),
            output_gate: GateAddNorm::new(params, &format!("{name}.output_gate"), d, d),
            head: Linear::new(params, &format!("{name}.head"), d, 1),
            config,
        })
    }

    pub fn config(&self) -> &TftConfig {
        &self.config
    }

    /// `x[B, T, C]`; `rng` is `Some` in training mode only.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var, mut rng: Option<&mut dyn RngCore>) -> Result<TftOutput> {
        let s = tape.shape(x).to_vec();
        let (c, d, heads) = (self.config.in_channels, self.config.hidden, self.config.heads);
        if s.len() != 3 || s[2] != c {
            return Err(Error::dim("tft input", &s, &[c]));
        }
        let (batch, steps) = (s[0], s[1]);
        let rows = batch * steps;
        let p = self.config.dropout;

        // Per-variable embeddings: one [1, d] weight per channel, applied as
        // a batched product over the channel axis.
        let xc = tape.permute(x, &[2, 0, 1])?;
        let xc = tape.reshape(xc, &[c, rows, 1])?;
        let emb = tape.batch_matmul(xc, vars[self.embed_weight], false)?;
        let bias = tape.repeat(vars[self.embed_bias], 1, rows)?;
        let emb = tape.add(emb, bias)?;
        let emb = tape.permute(emb, &[1, 0, 2])?; // [rows, C, d]

        let flat = tape.reshape(emb, &[rows, c * d])?;
        let scores = self.selection.forward(tape, vars, flat, None, p, reborrow(&mut rng))?;
        let weights = tape.softmax(scores, 1)?;
        let w3 = tape.reshape(weights, &[rows, 1, c])?;
        let selected = tape.batch_matmul(w3, emb, false)?;
        let selected = tape.reshape(selected, &[batch, steps, d])?;

        let stat = tape.repeat(vars[self.static_vector], 0, batch)?;
        let stat = tape.reshape(stat, &[batch, d])?;
        let c_e = self.static_enrichment_context.forward(tape, vars, stat, None, p, reborrow(&mut rng))?;
        let h0 = self.static_state_h.forward(tape, vars, stat, None, p, reborrow(&mut rng))?;
        let c0 = self.static_state_c.forward(tape, vars, stat, None, p, reborrow(&mut rng))?;

        let hs = self.lstm.run(tape, vars, selected, false, Some((h0, c0)))?;
        let temporal = tape.stack(&hs, 1)?;
        let temporal = self.lstm_gate.forward(tape, vars, temporal, selected, p, reborrow(&mut rng))?;

        let context = tape.repeat(c_e, 1, steps)?;
        let enriched = self.enrichment.forward(tape, vars, temporal, Some(context), p, reborrow(&mut rng))?;

        let dk = d / heads;
        let split = |tape: &mut Tape, v: Var| -> Result<Var> {
            let v = tape.reshape(v, &[batch, steps, heads, dk])?;
            let v = tape.permute(v, &[0, 2, 1, 3])?;
            tape.reshape(v, &[batch * heads, steps, dk])
        };
        let q = self.query.forward(tape, vars, enriched)?;
        let q = split(tape, q)?;
        let k = self.key.forward(tape, vars, enriched)?;
        let k = split(tape, k)?;
        let v = self.value.forward(tape, vars, enriched)?;
        let v = tape.repeat(v, 1, heads)?;
        let v = tape.reshape(v, &[batch * heads, steps, dk])?;
        let scores = tape.batch_matmul(q, k, true)?;
        let scores = tape.scale(scores, 1.0 / (dk as f64).sqrt());
        let attention = tape.softmax(scores, 2)?;
        let per_head = tape.batch_matmul(attention, v, false)?;
        // average the heads: [B, H, T, dk] -> [B, T, dk, H] · 1/H
        let per_head = tape.reshape(per_head, &[batch, heads, steps, dk])?;
        let per_head = tape.permute(per_head, &[0, 2, 3, 1])?;
        let avg = tape.constant(Tensor::full(&[heads, 1], 1.0 / heads as f64));
        let mixed = tape.matmul(per_head, avg)?;
        let mixed = tape.reshape(mixed, &[batch, steps, dk])?;
        let attended = self.attention_out.forward(tape, vars, mixed)?;
        let attended = self.attention_gate.forward(tape, vars, attended, enriched, p, reborrow(&mut rng))?;

        let decoded = self.position_wise.forward(tape, vars, attended, None, p, reborrow(&mut rng))?;
        let decoded = self.output_gate.forward(tape, vars, decoded, temporal, p, reborrow(&mut rng))?;
        let last = tape.select(decoded, 1, steps - 1)?;
        let y = self.head.forward(tape, vars, last)?;
        let prediction = tape.reshape(y, &[batch])?;
        Ok(TftOutput {
            prediction,
            attention: tape.reshape(attention, &[batch, heads, steps, steps])?,
            variable_weights: tape.reshape(weights, &[batch, steps, c])?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check, random_tensor, FD_STEP};

    fn small() -> (ParamSet, Tft) {
        let mut ps = ParamSet::new();
        let cfg = TftConfig { in_channels: 3, hidden: 4, heads: 2, dropout: 0.1 };
        let tft = Tft::new(&mut ps, "tft", cfg).unwrap();
        for (k, p) in ps.iter_mut().enumerate() {
            if !p.name.contains(".norm.") {
                let shape = p.tensor.shape().to_vec();
                p.tensor = random_tensor(&shape, 500 + k as u64, 0.6).with_grad();
            }
        }
        (ps, tft)
    }

    #[test]
    fn shapes_and_stochastic_weights() {
        let (ps, tft) = small();
        let mut tape = Tape::new();
        let vars = ps.bind(&mut tape);
        let x = tape.constant(random_tensor(&[2, 5, 3], 1, 1.0));
        let out = tft.forward(&mut tape, &vars, x, None).unwrap();
        assert_eq!(tape.shape(out.prediction), &[2]);
        assert_eq!(tape.shape(out.attention), &[2, 2, 5, 5]);
        for row in tape.values(out.variable_weights).chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let bad = tape.constant(random_tensor(&[2, 5, 4], 1, 1.0));
        assert!(tft.forward(&mut tape, &vars, bad, None).is_err());
    }

    #[test]
    fn gradient_check() {
        let (ps, tft) = small();
        let inputs: Vec<Tensor> = ps.iter().map(|p| p.tensor.clone()).collect();
        let x = random_tensor(&[2, 4, 3], 2, 1.0);
        let report = check(&inputs, FD_STEP, |tape, v| {
            let x = tape.constant(x.clone());
            let out = tft.forward(tape, v, x, None)?;
            let sq = tape.mul(out.prediction, out.prediction)?;
            Ok(tape.sum(sq))
        })
        .unwrap();
        assert!(report.max_relative_error() < 1e-4, "{:?}", report.relative_errors);
    }
}
