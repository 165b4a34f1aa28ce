//! Model assembly: the TCN → Bi-LSTM → gated attention → Bi-LSTM → dense
//! network, plus the two baselines it is compared against.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::attention::{maybe_dropout, reborrow, AttentionConfig, FeedForward, GatedAttentionBlock};
use super::linear::Linear;
use super::lstm::{Recurrent, RecurrentConfig};
use super::params::ParamSet;
use super::tcn::{TcnBlock, TcnConfig};
use super::tft::{Tft, TftConfig};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// What sits between encoder and decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mixer {
    GatedAttention,
    /// Two-layer ReLU feed-forward of the encoder's width.
    FeedForward,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TcftBedConfig {
    pub in_channels: usize,
    /// `None` feeds the raw features straight into the encoder.
    pub tcn: Option<TcnConfig>,
    pub encoder: RecurrentConfig,
    pub mixer: Mixer,
    pub attention: AttentionConfig,
    pub decoder: RecurrentConfig,
    pub head_hidden: usize,
    pub dropout: f64,
}

impl TcftBedConfig {
    /// Full-width defaults: 64 filters, k = 3, dilations 1..16, LSTM hidden
    /// 64 in both directions, 8 attention heads over 128 features, fc1 of 64.
    pub fn new(in_channels: usize) -> Self {
        Self::scaled(in_channels, 64)
    }

    /// Every width derived from one `hidden` size (filters, LSTM hidden and
    /// fc1 equal `hidden`; attention runs over `2·hidden`).
    pub fn scaled(in_channels: usize, hidden: usize) -> Self {
        let d_model = 2 * hidden;
        let heads = [8, 4, 2, 1].into_iter().find(|h| d_model % h == 0).unwrap_or(1);
        TcftBedConfig {
            in_channels,
            tcn: Some(TcnConfig {
                filters: hidden,
                ..TcnConfig::default()
            }),
            encoder: RecurrentConfig {
                hidden,
                bidirectional: true,
            },
            mixer: Mixer::GatedAttention,
            attention: AttentionConfig {
                d_model,
                heads,
                dropout: 0.2,
            },
            decoder: RecurrentConfig {
                hidden,
                bidirectional: true,
            },
            head_hidden: hidden,
            dropout: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PureTcnConfig {
    pub in_channels: usize,
    pub tcn: TcnConfig,
    pub head_hidden: usize,
    pub dropout: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ModelConfig {
    TcftBed(TcftBedConfig),
    PureTcn(PureTcnConfig),
    OriginalTft(TftConfig),
}

impl ModelConfig {
    pub fn in_channels(&self) -> usize {
        match self {
            ModelConfig::TcftBed(c) => c.in_channels,
            ModelConfig::PureTcn(c) => c.in_channels,
            ModelConfig::OriginalTft(c) => c.in_channels,
        }
    }
}

#[derive(Clone, Debug)]
enum MixerNet {
    Attention {
        input: Option<Linear>,
        block: GatedAttentionBlock,
    },
    FeedForward(FeedForward),
}

#[derive(Clone, Debug)]
struct TcftBedNet {
    tcn: Option<TcnBlock>,
    encoder: Recurrent,
    mixer: MixerNet,
    decoder: Recurrent,
    fc1: Linear,
    fc2: Linear,
    dropout: f64,
}

#[derive(Clone, Debug)]
struct PureTcnNet {
    tcn: TcnBlock,
    fc1: Linear,
    fc2: Linear,
    dropout: f64,
}

#[derive(Clone, Debug)]
enum Net {
    TcftBed(TcftBedNet),
    PureTcn(PureTcnNet),
    OriginalTft(Tft),
}

/// Result of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    /// `[B]` RUL predictions.
    pub prediction: Var,
    /// `[B, heads, T, T]` attention weights, when the model has attention.
    pub attention: Option<Var>,
}

/// A configured network and its parameters.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: ParamSet,
    net: Net,
}

fn check_dropout(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
    }
    Ok(())
}

fn head(params: &mut ParamSet, input: usize, hidden: usize) -> Result<(Linear, Linear)> {
    if hidden == 0 {
        return Err(Error::config("head_hidden must be positive"));
    }
    Ok((
        Linear::new(params, "head.fc1", input, hidden),
        Linear::new(params, "head.fc2", hidden, 1),
    ))
}

/// `fc2(dropout(ReLU(fc1(x))))` reshaped to `[B]`.
fn run_head(
    tape: &mut Tape,
    vars: &[Var],
    fc1: &Linear,
    fc2: &Linear,
    x: Var,
    dropout: f64,
    rng: Option<&mut dyn RngCore>,
) -> Result<Var> {
    let batch = tape.shape(x)[0];
    let h = fc1.forward(tape, vars, x)?;
    let h = tape.relu(h);
    let h = maybe_dropout(tape, h, dropout, rng)?;
    let y = fc2.forward(tape, vars, h)?;
    tape.reshape(y, &[batch])
}

impl Model {
    /// Builds the network with zero-valued parameters (layer-norm gains are
    /// one); see `train::xavier_uniform_init`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        let mut params = ParamSet::new();
        if config.in_channels() == 0 {
            return Err(Error::config("model needs at least one input channel"));
        }
        let net = match &config {
            ModelConfig::TcftBed(c) => Net::TcftBed(Self::build_tcft_bed(&mut params, c)?),
            ModelConfig::PureTcn(c) => {
                check_dropout(c.dropout)?;
                let tcn = TcnBlock::new(&mut params, "tcn", c.in_channels, c.tcn.clone())?;
                let (fc1, fc2) = head(&mut params, tcn.out_channels(), c.head_hidden)?;
                Net::PureTcn(PureTcnNet {
                    tcn,
                    fc1,
                    fc2,
                    dropout: c.dropout,
                })
            }
            ModelConfig::OriginalTft(c) => {
                check_dropout(c.dropout)?;
                Net::OriginalTft(Tft::new(&mut params, "tft", c.clone())?)
            }
        };
        Ok(Model { config, params, net })
    }

    fn build_tcft_bed(params: &mut ParamSet, c: &TcftBedConfig) -> Result<TcftBedNet> {
        check_dropout(c.dropout)?;
        let tcn = match &c.tcn {
            Some(t) => Some(TcnBlock::new(params, "tcn", c.in_channels, t.clone())?),
            None => None,
        };
        let features = tcn.as_ref().map_or(c.in_channels, |t| t.out_channels());
        let encoder = Recurrent::new(params, "encoder", features, c.encoder)?;
        let width = encoder.output_dim();
        let (mixer, mixed) = match c.mixer {
            Mixer::GatedAttention => {
                let d = c.attention.d_model;
                let input = (width != d).then(|| Linear::new(params, "attention.input", width, d));
                let block = GatedAttentionBlock::new(params, "attention", c.attention)?;
                (MixerNet::Attention { input, block }, d)
            }
            Mixer::FeedForward => (MixerNet::FeedForward(FeedForward::new(params, "feed_forward", width)), width),
        };
        let decoder = Recurrent::new(params, "decoder", mixed, c.decoder)?;
        let (fc1, fc2) = head(params, decoder.output_dim(), c.head_hidden)?;
        Ok(TcftBedNet {
            tcn,
            encoder,
            mixer,
            decoder,
            fc1,
            fc2,
            dropout: c.dropout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.count()
    }

    /// Forward pass on `x[B, C, T]` with parameters bound as `vars`. Passing
    /// an RNG switches dropout on (training mode).
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var, mut rng: Option<&mut dyn RngCore>) -> Result<Forward> {
        let s = tape.shape(x).to_vec();
        let c = self.config.in_channels();
        if s.len() != 3 || s[1] != c || s[2] == 0 {
            return Err(Error::dim("model input [B, C, T]", &s, &[c]));
        }
        let steps = s[2];
        match &self.net {
            Net::TcftBed(net) => {
                let features = match &net.tcn {
                    Some(tcn) => tcn.forward(tape, vars, x)?,
                    None => x,
                };
                let seq = tape.permute(features, &[0, 2, 1])?;
                let encoded = net.encoder.forward(tape, vars, seq)?;
                let (mixed, attention) = match &net.mixer {
                    MixerNet::Attention { input, block } => {
                        let h = match input {
                            Some(l) => l.forward(tape, vars, encoded)?,
                            None => encoded,
                        };
                        let att = block.forward(tape, vars, h, reborrow(&mut rng))?;
                        (att.output, Some(att.weights))
                    }
                    MixerNet::FeedForward(ff) => (ff.forward(tape, vars, encoded)?, None),
                };
                let decoded = net.decoder.forward(tape, vars, mixed)?;
                let last = tape.select(decoded, 1, steps - 1)?;
                let prediction = run_head(tape, vars, &net.fc1, &net.fc2, last, net.dropout, rng)?;
                Ok(Forward { prediction, attention })
            }
            Net::PureTcn(net) => {
                let features = net.tcn.forward(tape, vars, x)?;
                let last = tape.select(features, 2, steps - 1)?;
                let prediction = run_head(tape, vars, &net.fc1, &net.fc2, last, net.dropout, rng)?;
                Ok(Forward {
                    prediction,
                    attention: None,
                })
            }
            Net::OriginalTft(tft) => {
                let seq = tape.permute(x, &[0, 2, 1])?;
                let out = tft.forward(tape, vars, seq, rng)?;
                Ok(Forward {
                    prediction: out.prediction,
                    attention: Some(out.attention),
                })
            }
        }
    }

    /// Inference on `x[B, C, T]` with dropout off.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        tape.set_retain_grads(false);
        let vars = self.params.bind_frozen(&mut tape);
        let xv = tape.constant(x.clone());
        let out = self.forward(&mut tape, &vars, xv, None)?;
        Ok(tape.values(out.prediction).to_vec())
    }

    /// Inference that also returns the attention weights `[B, heads, T, T]`
    /// (`None` for models without attention).
    pub fn predict_with_attention(&self, x: &Tensor) -> Result<(Vec<f64>, Option<Tensor>)> {
        let mut tape = Tape::new();
        let vars = self.params.bind_frozen(&mut tape);
        let xv = tape.constant(x.clone());
        let out = self.forward(&mut tape, &vars, xv, None)?;
        let weights = out.attention.map(|a| tape.value(a).clone());
        Ok((tape.values(out.prediction).to_vec(), weights))
    }
}
