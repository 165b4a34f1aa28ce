//! Model variants for the ablation study and the harness that runs them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::metrics::ScoreConvention;
use super::trainer::{evaluate_multi_window, train_multi_window, MetricsReport, TrainConfig, WindowRun};
use crate::data::PreparedData;
use crate::error::{Error, Result};
use crate::nn::{Mixer, ModelConfig, PureTcnConfig, TcftBedConfig, TcnConfig, TftConfig};

pub const DILATION_RATES: [usize; 5] = [1, 2, 4, 8, 16];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Variant {
    Full,
    NoTcn,
    AttentionReplacedFf,
    /// Encoder/decoder layout: 1 = Bi/Bi, 2 = Bi/LSTM, 3 = LSTM/Bi, 4 = LSTM/LSTM.
    EncoderDecoderCase(u8),
    /// Dilations `r·2^i`, i = 0..4, capped at the window length.
    DilationRate(usize),
    OriginalTftBaseline,
    PureTcnBaseline,
    /// The gated-attention Bi-LSTM encoder/decoder without the TCN front end.
    ModifiedTftOnly,
}

impl Variant {
    pub fn all() -> Vec<Variant> {
        let mut v = vec![Variant::Full, Variant::NoTcn, Variant::AttentionReplacedFf];
        v.extend((1..=4).map(Variant::EncoderDecoderCase));
        v.extend(DILATION_RATES.iter().map(|&r| Variant::DilationRate(r)));
        v.extend([Variant::OriginalTftBaseline, Variant::PureTcnBaseline, Variant::ModifiedTftOnly]);
        v
    }

    pub fn valid_names() -> String {
        Variant::all().iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
    }

    /// Model configuration of this variant for `in_channels` inputs and a
    /// window of `window` steps, with every width derived from `hidden`.
    pub fn model_config(self, in_channels: usize, window: usize, hidden: usize, dropout: f64) -> Result<ModelConfig> {
        let mut base = TcftBedConfig::scaled(in_channels, hidden);
        base.dropout = dropout;
        base.attention.dropout = dropout;
        let config = match self {
            Variant::Full => ModelConfig::TcftBed(base),
            Variant::NoTcn | Variant::ModifiedTftOnly => {
                base.tcn = None;
                ModelConfig::TcftBed(base)
            }
            Variant::AttentionReplacedFf => {
                base.mixer = Mixer::FeedForward;
                ModelConfig::TcftBed(base)
            }
            Variant::EncoderDecoderCase(case) => {
                let (enc, dec) = match case {
                    1 => (true, true),
                    2 => (true, false),
                    3 => (false, true),
                    4 => (false, false),
                    _ => return Err(Error::config(format!("encoder/decoder case {case} is not in 1..=4"))),
                };
                base.encoder.bidirectional = enc;
                base.decoder.bidirectional = dec;
                ModelConfig::TcftBed(base)
            }
            Variant::DilationRate(rate) => {
                if !DILATION_RATES.contains(&rate) {
                    return Err(Error::config(format!("dilation rate {rate} is not one of {DILATION_RATES:?}")));
                }
                let tcn = base.tcn.as_mut().expect("full model has a TCN");
                tcn.dilations = TcnConfig::exponential(rate, tcn.dilations.len(), window);
                ModelConfig::TcftBed(base)
            }
            Variant::OriginalTftBaseline => ModelConfig::OriginalTft(TftConfig {
                in_channels,
                hidden,
                heads: [4, 2, 1].into_iter().find(|h| hidden % h == 0).unwrap_or(1),
                dropout,
            }),
            Variant::PureTcnBaseline => ModelConfig::PureTcn(PureTcnConfig {
                in_channels,
                tcn: TcnConfig {
                    filters: hidden,
                    ..TcnConfig::default()
                },
                head_hidden: hidden,
                dropout,
            }),
        };
        Ok(config)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Full => f.write_str("full"),
            Variant::NoTcn => f.write_str("no_tcn"),
            Variant::AttentionReplacedFf => f.write_str("attention_replaced_ff"),
            Variant::EncoderDecoderCase(c) => write!(f, "case{c}"),
            Variant::DilationRate(r) => write!(f, "dilation_rate_{r}"),
            Variant::OriginalTftBaseline => f.write_str("original_tft_baseline"),
            Variant::PureTcnBaseline => f.write_str("pure_tcn_baseline"),
            Variant::ModifiedTftOnly => f.write_str("modified_tft_only"),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::all()
            .into_iter()
            .find(|v| v.to_string() == s.trim())
            .ok_or_else(|| Error::config(format!("unknown variant {s:?}; valid names: {}", Variant::valid_names())))
    }
}

impl TryFrom<String> for Variant {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Variant> for String {
    fn from(v: Variant) -> String {
        v.to_string()
    }
}

/// One variant under one training configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub variant: Variant,
    pub hidden: usize,
    pub train: TrainConfig,
    pub convention: ScoreConvention,
}

#[derive(Clone, Debug)]
pub struct AblationResult {
    pub variant: Variant,
    pub report: MetricsReport,
    /// Parameter count of the largest-window model.
    pub params: usize,
    pub mean_epoch_seconds: f64,
    pub runs: Vec<WindowRun>,
}

/// Trains the variant on every window size of `data` and evaluates it on
/// the matching test sets.
pub fn run_ablation(spec: &AblationSpec, data: &PreparedData, jobs: usize) -> Result<AblationResult> {
    let channels = data.channels();
    let build = |w: usize| spec.variant.model_config(channels, w, spec.hidden, spec.train.dropout);
    let runs = train_multi_window(data, &spec.train, jobs, build)?;
    let models: Vec<_> = runs.iter().map(|r| &r.model).collect();
    let report = evaluate_multi_window(&models, &data.test, spec.convention, Some(data.test_engine_count()))?;
    let params = runs.last().map_or(0, |r| r.model.num_params());
    let times: Vec<f64> = runs.iter().flat_map(|r| r.outcome.epoch_seconds.iter().copied()).collect();
    let mean_epoch_seconds = if times.is_empty() { 0.0 } else { times.iter().sum::<f64>() / times.len() as f64 };
    Ok(AblationResult {
        variant: spec.variant,
        report,
        params,
        mean_epoch_seconds,
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Model;

    fn count(v: Variant) -> usize {
        Model::new(v.model_config(14, 125, 64, 0.2).unwrap()).unwrap().num_params()
    }

    #[test]
    fn names_round_trip() {
        for v in Variant::all() {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        assert_eq!(Variant::all().len(), 15);
        match "no_such".parse::<Variant>() {
            Err(Error::Config(msg)) => assert!(msg.contains("dilation_rate_16") && msg.contains("full")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parameter_orderings() {
        assert!(count(Variant::EncoderDecoderCase(1)) > count(Variant::EncoderDecoderCase(4)));
        assert!(count(Variant::EncoderDecoderCase(2)) > count(Variant::EncoderDecoderCase(4)));
        assert!(count(Variant::NoTcn) < count(Variant::Full));
        assert!(count(Variant::Full) > count(Variant::PureTcnBaseline));
        assert_eq!(count(Variant::EncoderDecoderCase(1)), count(Variant::Full));
        assert_eq!(count(Variant::ModifiedTftOnly), count(Variant::NoTcn));
        for r in DILATION_RATES {
            assert_eq!(count(Variant::DilationRate(r)), count(Variant::Full));
        }
    }

    #[test]
    fn dilations_are_capped_by_the_window() {
        match Variant::DilationRate(8).model_config(14, 31, 64, 0.2).unwrap() {
            ModelConfig::TcftBed(c) => assert_eq!(c.tcn.unwrap().dilations, vec![8, 16, 31, 31, 31]),
            other => panic!("{other:?}"),
        }
        assert!(Variant::DilationRate(3).model_config(14, 31, 64, 0.2).is_err());
        assert!(Variant::EncoderDecoderCase(5).model_config(14, 31, 64, 0.2).is_err());
    }
}
