//! Layers and models built on the tape.

pub mod attention;
pub mod checkpoint;
pub mod linear;
pub mod lstm;
pub mod model;
pub mod params;
pub mod tcn;
pub mod tft;

pub use attention::{
    gated_output, maybe_dropout, Attended, AttentionConfig, FeedForward, GatedAttentionBlock, MultiHeadAttention,
};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use linear::Linear;
pub use lstm::{bilstm_forward, lstm_step, LstmParams, Recurrent, RecurrentConfig};
pub use model::{Forward, Mixer, Model, ModelConfig, PureTcnConfig, TcftBedConfig};
pub use params::{Init, Param, ParamSet};
pub use tcn::{tcn_residual, TcnBlock, TcnConfig};
pub use tft::{Tft, TftConfig};
