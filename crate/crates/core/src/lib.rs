//! Remaining-useful-life prediction with a temporal convolutional network
//! feeding a gated-attention Bi-LSTM encoder/decoder, trained over several
//! time-window sizes.
//!
//! The crate is self-contained: [`tensor`] supplies a small reverse-mode
//! autodiff engine, [`nn`] builds the model blocks on top of it, [`data`]
//! turns C-MAPSS text files into windowed datasets, and [`train`] holds the
//! optimiser, metrics, multi-window evaluation, and ablation harness.
//!
//! A guide with worked examples lives in the `book/` directory of the
//! repository; its code blocks are compiled as doctests of this crate.

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/tcn.md")]
    mod tcn {}
    #[doc = include_str!("../../../book/src/recurrent.md")]
    mod recurrent {}
    #[doc = include_str!("../../../book/src/attention.md")]
    mod attention {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
}
