//! One-shot voice conversion by disentangling content, speaker and pitch
//! representations: a vector-quantized content encoder trained with a
//! contrastive predictive objective, a speaker encoder, a pitch pathway and a
//! decoder, with variational mutual-information upper bounds between the
//! three representations minimized during training.

pub mod checkpoint;
pub mod config;
pub mod converter;
pub mod corpus;
mod error;
pub mod evaluation;
pub mod frontend;
pub mod mi;
pub mod model;
pub mod objectives;
pub mod synth;
pub mod trainer;

pub use config::{Config, Preset};
pub(crate) use error::ensure_contract;
pub use error::{Error, Result};
