//! Grounded group-activity recognition at desk scale.
//!
//! A small reverse-mode autodiff engine ([`tensor`]) carries a vision-language
//! encoder, an actor-fusion block and an action decoder that predicts per-actor
//! box tubes, action labels and a group activity from synthetic video clips.

pub mod backbone;
pub mod config;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod fusion;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod par;
pub mod tensor;
pub mod train;
pub mod verify;

pub use config::ModelConfig;
pub use error::{Error, Result};
pub use model::{ModelOutput, ReactModel};
