//! Actor-critic pretraining from reward-free expert demonstrations.

pub mod algo;
pub mod config;
pub mod demo;
pub mod error;
pub mod experiment;
pub mod mdp;
pub mod nn;
pub mod oracle;
pub mod plot;
pub mod policy;
pub mod pretrain;
pub mod value;
pub mod verify;

pub use error::{Error, Result};
