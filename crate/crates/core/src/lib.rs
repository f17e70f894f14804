//! Multi-microphone speech enhancement with an efficient time-frequency
//! transformer, plus the tooling to audit its cost.

pub mod audio;
pub mod autodiff;
pub mod complexity;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod layers;
pub mod loss;
pub mod mac;
pub mod network;
pub mod params;
pub mod sdb;
pub mod tensor;
pub mod selftest;
pub mod train;
pub mod transformer;
pub mod wav;

pub use audio::{AudioClip, Spectro, StftConfig};
pub use config::ModelConfig;
pub use error::{Error, Result};
pub use network::Network;
pub use tensor::{Scalar, Tensor};
