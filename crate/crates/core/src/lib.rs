//! Latent-code attribute editing with an implicit style function.
//!
//! A small conditional network maps a latent code, a target attribute vector
//! and a noise vector to a new latent code of a frozen generator. The crate
//! contains the network, its critic, the training objectives, a trainer with
//! checkpointing, evaluation metrics, and an analytic toy generator stack that
//! makes everything runnable without pretrained weights.

pub mod ablation;
pub mod config;
pub mod cli;
pub mod critic;
pub mod dataset;
pub mod editing;
pub mod error;
pub mod evaluation;
pub mod handles;
pub mod io;
pub mod isf_net;
pub mod metrics;
pub mod objectives;
pub mod optim;
pub mod params;
pub mod real;
pub mod render;
pub mod step;
pub mod toy;
pub mod trainer;
pub mod types;

pub use error::{Error, Result};
pub use handles::{AttributeClassifier, Embedder, EmbedderRole, Generator};
pub use isf_net::{IsfDims, IsfParams};
pub use toy::{ToyConfig, ToyStack};
pub use types::{rng_from_seed, AttributeVector, ImageTensor, IsfRng, LatentCode, NoiseVector};
