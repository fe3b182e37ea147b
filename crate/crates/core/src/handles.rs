//! Contracts for the frozen generator and the fixed auxiliary networks.
//!
//! Full-scale plugins (a pretrained StyleGAN, an ArcFace embedder, ...) implement
//! these traits; the crate ships the analytic [`ToyStack`](crate::toy::ToyStack).

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::real::Real;
use crate::types::{AttributeVector, ImageTensor, IsfRng, LatentCode};

/// A pretrained generator whose parameters never change.
///
/// `generate` must be a pure function of the latent code. `generate_vjp`
/// returns the vector-Jacobian product `J(w)^T grad`, which is how gradients
/// reach the style function without touching generator parameters.
pub trait Generator<S: Real>: Send + Sync {
    fn name(&self) -> &str;
    fn latent_shape(&self) -> (usize, usize);
    fn resolution(&self) -> (usize, usize);
    fn generate(&self, w: &LatentCode<S>) -> Result<ImageTensor<S>>;
    fn generate_vjp(&self, w: &LatentCode<S>, grad: &ImageTensor<S>) -> Result<LatentCode<S>>;
    /// Native latent sampler used when building datasets.
    fn sample_latent(&self, rng: &mut IsfRng) -> LatentCode<S>;
    /// Canonical serialization of every parameter the generator depends on.
    fn parameter_bytes(&self) -> Vec<u8>;

    fn parameter_digest(&self) -> String {
        sha256_hex(&self.parameter_bytes())
    }
}

/// Multi-label attribute classifier; outputs probabilities in `[0,1]^m`.
pub trait AttributeClassifier<S: Real>: Send + Sync {
    fn name(&self) -> &str;
    fn num_attributes(&self) -> usize;
    fn resolution(&self) -> (usize, usize);
    fn classify(&self, x: &ImageTensor<S>) -> Result<AttributeVector<S>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderRole {
    Perceptual,
    Identity,
}

/// Fixed feature extractor. Perceptual embedders drive the content loss and
/// the diversity/PIR/PPL metrics; identity embedders drive FRS.
pub trait Embedder<S: Real>: Send + Sync {
    fn name(&self) -> &str;
    fn role(&self) -> EmbedderRole;
    fn dim(&self) -> usize;
    fn embed(&self, x: &ImageTensor<S>) -> Result<Vec<S>>;
    /// `J(x)^T grad` for the feature map.
    fn embed_vjp(&self, x: &ImageTensor<S>, grad: &[S]) -> Result<ImageTensor<S>>;
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
