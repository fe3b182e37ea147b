//! Closed-form stand-ins for the generator and embedders.

use isf::error::Result;
use isf::handles::{Embedder, EmbedderRole, Generator};
use isf::real::Real;
use isf::types::{AttributeVector, ImageTensor, IsfRng, LatentCode, NoiseVector};
use isf::metrics::LatentMapper;
use rand::Rng;

/// "Image" = code: a `1 x 3k` code becomes a `1 x k` RGB image holding the
/// same numbers.
pub struct IdentityGenerator {
    pub pixels: usize,
}

impl<S: Real> Generator<S> for IdentityGenerator {
    fn name(&self) -> &str {
        "identity"
    }
    fn latent_shape(&self) -> (usize, usize) {
        (1, 3 * self.pixels)
    }
    fn resolution(&self) -> (usize, usize) {
        (1, self.pixels)
    }
    fn generate(&self, w: &LatentCode<S>) -> Result<ImageTensor<S>> {
        ImageTensor::new(1, self.pixels, w.as_slice().to_vec())
    }
    fn generate_vjp(&self, _w: &LatentCode<S>, grad: &ImageTensor<S>) -> Result<LatentCode<S>> {
        LatentCode::new(1, 3 * self.pixels, grad.as_slice().to_vec())
    }
    fn sample_latent(&self, rng: &mut IsfRng) -> LatentCode<S> {
        let v = (0..3 * self.pixels).map(|_| S::from_f64(rng.random_range(-0.4..0.4))).collect();
        LatentCode::new(1, 3 * self.pixels, v).unwrap()
    }
    fn parameter_bytes(&self) -> Vec<u8> {
        self.pixels.to_le_bytes().to_vec()
    }
}

/// Features = pixels, optionally scaled.
pub struct IdentityEmbedder {
    pub dim: usize,
    pub scale: f64,
}

impl<S: Real> Embedder<S> for IdentityEmbedder {
    fn name(&self) -> &str {
        "identity"
    }
    fn role(&self) -> EmbedderRole {
        EmbedderRole::Perceptual
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn embed(&self, x: &ImageTensor<S>) -> Result<Vec<S>> {
        let k = S::from_f64(self.scale);
        Ok(x.as_slice().iter().map(|&v| v * k).collect())
    }
    fn embed_vjp(&self, x: &ImageTensor<S>, grad: &[S]) -> Result<ImageTensor<S>> {
        let k = S::from_f64(self.scale);
        let (h, w) = x.resolution();
        ImageTensor::unbounded(h, w, grad.iter().map(|&g| g * k).collect())
    }
}

/// Ignores the noise: every mode is the same edit.
pub struct ConstantMapper;

impl<S: Real> LatentMapper<S> for ConstantMapper {
    fn noise_dim(&self) -> usize {
        4
    }
    fn map(&self, w: &LatentCode<S>, _z: &NoiseVector<S>, _d: &AttributeVector<S>) -> Result<LatentCode<S>> {
        Ok(w.clone())
    }
}

/// `w + scale * z` on the first `z.len()` entries.
pub struct NoiseShiftMapper {
    pub noise: usize,
    pub scale: f64,
}

impl<S: Real> LatentMapper<S> for NoiseShiftMapper {
    fn noise_dim(&self) -> usize {
        self.noise
    }
    fn map(&self, w: &LatentCode<S>, z: &NoiseVector<S>, _d: &AttributeVector<S>) -> Result<LatentCode<S>> {
        let mut out = w.clone();
        for (o, &zi) in out.as_mut_slice().iter_mut().zip(z.as_slice()) {
            *o = *o + zi * S::from_f64(self.scale);
        }
        Ok(out)
    }
}
