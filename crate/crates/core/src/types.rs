//! Value types passed between the generator, the style function and the metrics.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::real::Real;

/// Deterministic RNG used for every stochastic step.
pub type IsfRng = rand_chacha::ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> IsfRng {
    use rand::SeedableRng;
    IsfRng::seed_from_u64(seed)
}

/// A point in the generator's style space, stored row-major as `rows x cols`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentCode<S = f32> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Real> LatentCode<S> {
    pub fn new(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(invalid("latent code shape must be non-empty"));
        }
        if data.len() != rows * cols {
            return Err(invalid(format!(
                "latent data length {} does not match shape {rows}x{cols}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("latent code contains non-finite entries"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    /// Constructor for internal results whose shape is already known to be right.
    pub(crate) fn from_parts(rows: usize, cols: usize, data: Vec<S>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<S> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn cast<T: Real>(&self) -> LatentCode<T> {
        LatentCode {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v.cast()).collect(),
        }
    }

    pub fn ensure_shape(&self, shape: (usize, usize)) -> Result<()> {
        if self.shape() != shape {
            return Err(invalid(format!(
                "latent shape {:?} does not match expected {:?}",
                self.shape(),
                shape
            )));
        }
        Ok(())
    }

    /// Linear interpolation `self + t * (other - self)`.
    pub fn lerp(&self, other: &Self, t: S) -> Result<Self> {
        other.ensure_shape(self.shape())?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a + t * (b - a))
            .collect();
        Ok(Self::from_parts(self.rows, self.cols, data))
    }

    /// Draws i.i.d. standard-normal entries.
    pub fn sample_gaussian(rows: usize, cols: usize, rng: &mut IsfRng) -> Self {
        let data = (0..rows * cols)
            .map(|_| S::from_f64(rng.sample::<f64, _>(StandardNormal)))
            .collect();
        Self::from_parts(rows, cols, data)
    }
}

/// Requested (or classified) semantic attributes, each entry in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeVector<S = f32>(Vec<S>);

impl<S: Real> AttributeVector<S> {
    /// Rejects entries outside `[0, 1]` or non-finite values.
    pub fn new(values: Vec<S>) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("attribute vector must be non-empty"));
        }
        for v in &values {
            let f = v.to_f64();
            if !(0.0..=1.0).contains(&f) {
                return Err(invalid(format!("attribute value {f} outside [0,1]")));
            }
        }
        Ok(Self(values))
    }

    /// Clamps every entry into `[0, 1]`; non-finite values become 0.5.
    pub fn clamped(values: Vec<S>) -> Self {
        Self(
            values
                .into_iter()
                .map(|v| {
                    let f = v.to_f64();
                    if !f.is_finite() {
                        S::from_f64(0.5)
                    } else if f < 0.0 {
                        S::zero()
                    } else if f > 1.0 {
                        S::one()
                    } else {
                        v
                    }
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[S] {
        &self.0
    }

    /// Thresholds at 0.5.
    pub fn binarized(&self) -> Vec<bool> {
        self.0.iter().map(|v| v.to_f64() > 0.5).collect()
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        Self(
            bits.iter()
                .map(|&b| if b { S::one() } else { S::zero() })
                .collect(),
        )
    }

    pub fn cast<T: Real>(&self) -> AttributeVector<T> {
        AttributeVector(self.0.iter().map(|v| v.cast()).collect())
    }
}

/// Multi-modality noise `z ~ N(0, I_n)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseVector<S = f32>(Vec<S>);

impl<S: Real> NoiseVector<S> {
    pub fn new(values: Vec<S>) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("noise vector must be non-empty"));
        }
        Ok(Self(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[S] {
        &self.0
    }

    pub fn cast<T: Real>(&self) -> NoiseVector<T> {
        NoiseVector(self.0.iter().map(|v| v.cast()).collect())
    }
}

/// Draws `n` independent standard-normal values.
pub fn sample_noise<S: Real>(n: usize, rng: &mut IsfRng) -> Result<NoiseVector<S>> {
    if n < 1 {
        return Err(invalid("noise dimension must be at least 1"));
    }
    Ok(NoiseVector(
        (0..n)
            .map(|_| S::from_f64(rng.sample::<f64, _>(StandardNormal)))
            .collect(),
    ))
}

/// An `H x W x 3` image, row-major with interleaved channels, values in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor<S = f32> {
    height: usize,
    width: usize,
    data: Vec<S>,
}

pub const CHANNELS: usize = 3;

impl<S: Real> ImageTensor<S> {
    pub fn new(height: usize, width: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != height * width * CHANNELS {
            return Err(invalid(format!(
                "image data length {} does not match {height}x{width}x3",
                data.len()
            )));
        }
        for v in &data {
            let f = v.to_f64();
            if !(-1.0..=1.0).contains(&f) {
                return Err(invalid(format!("pixel value {f} outside [-1,1]")));
            }
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![S::zero(); height * width * CHANNELS],
        }
    }

    /// Unchecked constructor for gradient buffers, which share the layout but
    /// not the value range of images.
    pub(crate) fn from_parts(height: usize, width: usize, data: Vec<S>) -> Self {
        debug_assert_eq!(data.len(), height * width * CHANNELS);
        Self {
            height,
            width,
            data,
        }
    }

    /// Tensor with image layout but no range restriction, e.g. a gradient.
    pub fn unbounded(height: usize, width: usize, data: Vec<S>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width * CHANNELS {
            return Err(invalid(format!(
                "expected {height}x{width}x{CHANNELS} values, got {}",
                data.len()
            )));
        }
        Ok(Self::from_parts(height, width, data))
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> S {
        self.data[(y * self.width + x) * CHANNELS + c]
    }

    pub fn cast<T: Real>(&self) -> ImageTensor<T> {
        ImageTensor {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| v.cast()).collect(),
        }
    }

    pub fn ensure_resolution(&self, res: (usize, usize)) -> Result<()> {
        if self.resolution() != res {
            return Err(invalid(format!(
                "image resolution {:?} does not match expected {:?}",
                self.resolution(),
                res
            )));
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.data
            .iter()
            .map(|v| v.to_f64().abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_is_deterministic_per_seed() {
        let a: NoiseVector<f64> = sample_noise(4, &mut rng_from_seed(7)).unwrap();
        let b: NoiseVector<f64> = sample_noise(4, &mut rng_from_seed(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_length_noise_is_rejected() {
        assert!(sample_noise::<f32>(0, &mut rng_from_seed(1)).is_err());
    }

    #[test]
    fn noise_moments_match_standard_normal() {
        let mut rng = rng_from_seed(11);
        let z: NoiseVector<f64> = sample_noise(100_000, &mut rng).unwrap();
        let n = z.len() as f64;
        let mean = z.as_slice().iter().sum::<f64>() / n;
        let var = z.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() <= 0.02, "mean {mean}");
        assert!((var - 1.0).abs() <= 0.05, "var {var}");
    }

    #[test]
    fn attribute_range_is_enforced() {
        assert!(AttributeVector::new(vec![0.0_f32, 1.2]).is_err());
        let c = AttributeVector::clamped(vec![-0.5_f32, 1.5, 0.3]);
        assert_eq!(c.as_slice(), &[0.0, 1.0, 0.3]);
    }

    #[test]
    fn latent_shape_checked() {
        assert!(LatentCode::new(2, 2, vec![0.0_f32; 3]).is_err());
        assert!(LatentCode::new(1, 2, vec![f32::NAN, 0.0]).is_err());
    }
}
