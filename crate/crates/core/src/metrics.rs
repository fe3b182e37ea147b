//! Evaluation metrics. All functions are pure apart from explicit RNG
//! arguments; reductions use fixed-order pairwise sums.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::handles::{AttributeClassifier, Embedder, Generator};
use crate::isf_net::IsfParams;
use crate::objectives::perceptual_distance;
use crate::real::{pairwise_sum, Real};
use crate::types::{sample_noise, AttributeVector, ImageTensor, IsfRng, LatentCode, NoiseVector};

pub const PPL_EPSILON: f64 = 1e-4;
pub const PIR_EPS_STAB: f64 = 1e-6;
pub const PATH_STEPS: usize = 10;

fn mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

/// Cosine similarity; zero-norm inputs have no defined angle.
pub fn cosine_similarity<S: Real>(a: &[S], b: &[S]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(invalid("feature lengths differ"));
    }
    let dot: Vec<f64> = a.iter().zip(b).map(|(x, y)| x.to_f64() * y.to_f64()).collect();
    let na: Vec<f64> = a.iter().map(|x| x.to_f64().powi(2)).collect();
    let nb: Vec<f64> = b.iter().map(|x| x.to_f64().powi(2)).collect();
    let (na, nb) = (pairwise_sum(&na).sqrt(), pairwise_sum(&nb).sqrt());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedSimilarity);
    }
    Ok((pairwise_sum(&dot) / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine similarity of identity features.
pub fn frs<S: Real>(x1: &ImageTensor<S>, x2: &ImageTensor<S>, identity: &dyn Embedder<S>) -> Result<f64> {
    cosine_similarity(&identity.embed(x1)?, &identity.embed(x2)?)
}

/// Squared Euclidean distance between raw embedder features.
pub fn squared_feature_distance<S: Real>(
    a: &ImageTensor<S>,
    b: &ImageTensor<S>,
    embedder: &dyn Embedder<S>,
) -> Result<f64> {
    let fa = embedder.embed(a)?;
    let fb = embedder.embed(b)?;
    let sq: Vec<f64> = fa
        .iter()
        .zip(&fb)
        .map(|(x, y)| (x.to_f64() - y.to_f64()).powi(2))
        .collect();
    Ok(pairwise_sum(&sq))
}

fn lerp_code<S: Real>(a: &LatentCode<S>, b: &LatentCode<S>, t: f64) -> Result<LatentCode<S>> {
    a.lerp(b, S::from_f64(t))
}

/// Perceptual path length: mean over pairs of `d(G(lerp(t)), G(lerp(t+eps))) / eps^2`
/// with one `t ~ U(0,1)` per pair.
pub fn ppl<S: Real>(
    pairs: &[(LatentCode<S>, LatentCode<S>)],
    generator: &dyn Generator<S>,
    embedder: &dyn Embedder<S>,
    epsilon: f64,
    rng: &mut IsfRng,
) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(invalid(format!("PPL epsilon must be positive, got {epsilon}")));
    }
    if pairs.is_empty() {
        return Err(invalid("PPL needs at least one endpoint pair"));
    }
    let mut vals = Vec::with_capacity(pairs.len());
    for (s, s_star) in pairs {
        let t: f64 = rng.random_range(0.0..1.0);
        let x0 = generator.generate(&lerp_code(s, s_star, t)?)?;
        let x1 = generator.generate(&lerp_code(s, s_star, t + epsilon)?)?;
        vals.push(squared_feature_distance(&x0, &x1, embedder)? / (epsilon * epsilon));
    }
    Ok(mean(&vals))
}

/// Latent codes `s_0 ..= s_T` along a straight line.
#[derive(Clone, Debug, PartialEq)]
pub struct InterpolationPath<S = f32> {
    codes: Vec<LatentCode<S>>,
    /// Index of the edited attribute, when the path follows an edit.
    pub attribute: Option<usize>,
}

impl<S: Real> InterpolationPath<S> {
    pub fn new(codes: Vec<LatentCode<S>>, attribute: Option<usize>) -> Result<Self> {
        if codes.len() < 3 {
            return Err(invalid("an interpolation path needs T >= 2 steps"));
        }
        let shape = codes[0].shape();
        for c in &codes {
            c.ensure_shape(shape)?;
        }
        Ok(Self { codes, attribute })
    }

    pub fn steps(&self) -> usize {
        self.codes.len() - 1
    }

    pub fn codes(&self) -> &[LatentCode<S>] {
        &self.codes
    }

    pub fn source(&self) -> &LatentCode<S> {
        &self.codes[0]
    }

    pub fn target(&self) -> &LatentCode<S> {
        &self.codes[self.codes.len() - 1]
    }
}

/// `(max phi - min phi) / (endpoint + eps_stab)` over consecutive increments.
pub fn pir_from_distances(increments: &[f64], endpoint: f64, eps_stab: f64) -> Result<f64> {
    if increments.len() < 2 {
        return Err(invalid("PIR needs at least two increments"));
    }
    if !(eps_stab >= 0.0) {
        return Err(invalid("eps_stab must be non-negative"));
    }
    if increments.iter().chain([&endpoint]).any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(invalid("perceptual distances must be finite and non-negative"));
    }
    let max = increments.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = increments.iter().copied().fold(f64::INFINITY, f64::min);
    let spread = max - min;
    if spread == 0.0 {
        return Ok(0.0);
    }
    let denom = endpoint + eps_stab;
    if denom == 0.0 {
        return Err(Error::Numeric("PIR endpoint distance is zero".into()));
    }
    Ok(spread / denom)
}

/// Per-step perceptual distances along a path, plus the endpoint distance.
pub fn path_distances<S: Real>(
    path: &InterpolationPath<S>,
    generator: &dyn Generator<S>,
    perceptual: &dyn Embedder<S>,
) -> Result<(Vec<f64>, f64)> {
    let images = path
        .codes()
        .iter()
        .map(|c| generator.generate(c))
        .collect::<Result<Vec<_>>>()?;
    let phis = images
        .windows(2)
        .map(|p| Ok(perceptual_distance(&p[0], &p[1], perceptual)?.to_f64()))
        .collect::<Result<Vec<f64>>>()?;
    let endpoint = perceptual_distance(&images[0], &images[images.len() - 1], perceptual)?.to_f64();
    Ok((phis, endpoint))
}

pub fn pir<S: Real>(
    path: &InterpolationPath<S>,
    generator: &dyn Generator<S>,
    perceptual: &dyn Embedder<S>,
    eps_stab: f64,
) -> Result<f64> {
    let (phis, endpoint) = path_distances(path, generator, perceptual)?;
    pir_from_distances(&phis, endpoint, eps_stab)
}

/// Anything that edits a latent code given noise and target attributes.
pub trait LatentMapper<S: Real> {
    fn noise_dim(&self) -> usize;
    fn map(&self, w: &LatentCode<S>, z: &NoiseVector<S>, d: &AttributeVector<S>) -> Result<LatentCode<S>>;
}

impl<S: Real> LatentMapper<S> for IsfParams<S> {
    fn noise_dim(&self) -> usize {
        self.dims().noise
    }
    fn map(&self, w: &LatentCode<S>, z: &NoiseVector<S>, d: &AttributeVector<S>) -> Result<LatentCode<S>> {
        self.forward(w, z, d)
    }
}

/// Mean over all `C(n, 2)` pairwise perceptual distances.
pub fn mean_pairwise_distance<S: Real>(images: &[ImageTensor<S>], perceptual: &dyn Embedder<S>) -> Result<f64> {
    if images.len() < 2 {
        return Err(invalid("pairwise distance needs at least two images"));
    }
    let mut d = Vec::with_capacity(images.len() * (images.len() - 1) / 2);
    for i in 0..images.len() {
        for j in i + 1..images.len() {
            d.push(perceptual_distance(&images[i], &images[j], perceptual)?.to_f64());
        }
    }
    Ok(mean(&d))
}

/// For each of the first `n_inputs` (code, target) pairs, `n_samples` edits
/// with independent noise; per-input mean pairwise distance, then the mean
/// over inputs.
pub fn diversity_score<S: Real>(
    inputs: &[(LatentCode<S>, AttributeVector<S>)],
    generator: &dyn Generator<S>,
    mapper: &dyn LatentMapper<S>,
    perceptual: &dyn Embedder<S>,
    n_inputs: usize,
    n_samples: usize,
    rng: &mut IsfRng,
) -> Result<f64> {
    if n_inputs == 0 || n_samples < 2 {
        return Err(invalid("diversity needs n_inputs >= 1 and n_samples >= 2"));
    }
    if inputs.len() < n_inputs {
        return Err(invalid(format!(
            "diversity asked for {n_inputs} inputs, only {} given",
            inputs.len()
        )));
    }
    let mut per_input = Vec::with_capacity(n_inputs);
    for (w, d) in &inputs[..n_inputs] {
        let images = (0..n_samples)
            .map(|_| {
                let z = sample_noise(mapper.noise_dim(), rng)?;
                generator.generate(&mapper.map(w, &z, d)?)
            })
            .collect::<Result<Vec<_>>>()?;
        per_input.push(mean_pairwise_distance(&images, perceptual)?);
    }
    Ok(mean(&per_input))
}

fn mean_and_cov(set: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let n = set.len();
    let dim = set[0].len();
    let x = DMatrix::from_fn(n, dim, |i, j| set[i][j]);
    let mu = DVector::from_fn(dim, |j, _| x.column(j).sum() / n as f64);
    let mut centered = x;
    for j in 0..dim {
        let m = mu[j];
        centered.column_mut(j).iter_mut().for_each(|v| *v -= m);
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    (mu, cov)
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Frechet distance between Gaussian fits (unbiased covariances). The trace of
/// `(S_a S_b)^(1/2)` is taken from the symmetric similar matrix
/// `S_a^(1/2) S_b S_a^(1/2)`, eigenvalues clamped at zero.
pub fn frechet_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(invalid("each feature set needs at least two vectors"));
    }
    let dim = a[0].len();
    if dim == 0 || a.iter().chain(b).any(|v| v.len() != dim) {
        return Err(invalid("feature vectors must share one positive dimension"));
    }
    if a.iter().chain(b).flatten().any(|v| !v.is_finite()) {
        return Err(invalid("features must be finite"));
    }
    let (mu_a, cov_a) = mean_and_cov(a);
    let (mu_b, cov_b) = mean_and_cov(b);
    let root_a = sym_sqrt(&cov_a);
    let inner = &root_a * &cov_b * &root_a;
    let inner = (&inner + inner.transpose()) * 0.5;
    let eig = SymmetricEigen::new(inner);
    let tr_sqrt: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    let diff = (mu_a - mu_b).norm_squared();
    Ok((diff + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt).max(0.0))
}

/// Attribute accuracy over requested changes only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    /// `None` for attributes that no edit asked to change.
    pub per_attribute: Vec<Option<f64>>,
    pub requested: Vec<usize>,
    #[serde(rename = "mAcc")]
    pub macc: f64,
}

/// For every attribute, the fraction of edits that requested a change to it
/// whose thresholded prediction equals the target bit.
pub fn accuracy_from_predictions<S: Real>(
    predictions: &[AttributeVector<S>],
    sources: &[AttributeVector<S>],
    targets: &[AttributeVector<S>],
) -> Result<AccuracyReport> {
    if predictions.len() != targets.len() || sources.len() != targets.len() || targets.is_empty() {
        return Err(invalid("predictions, sources and targets must align and be non-empty"));
    }
    let m = targets[0].len();
    let mut hits = vec![0usize; m];
    let mut requested = vec![0usize; m];
    for ((p, s), t) in predictions.iter().zip(sources).zip(targets) {
        if p.len() != m || s.len() != m || t.len() != m {
            return Err(invalid("attribute vectors differ in length"));
        }
        let (pb, sb, tb) = (p.binarized(), s.binarized(), t.binarized());
        for q in 0..m {
            if sb[q] != tb[q] {
                requested[q] += 1;
                hits[q] += usize::from(pb[q] == tb[q]);
            }
        }
    }
    let per_attribute: Vec<Option<f64>> = hits
        .iter()
        .zip(&requested)
        .map(|(&h, &r)| (r > 0).then(|| h as f64 / r as f64))
        .collect();
    let present: Vec<f64> = per_attribute.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(invalid("no edit requested an attribute change"));
    }
    Ok(AccuracyReport {
        macc: mean(&present),
        per_attribute,
        requested,
    })
}

pub fn attribute_accuracy<S: Real>(
    edits: &[ImageTensor<S>],
    classifier: &dyn AttributeClassifier<S>,
    sources: &[AttributeVector<S>],
    targets: &[AttributeVector<S>],
) -> Result<AccuracyReport> {
    let predictions = edits
        .iter()
        .map(|x| classifier.classify(x))
        .collect::<Result<Vec<_>>>()?;
    accuracy_from_predictions(&predictions, sources, targets)
}

pub const METRICS_SCHEMA_VERSION: &str = "isf-metrics/1";

/// Named scalar results plus what is needed to rerun the protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: String,
    pub metrics: BTreeMap<String, f64>,
    pub per_attribute_accuracy: Vec<Option<f64>>,
    pub protocol: BTreeMap<String, serde_json::Value>,
}

impl MetricsReport {
    pub fn new() -> Self {
        Self {
            schema_version: METRICS_SCHEMA_VERSION.into(),
            metrics: BTreeMap::new(),
            per_attribute_accuracy: Vec::new(),
            protocol: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, key: &str, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!("metric {key} is not finite")));
        }
        self.metrics.insert(key.to_string(), value);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).copied()
    }

    pub fn note(&mut self, key: &str, value: impl Serialize) {
        self.protocol.insert(
            key.to_string(),
            serde_json::to_value(value).expect("protocol metadata serializes"),
        );
    }
}

impl Default for MetricsReport {
    fn default() -> Self {
        Self::new()
    }
}
