//! Analytic desk-scale generator, classifier and embedders.
//!
//! A latent code `w` is flattened and projected by a seeded matrix `Q` with
//! orthonormal rows: the first `m` rows give attribute logits
//! `a = sigmoid(Q_attr w)`, the remaining `k` rows give content coefficients
//! `c = tanh(Q_cont w)`. Region `q` of the image is painted with intensity
//! `2 a_q - 1` and a texture `sum_j amp * c_j * sin(...)` is added on top.
//! Every texture has zero mean over every region and the textures are
//! mutually orthogonal, so attributes and content can be read back exactly.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::handles::{AttributeClassifier, Embedder, EmbedderRole, Generator};
use crate::real::{sigmoid, Real};
use crate::types::{rng_from_seed, AttributeVector, ImageTensor, IsfRng, LatentCode, CHANNELS};

pub const TOY_RESOLUTION: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyConfig {
    pub seed: u64,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(rename = "L", default = "default_rows")]
    pub rows: usize,
    #[serde(rename = "C", default = "default_cols")]
    pub cols: usize,
    #[serde(default = "default_amplitude")]
    pub texture_amplitude: f64,
    #[serde(default = "default_sharpness")]
    pub sharpness: f64,
}

fn default_m() -> usize {
    4
}
fn default_k() -> usize {
    8
}
fn default_rows() -> usize {
    4
}
fn default_cols() -> usize {
    16
}
fn default_amplitude() -> f64 {
    0.2
}
fn default_sharpness() -> f64 {
    20.0
}

impl ToyConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            m: default_m(),
            k: default_k(),
            rows: default_rows(),
            cols: default_cols(),
            texture_amplitude: default_amplitude(),
            sharpness: default_sharpness(),
        }
    }
}

/// One sinusoidal texture `sin(2 pi f (x p + y q) / 32 + 2 pi phase / 8)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Texture {
    pub f: u32,
    pub p: u32,
    pub q: u32,
    pub phase: u32,
}

impl Texture {
    fn value(&self, x: usize, y: usize, res: usize) -> f64 {
        let arg = 2.0 * PI * self.f as f64 * (x as f64 * self.p as f64 + y as f64 * self.q as f64)
            / res as f64
            + 2.0 * PI * self.phase as f64 / 8.0;
        arg.sin()
    }
}

#[derive(Debug)]
struct ToyInner {
    config: ToyConfig,
    /// `(m + k) x (L * C)`, row-major.
    q: Vec<f64>,
    textures: Vec<Texture>,
    /// `k x (res * res)` unit-amplitude texture images.
    basis: Vec<f64>,
    basis_sq_norm: Vec<f64>,
    /// Region index per pixel.
    region: Vec<usize>,
    region_size: usize,
}

/// The analytic toy generator/classifier pair. Cheap to clone.
#[derive(Clone, Debug)]
pub struct ToyStack {
    inner: Arc<ToyInner>,
}

fn region_grid(m: usize) -> Result<(usize, usize)> {
    if m == 0 || !m.is_power_of_two() || m > 16 {
        return Err(invalid(format!(
            "toy attribute count must be a power of two in 1..=16, got {m}"
        )));
    }
    let log = m.trailing_zeros();
    let rows = 1usize << (log / 2);
    Ok((rows, m / rows))
}

impl ToyStack {
    pub fn new(config: ToyConfig) -> Result<Self> {
        let res = TOY_RESOLUTION;
        let (grid_rows, grid_cols) = region_grid(config.m)?;
        let dim = config.rows * config.cols;
        if config.k == 0 {
            return Err(invalid("toy content dimension k must be positive"));
        }
        if config.m + config.k > dim {
            return Err(invalid(format!(
                "m + k = {} exceeds latent size {dim}",
                config.m + config.k
            )));
        }
        if !(config.texture_amplitude > 0.0) || !(config.sharpness > 0.0) {
            return Err(invalid("texture amplitude and sharpness must be positive"));
        }

        let mut rng = rng_from_seed(config.seed);
        let q = orthonormal_rows(config.m + config.k, dim, &mut rng);

        let region_h = res / grid_rows;
        let region_w = res / grid_cols;
        let region: Vec<usize> = (0..res * res)
            .map(|i| {
                let (y, x) = (i / res, i % res);
                (y / region_h) * grid_cols + x / region_w
            })
            .collect();

        let mut textures = Vec::with_capacity(config.k);
        let mut basis: Vec<f64> = Vec::with_capacity(config.k * res * res);
        let mut attempts = 0;
        while textures.len() < config.k {
            attempts += 1;
            if attempts > 100_000 {
                return Err(invalid("could not find enough admissible toy textures"));
            }
            let t = Texture {
                f: rng.random_range(1..=4),
                p: rng.random_range(0..=4),
                q: rng.random_range(0..=4),
                phase: rng.random_range(0..8),
            };
            if t.p == 0 && t.q == 0 {
                continue;
            }
            let img: Vec<f64> = (0..res * res)
                .map(|i| t.value(i % res, i / res, res))
                .collect();
            let sq: f64 = img.iter().map(|v| v * v).sum();
            if sq < 0.25 * (res * res) as f64 {
                continue;
            }
            let mut region_sums = vec![0.0; config.m];
            for (v, &r) in img.iter().zip(&region) {
                region_sums[r] += v;
            }
            if region_sums.iter().any(|s| s.abs() > 1e-9) {
                continue;
            }
            let orthogonal = basis.chunks(res * res).all(|b| {
                b.iter().zip(&img).map(|(a, c)| a * c).sum::<f64>().abs() < 1e-9
            });
            if !orthogonal {
                continue;
            }
            textures.push(t);
            basis.extend_from_slice(&img);
        }
        let basis_sq_norm = basis
            .chunks(res * res)
            .map(|b| b.iter().map(|v| v * v).sum())
            .collect();

        Ok(Self {
            inner: Arc::new(ToyInner {
                config,
                q,
                textures,
                basis,
                basis_sq_norm,
                region,
                region_size: region_h * region_w,
            }),
        })
    }

    pub fn with_seed(seed: u64) -> Result<Self> {
        Self::new(ToyConfig::with_seed(seed))
    }

    pub fn config(&self) -> &ToyConfig {
        &self.inner.config
    }

    pub fn num_attributes(&self) -> usize {
        self.inner.config.m
    }

    pub fn content_dim(&self) -> usize {
        self.inner.config.k
    }

    pub fn textures(&self) -> &[Texture] {
        &self.inner.textures
    }

    /// Row `i` of the projection matrix; rows `0..m` are attribute directions.
    pub fn projection_row(&self, i: usize) -> &[f64] {
        let dim = self.dim();
        &self.inner.q[i * dim..(i + 1) * dim]
    }

    pub fn attribute_direction(&self, q: usize) -> &[f64] {
        self.projection_row(q)
    }

    pub fn content_direction(&self, j: usize) -> &[f64] {
        self.projection_row(self.inner.config.m + j)
    }

    /// Region index of pixel `(y, x)`.
    pub fn region_of(&self, y: usize, x: usize) -> usize {
        self.inner.region[y * TOY_RESOLUTION + x]
    }

    /// Unit-amplitude texture `j` evaluated at pixel index `y * 32 + x`.
    pub fn basis_value(&self, j: usize, pixel: usize) -> f64 {
        self.inner.basis[j * TOY_RESOLUTION * TOY_RESOLUTION + pixel]
    }

    fn dim(&self) -> usize {
        self.inner.config.rows * self.inner.config.cols
    }

    /// `(Q_attr w, Q_cont w)` for a flattened code.
    pub fn project<S: Real>(&self, w: &LatentCode<S>) -> Result<(Vec<S>, Vec<S>)> {
        w.ensure_shape(self.latent_shape_dims())?;
        let m = self.inner.config.m;
        let dim = self.dim();
        let wf = w.as_slice();
        let proj: Vec<S> = self
            .inner
            .q
            .chunks(dim)
            .map(|row| {
                row.iter()
                    .zip(wf)
                    .fold(S::zero(), |acc, (&qv, &wv)| acc + S::from_f64(qv) * wv)
            })
            .collect();
        let (a, c) = proj.split_at(m);
        Ok((a.to_vec(), c.to_vec()))
    }

    fn latent_shape_dims(&self) -> (usize, usize) {
        (self.inner.config.rows, self.inner.config.cols)
    }

    /// Pre-clamp pixel intensities (single channel; all channels are equal).
    fn pre_clamp<S: Real>(&self, a: &[S], c: &[S]) -> Vec<S> {
        let npix = TOY_RESOLUTION * TOY_RESOLUTION;
        let amp = self.inner.config.texture_amplitude;
        let two = S::from_f64(2.0);
        let mut pre: Vec<S> = self
            .inner
            .region
            .iter()
            .map(|&r| two * a[r] - S::one())
            .collect();
        for (j, cj) in c.iter().enumerate() {
            let scale = S::from_f64(amp) * *cj;
            let b = &self.inner.basis[j * npix..(j + 1) * npix];
            for (p, &bv) in pre.iter_mut().zip(b) {
                *p += scale * S::from_f64(bv);
            }
        }
        pre
    }

    /// Content coefficients recovered by projecting onto the texture basis.
    pub fn identity_embed<S: Real>(&self, x: &ImageTensor<S>) -> Result<Vec<S>> {
        x.ensure_resolution((TOY_RESOLUTION, TOY_RESOLUTION))?;
        let npix = TOY_RESOLUTION * TOY_RESOLUTION;
        let amp = self.inner.config.texture_amplitude;
        let px = x.as_slice();
        let gray: Vec<S> = px
            .chunks(CHANNELS)
            .map(|c| c.iter().copied().fold(S::zero(), |a, b| a + b))
            .collect();
        Ok((0..self.inner.config.k)
            .map(|j| {
                let b = &self.inner.basis[j * npix..(j + 1) * npix];
                let dot = gray
                    .iter()
                    .zip(b)
                    .fold(S::zero(), |acc, (&g, &bv)| acc + g * S::from_f64(bv));
                dot / S::from_f64(CHANNELS as f64 * amp * self.inner.basis_sq_norm[j])
            })
            .collect())
    }

    fn identity_embed_vjp<S: Real>(&self, x: &ImageTensor<S>, grad: &[S]) -> Result<ImageTensor<S>> {
        x.ensure_resolution((TOY_RESOLUTION, TOY_RESOLUTION))?;
        if grad.len() != self.inner.config.k {
            return Err(invalid("identity gradient length mismatch"));
        }
        let npix = TOY_RESOLUTION * TOY_RESOLUTION;
        let amp = self.inner.config.texture_amplitude;
        let mut out = vec![S::zero(); npix];
        for (j, g) in grad.iter().enumerate() {
            let scale = *g / S::from_f64(CHANNELS as f64 * amp * self.inner.basis_sq_norm[j]);
            let b = &self.inner.basis[j * npix..(j + 1) * npix];
            for (o, &bv) in out.iter_mut().zip(b) {
                *o += scale * S::from_f64(bv);
            }
        }
        let data = out.into_iter().flat_map(|v| [v; CHANNELS]).collect();
        Ok(ImageTensor::from_parts(TOY_RESOLUTION, TOY_RESOLUTION, data))
    }

    /// Region-mean intensity over all channels.
    pub fn region_means<S: Real>(&self, x: &ImageTensor<S>) -> Result<Vec<S>> {
        x.ensure_resolution((TOY_RESOLUTION, TOY_RESOLUTION))?;
        let m = self.inner.config.m;
        let mut sums = vec![S::zero(); m];
        for (px, &r) in x.as_slice().chunks(CHANNELS).zip(&self.inner.region) {
            for &v in px {
                sums[r] += v;
            }
        }
        let denom = S::from_f64((self.inner.region_size * CHANNELS) as f64);
        Ok(sums.into_iter().map(|s| s / denom).collect())
    }

    pub fn identity_embedder(&self) -> ToyIdentityEmbedder {
        ToyIdentityEmbedder {
            stack: self.clone(),
        }
    }

    /// Edge features; uniform intensity shifts inside a region are invisible
    /// to them, boundaries and texture are not.
    pub fn perceptual_embedder(&self) -> EdgeEmbedder {
        EdgeEmbedder::new(TOY_RESOLUTION, TOY_RESOLUTION).expect("toy resolution is positive")
    }

    pub fn pooled_embedder(&self) -> PooledPixelEmbedder {
        PooledPixelEmbedder::new(TOY_RESOLUTION, TOY_RESOLUTION, 4)
            .expect("toy resolution is divisible by 4")
    }
}

/// Gaussian rows orthonormalized by two passes of modified Gram-Schmidt.
fn orthonormal_rows(n: usize, dim: usize, rng: &mut IsfRng) -> Vec<f64> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    while rows.len() < n {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for _ in 0..2 {
            for r in &rows {
                let d: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
                for (vi, ri) in v.iter_mut().zip(r) {
                    *vi -= d * ri;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        rows.push(v);
    }
    rows.concat()
}

impl<S: Real> Generator<S> for ToyStack {
    fn name(&self) -> &str {
        "toy"
    }

    fn latent_shape(&self) -> (usize, usize) {
        self.latent_shape_dims()
    }

    fn resolution(&self) -> (usize, usize) {
        (TOY_RESOLUTION, TOY_RESOLUTION)
    }

    fn generate(&self, w: &LatentCode<S>) -> Result<ImageTensor<S>> {
        let (u, v) = self.project(w)?;
        let a: Vec<S> = u.into_iter().map(sigmoid).collect();
        let c: Vec<S> = v.into_iter().map(|x| x.tanh()).collect();
        let pre = self.pre_clamp(&a, &c);
        let lo = -S::one();
        let hi = S::one();
        let data = pre
            .into_iter()
            .flat_map(|p| [p.max_val(lo).min_val(hi); CHANNELS])
            .collect();
        Ok(ImageTensor::from_parts(TOY_RESOLUTION, TOY_RESOLUTION, data))
    }

    fn generate_vjp(&self, w: &LatentCode<S>, grad: &ImageTensor<S>) -> Result<LatentCode<S>> {
        grad.ensure_resolution((TOY_RESOLUTION, TOY_RESOLUTION))?;
        let (u, v) = self.project(w)?;
        let a: Vec<S> = u.into_iter().map(sigmoid).collect();
        let c: Vec<S> = v.into_iter().map(|x| x.tanh()).collect();
        let pre = self.pre_clamp(&a, &c);
        let npix = TOY_RESOLUTION * TOY_RESOLUTION;
        let m = self.inner.config.m;
        let amp = self.inner.config.texture_amplitude;

        // Gradient w.r.t. the shared pre-clamp value of each pixel.
        let g_pre: Vec<S> = grad
            .as_slice()
            .chunks(CHANNELS)
            .zip(&pre)
            .map(|(g, &p)| {
                let pf = p.to_f64();
                if pf > 1.0 || pf < -1.0 {
                    S::zero()
                } else {
                    g.iter().copied().fold(S::zero(), |acc, x| acc + x)
                }
            })
            .collect();

        let mut g_a = vec![S::zero(); m];
        for (g, &r) in g_pre.iter().zip(&self.inner.region) {
            g_a[r] += *g;
        }
        let two = S::from_f64(2.0);
        let g_u: Vec<S> = g_a
            .iter()
            .zip(&a)
            .map(|(&g, &av)| two * g * av * (S::one() - av))
            .collect();
        let g_v: Vec<S> = (0..self.inner.config.k)
            .map(|j| {
                let b = &self.inner.basis[j * npix..(j + 1) * npix];
                let dot = g_pre
                    .iter()
                    .zip(b)
                    .fold(S::zero(), |acc, (&g, &bv)| acc + g * S::from_f64(bv));
                S::from_f64(amp) * dot * (S::one() - c[j] * c[j])
            })
            .collect();

        let dim = self.dim();
        let mut gw = vec![S::zero(); dim];
        for (row, g) in self.inner.q.chunks(dim).zip(g_u.iter().chain(&g_v)) {
            for (o, &qv) in gw.iter_mut().zip(row) {
                *o += *g * S::from_f64(qv);
            }
        }
        let (r, cdim) = self.latent_shape_dims();
        Ok(LatentCode::from_parts(r, cdim, gw))
    }

    fn sample_latent(&self, rng: &mut IsfRng) -> LatentCode<S> {
        let (r, c) = self.latent_shape_dims();
        LatentCode::sample_gaussian(r, c, rng)
    }

    fn parameter_bytes(&self) -> Vec<u8> {
        let cfg = &self.inner.config;
        let mut out = Vec::new();
        for v in [cfg.seed, cfg.m as u64, cfg.k as u64, cfg.rows as u64, cfg.cols as u64] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&cfg.texture_amplitude.to_le_bytes());
        out.extend_from_slice(&cfg.sharpness.to_le_bytes());
        for v in &self.inner.q {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for t in &self.inner.textures {
            for v in [t.f, t.p, t.q, t.phase] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }
}

impl<S: Real> AttributeClassifier<S> for ToyStack {
    fn name(&self) -> &str {
        "toy"
    }

    fn num_attributes(&self) -> usize {
        self.inner.config.m
    }

    fn resolution(&self) -> (usize, usize) {
        (TOY_RESOLUTION, TOY_RESOLUTION)
    }

    fn classify(&self, x: &ImageTensor<S>) -> Result<AttributeVector<S>> {
        let s = S::from_f64(self.inner.config.sharpness);
        let probs = self
            .region_means(x)?
            .into_iter()
            .map(|mean| sigmoid(s * mean))
            .collect();
        Ok(AttributeVector::clamped(probs))
    }
}

/// Identity embedder recovering the toy content coefficients.
#[derive(Clone, Debug)]
pub struct ToyIdentityEmbedder {
    stack: ToyStack,
}

impl<S: Real> Embedder<S> for ToyIdentityEmbedder {
    fn name(&self) -> &str {
        "toy-identity"
    }
    fn role(&self) -> EmbedderRole {
        EmbedderRole::Identity
    }
    fn dim(&self) -> usize {
        self.stack.content_dim()
    }
    fn embed(&self, x: &ImageTensor<S>) -> Result<Vec<S>> {
        self.stack.identity_embed(x)
    }
    fn embed_vjp(&self, x: &ImageTensor<S>, grad: &[S]) -> Result<ImageTensor<S>> {
        self.stack.identity_embed_vjp(x, grad)
    }
}

/// Linear perceptual features: horizontal then vertical forward differences
/// of every channel, `(H (W - 1) + (H - 1) W) * 3` values.
#[derive(Clone, Debug)]
pub struct EdgeEmbedder {
    height: usize,
    width: usize,
}

impl EdgeEmbedder {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(invalid("edge features need at least 2x2 images"));
        }
        Ok(Self { height, width })
    }

    fn horizontal_len(&self) -> usize {
        self.height * (self.width - 1) * CHANNELS
    }
}

impl<S: Real> Embedder<S> for EdgeEmbedder {
    fn name(&self) -> &str {
        "edges"
    }
    fn role(&self) -> EmbedderRole {
        EmbedderRole::Perceptual
    }
    fn dim(&self) -> usize {
        self.horizontal_len() + (self.height - 1) * self.width * CHANNELS
    }
    fn embed(&self, x: &ImageTensor<S>) -> Result<Vec<S>> {
        x.ensure_resolution((self.height, self.width))?;
        let (h, w) = (self.height, self.width);
        let px = x.as_slice();
        let at = |y: usize, xx: usize, c: usize| px[(y * w + xx) * CHANNELS + c];
        let mut out = Vec::with_capacity(Embedder::<S>::dim(self));
        for y in 0..h {
            for xx in 0..w - 1 {
                for c in 0..CHANNELS {
                    out.push(at(y, xx + 1, c) - at(y, xx, c));
                }
            }
        }
        for y in 0..h - 1 {
            for xx in 0..w {
                for c in 0..CHANNELS {
                    out.push(at(y + 1, xx, c) - at(y, xx, c));
                }
            }
        }
        Ok(out)
    }
    fn embed_vjp(&self, x: &ImageTensor<S>, grad: &[S]) -> Result<ImageTensor<S>> {
        x.ensure_resolution((self.height, self.width))?;
        if grad.len() != Embedder::<S>::dim(self) {
            return Err(invalid("perceptual gradient length mismatch"));
        }
        let (h, w) = (self.height, self.width);
        let mut data = vec![S::zero(); h * w * CHANNELS];
        let idx = |y: usize, xx: usize, c: usize| (y * w + xx) * CHANNELS + c;
        let mut k = 0;
        for y in 0..h {
            for xx in 0..w - 1 {
                for c in 0..CHANNELS {
                    data[idx(y, xx + 1, c)] += grad[k];
                    data[idx(y, xx, c)] -= grad[k];
                    k += 1;
                }
            }
        }
        for y in 0..h - 1 {
            for xx in 0..w {
                for c in 0..CHANNELS {
                    data[idx(y + 1, xx, c)] += grad[k];
                    data[idx(y, xx, c)] -= grad[k];
                    k += 1;
                }
            }
        }
        Ok(ImageTensor::from_parts(h, w, data))
    }
}

/// Linear perceptual features: non-overlapping `factor x factor` average pooling
/// per channel.
#[derive(Clone, Debug)]
pub struct PooledPixelEmbedder {
    height: usize,
    width: usize,
    factor: usize,
}

impl PooledPixelEmbedder {
    pub fn new(height: usize, width: usize, factor: usize) -> Result<Self> {
        if factor == 0 || height % factor != 0 || width % factor != 0 {
            return Err(invalid("pooling factor must divide the image resolution"));
        }
        Ok(Self {
            height,
            width,
            factor,
        })
    }

    fn out_dims(&self) -> (usize, usize) {
        (self.height / self.factor, self.width / self.factor)
    }

    /// Dense matrix of the pooling map, `dim x (H * W * 3)`. Used as an oracle.
    pub fn matrix(&self) -> Vec<Vec<f64>> {
        let (oh, ow) = self.out_dims();
        let n = self.height * self.width * CHANNELS;
        let inv = 1.0 / (self.factor * self.factor) as f64;
        let mut rows = vec![vec![0.0; n]; oh * ow * CHANNELS];
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..CHANNELS {
                    let o = ((y / self.factor) * ow + x / self.factor) * CHANNELS + c;
                    rows[o][(y * self.width + x) * CHANNELS + c] = inv;
                }
            }
        }
        rows
    }
}

impl<S: Real> Embedder<S> for PooledPixelEmbedder {
    fn name(&self) -> &str {
        "pooled-pixels"
    }
    fn role(&self) -> EmbedderRole {
        EmbedderRole::Perceptual
    }
    fn dim(&self) -> usize {
        let (oh, ow) = self.out_dims();
        oh * ow * CHANNELS
    }
    fn embed(&self, x: &ImageTensor<S>) -> Result<Vec<S>> {
        x.ensure_resolution((self.height, self.width))?;
        let (_, ow) = self.out_dims();
        let mut out = vec![S::zero(); Embedder::<S>::dim(self)];
        let px = x.as_slice();
        for y in 0..self.height {
            for xx in 0..self.width {
                let base = ((y / self.factor) * ow + xx / self.factor) * CHANNELS;
                let src = (y * self.width + xx) * CHANNELS;
                for c in 0..CHANNELS {
                    out[base + c] += px[src + c];
                }
            }
        }
        let inv = S::from_f64(1.0 / (self.factor * self.factor) as f64);
        out.iter_mut().for_each(|v| *v *= inv);
        Ok(out)
    }
    fn embed_vjp(&self, x: &ImageTensor<S>, grad: &[S]) -> Result<ImageTensor<S>> {
        x.ensure_resolution((self.height, self.width))?;
        if grad.len() != Embedder::<S>::dim(self) {
            return Err(invalid("perceptual gradient length mismatch"));
        }
        let (_, ow) = self.out_dims();
        let inv = S::from_f64(1.0 / (self.factor * self.factor) as f64);
        let mut data = vec![S::zero(); self.height * self.width * CHANNELS];
        for y in 0..self.height {
            for xx in 0..self.width {
                let base = ((y / self.factor) * ow + xx / self.factor) * CHANNELS;
                let dst = (y * self.width + xx) * CHANNELS;
                for c in 0..CHANNELS {
                    data[dst + c] = grad[base + c] * inv;
                }
            }
        }
        Ok(ImageTensor::from_parts(self.height, self.width, data))
    }
}
