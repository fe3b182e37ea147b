//! The implicit style function `M(w, z, d) = f2(AdaLN(w, gamma, beta))` with
//! `(gamma, beta)` a linear function of `h = f1(d ++ z)`.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::params::{LinearIdx, ParamBuffer, ParamLayout};
use crate::real::{leaky_relu, leaky_relu_grad, Real};
use crate::types::{AttributeVector, IsfRng, LatentCode, NoiseVector};

pub const ADALN_EPS: f64 = 1e-8;

/// Which entries share one mean/std pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormAxis {
    /// One pair over the whole `L x C` code.
    #[default]
    Layer,
    /// One pair per row (style layer).
    PerRow,
}

/// Granularity of the predicted scale/shift.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modulation {
    /// `gamma` and `beta` have one entry per code element.
    #[default]
    Elementwise,
    /// One scale/shift per row, broadcast across columns (AdaIN-style).
    PerRow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsfDims {
    pub rows: usize,
    pub cols: usize,
    pub attributes: usize,
    pub noise: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_depth")]
    pub f1_depth: usize,
    #[serde(default = "default_depth")]
    pub f2_depth: usize,
    #[serde(default)]
    pub norm: NormAxis,
    #[serde(default)]
    pub modulation: Modulation,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_hidden() -> usize {
    256
}
fn default_depth() -> usize {
    2
}
fn default_eps() -> f64 {
    ADALN_EPS
}

impl IsfDims {
    /// Toy defaults: `4 x 16` codes, 4 attributes, 32 noise dims, width 256.
    pub fn toy() -> Self {
        Self {
            rows: 4,
            cols: 16,
            attributes: 4,
            noise: 32,
            hidden: default_hidden(),
            f1_depth: default_depth(),
            f2_depth: default_depth(),
            norm: NormAxis::Layer,
            modulation: Modulation::Elementwise,
            eps: ADALN_EPS,
        }
    }

    pub fn code_len(&self) -> usize {
        self.rows * self.cols
    }

    fn modulation_len(&self) -> usize {
        match self.modulation {
            Modulation::Elementwise => self.code_len(),
            Modulation::PerRow => self.rows,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.attributes == 0 || self.noise == 0 {
            return Err(invalid("style function dimensions must be positive"));
        }
        if self.hidden == 0 || self.f1_depth == 0 {
            return Err(invalid("f1 needs at least one hidden layer of positive width"));
        }
        if !(self.eps > 0.0) {
            return Err(invalid("normalization eps must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct IsfLayout {
    f1: Vec<LinearIdx>,
    affine: LinearIdx,
    /// Hidden layers followed by the final (linear) layer.
    f2: Vec<LinearIdx>,
}

fn build_layout(dims: &IsfDims) -> (ParamLayout, IsfLayout) {
    let mut layout = ParamLayout::default();
    let mut f1 = Vec::new();
    let mut input = dims.attributes + dims.noise;
    for i in 0..dims.f1_depth {
        f1.push(LinearIdx::register(&mut layout, &format!("f1.{i}"), input, dims.hidden));
        input = dims.hidden;
    }
    let affine = LinearIdx::register(&mut layout, "affine", dims.hidden, 2 * dims.modulation_len());
    let mut f2 = Vec::new();
    let mut input = dims.code_len();
    for i in 0..dims.f2_depth {
        f2.push(LinearIdx::register(&mut layout, &format!("f2.{i}"), input, dims.hidden));
        input = dims.hidden;
    }
    f2.push(LinearIdx::register(&mut layout, "f2.out", input, dims.code_len()));
    (layout, IsfLayout { f1, affine, f2 })
}

/// All learnable parameters of the style function.
#[derive(Clone, Debug, PartialEq)]
pub struct IsfParams<S = f32> {
    dims: IsfDims,
    net: Arc<IsfLayoutHandle>,
    buf: ParamBuffer<S>,
}

#[derive(Debug)]
struct IsfLayoutHandle(IsfLayout);

impl PartialEq for IsfLayoutHandle {
    fn eq(&self, _: &Self) -> bool {
        // Layout is a pure function of dims, which are compared separately.
        true
    }
}

/// Closed-form parameter count.
pub fn parameter_count(dims: &IsfDims) -> usize {
    let (layout, _) = build_layout(dims);
    layout.total()
}

impl<S: Real> IsfParams<S> {
    /// All-zero parameters (used for gradient accumulators).
    pub fn zeros(dims: IsfDims) -> Result<Self> {
        dims.validate()?;
        let (layout, net) = build_layout(&dims);
        Ok(Self {
            dims,
            net: Arc::new(IsfLayoutHandle(net)),
            buf: ParamBuffer::zeros(Arc::new(layout)),
        })
    }

    /// He-uniform hidden weights, zero biases, zero affine map and zero final
    /// `f2` layer, so a fresh network returns the normalized input code.
    pub fn init(dims: IsfDims, rng: &mut IsfRng) -> Result<Self> {
        let mut p = Self::zeros(dims)?;
        let net = p.net.clone();
        let hidden = net.0.f1.iter().chain(&net.0.f2[..net.0.f2.len() - 1]);
        for lin in hidden {
            let bound = (6.0 / lin.input as f64).sqrt();
            for v in p.buf.tensor_mut(lin.weight) {
                *v = S::from_f64(rng.random_range(-bound..bound));
            }
        }
        Ok(p)
    }

    pub fn from_buffer(dims: IsfDims, buf: ParamBuffer<S>) -> Result<Self> {
        let zero = Self::zeros(dims)?;
        if **buf.layout() != **zero.buf.layout() {
            return Err(invalid("parameter layout does not match style function dims"));
        }
        Ok(Self { buf, ..zero })
    }

    pub fn dims(&self) -> &IsfDims {
        &self.dims
    }

    pub fn buffer(&self) -> &ParamBuffer<S> {
        &self.buf
    }

    pub fn buffer_mut(&mut self) -> &mut ParamBuffer<S> {
        &mut self.buf
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            dims: self.dims.clone(),
            net: self.net.clone(),
            buf: self.buf.zeros_like(),
        }
    }

    pub fn cast<T: Real>(&self) -> IsfParams<T> {
        IsfParams {
            dims: self.dims.clone(),
            net: self.net.clone(),
            buf: self.buf.cast(),
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.buf.as_slice().len()
    }

    pub fn affine_idx(&self) -> LinearIdx {
        self.net.0.affine
    }

    fn check_inputs(&self, w: &LatentCode<S>, z: &NoiseVector<S>, d: &AttributeVector<S>) -> Result<()> {
        w.ensure_shape((self.dims.rows, self.dims.cols))?;
        if z.len() != self.dims.noise {
            return Err(invalid(format!(
                "noise length {} does not match {}",
                z.len(),
                self.dims.noise
            )));
        }
        if d.len() != self.dims.attributes {
            return Err(invalid(format!(
                "attribute length {} does not match {}",
                d.len(),
                self.dims.attributes
            )));
        }
        Ok(())
    }

    /// Conditioning MLP `h = f1(d ++ z)`.
    pub fn conditioning(&self, d: &AttributeVector<S>, z: &NoiseVector<S>) -> Result<Vec<S>> {
        if d.len() != self.dims.attributes || z.len() != self.dims.noise {
            return Err(invalid("conditioning input size mismatch"));
        }
        let mut a: Vec<S> = d.as_slice().iter().chain(z.as_slice()).copied().collect();
        for lin in &self.net.0.f1 {
            a = lin.forward(&self.buf, &a).into_iter().map(leaky_relu).collect();
        }
        Ok(a)
    }

    /// Maps `h` to `(gamma, beta)` expanded to full code length.
    pub fn style_affine(&self, h: &[S]) -> Result<(Vec<S>, Vec<S>)> {
        let aff = self.net.0.affine;
        if h.len() != aff.input {
            return Err(invalid(format!(
                "affine input width {} does not match {}",
                h.len(),
                aff.input
            )));
        }
        let raw = aff.forward(&self.buf, h);
        Ok(self.expand_modulation(&raw))
    }

    fn expand_modulation(&self, raw: &[S]) -> (Vec<S>, Vec<S>) {
        let g = self.dims.modulation_len();
        let p = self.dims.code_len();
        let idx = |i: usize| match self.dims.modulation {
            Modulation::Elementwise => i,
            Modulation::PerRow => i / self.dims.cols,
        };
        let gamma = (0..p).map(|i| S::one() + raw[idx(i)]).collect();
        let beta = (0..p).map(|i| raw[g + idx(i)]).collect();
        (gamma, beta)
    }

    pub fn forward(
        &self,
        w: &LatentCode<S>,
        z: &NoiseVector<S>,
        d: &AttributeVector<S>,
    ) -> Result<LatentCode<S>> {
        Ok(self.forward_cached(w, z, d)?.output())
    }

    pub fn forward_cached(
        &self,
        w: &LatentCode<S>,
        z: &NoiseVector<S>,
        d: &AttributeVector<S>,
    ) -> Result<IsfCache<S>> {
        self.check_inputs(w, z, d)?;
        let net = &self.net.0;

        let input: Vec<S> = d.as_slice().iter().chain(z.as_slice()).copied().collect();
        let mut f1_inputs = Vec::with_capacity(net.f1.len());
        let mut f1_pre = Vec::with_capacity(net.f1.len());
        let mut a = input;
        for lin in &net.f1 {
            let pre = lin.forward(&self.buf, &a);
            f1_inputs.push(std::mem::replace(&mut a, pre.iter().map(|&v| leaky_relu(v)).collect()));
            f1_pre.push(pre);
        }
        let h = a;
        let raw = net.affine.forward(&self.buf, &h);
        let (gamma, beta) = self.expand_modulation(&raw);

        let norm = normalize(w, self.dims.norm, S::from_f64(self.dims.eps));
        let modulated: Vec<S> = norm
            .normalized
            .iter()
            .zip(&gamma)
            .zip(&beta)
            .map(|((&n, &g), &b)| g * n + b)
            .collect();

        let mut f2_inputs = Vec::with_capacity(net.f2.len());
        let mut f2_pre = Vec::with_capacity(net.f2.len() - 1);
        let mut a = modulated.clone();
        let last = net.f2.len() - 1;
        for (i, lin) in net.f2.iter().enumerate() {
            let pre = lin.forward(&self.buf, &a);
            if i == last {
                f2_inputs.push(std::mem::replace(&mut a, pre));
            } else {
                f2_inputs.push(std::mem::replace(&mut a, pre.iter().map(|&v| leaky_relu(v)).collect()));
                f2_pre.push(pre);
            }
        }
        let out: Vec<S> = a.iter().zip(&modulated).map(|(&o, &n)| o + n).collect();

        Ok(IsfCache {
            rows: self.dims.rows,
            cols: self.dims.cols,
            f1_inputs,
            f1_pre,
            h,
            gamma,
            norm,
            f2_inputs,
            f2_pre,
            out,
        })
    }

    /// Back-propagates `dL/dw*` through a cached forward pass. Parameter
    /// gradients are accumulated into `grads`; the return value is `dL/dw`.
    pub fn backward(&self, cache: &IsfCache<S>, g_out: &[S], grads: &mut IsfParams<S>) -> Result<Vec<S>> {
        if g_out.len() != self.dims.code_len() {
            return Err(invalid("output gradient length mismatch"));
        }
        let net = &self.net.0;
        let gbuf = &mut grads.buf;

        // f2 with residual connection around it.
        let mut g_mod: Vec<S> = g_out.to_vec();
        let mut g = g_out.to_vec();
        for (i, lin) in net.f2.iter().enumerate().rev() {
            if i < net.f2.len() - 1 {
                g = g
                    .iter()
                    .zip(&cache.f2_pre[i])
                    .map(|(&gv, &p)| gv * leaky_relu_grad(p))
                    .collect();
            }
            g = lin.backward(&self.buf, &cache.f2_inputs[i], &g, gbuf);
        }
        for (a, b) in g_mod.iter_mut().zip(&g) {
            *a += *b;
        }

        // Modulation.
        let p = self.dims.code_len();
        let glen = self.dims.modulation_len();
        let mut g_raw = vec![S::zero(); 2 * glen];
        let mut g_norm = vec![S::zero(); p];
        for i in 0..p {
            let j = match self.dims.modulation {
                Modulation::Elementwise => i,
                Modulation::PerRow => i / self.dims.cols,
            };
            g_raw[j] += g_mod[i] * cache.norm.normalized[i];
            g_raw[glen + j] += g_mod[i];
            g_norm[i] = g_mod[i] * cache.gamma[i];
        }

        // Affine map and f1.
        let mut g = net.affine.backward(&self.buf, &cache.h, &g_raw, gbuf);
        for (i, lin) in net.f1.iter().enumerate().rev() {
            g = g
                .iter()
                .zip(&cache.f1_pre[i])
                .map(|(&gv, &pre)| gv * leaky_relu_grad(pre))
                .collect();
            g = lin.backward(&self.buf, &cache.f1_inputs[i], &g, gbuf);
        }

        Ok(cache.norm.backward(&g_norm))
    }
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct IsfCache<S> {
    rows: usize,
    cols: usize,
    f1_inputs: Vec<Vec<S>>,
    f1_pre: Vec<Vec<S>>,
    h: Vec<S>,
    gamma: Vec<S>,
    norm: Normalized<S>,
    f2_inputs: Vec<Vec<S>>,
    f2_pre: Vec<Vec<S>>,
    out: Vec<S>,
}

impl<S: Real> IsfCache<S> {
    pub fn output(&self) -> LatentCode<S> {
        LatentCode::from_parts(self.rows, self.cols, self.out.clone())
    }

    pub fn output_slice(&self) -> &[S] {
        &self.out
    }

    pub fn hidden(&self) -> &[S] {
        &self.h
    }

    pub fn normalized(&self) -> &[S] {
        &self.norm.normalized
    }
}

/// `(w - mu) / (sigma + eps)` with the statistics needed for its backward pass.
#[derive(Clone, Debug)]
pub struct Normalized<S> {
    pub normalized: Vec<S>,
    centered: Vec<S>,
    sigma: Vec<S>,
    eps: S,
    group: usize,
}

/// Normalizes `w` with one statistic pair per group (whole code or per row).
pub fn normalize<S: Real>(w: &LatentCode<S>, axis: NormAxis, eps: S) -> Normalized<S> {
    let group = match axis {
        NormAxis::Layer => w.len(),
        NormAxis::PerRow => w.cols(),
    };
    let n = S::from_f64(group as f64);
    let mut normalized = Vec::with_capacity(w.len());
    let mut centered = Vec::with_capacity(w.len());
    let mut sigma = Vec::new();
    for chunk in w.as_slice().chunks(group) {
        // A constant group is centred exactly; its rounded mean need not be.
        let mu = if chunk.iter().all(|&v| v == chunk[0]) {
            chunk[0]
        } else {
            chunk.iter().copied().sum::<S>() / n
        };
        let c: Vec<S> = chunk.iter().map(|&v| v - mu).collect();
        let var = c.iter().map(|&v| v * v).sum::<S>() / n;
        let sd = if var.to_f64() > 0.0 { var.sqrt() } else { S::zero() };
        let s = sd + eps;
        normalized.extend(c.iter().map(|&v| v / s));
        centered.extend(c);
        sigma.push(sd);
    }
    Normalized {
        normalized,
        centered,
        sigma,
        eps,
        group,
    }
}

impl<S: Real> Normalized<S> {
    pub fn backward(&self, g: &[S]) -> Vec<S> {
        let n = S::from_f64(self.group as f64);
        let mut out = Vec::with_capacity(g.len());
        for ((gc, xc), &sd) in g
            .chunks(self.group)
            .zip(self.centered.chunks(self.group))
            .zip(&self.sigma)
        {
            let s = sd + self.eps;
            let g_mean = gc.iter().copied().sum::<S>() / n;
            let gx: S = gc.iter().zip(xc).map(|(&a, &b)| a * b).sum();
            let coeff = if sd.to_f64() > 0.0 {
                gx / (s * s * n * sd)
            } else {
                S::zero()
            };
            out.extend(gc.iter().zip(xc).map(|(&gi, &xi)| (gi - g_mean) / s - coeff * xi));
        }
        out
    }
}

/// `gamma * (w - mu(w)) / (sigma(w) + eps) + beta` with one statistic pair over
/// the whole code.
pub fn adaln<S: Real>(w: &LatentCode<S>, gamma: &[S], beta: &[S], eps: S) -> Result<LatentCode<S>> {
    adaptive_norm(w, gamma, beta, eps, NormAxis::Layer)
}

/// [`adaln`] with a selectable statistics axis.
pub fn adaptive_norm<S: Real>(
    w: &LatentCode<S>,
    gamma: &[S],
    beta: &[S],
    eps: S,
    axis: NormAxis,
) -> Result<LatentCode<S>> {
    if gamma.len() != w.len() || beta.len() != w.len() {
        return Err(invalid(format!(
            "gamma/beta lengths ({}, {}) must equal code length {}",
            gamma.len(),
            beta.len(),
            w.len()
        )));
    }
    if !(eps.to_f64() >= 0.0) {
        return Err(invalid("eps must be non-negative"));
    }
    let n = normalize(w, axis, eps);
    let data = n
        .normalized
        .iter()
        .zip(gamma)
        .zip(beta)
        .map(|((&x, &g), &b)| g * x + b)
        .collect();
    Ok(LatentCode::from_parts(w.rows(), w.cols(), data))
}
