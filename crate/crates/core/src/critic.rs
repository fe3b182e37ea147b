//! Multi-task discriminator: a shared stride-2 convolutional trunk feeding a
//! real/fake logit head and an `m`-way multi-label attribute head.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::params::{LinearIdx, ParamBuffer, ParamLayout};
use crate::real::{leaky_relu, leaky_relu_grad, Dual, Real};
use crate::types::{ImageTensor, IsfRng, CHANNELS};

const KERNEL: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticDims {
    /// Square input resolution; a power of two, at least 4.
    pub resolution: usize,
    #[serde(default = "default_base")]
    pub base_channels: usize,
    pub attributes: usize,
}

fn default_base() -> usize {
    32
}

impl CriticDims {
    pub fn new(resolution: usize, attributes: usize) -> Self {
        Self {
            resolution,
            base_channels: default_base(),
            attributes,
        }
    }

    pub fn with_base_channels(mut self, base: usize) -> Self {
        self.base_channels = base;
        self
    }

    /// Blocks halve the resolution down to `2 x 2`.
    pub fn num_blocks(&self) -> usize {
        self.resolution.trailing_zeros() as usize - 1
    }

    pub fn channels(&self, block: usize) -> usize {
        self.base_channels << block
    }

    /// Channels of the last block, globally average-pooled.
    pub fn feature_len(&self) -> usize {
        self.channels(self.num_blocks() - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 4 || !self.resolution.is_power_of_two() {
            return Err(invalid(format!(
                "critic resolution must be a power of two >= 4, got {}",
                self.resolution
            )));
        }
        if self.base_channels == 0 || self.attributes == 0 {
            return Err(invalid("critic widths must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvIdx {
    weight: usize,
    bias: usize,
    in_c: usize,
    out_c: usize,
    /// Input spatial size (square).
    size: usize,
}

#[derive(Debug)]
struct CriticLayout {
    convs: Vec<ConvIdx>,
    rf: LinearIdx,
    cls: LinearIdx,
}

fn build_layout(dims: &CriticDims) -> (ParamLayout, CriticLayout) {
    let mut layout = ParamLayout::default();
    let mut convs = Vec::new();
    let mut in_c = CHANNELS;
    let mut size = dims.resolution;
    for b in 0..dims.num_blocks() {
        let out_c = dims.channels(b);
        let weight = layout.push(format!("trunk.{b}.weight"), vec![out_c, in_c, KERNEL, KERNEL]);
        let bias = layout.push(format!("trunk.{b}.bias"), vec![out_c]);
        convs.push(ConvIdx {
            weight,
            bias,
            in_c,
            out_c,
            size,
        });
        in_c = out_c;
        size /= 2;
    }
    let feat = dims.feature_len();
    let rf = LinearIdx::register(&mut layout, "rf_head", feat, 1);
    let cls = LinearIdx::register(&mut layout, "cls_head", feat, dims.attributes);
    (layout, CriticLayout { convs, rf, cls })
}

#[derive(Clone, Debug)]
pub struct CriticParams<S = f32> {
    dims: CriticDims,
    net: Arc<CriticLayout>,
    buf: ParamBuffer<S>,
}

impl<S: Real> CriticParams<S> {
    pub fn zeros(dims: CriticDims) -> Result<Self> {
        dims.validate()?;
        let (layout, net) = build_layout(&dims);
        Ok(Self {
            dims,
            net: Arc::new(net),
            buf: ParamBuffer::zeros(Arc::new(layout)),
        })
    }

    /// He-uniform convolutions, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` heads,
    /// zero biases.
    pub fn init(dims: CriticDims, rng: &mut IsfRng) -> Result<Self> {
        let mut p = Self::zeros(dims)?;
        let net = p.net.clone();
        for conv in &net.convs {
            let bound = (6.0 / (conv.in_c * KERNEL * KERNEL) as f64).sqrt();
            for v in p.buf.tensor_mut(conv.weight) {
                *v = S::from_f64(rng.random_range(-bound..bound));
            }
        }
        for head in [net.rf, net.cls] {
            let bound = 1.0 / (head.input as f64).sqrt();
            for v in p.buf.tensor_mut(head.weight) {
                *v = S::from_f64(rng.random_range(-bound..bound));
            }
        }
        Ok(p)
    }

    pub fn from_buffer(dims: CriticDims, buf: ParamBuffer<S>) -> Result<Self> {
        let zero = Self::zeros(dims)?;
        if **buf.layout() != **zero.buf.layout() {
            return Err(invalid("parameter layout does not match critic dims"));
        }
        Ok(Self { buf, ..zero })
    }

    pub fn dims(&self) -> &CriticDims {
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

    pub fn cast<T: Real>(&self) -> CriticParams<T> {
        CriticParams {
            dims: self.dims.clone(),
            net: self.net.clone(),
            buf: self.buf.cast(),
        }
    }

    /// Lifts parameters to dual numbers with zero tangent.
    pub fn to_dual(&self) -> CriticParams<Dual<S>> {
        CriticParams {
            dims: self.dims.clone(),
            net: self.net.clone(),
            buf: self.buf.map(Dual::constant),
        }
    }

    pub fn rf_head(&self) -> LinearIdx {
        self.net.rf
    }

    pub fn cls_head(&self) -> LinearIdx {
        self.net.cls
    }

    fn check(&self, x: &ImageTensor<S>) -> Result<()> {
        x.ensure_resolution((self.dims.resolution, self.dims.resolution))
    }

    pub fn forward(&self, x: &ImageTensor<S>) -> Result<CriticPass<S>> {
        self.check(x)?;
        let size = self.dims.resolution;
        // HWC -> CHW
        let px = x.as_slice();
        let mut act = vec![S::zero(); px.len()];
        for (i, chunk) in px.chunks(CHANNELS).enumerate() {
            for (c, &v) in chunk.iter().enumerate() {
                act[c * size * size + i] = v;
            }
        }
        let mut inputs = Vec::with_capacity(self.net.convs.len());
        let mut pres = Vec::with_capacity(self.net.convs.len());
        for conv in &self.net.convs {
            let pre = conv_forward(&self.buf, conv, &act);
            let next = pre.iter().map(|&v| leaky_relu(v)).collect();
            inputs.push(std::mem::replace(&mut act, next));
            pres.push(pre);
        }
        let features = global_pool(&act, self.dims.feature_len());
        let rf = self.net.rf.forward(&self.buf, &features)[0];
        let cls = self.net.cls.forward(&self.buf, &features);
        Ok(CriticPass {
            inputs,
            pres,
            features,
            rf,
            cls,
        })
    }

    /// Trunk features consumed by both heads.
    pub fn features(&self, x: &ImageTensor<S>) -> Result<Vec<S>> {
        Ok(self.forward(x)?.features)
    }

    /// Real/fake logit.
    pub fn discriminate(&self, x: &ImageTensor<S>) -> Result<S> {
        Ok(self.forward(x)?.rf)
    }

    /// Per-attribute logits (sigmoid, not softmax, downstream).
    pub fn classify_logits(&self, x: &ImageTensor<S>) -> Result<Vec<S>> {
        Ok(self.forward(x)?.cls)
    }

    /// Back-propagates upstream gradients on both heads. Parameter gradients
    /// accumulate into `grads`; with `want_input` the input-image gradient is
    /// returned (HWC layout).
    pub fn backward(
        &self,
        pass: &CriticPass<S>,
        g_rf: S,
        g_cls: &[S],
        grads: &mut CriticParams<S>,
        want_input: bool,
    ) -> Result<Option<ImageTensor<S>>> {
        if g_cls.len() != self.dims.attributes {
            return Err(invalid("classification gradient length mismatch"));
        }
        let gbuf = &mut grads.buf;
        let mut g = self.net.rf.backward(&self.buf, &pass.features, &[g_rf], gbuf);
        let g2 = self.net.cls.backward(&self.buf, &pass.features, g_cls, gbuf);
        for (a, b) in g.iter_mut().zip(&g2) {
            *a += *b;
        }
        let last = pass.pres.last().map_or(0, Vec::len);
        let area = last / g.len();
        let inv = S::from_f64(1.0 / area as f64);
        let mut g: Vec<S> = g.iter().flat_map(|&v| std::iter::repeat_n(v * inv, area)).collect();
        for (i, conv) in self.net.convs.iter().enumerate().rev() {
            let g_pre: Vec<S> = g
                .iter()
                .zip(&pass.pres[i])
                .map(|(&gv, &p)| gv * leaky_relu_grad(p))
                .collect();
            g = conv_backward(&self.buf, conv, &pass.inputs[i], &g_pre, gbuf, want_input || i > 0);
        }
        if !want_input {
            return Ok(None);
        }
        let size = self.dims.resolution;
        let plane = size * size;
        let mut data = vec![S::zero(); plane * CHANNELS];
        for c in 0..CHANNELS {
            for i in 0..plane {
                data[i * CHANNELS + c] = g[c * plane + i];
            }
        }
        Ok(Some(ImageTensor::from_parts(size, size, data)))
    }
}

/// Mean over each channel plane of a CHW buffer.
fn global_pool<S: Real>(act: &[S], channels: usize) -> Vec<S> {
    let area = act.len() / channels;
    let inv = S::from_f64(1.0 / area as f64);
    act.chunks_exact(area)
        .map(|plane| plane.iter().copied().sum::<S>() * inv)
        .collect()
}

/// Activations of one forward pass.
#[derive(Clone, Debug)]
pub struct CriticPass<S> {
    inputs: Vec<Vec<S>>,
    pres: Vec<Vec<S>>,
    features: Vec<S>,
    pub rf: S,
    pub cls: Vec<S>,
}

impl<S: Real> CriticPass<S> {
    pub fn features(&self) -> &[S] {
        &self.features
    }
}

#[cfg(test)]
fn conv_forward_direct<S: Real>(buf: &ParamBuffer<S>, conv: &ConvIdx, input: &[S]) -> Vec<S> {
    let size = conv.size;
    let out_size = size / 2;
    let plane_in = size * size;
    let plane_out = out_size * out_size;
    let w = buf.tensor(conv.weight);
    let b = buf.tensor(conv.bias);
    let mut out = vec![S::zero(); conv.out_c * plane_out];
    for o in 0..conv.out_c {
        let dst = &mut out[o * plane_out..(o + 1) * plane_out];
        dst.iter_mut().for_each(|v| *v = b[o]);
        for i in 0..conv.in_c {
            let src = &input[i * plane_in..(i + 1) * plane_in];
            let kbase = (o * conv.in_c + i) * KERNEL * KERNEL;
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let wv = w[kbase + ky * KERNEL + kx];
                    for oy in 0..out_size {
                        let iy = 2 * oy + ky;
                        if iy == 0 || iy > size {
                            continue;
                        }
                        let row = &src[(iy - 1) * size..iy * size];
                        let drow = &mut dst[oy * out_size..(oy + 1) * out_size];
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = 2 * ox + kx;
                            if ix == 0 || ix > size {
                                continue;
                            }
                            *d += wv * row[ix - 1];
                        }
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
fn conv_backward_direct<S: Real>(
    buf: &ParamBuffer<S>,
    conv: &ConvIdx,
    input: &[S],
    g_out: &[S],
    grads: &mut ParamBuffer<S>,
    want_input: bool,
) -> Vec<S> {
    let size = conv.size;
    let out_size = size / 2;
    let plane_in = size * size;
    let plane_out = out_size * out_size;
    {
        let gb = grads.tensor_mut(conv.bias);
        for o in 0..conv.out_c {
            gb[o] += g_out[o * plane_out..(o + 1) * plane_out].iter().copied().sum::<S>();
        }
    }
    let w = buf.tensor(conv.weight);
    let mut g_in = if want_input {
        vec![S::zero(); conv.in_c * plane_in]
    } else {
        Vec::new()
    };
    let mut gw_local = vec![S::zero(); w.len()];
    for o in 0..conv.out_c {
        let go = &g_out[o * plane_out..(o + 1) * plane_out];
        for i in 0..conv.in_c {
            let src = &input[i * plane_in..(i + 1) * plane_in];
            let kbase = (o * conv.in_c + i) * KERNEL * KERNEL;
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let wv = w[kbase + ky * KERNEL + kx];
                    let mut acc = S::zero();
                    for oy in 0..out_size {
                        let iy = 2 * oy + ky;
                        if iy == 0 || iy > size {
                            continue;
                        }
                        let row_off = (iy - 1) * size;
                        let grow = &go[oy * out_size..(oy + 1) * out_size];
                        for (ox, &g) in grow.iter().enumerate() {
                            let ix = 2 * ox + kx;
                            if ix == 0 || ix > size {
                                continue;
                            }
                            acc += g * src[row_off + ix - 1];
                            if want_input {
                                g_in[i * plane_in + row_off + ix - 1] += wv * g;
                            }
                        }
                    }
                    gw_local[kbase + ky * KERNEL + kx] = acc;
                }
            }
        }
    }
    let gw = grads.tensor_mut(conv.weight);
    for (a, b) in gw.iter_mut().zip(gw_local) {
        *a += b;
    }
    g_in
}

/// Patch matrix: row `p` holds the 3x3 receptive field of output pixel `p`
/// for every input channel, ordered like the weight tensor (`in, ky, kx`).
fn im2col<S: Real>(conv: &ConvIdx, input: &[S]) -> Vec<S> {
    let size = conv.size;
    let out_size = size / 2;
    let k = conv.in_c * KERNEL * KERNEL;
    let mut cols = vec![S::zero(); out_size * out_size * k];
    for oy in 0..out_size {
        for ox in 0..out_size {
            let row = &mut cols[(oy * out_size + ox) * k..(oy * out_size + ox + 1) * k];
            for i in 0..conv.in_c {
                let plane = &input[i * size * size..(i + 1) * size * size];
                for ky in 0..KERNEL {
                    let iy = 2 * oy + ky;
                    if iy == 0 || iy > size {
                        continue;
                    }
                    for kx in 0..KERNEL {
                        let ix = 2 * ox + kx;
                        if ix == 0 || ix > size {
                            continue;
                        }
                        row[(i * KERNEL + ky) * KERNEL + kx] = plane[(iy - 1) * size + ix - 1];
                    }
                }
            }
        }
    }
    cols
}

fn dot<S: Real>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}

fn axpy<S: Real>(alpha: S, x: &[S], y: &mut [S]) {
    for (o, &v) in y.iter_mut().zip(x) {
        *o += alpha * v;
    }
}

/// 3x3 convolution, stride 2, zero padding 1, CHW layout.
fn conv_forward<S: Real>(buf: &ParamBuffer<S>, conv: &ConvIdx, input: &[S]) -> Vec<S> {
    let out_size = conv.size / 2;
    let plane_out = out_size * out_size;
    let k = conv.in_c * KERNEL * KERNEL;
    let cols = im2col(conv, input);
    let w = buf.tensor(conv.weight);
    let b = buf.tensor(conv.bias);
    let mut out = vec![S::zero(); conv.out_c * plane_out];
    for (o, (wrow, dst)) in w.chunks_exact(k).zip(out.chunks_exact_mut(plane_out)).enumerate() {
        for (d, patch) in dst.iter_mut().zip(cols.chunks_exact(k)) {
            *d = b[o] + dot(wrow, patch);
        }
    }
    out
}

fn conv_backward<S: Real>(
    buf: &ParamBuffer<S>,
    conv: &ConvIdx,
    input: &[S],
    g_out: &[S],
    grads: &mut ParamBuffer<S>,
    want_input: bool,
) -> Vec<S> {
    let size = conv.size;
    let out_size = size / 2;
    let plane_out = out_size * out_size;
    let k = conv.in_c * KERNEL * KERNEL;
    let cols = im2col(conv, input);
    {
        let gb = grads.tensor_mut(conv.bias);
        for (o, go) in g_out.chunks_exact(plane_out).enumerate() {
            gb[o] += go.iter().copied().sum::<S>();
        }
    }
    {
        let gw = grads.tensor_mut(conv.weight);
        for (gwrow, go) in gw.chunks_exact_mut(k).zip(g_out.chunks_exact(plane_out)) {
            for (&g, patch) in go.iter().zip(cols.chunks_exact(k)) {
                if g != S::zero() {
                    axpy(g, patch, gwrow);
                }
            }
        }
    }
    if !want_input {
        return Vec::new();
    }
    let w = buf.tensor(conv.weight);
    let mut g_cols = vec![S::zero(); cols.len()];
    for (p, gp) in g_cols.chunks_exact_mut(k).enumerate() {
        for (wrow, go) in w.chunks_exact(k).zip(g_out.chunks_exact(plane_out)) {
            let g = go[p];
            if g != S::zero() {
                axpy(g, wrow, gp);
            }
        }
    }
    let mut g_in = vec![S::zero(); conv.in_c * size * size];
    for oy in 0..out_size {
        for ox in 0..out_size {
            let row = &g_cols[(oy * out_size + ox) * k..(oy * out_size + ox + 1) * k];
            for i in 0..conv.in_c {
                let plane = &mut g_in[i * size * size..(i + 1) * size * size];
                for ky in 0..KERNEL {
                    let iy = 2 * oy + ky;
                    if iy == 0 || iy > size {
                        continue;
                    }
                    for kx in 0..KERNEL {
                        let ix = 2 * ox + kx;
                        if ix == 0 || ix > size {
                            continue;
                        }
                        plane[(iy - 1) * size + ix - 1] += row[(i * KERNEL + ky) * KERNEL + kx];
                    }
                }
            }
        }
    }
    g_in
}
