//! Batch objectives for one alternating update, with analytic gradients.
//!
//! Both functions are deterministic given their inputs; the trainer draws the
//! random targets and noise beforehand. They are generic over the scalar type
//! so the same code is checked against finite differences in `f64`.

use crate::critic::CriticParams;
use crate::error::{invalid, Error, Result};
use crate::handles::{Embedder, Generator};
use crate::isf_net::IsfParams;
use crate::objectives::{
    adv_logistic_critic, adv_loss_mapper, bce_with_logits, content_loss_grad, mean_abs_diff,
    neighbour_loss_grad, total_mapper_objective, LossWeights, MapperTerms,
};
use crate::real::{pairwise_mean, Dual, Real};
use crate::types::{AttributeVector, ImageTensor, LatentCode, NoiseVector, CHANNELS};

/// Everything random about one batch element.
#[derive(Clone, Debug)]
pub struct StepSample<S> {
    pub w: LatentCode<S>,
    /// Classifier labels of `G(w)`.
    pub d0: AttributeVector<S>,
    /// Requested attributes.
    pub d: AttributeVector<S>,
    pub z: NoiseVector<S>,
    /// Second noise draw for the diversity term.
    pub z_div: NoiseVector<S>,
    /// Noise for the backward (cycle) mapping.
    pub z_cyc: NoiseVector<S>,
}

/// Average-pools images to the critic's input resolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CriticInput {
    pub factor: usize,
}

impl CriticInput {
    pub fn new(generator_resolution: usize, critic_resolution: usize) -> Result<Self> {
        if critic_resolution == 0
            || critic_resolution > generator_resolution
            || generator_resolution % critic_resolution != 0
        {
            return Err(invalid(format!(
                "critic resolution {critic_resolution} must divide generator resolution {generator_resolution}"
            )));
        }
        Ok(Self {
            factor: generator_resolution / critic_resolution,
        })
    }

    pub fn apply<S: Real>(&self, x: &ImageTensor<S>) -> ImageTensor<S> {
        if self.factor == 1 {
            return x.clone();
        }
        let f = self.factor;
        let (h, w) = x.resolution();
        let (oh, ow) = (h / f, w / f);
        let mut out = vec![S::zero(); oh * ow * CHANNELS];
        let px = x.as_slice();
        for y in 0..h {
            for xx in 0..w {
                let o = ((y / f) * ow + xx / f) * CHANNELS;
                let i = (y * w + xx) * CHANNELS;
                for c in 0..CHANNELS {
                    out[o + c] += px[i + c];
                }
            }
        }
        let inv = S::from_f64(1.0 / (f * f) as f64);
        out.iter_mut().for_each(|v| *v *= inv);
        ImageTensor::from_parts(oh, ow, out)
    }

    pub fn vjp<S: Real>(&self, g: &ImageTensor<S>) -> ImageTensor<S> {
        if self.factor == 1 {
            return g.clone();
        }
        let f = self.factor;
        let (oh, ow) = g.resolution();
        let (h, w) = (oh * f, ow * f);
        let inv = S::from_f64(1.0 / (f * f) as f64);
        let gs = g.as_slice();
        let mut out = vec![S::zero(); h * w * CHANNELS];
        for y in 0..h {
            for xx in 0..w {
                let o = ((y / f) * ow + xx / f) * CHANNELS;
                let i = (y * w + xx) * CHANNELS;
                for c in 0..CHANNELS {
                    out[i + c] = gs[o + c] * inv;
                }
            }
        }
        ImageTensor::from_parts(h, w, out)
    }
}

#[derive(Clone, Debug)]
pub struct CriticObjective<S> {
    /// `mean softplus(-D(real)) + mean softplus(D(fake))`.
    pub logistic: S,
    /// `(gamma / 2) * mean |grad_x D(real)|^2`.
    pub r1: S,
    pub cls: S,
    pub total: S,
    pub grads: CriticParams<S>,
}

impl<S: Real> CriticObjective<S> {
    /// Adversarial critic loss including the R1 penalty.
    pub fn adversarial(&self) -> S {
        self.logistic + self.r1
    }
}

/// Gradient of the real/fake logit with respect to the (critic-resolution) image.
pub fn critic_input_gradient<S: Real>(critic: &CriticParams<S>, x: &ImageTensor<S>) -> Result<ImageTensor<S>> {
    let pass = critic.forward(x)?;
    let mut scratch = critic.zeros_like();
    let zeros = vec![S::zero(); critic.dims().attributes];
    Ok(critic
        .backward(&pass, S::one(), &zeros, &mut scratch, true)?
        .expect("input gradient requested"))
}

/// R1 penalty `(gamma / 2) * mean_b |grad_x D(x_b)|^2` on real images.
pub fn r1_penalty<S: Real>(critic: &CriticParams<S>, real: &[ImageTensor<S>], gamma: f64) -> Result<S> {
    if real.is_empty() {
        return Err(invalid("R1 penalty needs at least one real image"));
    }
    let norms = real
        .iter()
        .map(|x| {
            let g = critic_input_gradient(critic, x)?;
            Ok(g.as_slice().iter().map(|&v| v * v).sum::<S>())
        })
        .collect::<Result<Vec<S>>>()?;
    Ok(S::from_f64(gamma / 2.0) * pairwise_mean(&norms))
}

/// Critic loss `adv + r1 + lambda_cls * cls` and its parameter gradient.
///
/// The R1 parameter gradient `(dg/dtheta)^T g`, with `g = grad_x D(x)`, is the
/// tangent of `grad_theta D(x + eps * g)`; it is computed exactly by running the
/// backward pass over dual numbers.
pub fn critic_objective<S: Real>(
    critic: &CriticParams<S>,
    real: &[ImageTensor<S>],
    fake: &[ImageTensor<S>],
    d0: &[AttributeVector<S>],
    lambda_cls: f64,
    r1_gamma: f64,
) -> Result<CriticObjective<S>> {
    if real.len() != d0.len() {
        return Err(invalid("real images and labels must align"));
    }
    let real_passes = real.iter().map(|x| critic.forward(x)).collect::<Result<Vec<_>>>()?;
    let fake_passes = fake.iter().map(|x| critic.forward(x)).collect::<Result<Vec<_>>>()?;
    let real_logits: Vec<S> = real_passes.iter().map(|p| p.rf).collect();
    let fake_logits: Vec<S> = fake_passes.iter().map(|p| p.rf).collect();
    let (logistic, g_real, g_fake) = adv_logistic_critic(&real_logits, &fake_logits)?;

    let m = critic.dims().attributes;
    let cls_logits: Vec<S> = real_passes.iter().flat_map(|p| p.cls.iter().copied()).collect();
    let targets: Vec<S> = d0.iter().flat_map(|d| d.as_slice().iter().copied()).collect();
    let (cls, g_cls) = bce_with_logits(&cls_logits, &targets)?;

    let mut grads = critic.zeros_like();
    let lc = S::from_f64(lambda_cls);
    for (b, pass) in real_passes.iter().enumerate() {
        let gc: Vec<S> = g_cls[b * m..(b + 1) * m].iter().map(|&g| g * lc).collect();
        critic.backward(pass, g_real[b], &gc, &mut grads, false)?;
    }
    let zeros = vec![S::zero(); m];
    for (b, pass) in fake_passes.iter().enumerate() {
        critic.backward(pass, g_fake[b], &zeros, &mut grads, false)?;
    }

    let r1 = if r1_gamma > 0.0 {
        let dual = critic.to_dual();
        let mut dual_grads = dual.zeros_like();
        let upstream = Dual::constant(S::from_f64(r1_gamma / real.len() as f64));
        let dual_zeros = vec![Dual::<S>::default(); m];
        let mut norms = Vec::with_capacity(real.len());
        for (x, pass) in real.iter().zip(&real_passes) {
            let mut scratch = critic.zeros_like();
            let g = critic
                .backward(pass, S::one(), &zeros, &mut scratch, true)?
                .expect("input gradient requested");
            norms.push(g.as_slice().iter().map(|&v| v * v).sum::<S>());
            let (h, w) = x.resolution();
            let xd: Vec<Dual<S>> = x
                .as_slice()
                .iter()
                .zip(g.as_slice())
                .map(|(&v, &t)| Dual::new(v, t))
                .collect();
            let xd = ImageTensor::from_parts(h, w, xd);
            let dpass = dual.forward(&xd)?;
            dual.backward(&dpass, upstream, &dual_zeros, &mut dual_grads, false)?;
        }
        for (gv, dv) in grads
            .buffer_mut()
            .as_mut_slice()
            .iter_mut()
            .zip(dual_grads.buffer().as_slice())
        {
            *gv += dv.du;
        }
        S::from_f64(r1_gamma / 2.0) * pairwise_mean(&norms)
    } else {
        S::zero()
    };

    let total = logistic + r1 + lc * cls;
    first_non_finite(&[("L_rf_D", logistic + r1), ("L_cls_D", cls), ("total_D", total)])?;
    if !grads.buffer().all_finite() {
        return Err(Error::NonFinite {
            term: "grad_D",
            iteration: 0,
        });
    }
    Ok(CriticObjective {
        logistic,
        r1,
        cls,
        total,
        grads,
    })
}

#[derive(Clone, Debug)]
pub struct MapperObjective<S> {
    pub terms: MapperTerms<S>,
    pub total: S,
    pub grads: IsfParams<S>,
}

/// Combined mapper objective over a batch and its gradient w.r.t. the style
/// function parameters. The generator, critic and embedder stay fixed.
#[allow(clippy::too_many_arguments)]
pub fn mapper_objective<S: Real>(
    isf: &IsfParams<S>,
    critic: &CriticParams<S>,
    critic_input: CriticInput,
    generator: &dyn Generator<S>,
    perceptual: &dyn Embedder<S>,
    samples: &[StepSample<S>],
    weights: &LossWeights,
    ds_weight: f64,
) -> Result<MapperObjective<S>> {
    if samples.is_empty() {
        return Err(invalid("mapper objective needs a non-empty batch"));
    }
    let bsz = S::from_f64(samples.len() as f64);
    let lam = |v: f64| S::from_f64(v);
    let m = critic.dims().attributes;

    struct Fwd<S> {
        src: ImageTensor<S>,
        c1: crate::isf_net::IsfCache<S>,
        w_star: LatentCode<S>,
        x_star: ImageTensor<S>,
        c2: crate::isf_net::IsfCache<S>,
        w_div: LatentCode<S>,
        x_div: ImageTensor<S>,
        c3: crate::isf_net::IsfCache<S>,
        w_cyc: LatentCode<S>,
        x_cyc: ImageTensor<S>,
        pass: crate::critic::CriticPass<S>,
    }

    let mut fwd = Vec::with_capacity(samples.len());
    for s in samples {
        let src = generator.generate(&s.w)?;
        let c1 = isf.forward_cached(&s.w, &s.z, &s.d)?;
        let w_star = c1.output();
        let x_star = generator.generate(&w_star)?;
        let c2 = isf.forward_cached(&s.w, &s.z_div, &s.d)?;
        let w_div = c2.output();
        let x_div = generator.generate(&w_div)?;
        let c3 = isf.forward_cached(&w_star, &s.z_cyc, &s.d0)?;
        let w_cyc = c3.output();
        let x_cyc = generator.generate(&w_cyc)?;
        let pass = critic.forward(&critic_input.apply(&x_star))?;
        fwd.push(Fwd {
            src,
            c1,
            w_star,
            x_star,
            c2,
            w_div,
            x_div,
            c3,
            w_cyc,
            x_cyc,
            pass,
        });
    }

    let rf_logits: Vec<S> = fwd.iter().map(|f| f.pass.rf).collect();
    let (rf, g_rf) = adv_loss_mapper(&rf_logits)?;
    let cls_logits: Vec<S> = fwd.iter().flat_map(|f| f.pass.cls.iter().copied()).collect();
    let targets: Vec<S> = samples.iter().flat_map(|s| s.d.as_slice().iter().copied()).collect();
    let (cls, g_cls) = bce_with_logits(&cls_logits, &targets)?;

    let mut cont_v = Vec::new();
    let mut nb_v = Vec::new();
    let mut cyc_v = Vec::new();
    let mut ds_v = Vec::new();
    let mut per_sample = Vec::with_capacity(samples.len());
    for (s, f) in samples.iter().zip(&fwd) {
        let (cv, cg) = content_loss_grad(&f.src, &f.x_star, perceptual)?;
        let (nv, ng) = neighbour_loss_grad(&s.w, &f.w_star)?;
        let (yv, yg) = mean_abs_diff(&f.src, &f.x_cyc)?;
        let (dv, dg_div) = mean_abs_diff(&f.x_star, &f.x_div)?;
        cont_v.push(cv);
        nb_v.push(nv);
        cyc_v.push(yv);
        ds_v.push(dv);
        per_sample.push((cg, ng, yg, dg_div));
    }
    let terms = MapperTerms {
        rf,
        cls,
        content: pairwise_mean(&cont_v),
        neighbour: pairwise_mean(&nb_v),
        cycle: pairwise_mean(&cyc_v),
        diversity: pairwise_mean(&ds_v),
    };
    first_non_finite(&[
        ("L_rf_M", terms.rf),
        ("L_cls_M", terms.cls),
        ("L_cont", terms.content),
        ("L_nb", terms.neighbour),
        ("L_cyc", terms.cycle),
        ("L_ds", terms.diversity),
    ])?;
    let total = total_mapper_objective(&terms, weights, ds_weight)?;

    let mut grads = isf.zeros_like();
    let mut critic_scratch = critic.zeros_like();
    let dsw = lam(ds_weight);
    for (b, (f, (cg, ng, yg, dg_div))) in fwd.iter().zip(per_sample).enumerate() {
        // Image-space gradient on x*.
        let g_rf_b = lam(weights.lambda_rf) * g_rf[b];
        let g_cls_b: Vec<S> = g_cls[b * m..(b + 1) * m]
            .iter()
            .map(|&g| lam(weights.lambda_cls) * g)
            .collect();
        let g_crit = critic
            .backward(&f.pass, g_rf_b, &g_cls_b, &mut critic_scratch, true)?
            .expect("input gradient requested");
        let g_crit = critic_input.vjp(&g_crit);
        let (h, w) = f.x_star.resolution();
        let mut g_xs = vec![S::zero(); h * w * CHANNELS];
        for (i, g) in g_xs.iter_mut().enumerate() {
            // d|x* - x_div| / dx* is the negative of the gradient w.r.t. x_div.
            *g = g_crit.as_slice()[i] + lam(weights.lambda_cont) * cg.as_slice()[i] / bsz
                + dsw * dg_div.as_slice()[i] / bsz;
        }
        let g_xs = ImageTensor::from_parts(h, w, g_xs);
        let mut g_ws = generator.generate_vjp(&f.w_star, &g_xs)?.into_vec();
        for (a, &b2) in g_ws.iter_mut().zip(&ng) {
            *a += lam(weights.lambda_nb) * b2 / bsz;
        }

        // Cycle branch feeds back into w*.
        let g_xc: Vec<S> = yg.as_slice().iter().map(|&g| lam(weights.lambda_cyc) * g / bsz).collect();
        let g_xc = ImageTensor::from_parts(h, w, g_xc);
        let g_wc = generator.generate_vjp(&f.w_cyc, &g_xc)?;
        let g_in = isf.backward(&f.c3, g_wc.as_slice(), &mut grads)?;
        for (a, &b2) in g_ws.iter_mut().zip(&g_in) {
            *a += b2;
        }

        // Diversity branch (maximized, hence the minus sign).
        let g_xd: Vec<S> = dg_div.as_slice().iter().map(|&g| -dsw * g / bsz).collect();
        let g_xd = ImageTensor::from_parts(h, w, g_xd);
        let g_wd = generator.generate_vjp(&f.w_div, &g_xd)?;
        isf.backward(&f.c2, g_wd.as_slice(), &mut grads)?;

        isf.backward(&f.c1, &g_ws, &mut grads)?;
    }

    if !grads.buffer().all_finite() {
        return Err(Error::NonFinite {
            term: "grad_M",
            iteration: 0,
        });
    }
    Ok(MapperObjective { terms, total, grads })
}

/// The iteration is filled in by the caller.
fn first_non_finite<S: Real>(terms: &[(&'static str, S)]) -> Result<()> {
    match terms.iter().find(|(_, v)| !v.is_finite()) {
        Some(&(term, _)) => Err(Error::NonFinite { term, iteration: 0 }),
        None => Ok(()),
    }
}
