//! Loss terms and their gradients with respect to their direct inputs.
//!
//! Network plumbing (critic parameters, the R1 double backward, the mapper
//! chain through the generator) lives in [`crate::step`].

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::handles::Embedder;
use crate::real::{pairwise_mean, pairwise_sum, sigmoid, softplus, Real};
use crate::types::{ImageTensor, LatentCode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_rf: f64,
    pub lambda_cls: f64,
    pub lambda_cont: f64,
    pub lambda_nb: f64,
    pub lambda_cyc: f64,
    pub lambda_ds: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_rf: 1.0,
            lambda_cls: 1.0,
            lambda_cont: 1.0,
            lambda_nb: 0.1,
            lambda_cyc: 1.0,
            lambda_ds: 2.0,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self {
            lambda_rf: 0.0,
            lambda_cls: 0.0,
            lambda_cont: 0.0,
            lambda_nb: 0.0,
            lambda_cyc: 0.0,
            lambda_ds: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_rf,
            self.lambda_cls,
            self.lambda_cont,
            self.lambda_nb,
            self.lambda_cyc,
            self.lambda_ds,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(invalid("loss weights must be finite and non-negative"));
        }
        Ok(())
    }
}

/// One logged iteration. Field names follow the JSON-lines log schema.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub iter: u64,
    #[serde(rename = "L_rf_D")]
    pub rf_critic: f64,
    #[serde(rename = "L_rf_M")]
    pub rf_mapper: f64,
    #[serde(rename = "L_cls_D")]
    pub cls_critic: f64,
    #[serde(rename = "L_cls_M")]
    pub cls_mapper: f64,
    #[serde(rename = "L_cont")]
    pub content: f64,
    #[serde(rename = "L_nb")]
    pub neighbour: f64,
    #[serde(rename = "L_cyc")]
    pub cycle: f64,
    #[serde(rename = "L_ds")]
    pub diversity: f64,
    #[serde(rename = "total_M")]
    pub total_mapper: f64,
    #[serde(rename = "total_D")]
    pub total_critic: f64,
    pub ds_weight: f64,
}

impl LossReport {
    /// Name of the first non-finite term, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("L_rf_D", self.rf_critic),
            ("L_rf_M", self.rf_mapper),
            ("L_cls_D", self.cls_critic),
            ("L_cls_M", self.cls_mapper),
            ("L_cont", self.content),
            ("L_nb", self.neighbour),
            ("L_cyc", self.cycle),
            ("L_ds", self.diversity),
            ("total_M", self.total_mapper),
            ("total_D", self.total_critic),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(k, _)| k)
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("loss report serializes")
    }
}

fn check_finite<S: Real>(xs: &[S], what: &str) -> Result<()> {
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite {what}")));
    }
    Ok(())
}

/// Critic side of the non-saturating logistic loss (without R1):
/// `mean softplus(-real) + mean softplus(fake)`. Returns the value and the
/// gradients with respect to each logit.
pub fn adv_logistic_critic<S: Real>(real: &[S], fake: &[S]) -> Result<(S, Vec<S>, Vec<S>)> {
    check_finite(real, "real logits")?;
    check_finite(fake, "fake logits")?;
    if real.is_empty() || fake.is_empty() {
        return Err(invalid("adversarial loss needs at least one logit per branch"));
    }
    let nr = S::from_f64(real.len() as f64);
    let nf = S::from_f64(fake.len() as f64);
    let vr: Vec<S> = real.iter().map(|&l| softplus(-l)).collect();
    let vf: Vec<S> = fake.iter().map(|&l| softplus(l)).collect();
    let value = pairwise_mean(&vr) + pairwise_mean(&vf);
    let gr = real.iter().map(|&l| -sigmoid(-l) / nr).collect();
    let gf = fake.iter().map(|&l| sigmoid(l) / nf).collect();
    Ok((value, gr, gf))
}

/// Mapper side: `mean softplus(-fake)`.
pub fn adv_loss_mapper<S: Real>(fake: &[S]) -> Result<(S, Vec<S>)> {
    check_finite(fake, "fake logits")?;
    if fake.is_empty() {
        return Err(invalid("adversarial loss needs at least one logit"));
    }
    let n = S::from_f64(fake.len() as f64);
    let v: Vec<S> = fake.iter().map(|&l| softplus(-l)).collect();
    let g = fake.iter().map(|&l| -sigmoid(-l) / n).collect();
    Ok((pairwise_mean(&v), g))
}

/// Mean per-attribute binary cross-entropy between `sigmoid(logits)` and
/// targets in `[0, 1]`.
pub fn bce_with_logits<S: Real>(logits: &[S], targets: &[S]) -> Result<(S, Vec<S>)> {
    if logits.len() != targets.len() || logits.is_empty() {
        return Err(invalid("logit and target lengths must match and be non-empty"));
    }
    check_finite(logits, "classification logits")?;
    for t in targets {
        let f = t.to_f64();
        if !(0.0..=1.0).contains(&f) {
            return Err(invalid(format!("target {f} outside [0,1]")));
        }
    }
    let n = S::from_f64(logits.len() as f64);
    let v: Vec<S> = logits
        .iter()
        .zip(targets)
        .map(|(&l, &t)| softplus(l) - t * l)
        .collect();
    let g = logits
        .iter()
        .zip(targets)
        .map(|(&l, &t)| (sigmoid(l) - t) / n)
        .collect();
    Ok((pairwise_mean(&v), g))
}

/// Critic classification loss against the classifier labels `d0` of `G(w)`.
pub fn cls_loss_critic<S: Real>(logits: &[S], d0: &[S]) -> Result<(S, Vec<S>)> {
    bce_with_logits(logits, d0)
}

/// Mapper classification loss against the requested attributes `d`.
pub fn cls_loss_mapper<S: Real>(logits: &[S], d: &[S]) -> Result<(S, Vec<S>)> {
    bce_with_logits(logits, d)
}

const NORMALIZE_EPS: f64 = 1e-10;

fn unit<S: Real>(v: &[S]) -> (Vec<S>, S) {
    let r = v.iter().map(|&x| x * x).sum::<S>();
    let r = if r.to_f64() > 0.0 { r.sqrt() } else { S::zero() };
    let d = r + S::from_f64(NORMALIZE_EPS);
    (v.iter().map(|&x| x / d).collect(), r)
}

/// Vector-Jacobian product of `v -> v / (|v| + eps)`.
fn unit_vjp<S: Real>(v: &[S], r: S, g: &[S]) -> Vec<S> {
    let d = r + S::from_f64(NORMALIZE_EPS);
    if r.to_f64() == 0.0 {
        return g.iter().map(|&gi| gi / d).collect();
    }
    let gv: S = g.iter().zip(v).map(|(&a, &b)| a * b).sum();
    let k = gv / (r * d * d);
    g.iter().zip(v).map(|(&gi, &vi)| gi / d - k * vi).collect()
}

/// Squared distance between unit-normalized features (LPIPS-style form).
pub fn perceptual_distance<S: Real>(
    a: &ImageTensor<S>,
    b: &ImageTensor<S>,
    embedder: &dyn Embedder<S>,
) -> Result<S> {
    if a.resolution() != b.resolution() {
        return Err(invalid("perceptual distance needs equal resolutions"));
    }
    let (ua, _) = unit(&embedder.embed(a)?);
    let (ub, _) = unit(&embedder.embed(b)?);
    let d: Vec<S> = ua.iter().zip(&ub).map(|(&x, &y)| (x - y) * (x - y)).collect();
    Ok(pairwise_sum(&d))
}

/// Content-preservation loss `psi(x_src, x_edit)`.
pub fn content_loss<S: Real>(
    x_src: &ImageTensor<S>,
    x_edit: &ImageTensor<S>,
    perceptual: &dyn Embedder<S>,
) -> Result<S> {
    perceptual_distance(x_src, x_edit, perceptual)
}

/// Content loss with its gradient with respect to the edited image.
pub fn content_loss_grad<S: Real>(
    x_src: &ImageTensor<S>,
    x_edit: &ImageTensor<S>,
    perceptual: &dyn Embedder<S>,
) -> Result<(S, ImageTensor<S>)> {
    if x_src.resolution() != x_edit.resolution() {
        return Err(invalid("content loss needs equal resolutions"));
    }
    let (ua, _) = unit(&perceptual.embed(x_src)?);
    let fb = perceptual.embed(x_edit)?;
    let (ub, rb) = unit(&fb);
    let diff: Vec<S> = ub.iter().zip(&ua).map(|(&x, &y)| x - y).collect();
    let value = pairwise_sum(&diff.iter().map(|&d| d * d).collect::<Vec<_>>());
    let g_unit: Vec<S> = diff.iter().map(|&d| S::from_f64(2.0) * d).collect();
    let g_feat = unit_vjp(&fb, rb, &g_unit);
    Ok((value, perceptual.embed_vjp(x_edit, &g_feat)?))
}

/// `|w - w*|_2` over the flattened code (not squared).
pub fn neighbour_loss<S: Real>(w: &LatentCode<S>, w_star: &LatentCode<S>) -> Result<S> {
    Ok(neighbour_loss_grad(w, w_star)?.0)
}

/// Neighbour loss and its gradient with respect to `w*` (zero at `w = w*`).
pub fn neighbour_loss_grad<S: Real>(w: &LatentCode<S>, w_star: &LatentCode<S>) -> Result<(S, Vec<S>)> {
    w_star.ensure_shape(w.shape())?;
    let diff: Vec<S> = w_star
        .as_slice()
        .iter()
        .zip(w.as_slice())
        .map(|(&a, &b)| a - b)
        .collect();
    let sq = pairwise_sum(&diff.iter().map(|&d| d * d).collect::<Vec<_>>());
    if sq.to_f64() == 0.0 {
        return Ok((S::zero(), vec![S::zero(); diff.len()]));
    }
    let norm = sq.sqrt();
    Ok((norm, diff.into_iter().map(|d| d / norm).collect()))
}

/// Mean absolute pixel difference and its gradient with respect to `b`.
pub fn mean_abs_diff<S: Real>(a: &ImageTensor<S>, b: &ImageTensor<S>) -> Result<(S, ImageTensor<S>)> {
    if a.resolution() != b.resolution() {
        return Err(invalid("images must share a resolution"));
    }
    let n = S::from_f64(a.as_slice().len() as f64);
    let mut vals = Vec::with_capacity(a.as_slice().len());
    let mut grad = Vec::with_capacity(a.as_slice().len());
    for (&x, &y) in a.as_slice().iter().zip(b.as_slice()) {
        let d = y - x;
        vals.push(d.abs());
        let s = d.to_f64();
        grad.push(if s > 0.0 {
            S::one() / n
        } else if s < 0.0 {
            -S::one() / n
        } else {
            S::zero()
        });
    }
    let (h, w) = a.resolution();
    Ok((pairwise_mean(&vals), ImageTensor::from_parts(h, w, grad)))
}

/// Cycle-consistency loss `mean |x_src - x_cycled|`.
pub fn cycle_loss<S: Real>(x_src: &ImageTensor<S>, x_cycled: &ImageTensor<S>) -> Result<S> {
    Ok(mean_abs_diff(x_src, x_cycled)?.0)
}

/// Diversity-sensitive loss `mean |x1 - x2|` (maximized by the mapper).
pub fn diversity_loss<S: Real>(x1: &ImageTensor<S>, x2: &ImageTensor<S>) -> Result<S> {
    Ok(mean_abs_diff(x1, x2)?.0)
}

/// Linearly decayed diversity weight, clamped at zero.
pub fn ds_weight(iteration: u64, total_iterations: u64, lambda_ds_init: f64) -> Result<f64> {
    if total_iterations == 0 {
        return Err(invalid("total_iterations must be positive"));
    }
    let frac = iteration as f64 / total_iterations as f64;
    Ok((lambda_ds_init * (1.0 - frac)).max(0.0))
}

/// Per-term values feeding the combined mapper objective.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MapperTerms<S> {
    pub rf: S,
    pub cls: S,
    pub content: S,
    pub neighbour: S,
    pub cycle: S,
    pub diversity: S,
}

/// `l_rf*rf + l_cls*cls + l_cont*cont + l_nb*nb + l_cyc*cyc - ds_weight*ds`.
pub fn total_mapper_objective<S: Real>(terms: &MapperTerms<S>, weights: &LossWeights, ds_weight: f64) -> Result<S> {
    let all = [
        terms.rf,
        terms.cls,
        terms.content,
        terms.neighbour,
        terms.cycle,
        terms.diversity,
    ];
    check_finite(&all, "loss term")?;
    let w = |v: f64| S::from_f64(v);
    Ok(w(weights.lambda_rf) * terms.rf
        + w(weights.lambda_cls) * terms.cls
        + w(weights.lambda_cont) * terms.content
        + w(weights.lambda_nb) * terms.neighbour
        + w(weights.lambda_cyc) * terms.cycle
        - w(ds_weight) * terms.diversity)
}
