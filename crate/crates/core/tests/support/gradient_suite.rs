//! Analytic gradients against central finite differences in f64.

use isf::critic::{CriticDims, CriticParams};
use isf::handles::{Embedder, Generator};
use isf::isf_net::{IsfDims, IsfParams};
use isf::objectives::LossWeights;
use isf::step::{critic_input_gradient, critic_objective, mapper_objective, r1_penalty, CriticInput, StepSample};
use isf::toy::{ToyConfig, ToyStack};
use isf::types::{rng_from_seed, AttributeVector, ImageTensor, IsfRng, LatentCode, NoiseVector};
use rand::Rng;
use rand_distr::StandardNormal;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
/// Below this magnitude central-difference roundoff (about 1e-11 at this step)
/// dominates, so the error is measured against this floor instead.
const TINY: f64 = 1e-5;

fn rel_err(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < TINY {
        (a - n).abs() / TINY
    } else {
        (a - n).abs() / scale
    }
}

fn gauss(rng: &mut IsfRng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn stack() -> ToyStack {
    ToyStack::new(ToyConfig::with_seed(3)).unwrap()
}

fn isf_dims() -> IsfDims {
    IsfDims {
        hidden: 8,
        noise: 4,
        ..IsfDims::toy()
    }
}

/// Style function with every tensor randomized so no path is trivially zero.
fn random_isf(rng: &mut IsfRng) -> IsfParams<f64> {
    let mut p = IsfParams::<f64>::zeros(isf_dims()).unwrap();
    let n = p.num_parameters();
    p.buffer_mut().as_mut_slice().copy_from_slice(&gauss(rng, n, 0.3));
    p
}

fn random_critic(rng: &mut IsfRng) -> CriticParams<f64> {
    let dims = CriticDims::new(32, 4).with_base_channels(8);
    let mut c = CriticParams::<f64>::init(dims, rng).unwrap();
    // Non-zero biases keep the leaky units away from the origin.
    let n = c.buffer().as_slice().len();
    let jitter = gauss(rng, n, 0.02);
    for (v, j) in c.buffer_mut().as_mut_slice().iter_mut().zip(jitter) {
        *v += j;
    }
    c
}

fn samples(toy: &ToyStack, rng: &mut IsfRng, b: usize) -> Vec<StepSample<f64>> {
    (0..b)
        .map(|_| {
            let w = LatentCode::new(4, 16, gauss(rng, 64, 0.5)).unwrap();
            let x = Generator::<f64>::generate(toy, &w).unwrap();
            let d0 = isf::AttributeClassifier::<f64>::classify(toy, &x).unwrap();
            let bits: Vec<bool> = d0.binarized().iter().map(|b| !b).collect();
            StepSample {
                w,
                d0,
                d: AttributeVector::from_bits(&bits),
                z: NoiseVector::new(gauss(rng, 4, 1.0)).unwrap(),
                z_div: NoiseVector::new(gauss(rng, 4, 1.0)).unwrap(),
                z_cyc: NoiseVector::new(gauss(rng, 4, 1.0)).unwrap(),
            }
        })
        .collect()
}

fn real_images(toy: &ToyStack, s: &[StepSample<f64>]) -> Vec<ImageTensor<f64>> {
    s.iter().map(|s| Generator::<f64>::generate(toy, &s.w).unwrap()).collect()
}

/// Indices to check: every parameter of small tensors, a strided subset of large ones.
fn indices(layout: &isf::params::ParamLayout, per_tensor: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for t in layout.tensors() {
        let len = t.len();
        let stride = (len / per_tensor).max(1);
        out.extend((0..len).step_by(stride).map(|i| t.offset + i));
    }
    out
}

fn check(label: &str, analytic: &[f64], idx: &[usize], mut f: impl FnMut(usize, f64) -> f64) {
    let mut worst = (0.0f64, 0usize, 0.0, 0.0);
    let largest = idx.iter().map(|&i| analytic[i].abs()).fold(0.0, f64::max);
    assert!(largest > 1e-6, "{label}: gradient vanishes on every checked entry");
    for &i in idx {
        let n = (f(i, H) - f(i, -H)) / (2.0 * H);
        let e = rel_err(analytic[i], n);
        if e > worst.0 {
            worst = (e, i, analytic[i], n);
        }
    }
    assert!(
        worst.0 < TOL,
        "{label}: max relative error {:.3e} at {} (analytic {:.6e}, numeric {:.6e})",
        worst.0,
        worst.1,
        worst.2,
        worst.3
    );
}

pub fn generator_vjp_matches_finite_differences() {
    let toy = stack();
    let mut rng = rng_from_seed(11);
    let w = LatentCode::new(4, 16, gauss(&mut rng, 64, 0.5)).unwrap();
    let probe = gauss(&mut rng, 32 * 32 * 3, 1.0);
    let probe_img = ImageTensor::unbounded(32, 32, probe.clone()).unwrap();
    let g = Generator::<f64>::generate_vjp(&toy, &w, &probe_img).unwrap();
    let idx: Vec<usize> = (0..64).collect();
    check("generator", g.as_slice(), &idx, |i, h| {
        let mut wp = w.clone();
        wp.as_mut_slice()[i] += h;
        let x = Generator::<f64>::generate(&toy, &wp).unwrap();
        x.as_slice().iter().zip(&probe).map(|(a, b)| a * b).sum()
    });
}

pub fn perceptual_embedder_vjp_matches_finite_differences() {
    let toy = stack();
    let emb = toy.perceptual_embedder();
    let mut rng = rng_from_seed(12);
    let x = ImageTensor::unbounded(32, 32, gauss(&mut rng, 3072, 0.3)).unwrap();
    let probe = gauss(&mut rng, Embedder::<f64>::dim(&emb), 1.0);
    let g = emb.embed_vjp(&x, &probe).unwrap();
    let idx: Vec<usize> = (0..3072).step_by(37).collect();
    check("perceptual embedder", g.as_slice(), &idx, |i, h| {
        let mut xp = x.clone();
        xp.as_mut_slice()[i] += h;
        emb.embed(&xp).unwrap().iter().zip(&probe).map(|(a, b)| a * b).sum()
    });
}

pub fn style_function_input_and_parameter_gradients() {
    let mut rng = rng_from_seed(13);
    let isf = random_isf(&mut rng);
    let w = LatentCode::new(4, 16, gauss(&mut rng, 64, 1.0)).unwrap();
    let z = NoiseVector::new(gauss(&mut rng, 4, 1.0)).unwrap();
    let d = AttributeVector::new(vec![1.0, 0.0, 0.3, 1.0]).unwrap();
    let probe = gauss(&mut rng, 64, 1.0);
    let cache = isf.forward_cached(&w, &z, &d).unwrap();
    let mut grads = isf.zeros_like();
    let gw = isf.backward(&cache, &probe, &mut grads).unwrap();
    let value = |p: &IsfParams<f64>, w: &LatentCode<f64>| -> f64 {
        let out = p.forward(w, &z, &d).unwrap();
        out.as_slice().iter().zip(&probe).map(|(a, b)| a * b).sum()
    };
    let idx: Vec<usize> = (0..64).collect();
    check("style function input", &gw, &idx, |i, h| {
        let mut wp = w.clone();
        wp.as_mut_slice()[i] += h;
        value(&isf, &wp)
    });
    let idx: Vec<usize> = (0..isf.num_parameters()).collect();
    check("style function params", grads.buffer().as_slice(), &idx, |i, h| {
        let mut p = isf.clone();
        p.buffer_mut().as_mut_slice()[i] += h;
        value(&p, &w)
    });
}

pub fn critic_input_gradient_matches_finite_differences() {
    let toy = stack();
    let mut rng = rng_from_seed(14);
    let critic = random_critic(&mut rng);
    let s = samples(&toy, &mut rng, 1);
    let x = real_images(&toy, &s).remove(0);
    let g = critic_input_gradient(&critic, &x).unwrap();
    let idx: Vec<usize> = (0..3072).step_by(29).collect();
    check("critic input", g.as_slice(), &idx, |i, h| {
        let mut xp = x.clone();
        xp.as_mut_slice()[i] += h;
        critic.discriminate(&xp).unwrap()
    });
}

pub fn r1_parameter_gradient_via_dual_numbers() {
    let toy = stack();
    let mut rng = rng_from_seed(15);
    let critic = random_critic(&mut rng);
    let s = samples(&toy, &mut rng, 2);
    let real = real_images(&toy, &s);
    let fake = real.clone();
    let d0: Vec<_> = s.iter().map(|s| s.d0.clone()).collect();
    let with = critic_objective(&critic, &real, &fake, &d0, 1.0, 1.0).unwrap();
    let without = critic_objective(&critic, &real, &fake, &d0, 1.0, 0.0).unwrap();
    let r1_grad: Vec<f64> = with
        .grads
        .buffer()
        .as_slice()
        .iter()
        .zip(without.grads.buffer().as_slice())
        .map(|(a, b)| a - b)
        .collect();
    let r1 = r1_penalty(&critic, &real, 1.0).unwrap();
    assert!((r1 - with.r1).abs() < 1e-12);
    let idx = indices(critic.buffer().layout(), 24);
    check("R1", &r1_grad, &idx, |i, h| {
        let mut c = critic.clone();
        c.buffer_mut().as_mut_slice()[i] += h;
        r1_penalty(&c, &real, 1.0).unwrap()
    });
}

pub fn critic_objective_parameter_gradient() {
    let toy = stack();
    let mut rng = rng_from_seed(16);
    let critic = random_critic(&mut rng);
    let isf = random_isf(&mut rng);
    let s = samples(&toy, &mut rng, 2);
    let real = real_images(&toy, &s);
    let fake: Vec<_> = s
        .iter()
        .map(|s| {
            let w = isf.forward(&s.w, &s.z, &s.d).unwrap();
            Generator::<f64>::generate(&toy, &w).unwrap()
        })
        .collect();
    let d0: Vec<_> = s.iter().map(|s| s.d0.clone()).collect();
    let obj = critic_objective(&critic, &real, &fake, &d0, 1.0, 1.0).unwrap();
    let idx = indices(critic.buffer().layout(), 24);
    check("critic objective", obj.grads.buffer().as_slice(), &idx, |i, h| {
        let mut c = critic.clone();
        c.buffer_mut().as_mut_slice()[i] += h;
        critic_objective(&c, &real, &fake, &d0, 1.0, 1.0).unwrap().total
    });
}

fn one_hot(term: usize) -> LossWeights {
    let mut w = LossWeights::zero();
    match term {
        0 => w.lambda_rf = 1.0,
        1 => w.lambda_cls = 1.0,
        2 => w.lambda_cont = 1.0,
        3 => w.lambda_nb = 1.0,
        4 => w.lambda_cyc = 1.0,
        _ => {}
    }
    w
}

pub fn mapper_objective_gradient_per_term_and_combined() {
    let toy = stack();
    let emb = toy.perceptual_embedder();
    let mut rng = rng_from_seed(17);
    let critic = random_critic(&mut rng);
    let isf = random_isf(&mut rng);
    let s = samples(&toy, &mut rng, 2);
    let view = CriticInput::new(32, 32).unwrap();
    let names = ["rf", "cls", "content", "neighbour", "cycle", "diversity", "combined"];
    for (t, name) in names.iter().enumerate() {
        let (weights, dsw) = match t {
            5 => (LossWeights::zero(), 1.5),
            6 => (LossWeights::default(), 1.3),
            _ => (one_hot(t), 0.0),
        };
        let eval = |p: &IsfParams<f64>| {
            mapper_objective(p, &critic, view, &toy, &emb, &s, &weights, dsw).unwrap()
        };
        let obj = eval(&isf);
        let idx: Vec<usize> = (0..isf.num_parameters()).step_by(3).collect();
        check(name, obj.grads.buffer().as_slice(), &idx, |i, h| {
            let mut p = isf.clone();
            p.buffer_mut().as_mut_slice()[i] += h;
            eval(&p).total
        });
    }
}

pub fn pooled_critic_input_gradient() {
    let toy = stack();
    let emb = toy.perceptual_embedder();
    let mut rng = rng_from_seed(18);
    let dims = CriticDims::new(16, 4).with_base_channels(8);
    let critic = CriticParams::<f64>::init(dims, &mut rng).unwrap();
    let isf = random_isf(&mut rng);
    let s = samples(&toy, &mut rng, 2);
    let view = CriticInput::new(32, 16).unwrap();
    let mut weights = LossWeights::zero();
    weights.lambda_rf = 1.0;
    weights.lambda_cls = 0.7;
    let eval = |p: &IsfParams<f64>| mapper_objective(p, &critic, view, &toy, &emb, &s, &weights, 0.0).unwrap();
    let obj = eval(&isf);
    let idx: Vec<usize> = (0..isf.num_parameters()).step_by(7).collect();
    check("pooled critic", obj.grads.buffer().as_slice(), &idx, |i, h| {
        let mut p = isf.clone();
        p.buffer_mut().as_mut_slice()[i] += h;
        eval(&p).total
    });
}

/// Every check, in order, for callers that run the suite as one unit.
pub const ALL: &[(&str, fn())] = &[
    ("generator_vjp_matches_finite_differences", generator_vjp_matches_finite_differences),
    ("perceptual_embedder_vjp_matches_finite_differences", perceptual_embedder_vjp_matches_finite_differences),
    ("style_function_input_and_parameter_gradients", style_function_input_and_parameter_gradients),
    ("critic_input_gradient_matches_finite_differences", critic_input_gradient_matches_finite_differences),
    ("r1_parameter_gradient_via_dual_numbers", r1_parameter_gradient_via_dual_numbers),
    ("critic_objective_parameter_gradient", critic_objective_parameter_gradient),
    ("mapper_objective_gradient_per_term_and_combined", mapper_objective_gradient_per_term_and_combined),
    ("pooled_critic_input_gradient", pooled_critic_input_gradient),
];
