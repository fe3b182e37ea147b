//! The analytic toy stack: sample a code, render it, classify it, and read
//! back its content coefficients.
//!
//! cargo run --example toy_stack -- [seed]

use isf::handles::{AttributeClassifier, Embedder, Generator};
use isf::real::sigmoid;
use isf::render::save_strip;
use isf::toy::ToyStack;
use isf::types::{rng_from_seed, LatentCode};

fn main() -> isf::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let toy = ToyStack::with_seed(7)?;
    let mut rng = rng_from_seed(seed);
    let w: LatentCode<f64> = toy.sample_latent(&mut rng);
    let (u, v) = toy.project(&w)?;
    let x = toy.generate(&w)?;

    let probs = toy.classify(&x)?;
    println!("region   a = sigmoid(u)   mean   classifier");
    for (q, (ui, mean)) in u.iter().zip(toy.region_means(&x)?).enumerate() {
        println!("{q:>6}   {:>14.3}   {mean:>5.2}   {:>10.3}", sigmoid(*ui), probs.as_slice()[q]);
    }
    let c = toy.identity_embedder().embed(&x)?;
    println!("content tanh(v)   {:?}", v.iter().map(|x| format!("{:.2}", x.tanh())).collect::<Vec<_>>());
    println!("identity embed    {:?}", c.iter().map(|x| format!("{:.2}", x)).collect::<Vec<_>>());

    // Push attribute 0 across its boundary: only region 0 changes.
    let mut moved = w.as_slice().to_vec();
    for (o, d) in moved.iter_mut().zip(toy.attribute_direction(0)) {
        *o += (-2.0 * u[0]) * d;
    }
    let moved = LatentCode::new(w.rows(), w.cols(), moved)?;
    let path = std::env::temp_dir().join("isf_toy_stack.png");
    save_strip(&[x, toy.generate(&moved)?], &path)?;
    println!("source and attribute-0 flip written to {}", path.display());
    Ok(())
}
