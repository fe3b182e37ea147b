//! Linear latent paths between two codes, rendered as a strip, with per-step
//! perceptual increments and the perceptual irregularity ratio.
//!
//! cargo run --example interpolate -- [steps]

use isf::editing::build_path;
use isf::handles::Generator;
use isf::metrics::{path_distances, pir_from_distances};
use isf::render::save_strip;
use isf::toy::ToyStack;
use isf::types::{rng_from_seed, LatentCode};

fn main() -> isf::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let toy = ToyStack::with_seed(7)?;
    let perceptual = toy.perceptual_embedder();
    let mut rng = rng_from_seed(3);
    let a: LatentCode<f64> = toy.sample_latent(&mut rng);
    let b: LatentCode<f64> = toy.sample_latent(&mut rng);
    let path = build_path(&a, &b, steps)?;
    let (phis, endpoint) = path_distances(&path, &toy, &perceptual)?;
    for (t, phi) in phis.iter().enumerate() {
        println!("step {t:>2} -> {:>2}: {phi:.5}", t + 1);
    }
    println!("endpoint distance {endpoint:.5}");
    println!("PIR {:.4}", pir_from_distances(&phis, endpoint, 1e-6)?);
    let images = path.codes().iter().map(|c| toy.generate(c)).collect::<isf::Result<Vec<_>>>()?;
    let out = std::env::temp_dir().join("isf_interpolate.png");
    save_strip(&images, &out)?;
    println!("strip {}", out.display());
    Ok(())
}
