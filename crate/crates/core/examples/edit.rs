//! Edits held-out codes toward flipped attributes, sampling several modes per
//! code from different noise vectors.
//!
//! cargo run --release --example edit -- [checkpoint_dir]
//!
//! Without a checkpoint a short run is trained first, so edits are rough.

use std::path::PathBuf;

use isf::dataset::build;
use isf::editing::sample_modes;
use isf::handles::{AttributeClassifier, Generator};
use isf::render::save_strip;
use isf::toy::ToyStack;
use isf::trainer::{run, Checkpoint, TrainConfig};
use isf::types::{rng_from_seed, AttributeVector};

fn main() -> isf::Result<()> {
    let toy = ToyStack::with_seed(7)?;
    let ds = build(&toy, &toy, 1000, 0.5, 0)?;
    let isf_params = match std::env::args().nth(1) {
        Some(p) => Checkpoint::load(&PathBuf::from(p))?.isf,
        None => {
            let mut cfg = TrainConfig::toy();
            cfg.total_iterations = 300;
            cfg.arch.critic_base_channels = 16;
            run(cfg, &ds, &toy, &toy.perceptual_embedder(), None)?.checkpoint.isf
        }
    };
    let mut rng = rng_from_seed(1);
    for (k, &i) in ds.test_indices().iter().take(4).enumerate() {
        let w = ds.code(i);
        let mut bits = ds.label(i).binarized();
        bits[k % 4] = !bits[k % 4];
        let target = AttributeVector::from_bits(&bits);
        let edits = sample_modes(&w, &target, 4, &isf_params, &mut rng)?;
        let mut images = vec![toy.generate(&w)?];
        for e in &edits {
            let x = toy.generate(&e.code)?;
            let p = toy.classify(&x)?.as_slice()[k % 4];
            println!("code {i}: attribute {} target {} -> p = {p:.3}", k % 4, u8::from(bits[k % 4]));
            images.push(x);
        }
        let path = std::env::temp_dir().join(format!("isf_edit_{i}.png"));
        save_strip(&images, &path)?;
        println!("  strip {}", path.display());
    }
    Ok(())
}
