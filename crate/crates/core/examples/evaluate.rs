//! Runs the full evaluation protocol on a checkpoint, or on an untrained
//! network as a baseline, and writes metrics.json and pir.csv.
//!
//! cargo run --release --example evaluate -- [checkpoint_dir]

use std::path::PathBuf;

use isf::config::{Components, ExperimentConfig};
use isf::dataset::build;
use isf::evaluation::evaluate;
use isf::isf_net::IsfParams;
use isf::trainer::Checkpoint;
use isf::types::rng_from_seed;

fn main() -> isf::Result<()> {
    let cfg = ExperimentConfig::toy("evaluate", std::env::temp_dir().join("isf_evaluate"));
    let c = Components::build(&cfg)?;
    let ds = build(c.generator.as_ref(), c.classifier.as_ref(), cfg.dataset.n_total, cfg.dataset.split_fraction, cfg.seed)?;
    let isf_params = match std::env::args().nth(1) {
        Some(p) => Checkpoint::load(&PathBuf::from(p))?.isf,
        None => {
            let dims = cfg.train.arch.isf_dims(c.generator.latent_shape(), ds.num_attributes());
            IsfParams::init(dims, &mut rng_from_seed(0))?
        }
    };
    let eval = evaluate(&isf_params, &ds, &c, &cfg.protocol)?;
    for (k, v) in &eval.report.metrics {
        println!("{k:>14} {v:.5}");
    }
    let out = cfg.resolved_output_dir();
    std::fs::create_dir_all(&out)?;
    eval.save(&out)?;
    println!("written to {}", out.display());
    Ok(())
}
