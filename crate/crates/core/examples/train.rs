//! Trains the style function on the toy stack and prints the loss log.
//!
//! cargo run --release --example train -- [iterations]
//!
//! The toy preset runs 3000 iterations; the default here is 200.

use isf::dataset::build;
use isf::toy::ToyStack;
use isf::trainer::{Trainer, TrainConfig};

fn main() -> isf::Result<()> {
    let iterations = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let toy = ToyStack::with_seed(7)?;
    let ds = build(&toy, &toy, 1000, 0.5, 0)?;
    let mut cfg = TrainConfig::toy();
    cfg.total_iterations = iterations;
    cfg.arch.critic_base_channels = 16;
    let perceptual = toy.perceptual_embedder();
    let out = std::env::temp_dir().join("isf_train");
    let _ = std::fs::remove_dir_all(&out);
    let mut trainer = Trainer::new(cfg, &ds, &toy, &perceptual)?;
    let summary = trainer.run(Some(&out))?;
    let every = (iterations as usize / 10).max(1);
    println!("{:>6} {:>8} {:>8} {:>8} {:>8} {:>8}", "iter", "L_cls_M", "L_cont", "L_nb", "L_ds", "ds_w");
    for r in summary.reports.iter().step_by(every) {
        println!(
            "{:>6} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            r.iter, r.cls_mapper, r.content, r.neighbour, r.diversity, r.ds_weight
        );
    }
    println!("final checkpoint {}", summary.final_dir.unwrap().display());
    Ok(())
}
