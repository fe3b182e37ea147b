//! Trains the full model and the variants named by an ablation spec, scores
//! each, and writes ablation.csv.
//!
//! cargo run --release --example ablate -- [iterations]
//!
//! Iterations default to 100 per variant so the sweep finishes quickly.

use isf::ablation::{run_ablation, AblationSpec};
use isf::config::{Components, ExperimentConfig};
use isf::dataset::build;

fn main() -> isf::Result<()> {
    let iterations = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let mut cfg = ExperimentConfig::toy("ablate", std::env::temp_dir().join("isf_ablate"));
    cfg.train.total_iterations = iterations;
    cfg.train.arch.critic_base_channels = 8;
    cfg.protocol.n_eval = 100;
    cfg.protocol.n_inputs = 20;
    cfg.protocol.n_paths = 10;
    cfg.protocol.n_frechet = 100;
    let c = Components::build(&cfg)?;
    let ds = build(c.generator.as_ref(), c.classifier.as_ref(), cfg.dataset.n_total, cfg.dataset.split_fraction, cfg.seed)?;
    let spec = AblationSpec::from_json_str(r#"{"drop_nb": true, "adain": true, "seeds": [0]}"#)?;
    let out = cfg.resolved_output_dir();
    let rows = run_ablation(&spec, &cfg.train, &cfg.protocol, &ds, &c, Some(&out))?;
    println!("{:>14} {:>9} {:>9} {:>7} {:>7}", "variant", "frechet", "diversity", "frs", "pir");
    for r in &rows {
        println!("{:>14} {:>9.4} {:>9.5} {:>7.4} {:>7.4}", r.variant, r.frechet, r.diversity, r.frs, r.pir);
    }
    println!("table {}", out.join("ablation.csv").display());
    Ok(())
}
