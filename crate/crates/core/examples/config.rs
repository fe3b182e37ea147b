//! Prints the prescribed toy experiment config, ready for the `isf` binary.
//!
//! cargo run --example config -- [output_dir] > toy.json

use isf::config::{schema_errors, ExperimentConfig};

fn main() {
    let out = std::env::args().nth(1).unwrap_or_else(|| "runs/toy".into());
    let cfg = ExperimentConfig::toy("toy", out);
    let v = cfg.to_value();
    assert!(schema_errors(&v).is_empty());
    println!("{}", serde_json::to_string_pretty(&v).unwrap());
}
