//! Samples and labels a latent dataset with the toy generator and classifier,
//! saves it, and reloads it with integrity checks.
//!
//! cargo run --example build_dataset -- [output_dir]

use isf::dataset::{build, LatentDataset};
use isf::toy::ToyStack;

fn main() -> isf::Result<()> {
    let out = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("isf_dataset"));
    let toy = ToyStack::with_seed(7)?;
    let ds = build(&toy, &toy, 1000, 0.5, 0)?;
    ds.save(&out)?;
    let back = LatentDataset::load(&out)?;
    assert_eq!(back, ds);
    println!("{} codes ({} train / {} test) at {}", ds.len(), ds.train_indices().len(), ds.test_indices().len(), out.display());
    println!("label marginals {:?}", ds.label_marginals());
    println!("generator digest {}", ds.provenance().generator_digest);
    Ok(())
}
