//! The metric functions on small hand-made inputs.
//!
//! cargo run --example metrics

use isf::metrics::{accuracy_from_predictions, frechet_distance, pir_from_distances};
use isf::types::{rng_from_seed, AttributeVector};
use rand::Rng;
use rand_distr::StandardNormal;

fn main() -> isf::Result<()> {
    // Increments (0.1, 0.3, 0.2) over an endpoint distance of 0.5.
    println!("PIR {:.3}", pir_from_distances(&[0.1, 0.3, 0.2], 0.5, 0.0)?);

    // N(0,1) vs N(2,1): the Frechet distance is 4.
    let mut rng = rng_from_seed(0);
    let mut draw = |mu: f64| -> Vec<Vec<f64>> {
        (0..10_000).map(|_| vec![mu + rng.sample::<f64, _>(StandardNormal)]).collect()
    };
    let (a, b) = (draw(0.0), draw(2.0));
    println!("Frechet distance {:.3}", frechet_distance(&a, &b)?);

    // Accuracy counts only attributes whose change was requested.
    let bits = |b: &[bool]| AttributeVector::<f64>::from_bits(b);
    let sources = [bits(&[false, true]), bits(&[true, true])];
    let targets = [bits(&[true, true]), bits(&[true, false])];
    let preds = [bits(&[true, false]), bits(&[false, true])];
    let acc = accuracy_from_predictions(&preds, &sources, &targets)?;
    println!("per attribute {:?}, mAcc {:.2}", acc.per_attribute, acc.macc);
    Ok(())
}
