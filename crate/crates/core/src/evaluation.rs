//! The evaluation protocol: single-attribute edits of held-out codes, scored
//! with every metric in [`crate::metrics`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{Components, EvalProtocol, CONFIG_SCHEMA_VERSION};
use crate::dataset::LatentDataset;
use crate::editing::{build_path, manipulate};
use crate::error::{invalid, Result};
use crate::isf_net::IsfParams;
use crate::metrics::{
    accuracy_from_predictions, diversity_score, frechet_distance, frs, path_distances, pir_from_distances, ppl,
    MetricsReport,
};
use crate::real::pairwise_sum;
use crate::types::{rng_from_seed, AttributeVector, LatentCode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PirRow {
    pub path: usize,
    pub attribute: usize,
    pub pir: f64,
    pub endpoint: f64,
    pub min_increment: f64,
    pub max_increment: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub pir_rows: Vec<PirRow>,
}

/// Flips bit `q` of the binarized source labels.
pub fn single_flip(d0: &AttributeVector, q: usize) -> AttributeVector {
    let mut bits = d0.binarized();
    bits[q] = !bits[q];
    AttributeVector::from_bits(&bits)
}

fn mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

/// Edits the first `n_eval` test codes, code `i` flipping attribute `i mod m`.
pub fn evaluate(
    isf: &IsfParams<f32>,
    dataset: &LatentDataset,
    components: &Components,
    protocol: &EvalProtocol,
) -> Result<Evaluation> {
    let test = dataset.test_indices();
    let n = protocol.n_eval.min(test.len());
    let p = protocol;
    if n == 0 || p.n_inputs > n || p.n_paths > n || p.n_frechet > n {
        return Err(invalid(format!(
            "protocol needs up to {} held-out codes, dataset has {}",
            p.n_eval.max(p.n_frechet),
            test.len()
        )));
    }
    let g = components.generator.as_ref();
    let m = dataset.num_attributes();
    let mut rng = rng_from_seed(p.seed);

    let mut sources = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    let mut codes: Vec<(LatentCode, LatentCode)> = Vec::with_capacity(n);
    let mut predictions = Vec::with_capacity(n);
    let mut frs_vals = Vec::with_capacity(n);
    let mut real_feats = Vec::with_capacity(p.n_frechet);
    let mut fake_feats = Vec::with_capacity(p.n_frechet);
    for (i, &row) in test[..n].iter().enumerate() {
        let w = dataset.code(row);
        let d0 = dataset.label(row);
        let target = single_flip(&d0, i % m);
        let edit = manipulate(&w, &target, None, isf, &mut rng)?;
        let x = g.generate(&w)?;
        let x_star = g.generate(&edit.code)?;
        predictions.push(components.classifier.classify(&x_star)?);
        frs_vals.push(frs(&x, &x_star, components.identity.as_ref())?);
        if i < p.n_frechet {
            let f = |v: Vec<f32>| v.into_iter().map(f64::from).collect::<Vec<f64>>();
            real_feats.push(f(components.frechet.embed(&x)?));
            fake_feats.push(f(components.frechet.embed(&x_star)?));
        }
        sources.push(d0);
        targets.push(target);
        codes.push((w, edit.code));
    }
    let acc = accuracy_from_predictions(&predictions, &sources, &targets)?;
    let flips: Vec<f64> = (0..n)
        .map(|i| {
            let q = i % m;
            f64::from(u8::from(predictions[i].binarized()[q] == targets[i].binarized()[q]))
        })
        .collect();

    let ppl_val = ppl(&codes, g, components.perceptual.as_ref(), p.ppl_epsilon, &mut rng)?;

    let mut pir_rows = Vec::with_capacity(p.n_paths);
    for (k, (w, w_star)) in codes[..p.n_paths].iter().enumerate() {
        let mut path = build_path(w, w_star, p.path_steps)?;
        path.attribute = Some(k % m);
        let (phis, endpoint) = path_distances(&path, g, components.perceptual.as_ref())?;
        pir_rows.push(PirRow {
            path: k,
            attribute: k % m,
            pir: pir_from_distances(&phis, endpoint, p.pir_eps_stab)?,
            endpoint,
            min_increment: phis.iter().copied().fold(f64::INFINITY, f64::min),
            max_increment: phis.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        });
    }
    let pir_vals: Vec<f64> = pir_rows.iter().map(|r| r.pir).collect();

    let inputs: Vec<(LatentCode, AttributeVector)> = codes[..p.n_inputs]
        .iter()
        .zip(&targets)
        .map(|((w, _), t)| (w.clone(), t.clone()))
        .collect();
    let diversity = diversity_score(
        &inputs,
        g,
        isf,
        components.perceptual.as_ref(),
        p.n_inputs,
        p.n_samples,
        &mut rng,
    )?;

    let mut report = MetricsReport::new();
    report.insert("frs", mean(&frs_vals))?;
    report.insert("ppl", ppl_val)?;
    report.insert("pir", mean(&pir_vals))?;
    report.insert("diversity", diversity)?;
    report.insert("frechet", frechet_distance(&real_feats, &fake_feats)?)?;
    report.insert("mAcc", acc.macc)?;
    report.insert("flip_accuracy", mean(&flips))?;
    report.per_attribute_accuracy = acc.per_attribute.clone();
    report.note("config_schema_version", CONFIG_SCHEMA_VERSION);
    report.note("protocol", p);
    report.note("n_eval_used", n);
    report.note("edit_rule", "code i flips attribute i mod m");
    report.note("frechet_sets", "source images vs edited images");
    report.note("generator", g.name());
    report.note("generator_digest", g.parameter_digest());
    report.note("classifier", components.classifier.name());
    report.note("perceptual_embedder", components.perceptual.name());
    report.note("identity_embedder", components.identity.name());
    report.note("frechet_embedder", components.frechet.name());
    report.note("dataset_seed", dataset.provenance().seed);
    Ok(Evaluation { report, pir_rows })
}

impl Evaluation {
    /// `metrics.json` and, when paths were scored, `pir.csv`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("metrics.json"), serde_json::to_vec_pretty(&self.report)?)?;
        if !self.pir_rows.is_empty() {
            let mut w = csv::Writer::from_path(dir.join("pir.csv")).map_err(csv_err)?;
            for r in &self.pir_rows {
                w.serialize(r).map_err(csv_err)?;
            }
            w.flush()?;
        }
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> crate::Error {
    crate::Error::Io(std::io::Error::other(e.to_string()))
}
