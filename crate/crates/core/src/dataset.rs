//! Labeled latent-code datasets: sampled codes, classifier probabilities and a
//! train/test split.
//!
//! On disk a dataset is a directory holding `manifest.json`, `codes.f32` and
//! `labels.f32`; both binary files are row-major little-endian `f32`.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::handles::{sha256_hex, AttributeClassifier, Generator};
use crate::io::{f32_from_le_bytes, f32_to_le_bytes, write_dir_atomically};
use crate::types::{rng_from_seed, AttributeVector, LatentCode};

pub const DATASET_FORMAT: &str = "isf-latent-dataset/1";
const CODES_FILE: &str = "codes.f32";
const LABELS_FILE: &str = "labels.f32";
const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub generator_digest: String,
    pub classifier: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentDataset {
    rows: usize,
    cols: usize,
    attributes: usize,
    codes: Vec<f32>,
    labels: Vec<f32>,
    train: Vec<usize>,
    test: Vec<usize>,
    provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    config_schema: String,
    count: usize,
    latent_shape: [usize; 2],
    attributes: usize,
    dtype: String,
    codes_file: String,
    codes_sha256: String,
    labels_file: String,
    labels_sha256: String,
    train: Vec<usize>,
    test: Vec<usize>,
    provenance: Provenance,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptDataset(msg.into())
}

impl LatentDataset {
    /// Assembles a dataset from flat buffers, checking every invariant.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        latent_shape: (usize, usize),
        attributes: usize,
        codes: Vec<f32>,
        labels: Vec<f32>,
        train: Vec<usize>,
        test: Vec<usize>,
        provenance: Provenance,
    ) -> Result<Self> {
        let (rows, cols) = latent_shape;
        let code_len = rows * cols;
        if code_len == 0 || attributes == 0 {
            return Err(invalid("dataset shapes must be positive"));
        }
        if codes.len() % code_len != 0 {
            return Err(invalid("codes buffer is not a whole number of codes"));
        }
        let n = codes.len() / code_len;
        if labels.len() != n * attributes {
            return Err(invalid(format!(
                "{n} codes need {} label values, got {}",
                n * attributes,
                labels.len()
            )));
        }
        if codes.iter().any(|v| !v.is_finite()) {
            return Err(invalid("latent codes must be finite"));
        }
        if labels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(invalid("labels must lie in [0,1]"));
        }
        let mut seen = vec![false; n];
        for &i in train.iter().chain(&test) {
            if i >= n || seen[i] {
                return Err(invalid("train/test split must be disjoint and index valid rows"));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(invalid("train/test split must cover every row"));
        }
        Ok(Self {
            rows,
            cols,
            attributes,
            codes,
            labels,
            train,
            test,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.codes.len() / (self.rows * self.cols)
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn latent_shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn num_attributes(&self) -> usize {
        self.attributes
    }

    pub fn code(&self, i: usize) -> LatentCode {
        let n = self.rows * self.cols;
        LatentCode::from_parts(self.rows, self.cols, self.codes[i * n..(i + 1) * n].to_vec())
    }

    pub fn label(&self, i: usize) -> AttributeVector {
        let m = self.attributes;
        AttributeVector::clamped(self.labels[i * m..(i + 1) * m].to_vec())
    }

    pub fn codes(&self) -> &[f32] {
        &self.codes
    }

    pub fn labels(&self) -> &[f32] {
        &self.labels
    }

    pub fn train_indices(&self) -> &[usize] {
        &self.train
    }

    pub fn test_indices(&self) -> &[usize] {
        &self.test
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Per-attribute mean of the stored probabilities.
    pub fn label_marginals(&self) -> Vec<f64> {
        let n = self.len().max(1) as f64;
        let mut out = vec![0.0; self.attributes];
        for row in self.labels.chunks_exact(self.attributes) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v as f64;
            }
        }
        out.iter_mut().for_each(|v| *v /= n);
        out
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let codes = f32_to_le_bytes(&self.codes);
        let labels = f32_to_le_bytes(&self.labels);
        let manifest = Manifest {
            format: DATASET_FORMAT.into(),
            config_schema: crate::config::CONFIG_SCHEMA_VERSION.into(),
            count: self.len(),
            latent_shape: [self.rows, self.cols],
            attributes: self.attributes,
            dtype: "f32-le".into(),
            codes_file: CODES_FILE.into(),
            codes_sha256: sha256_hex(&codes),
            labels_file: LABELS_FILE.into(),
            labels_sha256: sha256_hex(&labels),
            train: self.train.clone(),
            test: self.test.clone(),
            provenance: self.provenance.clone(),
        };
        let json = serde_json::to_vec_pretty(&manifest)?;
        write_dir_atomically(dir, |tmp| {
            fs::write(tmp.join(CODES_FILE), &codes)?;
            fs::write(tmp.join(LABELS_FILE), &labels)?;
            fs::write(tmp.join(MANIFEST_FILE), &json)?;
            Ok(())
        })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let raw = fs::read(dir.join(MANIFEST_FILE))?;
        let manifest: Manifest =
            serde_json::from_slice(&raw).map_err(|e| corrupt(format!("manifest: {e}")))?;
        if manifest.format != DATASET_FORMAT || manifest.dtype != "f32-le" {
            return Err(corrupt(format!(
                "unsupported format {} / dtype {}",
                manifest.format, manifest.dtype
            )));
        }
        let [rows, cols] = manifest.latent_shape;
        let n = manifest.count;
        let codes = fs::read(dir.join(&manifest.codes_file))?;
        let labels = fs::read(dir.join(&manifest.labels_file))?;
        if codes.len() != n * rows * cols * 4 {
            return Err(corrupt(format!(
                "codes file has {} bytes, manifest implies {}",
                codes.len(),
                n * rows * cols * 4
            )));
        }
        if labels.len() != n * manifest.attributes * 4 {
            return Err(corrupt(format!(
                "labels file has {} bytes, manifest implies {}",
                labels.len(),
                n * manifest.attributes * 4
            )));
        }
        if sha256_hex(&codes) != manifest.codes_sha256 {
            return Err(corrupt("codes digest mismatch"));
        }
        if sha256_hex(&labels) != manifest.labels_sha256 {
            return Err(corrupt("labels digest mismatch"));
        }
        Self::from_parts(
            (rows, cols),
            manifest.attributes,
            f32_from_le_bytes(&codes),
            f32_from_le_bytes(&labels),
            manifest.train,
            manifest.test,
            manifest.provenance,
        )
        .map_err(|e| corrupt(e.to_string()))
    }
}

/// Number of training rows for a split; both sides keep at least one row.
pub fn train_count(n_total: usize, split_fraction: f64) -> usize {
    ((n_total as f64 * split_fraction).round() as usize).clamp(1, n_total - 1)
}

/// Samples `n_total` codes with the generator's own sampler, labels them with
/// the classifier and splits a shuffled index list.
pub fn build(
    generator: &dyn Generator<f32>,
    classifier: &dyn AttributeClassifier<f32>,
    n_total: usize,
    split_fraction: f64,
    seed: u64,
) -> Result<LatentDataset> {
    if n_total < 2 {
        return Err(invalid("a dataset needs at least two codes"));
    }
    if !(split_fraction > 0.0 && split_fraction < 1.0) {
        return Err(invalid(format!("split fraction {split_fraction} must lie in (0,1)")));
    }
    if generator.resolution() != classifier.resolution() {
        return Err(invalid(format!(
            "generator resolution {:?} differs from classifier resolution {:?}",
            generator.resolution(),
            classifier.resolution()
        )));
    }
    let mut rng = rng_from_seed(seed);
    let (rows, cols) = generator.latent_shape();
    let m = classifier.num_attributes();
    let mut codes = Vec::with_capacity(n_total * rows * cols);
    let mut labels = Vec::with_capacity(n_total * m);
    for _ in 0..n_total {
        let w = generator.sample_latent(&mut rng);
        let x = generator.generate(&w)?;
        let d = classifier.classify(&x)?;
        codes.extend_from_slice(w.as_slice());
        labels.extend_from_slice(d.as_slice());
    }
    let mut order: Vec<usize> = (0..n_total).collect();
    order.shuffle(&mut rng);
    let n_train = train_count(n_total, split_fraction);
    let test = order.split_off(n_train);
    LatentDataset::from_parts(
        (rows, cols),
        m,
        codes,
        labels,
        order,
        test,
        Provenance {
            generator: generator.name().to_string(),
            generator_digest: generator.parameter_digest(),
            classifier: classifier.name().to_string(),
            seed,
        },
    )
}
