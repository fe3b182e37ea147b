//! Loss and normalization ablations: each variant retrains from the shared
//! seed and is scored with the evaluation protocol.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Components;
use crate::config::EvalProtocol;
use crate::dataset::LatentDataset;
use crate::error::{Error, Result};
use crate::evaluation::{csv_err, evaluate, Evaluation};
use crate::isf_net::{Modulation, NormAxis};
use crate::trainer::{run, TrainConfig};

/// Which variants to run next to the full model. Unknown keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSpec {
    #[serde(default)]
    pub drop_nb: bool,
    #[serde(default)]
    pub drop_cont: bool,
    /// Per-row statistics and per-row modulation.
    #[serde(default)]
    pub adain: bool,
    /// Per-row statistics with element-wise modulation.
    #[serde(default)]
    pub per_row_adaln: bool,
    #[serde(default)]
    pub lambda_ds: Vec<f64>,
    /// Training seeds; empty means the config's own seed.
    #[serde(default)]
    pub seeds: Vec<u64>,
}

impl AblationSpec {
    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("ablation spec: {e}")))
    }

    /// `(name, config)` for every variant, the full model first.
    pub fn variants(&self, base: &TrainConfig) -> Result<Vec<(String, TrainConfig)>> {
        let mut out = vec![("full".to_string(), base.clone())];
        let mut push = |name: String, f: &dyn Fn(&mut TrainConfig)| {
            let mut c = base.clone();
            f(&mut c);
            out.push((name, c));
        };
        if self.drop_nb {
            push("no_nb".into(), &|c| c.weights.lambda_nb = 0.0);
        }
        if self.drop_cont {
            push("no_cont".into(), &|c| c.weights.lambda_cont = 0.0);
        }
        if self.adain {
            push("adain".into(), &|c| {
                c.arch.norm = NormAxis::PerRow;
                c.arch.modulation = Modulation::PerRow;
            });
        }
        if self.per_row_adaln {
            push("per_row_adaln".into(), &|c| c.arch.norm = NormAxis::PerRow);
        }
        for &l in &self.lambda_ds {
            if !(l.is_finite() && l >= 0.0) {
                return Err(Error::Config(format!("lambda_ds {l} must be non-negative")));
            }
            push(format!("lambda_ds={l}"), &|c| c.weights.lambda_ds = l);
        }
        for (_, c) in &out {
            c.validate()?;
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub seed: u64,
    pub frechet: f64,
    pub diversity: f64,
    pub frs: f64,
    pub pir: f64,
}

impl AblationRow {
    pub fn from_evaluation(variant: &str, seed: u64, e: &Evaluation) -> Self {
        let g = |k: &str| e.report.get(k).unwrap_or(f64::NAN);
        Self {
            variant: variant.into(),
            seed,
            frechet: g("frechet"),
            diversity: g("diversity"),
            frs: g("frs"),
            pir: g("pir"),
        }
    }
}

/// Trains and evaluates every (variant, seed). With an output directory each
/// run gets `<out>/<variant>/seed_<s>/` and the table goes to
/// `<out>/ablation.csv`.
pub fn run_ablation(
    spec: &AblationSpec,
    base: &TrainConfig,
    protocol: &EvalProtocol,
    dataset: &LatentDataset,
    components: &Components,
    output: Option<&Path>,
) -> Result<Vec<AblationRow>> {
    let variants = spec.variants(base)?;
    let seeds = if spec.seeds.is_empty() {
        vec![base.seed]
    } else {
        spec.seeds.clone()
    };
    let mut rows = Vec::new();
    for &seed in &seeds {
        for (name, cfg) in &variants {
            let mut cfg = cfg.clone();
            cfg.seed = seed;
            let dir = output.map(|o| o.join(name).join(format!("seed_{seed}")));
            let summary = run(
                cfg,
                dataset,
                components.generator.as_ref(),
                components.perceptual.as_ref(),
                dir.as_deref(),
            )?;
            let eval = evaluate(&summary.checkpoint.isf, dataset, components, protocol)?;
            if let Some(d) = &dir {
                eval.save(d)?;
            }
            rows.push(AblationRow::from_evaluation(name, seed, &eval));
        }
    }
    if let Some(o) = output {
        write_table(&rows, &o.join("ablation.csv"))?;
    }
    Ok(rows)
}

pub fn write_table(rows: &[AblationRow], path: &Path) -> Result<()> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p)?;
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_config_errors() {
        let e = AblationSpec::from_json_str(r#"{"drop_nb": true, "drop_everything": true}"#).unwrap_err();
        assert_eq!(e.kind(), "invalid-config");
    }

    #[test]
    fn variants_change_one_thing_each() {
        let spec = AblationSpec {
            drop_nb: true,
            adain: true,
            per_row_adaln: true,
            lambda_ds: vec![0.2, 1.0],
            ..Default::default()
        };
        let base = TrainConfig::toy();
        let v = spec.variants(&base).unwrap();
        let names: Vec<&str> = v.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["full", "no_nb", "adain", "per_row_adaln", "lambda_ds=0.2", "lambda_ds=1"]);
        assert_eq!(v[1].1.weights.lambda_nb, 0.0);
        assert_eq!(v[2].1.arch.modulation, Modulation::PerRow);
        assert_eq!(v[3].1.arch.modulation, Modulation::Elementwise);
        assert_eq!(v[3].1.arch.norm, NormAxis::PerRow);
        assert_eq!(v[4].1.weights.lambda_ds, 0.2);
        assert_eq!(v[0].1, base);
    }
}
