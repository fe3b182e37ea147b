//! The command verbs behind the `isf` binary. Each verb loads the experiment
//! config, does its work and writes artifacts under the output directory.
//!
//! Output layout, relative to the resolved output directory:
//! `dataset/`, `train/` (log and checkpoints), `edits/<tag>/`,
//! `interpolate/<tag>/`, `eval/` and `ablation/`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::ablation::{run_ablation, AblationSpec};
use crate::config::{Components, ExperimentConfig, CONFIG_SCHEMA_VERSION};
use crate::dataset::{self, LatentDataset};
use crate::editing::{build_path, manipulate, sample_modes};
use crate::error::{invalid, Error, Result};
use crate::evaluation::{evaluate, single_flip};
use crate::io::write_dir_atomically;
use crate::metrics::path_distances;
use crate::metrics::pir_from_distances;
use crate::render::save_strip;
use crate::trainer::{Checkpoint, Trainer};
use crate::types::{rng_from_seed, AttributeVector, LatentCode, NoiseVector};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Exit status for a failed verb: 2 for configuration problems, 3 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

/// The machine-readable error document printed on failure.
pub fn error_document(e: &Error) -> Value {
    json!({
        "error": e.kind(),
        "message": e.to_string(),
        "exit_code": exit_code(e),
        "config_schema_version": CONFIG_SCHEMA_VERSION,
    })
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(v)?)?;
    Ok(())
}

fn load_dataset(cfg: &ExperimentConfig) -> Result<LatentDataset> {
    let dir = cfg.dataset_dir();
    if !dir.join("manifest.json").exists() {
        return Err(invalid(format!(
            "no dataset at {}; run build-dataset first",
            dir.display()
        )));
    }
    LatentDataset::load(&dir)
}

fn checkpoint_path(cfg: &ExperimentConfig, explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.train_dir().join("checkpoints").join("final"))
}

fn load_checkpoint(path: &Path, components: &Components) -> Result<Checkpoint> {
    let ck = Checkpoint::load(path)?;
    if ck.generator_digest != components.generator.parameter_digest() {
        return Err(Error::InvalidCheckpoint(
            "checkpoint was trained against a different generator".into(),
        ));
    }
    Ok(ck)
}

pub fn cmd_build_dataset(cfg: &ExperimentConfig) -> Result<Value> {
    let c = Components::build(cfg)?;
    let ds = dataset::build(
        c.generator.as_ref(),
        c.classifier.as_ref(),
        cfg.dataset.n_total,
        cfg.dataset.split_fraction,
        cfg.seed,
    )?;
    let dir = cfg.dataset_dir();
    ds.save(&dir)?;
    Ok(json!({
        "dataset": dir,
        "count": ds.len(),
        "train": ds.train_indices().len(),
        "test": ds.test_indices().len(),
        "label_marginals": ds.label_marginals(),
    }))
}

/// Trains from scratch, or continues from `resume`.
pub fn cmd_train(cfg: &ExperimentConfig, resume: Option<&Path>) -> Result<Value> {
    let c = Components::build(cfg)?;
    let ds = load_dataset(cfg)?;
    let out = cfg.train_dir();
    let mut trainer = match resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            if ck.config != cfg.train {
                return Err(Error::InvalidCheckpoint(
                    "checkpoint was made with a different training config".into(),
                ));
            }
            Trainer::resume(ck, &ds, c.generator.as_ref(), c.perceptual.as_ref())?
        }
        None => {
            if out.join(crate::trainer::LOG_FILE).exists() {
                return Err(invalid(format!(
                    "{} already holds a run; pass --resume or choose another output directory",
                    out.display()
                )));
            }
            Trainer::new(cfg.train.clone(), &ds, c.generator.as_ref(), c.perceptual.as_ref())?
        }
    };
    fs::create_dir_all(&out)?;
    write_json(&out.join("config.json"), cfg)?;
    let summary = trainer.run(Some(&out))?;
    let last = summary.reports.last();
    Ok(json!({
        "train_dir": out,
        "iterations": trainer.iteration(),
        "final_checkpoint": summary.final_dir,
        "last_losses": last.map(|r| serde_json::from_str::<Value>(&r.to_json_line()).ok()),
    }))
}

/// Where the source code of an edit comes from.
#[derive(Clone, Debug)]
pub enum CodeRef {
    /// Row of the dataset.
    Index(usize),
    /// JSON array of `L * C` numbers.
    File(PathBuf),
}

fn bit_string(d: &AttributeVector) -> String {
    d.binarized().iter().map(|&b| if b { '1' } else { '0' }).collect()
}

impl CodeRef {
    /// Directory-name fragment; file sources are named by their stem.
    fn tag(&self) -> String {
        match self {
            CodeRef::Index(i) => format!("code_{i}"),
            CodeRef::File(p) => format!(
                "file_{}",
                p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
            ),
        }
    }

    fn resolve(&self, ds: &LatentDataset, components: &Components) -> Result<(LatentCode, AttributeVector, Value)> {
        match self {
            CodeRef::Index(i) => {
                if *i >= ds.len() {
                    return Err(invalid(format!("code index {i} out of range ({} codes)", ds.len())));
                }
                Ok((ds.code(*i), ds.label(*i), json!({ "dataset_index": i })))
            }
            CodeRef::File(p) => {
                let values: Vec<f32> = serde_json::from_slice(&fs::read(p)?)?;
                let (r, c) = components.generator.latent_shape();
                let w = LatentCode::new(r, c, values)?;
                let d0 = components.classifier.classify(&components.generator.generate(&w)?)?;
                Ok((w, d0, json!({ "file": p })))
            }
        }
    }
}

/// Target attributes: explicit bits, or the source labels with `flip` bits
/// inverted.
#[derive(Clone, Debug)]
pub enum TargetSpec {
    Bits(Vec<bool>),
    Flip(Vec<usize>),
}

impl TargetSpec {
    /// Parses `"1,0,1,0"` style bit lists.
    pub fn parse_bits(s: &str) -> Result<Self> {
        s.split(',')
            .map(|t| match t.trim() {
                "1" => Ok(true),
                "0" => Ok(false),
                other => Err(invalid(format!("target bit `{other}` is not 0 or 1"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(TargetSpec::Bits)
    }

    fn resolve(&self, d0: &AttributeVector) -> Result<AttributeVector> {
        let m = d0.len();
        match self {
            TargetSpec::Bits(b) if b.len() == m => Ok(AttributeVector::from_bits(b)),
            TargetSpec::Bits(b) => Err(invalid(format!("{} target bits for {m} attributes", b.len()))),
            TargetSpec::Flip(qs) => {
                let mut t = d0.clone();
                for &q in qs {
                    if q >= m {
                        return Err(invalid(format!("attribute {q} out of range ({m} attributes)")));
                    }
                    t = single_flip(&t, q);
                }
                Ok(t)
            }
        }
    }
}

fn as_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

/// `count` edits of one code, written as `strip.png` (source first) and
/// `edit.json`.
pub fn cmd_edit(
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
    code: &CodeRef,
    target: &TargetSpec,
    count: usize,
    seed: u64,
) -> Result<Value> {
    let c = Components::build(cfg)?;
    let ck_path = checkpoint_path(cfg, checkpoint);
    let ck = load_checkpoint(&ck_path, &c)?;
    let ds = load_dataset(cfg)?;
    let (w, d0, source) = code.resolve(&ds, &c)?;
    let d = target.resolve(&d0)?;
    let mut rng = rng_from_seed(seed);
    let edits = sample_modes(&w, &d, count, &ck.isf, &mut rng)?;
    let g = c.generator.as_ref();
    let mut images = vec![g.generate(&w)?];
    let mut records = Vec::with_capacity(edits.len());
    for e in &edits {
        let x = g.generate(&e.code)?;
        records.push(json!({
            "z": as_f64(e.noise.as_slice()),
            "code": as_f64(e.code.as_slice()),
            "predicted": as_f64(c.classifier.classify(&x)?.as_slice()),
        }));
        images.push(x);
    }
    let tag = format!("{}_to_{}_seed_{seed}", code.tag(), bit_string(&d));
    let dir = cfg.resolved_output_dir().join("edits").join(tag);
    let sidecar = json!({
        "config_schema_version": CONFIG_SCHEMA_VERSION,
        "checkpoint": ck_path,
        "checkpoint_iteration": ck.iteration,
        "source": source,
        "source_code": as_f64(w.as_slice()),
        "latent_shape": w.shape(),
        "source_labels": as_f64(d0.as_slice()),
        "target": as_f64(d.as_slice()),
        "seed": seed,
        "image": "strip.png",
        "layout": "source image, then one column per edit in order",
        "edits": records,
    });
    write_dir_atomically(&dir, |tmp| {
        save_strip(&images, &tmp.join("strip.png"))?;
        write_json(&tmp.join("edit.json"), &sidecar)
    })?;
    Ok(json!({ "dir": dir, "count": edits.len() }))
}

/// Where an interpolation path ends.
#[derive(Clone, Debug)]
pub enum PathEnd {
    Code(CodeRef),
    /// The edit of the source toward the given target, with a seeded `z`.
    Edit(TargetSpec),
}

/// Path `s_0 ..= s_T` rendered as `strip.png`, with PIR and the per-step
/// increments in `path.json`.
pub fn cmd_interpolate(
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
    from: &CodeRef,
    to: &PathEnd,
    steps: usize,
    seed: u64,
) -> Result<Value> {
    let c = Components::build(cfg)?;
    let ds = load_dataset(cfg)?;
    let (w, d0, source) = from.resolve(&ds, &c)?;
    let mut extra = json!({});
    let (dst, dst_tag) = match to {
        PathEnd::Code(r) => (r.resolve(&ds, &c)?.0, r.tag()),
        PathEnd::Edit(t) => {
            let ck_path = checkpoint_path(cfg, checkpoint);
            let ck = load_checkpoint(&ck_path, &c)?;
            let d = t.resolve(&d0)?;
            let mut rng = rng_from_seed(seed);
            let e = manipulate(&w, &d, None::<&NoiseVector>, &ck.isf, &mut rng)?;
            extra = json!({
                "checkpoint": ck_path,
                "target": as_f64(d.as_slice()),
                "z": as_f64(e.noise.as_slice()),
            });
            (e.code, format!("edit_{}", bit_string(&d)))
        }
    };
    let path = build_path(&w, &dst, steps)?;
    let g = c.generator.as_ref();
    let (phis, endpoint) = path_distances(&path, g, c.perceptual.as_ref())?;
    let pir = pir_from_distances(&phis, endpoint, cfg.protocol.pir_eps_stab)?;
    let images = path.codes().iter().map(|s| g.generate(s)).collect::<Result<Vec<_>>>()?;
    let dir = cfg
        .resolved_output_dir()
        .join("interpolate")
        .join(format!("{}_to_{dst_tag}_steps_{steps}_seed_{seed}", from.tag()));
    let sidecar = json!({
        "config_schema_version": CONFIG_SCHEMA_VERSION,
        "source": source,
        "steps": steps,
        "codes": path.codes().iter().map(|s| as_f64(s.as_slice())).collect::<Vec<_>>(),
        "increments": phis,
        "endpoint_distance": endpoint,
        "pir": pir,
        "pir_eps_stab": cfg.protocol.pir_eps_stab,
        "perceptual_embedder": c.perceptual.name(),
        "edit": extra,
        "image": "strip.png",
    });
    write_dir_atomically(&dir, |tmp| {
        save_strip(&images, &tmp.join("strip.png"))?;
        write_json(&tmp.join("path.json"), &sidecar)
    })?;
    Ok(json!({ "dir": dir, "pir": pir }))
}

/// Runs the evaluation protocol; writes `eval/metrics.json` and `eval/pir.csv`.
pub fn cmd_evaluate(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<Value> {
    let c = Components::build(cfg)?;
    let ck_path = checkpoint_path(cfg, checkpoint);
    let ck = load_checkpoint(&ck_path, &c)?;
    let ds = load_dataset(cfg)?;
    let mut eval = evaluate(&ck.isf, &ds, &c, &cfg.protocol)?;
    eval.report.note("checkpoint", &ck_path);
    eval.report.note("checkpoint_iteration", ck.iteration);
    let dir = cfg.resolved_output_dir().join("eval");
    write_dir_atomically(&dir, |tmp| eval.save(tmp))?;
    Ok(json!({ "dir": dir, "metrics": eval.report.metrics }))
}

pub fn cmd_ablate(cfg: &ExperimentConfig, spec: &AblationSpec) -> Result<Value> {
    let c = Components::build(cfg)?;
    spec.variants(&cfg.train)?;
    let ds = load_dataset(cfg)?;
    let dir = cfg.resolved_output_dir().join("ablation");
    let rows = run_ablation(spec, &cfg.train, &cfg.protocol, &ds, &c, Some(&dir))?;
    Ok(json!({ "table": dir.join("ablation.csv"), "rows": rows }))
}
