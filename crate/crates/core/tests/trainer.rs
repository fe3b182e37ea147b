//! Training loop, checkpoints and the frozen-generator contract.

use std::fs;

use isf::dataset::{build, LatentDataset};
use isf::error::Result;
use isf::handles::{Embedder, EmbedderRole, Generator};
use isf::toy::ToyStack;
use isf::trainer::{verify_frozen, Checkpoint, TrainConfig, Trainer, LOG_FILE};
use isf::types::ImageTensor;
use isf::Error;

fn toy() -> ToyStack {
    ToyStack::with_seed(7).unwrap()
}

fn small(iterations: u64, seed: u64) -> TrainConfig {
    let mut c = TrainConfig::toy();
    c.total_iterations = iterations;
    c.batch_size = 4;
    c.seed = seed;
    c.arch.hidden = 32;
    c.arch.critic_base_channels = 8;
    c.arch.critic_resolution = Some(16);
    c
}

fn dataset(t: &ToyStack) -> LatentDataset {
    build(t, t, 64, 0.5, 1).unwrap()
}

struct NanEmbedder;

impl Embedder<f32> for NanEmbedder {
    fn name(&self) -> &str {
        "nan"
    }
    fn role(&self) -> EmbedderRole {
        EmbedderRole::Perceptual
    }
    fn dim(&self) -> usize {
        4
    }
    fn embed(&self, _x: &ImageTensor<f32>) -> Result<Vec<f32>> {
        Ok(vec![f32::NAN; 4])
    }
    fn embed_vjp(&self, x: &ImageTensor<f32>, _grad: &[f32]) -> Result<ImageTensor<f32>> {
        let (h, w) = x.resolution();
        Ok(ImageTensor::zeros(h, w))
    }
}

#[test]
fn generator_digest_survives_training() {
    let t = toy();
    let ds = dataset(&t);
    let before = Generator::<f32>::parameter_digest(&t);
    let emb = t.perceptual_embedder();
    let mut tr = Trainer::new(small(100, 0), &ds, &t, &emb).unwrap();
    tr.run(None).unwrap();
    assert_eq!(before, Generator::<f32>::parameter_digest(&t));
    tr.verify_generator().unwrap();
}

#[test]
fn zero_learning_rate_leaves_parameters_alone() {
    let t = toy();
    let ds = dataset(&t);
    let emb = t.perceptual_embedder();
    let mut c = small(5, 0);
    c.learning_rate_mapper = 0.0;
    c.learning_rate_critic = 0.0;
    let mut tr = Trainer::new(c, &ds, &t, &emb).unwrap();
    let start = tr.checkpoint();
    tr.run(None).unwrap();
    let end = tr.checkpoint();
    assert_eq!(start.isf.buffer().digest(), end.isf.buffer().digest());
    assert_eq!(start.critic.buffer().digest(), end.critic.buffer().digest());
}

#[test]
fn zero_iterations_returns_the_initial_state() {
    let t = toy();
    let ds = dataset(&t);
    let emb = t.perceptual_embedder();
    let mut tr = Trainer::new(small(0, 3), &ds, &t, &emb).unwrap();
    let start = tr.checkpoint();
    let summary = tr.run(None).unwrap();
    assert!(summary.reports.is_empty());
    assert_eq!(summary.checkpoint.iteration, 0);
    assert_eq!(summary.checkpoint.isf, start.isf);
}

#[test]
fn frozen_check_compares_generator_digests() {
    let t = toy();
    let other = ToyStack::with_seed(8).unwrap();
    let ds = dataset(&t);
    let emb = t.perceptual_embedder();
    let mut tr = Trainer::new(small(3, 0), &ds, &t, &emb).unwrap();
    let a = tr.checkpoint();
    tr.run(None).unwrap();
    assert!(verify_frozen(&a, &tr.checkpoint()).unwrap());
    let tr2 = Trainer::new(small(3, 0), &ds, &other, &emb).unwrap();
    assert!(!verify_frozen(&a, &tr2.checkpoint()).unwrap());
}

#[test]
fn log_records_every_step_with_a_decaying_diversity_weight() {
    let t = toy();
    let ds = dataset(&t);
    let emb = t.perceptual_embedder();
    let dir = tempfile::tempdir().unwrap();
    Trainer::new(small(12, 0), &ds, &t, &emb).unwrap().run(Some(dir.path())).unwrap();
    let text = fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
    let rows: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 12);
    let keys = ["L_rf_D", "L_rf_M", "L_cls_D", "L_cls_M", "L_cont", "L_nb", "L_cyc", "L_ds", "total_M", "total_D"];
    let mut last = f64::INFINITY;
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r["iter"].as_u64(), Some(i as u64));
        assert!(keys.iter().all(|k| r[*k].as_f64().is_some_and(f64::is_finite)));
        let w = r["ds_weight"].as_f64().unwrap();
        assert!(w <= last);
        last = w;
    }
    assert!(dir.path().join("checkpoints/final").is_dir());
}

#[test]
fn mapper_classification_loss_falls() {
    let t = toy();
    let ds = dataset(&t);
    let emb = t.perceptual_embedder();
    let n = 300;
    let mut falls = 0;
    for seed in 0..3 {
        let mut c = TrainConfig::toy();
        c.total_iterations = n;
        c.seed = seed;
        c.arch.critic_base_channels = 8;
        let summary = Trainer::new(c, &ds, &t, &emb).unwrap().run(None).unwrap();
        let cls: Vec<f64> = summary.reports.iter().map(|r| r.cls_mapper).collect();
        let k = (n / 10) as usize;
        let head = cls[..k].iter().sum::<f64>() / k as f64;
        let tail = cls[cls.len() - k..].iter().sum::<f64>() / k as f64;
        falls += usize::from(tail < head);
    }
    assert!(falls >= 2, "{falls}/3 seeds reduced L_cls_M");
}

#[test]
fn checkpoint_round_trip_and_tamper_detection() {
    let t = toy();
    let ds = dataset(&t);
    let emb = t.perceptual_embedder();
    let mut tr = Trainer::new(small(4, 0), &ds, &t, &emb).unwrap();
    tr.run(None).unwrap();
    let ck = tr.checkpoint();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.isf, ck.isf);
    assert_eq!(back.critic.buffer().digest(), ck.critic.buffer().digest());
    assert_eq!(back.iteration, 4);
    assert_eq!(back.rng, ck.rng);

    let params = fs::read_dir(&path)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e != "json"))
        .unwrap();
    let mut bytes = fs::read(&params).unwrap();
    bytes[10] ^= 0x40;
    fs::write(&params, &bytes).unwrap();
    assert!(matches!(Checkpoint::load(&path), Err(Error::InvalidCheckpoint(_))));
    bytes[10] ^= 0x40;
    fs::write(&params, &bytes).unwrap();

    let manifest = path.join("manifest.json");
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    v["config"]["batch_size"] = 99.into();
    fs::write(&manifest, v.to_string()).unwrap();
    assert!(matches!(Checkpoint::load(&path), Err(Error::InvalidCheckpoint(_))));
}

#[test]
fn resume_rejects_a_different_generator() {
    let t = toy();
    let other = ToyStack::with_seed(8).unwrap();
    let ds = dataset(&t);
    let emb = t.perceptual_embedder();
    let ck = Trainer::new(small(2, 0), &ds, &t, &emb).unwrap().checkpoint();
    assert!(matches!(
        Trainer::resume(ck, &ds, &other, &emb),
        Err(Error::InvalidCheckpoint(_))
    ));
}

#[test]
fn non_finite_loss_names_the_term_and_iteration() {
    let t = toy();
    let ds = dataset(&t);
    let err = Trainer::new(small(3, 0), &ds, &t, &NanEmbedder).unwrap().run(None).unwrap_err();
    match err {
        Error::NonFinite { term, iteration } => {
            assert_eq!(term, "L_cont");
            assert_eq!(iteration, 0);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let t = toy();
    let ds = dataset(&t);
    let emb = t.perceptual_embedder();
    let mut c = small(3, 0);
    c.batch_size = 0;
    assert!(Trainer::new(c, &ds, &t, &emb).is_err());
    let mut c = small(3, 0);
    c.ds_decay_iterations = Some(0);
    assert!(Trainer::new(c, &ds, &t, &emb).is_err());
}
