//! Alternating critic/mapper optimization against a frozen generator.

use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::critic::{CriticDims, CriticParams};
use crate::error::{Error, Result};
use crate::handles::{sha256_hex, Embedder, Generator};
use crate::io::{write_dir_atomically, TensorHeader, TensorReader, TensorWriter};
use crate::isf_net::{IsfDims, IsfParams, Modulation, NormAxis, ADALN_EPS};
use crate::objectives::{ds_weight, LossReport, LossWeights};
use crate::optim::{Adam, AdamConfig};
use crate::step::{critic_objective, mapper_objective, CriticInput, StepSample};
use crate::dataset::LatentDataset;
use crate::types::{rng_from_seed, sample_noise, AttributeVector, IsfRng};

pub const CHECKPOINT_FORMAT: &str = "isf-checkpoint/1";
const MANIFEST_FILE: &str = "manifest.json";
const PARAMS_FILE: &str = "params.f32";
pub const LOG_FILE: &str = "train_log.jsonl";

/// Network shapes that are not fixed by the generator or the dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub noise_dim: usize,
    pub hidden: usize,
    pub f1_depth: usize,
    pub f2_depth: usize,
    pub norm: NormAxis,
    pub modulation: Modulation,
    pub critic_base_channels: usize,
    /// Images are average-pooled to this size before the critic; `None`
    /// feeds the generator resolution directly.
    #[serde(default)]
    pub critic_resolution: Option<usize>,
}

impl ArchConfig {
    pub fn toy() -> Self {
        Self {
            noise_dim: 32,
            hidden: 256,
            f1_depth: 2,
            f2_depth: 2,
            norm: NormAxis::Layer,
            modulation: Modulation::Elementwise,
            critic_base_channels: 32,
            critic_resolution: None,
        }
    }

    pub fn full() -> Self {
        Self {
            noise_dim: 512,
            hidden: 1024,
            critic_resolution: Some(256),
            ..Self::toy()
        }
    }

    pub fn isf_dims(&self, latent_shape: (usize, usize), attributes: usize) -> IsfDims {
        IsfDims {
            rows: latent_shape.0,
            cols: latent_shape.1,
            attributes,
            noise: self.noise_dim,
            hidden: self.hidden,
            f1_depth: self.f1_depth,
            f2_depth: self.f2_depth,
            norm: self.norm,
            modulation: self.modulation,
            eps: ADALN_EPS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub total_iterations: u64,
    pub batch_size: usize,
    #[serde(rename = "learning_rate_M")]
    pub learning_rate_mapper: f64,
    #[serde(rename = "learning_rate_D")]
    pub learning_rate_critic: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub r1_gamma: f64,
    /// Horizon of the linear diversity-weight decay; defaults to
    /// `total_iterations`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ds_decay_iterations: Option<u64>,
    pub weights: LossWeights,
    pub seed: u64,
    /// 0 disables intermediate checkpoints.
    pub checkpoint_every: u64,
    pub log_every: u64,
    pub arch: ArchConfig,
}

impl TrainConfig {
    pub fn toy() -> Self {
        Self {
            total_iterations: 3000,
            batch_size: 16,
            learning_rate_mapper: 1e-3,
            learning_rate_critic: 1e-3,
            adam_beta1: 0.0,
            adam_beta2: 0.99,
            adam_eps: 1e-8,
            r1_gamma: 1.0,
            ds_decay_iterations: None,
            weights: LossWeights::default(),
            seed: 0,
            checkpoint_every: 0,
            log_every: 1,
            arch: ArchConfig::toy(),
        }
    }

    pub fn full() -> Self {
        Self {
            total_iterations: 40_000,
            batch_size: 4,
            learning_rate_mapper: 1e-5,
            learning_rate_critic: 1e-5,
            checkpoint_every: 5000,
            log_every: 100,
            arch: ArchConfig::full(),
            ..Self::toy()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        for (name, v) in [
            ("learning_rate_M", self.learning_rate_mapper),
            ("learning_rate_D", self.learning_rate_critic),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be a non-negative number, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0,1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        if !(self.r1_gamma.is_finite() && self.r1_gamma >= 0.0) {
            return bad("r1_gamma must be non-negative");
        }
        if self.ds_decay_iterations == Some(0) {
            return bad("ds_decay_iterations must be positive");
        }
        if self.log_every == 0 {
            return bad("log_every must be positive");
        }
        let a = &self.arch;
        if a.noise_dim == 0 || a.hidden == 0 || a.f1_depth == 0 || a.critic_base_channels == 0 {
            return bad("architecture sizes must be positive");
        }
        self.weights
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }

    fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig {
            learning_rate: lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

/// Complete resumable training state.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub iteration: u64,
    pub config: TrainConfig,
    pub config_digest: String,
    pub generator_name: String,
    /// Empty when unknown; comparisons then fail with `invalid-checkpoint`.
    pub generator_digest: String,
    pub isf: IsfParams<f32>,
    pub critic: CriticParams<f32>,
    pub opt_mapper: Adam<f32>,
    pub opt_critic: Adam<f32>,
    pub rng: IsfRng,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdamState {
    config: AdamConfig,
    step: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointManifest {
    format: String,
    config_schema: String,
    iteration: u64,
    config: TrainConfig,
    config_digest: String,
    generator_name: String,
    generator_digest: Option<String>,
    isf_dims: IsfDims,
    critic_dims: CriticDims,
    adam_mapper: AdamState,
    adam_critic: AdamState,
    rng: IsfRng,
    params_file: String,
    params: TensorHeader,
}

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut w = TensorWriter::default();
        w.push_params("isf", self.isf.buffer());
        w.push_params("critic", self.critic.buffer());
        let nm = self.opt_mapper.first_moment().len();
        let nc = self.opt_critic.first_moment().len();
        w.push("adam_mapper/m", vec![nm], self.opt_mapper.first_moment());
        w.push("adam_mapper/v", vec![nm], self.opt_mapper.second_moment());
        w.push("adam_critic/m", vec![nc], self.opt_critic.first_moment());
        w.push("adam_critic/v", vec![nc], self.opt_critic.second_moment());
        let (header, bytes) = w.finish();
        let manifest = CheckpointManifest {
            format: CHECKPOINT_FORMAT.into(),
            config_schema: crate::config::CONFIG_SCHEMA_VERSION.into(),
            iteration: self.iteration,
            config: self.config.clone(),
            config_digest: self.config_digest.clone(),
            generator_name: self.generator_name.clone(),
            generator_digest: Some(self.generator_digest.clone()).filter(|d| !d.is_empty()),
            isf_dims: self.isf.dims().clone(),
            critic_dims: self.critic.dims().clone(),
            adam_mapper: AdamState {
                config: *self.opt_mapper.config(),
                step: self.opt_mapper.steps(),
            },
            adam_critic: AdamState {
                config: *self.opt_critic.config(),
                step: self.opt_critic.steps(),
            },
            rng: self.rng.clone(),
            params_file: PARAMS_FILE.into(),
            params: header,
        };
        let json = serde_json::to_vec_pretty(&manifest)?;
        write_dir_atomically(dir, |tmp| {
            fs::write(tmp.join(PARAMS_FILE), &bytes)?;
            fs::write(tmp.join(MANIFEST_FILE), &json)?;
            Ok(())
        })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let bad = |m: String| Error::InvalidCheckpoint(m);
        let raw = fs::read(dir.join(MANIFEST_FILE))?;
        let m: CheckpointManifest =
            serde_json::from_slice(&raw).map_err(|e| bad(format!("manifest: {e}")))?;
        if m.format != CHECKPOINT_FORMAT {
            return Err(bad(format!("unsupported checkpoint format {}", m.format)));
        }
        if m.config.digest() != m.config_digest {
            return Err(bad("config digest does not match the stored config".into()));
        }
        let bytes = fs::read(dir.join(&m.params_file))?;
        let reader = TensorReader::new(&m.params, &bytes)?;
        let isf0 = IsfParams::<f32>::zeros(m.isf_dims.clone()).map_err(|e| bad(e.to_string()))?;
        let isf = IsfParams::from_buffer(
            m.isf_dims.clone(),
            reader.params("isf", isf0.buffer().layout().clone())?,
        )?;
        let critic0 = CriticParams::<f32>::zeros(m.critic_dims.clone()).map_err(|e| bad(e.to_string()))?;
        let critic = CriticParams::from_buffer(
            m.critic_dims.clone(),
            reader.params("critic", critic0.buffer().layout().clone())?,
        )?;
        let adam = |prefix: &str, st: &AdamState, len: usize| -> Result<Adam<f32>> {
            let mo = reader.get(&format!("{prefix}/m"))?;
            let v = reader.get(&format!("{prefix}/v"))?;
            if mo.len() != len || v.len() != len {
                return Err(bad(format!("{prefix} moments do not match parameter count")));
            }
            Adam::from_state(st.config, st.step, mo, v)
        };
        Ok(Self {
            iteration: m.iteration,
            opt_mapper: adam("adam_mapper", &m.adam_mapper, isf.num_parameters())?,
            opt_critic: adam("adam_critic", &m.adam_critic, critic.buffer().as_slice().len())?,
            config: m.config,
            config_digest: m.config_digest,
            generator_name: m.generator_name,
            generator_digest: m.generator_digest.unwrap_or_default(),
            isf,
            critic,
            rng: m.rng,
        })
    }
}

/// True iff both checkpoints record the same generator parameter digest.
pub fn verify_frozen(a: &Checkpoint, b: &Checkpoint) -> Result<bool> {
    if a.generator_digest.is_empty() || b.generator_digest.is_empty() {
        return Err(Error::InvalidCheckpoint("checkpoint lacks a generator digest".into()));
    }
    Ok(a.generator_digest == b.generator_digest)
}

/// Requested attributes: each bit of the binarized source labels flips with
/// probability 1/2, redrawing until at least one bit changes.
pub fn sample_target(d0: &AttributeVector, rng: &mut IsfRng) -> AttributeVector {
    let bits = d0.binarized();
    loop {
        let flips: Vec<bool> = bits.iter().map(|_| rng.random_bool(0.5)).collect();
        if flips.iter().any(|&f| f) {
            let target: Vec<bool> = bits.iter().zip(&flips).map(|(&b, &f)| b ^ f).collect();
            return AttributeVector::from_bits(&target);
        }
    }
}

pub struct Trainer<'a> {
    config: TrainConfig,
    dataset: &'a LatentDataset,
    generator: &'a dyn Generator<f32>,
    perceptual: &'a dyn Embedder<f32>,
    view: CriticInput,
    generator_digest: String,
    iteration: u64,
    isf: IsfParams<f32>,
    critic: CriticParams<f32>,
    opt_mapper: Adam<f32>,
    opt_critic: Adam<f32>,
    rng: IsfRng,
}

impl<'a> Trainer<'a> {
    pub fn new(
        config: TrainConfig,
        dataset: &'a LatentDataset,
        generator: &'a dyn Generator<f32>,
        perceptual: &'a dyn Embedder<f32>,
    ) -> Result<Self> {
        config.validate()?;
        check_compat(dataset, generator)?;
        let mut rng = rng_from_seed(config.seed);
        let dims = config
            .arch
            .isf_dims(generator.latent_shape(), dataset.num_attributes());
        let isf = IsfParams::init(dims, &mut rng)?;
        let (res, view) = critic_view(&config, generator)?;
        let cdims = CriticDims::new(res, dataset.num_attributes())
            .with_base_channels(config.arch.critic_base_channels);
        let critic = CriticParams::init(cdims, &mut rng)?;
        let opt_mapper = Adam::new(config.adam(config.learning_rate_mapper), isf.num_parameters())?;
        let opt_critic = Adam::new(
            config.adam(config.learning_rate_critic),
            critic.buffer().as_slice().len(),
        )?;
        Ok(Self {
            generator_digest: generator.parameter_digest(),
            config,
            dataset,
            generator,
            perceptual,
            view,
            iteration: 0,
            isf,
            critic,
            opt_mapper,
            opt_critic,
            rng,
        })
    }

    /// Continues a run from a checkpoint made with the same config and generator.
    pub fn resume(
        checkpoint: Checkpoint,
        dataset: &'a LatentDataset,
        generator: &'a dyn Generator<f32>,
        perceptual: &'a dyn Embedder<f32>,
    ) -> Result<Self> {
        let config = checkpoint.config;
        config.validate()?;
        if config.digest() != checkpoint.config_digest {
            return Err(Error::InvalidCheckpoint("config digest mismatch".into()));
        }
        let live = generator.parameter_digest();
        if checkpoint.generator_digest != live {
            return Err(Error::InvalidCheckpoint(
                "checkpoint was made with a different generator".into(),
            ));
        }
        check_compat(dataset, generator)?;
        let (_, view) = critic_view(&config, generator)?;
        Ok(Self {
            config,
            dataset,
            generator,
            perceptual,
            view,
            generator_digest: live,
            iteration: checkpoint.iteration,
            isf: checkpoint.isf,
            critic: checkpoint.critic,
            opt_mapper: checkpoint.opt_mapper,
            opt_critic: checkpoint.opt_critic,
            rng: checkpoint.rng,
        })
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn isf(&self) -> &IsfParams<f32> {
        &self.isf
    }

    pub fn critic(&self) -> &CriticParams<f32> {
        &self.critic
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            iteration: self.iteration,
            config: self.config.clone(),
            config_digest: self.config.digest(),
            generator_name: self.generator.name().to_string(),
            generator_digest: self.generator_digest.clone(),
            isf: self.isf.clone(),
            critic: self.critic.clone(),
            opt_mapper: self.opt_mapper.clone(),
            opt_critic: self.opt_critic.clone(),
            rng: self.rng.clone(),
        }
    }

    fn sample_batch(&mut self) -> Result<Vec<StepSample<f32>>> {
        let train = self.dataset.train_indices();
        let noise = self.config.arch.noise_dim;
        (0..self.config.batch_size)
            .map(|_| {
                let i = train[self.rng.random_range(0..train.len())];
                let d0 = self.dataset.label(i);
                let d = sample_target(&d0, &mut self.rng);
                Ok(StepSample {
                    w: self.dataset.code(i),
                    d0,
                    d,
                    z: sample_noise(noise, &mut self.rng)?,
                    z_div: sample_noise(noise, &mut self.rng)?,
                    z_cyc: sample_noise(noise, &mut self.rng)?,
                })
            })
            .collect()
    }

    /// One critic update followed by one mapper update.
    pub fn step(&mut self) -> Result<LossReport> {
        let it = self.iteration;
        let tag = |e: Error| match e {
            Error::NonFinite { term, .. } => Error::NonFinite { term, iteration: it },
            Error::Numeric(_) => Error::NonFinite {
                term: "logits",
                iteration: it,
            },
            other => other,
        };
        let batch = self.sample_batch()?;
        let g = self.generator;

        let mut real = Vec::with_capacity(batch.len());
        let mut fake = Vec::with_capacity(batch.len());
        for s in &batch {
            real.push(self.view.apply(&g.generate(&s.w)?));
            let w_star = self.isf.forward(&s.w, &s.z, &s.d)?;
            fake.push(self.view.apply(&g.generate(&w_star)?));
        }
        let d0: Vec<AttributeVector> = batch.iter().map(|s| s.d0.clone()).collect();
        let lambda_cls = self.config.weights.lambda_cls;
        let crit = critic_objective(&self.critic, &real, &fake, &d0, lambda_cls, self.config.r1_gamma)
            .map_err(tag)?;
        self.opt_critic
            .update(self.critic.buffer_mut().as_mut_slice(), crit.grads.buffer().as_slice())?;

        let horizon = self
            .config
            .ds_decay_iterations
            .unwrap_or(self.config.total_iterations)
            .max(1);
        let dsw = ds_weight(it, horizon, self.config.weights.lambda_ds)?;
        let map = mapper_objective(
            &self.isf,
            &self.critic,
            self.view,
            g,
            self.perceptual,
            &batch,
            &self.config.weights,
            dsw,
        )
        .map_err(tag)?;
        self.opt_mapper
            .update(self.isf.buffer_mut().as_mut_slice(), map.grads.buffer().as_slice())?;
        self.iteration += 1;

        let report = LossReport {
            iter: it,
            rf_critic: crit.adversarial() as f64,
            rf_mapper: map.terms.rf as f64,
            cls_critic: crit.cls as f64,
            cls_mapper: map.terms.cls as f64,
            content: map.terms.content as f64,
            neighbour: map.terms.neighbour as f64,
            cycle: map.terms.cycle as f64,
            diversity: map.terms.diversity as f64,
            total_mapper: map.total as f64,
            total_critic: crit.total as f64,
            ds_weight: dsw,
        };
        if let Some(term) = report.first_non_finite() {
            return Err(Error::NonFinite { term, iteration: it });
        }
        Ok(report)
    }

    /// Runs to `total_iterations`. With an output directory, logs go to
    /// `train_log.jsonl` (appended, so resumed runs extend the same log) and
    /// checkpoints to `checkpoints/iter_NNNNNNNN` plus `checkpoints/final`.
    pub fn run(&mut self, output: Option<&Path>) -> Result<RunSummary> {
        let mut log = match output {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                let f = fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(dir.join(LOG_FILE))?;
                Some(BufWriter::new(f))
            }
            None => None,
        };
        let mut reports = Vec::new();
        while self.iteration < self.config.total_iterations {
            let report = self.step()?;
            let last = self.iteration == self.config.total_iterations;
            if report.iter % self.config.log_every == 0 || last {
                if let Some(w) = log.as_mut() {
                    writeln!(w, "{}", report.to_json_line())?;
                }
            }
            reports.push(report);
            let every = self.config.checkpoint_every;
            if let Some(dir) = output {
                if every > 0 && self.iteration % every == 0 && !last {
                    self.save_checkpoint(&checkpoint_dir(dir, self.iteration))?;
                }
            }
        }
        if let Some(mut w) = log {
            w.flush()?;
        }
        self.verify_generator()?;
        let final_dir = match output {
            Some(dir) => {
                let p = dir.join("checkpoints").join("final");
                self.save_checkpoint(&p)?;
                Some(p)
            }
            None => None,
        };
        Ok(RunSummary {
            checkpoint: self.checkpoint(),
            reports,
            final_dir,
        })
    }

    fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        self.verify_generator()?;
        self.checkpoint().save(dir)
    }

    /// Errors if the live generator digest drifted since training started.
    pub fn verify_generator(&self) -> Result<()> {
        if self.generator.parameter_digest() != self.generator_digest {
            return Err(Error::Numeric("generator parameters changed during training".into()));
        }
        Ok(())
    }
}

pub fn checkpoint_dir(output: &Path, iteration: u64) -> PathBuf {
    output.join("checkpoints").join(format!("iter_{iteration:08}"))
}

#[derive(Debug)]
pub struct RunSummary {
    pub checkpoint: Checkpoint,
    pub reports: Vec<LossReport>,
    pub final_dir: Option<PathBuf>,
}

/// Trains from scratch and returns the final checkpoint.
pub fn run(
    config: TrainConfig,
    dataset: &LatentDataset,
    generator: &dyn Generator<f32>,
    perceptual: &dyn Embedder<f32>,
    output: Option<&Path>,
) -> Result<RunSummary> {
    Trainer::new(config, dataset, generator, perceptual)?.run(output)
}

fn check_compat(dataset: &LatentDataset, generator: &dyn Generator<f32>) -> Result<()> {
    if dataset.train_indices().is_empty() {
        return Err(crate::error::invalid("dataset has no training rows"));
    }
    if dataset.latent_shape() != generator.latent_shape() {
        return Err(crate::error::invalid(format!(
            "dataset codes are {:?}, generator expects {:?}",
            dataset.latent_shape(),
            generator.latent_shape()
        )));
    }
    Ok(())
}

fn critic_view(config: &TrainConfig, generator: &dyn Generator<f32>) -> Result<(usize, CriticInput)> {
    let (h, w) = generator.resolution();
    if h != w {
        return Err(crate::error::invalid("the critic expects square images"));
    }
    let res = config.arch.critic_resolution.unwrap_or(h);
    Ok((res, CriticInput::new(h, res)?))
}
