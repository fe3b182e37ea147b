//! Experiment configuration: one JSON document naming the components, the
//! training run and the evaluation protocol. Documents are checked against
//! the bundled JSON schema before deserialization.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::handles::{AttributeClassifier, Embedder, Generator};
use crate::metrics::{PATH_STEPS, PIR_EPS_STAB, PPL_EPSILON};
use crate::toy::{PooledPixelEmbedder, ToyConfig, ToyStack, TOY_RESOLUTION};
use crate::trainer::TrainConfig;

pub const CONFIG_SCHEMA_VERSION: &str = "isf-experiment/1";
pub const SCHEMA_JSON: &str = include_str!("../schema/experiment.schema.json");
pub const OUTPUT_ROOT_ENV: &str = "ISF_OUTPUT_ROOT";

/// A component reference: `kind` selects the implementation, every other key
/// is passed to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub kind: String,
    #[serde(flatten)]
    pub params: Map<String, Value>,
}

impl ComponentSpec {
    pub fn kind(kind: &str) -> Self {
        Self {
            kind: kind.into(),
            params: Map::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.params.insert(key.into(), value.into());
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedderSpecs {
    pub perceptual: ComponentSpec,
    pub identity: ComponentSpec,
    pub frechet: ComponentSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub n_total: usize,
    pub split_fraction: f64,
    /// Existing dataset directory; `None` means `<output>/dataset`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

/// Sample counts, seeds and constants of the evaluation protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalProtocol {
    pub seed: u64,
    /// Held-out codes edited for accuracy, FRS, Frechet and PPL.
    pub n_eval: usize,
    pub n_inputs: usize,
    pub n_samples: usize,
    pub n_paths: usize,
    pub path_steps: usize,
    pub ppl_epsilon: f64,
    pub pir_eps_stab: f64,
    pub n_frechet: usize,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            seed: 0,
            n_eval: 500,
            n_inputs: 100,
            n_samples: 10,
            n_paths: 50,
            path_steps: PATH_STEPS,
            ppl_epsilon: PPL_EPSILON,
            pir_eps_stab: PIR_EPS_STAB,
            n_frechet: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: String,
    pub name: String,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub generator: ComponentSpec,
    pub classifier: ComponentSpec,
    pub embedders: EmbedderSpecs,
    pub dataset: DatasetSpec,
    pub train: TrainConfig,
    pub protocol: EvalProtocol,
}

fn schema_validator() -> &'static jsonschema::Validator {
    static V: OnceLock<jsonschema::Validator> = OnceLock::new();
    V.get_or_init(|| {
        let schema: Value = serde_json::from_str(SCHEMA_JSON).expect("bundled schema is JSON");
        jsonschema::validator_for(&schema).expect("bundled schema compiles")
    })
}

/// Schema violations as `path: message` strings; empty when valid.
pub fn schema_errors(doc: &Value) -> Vec<String> {
    schema_validator()
        .iter_errors(doc)
        .map(|e| format!("{}: {}", e.instance_path(), e))
        .collect()
}

impl ExperimentConfig {
    /// The prescribed toy experiment: ToyStack seed 7, 3000 iterations at
    /// batch 16, 1000 labeled codes.
    pub fn toy(name: &str, output_dir: impl Into<PathBuf>) -> Self {
        let toy = ComponentSpec::kind("toy").with("seed", 7);
        Self {
            schema_version: CONFIG_SCHEMA_VERSION.into(),
            name: name.into(),
            seed: 0,
            output_dir: output_dir.into(),
            generator: toy,
            classifier: ComponentSpec::kind("toy"),
            embedders: EmbedderSpecs {
                perceptual: ComponentSpec::kind("toy-edges"),
                identity: ComponentSpec::kind("toy-identity"),
                frechet: ComponentSpec::kind("toy-pooled").with("factor", 8),
            },
            dataset: DatasetSpec {
                n_total: 1000,
                split_fraction: 0.5,
                path: None,
            },
            train: TrainConfig::toy(),
            protocol: EvalProtocol::default(),
        }
    }

    pub fn from_value(doc: Value) -> Result<Self> {
        let errors = schema_errors(&doc);
        if !errors.is_empty() {
            return Err(Error::Config(errors.join("; ")));
        }
        let cfg: Self = serde_json::from_value(doc).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let doc: Value = serde_json::from_str(s).map_err(|e| Error::Config(format!("not JSON: {e}")))?;
        Self::from_value(doc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    /// Checks that go beyond the schema.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not {CONFIG_SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        self.train.validate()?;
        let p = &self.protocol;
        if p.n_inputs > p.n_eval || p.n_paths > p.n_eval {
            return Err(Error::Config("n_inputs and n_paths may not exceed n_eval".into()));
        }
        Components::build(self).map(|_| ())
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// `output_dir`, unless `ISF_OUTPUT_ROOT` is set.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if !root.is_empty() => PathBuf::from(root),
            _ => self.output_dir.clone(),
        }
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.dataset
            .path
            .clone()
            .unwrap_or_else(|| self.resolved_output_dir().join("dataset"))
    }

    pub fn train_dir(&self) -> PathBuf {
        self.resolved_output_dir().join("train")
    }
}

/// The concrete networks named by a config.
pub struct Components {
    pub generator: Box<dyn Generator<f32>>,
    pub classifier: Box<dyn AttributeClassifier<f32>>,
    pub perceptual: Box<dyn Embedder<f32>>,
    pub identity: Box<dyn Embedder<f32>>,
    pub frechet: Box<dyn Embedder<f32>>,
}

fn bad_kind(slot: &str, kind: &str) -> Error {
    Error::Config(format!("unknown {slot} kind `{kind}`"))
}

fn toy_params(slot: &str, params: &Map<String, Value>, fallback: Option<&ToyConfig>) -> Result<ToyConfig> {
    match fallback {
        Some(f) if params.is_empty() => Ok(f.clone()),
        _ => serde_json::from_value(Value::Object(params.clone()))
            .map_err(|e| Error::Config(format!("{slot}: {e}"))),
    }
}

fn pooled(slot: &str, params: &Map<String, Value>, default_factor: usize) -> Result<PooledPixelEmbedder> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct P {
        factor: Option<usize>,
    }
    let p: P = serde_json::from_value(Value::Object(params.clone()))
        .map_err(|e| Error::Config(format!("{slot}: {e}")))?;
    PooledPixelEmbedder::new(TOY_RESOLUTION, TOY_RESOLUTION, p.factor.unwrap_or(default_factor))
        .map_err(|e| Error::Config(format!("{slot}: {e}")))
}

fn no_params(slot: &str, params: &Map<String, Value>) -> Result<()> {
    if params.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(format!("{slot} takes no parameters")))
    }
}

impl Components {
    /// Toy components without explicit parameters inherit the generator's.
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        let g = &cfg.generator;
        let gen_toy = match g.kind.as_str() {
            "toy" => toy_params("generator", &g.params, None)?,
            other => return Err(bad_kind("generator", other)),
        };
        let stack = |slot: &str, spec: &ComponentSpec| -> Result<ToyStack> {
            let c = toy_params(slot, &spec.params, Some(&gen_toy))?;
            ToyStack::new(c).map_err(|e| Error::Config(format!("{slot}: {e}")))
        };
        let generator = stack("generator", g)?;
        let classifier = match cfg.classifier.kind.as_str() {
            "toy" => stack("classifier", &cfg.classifier)?,
            other => return Err(bad_kind("classifier", other)),
        };
        let embedder = |slot: &str, spec: &ComponentSpec, pool: usize| -> Result<Box<dyn Embedder<f32>>> {
            Ok(match spec.kind.as_str() {
                "toy-edges" => {
                    no_params(slot, &spec.params)?;
                    Box::new(generator.perceptual_embedder())
                }
                "toy-pooled" => Box::new(pooled(slot, &spec.params, pool)?),
                "toy-identity" => Box::new(stack(slot, spec)?.identity_embedder()),
                other => return Err(bad_kind(slot, other)),
            })
        };
        let e = &cfg.embedders;
        Ok(Self {
            perceptual: embedder("perceptual embedder", &e.perceptual, 4)?,
            identity: embedder("identity embedder", &e.identity, 4)?,
            frechet: embedder("frechet embedder", &e.frechet, 8)?,
            classifier: Box::new(classifier),
            generator: Box::new(generator),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_config_round_trips_through_the_schema() {
        let cfg = ExperimentConfig::toy("t", "/tmp/x");
        assert!(schema_errors(&cfg.to_value()).is_empty(), "{:?}", schema_errors(&cfg.to_value()));
        let back = ExperimentConfig::from_value(cfg.to_value()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn schema_rejects_negative_learning_rate_and_unknown_keys() {
        let mut v = ExperimentConfig::toy("t", "/tmp/x").to_value();
        v["train"]["learning_rate_M"] = (-1.0).into();
        assert_eq!(ExperimentConfig::from_value(v).unwrap_err().kind(), "invalid-config");
        let mut v = ExperimentConfig::toy("t", "/tmp/x").to_value();
        v["protocol"]["bogus"] = 1.into();
        assert!(ExperimentConfig::from_value(v).is_err());
    }

    #[test]
    fn unknown_component_kind_is_a_config_error() {
        let mut cfg = ExperimentConfig::toy("t", "/tmp/x");
        cfg.embedders.identity = ComponentSpec::kind("arcface");
        assert_eq!(cfg.validate().unwrap_err().kind(), "invalid-config");
    }

    #[test]
    fn classifier_inherits_generator_parameters() {
        let cfg = ExperimentConfig::toy("t", "/tmp/x");
        let c = Components::build(&cfg).unwrap();
        assert_eq!(c.generator.parameter_digest(), Generator::<f32>::parameter_digest(&ToyStack::with_seed(7).unwrap()));
        assert_eq!(c.classifier.num_attributes(), 4);
        assert_eq!(c.frechet.dim(), 48);
    }
}
