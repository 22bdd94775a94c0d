//! Model families registered by name and selected at runtime.
//!
//! Each family implements [`ModelStrategy`]: it validates a JSON config,
//! trains (or resumes) a model against a dataset spec, and reloads fitted
//! models from checkpoints. Trained models are exposed through the
//! family-independent [`FittedModel`] interface used by the harness.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::record::TrialRecord;
use crate::rng::StreamRng;
use crate::synthdata::MixtureSpec;

/// Inputs to one training run.
#[derive(Debug, Clone)]
pub struct TrainRequest {
    pub config: Value,
    pub dataset: MixtureSpec,
    pub seed: u64,
    /// Overrides the config's step budget when set.
    pub budget: Option<u64>,
    /// Overrides the config's eval sample count when set.
    pub eval_samples: Option<usize>,
}

impl TrainRequest {
    pub fn new(config: Value, dataset: MixtureSpec, seed: u64) -> Self {
        Self {
            config,
            dataset,
            seed,
            budget: None,
            eval_samples: None,
        }
    }
}

/// Result of a training run. Divergence is reported through
/// `record.status`, not as an error; `best` is absent only when no eval
/// point produced a finite score.
pub struct TrainOutcome {
    pub record: TrialRecord,
    pub best: Option<Box<dyn FittedModel>>,
    /// Opaque resumable training state.
    pub state: Value,
}

/// A trained density model.
pub trait FittedModel: Send {
    fn sample(&self, n: usize, rng: &mut StreamRng) -> Result<Vec<f64>>;

    /// Density on `grid`: exact for likelihood models, a KDE of model
    /// samples for implicit ones.
    fn density_curve(&self, grid: &[f64], seed: u64) -> Result<Vec<f64>>;

    /// Serialized model parameters, loadable by the owning strategy.
    fn to_value(&self) -> Result<Value>;
}

pub trait ModelStrategy: Send + Sync {
    fn name(&self) -> &'static str;

    /// Config used when a plan names the family without one.
    fn default_config(&self, dataset: &MixtureSpec) -> Value;

    fn validate(&self, config: &Value) -> Result<()>;

    fn train(&self, request: &TrainRequest) -> Result<TrainOutcome>;

    /// Continues a run from `state` (as returned in a previous outcome) up
    /// to the request's budget.
    fn resume(&self, request: &TrainRequest, state: Value) -> Result<TrainOutcome>;

    fn load(&self, model: &Value) -> Result<Box<dyn FittedModel>>;
}

pub const CHECKPOINT_DOC_SCHEMA: u32 = 1;

/// On-disk checkpoint: the best model plus the final resumable state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointDoc {
    pub schema_version: u32,
    pub model: String,
    pub best: Value,
    pub state: Value,
}

impl CheckpointDoc {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Name → strategy table.
#[derive(Default)]
pub struct Registry {
    strategies: BTreeMap<&'static str, Box<dyn ModelStrategy>>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry with the built-in families `wgan` and `gf`.
    pub fn with_builtins() -> Self {
        let mut r = Self::new();
        r.register(Box::new(crate::wgan::WganStrategy));
        r.register(Box::new(crate::gaussflow::GaussFlowStrategy));
        r
    }

    pub fn register(&mut self, strategy: Box<dyn ModelStrategy>) {
        self.strategies.insert(strategy.name(), strategy);
    }

    pub fn get(&self, name: &str) -> Result<&dyn ModelStrategy> {
        self.strategies
            .get(name)
            .map(|s| s.as_ref())
            .ok_or_else(|| Error::UnknownModel(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.strategies.keys().copied()
    }
}
