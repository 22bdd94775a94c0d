//! Persistent per-trial results.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::synthdata::MixtureSpec;

pub const RECORD_SCHEMA: u32 = 1;

/// Metrics recorded at one evaluation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    /// Generator (or flow) steps completed.
    pub step: u64,
    /// Direct W1 between model samples and fresh data.
    pub true_w1: f64,
    /// Critic-based W1 estimate on the same sample sets (WGAN only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub critic_w1: Option<f64>,
    /// Training loss of the most recent update (negative mean
    /// log-likelihood for flows, generator loss for WGANs).
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    Failed {
        reason: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        step: Option<u64>,
    },
}

impl TrialStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, TrialStatus::Ok)
    }
}

/// Everything needed to audit or reproduce one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub schema_version: u32,
    pub model: String,
    pub config: Value,
    pub seed: u64,
    pub dataset: MixtureSpec,
    /// Steps actually trained.
    pub steps: u64,
    pub history: Vec<EvalPoint>,
    pub best_w1: Option<f64>,
    pub best_step: Option<u64>,
    pub final_w1: Option<f64>,
    pub wall_clock_secs: f64,
    pub status: TrialStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density_curve: Option<PathBuf>,
}

impl TrialRecord {
    pub fn new(model: &str, config: Value, seed: u64, dataset: MixtureSpec) -> Self {
        Self {
            schema_version: RECORD_SCHEMA,
            model: model.to_string(),
            config,
            seed,
            dataset,
            steps: 0,
            history: Vec::new(),
            best_w1: None,
            best_step: None,
            final_w1: None,
            wall_clock_secs: 0.0,
            status: TrialStatus::Ok,
            checkpoint: None,
            density_curve: None,
        }
    }

    /// Appends an eval point and refreshes the best/final summaries. Only
    /// finite W1 values can become the best.
    pub fn push_eval(&mut self, point: EvalPoint) {
        if point.true_w1.is_finite() {
            if self.best_w1.is_none_or(|b| point.true_w1 < b) {
                self.best_w1 = Some(point.true_w1);
                self.best_step = Some(point.step);
            }
            self.final_w1 = Some(point.true_w1);
        }
        self.history.push(point);
    }

    pub fn fail(&mut self, reason: impl Into<String>, step: Option<u64>) {
        self.status = TrialStatus::Failed {
            reason: reason.into(),
            step,
        };
    }

    /// Copy with timing fields zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_clock_secs: 0.0,
            ..self.clone()
        }
    }

    /// Checkpoint location; relative paths are taken relative to the
    /// directory holding the record file.
    pub fn checkpoint_file(&self, record_file: &Path) -> Option<PathBuf> {
        self.checkpoint.as_ref().map(|p| resolve(record_file, p))
    }

    /// Density-curve location, resolved like [`Self::checkpoint_file`].
    pub fn density_curve_file(&self, record_file: &Path) -> Option<PathBuf> {
        self.density_curve.as_ref().map(|p| resolve(record_file, p))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn resolve(record_file: &Path, p: &Path) -> PathBuf {
    match record_file.parent() {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p.to_path_buf(),
    }
}
