//! What a search optimizes.

use serde_json::Value;

use crate::error::Result;
use crate::record::{TrialRecord, TrialStatus};
use crate::registry::{CheckpointDoc, ModelStrategy, TrainRequest, CHECKPOINT_DOC_SCHEMA};
use crate::synthdata::MixtureSpec;
use crate::wgan::{WganConfig, WganStrategy};

/// One unit of work: train `config` to `budget` generator steps.
#[derive(Debug, Clone)]
pub struct TrialJob {
    pub trial: usize,
    pub rung: usize,
    pub budget: u64,
    pub seed: u64,
    pub config: WganConfig,
    /// Training state saved at the previous rung, when promoted.
    pub resume: Option<Value>,
}

/// Outcome of one job. `score` is lower-is-better; `Err` carries the
/// failure reason.
#[derive(Debug, Clone)]
pub struct TrialResult {
    pub score: std::result::Result<f64, String>,
    pub record: Option<TrialRecord>,
    pub checkpoint: Option<CheckpointDoc>,
}

impl TrialResult {
    /// A bare score without artifacts.
    pub fn score(score: f64) -> Self {
        Self {
            score: Ok(score),
            record: None,
            checkpoint: None,
        }
    }
}

/// Scores a configuration at a budget. An `Err` is recorded as a trial
/// failure; it never stops the search.
pub trait Objective: Sync {
    fn evaluate(&self, job: &TrialJob) -> Result<TrialResult>;
}

impl<F> Objective for F
where
    F: Fn(&TrialJob) -> Result<TrialResult> + Sync,
{
    fn evaluate(&self, job: &TrialJob) -> Result<TrialResult> {
        self(job)
    }
}

/// Trains a WGAN and scores it by the true W1 distance against fresh data
/// at the final step of the budget. Promoted trials continue from their
/// saved state instead of restarting.
#[derive(Debug, Clone)]
pub struct WganObjective {
    pub dataset: MixtureSpec,
    /// Overrides each config's eval sample count when set.
    pub eval_samples: Option<usize>,
}

impl Objective for WganObjective {
    fn evaluate(&self, job: &TrialJob) -> Result<TrialResult> {
        let strategy = WganStrategy;
        let request = TrainRequest {
            config: serde_json::to_value(&job.config)?,
            dataset: self.dataset.clone(),
            seed: job.seed,
            budget: Some(job.budget),
            eval_samples: self.eval_samples,
        };
        let outcome = match &job.resume {
            Some(state) => strategy.resume(&request, state.clone())?,
            None => strategy.train(&request)?,
        };
        let score = match &outcome.record.status {
            TrialStatus::Failed { reason, .. } => Err(reason.clone()),
            TrialStatus::Ok => match outcome.record.history.last() {
                Some(p) if p.step == job.budget => Ok(p.true_w1),
                _ => Err("no evaluation at the rung budget".to_string()),
            },
        };
        let best = match &outcome.best {
            Some(model) => model.to_value()?,
            None => Value::Null,
        };
        Ok(TrialResult {
            score,
            checkpoint: Some(CheckpointDoc {
                schema_version: CHECKPOINT_DOC_SCHEMA,
                model: strategy.name().to_string(),
                best,
                state: outcome.state,
            }),
            record: Some(outcome.record),
        })
    }
}
