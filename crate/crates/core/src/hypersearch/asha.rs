//! Asynchronous successive halving: budget ladder, score boards and the
//! claim-time promotion rule. Pure bookkeeping, no I/O.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AshaSchedule {
    /// Generator steps at the lowest rung.
    pub min_budget: u64,
    /// Generator steps at the top rung.
    pub max_budget: u64,
    /// Reduction factor η.
    pub eta: u64,
}

impl Default for AshaSchedule {
    fn default() -> Self {
        Self {
            min_budget: 500,
            max_budget: 20_000,
            eta: 3,
        }
    }
}

impl AshaSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.eta < 2 {
            return Err(Error::InvalidConfig(format!("eta = {} must be >= 2", self.eta)));
        }
        if self.min_budget == 0 || self.max_budget < self.min_budget {
            return Err(Error::InvalidConfig(format!(
                "budgets must satisfy 0 < min_budget ({}) <= max_budget ({})",
                self.min_budget, self.max_budget
            )));
        }
        Ok(())
    }

    /// Budgets `min·η^i` not exceeding `max`, followed by `max` itself when
    /// the geometric ladder does not land on it exactly.
    pub fn rungs(&self) -> Vec<u64> {
        let mut out = Vec::new();
        let mut b = self.min_budget;
        while b <= self.max_budget {
            out.push(b);
            match b.checked_mul(self.eta) {
                Some(next) => b = next,
                None => break,
            }
        }
        if out.last() != Some(&self.max_budget) {
            out.push(self.max_budget);
        }
        out
    }
}

/// Work handed to a worker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Claim {
    /// Sample trial `trial` and run it at `rung`.
    New { trial: usize, rung: usize },
    /// Continue `trial` from `from` to `from + 1`.
    Promote { trial: usize, from: usize },
}

impl Claim {
    pub fn trial(&self) -> usize {
        match *self {
            Claim::New { trial, .. } | Claim::Promote { trial, .. } => trial,
        }
    }

    /// Rung the claimed job runs at.
    pub fn rung(&self) -> usize {
        match *self {
            Claim::New { rung, .. } => rung,
            Claim::Promote { from, .. } => from + 1,
        }
    }
}

/// Per-trial scores by rung. `None` = not run; `+inf` = failed.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialProgress {
    pub scores: Vec<Option<f64>>,
    pub failure: Option<String>,
}

impl TrialProgress {
    /// Highest rung with a recorded result.
    pub fn rung_reached(&self) -> Option<usize> {
        self.scores.iter().rposition(Option::is_some)
    }
}

/// Score boards and promotion state for one search.
#[derive(Debug, Clone)]
pub struct Scheduler {
    pub schedule: AshaSchedule,
    pub rungs: Vec<u64>,
    pub trial_budget: usize,
    pub trials: Vec<TrialProgress>,
    /// Completed `(trial, score)` results per rung, in completion order.
    pub boards: Vec<Vec<(usize, f64)>>,
    /// Trials promoted out of each rung.
    pub promoted: Vec<BTreeSet<usize>>,
}

impl Scheduler {
    pub fn new(schedule: AshaSchedule, trial_budget: usize) -> Result<Self> {
        schedule.validate()?;
        if trial_budget == 0 {
            return Err(Error::InvalidConfig("trial budget must be >= 1".into()));
        }
        let rungs = schedule.rungs();
        let n = rungs.len();
        Ok(Self {
            schedule,
            rungs,
            trial_budget,
            trials: Vec::new(),
            boards: vec![Vec::new(); n],
            promoted: vec![BTreeSet::new(); n],
        })
    }

    pub fn top_rung(&self) -> usize {
        self.rungs.len() - 1
    }

    /// Rung new trials start at. A single-trial search has nothing to
    /// compare against, so its only trial runs directly at the top rung.
    pub fn start_rung(&self) -> usize {
        if self.trial_budget == 1 {
            self.top_rung()
        } else {
            0
        }
    }

    /// Completed results at `rung`, best first (ties by trial id).
    pub fn ranked(&self, rung: usize) -> Vec<(usize, f64)> {
        let mut board = self.boards[rung].clone();
        board.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        board
    }

    /// The next promotable `(trial, rung)`: an unpromoted, finite result
    /// ranked within the top `⌊n/η⌋` of the `n` completed results at its
    /// rung. Higher rungs are checked first.
    pub fn promotable(&self) -> Option<(usize, usize)> {
        for rung in (0..self.top_rung()).rev() {
            let ranked = self.ranked(rung);
            let k = ranked.len() / self.schedule.eta as usize;
            for &(trial, score) in &ranked[..k] {
                if score.is_finite() && !self.promoted[rung].contains(&trial) {
                    return Some((trial, rung));
                }
            }
        }
        None
    }

    /// Claims the next job: a promotion if any is available, otherwise a
    /// new trial while the trial budget lasts.
    pub fn claim(&mut self) -> Option<Claim> {
        if let Some((trial, rung)) = self.promotable() {
            self.promoted[rung].insert(trial);
            return Some(Claim::Promote { trial, from: rung });
        }
        if self.trials.len() < self.trial_budget {
            let trial = self.trials.len();
            self.trials.push(TrialProgress {
                scores: vec![None; self.rungs.len()],
                failure: None,
            });
            return Some(Claim::New {
                trial,
                rung: self.start_rung(),
            });
        }
        None
    }

    /// Replays a promotion read back from a journal.
    pub fn mark_promoted(&mut self, trial: usize, from: usize) -> Result<()> {
        self.check(trial, from + 1)?;
        if self.trials[trial].scores[from].is_none() {
            return Err(Error::Precondition(format!(
                "trial {trial} promoted from rung {from} without a score there"
            )));
        }
        self.promoted[from].insert(trial);
        Ok(())
    }

    /// Replays a new-trial claim read back from a journal.
    pub fn mark_sampled(&mut self, trial: usize) -> Result<()> {
        if trial != self.trials.len() || trial >= self.trial_budget {
            return Err(Error::Precondition(format!("unexpected new trial id {trial}")));
        }
        self.trials.push(TrialProgress {
            scores: vec![None; self.rungs.len()],
            failure: None,
        });
        Ok(())
    }

    fn check(&self, trial: usize, rung: usize) -> Result<()> {
        if trial >= self.trials.len() || rung >= self.rungs.len() {
            return Err(Error::Precondition(format!("unknown trial {trial} or rung {rung}")));
        }
        Ok(())
    }

    /// Records a finished job. Failures score `+inf` and are never
    /// promoted.
    pub fn report(&mut self, trial: usize, rung: usize, outcome: std::result::Result<f64, String>) -> Result<()> {
        self.check(trial, rung)?;
        let score = match outcome {
            Ok(s) if s.is_finite() => s,
            Ok(s) => {
                self.trials[trial].failure = Some(format!("non-finite score {s}"));
                f64::INFINITY
            }
            Err(reason) => {
                self.trials[trial].failure = Some(reason);
                f64::INFINITY
            }
        };
        self.trials[trial].scores[rung] = Some(score);
        self.boards[rung].push((trial, score));
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rung_ladder() {
        let s = AshaSchedule::default();
        assert_eq!(s.rungs(), vec![500, 1_500, 4_500, 13_500, 20_000]);
        let exact = AshaSchedule {
            min_budget: 1,
            max_budget: 8,
            eta: 2,
        };
        assert_eq!(exact.rungs(), vec![1, 2, 4, 8]);
        let single = AshaSchedule {
            min_budget: 5,
            max_budget: 5,
            eta: 3,
        };
        assert_eq!(single.rungs(), vec![5]);
    }

    #[test]
    fn invalid_schedules() {
        let bad = AshaSchedule {
            eta: 1,
            ..AshaSchedule::default()
        };
        assert!(bad.validate().is_err());
        assert!(Scheduler::new(AshaSchedule::default(), 0).is_err());
    }

    #[test]
    fn promotion_requires_top_fraction() {
        let schedule = AshaSchedule {
            min_budget: 1,
            max_budget: 4,
            eta: 2,
        };
        let mut s = Scheduler::new(schedule, 4).unwrap();
        assert_eq!(s.claim(), Some(Claim::New { trial: 0, rung: 0 }));
        s.report(0, 0, Ok(0.5)).unwrap();
        // One result: ⌊1/2⌋ = 0, nothing promotable yet.
        assert_eq!(s.claim(), Some(Claim::New { trial: 1, rung: 0 }));
        s.report(1, 0, Ok(0.2)).unwrap();
        // Two results: the better one (trial 1) is promotable.
        assert_eq!(s.claim(), Some(Claim::Promote { trial: 1, from: 0 }));
        assert_eq!(s.claim(), Some(Claim::New { trial: 2, rung: 0 }));
    }

    #[test]
    fn failures_are_never_promoted() {
        let schedule = AshaSchedule {
            min_budget: 1,
            max_budget: 2,
            eta: 2,
        };
        let mut s = Scheduler::new(schedule, 2).unwrap();
        for t in 0..2 {
            assert_eq!(s.claim(), Some(Claim::New { trial: t, rung: 0 }));
            s.report(t, 0, Err("boom".into())).unwrap();
        }
        assert_eq!(s.claim(), None);
        assert!(s.trials.iter().all(|t| t.failure.is_some()));
    }

    #[test]
    fn single_trial_starts_at_top() {
        let mut s = Scheduler::new(AshaSchedule::default(), 1).unwrap();
        assert_eq!(s.claim(), Some(Claim::New { trial: 0, rung: 4 }));
        s.report(0, 4, Ok(0.1)).unwrap();
        assert_eq!(s.claim(), None);
    }
}
