//! Random search over WGAN configurations with asynchronous successive
//! halving (ASHA).
//!
//! One scheduler owns the journal and the score boards; worker threads
//! claim jobs (promotions first, then fresh trials), run the objective
//! outside the lock and report back. Every state change is appended to
//! `journal.ndjson` before it takes effect, so an interrupted search can be
//! resumed with [`resume`]. Single-worker searches are byte-reproducible;
//! with several workers only the set of sampled trials is reproducible,
//! since promotion timing depends on completion order.

pub mod asha;
pub mod journal;
pub mod objective;
pub mod space;

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use asha::{AshaSchedule, Claim, Scheduler};
pub use journal::{Event, Header, JOURNAL_FILE, JOURNAL_SCHEMA};
pub use objective::{Objective, TrialJob, TrialResult, WganObjective};
pub use space::{LipschitzKind, LogUniform, SearchSpace};

use crate::error::{Error, Result};
use crate::registry::CheckpointDoc;
use crate::rng::{self, Stream, StreamRng};
use crate::synthdata::MixtureSpec;
use crate::wgan::WganConfig;
use journal::JournalWriter;

/// Default number of sampled trials.
pub const DEFAULT_TRIALS: usize = 200;

/// Inputs of a fresh search.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSettings {
    pub seed: u64,
    pub trial_budget: usize,
    pub schedule: AshaSchedule,
    pub space: SearchSpace,
    pub dataset: MixtureSpec,
}

impl SearchSettings {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.space.validate()?;
        self.dataset.validate()?;
        if self.trial_budget == 0 {
            return Err(Error::InvalidConfig("trial budget must be >= 1".into()));
        }
        Ok(())
    }

    fn header(&self) -> Header {
        Header {
            schema_version: JOURNAL_SCHEMA,
            seed: self.seed,
            trial_budget: self.trial_budget,
            schedule: self.schedule,
            space: self.space.clone(),
            dataset: self.dataset.clone(),
        }
    }
}

/// Seed of trial `trial` within a search seeded with `seed`.
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    rng::derive_seed(seed, Stream::Search, trial as u64 + 1)
}

/// Per-trial outcome, as reconstructed from the journal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial: usize,
    pub seed: u64,
    pub config: WganConfig,
    /// Highest rung with a recorded result.
    pub rung_reached: Option<usize>,
    /// Budget (generator steps) of that rung.
    pub budget: Option<u64>,
    /// Score at the highest rung reached; `None` if failed there.
    pub score: Option<f64>,
    /// Score per rung; `None` where not run or failed.
    pub scores: Vec<Option<f64>>,
    pub failure: Option<String>,
    /// Record written at the highest rung reached, if any.
    pub record: Option<PathBuf>,
}

/// Directory holding trial `trial`'s records and checkpoint.
pub fn trial_dir(dir: &Path, trial: usize) -> PathBuf {
    dir.join("trials").join(format!("{trial:04}"))
}

fn record_path(dir: &Path, trial: usize, rung: usize) -> PathBuf {
    trial_dir(dir, trial).join(format!("rung-{rung}.json"))
}

const CHECKPOINT_FILE: &str = "checkpoint.json";

fn checkpoint_path(dir: &Path, trial: usize) -> PathBuf {
    trial_dir(dir, trial).join(CHECKPOINT_FILE)
}

/// A claimed job plus whether its `started` event still has to be written.
#[derive(Debug, Clone, Copy)]
struct Pending {
    trial: usize,
    rung: usize,
    write_started: bool,
}

struct Shared {
    scheduler: Scheduler,
    configs: Vec<WganConfig>,
    sampler: StreamRng,
    journal: JournalWriter,
    queue: VecDeque<Pending>,
    running: usize,
    fatal: Option<Error>,
}

struct Runner<'a> {
    dir: PathBuf,
    header: Header,
    objective: &'a dyn Objective,
}

/// Replayed journal state.
struct Replay {
    scheduler: Scheduler,
    configs: Vec<WganConfig>,
    sampler: StreamRng,
    /// Claimed jobs without a result, in claim order.
    pending: Vec<Pending>,
}

fn corrupt(line: usize, reason: impl Into<String>) -> Error {
    Error::CorruptJournal {
        line,
        reason: reason.into(),
    }
}

fn replay(header: &Header, events: &[Event]) -> Result<Replay> {
    let mut scheduler = Scheduler::new(header.schedule, header.trial_budget)?;
    let mut sampler = rng::stream(header.seed, Stream::Search, 0);
    let mut configs = Vec::new();
    let mut pending: Vec<Pending> = Vec::new();
    let start = scheduler.start_rung();
    for (i, event) in events.iter().enumerate() {
        let line = i + 2;
        match event {
            Event::Header(_) => return Err(corrupt(line, "duplicate header")),
            Event::Sampled { trial, config } => {
                scheduler.mark_sampled(*trial).map_err(|e| corrupt(line, e.to_string()))?;
                let expected = header.space.sample(&mut sampler, header.schedule.max_budget);
                if &expected != config {
                    return Err(corrupt(line, "sampled config does not match the search seed"));
                }
                configs.push(expected);
                pending.push(Pending {
                    trial: *trial,
                    rung: start,
                    write_started: true,
                });
            }
            Event::Promoted {
                trial,
                from_rung,
                to_rung,
            } => {
                if *to_rung != from_rung + 1 {
                    return Err(corrupt(line, "promotion must advance exactly one rung"));
                }
                scheduler
                    .mark_promoted(*trial, *from_rung)
                    .map_err(|e| corrupt(line, e.to_string()))?;
                pending.push(Pending {
                    trial: *trial,
                    rung: *to_rung,
                    write_started: true,
                });
            }
            Event::Started { trial, rung, budget } => {
                let p = pending
                    .iter_mut()
                    .find(|p| p.trial == *trial && p.rung == *rung && p.write_started)
                    .ok_or_else(|| corrupt(line, "start of an unclaimed job"))?;
                if scheduler.rungs.get(*rung) != Some(budget) {
                    return Err(corrupt(line, "budget does not match the rung"));
                }
                p.write_started = false;
            }
            Event::Scored { trial, rung, score, .. } => {
                take_pending(&mut pending, *trial, *rung).ok_or_else(|| corrupt(line, "result for a job never started"))?;
                scheduler
                    .report(*trial, *rung, Ok(*score))
                    .map_err(|e| corrupt(line, e.to_string()))?;
            }
            Event::Failed { trial, rung, reason, .. } => {
                take_pending(&mut pending, *trial, *rung).ok_or_else(|| corrupt(line, "result for a job never started"))?;
                scheduler
                    .report(*trial, *rung, Err(reason.clone()))
                    .map_err(|e| corrupt(line, e.to_string()))?;
            }
        }
    }
    Ok(Replay {
        scheduler,
        configs,
        sampler,
        pending,
    })
}

fn take_pending(pending: &mut Vec<Pending>, trial: usize, rung: usize) -> Option<Pending> {
    let i = pending
        .iter()
        .position(|p| p.trial == trial && p.rung == rung && !p.write_started)?;
    Some(pending.remove(i))
}

impl Runner<'_> {
    fn next_job(&self, s: &mut Shared) -> Result<Option<Pending>> {
        if let Some(p) = s.queue.pop_front() {
            if p.write_started {
                self.write_started(s, p)?;
            }
            s.running += 1;
            return Ok(Some(p));
        }
        let Some(claim) = s.scheduler.claim() else {
            return Ok(None);
        };
        let p = Pending {
            trial: claim.trial(),
            rung: claim.rung(),
            write_started: true,
        };
        match claim {
            Claim::New { trial, .. } => {
                let config = self.header.space.sample(&mut s.sampler, self.header.schedule.max_budget);
                s.journal.write(&Event::Sampled {
                    trial,
                    config: config.clone(),
                })?;
                s.configs.push(config);
            }
            Claim::Promote { trial, from } => {
                s.journal.write(&Event::Promoted {
                    trial,
                    from_rung: from,
                    to_rung: from + 1,
                })?;
            }
        }
        self.write_started(s, p)?;
        s.running += 1;
        Ok(Some(p))
    }

    fn write_started(&self, s: &mut Shared, p: Pending) -> Result<()> {
        s.journal.write(&Event::Started {
            trial: p.trial,
            rung: p.rung,
            budget: s.scheduler.rungs[p.rung],
        })
    }

    /// Runs the objective and persists its artifacts. Never fails: every
    /// problem becomes the trial's failure reason.
    fn execute(&self, job: &TrialJob) -> std::result::Result<f64, String> {
        let dir = trial_dir(&self.dir, job.trial);
        std::fs::create_dir_all(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        let result = self.objective.evaluate(job).map_err(|e| e.to_string())?;
        let ckpt = checkpoint_path(&self.dir, job.trial);
        if let Some(doc) = &result.checkpoint {
            let tmp = ckpt.with_extension("json.tmp");
            doc.write(&tmp).map_err(|e| e.to_string())?;
            std::fs::rename(&tmp, &ckpt).map_err(|e| format!("{}: {e}", ckpt.display()))?;
        }
        if let Some(mut record) = result.record {
            if result.checkpoint.is_some() {
                record.checkpoint = Some(PathBuf::from(CHECKPOINT_FILE));
            }
            record.write(&record_path(&self.dir, job.trial, job.rung)).map_err(|e| e.to_string())?;
        }
        match result.score {
            Ok(s) if s.is_finite() => Ok(s),
            Ok(s) => Err(format!("non-finite score {s}")),
            Err(reason) => Err(reason),
        }
    }

    fn job_for(&self, s: &Shared, p: Pending) -> Result<TrialJob> {
        let resume = if p.rung > s.scheduler.start_rung() {
            let path = checkpoint_path(&self.dir, p.trial);
            if path.exists() {
                Some(CheckpointDoc::read(&path)?.state)
            } else {
                None
            }
        } else {
            None
        };
        Ok(TrialJob {
            trial: p.trial,
            rung: p.rung,
            budget: s.scheduler.rungs[p.rung],
            seed: trial_seed(self.header.seed, p.trial),
            config: s.configs[p.trial].clone(),
            resume,
        })
    }

    fn complete(&self, s: &mut Shared, job: &TrialJob, outcome: std::result::Result<f64, String>) -> Result<()> {
        s.running -= 1;
        match &outcome {
            Ok(score) => s.journal.write(&Event::Scored {
                trial: job.trial,
                rung: job.rung,
                budget: job.budget,
                score: *score,
            })?,
            Err(reason) => {
                log::warn!("trial {} failed at rung {}: {reason}", job.trial, job.rung);
                s.journal.write(&Event::Failed {
                    trial: job.trial,
                    rung: job.rung,
                    budget: job.budget,
                    reason: reason.clone(),
                })?
            }
        }
        s.scheduler.report(job.trial, job.rung, outcome)
    }

    fn worker(&self, shared: &Mutex<Shared>, cv: &Condvar) {
        loop {
            let job = {
                let mut s = shared.lock().expect("scheduler lock");
                let pending = loop {
                    if s.fatal.is_some() {
                        return;
                    }
                    match self.next_job(&mut s) {
                        Ok(Some(p)) => break p,
                        Ok(None) if s.running == 0 => {
                            cv.notify_all();
                            return;
                        }
                        Ok(None) => s = cv.wait(s).expect("scheduler lock"),
                        Err(e) => {
                            s.fatal = Some(e);
                            cv.notify_all();
                            return;
                        }
                    }
                };
                match self.job_for(&s, pending) {
                    Ok(job) => job,
                    Err(e) => {
                        s.fatal = Some(e);
                        cv.notify_all();
                        return;
                    }
                }
            };
            let outcome = self.execute(&job);
            let mut s = shared.lock().expect("scheduler lock");
            if let Err(e) = self.complete(&mut s, &job, outcome) {
                s.fatal = Some(e);
            }
            cv.notify_all();
        }
    }

    fn run(&self, shared: Shared, workers: usize) -> Result<()> {
        let shared = Mutex::new(shared);
        let cv = Condvar::new();
        let workers = workers.max(1);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| self.worker(&shared, &cv));
            }
        });
        let shared = shared.into_inner().expect("scheduler lock");
        match shared.fatal {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

/// Runs a search in `dir`, or continues it if `dir` already holds a
/// journal with identical settings. Returns the ranked trial summaries
/// (also written to `summary.json`).
pub fn run(dir: &Path, settings: &SearchSettings, workers: usize, objective: &dyn Objective) -> Result<Vec<TrialSummary>> {
    settings.validate()?;
    let journal_path = dir.join(JOURNAL_FILE);
    if journal_path.exists() {
        let existing = journal::read(&journal_path)?;
        if existing.header != settings.header() {
            return Err(Error::InvalidConfig(format!(
                "{} holds a search with different settings",
                dir.display()
            )));
        }
        return resume(dir, workers, objective);
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let header = settings.header();
    let mut writer = JournalWriter::create(&journal_path)?;
    writer.write(&Event::Header(header.clone()))?;
    let Replay {
        scheduler,
        configs,
        sampler,
        ..
    } = replay(&header, &[])?;
    let runner = Runner {
        dir: dir.to_path_buf(),
        header,
        objective,
    };
    runner.run(
        Shared {
            scheduler,
            configs,
            sampler,
            journal: writer,
            queue: VecDeque::new(),
            running: 0,
            fatal: None,
        },
        workers,
    )?;
    finish(dir)
}

/// Continues an interrupted search: completed jobs are not re-run, jobs
/// that were started but never reported are run again, and the config
/// sampler is restored by replaying its draws.
pub fn resume(dir: &Path, workers: usize, objective: &dyn Objective) -> Result<Vec<TrialSummary>> {
    let journal_path = dir.join(JOURNAL_FILE);
    let contents = journal::read(&journal_path)?;
    if contents.torn_tail {
        log::warn!("dropping an incomplete final journal line");
    }
    let Replay {
        scheduler,
        configs,
        sampler,
        pending,
    } = replay(&contents.header, &contents.events)?;
    let writer = JournalWriter::append(&journal_path, contents.valid_len)?;
    let runner = Runner {
        dir: dir.to_path_buf(),
        header: contents.header,
        objective,
    };
    runner.run(
        Shared {
            scheduler,
            configs,
            sampler,
            journal: writer,
            queue: pending.into_iter().collect(),
            running: 0,
            fatal: None,
        },
        workers,
    )?;
    finish(dir)
}

fn finish(dir: &Path) -> Result<Vec<TrialSummary>> {
    let ranked = summarize(dir)?;
    let path = dir.join("summary.json");
    let text = serde_json::to_string_pretty(&ranked)? + "\n";
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(ranked)
}

/// Reads the search header of `dir`.
pub fn read_header(dir: &Path) -> Result<Header> {
    Ok(journal::read(&dir.join(JOURNAL_FILE))?.header)
}

/// Ranks the trials recorded in `dir`'s journal: successful trials first,
/// by highest rung reached (descending), then score, then trial id;
/// failed trials last.
pub fn summarize(dir: &Path) -> Result<Vec<TrialSummary>> {
    let contents = journal::read(&dir.join(JOURNAL_FILE))?;
    let header = &contents.header;
    let r = replay(header, &contents.events)?;
    let mut out: Vec<TrialSummary> = r
        .scheduler
        .trials
        .iter()
        .enumerate()
        .map(|(trial, progress)| {
            let rung_reached = progress.rung_reached();
            let score = rung_reached.and_then(|k| progress.scores[k]).filter(|s| s.is_finite());
            let record = rung_reached
                .map(|k| record_path(dir, trial, k))
                .filter(|p| p.exists());
            TrialSummary {
                trial,
                seed: trial_seed(header.seed, trial),
                config: r.configs[trial].clone(),
                rung_reached,
                budget: rung_reached.map(|k| r.scheduler.rungs[k]),
                score,
                scores: progress.scores.iter().map(|s| s.filter(|v| v.is_finite())).collect(),
                failure: progress.failure.clone(),
                record,
            }
        })
        .collect();
    out.sort_by(|a, b| {
        let key = |t: &TrialSummary| (t.failure.is_some() || t.score.is_none(), std::cmp::Reverse(t.rung_reached));
        key(a)
            .cmp(&key(b))
            .then(a.score.unwrap_or(f64::INFINITY).total_cmp(&b.score.unwrap_or(f64::INFINITY)))
            .then(a.trial.cmp(&b.trial))
    });
    Ok(out)
}

/// The `k` best trials of the search in `dir`.
pub fn top(dir: &Path, k: usize) -> Result<Vec<TrialSummary>> {
    let mut ranked = summarize(dir)?;
    ranked.truncate(k);
    Ok(ranked)
}

/// Convenience: the config value of a summary, as accepted by the "wgan"
/// model strategy.
pub fn config_value(summary: &TrialSummary) -> Result<Value> {
    Ok(serde_json::to_value(&summary.config)?)
}
