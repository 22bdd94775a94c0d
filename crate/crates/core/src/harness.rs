//! Experiment orchestration: plans, benchmark runs, summary tables,
//! density-curve export and the critic diagnostic.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::hypersearch;
use crate::metrics::linspace;
use crate::record::{EvalPoint, TrialRecord};
use crate::registry::{CheckpointDoc, Registry, TrainRequest, CHECKPOINT_DOC_SCHEMA};
use crate::synthdata::MixtureSpec;

pub const PLAN_SCHEMA: u32 = 1;
/// Environment variable capping worker threads.
pub const WORKERS_ENV: &str = "DENSBENCH_WORKERS";
pub const DEFAULT_GRID: usize = 1000;
pub const RECORD_FILE: &str = "record.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const DENSITY_FILE: &str = "density.csv";

/// Worker count: `requested` (or the machine's parallelism), capped by
/// `DENSBENCH_WORKERS` when that is set to a positive integer.
pub fn worker_count(requested: Option<usize>) -> usize {
    let base = requested.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let cap = std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0);
    base.min(cap.unwrap_or(usize::MAX)).max(1)
}

fn default_schema() -> u32 {
    PLAN_SCHEMA
}

fn default_eval_samples() -> usize {
    100_000
}

fn default_grid() -> usize {
    DEFAULT_GRID
}

/// One model row of a plan. At most one of `config`, `config_file` and
/// `search` may be given; with none, the family's default config for each
/// dataset is used. `overrides` is merged into the resolved config
/// (objects merge key by key, everything else replaces).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    /// Row label, unique within the plan.
    pub name: String,
    /// Registered family name (`wgan`, `gf`).
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_file: Option<PathBuf>,
    /// Search directory whose best trial supplies the config.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overrides: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    /// Builtin dataset names or spec-file paths.
    pub datasets: Vec<String>,
    #[serde(default)]
    pub models: Vec<ModelEntry>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
    /// Points in each density-curve CSV.
    #[serde(default = "default_grid")]
    pub grid: usize,
}

fn rebase(base: &Path, p: &Path) -> PathBuf {
    if p.is_relative() {
        base.join(p)
    } else {
        p.to_path_buf()
    }
}

/// Recursive merge: objects merge per key, other values replace.
pub fn merge_json(target: &mut Value, patch: &Value) {
    match (target, patch) {
        (Value::Object(t), Value::Object(p)) => {
            for (k, v) in p {
                merge_json(t.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (t, p) => *t = p.clone(),
    }
}

impl ExperimentPlan {
    /// Reads a plan; relative paths inside it are taken relative to the
    /// plan file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut plan: ExperimentPlan = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        plan.output_dir = rebase(base, &plan.output_dir);
        for d in &mut plan.datasets {
            if d != "unimodal" && d != "multimodal" {
                *d = rebase(base, Path::new(d)).to_string_lossy().into_owned();
            }
        }
        for m in &mut plan.models {
            m.config_file = m.config_file.as_deref().map(|p| rebase(base, p));
            m.search = m.search.as_deref().map(|p| rebase(base, p));
        }
        Ok(plan)
    }
}

/// Column key for a dataset reference: the builtin name or the file stem.
fn dataset_key(reference: &str) -> String {
    match reference {
        "unimodal" | "multimodal" => reference.to_string(),
        path => Path::new(path)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.to_string()),
    }
}

/// One (model, dataset, seed) run, fully resolved.
#[derive(Debug, Clone)]
pub struct Cell {
    pub model_name: String,
    pub model: String,
    pub dataset_key: String,
    pub dataset: MixtureSpec,
    pub seed: u64,
    pub config: Value,
    pub dir: PathBuf,
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c.to_ascii_lowercase() } else { '-' })
        .collect()
}

fn resolve_config(entry: &ModelEntry, registry: &Registry, dataset: &MixtureSpec) -> Result<Value> {
    let sources = [entry.config.is_some(), entry.config_file.is_some(), entry.search.is_some()];
    if sources.iter().filter(|&&b| b).count() > 1 {
        return Err(Error::InvalidConfig(format!(
            "model '{}': give at most one of config, config_file, search",
            entry.name
        )));
    }
    let strategy = registry.get(&entry.model)?;
    let mut config = if let Some(c) = &entry.config {
        c.clone()
    } else if let Some(path) = &entry.config_file {
        if !path.exists() {
            return Err(Error::InvalidConfig(format!(
                "model '{}': config file {} does not exist",
                entry.name,
                path.display()
            )));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?
    } else if let Some(dir) = &entry.search {
        if entry.model != "wgan" {
            return Err(Error::InvalidConfig(format!(
                "model '{}': search references only apply to wgan",
                entry.name
            )));
        }
        let best = hypersearch::top(dir, 1)
            .map_err(|e| Error::InvalidConfig(format!("model '{}': search {}: {e}", entry.name, dir.display())))?;
        let best = best.into_iter().find(|t| t.score.is_some()).ok_or_else(|| {
            Error::InvalidConfig(format!("model '{}': search {} has no successful trial", entry.name, dir.display()))
        })?;
        hypersearch::config_value(&best)?
    } else {
        strategy.default_config(dataset)
    };
    if let Some(patch) = &entry.overrides {
        merge_json(&mut config, patch);
    }
    strategy
        .validate(&config)
        .map_err(|e| Error::InvalidConfig(format!("model '{}' on {}: {e}", entry.name, dataset.label())))?;
    Ok(config)
}

/// Validates the whole plan and expands it into cells. Nothing is trained
/// or written.
pub fn prepare(plan: &ExperimentPlan, registry: &Registry) -> Result<Vec<Cell>> {
    if plan.schema_version != PLAN_SCHEMA {
        return Err(Error::InvalidConfig(format!(
            "unsupported plan schema version {}",
            plan.schema_version
        )));
    }
    if plan.eval_samples == 0 || plan.grid < 2 {
        return Err(Error::InvalidConfig("eval_samples must be >= 1 and grid >= 2".into()));
    }
    if plan.models.is_empty() {
        return Ok(Vec::new());
    }
    if plan.datasets.is_empty() || plan.seeds.is_empty() {
        return Err(Error::InvalidConfig("a plan with models needs datasets and seeds".into()));
    }
    let mut seen = std::collections::BTreeSet::new();
    for s in &plan.seeds {
        if !seen.insert(*s) {
            return Err(Error::InvalidConfig(format!("duplicate seed {s}")));
        }
    }
    let mut datasets = Vec::new();
    let mut keys = std::collections::BTreeSet::new();
    for d in &plan.datasets {
        let key = dataset_key(d);
        if !keys.insert(key.clone()) {
            return Err(Error::InvalidConfig(format!("duplicate dataset '{key}'")));
        }
        datasets.push((key, MixtureSpec::resolve(d)?));
    }
    let mut names = std::collections::BTreeSet::new();
    let mut cells = Vec::new();
    for entry in &plan.models {
        if entry.name.trim().is_empty() || !names.insert(slug(&entry.name)) {
            return Err(Error::InvalidConfig(format!("model name '{}' is empty or duplicated", entry.name)));
        }
        for (key, spec) in &datasets {
            let config = resolve_config(entry, registry, spec)?;
            for &seed in &plan.seeds {
                cells.push(Cell {
                    model_name: entry.name.clone(),
                    model: entry.model.clone(),
                    dataset_key: key.clone(),
                    dataset: spec.clone(),
                    seed,
                    config: config.clone(),
                    dir: plan
                        .output_dir
                        .join(slug(&entry.name))
                        .join(slug(key))
                        .join(format!("seed-{seed}")),
                });
            }
        }
    }
    Ok(cells)
}

/// Uniform grid over the dataset's support padded by 10% on each side.
pub fn density_grid(dataset: &MixtureSpec, n: usize) -> Vec<f64> {
    let (lo, hi) = dataset.support();
    let pad = 0.1 * (hi - lo);
    linspace(lo - pad, hi + pad, n)
}

/// Writes a `t,density` CSV.
pub fn write_curve(path: &Path, grid: &[f64], density: &[f64]) -> Result<()> {
    let mut out = String::from("t,density\n");
    for (t, d) in grid.iter().zip(density) {
        out.push_str(&format!("{t},{d}\n"));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a `t,density` CSV.
pub fn read_curve(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut grid = Vec::new();
    let mut density = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let parsed = line
            .split_once(',')
            .and_then(|(t, d)| Some((t.parse::<f64>().ok()?, d.parse::<f64>().ok()?)));
        let (t, d) = parsed.ok_or_else(|| Error::InvalidSpec(format!("{}:{}: bad row", path.display(), i + 1)))?;
        grid.push(t);
        density.push(d);
    }
    Ok((grid, density))
}

/// Options for [`train_into`].
#[derive(Debug, Clone, Copy)]
pub struct TrainOutput {
    /// Overrides the config's eval sample count when set.
    pub eval_samples: Option<usize>,
    /// Points in the density-curve CSV.
    pub grid: usize,
}

/// Trains one model and writes `record.json`, `checkpoint.json` and
/// `density.csv` into `dir`. A diverged run still gets its record (with a
/// failed status); checkpoint and curve are written whenever a finite
/// eval point produced a model.
pub fn train_into(
    dir: &Path,
    registry: &Registry,
    model: &str,
    request: &TrainRequest,
    output: TrainOutput,
) -> Result<TrialRecord> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let strategy = registry.get(model)?;
    let mut request = request.clone();
    if output.eval_samples.is_some() {
        request.eval_samples = output.eval_samples;
    }
    let outcome = strategy.train(&request)?;
    let mut record = outcome.record;
    if let Some(best) = &outcome.best {
        let doc = CheckpointDoc {
            schema_version: CHECKPOINT_DOC_SCHEMA,
            model: model.to_string(),
            best: best.to_value()?,
            state: outcome.state,
        };
        doc.write(&dir.join(CHECKPOINT_FILE))?;
        record.checkpoint = Some(PathBuf::from(CHECKPOINT_FILE));
        let t = density_grid(&request.dataset, output.grid);
        let density = best.density_curve(&t, request.seed)?;
        write_curve(&dir.join(DENSITY_FILE), &t, &density)?;
        record.density_curve = Some(PathBuf::from(DENSITY_FILE));
    }
    record.write(&dir.join(RECORD_FILE))?;
    Ok(record)
}

fn run_cell(cell: &Cell, registry: &Registry, eval_samples: usize, grid: usize) -> Result<TrialRecord> {
    let request = TrainRequest::new(cell.config.clone(), cell.dataset.clone(), cell.seed);
    let output = TrainOutput {
        eval_samples: Some(eval_samples),
        grid,
    };
    train_into(&cell.dir, registry, &cell.model, &request, output)
}

/// Outcome of one plan cell.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub model_name: String,
    pub dataset_key: String,
    pub seed: u64,
    pub record: TrialRecord,
    pub record_path: PathBuf,
}

/// Runs every cell of `plan` on up to `workers` threads, writes one record
/// per cell plus `summary.{csv,txt,json}` in the output directory, and
/// returns the summary. Cell failures are recorded, never fatal.
pub fn run(plan: &ExperimentPlan, registry: &Registry, workers: usize) -> Result<Summary> {
    let cells = prepare(plan, registry)?;
    std::fs::create_dir_all(&plan.output_dir).map_err(|e| Error::io(&plan.output_dir, e))?;
    let plan_copy = plan.output_dir.join("plan.json");
    std::fs::write(&plan_copy, serde_json::to_string_pretty(plan)? + "\n").map_err(|e| Error::io(&plan_copy, e))?;

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<CellResult>>> = Mutex::new(vec![None; cells.len()]);
    let fatal: Mutex<Option<Error>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..workers.max(1).min(cells.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(cell) = cells.get(i) else { return };
                log::info!("cell {}/{}/seed {}", cell.model_name, cell.dataset_key, cell.seed);
                let record_path = cell.dir.join(RECORD_FILE);
                let record = match run_cell(cell, registry, plan.eval_samples, plan.grid) {
                    Ok(record) => record,
                    Err(e) => {
                        log::warn!("cell {}/{}/seed {} failed: {e}", cell.model_name, cell.dataset_key, cell.seed);
                        let mut r =
                            TrialRecord::new(&cell.model, cell.config.clone(), cell.seed, cell.dataset.clone());
                        r.fail(e.to_string(), None);
                        if let Err(e) = std::fs::create_dir_all(&cell.dir)
                            .map_err(|e| Error::io(&cell.dir, e))
                            .and_then(|_| r.write(&record_path))
                        {
                            fatal.lock().expect("fatal lock").get_or_insert(e);
                        }
                        r
                    }
                };
                results.lock().expect("results lock")[i] = Some(CellResult {
                    model_name: cell.model_name.clone(),
                    dataset_key: cell.dataset_key.clone(),
                    seed: cell.seed,
                    record,
                    record_path,
                });
            });
        }
    });
    if let Some(e) = fatal.into_inner().expect("fatal lock") {
        return Err(e);
    }
    let results: Vec<CellResult> = results
        .into_inner()
        .expect("results lock")
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect();
    let model_order: Vec<String> = plan.models.iter().map(|m| m.name.clone()).collect();
    let dataset_order: Vec<String> = plan.datasets.iter().map(|d| dataset_key(d)).collect();
    let summary = Summary::from_results(&model_order, &dataset_order, &results);
    summary.write(&plan.output_dir)?;
    Ok(summary)
}

/// Aggregate of one (model, dataset) pair over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryCell {
    pub model: String,
    pub dataset: String,
    /// Median best W1 with failed runs counted as +∞; `None` = FAILED.
    pub median_best_w1: Option<f64>,
    pub min_best_w1: Option<f64>,
    pub max_best_w1: Option<f64>,
    pub n_ok: usize,
    pub n_failed: usize,
}

/// Rows = models, columns = datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub models: Vec<String>,
    pub datasets: Vec<String>,
    pub cells: Vec<SummaryCell>,
}

/// Score of a record for the summary: its best W1 if it completed, +∞ if
/// it failed.
pub fn summary_value(record: &TrialRecord) -> f64 {
    match record.best_w1 {
        Some(w) if record.status.is_ok() && w.is_finite() => w,
        _ => f64::INFINITY,
    }
}

/// Median; the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

impl Summary {
    pub fn from_results(models: &[String], datasets: &[String], results: &[CellResult]) -> Self {
        let mut cells = Vec::new();
        for m in models {
            for d in datasets {
                let values: Vec<f64> = results
                    .iter()
                    .filter(|r| &r.model_name == m && &r.dataset_key == d)
                    .map(|r| summary_value(&r.record))
                    .collect();
                let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
                cells.push(SummaryCell {
                    model: m.clone(),
                    dataset: d.clone(),
                    median_best_w1: median(&values).filter(|v| v.is_finite()),
                    min_best_w1: finite.iter().copied().reduce(f64::min),
                    max_best_w1: finite.iter().copied().reduce(f64::max),
                    n_ok: finite.len(),
                    n_failed: values.len() - finite.len(),
                });
            }
        }
        Self {
            models: models.to_vec(),
            datasets: datasets.to_vec(),
            cells,
        }
    }

    pub fn cell(&self, model: &str, dataset: &str) -> Option<&SummaryCell> {
        self.cells.iter().find(|c| c.model == model && c.dataset == dataset)
    }

    /// Number of cells shown as FAILED.
    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.median_best_w1.is_none()).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,dataset,median_best_w1,min_best_w1,max_best_w1,n_ok,n_failed\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for c in &self.cells {
            let median = c.median_best_w1.map_or("FAILED".to_string(), |v| v.to_string());
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                csv_field(&c.model),
                csv_field(&c.dataset),
                median,
                opt(c.min_best_w1),
                opt(c.max_best_w1),
                c.n_ok,
                c.n_failed
            ));
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let files = [
            ("summary.csv", self.to_csv()),
            ("summary.txt", self.to_string()),
            ("summary.json", serde_json::to_string_pretty(self)? + "\n"),
        ];
        for (name, text) in files {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Aligned text table: median best W1 with [min, max] per cell.
impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut rows = vec![std::iter::once("model".to_string())
            .chain(self.datasets.iter().cloned())
            .collect::<Vec<_>>()];
        for m in &self.models {
            let mut row = vec![m.clone()];
            for d in &self.datasets {
                let text = match self.cell(m, d) {
                    Some(SummaryCell {
                        median_best_w1: Some(v),
                        min_best_w1,
                        max_best_w1,
                        n_failed,
                        ..
                    }) => {
                        let mut s = format!(
                            "{v:.4} [{:.4}, {:.4}]",
                            min_best_w1.unwrap_or(*v),
                            max_best_w1.unwrap_or(*v)
                        );
                        if *n_failed > 0 {
                            s.push_str(&format!(" ({n_failed} failed)"));
                        }
                        s
                    }
                    _ => "FAILED".to_string(),
                };
                row.push(text);
            }
            rows.push(row);
        }
        let ncols = rows[0].len();
        let widths: Vec<usize> = (0..ncols)
            .map(|j| rows.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
            .collect();
        for row in rows {
            let line: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(j, s)| format!("{s:<w$}", w = widths[j]))
                .collect();
            writeln!(f, "{}", line.join("  ").trim_end())?;
        }
        Ok(())
    }
}

/// All trial records below `dir`, in path order. Files that do not parse
/// as records are ignored.
pub fn find_records(dir: &Path) -> Result<Vec<(PathBuf, TrialRecord)>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(&d)
            .map_err(|e| Error::io(&d, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(&d, err)))
            .collect::<Result<_>>()?;
        entries.sort();
        for p in entries.into_iter().rev() {
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "json")
                && !p.file_name().is_some_and(|n| n == CHECKPOINT_FILE)
            {
                if let Ok(r) = TrialRecord::read(&p) {
                    out.push((p, r));
                }
            }
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

/// One exported curve.
#[derive(Debug, Clone)]
pub struct ExportedCurve {
    /// Source record, or `None` for a ground-truth curve.
    pub record: Option<PathBuf>,
    pub csv: PathBuf,
}

fn export_name(records_dir: &Path, record: &Path) -> String {
    let rel = record.strip_prefix(records_dir).unwrap_or(record);
    let stem = rel.with_extension("");
    let parts: Vec<String> = stem.iter().map(|c| c.to_string_lossy().into_owned()).collect();
    format!("{}.csv", parts.join("__"))
}

/// Writes a `t,density` CSV per record found under `records_dir` into
/// `out_dir`, plus one `truth-<dataset>.csv` per distinct dataset. Records
/// that failed before producing any model are skipped; any other record
/// without a checkpoint is an error.
pub fn export_density_curves(
    records_dir: &Path,
    grid: usize,
    out_dir: &Path,
    registry: &Registry,
) -> Result<Vec<ExportedCurve>> {
    if grid < 2 {
        return Err(Error::InvalidConfig("grid must be >= 2".into()));
    }
    let records = find_records(records_dir)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut out = Vec::new();
    let mut datasets: Vec<MixtureSpec> = Vec::new();
    for (path, record) in &records {
        if !datasets.contains(&record.dataset) {
            datasets.push(record.dataset.clone());
        }
        if !record.status.is_ok() && record.best_w1.is_none() {
            log::warn!("skipping {}: the run failed before producing a model", path.display());
            continue;
        }
        let ckpt = record
            .checkpoint_file(path)
            .filter(|p| p.exists())
            .ok_or_else(|| Error::MissingCheckpoint(path.display().to_string()))?;
        let doc = CheckpointDoc::read(&ckpt)?;
        if doc.best.is_null() {
            return Err(Error::MissingCheckpoint(path.display().to_string()));
        }
        let model = registry.get(&doc.model)?.load(&doc.best)?;
        let t = density_grid(&record.dataset, grid);
        let density = model.density_curve(&t, record.seed)?;
        let csv = out_dir.join(export_name(records_dir, path));
        write_curve(&csv, &t, &density)?;
        out.push(ExportedCurve {
            record: Some(path.clone()),
            csv,
        });
    }
    let mut labels = BTreeMap::<&str, usize>::new();
    for spec in &datasets {
        let n = labels.entry(spec.label()).or_insert(0);
        let name = if *n == 0 {
            format!("truth-{}.csv", spec.label())
        } else {
            format!("truth-{}-{}.csv", spec.label(), n)
        };
        *n += 1;
        let t = density_grid(spec, grid);
        let density: Vec<f64> = t.iter().map(|&x| spec.pdf(x)).collect();
        let csv = out_dir.join(name);
        write_curve(&csv, &t, &density)?;
        out.push(ExportedCurve { record: None, csv });
    }
    Ok(out)
}

/// Why an eval point is flagged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticFlag {
    /// Critic W1 < 0.
    Negative,
    /// 0 ≤ critic W1 < 0.1 × true W1.
    Underestimate,
}

impl fmt::Display for CriticFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CriticFlag::Negative => "negative critic estimate",
            CriticFlag::Underestimate => "critic estimate below 10% of true W1",
        })
    }
}

/// Ratio threshold below which a critic estimate counts as a severe
/// underestimate.
pub const UNDERESTIMATE_RATIO: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticPoint {
    pub step: u64,
    pub true_w1: f64,
    pub critic_w1: f64,
    /// critic / true; `None` when the true W1 is zero.
    pub ratio: Option<f64>,
    /// Sign of the critic estimate: -1, 0 or 1.
    pub sign: i8,
    pub flag: Option<CriticFlag>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CriticReport {
    pub points: Vec<CriticPoint>,
    pub negative: usize,
    pub underestimates: usize,
    /// Median of the finite ratios.
    pub median_ratio: Option<f64>,
}

impl CriticReport {
    /// Report over eval points; points without a critic estimate are
    /// skipped.
    pub fn from_history(history: &[EvalPoint]) -> Self {
        let points: Vec<CriticPoint> = history
            .iter()
            .filter_map(|p| {
                let c = p.critic_w1?;
                let ratio = (p.true_w1 != 0.0).then(|| c / p.true_w1);
                let flag = if c < 0.0 {
                    Some(CriticFlag::Negative)
                } else if c < UNDERESTIMATE_RATIO * p.true_w1 {
                    Some(CriticFlag::Underestimate)
                } else {
                    None
                };
                Some(CriticPoint {
                    step: p.step,
                    true_w1: p.true_w1,
                    critic_w1: c,
                    ratio,
                    sign: if c > 0.0 {
                        1
                    } else if c < 0.0 {
                        -1
                    } else {
                        0
                    },
                    flag,
                })
            })
            .collect();
        Self::from_points(points)
    }

    fn from_points(points: Vec<CriticPoint>) -> Self {
        let ratios: Vec<f64> = points.iter().filter_map(|p| p.ratio).filter(|r| r.is_finite()).collect();
        Self {
            negative: points.iter().filter(|p| p.flag == Some(CriticFlag::Negative)).count(),
            underestimates: points.iter().filter(|p| p.flag == Some(CriticFlag::Underestimate)).count(),
            median_ratio: median(&ratios),
            points,
        }
    }

    /// Pools several reports (e.g. every trial of a search).
    pub fn pooled(reports: impl IntoIterator<Item = CriticReport>) -> Self {
        Self::from_points(reports.into_iter().flat_map(|r| r.points).collect())
    }

    pub fn flagged(&self) -> usize {
        self.negative + self.underestimates
    }
}

impl fmt::Display for CriticReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>8}  {:>12}  {:>12}  {:>10}  flag", "step", "true_w1", "critic_w1", "ratio")?;
        for p in &self.points {
            let ratio = p.ratio.map_or("-".to_string(), |r| format!("{r:.4}"));
            let flag = p.flag.map_or(String::new(), |fl| fl.to_string());
            writeln!(
                f,
                "{:>8}  {:>12.6}  {:>12.6}  {:>10}  {}",
                p.step, p.true_w1, p.critic_w1, ratio, flag
            )?;
        }
        let median = self.median_ratio.map_or("-".to_string(), |m| format!("{m:.4}"));
        writeln!(
            f,
            "points {}  negative {}  below 10% {}  median ratio {}",
            self.points.len(),
            self.negative,
            self.underestimates,
            median
        )
    }
}

/// Critic diagnostic for one WGAN record.
pub fn diagnose_critic(record: &TrialRecord) -> Result<CriticReport> {
    if record.model != "wgan" {
        return Err(Error::NotWgan(record.model.clone()));
    }
    Ok(CriticReport::from_history(&record.history))
}

/// Pooled diagnostic over every WGAN record under `dir`.
pub fn diagnose_dir(dir: &Path) -> Result<CriticReport> {
    let reports: Vec<CriticReport> = find_records(dir)?
        .into_iter()
        .filter(|(_, r)| r.model == "wgan")
        .map(|(_, r)| CriticReport::from_history(&r.history))
        .collect();
    Ok(CriticReport::pooled(reports))
}
