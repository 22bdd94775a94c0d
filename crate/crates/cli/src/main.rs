//! `densbench` command-line front end.
//!
//! Exit codes: 0 success, 1 validation error (bad arguments, configs,
//! specs or plans), 2 runtime failure. Runtime failures leave whatever
//! results were already written in place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use densbench::harness::{self, ExperimentPlan, TrainOutput};
use densbench::hypersearch::{self, AshaSchedule, SearchSettings, SearchSpace, WganObjective};
use densbench::metrics::{kde_bandwidth, kde_evaluate, linspace, w1_direct, KdeConfig};
use densbench::record::TrialRecord;
use densbench::registry::{Registry, TrainRequest};
use densbench::synthdata::{DatasetHandle, MixtureSpec};

#[derive(Parser)]
#[command(name = "densbench", version, about = "Univariate density-estimation benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw samples from a dataset spec, one per line.
    Data {
        /// Builtin name (unimodal, multimodal) or JSON spec file.
        #[arg(long)]
        spec: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Distance and density metrics on sample files.
    #[command(subcommand)]
    Metrics(MetricsCommand),
    /// Train one model.
    Train {
        /// Registered model family.
        model: String,
        /// JSON config file; the family default when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Builtin dataset name or JSON spec file.
        #[arg(long)]
        data: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Points in the density-curve CSV.
        #[arg(long, default_value_t = harness::DEFAULT_GRID)]
        grid: usize,
    },
    /// Random search with asynchronous successive halving.
    Search(SearchCommand),
    /// Execute an experiment plan.
    Run {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Export density curves for every record under a directory.
    Export {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, default_value_t = harness::DEFAULT_GRID)]
        grid: usize,
        /// Output directory; `<records>/curves` when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Critic-versus-true W1 report for a WGAN record (or every WGAN
    /// record under a directory).
    Diagnose {
        #[arg(long)]
        record: PathBuf,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Subcommand)]
enum MetricsCommand {
    /// W1 distance between two sample files.
    W1 {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// KDE with the band-count bandwidth rule, written as `t,density`.
    Kde {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 1000)]
        grid: usize,
        #[arg(long)]
        out: PathBuf,
        /// Expected samples inside each kernel window.
        #[arg(long, default_value_t = 500)]
        target: usize,
    },
}

#[derive(Args)]
#[command(args_conflicts_with_subcommands = true)]
struct SearchCommand {
    #[command(subcommand)]
    action: Option<SearchAction>,
    #[command(flatten)]
    run: SearchRun,
}

#[derive(Args)]
struct SearchRun {
    /// JSON search-space file; the default space when omitted.
    #[arg(long)]
    space: Option<PathBuf>,
    #[arg(long)]
    data: Option<String>,
    #[arg(long, default_value_t = hypersearch::DEFAULT_TRIALS)]
    trials: usize,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = AshaSchedule::default().min_budget)]
    min_budget: u64,
    #[arg(long, default_value_t = AshaSchedule::default().max_budget)]
    max_budget: u64,
    #[arg(long, default_value_t = AshaSchedule::default().eta)]
    eta: u64,
}

#[derive(Subcommand)]
enum SearchAction {
    /// Print the k best trials.
    Top {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
    /// Continue an interrupted search.
    Resume {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
}

/// Input problems detected by the front end itself.
#[derive(Debug)]
struct Invalid(String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

/// Outcome of a command that ran to completion.
enum Done {
    Ok,
    /// Finished, but some results failed; they are preserved on disk.
    Partial,
}

fn is_validation(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.downcast_ref::<Invalid>().is_some()
            || e.downcast_ref::<densbench::Error>().is_some_and(|e| e.is_validation())
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(Done::Ok) => ExitCode::SUCCESS,
        Ok(Done::Partial) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_validation(&e) { 1 } else { 2 })
        }
    }
}

fn resolve_spec(name: &str) -> anyhow::Result<MixtureSpec> {
    if name != "unimodal" && name != "multimodal" && !Path::new(name).exists() {
        return Err(invalid(format!(
            "dataset '{name}' is neither a builtin (unimodal, multimodal) nor an existing spec file"
        )));
    }
    Ok(MixtureSpec::resolve(name)?)
}

fn read_json(path: &Path) -> anyhow::Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn read_samples(path: &Path) -> anyhow::Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| invalid(format!("{}:{}: not a finite number: {l:?}", path.display(), i + 1)))
        })
        .collect()
}

fn write_output(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn dispatch(command: Command) -> anyhow::Result<Done> {
    let registry = Registry::with_builtins();
    match command {
        Command::Data { spec, n, seed, out } => {
            let spec = resolve_spec(&spec)?;
            let samples = DatasetHandle::new(spec, seed).sample(n);
            let mut text = String::with_capacity(n * 20);
            for x in samples {
                text.push_str(&format!("{x}\n"));
            }
            write_output(out.as_deref(), &text)?;
            Ok(Done::Ok)
        }
        Command::Metrics(MetricsCommand::W1 { a, b }) => {
            let (a, b) = (read_samples(&a)?, read_samples(&b)?);
            println!("{}", w1_direct(&a, &b)?);
            Ok(Done::Ok)
        }
        Command::Metrics(MetricsCommand::Kde {
            input,
            grid,
            out,
            target,
        }) => {
            if grid < 2 {
                return Err(invalid("--grid must be >= 2"));
            }
            let samples = read_samples(&input)?;
            let config = KdeConfig {
                target_band_count: target,
                ..KdeConfig::default()
            };
            let h = kde_bandwidth(&samples, &config)?;
            let lo = samples.iter().copied().fold(f64::INFINITY, f64::min) - 3.0 * h;
            let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 3.0 * h;
            let t = linspace(lo, hi, grid);
            let density = kde_evaluate(&samples, h, &t)?;
            harness::write_curve(&out, &t, &density)?;
            eprintln!("bandwidth {h}");
            Ok(Done::Ok)
        }
        Command::Train {
            model,
            config,
            data,
            seed,
            out,
            grid,
        } => {
            let strategy = registry.get(&model)?;
            let dataset = resolve_spec(&data)?;
            let config = match config {
                Some(path) => read_json(&path)?,
                None => strategy.default_config(&dataset),
            };
            strategy.validate(&config)?;
            if grid < 2 {
                return Err(invalid("--grid must be >= 2"));
            }
            let request = TrainRequest::new(config, dataset, seed);
            let record = harness::train_into(
                &out,
                &registry,
                &model,
                &request,
                TrainOutput {
                    eval_samples: None,
                    grid,
                },
            )?;
            print_record(&record);
            Ok(if record.status.is_ok() { Done::Ok } else { Done::Partial })
        }
        Command::Search(SearchCommand { action, run }) => match action {
            Some(SearchAction::Top { out, k }) => {
                for t in hypersearch::top(&out, k)? {
                    let score = t.score.map_or("FAILED".to_string(), |s| format!("{s:.6}"));
                    let budget = t.budget.map_or("-".to_string(), |b| b.to_string());
                    println!("trial {:>4}  budget {:>7}  score {score}", t.trial, budget);
                    println!("  {}", serde_json::to_string(&t.config)?);
                }
                Ok(Done::Ok)
            }
            Some(SearchAction::Resume { out, workers }) => {
                let header = hypersearch::read_header(&out)?;
                let objective = WganObjective {
                    dataset: header.dataset,
                    eval_samples: None,
                };
                let ranked = hypersearch::resume(&out, harness::worker_count(workers), &objective)?;
                print_search(&ranked);
                Ok(Done::Ok)
            }
            None => {
                let out = run.out.ok_or_else(|| invalid("search needs --out"))?;
                let data = run.data.ok_or_else(|| invalid("search needs --data"))?;
                let space: SearchSpace = match &run.space {
                    Some(path) => serde_json::from_value(read_json(path)?)
                        .map_err(|e| invalid(format!("{}: {e}", path.display())))?,
                    None => SearchSpace::default(),
                };
                let settings = SearchSettings {
                    seed: run.seed,
                    trial_budget: run.trials,
                    schedule: AshaSchedule {
                        min_budget: run.min_budget,
                        max_budget: run.max_budget,
                        eta: run.eta,
                    },
                    space,
                    dataset: resolve_spec(&data)?,
                };
                settings.validate()?;
                let objective = WganObjective {
                    dataset: settings.dataset.clone(),
                    eval_samples: None,
                };
                let ranked = hypersearch::run(&out, &settings, harness::worker_count(run.workers), &objective)?;
                print_search(&ranked);
                Ok(Done::Ok)
            }
        },
        Command::Run { plan, workers } => {
            if !plan.exists() {
                return Err(invalid(format!("plan file {} does not exist", plan.display())));
            }
            let plan = ExperimentPlan::load(&plan)?;
            let summary = harness::run(&plan, &registry, harness::worker_count(workers))?;
            print!("{summary}");
            Ok(if summary.failed_cells() == 0 { Done::Ok } else { Done::Partial })
        }
        Command::Export { records, grid, out } => {
            if !records.is_dir() {
                return Err(invalid(format!("{} is not a directory", records.display())));
            }
            let out = out.unwrap_or_else(|| records.join("curves"));
            let curves = harness::export_density_curves(&records, grid, &out, &registry)?;
            for c in curves {
                println!("{}", c.csv.display());
            }
            Ok(Done::Ok)
        }
        Command::Diagnose { record, json } => {
            let report = if record.is_dir() {
                harness::diagnose_dir(&record)?
            } else {
                let r = TrialRecord::read(&record).map_err(|e| match e {
                    densbench::Error::Io { .. } => invalid(e.to_string()),
                    other => anyhow!(other),
                })?;
                harness::diagnose_critic(&r).map_err(|e| invalid(e.to_string()))?
            };
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{report}");
            }
            Ok(Done::Ok)
        }
    }
}

fn print_record(record: &TrialRecord) {
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
    println!(
        "model {}  steps {}  best_w1 {} (step {})  final_w1 {}  status {}",
        record.model,
        record.steps,
        fmt(record.best_w1),
        record.best_step.map_or("-".to_string(), |s| s.to_string()),
        fmt(record.final_w1),
        if record.status.is_ok() { "ok" } else { "failed" }
    );
}

fn print_search(ranked: &[hypersearch::TrialSummary]) {
    let ok = ranked.iter().filter(|t| t.score.is_some()).count();
    println!("{} trials, {} scored at their last rung", ranked.len(), ok);
    if let Some(best) = ranked.first() {
        if let Some(score) = best.score {
            println!(
                "best: trial {} score {score:.6} at budget {}",
                best.trial,
                best.budget.unwrap_or(0)
            );
        }
    }
}
