use std::path::Path;

use serde_json::{json, Value};

use densbench::harness::{
    self, diagnose_critic, export_density_curves, median, read_curve, summary_value, ExperimentPlan, ModelEntry,
};
use densbench::quad::trapezoid;
use densbench::record::TrialRecord;
use densbench::registry::{FittedModel, ModelStrategy, Registry, TrainOutcome, TrainRequest};
use densbench::synthdata::MixtureSpec;
use densbench::{Error, Result};

fn tiny_gf() -> Value {
    json!({
        "depth": 2,
        "components": 8,
        "batch_size": 128,
        "steps": 40,
        "eval_every": 20,
        "eval_samples": 2000,
        "pilot_samples": 2000
    })
}

fn tiny_wgan() -> Value {
    json!({
        "prior": {"kind": "gaussian", "dim": 2},
        "generator": {"hidden": [8], "activation": "tanh"},
        "critic": {"hidden": [8], "activation": "tanh"},
        "n_critic": 2,
        "batch_size": 32,
        "total_generator_steps": 12,
        "eval_every": 4,
        "eval_samples": 1000
    })
}

fn entry(name: &str, model: &str, config: Option<Value>) -> ModelEntry {
    ModelEntry {
        name: name.into(),
        model: model.into(),
        config,
        config_file: None,
        search: None,
        overrides: None,
    }
}

fn plan(dir: &Path, models: Vec<ModelEntry>, seeds: Vec<u64>) -> ExperimentPlan {
    ExperimentPlan {
        schema_version: 1,
        datasets: vec!["unimodal".into()],
        models,
        seeds,
        output_dir: dir.join("out"),
        eval_samples: 2000,
        grid: 200,
    }
}

#[test]
fn zero_models_gives_empty_table() {
    let dir = tempfile::tempdir().unwrap();
    let p = plan(dir.path(), vec![], vec![1]);
    let summary = harness::run(&p, &Registry::with_builtins(), 1).unwrap();
    assert!(summary.cells.is_empty());
    assert!(dir.path().join("out/summary.csv").exists());
}

#[test]
fn summary_cell_is_median_of_records() {
    let dir = tempfile::tempdir().unwrap();
    let p = plan(dir.path(), vec![entry("GF", "gf", Some(tiny_gf()))], vec![1, 2, 3]);
    let summary = harness::run(&p, &Registry::with_builtins(), 2).unwrap();
    let records: Vec<TrialRecord> = [1, 2, 3]
        .iter()
        .map(|s| TrialRecord::read(&dir.path().join(format!("out/gf/unimodal/seed-{s}/record.json"))).unwrap())
        .collect();
    let values: Vec<f64> = records.iter().map(summary_value).collect();
    let cell = summary.cell("GF", "unimodal").unwrap();
    assert_eq!(cell.median_best_w1, median(&values));
    assert_eq!(cell.n_ok, 3);
    let csv = std::fs::read_to_string(dir.path().join("out/summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    let txt = std::fs::read_to_string(dir.path().join("out/summary.txt")).unwrap();
    assert!(txt.starts_with("model") && txt.contains("GF"));
}

#[test]
fn runs_are_deterministic_modulo_wall_clock() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let models = || vec![entry("gf", "gf", Some(tiny_gf())), entry("wgan", "wgan", Some(tiny_wgan()))];
    harness::run(&plan(a.path(), models(), vec![4]), &Registry::with_builtins(), 1).unwrap();
    harness::run(&plan(b.path(), models(), vec![4]), &Registry::with_builtins(), 1).unwrap();
    for m in ["gf", "wgan"] {
        let rel = format!("out/{m}/unimodal/seed-4/record.json");
        let ra = TrialRecord::read(&a.path().join(&rel)).unwrap().without_timing();
        let rb = TrialRecord::read(&b.path().join(&rel)).unwrap().without_timing();
        assert_eq!(ra, rb, "{m}");
        let ca = std::fs::read(a.path().join(format!("out/{m}/unimodal/seed-4/density.csv"))).unwrap();
        let cb = std::fs::read(b.path().join(format!("out/{m}/unimodal/seed-4/density.csv"))).unwrap();
        assert_eq!(ca, cb, "{m}");
    }
}

#[test]
fn density_curves_have_the_requested_shape() {
    let dir = tempfile::tempdir().unwrap();
    // The padded grid holds all of the data's mass; a briefly trained flow
    // must have pulled its logistic tails inside it.
    let mut cfg = tiny_gf();
    cfg["components"] = json!(16);
    cfg["steps"] = json!(400);
    cfg["eval_every"] = json!(100);
    let p = plan(dir.path(), vec![entry("gf", "gf", Some(cfg))], vec![5]);
    harness::run(&p, &Registry::with_builtins(), 1).unwrap();
    let (t, d) = read_curve(&dir.path().join("out/gf/unimodal/seed-5/density.csv")).unwrap();
    assert_eq!(t.len(), 200);
    assert!(t.windows(2).all(|w| w[1] > w[0]));
    let mass = trapezoid(&t, &d);
    assert!((mass - 1.0).abs() < 1e-2, "mass {mass}");

    let out = dir.path().join("curves");
    let curves = export_density_curves(&dir.path().join("out"), 2, &out, &Registry::with_builtins()).unwrap();
    // One model curve plus the ground truth.
    assert_eq!(curves.len(), 2);
    for c in &curves {
        let (t, _) = read_curve(&c.csv).unwrap();
        assert_eq!(t.len(), 2);
    }
}

#[test]
fn ground_truth_curve_peaks_at_the_mode() {
    let dir = tempfile::tempdir().unwrap();
    let p = plan(dir.path(), vec![entry("gf", "gf", Some(tiny_gf()))], vec![5]);
    harness::run(&p, &Registry::with_builtins(), 1).unwrap();
    let out = dir.path().join("curves");
    export_density_curves(&dir.path().join("out"), 2001, &out, &Registry::with_builtins()).unwrap();
    let (t, d) = read_curve(&out.join("truth-unimodal.csv")).unwrap();
    let (i, peak) = d.iter().enumerate().fold((0, 0.0), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    assert!((t[i] - 5.0).abs() < 0.01, "peak at {}", t[i]);
    assert!((peak - 1.7474).abs() < 2e-3, "peak {peak}");
}

#[test]
fn missing_checkpoint_names_the_record() {
    let dir = tempfile::tempdir().unwrap();
    let p = plan(dir.path(), vec![entry("gf", "gf", Some(tiny_gf()))], vec![6]);
    harness::run(&p, &Registry::with_builtins(), 1).unwrap();
    std::fs::remove_file(dir.path().join("out/gf/unimodal/seed-6/checkpoint.json")).unwrap();
    let err = export_density_curves(&dir.path().join("out"), 10, &dir.path().join("c"), &Registry::with_builtins())
        .unwrap_err();
    match err {
        Error::MissingCheckpoint(name) => assert!(name.contains("seed-6"), "{name}"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn invalid_plans_fail_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let mut e = entry("w", "wgan", None);
    e.config_file = Some(dir.path().join("nope.json"));
    let p = plan(dir.path(), vec![entry("gf", "gf", Some(tiny_gf())), e], vec![1]);
    let err = harness::run(&p, &Registry::with_builtins(), 1).unwrap_err();
    assert!(err.is_validation());
    assert!(!dir.path().join("out").exists());

    let bad = plan(dir.path(), vec![entry("x", "flowgan", None)], vec![1]);
    assert!(matches!(
        harness::run(&bad, &Registry::with_builtins(), 1),
        Err(Error::UnknownModel(_))
    ));

    let mut cfg = tiny_wgan();
    cfg["n_critic"] = json!(0);
    let bad_cfg = plan(dir.path(), vec![entry("w", "wgan", Some(cfg))], vec![1]);
    assert!(harness::run(&bad_cfg, &Registry::with_builtins(), 1).unwrap_err().is_validation());
}

#[test]
fn plan_files_resolve_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("wgan.json"), tiny_wgan().to_string()).unwrap();
    let plan_json = json!({
        "datasets": ["unimodal"],
        "models": [{
            "name": "uniform prior",
            "model": "wgan",
            "config_file": "wgan.json",
            "overrides": {"prior": {"kind": "uniform"}}
        }],
        "seeds": [1],
        "output_dir": "results",
        "eval_samples": 1000,
        "grid": 50
    });
    let path = dir.path().join("plan.json");
    std::fs::write(&path, plan_json.to_string()).unwrap();
    let p = ExperimentPlan::load(&path).unwrap();
    let summary = harness::run(&p, &Registry::with_builtins(), 1).unwrap();
    assert_eq!(summary.models, vec!["uniform prior"]);
    let record = TrialRecord::read(&dir.path().join("results/uniform-prior/unimodal/seed-1/record.json")).unwrap();
    assert_eq!(record.config["prior"]["kind"], "uniform");
    assert_eq!(record.config["prior"]["dim"], 2);
}

/// A family whose training always errors, to exercise failure handling.
struct Broken;

impl ModelStrategy for Broken {
    fn name(&self) -> &'static str {
        "broken"
    }
    fn default_config(&self, _: &MixtureSpec) -> Value {
        json!({})
    }
    fn validate(&self, _: &Value) -> Result<()> {
        Ok(())
    }
    fn train(&self, _: &TrainRequest) -> Result<TrainOutcome> {
        Err(Error::Divergence { step: 7 })
    }
    fn resume(&self, r: &TrainRequest, _: Value) -> Result<TrainOutcome> {
        self.train(r)
    }
    fn load(&self, _: &Value) -> Result<Box<dyn FittedModel>> {
        Err(Error::UnknownModel("broken".into()))
    }
}

#[test]
fn failed_cells_show_as_failed() {
    let dir = tempfile::tempdir().unwrap();
    let mut registry = Registry::with_builtins();
    registry.register(Box::new(Broken));
    let p = plan(
        dir.path(),
        vec![entry("broken", "broken", None), entry("gf", "gf", Some(tiny_gf()))],
        vec![1, 2],
    );
    let summary = harness::run(&p, &registry, 2).unwrap();
    assert_eq!(summary.failed_cells(), 1);
    assert!(summary.cell("broken", "unimodal").unwrap().median_best_w1.is_none());
    assert!(summary.cell("gf", "unimodal").unwrap().median_best_w1.unwrap().is_finite());
    assert!(summary.to_string().contains("FAILED"));
    assert!(summary.to_csv().contains("broken,unimodal,FAILED"));
    let record = TrialRecord::read(&dir.path().join("out/broken/unimodal/seed-1/record.json")).unwrap();
    assert!(!record.status.is_ok());
    // Export skips runs that never produced a model.
    export_density_curves(&dir.path().join("out"), 10, &dir.path().join("c"), &registry).unwrap();
}

#[test]
fn wgan_records_carry_critic_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let p = plan(dir.path(), vec![entry("wgan", "wgan", Some(tiny_wgan()))], vec![3]);
    harness::run(&p, &Registry::with_builtins(), 1).unwrap();
    let record = TrialRecord::read(&dir.path().join("out/wgan/unimodal/seed-3/record.json")).unwrap();
    let report = diagnose_critic(&record).unwrap();
    assert_eq!(report.points.len(), record.history.len());
    assert!(report.median_ratio.is_some());
    let pooled = harness::diagnose_dir(&dir.path().join("out")).unwrap();
    assert_eq!(pooled.points.len(), report.points.len());
}
