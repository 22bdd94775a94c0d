//! One-dimensional Gaussianization flows.
//!
//! Each layer maps `x ↦ probit(F(x))`, where `F` is the CDF of a mixture
//! of logistic distributions. Layers are strictly increasing, so a stack of
//! them is a bijection onto (a clamped part of) the real line with an exact
//! change-of-variables density. Training maximizes the mean log density of
//! fresh minibatches with Adam; gradients come from the [`diffnet`] tape.
//!
//! [`diffnet`]: crate::diffnet

use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::diffnet::{clamped_probit, mix_eval, AdamConfig, AdamState, Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::metrics::w1_direct;
use crate::record::{EvalPoint, TrialRecord};
use crate::registry::{FittedModel, ModelStrategy, TrainOutcome, TrainRequest};
use crate::rng::{self, open01, Stream, StreamRng};
use crate::special::{normal_log_pdf, probit, softmax};
use crate::synthdata::{DatasetHandle, MixtureSpec};

/// Bracket expansion limit for layer inversion.
pub const INVERSION_LIMIT: f64 = 1e6;

/// Logistic-mixture CDF followed by the probit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussLayer {
    /// Unnormalized mixture logits.
    pub logits: Vec<f64>,
    pub means: Vec<f64>,
    pub log_scales: Vec<f64>,
}

/// Output of one layer at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerMap {
    pub z: f64,
    /// `ln dz/dx`
    pub log_deriv: f64,
    pub clamped: bool,
}

impl GaussLayer {
    pub fn new(logits: Vec<f64>, means: Vec<f64>, log_scales: Vec<f64>) -> Result<Self> {
        let layer = Self {
            logits,
            means,
            log_scales,
        };
        layer.validate()?;
        Ok(layer)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.logits.len();
        if k == 0 || self.means.len() != k || self.log_scales.len() != k {
            return Err(Error::InvalidConfig(format!(
                "layer parameter lengths {}/{}/{} must be equal and nonzero",
                k,
                self.means.len(),
                self.log_scales.len()
            )));
        }
        let all = self.logits.iter().chain(&self.means).chain(&self.log_scales);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite layer parameter".into()));
        }
        Ok(())
    }

    pub fn components(&self) -> usize {
        self.logits.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        softmax(&self.logits)
    }

    fn map_with(&self, w: &[f64], x: f64) -> LayerMap {
        let e = mix_eval(x, w, &self.means, &self.log_scales);
        let (z, clamped) = clamped_probit(e.cdf, e.sf);
        LayerMap {
            z,
            log_deriv: e.log_pdf - normal_log_pdf(z),
            clamped,
        }
    }

    pub fn map(&self, x: f64) -> LayerMap {
        self.map_with(&self.weights(), x)
    }

    /// Solves `map(x).z = z` by bracketing and safeguarded Newton steps.
    fn invert_with(&self, w: &[f64], z: f64) -> Result<f64> {
        let spread = self.log_scales.iter().copied().fold(f64::NEG_INFINITY, f64::max).exp();
        let centre: f64 = w.iter().zip(&self.means).map(|(wi, m)| wi * m).sum();
        let mut step = 4.0 * spread.max(1e-8);
        let (mut lo, mut hi) = (centre - step, centre + step);
        while self.map_with(w, lo).z > z {
            step *= 2.0;
            lo = centre - step;
            if lo < -INVERSION_LIMIT {
                return Err(Error::InversionBracket);
            }
        }
        step = 4.0 * spread.max(1e-8);
        while self.map_with(w, hi).z < z {
            step *= 2.0;
            hi = centre + step;
            if hi > INVERSION_LIMIT {
                return Err(Error::InversionBracket);
            }
        }
        // Newton with bisection fallback whenever the step leaves the
        // bracket or fails to halve the previous step.
        let mut x = centre.clamp(lo, hi);
        let mut prev_step = hi - lo;
        let mut step = prev_step;
        for _ in 0..400 {
            let m = self.map_with(w, x);
            let h = m.z - z;
            if h == 0.0 {
                return Ok(x);
            }
            if h > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let deriv = m.log_deriv.exp();
            let newton = x - h / deriv;
            let next = if !(newton > lo && newton < hi) || (2.0 * h).abs() > (prev_step * deriv).abs() {
                prev_step = step;
                step = 0.5 * (hi - lo);
                lo + step
            } else {
                prev_step = step;
                step = h / deriv;
                newton
            };
            let scale = x.abs().max(1.0);
            if (h.abs() <= 1e-13 && step.abs() <= 1e-13 * scale) || hi - lo <= 4.0 * f64::EPSILON * scale {
                return Ok(next);
            }
            x = next;
        }
        Ok(x)
    }

    pub fn invert(&self, z: f64) -> Result<f64> {
        self.invert_with(&self.weights(), z)
    }
}

/// Forward pass result for a whole model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowForward {
    pub z: f64,
    pub log_det: f64,
    /// Layers whose CDF was clamped at this point.
    pub clamped: usize,
}

/// Stack of Gaussianization layers, applied first to last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussFlowModel {
    pub layers: Vec<GaussLayer>,
}

impl GaussFlowModel {
    pub fn new(layers: Vec<GaussLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("a flow needs at least one layer".into()));
        }
        for l in &layers {
            l.validate()?;
        }
        Ok(Self { layers })
    }

    /// Random model for tests and property checks.
    ///
    /// The first layer is arbitrary: means in [-3, 3], log-scales in
    /// [-1.5, 0.5], logits in [-1, 1]. Deeper layers are random
    /// perturbations of the near-identity layer used at initialization
    /// (means jittered by up to a quarter gap, scales shrunk by up to 25%).
    /// Arbitrary deeper layers are avoided on purpose: logistic tails are
    /// heavier than Gaussian ones, so a wide component in a deep layer maps
    /// the clamped range of the previous layer onto a much narrower band
    /// and the model loses visible probability mass.
    pub fn random(depth: usize, components: usize, rng: &mut StreamRng) -> Self {
        let mut u = |lo: f64, hi: f64| lo + (hi - lo) * open01(rng);
        let mut layers = Vec::with_capacity(depth);
        for i in 0..depth {
            let k = components;
            let layer = if i == 0 {
                GaussLayer {
                    logits: (0..k).map(|_| u(-1.0, 1.0)).collect(),
                    means: (0..k).map(|_| u(-3.0, 3.0)).collect(),
                    log_scales: (0..k).map(|_| u(-1.5, 0.5)).collect(),
                }
            } else {
                let base = quantile_layer(k, probit, 1.0);
                let gap = base.log_scales[0].exp();
                GaussLayer {
                    logits: (0..k).map(|_| u(-0.5, 0.5)).collect(),
                    means: base.means.iter().map(|m| m + u(-0.25, 0.25) * gap).collect(),
                    log_scales: base.log_scales.iter().map(|l| l + u(-0.29, 0.0)).collect(),
                }
            };
            layers.push(layer);
        }
        Self { layers }
    }

    /// Data-driven initialization.
    ///
    /// The first layer places one component at each of `K` evenly spaced
    /// quantiles of the pilot sample with a common scale equal to the mean
    /// gap between neighbouring quantiles, so its CDF tracks the empirical
    /// CDF. Deeper layers use the same recipe against standard-normal
    /// quantiles, which makes them close to the identity on [-3, 3] while
    /// keeping the components distinct.
    pub fn init_from_data(depth: usize, components: usize, pilot: &[f64]) -> Result<Self> {
        if depth == 0 || components == 0 {
            return Err(Error::InvalidConfig("depth and components must be >= 1".into()));
        }
        if pilot.len() < 2 {
            return Err(Error::TooFewSamples {
                n: pilot.len(),
                target: 2,
            });
        }
        let mut sorted = pilot.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let quantile = |level: f64| {
            let pos = level * (n - 1) as f64;
            let i = (pos.floor() as usize).min(n - 2);
            let frac = pos - i as f64;
            sorted[i] + frac * (sorted[i + 1] - sorted[i])
        };
        let mean = sorted.iter().sum::<f64>() / n as f64;
        let sd = (sorted.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        if sd <= 0.0 {
            return Err(Error::ZeroVariance);
        }
        let first = quantile_layer(components, quantile, sd);
        let gauss = quantile_layer(components, probit, 1.0);
        let mut layers = vec![first];
        layers.extend(std::iter::repeat_n(gauss, depth - 1));
        Ok(Self { layers })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| 3 * l.components()).sum()
    }

    fn weights(&self) -> Vec<Vec<f64>> {
        self.layers.iter().map(|l| l.weights()).collect()
    }

    fn forward_with(&self, w: &[Vec<f64>], x: f64) -> FlowForward {
        let mut out = FlowForward {
            z: x,
            log_det: 0.0,
            clamped: 0,
        };
        for (layer, wl) in self.layers.iter().zip(w) {
            let m = layer.map_with(wl, out.z);
            out.z = m.z;
            out.log_det += m.log_deriv;
            out.clamped += usize::from(m.clamped);
        }
        out
    }

    pub fn forward(&self, x: f64) -> FlowForward {
        self.forward_with(&self.weights(), x)
    }

    pub fn log_density(&self, x: f64) -> f64 {
        let f = self.forward(x);
        normal_log_pdf(f.z) + f.log_det
    }

    pub fn log_density_many(&self, xs: &[f64]) -> Vec<f64> {
        let w = self.weights();
        xs.iter()
            .map(|&x| {
                let f = self.forward_with(&w, x);
                normal_log_pdf(f.z) + f.log_det
            })
            .collect()
    }

    pub fn invert(&self, z: f64) -> Result<f64> {
        self.invert_with(&self.weights(), z)
    }

    fn invert_with(&self, w: &[Vec<f64>], z: f64) -> Result<f64> {
        let mut x = z;
        for (layer, wl) in self.layers.iter().zip(w).rev() {
            x = layer.invert_with(wl, x)?;
        }
        Ok(x)
    }

    /// Draws `n` samples by inverting standard-normal draws.
    pub fn sample(&self, n: usize, rng: &mut StreamRng) -> Result<Vec<f64>> {
        let w = self.weights();
        (0..n)
            .map(|_| self.invert_with(&w, probit(open01(rng))))
            .collect()
    }

    /// Mean log density of `xs` and its gradient with respect to every
    /// layer parameter, as `[logits, means, log_scales]` per layer.
    pub fn mean_log_likelihood_grad(&self, xs: &[f64]) -> Result<LikelihoodGrad> {
        if xs.is_empty() {
            return Err(Error::EmptySamples);
        }
        let mut tape = Tape::new();
        let leaves: Vec<[Var; 3]> = self
            .layers
            .iter()
            .map(|l| {
                let k = l.components();
                [
                    tape.leaf(Matrix::from_vec(1, k, l.logits.clone())),
                    tape.leaf(Matrix::from_vec(1, k, l.means.clone())),
                    tape.leaf(Matrix::from_vec(1, k, l.log_scales.clone())),
                ]
            })
            .collect();
        let mut x = tape.leaf(Matrix::column(xs));
        let mut total: Option<Var> = None;
        let mut clamped = 0;
        let last = leaves.len() - 1;
        for (i, &[l, m, s]) in leaves.iter().enumerate() {
            let lp = tape.mix_log_pdf(x, l, m, s);
            let (z, c) = tape.mix_probit(x, l, m, s);
            clamped += c;
            let mut term = lp;
            if i < last {
                // The final layer's normal log-density cancels against the
                // base density, so only intermediate layers contribute it.
                let nz = tape.normal_log_pdf(z);
                term = tape.sub(lp, nz);
            }
            total = Some(match total {
                Some(t) => tape.add(t, term),
                None => term,
            });
            x = z;
        }
        let total = total.expect("at least one layer");
        let mean = tape.mean_all(total);
        let value = tape.value(mean).item();
        let grads = tape.backward_scalar(mean)?;
        let per_layer = leaves
            .iter()
            .zip(&self.layers)
            .map(|(vars, layer)| {
                let like = Matrix::zeros(1, layer.components());
                vars.map(|v| grads.get_or_zeros(v, &like).data)
            })
            .collect();
        Ok(LikelihoodGrad {
            mean_log_likelihood: value,
            grads: per_layer,
            clamped,
        })
    }

    fn params(&self) -> Vec<Matrix> {
        self.layers
            .iter()
            .flat_map(|l| {
                let k = l.components();
                [
                    Matrix::from_vec(1, k, l.logits.clone()),
                    Matrix::from_vec(1, k, l.means.clone()),
                    Matrix::from_vec(1, k, l.log_scales.clone()),
                ]
            })
            .collect()
    }

    fn set_params(&mut self, params: Vec<Matrix>) {
        let mut it = params.into_iter();
        for l in &mut self.layers {
            l.logits = it.next().expect("param count").data;
            l.means = it.next().expect("param count").data;
            l.log_scales = it.next().expect("param count").data;
        }
    }
}

fn quantile_layer(components: usize, quantile: impl Fn(f64) -> f64, fallback_scale: f64) -> GaussLayer {
    let k = components;
    let means: Vec<f64> = (0..k).map(|j| quantile((j as f64 + 0.5) / k as f64)).collect();
    let scale = if k >= 2 {
        (means[k - 1] - means[0]) / (k - 1) as f64
    } else {
        // Logistic scale with the same variance as the reference.
        fallback_scale * 3f64.sqrt() / std::f64::consts::PI
    };
    let scale = if scale > 0.0 { scale } else { fallback_scale.max(1e-6) };
    GaussLayer {
        logits: vec![0.0; k],
        means,
        log_scales: vec![scale.ln(); k],
    }
}

/// Mean log-likelihood with its parameter gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodGrad {
    pub mean_log_likelihood: f64,
    /// Per layer: `[d/d logits, d/d means, d/d log_scales]`.
    pub grads: Vec<[Vec<f64>; 3]>,
    /// Clamped CDF evaluations across all layers and points.
    pub clamped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaussFlowConfig {
    pub depth: usize,
    pub components: usize,
    pub batch_size: usize,
    pub steps: u64,
    pub eval_every: u64,
    pub eval_samples: usize,
    /// Size of the pilot batch used for initialization.
    pub pilot_samples: usize,
    pub optimizer: AdamConfig,
}

impl Default for GaussFlowConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            components: 32,
            batch_size: 512,
            steps: 10_000,
            eval_every: 1_000,
            eval_samples: 100_000,
            pilot_samples: 10_000,
            optimizer: AdamConfig::default(),
        }
    }
}

impl GaussFlowConfig {
    /// Defaults sized for the dataset family.
    pub fn for_dataset(spec: &MixtureSpec) -> Self {
        match spec {
            MixtureSpec::Unimodal(_) => Self::default(),
            MixtureSpec::Multimodal(_) => Self {
                depth: 4,
                components: 64,
                ..Self::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::InvalidConfig("depth must be >= 1".into()));
        }
        if self.components < 2 {
            return Err(Error::InvalidConfig("components must be >= 2".into()));
        }
        if self.batch_size == 0 || self.eval_samples == 0 || self.pilot_samples < 2 {
            return Err(Error::InvalidConfig(
                "batch_size and eval_samples must be >= 1, pilot_samples >= 2".into(),
            ));
        }
        if self.eval_every == 0 {
            return Err(Error::InvalidConfig("eval_every must be >= 1".into()));
        }
        self.optimizer.validate()
    }
}

/// Minibatch maximum-likelihood trainer. Owns the model, the optimizer and
/// the training data stream, and serializes as a whole for resumption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussFlowTrainer {
    pub model: GaussFlowModel,
    pub optimizer: AdamState,
    pub step: u64,
    pub batch_size: usize,
    pub data: DatasetHandle,
    /// Total clamped CDF evaluations seen during training.
    pub clamped: u64,
}

impl GaussFlowTrainer {
    pub fn new(model: GaussFlowModel, optimizer: AdamConfig, batch_size: usize, data: DatasetHandle) -> Self {
        let params = model.params();
        let refs: Vec<&Matrix> = params.iter().collect();
        Self {
            optimizer: AdamState::new(optimizer, &refs),
            model,
            step: 0,
            batch_size,
            data,
            clamped: 0,
        }
    }

    /// One Adam step on a fresh minibatch. Returns the minibatch mean
    /// log-likelihood before the update.
    pub fn step(&mut self) -> Result<f64> {
        let batch = self.data.sample(self.batch_size);
        let lg = self.model.mean_log_likelihood_grad(&batch)?;
        let next = self.step + 1;
        if !lg.mean_log_likelihood.is_finite() {
            return Err(Error::Divergence { step: next });
        }
        self.clamped += lg.clamped as u64;
        // Ascend the likelihood: Adam minimizes, so negate.
        let grads: Vec<Matrix> = lg
            .grads
            .iter()
            .flat_map(|layer| layer.iter().map(|g| Matrix::from_vec(1, g.len(), g.iter().map(|v| -v).collect())))
            .collect();
        let mut params = self.model.params();
        {
            let mut refs: Vec<&mut Matrix> = params.iter_mut().collect();
            self.optimizer.step(&mut refs, &grads)?;
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence { step: next });
        }
        self.model.set_params(params);
        self.step = next;
        Ok(lg.mean_log_likelihood)
    }
}

/// Resumable state of a flow training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GfRunState {
    pub config: GaussFlowConfig,
    pub trainer: GaussFlowTrainer,
    pub record: TrialRecord,
    pub best: Option<GaussFlowModel>,
    /// Negative minibatch log-likelihood of the latest step, if any.
    pub last_loss: Option<f64>,
}

/// Samples the model and fresh data for the eval point at `step`.
fn evaluate(model: &GaussFlowModel, spec: &MixtureSpec, seed: u64, step: u64, n: usize) -> Result<(f64, f64)> {
    let mut rng = rng::stream(seed, Stream::Eval, step);
    let samples = model.sample(n, &mut rng)?;
    let data = DatasetHandle::eval_batch(spec, seed, step, n);
    let w1 = w1_direct(&samples, &data)?;
    let probe = &data[..n.min(10_000)];
    let nll = -model.log_density_many(probe).iter().sum::<f64>() / probe.len() as f64;
    Ok((w1, nll))
}

impl GfRunState {
    pub fn start(config: GaussFlowConfig, spec: MixtureSpec, seed: u64) -> Result<Self> {
        config.validate()?;
        spec.validate()?;
        let mut pilot_data = DatasetHandle::new(spec.clone(), rng::derive_seed(seed, Stream::Init, 0));
        let pilot = pilot_data.sample(config.pilot_samples);
        let model = GaussFlowModel::init_from_data(config.depth, config.components, &pilot)?;
        let trainer = GaussFlowTrainer::new(
            model,
            config.optimizer.clone(),
            config.batch_size,
            DatasetHandle::new(spec.clone(), seed),
        );
        let cfg_value = serde_json::to_value(&config)?;
        Ok(Self {
            record: TrialRecord::new("gf", cfg_value, seed, spec),
            config,
            trainer,
            best: None,
            last_loss: None,
        })
    }

    fn eval_point(&mut self) -> Result<()> {
        let step = self.trainer.step;
        if self.record.history.last().is_some_and(|p| p.step == step) {
            return Ok(());
        }
        let (w1, nll) = evaluate(
            &self.trainer.model,
            &self.record.dataset,
            self.record.seed,
            step,
            self.config.eval_samples,
        )?;
        if !(w1.is_finite() && nll.is_finite()) {
            return Err(Error::Divergence { step });
        }
        let improved = self.record.best_w1.is_none_or(|b| w1 < b);
        self.record.push_eval(EvalPoint {
            step,
            true_w1: w1,
            critic_w1: None,
            loss: nll,
        });
        if improved {
            self.best = Some(self.trainer.model.clone());
        }
        Ok(())
    }

    /// Trains up to `budget` total steps, evaluating at step 0, every
    /// `eval_every` steps, and at the end. Divergence is recorded in the
    /// trial status.
    pub fn run_to(&mut self, budget: u64) {
        let started = Instant::now();
        let result = (|| -> Result<()> {
            self.eval_point()?;
            while self.trainer.step < budget {
                self.last_loss = Some(-self.trainer.step()?);
                if self.trainer.step % self.config.eval_every == 0 {
                    self.eval_point()?;
                }
            }
            self.eval_point()
        })();
        if let Err(e) = result {
            let step = match &e {
                Error::Divergence { step } => Some(*step),
                _ => Some(self.trainer.step),
            };
            log::warn!("flow training failed: {e}");
            self.record.fail(e.to_string(), step);
        }
        self.record.steps = self.trainer.step;
        self.record.wall_clock_secs += started.elapsed().as_secs_f64();
    }
}

impl FittedModel for GaussFlowModel {
    fn sample(&self, n: usize, rng: &mut StreamRng) -> Result<Vec<f64>> {
        GaussFlowModel::sample(self, n, rng)
    }

    fn density_curve(&self, grid: &[f64], _seed: u64) -> Result<Vec<f64>> {
        Ok(self.log_density_many(grid).into_iter().map(f64::exp).collect())
    }

    fn to_value(&self) -> Result<Value> {
        Ok(serde_json::to_value(self)?)
    }
}

/// Registry entry for Gaussianization flows (`"gf"`).
pub struct GaussFlowStrategy;

impl GaussFlowStrategy {
    fn parse(config: &Value) -> Result<GaussFlowConfig> {
        let cfg: GaussFlowConfig =
            serde_json::from_value(config.clone()).map_err(|e| Error::InvalidConfig(format!("gf config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn finish(state: GfRunState) -> Result<TrainOutcome> {
        let record = state.record.clone();
        let best = state.best.clone().map(|m| Box::new(m) as Box<dyn FittedModel>);
        Ok(TrainOutcome {
            record,
            best,
            state: serde_json::to_value(&state)?,
        })
    }
}

impl ModelStrategy for GaussFlowStrategy {
    fn name(&self) -> &'static str {
        "gf"
    }

    fn default_config(&self, dataset: &MixtureSpec) -> Value {
        serde_json::to_value(GaussFlowConfig::for_dataset(dataset)).expect("config serializes")
    }

    fn validate(&self, config: &Value) -> Result<()> {
        Self::parse(config).map(|_| ())
    }

    fn train(&self, request: &TrainRequest) -> Result<TrainOutcome> {
        let mut cfg = Self::parse(&request.config)?;
        if let Some(n) = request.eval_samples {
            cfg.eval_samples = n;
        }
        let budget = request.budget.unwrap_or(cfg.steps);
        let mut state = GfRunState::start(cfg, request.dataset.clone(), request.seed)?;
        state.run_to(budget);
        Self::finish(state)
    }

    fn resume(&self, request: &TrainRequest, state: Value) -> Result<TrainOutcome> {
        let mut state: GfRunState = serde_json::from_value(state)?;
        let budget = request.budget.unwrap_or(state.config.steps);
        if state.record.status.is_ok() {
            state.run_to(budget);
        }
        Self::finish(state)
    }

    fn load(&self, model: &Value) -> Result<Box<dyn FittedModel>> {
        let m: GaussFlowModel = serde_json::from_value(model.clone())?;
        let m = GaussFlowModel::new(m.layers)?;
        Ok(Box::new(m))
    }
}
