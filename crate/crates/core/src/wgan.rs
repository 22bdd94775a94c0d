//! Wasserstein GAN training for univariate data.
//!
//! The generator maps prior draws to samples and the critic scores samples;
//! the critic is kept approximately 1-Lipschitz by either a gradient
//! penalty on real/fake interpolates or spectral normalization of its
//! weights. Both networks operate in standardized units: a fixed affine
//! map estimated from a pilot sample converts between data and network
//! coordinates, so the same architecture serves datasets of very
//! different location and scale.
//!
//! Every eval point records the direct W1 between fresh generator samples
//! and fresh data, and the critic's own W1 estimate on the same sets.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::diffnet::{
    Activation, AdamConfig, AdamState, DenseNet, InitScheme, Matrix, Mode, NetConfig, Tape,
};
use crate::error::{Error, Result};
use crate::metrics::{kde_bandwidth, kde_evaluate, w1_critic_values, w1_direct, KdeConfig};
use crate::record::{EvalPoint, TrialRecord};
use crate::registry::{FittedModel, ModelStrategy, TrainOutcome, TrainRequest};
use crate::rng::{self, open01, standard_normal, Stream, StreamRng};
use crate::synthdata::{DatasetHandle, MixtureSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    Gaussian,
    /// Uniform on `[-1, 1]` per coordinate.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prior {
    pub kind: PriorKind,
    pub dim: usize,
}

impl Prior {
    pub fn sample(&self, n: usize, rng: &mut StreamRng) -> Matrix {
        let data = (0..n * self.dim)
            .map(|_| match self.kind {
                PriorKind::Gaussian => standard_normal(rng),
                PriorKind::Uniform => 2.0 * open01(rng) - 1.0,
            })
            .collect();
        Matrix::from_vec(n, self.dim, data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Lipschitz {
    SpectralNorm,
    GradientPenalty { lambda: f64 },
}

/// Architecture of one network; input and output widths are implied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSpec {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub residual: bool,
    pub dropout_rate: f64,
    pub batch_norm: bool,
    pub init: InitScheme,
}

impl Default for NetSpec {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            activation: Activation::LeakyRelu,
            residual: false,
            dropout_rate: 0.0,
            batch_norm: false,
            init: InitScheme::Xavier,
        }
    }
}

impl NetSpec {
    fn net_config(&self, input_dim: usize, spectral_norm: bool) -> NetConfig {
        NetConfig {
            input_dim,
            hidden: self.hidden.clone(),
            output_dim: 1,
            activation: self.activation,
            residual: self.residual,
            dropout_rate: self.dropout_rate,
            batch_norm: self.batch_norm,
            spectral_norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WganConfig {
    pub prior: Prior,
    pub generator: NetSpec,
    pub critic: NetSpec,
    pub lipschitz: Lipschitz,
    /// Critic updates per generator update.
    pub n_critic: u32,
    pub batch_size: usize,
    pub generator_optimizer: AdamConfig,
    pub critic_optimizer: AdamConfig,
    pub total_generator_steps: u64,
    pub eval_every: u64,
    pub eval_samples: usize,
    /// Standardize data coordinates with a pilot-sample mean and standard
    /// deviation before they reach either network.
    pub standardize: bool,
}

impl Default for WganConfig {
    fn default() -> Self {
        let adam = AdamConfig {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
            ..AdamConfig::default()
        };
        Self {
            prior: Prior {
                kind: PriorKind::Gaussian,
                dim: 4,
            },
            generator: NetSpec::default(),
            critic: NetSpec::default(),
            lipschitz: Lipschitz::GradientPenalty { lambda: 10.0 },
            n_critic: 5,
            batch_size: 256,
            generator_optimizer: adam.clone(),
            critic_optimizer: adam,
            total_generator_steps: 20_000,
            eval_every: 500,
            eval_samples: 100_000,
            standardize: true,
        }
    }
}

impl WganConfig {
    pub fn validate(&self) -> Result<()> {
        if self.prior.dim == 0 {
            return Err(Error::InvalidConfig("prior dimension must be >= 1".into()));
        }
        if let Lipschitz::GradientPenalty { lambda } = self.lipschitz {
            if !(lambda > 0.0 && lambda.is_finite()) {
                return Err(Error::InvalidConfig(format!("gradient penalty lambda {lambda} must be > 0")));
            }
            if self.critic.batch_norm {
                return Err(Error::InvalidConfig(
                    "critic batch norm is incompatible with the gradient penalty".into(),
                ));
            }
        }
        if self.n_critic == 0 {
            return Err(Error::InvalidConfig("n_critic must be >= 1".into()));
        }
        if self.batch_size == 0 || self.eval_samples == 0 || self.eval_every == 0 {
            return Err(Error::InvalidConfig(
                "batch_size, eval_samples and eval_every must be >= 1".into(),
            ));
        }
        self.generator_config().validate()?;
        self.critic_config().validate()?;
        self.generator_optimizer.validate()?;
        self.critic_optimizer.validate()
    }

    pub fn generator_config(&self) -> NetConfig {
        self.generator.net_config(self.prior.dim, false)
    }

    pub fn critic_config(&self) -> NetConfig {
        self.critic
            .net_config(1, matches!(self.lipschitz, Lipschitz::SpectralNorm))
    }
}

/// Affine map between data and network coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub loc: f64,
    pub scale: f64,
}

impl Scaling {
    pub const IDENTITY: Scaling = Scaling { loc: 0.0, scale: 1.0 };

    pub fn to_net(&self, x: f64) -> f64 {
        (x - self.loc) / self.scale
    }

    pub fn to_data(&self, u: f64) -> f64 {
        self.loc + self.scale * u
    }
}

/// Critic objective `mean c(fake) - mean c(real) [+ λ·mean (‖∇c(x̂)‖ - 1)²]`
/// on explicit batches in network coordinates, with its parameter
/// gradient. `penalty` carries `λ` and one interpolation weight per pair
/// (`x̂ = ε·real + (1 - ε)·fake`).
pub fn critic_objective(
    critic: &DenseNet,
    real: &[f64],
    fake: &[f64],
    penalty: Option<(f64, &[f64])>,
    mode: &mut Mode<'_>,
) -> Result<(f64, Vec<Matrix>)> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut tape = Tape::new();
    let p = critic.bind(&mut tape);
    let xr = tape.leaf(Matrix::column(real));
    let xf = tape.leaf(Matrix::column(fake));
    let (cr, _) = critic.forward_on(&mut tape, &p, xr, mode)?;
    let (cf, _) = critic.forward_on(&mut tape, &p, xf, mode)?;
    let mr = tape.mean_all(cr);
    let mf = tape.mean_all(cf);
    let mut loss = tape.sub(mf, mr);
    if let Some((lambda, eps)) = penalty {
        if real.len() != fake.len() || eps.len() != real.len() {
            return Err(Error::DimensionMismatch {
                expected: real.len(),
                got: eps.len().min(fake.len()),
            });
        }
        let xh = tape.lerp(xr, xf, eps.to_vec());
        let (_, norm) = critic.forward_with_input_gradient_norm(&mut tape, &p, xh, mode)?;
        let dev = tape.add_scalar(norm, -1.0);
        let sq = tape.square(dev);
        let mean = tape.mean_all(sq);
        let pen = tape.scale(mean, lambda);
        loss = tape.add(loss, pen);
    }
    let value = tape.value(loss).item();
    let grads = tape.backward_scalar(loss)?;
    Ok((value, p.gradients(&grads, critic)))
}

/// Generator objective `-mean c(g(z))` with its gradient with respect to
/// the generator parameters only, plus the generator's batch statistics.
pub fn generator_objective(
    generator: &DenseNet,
    critic: &DenseNet,
    z: &Matrix,
    mode: &mut Mode<'_>,
) -> Result<(f64, Vec<Matrix>, crate::diffnet::BatchStats)> {
    let mut tape = Tape::new();
    let pg = generator.bind(&mut tape);
    let pc = critic.bind(&mut tape);
    let zv = tape.leaf(z.clone());
    let (fake, stats) = generator.forward_on(&mut tape, &pg, zv, mode)?;
    let (c, _) = critic.forward_on(&mut tape, &pc, fake, mode)?;
    let m = tape.mean_all(c);
    let loss = tape.scale(m, -1.0);
    let value = tape.value(loss).item();
    let grads = tape.backward_scalar(loss)?;
    Ok((value, pg.gradients(&grads, generator), stats))
}

/// A trained generator with its prior and output scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WganGenerator {
    pub prior: Prior,
    pub net: DenseNet,
    pub scaling: Scaling,
}

impl WganGenerator {
    pub fn sample(&self, n: usize, rng: &mut StreamRng) -> Result<Vec<f64>> {
        let z = self.prior.sample(n, rng);
        let out = self.net.predict(&z)?;
        Ok(out.data.iter().map(|&u| self.scaling.to_data(u)).collect())
    }
}

impl FittedModel for WganGenerator {
    fn sample(&self, n: usize, rng: &mut StreamRng) -> Result<Vec<f64>> {
        WganGenerator::sample(self, n, rng)
    }

    /// KDE of 10⁵ generator samples with the band-count bandwidth rule.
    fn density_curve(&self, grid: &[f64], seed: u64) -> Result<Vec<f64>> {
        let kde = KdeConfig::default();
        let mut rng = rng::stream(seed, Stream::Eval, u64::MAX);
        let samples = WganGenerator::sample(self, kde.sample_size, &mut rng)?;
        let h = kde_bandwidth(&samples, &kde)?;
        kde_evaluate(&samples, h, grid)
    }

    fn to_value(&self) -> Result<Value> {
        Ok(serde_json::to_value(self)?)
    }
}

/// Complete, resumable training state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub config: WganConfig,
    pub scaling: Scaling,
    pub generator: DenseNet,
    pub critic: DenseNet,
    pub generator_opt: AdamState,
    pub critic_opt: AdamState,
    pub generator_steps: u64,
    pub critic_steps: u64,
    pub critic_updates_since_generator: u32,
    pub data: DatasetHandle,
    /// Prior draws, interpolation weights and dropout masks.
    pub rng: StreamRng,
    pub record: TrialRecord,
    pub best: Option<WganGenerator>,
}

impl TrainState {
    pub fn new(config: WganConfig, spec: MixtureSpec, seed: u64) -> Result<Self> {
        config.validate()?;
        spec.validate()?;
        let scaling = if config.standardize {
            let mut pilot = DatasetHandle::new(spec.clone(), rng::derive_seed(seed, Stream::Init, 1));
            let xs = pilot.sample(10_000);
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            if sd <= 0.0 {
                return Err(Error::ZeroVariance);
            }
            Scaling { loc: mean, scale: sd }
        } else {
            Scaling::IDENTITY
        };
        let generator = DenseNet::init(
            config.generator_config(),
            config.generator.init,
            rng::derive_seed(seed, Stream::Init, 2),
        )?;
        let critic = DenseNet::init(
            config.critic_config(),
            config.critic.init,
            rng::derive_seed(seed, Stream::Init, 3),
        )?;
        let generator_opt = AdamState::new(config.generator_optimizer.clone(), &generator.params());
        let critic_opt = AdamState::new(config.critic_optimizer.clone(), &critic.params());
        let record = TrialRecord::new("wgan", serde_json::to_value(&config)?, seed, spec.clone());
        Ok(Self {
            scaling,
            generator,
            critic,
            generator_opt,
            critic_opt,
            generator_steps: 0,
            critic_steps: 0,
            critic_updates_since_generator: 0,
            data: DatasetHandle::new(spec, seed),
            rng: rng::stream(seed, Stream::Train, 0),
            record,
            best: None,
            config,
        })
    }

    pub fn current_generator(&self) -> WganGenerator {
        WganGenerator {
            prior: self.config.prior,
            net: self.generator.clone(),
            scaling: self.scaling,
        }
    }

    /// One critic step against `real` (data coordinates) and a fresh fake
    /// batch of the same size. Returns the critic loss.
    pub fn critic_update(&mut self, real: &[f64]) -> Result<f64> {
        if real.is_empty() {
            return Err(Error::EmptySamples);
        }
        let n = real.len();
        let z = self.config.prior.sample(n, &mut self.rng);
        let fake = {
            let mut mode = Mode::Train(&mut self.rng);
            let pass = self.generator.forward(&z, &mut mode)?;
            pass.output_value().data.clone()
        };
        let real_u: Vec<f64> = real.iter().map(|&x| self.scaling.to_net(x)).collect();
        let next = self.critic_steps + 1;
        let penalty_eps: Option<Vec<f64>> = match self.config.lipschitz {
            Lipschitz::GradientPenalty { .. } => Some((0..n).map(|_| open01(&mut self.rng)).collect()),
            Lipschitz::SpectralNorm => {
                self.critic.refresh_spectral(1);
                None
            }
        };
        let penalty = match (self.config.lipschitz, &penalty_eps) {
            (Lipschitz::GradientPenalty { lambda }, Some(eps)) => Some((lambda, eps.as_slice())),
            _ => None,
        };
        let (loss, grads) = critic_objective(
            &self.critic,
            &real_u,
            &fake,
            penalty,
            &mut Mode::Train(&mut self.rng),
        )?;
        if !loss.is_finite() {
            return Err(Error::Divergence { step: self.generator_steps + 1 });
        }
        self.critic_opt
            .step(&mut self.critic.params_mut(), &grads)
            .map_err(|e| match e {
                Error::Divergence { .. } => Error::Divergence { step: self.generator_steps + 1 },
                other => other,
            })?;
        self.critic_steps = next;
        self.critic_updates_since_generator += 1;
        Ok(loss)
    }

    /// One generator step on a fresh prior batch. Requires `n_critic`
    /// critic updates since the previous generator update.
    pub fn generator_update(&mut self) -> Result<f64> {
        if self.critic_updates_since_generator < self.config.n_critic {
            return Err(Error::Precondition(format!(
                "{} critic updates since the last generator update, {} required",
                self.critic_updates_since_generator, self.config.n_critic
            )));
        }
        let next = self.generator_steps + 1;
        let z = self.config.prior.sample(self.config.batch_size, &mut self.rng);
        let (loss, grads, stats) =
            generator_objective(&self.generator, &self.critic, &z, &mut Mode::Train(&mut self.rng))?;
        if !loss.is_finite() {
            return Err(Error::Divergence { step: next });
        }
        self.generator_opt
            .step(&mut self.generator.params_mut(), &grads)
            .map_err(|e| match e {
                Error::Divergence { .. } => Error::Divergence { step: next },
                other => other,
            })?;
        self.generator.update_running_stats(&stats);
        self.generator_steps = next;
        self.critic_updates_since_generator = 0;
        Ok(loss)
    }

    /// `n_critic` critic updates on fresh data followed by one generator
    /// update. Returns the generator loss.
    pub fn train_step(&mut self) -> Result<f64> {
        for _ in self.critic_updates_since_generator..self.config.n_critic {
            let real = self.data.sample(self.config.batch_size);
            self.critic_update(&real)?;
        }
        self.generator_update()
    }

    /// Critic values in data-unit scale: the critic sees standardized
    /// inputs, so `scale · c(x)` is the witness function in data units.
    fn critic_values(&self, xs: &[f64]) -> Result<Vec<f64>> {
        let u: Vec<f64> = xs.iter().map(|&x| self.scaling.to_net(x)).collect();
        let out = self.critic.predict(&Matrix::column(&u))?;
        Ok(out.data.iter().map(|c| self.scaling.scale * c).collect())
    }

    /// Metrics at the current generator step.
    pub fn evaluate(&self) -> Result<EvalPoint> {
        let step = self.generator_steps;
        let n = self.config.eval_samples;
        let seed = self.record.seed;
        let mut rng = rng::stream(seed, Stream::Eval, step);
        let fake = self.current_generator().sample(n, &mut rng)?;
        let real = DatasetHandle::eval_batch(&self.record.dataset, seed, step, n);
        let true_w1 = w1_direct(&fake, &real)?;
        let c_real = self.critic_values(&real)?;
        let c_fake = self.critic_values(&fake)?;
        let critic_w1 = w1_critic_values(&c_real, &c_fake)?;
        let loss = -c_fake.iter().sum::<f64>() / (n as f64 * self.scaling.scale);
        Ok(EvalPoint {
            step,
            true_w1,
            critic_w1: Some(critic_w1),
            loss,
        })
    }

    fn eval_point(&mut self) -> Result<()> {
        let step = self.generator_steps;
        if self.record.history.last().is_some_and(|p| p.step == step) {
            return Ok(());
        }
        let point = self.evaluate()?;
        let finite = point.true_w1.is_finite()
            && point.loss.is_finite()
            && point.critic_w1.is_some_and(f64::is_finite);
        if !finite {
            return Err(Error::Divergence { step });
        }
        let improved = self.record.best_w1.is_none_or(|b| point.true_w1 < b);
        self.record.push_eval(point);
        if improved {
            self.best = Some(self.current_generator());
        }
        Ok(())
    }

    /// Trains to `budget` generator steps, evaluating at step 0, every
    /// `eval_every` steps and at the end. Failures end up in the record's
    /// status; the history keeps the last finite metrics.
    pub fn run_to(&mut self, budget: u64) {
        let started = Instant::now();
        let result = (|| -> Result<()> {
            self.eval_point()?;
            while self.generator_steps < budget {
                self.train_step()?;
                if self.generator_steps % self.config.eval_every == 0 {
                    self.eval_point()?;
                }
            }
            self.eval_point()
        })();
        if let Err(e) = result {
            let step = match &e {
                Error::Divergence { step } => *step,
                _ => self.generator_steps,
            };
            log::warn!("WGAN training failed: {e}");
            self.record.fail(e.to_string(), Some(step));
        }
        self.record.steps = self.generator_steps;
        self.record.wall_clock_secs += started.elapsed().as_secs_f64();
    }
}

/// Registry entry for WGANs (`"wgan"`).
pub struct WganStrategy;

impl WganStrategy {
    pub fn parse(config: &Value) -> Result<WganConfig> {
        let cfg: WganConfig = serde_json::from_value(config.clone())
            .map_err(|e| Error::InvalidConfig(format!("wgan config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn finish(state: TrainState) -> Result<TrainOutcome> {
        Ok(TrainOutcome {
            record: state.record.clone(),
            best: state.best.clone().map(|g| Box::new(g) as Box<dyn FittedModel>),
            state: serde_json::to_value(&state)?,
        })
    }
}

impl ModelStrategy for WganStrategy {
    fn name(&self) -> &'static str {
        "wgan"
    }

    fn default_config(&self, _dataset: &MixtureSpec) -> Value {
        serde_json::to_value(WganConfig::default()).expect("config serializes")
    }

    fn validate(&self, config: &Value) -> Result<()> {
        Self::parse(config).map(|_| ())
    }

    fn train(&self, request: &TrainRequest) -> Result<TrainOutcome> {
        let mut cfg = Self::parse(&request.config)?;
        if let Some(n) = request.eval_samples {
            cfg.eval_samples = n;
        }
        let budget = request.budget.unwrap_or(cfg.total_generator_steps);
        let mut state = TrainState::new(cfg, request.dataset.clone(), request.seed)?;
        state.run_to(budget);
        Self::finish(state)
    }

    fn resume(&self, request: &TrainRequest, state: Value) -> Result<TrainOutcome> {
        let mut state: TrainState = serde_json::from_value(state)?;
        let budget = request.budget.unwrap_or(state.config.total_generator_steps);
        if state.record.status.is_ok() {
            state.run_to(budget);
        }
        Self::finish(state)
    }

    fn load(&self, model: &Value) -> Result<Box<dyn FittedModel>> {
        let g: WganGenerator = serde_json::from_value(model.clone())?;
        g.net.config.validate()?;
        Ok(Box::new(g))
    }
}
