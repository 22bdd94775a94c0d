//! Typed WGAN search space.

use serde::{Deserialize, Serialize};

use crate::diffnet::{Activation, AdamConfig, CyclicLr, InitScheme};
use crate::error::{Error, Result};
use crate::rng::{open01, StreamRng};
use crate::wgan::{Lipschitz, NetSpec, Prior, PriorKind, WganConfig};

/// Range sampled uniformly in log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogUniform {
    pub lo: f64,
    pub hi: f64,
}

impl LogUniform {
    pub fn validate(&self, name: &str) -> Result<()> {
        if !(self.lo > 0.0 && self.hi >= self.lo && self.hi.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "{name}: log-uniform range [{}, {}] must satisfy 0 < lo <= hi",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut StreamRng) -> f64 {
        let u = open01(rng);
        if self.lo == self.hi {
            return self.lo;
        }
        (self.lo.ln() + u * (self.hi.ln() - self.lo.ln())).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LipschitzKind {
    SpectralNorm,
    GradientPenalty,
}

/// Candidate values for every tunable WGAN setting. Categorical fields
/// are drawn uniformly; `lr` and `gp_lambda` are log-uniform. Generator
/// and critic draw their width, depth and activation independently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub activations: Vec<Activation>,
    pub widths: Vec<usize>,
    /// Number of hidden layers.
    pub depths: Vec<usize>,
    pub init: Vec<InitScheme>,
    pub prior_kind: Vec<PriorKind>,
    pub prior_dim: Vec<usize>,
    pub lipschitz: Vec<LipschitzKind>,
    pub gp_lambda: LogUniform,
    pub n_critic: Vec<u32>,
    pub lr: LogUniform,
    pub beta1: Vec<f64>,
    pub beta2: Vec<f64>,
    pub weight_decay: Vec<f64>,
    pub dropout: Vec<f64>,
    /// Generator batch norm.
    pub batch_norm: Vec<bool>,
    pub residual: Vec<bool>,
    /// Triangular cyclic learning rate between `lr` and `4·lr`.
    pub cyclic_lr: Vec<bool>,
    pub batch_size: Vec<usize>,
    /// Fixed (not searched) eval cadence and eval sample count.
    pub eval_every: u64,
    pub eval_samples: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            activations: vec![Activation::Relu, Activation::LeakyRelu, Activation::Tanh],
            widths: vec![64, 128, 256, 512],
            depths: vec![2, 3, 4, 5],
            init: vec![InitScheme::Uniform, InitScheme::Xavier],
            prior_kind: vec![PriorKind::Gaussian, PriorKind::Uniform],
            prior_dim: vec![1, 2, 4, 8, 16],
            lipschitz: vec![LipschitzKind::SpectralNorm, LipschitzKind::GradientPenalty],
            gp_lambda: LogUniform { lo: 0.1, hi: 100.0 },
            n_critic: vec![1, 5, 25, 100],
            lr: LogUniform { lo: 1e-5, hi: 1e-2 },
            beta1: vec![0.0, 0.5, 0.9],
            beta2: vec![0.9, 0.999],
            weight_decay: vec![0.0, 1e-4],
            dropout: vec![0.0, 0.1, 0.2],
            batch_norm: vec![false, true],
            residual: vec![false, true],
            cyclic_lr: vec![false, true],
            batch_size: vec![256],
            eval_every: 500,
            eval_samples: 100_000,
        }
    }
}

/// Period of the cyclic schedule, in optimizer steps.
pub const CYCLIC_PERIOD: u64 = 1_000;

fn pick<T: Copy>(values: &[T], rng: &mut StreamRng) -> T {
    let i = ((open01(rng) * values.len() as f64) as usize).min(values.len() - 1);
    values[i]
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let lens = [
            ("activations", self.activations.len()),
            ("widths", self.widths.len()),
            ("depths", self.depths.len()),
            ("init", self.init.len()),
            ("prior_kind", self.prior_kind.len()),
            ("prior_dim", self.prior_dim.len()),
            ("lipschitz", self.lipschitz.len()),
            ("n_critic", self.n_critic.len()),
            ("beta1", self.beta1.len()),
            ("beta2", self.beta2.len()),
            ("weight_decay", self.weight_decay.len()),
            ("dropout", self.dropout.len()),
            ("batch_norm", self.batch_norm.len()),
            ("residual", self.residual.len()),
            ("cyclic_lr", self.cyclic_lr.len()),
            ("batch_size", self.batch_size.len()),
        ];
        if let Some((name, _)) = lens.iter().find(|(_, n)| *n == 0) {
            return Err(Error::InvalidConfig(format!("search space field '{name}' is empty")));
        }
        self.lr.validate("lr")?;
        self.gp_lambda.validate("gp_lambda")?;
        if self.widths.contains(&0) || self.prior_dim.contains(&0) || self.n_critic.contains(&0) {
            return Err(Error::InvalidConfig("widths, prior_dim and n_critic must be >= 1".into()));
        }
        if self.eval_every == 0 || self.eval_samples == 0 || self.batch_size.contains(&0) {
            return Err(Error::InvalidConfig("eval_every, eval_samples and batch_size must be >= 1".into()));
        }
        Ok(())
    }

    fn net(&self, rng: &mut StreamRng) -> NetSpec {
        let width = pick(&self.widths, rng);
        let depth = pick(&self.depths, rng);
        NetSpec {
            hidden: vec![width; depth],
            activation: pick(&self.activations, rng),
            residual: false,
            dropout_rate: 0.0,
            batch_norm: false,
            init: pick(&self.init, rng),
        }
    }

    fn adam(&self, lr: f64, beta1: f64, beta2: f64, wd: f64, cyclic: bool) -> AdamConfig {
        AdamConfig {
            lr,
            beta1,
            beta2,
            weight_decay: wd,
            cyclic: cyclic.then_some(CyclicLr {
                base_lr: lr,
                max_lr: 4.0 * lr,
                period: CYCLIC_PERIOD,
            }),
            ..AdamConfig::default()
        }
    }

    /// Draws one configuration. Every field is drawn, in a fixed order,
    /// even when it ends up unused, so the stream position depends only on
    /// the number of draws. `budget` becomes `total_generator_steps`.
    pub fn sample(&self, rng: &mut StreamRng, budget: u64) -> WganConfig {
        let mut generator = self.net(rng);
        let mut critic = self.net(rng);
        let prior = Prior {
            kind: pick(&self.prior_kind, rng),
            dim: pick(&self.prior_dim, rng),
        };
        let lipschitz_kind = pick(&self.lipschitz, rng);
        let lambda = self.gp_lambda.sample(rng);
        let lipschitz = match lipschitz_kind {
            LipschitzKind::SpectralNorm => Lipschitz::SpectralNorm,
            LipschitzKind::GradientPenalty => Lipschitz::GradientPenalty { lambda },
        };
        let n_critic = pick(&self.n_critic, rng);
        let g_lr = self.lr.sample(rng);
        let c_lr = self.lr.sample(rng);
        let beta1 = pick(&self.beta1, rng);
        let beta2 = pick(&self.beta2, rng);
        let wd = pick(&self.weight_decay, rng);
        let dropout = pick(&self.dropout, rng);
        let batch_norm = pick(&self.batch_norm, rng);
        let residual = pick(&self.residual, rng);
        let cyclic = pick(&self.cyclic_lr, rng);
        let batch_size = pick(&self.batch_size, rng);
        // Dropout and batch norm apply to the generator only; residual
        // blocks apply to both networks.
        generator.dropout_rate = dropout;
        generator.batch_norm = batch_norm;
        generator.residual = residual;
        critic.residual = residual;
        WganConfig {
            prior,
            generator,
            critic,
            lipschitz,
            n_critic,
            batch_size,
            generator_optimizer: self.adam(g_lr, beta1, beta2, wd, cyclic),
            critic_optimizer: self.adam(c_lr, beta1, beta2, wd, cyclic),
            total_generator_steps: budget,
            eval_every: self.eval_every,
            eval_samples: self.eval_samples,
            standardize: true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn singleton() -> SearchSpace {
        SearchSpace {
            activations: vec![Activation::Tanh],
            widths: vec![32],
            depths: vec![2],
            init: vec![InitScheme::Xavier],
            prior_kind: vec![PriorKind::Uniform],
            prior_dim: vec![3],
            lipschitz: vec![LipschitzKind::GradientPenalty],
            gp_lambda: LogUniform { lo: 5.0, hi: 5.0 },
            n_critic: vec![5],
            lr: LogUniform { lo: 1e-4, hi: 1e-4 },
            beta1: vec![0.5],
            beta2: vec![0.9],
            weight_decay: vec![0.0],
            dropout: vec![0.0],
            batch_norm: vec![false],
            residual: vec![false],
            cyclic_lr: vec![false],
            batch_size: vec![64],
            eval_every: 100,
            eval_samples: 1000,
        }
    }

    #[test]
    fn degenerate_space_is_constant() {
        let space = singleton();
        let mut rng = stream(1, Stream::Search, 0);
        let first = space.sample(&mut rng, 100);
        for _ in 0..50 {
            assert_eq!(space.sample(&mut rng, 100), first);
        }
        first.validate().unwrap();
    }

    #[test]
    fn n_critic_is_uniform() {
        let space = SearchSpace::default();
        let mut rng = stream(2, Stream::Search, 0);
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            let c = space.sample(&mut rng, 10).n_critic;
            counts[[1, 5, 25, 100].iter().position(|&v| v == c).unwrap()] += 1;
        }
        for c in counts {
            assert!((c as f64 / 1e4 - 0.25).abs() < 0.02, "{counts:?}");
        }
    }

    #[test]
    fn log_uniform_median() {
        let space = SearchSpace::default();
        let mut rng = stream(3, Stream::Search, 0);
        let mut lrs: Vec<f64> = (0..10_000)
            .map(|_| space.sample(&mut rng, 10).generator_optimizer.lr)
            .collect();
        lrs.sort_by(f64::total_cmp);
        let median = lrs[5_000].log10();
        assert!((median + 3.5).abs() < 0.1, "median decade {median}");
        assert!(lrs[0] >= 1e-5 && lrs[9_999] <= 1e-2);
    }

    #[test]
    fn every_sample_validates() {
        let space = SearchSpace::default();
        let mut rng = stream(4, Stream::Search, 0);
        for _ in 0..2_000 {
            space.sample(&mut rng, 500).validate().unwrap();
        }
    }

    #[test]
    fn empty_field_is_rejected() {
        let space = SearchSpace {
            widths: vec![],
            ..SearchSpace::default()
        };
        assert!(space.validate().is_err());
    }
}
