//! Synthetic univariate mixture datasets.
//!
//! Two families are provided. The unimodal family mixes a uniform and a
//! Gaussian component sharing one mean; the multimodal family averages `k`
//! unimodal mixtures centred at distinct means. Both come with ancestral
//! samplers and closed-form densities and CDFs, and data is always drawn
//! fresh from a seeded [`DatasetHandle`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, open01, StreamRng};
use crate::special::{normal_cdf, normal_pdf, probit};

/// Uniform-plus-Gaussian mixture with a common mean.
///
/// `p` is the weight of the uniform component on `[mu - r*sigma, mu + r*sigma]`;
/// the Gaussian `N(mu, sigma^2)` carries the remaining `1 - p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnimodalSpec {
    pub p: f64,
    pub mu: f64,
    pub sigma: f64,
    pub r: f64,
}

impl Default for UnimodalSpec {
    fn default() -> Self {
        Self {
            p: 0.75,
            mu: 5.0,
            sigma: 0.1,
            r: 5.0,
        }
    }
}

impl UnimodalSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::InvalidSpec(format!("p = {} outside [0, 1]", self.p)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidSpec(format!("sigma = {} must be > 0", self.sigma)));
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(Error::InvalidSpec(format!("r = {} must be > 0", self.r)));
        }
        if !self.mu.is_finite() {
            return Err(Error::InvalidSpec("mu must be finite".into()));
        }
        Ok(())
    }

    /// Closed support of the uniform component.
    pub fn uniform_support(&self) -> (f64, f64) {
        let half = self.r * self.sigma;
        (self.mu - half, self.mu + half)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let (lo, hi) = self.uniform_support();
        let uniform = if x >= lo && x <= hi {
            1.0 / (hi - lo)
        } else {
            0.0
        };
        let gauss = normal_pdf((x - self.mu) / self.sigma) / self.sigma;
        self.p * uniform + (1.0 - self.p) * gauss
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let (lo, hi) = self.uniform_support();
        let uniform = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
        let gauss = normal_cdf((x - self.mu) / self.sigma);
        self.p * uniform + (1.0 - self.p) * gauss
    }

    fn draw(&self, rng: &mut StreamRng) -> f64 {
        // Latent class first, then the component draw.
        if open01(rng) < self.p {
            let (lo, hi) = self.uniform_support();
            lo + (hi - lo) * open01(rng)
        } else {
            self.mu + self.sigma * probit(open01(rng))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMultimodal {
    k: usize,
    p: f64,
    sigma: f64,
    r: f64,
    #[serde(default)]
    mus: Option<Vec<f64>>,
}

/// Equal-weight mixture of `k` unimodal mixtures centred at `mus`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMultimodal")]
pub struct MultimodalSpec {
    pub k: usize,
    pub p: f64,
    pub sigma: f64,
    pub r: f64,
    pub mus: Vec<f64>,
}

impl TryFrom<RawMultimodal> for MultimodalSpec {
    type Error = Error;

    fn try_from(raw: RawMultimodal) -> Result<Self> {
        let spec = match raw.mus {
            Some(mus) => MultimodalSpec {
                k: raw.k,
                p: raw.p,
                sigma: raw.sigma,
                r: raw.r,
                mus,
            },
            None => MultimodalSpec::new(raw.k, raw.p, raw.sigma, raw.r),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl Default for MultimodalSpec {
    fn default() -> Self {
        Self::new(8, 0.5, 2.0, 1.5)
    }
}

impl MultimodalSpec {
    /// Clusters at the default means `10, 20, ..., 10k`.
    pub fn new(k: usize, p: f64, sigma: f64, r: f64) -> Self {
        Self {
            k,
            p,
            sigma,
            r,
            mus: (1..=k).map(|j| 10.0 * j as f64).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidSpec("k must be >= 1".into()));
        }
        if self.mus.len() != self.k {
            return Err(Error::InvalidSpec(format!(
                "mus has {} entries, expected k = {}",
                self.mus.len(),
                self.k
            )));
        }
        for &mu in &self.mus {
            self.cluster(mu).validate()?;
        }
        Ok(())
    }

    fn cluster(&self, mu: f64) -> UnimodalSpec {
        UnimodalSpec {
            p: self.p,
            mu,
            sigma: self.sigma,
            r: self.r,
        }
    }

    pub fn clusters(&self) -> impl Iterator<Item = UnimodalSpec> + '_ {
        self.mus.iter().map(|&mu| self.cluster(mu))
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.clusters().map(|c| c.pdf(x)).sum::<f64>() / self.k as f64
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.clusters().map(|c| c.cdf(x)).sum::<f64>() / self.k as f64
    }

    fn draw(&self, rng: &mut StreamRng) -> f64 {
        let j = ((open01(rng) * self.k as f64) as usize).min(self.k - 1);
        self.cluster(self.mus[j]).draw(rng)
    }
}

/// Either dataset family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MixtureSpec {
    Unimodal(UnimodalSpec),
    Multimodal(MultimodalSpec),
}

impl MixtureSpec {
    pub fn unimodal() -> Self {
        MixtureSpec::Unimodal(UnimodalSpec::default())
    }

    pub fn multimodal() -> Self {
        MixtureSpec::Multimodal(MultimodalSpec::default())
    }

    /// Resolves a builtin name (`unimodal`, `multimodal`) or reads a JSON
    /// spec file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        match name_or_path {
            "unimodal" => Ok(Self::unimodal()),
            "multimodal" => Ok(Self::multimodal()),
            other => Self::from_file(Path::new(other)),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: MixtureSpec = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidSpec(format!("{}: {e}", path.display())))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MixtureSpec::Unimodal(s) => s.validate(),
            MixtureSpec::Multimodal(s) => s.validate(),
        }
    }

    /// Short label used in tables and directory names.
    pub fn label(&self) -> &'static str {
        match self {
            MixtureSpec::Unimodal(_) => "unimodal",
            MixtureSpec::Multimodal(_) => "multimodal",
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match self {
            MixtureSpec::Unimodal(s) => s.pdf(x),
            MixtureSpec::Multimodal(s) => s.pdf(x),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            MixtureSpec::Unimodal(s) => s.cdf(x),
            MixtureSpec::Multimodal(s) => s.cdf(x),
        }
    }

    /// Hull of the uniform-component supports.
    pub fn support(&self) -> (f64, f64) {
        match self {
            MixtureSpec::Unimodal(s) => s.uniform_support(),
            MixtureSpec::Multimodal(s) => {
                let half = s.r * s.sigma;
                let lo = s.mus.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = s.mus.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (lo - half, hi + half)
            }
        }
    }

    /// Largest Gaussian standard deviation among the components.
    pub fn sigma(&self) -> f64 {
        match self {
            MixtureSpec::Unimodal(s) => s.sigma,
            MixtureSpec::Multimodal(s) => s.sigma,
        }
    }

    /// Points where the density is discontinuous (uniform endpoints).
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut pts = match self {
            MixtureSpec::Unimodal(s) => {
                let (lo, hi) = s.uniform_support();
                vec![lo, hi]
            }
            MixtureSpec::Multimodal(s) => s
                .clusters()
                .flat_map(|c| {
                    let (lo, hi) = c.uniform_support();
                    [lo, hi]
                })
                .collect(),
        };
        pts.sort_by(f64::total_cmp);
        pts
    }

    /// Cluster centres (one for the unimodal family).
    pub fn modes(&self) -> Vec<f64> {
        match self {
            MixtureSpec::Unimodal(s) => vec![s.mu],
            MixtureSpec::Multimodal(s) => s.mus.clone(),
        }
    }

    fn draw(&self, rng: &mut StreamRng) -> f64 {
        match self {
            MixtureSpec::Unimodal(s) => s.draw(rng),
            MixtureSpec::Multimodal(s) => s.draw(rng),
        }
    }
}

/// A dataset spec bound to a private random stream.
///
/// Equal `(spec, seed)` pairs produce identical sample streams. The handle
/// serializes with its generator state so training can resume mid-stream.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetHandle {
    pub spec: MixtureSpec,
    pub seed: u64,
    rng: StreamRng,
}

impl DatasetHandle {
    pub fn new(spec: MixtureSpec, seed: u64) -> Self {
        Self {
            spec,
            seed,
            rng: rng::stream(seed, rng::Stream::Data, 0),
        }
    }

    /// Draws `n` fresh i.i.d. samples, advancing the stream.
    pub fn sample(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.spec.draw(&mut self.rng)).collect()
    }

    /// Fresh evaluation data for the eval point at `step`, drawn from a
    /// stream independent of the training stream and of other eval points.
    pub fn eval_batch(spec: &MixtureSpec, seed: u64, step: u64, n: usize) -> Vec<f64> {
        let mut rng = rng::stream(seed, rng::Stream::Holdout, step);
        (0..n).map(|_| spec.draw(&mut rng)).collect()
    }

    pub fn sample_into(&mut self, out: &mut Vec<f64>, n: usize) {
        out.clear();
        out.extend((0..n).map(|_| self.spec.draw(&mut self.rng)));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::integrate_with_breaks;
    use std::f64::consts::PI;

    fn standard_error_of_mean(xs: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    }

    #[test]
    fn unimodal_mean_within_three_standard_errors() {
        let mut h = DatasetHandle::new(MixtureSpec::unimodal(), 11);
        let xs = h.sample(1_000_000);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!((mean - 5.0).abs() < 3.0 * standard_error_of_mean(&xs));
    }

    #[test]
    fn uniform_draws_stay_inside_support() {
        let spec = UnimodalSpec::default();
        let mut rng = rng::stream(3, rng::Stream::Data, 0);
        // A pure-uniform spec isolates the uniform component.
        let only_uniform = UnimodalSpec { p: 1.0, ..spec };
        for _ in 0..200_000 {
            let x = only_uniform.draw(&mut rng);
            assert!((4.5..=5.5).contains(&x), "{x}");
        }
    }

    #[test]
    fn multimodal_first_cluster_fraction() {
        // Oracle: quadrature of the closed-form pdf over [7, 13].
        let spec = MixtureSpec::multimodal();
        let expected = integrate_with_breaks(|x| spec.pdf(x), &[7.0, 13.0], 1e-12);
        assert!((expected - 0.125).abs() < 0.01);
        let mut h = DatasetHandle::new(spec, 5);
        let xs = h.sample(1_000_000);
        let frac = xs.iter().filter(|x| (7.0..=13.0).contains(*x)).count() as f64 / 1e6;
        assert!((frac - 0.125).abs() < 0.01, "{frac}");
        // Binomial standard error at n = 1e6 is about 3.2e-4.
        assert!((frac - expected).abs() < 0.0015, "{frac} vs {expected}");
    }

    #[test]
    fn pdf_examples() {
        let uni = MixtureSpec::unimodal();
        let at_mean = 0.75 + 0.25 / (0.1 * (2.0 * PI).sqrt());
        assert!((uni.pdf(5.0) - at_mean).abs() < 1e-12);
        assert!((uni.pdf(5.0) - 1.7474).abs() < 1e-4);
        assert!(uni.pdf(7.0) < 1e-80);

        let multi = MixtureSpec::multimodal();
        let single = (0.5 / 6.0 + 0.5 / (2.0 * (2.0 * PI).sqrt())) / 8.0;
        assert!((multi.pdf(10.0) - single).abs() < 1e-6);
        assert!((multi.pdf(10.0) - 0.02288).abs() < 1e-5);
    }

    #[test]
    fn uniform_endpoints_use_closed_interval() {
        let s = UnimodalSpec::default();
        let gauss_only = 0.25 * normal_pdf(5.0) / 0.1;
        assert!((s.pdf(4.5) - (0.75 + gauss_only)).abs() < 1e-12);
        assert!((s.pdf(5.5) - (0.75 + gauss_only)).abs() < 1e-12);
    }

    #[test]
    fn cdf_examples() {
        let uni = MixtureSpec::unimodal();
        assert!((uni.cdf(5.0) - 0.5).abs() < 1e-15);
        let multi = MixtureSpec::multimodal();
        assert!((multi.cdf(45.0) - 0.5).abs() < 1e-12);
        for spec in [uni, multi] {
            assert!(spec.cdf(-1e9) <= 1e-12);
            assert!(spec.cdf(1e9) >= 1.0 - 1e-12);
        }
    }

    #[test]
    fn pdf_integrates_to_one() {
        for spec in [MixtureSpec::unimodal(), MixtureSpec::multimodal()] {
            let (lo, hi) = spec.support();
            let pad = 10.0 * spec.sigma();
            let mut breaks = vec![lo - pad];
            breaks.extend(spec.breakpoints());
            breaks.push(hi + pad);
            breaks.dedup();
            let total = integrate_with_breaks(|x| spec.pdf(x), &breaks, 1e-10);
            assert!((total - 1.0).abs() < 1e-6, "{total}");
        }
    }

    #[test]
    fn cdf_derivative_matches_pdf() {
        let mut rng = rng::stream(99, rng::Stream::Eval, 0);
        for spec in [MixtureSpec::unimodal(), MixtureSpec::multimodal()] {
            let (lo, hi) = spec.support();
            let breaks = spec.breakpoints();
            let h = 1e-5 * spec.sigma();
            let mut checked = 0;
            while checked < 1000 {
                let x = lo - 1.0 + (hi - lo + 2.0) * open01(&mut rng);
                if breaks.iter().any(|b| (x - b).abs() < 100.0 * h) {
                    continue;
                }
                let fd = (spec.cdf(x + h) - spec.cdf(x - h)) / (2.0 * h);
                assert!((fd - spec.pdf(x)).abs() < 1e-6, "x={x} fd={fd}");
                checked += 1;
            }
        }
    }

    #[test]
    fn ks_statistic_below_critical_value() {
        for (seed, spec) in [(1, MixtureSpec::unimodal()), (2, MixtureSpec::multimodal())] {
            let mut h = DatasetHandle::new(spec.clone(), seed);
            let mut xs = h.sample(1_000_000);
            xs.sort_by(f64::total_cmp);
            let n = xs.len() as f64;
            let d = xs
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    let f = spec.cdf(x);
                    (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
                })
                .fold(0.0, f64::max);
            // Asymptotic Kolmogorov critical value at alpha = 0.001.
            assert!(d < 1.9495 / n.sqrt(), "D = {d}");
        }
    }

    #[test]
    fn equal_seeds_give_identical_streams() {
        let mut a = DatasetHandle::new(MixtureSpec::multimodal(), 42);
        let mut b = DatasetHandle::new(MixtureSpec::multimodal(), 42);
        let xa = a.sample(1000);
        let xb = b.sample(1000);
        assert!(xa.iter().zip(&xb).all(|(x, y)| x.to_bits() == y.to_bits()));
        let mut c = DatasetHandle::new(MixtureSpec::multimodal(), 43);
        assert_ne!(xa, c.sample(1000));
    }

    #[test]
    fn handle_roundtrips_mid_stream() {
        let mut a = DatasetHandle::new(MixtureSpec::unimodal(), 8);
        a.sample(17);
        let json = serde_json::to_string(&a).unwrap();
        let mut b: DatasetHandle = serde_json::from_str(&json).unwrap();
        assert_eq!(a.sample(50), b.sample(50));
    }

    #[test]
    fn zero_draws_are_empty() {
        let mut h = DatasetHandle::new(MixtureSpec::unimodal(), 0);
        assert!(h.sample(0).is_empty());
    }

    #[test]
    fn spec_json_mirrors_fields() {
        let uni: MixtureSpec =
            serde_json::from_str(r#"{"kind":"unimodal","p":0.75,"mu":5,"sigma":0.1,"r":5}"#)
                .unwrap();
        assert_eq!(uni, MixtureSpec::unimodal());
        let multi: MixtureSpec =
            serde_json::from_str(r#"{"kind":"multimodal","k":8,"p":0.5,"sigma":2,"r":1.5}"#)
                .unwrap();
        assert_eq!(multi, MixtureSpec::multimodal());
        let bad = serde_json::from_str::<MixtureSpec>(
            r#"{"kind":"multimodal","k":2,"p":0.5,"sigma":2,"r":1.5,"mus":[1]}"#,
        );
        assert!(bad.is_err());
        assert!(UnimodalSpec { sigma: 0.0, ..Default::default() }.validate().is_err());
        assert!(UnimodalSpec { p: 1.5, ..Default::default() }.validate().is_err());
    }
}
