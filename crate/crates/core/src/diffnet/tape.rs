//! Append-only operation tape with reverse-mode replay.
//!
//! Every node holds its forward value; [`Tape::backward`] walks the nodes
//! once in reverse order and accumulates adjoints into their inputs. The
//! primitive set is deliberately small: dense affine maps, elementwise
//! arithmetic, activations and their derivatives (so input gradients can
//! themselves be recorded and differentiated), batch normalization,
//! spectral scaling, reductions, and the mixture-of-logistics/probit
//! primitives used by Gaussianization layers.

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};
use crate::special::{logistic_log_pdf, normal_pdf, probit, sigmoid, softmax, HALF_LN_2PI};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub const LEAKY_SLOPE: f64 = 0.2;

/// Probabilities are clamped to `[CDF_CLAMP, 1 - CDF_CLAMP]` before probit.
pub const CDF_CLAMP: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
            Activation::Tanh => x.tanh(),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if x > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }

    pub fn second_derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// `x · wᵀ`
    MatMulT(Var, Var),
    /// `x + b` with `b` a row broadcast over batch rows.
    AddRow(Var, Var),
    /// `x ⊙ g` with `g` a row broadcast over batch rows.
    MulRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Act(Var, Activation),
    ActDeriv(Var, Activation),
    /// Per-column standardization with batch statistics.
    BatchNorm { x: Var, inv_std: Vec<f64> },
    /// Constant per-column affine map.
    ColAffine { x: Var, scale: Vec<f64> },
    /// Elementwise product with a constant mask.
    Mask { x: Var, mask: Matrix },
    /// `w / (uᵀ w v)` with constant `u`, `v`.
    SpectralScale { w: Var, u: Vec<f64>, v: Vec<f64>, sigma: f64 },
    MeanAll(Var),
    SumCols(Var),
    Sqrt(Var),
    Square(Var),
    /// `eps ⊙ a + (1 - eps) ⊙ b` with one constant `eps` per row.
    Lerp { a: Var, b: Var, eps: Vec<f64> },
    /// probit of the logistic-mixture CDF, clamped.
    MixProbit { x: Var, params: MixParams, clamped: Vec<bool> },
    /// log density of the logistic mixture.
    MixLogPdf { x: Var, params: MixParams },
    NormalLogPdf(Var),
}

#[derive(Debug, Clone, Copy)]
struct MixParams {
    logits: Var,
    means: Var,
    log_scales: Var,
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Matrix,
}

/// Reverse-mode tape. A tape may be replayed once.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, or zeros shaped like `like` when `v` did not
    /// influence the output.
    pub fn get_or_zeros(&self, v: Var, like: &Matrix) -> Matrix {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(like.rows, like.cols))
    }
}

/// Evaluated logistic-mixture quantities for one input.
pub(crate) struct MixEval {
    pub cdf: f64,
    pub sf: f64,
    pub log_pdf: f64,
}

/// Mixture CDF, survival function and log density at `x`. `weights` must be
/// normalized.
pub(crate) fn mix_eval(x: f64, weights: &[f64], means: &[f64], log_scales: &[f64]) -> MixEval {
    let mut cdf = 0.0;
    let mut sf = 0.0;
    // Streaming log-sum-exp over component log densities.
    let mut max_lp = f64::NEG_INFINITY;
    let mut acc = 0.0;
    for k in 0..weights.len() {
        let u = (x - means[k]) * (-log_scales[k]).exp();
        cdf += weights[k] * sigmoid(u);
        sf += weights[k] * sigmoid(-u);
        let lp = weights[k].ln() - log_scales[k] + logistic_log_pdf(u);
        if lp > max_lp {
            acc = acc * (max_lp - lp).exp() + 1.0;
            max_lp = lp;
        } else {
            acc += (lp - max_lp).exp();
        }
    }
    let log_pdf = max_lp + acc.ln();
    MixEval { cdf, sf, log_pdf }
}

/// Clamped probit of a mixture CDF, using whichever tail is smaller.
/// Returns `(z, clamped)`.
pub(crate) fn clamped_probit(cdf: f64, sf: f64) -> (f64, bool) {
    if cdf <= sf {
        if cdf < CDF_CLAMP {
            (probit(CDF_CLAMP), true)
        } else {
            (probit(cdf), false)
        }
    } else if sf < CDF_CLAMP {
        (-probit(CDF_CLAMP), true)
    } else {
        (-probit(sf), false)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Matrix) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn matmul_t(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if xv.cols != wv.cols {
            return Err(Error::DimensionMismatch {
                expected: wv.cols,
                got: xv.cols,
            });
        }
        let out = xv.matmul_t(wv);
        Ok(self.push(Op::MatMulT(x, w), out))
    }

    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let bv = self.value(b).data.clone();
        let mut out = self.value(x).clone();
        for r in 0..out.rows {
            for (o, bb) in out.data[r * out.cols..(r + 1) * out.cols].iter_mut().zip(&bv) {
                *o += bb;
            }
        }
        self.push(Op::AddRow(x, b), out)
    }

    pub fn mul_row(&mut self, x: Var, g: Var) -> Var {
        let gv = self.value(g).data.clone();
        let mut out = self.value(x).clone();
        for r in 0..out.rows {
            for (o, gg) in out.data[r * out.cols..(r + 1) * out.cols].iter_mut().zip(&gv) {
                *o *= gg;
            }
        }
        self.push(Op::MulRow(x, g), out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(Op::Add(a, b), out)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(Op::Sub(a, b), out)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(Op::Mul(a, b), out)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).scale(c);
        self.push(Op::Scale(a, c), out)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|v| v + c);
        self.push(Op::AddScalar(a), out)
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        if kind == Activation::Identity {
            return x;
        }
        let out = self.value(x).map(|v| kind.apply(v));
        self.push(Op::Act(x, kind), out)
    }

    /// Elementwise activation derivative, itself differentiable.
    pub fn activation_derivative(&mut self, x: Var, kind: Activation) -> Var {
        let out = self.value(x).map(|v| kind.derivative(v));
        self.push(Op::ActDeriv(x, kind), out)
    }

    /// Standardizes each column with the batch mean and biased variance.
    /// Returns the node plus the batch `(mean, variance)` per column.
    pub fn batch_norm(&mut self, x: Var, eps: f64) -> (Var, Vec<f64>, Vec<f64>) {
        let xv = self.value(x);
        let (n, c) = xv.shape();
        let mut mean = vec![0.0; c];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(xv.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; c];
        for r in 0..n {
            for ((s, v), m) in var.iter_mut().zip(xv.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|s| 1.0 / (s + eps).sqrt()).collect();
        let mut out = xv.clone();
        for r in 0..n {
            for j in 0..c {
                out.data[r * c + j] = (out.data[r * c + j] - mean[j]) * inv_std[j];
            }
        }
        (self.push(Op::BatchNorm { x, inv_std }, out), mean, var)
    }

    /// `(x - shift) * scale` per column with constant coefficients.
    pub fn col_affine(&mut self, x: Var, scale: Vec<f64>, shift: &[f64]) -> Var {
        let mut out = self.value(x).clone();
        let c = out.cols;
        for r in 0..out.rows {
            for j in 0..c {
                out.data[r * c + j] = (out.data[r * c + j] - shift[j]) * scale[j];
            }
        }
        self.push(Op::ColAffine { x, scale }, out)
    }

    pub fn mask(&mut self, x: Var, mask: Matrix) -> Var {
        let out = self.value(x).zip_map(&mask, |a, m| a * m);
        self.push(Op::Mask { x, mask }, out)
    }

    /// `w / σ` with `σ = uᵀ w v` and `u`, `v` treated as constants.
    pub fn spectral_scale(&mut self, w: Var, u: &[f64], v: &[f64]) -> Var {
        let wv = self.value(w);
        let wv_v = wv.matmul_t(&Matrix::from_vec(1, v.len(), v.to_vec()));
        let sigma = super::matrix::dot(u, &wv_v.data).max(super::spectral::SIGMA_FLOOR);
        let out = wv.scale(1.0 / sigma);
        self.push(
            Op::SpectralScale {
                w,
                u: u.to_vec(),
                v: v.to_vec(),
                sigma,
            },
            out,
        )
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let m = xv.data.iter().sum::<f64>() / xv.len() as f64;
        self.push(Op::MeanAll(x), Matrix::scalar(m))
    }

    pub fn sum_cols(&mut self, x: Var) -> Var {
        let out = self.value(x).sum_cols();
        self.push(Op::SumCols(x), out)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::sqrt);
        self.push(Op::Sqrt(x), out)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * v);
        self.push(Op::Square(x), out)
    }

    pub fn lerp(&mut self, a: Var, b: Var, eps: Vec<f64>) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let c = av.cols;
        let mut out = av.clone();
        for r in 0..av.rows {
            for j in 0..c {
                let i = r * c + j;
                out.data[i] = eps[r] * av.data[i] + (1.0 - eps[r]) * bv.data[i];
            }
        }
        self.push(Op::Lerp { a, b, eps }, out)
    }

    fn mix_inputs(&self, logits: Var, means: Var, log_scales: Var) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        (
            softmax(&self.value(logits).data),
            self.value(means).data.clone(),
            self.value(log_scales).data.clone(),
        )
    }

    /// Probit of the logistic-mixture CDF at each entry of the column `x`.
    /// The mixture is parameterized by unnormalized `logits`, `means` and
    /// `log_scales` (each 1×K). Returns the node and the number of entries
    /// whose CDF was clamped.
    pub fn mix_probit(&mut self, x: Var, logits: Var, means: Var, log_scales: Var) -> (Var, usize) {
        let (w, mu, ls) = self.mix_inputs(logits, means, log_scales);
        let xv = self.value(x);
        let mut clamped = Vec::with_capacity(xv.len());
        let data = xv
            .data
            .iter()
            .map(|&xi| {
                let e = mix_eval(xi, &w, &mu, &ls);
                let (z, c) = clamped_probit(e.cdf, e.sf);
                clamped.push(c);
                z
            })
            .collect();
        let out = Matrix::from_vec(xv.rows, xv.cols, data);
        let n_clamped = clamped.iter().filter(|&&c| c).count();
        let params = MixParams {
            logits,
            means,
            log_scales,
        };
        (self.push(Op::MixProbit { x, params, clamped }, out), n_clamped)
    }

    /// Log density of the logistic mixture at each entry of `x`.
    pub fn mix_log_pdf(&mut self, x: Var, logits: Var, means: Var, log_scales: Var) -> Var {
        let (w, mu, ls) = self.mix_inputs(logits, means, log_scales);
        let out = self.value(x).map(|xi| mix_eval(xi, &w, &mu, &ls).log_pdf);
        let params = MixParams {
            logits,
            means,
            log_scales,
        };
        self.push(Op::MixLogPdf { x, params }, out)
    }

    pub fn normal_log_pdf(&mut self, z: Var) -> Var {
        let out = self.value(z).map(|v| -0.5 * v * v - HALF_LN_2PI);
        self.push(Op::NormalLogPdf(z), out)
    }

    /// Reverse replay from `output`, seeded with `seed` (shaped like the
    /// output). Consumes the tape: a second call fails.
    pub fn backward(&mut self, output: Var, seed: Matrix) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        self.consumed = true;
        let out_shape = self.value(output).shape();
        if seed.shape() != out_shape {
            return Err(Error::DimensionMismatch {
                expected: out_shape.0 * out_shape.1,
                got: seed.len(),
            });
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(seed);
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Backward from a scalar output with seed 1.
    pub fn backward_scalar(&mut self, output: Var) -> Result<Gradients> {
        self.backward(output, Matrix::scalar(1.0))
    }

    fn propagate(&self, idx: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[idx];
        let mut acc = |v: Var, delta: Matrix| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMulT(x, w) => {
                acc(*x, g.matmul(self.value(*w)));
                acc(*w, g.t_matmul(self.value(*x)));
            }
            Op::AddRow(x, b) => {
                acc(*x, g.clone());
                acc(*b, g.sum_rows());
            }
            Op::MulRow(x, gamma) => {
                let gv = &self.value(*gamma).data;
                let xv = self.value(*x);
                let c = g.cols;
                let mut dx = g.clone();
                let mut dg = Matrix::zeros(1, c);
                for r in 0..g.rows {
                    for j in 0..c {
                        let i = r * c + j;
                        dx.data[i] = g.data[i] * gv[j];
                        dg.data[j] += g.data[i] * xv.data[i];
                    }
                }
                acc(*x, dx);
                acc(*gamma, dg);
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                acc(*a, g.zip_map(self.value(*b), |gi, bi| gi * bi));
                acc(*b, g.zip_map(self.value(*a), |gi, ai| gi * ai));
            }
            Op::Scale(a, c) => acc(*a, g.scale(*c)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Act(x, kind) => {
                let k = *kind;
                acc(*x, g.zip_map(self.value(*x), |gi, xi| gi * k.derivative(xi)));
            }
            Op::ActDeriv(x, kind) => {
                if *kind == Activation::Tanh {
                    let k = *kind;
                    acc(*x, g.zip_map(self.value(*x), |gi, xi| gi * k.second_derivative(xi)));
                }
            }
            Op::BatchNorm { x, inv_std } => {
                let xhat = &node.value;
                let (n, c) = xhat.shape();
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for r in 0..n {
                    for j in 0..c {
                        let i = r * c + j;
                        sum_g[j] += g.data[i];
                        sum_gx[j] += g.data[i] * xhat.data[i];
                    }
                }
                let nf = n as f64;
                let mut dx = Matrix::zeros(n, c);
                for r in 0..n {
                    for j in 0..c {
                        let i = r * c + j;
                        dx.data[i] = inv_std[j] / nf
                            * (nf * g.data[i] - sum_g[j] - xhat.data[i] * sum_gx[j]);
                    }
                }
                acc(*x, dx);
            }
            Op::ColAffine { x, scale } => {
                let mut dx = g.clone();
                let c = g.cols;
                for (i, d) in dx.data.iter_mut().enumerate() {
                    *d *= scale[i % c];
                }
                acc(*x, dx);
            }
            Op::Mask { x, mask } => acc(*x, g.zip_map(mask, |gi, m| gi * m)),
            Op::SpectralScale { w, u, v, sigma } => {
                let wv = self.value(*w);
                let gw = g.frobenius_dot(wv);
                let mut dw = g.scale(1.0 / sigma);
                let coef = gw / (sigma * sigma);
                for (r, ur) in u.iter().enumerate() {
                    for (c, vc) in v.iter().enumerate() {
                        dw.data[r * wv.cols + c] -= coef * ur * vc;
                    }
                }
                acc(*w, dw);
            }
            Op::MeanAll(x) => {
                let xv = self.value(*x);
                acc(*x, Matrix::filled(xv.rows, xv.cols, g.item() / xv.len() as f64));
            }
            Op::SumCols(x) => {
                let xv = self.value(*x);
                let mut dx = Matrix::zeros(xv.rows, xv.cols);
                for r in 0..xv.rows {
                    for j in 0..xv.cols {
                        dx.data[r * xv.cols + j] = g.data[r];
                    }
                }
                acc(*x, dx);
            }
            Op::Sqrt(x) => {
                acc(
                    *x,
                    g.zip_map(&node.value, |gi, s| if s > 0.0 { 0.5 * gi / s } else { 0.0 }),
                );
            }
            Op::Square(x) => acc(*x, g.zip_map(self.value(*x), |gi, xi| 2.0 * gi * xi)),
            Op::Lerp { a, b, eps } => {
                let c = g.cols;
                let mut da = g.clone();
                let mut db = g.clone();
                for r in 0..g.rows {
                    for j in 0..c {
                        let i = r * c + j;
                        da.data[i] *= eps[r];
                        db.data[i] *= 1.0 - eps[r];
                    }
                }
                acc(*a, da);
                acc(*b, db);
            }
            Op::MixProbit { x, params, clamped } => {
                let (dx, dl, dm, ds) = self.mix_probit_grads(*x, *params, &node.value, clamped, g);
                acc(*x, dx);
                acc(params.logits, dl);
                acc(params.means, dm);
                acc(params.log_scales, ds);
            }
            Op::MixLogPdf { x, params } => {
                let (dx, dl, dm, ds) = self.mix_log_pdf_grads(*x, *params, &node.value, g);
                acc(*x, dx);
                acc(params.logits, dl);
                acc(params.means, dm);
                acc(params.log_scales, ds);
            }
            Op::NormalLogPdf(z) => acc(*z, g.zip_map(self.value(*z), |gi, zi| -gi * zi)),
        }
    }

    fn mix_probit_grads(
        &self,
        x: Var,
        p: MixParams,
        z: &Matrix,
        clamped: &[bool],
        g: &Matrix,
    ) -> (Matrix, Matrix, Matrix, Matrix) {
        let (w, mu, ls) = self.mix_inputs(p.logits, p.means, p.log_scales);
        let k = w.len();
        let xv = self.value(x);
        let mut dx = Matrix::zeros(xv.rows, xv.cols);
        let (mut dl, mut dm, mut ds) = (vec![0.0; k], vec![0.0; k], vec![0.0; k]);
        let inv_s: Vec<f64> = ls.iter().map(|l| (-l).exp()).collect();
        let mut sig = vec![0.0; k];
        for (i, &xi) in xv.data.iter().enumerate() {
            if clamped[i] || g.data[i] == 0.0 {
                continue;
            }
            // dz/dF = 1 / φ(z)
            let coef = g.data[i] / normal_pdf(z.data[i]);
            let mut cdf = 0.0;
            let mut pdf = 0.0;
            for j in 0..k {
                let u = (xi - mu[j]) * inv_s[j];
                let s = sigmoid(u);
                let sbar = sigmoid(-u);
                sig[j] = s;
                cdf += w[j] * s;
                let dens = w[j] * s * sbar;
                pdf += dens * inv_s[j];
                dm[j] -= coef * dens * inv_s[j];
                ds[j] -= coef * dens * u;
            }
            for j in 0..k {
                dl[j] += coef * w[j] * (sig[j] - cdf);
            }
            dx.data[i] = coef * pdf;
        }
        (
            dx,
            Matrix::from_vec(1, k, dl),
            Matrix::from_vec(1, k, dm),
            Matrix::from_vec(1, k, ds),
        )
    }

    fn mix_log_pdf_grads(
        &self,
        x: Var,
        p: MixParams,
        log_pdf: &Matrix,
        g: &Matrix,
    ) -> (Matrix, Matrix, Matrix, Matrix) {
        let (w, mu, ls) = self.mix_inputs(p.logits, p.means, p.log_scales);
        let k = w.len();
        let xv = self.value(x);
        let mut dx = Matrix::zeros(xv.rows, xv.cols);
        let (mut dl, mut dm, mut ds) = (vec![0.0; k], vec![0.0; k], vec![0.0; k]);
        let inv_s: Vec<f64> = ls.iter().map(|l| (-l).exp()).collect();
        let log_w: Vec<f64> = w.iter().map(|v| v.ln()).collect();
        for (i, &xi) in xv.data.iter().enumerate() {
            let gi = g.data[i];
            if gi == 0.0 {
                continue;
            }
            let total = log_pdf.data[i];
            let mut dxi = 0.0;
            for j in 0..k {
                let u = (xi - mu[j]) * inv_s[j];
                let resp = (log_w[j] - ls[j] + logistic_log_pdf(u) - total).exp();
                let slope = 1.0 - 2.0 * sigmoid(u);
                dxi += resp * slope * inv_s[j];
                dm[j] -= gi * resp * slope * inv_s[j];
                ds[j] += gi * resp * (-1.0 - u * slope);
                dl[j] += gi * (resp - w[j]);
            }
            dx.data[i] = gi * dxi;
        }
        (
            dx,
            Matrix::from_vec(1, k, dl),
            Matrix::from_vec(1, k, dm),
            Matrix::from_vec(1, k, ds),
        )
    }
}
