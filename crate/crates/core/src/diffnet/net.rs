//! Small dense networks recorded onto a [`Tape`].

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::spectral::PowerIterState;
use super::tape::{Activation, Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::{self, open01, Stream, StreamRng};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
/// Power iterations run on the initial weights of spectrally normalized
/// layers.
pub const SPECTRAL_WARMUP_ITERS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// `Uniform(±1/√fan_in)`
    Uniform,
    /// `Uniform(±√(6/(fan_in + fan_out)))`
    Xavier,
}

/// Shape and layer flags of a [`DenseNet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    #[serde(default = "one")]
    pub output_dim: usize,
    pub activation: Activation,
    #[serde(default)]
    pub residual: bool,
    #[serde(default)]
    pub dropout_rate: f64,
    #[serde(default)]
    pub batch_norm: bool,
    #[serde(default)]
    pub spectral_norm: bool,
}

fn one() -> usize {
    1
}

impl NetConfig {
    pub fn mlp(input_dim: usize, hidden: Vec<usize>, activation: Activation) -> Self {
        Self {
            input_dim,
            hidden,
            output_dim: 1,
            activation,
            residual: false,
            dropout_rate: 0.0,
            batch_norm: false,
            spectral_norm: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.iter().any(|&w| w == 0) {
            return Err(Error::InvalidConfig("network dimensions must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` for each affine layer, output layer last.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim;
        for &w in &self.hidden {
            dims.push((prev, w));
            prev = w;
        }
        dims.push((prev, self.output_dim));
        dims
    }

    /// Hidden-layer index pairs `(i, i + 1)` wrapped by a skip connection.
    /// Blocks start after the first hidden layer and require the block's
    /// input and output widths to match.
    pub fn residual_blocks(&self) -> Vec<usize> {
        if !self.residual {
            return Vec::new();
        }
        let mut blocks = Vec::new();
        let mut i = 1;
        while i + 1 < self.hidden.len() {
            if self.hidden[i - 1] == self.hidden[i + 1] {
                blocks.push(i);
                i += 2;
            } else {
                i += 1;
            }
        }
        blocks
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormState {
    pub gamma: Matrix,
    pub beta: Matrix,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `fan_out × fan_in`
    pub weight: Matrix,
    /// `1 × fan_out`
    pub bias: Matrix,
    pub activation: Activation,
    pub batch_norm: Option<BatchNormState>,
    pub spectral: Option<PowerIterState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    pub config: NetConfig,
    pub layers: Vec<Layer>,
}

/// Execution mode. Dropout masks are drawn from the training stream.
pub enum Mode<'a> {
    Train(&'a mut StreamRng),
    Eval,
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Parameters of a net bound as tape leaves.
#[derive(Debug, Clone)]
pub struct BoundParams {
    /// Leaves in [`DenseNet::params`] order.
    pub leaves: Vec<Var>,
    weights: Vec<Var>,
    biases: Vec<Var>,
    bn: Vec<Option<(Var, Var)>>,
}

impl BoundParams {
    /// Parameter gradients in [`DenseNet::params`] order.
    pub fn gradients(&self, grads: &Gradients, net: &DenseNet) -> Vec<Matrix> {
        self.leaves
            .iter()
            .zip(net.params())
            .map(|(&v, p)| grads.get_or_zeros(v, p))
            .collect()
    }
}

/// Batch statistics observed by train-mode batch-norm layers.
#[derive(Debug, Clone, Default)]
pub struct BatchStats {
    pub per_layer: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

/// Result of recording a forward pass.
pub struct ForwardPass {
    pub tape: Tape,
    pub input: Var,
    pub output: Var,
    pub params: BoundParams,
    pub stats: BatchStats,
}

impl ForwardPass {
    pub fn output_value(&self) -> &Matrix {
        self.tape.value(self.output)
    }
}

impl DenseNet {
    /// Fresh network: weights drawn per `scheme`, zero biases, unit
    /// batch-norm scale. Power-iteration vectors start random and are
    /// warmed up on the initial weights, so the untrained network is
    /// already normalized.
    pub fn init(config: NetConfig, scheme: InitScheme, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, Stream::Init, 0);
        let dims = config.layer_dims();
        let n_layers = dims.len();
        let layers = dims
            .into_iter()
            .enumerate()
            .map(|(i, (fan_in, fan_out))| {
                let bound = match scheme {
                    InitScheme::Uniform => 1.0 / (fan_in as f64).sqrt(),
                    InitScheme::Xavier => (6.0 / (fan_in + fan_out) as f64).sqrt(),
                };
                let data = (0..fan_in * fan_out)
                    .map(|_| bound * (2.0 * open01(&mut rng) - 1.0))
                    .collect();
                let is_hidden = i + 1 < n_layers;
                let weight = Matrix::from_vec(fan_out, fan_in, data);
                let spectral = config.spectral_norm.then(|| {
                    let mut state = PowerIterState::random(fan_out, fan_in, &mut rng);
                    state.iterate(&weight, SPECTRAL_WARMUP_ITERS);
                    state
                });
                Layer {
                    weight,
                    bias: Matrix::zeros(1, fan_out),
                    activation: if is_hidden {
                        config.activation
                    } else {
                        Activation::Identity
                    },
                    batch_norm: (is_hidden && config.batch_norm).then(|| BatchNormState {
                        gamma: Matrix::filled(1, fan_out, 1.0),
                        beta: Matrix::zeros(1, fan_out),
                        running_mean: vec![0.0; fan_out],
                        running_var: vec![1.0; fan_out],
                    }),
                    spectral,
                }
            })
            .collect();
        Ok(Self { config, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn params(&self) -> Vec<&Matrix> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(&l.weight);
            out.push(&l.bias);
            if let Some(bn) = &l.batch_norm {
                out.push(&bn.gamma);
                out.push(&bn.beta);
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
            if let Some(bn) = &mut l.batch_norm {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Runs `iters` power iterations on every spectrally normalized layer.
    pub fn refresh_spectral(&mut self, iters: usize) {
        for l in &mut self.layers {
            if let Some(sn) = &mut l.spectral {
                sn.iterate(&l.weight, iters);
            }
        }
    }

    /// Top singular-value estimates of the effective (normalized) weights.
    pub fn effective_sigmas(&self, iters: usize) -> Vec<f64> {
        self.layers
            .iter()
            .map(|l| {
                let w = match &l.spectral {
                    Some(sn) => l.weight.scale(1.0 / sn.sigma(&l.weight)),
                    None => l.weight.clone(),
                };
                let mut probe = l.spectral.clone().unwrap_or_else(|| PowerIterState {
                    u: vec![1.0 / (w.rows as f64).sqrt(); w.rows],
                    v: vec![1.0 / (w.cols as f64).sqrt(); w.cols],
                });
                probe.iterate(&w, iters)
            })
            .collect()
    }

    /// Records the parameters as tape leaves. Spectrally normalized layers
    /// bind `W / σ(W)` using the current singular-vector estimates.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let mut leaves = Vec::new();
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut bn = Vec::new();
        for l in &self.layers {
            let w = tape.leaf(l.weight.clone());
            let b = tape.leaf(l.bias.clone());
            leaves.push(w);
            leaves.push(b);
            let w_eff = match &l.spectral {
                Some(sn) => tape.spectral_scale(w, &sn.u, &sn.v),
                None => w,
            };
            weights.push(w_eff);
            biases.push(b);
            bn.push(l.batch_norm.as_ref().map(|st| {
                let g = tape.leaf(st.gamma.clone());
                let be = tape.leaf(st.beta.clone());
                leaves.push(g);
                leaves.push(be);
                (g, be)
            }));
        }
        BoundParams {
            leaves,
            weights,
            biases,
            bn,
        }
    }

    fn check_input(&self, tape: &Tape, x: Var) -> Result<()> {
        let cols = tape.value(x).cols;
        if cols != self.config.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.input_dim,
                got: cols,
            });
        }
        Ok(())
    }

    fn dropout_mask(&self, rows: usize, cols: usize, mode: &mut Mode<'_>) -> Option<Matrix> {
        let rate = self.config.dropout_rate;
        match mode {
            Mode::Train(rng) if rate > 0.0 => {
                let keep = 1.0 / (1.0 - rate);
                let data = (0..rows * cols)
                    .map(|_| if open01(*rng) < rate { 0.0 } else { keep })
                    .collect();
                Some(Matrix::from_vec(rows, cols, data))
            }
            _ => None,
        }
    }

    /// Affine map, optional batch norm, activation and dropout of layer `i`.
    /// When `tangents` is given, each forward-mode tangent is pushed through
    /// the same layer.
    fn layer(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        i: usize,
        h: Var,
        mode: &mut Mode<'_>,
        stats: &mut BatchStats,
        tangents: Option<&mut Vec<Var>>,
    ) -> Result<Var> {
        let layer = &self.layers[i];
        let lin = tape.matmul_t(h, p.weights[i])?;
        let mut pre = tape.add_row(lin, p.biases[i]);
        if let (Some(st), Some((g, b))) = (&layer.batch_norm, p.bn[i]) {
            if tangents.is_some() {
                return Err(Error::UnsupportedSecondOrder("batch_norm".into()));
            }
            let normed = if mode.is_train() {
                let (v, mean, var) = tape.batch_norm(pre, BN_EPS);
                stats.per_layer[i] = Some((mean, var));
                v
            } else {
                let scale = st.running_var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                tape.col_affine(pre, scale, &st.running_mean)
            };
            let scaled = tape.mul_row(normed, g);
            pre = tape.add_row(scaled, b);
        }
        let mut out = tape.activation(pre, layer.activation);
        let (rows, cols) = tape.value(out).shape();
        let is_hidden = i + 1 < self.layers.len();
        let mask = if is_hidden {
            self.dropout_mask(rows, cols, mode)
        } else {
            None
        };
        if let Some(ts) = tangents {
            let deriv = (layer.activation != Activation::Identity)
                .then(|| tape.activation_derivative(pre, layer.activation));
            for t in ts.iter_mut() {
                let mut tn = tape.matmul_t(*t, p.weights[i])?;
                if let Some(d) = deriv {
                    tn = tape.mul(d, tn);
                }
                if let Some(m) = &mask {
                    tn = tape.mask(tn, m.clone());
                }
                *t = tn;
            }
        }
        if let Some(m) = mask {
            out = tape.mask(out, m);
        }
        Ok(out)
    }

    fn run(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        x: Var,
        mode: &mut Mode<'_>,
        mut tangents: Option<&mut Vec<Var>>,
    ) -> Result<(Var, BatchStats)> {
        self.check_input(tape, x)?;
        let mut stats = BatchStats {
            per_layer: vec![None; self.layers.len()],
        };
        let n_hidden = self.config.hidden.len();
        let blocks = self.config.residual_blocks();
        let mut h = x;
        let mut i = 0;
        while i < n_hidden {
            if blocks.contains(&i) {
                let skip = h;
                let skip_t = tangents.as_deref().cloned();
                let a = self.layer(tape, p, i, h, mode, &mut stats, tangents.as_deref_mut())?;
                let b = self.layer(tape, p, i + 1, a, mode, &mut stats, tangents.as_deref_mut())?;
                h = tape.add(skip, b);
                if let (Some(ts), Some(skip_t)) = (tangents.as_deref_mut(), skip_t) {
                    for (t, s) in ts.iter_mut().zip(skip_t) {
                        *t = tape.add(s, *t);
                    }
                }
                i += 2;
            } else {
                h = self.layer(tape, p, i, h, mode, &mut stats, tangents.as_deref_mut())?;
                i += 1;
            }
        }
        let out = self.layer(tape, p, n_hidden, h, mode, &mut stats, tangents)?;
        Ok((out, stats))
    }

    /// Records `net(x)` on `tape` with already-bound parameters.
    pub fn forward_on(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        x: Var,
        mode: &mut Mode<'_>,
    ) -> Result<(Var, BatchStats)> {
        self.run(tape, p, x, mode, None)
    }

    /// Records `net(x)` together with the per-sample input-gradient norm
    /// `‖∇ₓ net(x)‖` as tape nodes, so the norm can be differentiated with
    /// respect to the parameters. Requires a scalar output.
    pub fn forward_with_input_gradient_norm(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        x: Var,
        mode: &mut Mode<'_>,
    ) -> Result<(Var, Var)> {
        if self.config.output_dim != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: self.config.output_dim,
            });
        }
        self.check_input(tape, x)?;
        let rows = tape.value(x).rows;
        let d = self.config.input_dim;
        let mut tangents: Vec<Var> = (0..d)
            .map(|j| {
                let mut e = Matrix::zeros(rows, d);
                for r in 0..rows {
                    e.set(r, j, 1.0);
                }
                tape.leaf(e)
            })
            .collect();
        let (out, _) = self.run(tape, p, x, mode, Some(&mut tangents))?;
        let mut sq = tape.square(tangents[0]);
        for t in &tangents[1..] {
            let s = tape.square(*t);
            sq = tape.add(sq, s);
        }
        let norm = tape.sqrt(sq);
        Ok((out, norm))
    }

    /// Records a forward pass on a fresh tape.
    pub fn forward(&self, input: &Matrix, mode: &mut Mode<'_>) -> Result<ForwardPass> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape);
        let x = tape.leaf(input.clone());
        let (output, stats) = self.forward_on(&mut tape, &params, x, mode)?;
        Ok(ForwardPass {
            tape,
            input: x,
            output,
            params,
            stats,
        })
    }

    /// Eval-mode outputs, processed in chunks.
    pub fn predict(&self, input: &Matrix) -> Result<Matrix> {
        const CHUNK: usize = 4096;
        let mut out = Vec::with_capacity(input.rows * self.config.output_dim);
        let cols = input.cols;
        for start in (0..input.rows).step_by(CHUNK) {
            let end = (start + CHUNK).min(input.rows);
            let chunk = Matrix::from_vec(
                end - start,
                cols,
                input.data[start * cols..end * cols].to_vec(),
            );
            let pass = self.forward(&chunk, &mut Mode::Eval)?;
            out.extend_from_slice(&pass.output_value().data);
        }
        Ok(Matrix::from_vec(input.rows, self.config.output_dim, out))
    }

    /// Folds train-mode batch statistics into the running estimates.
    pub fn update_running_stats(&mut self, stats: &BatchStats) {
        for (layer, st) in self.layers.iter_mut().zip(&stats.per_layer) {
            if let (Some(bn), Some((mean, var))) = (&mut layer.batch_norm, st) {
                for j in 0..mean.len() {
                    bn.running_mean[j] = (1.0 - BN_MOMENTUM) * bn.running_mean[j] + BN_MOMENTUM * mean[j];
                    bn.running_var[j] = (1.0 - BN_MOMENTUM) * bn.running_var[j] + BN_MOMENTUM * var[j];
                }
            }
        }
    }
}

/// Gradients of the batch-mean input-gradient norm `mean_i ‖∇ₓ c(x_i)‖`
/// with respect to every parameter of `net`, in [`DenseNet::params`]
/// order, together with the per-sample norms.
pub fn grad_of_input_gradient(net: &DenseNet, input: &Matrix) -> Result<(Vec<f64>, Vec<Matrix>)> {
    let mut tape = Tape::new();
    let p = net.bind(&mut tape);
    let x = tape.leaf(input.clone());
    let (_, norm) = net.forward_with_input_gradient_norm(&mut tape, &p, x, &mut Mode::Eval)?;
    let norms = tape.value(norm).data.clone();
    let mean = tape.mean_all(norm);
    let grads = tape.backward_scalar(mean)?;
    Ok((norms, p.gradients(&grads, net)))
}
