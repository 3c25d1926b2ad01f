//! Encoder/decoder MLP pair trained to reconstruct agent states under an L1
//! penalty on the decoder Jacobian, plus an optional Laplace likelihood term
//! on the encoder.
//!
//! Gradients are hand-derived. For the penalty term the activation-derivative
//! diagonals are piecewise constant, so their derivative with respect to the
//! encoder output vanishes almost everywhere: the penalty only sends gradient
//! into decoder weights. The likelihood term only reaches encoder weights.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{gemm, AdamConfig, AdamState, Matrix, SeededRng};
use crate::routing::Adapter;
use crate::synthgen::Dataset;

pub const LEAKY_SLOPE: f64 = 0.2;
/// Smoothing constant of `s(x) = sqrt(x^2 + eps)`.
pub const SMOOTH_ABS_EPS: f64 = 1e-8;
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// Leaky ReLU with slope [`LEAKY_SLOPE`] below zero.
    Leaky,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Leaky if x <= 0.0 => LEAKY_SLOPE * x,
            _ => x,
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Leaky if x <= 0.0 => LEAKY_SLOPE,
            _ => 1.0,
        }
    }
}

#[inline]
pub fn smooth_abs(x: f64) -> f64 {
    (x * x + SMOOTH_ABS_EPS).sqrt()
}

#[inline]
pub fn smooth_abs_derivative(x: f64) -> f64 {
    x / (x * x + SMOOTH_ABS_EPS).sqrt()
}

/// Dense layer `y = act(W x + b)` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Matrix,
    /// `1 x out`.
    pub bias: Matrix,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::InvalidArgument(format!(
                "bias length {} does not match {} outputs",
                bias.len(),
                weights.rows()
            )));
        }
        Ok(Self {
            weights,
            bias: Matrix::row_vector(&bias),
            activation,
        })
    }

    /// Glorot-uniform weights, zero bias.
    pub fn random(n_in: usize, n_out: usize, activation: Activation, rng: &mut SeededRng) -> Self {
        let limit = (6.0 / (n_in + n_out) as f64).sqrt();
        Self {
            weights: Matrix::from_fn(n_out, n_in, |_, _| rng.uniform_range(-limit, limit)),
            bias: Matrix::zeros(1, n_out),
            activation,
        }
    }

    pub fn n_in(&self) -> usize {
        self.weights.cols()
    }

    pub fn n_out(&self) -> usize {
        self.weights.rows()
    }

    fn preactivation(&self, x: &Matrix) -> Matrix {
        let mut z = Matrix::zeros(x.rows(), self.n_out());
        gemm(1.0, x, false, &self.weights, true, 0.0, &mut z);
        let b = self.bias.data();
        for i in 0..z.rows() {
            for (v, bj) in z.row_mut(i).iter_mut().zip(b) {
                *v += bj;
            }
        }
        z
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Layer inputs and preactivations from one batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub inputs: Vec<Matrix>,
    pub preactivations: Vec<Matrix>,
    pub output: Matrix,
}

impl Mlp {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("an MLP needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].n_out() != w[1].n_in() {
                return Err(Error::InvalidArgument(format!(
                    "layer widths do not chain: {} -> {}",
                    w[0].n_out(),
                    w[1].n_in()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// `widths = [in, h1, ..., out]`; hidden layers leaky, output linear.
    pub fn random(widths: &[usize], rng: &mut SeededRng) -> Self {
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|l| {
                let act = if l + 1 == n { Activation::Linear } else { Activation::Leaky };
                Layer::random(widths[l], widths[l + 1], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].n_in()
    }

    pub fn n_out(&self) -> usize {
        self.layers[self.layers.len() - 1].n_out()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut a = x.clone();
        for layer in &self.layers {
            let act = layer.activation;
            a = layer.preactivation(&a).map(|v| act.apply(v));
        }
        Ok(a)
    }

    pub fn forward_cached(&self, x: &Matrix) -> Result<ForwardCache> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut preactivations = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        for layer in &self.layers {
            let z = layer.preactivation(&a);
            let act = layer.activation;
            let next = z.map(|v| act.apply(v));
            inputs.push(a);
            preactivations.push(z);
            a = next;
        }
        Ok(ForwardCache {
            inputs,
            preactivations,
            output: a,
        })
    }

    /// Backpropagates `grad_out` (d loss / d output), accumulating weight and
    /// bias gradients into `grads` (two entries per layer). Returns d loss /
    /// d input.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &Matrix, grads: &mut [Matrix]) -> Matrix {
        let mut g = grad_out.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let act = layer.activation;
            let pre = &cache.preactivations[l];
            for (gv, &pv) in g.data_mut().iter_mut().zip(pre.data()) {
                *gv *= act.derivative(pv);
            }
            gemm(1.0, &g, true, &cache.inputs[l], false, 1.0, &mut grads[2 * l]);
            let db = grads[2 * l + 1].data_mut();
            for i in 0..g.rows() {
                for (d, v) in db.iter_mut().zip(g.row(i)) {
                    *d += v;
                }
            }
            let mut next = Matrix::zeros(g.rows(), layer.n_in());
            gemm(1.0, &g, false, &layer.weights, false, 0.0, &mut next);
            g = next;
        }
        g
    }

    /// Jacobian of the network at a single input, from cached preactivations
    /// of that input: `W_L D_{L-1} W_{L-1} ... D_1 W_1` with `D` the
    /// activation-derivative diagonals.
    fn jacobian_from_preactivations(&self, pre_rows: &[&[f64]]) -> Vec<Matrix> {
        // Returns the prefix products M_l = D_l W_l M_{l-1}; the last is J.
        let mut prefix: Vec<Matrix> = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut m = match prefix.last() {
                None => layer.weights.clone(),
                Some(prev) => layer.weights.matmul(prev).expect("chained widths"),
            };
            if layer.activation != Activation::Linear {
                let cols = m.cols();
                for (i, &p) in pre_rows[l].iter().enumerate() {
                    let d = layer.activation.derivative(p);
                    for v in &mut m.data_mut()[i * cols..(i + 1) * cols] {
                        *v *= d;
                    }
                }
            }
            prefix.push(m);
        }
        prefix
    }

    /// Exact Jacobian at `x`.
    pub fn jacobian(&self, x: &[f64]) -> Result<Matrix> {
        let cache = self.forward_cached(&Matrix::row_vector(x))?;
        let rows: Vec<&[f64]> = cache.preactivations.iter().map(|p| p.row(0)).collect();
        Ok(self.jacobian_from_preactivations(&rows).pop().expect("non-empty"))
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.n_in() {
            return Err(Error::InvalidArgument(format!(
                "input width {} does not match network input width {}",
                x.cols(),
                self.n_in()
            )));
        }
        Ok(())
    }

    fn zero_grads(&self) -> Vec<Matrix> {
        self.layers
            .iter()
            .flat_map(|l| [Matrix::zeros(l.n_out(), l.n_in()), Matrix::zeros(1, l.n_out())])
            .collect()
    }
}

/// The estimated pair: encoder maps states to thoughts, decoder maps back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub encoder: Mlp,
    pub decoder: Mlp,
}

impl MlpModel {
    pub fn new(encoder: Mlp, decoder: Mlp) -> Result<Self> {
        if encoder.n_out() != decoder.n_in() || decoder.n_out() != encoder.n_in() {
            return Err(Error::InvalidArgument(format!(
                "encoder {}->{} and decoder {}->{} do not form an autoencoder",
                encoder.n_in(),
                encoder.n_out(),
                decoder.n_in(),
                decoder.n_out()
            )));
        }
        Ok(Self { encoder, decoder })
    }

    /// Default architecture: `hidden_layers` leaky layers of `width` on each
    /// side, linear outputs.
    pub fn random(n_h: usize, n_latent: usize, width: usize, hidden_layers: usize, rng: &mut SeededRng) -> Self {
        let mut enc = vec![n_h];
        enc.extend(std::iter::repeat_n(width, hidden_layers));
        enc.push(n_latent);
        let mut dec = vec![n_latent];
        dec.extend(std::iter::repeat_n(width, hidden_layers));
        dec.push(n_h);
        Self {
            encoder: Mlp::random(&enc, rng),
            decoder: Mlp::random(&dec, rng),
        }
    }

    pub fn n_h(&self) -> usize {
        self.encoder.n_in()
    }

    pub fn n_latent(&self) -> usize {
        self.encoder.n_out()
    }

    /// Parameters in a fixed order: encoder (W, b) per layer, then decoder.
    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.encoder
            .layers
            .iter_mut()
            .chain(self.decoder.layers.iter_mut())
            .flat_map(|l| [&mut l.weights, &mut l.bias])
            .collect()
    }

    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        self.encoder
            .layers
            .iter()
            .chain(&self.decoder.layers)
            .flat_map(|l| [l.weights.shape(), l.bias.shape()])
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.encoder
            .layers
            .iter()
            .chain(&self.decoder.layers)
            .all(|l| l.weights.is_finite() && l.bias.is_finite())
    }
}

pub fn encode(model: &MlpModel, states: &Matrix) -> Result<Matrix> {
    model.encoder.forward(states)
}

pub fn decode(model: &MlpModel, latents: &Matrix) -> Result<Matrix> {
    model.decoder.forward(latents)
}

pub fn decoder_jacobian(model: &MlpModel, z: &[f64]) -> Result<Matrix> {
    model.decoder.jacobian(z)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Weight of the Jacobian L1 penalty; 1 gives the unweighted loss.
    pub lambda_sparse: f64,
    /// Weight of the factorized-Laplace likelihood term: batch mean of
    /// `sum_j |z_j|` minus the mean log-volume `0.5 log det(J J^T)` of the
    /// encoder Jacobian at the penalized rows. It ties latent scale to the
    /// data and asks for independent thoughts; 0 disables it.
    pub lambda_likelihood: f64,
    /// Batch rows at which the decoder Jacobian is penalized.
    pub jacobian_subsample: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs trained on reconstruction alone before the penalty switches on.
    pub warmup_epochs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Latent width; defaults to the dataset's true thought count.
    pub latent_dim: Option<usize>,
    /// Hidden width; defaults to `4 * max(n_h, latent_dim)`.
    pub hidden_width: Option<usize>,
    pub hidden_layers: usize,
    /// Tail fraction of the dataset held out from training.
    pub holdout_fraction: f64,
    /// Independent initializations; the one with the lowest held-out total
    /// loss is kept. The first uses `seed` itself.
    pub restarts: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_sparse: 0.01,
            lambda_likelihood: 0.1,
            jacobian_subsample: 8,
            batch_size: 128,
            epochs: 60,
            warmup_epochs: 10,
            adam: AdamConfig::default(),
            seed: 0,
            latent_dim: None,
            hidden_width: None,
            hidden_layers: 2,
            holdout_fraction: 0.1,
            restarts: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.lambda_sparse >= 0.0 && self.lambda_sparse.is_finite()) {
            return bad("lambda_sparse must be finite and non-negative");
        }
        if !(self.lambda_likelihood >= 0.0 && self.lambda_likelihood.is_finite()) {
            return bad("lambda_likelihood must be finite and non-negative");
        }
        if self.jacobian_subsample == 0 {
            return bad("jacobian_subsample must be at least 1");
        }
        if self.batch_size < self.jacobian_subsample {
            return bad("batch_size must be at least jacobian_subsample");
        }
        if self.epochs == 0 || self.restarts == 0 {
            return bad("epochs and restarts must be at least 1");
        }
        if !(self.adam.lr > 0.0) || !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return bad("invalid optimizer hyperparameters");
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return bad("holdout_fraction must be in [0, 1)");
        }
        if self.latent_dim == Some(0) || self.hidden_width == Some(0) {
            return bad("latent_dim and hidden_width must be positive");
        }
        Ok(())
    }

    pub fn resolved_hidden_width(&self, n_h: usize, n_latent: usize) -> usize {
        self.hidden_width.unwrap_or(4 * n_h.max(n_latent))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub recon: f64,
    pub penalty: f64,
    #[serde(default)]
    pub likelihood: f64,
}

#[derive(Debug, Clone, Copy)]
struct Weights {
    subsample: usize,
    lambda: f64,
    likelihood: f64,
}

impl Weights {
    fn of(cfg: &TrainConfig) -> Self {
        Self {
            subsample: cfg.jacobian_subsample,
            lambda: cfg.lambda_sparse,
            likelihood: cfg.lambda_likelihood,
        }
    }
}

/// `recon` is the batch mean of the squared reconstruction norm; `penalty`
/// is `lambda` times the mean smoothed L1 norm of the decoder Jacobian over
/// the first `jacobian_subsample` batch rows; `likelihood` is the weighted
/// negative log-likelihood of the states under a unit Laplace prior on the
/// latents, up to a constant, with the volume term taken at the same rows.
pub fn loss(model: &MlpModel, batch: &Matrix, cfg: &TrainConfig) -> Result<LossParts> {
    evaluate_loss(model, batch, Weights::of(cfg), false).map(|(parts, _)| parts)
}

/// Loss and exact gradients of [`loss`].
pub fn grad(model: &MlpModel, batch: &Matrix, cfg: &TrainConfig) -> Result<(LossParts, ModelGrads)> {
    let (parts, grads) = evaluate_loss(model, batch, Weights::of(cfg), true)?;
    Ok((parts, grads.expect("requested")))
}

/// Parameter gradients in [`MlpModel::params_mut`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads(pub Vec<Matrix>);

fn squared_error(a: &Matrix, b: &Matrix) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn evaluate_loss(model: &MlpModel, batch: &Matrix, w: Weights, with_grad: bool) -> Result<(LossParts, Option<ModelGrads>)> {
    if batch.rows() == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let n = batch.rows() as f64;
    let enc = model.encoder.forward_cached(batch)?;
    let dec = model.decoder.forward_cached(&enc.output)?;
    let recon = squared_error(batch, &dec.output) / n;

    let mut enc_grads = model.encoder.zero_grads();
    let mut dec_grads = model.decoder.zero_grads();
    let mut g_latent = Matrix::zeros(0, 0);
    if with_grad {
        let mut g_out = dec.output.sub(batch)?;
        for v in g_out.data_mut() {
            *v *= 2.0 / n;
        }
        g_latent = model.decoder.backward(&dec, &g_out, &mut dec_grads);
    }

    let s = w.subsample.min(batch.rows());
    let scale = 1.0 / s as f64;
    let mut likelihood = 0.0;
    if w.likelihood > 0.0 {
        likelihood += w.likelihood * enc.output.data().iter().map(|&v| smooth_abs(v)).sum::<f64>() / n;
        if with_grad {
            for (g, &v) in g_latent.data_mut().iter_mut().zip(enc.output.data()) {
                *g += w.likelihood * smooth_abs_derivative(v) / n;
            }
        }
        let mut vol_sum = 0.0;
        for r in 0..s {
            let rows: Vec<&[f64]> = enc.preactivations.iter().map(|p| p.row(r)).collect();
            let prefix = model.encoder.jacobian_from_preactivations(&rows);
            let jac_t = prefix.last().expect("non-empty").transpose();
            match log_volume(&jac_t) {
                Some((v, g)) => {
                    vol_sum += v;
                    if with_grad {
                        let g = g.transpose().scale(-w.likelihood * scale);
                        jacobian_backward(&model.encoder, &rows, &prefix, g, &mut enc_grads);
                    }
                }
                None => vol_sum = f64::NAN,
            }
        }
        likelihood -= w.likelihood * vol_sum * scale;
    }
    if with_grad {
        model.encoder.backward(&enc, &g_latent, &mut enc_grads);
    }

    let mut penalty = 0.0;
    if w.lambda > 0.0 {
        let mut l1_sum = 0.0;
        for r in 0..s {
            let rows: Vec<&[f64]> = dec.preactivations.iter().map(|p| p.row(r)).collect();
            let prefix = model.decoder.jacobian_from_preactivations(&rows);
            let jac = prefix.last().expect("non-empty");
            l1_sum += jac.data().iter().map(|&x| smooth_abs(x)).sum::<f64>();
            if with_grad {
                let g = jac.map(|x| w.lambda * scale * smooth_abs_derivative(x));
                jacobian_backward(&model.decoder, &rows, &prefix, g, &mut dec_grads);
            }
        }
        penalty = w.lambda * l1_sum * scale;
    }

    let parts = LossParts {
        total: recon + penalty + likelihood,
        recon,
        penalty,
        likelihood,
    };
    let grads = with_grad.then(|| {
        let mut g = enc_grads;
        g.extend(dec_grads);
        ModelGrads(g)
    });
    Ok((parts, grads))
}

/// `0.5 log det(J^T J)` and its gradient `J (J^T J)^{-1}`; `None` when
/// `J` is numerically rank deficient.
pub fn log_volume(jac: &Matrix) -> Option<(f64, Matrix)> {
    let j = jac.to_nalgebra();
    let gram = j.transpose() * &j;
    let chol = gram.cholesky()?;
    let value: f64 = chol.l().diagonal().iter().map(|d| d.ln()).sum();
    let inv = chol.inverse();
    let g = &j * inv;
    let g = Matrix::from_nalgebra(&g);
    (value.is_finite() && g.is_finite()).then_some((value, g))
}

/// Backpropagates `g = dL/dJ` at one point through the Jacobian product
/// into the weight gradients. Activation derivatives are piecewise
/// constant, so nothing flows into biases or the layer inputs.
fn jacobian_backward(net: &Mlp, pre_rows: &[&[f64]], prefix: &[Matrix], mut g: Matrix, grads: &mut [Matrix]) {
    for (l, layer) in net.layers.iter().enumerate().rev() {
        if layer.activation != Activation::Linear {
            let cols = g.cols();
            for (i, &p) in pre_rows[l].iter().enumerate() {
                let d = layer.activation.derivative(p);
                for v in &mut g.data_mut()[i * cols..(i + 1) * cols] {
                    *v *= d;
                }
            }
        }
        if l == 0 {
            // M_{-1} is the identity.
            for (acc, v) in grads[0].data_mut().iter_mut().zip(g.data()) {
                *acc += v;
            }
        } else {
            gemm(1.0, &g, false, &prefix[l - 1], true, 1.0, &mut grads[2 * l]);
            let mut next = Matrix::zeros(layer.n_in(), g.cols());
            gemm(1.0, &layer.weights, true, &g, false, 0.0, &mut next);
            g = next;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Training-batch averages.
    pub recon: f64,
    pub penalty: f64,
    #[serde(default)]
    pub likelihood: f64,
    pub total: f64,
    /// Held-out reconstruction error with the configured penalty weight.
    pub holdout_recon: f64,
    pub holdout_total: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned.
    pub best_epoch: Option<usize>,
    /// Seconds since training start at the end of each epoch. Ignored by
    /// equality so logs of identical runs compare equal.
    #[serde(skip)]
    pub wall_clock: Vec<f64>,
    /// Index of the kept restart.
    #[serde(default)]
    pub restart: usize,
    /// Best held-out total loss of each restart (NaN if it failed).
    #[serde(default)]
    pub restart_scores: Vec<f64>,
}

impl PartialEq for TrainLog {
    fn eq(&self, o: &Self) -> bool {
        self.epochs == o.epochs
            && self.best_epoch == o.best_epoch
            && self.restart == o.restart
            && self.restart_scores.len() == o.restart_scores.len()
            && self
                .restart_scores
                .iter()
                .zip(&o.restart_scores)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl TrainLog {
    /// Deterministic CSV (no timing column).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,recon,penalty,likelihood,total,holdout_recon,holdout_total\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                e.epoch, e.recon, e.penalty, e.likelihood, e.total, e.holdout_recon, e.holdout_total
            ));
        }
        s
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Index where the held-out tail starts.
pub fn holdout_start(n: usize, fraction: f64) -> usize {
    let held = (n as f64 * fraction).ceil() as usize;
    n - held.min(n.saturating_sub(1))
}

const TRAIN_STREAM: u64 = 0x7472_6169_6e;
const RESTART_STREAM: u64 = 0x7265_7374_6172;
const HOLDOUT_PENALTY_ROWS: usize = 64;

/// Minibatch Adam training. The tail `holdout_fraction` of the dataset is
/// never trained on; the returned model is the one with the lowest held-out
/// total loss among epochs after warmup and across restarts.
pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<(MlpModel, TrainLog)> {
    train_states(&dataset.states, dataset.latents.cols(), cfg)
}

/// [`train`] on a bare state matrix; `default_latent` is used when the config
/// leaves the latent width open.
pub fn train_states(states: &Matrix, default_latent: usize, cfg: &TrainConfig) -> Result<(MlpModel, TrainLog)> {
    cfg.validate()?;
    let mut kept: Option<(f64, MlpModel, TrainLog)> = None;
    let mut first_err = None;
    let mut scores = Vec::with_capacity(cfg.restarts);
    for r in 0..cfg.restarts {
        let seed = if r == 0 {
            cfg.seed
        } else {
            SeededRng::derive(cfg.seed, RESTART_STREAM + r as u64).next_u64()
        };
        match train_once(states, default_latent, cfg, seed) {
            Ok((score, model, mut log)) => {
                scores.push(score);
                if kept.as_ref().is_none_or(|(b, _, _)| score < *b) {
                    log.restart = r;
                    kept = Some((score, model, log));
                }
            }
            Err(e) => {
                scores.push(f64::NAN);
                first_err.get_or_insert(e);
            }
        }
    }
    match kept {
        Some((_, model, mut log)) => {
            log.restart_scores = scores;
            Ok((model, log))
        }
        None => Err(first_err.expect("at least one restart ran")),
    }
}

fn train_once(states: &Matrix, default_latent: usize, cfg: &TrainConfig, seed: u64) -> Result<(f64, MlpModel, TrainLog)> {
    let n = states.rows();
    let split = holdout_start(n, cfg.holdout_fraction);
    if split == 0 {
        return Err(Error::InvalidArgument("dataset too small to train on".into()));
    }
    let n_h = states.cols();
    let n_latent = cfg.latent_dim.unwrap_or(default_latent);
    let width = cfg.resolved_hidden_width(n_h, n_latent);
    let mut rng = SeededRng::derive(seed, TRAIN_STREAM);
    let mut model = MlpModel::random(n_h, n_latent, width, cfg.hidden_layers, &mut rng);
    let mut adam = AdamState::new(cfg.adam, &model.param_shapes());

    let holdout = if split < n {
        states.row_range(split, n)
    } else {
        states.row_range(0, n)
    };
    let mut order: Vec<usize> = (0..split).collect();
    let mut log = TrainLog::default();
    let mut best: Option<(f64, MlpModel)> = None;
    let start = Instant::now();

    for epoch in 0..cfg.epochs {
        let mut weights = Weights::of(cfg);
        if epoch < cfg.warmup_epochs {
            weights.lambda = 0.0;
        }
        rng.shuffle(&mut order);
        let (mut sum_recon, mut sum_pen, mut sum_lik, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = states.select_rows(chunk);
            let (parts, grads) = evaluate_loss(&model, &batch, weights, true)?;
            let ModelGrads(grads) = grads.expect("requested");
            if !parts.total.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingFailed {
                    epoch,
                    reason: "non-finite loss or gradient".into(),
                    log: Box::new(log),
                });
            }
            adam.step(&mut model.params_mut(), &grads)?;
            sum_recon += parts.recon;
            sum_pen += parts.penalty;
            sum_lik += parts.likelihood;
            batches += 1;
        }
        let held_weights = Weights {
            subsample: HOLDOUT_PENALTY_ROWS,
            ..Weights::of(cfg)
        };
        let (held, _) = evaluate_loss(&model, &holdout, held_weights, false)?;
        let record = EpochRecord {
            epoch,
            recon: sum_recon / batches as f64,
            penalty: sum_pen / batches as f64,
            likelihood: sum_lik / batches as f64,
            total: (sum_recon + sum_pen + sum_lik) / batches as f64,
            holdout_recon: held.recon,
            holdout_total: held.total,
        };
        log.epochs.push(record);
        log.wall_clock.push(start.elapsed().as_secs_f64());
        if !held.total.is_finite() || !model.is_finite() {
            return Err(Error::TrainingFailed {
                epoch,
                reason: "non-finite held-out loss".into(),
                log: Box::new(log),
            });
        }
        let eligible = epoch + 1 >= cfg.warmup_epochs.min(cfg.epochs);
        if eligible && best.as_ref().is_none_or(|(b, _)| held.total < *b) {
            best = Some((held.total, model.clone()));
            log.best_epoch = Some(epoch);
        }
    }
    let (score, model) = best.unwrap_or((f64::INFINITY, model));
    Ok((score, model, log))
}

/// Contents of `model.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub training: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adapter: Option<Adapter>,
}

impl ModelFile {
    pub fn new(model: &MlpModel, training: &TrainConfig, adapter: Option<Adapter>) -> Self {
        Self {
            format_version: MODEL_FORMAT_VERSION,
            encoder: model.encoder.clone(),
            decoder: model.decoder.clone(),
            training: training.clone(),
            adapter,
        }
    }

    pub fn model(&self) -> Result<MlpModel> {
        MlpModel::new(Mlp::new(self.encoder.layers.clone())?, Mlp::new(self.decoder.layers.clone())?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string(self)?;
        s.push('\n');
        fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f: ModelFile = serde_json::from_str(&fs::read_to_string(path)?)?;
        if f.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported model format version {}",
                f.format_version
            )));
        }
        f.model()?;
        Ok(f)
    }
}
