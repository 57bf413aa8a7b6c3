//! Feed-forward networks with a fixed Fourier feature layer, trained by
//! full-batch Adam with hand-written backpropagation.

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatMut, MatRef, Par};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;
use crate::sparse::CsrMatrix;

/// Slope of the negative branch of the leaky ReLU.
pub const LEAKY_SLOPE: f64 = 0.1;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("expected input of length {expected}, got {got}")]
    InputDimension { expected: usize, got: usize },
    #[error("expected target of length {expected}, got {got}")]
    TargetDimension { expected: usize, got: usize },
    #[error("empty training set")]
    EmptyDataset,
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("training diverged at epoch {epoch} (loss {loss:e})")]
    Diverged { epoch: usize, loss: f64, history: Vec<f64> },
}

pub fn leaky_relu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

fn leaky_relu_slope(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FourierConfig {
    pub p: usize,
    pub k: usize,
}

impl FourierConfig {
    pub fn output_dim(&self) -> usize {
        2 * self.p * self.k + self.p
    }
}

/// `[x, cos x, sin x, …, cos kx, sin kx]` per coordinate.
pub fn fourier_features(x: &[f64], cfg: &FourierConfig) -> Result<Vec<f64>, NnError> {
    if x.len() != cfg.p {
        return Err(NnError::InputDimension {
            expected: cfg.p,
            got: x.len(),
        });
    }
    let mut out = Vec::with_capacity(cfg.output_dim());
    for &xi in x {
        out.push(xi);
        for j in 1..=cfg.k {
            let t = j as f64 * xi;
            out.push(t.cos());
            out.push(t.sin());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    LeakyRelu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs × inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
    /// When false the bias stays at zero and is not optimized.
    pub bias_trainable: bool,
}

impl Dense {
    fn xavier(inputs: usize, outputs: usize, activation: Activation, bias_trainable: bool, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        Self {
            inputs,
            outputs,
            weights: (0..inputs * outputs).map(|_| rng.random_range(-limit..=limit)).collect(),
            bias: vec![0.0; outputs],
            activation,
            bias_trainable,
        }
    }

    fn weight_view(&self) -> MatRef<'_, f64> {
        MatRef::from_row_major_slice(&self.weights, self.outputs, self.inputs)
    }

    /// Pre-activation `z = x Wᵀ + b` and activation `ρ(z)` for a batch.
    fn forward(&self, x: MatRef<'_, f64>) -> (Mat<f64>, Mat<f64>) {
        let mut z = Mat::<f64>::zeros(x.nrows(), self.outputs);
        matmul(z.as_mut(), Accum::Replace, x, self.weight_view().transpose(), 1.0, Par::Seq);
        for j in 0..self.outputs {
            let b = self.bias[j];
            if b != 0.0 {
                z.col_mut(j).iter_mut().for_each(|v| *v += b);
            }
        }
        let a = match self.activation {
            Activation::Identity => z.clone(),
            Activation::LeakyRelu => Mat::from_fn(z.nrows(), z.ncols(), |i, j| leaky_relu(z[(i, j)])),
        };
        (z, a)
    }

    fn num_trainable(&self) -> usize {
        self.weights.len() + if self.bias_trainable { self.bias.len() } else { 0 }
    }
}

/// Network head after the two hidden layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    /// `30 → n` without activation; the caller maps the latent vector.
    Latent,
    /// `30 → n` (leaky ReLU) followed by a bias-free linear map `n → outputs`.
    Full { outputs: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub fourier: FourierConfig,
    pub hidden: usize,
    pub latent: usize,
    pub head: Head,
}

impl Architecture {
    pub fn output_dim(&self) -> usize {
        match self.head {
            Head::Latent => self.latent,
            Head::Full { outputs } => outputs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub architecture: Architecture,
    /// Parameter box mapped onto `[−1, 1]` before the Fourier layer.
    pub input_lo: Vec<f64>,
    pub input_hi: Vec<f64>,
    /// Network outputs are multiplied by this factor.
    pub output_scale: f64,
    pub layers: Vec<Dense>,
}

/// Weighting of the squared error `eᵀ W e`.
#[derive(Debug, Clone, Copy)]
pub enum LossWeight<'a> {
    Identity,
    /// Row-major symmetric `n × n`.
    Dense(&'a [f64]),
    Sparse(&'a CsrMatrix),
}

impl LossWeight<'_> {
    /// `E W` for a batch of row errors.
    fn apply(&self, e: &Mat<f64>) -> Mat<f64> {
        match self {
            LossWeight::Identity => e.clone(),
            LossWeight::Dense(w) => {
                let n = e.ncols();
                let w = MatRef::from_row_major_slice(w, n, n);
                let mut out = Mat::<f64>::zeros(e.nrows(), n);
                matmul(out.as_mut(), Accum::Replace, e.as_ref(), w, 1.0, Par::Seq);
                out
            }
            LossWeight::Sparse(d) => {
                // D is symmetric, so column r of E D is Σ_k D[r, k] E[:, k].
                let batch = e.nrows();
                let cols: Vec<&[f64]> = (0..e.ncols())
                    .map(|k| e.col(k).try_as_col_major().expect("owned matrices are column-major").as_slice())
                    .collect();
                let out = par::map_indexed(d.nrows(), |r| {
                    let mut acc = vec![0.0; batch];
                    for (k, v) in d.row(r) {
                        acc.iter_mut().zip(cols[k]).for_each(|(a, x)| *a += v * x);
                    }
                    acc
                });
                Mat::from_fn(batch, e.ncols(), |i, j| out[j][i])
            }
        }
    }
}

impl Mlp {
    pub fn new(architecture: Architecture, input_lo: Vec<f64>, input_hi: Vec<f64>, seed: u64) -> Self {
        assert_eq!(input_lo.len(), architecture.fourier.p, "parameter box dimension");
        assert_eq!(input_hi.len(), architecture.fourier.p, "parameter box dimension");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = architecture.fourier.output_dim();
        let h = architecture.hidden;
        let n = architecture.latent;
        let mut layers = vec![
            Dense::xavier(f, h, Activation::Identity, true, &mut rng),
            Dense::xavier(h, h, Activation::LeakyRelu, true, &mut rng),
        ];
        match architecture.head {
            Head::Latent => layers.push(Dense::xavier(h, n, Activation::Identity, true, &mut rng)),
            Head::Full { outputs } => {
                layers.push(Dense::xavier(h, n, Activation::LeakyRelu, true, &mut rng));
                layers.push(Dense::xavier(n, outputs, Activation::Identity, false, &mut rng));
            }
        }
        Self {
            architecture,
            input_lo,
            input_hi,
            output_scale: 1.0,
            layers,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.architecture.fourier.p
    }

    pub fn output_dim(&self) -> usize {
        self.architecture.output_dim()
    }

    /// Normalized Fourier features of a raw parameter vector.
    pub fn features(&self, mu: &[f64]) -> Result<Vec<f64>, NnError> {
        if mu.len() != self.input_dim() {
            return Err(NnError::InputDimension {
                expected: self.input_dim(),
                got: mu.len(),
            });
        }
        let x: Vec<f64> = mu
            .iter()
            .zip(self.input_lo.iter().zip(&self.input_hi))
            .map(|(&m, (&lo, &hi))| if hi > lo { 2.0 * (m - lo) / (hi - lo) - 1.0 } else { 0.0 })
            .collect();
        fourier_features(&x, &self.architecture.fourier)
    }

    fn feature_batch(&self, mus: &[Vec<f64>]) -> Result<Mat<f64>, NnError> {
        let feats = mus.iter().map(|m| self.features(m)).collect::<Result<Vec<_>, _>>()?;
        let width = self.architecture.fourier.output_dim();
        Ok(Mat::from_fn(mus.len(), width, |i, j| feats[i][j]))
    }

    /// Unscaled output for a batch of feature rows.
    fn forward_features(&self, x: MatRef<'_, f64>) -> Mat<f64> {
        let mut a = x.to_owned();
        for layer in &self.layers {
            a = layer.forward(a.as_ref()).1;
        }
        a
    }

    pub fn predict(&self, mu: &[f64]) -> Result<Vec<f64>, NnError> {
        Ok(self.predict_batch(std::slice::from_ref(&mu.to_vec()))?.remove(0))
    }

    pub fn predict_batch(&self, mus: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, NnError> {
        let out = self.forward_features(self.feature_batch(mus)?.as_ref());
        Ok((0..out.nrows())
            .map(|i| (0..out.ncols()).map(|j| self.output_scale * out[(i, j)]).collect())
            .collect())
    }

    pub fn num_trainable(&self) -> usize {
        self.layers.iter().map(Dense::num_trainable).sum()
    }

    /// Trainable parameters, layer by layer: weights then (trainable) bias.
    pub fn trainable_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_trainable());
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            if layer.bias_trainable {
                out.extend_from_slice(&layer.bias);
            }
        }
        out
    }

    pub fn set_trainable_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.num_trainable(), "parameter count");
        let mut offset = 0;
        for layer in &mut self.layers {
            let nw = layer.weights.len();
            layer.weights.copy_from_slice(&params[offset..offset + nw]);
            offset += nw;
            if layer.bias_trainable {
                let nb = layer.bias.len();
                layer.bias.copy_from_slice(&params[offset..offset + nb]);
                offset += nb;
            }
        }
    }

    /// Runs `layers[..upto]`, keeping each layer's input and pre-activation.
    fn forward_tape(&self, x: MatRef<'_, f64>, upto: usize) -> (Vec<Mat<f64>>, Vec<Mat<f64>>, Mat<f64>) {
        let mut inputs = Vec::with_capacity(upto);
        let mut pre = Vec::with_capacity(upto);
        let mut a = x.to_owned();
        for layer in &self.layers[..upto] {
            let (z, next) = layer.forward(a.as_ref());
            inputs.push(a);
            pre.push(z);
            a = next;
        }
        (inputs, pre, a)
    }

    /// Back-propagates `delta` (gradient with respect to the output of layer
    /// `inputs.len() − 1`) and fills the matching entries of `grads`.
    fn backward(&self, inputs: &[Mat<f64>], pre: &[Mat<f64>], mut delta: Mat<f64>, grads: &mut [Vec<f64>]) {
        for l in (0..inputs.len()).rev() {
            let layer = &self.layers[l];
            if layer.activation == Activation::LeakyRelu {
                let z = &pre[l];
                delta = Mat::from_fn(delta.nrows(), delta.ncols(), |i, j| delta[(i, j)] * leaky_relu_slope(z[(i, j)]));
            }
            let mut g = vec![0.0; layer.num_trainable()];
            {
                let gw = MatMut::from_row_major_slice_mut(&mut g[..layer.weights.len()], layer.outputs, layer.inputs);
                matmul(gw, Accum::Replace, delta.transpose(), inputs[l].as_ref(), 1.0, Par::Seq);
            }
            if layer.bias_trainable {
                let nw = layer.weights.len();
                for j in 0..layer.outputs {
                    g[nw + j] = delta.col(j).iter().sum();
                }
            }
            grads[l] = g;
            if l > 0 {
                let mut next = Mat::<f64>::zeros(delta.nrows(), layer.inputs);
                matmul(next.as_mut(), Accum::Replace, delta.as_ref(), layer.weight_view(), 1.0, Par::Seq);
                delta = next;
            }
        }
    }

    /// Mean weighted squared error `1/N Σ eᵢᵀ W eᵢ` on scaled targets and its
    /// gradient with respect to the trainable parameters.
    pub fn loss_and_gradient(&self, x: MatRef<'_, f64>, y: MatRef<'_, f64>, weight: &LossWeight) -> (f64, Vec<f64>) {
        let batch = x.nrows() as f64;
        let (inputs, pre, a) = self.forward_tape(x, self.layers.len());
        let e = Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] - y[(i, j)]);
        let we = weight.apply(&e);
        let mut loss = 0.0;
        for j in 0..e.ncols() {
            for i in 0..e.nrows() {
                loss += e[(i, j)] * we[(i, j)];
            }
        }
        loss /= batch;
        let delta = Mat::from_fn(we.nrows(), we.ncols(), |i, j| 2.0 / batch * we[(i, j)]);
        let mut grads = vec![Vec::new(); self.layers.len()];
        self.backward(&inputs, &pre, delta, &mut grads);
        (loss, grads.concat())
    }

    /// Same loss and gradient for a full head, evaluated through the latent
    /// layer: with `h` the input of the bias-free output layer `W`,
    /// `eᵀ D e = hᵀ(WᵀDW)h − 2 hᵀWᵀ(Dy) + yᵀDy`. `yd` holds the rows `Dyᵢ`
    /// and `yy` the constants `yᵢᵀDyᵢ`.
    fn full_head_loss_and_gradient(
        &self,
        x: MatRef<'_, f64>,
        yd: MatRef<'_, f64>,
        yy: &[f64],
        weight: &LossWeight,
    ) -> (f64, Vec<f64>) {
        let k = self.layers.len() - 1;
        let last = &self.layers[k];
        debug_assert!(!last.bias_trainable && last.activation == Activation::Identity);
        let batch = x.nrows() as f64;
        let (inputs, pre, h) = self.forward_tape(x, k);
        let w = last.weight_view();
        let dw = weight.apply(&w.transpose().to_owned());
        let n = last.inputs;
        let mut gram = Mat::<f64>::zeros(n, n);
        matmul(gram.as_mut(), Accum::Replace, dw.as_ref(), w, 1.0, Par::Seq);
        let mut p = Mat::<f64>::zeros(h.nrows(), n);
        matmul(p.as_mut(), Accum::Replace, yd, w, 1.0, Par::Seq);
        let mut hg = Mat::<f64>::zeros(h.nrows(), n);
        matmul(hg.as_mut(), Accum::Replace, h.as_ref(), gram.as_ref(), 1.0, Par::Seq);

        let mut loss: f64 = yy.iter().sum();
        for j in 0..n {
            for i in 0..h.nrows() {
                loss += h[(i, j)] * (hg[(i, j)] - 2.0 * p[(i, j)]);
            }
        }
        loss /= batch;

        let mut grads = vec![Vec::new(); self.layers.len()];
        let mut hh = Mat::<f64>::zeros(n, n);
        matmul(hh.as_mut(), Accum::Replace, h.transpose(), h.as_ref(), 1.0, Par::Seq);
        let mut g = vec![0.0; last.weights.len()];
        {
            let mut gw = MatMut::from_row_major_slice_mut(&mut g, last.outputs, n);
            matmul(gw.as_mut(), Accum::Replace, dw.transpose(), hh.as_ref(), 2.0 / batch, Par::Seq);
            matmul(gw, Accum::Add, yd.transpose(), h.as_ref(), -2.0 / batch, Par::Seq);
        }
        grads[k] = g;
        let delta = Mat::from_fn(h.nrows(), n, |i, j| 2.0 / batch * (hg[(i, j)] - p[(i, j)]));
        self.backward(&inputs, &pre, delta, &mut grads);
        (loss, grads.concat())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// `0` selects full-batch training.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 20_000,
            batch_size: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), NnError> {
        if !(self.learning_rate > 0.0) || self.epochs == 0 {
            return Err(NnError::InvalidConfig(format!(
                "learning rate {} and epochs {} must be positive",
                self.learning_rate, self.epochs
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Loss at the start of each epoch.
    pub loss_history: Vec<f64>,
    pub final_loss: f64,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

fn rows_to_mat(rows: &[Vec<f64>], idx: &[usize], width: usize, scale: f64) -> Mat<f64> {
    Mat::from_fn(idx.len(), width, |i, j| rows[idx[i]][j] / scale)
}

/// Fits `net` to `(inputs, targets)`. The output scale is reset to the
/// largest absolute target entry and losses are reported on scaled targets.
pub fn train(
    net: &mut Mlp,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    weight: &LossWeight,
    cfg: &TrainConfig,
) -> Result<TrainReport, NnError> {
    cfg.validate()?;
    if inputs.is_empty() || inputs.len() != targets.len() {
        return Err(NnError::EmptyDataset);
    }
    let out_dim = net.output_dim();
    if let Some(t) = targets.iter().find(|t| t.len() != out_dim) {
        return Err(NnError::TargetDimension {
            expected: out_dim,
            got: t.len(),
        });
    }
    crate::fom::init_linear_algebra();
    let max_abs = targets.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    net.output_scale = if max_abs > 0.0 { max_abs } else { 1.0 };

    let features = net.feature_batch(inputs)?;
    let n = inputs.len();
    let width = features.ncols();
    let batch = if cfg.batch_size == 0 { n } else { cfg.batch_size.min(n) };
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let full_y = rows_to_mat(targets, &order, out_dim, net.output_scale);
    // Full heads train through the latent layer (see `full_head_loss_and_gradient`).
    let projected = matches!(net.architecture.head, Head::Full { .. }).then(|| {
        let yd = weight.apply(&full_y);
        let yy: Vec<f64> = (0..n).map(|i| (0..out_dim).map(|j| full_y[(i, j)] * yd[(i, j)]).sum()).collect();
        (yd, yy)
    });
    let evaluate = |net: &Mlp, rows: Option<&[usize]>| match (rows, &projected) {
        (None, None) => net.loss_and_gradient(features.as_ref(), full_y.as_ref(), weight),
        (None, Some((yd, yy))) => net.full_head_loss_and_gradient(features.as_ref(), yd.as_ref(), yy, weight),
        (Some(rows), _) => {
            let x = Mat::from_fn(rows.len(), width, |i, j| features[(rows[i], j)]);
            match &projected {
                None => {
                    let y = Mat::from_fn(rows.len(), out_dim, |i, j| full_y[(rows[i], j)]);
                    net.loss_and_gradient(x.as_ref(), y.as_ref(), weight)
                }
                Some((yd, yy)) => {
                    let yd = Mat::from_fn(rows.len(), out_dim, |i, j| yd[(rows[i], j)]);
                    let yy: Vec<f64> = rows.iter().map(|&r| yy[r]).collect();
                    net.full_head_loss_and_gradient(x.as_ref(), yd.as_ref(), &yy, weight)
                }
            }
        }
    };

    let mut params = net.trainable_params();
    let mut adam = Adam::new(params.len(), cfg.learning_rate);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut initial = None;
    for epoch in 0..cfg.epochs {
        if batch < n {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let (loss, grad) = evaluate(net, (batch < n).then_some(chunk));
            epoch_loss += loss * chunk.len() as f64 / n as f64;
            adam.step(&mut params, &grad);
            net.set_trainable_params(&params);
        }
        history.push(epoch_loss);
        let reference = *initial.get_or_insert(epoch_loss);
        if !epoch_loss.is_finite() || epoch_loss > 1e3 * reference {
            return Err(NnError::Diverged {
                epoch,
                loss: epoch_loss,
                history,
            });
        }
    }
    let final_loss = net.loss_and_gradient(features.as_ref(), full_y.as_ref(), weight).0;
    Ok(TrainReport {
        loss_history: history,
        final_loss,
    })
}
