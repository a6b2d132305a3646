//! Neural level-set representation of the backward reachable tube.
//!
//! A 4-64-64-2 perceptron with sigmoid hidden units is trained with Adam on
//! softmax cross-entropy. Output 0 scores "inside", output 1 "outside", and
//! the level-set value is their difference, so `f_brt(x) <= 0` exactly when
//! the network classifies `x` as inside.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flight::{membership_oracle, BrtDataset, FlightParams, FlyingState, LandingTargetSet};

pub const LAYER_SIZES: [usize; 4] = [4, 64, 64, 2];
const INSIDE: usize = 0;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("dataset must contain both inside and outside samples")]
    DegenerateDataset,
    #[error("no samples to evaluate")]
    EmptyInput,
    #[error("{states} states but {labels} labels")]
    LengthMismatch { states: usize, labels: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid model file: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub train_fraction: f64,
    /// Standardize inputs with statistics of the training split.
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 256,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            train_fraction: 0.7,
            standardize: true,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), ClassifierError> {
        let bad = |m: &str| Err(ClassifierError::InvalidConfig(m.into()));
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train fraction must lie in (0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.learning_rate > 0.0)
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
        {
            return bad("learning rate must be positive and Adam betas in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainMetrics {
    /// Entry 0 describes the untrained network.
    pub epochs: Vec<EpochMetrics>,
    pub n_train: usize,
    pub n_test: usize,
}

impl TrainMetrics {
    pub fn last(&self) -> EpochMetrics {
        self.epochs.last().copied().unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    pub epochs: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    #[serde(default)]
    pub version: String,
}

#[derive(Debug, Clone, PartialEq)]
struct Params {
    weights: [DMatrix<f64>; 3],
    biases: [DVector<f64>; 3],
}

impl Params {
    fn zeros_like(other: &Params) -> Self {
        Self {
            weights: other
                .weights
                .clone()
                .map(|w| DMatrix::zeros(w.nrows(), w.ncols())),
            biases: other.biases.clone().map(|b| DVector::zeros(b.len())),
        }
    }

    fn xavier(rng: &mut ChaCha8Rng) -> Self {
        let mk = |rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize| {
            let lim = (6.0 / (fan_in + fan_out) as f64).sqrt();
            DMatrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-lim..lim))
        };
        let w0 = mk(rng, LAYER_SIZES[0], LAYER_SIZES[1]);
        let w1 = mk(rng, LAYER_SIZES[1], LAYER_SIZES[2]);
        let w2 = mk(rng, LAYER_SIZES[2], LAYER_SIZES[3]);
        Self {
            weights: [w0, w1, w2],
            biases: [
                DVector::zeros(LAYER_SIZES[1]),
                DVector::zeros(LAYER_SIZES[2]),
                DVector::zeros(LAYER_SIZES[3]),
            ],
        }
    }

    fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        let [w0, w1, w2] = &mut self.weights;
        let [b0, b1, b2] = &mut self.biases;
        [
            w0.as_mut_slice(),
            b0.as_mut_slice(),
            w1.as_mut_slice(),
            b1.as_mut_slice(),
            w2.as_mut_slice(),
            b2.as_mut_slice(),
        ]
        .into_iter()
    }

    fn slices(&self) -> impl Iterator<Item = &[f64]> {
        [
            self.weights[0].as_slice(),
            self.biases[0].as_slice(),
            self.weights[1].as_slice(),
            self.biases[1].as_slice(),
            self.weights[2].as_slice(),
            self.biases[2].as_slice(),
        ]
        .into_iter()
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

struct Activations {
    hidden1: DMatrix<f64>,
    hidden2: DMatrix<f64>,
    logits: DMatrix<f64>,
}

/// Column-per-sample forward pass on normalized inputs.
fn forward_batch(p: &Params, x: &DMatrix<f64>) -> Activations {
    let affine = |w: &DMatrix<f64>, b: &DVector<f64>, a: &DMatrix<f64>| {
        let mut z = w * a;
        for mut col in z.column_iter_mut() {
            col += b;
        }
        z
    };
    let hidden1 = affine(&p.weights[0], &p.biases[0], x).map(sigmoid);
    let hidden2 = affine(&p.weights[1], &p.biases[1], &hidden1).map(sigmoid);
    let logits = affine(&p.weights[2], &p.biases[2], &hidden2);
    Activations {
        hidden1,
        hidden2,
        logits,
    }
}

/// Per-sample cross-entropy terms; `inside[i]` selects the target class.
fn cross_entropy(logits: &DMatrix<f64>, inside: &[bool]) -> (f64, usize) {
    let mut loss = 0.0;
    let mut correct = 0;
    for (j, col) in logits.column_iter().enumerate() {
        let (l0, l1) = (col[0], col[1]);
        let m = l0.max(l1);
        let lse = m + ((l0 - m).exp() + (l1 - m).exp()).ln();
        let target = if inside[j] { l0 } else { l1 };
        loss += lse - target;
        if (l1 - l0 <= 0.0) == inside[j] {
            correct += 1;
        }
    }
    (loss, correct)
}

/// Mean loss and its gradient over one batch.
fn loss_and_grad(p: &Params, x: &DMatrix<f64>, inside: &[bool]) -> (f64, Params) {
    let n = x.ncols() as f64;
    let act = forward_batch(p, x);
    let (loss, _) = cross_entropy(&act.logits, inside);
    let mut d_logits = act.logits.clone();
    for (j, mut col) in d_logits.column_iter_mut().enumerate() {
        let (l0, l1) = (col[0], col[1]);
        let m = l0.max(l1);
        let (e0, e1) = ((l0 - m).exp(), (l1 - m).exp());
        let s = e0 + e1;
        col[0] = e0 / s;
        col[1] = e1 / s;
        col[if inside[j] { 0 } else { 1 }] -= 1.0;
        col /= n;
    }
    let mut grad = Params::zeros_like(p);
    grad.weights[2] = &d_logits * act.hidden2.transpose();
    grad.biases[2] = d_logits.column_sum();
    let mut d2 = p.weights[2].transpose() * &d_logits;
    d2.zip_apply(&act.hidden2, |d, a| *d *= a * (1.0 - a));
    grad.weights[1] = &d2 * act.hidden1.transpose();
    grad.biases[1] = d2.column_sum();
    let mut d1 = p.weights[1].transpose() * &d2;
    d1.zip_apply(&act.hidden1, |d, a| *d *= a * (1.0 - a));
    grad.weights[0] = &d1 * x.transpose();
    grad.biases[0] = d1.column_sum();
    (loss / n, grad)
}

/// Learned level-set function of the tube.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpClassifier {
    params: Params,
    pub norm_mean: [f64; 4],
    pub norm_scale: [f64; 4],
    pub meta: TrainMeta,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    layer_sizes: Vec<usize>,
    hidden_activation: String,
    /// Row-major `(out, in)` matrices.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    norm_mean: [f64; 4],
    norm_scale: [f64; 4],
    meta: TrainMeta,
}

impl MlpClassifier {
    pub fn new_random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            params: Params::xavier(&mut rng),
            norm_mean: [0.0; 4],
            norm_scale: [1.0; 4],
            meta: TrainMeta {
                seed,
                ..Default::default()
            },
        }
    }

    pub fn normalize(&self, x: &FlyingState) -> [f64; 4] {
        let a = x.to_array();
        std::array::from_fn(|i| (a[i] - self.norm_mean[i]) / self.norm_scale[i])
    }

    fn input_matrix(&self, states: &[FlyingState]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(4, states.len());
        for (j, s) in states.iter().enumerate() {
            let v = self.normalize(s);
            for i in 0..4 {
                m[(i, j)] = v[i];
            }
        }
        m
    }

    /// Raw output scores `(inside, outside)`.
    pub fn logits(&self, x: &FlyingState) -> [f64; 2] {
        let input = self.normalize(x);
        let p = &self.params;
        let mut h1 = [0.0; 64];
        for (o, h) in h1.iter_mut().enumerate() {
            let mut z = p.biases[0][o];
            for (i, v) in input.iter().enumerate() {
                z += p.weights[0][(o, i)] * v;
            }
            *h = sigmoid(z);
        }
        let mut h2 = [0.0; 64];
        for (o, h) in h2.iter_mut().enumerate() {
            let w = &p.weights[1];
            let mut z = p.biases[1][o];
            for (i, v) in h1.iter().enumerate() {
                z += w[(o, i)] * v;
            }
            *h = sigmoid(z);
        }
        std::array::from_fn(|o| {
            let mut z = p.biases[2][o];
            for (i, v) in h2.iter().enumerate() {
                z += p.weights[2][(o, i)] * v;
            }
            z
        })
    }

    /// Level-set value: negative or zero inside the tube.
    pub fn f_brt(&self, x: &FlyingState) -> f64 {
        let [inside, outside] = self.logits(x);
        outside - inside
    }

    /// Argmax classification, ties counted as inside.
    pub fn predict(&self, x: &FlyingState) -> bool {
        let l = self.logits(x);
        l[INSIDE] >= l[1 - INSIDE]
    }

    /// Batched level-set values (same numbers as `f_brt`, up to rounding).
    pub fn f_brt_batch(&self, states: &[FlyingState]) -> Vec<f64> {
        let mut out = Vec::with_capacity(states.len());
        for chunk in states.chunks(4096) {
            let act = forward_batch(&self.params, &self.input_matrix(chunk));
            out.extend(act.logits.column_iter().map(|c| c[1] - c[0]));
        }
        out
    }

    /// Mean cross-entropy and its gradient with respect to every parameter,
    /// flattened layer by layer (weights column-major, then biases).
    pub fn loss_and_gradient(&self, states: &[FlyingState], inside: &[bool]) -> (f64, Vec<f64>) {
        let (loss, grad) = loss_and_grad(&self.params, &self.input_matrix(states), inside);
        (
            loss,
            grad.slices().flat_map(|s| s.iter().copied()).collect(),
        )
    }

    pub fn num_parameters(&self) -> usize {
        self.params.slices().map(<[f64]>::len).sum()
    }

    pub fn parameters(&self) -> Vec<f64> {
        self.params
            .slices()
            .flat_map(|s| s.iter().copied())
            .collect()
    }

    pub fn set_parameter(&mut self, index: usize, value: f64) {
        let mut offset = index;
        for s in self.params.slices_mut() {
            if offset < s.len() {
                s[offset] = value;
                return;
            }
            offset -= s.len();
        }
        panic!("parameter index {index} out of range");
    }

    pub fn to_json(&self) -> String {
        let row_major = |w: &DMatrix<f64>| w.transpose().as_slice().to_vec();
        let file = ModelFile {
            layer_sizes: LAYER_SIZES.to_vec(),
            hidden_activation: "sigmoid".into(),
            weights: self.params.weights.iter().map(row_major).collect(),
            biases: self
                .params
                .biases
                .iter()
                .map(|b| b.as_slice().to_vec())
                .collect(),
            norm_mean: self.norm_mean,
            norm_scale: self.norm_scale,
            meta: self.meta.clone(),
        };
        serde_json::to_string(&file).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ClassifierError> {
        let file: ModelFile = serde_json::from_str(text)?;
        let bad = |m: String| ClassifierError::InvalidModel(m);
        if file.layer_sizes != LAYER_SIZES {
            return Err(bad(format!("layer sizes {:?}", file.layer_sizes)));
        }
        if file.hidden_activation != "sigmoid" {
            return Err(bad(format!("activation {}", file.hidden_activation)));
        }
        if file.weights.len() != 3 || file.biases.len() != 3 {
            return Err(bad("expected three layers".into()));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for k in 0..3 {
            let (fan_in, fan_out) = (LAYER_SIZES[k], LAYER_SIZES[k + 1]);
            if file.weights[k].len() != fan_in * fan_out || file.biases[k].len() != fan_out {
                return Err(bad(format!("layer {k} has wrong shape")));
            }
            weights.push(DMatrix::from_row_slice(fan_out, fan_in, &file.weights[k]));
            biases.push(DVector::from_column_slice(&file.biases[k]));
        }
        let finite = weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && biases.iter().all(|b| b.iter().all(|v| v.is_finite()));
        if !finite || file.norm_scale.iter().any(|s| !(*s > 0.0)) {
            return Err(bad("non-finite parameters or non-positive scale".into()));
        }
        let [w0, w1, w2]: [DMatrix<f64>; 3] = weights.try_into().expect("three layers");
        let [b0, b1, b2]: [DVector<f64>; 3] = biases.try_into().expect("three layers");
        Ok(Self {
            params: Params {
                weights: [w0, w1, w2],
                biases: [b0, b1, b2],
            },
            norm_mean: file.norm_mean,
            norm_scale: file.norm_scale,
            meta: file.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ClassifierError> {
        crate::io::write_atomic(path, self.to_json().as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ClassifierError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Anything that scores flight states: `<= 0` inside the tube.
pub trait LevelSet: Sync {
    fn f_brt(&self, x: &FlyingState) -> f64;
}

impl LevelSet for MlpClassifier {
    fn f_brt(&self, x: &FlyingState) -> f64 {
        MlpClassifier::f_brt(self, x)
    }
}

/// Exact membership by forward simulation, reported as `-1` / `+1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulatedLevelSet {
    pub set: LandingTargetSet,
    pub flight: FlightParams,
    pub horizon: f64,
    pub dt: f64,
}

impl LevelSet for SimulatedLevelSet {
    fn f_brt(&self, x: &FlyingState) -> f64 {
        if membership_oracle(x, &self.set, self.horizon, self.dt, &self.flight) {
            -1.0
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub true_inside: usize,
    pub true_outside: usize,
    pub false_inside: usize,
    pub false_outside: usize,
}

pub fn evaluate(
    model: &MlpClassifier,
    states: &[FlyingState],
    inside: &[bool],
) -> Result<Evaluation, ClassifierError> {
    if states.len() != inside.len() {
        return Err(ClassifierError::LengthMismatch {
            states: states.len(),
            labels: inside.len(),
        });
    }
    if states.is_empty() {
        return Err(ClassifierError::EmptyInput);
    }
    let mut e = Evaluation::default();
    for (f, &label) in model.f_brt_batch(states).into_iter().zip(inside) {
        match (f <= 0.0, label) {
            (true, true) => e.true_inside += 1,
            (false, false) => e.true_outside += 1,
            (true, false) => e.false_inside += 1,
            (false, true) => e.false_outside += 1,
        }
    }
    e.accuracy = (e.true_inside + e.true_outside) as f64 / states.len() as f64;
    Ok(e)
}

fn split_metrics(p: &Params, x: &DMatrix<f64>, inside: &[bool]) -> (f64, f64) {
    let (mut loss, mut correct) = (0.0, 0);
    let n = x.ncols();
    let mut start = 0;
    while start < n {
        let len = (n - start).min(8192);
        let act = forward_batch(p, &x.columns(start, len).into_owned());
        let (l, c) = cross_entropy(&act.logits, &inside[start..start + len]);
        loss += l;
        correct += c;
        start += len;
    }
    (loss / n as f64, correct as f64 / n as f64)
}

/// Shuffled train/test split, standardization, then mini-batch Adam.
pub fn train(
    dataset: &BrtDataset,
    cfg: &TrainConfig,
) -> Result<(MlpClassifier, TrainMetrics), ClassifierError> {
    cfg.validate()?;
    if dataset.positives.is_empty() || dataset.negatives.is_empty() {
        return Err(ClassifierError::DegenerateDataset);
    }
    let (states, labels) = dataset.labeled();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..states.len()).collect();
    order.shuffle(&mut rng);
    let n_train = ((states.len() as f64) * cfg.train_fraction).round() as usize;
    let n_train = n_train.clamp(1, states.len() - 1);
    let (train_idx, test_idx) = order.split_at(n_train);

    let mut model = MlpClassifier {
        params: Params::xavier(&mut rng),
        norm_mean: [0.0; 4],
        norm_scale: [1.0; 4],
        meta: TrainMeta {
            seed: cfg.seed,
            epochs: cfg.epochs,
            version: env!("CARGO_PKG_VERSION").into(),
            ..Default::default()
        },
    };
    if cfg.standardize {
        let mut mean = [0.0; 4];
        for &i in train_idx {
            for (m, v) in mean.iter_mut().zip(states[i].to_array()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n_train as f64);
        let mut var = [0.0; 4];
        for &i in train_idx {
            for (k, v) in states[i].to_array().into_iter().enumerate() {
                var[k] += (v - mean[k]).powi(2);
            }
        }
        model.norm_mean = mean;
        model.norm_scale = var.map(|v| {
            let s = (v / n_train as f64).sqrt();
            if s > 1e-12 {
                s
            } else {
                1.0
            }
        });
    }

    let gather = |idx: &[usize]| {
        let xs: Vec<FlyingState> = idx.iter().map(|&i| states[i]).collect();
        let ys: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
        (model.input_matrix(&xs), ys)
    };
    let (x_train, y_train) = gather(train_idx);
    let (x_test, y_test) = gather(test_idx);

    let mut metrics = TrainMetrics {
        epochs: Vec::with_capacity(cfg.epochs + 1),
        n_train,
        n_test: test_idx.len(),
    };
    let record = |epoch: usize, p: &Params, metrics: &mut TrainMetrics| {
        let (train_loss, train_accuracy) = split_metrics(p, &x_train, &y_train);
        let (test_loss, test_accuracy) = split_metrics(p, &x_test, &y_test);
        metrics.epochs.push(EpochMetrics {
            epoch,
            train_loss,
            train_accuracy,
            test_loss,
            test_accuracy,
        });
    };
    record(0, &model.params, &mut metrics);

    let mut m1 = Params::zeros_like(&model.params);
    let mut m2 = Params::zeros_like(&model.params);
    let mut step = 0i32;
    let mut batch_order: Vec<usize> = (0..n_train).collect();
    let mut xb = DMatrix::zeros(4, cfg.batch_size);
    for epoch in 1..=cfg.epochs {
        batch_order.shuffle(&mut rng);
        for batch in batch_order.chunks(cfg.batch_size) {
            if xb.ncols() != batch.len() {
                xb = DMatrix::zeros(4, batch.len());
            }
            let mut yb = Vec::with_capacity(batch.len());
            for (j, &i) in batch.iter().enumerate() {
                xb.set_column(j, &x_train.column(i));
                yb.push(y_train[i]);
            }
            let (_, grad) = loss_and_grad(&model.params, &xb, &yb);
            step += 1;
            let c1 = 1.0 - cfg.beta1.powi(step);
            let c2 = 1.0 - cfg.beta2.powi(step);
            let params = model.params.slices_mut();
            let firsts = m1.slices_mut();
            let seconds = m2.slices_mut();
            for (((p, g), a), b) in params.zip(grad.slices()).zip(firsts).zip(seconds) {
                for k in 0..p.len() {
                    a[k] = cfg.beta1 * a[k] + (1.0 - cfg.beta1) * g[k];
                    b[k] = cfg.beta2 * b[k] + (1.0 - cfg.beta2) * g[k] * g[k];
                    let mhat = a[k] / c1;
                    let vhat = b[k] / c2;
                    p[k] -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.epsilon);
                }
            }
        }
        record(epoch, &model.params, &mut metrics);
    }
    let last = metrics.last();
    model.meta.train_accuracy = last.train_accuracy;
    model.meta.test_accuracy = last.test_accuracy;
    Ok((model, metrics))
}
