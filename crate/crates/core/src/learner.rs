//! Small differentiable models trained with hand-written backpropagation.
//!
//! A model is a stack of dense layers described by [`MlpSpec`]. With no hidden
//! layers it is multinomial logistic regression (classification) or linear
//! regression (regression). Parameters live in a flat [`ParamVector`] whose
//! segments are `l{k}.w` (row-major, `out × in`) and `l{k}.b` per layer `k`.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Targets};
use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;
use crate::param::{ModelLayout, ParamVector, Partition, Segment};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification,
    Regression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub task: Task,
    /// Number of trailing layers whose parameters are tagged personal.
    pub personal_head_layers: usize,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize, task: Task) -> Self {
        MlpSpec {
            input_dim,
            hidden,
            output_dim,
            activation: Activation::Relu,
            task,
            personal_head_layers: 0,
        }
    }

    pub fn with_personal_head(mut self, layers: usize) -> Self {
        self.personal_head_layers = layers;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn layer_count(&self) -> usize {
        self.hidden.len() + 1
    }

    /// Widths `[input, hidden.., output]`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden);
        w.push(self.output_dim);
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::invalid("spec", "layer widths must be positive"));
        }
        if self.personal_head_layers > self.layer_count() {
            return Err(Error::invalid(
                "personal_head_layers",
                format!(
                    "{} exceeds layer count {}",
                    self.personal_head_layers,
                    self.layer_count()
                ),
            ));
        }
        if self.task == Task::Regression && self.output_dim != 1 {
            return Err(Error::invalid("output_dim", "regression models have one output"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.widths().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn layout(&self) -> Arc<ModelLayout> {
        let widths = self.widths();
        let layers = self.layer_count();
        let first_personal = layers - self.personal_head_layers.min(layers);
        let mut segments = Vec::with_capacity(2 * layers);
        for (k, w) in widths.windows(2).enumerate() {
            let partition = if k >= first_personal {
                Partition::Personal
            } else {
                Partition::Shared
            };
            segments.push(Segment::new(format!("l{k}.w"), w[0] * w[1], partition));
            segments.push(Segment::new(format!("l{k}.b"), w[1], partition));
        }
        ModelLayout::new(segments).expect("positive widths")
    }
}

/// Xavier-uniform weights, zero biases.
pub fn init_model(spec: &MlpSpec, seed: u64) -> ParamVector {
    let layout = spec.layout();
    let mut rng = seed::derived_rng(seed, &[seed::stream::INIT]);
    let mut values = vec![0.0; layout.dim()];
    for (k, w) in spec.widths().windows(2).enumerate() {
        let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
        for v in &mut values[layout.range(2 * k)] {
            *v = rng.random_range(-bound..=bound);
        }
    }
    ParamVector::new(values, layout).expect("finite init")
}

struct Net<'a> {
    spec: &'a MlpSpec,
    params: &'a [f64],
    widths: Vec<usize>,
    w_off: Vec<usize>,
    b_off: Vec<usize>,
}

/// Per-row activations kept for the backward pass.
struct Trace {
    /// Pre-activations per layer.
    z: Vec<Vec<f64>>,
    /// Inputs to each layer (`a[0]` is the feature row).
    a: Vec<Vec<f64>>,
    /// Softmax probabilities or the regression prediction.
    out: Vec<f64>,
}

impl<'a> Net<'a> {
    fn new(spec: &'a MlpSpec, params: &'a ParamVector) -> Result<Self> {
        if params.dim() != spec.dim() {
            return Err(Error::Dimension {
                expected: spec.dim(),
                actual: params.dim(),
            });
        }
        let widths = spec.widths();
        let mut w_off = Vec::new();
        let mut b_off = Vec::new();
        let mut off = 0;
        for w in widths.windows(2) {
            w_off.push(off);
            off += w[0] * w[1];
            b_off.push(off);
            off += w[1];
        }
        Ok(Net {
            spec,
            params: params.values(),
            widths,
            w_off,
            b_off,
        })
    }

    fn forward(&self, x: &[f64]) -> Trace {
        let layers = self.widths.len() - 1;
        let mut z = Vec::with_capacity(layers);
        let mut a = Vec::with_capacity(layers);
        let mut input = x.to_vec();
        for k in 0..layers {
            let (n_in, n_out) = (self.widths[k], self.widths[k + 1]);
            let w = &self.params[self.w_off[k]..self.w_off[k] + n_in * n_out];
            let b = &self.params[self.b_off[k]..self.b_off[k] + n_out];
            let zk: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    b[o] + row.iter().zip(&input).map(|(wi, xi)| wi * xi).sum::<f64>()
                })
                .collect();
            let next = if k + 1 < layers {
                zk.iter().map(|&v| self.spec.activation.apply(v)).collect()
            } else {
                Vec::new()
            };
            a.push(std::mem::replace(&mut input, next));
            z.push(zk);
        }
        let logits = z.last().expect("at least one layer");
        let out = match self.spec.task {
            Task::Classification => softmax(logits),
            Task::Regression => logits.clone(),
        };
        Trace { z, a, out }
    }

    /// Accumulates `scale · ∂loss/∂params` for one row into `grad`.
    fn backward(&self, trace: &Trace, target: Target, scale: f64, grad: &mut [f64]) {
        let layers = self.widths.len() - 1;
        let mut delta: Vec<f64> = match target {
            Target::Class(c) => trace
                .out
                .iter()
                .enumerate()
                .map(|(j, p)| scale * (p - if j == c { 1.0 } else { 0.0 }))
                .collect(),
            Target::Value(y) => vec![scale * 2.0 * (trace.out[0] - y)],
        };
        for k in (0..layers).rev() {
            let (n_in, n_out) = (self.widths[k], self.widths[k + 1]);
            let input = &trace.a[k];
            let gw = &mut grad[self.w_off[k]..self.w_off[k] + n_in * n_out];
            for o in 0..n_out {
                let d = delta[o];
                if d != 0.0 {
                    for (g, x) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(input) {
                        *g += d * x;
                    }
                }
            }
            let gb = &mut grad[self.b_off[k]..self.b_off[k] + n_out];
            for (g, d) in gb.iter_mut().zip(&delta) {
                *g += d;
            }
            if k > 0 {
                let w = &self.params[self.w_off[k]..self.w_off[k] + n_in * n_out];
                let zprev = &trace.z[k - 1];
                delta = (0..n_in)
                    .map(|i| {
                        let s: f64 = (0..n_out).map(|o| w[o * n_in + i] * delta[o]).sum();
                        s * self.spec.activation.derivative(zprev[i])
                    })
                    .collect();
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Target {
    Class(usize),
    Value(f64),
}

fn target_of(data: &Dataset, row: usize) -> Target {
    match &data.targets {
        Targets::Labels { labels, .. } => Target::Class(labels[row]),
        Targets::Values(v) => Target::Value(v[row]),
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn row_loss(out: &[f64], target: Target) -> f64 {
    match target {
        Target::Class(c) => -(out[c].max(1e-300)).ln(),
        Target::Value(y) => (out[0] - y).powi(2),
    }
}

fn check_task(spec: &MlpSpec, data: &Dataset) -> Result<()> {
    if data.d != spec.input_dim {
        return Err(Error::Dimension {
            expected: spec.input_dim,
            actual: data.d,
        });
    }
    match (&data.targets, spec.task) {
        (Targets::Labels { classes, .. }, Task::Classification) if *classes <= spec.output_dim => {
            Ok(())
        }
        (Targets::Values(_), Task::Regression) => Ok(()),
        _ => Err(Error::invalid("dataset", "targets do not match the model task")),
    }
}

/// Model output for one feature row: class probabilities or a prediction.
pub fn forward(params: &ParamVector, spec: &MlpSpec, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != spec.input_dim {
        return Err(Error::Dimension {
            expected: spec.input_dim,
            actual: x.len(),
        });
    }
    Ok(Net::new(spec, params)?.forward(x).out)
}

/// Mean loss over the given rows (cross-entropy or squared error).
pub fn loss(params: &ParamVector, spec: &MlpSpec, data: &Dataset, rows: &[usize]) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::Empty("batch"));
    }
    check_task(spec, data)?;
    let net = Net::new(spec, params)?;
    let total: f64 = rows
        .iter()
        .map(|&r| row_loss(&net.forward(data.row(r)).out, target_of(data, r)))
        .sum();
    Ok(total / rows.len() as f64)
}

/// Gradient of the mean loss over `rows`.
pub fn gradient(
    params: &ParamVector,
    spec: &MlpSpec,
    data: &Dataset,
    rows: &[usize],
) -> Result<ParamVector> {
    Ok(gradient_and_loss(params, spec, data, rows)?.0)
}

fn gradient_and_loss(
    params: &ParamVector,
    spec: &MlpSpec,
    data: &Dataset,
    rows: &[usize],
) -> Result<(ParamVector, f64)> {
    if rows.is_empty() {
        return Err(Error::Empty("batch"));
    }
    check_task(spec, data)?;
    let net = Net::new(spec, params)?;
    let scale = 1.0 / rows.len() as f64;
    let mut grad = vec![0.0; params.dim()];
    let mut total = 0.0;
    for &r in rows {
        let trace = net.forward(data.row(r));
        let target = target_of(data, r);
        total += row_loss(&trace.out, target);
        net.backward(&trace, target, scale, &mut grad);
    }
    Ok((params.with_values(grad)?, total * scale))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            learning_rate,
            ..Default::default()
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        OptimizerConfig {
            learning_rate,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate", "must be positive"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(name, "must lie in [0, 1)"));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon", "must be positive"));
        }
        Ok(())
    }

    pub fn new_state(&self, like: &ParamVector) -> Option<AdamState> {
        match self.kind {
            OptimizerKind::Sgd => None,
            OptimizerKind::Adam => Some(AdamState::new(like)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ParamVector,
    pub v: ParamVector,
    pub t: u64,
}

impl AdamState {
    pub fn new(like: &ParamVector) -> Self {
        AdamState {
            m: like.zeros_like(),
            v: like.zeros_like(),
            t: 0,
        }
    }
}

pub fn optimizer_step(
    params: &ParamVector,
    grad: &ParamVector,
    cfg: &OptimizerConfig,
    state: Option<AdamState>,
) -> Result<(ParamVector, Option<AdamState>)> {
    params.check_layout(grad)?;
    let lr = cfg.learning_rate;
    match cfg.kind {
        OptimizerKind::Sgd => {
            let values = params
                .values()
                .iter()
                .zip(grad.values())
                .map(|(p, g)| p - lr * g)
                .collect();
            Ok((params.with_values(values)?, state))
        }
        OptimizerKind::Adam => {
            let mut st = state.ok_or(Error::MissingOptimizerState)?;
            params.check_layout(&st.m)?;
            st.t += 1;
            let (b1, b2) = (cfg.beta1, cfg.beta2);
            let bc1 = 1.0 - b1.powi(st.t as i32);
            let bc2 = 1.0 - b2.powi(st.t as i32);
            let mut values = params.values().to_vec();
            let m = st.m.values_mut();
            for (i, &g) in grad.values().iter().enumerate() {
                m[i] = b1 * m[i] + (1.0 - b1) * g;
            }
            let v = st.v.values_mut();
            for (i, &g) in grad.values().iter().enumerate() {
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            }
            for (i, p) in values.iter_mut().enumerate() {
                let m_hat = st.m.values()[i] / bc1;
                let v_hat = st.v.values()[i] / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
            Ok((params.with_values(values)?, Some(st)))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalTrainResult {
    pub new_params: ParamVector,
    pub delta: ParamVector,
    pub num_samples: usize,
    /// Mean minibatch loss per epoch, measured before each step.
    pub loss_trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub batch_size: usize,
}

/// Minibatch trainer whose shuffle stream and optimizer state persist across
/// calls to [`LocalTrainer::run_epochs`].
pub struct LocalTrainer<'a> {
    spec: &'a MlpSpec,
    data: &'a Dataset,
    cfg: &'a OptimizerConfig,
    batch_size: usize,
    order: Vec<usize>,
    rng: ChaCha8Rng,
    params: ParamVector,
    state: Option<AdamState>,
}

impl<'a> LocalTrainer<'a> {
    pub fn new(
        start: &ParamVector,
        spec: &'a MlpSpec,
        data: &'a Dataset,
        shard: &[usize],
        batch_size: usize,
        cfg: &'a OptimizerConfig,
        seed: u64,
    ) -> Result<Self> {
        if shard.is_empty() {
            return Err(Error::Empty("shard"));
        }
        if batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be positive"));
        }
        check_task(spec, data)?;
        if start.dim() != spec.dim() {
            return Err(Error::Dimension {
                expected: spec.dim(),
                actual: start.dim(),
            });
        }
        Ok(LocalTrainer {
            spec,
            data,
            cfg,
            batch_size,
            order: shard.to_vec(),
            rng: seed::derived_rng(seed, &[seed::stream::SHUFFLE]),
            params: start.clone(),
            state: cfg.new_state(start),
        })
    }

    /// Runs `epochs` passes and returns the mean loss of each.
    pub fn run_epochs(&mut self, epochs: usize) -> Result<Vec<f64>> {
        let mut trace = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            self.order.shuffle(&mut self.rng);
            let mut epoch_loss = 0.0;
            for batch in self.order.chunks(self.batch_size) {
                let (grad, batch_loss) =
                    gradient_and_loss(&self.params, self.spec, self.data, batch)?;
                epoch_loss += batch_loss * batch.len() as f64;
                let (next, next_state) =
                    optimizer_step(&self.params, &grad, self.cfg, self.state.take())?;
                self.params = next;
                self.state = next_state;
            }
            trace.push(epoch_loss / self.order.len() as f64);
        }
        if !self.params.is_finite() {
            return Err(Error::invalid("learning_rate", "training diverged to non-finite values"));
        }
        Ok(trace)
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn samples(&self) -> usize {
        self.order.len()
    }
}

/// Runs `epochs` passes of shuffled minibatch descent over `shard`.
pub fn local_train(
    start: &ParamVector,
    spec: &MlpSpec,
    data: &Dataset,
    shard: &[usize],
    schedule: TrainSchedule,
    cfg: &OptimizerConfig,
    seed: u64,
) -> Result<LocalTrainResult> {
    let mut trainer = LocalTrainer::new(start, spec, data, shard, schedule.batch_size, cfg, seed)?;
    let loss_trace = trainer.run_epochs(schedule.epochs)?;
    let params = trainer.params;
    let delta = params.sub(start)?;
    Ok(LocalTrainResult {
        new_params: params,
        delta,
        num_samples: shard.len(),
        loss_trace,
    })
}

/// Outcome of evaluating a model on a set of rows.
#[derive(Debug, Clone, PartialEq)]
pub enum Evaluation {
    Classification(ConfusionMatrix),
    Regression { predictions: Vec<f64>, truth: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub loss: f64,
    pub outcome: Evaluation,
}

impl EvalResult {
    pub fn accuracy(&self) -> Option<f64> {
        match &self.outcome {
            Evaluation::Classification(cm) => Some(cm.accuracy()),
            Evaluation::Regression { .. } => None,
        }
    }

    pub fn mse(&self) -> Option<f64> {
        match &self.outcome {
            Evaluation::Classification(_) => None,
            Evaluation::Regression { predictions, truth } => Some(
                predictions
                    .iter()
                    .zip(truth)
                    .map(|(p, t)| (p - t).powi(2))
                    .sum::<f64>()
                    / truth.len() as f64,
            ),
        }
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn evaluate(
    params: &ParamVector,
    spec: &MlpSpec,
    data: &Dataset,
    rows: &[usize],
) -> Result<EvalResult> {
    if rows.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    check_task(spec, data)?;
    let net = Net::new(spec, params)?;
    let mut total = 0.0;
    let outcome = match &data.targets {
        Targets::Labels { labels, .. } => {
            let mut cm = ConfusionMatrix::new(spec.output_dim);
            for &r in rows {
                let out = net.forward(data.row(r)).out;
                total += row_loss(&out, Target::Class(labels[r]));
                cm.record(labels[r], argmax(&out));
            }
            Evaluation::Classification(cm)
        }
        Targets::Values(values) => {
            let mut predictions = Vec::with_capacity(rows.len());
            let mut truth = Vec::with_capacity(rows.len());
            for &r in rows {
                let out = net.forward(data.row(r)).out;
                total += row_loss(&out, Target::Value(values[r]));
                predictions.push(out[0]);
                truth.push(values[r]);
            }
            Evaluation::Regression { predictions, truth }
        }
    };
    Ok(EvalResult {
        loss: total / rows.len() as f64,
        outcome,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;

    fn all(n: usize) -> Vec<usize> {
        (0..n).collect()
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let spec = MlpSpec::new(3, vec![4], 2, Task::Classification);
        assert_eq!(spec.dim(), 26);
        assert_eq!(spec.layout().dim(), 26);
        let a = init_model(&spec, 42);
        let b = init_model(&spec, 42);
        assert_eq!(a.values(), b.values());
        let layout = spec.layout();
        for name in ["l0.b", "l1.b"] {
            let r = layout.segment_range(name).unwrap();
            assert!(a.values()[r].iter().all(|&v| v == 0.0));
        }
        let bound = (6.0f64 / 7.0).sqrt();
        let r = layout.segment_range("l0.w").unwrap();
        assert!(a.values()[r].iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn personal_head_tags_trailing_layers() {
        let spec = MlpSpec::new(3, vec![4, 5], 2, Task::Classification).with_personal_head(1);
        let layout = spec.layout();
        let parts: Vec<_> = layout.segments().iter().map(|s| s.partition).collect();
        assert_eq!(parts[..4], [Partition::Shared; 4]);
        assert_eq!(parts[4..], [Partition::Personal; 2]);
        assert!(MlpSpec::new(3, vec![], 2, Task::Classification)
            .with_personal_head(2)
            .validate()
            .is_err());
    }

    #[test]
    fn zero_weights_give_uniform_probabilities() {
        let spec = MlpSpec::new(5, vec![3], 4, Task::Classification);
        let p = ParamVector::zeros(spec.layout());
        let out = forward(&p, &spec, &[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap();
        for v in out {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn linear_regression_forward() {
        let spec = MlpSpec::new(1, vec![], 1, Task::Regression);
        let p = ParamVector::new(vec![3.0, 1.0], spec.layout()).unwrap();
        assert_eq!(forward(&p, &spec, &[2.0]).unwrap(), vec![7.0]);
        assert!(matches!(
            forward(&p, &spec, &[1.0, 2.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn softmax_normalises() {
        let spec = MlpSpec::new(4, vec![8], 3, Task::Classification);
        let p = init_model(&spec, 3);
        let mut rng = seed::rng(9);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
            let out = forward(&p, &spec, &x).unwrap();
            assert!(out.iter().all(|&v| v >= 0.0));
            assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicated_batch_gives_same_gradient() {
        let data = synth_blobs(1, 20, 3, 2, 2.0).unwrap();
        let spec = MlpSpec::new(3, vec![4], 2, Task::Classification);
        let p = init_model(&spec, 1);
        let rows = all(20);
        let twice: Vec<usize> = rows.iter().chain(rows.iter()).cloned().collect();
        let g1 = gradient(&p, &spec, &data, &rows).unwrap();
        let g2 = gradient(&p, &spec, &data, &twice).unwrap();
        for (a, b) in g1.values().iter().zip(g2.values()) {
            assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0));
        }
        assert!(matches!(gradient(&p, &spec, &data, &[]), Err(Error::Empty(_))));
    }

    #[test]
    fn zero_residual_regression_has_zero_gradient() {
        let spec = MlpSpec::new(2, vec![], 1, Task::Regression);
        let p = ParamVector::new(vec![2.0, -1.0, 0.5], spec.layout()).unwrap();
        let features = vec![1.0, 2.0, 3.0, -1.0, 0.0, 4.0];
        let targets = (0..3)
            .map(|r| 2.0 * features[2 * r] - features[2 * r + 1] + 0.5)
            .collect();
        let data = Dataset::new(features, 2, Targets::Values(targets)).unwrap();
        let g = gradient(&p, &spec, &data, &all(3)).unwrap();
        assert!(g.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sgd_and_adam_steps() {
        let p = ParamVector::from_slice(&[1.0]);
        let g = p.with_values(vec![2.0]).unwrap();
        let (next, _) = optimizer_step(&p, &g, &OptimizerConfig::sgd(0.1), None).unwrap();
        assert!((next.values()[0] - 0.8).abs() < 1e-15);

        let cfg = OptimizerConfig::adam(0.001);
        assert!(matches!(
            optimizer_step(&p, &g, &cfg, None),
            Err(Error::MissingOptimizerState)
        ));
        let zero = p.zeros_like();
        let (next, st) = optimizer_step(&p, &zero, &cfg, Some(AdamState::new(&p))).unwrap();
        assert_eq!(next.values(), p.values());
        assert_eq!(st.unwrap().t, 1);
    }

    /// Independent Adam: scalar loop with explicit bias correction.
    fn reference_adam(p: &[f64], grads: &[Vec<f64>], lr: f64) -> Vec<f64> {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
        let mut p = p.to_vec();
        let mut m = vec![0.0; p.len()];
        let mut v = vec![0.0; p.len()];
        for (t, g) in grads.iter().enumerate() {
            let t = (t + 1) as i32;
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mh = m[i] / (1.0 - b1.powi(t));
                let vh = v[i] / (1.0 - b2.powi(t));
                p[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        p
    }

    #[test]
    fn adam_matches_reference() {
        let cfg = OptimizerConfig::adam(0.001);
        let p0 = ParamVector::from_slice(&[0.5]);
        let g = p0.with_values(vec![1.0]).unwrap();
        let (p1, _) = optimizer_step(&p0, &g, &cfg, Some(AdamState::new(&p0))).unwrap();
        assert!((p1.values()[0] - (0.5 - 0.001 / (1.0 + 1e-8))).abs() < 1e-12);

        let mut rng = seed::rng(5);
        let start: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let grads: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..6).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let mut p = ParamVector::from_slice(&start);
        let mut st = Some(AdamState::new(&p));
        for g in &grads {
            let gv = p.with_values(g.clone()).unwrap();
            let (np, ns) = optimizer_step(&p, &gv, &cfg, st).unwrap();
            p = np;
            st = ns;
        }
        let expect = reference_adam(&start, &grads, 0.001);
        for (a, b) in p.values().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn local_train_zero_epochs_and_determinism() {
        let data = synth_blobs(4, 60, 2, 2, 4.0).unwrap();
        let spec = MlpSpec::new(2, vec![4], 2, Task::Classification);
        let p = init_model(&spec, 0);
        let cfg = OptimizerConfig::sgd(0.1);
        let sched = TrainSchedule {
            epochs: 0,
            batch_size: 8,
        };
        let r = local_train(&p, &spec, &data, &all(60), sched, &cfg, 1).unwrap();
        assert!(r.delta.values().iter().all(|&v| v == 0.0));
        assert!(r.loss_trace.is_empty());

        let sched = TrainSchedule {
            epochs: 3,
            batch_size: 8,
        };
        let a = local_train(&p, &spec, &data, &all(60), sched, &cfg, 7).unwrap();
        let b = local_train(&p, &spec, &data, &all(60), sched, &cfg, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.num_samples, 60);
        assert_eq!(a.delta, a.new_params.sub(&p).unwrap());
        assert!(matches!(
            local_train(&p, &spec, &data, &[], sched, &cfg, 7),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn separable_blobs_train_to_high_accuracy() {
        let data = synth_blobs(10, 200, 2, 2, 6.0).unwrap();
        let spec = MlpSpec::new(2, vec![], 2, Task::Classification);
        let p = init_model(&spec, 0);
        let sched = TrainSchedule {
            epochs: 20,
            batch_size: 16,
        };
        let r = local_train(&p, &spec, &data, &all(200), sched, &OptimizerConfig::sgd(0.1), 3)
            .unwrap();
        let acc = evaluate(&r.new_params, &spec, &data, &all(200))
            .unwrap()
            .accuracy()
            .unwrap();
        assert!(acc >= 0.98, "accuracy {acc}");
    }

    #[test]
    fn evaluate_confusion_matrices() {
        // Logistic regression on 1-d inputs: class = [x > 0].
        let spec = MlpSpec::new(1, vec![], 2, Task::Classification);
        let perfect = ParamVector::new(vec![-10.0, 10.0, 0.0, 0.0], spec.layout()).unwrap();
        let xs = [-2.0, -1.0, -0.5, 0.5, 1.0, 2.0, -3.0, 3.0, 0.25, -0.25];
        let labels: Vec<usize> = xs.iter().map(|&x| usize::from(x > 0.0)).collect();
        let data = Dataset::new(
            xs.to_vec(),
            1,
            Targets::Labels {
                labels: labels.clone(),
                classes: 2,
            },
        )
        .unwrap();
        let ev = evaluate(&perfect, &spec, &data, &all(10)).unwrap();
        let Evaluation::Classification(cm) = &ev.outcome else {
            panic!()
        };
        assert_eq!(cm.counts(), &[vec![5, 0], vec![0, 5]]);

        // Threshold at x > 0.75: positives 0.5 and 0.25 become false negatives.
        let shifted = ParamVector::new(vec![-10.0, 10.0, 7.5, -7.5], spec.layout()).unwrap();
        let ev = evaluate(&shifted, &spec, &data, &all(10)).unwrap();
        let Evaluation::Classification(cm) = &ev.outcome else {
            panic!()
        };
        assert_eq!(cm.counts(), &[vec![5, 0], vec![2, 3]]);
        assert!((cm.accuracy() - 0.8).abs() < 1e-15);

        assert!(matches!(evaluate(&perfect, &spec, &data, &[]), Err(Error::Empty(_))));
    }

    #[test]
    fn constant_predictor_on_balanced_four_classes() {
        let spec = MlpSpec::new(1, vec![], 4, Task::Classification);
        let p = ParamVector::zeros(spec.layout());
        let data = Dataset::new(
            (0..8).map(|i| i as f64).collect(),
            1,
            Targets::Labels {
                labels: vec![0, 1, 2, 3, 0, 1, 2, 3],
                classes: 4,
            },
        )
        .unwrap();
        let acc = evaluate(&p, &spec, &data, &all(8)).unwrap().accuracy().unwrap();
        assert_eq!(acc, 0.25);
    }

    #[test]
    fn output_bias_shift_keeps_argmax() {
        let data = synth_blobs(2, 100, 3, 3, 2.0).unwrap();
        let spec = MlpSpec::new(3, vec![5], 3, Task::Classification);
        let p = init_model(&spec, 8);
        let range = spec.layout().segment_range("l1.b").unwrap();
        let mut shifted = p.values().to_vec();
        shifted[range].iter_mut().for_each(|b| *b += 3.7);
        let q = p.with_values(shifted).unwrap();
        let a = evaluate(&p, &spec, &data, &all(100)).unwrap();
        let b = evaluate(&q, &spec, &data, &all(100)).unwrap();
        assert_eq!(a.outcome, b.outcome);
    }
}
