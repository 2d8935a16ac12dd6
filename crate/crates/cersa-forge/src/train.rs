//! Deterministic fine-tuning harness: stacked adapter layers, two loss
//! heads, and an adaptive optimizer with decoupled weight decay.
//!
//! A run is a pure function of `(model, config, task data)`. Batches follow
//! a fixed shuffle derived from the run seed, only trainable tensors are
//! updated, and divergence aborts with the offending step rather than being
//! clipped away.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adapter::{self, AdapterKind, AdapterLayer, LayerGrads};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::svd::{grassmann, svd};
use crate::task::{self, TaskData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    fn derivative(&self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossHead {
    SoftmaxCrossEntropy,
    MeanSquaredError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDims {
    pub in_dim: usize,
    pub out_dim: usize,
}

/// Stack description: layer dimensions, the activation between layers, the
/// loss head, and one adapter kind per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub layers: Vec<LayerDims>,
    pub activation: Activation,
    pub head: LossHead,
    pub kinds: Vec<AdapterKind>,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidArgument("model needs at least one layer".into()));
        }
        if self.kinds.len() != self.layers.len() {
            return Err(Error::LengthMismatch(format!(
                "{} adapter kinds for {} layers",
                self.kinds.len(),
                self.layers.len()
            )));
        }
        for pair in self.layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::ShapeMismatch {
                    context: "model layer chain".into(),
                    lhs_rows: pair[0].in_dim,
                    lhs_cols: pair[0].out_dim,
                    rhs_rows: pair[1].in_dim,
                    rhs_cols: pair[1].out_dim,
                });
            }
        }
        for kind in &self.kinds {
            kind.validate()?;
        }
        Ok(())
    }

    /// The same stack with every layer switched to `kind`.
    pub fn with_kind(&self, kind: AdapterKind) -> ModelSpec {
        ModelSpec {
            layers: self.layers.clone(),
            activation: self.activation,
            head: self.head,
            kinds: vec![kind; self.layers.len()],
        }
    }
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}
fn default_checkpoint_every() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Span checks and loss checkpoints every this many steps (0 = final
    /// step only).
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut issues = Vec::new();
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            issues.push("learning_rate must be finite and non-negative".to_string());
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            issues.push("weight_decay must be finite and non-negative".to_string());
        }
        if self.steps == 0 {
            issues.push("steps must be at least 1".to_string());
        }
        if self.batch_size == 0 {
            issues.push("batch_size must be at least 1".to_string());
        }
        if !(self.beta1 >= 0.0 && self.beta1 < 1.0 && self.beta2 >= 0.0 && self.beta2 < 1.0) {
            issues.push("optimizer betas must lie in [0, 1)".to_string());
        }
        if self.epsilon <= 0.0 || self.epsilon.is_nan() {
            issues.push("epsilon must be positive".to_string());
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Config { issues })
        }
    }
}

/// Subspace drift probe at one logged step: the smallest Grassmann
/// similarity between any factored layer's effective weight and its frozen
/// bases.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpanCheck {
    pub step: usize,
    pub psi_u_min: f64,
    pub psi_v_min: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub kind_labels: Vec<String>,
    pub loss: Vec<f64>,
    pub final_train_loss: f64,
    pub final_test_loss: f64,
    pub test_accuracy: Option<f64>,
    pub trainable_count: usize,
    pub frozen_hash_before: String,
    pub frozen_hash_after: String,
    pub span_checks: Vec<SpanCheck>,
    pub wall_seconds: f64,
    pub threads: usize,
    pub config: TrainConfig,
}

impl RunRecord {
    /// Loss curve CSV with columns `step,loss`.
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("step,loss\n");
        for (i, l) in self.loss.iter().enumerate() {
            out.push_str(&format!("{},{}\n", i + 1, crate::report::fmt_real(*l)));
        }
        out
    }
}

/// Decoupled-weight-decay adaptive optimizer over the trainable slots of a
/// layer stack. Decay multiplies parameters directly by `1 - lr * wd`
/// after the moment update, never through the gradient.
struct AdamW {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    weight_decay: f64,
    t: u32,
    m: Vec<Vec<Vec<f64>>>,
    v: Vec<Vec<Vec<f64>>>,
}

impl AdamW {
    fn new(cfg: &TrainConfig, layers: &mut [AdapterLayer]) -> Self {
        let shapes: Vec<Vec<usize>> = layers
            .iter_mut()
            .map(|l| l.trainable_slots_mut().iter().map(|s| s.len()).collect())
            .collect();
        let zeros = |shapes: &[Vec<usize>]| {
            shapes
                .iter()
                .map(|slots| slots.iter().map(|len| vec![0.0; *len]).collect())
                .collect()
        };
        AdamW {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            weight_decay: cfg.weight_decay,
            t: 0,
            m: zeros(&shapes),
            v: zeros(&shapes),
        }
    }

    fn step(&mut self, layers: &mut [AdapterLayer], grads: &[LayerGrads]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (layer_idx, layer) in layers.iter_mut().enumerate() {
            let mut slots = layer.trainable_slots_mut();
            for (slot_idx, slot) in slots.iter_mut().enumerate() {
                let g = &grads[layer_idx].slots[slot_idx];
                let m = &mut self.m[layer_idx][slot_idx];
                let v = &mut self.v[layer_idx][slot_idx];
                for i in 0..slot.len() {
                    m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                    v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    slot[i] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
                    slot[i] -= self.lr * self.weight_decay * slot[i];
                }
            }
        }
    }
}

/// Build the layer stack from a model spec and per-layer base weights.
pub fn build_model(
    spec: &ModelSpec,
    base_weights: &[Matrix],
    seed: u64,
) -> Result<Vec<AdapterLayer>> {
    spec.validate()?;
    if base_weights.len() != spec.layers.len() {
        return Err(Error::LengthMismatch(format!(
            "{} base weights for {} layers",
            base_weights.len(),
            spec.layers.len()
        )));
    }
    spec.layers
        .iter()
        .zip(&spec.kinds)
        .zip(base_weights)
        .enumerate()
        .map(|(idx, ((dims, kind), w0))| {
            if w0.shape() != (dims.out_dim, dims.in_dim) {
                return Err(Error::ShapeMismatch {
                    context: format!("base weight for layer{idx}"),
                    lhs_rows: w0.rows(),
                    lhs_cols: w0.cols(),
                    rhs_rows: dims.out_dim,
                    rhs_cols: dims.in_dim,
                });
            }
            adapter::build(*kind, w0, &vec![0.0; dims.out_dim], seed ^ ((idx as u64 + 1) * 0x9e37))
                .map_err(|e| e.for_layer(format!("layer{idx}")))
        })
        .collect()
}

/// Deterministic base weights for a model: layer 0 takes the task's base
/// matrix when the shapes match (so the adapted subspace aligns with the
/// teacher), everything else is a seeded decaying-spectrum matrix.
pub fn base_weights_for(spec: &ModelSpec, data: &TaskData, seed: u64) -> Result<Vec<Matrix>> {
    spec.layers
        .iter()
        .enumerate()
        .map(|(idx, dims)| {
            if idx == 0 {
                if let Some(base) = &data.base_weight {
                    if base.shape() == (dims.out_dim, dims.in_dim) {
                        return Ok(base.clone());
                    }
                }
            }
            task::decaying_random(dims.out_dim, dims.in_dim, seed ^ ((idx as u64 + 1) * 0x51ed))
        })
        .collect()
}

struct ForwardTrace {
    /// Input actually fed to each layer (post-activation of the previous).
    layer_inputs: Vec<Matrix>,
    /// Raw affine outputs of each layer, pre-activation.
    pre_activations: Vec<Matrix>,
    output: Matrix,
}

fn model_forward(layers: &[AdapterLayer], activation: Activation, x: &Matrix) -> Result<ForwardTrace> {
    let mut layer_inputs = Vec::with_capacity(layers.len());
    let mut pre_activations = Vec::with_capacity(layers.len());
    let mut current = x.clone();
    for (idx, layer) in layers.iter().enumerate() {
        layer_inputs.push(current.clone());
        let z = layer.forward(&current)?;
        pre_activations.push(z.clone());
        current = if idx + 1 < layers.len() {
            Matrix::from_fn(z.rows(), z.cols(), |r, c| activation.apply(z.get(r, c)))
        } else {
            z
        };
    }
    Ok(ForwardTrace { layer_inputs, pre_activations, output: current })
}

/// Loss value and gradient with respect to the model output.
fn head_loss(head: LossHead, pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            context: "loss head".into(),
            lhs_rows: pred.rows(),
            lhs_cols: pred.cols(),
            rhs_rows: target.rows(),
            rhs_cols: target.cols(),
        });
    }
    let batch = pred.rows() as f64;
    match head {
        LossHead::MeanSquaredError => {
            let n = (pred.rows() * pred.cols()) as f64;
            let mut grad = Matrix::zeros(pred.rows(), pred.cols());
            let mut loss = 0.0;
            for r in 0..pred.rows() {
                for c in 0..pred.cols() {
                    let d = pred.get(r, c) - target.get(r, c);
                    loss += d * d;
                    grad.set(r, c, 2.0 * d / n);
                }
            }
            Ok((loss / n, grad))
        }
        LossHead::SoftmaxCrossEntropy => {
            let mut grad = Matrix::zeros(pred.rows(), pred.cols());
            let mut loss = 0.0;
            for r in 0..pred.rows() {
                let row = pred.row(r);
                let max = row.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
                let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                for c in 0..pred.cols() {
                    let p = exps[c] / z;
                    let t = target.get(r, c);
                    if t > 0.0 {
                        loss -= t * (p.max(1e-300)).ln();
                    }
                    grad.set(r, c, (p - t) / batch);
                }
            }
            Ok((loss / batch, grad))
        }
    }
}

fn backward(
    layers: &[AdapterLayer],
    activation: Activation,
    trace: &ForwardTrace,
    output_grad: Matrix,
) -> Result<Vec<LayerGrads>> {
    let mut grads: Vec<Option<LayerGrads>> = (0..layers.len()).map(|_| None).collect();
    let mut upstream = output_grad;
    for idx in (0..layers.len()).rev() {
        let g = layers[idx].grad(&trace.layer_inputs[idx], &upstream)?;
        if idx > 0 {
            let z = &trace.pre_activations[idx - 1];
            upstream = Matrix::from_fn(g.input_grad.rows(), g.input_grad.cols(), |r, c| {
                g.input_grad.get(r, c) * activation.derivative(z.get(r, c))
            });
        }
        grads[idx] = Some(g);
    }
    Ok(grads.into_iter().map(|g| g.unwrap()).collect())
}

fn gather_rows(m: &Matrix, rows: &[usize]) -> Matrix {
    Matrix::from_fn(rows.len(), m.cols(), |r, c| m.get(rows[r], c))
}

fn combined_hash(layers: &[AdapterLayer]) -> String {
    use std::hash::{Hash, Hasher};
    let mut hasher = std::collections::hash_map::DefaultHasher::new();
    for layer in layers {
        layer.frozen_state_hash().hash(&mut hasher);
    }
    format!("{:016x}", hasher.finish())
}

/// Minimum Grassmann similarity between each factored layer's current
/// effective weight and its frozen bases, over the retained rank.
fn span_check(layers: &[AdapterLayer], step: usize) -> Result<Option<SpanCheck>> {
    let mut psi_u_min: Option<f64> = None;
    let mut psi_v_min: Option<f64> = None;
    for layer in layers {
        let Some(factors) = layer.cersa_factors() else { continue };
        let k_alpha = factors.selection.k_alpha;
        let w_eff = factors.effective_weight()?;
        let f = svd(&w_eff)?;
        let psi_u = grassmann(&f.u.take_cols(k_alpha)?, &factors.u_p, k_alpha, k_alpha)?;
        let psi_v = grassmann(
            &f.vt.take_rows(k_alpha)?.transpose(),
            &factors.v_pt.transpose(),
            k_alpha,
            k_alpha,
        )?;
        psi_u_min = Some(psi_u_min.map_or(psi_u, |m: f64| m.min(psi_u)));
        psi_v_min = Some(psi_v_min.map_or(psi_v, |m: f64| m.min(psi_v)));
    }
    Ok(psi_u_min.map(|u| SpanCheck { step, psi_u_min: u, psi_v_min: psi_v_min.unwrap() }))
}

/// Evaluate the head loss over a full dataset, plus accuracy for
/// classification targets.
pub fn evaluate(
    layers: &[AdapterLayer],
    spec: &ModelSpec,
    x: &Matrix,
    y: &Matrix,
) -> Result<(f64, Option<f64>)> {
    let trace = model_forward(layers, spec.activation, x)?;
    let (loss, _) = head_loss(spec.head, &trace.output, y)?;
    let accuracy = match spec.head {
        LossHead::SoftmaxCrossEntropy => {
            let mut correct = 0usize;
            for r in 0..y.rows() {
                let pred_arg = argmax(trace.output.row(r));
                let true_arg = argmax(y.row(r));
                if pred_arg == true_arg {
                    correct += 1;
                }
            }
            Some(correct as f64 / y.rows() as f64)
        }
        LossHead::MeanSquaredError => None,
    };
    Ok((loss, accuracy))
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Train a model built from `spec` on `data`. Deterministic given the seed;
/// only trainable tensors are touched (verified by hashing every frozen
/// tensor before and after).
pub fn train_run(spec: &ModelSpec, cfg: &TrainConfig, data: &TaskData) -> Result<RunRecord> {
    train_run_with(spec, cfg, data, 1)
}

/// [`train_run`] with an explicit recorded thread count. Kernels are
/// sequential; the count is provenance for the run record.
pub fn train_run_with(
    spec: &ModelSpec,
    cfg: &TrainConfig,
    data: &TaskData,
    threads: usize,
) -> Result<RunRecord> {
    Ok(run_loop(spec, cfg, data, threads)?.0)
}

/// Train and also return the pre-adaptation base weights and the final layer
/// states, for checkpoint emission. The base weights are the right "before"
/// side for subspace comparisons: their top-`k_alpha` subspace is exactly
/// what the factorization froze.
pub fn train_run_capturing(
    spec: &ModelSpec,
    cfg: &TrainConfig,
    data: &TaskData,
    threads: usize,
) -> Result<(RunRecord, Vec<Matrix>, Vec<AdapterLayer>)> {
    let base = base_weights_for(spec, data, data_seed(data, cfg))?;
    let (record, final_layers) = run_loop(spec, cfg, data, threads)?;
    Ok((record, base, final_layers))
}

fn run_loop(
    spec: &ModelSpec,
    cfg: &TrainConfig,
    data: &TaskData,
    threads: usize,
) -> Result<(RunRecord, Vec<AdapterLayer>)> {
    cfg.validate()?;
    spec.validate()?;
    let start = Instant::now();
    let base = base_weights_for(spec, data, data_seed(data, cfg))?;
    let mut layers = build_model(spec, &base, cfg.seed)?;
    let frozen_hash_before = combined_hash(&layers);

    let n = data.train_x.rows();
    let mut optimizer = AdamW::new(cfg, &mut layers);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0xA5A5_A5A5));
    order.shuffle(&mut rng);
    let mut cursor = 0usize;

    let mut loss_curve = Vec::with_capacity(cfg.steps);
    let mut span_checks = Vec::new();

    for step in 1..=cfg.steps {
        if cursor + cfg.batch_size > n {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let batch_rows: Vec<usize> = if cfg.batch_size >= n {
            order.clone()
        } else {
            order[cursor..cursor + cfg.batch_size].to_vec()
        };
        cursor += cfg.batch_size.min(n);

        let xb = gather_rows(&data.train_x, &batch_rows);
        let yb = gather_rows(&data.train_y, &batch_rows);
        let trace = model_forward(&layers, spec.activation, &xb)?;
        let (loss, out_grad) = head_loss(spec.head, &trace.output, &yb)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step });
        }
        loss_curve.push(loss);
        let grads = backward(&layers, spec.activation, &trace, out_grad)?;
        optimizer.step(&mut layers, &grads);

        let log_now = (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0)
            || step == cfg.steps;
        if log_now {
            if let Some(check) = span_check(&layers, step)? {
                span_checks.push(check);
            }
        }
    }

    let frozen_hash_after = combined_hash(&layers);
    let (final_train_loss, _) = evaluate(&layers, spec, &data.train_x, &data.train_y)?;
    let (final_test_loss, test_accuracy) = evaluate(&layers, spec, &data.test_x, &data.test_y)?;

    let record = RunRecord {
        kind_labels: spec.kinds.iter().map(|k| k.label()).collect(),
        loss: loss_curve,
        final_train_loss,
        final_test_loss,
        test_accuracy,
        trainable_count: layers.iter().map(|l| l.trainable_count()).sum(),
        frozen_hash_before,
        frozen_hash_after,
        span_checks,
        wall_seconds: start.elapsed().as_secs_f64(),
        threads,
        config: cfg.clone(),
    };
    Ok((record, layers))
}

/// Base-weight seed: derived from the task seed only, so every adapter kind
/// compared on the same data starts from identical weights.
fn data_seed(data: &TaskData, _cfg: &TrainConfig) -> u64 {
    // Hash a few data bytes so distinct tasks get distinct bases even when
    // they share a seed field.
    use std::hash::{Hash, Hasher};
    let mut hasher = std::collections::hash_map::DefaultHasher::new();
    data.train_x.shape().hash(&mut hasher);
    for v in data.train_x.data().iter().take(16) {
        v.to_bits().hash(&mut hasher);
    }
    hasher.finish()
}

/// One row of a method-comparison table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareRow {
    pub kind_label: String,
    pub seed: u64,
    pub final_train_loss: Option<f64>,
    pub final_test_loss: Option<f64>,
    pub trainable_count: Option<usize>,
    pub error: Option<String>,
}

/// Ranking entry: kinds ordered by median final test loss (ascending).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankedKind {
    pub position: usize,
    pub kind_label: String,
    pub median_test_loss: f64,
    pub trainable_count: Option<usize>,
    pub failed_runs: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareOutcome {
    pub rows: Vec<CompareRow>,
    pub ranking: Vec<RankedKind>,
}

impl CompareOutcome {
    pub fn rows_csv(&self) -> String {
        let mut out = String::from("kind,seed,final_train_loss,final_test_loss,trainable_count,error\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                crate::report::csv_field(&r.kind_label),
                r.seed,
                r.final_train_loss.map(crate::report::fmt_real).unwrap_or_default(),
                r.final_test_loss.map(crate::report::fmt_real).unwrap_or_default(),
                r.trainable_count.map(|c| c.to_string()).unwrap_or_default(),
                crate::report::csv_field(r.error.as_deref().unwrap_or("")),
            ));
        }
        out
    }

    pub fn ranking_csv(&self) -> String {
        let mut out = String::from("position,kind,median_test_loss,trainable_count,failed_runs\n");
        for r in &self.ranking {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.position,
                crate::report::csv_field(&r.kind_label),
                crate::report::fmt_real(r.median_test_loss),
                r.trainable_count.map(|c| c.to_string()).unwrap_or_default(),
                r.failed_runs,
            ));
        }
        out
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n == 0 {
        f64::INFINITY
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Run every kind over the shared data and seeds; per-run failures land in
/// the table instead of aborting the comparison.
pub fn compare_methods(
    kinds: &[AdapterKind],
    template: &ModelSpec,
    cfg: &TrainConfig,
    data: &TaskData,
    seeds: &[u64],
) -> Result<CompareOutcome> {
    if kinds.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArgument("compare needs kinds and seeds".into()));
    }
    let mut rows = Vec::new();
    let mut ranking = Vec::new();
    for kind in kinds {
        let spec = template.with_kind(*kind);
        let mut losses = Vec::new();
        let mut trainable = None;
        let mut failed = 0usize;
        for &seed in seeds {
            let run_cfg = TrainConfig { seed, ..cfg.clone() };
            match train_run(&spec, &run_cfg, data) {
                Ok(record) => {
                    losses.push(record.final_test_loss);
                    trainable = Some(record.trainable_count);
                    rows.push(CompareRow {
                        kind_label: kind.label(),
                        seed,
                        final_train_loss: Some(record.final_train_loss),
                        final_test_loss: Some(record.final_test_loss),
                        trainable_count: Some(record.trainable_count),
                        error: None,
                    });
                }
                Err(err) => {
                    failed += 1;
                    rows.push(CompareRow {
                        kind_label: kind.label(),
                        seed,
                        final_train_loss: None,
                        final_test_loss: None,
                        trainable_count: None,
                        error: Some(err.to_string()),
                    });
                }
            }
        }
        let mut losses_for_median = losses.clone();
        ranking.push(RankedKind {
            position: 0,
            kind_label: kind.label(),
            median_test_loss: median(&mut losses_for_median),
            trainable_count: trainable,
            failed_runs: failed,
        });
    }
    ranking.sort_by(|a, b| a.median_test_loss.partial_cmp(&b.median_test_loss).unwrap());
    for (i, r) in ranking.iter_mut().enumerate() {
        r.position = i + 1;
    }
    Ok(CompareOutcome { rows, ranking })
}

/// Mean relative accuracy drop across held-out tasks. Negative values mean
/// the fine-tuned model improved on them.
pub fn forgetting_rate(baseline_acc: &[f64], post_acc: &[f64]) -> Result<f64> {
    if baseline_acc.len() != post_acc.len() {
        return Err(Error::LengthMismatch(format!(
            "baseline has {} entries, post has {}",
            baseline_acc.len(),
            post_acc.len()
        )));
    }
    if baseline_acc.is_empty() {
        return Err(Error::InvalidArgument("empty accuracy vectors".into()));
    }
    if baseline_acc.iter().any(|b| *b <= 0.0) {
        return Err(Error::InvalidArgument("baseline accuracies must be positive".into()));
    }
    let sum: f64 = baseline_acc
        .iter()
        .zip(post_acc)
        .map(|(b, p)| (b - p) / b)
        .sum();
    Ok(sum / baseline_acc.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::{gen_task, SynthTask};

    fn teacher_task(seed: u64, noise: f64) -> SynthTask {
        SynthTask::LowrankTeacherRegression {
            in_dim: 10,
            out_dim: 8,
            train_n: 96,
            test_n: 48,
            noise,
            seed,
            subspace_alpha: 0.9,
            perturb_scale: 0.1,
        }
    }

    fn single_layer_spec(kind: AdapterKind) -> ModelSpec {
        ModelSpec {
            layers: vec![LayerDims { in_dim: 10, out_dim: 8 }],
            activation: Activation::Tanh,
            head: LossHead::MeanSquaredError,
            kinds: vec![kind],
        }
    }

    fn quick_cfg(seed: u64, steps: usize) -> TrainConfig {
        TrainConfig {
            learning_rate: 0.01,
            weight_decay: 1e-4,
            steps,
            batch_size: 32,
            seed,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            checkpoint_every: 50,
        }
    }

    #[test]
    fn zero_learning_rate_keeps_loss_constant() {
        let data = gen_task(&teacher_task(3, 0.05)).unwrap();
        let spec = single_layer_spec(AdapterKind::FullFt);
        let cfg = TrainConfig { learning_rate: 0.0, weight_decay: 0.0, ..quick_cfg(1, 40) };
        let record = train_run(&spec, &cfg, &data).unwrap();
        // Batches differ, but full-batch steps see identical data; force
        // full-batch by batch_size >= n for a strict constancy check.
        let cfg_full = TrainConfig { batch_size: 96, ..cfg };
        let record_full = train_run(&spec, &cfg_full, &data).unwrap();
        let first = record_full.loss[0];
        assert!(record_full.loss.iter().all(|l| (*l - first).abs() < 1e-15));
        assert_eq!(record.loss.len(), 40);
    }

    #[test]
    fn identical_seeds_bitwise_identical_curves() {
        let data = gen_task(&teacher_task(5, 0.05)).unwrap();
        let spec = single_layer_spec(AdapterKind::Cersa { alpha: 0.95, beta: 0.95 });
        let cfg = quick_cfg(11, 60);
        let a = train_run(&spec, &cfg, &data).unwrap();
        let b = train_run(&spec, &cfg, &data).unwrap();
        let bits_a: Vec<u64> = a.loss.iter().map(|l| l.to_bits()).collect();
        let bits_b: Vec<u64> = b.loss.iter().map(|l| l.to_bits()).collect();
        assert_eq!(bits_a, bits_b);
    }

    #[test]
    fn full_ft_converges_on_noiseless_convex_task() {
        let data = gen_task(&teacher_task(7, 0.0)).unwrap();
        let spec = single_layer_spec(AdapterKind::FullFt);
        let cfg = quick_cfg(13, 2000);
        let record = train_run(&spec, &cfg, &data).unwrap();
        // Normal-equations oracle: the optimum of this convex problem is
        // (numerically) zero loss; training must approach it.
        let f = svd(&data.train_x).unwrap();
        let pinv: Vec<f64> = f.sigma.iter().map(|s| if *s > 1e-10 { 1.0 / s } else { 0.0 }).collect();
        let wt = f
            .vt
            .transpose()
            .matmul(&f.u.transpose().scale_rows(&pinv).unwrap())
            .unwrap()
            .matmul(&data.train_y)
            .unwrap();
        let optimal_pred = data.train_x.matmul(&wt).unwrap();
        let optimal_loss = optimal_pred
            .sub(&data.train_y)
            .unwrap()
            .frobenius_norm()
            .powi(2)
            / (data.train_y.rows() * data.train_y.cols()) as f64;
        assert!(optimal_loss < 1e-12, "oracle optimum {optimal_loss}");
        assert!(
            record.final_train_loss < 1e-4,
            "train loss {}",
            record.final_train_loss
        );
    }

    #[test]
    fn frozen_tensors_unchanged_by_training() {
        let data = gen_task(&teacher_task(9, 0.05)).unwrap();
        for kind in [
            AdapterKind::Lora { rank: 3 },
            AdapterKind::Cersa { alpha: 0.95, beta: 0.9 },
            AdapterKind::SvfitArray { rank: 4 },
        ] {
            let spec = single_layer_spec(kind);
            let record = train_run(&spec, &quick_cfg(17, 80), &data).unwrap();
            assert_eq!(record.frozen_hash_before, record.frozen_hash_after, "{kind:?}");
        }
    }

    #[test]
    fn final_loss_beats_initial_on_converging_runs() {
        let data = gen_task(&teacher_task(19, 0.05)).unwrap();
        for kind in [
            AdapterKind::FullFt,
            AdapterKind::Lora { rank: 3 },
            AdapterKind::Cersa { alpha: 0.95, beta: 0.95 },
        ] {
            let record = train_run(&single_layer_spec(kind), &quick_cfg(23, 300), &data).unwrap();
            assert!(
                record.loss.last().unwrap() < record.loss.first().unwrap(),
                "{kind:?}"
            );
        }
    }

    #[test]
    fn cersa_span_checks_stay_at_one() {
        let data = gen_task(&teacher_task(21, 0.05)).unwrap();
        let spec = single_layer_spec(AdapterKind::Cersa { alpha: 0.9, beta: 0.9 });
        let record = train_run(&spec, &quick_cfg(29, 120), &data).unwrap();
        assert!(!record.span_checks.is_empty());
        for check in &record.span_checks {
            assert!((check.psi_u_min - 1.0).abs() <= 1e-8, "step {}", check.step);
            assert!((check.psi_v_min - 1.0).abs() <= 1e-8, "step {}", check.step);
        }
    }

    #[test]
    fn blobs_classification_trains() {
        let task = SynthTask::BlobsClassification {
            in_dim: 6,
            classes: 3,
            train_n: 90,
            test_n: 30,
            noise: 0.4,
            seed: 31,
        };
        let data = gen_task(&task).unwrap();
        let spec = ModelSpec {
            layers: vec![
                LayerDims { in_dim: 6, out_dim: 8 },
                LayerDims { in_dim: 8, out_dim: 3 },
            ],
            activation: Activation::Tanh,
            head: LossHead::SoftmaxCrossEntropy,
            kinds: vec![AdapterKind::FullFt, AdapterKind::FullFt],
        };
        let record = train_run(&spec, &quick_cfg(37, 400), &data).unwrap();
        assert!(record.test_accuracy.unwrap() > 0.9, "accuracy {:?}", record.test_accuracy);
    }

    #[test]
    fn compare_ranks_diagonal_core_last_on_rotated_teacher() {
        let task = SynthTask::RotatedTeacherRegression {
            in_dim: 10,
            out_dim: 8,
            train_n: 96,
            test_n: 48,
            noise: 0.01,
            seed: 41,
            subspace_alpha: 0.9,
            rotation_angle: 0.4,
        };
        let data = gen_task(&task).unwrap();
        let template = single_layer_spec(AdapterKind::FullFt);
        let kinds = vec![
            AdapterKind::FullFt,
            AdapterKind::Cersa { alpha: 0.95, beta: 0.95 },
            AdapterKind::Lora { rank: 4 },
            AdapterKind::SvfitArray { rank: 6 },
        ];
        let outcome =
            compare_methods(&kinds, &template, &quick_cfg(43, 500), &data, &[1, 2, 3]).unwrap();
        let last = outcome.ranking.last().unwrap();
        assert_eq!(last.kind_label, "svfit_array_r6", "ranking: {:?}", outcome.ranking);
        assert_eq!(outcome.rows.len(), 12);
    }

    #[test]
    fn compare_records_failures_without_aborting() {
        let data = gen_task(&teacher_task(47, 0.05)).unwrap();
        let template = single_layer_spec(AdapterKind::FullFt);
        // Rank 100 exceeds min(8, 10): that kind fails per run, others keep going.
        let kinds = vec![AdapterKind::FullFt, AdapterKind::Lora { rank: 100 }];
        let outcome = compare_methods(&kinds, &template, &quick_cfg(49, 30), &data, &[1]).unwrap();
        let failed = outcome.ranking.iter().find(|r| r.kind_label == "lora_r100").unwrap();
        assert_eq!(failed.failed_runs, 1);
        assert!(failed.median_test_loss.is_infinite());
        let ok = outcome.ranking.iter().find(|r| r.kind_label == "full_ft").unwrap();
        assert_eq!(ok.failed_runs, 0);
    }

    #[test]
    fn forgetting_rate_hand_cases() {
        assert_eq!(forgetting_rate(&[0.9, 0.8], &[0.9, 0.8]).unwrap(), 0.0);
        let r = forgetting_rate(&[0.9, 0.9, 0.9], &[0.81, 0.81, 0.81]).unwrap();
        assert!((r - 0.1).abs() < 1e-12);
        let improved = forgetting_rate(&[0.8], &[0.9]).unwrap();
        assert!(improved < 0.0);
        assert!(forgetting_rate(&[0.9], &[0.9, 0.8]).is_err());
        assert!(forgetting_rate(&[0.0], &[0.1]).is_err());
    }

    #[test]
    fn diverged_run_reports_step() {
        let data = gen_task(&teacher_task(53, 0.0)).unwrap();
        let spec = single_layer_spec(AdapterKind::FullFt);
        // An absurd learning rate forces non-finite loss quickly.
        let cfg = TrainConfig { learning_rate: 1e150, ..quick_cfg(59, 50) };
        match train_run(&spec, &cfg, &data) {
            Err(Error::Diverged { step }) => assert!(step >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn config_validation_collects_issues() {
        let cfg = TrainConfig {
            learning_rate: -1.0,
            weight_decay: -1.0,
            steps: 0,
            batch_size: 0,
            seed: 0,
            beta1: 1.5,
            beta2: 0.999,
            epsilon: 0.0,
            checkpoint_every: 0,
        };
        match cfg.validate() {
            Err(Error::Config { issues }) => assert!(issues.len() >= 4, "{issues:?}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }
}
