//! Mini-batch training and evaluation.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{optimizer_step, AdamConfig, AdamState};
use super::mnist::{MnistDataset, CLASSES};
use super::TrainError;
use crate::model::checkpoint::TrainingMetadata;
use crate::model::loss::RECONSTRUCTION_SCALE;
use crate::model::{forward_nodes, loss_nodes, CapsNet, DecodeTarget, ModelConfig, NormAxis};
use crate::tensor::{Graph, NodeId, Tensor};

/// Samples per batch during evaluation; bounds the im2col working set.
pub const EVAL_BATCH: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Train on the first `k` samples of a seeded shuffle.
    pub subset: Option<usize>,
    pub routing_iters: usize,
    pub norm_axis: NormAxis,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 16,
            adam: AdamConfig::default(),
            seed: 0,
            subset: None,
            routing_iters: 3,
            norm_axis: NormAxis::OverParents,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let positive = [
            ("epochs", self.epochs as f64),
            ("batch_size", self.batch_size as f64),
            ("learning_rate", self.adam.learning_rate),
            ("epsilon", self.adam.epsilon),
            ("routing_iters", self.routing_iters as f64),
        ];
        for (key, value) in positive {
            if !(value > 0.0) || !value.is_finite() {
                return Err(TrainError::Config { key, detail: format!("must be positive, got {value}") });
            }
        }
        for (key, beta) in [("beta1", self.adam.beta1), ("beta2", self.adam.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(TrainError::Config { key, detail: format!("must lie in [0, 1), got {beta}") });
            }
        }
        if self.subset == Some(0) {
            return Err(TrainError::Config { key: "subset", detail: "must be positive".into() });
        }
        Ok(())
    }

    /// The default architecture with this run's routing settings.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig { routing_iters: self.routing_iters, norm_axis: self.norm_axis, ..ModelConfig::default() }
    }
}

/// Loss terms and accuracy of one pass, measured before each update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub steps: usize,
    pub samples: usize,
    pub loss: f64,
    pub margin_loss: f64,
    pub reconstruction_loss: f64,
    pub accuracy: f64,
}

impl EpochMetrics {
    /// `key=value` record as written to the metrics log.
    pub fn record(&self) -> String {
        format!(
            "epoch={} steps={} samples={} loss={:.10} margin_loss={:.10} reconstruction_loss={:.10} accuracy={:.6}",
            self.epoch, self.steps, self.samples, self.loss, self.margin_loss, self.reconstruction_loss, self.accuracy
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    pub steps: usize,
    pub samples: usize,
    /// Total loss of every step, in order.
    pub step_losses: Vec<f64>,
    /// Source ids of the training samples, in subset order.
    pub sample_ids: Vec<usize>,
}

impl TrainReport {
    pub fn metrics_log(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            let _ = writeln!(out, "{}", e.record());
        }
        out
    }

    pub fn metadata(&self, cfg: &TrainConfig) -> TrainingMetadata {
        let last = self.epochs.last();
        TrainingMetadata {
            epochs: self.epochs.len(),
            seed: cfg.seed,
            steps: self.steps,
            samples: self.samples,
            final_margin_loss: last.map_or(f64::NAN, |e| e.margin_loss),
            final_reconstruction_loss: last.map_or(f64::NAN, |e| e.reconstruction_loss),
            final_accuracy: last.map_or(f64::NAN, |e| e.accuracy),
        }
    }
}

/// Progress notifications from [`train_with`].
#[derive(Debug, Clone, Copy)]
pub enum Progress<'a> {
    /// `batch` holds dataset positions.
    Step {
        epoch: usize,
        step: usize,
        loss: f64,
        batch: &'a [usize],
    },
    Epoch(&'a EpochMetrics),
}

/// Indices of the training samples: a seeded permutation truncated to the
/// subset size, or all samples in order.
fn training_indices(len: usize, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    if let Some(k) = cfg.subset {
        idx.shuffle(rng);
        idx.truncate(k.min(len));
    }
    idx
}

pub fn train(model: CapsNet, dataset: &MnistDataset, cfg: &TrainConfig) -> Result<(CapsNet, TrainReport), TrainError> {
    train_with(model, dataset, cfg, |_| {})
}

/// Trains `model` on `dataset`, calling `observe` after every step and epoch.
pub fn train_with<F>(
    mut model: CapsNet,
    dataset: &MnistDataset,
    cfg: &TrainConfig,
    mut observe: F,
) -> Result<(CapsNet, TrainReport), TrainError>
where
    F: FnMut(Progress<'_>),
{
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mc = model.config();
    if mc.routing_iters != cfg.routing_iters || mc.norm_axis != cfg.norm_axis {
        return Err(TrainError::Config {
            key: "routing",
            detail: format!(
                "model routes with {} iterations {}, run requests {} {}",
                mc.routing_iters, mc.norm_axis, cfg.routing_iters, cfg.norm_axis
            ),
        });
    }
    if (mc.input_height, mc.input_width) != (dataset.rows(), dataset.cols()) {
        return Err(TrainError::Consistency(format!(
            "model expects {}x{} images, dataset has {}x{}",
            mc.input_height,
            mc.input_width,
            dataset.rows(),
            dataset.cols()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = training_indices(dataset.len(), cfg, &mut rng);
    let sample_ids = order.iter().map(|&i| dataset.id(i)).collect();
    let mut state = AdamState::new();
    let mut report = TrainReport { epochs: Vec::new(), steps: 0, samples: 0, step_losses: Vec::new(), sample_ids };

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut margin, mut recon, mut correct, mut seen, mut steps) = (0.0, 0.0, 0.0, 0usize, 0usize, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let step = report.steps + 1;
            let out = train_step(&mut model, dataset, batch, &mut state, &cfg.adam).map_err(|e| match e {
                StepError::Diverged(detail) => TrainError::Divergence { epoch, step, detail },
                StepError::Other(e) => e,
            })?;
            let n = batch.len() as f64;
            total += out.total * n;
            margin += out.margin * n;
            recon += out.reconstruction * n;
            correct += out.correct;
            seen += batch.len();
            steps += 1;
            report.steps = step;
            report.samples += batch.len();
            report.step_losses.push(out.total);
            observe(Progress::Step { epoch, step, loss: out.total, batch });
        }
        let seen_f = seen as f64;
        let metrics = EpochMetrics {
            epoch,
            steps,
            samples: seen,
            loss: total / seen_f,
            margin_loss: margin / seen_f,
            reconstruction_loss: recon / seen_f,
            accuracy: correct as f64 / seen_f,
        };
        observe(Progress::Epoch(&metrics));
        report.epochs.push(metrics);
    }
    Ok((model, report))
}

struct StepOutput {
    total: f64,
    margin: f64,
    reconstruction: f64,
    correct: usize,
}

enum StepError {
    Diverged(String),
    Other(TrainError),
}

impl<E: Into<TrainError>> From<E> for StepError {
    fn from(e: E) -> Self {
        StepError::Other(e.into())
    }
}

/// Forward, backward and Adam update on one batch. Parameters are moved into
/// the graph and back rather than copied.
fn train_step(
    model: &mut CapsNet,
    dataset: &MnistDataset,
    batch: &[usize],
    state: &mut AdamState,
    adam: &AdamConfig,
) -> Result<StepOutput, StepError> {
    let cfg = model.config().clone();
    let (images, labels) = dataset.batch(batch);
    let mut g = Graph::new();
    let params: Vec<NodeId> = model.params_mut().map(|t| g.param(std::mem::replace(t, Tensor::scalar(0.0)))).collect();
    let x = g.constant(images);
    let result = (|| -> Result<(StepOutput, Vec<Tensor>), StepError> {
        let fwd = forward_nodes(&cfg, &mut g, &params, x, DecodeTarget::Classes(&labels))?;
        let losses = loss_nodes(&mut g, &fwd, x, &labels)?;
        let value = |id| g.value(id).item().expect("scalar loss");
        let out = StepOutput {
            total: value(losses.total),
            margin: value(losses.margin),
            reconstruction: value(losses.reconstruction),
            correct: fwd.predicted.iter().zip(&labels).filter(|(p, l)| p == l).count(),
        };
        if !out.total.is_finite() {
            return Err(StepError::Diverged(format!(
                "loss is {} (margin {}, reconstruction {})",
                out.total, out.margin, out.reconstruction
            )));
        }
        let mut grads = g.backward(losses.total)?;
        let grads: Vec<Tensor> = params.iter().map(|&id| grads.take(id).expect("leaf gradient")).collect();
        Ok((out, grads))
    })();
    // Parameters go back to the model whether or not the step succeeded.
    for (slot, value) in model.params_mut().zip(g.into_values(&params)) {
        *slot = value;
    }
    let (out, grads) = result?;
    if let Some((i, _)) = grads.iter().enumerate().find(|(_, t)| !t.is_finite()) {
        let name = &model.params()[i].0;
        return Err(StepError::Diverged(format!("non-finite gradient for {name}")));
    }
    optimizer_step(model.params_mut(), &grads, state, adam)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub samples: usize,
    pub accuracy: f64,
    /// `confusion[true][predicted]`
    pub confusion: [[usize; CLASSES]; CLASSES],
    /// Dataset positions of the misclassified samples, ascending.
    pub misclassified: Vec<usize>,
    /// Predicted class per sample, in dataset order.
    pub predictions: Vec<usize>,
    pub mean_margin_loss: f64,
    /// Reconstruction loss with each sample decoded from its true class.
    pub mean_reconstruction_loss: f64,
}

impl EvalReport {
    /// `margin + 0.0005 · reconstruction`, the training objective.
    pub fn mean_total_loss(&self) -> f64 {
        self.mean_margin_loss + RECONSTRUCTION_SCALE * self.mean_reconstruction_loss
    }

    pub fn correct(&self) -> usize {
        (0..CLASSES).map(|c| self.confusion[c][c]).sum()
    }

    /// `key=value` summary followed by the confusion matrix rows.
    pub fn summary(&self) -> String {
        let mut out = format!(
            "samples={} correct={} accuracy={:.6} mean_margin_loss={:.10} mean_reconstruction_loss={:.10} misclassified={}\n",
            self.samples,
            self.correct(),
            self.accuracy,
            self.mean_margin_loss,
            self.mean_reconstruction_loss,
            self.misclassified.len()
        );
        for (t, row) in self.confusion.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            let _ = writeln!(out, "confusion_true_{t}={}", cells.join(","));
        }
        out
    }
}

/// Accuracy, confusion matrix and mean losses over `dataset` in order.
pub fn evaluate(model: &CapsNet, dataset: &MnistDataset) -> Result<EvalReport, TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let cfg = model.config();
    if cfg.classes > CLASSES {
        return Err(TrainError::Consistency(format!("model has {} classes, digits have {CLASSES}", cfg.classes)));
    }
    let mut confusion = [[0usize; CLASSES]; CLASSES];
    let mut predictions = Vec::with_capacity(dataset.len());
    let (mut margin, mut recon) = (0.0, 0.0);
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for batch in indices.chunks(EVAL_BATCH) {
        let (images, labels) = dataset.batch(batch);
        if let Some(&l) = labels.iter().find(|&&l| l >= cfg.classes) {
            return Err(TrainError::Consistency(format!("label {l} outside the model's {} classes", cfg.classes)));
        }
        let mut g = Graph::new();
        let params = model.constant_nodes(&mut g);
        let x = g.constant(images);
        let fwd = forward_nodes(cfg, &mut g, &params, x, DecodeTarget::Classes(&labels))?;
        let losses = loss_nodes(&mut g, &fwd, x, &labels)?;
        let n = batch.len() as f64;
        margin += g.value(losses.margin).item().expect("scalar") * n;
        recon += g.value(losses.reconstruction).item().expect("scalar") * n;
        for (&p, &l) in fwd.predicted.iter().zip(&labels) {
            confusion[l][p] += 1;
            predictions.push(p);
        }
    }
    let misclassified: Vec<usize> = (0..dataset.len()).filter(|&i| predictions[i] != dataset.label(i)).collect();
    let samples = dataset.len();
    let correct: usize = (0..CLASSES).map(|c| confusion[c][c]).sum();
    Ok(EvalReport {
        samples,
        accuracy: correct as f64 / samples as f64,
        confusion,
        misclassified,
        predictions,
        mean_margin_loss: margin / samples as f64,
        mean_reconstruction_loss: recon / samples as f64,
    })
}
