//! Weighted multi-label training, patient-level splitting and evaluation.

mod metrics;

pub use metrics::{
    auc, comparison_table, macro_auc, metric_rows, neg_log_likelihood, precision, recall_at_k, report, top_k, EvalOptions,
    EvalReport, MetricStd, TargetMetrics, DEFAULT_BOOTSTRAP_ROUNDS, DEFAULT_RECALL_KS, NLL_FLOOR, PRECISION_THRESHOLD,
};

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{weighted_bce_value, Adam, AdamConfig, Tape};
use crate::ehr::{encode, EncodedSequence, EventVocabulary, TrainingSample};
use crate::error::{Error, Result};
use crate::retain::{ModelConfig, RetainModel};
use crate::scalar::Scalar;

/// Positive-class weights, one per target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights<S> {
    pub b_w: Vec<S>,
}

impl<S: Scalar> LossWeights<S> {
    /// `1 / ln(max(n, 2))` per positive count `n`.
    pub fn from_counts(counts: &[u64]) -> Self {
        Self { b_w: counts.iter().map(|&n| S::lit(1.0 / (n.max(2) as f64).ln())).collect() }
    }

    /// Weights from how often each target is a positive label in `samples`.
    pub fn from_samples(samples: &[TrainingSample], targets: &[String]) -> Self {
        let counts: Vec<u64> = targets.iter().map(|t| samples.iter().filter(|s| s.labels.contains(t)).count() as u64).collect();
        Self::from_counts(&counts)
    }

    pub fn uniform(n: usize) -> Self {
        Self { b_w: vec![S::one(); n] }
    }
}

/// Mean over samples of the weighted binary cross-entropy summed over
/// targets. Probabilities are clamped away from 0 and 1.
pub fn loss<S: Scalar>(predictions: &[Vec<S>], labels: &[Vec<S>], weights: &LossWeights<S>) -> Result<S> {
    if predictions.len() != labels.len() || predictions.is_empty() {
        return Err(Error::Shape { op: "loss", detail: format!("{} predictions, {} label rows", predictions.len(), labels.len()) });
    }
    let mut total = S::zero();
    for (p, y) in predictions.iter().zip(labels) {
        if p.len() != weights.b_w.len() || y.len() != weights.b_w.len() {
            return Err(Error::Shape {
                op: "loss",
                detail: format!("row of {} predictions and {} labels for {} weights", p.len(), y.len(), weights.b_w.len()),
            });
        }
        total += weighted_bce_value(p, y, &weights.b_w);
    }
    Ok(total / S::lit(predictions.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Drives the split and the per-epoch shuffles.
    pub seed: u64,
    /// Fraction of patients used for training.
    pub split_ratio: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self { epochs: 10, batch_size: 32, learning_rate: 5e-3, seed: 0, split_ratio: 0.7 }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::InvalidArgument(format!("split ratio must lie in (0, 1), got {}", self.split_ratio)));
        }
        Ok(())
    }
}

/// Sample indices of a patient-level split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles the distinct patient ids with `seed` and sends the first
/// `round(ratio * patients)` of them to training, so a patient's samples
/// never straddle the two sets. Both sides are kept non-empty.
pub fn split_by_patient(samples: &[TrainingSample], ratio: f64, seed: u64) -> Result<Split> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    let patients: BTreeSet<&str> = samples.iter().map(TrainingSample::patient_id).collect();
    if patients.len() < 2 {
        return Err(Error::InvalidArgument(format!("a train/test split needs at least 2 patients, found {}", patients.len())));
    }
    let mut order: Vec<&str> = patients.into_iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((ratio * order.len() as f64).round() as usize).clamp(1, order.len() - 1);
    let train_patients: BTreeSet<&str> = order[..n_train].iter().copied().collect();
    let (train, test) = (0..samples.len()).partition(|&i| train_patients.contains(samples[i].patient_id()));
    Ok(Split { train, test })
}

/// Test-set metrics after one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test: EvalReport,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<S> {
    pub model: RetainModel<S>,
    pub split: Split,
    pub history: Vec<EpochRecord>,
}

impl<S> TrainOutcome<S> {
    pub fn final_report(&self) -> &EvalReport {
        &self.history.last().expect("at least one epoch").test
    }
}

fn label_vector<S: Scalar>(sample: &TrainingSample, targets: &[String]) -> Vec<S> {
    targets.iter().map(|t| if sample.labels.contains(t) { S::one() } else { S::zero() }).collect()
}

fn encode_all<S: Scalar>(samples: &[TrainingSample], idx: &[usize], vocabulary: &EventVocabulary) -> Result<Vec<EncodedSequence<S>>> {
    idx.iter().map(|&i| encode(&samples[i].input, vocabulary)).collect()
}

/// Trains a fresh model on the training part of a patient-level split,
/// evaluating on the test part after every epoch.
pub fn train<S: Scalar>(
    vocabulary: &EventVocabulary,
    samples: &[TrainingSample],
    config: ModelConfig,
    targets: Vec<String>,
    schedule: &Schedule,
) -> Result<TrainOutcome<S>> {
    schedule.validate()?;
    let split = split_by_patient(samples, schedule.split_ratio, schedule.seed)?;
    let mut model = RetainModel::new(config, vocabulary, targets)?;
    let train_samples: Vec<TrainingSample> = split.train.iter().map(|&i| samples[i].clone()).collect();
    let weights = LossWeights::<S>::from_samples(&train_samples, &model.target_codes);
    let inputs = encode_all::<S>(samples, &split.train, vocabulary)?;
    let labels: Vec<Vec<S>> = split.train.iter().map(|&i| label_vector(&samples[i], &model.target_codes)).collect();
    let test_inputs = encode_all::<S>(samples, &split.test, vocabulary)?;
    let test_labels: Vec<Vec<bool>> =
        split.test.iter().map(|&i| model.target_codes.iter().map(|t| samples[i].labels.contains(t)).collect()).collect();

    let mut adam = Adam::new(AdamConfig { lr: schedule.learning_rate, ..AdamConfig::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut history = Vec::with_capacity(schedule.epochs);
    for epoch in 0..schedule.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch, chunk) in order.chunks(schedule.batch_size).enumerate() {
            let diverged = |_| Error::Diverged { epoch, batch };
            let (batch_loss, grads) = batch_gradient(&model, chunk, &inputs, &labels, &weights).map_err(diverged)?;
            if !batch_loss.is_finite() {
                return Err(Error::Diverged { epoch, batch });
            }
            epoch_loss += batch_loss.as_f64() * chunk.len() as f64;
            let mut params = model.params_mut();
            adam.step(&mut params, &grads).map_err(diverged)?;
        }
        let test = evaluate_encoded(&model, &test_inputs, &test_labels, &EvalOptions::default())?;
        let train_loss = epoch_loss / inputs.len() as f64;
        log::info!("epoch {epoch}: train loss {train_loss:.4}, test AUC {:?}", test.auc);
        history.push(EpochRecord { epoch, train_loss, test });
    }
    Ok(TrainOutcome { model, split, history })
}

/// Mean loss over the batch and its gradient for every parameter.
fn batch_gradient<S: Scalar>(
    model: &RetainModel<S>,
    batch: &[usize],
    inputs: &[EncodedSequence<S>],
    labels: &[Vec<S>],
    weights: &LossWeights<S>,
) -> Result<(S, Vec<Vec<S>>)> {
    let mut grads: Vec<Vec<S>> = model.params().iter().map(|t| vec![S::zero(); t.len()]).collect();
    let scale = S::one() / S::lit(batch.len() as f64);
    let mut total = S::zero();
    for &i in batch {
        let mut tape = Tape::new();
        let params = model.bind(&mut tape);
        let rec = model.record(&mut tape, &params, &inputs[i])?;
        let l = tape.weighted_bce(rec.probabilities, &labels[i], &weights.b_w)?;
        total += tape.scalar(l);
        let g = tape.backward(l)?;
        for (acc, &var) in grads.iter_mut().zip(&params.vars) {
            if let Some(gv) = g.get(var) {
                for (a, &x) in acc.iter_mut().zip(gv) {
                    *a += x * scale;
                }
            }
        }
    }
    Ok((total * scale, grads))
}

fn evaluate_encoded<S: Scalar>(
    model: &RetainModel<S>,
    inputs: &[EncodedSequence<S>],
    labels: &[Vec<bool>],
    options: &EvalOptions,
) -> Result<EvalReport> {
    let scores = inputs
        .iter()
        .map(|seq| Ok(model.predict_probabilities(seq)?.into_iter().map(|p| p.as_f64()).collect()))
        .collect::<Result<Vec<Vec<f64>>>>()?;
    report(&scores, labels, &model.target_codes, options)
}

/// Scores `samples` with `model` and builds the metric report.
pub fn evaluate<S: Scalar>(
    model: &RetainModel<S>,
    vocabulary: &EventVocabulary,
    samples: &[TrainingSample],
    options: &EvalOptions,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("evaluation needs at least one sample".into()));
    }
    let all: Vec<usize> = (0..samples.len()).collect();
    let inputs = encode_all::<S>(samples, &all, vocabulary)?;
    let labels: Vec<Vec<bool>> =
        samples.iter().map(|s| model.target_codes.iter().map(|t| s.labels.contains(t)).collect()).collect();
    evaluate_encoded(model, &inputs, &labels, options)
}

/// Scores `samples` with several models and reports their target columns
/// side by side, as if one model predicted every target.
pub fn evaluate_stacked<S: Scalar>(
    models: &[&RetainModel<S>],
    vocabulary: &EventVocabulary,
    samples: &[TrainingSample],
    options: &EvalOptions,
) -> Result<EvalReport> {
    if samples.is_empty() || models.is_empty() {
        return Err(Error::InvalidArgument("stacked evaluation needs at least one model and one sample".into()));
    }
    let names: Vec<String> = models.iter().flat_map(|m| m.target_codes.iter().cloned()).collect();
    let all: Vec<usize> = (0..samples.len()).collect();
    let inputs = encode_all::<S>(samples, &all, vocabulary)?;
    let labels: Vec<Vec<bool>> = samples.iter().map(|s| names.iter().map(|t| s.labels.contains(t)).collect()).collect();
    let mut scores = vec![Vec::with_capacity(names.len()); samples.len()];
    for model in models {
        for (row, seq) in scores.iter_mut().zip(&inputs) {
            row.extend(model.predict_probabilities(seq)?.into_iter().map(|p| p.as_f64()));
        }
    }
    report(&scores, &labels, &names, options)
}

/// The same pipeline restricted to a single target.
pub fn baseline_single_target<S: Scalar>(
    vocabulary: &EventVocabulary,
    samples: &[TrainingSample],
    target: &str,
    config: ModelConfig,
    schedule: &Schedule,
) -> Result<TrainOutcome<S>> {
    train(vocabulary, samples, config, vec![target.to_string()], schedule)
}

/// One single-target model per target next to one multi-target model, all
/// trained and tested on the same split.
#[derive(Debug, Clone)]
pub struct Comparison<S> {
    pub single: Vec<TrainOutcome<S>>,
    pub multi: TrainOutcome<S>,
    /// The single-target models' predictions stacked side by side.
    pub single_report: EvalReport,
    pub multi_report: EvalReport,
}

pub const SINGLE_COLUMN: &str = "Single-target";
pub const MULTI_COLUMN: &str = "Multi-target";

impl<S> Comparison<S> {
    pub fn table(&self, delimiter: u8) -> Result<String> {
        comparison_table(&[(SINGLE_COLUMN, &self.single_report), (MULTI_COLUMN, &self.multi_report)], delimiter)
    }
}

pub fn compare_single_and_multi<S: Scalar>(
    vocabulary: &EventVocabulary,
    samples: &[TrainingSample],
    targets: &[String],
    config: ModelConfig,
    schedule: &Schedule,
) -> Result<Comparison<S>> {
    let multi = train::<S>(vocabulary, samples, config, targets.to_vec(), schedule)?;
    let single = targets
        .iter()
        .map(|t| baseline_single_target::<S>(vocabulary, samples, t, config, schedule))
        .collect::<Result<Vec<_>>>()?;
    let test: Vec<TrainingSample> = multi.split.test.iter().map(|&i| samples[i].clone()).collect();
    let models: Vec<&RetainModel<S>> = single.iter().map(|o| &o.model).collect();
    let single_report = evaluate_stacked(&models, vocabulary, &test, &EvalOptions::default())?;
    let multi_report = multi.final_report().clone();
    Ok(Comparison { single, multi, single_report, multi_report })
}
