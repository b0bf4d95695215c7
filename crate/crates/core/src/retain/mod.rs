//! Dual-attention recurrent risk model over multi-hot event sequences.
//!
//! Each step's multi-hot vector is embedded, extended with its time to the
//! prediction point, and fed to two gated recurrent networks. The first
//! yields one scalar attention weight per step (softmax across steps), the
//! second a per-dimension gate in (-1, 1). The attention-weighted, gated
//! sum of step embeddings is mapped to one probability per target disease,
//! and that linear read-out is what makes exact per-event attribution
//! possible.

mod checkpoint;
mod forward;

pub use checkpoint::{Checkpoint, ParamRecord, CHECKPOINT_SCHEMA_VERSION};
pub use forward::{BoundParams, EventInfluence, PredictionResult, Recorded};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Shape, Tensor};
use crate::ehr::{EventKind, EventVocabulary};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Output non-linearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputHead {
    /// Independent per-target probabilities.
    #[default]
    Sigmoid,
    /// Probabilities normalized across targets.
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Feed steps newest-first to both recurrences.
    pub reverse_time: bool,
    pub head: OutputHead,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { embed_dim: 64, hidden_dim: 64, reverse_time: true, head: OutputHead::Sigmoid, init_seed: 0 }
    }
}

/// Gated recurrent unit with the reset gate applied after the recurrent
/// product: `n = tanh(W_n x + b_n + r * (U_n h + c_n))`. Gate blocks are
/// stacked `[update; reset; candidate]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams<S> {
    pub input_weights: Tensor<S>,
    pub recurrent_weights: Tensor<S>,
    pub input_bias: Tensor<S>,
    pub recurrent_bias: Tensor<S>,
}

impl<S: Scalar> GruParams<S> {
    fn init(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            input_weights: xavier(3 * hidden, input, rng),
            recurrent_weights: xavier(3 * hidden, hidden, rng),
            input_bias: Tensor::zeros(Shape::Vector(3 * hidden)),
            recurrent_bias: Tensor::zeros(Shape::Vector(3 * hidden)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetainModel<S> {
    pub config: ModelConfig,
    pub vocabulary_hash: String,
    pub target_codes: Vec<String>,
    /// `m x V`; column `s` embeds code `s`.
    pub embedding: Tensor<S>,
    pub alpha_rnn: GruParams<S>,
    pub alpha_weight: Tensor<S>,
    pub alpha_bias: Tensor<S>,
    pub beta_rnn: GruParams<S>,
    /// `m x h`.
    pub beta_weight: Tensor<S>,
    pub beta_bias: Tensor<S>,
    /// `L x m`.
    pub output_weight: Tensor<S>,
    pub output_bias: Tensor<S>,
}

/// Parameter names in canonical order.
pub const PARAM_NAMES: [&str; 15] = [
    "embedding",
    "alpha_rnn.input_weights",
    "alpha_rnn.recurrent_weights",
    "alpha_rnn.input_bias",
    "alpha_rnn.recurrent_bias",
    "alpha_weight",
    "alpha_bias",
    "beta_rnn.input_weights",
    "beta_rnn.recurrent_weights",
    "beta_rnn.input_bias",
    "beta_rnn.recurrent_bias",
    "beta_weight",
    "beta_bias",
    "output_weight",
    "output_bias",
];

fn xavier<S: Scalar>(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor<S> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let values = (0..rows * cols).map(|_| S::lit(rng.gen_range(-a..a))).collect();
    Tensor::new(Shape::Matrix(rows, cols), values).expect("xavier shape")
}

impl<S: Scalar> RetainModel<S> {
    /// Freshly initialized model predicting `target_codes`, which must be
    /// diagnosis codes of `vocabulary`.
    pub fn new(config: ModelConfig, vocabulary: &EventVocabulary, target_codes: Vec<String>) -> Result<Self> {
        if config.embed_dim == 0 || config.hidden_dim == 0 {
            return Err(Error::InvalidArgument("embedding and hidden dimensions must be positive".into()));
        }
        if target_codes.is_empty() {
            return Err(Error::InvalidArgument("at least one target code is required".into()));
        }
        for code in &target_codes {
            match vocabulary.kind_of(code) {
                Some(EventKind::Diagnosis) => {}
                Some(EventKind::Treatment) => {
                    return Err(Error::InvalidArgument(format!("target {code:?} is a treatment, not a diagnosis")))
                }
                None => return Err(Error::UnknownCode(code.clone())),
            }
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = target_codes.iter().find(|c| !seen.insert(c.as_str())) {
            return Err(Error::InvalidArgument(format!("duplicate target code {dup:?}")));
        }
        let (m, h, v, l) = (config.embed_dim, config.hidden_dim, vocabulary.len(), target_codes.len());
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let embedding = xavier(m, v, &mut rng);
        let alpha_rnn = GruParams::init(m + 1, h, &mut rng);
        let alpha_weight = xavier::<S>(1, h, &mut rng);
        let beta_rnn = GruParams::init(m + 1, h, &mut rng);
        let beta_weight = xavier(m, h, &mut rng);
        let output_weight = xavier(l, m, &mut rng);
        Ok(Self {
            config,
            vocabulary_hash: vocabulary.fingerprint(),
            target_codes,
            embedding,
            alpha_rnn,
            alpha_weight: Tensor::vector(alpha_weight.values().to_vec()),
            alpha_bias: Tensor::zeros(Shape::Vector(1)),
            beta_rnn,
            beta_weight,
            beta_bias: Tensor::zeros(Shape::Vector(m)),
            output_weight,
            output_bias: Tensor::zeros(Shape::Vector(l)),
        })
    }

    pub fn vocab_size(&self) -> usize {
        match self.embedding.shape() {
            Shape::Matrix(_, v) => v,
            Shape::Vector(_) => 0,
        }
    }

    pub fn n_targets(&self) -> usize {
        self.target_codes.len()
    }

    pub fn target_index(&self, code: &str) -> Option<usize> {
        self.target_codes.iter().position(|c| c == code)
    }

    /// All parameters in [`PARAM_NAMES`] order.
    pub fn params(&self) -> [&Tensor<S>; 15] {
        [
            &self.embedding,
            &self.alpha_rnn.input_weights,
            &self.alpha_rnn.recurrent_weights,
            &self.alpha_rnn.input_bias,
            &self.alpha_rnn.recurrent_bias,
            &self.alpha_weight,
            &self.alpha_bias,
            &self.beta_rnn.input_weights,
            &self.beta_rnn.recurrent_weights,
            &self.beta_rnn.input_bias,
            &self.beta_rnn.recurrent_bias,
            &self.beta_weight,
            &self.beta_bias,
            &self.output_weight,
            &self.output_bias,
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor<S>; 15] {
        [
            &mut self.embedding,
            &mut self.alpha_rnn.input_weights,
            &mut self.alpha_rnn.recurrent_weights,
            &mut self.alpha_rnn.input_bias,
            &mut self.alpha_rnn.recurrent_bias,
            &mut self.alpha_weight,
            &mut self.alpha_bias,
            &mut self.beta_rnn.input_weights,
            &mut self.beta_rnn.recurrent_weights,
            &mut self.beta_rnn.input_bias,
            &mut self.beta_rnn.recurrent_bias,
            &mut self.beta_weight,
            &mut self.beta_bias,
            &mut self.output_weight,
            &mut self.output_bias,
        ]
    }

    /// Owned copies of every parameter, in canonical order.
    pub fn param_tensors(&self) -> Vec<Tensor<S>> {
        self.params().into_iter().cloned().collect()
    }

    /// Replaces every parameter; shapes must match.
    pub fn set_params(&mut self, tensors: Vec<Tensor<S>>) -> Result<()> {
        if tensors.len() != PARAM_NAMES.len() {
            return Err(Error::Shape { op: "set_params", detail: format!("{} tensors", tensors.len()) });
        }
        for ((slot, t), name) in self.params_mut().into_iter().zip(tensors).zip(PARAM_NAMES) {
            if slot.shape() != t.shape() {
                return Err(Error::Shape { op: "set_params", detail: format!("{name}: {:?} vs {:?}", slot.shape(), t.shape()) });
            }
            *slot = t;
        }
        Ok(())
    }

    /// Embedding column for `code_index`.
    pub fn event_vector(&self, code_index: usize) -> Vec<S> {
        self.embedding.column(code_index)
    }
}
