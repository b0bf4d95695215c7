use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ehr::{EventSequence, EventVocabulary, Step};
use crate::error::{Error, Result};
use crate::retain::RetainModel;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VectorProvenance {
    ReusedEmbedding,
    TrainedStandalone,
}

/// One dense vector per vocabulary code.
#[derive(Debug, Clone, PartialEq)]
pub struct EventVectorTable<S> {
    provenance: VectorProvenance,
    dim: usize,
    codes: Vec<String>,
    vectors: Vec<Vec<S>>,
    index: HashMap<String, usize>,
}

/// Skip-gram with negative sampling over codes in nearby steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkipGramConfig {
    pub dim: usize,
    /// Steps on either side whose codes count as context.
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        Self { dim: 32, window: 2, negatives: 5, epochs: 5, learning_rate: 0.025, seed: 0 }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl<S: Scalar> EventVectorTable<S> {
    pub(crate) fn build(provenance: VectorProvenance, vocabulary: &EventVocabulary, vectors: Vec<Vec<S>>) -> Self {
        let codes: Vec<String> = vocabulary.entries().iter().map(|e| e.code.clone()).collect();
        let index = codes.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect();
        let dim = vectors.first().map_or(0, Vec::len);
        Self { provenance, dim, codes, vectors, index }
    }

    /// The model's embedding columns. `vocabulary` must be the one the
    /// model was trained on.
    pub fn from_model(model: &RetainModel<S>, vocabulary: &EventVocabulary) -> Result<Self> {
        let expected = vocabulary.fingerprint();
        if model.vocabulary_hash != expected {
            return Err(Error::VocabularyMismatch { found: model.vocabulary_hash.clone(), expected });
        }
        let vectors = (0..vocabulary.len()).map(|i| model.event_vector(i)).collect();
        Ok(Self::build(VectorProvenance::ReusedEmbedding, vocabulary, vectors))
    }

    /// Trains vectors from code co-occurrence within `config.window` steps.
    pub fn train_standalone(corpus: &[EventSequence], vocabulary: &EventVocabulary, config: &SkipGramConfig) -> Result<Self> {
        if config.dim == 0 {
            return Err(Error::InvalidArgument("vector dimension must be at least 1".into()));
        }
        let encoded: Vec<Vec<Vec<usize>>> = corpus
            .iter()
            .map(|seq| {
                seq.steps
                    .iter()
                    .map(|st| st.codes.iter().map(|c| vocabulary.index_of(c).ok_or_else(|| Error::UnknownCode(c.clone()))).collect())
                    .collect()
            })
            .collect::<Result<_>>()?;
        let mut pairs = Vec::new();
        for seq in &encoded {
            for (i, step) in seq.iter().enumerate() {
                let lo = i.saturating_sub(config.window);
                let hi = (i + config.window).min(seq.len() - 1);
                for &center in step {
                    for (j, other) in seq.iter().enumerate().take(hi + 1).skip(lo) {
                        pairs.extend(other.iter().filter(|&&c| j != i || c != center).map(|&c| (center, c)));
                    }
                }
            }
        }
        if pairs.is_empty() {
            return Err(Error::InvalidArgument("standalone event vectors need a corpus with co-occurring codes".into()));
        }

        // unigram^0.75 noise distribution as a cumulative table
        let v = vocabulary.len();
        let mut freq = vec![0.0f64; v];
        for seq in &encoded {
            for &c in seq.iter().flatten() {
                freq[c] += 1.0;
            }
        }
        let mut cumulative = Vec::with_capacity(v);
        let mut acc = 0.0;
        for f in &freq {
            acc += f.powf(0.75);
            cumulative.push(acc);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.dim;
        let scale = 0.5 / d as f64;
        let mut input: Vec<Vec<f64>> = (0..v).map(|_| (0..d).map(|_| rng.gen_range(-scale..scale)).collect()).collect();
        let mut output = vec![vec![0.0f64; d]; v];
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        let total_steps = (config.epochs * pairs.len()).max(1) as f64;
        let mut step = 0usize;
        for _ in 0..config.epochs {
            order.shuffle(&mut rng);
            for &p in &order {
                let (center, context) = pairs[p];
                let lr = config.learning_rate * (1.0 - step as f64 / total_steps).max(1e-4);
                step += 1;
                let mut grad_in = vec![0.0; d];
                let mut update = |target: usize, label: f64, grad_in: &mut [f64]| {
                    let score: f64 = input[center].iter().zip(&output[target]).map(|(a, b)| a * b).sum();
                    let g = lr * (label - sigmoid(score));
                    for k in 0..d {
                        grad_in[k] += g * output[target][k];
                        output[target][k] += g * input[center][k];
                    }
                };
                update(context, 1.0, &mut grad_in);
                for _ in 0..config.negatives {
                    let r = rng.gen_range(0.0..acc);
                    let neg = cumulative.partition_point(|&c| c <= r).min(v - 1);
                    if neg != context {
                        update(neg, 0.0, &mut grad_in);
                    }
                }
                for (w, g) in input[center].iter_mut().zip(&grad_in) {
                    *w += g;
                }
            }
        }
        // input plus context vectors, so direct co-occurrence counts as well
        // as shared neighbourhoods
        let vectors = input
            .into_iter()
            .zip(output)
            .map(|(i, o)| i.into_iter().zip(o).map(|(a, b)| S::lit(a + b)).collect())
            .collect();
        Ok(Self::build(VectorProvenance::TrainedStandalone, vocabulary, vectors))
    }

    pub fn provenance(&self) -> VectorProvenance {
        self.provenance
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn codes(&self) -> &[String] {
        &self.codes
    }

    pub fn get(&self, code: &str) -> Option<&[S]> {
        self.index.get(code).map(|&i| self.vectors[i].as_slice())
    }

    /// Mean vector of a step's codes.
    pub fn step_vector(&self, step: &Step) -> Result<Vec<S>> {
        if step.codes.is_empty() {
            return Err(Error::InvalidArgument("step has no codes".into()));
        }
        let mut mean = vec![S::zero(); self.dim];
        for code in &step.codes {
            let v = self.get(code).ok_or_else(|| Error::UnknownCode(code.clone()))?;
            for (m, &x) in mean.iter_mut().zip(v) {
                *m += x;
            }
        }
        let n = S::lit(step.codes.len() as f64);
        Ok(mean.into_iter().map(|m| m / n).collect())
    }

    pub fn step_vectors(&self, steps: &[Step]) -> Result<Vec<Vec<S>>> {
        steps.iter().map(|s| self.step_vector(s)).collect()
    }
}

pub fn euclidean<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum::<S>().sqrt()
}

pub fn cosine<S: Scalar>(a: &[S], b: &[S]) -> S {
    let dot: S = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    let na: S = a.iter().map(|&x| x * x).sum::<S>().sqrt();
    let nb: S = b.iter().map(|&x| x * x).sum::<S>().sqrt();
    dot / (na * nb)
}

/// Euclidean distance between the mean vectors of two steps.
pub fn step_cost<S: Scalar>(a: &Step, b: &Step, vectors: &EventVectorTable<S>) -> Result<S> {
    Ok(euclidean(&vectors.step_vector(a)?, &vectors.step_vector(b)?))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::ehr::{EventKind, VocabEntry};
    use crate::retain::ModelConfig;
    use approx::assert_abs_diff_eq;

    pub(crate) fn vocab(codes: &[&str]) -> EventVocabulary {
        EventVocabulary::new(
            codes
                .iter()
                .map(|c| VocabEntry { code: c.to_string(), kind: EventKind::Diagnosis, display_name: c.to_string(), train_count: 0 })
                .collect(),
        )
        .unwrap()
    }

    /// Fixed vectors for hand arithmetic.
    pub(crate) fn fixture_table() -> EventVectorTable<f64> {
        let v = vocab(&["a", "b", "c"]);
        EventVectorTable::build(VectorProvenance::ReusedEmbedding, &v, vec![vec![0.0, 0.0, 0.0], vec![3.0, 0.0, 0.0], vec![0.0, 6.0, 0.0]])
    }

    #[test]
    fn reused_vectors_are_embedding_columns() {
        let v = vocab(&["a", "b", "c", "d"]);
        let model = RetainModel::<f64>::new(ModelConfig { embed_dim: 3, hidden_dim: 2, ..ModelConfig::default() }, &v, vec!["a".into()])
            .unwrap();
        let table = EventVectorTable::from_model(&model, &v).unwrap();
        assert_eq!(table.provenance(), VectorProvenance::ReusedEmbedding);
        for (i, code) in ["a", "b", "c", "d"].iter().enumerate() {
            assert_eq!(table.get(code).unwrap(), model.embedding.column(i).as_slice());
        }
        let other = vocab(&["a", "b", "c", "e"]);
        assert!(EventVectorTable::from_model(&model, &other).is_err());
    }

    #[test]
    fn step_costs_by_hand() {
        let t = fixture_table();
        let s = |codes: &[&str]| Step::new(0.0, codes.iter().copied());
        assert_eq!(step_cost(&s(&["a", "b"]), &s(&["b", "a"]), &t).unwrap(), 0.0);
        assert_eq!(step_cost(&s(&["a"]), &s(&["b"]), &t).unwrap(), 3.0);
        // means (1.5, 0, 0) and (1, 2, 0)
        assert_abs_diff_eq!(step_cost(&s(&["a", "b"]), &s(&["a", "b", "c"]), &t).unwrap(), (0.25f64 + 4.0).sqrt(), epsilon = 1e-15);
        assert!(matches!(step_cost(&s(&["z"]), &s(&["a"]), &t), Err(Error::UnknownCode(_))));
    }

    #[test]
    fn standalone_vectors_follow_co_occurrence() {
        let v = vocab(&["a", "b", "c", "x", "y"]);
        // a and b always share a step; c only ever appears far from both
        let corpus: Vec<EventSequence> = (0..60)
            .map(|i| {
                let steps = vec![
                    Step::new(0.0, ["a", "b"]),
                    Step::new(1.0, ["x"]),
                    Step::new(2.0, ["y"]),
                    Step::new(3.0, ["x"]),
                    Step::new(4.0, ["c", "y"]),
                ];
                EventSequence::new(format!("p{i}"), steps, 10.0).unwrap()
            })
            .collect();
        let cfg = SkipGramConfig { dim: 8, epochs: 20, ..SkipGramConfig::default() };
        let t = EventVectorTable::<f64>::train_standalone(&corpus, &v, &cfg).unwrap();
        let (a, b, c) = (t.get("a").unwrap(), t.get("b").unwrap(), t.get("c").unwrap());
        assert!(cosine(a, b) > cosine(a, c), "{} vs {}", cosine(a, b), cosine(a, c));
        assert_eq!(t, EventVectorTable::<f64>::train_standalone(&corpus, &v, &cfg).unwrap());
        assert_eq!(t.provenance(), VectorProvenance::TrainedStandalone);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let v = vocab(&["a"]);
        assert!(EventVectorTable::<f64>::train_standalone(&[], &v, &SkipGramConfig::default()).is_err());
    }
}
