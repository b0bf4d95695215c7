use std::collections::BTreeSet;

use super::{EventSequence, EventVocabulary};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DAYS_PER_YEAR: f64 = 365.0;

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedStep<S> {
    /// Sorted vocabulary indices of the step's codes.
    pub active: Vec<usize>,
    pub multi_hot: Vec<S>,
    /// Years between the step and the prediction time.
    pub duration: S,
}

/// Model input: one multi-hot vector and duration per step, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSequence<S> {
    pub vocab_size: usize,
    pub steps: Vec<EncodedStep<S>>,
}

impl<S> EncodedSequence<S> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

pub fn encode<S: Scalar>(sequence: &EventSequence, vocabulary: &EventVocabulary) -> Result<EncodedSequence<S>> {
    let v = vocabulary.len();
    let steps = sequence
        .steps
        .iter()
        .map(|step| {
            let mut active = step
                .codes
                .iter()
                .map(|c| vocabulary.index_of(c).ok_or_else(|| Error::UnknownCode(c.clone())))
                .collect::<Result<Vec<_>>>()?;
            active.sort_unstable();
            let mut multi_hot = vec![S::zero(); v];
            for &i in &active {
                multi_hot[i] = S::one();
            }
            let duration = S::lit((sequence.prediction_time - step.timestamp) / DAYS_PER_YEAR);
            Ok(EncodedStep { active, multi_hot, duration })
        })
        .collect::<Result<_>>()?;
    Ok(EncodedSequence { vocab_size: v, steps })
}

/// Codes whose entries in `x` are non-zero.
pub fn decode_multi_hot<S: Scalar>(x: &[S], vocabulary: &EventVocabulary) -> BTreeSet<String> {
    x.iter()
        .enumerate()
        .filter(|(_, v)| **v != S::zero())
        .map(|(i, _)| vocabulary.entry(i).code.clone())
        .collect()
}
