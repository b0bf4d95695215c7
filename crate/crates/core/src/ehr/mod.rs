//! Event data model: vocabularies, timestamped event sequences, windowed
//! training samples, and the transformations between raw rows and encoded
//! model inputs.

mod encode;
mod ingest;
pub mod io;
mod synthetic;

pub use encode::{decode_multi_hot, encode, EncodedSequence, EncodedStep, DAYS_PER_YEAR};
pub use ingest::{clean, ingest, window, Ingested, RowError};
pub use synthetic::{generate_synthetic, PlantedRule, SyntheticCohortSpec};

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Six months, in days.
pub const DEFAULT_WINDOW_DAYS: f64 = 183.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Diagnosis,
    Treatment,
}

impl EventKind {
    pub fn parse(tag: &str) -> Option<Self> {
        match tag.trim().to_ascii_lowercase().as_str() {
            "diagnosis" => Some(EventKind::Diagnosis),
            "treatment" => Some(EventKind::Treatment),
            _ => None,
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::Diagnosis => "diagnosis",
            EventKind::Treatment => "treatment",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabEntry {
    pub code: String,
    pub kind: EventKind,
    pub display_name: String,
    pub train_count: u64,
}

/// Event codes with a dense index in `[0, len)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventVocabulary {
    entries: Vec<VocabEntry>,
    index: HashMap<String, usize>,
}

impl EventVocabulary {
    pub fn new(entries: Vec<VocabEntry>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if index.insert(e.code.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate vocabulary code {:?}", e.code)));
            }
        }
        Ok(Self { entries, index })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    pub fn entry(&self, index: usize) -> &VocabEntry {
        &self.entries[index]
    }

    pub fn index_of(&self, code: &str) -> Option<usize> {
        self.index.get(code).copied()
    }

    pub fn get(&self, code: &str) -> Option<&VocabEntry> {
        self.index_of(code).map(|i| &self.entries[i])
    }

    pub fn contains(&self, code: &str) -> bool {
        self.index.contains_key(code)
    }

    pub fn kind_of(&self, code: &str) -> Option<EventKind> {
        self.get(code).map(|e| e.kind)
    }

    pub fn codes_of_kind(&self, kind: EventKind) -> impl Iterator<Item = &str> {
        self.entries.iter().filter(move |e| e.kind == kind).map(|e| e.code.as_str())
    }

    /// Stable fingerprint over the indexed `(code, kind)` pairs. Counts and
    /// display names do not participate.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for e in &self.entries {
            hasher.update(e.code.as_bytes());
            hasher.update([0u8]);
            hasher.update(e.kind.to_string().as_bytes());
            hasher.update([0u8]);
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Replaces every `train_count` with occurrences across the samples'
    /// input steps and labels.
    pub fn recount(&mut self, samples: &[TrainingSample]) {
        let mut counts = vec![0u64; self.entries.len()];
        for s in samples {
            for code in s.input.steps.iter().flat_map(|st| st.codes.iter()).chain(&s.labels) {
                if let Some(i) = self.index_of(code) {
                    counts[i] += 1;
                }
            }
        }
        for (e, c) in self.entries.iter_mut().zip(counts) {
            e.train_count = c;
        }
    }
}

/// Codes recorded at one timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "(f64, BTreeSet<String>)", into = "(f64, BTreeSet<String>)")]
pub struct Step {
    pub timestamp: f64,
    pub codes: BTreeSet<String>,
}

impl From<(f64, BTreeSet<String>)> for Step {
    fn from((timestamp, codes): (f64, BTreeSet<String>)) -> Self {
        Self { timestamp, codes }
    }
}

impl From<Step> for (f64, BTreeSet<String>) {
    fn from(s: Step) -> Self {
        (s.timestamp, s.codes)
    }
}

impl Step {
    pub fn new<I, C>(timestamp: f64, codes: I) -> Self
    where
        I: IntoIterator<Item = C>,
        C: Into<String>,
    {
        Self { timestamp, codes: codes.into_iter().map(Into::into).collect() }
    }
}

/// One patient's events, grouped by timestamp, up to a prediction time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSequence {
    pub patient_id: String,
    pub steps: Vec<Step>,
    pub prediction_time: f64,
}

impl EventSequence {
    pub fn new(patient_id: impl Into<String>, steps: Vec<Step>, prediction_time: f64) -> Result<Self> {
        let seq = Self { patient_id: patient_id.into(), steps, prediction_time };
        seq.validate()?;
        Ok(seq)
    }

    /// Checks ordering, finiteness, non-empty steps, and the prediction-time bound.
    pub fn validate(&self) -> Result<()> {
        if !self.prediction_time.is_finite() {
            return Err(Error::InvalidArgument("prediction_time is not finite".into()));
        }
        for (i, step) in self.steps.iter().enumerate() {
            if !step.timestamp.is_finite() {
                return Err(Error::InvalidArgument(format!("step {i} has a non-finite timestamp")));
            }
            if step.codes.is_empty() {
                return Err(Error::InvalidArgument(format!("step {i} has no codes")));
            }
            if step.timestamp > self.prediction_time {
                return Err(Error::InvalidArgument(format!(
                    "step {i} at {} is after prediction time {}",
                    step.timestamp, self.prediction_time
                )));
            }
            if i > 0 && step.timestamp <= self.steps[i - 1].timestamp {
                return Err(Error::InvalidArgument(format!("step {i} is not strictly after step {}", i - 1)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn event_count(&self) -> usize {
        self.steps.iter().map(|s| s.codes.len()).sum()
    }

    pub fn contains_code(&self, code: &str) -> bool {
        self.steps.iter().any(|s| s.codes.contains(code))
    }

    /// `(first, last)` timestamps.
    pub fn span(&self) -> Option<(f64, f64)> {
        Some((self.steps.first()?.timestamp, self.steps.last()?.timestamp))
    }
}

/// A windowed history ending at an admission, with the diagnoses observed
/// at that admission as labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    #[serde(flatten)]
    pub input: EventSequence,
    pub labels: BTreeSet<String>,
}

impl TrainingSample {
    pub fn patient_id(&self) -> &str {
        &self.input.patient_id
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(code: &str, kind: EventKind) -> VocabEntry {
        VocabEntry { code: code.into(), kind, display_name: code.into(), train_count: 0 }
    }

    #[test]
    fn vocabulary_rejects_duplicates() {
        let err = EventVocabulary::new(vec![entry("a", EventKind::Diagnosis), entry("a", EventKind::Treatment)]);
        assert!(err.is_err());
    }

    #[test]
    fn fingerprint_tracks_codes_not_counts() {
        let a = EventVocabulary::new(vec![entry("a", EventKind::Diagnosis), entry("b", EventKind::Treatment)]).unwrap();
        let mut counted = a.clone();
        counted.entries[0].train_count = 9;
        assert_eq!(a.fingerprint(), counted.fingerprint());
        let renamed = EventVocabulary::new(vec![entry("a", EventKind::Diagnosis), entry("c", EventKind::Treatment)]).unwrap();
        assert_ne!(a.fingerprint(), renamed.fingerprint());
    }

    #[test]
    fn sequence_validation() {
        assert!(EventSequence::new("p", vec![Step::new(1.0, ["a"]), Step::new(2.0, ["b"])], 2.0).is_ok());
        assert!(EventSequence::new("p", vec![Step::new(2.0, ["a"]), Step::new(2.0, ["b"])], 3.0).is_err());
        assert!(EventSequence::new("p", vec![Step::new(4.0, ["a"])], 3.0).is_err());
        assert!(EventSequence::new("p", vec![Step::new(1.0, Vec::<String>::new())], 3.0).is_err());
    }

    #[test]
    fn sample_serializes_as_flat_record() {
        let sample = TrainingSample {
            input: EventSequence::new("p1", vec![Step::new(1.5, ["a", "b"])], 3.0).unwrap(),
            labels: ["x".to_string()].into(),
        };
        let text = serde_json::to_string(&sample).unwrap();
        assert_eq!(text, r#"{"patient_id":"p1","steps":[[1.5,["a","b"]]],"prediction_time":3.0,"labels":["x"]}"#);
        let back: TrainingSample = serde_json::from_str(&text).unwrap();
        assert_eq!(back, sample);
    }
}
