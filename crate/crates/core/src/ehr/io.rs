//! JSON Lines persistence for vocabularies and cohorts.
//!
//! A cohort is a directory holding `samples.jsonl` (one training sample per
//! line) and `vocabulary.jsonl` (one vocabulary entry per line).

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{EventVocabulary, TrainingSample, VocabEntry};
use crate::error::{Error, Result};

pub const SAMPLES_FILE: &str = "samples.jsonl";
pub const VOCABULARY_FILE: &str = "vocabulary.jsonl";

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_vocabulary(path: &Path, vocabulary: &EventVocabulary) -> Result<()> {
    write_jsonl(path, vocabulary.entries())
}

pub fn read_vocabulary(path: &Path) -> Result<EventVocabulary> {
    EventVocabulary::new(read_jsonl::<VocabEntry>(path)?)
}

pub fn write_cohort(dir: &Path, vocabulary: &EventVocabulary, samples: &[TrainingSample]) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_vocabulary(&dir.join(VOCABULARY_FILE), vocabulary)?;
    write_jsonl(&dir.join(SAMPLES_FILE), samples)
}

/// Loads a cohort and checks every sample against the vocabulary.
pub fn read_cohort(dir: &Path) -> Result<(EventVocabulary, Vec<TrainingSample>)> {
    let vocabulary = read_vocabulary(&dir.join(VOCABULARY_FILE))?;
    let samples: Vec<TrainingSample> = read_jsonl(&dir.join(SAMPLES_FILE))?;
    for s in &samples {
        s.input.validate()?;
        for code in s.input.steps.iter().flat_map(|st| &st.codes).chain(&s.labels) {
            if !vocabulary.contains(code) {
                return Err(Error::UnknownCode(code.clone()));
            }
        }
    }
    Ok((vocabulary, samples))
}
