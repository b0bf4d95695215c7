use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::Read;

use super::{EventKind, EventSequence, EventVocabulary, Step, TrainingSample, VocabEntry};
use crate::error::{Error, Result};

/// A rejected input row.
#[derive(Debug, Clone, PartialEq)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub vocabulary: EventVocabulary,
    pub sequences: Vec<EventSequence>,
    pub rejected: Vec<RowError>,
}

const COLUMNS: [&str; 4] = ["patient_id", "code", "kind", "timestamp"];

/// Reads `patient_id,code,kind,timestamp` rows (comma or tab separated,
/// header required) into one sequence per patient.
///
/// Malformed rows are collected in [`Ingested::rejected`] and skipped.
pub fn ingest<R: Read>(mut reader: R) -> Result<Ingested> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let header = text.lines().next().unwrap_or_default();
    let delimiter = if header.contains('\t') { b'\t' } else { b',' };

    let mut csv = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = csv.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
    let mut position = [0usize; 4];
    for (slot, name) in position.iter_mut().zip(COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Parse(format!("header is missing column {name:?}")))?;
    }

    let mut kinds: HashMap<String, EventKind> = HashMap::new();
    let mut events: BTreeMap<String, BTreeMap<u64, (f64, BTreeSet<String>)>> = BTreeMap::new();
    let mut rejected = Vec::new();
    for record in csv.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                rejected.push(RowError { line, message: e.to_string() });
                continue;
            }
        };
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| record.get(position[i]).unwrap_or("");
        let (patient, code, kind, ts) = (field(0), field(1), field(2), field(3));
        let reject = |message: String| RowError { line, message };
        if patient.is_empty() || code.is_empty() {
            rejected.push(reject("empty patient_id or code".into()));
            continue;
        }
        let Some(kind) = EventKind::parse(kind) else {
            rejected.push(reject(format!("unknown kind {kind:?}")));
            continue;
        };
        let timestamp: f64 = match ts.parse() {
            Ok(t) if f64::is_finite(t) => t,
            _ => {
                rejected.push(reject(format!("unparseable timestamp {ts:?}")));
                continue;
            }
        };
        match kinds.get(code) {
            Some(&known) if known != kind => {
                rejected.push(reject(format!("code {code:?} already has kind {known}, row says {kind}")));
                continue;
            }
            Some(_) => {}
            None => {
                kinds.insert(code.to_string(), kind);
            }
        }
        events
            .entry(patient.to_string())
            .or_default()
            .entry(order_key(timestamp))
            .or_insert_with(|| (timestamp, BTreeSet::new()))
            .1
            .insert(code.to_string());
    }
    if events.is_empty() {
        return Err(Error::NoValidRows { rejected: rejected.len() });
    }

    let sequences: Vec<EventSequence> = events
        .into_iter()
        .map(|(patient_id, steps)| {
            let steps: Vec<Step> = steps.into_values().map(|(timestamp, codes)| Step { timestamp, codes }).collect();
            let prediction_time = steps.last().map(|s| s.timestamp).unwrap_or(0.0);
            EventSequence { patient_id, steps, prediction_time }
        })
        .collect();

    let mut codes: Vec<(String, EventKind)> = kinds.into_iter().collect();
    codes.sort();
    let counts = count_codes(&sequences);
    let entries = codes
        .into_iter()
        .map(|(code, kind)| VocabEntry {
            train_count: counts.get(code.as_str()).copied().unwrap_or(0),
            display_name: code.clone(),
            code,
            kind,
        })
        .collect();
    Ok(Ingested { vocabulary: EventVocabulary::new(entries)?, sequences, rejected })
}

/// Total-order key for finite timestamps, so equal timestamps group together.
fn order_key(t: f64) -> u64 {
    let bits = (t + 0.0).to_bits();
    if bits >> 63 == 1 {
        !bits
    } else {
        bits | (1 << 63)
    }
}

fn count_codes(sequences: &[EventSequence]) -> HashMap<&str, u64> {
    let mut counts = HashMap::new();
    for code in sequences.iter().flat_map(|s| &s.steps).flat_map(|st| &st.codes) {
        *counts.entry(code.as_str()).or_insert(0) += 1;
    }
    counts
}

/// Drops codes occurring fewer than `min_count` times, then drops steps
/// and sequences left empty. Indices are reassigned densely in the
/// surviving vocabulary order.
pub fn clean(
    sequences: &[EventSequence],
    vocabulary: &EventVocabulary,
    min_count: usize,
) -> Result<(EventVocabulary, Vec<EventSequence>)> {
    if min_count < 1 {
        return Err(Error::InvalidArgument("min_count must be at least 1".into()));
    }
    let counts = count_codes(sequences);
    let keep: HashSet<&str> = vocabulary
        .entries()
        .iter()
        .filter(|e| counts.get(e.code.as_str()).copied().unwrap_or(0) >= min_count as u64)
        .map(|e| e.code.as_str())
        .collect();
    if keep.is_empty() {
        return Err(Error::EverythingCleaned { min_count });
    }
    let entries: Vec<VocabEntry> = vocabulary
        .entries()
        .iter()
        .filter(|e| keep.contains(e.code.as_str()))
        .map(|e| VocabEntry { train_count: counts[e.code.as_str()], ..e.clone() })
        .collect();
    let cleaned = sequences
        .iter()
        .filter_map(|seq| {
            let steps: Vec<Step> = seq
                .steps
                .iter()
                .filter_map(|st| {
                    let codes: BTreeSet<String> = st.codes.iter().filter(|c| keep.contains(c.as_str())).cloned().collect();
                    (!codes.is_empty()).then(|| Step { timestamp: st.timestamp, codes })
                })
                .collect();
            (!steps.is_empty()).then(|| EventSequence { steps, ..seq.clone() })
        })
        .collect();
    Ok((EventVocabulary::new(entries)?, cleaned))
}

/// Cuts one sample per admission step: the input is every step in
/// `[t_adm - window_days, t_adm)`, the labels are the admission step's
/// diagnosis codes (admission codes themselves excluded). Admissions with
/// no prior step inside the window yield no sample.
pub fn window(
    vocabulary: &EventVocabulary,
    sequences: &[EventSequence],
    window_days: f64,
    admission_codes: &BTreeSet<String>,
) -> Result<Vec<TrainingSample>> {
    if !(window_days > 0.0 && window_days.is_finite()) {
        return Err(Error::InvalidArgument(format!("window_days must be positive, got {window_days}")));
    }
    let mut samples = Vec::new();
    for seq in sequences {
        for adm in seq.steps.iter().filter(|st| st.codes.iter().any(|c| admission_codes.contains(c))) {
            let start = adm.timestamp - window_days;
            let steps: Vec<Step> = seq
                .steps
                .iter()
                .filter(|st| st.timestamp >= start && st.timestamp < adm.timestamp)
                .cloned()
                .collect();
            if steps.is_empty() {
                continue;
            }
            let labels = adm
                .codes
                .iter()
                .filter(|c| !admission_codes.contains(*c) && vocabulary.kind_of(c) == Some(EventKind::Diagnosis))
                .cloned()
                .collect();
            samples.push(TrainingSample {
                input: EventSequence { patient_id: seq.patient_id.clone(), steps, prediction_time: adm.timestamp },
                labels,
            });
        }
    }
    Ok(samples)
}
