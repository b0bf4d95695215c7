use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::dtw::align_vectors;
use super::vectors::EventVectorTable;
use crate::ehr::{Step, TrainingSample};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_HISTOGRAM_BINS: usize = 20;

/// A sample's history followed, when it has labels, by one outcome step at
/// the prediction time holding those labels.
pub fn full_sequence(sample: &TrainingSample) -> Vec<Step> {
    let mut steps = sample.input.steps.clone();
    if !sample.labels.is_empty() {
        steps.push(Step { timestamp: sample.input.prediction_time, codes: sample.labels.clone() });
    }
    steps
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarPatient<S> {
    pub patient_id: String,
    /// Position in the cohort slice.
    pub index: usize,
    pub distance: S,
}

/// Equal-width bins over `[edges[0], edges[bins]]`; the last bin is closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// A zero-width range spreads the bins over `[min, min + 1]`.
    pub fn build(values: &[f64], bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
        }
        if values.is_empty() {
            return Ok(Self { edges: vec![0.0; bins + 1], counts: vec![0; bins] });
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 / bins as f64 };
        let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            let bin = (((v - lo) / width) as usize).min(bins - 1);
            counts[bin] += 1;
        }
        Ok(Self { edges, counts })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityResult<S> {
    /// Every cohort member, nearest first.
    pub ranked: Vec<SimilarPatient<S>>,
    pub histogram: Histogram,
}

impl<S: Scalar> SimilarityResult<S> {
    pub fn top(&self, k: usize) -> &[SimilarPatient<S>] {
        &self.ranked[..k.min(self.ranked.len())]
    }
}

/// Scores every cohort member's history against `focal` by DTW distance.
/// Ties are ordered by patient id, then cohort position.
pub fn similar_patients<S: Scalar>(
    focal: &[Step],
    cohort: &[TrainingSample],
    vectors: &EventVectorTable<S>,
    bins: usize,
    band: Option<usize>,
) -> Result<SimilarityResult<S>> {
    let focal_vectors = vectors.step_vectors(focal)?;
    let mut ranked = cohort
        .iter()
        .enumerate()
        .map(|(index, s)| {
            let distance = align_vectors(&focal_vectors, &vectors.step_vectors(&s.input.steps)?, band)?.distance;
            Ok(SimilarPatient { patient_id: s.patient_id().to_string(), index, distance })
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| a.distance.partial_cmp(&b.distance).expect("finite distances").then_with(|| a.patient_id.cmp(&b.patient_id)).then(a.index.cmp(&b.index)));
    let distances: Vec<f64> = ranked.iter().map(|r| r.distance.as_f64()).collect();
    Ok(SimilarityResult { ranked, histogram: Histogram::build(&distances, bins)? })
}

/// One required code; with `after_previous` it must occur in a step
/// strictly later than the step matched by the preceding item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyEvent {
    pub code: String,
    #[serde(default)]
    pub after_previous: bool,
}

/// Whether `steps` satisfy every key event. Each item is matched at its
/// earliest admissible step, which is optimal because every constraint
/// only looks back one item.
pub fn matches_key_events(steps: &[Step], required: &[KeyEvent]) -> bool {
    let mut previous: Option<usize> = None;
    for item in required {
        let start = match (item.after_previous, previous) {
            (true, Some(p)) => p + 1,
            _ => 0,
        };
        match steps.iter().skip(start).position(|s| s.codes.contains(&item.code)) {
            Some(offset) => previous = Some(start + offset),
            None => return false,
        }
    }
    true
}

/// Cohort positions whose full sequence (history plus outcome step)
/// satisfies `required`, in cohort order. `known` is consulted so that a
/// code outside the vocabulary gives an empty result with a warning.
pub fn query_by_key_events(cohort: &[TrainingSample], required: &[KeyEvent], known: impl Fn(&str) -> bool) -> Vec<usize> {
    if let Some(unknown) = required.iter().find(|k| !known(&k.code)) {
        log::warn!("key-event query names unknown code {:?}; no patient can match", unknown.code);
        return Vec::new();
    }
    (0..cohort.len()).filter(|&i| matches_key_events(&full_sequence(&cohort[i]), required)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSequence {
    pub patient_id: String,
    pub history: Vec<Step>,
    pub outcome: Vec<Step>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowNode {
    pub stage: usize,
    pub code: String,
    pub patient_count: usize,
    /// Patients whose outcome ends at this node.
    pub terminal_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowEdge {
    /// Indices into [`FlowGraph::nodes`].
    pub from: usize,
    pub to: usize,
    pub patient_count: usize,
    pub mean_duration_days: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowGraph {
    pub n_stages: usize,
    /// Ordered by stage, then code.
    pub nodes: Vec<FlowNode>,
    /// Ordered by source node, then target node.
    pub edges: Vec<FlowEdge>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregation {
    pub splits: Vec<SplitSequence>,
    pub flow: FlowGraph,
}

/// Splits `member` where it aligns with the last focal step: history ends
/// at the first member step matched to it, the outcome is the rest.
pub fn split_at_focal_end<S: Scalar>(focal: &[Vec<S>], member: &[Step], member_vectors: &[Vec<S>]) -> Result<(Vec<Step>, Vec<Step>)> {
    let alignment = align_vectors(focal, member_vectors, None)?;
    let last = focal.len() - 1;
    let cut = alignment.path.iter().find(|&&(i, _)| i == last).map(|&(_, j)| j).expect("path reaches the last focal step");
    Ok((member[..=cut].to_vec(), member[cut + 1..].to_vec()))
}

/// Stage of each outcome position: its own position when the outcome has
/// at most `n_stages` steps, otherwise equal-occupancy bins.
pub fn stage_of(position: usize, len: usize, n_stages: usize) -> usize {
    if len <= n_stages {
        position
    } else {
        position * n_stages / len
    }
}

/// Most frequent code among `steps`, ties to the earliest first occurrence
/// and then to the smaller code. Returns the code and its first timestamp.
fn representative(steps: &[&Step]) -> (String, f64) {
    let mut tally: BTreeMap<&str, (usize, usize, f64)> = BTreeMap::new();
    for (pos, step) in steps.iter().enumerate() {
        for code in &step.codes {
            let e = tally.entry(code.as_str()).or_insert((0, pos, step.timestamp));
            e.0 += 1;
        }
    }
    let (code, (_, _, t)) = tally
        .into_iter()
        .min_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.cmp(&b.1 .1)).then(a.0.cmp(b.0)))
        .expect("stage has at least one step");
    (code.to_string(), t)
}

/// Splits every selected member against the focal history and folds the
/// outcome sections into a staged flow graph.
pub fn split_and_aggregate<S: Scalar>(
    focal: &[Step],
    selection: &[&TrainingSample],
    vectors: &EventVectorTable<S>,
    n_stages: usize,
) -> Result<Aggregation> {
    if n_stages == 0 {
        return Err(Error::InvalidArgument("n_stages must be at least 1".into()));
    }
    let focal_vectors = vectors.step_vectors(focal)?;
    let mut splits = Vec::with_capacity(selection.len());
    // per patient: one (code, first timestamp) per occupied stage
    let mut paths: Vec<Vec<(String, f64)>> = Vec::new();
    for sample in selection {
        let member = full_sequence(sample);
        let (history, outcome) = split_at_focal_end(&focal_vectors, &member, &vectors.step_vectors(&member)?)?;
        if !outcome.is_empty() {
            let mut staged: Vec<Vec<&Step>> = vec![Vec::new(); n_stages.min(outcome.len())];
            for (pos, step) in outcome.iter().enumerate() {
                staged[stage_of(pos, outcome.len(), n_stages)].push(step);
            }
            paths.push(staged.iter().map(|s| representative(s)).collect());
        }
        splits.push(SplitSequence { patient_id: sample.patient_id().to_string(), history, outcome });
    }

    let mut node_counts: BTreeMap<(usize, &str), (usize, usize)> = BTreeMap::new();
    let mut edge_tally: BTreeMap<((usize, &str), (usize, &str)), (usize, f64)> = BTreeMap::new();
    for path in &paths {
        for (stage, (code, t)) in path.iter().enumerate() {
            let node = node_counts.entry((stage, code.as_str())).or_default();
            node.0 += 1;
            match path.get(stage + 1) {
                Some((next, t_next)) => {
                    let e = edge_tally.entry(((stage, code.as_str()), (stage + 1, next.as_str()))).or_default();
                    e.0 += 1;
                    e.1 += t_next - t;
                }
                None => node.1 += 1,
            }
        }
    }
    let keys: Vec<(usize, &str)> = node_counts.keys().copied().collect();
    let nodes = node_counts
        .iter()
        .map(|(&(stage, code), &(patient_count, terminal_count))| FlowNode { stage, code: code.to_string(), patient_count, terminal_count })
        .collect();
    let position = |k: &(usize, &str)| keys.binary_search(k).expect("edge endpoints are nodes");
    let edges = edge_tally
        .iter()
        .map(|(&(from, to), &(count, total))| FlowEdge {
            from: position(&from),
            to: position(&to),
            patient_count: count,
            mean_duration_days: total / count as f64,
        })
        .collect();
    Ok(Aggregation { splits, flow: FlowGraph { n_stages, nodes, edges } })
}

/// Distinct codes in a set of steps.
pub fn codes_in(steps: &[Step]) -> BTreeSet<&str> {
    steps.iter().flat_map(|s| s.codes.iter().map(String::as_str)).collect()
}
