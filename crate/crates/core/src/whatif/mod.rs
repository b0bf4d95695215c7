//! Counterfactual sequence editing, scenario comparison, and the
//! treatment-by-disease significance matrix.

mod edit;
mod stats;

pub use edit::{replay, EditOp};
pub use stats::{summarize, welch_t_test, GroupSummary, WelchResult, SIGNIFICANCE_LEVEL, Z_95};

use serde::{Deserialize, Serialize};

use crate::ehr::{encode, EventSequence, EventVocabulary, TrainingSample};
use crate::error::{Error, Result};
use crate::retain::{PredictionResult, RetainModel};
use crate::scalar::Scalar;
use crate::similarity::{euclidean, EventVectorTable};

/// An edited copy of a patient's sequence with its prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario<S> {
    pub scenario_id: String,
    pub base_patient_id: String,
    pub label: String,
    pub edits: Vec<EditOp>,
    pub edited_sequence: EventSequence,
    pub prediction: PredictionResult<S>,
}

impl<S: Scalar> Scenario<S> {
    /// An unedited copy of `base`.
    pub fn new(
        scenario_id: impl Into<String>,
        label: impl Into<String>,
        base: &EventSequence,
        model: &RetainModel<S>,
        vocabulary: &EventVocabulary,
    ) -> Result<Self> {
        Self::from_edits(scenario_id, label, base, Vec::new(), model, vocabulary)
    }

    /// Rebuilds a scenario by replaying `edits` over `base`.
    pub fn from_edits(
        scenario_id: impl Into<String>,
        label: impl Into<String>,
        base: &EventSequence,
        edits: Vec<EditOp>,
        model: &RetainModel<S>,
        vocabulary: &EventVocabulary,
    ) -> Result<Self> {
        let edited_sequence = replay(base, &edits, vocabulary)?;
        let prediction = model.forward(&encode(&edited_sequence, vocabulary)?)?;
        Ok(Self {
            scenario_id: scenario_id.into(),
            base_patient_id: base.patient_id.clone(),
            label: label.into(),
            edits,
            edited_sequence,
            prediction,
        })
    }

    /// The next version: `op` appended and the prediction recomputed.
    pub fn apply_edit(&self, op: EditOp, model: &RetainModel<S>, vocabulary: &EventVocabulary) -> Result<Self> {
        let edited_sequence = op.apply(&self.edited_sequence, vocabulary)?;
        let prediction = model.forward(&encode(&edited_sequence, vocabulary)?)?;
        let mut edits = self.edits.clone();
        edits.push(op);
        Ok(Self { edits, edited_sequence, prediction, ..self.clone() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetComparison {
    pub code: String,
    /// One entry per scenario, in input order.
    pub probabilities: Vec<f64>,
    /// Difference from the first scenario.
    pub deltas: Vec<f64>,
    /// 1 is the most probable target within that scenario.
    pub ranks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioComparison {
    pub scenario_ids: Vec<String>,
    pub targets: Vec<TargetComparison>,
}

/// Lines scenarios up per target. The first scenario is the reference for
/// deltas; ranks order targets by probability with ties in target order.
pub fn compare_scenarios<S: Scalar>(scenarios: &[Scenario<S>]) -> Result<ScenarioComparison> {
    let Some(first) = scenarios.first() else {
        return Err(Error::InvalidArgument("comparison needs at least one scenario".into()));
    };
    let codes = &first.prediction.target_codes;
    if let Some(other) = scenarios.iter().find(|s| &s.prediction.target_codes != codes) {
        return Err(Error::InvalidArgument(format!("scenario {} predicts a different target set", other.scenario_id)));
    }
    let probs: Vec<Vec<f64>> = scenarios.iter().map(|s| s.prediction.probabilities.iter().map(|p| p.as_f64()).collect()).collect();
    let ranks: Vec<Vec<usize>> = probs
        .iter()
        .map(|p| {
            let order = crate::train::top_k(p, p.len());
            let mut rank = vec![0; p.len()];
            for (r, &l) in order.iter().enumerate() {
                rank[l] = r + 1;
            }
            rank
        })
        .collect();
    let targets = codes
        .iter()
        .enumerate()
        .map(|(l, code)| TargetComparison {
            code: code.clone(),
            probabilities: probs.iter().map(|p| p[l]).collect(),
            deltas: probs.iter().map(|p| p[l] - probs[0][l]).collect(),
            ranks: ranks.iter().map(|r| r[l]).collect(),
        })
        .collect();
    Ok(ScenarioComparison { scenario_ids: scenarios.iter().map(|s| s.scenario_id.clone()).collect(), targets })
}

/// What the significance matrix averages per patient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeMode {
    /// Model probability of the target.
    #[default]
    Predicted,
    /// 1 if the target is among the patient's labels, else 0.
    Observed,
}

/// Per-patient outcome values, one row per sample and one column per target.
pub fn outcome_values<S: Scalar>(
    mode: OutcomeMode,
    cohort: &[&TrainingSample],
    targets: &[String],
    model: &RetainModel<S>,
    vocabulary: &EventVocabulary,
) -> Result<Vec<Vec<f64>>> {
    match mode {
        OutcomeMode::Observed => {
            Ok(cohort.iter().map(|s| targets.iter().map(|t| if s.labels.contains(t) { 1.0 } else { 0.0 }).collect()).collect())
        }
        OutcomeMode::Predicted => {
            let columns = targets
                .iter()
                .map(|t| model.target_index(t).ok_or_else(|| Error::InvalidArgument(format!("{t} is not a model target"))))
                .collect::<Result<Vec<usize>>>()?;
            cohort
                .iter()
                .map(|s| {
                    let p = model.predict_probabilities(&encode(&s.input, vocabulary)?)?;
                    Ok(columns.iter().map(|&c| p[c].as_f64()).collect())
                })
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceCell {
    pub group: usize,
    pub group_codes: Vec<String>,
    pub target: String,
    pub with: GroupSummary,
    pub without: GroupSummary,
    /// `None` when a side has fewer than two patients.
    pub p_value: Option<f64>,
    pub significant: bool,
    pub insufficient: bool,
}

/// For each treatment group and target, contrasts patients whose history
/// contains any code of the group against those whose history does not.
/// `values[i][l]` is patient `i`'s outcome for `targets[l]`.
pub fn significance_matrix(
    cohort: &[&TrainingSample],
    groups: &[Vec<String>],
    targets: &[String],
    values: &[Vec<f64>],
) -> Result<Vec<SignificanceCell>> {
    if cohort.is_empty() {
        return Err(Error::InvalidArgument("significance matrix needs a non-empty cohort".into()));
    }
    if values.len() != cohort.len() || values.iter().any(|r| r.len() != targets.len()) {
        return Err(Error::Shape { op: "significance_matrix", detail: format!("{} value rows for {} patients", values.len(), cohort.len()) });
    }
    let mut cells = Vec::with_capacity(groups.len() * targets.len());
    for (g, codes) in groups.iter().enumerate() {
        let member: Vec<bool> = cohort.iter().map(|s| codes.iter().any(|c| s.input.contains_code(c))).collect();
        for (l, target) in targets.iter().enumerate() {
            let (mut with, mut without) = (Vec::new(), Vec::new());
            for (row, &m) in values.iter().zip(&member) {
                if m { with.push(row[l]) } else { without.push(row[l]) }
            }
            let test = welch_t_test(&with, &without);
            let p_value = test.map(|t| t.p_value);
            cells.push(SignificanceCell {
                group: g,
                group_codes: codes.clone(),
                target: target.clone(),
                with: summarize(&with),
                without: summarize(&without),
                p_value,
                significant: p_value.is_some_and(|p| p < SIGNIFICANCE_LEVEL),
                insufficient: test.is_none(),
            });
        }
    }
    Ok(cells)
}

/// Average-linkage agglomerative clustering of `codes` by Euclidean
/// distance between their vectors, stopped at `n_groups` clusters.
///
/// Codes are processed in sorted order and ties merge the pair whose
/// smallest codes sort first, so the result does not depend on input
/// order. Groups are sorted internally and by their first code.
pub fn cluster_treatments<S: Scalar>(codes: &[String], vectors: &EventVectorTable<S>, n_groups: usize) -> Result<Vec<Vec<String>>> {
    let mut sorted: Vec<String> = codes.to_vec();
    sorted.sort();
    sorted.dedup();
    if n_groups == 0 || n_groups > sorted.len() {
        return Err(Error::InvalidArgument(format!("n_groups must lie in 1..={}, got {n_groups}", sorted.len())));
    }
    let points = sorted
        .iter()
        .map(|c| vectors.get(c).map(<[S]>::to_vec).ok_or_else(|| Error::UnknownCode(c.clone())))
        .collect::<Result<Vec<_>>>()?;
    let n = sorted.len();
    let mut dist = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            dist[i * n + j] = euclidean(&points[i], &points[j]).as_f64();
        }
    }
    // clusters stay ordered by their smallest member
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    while clusters.len() > n_groups {
        let mut best = (f64::INFINITY, 0, 1);
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let mut total = 0.0;
                for &i in &clusters[a] {
                    for &j in &clusters[b] {
                        total += dist[i * n + j];
                    }
                }
                let d = total / (clusters[a].len() * clusters[b].len()) as f64;
                if d < best.0 {
                    best = (d, a, b);
                }
            }
        }
        let (_, a, b) = best;
        let merged = clusters.remove(b);
        clusters[a].extend(merged);
        clusters[a].sort_unstable();
    }
    Ok(clusters.into_iter().map(|c| c.into_iter().map(|i| sorted[i].clone()).collect()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ehr::{generate_synthetic, EventKind, PlantedRule, Step, SyntheticCohortSpec, VocabEntry};
    use crate::retain::ModelConfig;
    use crate::similarity::VectorProvenance;

    fn table(points: &[(&str, Vec<f64>)]) -> EventVectorTable<f64> {
        let vocab = EventVocabulary::new(
            points
                .iter()
                .map(|(c, _)| VocabEntry { code: c.to_string(), kind: EventKind::Treatment, display_name: c.to_string(), train_count: 0 })
                .collect(),
        )
        .unwrap();
        EventVectorTable::build(VectorProvenance::TrainedStandalone, &vocab, points.iter().map(|(_, p)| p.clone()).collect())
    }

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn clustering_recovers_clumps() {
        let t = table(&[
            ("t1", vec![0.0, 0.0]),
            ("t2", vec![0.1, 0.0]),
            ("t3", vec![10.0, 0.0]),
            ("t4", vec![10.0, 0.1]),
            ("t5", vec![0.0, 0.1]),
        ]);
        let codes = strings(&["t4", "t1", "t3", "t5", "t2"]);
        assert_eq!(cluster_treatments(&codes, &t, 2).unwrap(), vec![strings(&["t1", "t2", "t5"]), strings(&["t3", "t4"])]);
        assert_eq!(cluster_treatments(&codes, &t, 1).unwrap(), vec![strings(&["t1", "t2", "t3", "t4", "t5"])]);
        let singles = cluster_treatments(&codes, &t, 5).unwrap();
        assert_eq!(singles, ["t1", "t2", "t3", "t4", "t5"].iter().map(|c| vec![c.to_string()]).collect::<Vec<_>>());
        assert!(cluster_treatments(&codes, &t, 0).is_err());
        assert!(cluster_treatments(&codes, &t, 6).is_err());
    }

    fn sample(id: &str, codes: &[&str], labels: &[&str]) -> TrainingSample {
        TrainingSample {
            input: EventSequence::new(id, vec![Step::new(0.0, codes.iter().copied())], 1.0).unwrap(),
            labels: labels.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn matrix_marks_one_sided_groups_insufficient() {
        let cohort = [sample("a", &["t1"], &["d"]), sample("b", &["t1", "t2"], &[]), sample("c", &["t1"], &["d"])];
        let refs: Vec<&TrainingSample> = cohort.iter().collect();
        let values = vec![vec![0.9], vec![0.1], vec![0.8]];
        let cells = significance_matrix(&refs, &[strings(&["t1"]), strings(&["t2"])], &strings(&["d"]), &values).unwrap();
        assert_eq!(cells.len(), 2);
        // everyone has t1
        assert!(cells[0].insufficient && !cells[0].significant);
        assert_eq!(cells[0].without.n, 0);
        assert_eq!(cells[0].with.mean, Some(0.6));
        // t2: one patient with, two without
        assert!(cells[1].insufficient);
        assert_eq!(cells[1].with.n, 1);
        assert!(significance_matrix(&[], &[], &[], &[]).is_err());
    }

    #[test]
    fn identical_groups_are_not_significant() {
        let cohort: Vec<TrainingSample> =
            (0..8).map(|i| sample(&format!("p{i}"), if i % 2 == 0 { &["t1"] } else { &["t2"] }, &[])).collect();
        let refs: Vec<&TrainingSample> = cohort.iter().collect();
        let values: Vec<Vec<f64>> = (0..8).map(|i| vec![[0.2, 0.2, 0.7, 0.7][i / 2]]).collect();
        let cells = significance_matrix(&refs, &[strings(&["t1"])], &strings(&["d"]), &values).unwrap();
        assert!(cells[0].p_value.unwrap() > 0.99);
        assert!(!cells[0].significant);
    }

    fn planted() -> (EventVocabulary, Vec<TrainingSample>, RetainModel<f64>) {
        let rule = PlantedRule { trigger: "D002".into(), protective: Some("T000".into()), target: "D000".into(), p_with_trigger: 0.9, p_base: 0.1 };
        let (vocab, samples) =
            generate_synthetic(&SyntheticCohortSpec { n_patients: 30, vocab_sizes: (5, 3), rules: vec![rule], rng_seed: 3 }).unwrap();
        let model = RetainModel::new(ModelConfig { embed_dim: 4, hidden_dim: 3, ..ModelConfig::default() }, &vocab, strings(&["D000", "D001"]))
            .unwrap();
        (vocab, samples, model)
    }

    #[test]
    fn scenario_replay_is_bit_identical() {
        let (vocab, samples, model) = planted();
        let base = &samples[0].input;
        let s0 = Scenario::new("s1", "base", base, &model, &vocab).unwrap();
        let t0 = base.steps[0].timestamp;
        let s1 = s0.apply_edit(EditOp::Add { code: "T001".into(), timestamp: t0 - 3.0 }, &model, &vocab).unwrap();
        let s2 = s1.apply_edit(EditOp::AdjustDuration { step: 1, gap_days: 1.0 }, &model, &vocab).unwrap();
        assert_eq!(s2.edits.len(), 2);
        assert_eq!(s0.edits.len(), 0);
        let text = serde_json::to_string(&s2.edits).unwrap();
        let again = Scenario::from_edits("s1", "base", base, serde_json::from_str(&text).unwrap(), &model, &vocab).unwrap();
        assert_eq!(again, s2);
        assert_eq!(&samples[0].input, base);

        let undo = s1.apply_edit(EditOp::Remove { step: 0, code: "T001".into() }, &model, &vocab).unwrap();
        assert_eq!(undo.edited_sequence, s0.edited_sequence);
        assert_eq!(undo.prediction, s0.prediction);
        assert!(s0.apply_edit(EditOp::Remove { step: 0, code: "nope".into() }, &model, &vocab).is_err());
    }

    #[test]
    fn comparison_ranks_and_deltas() {
        let (vocab, samples, model) = planted();
        let base = Scenario::new("s0", "base", &samples[1].input, &model, &vocab).unwrap();
        let single = compare_scenarios(&[base.clone()]).unwrap();
        assert!(single.targets.iter().all(|t| t.deltas == vec![0.0]));
        let edited = base.apply_edit(EditOp::Add { code: "D003".into(), timestamp: samples[1].input.steps[0].timestamp - 1.0 }, &model, &vocab).unwrap();
        let both = compare_scenarios(&[base.clone(), edited.clone()]).unwrap();
        assert_eq!(both.scenario_ids, strings(&["s0", "s0"]));
        for s in 0..2 {
            let mut ranks: Vec<usize> = both.targets.iter().map(|t| t.ranks[s]).collect();
            ranks.sort_unstable();
            assert_eq!(ranks, vec![1, 2]);
        }
        for t in &both.targets {
            assert_eq!(t.deltas[1], t.probabilities[1] - t.probabilities[0]);
        }
        assert!(compare_scenarios::<f64>(&[]).is_err());
    }

    #[test]
    fn tied_probabilities_rank_in_target_order() {
        let (vocab, samples, mut model) = planted();
        // a zero read-out makes every probability 0.5
        for w in model.output_weight.values_mut().iter_mut().chain(model.output_bias.values_mut()) {
            *w = 0.0;
        }
        let s = Scenario::new("s", "", &samples[0].input, &model, &vocab).unwrap();
        let c = compare_scenarios(&[s]).unwrap();
        assert_eq!(c.targets.iter().map(|t| t.ranks[0]).collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn observed_and_predicted_values() {
        let (vocab, samples, model) = planted();
        let refs: Vec<&TrainingSample> = samples.iter().take(5).collect();
        let observed = outcome_values(OutcomeMode::Observed, &refs, &strings(&["D000"]), &model, &vocab).unwrap();
        for (row, s) in observed.iter().zip(&refs) {
            assert_eq!(row[0], if s.labels.contains("D000") { 1.0 } else { 0.0 });
        }
        let predicted = outcome_values(OutcomeMode::Predicted, &refs, &strings(&["D001"]), &model, &vocab).unwrap();
        let direct = model.predict_probabilities(&encode(&refs[0].input, &vocab).unwrap()).unwrap();
        assert_eq!(predicted[0][0], direct[1]);
        assert!(outcome_values(OutcomeMode::Predicted, &refs, &strings(&["D004"]), &model, &vocab).is_err());
    }
}
