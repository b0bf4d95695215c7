//! Synthetic cohorts with planted trigger/protective/target structure.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EventKind, EventSequence, EventVocabulary, Step, TrainingSample, VocabEntry, DEFAULT_WINDOW_DAYS};
use crate::error::{Error, Result};

/// `P(target | trigger present, protective absent) = p_with_trigger`;
/// a present protective code halves the excess over `p_base`; without the
/// trigger the target occurs at `p_base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedRule {
    pub trigger: String,
    #[serde(default)]
    pub protective: Option<String>,
    pub target: String,
    pub p_with_trigger: f64,
    pub p_base: f64,
}

impl PlantedRule {
    /// Label probability given which rule codes are present.
    pub fn probability(&self, trigger: bool, protective: bool) -> f64 {
        match (trigger, protective) {
            (false, _) => self.p_base,
            (true, false) => self.p_with_trigger,
            (true, true) => self.p_base + (self.p_with_trigger - self.p_base) / 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCohortSpec {
    pub n_patients: usize,
    /// `(n_diagnoses, n_treatments)`.
    pub vocab_sizes: (usize, usize),
    pub rules: Vec<PlantedRule>,
    pub rng_seed: u64,
}

pub fn diagnosis_code(i: usize) -> String {
    format!("D{i:03}")
}

pub fn treatment_code(i: usize) -> String {
    format!("T{i:03}")
}

const MIN_STEPS: usize = 2;
const MAX_STEPS: usize = 6;
const MAX_NOISE_PER_STEP: usize = 2;
const PLANT_PROBABILITY: f64 = 0.5;

/// Generates one windowed sample per patient.
///
/// Each sample has 2 to 6 steps at distinct whole-day offsets inside a
/// 183-day window. Steps carry one or two background codes drawn from the
/// codes no rule mentions as trigger or protective. Every trigger and
/// protective code is then planted independently with probability 1/2 at a
/// random step. Labels are drawn per rule target; when several rules share
/// a target the highest probability applies.
pub fn generate_synthetic(spec: &SyntheticCohortSpec) -> Result<(EventVocabulary, Vec<TrainingSample>)> {
    let (n_diag, n_treat) = spec.vocab_sizes;
    let mut entries: Vec<VocabEntry> = (0..n_diag)
        .map(|i| VocabEntry {
            code: diagnosis_code(i),
            kind: EventKind::Diagnosis,
            display_name: format!("Diagnosis {i}"),
            train_count: 0,
        })
        .collect();
    entries.extend((0..n_treat).map(|i| VocabEntry {
        code: treatment_code(i),
        kind: EventKind::Treatment,
        display_name: format!("Treatment {i}"),
        train_count: 0,
    }));
    let mut vocabulary = EventVocabulary::new(entries)?;
    validate(spec, &vocabulary)?;

    let planted: BTreeSet<&str> = spec
        .rules
        .iter()
        .flat_map(|r| std::iter::once(r.trigger.as_str()).chain(r.protective.as_deref()))
        .collect();
    let noise: Vec<&str> = vocabulary.entries().iter().map(|e| e.code.as_str()).filter(|c| !planted.contains(c)).collect();
    if noise.is_empty() {
        return Err(Error::InvalidSpec("every code is a trigger or protective code; no background codes remain".into()));
    }
    let mut targets: BTreeMap<&str, Vec<&PlantedRule>> = BTreeMap::new();
    for rule in &spec.rules {
        targets.entry(rule.target.as_str()).or_default().push(rule);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let width = DEFAULT_WINDOW_DAYS as usize;
    let mut samples = Vec::with_capacity(spec.n_patients);
    for p in 0..spec.n_patients {
        let prediction_time = 400.0 + rng.gen_range(0..1000) as f64;
        let n_steps = rng.gen_range(MIN_STEPS..=MAX_STEPS);
        let mut offsets: Vec<usize> = sample_indices(&mut rng, width, n_steps).into_iter().map(|o| o + 1).collect();
        offsets.sort_unstable_by(|a, b| b.cmp(a));
        let mut steps: Vec<Step> = offsets
            .into_iter()
            .map(|o| {
                let k = rng.gen_range(1..=MAX_NOISE_PER_STEP);
                let codes = (0..k).map(|_| noise[rng.gen_range(0..noise.len())].to_string()).collect();
                Step { timestamp: prediction_time - o as f64, codes }
            })
            .collect();
        let mut present = BTreeSet::new();
        for &code in &planted {
            if rng.gen_bool(PLANT_PROBABILITY) {
                let at = rng.gen_range(0..steps.len());
                steps[at].codes.insert(code.to_string());
                present.insert(code);
            }
        }
        let mut labels = BTreeSet::new();
        for (&target, rules) in &targets {
            let prob = rules
                .iter()
                .map(|r| r.probability(present.contains(r.trigger.as_str()), r.protective.as_deref().is_some_and(|c| present.contains(c))))
                .fold(0.0, f64::max);
            if rng.gen_bool(prob) {
                labels.insert(target.to_string());
            }
        }
        let input = EventSequence { patient_id: format!("P{p:06}"), steps, prediction_time };
        samples.push(TrainingSample { input, labels });
    }
    vocabulary.recount(&samples);
    Ok((vocabulary, samples))
}

fn validate(spec: &SyntheticCohortSpec, vocabulary: &EventVocabulary) -> Result<()> {
    for (i, rule) in spec.rules.iter().enumerate() {
        let bad = |what: String| Err(Error::InvalidSpec(format!("rule {i}: {what}")));
        for code in std::iter::once(&rule.trigger).chain(rule.protective.as_ref()).chain(std::iter::once(&rule.target)) {
            if !vocabulary.contains(code) {
                return bad(format!("code {code:?} is outside the generated vocabulary"));
            }
        }
        if vocabulary.kind_of(&rule.target) != Some(EventKind::Diagnosis) {
            return bad(format!("target {:?} is not a diagnosis code", rule.target));
        }
        if rule.trigger == rule.target || rule.protective.as_ref() == Some(&rule.target) || rule.protective.as_ref() == Some(&rule.trigger) {
            return bad("trigger, protective and target codes must differ".into());
        }
        for p in [rule.p_with_trigger, rule.p_base] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("probability {p} outside [0, 1]"));
            }
        }
    }
    let triggers: BTreeSet<&str> = spec.rules.iter().flat_map(|r| std::iter::once(r.trigger.as_str()).chain(r.protective.as_deref())).collect();
    if let Some(t) = spec.rules.iter().find(|r| triggers.contains(r.target.as_str())) {
        return Err(Error::InvalidSpec(format!("target {:?} is also planted as a trigger or protective code", t.target)));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize, rules: Vec<PlantedRule>) -> SyntheticCohortSpec {
        SyntheticCohortSpec { n_patients: n, vocab_sizes: (10, 8), rules, rng_seed: 11 }
    }

    fn rule(trigger: &str, protective: Option<&str>, target: &str, p: f64, base: f64) -> PlantedRule {
        PlantedRule { trigger: trigger.into(), protective: protective.map(Into::into), target: target.into(), p_with_trigger: p, p_base: base }
    }

    #[test]
    fn deterministic_for_a_seed() {
        let s = spec(200, vec![rule("T000", Some("T001"), "D000", 0.9, 0.1)]);
        let a = generate_synthetic(&s).unwrap();
        let b = generate_synthetic(&s).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        for sample in &a.1 {
            sample.input.validate().unwrap();
            assert!(sample.input.steps[0].timestamp >= sample.input.prediction_time - 183.0);
        }
    }

    #[test]
    fn zero_patients_still_has_vocabulary() {
        let (vocab, samples) = generate_synthetic(&spec(0, vec![])).unwrap();
        assert!(samples.is_empty());
        assert_eq!(vocab.len(), 18);
    }

    #[test]
    fn rule_codes_must_exist() {
        assert!(generate_synthetic(&spec(5, vec![rule("T099", None, "D000", 0.9, 0.1)])).is_err());
        assert!(generate_synthetic(&spec(5, vec![rule("T000", None, "T001", 0.9, 0.1)])).is_err());
        assert!(generate_synthetic(&spec(5, vec![rule("T000", None, "D000", 1.5, 0.1)])).is_err());
    }

    #[test]
    fn planted_rate_within_tolerance() {
        let s = spec(10_000, vec![rule("T000", None, "D000", 0.9, 0.1)]);
        let (_, samples) = generate_synthetic(&s).unwrap();
        let (mut with, mut hit, mut without, mut base_hit) = (0.0, 0.0, 0.0, 0.0);
        for sm in &samples {
            let y = sm.labels.contains("D000") as u8 as f64;
            if sm.input.contains_code("T000") {
                with += 1.0;
                hit += y;
            } else {
                without += 1.0;
                base_hit += y;
            }
        }
        assert!((hit / with - 0.9).abs() < 0.02, "{}", hit / with);
        assert!((base_hit / without - 0.1).abs() < 0.02, "{}", base_hit / without);
    }

    #[test]
    fn protective_halves_excess_risk() {
        let s = spec(10_000, vec![rule("T000", Some("T001"), "D000", 0.9, 0.1)]);
        let (_, samples) = generate_synthetic(&s).unwrap();
        let (mut n, mut k) = (0.0, 0.0);
        for sm in samples.iter().filter(|s| s.input.contains_code("T000") && s.input.contains_code("T001")) {
            n += 1.0;
            k += sm.labels.contains("D000") as u8 as f64;
        }
        // about 2,500 patients: 3 sigma of a rate near 0.5 is about 0.03
        assert!((k / n - 0.5).abs() < 0.03, "{}", k / n);
    }
}
