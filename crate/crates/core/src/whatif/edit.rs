use serde::{Deserialize, Serialize};

use crate::ehr::{EventSequence, EventVocabulary, Step};
use crate::error::{Error, Result};

/// One counterfactual change to a sequence. Step indices refer to the
/// sequence the op is applied to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EditOp {
    Add { code: String, timestamp: f64 },
    Remove { step: usize, code: String },
    /// Takes `code` out of `from_step` and places it at `to_timestamp`,
    /// merging into a step already there.
    Move { from_step: usize, code: String, to_timestamp: f64 },
    /// Sets the gap before `step` to `gap_days`, shifting that step and
    /// every later one by the same amount.
    AdjustDuration { step: usize, gap_days: f64 },
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidEdit(msg.into())
}

fn check_step(seq: &EventSequence, step: usize) -> Result<()> {
    if step >= seq.steps.len() {
        return Err(invalid(format!("step {step} does not exist; the sequence has {} steps", seq.steps.len())));
    }
    Ok(())
}

fn insert_code(steps: &mut Vec<Step>, code: &str, timestamp: f64) {
    match steps.binary_search_by(|s| s.timestamp.total_cmp(&timestamp)) {
        Ok(i) => {
            steps[i].codes.insert(code.to_string());
        }
        Err(i) => steps.insert(i, Step::new(timestamp, [code])),
    }
}

fn remove_code(steps: &mut Vec<Step>, step: usize, code: &str) -> Result<()> {
    if !steps[step].codes.remove(code) {
        return Err(invalid(format!("code {code:?} is not present at step {step}")));
    }
    if steps[step].codes.is_empty() {
        steps.remove(step);
    }
    Ok(())
}

fn check_timestamp(seq: &EventSequence, timestamp: f64) -> Result<()> {
    if !timestamp.is_finite() {
        return Err(invalid(format!("timestamp {timestamp} is not finite")));
    }
    if timestamp >= seq.prediction_time {
        return Err(invalid(format!("timestamp {timestamp} is not before the prediction time {}", seq.prediction_time)));
    }
    Ok(())
}

impl EditOp {
    /// Returns the edited copy; `seq` is left untouched.
    pub fn apply(&self, seq: &EventSequence, vocabulary: &EventVocabulary) -> Result<EventSequence> {
        let mut steps = seq.steps.clone();
        match self {
            EditOp::Add { code, timestamp } => {
                if !vocabulary.contains(code) {
                    return Err(invalid(format!("code {code:?} is not in the vocabulary")));
                }
                check_timestamp(seq, *timestamp)?;
                if steps.iter().any(|s| s.timestamp == *timestamp && s.codes.contains(code)) {
                    return Err(invalid(format!("code {code:?} is already present at t={timestamp}")));
                }
                insert_code(&mut steps, code, *timestamp);
            }
            EditOp::Remove { step, code } => {
                check_step(seq, *step)?;
                remove_code(&mut steps, *step, code)?;
            }
            EditOp::Move { from_step, code, to_timestamp } => {
                check_step(seq, *from_step)?;
                check_timestamp(seq, *to_timestamp)?;
                remove_code(&mut steps, *from_step, code)?;
                insert_code(&mut steps, code, *to_timestamp);
            }
            EditOp::AdjustDuration { step, gap_days } => {
                check_step(seq, *step)?;
                if *step == 0 {
                    return Err(invalid("step 0 has no preceding gap"));
                }
                if !(*gap_days > 0.0 && gap_days.is_finite()) {
                    return Err(invalid(format!("gap must be positive, got {gap_days}")));
                }
                let shift = gap_days - (steps[*step].timestamp - steps[step - 1].timestamp);
                for s in &mut steps[*step..] {
                    s.timestamp += shift;
                }
                let last = steps.last().expect("non-empty").timestamp;
                if last >= seq.prediction_time {
                    return Err(invalid(format!("the shift moves the last step to t={last}, not before the prediction time {}", seq.prediction_time)));
                }
            }
        }
        if steps.is_empty() {
            return Err(invalid("the edit would leave the sequence without any event"));
        }
        let edited = EventSequence { patient_id: seq.patient_id.clone(), steps, prediction_time: seq.prediction_time };
        edited.validate()?;
        Ok(edited)
    }
}

/// Applies `edits` in order to a copy of `base`.
pub fn replay(base: &EventSequence, edits: &[EditOp], vocabulary: &EventVocabulary) -> Result<EventSequence> {
    edits.iter().try_fold(base.clone(), |seq, op| op.apply(&seq, vocabulary))
}
