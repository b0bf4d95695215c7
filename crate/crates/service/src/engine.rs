use std::collections::HashMap;
use std::path::Path;

use clinrisk_core::ehr::{io::read_cohort, EventVocabulary, TrainingSample};
use clinrisk_core::{Model, Result, VectorTable};

/// The immutable snapshot a running service answers from.
#[derive(Debug)]
pub struct Engine {
    pub vocabulary: EventVocabulary,
    /// One sample per patient, sorted by patient id.
    pub samples: Vec<TrainingSample>,
    pub model: Model,
    pub vectors: VectorTable,
    index: HashMap<String, usize>,
}

impl Engine {
    /// Keeps each patient's latest sample (largest prediction time) so a
    /// patient id names exactly one sequence.
    pub fn new(vocabulary: EventVocabulary, samples: Vec<TrainingSample>, model: Model) -> Result<Self> {
        let vectors = VectorTable::from_model(&model, &vocabulary)?;
        let mut latest: HashMap<String, TrainingSample> = HashMap::new();
        for s in samples {
            match latest.get(s.patient_id()) {
                Some(kept) if kept.input.prediction_time >= s.input.prediction_time => {}
                _ => {
                    latest.insert(s.patient_id().to_string(), s);
                }
            }
        }
        let mut samples: Vec<TrainingSample> = latest.into_values().collect();
        samples.sort_by(|a, b| a.patient_id().cmp(b.patient_id()));
        let index = samples.iter().enumerate().map(|(i, s)| (s.patient_id().to_string(), i)).collect();
        Ok(Self { vocabulary, samples, model, vectors, index })
    }

    pub fn load(cohort: &Path, checkpoint: &Path) -> Result<Self> {
        let (vocabulary, samples) = read_cohort(cohort)?;
        let model = Model::load_for(checkpoint, &vocabulary)?;
        Self::new(vocabulary, samples, model)
    }

    pub fn patient(&self, id: &str) -> Option<&TrainingSample> {
        self.index.get(id).map(|&i| &self.samples[i])
    }
}
