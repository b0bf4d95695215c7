use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, RetainModel, PARAM_NAMES};
use crate::autodiff::{Shape, Tensor};
use crate::ehr::EventVocabulary;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Shape,
    pub values: Vec<f64>,
}

/// Versioned on-disk form of a [`RetainModel`]. Values are stored as
/// `f64`, which is exact for both supported scalar types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub vocabulary_hash: String,
    pub target_codes: Vec<String>,
    pub hyper: ModelConfig,
    pub params: Vec<ParamRecord>,
}

impl Checkpoint {
    pub fn from_model<S: Scalar>(model: &RetainModel<S>) -> Self {
        let params = PARAM_NAMES
            .iter()
            .zip(model.params())
            .map(|(name, t)| ParamRecord {
                name: name.to_string(),
                shape: t.shape(),
                values: t.values().iter().map(|v| v.as_f64()).collect(),
            })
            .collect();
        Self {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            vocabulary_hash: model.vocabulary_hash.clone(),
            target_codes: model.target_codes.clone(),
            hyper: model.config,
            params,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Version {
            schema_version: u32,
        }
        let version: Version = serde_json::from_str(text)?;
        if version.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::SchemaVersion { found: version.schema_version, expected: CHECKPOINT_SCHEMA_VERSION });
        }
        Ok(serde_json::from_str(text)?)
    }

    /// Rebuilds the model, validating every parameter name and shape.
    pub fn into_model<S: Scalar>(self) -> Result<RetainModel<S>> {
        if self.params.len() != PARAM_NAMES.len() {
            return Err(Error::Parse(format!("checkpoint has {} parameters, expected {}", self.params.len(), PARAM_NAMES.len())));
        }
        let mut tensors = Vec::with_capacity(self.params.len());
        for (record, expected) in self.params.into_iter().zip(PARAM_NAMES) {
            if record.name != expected {
                return Err(Error::Parse(format!("parameter {:?} where {expected:?} expected", record.name)));
            }
            let values = record.values.into_iter().map(S::lit).collect();
            tensors.push(Tensor::new(record.shape, values)?);
        }
        let (m, h, l) = (self.hyper.embed_dim, self.hyper.hidden_dim, self.target_codes.len());
        let v = match tensors[0].shape() {
            Shape::Matrix(rows, v) if rows == m => v,
            other => return Err(Error::Parse(format!("embedding shape {other:?} does not match embed_dim {m}"))),
        };
        let expected_shapes = [
            Shape::Matrix(m, v),
            Shape::Matrix(3 * h, m + 1),
            Shape::Matrix(3 * h, h),
            Shape::Vector(3 * h),
            Shape::Vector(3 * h),
            Shape::Vector(h),
            Shape::Vector(1),
            Shape::Matrix(3 * h, m + 1),
            Shape::Matrix(3 * h, h),
            Shape::Vector(3 * h),
            Shape::Vector(3 * h),
            Shape::Matrix(m, h),
            Shape::Vector(m),
            Shape::Matrix(l, m),
            Shape::Vector(l),
        ];
        for ((t, want), name) in tensors.iter().zip(expected_shapes).zip(PARAM_NAMES) {
            if t.shape() != want {
                return Err(Error::Parse(format!("parameter {name} has shape {:?}, expected {want:?}", t.shape())));
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("15 tensors");
        Ok(RetainModel {
            config: self.hyper,
            vocabulary_hash: self.vocabulary_hash,
            target_codes: self.target_codes,
            embedding: next(),
            alpha_rnn: super::GruParams { input_weights: next(), recurrent_weights: next(), input_bias: next(), recurrent_bias: next() },
            alpha_weight: next(),
            alpha_bias: next(),
            beta_rnn: super::GruParams { input_weights: next(), recurrent_weights: next(), input_bias: next(), recurrent_bias: next() },
            beta_weight: next(),
            beta_bias: next(),
            output_weight: next(),
            output_bias: next(),
        })
    }
}

impl<S: Scalar> RetainModel<S> {
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, Checkpoint::from_model(self).to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_json(&fs::read_to_string(path)?)?.into_model()
    }

    /// Loads a checkpoint and refuses it unless it was trained on `vocabulary`.
    pub fn load_for(path: &Path, vocabulary: &EventVocabulary) -> Result<Self> {
        let model = Self::load(path)?;
        let expected = vocabulary.fingerprint();
        if model.vocabulary_hash != expected {
            return Err(Error::VocabularyMismatch { found: model.vocabulary_hash, expected });
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::vocab;
    use super::*;
    use crate::ehr::{EncodedSequence, EncodedStep, VocabEntry};

    fn fixture() -> (EventVocabulary, RetainModel<f64>) {
        let v = vocab(4, 3);
        let cfg = ModelConfig { embed_dim: 5, hidden_dim: 4, init_seed: 77, ..ModelConfig::default() };
        let m = RetainModel::new(cfg, &v, vec!["D1".into(), "D3".into()]).unwrap();
        (v, m)
    }

    #[test]
    fn save_load_is_bit_identical() {
        let (v, mut m) = fixture();
        // values that do not have short decimal forms
        for (i, x) in m.output_bias.values_mut().iter_mut().enumerate() {
            *x = (i as f64 + 1.0) / 3.0 + 1e-17;
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        m.save(&path).unwrap();
        let back: RetainModel<f64> = RetainModel::load_for(&path, &v).unwrap();
        for (a, b) in m.params().iter().zip(back.params()) {
            let bits_a: Vec<u64> = a.values().iter().map(|x| x.to_bits()).collect();
            let bits_b: Vec<u64> = b.values().iter().map(|x| x.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
        let seq = EncodedSequence {
            vocab_size: 7,
            steps: vec![EncodedStep { active: vec![2, 5], multi_hot: vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0], duration: 0.3 }],
        };
        let p1 = m.forward(&seq).unwrap();
        let p2 = back.forward(&seq).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn truncated_file_fails_cleanly() {
        let (_, m) = fixture();
        let text = Checkpoint::from_model(&m).to_json().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(RetainModel::<f64>::load(&path).is_err());
    }

    #[test]
    fn different_vocabulary_is_refused() {
        let (v, m) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        m.save(&path).unwrap();
        let mut entries: Vec<VocabEntry> = v.entries().to_vec();
        entries[2].code = "D2x".into();
        let other = EventVocabulary::new(entries).unwrap();
        let err = RetainModel::<f64>::load_for(&path, &other).unwrap_err();
        assert!(matches!(err, Error::VocabularyMismatch { .. }), "{err}");
        assert!(err.to_string().contains(&v.fingerprint()));
    }

    #[test]
    fn schema_version_mismatch_names_both() {
        let (_, m) = fixture();
        let mut cp = Checkpoint::from_model(&m);
        cp.schema_version = 7;
        let err = Checkpoint::from_json(&cp.to_json().unwrap()).unwrap_err();
        let text = err.to_string();
        assert!(text.contains('7') && text.contains('1'), "{text}");
    }

    #[test]
    fn f32_round_trip() {
        let v = vocab(2, 2);
        let m: RetainModel<f32> =
            RetainModel::new(ModelConfig { embed_dim: 3, hidden_dim: 2, ..ModelConfig::default() }, &v, vec!["D0".into()]).unwrap();
        let back: RetainModel<f32> = Checkpoint::from_model(&m).into_model().unwrap();
        assert_eq!(m, back);
    }
}
