//! Multi-target clinical risk prediction from coded event histories, with
//! per-event attribution, similar-patient retrieval and what-if editing.
//!
//! The numerical modules are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the double-precision instantiation used by the
//! service and command line.

pub mod autodiff;
pub mod disease;
pub mod ehr;
pub mod error;
pub mod retain;
pub mod scalar;
pub mod similarity;
pub mod train;
pub mod whatif;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Model = retain::RetainModel<f64>;
pub type Prediction = retain::PredictionResult<f64>;
pub type Encoded = ehr::EncodedSequence<f64>;
pub type VectorTable = similarity::EventVectorTable<f64>;
pub type Scenario = whatif::Scenario<f64>;
pub type TrainResult = train::TrainOutcome<f64>;
