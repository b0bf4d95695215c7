//! Event vectors, DTW alignment of step sequences, similar-patient
//! retrieval, key-event queries and staged outcome flows.

mod cohort;
mod dtw;
mod vectors;

pub use cohort::{
    codes_in, full_sequence, matches_key_events, query_by_key_events, similar_patients, split_and_aggregate, split_at_focal_end,
    stage_of, Aggregation, FlowEdge, FlowGraph, FlowNode, Histogram, KeyEvent, SimilarPatient, SimilarityResult, SplitSequence,
    DEFAULT_HISTOGRAM_BINS,
};
pub use dtw::{align, align_vectors, AlignmentResult};
pub use vectors::{cosine, euclidean, step_cost, EventVectorTable, SkipGramConfig, VectorProvenance};
