//! Sequence labelling head: reading-order serialization, BiLSTM emissions,
//! linear-chain CRF training and Viterbi decoding, and entity-level scoring.

mod crf;
mod entities;
mod sequence;
mod tags;

pub use crf::{
    crf_loss, crf_score, init_transitions, log_partition, log_partition_f64, strict_mask, viterbi, STRICT_PENALTY,
};
pub use entities::{
    entity_f1, extract_entities, gold_entities, majority_vote, Counts, DocEntities, DocPrediction, Entity,
    EntityScores, MatchKey, SegmentPrediction,
};
pub use sequence::{bilstm_project, init_bilstm, order_document, SeqOrder, Span};
pub use tags::{TagSet, OUTSIDE};

#[cfg(test)]
mod tests;
