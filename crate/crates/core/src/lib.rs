//! Two-stage entity resolution: gather candidates by embedding similarity,
//! then verify them with weighted fuzzy string matching.

pub mod config;
pub mod embedding;
pub mod eval;
pub mod ground_truth;
pub mod index;
pub mod pipeline;
pub mod record;
pub mod verify;

pub use config::PipelineConfig;
pub use embedding::{EmbeddingBatch, EmbeddingProvider, EmbeddingVector};
pub use eval::{DecisionEvalResult, RetrievalEvalResult, RetrievalMethod};
pub use ground_truth::{Corpus, CorpusSpec, GroundTruthPair, NoiseSpec};
pub use index::{CandidateSet, FlatIndex, ForestParams, Neighbor, NeighborIndex, RpForestIndex};
pub use record::{Field, Record, SerializedSentence, Source};
pub use verify::{FieldWeights, MatchDecision, Verifier};
