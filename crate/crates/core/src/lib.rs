//! Relevance-based word embeddings.
//!
//! Word vectors are learned from query → pseudo-relevance-feedback signals
//! rather than term co-occurrence. The crate covers the whole offline
//! pipeline: indexing a collection, query-likelihood retrieval, relevance
//! model estimation, the two embedding trainers (relevance likelihood
//! maximization with a hierarchical softmax, and relevance posterior
//! estimation with noise-contrastive sampling), and the query expansion and
//! query classification evaluations.

pub mod error;
pub mod eval;
pub mod expansion;
pub mod huffman;
pub mod index;
pub mod inference;
pub mod manifest;
pub mod model;
pub mod pipeline;
pub mod classify;
pub mod relevance;
pub mod retrieval;
pub mod sampling;
pub mod synthetic;
pub mod text;
pub mod train;

pub use error::{Error, Result};
pub use index::{build_index, CorpusIndex, DocId, IndexOptions, TermId, Vocabulary};
pub use model::{EmbeddingModel, ModelKind};
pub use text::{tokenize, Stopwords};
