//! Embedding retriever: context and candidate encoders matched by cosine
//! similarity, an exact-search candidate index, and label reranking.

mod index;
mod model;
mod train;

pub use index::{rerank_by_label, Candidate, CandidateIndex, Hit};
pub use model::{attention_weights, score, RetrieverModel};
pub use train::{batch_loss, train_retriever, RetrieverConfig};
