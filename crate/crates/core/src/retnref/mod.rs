//! Retrieve-and-refine composition: retrieval precomputation, input
//! augmentation with a separator, the generation variants and the copy fix.

mod overlap;
mod pipeline;
mod source;
mod variant;

pub use overlap::{copy_fix, word_overlap, Flag};
pub use pipeline::{
    responder_registry, retrieve_top1, GoldResponder, Pipeline, Reply, Responder, ResponderRegistry,
    RetrieverResponder, Trace, Turns,
};
pub use source::{
    attach, load_augmented, precompute_retrievals, save_augmented, source_registry, to_records,
    AugmentedExample, AugmentedRecord, LabelNeighbor, MemNet, Mode, NoRetrieval, RandomCandidate, Retrieval,
    RetrievalEnv, RetrievalSource, TrueLabel,
};
pub use variant::{augment_example, augment_input, Variant, VariantConfig};

/// Retrieval sources, from no retrieval to the gold label.
pub const SOURCES: [&str; 5] = ["none", "random", "memnet", "label_neighbor", "true_label"];
