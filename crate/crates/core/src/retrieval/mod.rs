//! BM25 and embedding retrieval, and retrieval-based query augmentation (RQA).

mod bm25;
mod dense;
mod rqa;

pub use bm25::{
    bm25_search, build_bm25, generate_pseudo_pairs, Bm25Index, PseudoPair, BM25_FORMAT_VERSION,
    DEFAULT_B, DEFAULT_K1,
};
pub use dense::{build_embedding_index, ebr_search, EmbeddingIndex};
pub use rqa::{
    build_rqa, rqa_accuracy, EbrRetriever, Retriever, RetrieverTag, RqaFeature, DEFAULT_RQA_K,
    DEFAULT_RQA_MAX_CHARS, RQA_SEPARATOR,
};
