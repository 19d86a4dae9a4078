//! Cold-start relevance matching for a new e-commerce market.
//!
//! The crate covers the whole offline pipeline on a synthetic bilingual
//! world: BM25 and embedding retrieval with retrieval-based query
//! augmentation, a twin-tower relevance model with analytic gradients,
//! multi-round self-distillation under label noise, distillation into binary
//! online students, evaluation metrics, and an in-process scoring service.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod error;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod retrieval;
pub mod serving;
pub mod teacher;
pub mod training;

pub use error::{Error, Result};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/world.md")]
    mod world {}
    #[doc = include_str!("../../../book/src/retrieval.md")]
    mod retrieval {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/serving.md")]
    mod serving {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
}
