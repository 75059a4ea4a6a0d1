//! Long-form factuality evaluation: sentence segmentation, windowed claim
//! extraction, search-backed verification and F1@K scoring.

pub mod analyzer;
pub mod backend;
pub mod corpus;
pub mod exec;
pub mod extractor;
pub mod pipeline;
pub mod retriever;
pub mod scorer;
pub mod segmenter;
pub mod verifier;
