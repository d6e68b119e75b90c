//! Fine-grained cross-lingual alignment of sentence embeddings.
//!
//! Given row-aligned sentence embeddings for a source and a target language,
//! the crate fits a `d × d` linear map from source to target using one of
//! three constructions:
//!
//! * unconstrained least squares (normal equation, solved either through an
//!   SVD pseudo-inverse or a Cholesky factorization of the Gram matrix),
//! * orthogonal Procrustes (`Ψ = U Vᵀ` from the SVD of `S_Aᵀ S_B`),
//! * a single linear layer trained by mini-batch SGD on mean-squared error.
//!
//! Alignment quality is measured by the average cosine similarity of the
//! translated pairs and, when gold similarity scores are available, by
//! Spearman and Pearson correlation against them.

pub mod embedding;
pub mod error;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod solvers;
pub mod synth;

pub use embedding::{
    mean_pool, stack_pooled, EmbeddingMatrix, ParallelCorpus, Preprocess, TokenEmbeddingMatrix,
};
pub use error::{Error, Result};
pub use metrics::{AlignmentReport, StsGold};
pub use solvers::{Method, ProjectionMatrix, SgdConfig, SgdInit};
pub use synth::{MapKind, SynthSpec};
