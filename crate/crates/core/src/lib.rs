//! Finite augmentation graphs and the spectral machinery built on them.
//!
//! The crate covers the whole pipeline on exactly enumerable worlds:
//! augmentation distributions to adjacency ([`graph`]), top-k spectral
//! embeddings and low-rank fits ([`spectral`]), the five-term SORL objective
//! ([`sorl`]), K-means measures and the evaluation protocol ([`clustering`]),
//! label perturbation of clustering quality ([`perturbation`]) and the
//! reference worlds used to exercise all of it ([`toy`]).

pub mod clustering;
pub mod error;
pub mod exec;
pub mod export;
pub mod graph;
pub mod linalg;
pub mod perturbation;
pub mod sorl;
pub mod spectral;
pub mod toy;

pub use error::{Error, Result};
pub use exec::Execution;
pub use graph::{AdjacencyBundle, AugmentationWorld, RowPolicy};
pub use spectral::{SpectralDecomposition, SpectralEmbedding};

/// Re-exported so downstream code can name matrix types without a direct dependency.
pub use nalgebra::{DMatrix, DVector};
