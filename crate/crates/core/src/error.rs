use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Which of the three class-wise bound assumptions failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Assumption {
    /// Spectral gap ratio λ_k / λ_{k+1} below the threshold.
    Gap,
    /// Label vector not in the span of the top-k eigenvectors.
    Span,
    /// Label vector not constant within a class.
    ClassConstancy,
}

impl std::fmt::Display for Assumption {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Assumption::Gap => "spectral gap",
            Assumption::Span => "label vector in top-k span",
            Assumption::ClassConstancy => "label vector constant per class",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid world: {0}")]
    InvalidWorld(String),

    #[error("class {0} is not a labeled class")]
    UnknownClass(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("vertices with zero degree: {vertices:?}")]
    ZeroDegree { vertices: Vec<usize> },

    #[error("degenerate spectral gap at k={k}: λ_k={upper}, λ_(k+1)={lower}")]
    DegenerateGap { k: usize, upper: f64, lower: f64 },

    #[error("retained eigenvalue {index} is negative ({value})")]
    NegativeEigenvalue { index: usize, value: f64 },

    #[error("optimizer did not converge after {iterations} iterations (loss {loss}, gradient norm {grad_norm})")]
    NonConvergence {
        iterations: usize,
        loss: f64,
        grad_norm: f64,
    },

    #[error("degenerate normalizer: Tr(D)^2 - Tr(D^2) = {0}")]
    DegenerateNormalizer(f64),

    #[error("degenerate inter-class scatter ({0})")]
    DegenerateInter(f64),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("k-means left a cluster empty in all {restarts} restarts")]
    EmptyCluster { restarts: usize },

    #[error("repeated eigenvalues at index pairs {pairs:?}")]
    RepeatedEigenvalues { pairs: Vec<(usize, usize)> },

    #[error("base adjacency is not regular (relative degree spread {spread})")]
    IrregularBase { spread: f64 },

    #[error("assumption violated ({assumption}): measured {measured}, threshold {threshold}")]
    AssumptionViolated {
        assumption: Assumption,
        measured: f64,
        threshold: f64,
    },

    #[error("parameters outside the closed-form regime: {0}")]
    Regime(String),

    #[error("near-degenerate parameters: {0}")]
    NearDegenerate(String),

    #[error("cannot normalize augmentation row {0}: all entries are zero")]
    ZeroRow(usize),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// True for errors caused by bad input data rather than numerics.
    pub fn is_input(&self) -> bool {
        matches!(
            self,
            Error::InvalidWorld(_)
                | Error::UnknownClass(_)
                | Error::DimensionMismatch(_)
                | Error::InvalidArgument(_)
                | Error::InvalidPartition(_)
                | Error::Regime(_)
                | Error::Json { .. }
        )
    }
}
