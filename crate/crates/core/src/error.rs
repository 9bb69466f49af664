use std::path::PathBuf;

use thiserror::Error;

use crate::quadrature::QuadratureRule;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// A node that the external simulator failed to evaluate.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFailure {
    /// 1-based row id of the node.
    pub id: usize,
    pub reason: String,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error(
        "degenerate density: basis function {index} has relative norm {relative_norm:e}; \
         the density does not determine the order-{order} polynomials uniquely"
    )]
    DegenerateDensity {
        index: usize,
        order: u32,
        relative_norm: f64,
    },

    #[error("insufficient moment order: need {needed}, table has {available}")]
    InsufficientMomentOrder { needed: u32, available: u32 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(
        "quadrature construction failed after {attempts} attempts; best rule has {} nodes and residual {:e}",
        best.len(),
        best.residual_l1()
    )]
    ConstructionFailed {
        attempts: usize,
        best: Box<QuadratureRule>,
    },

    #[error("incomplete result batch: missing ids {missing:?}")]
    IncompleteBatch { missing: Vec<usize> },

    #[error("stale results: file was produced for rule {found}, current rule is {expected}")]
    StaleRule { expected: String, found: String },

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("simulator failed on {} node(s): {}", failures.len(), summarize(failures))]
    Simulator { failures: Vec<NodeFailure> },

    #[error("configuration: {0}")]
    Config(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
        if expected == got {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected, got })
        }
    }

    /// Wraps the error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

fn summarize(failures: &[NodeFailure]) -> String {
    failures
        .iter()
        .take(5)
        .map(|f| format!("node {}: {}", f.id, f.reason))
        .collect::<Vec<_>>()
        .join("; ")
}
