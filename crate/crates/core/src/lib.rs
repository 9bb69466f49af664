//! Stochastic collocation for correlated, non-Gaussian parameters.
//!
//! The pipeline has four stages:
//!
//! 1. [`density`]: a Gaussian-mixture joint density with exact raw moments.
//! 2. [`basis`]: polynomials orthonormal under that density, built by
//!    Gram-Schmidt over graded-lex monomials.
//! 3. [`quadrature`]: a small node/weight rule that integrates all basis
//!    functions up to twice the expansion order, found by nonlinear least
//!    squares.
//! 4. [`collocation`]: projection of simulator outputs at the nodes onto the
//!    basis, giving a surrogate with closed-form mean and variance.
//!
//! [`simbridge`] moves nodes and results between this crate and external
//! simulators; [`pipeline`] wires everything to a configuration file.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod cluster;
pub mod collocation;
pub mod density;
pub mod error;
pub mod multi_index;
pub mod nnls;
pub mod pipeline;
pub mod quadrature;
pub mod simbridge;
pub mod synthetic;

pub use basis::BasisSet;
pub use collocation::{ErrorCertificate, SurrogateModel};
pub use density::{GaussianMixture, MixtureSpec, MomentTable};
pub use error::{Error, Result};
pub use multi_index::{num_terms, MultiIndexSet};
pub use quadrature::{QuadratureRule, SolverConfig};
