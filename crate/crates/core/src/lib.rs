//! Entropically regularized Wasserstein unfolding.
//!
//! Recovers a distribution `sigma` on a finite prior support from measured
//! data `nu` distorted by a known discrete Markov kernel `R`, by minimizing
//! an entropic Wasserstein loss between `R sigma` and `nu`. The solver runs
//! generalized Sinkhorn iterations on two scaling vectors, where one half
//! step is a KL projection onto `ker [Id, -R]` computed by Douglas-Rachford
//! splitting. A binned Richardson-Lucy (EM) baseline, synthetic problem
//! generators and exact Wasserstein evaluation are included for comparison.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod entropic_ot;
pub mod error;
pub mod eval;
pub mod klproj;
pub mod measures;
pub mod numerics;
pub mod ot_unfold;
pub mod problems;
pub mod rl_unfold;

pub use error::{Error, Result};
pub use measures::{
    cost_matrix, push_forward, validate_problem, DiscreteMeasure, KernelMatrix, PointSet, UnfoldingProblem,
    ValidationReport,
};
pub use ot_unfold::{solve, IterationRecord, IterationTrace, SolverConfig};
pub use rl_unfold::{rl_solve, RlConfig};
