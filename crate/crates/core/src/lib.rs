//! Overfitting in high-dimensional Cox regression.
//!
//! The crate covers the full loop: synthetic survival data from a known
//! proportional-hazards model, maximum-likelihood Cox fits with a Breslow
//! baseline, the replica-symmetric variational theory that predicts how the
//! fit is distorted as ζ = p/N grows, and the correction that undoes that
//! distortion.
//!
//! ```no_run
//! use cox_overfit::rs_solver::{solve_for_zeta, SolverOptions};
//!
//! let theory = solve_for_zeta(0.3, 0.5, &SolverOptions::default()).unwrap();
//! println!("cloud slope {} width {}", theory.rho, theory.v);
//! ```

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cox_fit;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod precision;
pub mod rs_solver;
pub mod special;
pub mod survival_data;

pub use error::{Error, Result};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
