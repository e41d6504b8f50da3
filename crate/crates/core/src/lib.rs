//! Risk estimation for recovery problems under exponential-family noise.
//!
//! The crate provides:
//!
//! - [`expfam`]: natural exponential families (Gaussian, Gamma, Poisson,
//!   Binomial, negative binomial) with links, log-partitions, sampling and
//!   KL divergences,
//! - [`predictors`]: denoisers and regression predictors (circulant Gaussian
//!   filter, non-local means, orthogonal-design LASSO) with Jacobian-vector
//!   products and exact downshift evaluation,
//! - [`jacobian`]: Monte-Carlo trace and downshift approximations,
//! - [`estimators`]: SURE, GSURE, PURE, GPURE, SUKLS, PUKLA and DKLA with
//!   explicit additive-constant conventions,
//! - [`oracles`]: ground-truth losses and diagnostics available when the
//!   clean signal is known,
//! - [`harness`]: synthetic signals, parameter sweeps and persistence.

pub mod error;
pub mod estimators;
pub mod expfam;
pub mod harness;
pub mod jacobian;
pub mod oracles;
pub mod predictors;
pub mod seeding;
pub mod sums;

pub use error::{Error, Result};
pub use expfam::{FamilyKind, FamilyModel, NaturalPoint};
