//! Matrix-variate logistic regression.
//!
//! A binary response is modelled through a rank-one bilinear form of a matrix
//! covariate, `logit P(Y=1|X) = gamma + alpha' X beta`. The crate covers
//! penalized fitting by Fisher scoring, sandwich-covariance inference, the
//! baseline-category multi-class extension, GLRAM dimension reduction, EEG
//! trial ingestion and a reproducible Monte-Carlo study driver.

// `!(x >= 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifact;
pub mod cv;
pub mod data;
pub mod eeg;
pub mod error;
pub mod glram;
pub mod inference;
pub mod linalg;
pub mod model;
pub mod multiclass;
pub mod numeric;
mod par;
pub mod pipeline;
pub mod simulation;
pub mod solver;

pub use data::{MatrixDataset, MultiClassDataset};
pub use error::{MvError, Result};
pub use model::{StandardizationStats, ThetaParam};
pub use solver::{FitConfig, FitResult, FitStatus, PenaltyKind};
