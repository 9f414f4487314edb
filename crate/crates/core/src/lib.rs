//! Moment-based estimation of mixtures of linear dynamical systems.
//!
//! Unlabeled input/output trajectories are reduced to a mixture of linear
//! regressions over stacked, subsampled inputs. Its second and third
//! moments are whitened and decomposed with the robust tensor power method,
//! then mapped back to truncated impulse responses (Markov parameters).
//!
//! Module map:
//! - [`tensor`]: symmetric third-order tensors, power method.
//! - [`lds`]: state-space systems, impulse responses, simulation.
//! - [`mlr`]: mixture-of-linear-regressions moment estimator.
//! - [`pipeline`]: trajectory stacking, end-to-end fit, OLS baseline, Ho-Kalman.
//! - [`eval`]: permutation-matched metrics and sweeps.
//! - [`io`]: versioned text formats for mixtures, datasets and estimates.

pub mod error;
pub mod eval;
pub mod io;
pub mod lds;
pub mod mlr;
pub mod pipeline;
pub mod seed;
pub mod tensor;

pub use error::{MldsError, Result};
