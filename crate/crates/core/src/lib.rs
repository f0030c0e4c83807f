//! Empirical auditing of differentially private mechanisms.
//!
//! The crate turns attack observations (scores collected from a pair of
//! neighboring worlds) into statistically sound lower bounds on privacy
//! parameters, using trade-off functions and Gaussian differential privacy
//! rather than the raw (epsilon, delta) region. It also ships a numerical
//! privacy-loss-distribution accountant, closed-form observation simulators,
//! and a desk-scale DP-SGD trainer with canary hooks and injectable
//! implementation bugs for violation-detection experiments.

pub mod accountant;
pub mod attack;
pub mod dpsgd;
pub mod error;
pub mod estimators;
pub mod io;
pub mod mechanisms;
pub mod numerics;
pub mod tradeoff;

pub use error::{Error, Result};
