//! Consistent navigational behavior generation under setbacks.
//!
//! A linear model maps a history of multi-modal terrain features to expected
//! behaviors (`W`) and a history of behavior differences to corrective offsets
//! (`U`). Training minimizes a least-squares loss with a modality group norm on
//! `W` and a temporal group norm on `U`, solved by an alternating reweighted
//! scheme. At run time the learned offsets compensate for setbacks such as
//! wheel slip or extra payload.
//!
//! Modules, roughly in dependency order: [`model`], [`norms`], [`solver`],
//! [`oracle`], [`predictor`], [`simulator`], [`metrics`], [`io`]; [`synthetic`]
//! draws random instances for tests and benchmarks.

// Negated comparisons are how NaN gets rejected in validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod norms;
pub mod oracle;
pub mod predictor;
pub mod simulator;
pub mod solver;
pub mod synthetic;

pub use error::{Error, Result};
pub use model::{FeatureInstance, ModalityLayout, TrainingSet, WeightU, WeightW};
pub use norms::ObjectiveBreakdown;
pub use solver::{fit, FitOptions, FitResult};
