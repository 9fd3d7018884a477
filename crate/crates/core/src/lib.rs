//! Dynamic origin-destination estimation for entry-only transit systems.
//!
//! Given entries per station and time interval, the estimators distribute
//! each origin's trips over the other stations by maximising the entropy of
//! the OD tensor under linear constraints:
//!
//! - entry rows only: the uniform [basic method](estimators::estimate_bm);
//! - plus daily symmetry (each station's exits over the day equal its
//!   entries): [`estimators::estimate_sa_balanced`], with the textbook closed
//!   form kept as [`estimators::estimate_sa_closed`];
//! - plus a reported person-km total: the logit destination-choice model
//!   [`estimators::estimate_ad`], calibrated by [`estimators::calibrate_ad`].
//!
//! [`oracle`] holds the entropy objective, residual checks and an independent
//! reference solver; [`stats`] the travel statistics; [`synth`] a generator of
//! scenarios with known ground truth.
//!
//! All numeric types are generic over [`Scalar`] (`f32`/`f64`); the aliases
//! below fix the common double-precision instantiations.

pub mod error;
pub mod estimators;
pub mod io;
pub mod model;
pub mod oracle;
pub mod scalar;
pub mod stats;
pub mod synth;

pub use error::{OdError, Result};
pub use estimators::Method;
pub use scalar::Scalar;

pub type EntryMatrixF64 = model::EntryMatrix<f64>;
pub type DistanceMatrixF64 = model::DistanceMatrix<f64>;
pub type ScenarioF64 = model::Scenario<f64>;
pub type OdTensorF64 = model::OdTensor<f64>;
pub type UtilityParamsF64 = estimators::UtilityParams<f64>;
pub type CalibrationTargetF64 = estimators::CalibrationTarget<f64>;
pub type CalibrationResultF64 = estimators::CalibrationResult<f64>;
pub type TravelStatsF64 = stats::TravelStats<f64>;
pub type SynthConfigF64 = synth::SynthConfig<f64>;

pub type EntryMatrixF32 = model::EntryMatrix<f32>;
pub type ScenarioF32 = model::Scenario<f32>;
pub type OdTensorF32 = model::OdTensor<f32>;
