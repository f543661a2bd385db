//! Guided deferral: fuse verbalised and hidden-state predictions, measure
//! their calibration, route the least confident cases to human reviewers and
//! analyse how reviewers use the guidance they are shown.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what datasets and reports use.

pub mod calibration;
pub mod config;
pub mod dataset;
pub mod deferral;
pub mod evaluation;
pub mod fixtures;
pub mod fusion;
pub mod guardrail;
pub mod guidance;
pub mod hidden;
pub mod model;
pub mod report;
pub mod scalar;
pub mod session;

pub use model::{BinaryLabel, PredictionRecord, Source, Split};
pub use scalar::Scalar;

pub type Probability = model::Probability<f64>;
pub type BlendWeight = fusion::BlendWeight<f64>;
pub type CalibrationConfig = calibration::CalibrationConfig<f64>;
pub type BinningReport = calibration::BinningReport<f64>;
pub type DeferralRanking = deferral::DeferralRanking<f64>;
pub type AccuracyRejectionCurve = deferral::AccuracyRejectionCurve<f64>;
pub type HiddenClassifier = hidden::HiddenClassifier<f64>;
pub type HiddenStateSequence = hidden::HiddenStateSequence<f64>;
