//! Shared domain types: probabilities, binary labels, prediction sources and
//! the per-case record that flows through every other module.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::fusion::{self, BlendWeight};
use crate::guidance::GuidanceDocument;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("probability must be a finite value in [0, 1], got {0}")]
pub struct ProbabilityError(pub f64);

/// A value in `[0, 1]`. NaN is rejected at construction.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct Probability<T: Scalar = f64>(T);

impl<T: Scalar> Probability<T> {
    pub fn new(value: T) -> Result<Self, ProbabilityError> {
        if value.is_nan() || value < T::zero() || value > T::one() {
            return Err(ProbabilityError(value.to_f64_lossy()));
        }
        Ok(Self(value))
    }

    /// Clamps into `[0, 1]`; NaN maps to 0.
    pub fn saturating(value: T) -> Self {
        if value.is_nan() {
            Self(T::zero())
        } else {
            Self(value.max(T::zero()).min(T::one()))
        }
    }

    pub fn half() -> Self {
        Self(T::lit(0.5))
    }

    #[inline]
    pub fn value(self) -> T {
        self.0
    }

    /// Thresholds at `threshold`: `p >= threshold` is positive.
    #[inline]
    pub fn classify_at(self, threshold: T) -> BinaryLabel {
        BinaryLabel::from_bool(self.0 >= threshold)
    }

    /// Thresholds at the 0.5 decision boundary.
    #[inline]
    pub fn classify(self) -> BinaryLabel {
        self.classify_at(T::lit(0.5))
    }
}

impl<T: Scalar> Serialize for Probability<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.0.to_f64_lossy())
    }
}

impl<'de, T: Scalar> Deserialize<'de> for Probability<T> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = f64::deserialize(deserializer)?;
        let value = T::from_f64(raw).ok_or_else(|| serde::de::Error::custom("unrepresentable"))?;
        Probability::new(value).map_err(serde::de::Error::custom)
    }
}

impl<T: Scalar> fmt::Display for Probability<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

/// Binary ground truth or decision. Serialized as `0` / `1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum BinaryLabel {
    Negative,
    Positive,
}

impl BinaryLabel {
    #[inline]
    pub fn from_bool(positive: bool) -> Self {
        if positive {
            Self::Positive
        } else {
            Self::Negative
        }
    }

    #[inline]
    pub fn is_positive(self) -> bool {
        matches!(self, Self::Positive)
    }

    #[inline]
    pub fn flipped(self) -> Self {
        Self::from_bool(!self.is_positive())
    }

    #[inline]
    pub fn as_scalar<T: Scalar>(self) -> T {
        if self.is_positive() {
            T::one()
        } else {
            T::zero()
        }
    }
}

impl From<BinaryLabel> for u8 {
    fn from(label: BinaryLabel) -> u8 {
        label.is_positive() as u8
    }
}

impl TryFrom<u8> for BinaryLabel {
    type Error = String;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        match value {
            0 => Ok(Self::Negative),
            1 => Ok(Self::Positive),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

/// Which partition of the data a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Instruct,
    ClassifierTrain,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 4] = [
        Split::Instruct,
        Split::ClassifierTrain,
        Split::Validation,
        Split::Test,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Instruct => "instruct",
            Split::ClassifierTrain => "classifier_train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Split::ALL
            .into_iter()
            .find(|split| split.as_str() == s)
            .ok_or_else(|| format!("unknown split `{s}`"))
    }
}

/// One of the three prediction sources a case can carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    /// Probability stated in the generated guidance text.
    Verbalised,
    /// Output of the classifier over pooled hidden states.
    HiddenState,
    /// Convex blend of the two.
    Combined,
}

impl Source {
    pub const ALL: [Source; 3] = [Source::Verbalised, Source::HiddenState, Source::Combined];

    pub fn as_str(self) -> &'static str {
        match self {
            Source::Verbalised => "verbalised",
            Source::HiddenState => "hidden_state",
            Source::Combined => "combined",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "verbalised" | "verbalized" | "t_hat" | "t" => Ok(Source::Verbalised),
            "hidden_state" | "hidden" | "epsilon_hat" | "e" => Ok(Source::HiddenState),
            "combined" | "mu_hat" | "mu" => Ok(Source::Combined),
            _ => Err(format!(
                "unknown prediction source `{s}` (expected verbalised, hidden_state or combined)"
            )),
        }
    }
}

/// A single case: the report, its optional label and whichever prediction
/// sources are available for it.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub id: String,
    pub report_text: String,
    pub label: Option<BinaryLabel>,
    pub t_hat: Option<Probability>,
    pub epsilon_hat: Option<Probability>,
    pub mu_hat: Option<Probability>,
    pub embedding: Option<Vec<f64>>,
    pub guidance: Option<GuidanceDocument>,
    pub split: Option<Split>,
}

impl PredictionRecord {
    pub fn new(id: impl Into<String>, report_text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            report_text: report_text.into(),
            label: None,
            t_hat: None,
            epsilon_hat: None,
            mu_hat: None,
            embedding: None,
            guidance: None,
            split: None,
        }
    }

    pub fn probability(&self, source: Source) -> Option<Probability> {
        match source {
            Source::Verbalised => self.t_hat,
            Source::HiddenState => self.epsilon_hat,
            Source::Combined => self.mu_hat,
        }
    }

    /// Recomputes `mu_hat` from the two base sources. Leaves it unset when
    /// either source is missing.
    pub fn refresh_combined(&mut self, alpha: BlendWeight) {
        self.mu_hat = match (self.t_hat, self.epsilon_hat) {
            (Some(t), Some(e)) => Some(fusion::combine(t, e, alpha)),
            _ => None,
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probability_rejects_out_of_range_and_nan() {
        assert!(Probability::new(1.5).is_err());
        assert!(Probability::new(-0.01).is_err());
        assert!(Probability::new(f64::NAN).is_err());
        assert_eq!(Probability::new(1.0).unwrap().value(), 1.0);
        assert_eq!(Probability::new(0.25f32).unwrap().value(), 0.25f32);
    }

    #[test]
    fn classify_uses_inclusive_half() {
        assert_eq!(Probability::new(0.5).unwrap().classify(), BinaryLabel::Positive);
        assert_eq!(Probability::new(0.49).unwrap().classify(), BinaryLabel::Negative);
    }

    #[test]
    fn label_serializes_as_integer() {
        assert_eq!(serde_json::to_string(&BinaryLabel::Positive).unwrap(), "1");
        let parsed: BinaryLabel = serde_json::from_str("0").unwrap();
        assert_eq!(parsed, BinaryLabel::Negative);
        assert!(serde_json::from_str::<BinaryLabel>("2").is_err());
    }

    #[test]
    fn source_parses_aliases() {
        assert_eq!("epsilon_hat".parse::<Source>().unwrap(), Source::HiddenState);
        assert_eq!("Combined".parse::<Source>().unwrap(), Source::Combined);
        assert!("other".parse::<Source>().is_err());
    }
}
