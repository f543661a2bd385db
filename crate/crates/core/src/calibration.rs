//! Binned calibration metrics: ECE over equal-width bins, ACE over
//! equal-mass bins, and the imbalance-aware ECE which blends each bin's
//! sample share with a uniform weight.
//!
//! Equal-width bin `m` (1-based) covers `((m-1)/M, m/M]`; a confidence of
//! exactly 0 goes to the first bin. Equal-mass bins take consecutive runs of
//! the confidence-sorted predictions, the first `n mod M` bins holding one
//! extra element. Empty bins contribute no error to any metric.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BinaryLabel, Probability};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("no predictions to bin")]
    EmptyInput,
    #[error("bin count must be at least 1")]
    BinCount,
    #[error("gamma must lie in [0, 1], got {0}")]
    GammaRange(f64),
    #[error("metric requires {expected:?} bins, report uses {found:?}")]
    StrategyMismatch {
        expected: BinStrategy,
        found: BinStrategy,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinStrategy {
    EqualWidth,
    EqualMass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig<T: Scalar = f64> {
    pub bins: usize,
    pub gamma: T,
}

impl<T: Scalar> Default for CalibrationConfig<T> {
    fn default() -> Self {
        Self {
            bins: 10,
            gamma: T::lit(0.3),
        }
    }
}

impl<T: Scalar> CalibrationConfig<T> {
    pub fn validate(&self) -> Result<(), CalibrationError> {
        if self.bins == 0 {
            return Err(CalibrationError::BinCount);
        }
        check_gamma(self.gamma)
    }
}

fn check_gamma<T: Scalar>(gamma: T) -> Result<(), CalibrationError> {
    if gamma.is_nan() || gamma < T::zero() || gamma > T::one() {
        return Err(CalibrationError::GammaRange(gamma.to_f64_lossy()));
    }
    Ok(())
}

/// One bin of a [`BinningReport`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bin<T: Scalar = f64> {
    /// Lower edge; for equal-mass bins the smallest member confidence.
    pub lower: T,
    /// Upper edge; for equal-mass bins the largest member confidence.
    pub upper: T,
    pub count: usize,
    pub confidence_sum: T,
    pub label_sum: T,
}

impl<T: Scalar> Bin<T> {
    fn empty(lower: T, upper: T) -> Self {
        Self {
            lower,
            upper,
            count: 0,
            confidence_sum: T::zero(),
            label_sum: T::zero(),
        }
    }

    fn push(&mut self, confidence: T, label: BinaryLabel) {
        self.count += 1;
        self.confidence_sum = self.confidence_sum + confidence;
        self.label_sum = self.label_sum + label.as_scalar();
    }

    pub fn mean_confidence(&self) -> Option<T> {
        (self.count > 0).then(|| self.confidence_sum / T::from_count(self.count))
    }

    pub fn mean_label(&self) -> Option<T> {
        (self.count > 0).then(|| self.label_sum / T::from_count(self.count))
    }

    /// `|mean confidence - mean label|`, zero for an empty bin.
    pub fn gap(&self) -> T {
        match (self.mean_confidence(), self.mean_label()) {
            (Some(h), Some(y)) => (h - y).abs(),
            _ => T::zero(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinningReport<T: Scalar = f64> {
    pub strategy: BinStrategy,
    pub bins: Vec<Bin<T>>,
    pub n: usize,
}

impl<T: Scalar> BinningReport<T> {
    pub fn bin_count(&self) -> usize {
        self.bins.len()
    }

    fn require(&self, expected: BinStrategy) -> Result<(), CalibrationError> {
        if self.strategy != expected {
            return Err(CalibrationError::StrategyMismatch {
                expected,
                found: self.strategy,
            });
        }
        Ok(())
    }

    /// Sample share `|B_m| / n` of every bin.
    pub fn mass_weights(&self) -> Vec<T> {
        let n = T::from_count(self.n);
        self.bins.iter().map(|b| T::from_count(b.count) / n).collect()
    }

    /// Blended weights `(1 - gamma) |B_m| / n + gamma / M`.
    pub fn imbalance_weights(&self, gamma: T) -> Vec<T> {
        let uniform = gamma / T::from_count(self.bins.len());
        self.mass_weights()
            .into_iter()
            .map(|w| (T::one() - gamma) * w + uniform)
            .collect()
    }
}

/// Index of the equal-width bin holding `p`, matching the half-open
/// convention exactly even where `p * M` rounds across an edge.
pub(crate) fn equal_width_index<T: Scalar>(p: T, bins: usize) -> usize {
    let m = T::from_count(bins);
    if p <= T::zero() {
        return 0;
    }
    let mut idx = ((p * m).ceil().to_usize().unwrap_or(1)).clamp(1, bins) - 1;
    while idx > 0 && p <= T::from_count(idx) / m {
        idx -= 1;
    }
    while idx + 1 < bins && p > T::from_count(idx + 1) / m {
        idx += 1;
    }
    idx
}

/// Bins predictions. Equal-mass ties keep input order, so callers that need
/// a particular tie order (for example by case id) should pre-sort.
pub fn bin_predictions<T: Scalar>(
    preds: &[(Probability<T>, BinaryLabel)],
    bins: usize,
    strategy: BinStrategy,
) -> Result<BinningReport<T>, CalibrationError> {
    if preds.is_empty() {
        return Err(CalibrationError::EmptyInput);
    }
    if bins == 0 {
        return Err(CalibrationError::BinCount);
    }
    let m = T::from_count(bins);
    let out = match strategy {
        BinStrategy::EqualWidth => {
            let mut out: Vec<Bin<T>> = (0..bins)
                .map(|i| Bin::empty(T::from_count(i) / m, T::from_count(i + 1) / m))
                .collect();
            for &(p, y) in preds {
                out[equal_width_index(p.value(), bins)].push(p.value(), y);
            }
            out
        }
        BinStrategy::EqualMass => {
            let mut order: Vec<usize> = (0..preds.len()).collect();
            order.sort_by(|&a, &b| {
                preds[a]
                    .0
                    .value()
                    .partial_cmp(&preds[b].0.value())
                    .expect("probabilities are never NaN")
            });
            let base = preds.len() / bins;
            let extra = preds.len() % bins;
            let mut out = Vec::with_capacity(bins);
            let mut cursor = 0;
            let mut last_upper = T::zero();
            for bin in 0..bins {
                let size = base + usize::from(bin < extra);
                let members = &order[cursor..cursor + size];
                let mut b = match (members.first(), members.last()) {
                    (Some(&lo), Some(&hi)) => {
                        Bin::empty(preds[lo].0.value(), preds[hi].0.value())
                    }
                    _ => Bin::empty(last_upper, last_upper),
                };
                for &i in members {
                    b.push(preds[i].0.value(), preds[i].1);
                }
                last_upper = b.upper;
                out.push(b);
                cursor += size;
            }
            out
        }
    };
    Ok(BinningReport {
        strategy,
        bins: out,
        n: preds.len(),
    })
}

/// Expected calibration error over equal-width bins.
pub fn ece<T: Scalar>(report: &BinningReport<T>) -> Result<T, CalibrationError> {
    report.require(BinStrategy::EqualWidth)?;
    Ok(weighted_gap(report, &report.mass_weights()))
}

/// Adaptive calibration error: unweighted mean gap over equal-mass bins.
pub fn ace<T: Scalar>(report: &BinningReport<T>) -> Result<T, CalibrationError> {
    report.require(BinStrategy::EqualMass)?;
    let m = T::from_count(report.bin_count());
    Ok(report.bins.iter().map(|b| b.gap()).sum::<T>() / m)
}

/// Imbalance-aware ECE. `gamma = 0` is ECE; `gamma = 1` weights every bin
/// equally.
pub fn ece_imb<T: Scalar>(report: &BinningReport<T>, gamma: T) -> Result<T, CalibrationError> {
    report.require(BinStrategy::EqualWidth)?;
    check_gamma(gamma)?;
    Ok(weighted_gap(report, &report.imbalance_weights(gamma)))
}

fn weighted_gap<T: Scalar>(report: &BinningReport<T>, weights: &[T]) -> T {
    report
        .bins
        .iter()
        .zip(weights)
        .filter(|(b, _)| b.count > 0)
        .map(|(b, &w)| w * b.gap())
        .sum()
}

/// One row of a reliability diagram.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReliabilityRow<T: Scalar = f64> {
    pub lower: T,
    pub upper: T,
    pub count: usize,
    pub mean_confidence: Option<T>,
    pub mean_label: Option<T>,
    pub ece_weight: T,
    pub imbalance_weight: T,
}

pub fn reliability_data<T: Scalar>(report: &BinningReport<T>, gamma: T) -> Vec<ReliabilityRow<T>> {
    report
        .bins
        .iter()
        .zip(report.mass_weights())
        .zip(report.imbalance_weights(gamma))
        .map(|((b, ece_weight), imbalance_weight)| ReliabilityRow {
            lower: b.lower,
            upper: b.upper,
            count: b.count,
            mean_confidence: b.mean_confidence(),
            mean_label: b.mean_label(),
            ece_weight,
            imbalance_weight,
        })
        .collect()
}

/// Comma-separated table, one row per bin; empty means are blank cells.
pub fn reliability_table<T: Scalar>(rows: &[ReliabilityRow<T>]) -> String {
    let mut out =
        String::from("lower,upper,count,mean_confidence,mean_label,ece_weight,imbalance_weight\n");
    let opt = |v: Option<T>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.lower,
            r.upper,
            r.count,
            opt(r.mean_confidence),
            opt(r.mean_label),
            r.ece_weight,
            r.imbalance_weight
        );
    }
    out
}

/// ECE, ACE and imbalance-aware ECE for one set of predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary<T: Scalar = f64> {
    pub ece: T,
    pub ace: T,
    pub ece_imb: T,
}

pub fn summarize<T: Scalar>(
    preds: &[(Probability<T>, BinaryLabel)],
    config: &CalibrationConfig<T>,
) -> Result<CalibrationSummary<T>, CalibrationError> {
    config.validate()?;
    let width = bin_predictions(preds, config.bins, BinStrategy::EqualWidth)?;
    let mass = bin_predictions(preds, config.bins, BinStrategy::EqualMass)?;
    Ok(CalibrationSummary {
        ece: ece(&width)?,
        ace: ace(&mass)?,
        ece_imb: ece_imb(&width, config.gamma)?,
    })
}
