//! Classification metrics, source agreement, hypothesis tests and pilot
//! session analysis.

mod pilot;
mod stats;

pub use pilot::{analyze_session, AnalysisError, ParticipantAccuracy, SessionAnalysis};
pub use stats::{
    chi_squared_independence, mann_whitney_u, wilcoxon_signed_rank, Alternative, PValueMethod,
    TestResult,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BinaryLabel, PredictionRecord, Probability, Source};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvaluationError {
    #[error("inputs have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no inputs")]
    EmptyInput,
    #[error("a sample has zero variance")]
    DegenerateVariance,
    #[error("case `{id}` is missing the {missing} probability")]
    MissingSource { id: String, missing: Source },
    #[error("case `{0}` has no label")]
    Unlabeled(String),
    #[error("every paired difference is zero")]
    AllZeroDifferences,
    #[error("contingency table has an empty row or column")]
    DegenerateMargin,
}

/// Confusion counts with the derived ratios. A ratio whose denominator is
/// zero is `None`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

impl ClassificationReport {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = match (precision, recall) {
            (Some(_), Some(_)) => Some(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64),
            _ => None,
        };
        Self {
            tp,
            fp,
            fn_,
            tn,
            precision,
            recall,
            f1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn accuracy(&self) -> Option<f64> {
        let n = self.total();
        (n > 0).then(|| (self.tp + self.tn) as f64 / n as f64)
    }
}

/// Confusion matrix of `preds >= threshold` against `labels`.
pub fn classification_metrics<T: Scalar>(
    preds: &[Probability<T>],
    labels: &[BinaryLabel],
    threshold: T,
) -> Result<ClassificationReport, EvaluationError> {
    if preds.len() != labels.len() {
        return Err(EvaluationError::LengthMismatch(preds.len(), labels.len()));
    }
    if preds.is_empty() {
        return Err(EvaluationError::EmptyInput);
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (p, y) in preds.iter().zip(labels) {
        match (p.classify_at(threshold).is_positive(), y.is_positive()) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    Ok(ClassificationReport::from_counts(tp, fp, fn_, tn))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedF1 {
    /// F1 of the pooled confusion counts.
    pub micro: Option<f64>,
    /// Mean of the per-condition F1 scores that are defined.
    pub macro_: Option<f64>,
    /// Indices of conditions left out of the macro average.
    pub excluded: Vec<usize>,
}

pub fn micro_macro_f1(per_condition: &[ClassificationReport]) -> Result<AveragedF1, EvaluationError> {
    if per_condition.is_empty() {
        return Err(EvaluationError::EmptyInput);
    }
    let pooled = per_condition.iter().fold((0, 0, 0, 0), |acc, r| {
        (acc.0 + r.tp, acc.1 + r.fp, acc.2 + r.fn_, acc.3 + r.tn)
    });
    let micro = ClassificationReport::from_counts(pooled.0, pooled.1, pooled.2, pooled.3).f1;
    let mut excluded = Vec::new();
    let mut defined = Vec::new();
    for (i, r) in per_condition.iter().enumerate() {
        match r.f1 {
            Some(f1) => defined.push(f1),
            None => excluded.push(i),
        }
    }
    let macro_ = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(AveragedF1 {
        micro,
        macro_,
        excluded,
    })
}

/// Sample product-moment correlation.
pub fn pearson_correlation<T: Scalar>(a: &[T], b: &[T]) -> Result<T, EvaluationError> {
    if a.len() != b.len() {
        return Err(EvaluationError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(EvaluationError::EmptyInput);
    }
    let n = T::from_count(a.len());
    let mean_a = a.iter().copied().sum::<T>() / n;
    let mean_b = b.iter().copied().sum::<T>() / n;
    let (mut sab, mut saa, mut sbb) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - mean_a, y - mean_b);
        sab = sab + dx * dy;
        saa = saa + dx * dx;
        sbb = sbb + dy * dy;
    }
    if saa <= T::zero() || sbb <= T::zero() {
        return Err(EvaluationError::DegenerateVariance);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).max(-T::one()).min(T::one()))
}

/// How the two base sources relate on a labelled set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    /// Correlation of `t_hat` and `epsilon_hat`; `None` if either is constant.
    pub pearson_rho: Option<f64>,
    /// Cases where the combined prediction is correct and the two base
    /// sources disagree at 0.5.
    pub disagreements: usize,
    /// Share of those cases in which the hidden-state source was the
    /// correct one.
    pub hidden_state_correct: Option<f64>,
    /// Share in which the verbalised source was the correct one.
    pub verbalised_correct: Option<f64>,
}

pub fn disagreement_attribution(
    records: &[PredictionRecord],
) -> Result<AgreementReport, EvaluationError> {
    let mut t_values = Vec::with_capacity(records.len());
    let mut e_values = Vec::with_capacity(records.len());
    let mut disagreements = 0usize;
    let mut hidden_right = 0usize;
    for r in records {
        let get = |source: Source| {
            r.probability(source)
                .ok_or_else(|| EvaluationError::MissingSource {
                    id: r.id.clone(),
                    missing: source,
                })
        };
        let t = get(Source::Verbalised)?;
        let e = get(Source::HiddenState)?;
        let mu = get(Source::Combined)?;
        let label = r.label.ok_or_else(|| EvaluationError::Unlabeled(r.id.clone()))?;
        t_values.push(t.value());
        e_values.push(e.value());
        if mu.classify() == label && t.classify() != e.classify() {
            disagreements += 1;
            if e.classify() == label {
                hidden_right += 1;
            }
        }
    }
    let pearson_rho = match pearson_correlation(&t_values, &e_values) {
        Ok(rho) => Some(rho),
        Err(EvaluationError::DegenerateVariance | EvaluationError::EmptyInput) => None,
        Err(other) => return Err(other),
    };
    let share = |k: usize| (disagreements > 0).then(|| k as f64 / disagreements as f64);
    Ok(AgreementReport {
        pearson_rho,
        disagreements,
        hidden_state_correct: share(hidden_right),
        verbalised_correct: share(disagreements - hidden_right),
    })
}
