//! Ranking cases by distance from the decision boundary, splitting them into
//! deferred and autonomous sets, and scoring the ranking with an
//! accuracy-rejection curve.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BinaryLabel, PredictionRecord, Probability, Source};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DeferralError {
    #[error("case `{id}` has no {missing} probability")]
    MissingSource { id: String, missing: Source },
    #[error("case `{0}` has no label")]
    UnlabeledRecords(String),
    #[error("budget {budget} must be below the number of cases ({n})")]
    BudgetRange { budget: usize, n: usize },
    #[error("threshold must lie in [0, 1], got {0}")]
    ThresholdRange(f64),
    #[error("no cases to rank")]
    EmptyInput,
}

/// `2 |p - 0.5|`: 0 on the decision boundary, 1 at either extreme.
pub fn relative_confidence<T: Scalar>(p: Probability<T>) -> T {
    (T::lit(2.0) * (p.value() - T::lit(0.5)).abs()).min(T::one())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeferralEntry<T: Scalar = f64> {
    pub id: String,
    pub probability: Probability<T>,
    pub relative_confidence: T,
}

/// Cases sorted by ascending relative confidence, ties by ascending id.
/// Earlier entries have higher deferral priority.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeferralRanking<T: Scalar = f64> {
    pub source: Source,
    pub entries: Vec<DeferralEntry<T>>,
}

fn priority_order<T: Scalar>(a: (T, &str), b: (T, &str)) -> Ordering {
    a.0.partial_cmp(&b.0)
        .expect("relative confidence is never NaN")
        .then_with(|| a.1.cmp(b.1))
}

impl<T: Scalar> DeferralRanking<T> {
    pub fn new<I, S>(source: Source, cases: I) -> Self
    where
        I: IntoIterator<Item = (S, Probability<T>)>,
        S: Into<String>,
    {
        let mut entries: Vec<DeferralEntry<T>> = cases
            .into_iter()
            .map(|(id, p)| DeferralEntry {
                id: id.into(),
                probability: p,
                relative_confidence: relative_confidence(p),
            })
            .collect();
        entries.sort_by(|a, b| {
            priority_order((a.relative_confidence, &a.id), (b.relative_confidence, &b.id))
        });
        Self { source, entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sorted relative confidences.
    pub fn relative_confidences(&self) -> impl Iterator<Item = T> + '_ {
        self.entries.iter().map(|e| e.relative_confidence)
    }
}

/// Ranks records on the chosen source.
pub fn rank_for_deferral(
    records: &[PredictionRecord],
    source: Source,
) -> Result<DeferralRanking<f64>, DeferralError> {
    let cases = records
        .iter()
        .map(|r| {
            r.probability(source)
                .map(|p| (r.id.clone(), p))
                .ok_or_else(|| DeferralError::MissingSource {
                    id: r.id.clone(),
                    missing: source,
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DeferralRanking::new(source, cases))
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct Partition {
    /// Ids with relative confidence strictly below the threshold, in
    /// priority order.
    pub deferred: Vec<String>,
    pub autonomous: Vec<String>,
}

/// Defers every case with relative confidence `< theta`.
pub fn partition<T: Scalar>(ranking: &DeferralRanking<T>, theta: T) -> Partition {
    let cut = ranking
        .entries
        .partition_point(|e| e.relative_confidence < theta);
    let ids = |slice: &[DeferralEntry<T>]| slice.iter().map(|e| e.id.clone()).collect();
    Partition {
        deferred: ids(&ranking.entries[..cut]),
        autonomous: ids(&ranking.entries[cut..]),
    }
}

/// Threshold chosen to defer a fixed number of cases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BudgetThreshold<T: Scalar = f64> {
    pub theta: T,
    pub requested: usize,
    /// Number of cases [`partition`] defers at `theta`.
    pub deferred: usize,
    /// Set when the budget boundary falls inside a run of equal values, so
    /// fewer than `requested` cases are deferred.
    pub boundary_tie: bool,
}

/// Returns the `(k+1)`-th smallest relative confidence.
pub fn threshold_for_budget<T: Scalar>(
    ranking: &DeferralRanking<T>,
    budget: usize,
) -> Result<BudgetThreshold<T>, DeferralError> {
    let n = ranking.len();
    if budget >= n {
        return Err(DeferralError::BudgetRange { budget, n });
    }
    let theta = ranking.entries[budget].relative_confidence;
    let deferred = ranking
        .entries
        .partition_point(|e| e.relative_confidence < theta);
    Ok(BudgetThreshold {
        theta,
        requested: budget,
        deferred,
        boundary_tie: deferred < budget,
    })
}

/// Either a fixed threshold or a fixed number of cases to defer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeferralRule {
    Threshold(f64),
    Budget(usize),
}

impl DeferralRule {
    /// Resolves the rule into a concrete threshold for `ranking`.
    pub fn theta(&self, ranking: &DeferralRanking<f64>) -> Result<f64, DeferralError> {
        match *self {
            DeferralRule::Threshold(theta) => {
                if !(0.0..=1.0).contains(&theta) {
                    return Err(DeferralError::ThresholdRange(theta));
                }
                Ok(theta)
            }
            DeferralRule::Budget(k) => Ok(threshold_for_budget(ranking, k)?.theta),
        }
    }
}

/// Input to the accuracy-rejection curve: one source ranks, another
/// classifies.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCase<T: Scalar = f64> {
    pub id: String,
    pub rank: Probability<T>,
    pub classify: Probability<T>,
    pub label: BinaryLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint<T: Scalar = f64> {
    pub rejection_rate: T,
    pub accuracy: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyRejectionCurve<T: Scalar = f64> {
    pub rank_source: Option<Source>,
    pub classification_source: Option<Source>,
    pub points: Vec<CurvePoint<T>>,
}

/// Rejects cases one at a time in deferral-priority order and records the
/// accuracy of the retained cases at 0.5. The undefined full-rejection
/// point is closed at `(1, 1)`.
pub fn accuracy_rejection_curve<T: Scalar>(
    cases: &[ScoredCase<T>],
) -> Result<AccuracyRejectionCurve<T>, DeferralError> {
    if cases.is_empty() {
        return Err(DeferralError::EmptyInput);
    }
    let mut order: Vec<(T, &ScoredCase<T>)> = cases
        .iter()
        .map(|c| (relative_confidence(c.rank), c))
        .collect();
    order.sort_by(|a, b| priority_order((a.0, &a.1.id), (b.0, &b.1.id)));

    let n = order.len();
    // correct_from[j] = correct classifications among order[j..]
    let mut correct_from = vec![0usize; n + 1];
    for j in (0..n).rev() {
        let c = order[j].1;
        correct_from[j] = correct_from[j + 1] + usize::from(c.classify.classify() == c.label);
    }
    let total = T::from_count(n);
    let mut points: Vec<CurvePoint<T>> = (0..n)
        .map(|j| CurvePoint {
            rejection_rate: T::from_count(j) / total,
            accuracy: T::from_count(correct_from[j]) / T::from_count(n - j),
        })
        .collect();
    points.push(CurvePoint {
        rejection_rate: T::one(),
        accuracy: T::one(),
    });
    Ok(AccuracyRejectionCurve {
        rank_source: None,
        classification_source: None,
        points,
    })
}

/// Curve over records, ranking on one source and classifying on another.
pub fn records_curve(
    records: &[PredictionRecord],
    rank_source: Source,
    classification_source: Source,
) -> Result<AccuracyRejectionCurve<f64>, DeferralError> {
    let cases = records
        .iter()
        .map(|r| {
            let missing = |source| DeferralError::MissingSource {
                id: r.id.clone(),
                missing: source,
            };
            Ok(ScoredCase {
                id: r.id.clone(),
                rank: r.probability(rank_source).ok_or_else(|| missing(rank_source))?,
                classify: r
                    .probability(classification_source)
                    .ok_or_else(|| missing(classification_source))?,
                label: r
                    .label
                    .ok_or_else(|| DeferralError::UnlabeledRecords(r.id.clone()))?,
            })
        })
        .collect::<Result<Vec<_>, DeferralError>>()?;
    let mut curve = accuracy_rejection_curve(&cases)?;
    curve.rank_source = Some(rank_source);
    curve.classification_source = Some(classification_source);
    Ok(curve)
}

/// Trapezoidal area under the curve over `r` in `[0, 1]`.
pub fn auarc<T: Scalar>(curve: &AccuracyRejectionCurve<T>) -> T {
    curve
        .points
        .windows(2)
        .map(|w| {
            (w[1].rejection_rate - w[0].rejection_rate) * (w[0].accuracy + w[1].accuracy)
                / T::lit(2.0)
        })
        .sum()
}

/// Comma-separated `rejection_rate,accuracy` table.
pub fn curve_table<T: Scalar>(curve: &AccuracyRejectionCurve<T>) -> String {
    let mut out = String::from("rejection_rate,accuracy\n");
    for p in &curve.points {
        let _ = writeln!(out, "{},{}", p.rejection_rate, p.accuracy);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(v: f64) -> Probability {
        Probability::new(v).unwrap()
    }

    fn ranking(values: &[f64]) -> DeferralRanking {
        DeferralRanking::new(
            Source::HiddenState,
            values.iter().enumerate().map(|(i, &v)| (format!("c{i:03}"), p(v))),
        )
    }

    #[test]
    fn transform_boundaries() {
        assert_eq!(relative_confidence(p(0.5)), 0.0);
        assert_eq!(relative_confidence(p(0.0)), 1.0);
        assert_eq!(relative_confidence(p(1.0)), 1.0);
    }

    #[test]
    fn ranking_order() {
        let r = ranking(&[0.75, 0.5, 0.1]);
        let got: Vec<(&str, f64)> = r
            .entries
            .iter()
            .map(|e| (e.id.as_str(), e.relative_confidence))
            .collect();
        assert_eq!(got[0], ("c001", 0.0));
        assert_eq!(got[1], ("c000", 0.5));
        assert_eq!(got[2].0, "c002");
        assert!((got[2].1 - 0.8).abs() < 1e-15);
    }

    #[test]
    fn ties_keep_id_order() {
        let r = DeferralRanking::new(
            Source::Verbalised,
            [("b", p(0.3)), ("a", p(0.7)), ("c", p(0.3))],
        );
        let ids: Vec<&str> = r.entries.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, vec!["a", "b", "c"]);
    }

    #[test]
    fn missing_source_is_reported() {
        let mut rec = PredictionRecord::new("x", "text");
        rec.t_hat = Some(p(0.4));
        let err = rank_for_deferral(&[rec], Source::HiddenState).unwrap_err();
        assert!(matches!(err, DeferralError::MissingSource { .. }));
    }

    #[test]
    fn partition_boundaries() {
        let r = ranking(&[0.5, 0.7, 0.0, 1.0, 0.2]);
        let none = partition(&r, 0.0);
        assert!(none.deferred.is_empty());
        assert_eq!(none.autonomous.len(), 5);
        let all = partition(&r, 1.0);
        assert_eq!(all.autonomous, vec!["c002".to_owned(), "c003".to_owned()]);
        assert_eq!(all.deferred.len(), 3);
    }

    #[test]
    fn budget_thresholds() {
        let values: Vec<f64> = (0..600).map(|i| i as f64 / 1200.0).collect();
        let r = ranking(&values);
        let t = threshold_for_budget(&r, 30).unwrap();
        assert_eq!(t.theta, r.entries[30].relative_confidence);
        assert_eq!(partition(&r, t.theta).deferred.len(), 30);
        assert!(!t.boundary_tie);

        let zero = threshold_for_budget(&r, 0).unwrap();
        assert_eq!(zero.theta, r.entries[0].relative_confidence);
        assert_eq!(zero.deferred, 0);

        let flat = ranking(&[0.7; 5]);
        let t = threshold_for_budget(&flat, 3).unwrap();
        assert_eq!(t.deferred, 0);
        assert!(t.boundary_tie);
        assert!((t.theta - 0.4).abs() < 1e-12);

        assert!(matches!(
            threshold_for_budget(&flat, 5),
            Err(DeferralError::BudgetRange { budget: 5, n: 5 })
        ));
    }

    fn case(id: &str, rank: f64, classify: f64, label: BinaryLabel) -> ScoredCase {
        ScoredCase {
            id: id.into(),
            rank: p(rank),
            classify: p(classify),
            label,
        }
    }

    #[test]
    fn four_case_curve() {
        use BinaryLabel::*;
        let cases = vec![
            case("a", 0.55, 0.55, Negative),
            case("b", 0.9, 0.9, Positive),
            case("c", 0.05, 0.05, Negative),
            case("d", 0.8, 0.8, Positive),
        ];
        let curve = accuracy_rejection_curve(&cases).unwrap();
        let acc: Vec<f64> = curve.points.iter().map(|p| p.accuracy).collect();
        let rates: Vec<f64> = curve.points.iter().map(|p| p.rejection_rate).collect();
        assert_eq!(acc, vec![0.75, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(rates, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!((auarc(&curve) - 0.96875).abs() < 1e-12);
    }

    #[test]
    fn all_correct_is_flat() {
        use BinaryLabel::*;
        let cases = vec![case("a", 0.6, 0.6, Positive), case("b", 0.2, 0.2, Negative)];
        let curve = accuracy_rejection_curve(&cases).unwrap();
        assert!(curve.points.iter().all(|p| p.accuracy == 1.0));
        assert_eq!(auarc(&curve), 1.0);
    }

    #[test]
    fn separate_rank_and_classification_sources() {
        let mut a = PredictionRecord::new("a", "");
        a.label = Some(BinaryLabel::Positive);
        a.epsilon_hat = Some(p(0.52));
        a.mu_hat = Some(p(0.3));
        let mut b = PredictionRecord::new("b", "");
        b.label = Some(BinaryLabel::Negative);
        b.epsilon_hat = Some(p(0.01));
        b.mu_hat = Some(p(0.2));
        let curve = records_curve(&[a, b], Source::HiddenState, Source::Combined).unwrap();
        assert_eq!(curve.points[0].accuracy, 0.5);
        assert_eq!(curve.points[1].accuracy, 1.0);
        assert_eq!(curve.rank_source, Some(Source::HiddenState));
        assert!(curve_table(&curve).starts_with("rejection_rate,accuracy\n0,0.5\n"));
    }

    #[test]
    fn unlabeled_records_rejected() {
        let mut a = PredictionRecord::new("a", "");
        a.t_hat = Some(p(0.4));
        assert!(matches!(
            records_curve(&[a], Source::Verbalised, Source::Verbalised),
            Err(DeferralError::UnlabeledRecords(_))
        ));
    }

    proptest! {
        #[test]
        fn partition_is_exact(values in proptest::collection::vec(0.0..=1.0f64, 1..60), theta in 0.0..=1.0f64) {
            let r = ranking(&values);
            let part = partition(&r, theta);
            prop_assert_eq!(part.deferred.len() + part.autonomous.len(), values.len());
            let mut all: Vec<String> = part.deferred.iter().chain(&part.autonomous).cloned().collect();
            all.sort();
            all.dedup();
            prop_assert_eq!(all.len(), values.len());
            for e in &r.entries {
                prop_assert_eq!(part.deferred.contains(&e.id), e.relative_confidence < theta);
            }
        }

        #[test]
        fn ranking_is_invariant_to_label_flip(steps in proptest::collection::vec(0u32..=64, 1..40)) {
            // values on a dyadic grid so 1 - v is exact
            let values: Vec<f64> = steps.iter().map(|&k| f64::from(k) / 64.0).collect();
            let flipped: Vec<f64> = values.iter().map(|v| 1.0 - v).collect();
            let a: Vec<String> = ranking(&values).entries.into_iter().map(|e| e.id).collect();
            let b: Vec<String> = ranking(&flipped).entries.into_iter().map(|e| e.id).collect();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn auarc_bounds(raw in proptest::collection::vec((0.0..=1.0f64, 0.0..=1.0f64, any::<bool>()), 1..50)) {
            let cases: Vec<ScoredCase> = raw
                .iter()
                .enumerate()
                .map(|(i, &(r, c, y))| case(&format!("{i}"), r, c, BinaryLabel::from_bool(y)))
                .collect();
            let curve = accuracy_rejection_curve(&cases).unwrap();
            let area = auarc(&curve);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&area));
            for w in curve.points.windows(2) {
                prop_assert!(w[1].rejection_rate > w[0].rejection_rate);
            }

            // With errors ranked first the curve cannot dip, so the area is
            // at least the accuracy with nothing rejected.
            let ideal: Vec<ScoredCase> = cases
                .iter()
                .map(|c| {
                    let wrong = c.classify.classify() != c.label;
                    ScoredCase { rank: p(if wrong { 0.5 } else { 1.0 }), ..c.clone() }
                })
                .collect();
            let curve = accuracy_rejection_curve(&ideal).unwrap();
            let area = auarc(&curve);
            prop_assert!(area >= curve.points[0].accuracy - 1e-12);
            prop_assert!(area <= 1.0 + 1e-12);
        }
    }
}
