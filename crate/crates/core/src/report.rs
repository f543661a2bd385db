//! The run report: every headline metric for one dataset and configuration.
//!
//! The CLI writes it and the service serves it, both through
//! [`build_report`], so the two always agree on the same inputs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{
    bin_predictions, reliability_data, summarize, BinStrategy, CalibrationError, CalibrationSummary,
    ReliabilityRow,
};
use crate::config::RunConfig;
use crate::dataset::DatasetManifest;
use crate::deferral::{
    auarc, rank_for_deferral, records_curve, partition, threshold_for_budget, CurvePoint,
    DeferralError, DeferralRule,
};
use crate::evaluation::{
    classification_metrics, disagreement_attribution, AgreementReport, ClassificationReport,
    EvaluationError, SessionAnalysis,
};
use crate::fusion::{fit_alpha, BlendWeight, FusionCase, FusionError};
use crate::model::{BinaryLabel, PredictionRecord, Probability, Source, Split};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("dataset has no labeled cases to evaluate")]
    UnlabeledDataset,
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Deferral(#[from] DeferralError),
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaReport {
    pub value: f64,
    pub fitted: bool,
    /// Cases the fit used; zero when alpha was fixed.
    pub fitted_on: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SourceReport {
    pub source: Source,
    /// False when some evaluated case lacks this source; the metric fields
    /// are then absent.
    pub available: bool,
    pub classification: Option<ClassificationReport>,
    pub calibration: Option<CalibrationSummary>,
    pub reliability: Option<Vec<ReliabilityRow>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveReport {
    pub rank_source: Source,
    pub classification_source: Source,
    pub auarc: f64,
    pub points: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionReport {
    pub rank_source: Source,
    pub rule: DeferralRule,
    pub theta: f64,
    pub deferred: usize,
    pub autonomous: usize,
    pub boundary_tie: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    /// Split the metrics were computed on (`None`: all labeled cases).
    pub evaluated_split: Option<Split>,
    pub n: usize,
    pub positives: usize,
    pub class_balance: f64,
    pub alpha: AlphaReport,
    pub gamma: f64,
    pub bins: usize,
    pub sources: Vec<SourceReport>,
    pub curves: Vec<CurveReport>,
    pub partition: Option<PartitionReport>,
    pub agreement: Option<AgreementReport>,
    pub pilot: Option<SessionAnalysis>,
}

impl RunReport {
    pub fn source(&self, source: Source) -> Option<&SourceReport> {
        self.sources.iter().find(|s| s.source == source)
    }

    pub fn curve(&self, rank: Source, classify: Source) -> Option<&CurveReport> {
        self.curves
            .iter()
            .find(|c| c.rank_source == rank && c.classification_source == classify)
    }
}

/// Records metrics are computed on: the test split when the dataset has
/// one, otherwise everything.
pub fn evaluation_records(manifest: &DatasetManifest) -> (Option<Split>, Vec<&PredictionRecord>) {
    if manifest.records.iter().any(|r| r.split == Some(Split::Test)) {
        (Some(Split::Test), manifest.split(Split::Test).collect())
    } else {
        (None, manifest.records.iter().collect())
    }
}

/// Chooses alpha: fixed from the config, or fitted on the validation split
/// (falling back to the evaluated cases when there is none).
pub fn resolve_alpha(manifest: &DatasetManifest, cfg: &RunConfig) -> Result<AlphaReport, ReportError> {
    if !cfg.fusion.fit_alpha {
        return Ok(AlphaReport {
            value: BlendWeight::new(cfg.fusion.alpha)?.alpha(),
            fitted: false,
            fitted_on: 0,
        });
    }
    let validation: Vec<&PredictionRecord> = manifest.split(Split::Validation).collect();
    let pool = if validation.is_empty() {
        evaluation_records(manifest).1
    } else {
        validation
    };
    let cases: Vec<FusionCase<f64>> = pool
        .iter()
        .filter_map(|r| Some((r.t_hat?, r.epsilon_hat?, r.label?)))
        .collect();
    let alpha = fit_alpha(&cases, cfg.fusion.grid_step)?;
    Ok(AlphaReport {
        value: alpha.alpha(),
        fitted: true,
        fitted_on: cases.len(),
    })
}

fn source_report(
    records: &[PredictionRecord],
    source: Source,
    cfg: &RunConfig,
) -> Result<SourceReport, ReportError> {
    let preds: Option<Vec<(Probability, BinaryLabel)>> = records
        .iter()
        .map(|r| Some((r.probability(source)?, r.label?)))
        .collect();
    let Some(preds) = preds else {
        return Ok(SourceReport {
            source,
            available: false,
            classification: None,
            calibration: None,
            reliability: None,
        });
    };
    let (p, y): (Vec<Probability>, Vec<BinaryLabel>) = preds.iter().copied().unzip();
    let width = bin_predictions(&preds, cfg.calibration.bins, BinStrategy::EqualWidth)?;
    Ok(SourceReport {
        source,
        available: true,
        classification: Some(classification_metrics(&p, &y, 0.5)?),
        calibration: Some(summarize(&preds, &cfg.calibration)?),
        reliability: Some(reliability_data(&width, cfg.calibration.gamma)),
    })
}

/// Labeled evaluation records, sorted by id, with `mu_hat` refreshed at
/// `alpha`. Sorting by id fixes the order of equal confidences everywhere
/// downstream.
pub fn prepared_records(manifest: &DatasetManifest, alpha: f64) -> Result<Vec<PredictionRecord>, ReportError> {
    let weight = BlendWeight::new(alpha)?;
    let (_, records) = evaluation_records(manifest);
    let mut out: Vec<PredictionRecord> = records
        .into_iter()
        .filter(|r| r.label.is_some())
        .cloned()
        .collect();
    out.sort_by(|a, b| a.id.cmp(&b.id));
    for r in &mut out {
        r.refresh_combined(weight);
    }
    Ok(out)
}

pub fn build_report(
    manifest: &DatasetManifest,
    cfg: &RunConfig,
    pilot: Option<SessionAnalysis>,
) -> Result<RunReport, ReportError> {
    let alpha = resolve_alpha(manifest, cfg)?;
    let (evaluated_split, _) = evaluation_records(manifest);
    let records = prepared_records(manifest, alpha.value)?;
    if records.is_empty() {
        return Err(ReportError::UnlabeledDataset);
    }
    let positives = records
        .iter()
        .filter(|r| r.label == Some(BinaryLabel::Positive))
        .count();

    let sources = Source::ALL
        .iter()
        .map(|&s| source_report(&records, s, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let available = |s: Source| sources.iter().any(|r| r.source == s && r.available);

    let mut curves = Vec::new();
    for rank in Source::ALL {
        for classify in Source::ALL {
            if !(available(rank) && available(classify)) {
                continue;
            }
            let curve = records_curve(&records, rank, classify)?;
            curves.push(CurveReport {
                rank_source: rank,
                classification_source: classify,
                auarc: auarc(&curve),
                points: curve.points,
            });
        }
    }

    let rank_source = cfg.deferral.rank_source;
    let partition_report = if available(rank_source) {
        let ranking = rank_for_deferral(&records, rank_source)?;
        let rule = cfg.deferral.rule();
        let (theta, boundary_tie) = match rule {
            DeferralRule::Budget(k) => {
                let t = threshold_for_budget(&ranking, k)?;
                (t.theta, t.boundary_tie)
            }
            DeferralRule::Threshold(_) => (rule.theta(&ranking)?, false),
        };
        let split = partition(&ranking, theta);
        Some(PartitionReport {
            rank_source,
            rule,
            theta,
            deferred: split.deferred.len(),
            autonomous: split.autonomous.len(),
            boundary_tie,
        })
    } else {
        None
    };

    let agreement = if available(Source::Verbalised) && available(Source::HiddenState) {
        Some(disagreement_attribution(&records)?)
    } else {
        None
    };

    Ok(RunReport {
        schema_version: SCHEMA_VERSION,
        evaluated_split,
        n: records.len(),
        positives,
        class_balance: positives as f64 / records.len() as f64,
        alpha,
        gamma: cfg.calibration.gamma,
        bins: cfg.calibration.bins,
        sources,
        curves,
        partition: partition_report,
        agreement,
        pilot,
    })
}

/// Reliability rows for one source at an arbitrary `gamma`.
pub fn reliability_for(
    manifest: &DatasetManifest,
    cfg: &RunConfig,
    source: Source,
    gamma: f64,
) -> Result<Vec<ReliabilityRow>, ReportError> {
    let alpha = resolve_alpha(manifest, cfg)?;
    let records = prepared_records(manifest, alpha.value)?;
    if records.is_empty() {
        return Err(ReportError::UnlabeledDataset);
    }
    let preds = records
        .iter()
        .map(|r| {
            let p = r.probability(source).ok_or_else(|| DeferralError::MissingSource {
                id: r.id.clone(),
                missing: source,
            })?;
            Ok((p, r.label.expect("prepared records are labeled")))
        })
        .collect::<Result<Vec<_>, ReportError>>()?;
    let report = bin_predictions(&preds, cfg.calibration.bins, BinStrategy::EqualWidth)?;
    crate::calibration::ece_imb(&report, gamma)?;
    Ok(reliability_data(&report, gamma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{generate_fixture, FixtureParams, MiscalibrationProfile};

    fn fixture(profile: MiscalibrationProfile) -> DatasetManifest {
        generate_fixture(&FixtureParams {
            n: 400,
            seed: 5,
            profile,
            ..FixtureParams::default()
        })
        .unwrap()
        .0
    }

    fn small_cfg() -> RunConfig {
        RunConfig {
            embedding_dim: 8,
            ..RunConfig::default()
        }
    }

    #[test]
    fn perfect_fixture_hits_ideal_values() {
        let report = build_report(&fixture(MiscalibrationProfile::Perfect), &small_cfg(), None).unwrap();
        for s in &report.sources {
            assert!(s.available);
            assert_eq!(s.classification.unwrap().f1, Some(1.0));
            assert_eq!(s.calibration.unwrap().ece, 0.0);
        }
        assert_eq!(report.curves.len(), 9);
        for c in &report.curves {
            assert_eq!(c.auarc, 1.0);
        }
        assert_eq!(report.evaluated_split, Some(Split::Test));
        assert_eq!(report.n, 120);
    }

    #[test]
    fn report_is_deterministic() {
        let m = fixture(MiscalibrationProfile::Calibrated);
        let a = serde_json::to_string(&build_report(&m, &small_cfg(), None).unwrap()).unwrap();
        let b = serde_json::to_string(&build_report(&m, &small_cfg(), None).unwrap()).unwrap();
        assert_eq!(a, b);
        assert!(a.contains("\"schema_version\":1"));
    }

    #[test]
    fn missing_hidden_state_gives_partial_report() {
        let mut m = fixture(MiscalibrationProfile::Calibrated);
        for r in &mut m.records {
            r.epsilon_hat = None;
            r.mu_hat = None;
        }
        let report = build_report(&m, &small_cfg(), None).unwrap();
        assert!(report.source(Source::Verbalised).unwrap().available);
        let hidden = report.source(Source::HiddenState).unwrap();
        assert!(!hidden.available && hidden.classification.is_none());
        assert!(!report.source(Source::Combined).unwrap().available);
        assert_eq!(report.curves.len(), 1);
        assert!(report.agreement.is_none());
        // default rank source is the hidden state
        assert!(report.partition.is_none());
    }

    #[test]
    fn unlabeled_dataset_is_rejected() {
        let mut m = fixture(MiscalibrationProfile::Calibrated);
        for r in &mut m.records {
            r.label = None;
        }
        assert!(matches!(
            build_report(&m, &small_cfg(), None),
            Err(ReportError::UnlabeledDataset)
        ));
    }

    #[test]
    fn fitted_alpha_is_recorded() {
        let m = fixture(MiscalibrationProfile::Calibrated);
        let mut cfg = small_cfg();
        cfg.fusion.fit_alpha = true;
        let report = build_report(&m, &cfg, None).unwrap();
        assert!(report.alpha.fitted);
        assert_eq!(report.alpha.fitted_on, 80);
        assert!((0.0..=1.0).contains(&report.alpha.value));
    }

    #[test]
    fn reliability_at_other_gamma() {
        let m = fixture(MiscalibrationProfile::Calibrated);
        let rows = reliability_for(&m, &small_cfg(), Source::Combined, 1.0).unwrap();
        let total: f64 = rows.iter().map(|r| r.imbalance_weight).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(reliability_for(&m, &small_cfg(), Source::Combined, 1.5).is_err());
    }
}
