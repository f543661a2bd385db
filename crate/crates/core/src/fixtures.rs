//! Synthetic labelled datasets with controllable source quality,
//! source correlation and calibration.
//!
//! Labels are Bernoulli with the requested positive rate. Each base source
//! sees a noisy score `a * (2y - 1) + z` and reports the Bayes posterior of
//! that score, so both sources are calibrated by construction; the score
//! noises are correlated to hit a target Pearson correlation between `t_hat`
//! and `epsilon_hat`. Embeddings are Gaussian class clusters.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{split_dataset, DatasetManifest};
use crate::evaluation::pearson_correlation;
use crate::fusion::BlendWeight;
use crate::guidance::GuidanceDocument;
use crate::model::{BinaryLabel, PredictionRecord, Probability};

/// Share of cases in the miscalibrated tail of [`MiscalibrationProfile::PositiveShift`].
pub const SHIFT_TAIL_FRACTION: f64 = 0.08;
/// Size of the calibration error planted by the shift profile.
pub const SHIFT_GAP: f64 = 0.5;
const CORRELATION_PROBE: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiscalibrationProfile {
    /// Both sources calibrated.
    #[default]
    Calibrated,
    /// The verbalised source is calibrated near zero but off by
    /// [`SHIFT_GAP`] across the rest of the unit interval, on a small tail
    /// of cases. The hidden-state source stays calibrated.
    PositiveShift,
    /// Both sources equal the label.
    Perfect,
}

impl MiscalibrationProfile {
    pub fn as_str(self) -> &'static str {
        match self {
            MiscalibrationProfile::Calibrated => "calibrated",
            MiscalibrationProfile::PositiveShift => "positive_shift",
            MiscalibrationProfile::Perfect => "perfect",
        }
    }
}

impl fmt::Display for MiscalibrationProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MiscalibrationProfile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "calibrated" | "none" => Ok(Self::Calibrated),
            "positive_shift" | "shift" => Ok(Self::PositiveShift),
            "perfect" => Ok(Self::Perfect),
            _ => Err(format!(
                "unknown profile `{s}` (expected calibrated, positive_shift or perfect)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("fixture parameter `{name}` out of range: {message}")]
pub struct ParameterRange {
    pub name: &'static str,
    pub message: String,
}

fn out_of_range(name: &'static str, message: impl Into<String>) -> ParameterRange {
    ParameterRange {
        name,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureParams {
    pub n: usize,
    /// Expected share of negative labels.
    pub imbalance: f64,
    /// Target Pearson correlation of `t_hat` and `epsilon_hat`
    /// (calibrated profile only).
    pub correlation: f64,
    pub profile: MiscalibrationProfile,
    pub dim: usize,
    /// Class separation of the verbalised score.
    pub verbal_separation: f64,
    /// Class separation of the hidden-state score and the embedding clusters.
    pub hidden_separation: f64,
    pub seed: u64,
}

impl Default for FixtureParams {
    fn default() -> Self {
        Self {
            n: 1000,
            imbalance: 0.95,
            correlation: 0.53,
            profile: MiscalibrationProfile::Calibrated,
            dim: 8,
            verbal_separation: 0.5,
            hidden_separation: 1.5,
            seed: 0,
        }
    }
}

impl FixtureParams {
    pub fn validate(&self) -> Result<(), ParameterRange> {
        if self.n == 0 {
            return Err(out_of_range("n", "need at least one case"));
        }
        if !(self.imbalance > 0.0 && self.imbalance < 1.0) {
            return Err(out_of_range("imbalance", "must lie strictly between 0 and 1"));
        }
        if !(-1.0..=1.0).contains(&self.correlation) {
            return Err(out_of_range("correlation", "must lie in [-1, 1]"));
        }
        if self.dim == 0 {
            return Err(out_of_range("dim", "must be positive"));
        }
        for (name, value) in [
            ("verbal_separation", self.verbal_separation),
            ("hidden_separation", self.hidden_separation),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(out_of_range(name, "must be positive"));
            }
        }
        if self.profile == MiscalibrationProfile::PositiveShift
            && 1.0 - self.imbalance < SHIFT_TAIL_FRACTION * 0.5
        {
            return Err(out_of_range(
                "imbalance",
                format!(
                    "the shift profile needs a positive rate of at least {}",
                    SHIFT_TAIL_FRACTION * 0.5
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSummary {
    pub n: usize,
    pub negatives: usize,
    pub positives: usize,
    /// Correlation used between the two score noises.
    pub noise_correlation: f64,
    /// Achieved Pearson correlation of `t_hat` and `epsilon_hat`.
    pub source_correlation: Option<f64>,
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z.clamp(-30.0, 30.0)).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Posterior `P(y = 1 | score)` for `score = a (2y - 1) + N(0, 1)`.
fn posterior(prior_logit: f64, separation: f64, score: f64) -> f64 {
    logistic(prior_logit + 2.0 * separation * score)
}

struct Scores {
    label: BinaryLabel,
    t_hat: f64,
    epsilon_hat: f64,
}

fn calibrated_case(rng: &mut impl Rng, p: &FixtureParams, noise_rho: f64) -> Scores {
    let positive_rate = 1.0 - p.imbalance;
    let y = rng.random_bool(positive_rate);
    let sign = if y { 1.0 } else { -1.0 };
    let z_t: f64 = StandardNormal.sample(rng);
    let w: f64 = StandardNormal.sample(rng);
    let z_e = noise_rho * z_t + (1.0 - noise_rho * noise_rho).max(0.0).sqrt() * w;
    let prior = logit(positive_rate);
    Scores {
        label: BinaryLabel::from_bool(y),
        t_hat: posterior(prior, p.verbal_separation, p.verbal_separation * sign + z_t),
        epsilon_hat: posterior(prior, p.hidden_separation, p.hidden_separation * sign + z_e),
    }
}

/// A bulk of confident negatives (uniform near zero, labels drawn from the
/// stated probability) plus a tail whose stated probability sits
/// [`SHIFT_GAP`] away from the probability the label was drawn with.
fn shifted_case(rng: &mut impl Rng, p: &FixtureParams) -> Scores {
    let positive_rate = 1.0 - p.imbalance;
    let bulk_mean = (positive_rate - SHIFT_TAIL_FRACTION * 0.5) / (1.0 - SHIFT_TAIL_FRACTION);
    let (stated, true_p) = if rng.random_bool(SHIFT_TAIL_FRACTION) {
        let true_p: f64 = rng.random_range(0.0..1.0);
        let stated = if true_p < 0.5 {
            true_p + SHIFT_GAP
        } else {
            true_p - SHIFT_GAP
        };
        (stated, true_p)
    } else {
        let q = rng.random_range(0.0..=2.0 * bulk_mean);
        (q, q)
    };
    let y = rng.random_bool(true_p.clamp(0.0, 1.0));
    let sign = if y { 1.0 } else { -1.0 };
    let z: f64 = StandardNormal.sample(rng);
    let score = p.hidden_separation * sign + z;
    Scores {
        label: BinaryLabel::from_bool(y),
        t_hat: stated,
        epsilon_hat: posterior(logit(positive_rate), p.hidden_separation, score),
    }
}

fn probe_correlation(p: &FixtureParams, noise_rho: f64) -> Option<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed ^ 0x9e37_79b9_7f4a_7c15);
    let (mut t, mut e) = (Vec::with_capacity(CORRELATION_PROBE), Vec::with_capacity(CORRELATION_PROBE));
    for _ in 0..CORRELATION_PROBE {
        let s = calibrated_case(&mut rng, p, noise_rho);
        t.push(s.t_hat);
        e.push(s.epsilon_hat);
    }
    pearson_correlation(&t, &e).ok()
}

/// Noise correlation giving the target source correlation, by bisection on
/// a fixed-seed probe sample.
fn solve_noise_correlation(p: &FixtureParams) -> Result<f64, ParameterRange> {
    let target = p.correlation;
    let at = |rho: f64| probe_correlation(p, rho).unwrap_or(0.0);
    let (lowest, highest) = (at(-1.0), at(1.0));
    if target < lowest - 0.02 || target > highest + 0.02 {
        return Err(out_of_range(
            "correlation",
            format!("reachable range with these separations is [{lowest:.3}, {highest:.3}]"),
        ));
    }
    let (mut lo, mut hi) = (-1.0f64, 1.0f64);
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if at(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn report_text(i: usize, label: BinaryLabel, rng: &mut impl Rng) -> String {
    const POSITIVE: [&str; 4] = [
        "disc protrusion abutting the traversing nerve root",
        "moderate narrowing of the lateral recess",
        "facet hypertrophy with foraminal encroachment",
        "broad-based bulge indenting the thecal sac",
    ];
    const NEGATIVE: [&str; 4] = [
        "no significant canal or foraminal stenosis",
        "disc height and signal preserved",
        "mild degenerative change without nerve contact",
        "normal alignment, no focal protrusion",
    ];
    let pool = if label.is_positive() && rng.random_bool(0.8) {
        &POSITIVE
    } else {
        &NEGATIVE
    };
    let first = pool[rng.random_range(0..pool.len())];
    let second = NEGATIVE[rng.random_range(0..NEGATIVE.len())];
    format!("Case {i}: {first}; {second}.")
}

fn guidance_for(t_hat: f64) -> GuidanceDocument {
    let hundredths = (t_hat * 100.0).round();
    let verdict = BinaryLabel::from_bool(hundredths >= 50.0);
    GuidanceDocument::new(
        verdict,
        hundredths / 100.0,
        "The report describes findings compatible with the condition at this level.",
        "No finding is described as unequivocal and several structures are reported normal.",
    )
    .expect("canned guidance is valid")
}

/// Builds a deterministic fixture. Splits follow 30/20/20/30.
pub fn generate_fixture(p: &FixtureParams) -> Result<(DatasetManifest, FixtureSummary), ParameterRange> {
    p.validate()?;
    let noise_rho = match p.profile {
        MiscalibrationProfile::Calibrated => solve_noise_correlation(p)?,
        _ => 0.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let width = p.n.to_string().len();
    let axis_scale = p.hidden_separation / (p.dim as f64).sqrt();
    let mut records = Vec::with_capacity(p.n);
    for i in 0..p.n {
        let s = match p.profile {
            MiscalibrationProfile::Calibrated => calibrated_case(&mut rng, p, noise_rho),
            MiscalibrationProfile::PositiveShift => shifted_case(&mut rng, p),
            MiscalibrationProfile::Perfect => {
                let y = BinaryLabel::from_bool(rng.random_bool(1.0 - p.imbalance));
                let v = y.as_scalar::<f64>();
                Scores {
                    label: y,
                    t_hat: v,
                    epsilon_hat: v,
                }
            }
        };
        let sign = if s.label.is_positive() { 1.0 } else { -1.0 };
        let embedding = (0..p.dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                sign * axis_scale + 0.5 * z
            })
            .collect();
        let mut record = PredictionRecord::new(format!("case-{i:0width$}"), report_text(i, s.label, &mut rng));
        record.label = Some(s.label);
        record.t_hat = Some(Probability::saturating(s.t_hat));
        record.epsilon_hat = Some(Probability::saturating(s.epsilon_hat));
        record.embedding = Some(embedding);
        record.guidance = Some(guidance_for(s.t_hat));
        record.refresh_combined(BlendWeight::default());
        records.push(record);
    }
    let manifest = split_dataset(DatasetManifest::new(records, p.dim), [0.3, 0.2, 0.2, 0.3], p.seed)
        .expect("fixed fractions are valid");

    let positives = manifest.positive_count();
    let t: Vec<f64> = manifest.records.iter().filter_map(|r| r.t_hat).map(|x| x.value()).collect();
    let e: Vec<f64> = manifest.records.iter().filter_map(|r| r.epsilon_hat).map(|x| x.value()).collect();
    let summary = FixtureSummary {
        n: p.n,
        negatives: p.n - positives,
        positives,
        noise_correlation: noise_rho,
        source_correlation: pearson_correlation(&t, &e).ok(),
    };
    Ok((manifest, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::{bin_predictions, ece, ece_imb, BinStrategy};
    use crate::dataset::write_dataset;

    fn params(n: usize) -> FixtureParams {
        FixtureParams {
            n,
            seed: 42,
            ..FixtureParams::default()
        }
    }

    #[test]
    fn imbalance_is_respected() {
        let (m, s) = generate_fixture(&params(1000)).unwrap();
        assert_eq!(s.negatives + s.positives, 1000);
        assert_eq!(s.negatives, 1000 - m.positive_count());
        // binomial sd is about 6.9
        assert!((s.negatives as i64 - 950).abs() < 35, "{}", s.negatives);
    }

    #[test]
    fn correlation_target_is_hit() {
        for target in [0.0, 0.53] {
            let p = FixtureParams {
                correlation: target,
                ..params(10_000)
            };
            let (_, s) = generate_fixture(&p).unwrap();
            let rho = s.source_correlation.unwrap();
            assert!((rho - target).abs() < 0.05, "target {target} got {rho}");
        }
    }

    #[test]
    fn unreachable_correlation_is_rejected() {
        let p = FixtureParams {
            correlation: -1.0,
            ..params(100)
        };
        assert!(generate_fixture(&p).is_err());
        let p = FixtureParams {
            imbalance: 1.0,
            ..params(100)
        };
        assert!(generate_fixture(&p).is_err());
    }

    #[test]
    fn same_seed_same_bytes() {
        let render = || {
            let (m, _) = generate_fixture(&params(200)).unwrap();
            let mut buf = Vec::new();
            write_dataset(&m, &mut buf).unwrap();
            buf
        };
        assert_eq!(render(), render());
    }

    #[test]
    fn shift_profile_hides_from_ece() {
        let p = FixtureParams {
            profile: MiscalibrationProfile::PositiveShift,
            ..params(20_000)
        };
        let (m, _) = generate_fixture(&p).unwrap();
        let preds: Vec<_> = m.records.iter().map(|r| (r.t_hat.unwrap(), r.label.unwrap())).collect();
        let report = bin_predictions(&preds, 10, BinStrategy::EqualWidth).unwrap();
        assert!(ece(&report).unwrap() < 0.05);
        assert!(ece_imb(&report, 0.3).unwrap() > 0.15);
    }

    #[test]
    fn perfect_profile() {
        let p = FixtureParams {
            profile: MiscalibrationProfile::Perfect,
            ..params(300)
        };
        let (m, _) = generate_fixture(&p).unwrap();
        for r in &m.records {
            assert_eq!(r.t_hat.unwrap().classify(), r.label.unwrap());
            assert_eq!(r.mu_hat.unwrap().value(), r.label.unwrap().as_scalar::<f64>());
        }
    }

    #[test]
    fn profile_names_parse() {
        for profile in [
            MiscalibrationProfile::Calibrated,
            MiscalibrationProfile::PositiveShift,
            MiscalibrationProfile::Perfect,
        ] {
            assert_eq!(profile.as_str().parse::<MiscalibrationProfile>(), Ok(profile));
        }
        assert!("wobbly".parse::<MiscalibrationProfile>().is_err());
    }
}
