//! Blending the verbalised and hidden-state sources into one prediction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::classification_metrics;
use crate::model::{BinaryLabel, Probability};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FusionError {
    #[error("both the verbalised and the hidden-state probability are required")]
    MissingSource,
    #[error("blend weight must lie in [0, 1], got {0}")]
    WeightRange(f64),
    #[error("grid step must lie in (0, 0.5], got {0}")]
    GridStep(f64),
    #[error("validation set is empty")]
    EmptyInput,
    #[error("validation set contains a single class")]
    SingleClass,
}

/// Weight `alpha` given to the hidden-state source; `1 - alpha` goes to the
/// verbalised source.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct BlendWeight<T: Scalar = f64>(T);

impl<T: Scalar> BlendWeight<T> {
    pub fn new(alpha: T) -> Result<Self, FusionError> {
        if alpha.is_nan() || alpha < T::zero() || alpha > T::one() {
            return Err(FusionError::WeightRange(alpha.to_f64_lossy()));
        }
        Ok(Self(alpha))
    }

    pub fn alpha(self) -> T {
        self.0
    }
}

impl<T: Scalar> Default for BlendWeight<T> {
    fn default() -> Self {
        Self(T::lit(0.5))
    }
}

impl<T: Scalar> Serialize for BlendWeight<T> {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.0.to_f64_lossy())
    }
}

impl<'de, T: Scalar> Deserialize<'de> for BlendWeight<T> {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = f64::deserialize(deserializer)?;
        let value = T::from_f64(raw).ok_or_else(|| serde::de::Error::custom("unrepresentable"))?;
        Self::new(value).map_err(serde::de::Error::custom)
    }
}

/// `alpha * epsilon_hat + (1 - alpha) * t_hat`, kept inside the input range.
pub fn combine<T: Scalar>(
    t_hat: Probability<T>,
    epsilon_hat: Probability<T>,
    alpha: BlendWeight<T>,
) -> Probability<T> {
    let (t, e, a) = (t_hat.value(), epsilon_hat.value(), alpha.alpha());
    let blended = a * e + (T::one() - a) * t;
    Probability::saturating(blended.max(t.min(e)).min(t.max(e)))
}

/// [`combine`] over optional sources.
pub fn combine_sources<T: Scalar>(
    t_hat: Option<Probability<T>>,
    epsilon_hat: Option<Probability<T>>,
    alpha: BlendWeight<T>,
) -> Result<Probability<T>, FusionError> {
    match (t_hat, epsilon_hat) {
        (Some(t), Some(e)) => Ok(combine(t, e, alpha)),
        _ => Err(FusionError::MissingSource),
    }
}

/// One validation case: `(t_hat, epsilon_hat, label)`.
pub type FusionCase<T> = (Probability<T>, Probability<T>, BinaryLabel);

/// Grid-searches `alpha` for the best F1 of the blend thresholded at 0.5.
///
/// Ties go to the grid point closest to 0.5, then to the smaller weight.
/// Grid points where the blend predicts no positives score an F1 of 0.
pub fn fit_alpha<T: Scalar>(
    validation: &[FusionCase<T>],
    grid_step: T,
) -> Result<BlendWeight<T>, FusionError> {
    if grid_step.is_nan() || grid_step <= T::zero() || grid_step > T::lit(0.5) {
        return Err(FusionError::GridStep(grid_step.to_f64_lossy()));
    }
    if validation.is_empty() {
        return Err(FusionError::EmptyInput);
    }
    let positives = validation.iter().filter(|c| c.2.is_positive()).count();
    if positives == 0 || positives == validation.len() {
        return Err(FusionError::SingleClass);
    }

    let labels: Vec<BinaryLabel> = validation.iter().map(|c| c.2).collect();
    let tie_tolerance = T::lit(1e-12);
    let half = T::lit(0.5);
    let mut best: Option<(f64, T)> = None;

    for alpha in alpha_grid(grid_step) {
        let weight = BlendWeight(alpha);
        let blended: Vec<Probability<T>> = validation
            .iter()
            .map(|&(t, e, _)| combine(t, e, weight))
            .collect();
        let f1 = classification_metrics(&blended, &labels, half)
            .expect("lengths match and input is nonempty")
            .f1
            .unwrap_or(0.0);
        let better = match best {
            None => true,
            Some((best_f1, best_alpha)) => {
                if f1 != best_f1 {
                    f1 > best_f1
                } else {
                    let d_new = (alpha - half).abs();
                    let d_old = (best_alpha - half).abs();
                    d_new + tie_tolerance < d_old
                }
            }
        };
        if better {
            best = Some((f1, alpha));
        }
    }
    Ok(BlendWeight(best.expect("grid is nonempty").1))
}

/// `{0, step, 2 step, ..., 1}`; 1 is always included.
fn alpha_grid<T: Scalar>(step: T) -> Vec<T> {
    let count = (T::one() / step + T::lit(1e-9)).floor().to_usize().unwrap_or(0);
    let mut grid: Vec<T> = (0..=count)
        .map(|i| (T::from_count(i) * step).min(T::one()))
        .collect();
    if grid.last().is_some_and(|&last| (T::one() - last) > T::lit(1e-9)) {
        grid.push(T::one());
    } else if let Some(last) = grid.last_mut() {
        *last = T::one();
    }
    grid
}
