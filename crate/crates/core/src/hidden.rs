//! Hidden-state pooling and the one-hidden-layer classifier `g`.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BinaryLabel, Probability};
use crate::scalar::Scalar;

/// Logistic inputs are clamped to this magnitude before exponentiation.
const LOGIT_CLAMP: f64 = 30.0;
const FILE_MAGIC: &str = "gdefer-mlp";

#[derive(Debug, Error)]
pub enum HiddenError {
    #[error("hidden-state sequence has no rows")]
    EmptySequence,
    #[error("expected dimension {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite value in input")]
    NonFinite,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("training data needs both classes")]
    SingleClass,
    #[error("invalid training configuration: {0}")]
    Config(&'static str),
    #[error("classifier file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Final-layer hidden states for one case: `K` rows of width `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStateSequence<T: Scalar = f64> {
    rows: Vec<Vec<T>>,
    d: usize,
}

impl<T: Scalar> HiddenStateSequence<T> {
    pub fn new(rows: Vec<Vec<T>>) -> Result<Self, HiddenError> {
        let d = rows.first().ok_or(HiddenError::EmptySequence)?.len();
        for row in &rows {
            if row.len() != d {
                return Err(HiddenError::DimensionMismatch {
                    expected: d,
                    found: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(HiddenError::NonFinite);
            }
        }
        Ok(Self { rows, d })
    }

    pub fn rows(&self) -> &[Vec<T>] {
        &self.rows
    }

    pub fn token_count(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.d
    }
}

/// Mean over tokens.
pub fn pool_hidden_states<T: Scalar>(seq: &HiddenStateSequence<T>) -> Vec<T> {
    let mut out = vec![T::zero(); seq.d];
    for row in &seq.rows {
        for (acc, &v) in out.iter_mut().zip(row) {
            *acc = *acc + v;
        }
    }
    let k = T::from_count(seq.rows.len());
    out.iter_mut().for_each(|v| *v = *v / k);
    out
}

/// `d -> H (tanh) -> 1 (logistic)`. Parameters are stored flat as
/// `w1 (H x d, row-major) | b1 (H) | w2 (H) | b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenClassifier<T: Scalar = f64> {
    d: usize,
    hidden: usize,
    params: Vec<T>,
    seed: u64,
    epochs: usize,
}

pub fn parameter_count(d: usize, hidden: usize) -> usize {
    hidden * d + 2 * hidden + 1
}

fn logistic<T: Scalar>(z: T) -> T {
    let bound = T::lit(LOGIT_CLAMP);
    let z = z.max(-bound).min(bound);
    T::one() / (T::one() + (-z).exp())
}

/// `ln(1 + e^z)` without overflow.
fn softplus<T: Scalar>(z: T) -> T {
    z.max(T::zero()) + (-z.abs()).exp().ln_1p()
}

impl<T: Scalar> HiddenClassifier<T> {
    /// All-zero classifier; predicts 0.5 everywhere.
    pub fn zeros(d: usize, hidden: usize) -> Self {
        Self {
            d,
            hidden,
            params: vec![T::zero(); parameter_count(d, hidden)],
            seed: 0,
            epochs: 0,
        }
    }

    pub fn from_params(d: usize, hidden: usize, params: Vec<T>) -> Result<Self, HiddenError> {
        let expected = parameter_count(d, hidden);
        if params.len() != expected {
            return Err(HiddenError::DimensionMismatch {
                expected,
                found: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(HiddenError::NonFinite);
        }
        Ok(Self {
            d,
            hidden,
            params,
            seed: 0,
            epochs: 0,
        })
    }

    /// Uniform in `±1/sqrt(fan_in)` for weights, zero biases.
    pub fn initialize(d: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut clf = Self::zeros(d, hidden);
        let w1_bound = 1.0 / (d.max(1) as f64).sqrt();
        let w2_bound = 1.0 / (hidden.max(1) as f64).sqrt();
        for w in &mut clf.params[..hidden * d] {
            *w = T::lit(rng.random_range(-w1_bound..=w1_bound));
        }
        let w2 = hidden * d + hidden;
        for w in &mut clf.params[w2..w2 + hidden] {
            *w = T::lit(rng.random_range(-w2_bound..=w2_bound));
        }
        clf
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn epochs(&self) -> usize {
        self.epochs
    }

    fn check_dim(&self, h: &[T]) -> Result<(), HiddenError> {
        if h.len() != self.d {
            return Err(HiddenError::DimensionMismatch {
                expected: self.d,
                found: h.len(),
            });
        }
        Ok(())
    }

    /// Hidden activations and the output logit.
    fn forward(&self, h: &[T], activations: &mut [T]) -> T {
        let (w1, rest) = self.params.split_at(self.hidden * self.d);
        let (b1, rest) = rest.split_at(self.hidden);
        let (w2, b2) = rest.split_at(self.hidden);
        let mut logit = b2[0];
        for (k, a) in activations.iter_mut().enumerate() {
            let row = &w1[k * self.d..(k + 1) * self.d];
            let z = row.iter().zip(h).fold(b1[k], |acc, (&w, &x)| acc + w * x);
            *a = z.tanh();
            logit = logit + w2[k] * *a;
        }
        logit
    }

    /// `g(h)`, strictly inside (0, 1).
    pub fn predict(&self, h: &[T]) -> Result<Probability<T>, HiddenError> {
        self.check_dim(h)?;
        let mut act = vec![T::zero(); self.hidden];
        let p = logistic(self.forward(h, &mut act));
        let eps = T::epsilon();
        Ok(Probability::saturating(p.max(eps).min(T::one() - eps)))
    }

    fn weight_penalty(&self, l2: T) -> T {
        if l2 == T::zero() {
            return T::zero();
        }
        let hd = self.hidden * self.d;
        let w2 = &self.params[hd + self.hidden..hd + 2 * self.hidden];
        let sq: T = self.params[..hd].iter().chain(w2).map(|&w| w * w).sum();
        l2 * sq / T::lit(2.0)
    }

    /// Mean cross-entropy plus `l2/2 * ||weights||^2`, and its gradient.
    pub fn loss_and_gradient(
        &self,
        batch: &[(&[T], BinaryLabel)],
        l2: T,
    ) -> Result<(T, Vec<T>), HiddenError> {
        if batch.is_empty() {
            return Err(HiddenError::EmptyBatch);
        }
        let (d, hdim) = (self.d, self.hidden);
        let hd = hdim * d;
        let w2 = &self.params[hd + hdim..hd + 2 * hdim];
        let mut grad = vec![T::zero(); self.params.len()];
        let mut act = vec![T::zero(); hdim];
        let mut loss = T::zero();
        for (x, y) in batch {
            self.check_dim(x)?;
            let z = self.forward(x, &mut act);
            let y: T = y.as_scalar();
            loss = loss + softplus(z) - y * z;
            let dz = logistic(z) - y;
            grad[hd + 2 * hdim] = grad[hd + 2 * hdim] + dz;
            for k in 0..hdim {
                grad[hd + hdim + k] = grad[hd + hdim + k] + dz * act[k];
                let dpre = dz * w2[k] * (T::one() - act[k] * act[k]);
                grad[hd + k] = grad[hd + k] + dpre;
                for (g, &xj) in grad[k * d..(k + 1) * d].iter_mut().zip(x.iter()) {
                    *g = *g + dpre * xj;
                }
            }
        }
        let n = T::from_count(batch.len());
        grad.iter_mut().for_each(|g| *g = *g / n);
        if l2 != T::zero() {
            for i in (0..hd).chain(hd + hdim..hd + 2 * hdim) {
                grad[i] = grad[i] + l2 * self.params[i];
            }
        }
        Ok((loss / n + self.weight_penalty(l2), grad))
    }

    pub fn loss(&self, batch: &[(&[T], BinaryLabel)], l2: T) -> Result<T, HiddenError> {
        self.loss_and_gradient(batch, l2).map(|(loss, _)| loss)
    }

    /// Header line then one parameter per line.
    pub fn save(&self, mut out: impl Write) -> Result<(), HiddenError> {
        writeln!(
            out,
            "{FILE_MAGIC} d={} hidden={} seed={} epochs={}",
            self.d, self.hidden, self.seed, self.epochs
        )?;
        for p in &self.params {
            writeln!(out, "{p}")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(input: impl BufRead) -> Result<Self, HiddenError> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| HiddenError::Format("missing header".into()))??;
        let mut fields = header.split_whitespace();
        if fields.next() != Some(FILE_MAGIC) {
            return Err(HiddenError::Format("unrecognised header".into()));
        }
        let (mut d, mut hidden, mut seed, mut epochs) = (None, None, 0u64, 0usize);
        for field in fields {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| HiddenError::Format(format!("bad header field `{field}`")))?;
            let bad = || HiddenError::Format(format!("bad value for `{key}`"));
            match key {
                "d" => d = Some(value.parse::<usize>().map_err(|_| bad())?),
                "hidden" => hidden = Some(value.parse::<usize>().map_err(|_| bad())?),
                "seed" => seed = value.parse().map_err(|_| bad())?,
                "epochs" => epochs = value.parse().map_err(|_| bad())?,
                _ => return Err(HiddenError::Format(format!("unknown header field `{key}`"))),
            }
        }
        let (d, hidden) = match (d, hidden) {
            (Some(d), Some(h)) => (d, h),
            _ => return Err(HiddenError::Format("header lacks d or hidden".into())),
        };
        let mut params = Vec::with_capacity(parameter_count(d, hidden));
        for (i, line) in lines.enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let value = line
                .parse::<T>()
                .map_err(|_| HiddenError::Format(format!("parameter line {}", i + 2)))?;
            params.push(value);
        }
        let mut clf = Self::from_params(d, hidden, params)?;
        clf.seed = seed;
        clf.epochs = epochs;
        Ok(clf)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub l2: f64,
    pub hidden_width: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 200,
            batch_size: None,
            seed: 0,
            l2: 1e-4,
            hidden_width: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), HiddenError> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(HiddenError::Config("learning rate must be finite and non-negative"));
        }
        if self.epochs == 0 {
            return Err(HiddenError::Config("epochs must be positive"));
        }
        if self.batch_size == Some(0) {
            return Err(HiddenError::Config("batch size must be positive"));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(HiddenError::Config("l2 penalty must be finite and non-negative"));
        }
        if self.hidden_width == 0 {
            return Err(HiddenError::Config("hidden width must be positive"));
        }
        Ok(())
    }
}

/// A trained classifier with its full-batch loss before training and after
/// every epoch.
#[derive(Debug, Clone)]
pub struct Trained<T: Scalar = f64> {
    pub classifier: HiddenClassifier<T>,
    pub losses: Vec<T>,
}

/// Deterministic for a fixed seed. Full-batch steps back off (halving the
/// step) whenever a step would raise the loss, so the recorded losses never
/// increase.
pub fn train<T: Scalar>(
    examples: &[(Vec<T>, BinaryLabel)],
    cfg: &TrainConfig,
) -> Result<Trained<T>, HiddenError> {
    cfg.validate()?;
    let d = examples.first().ok_or(HiddenError::SingleClass)?.0.len();
    for (x, _) in examples {
        if x.len() != d {
            return Err(HiddenError::DimensionMismatch {
                expected: d,
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(HiddenError::NonFinite);
        }
    }
    let positives = examples.iter().filter(|(_, y)| y.is_positive()).count();
    if positives == 0 || positives == examples.len() {
        return Err(HiddenError::SingleClass);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut clf = HiddenClassifier::<T>::initialize(d, cfg.hidden_width, &mut rng);
    clf.seed = cfg.seed;
    clf.epochs = cfg.epochs;
    let l2 = T::lit(cfg.l2);
    let lr = T::lit(cfg.learning_rate);
    let full: Vec<(&[T], BinaryLabel)> = examples.iter().map(|(x, y)| (x.as_slice(), *y)).collect();

    let mut losses = Vec::with_capacity(cfg.epochs + 1);
    let (mut loss, mut grad) = clf.loss_and_gradient(&full, l2)?;
    losses.push(loss);
    let mut order: Vec<usize> = (0..full.len()).collect();

    for _ in 0..cfg.epochs {
        match cfg.batch_size {
            None => {
                if lr == T::zero() {
                    losses.push(loss);
                    continue;
                }
                // if no halving helps, the parameters stay put this epoch
                let mut step = lr;
                for _ in 0..40 {
                    let mut trial = clf.clone();
                    for (p, g) in trial.params.iter_mut().zip(&grad) {
                        *p = *p - step * *g;
                    }
                    let (trial_loss, trial_grad) = trial.loss_and_gradient(&full, l2)?;
                    if trial_loss <= loss && trial.params.iter().all(|p| p.is_finite()) {
                        clf = trial;
                        loss = trial_loss;
                        grad = trial_grad;
                        break;
                    }
                    step = step / T::lit(2.0);
                }
            }
            Some(size) => {
                order.shuffle(&mut rng);
                for chunk in order.chunks(size) {
                    let batch: Vec<(&[T], BinaryLabel)> = chunk.iter().map(|&i| full[i]).collect();
                    let (_, g) = clf.loss_and_gradient(&batch, l2)?;
                    for (p, g) in clf.params.iter_mut().zip(&g) {
                        *p = *p - lr * *g;
                    }
                }
                (loss, grad) = clf.loss_and_gradient(&full, l2)?;
            }
        }
        losses.push(loss);
    }
    Ok(Trained {
        classifier: clf,
        losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use proptest::prelude::*;
    use rand_distr::{Distribution, Normal};

    fn label(i: usize) -> BinaryLabel {
        BinaryLabel::from_bool(i % 2 == 1)
    }

    /// Two Gaussian clusters at `±2` along every axis (sigma 0.5).
    fn clusters(n: usize, d: usize, seed: u64) -> Vec<(Vec<f64>, BinaryLabel)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.5).unwrap();
        (0..n)
            .map(|i| {
                let y = label(i);
                let centre = if y.is_positive() { 2.0 } else { -2.0 } / (d as f64).sqrt();
                let x = (0..d).map(|_| centre + noise.sample(&mut rng) / (d as f64).sqrt()).collect();
                (x, y)
            })
            .collect()
    }

    fn max_relative_error(clf: &HiddenClassifier<f64>, batch: &[(&[f64], BinaryLabel)], l2: f64) -> f64 {
        let (_, analytic) = clf.loss_and_gradient(batch, l2).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for (i, &g) in analytic.iter().enumerate() {
            let mut plus = clf.clone();
            plus.params[i] += h;
            let mut minus = clf.clone();
            minus.params[i] -= h;
            let numeric = (plus.loss(batch, l2).unwrap() - minus.loss(batch, l2).unwrap()) / (2.0 * h);
            let scale = g.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((g - numeric).abs() / scale);
        }
        worst
    }

    #[test]
    fn pooling() {
        let one = HiddenStateSequence::new(vec![vec![1.0, -2.0]]).unwrap();
        assert_eq!(pool_hidden_states(&one), vec![1.0, -2.0]);
        let two = HiddenStateSequence::new(vec![vec![1.0, 3.0], vec![3.0, 5.0]]).unwrap();
        assert_eq!(pool_hidden_states(&two), vec![2.0, 4.0]);
        let zero = HiddenStateSequence::new(vec![vec![0.0; 3]; 4]).unwrap();
        assert_eq!(pool_hidden_states(&zero), vec![0.0; 3]);
        assert!(matches!(
            HiddenStateSequence::<f64>::new(vec![]),
            Err(HiddenError::EmptySequence)
        ));
        assert!(matches!(
            HiddenStateSequence::new(vec![vec![1.0], vec![1.0, 2.0]]),
            Err(HiddenError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_classifier() {
        let clf = HiddenClassifier::<f64>::zeros(3, 4);
        assert_eq!(clf.predict(&[1.0, 2.0, 3.0]).unwrap().value(), 0.5);
        let xs = [vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        let batch = [(xs[0].as_slice(), BinaryLabel::Positive), (xs[1].as_slice(), BinaryLabel::Negative)];
        let loss = clf.loss(&batch, 0.0).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-9);
        assert!(matches!(clf.predict(&[1.0]), Err(HiddenError::DimensionMismatch { .. })));
        assert!(matches!(clf.loss(&[], 0.0), Err(HiddenError::EmptyBatch)));
    }

    #[test]
    fn saturated_prediction_stays_inside_unit_interval() {
        let mut clf = HiddenClassifier::<f64>::zeros(1, 1);
        let n = clf.params.len();
        clf.params[n - 1] = 1e6;
        let p = clf.predict(&[0.0]).unwrap().value();
        assert!(p < 1.0 && p > 0.0);
        let x = [0.0];
        let loss = clf.loss(&[(&x[..], BinaryLabel::Positive)], 0.0).unwrap();
        assert!(loss < 1e-12);
        let clf32 = HiddenClassifier::<f32>::from_params(1, 1, vec![0.0, 0.0, 0.0, 1e6]).unwrap();
        let p = clf32.predict(&[0.0]).unwrap().value();
        assert!(p < 1.0 && p > 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let d = rng.random_range(1..=8);
            let hidden = rng.random_range(1..=4);
            let mut clf = HiddenClassifier::<f64>::initialize(d, hidden, &mut rng);
            for p in clf.params_mut() {
                *p += rng.random_range(-0.5..0.5);
            }
            let n = rng.random_range(1..=6);
            let xs: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect();
            let batch: Vec<(&[f64], BinaryLabel)> = xs
                .iter()
                .map(|x| (x.as_slice(), BinaryLabel::from_bool(rng.random_bool(0.5))))
                .collect();
            let l2 = rng.random_range(0.0..0.1);
            let err = max_relative_error(&clf, &batch, l2);
            assert!(err < 1e-4, "relative error {err}");
        }
    }

    #[test]
    fn separable_clusters_are_learned() {
        let data = clusters(200, 8, 1);
        let (train_set, held_out) = data.split_at(140);
        let cfg = TrainConfig {
            epochs: 150,
            hidden_width: 16,
            seed: 3,
            ..TrainConfig::default()
        };
        let trained = train(train_set, &cfg).unwrap();
        let correct = held_out
            .iter()
            .filter(|(x, y)| trained.classifier.predict(x).unwrap().classify() == *y)
            .count();
        assert!(correct as f64 / held_out.len() as f64 >= 0.95);
        for w in trained.losses.windows(2) {
            assert!(w[1] <= w[0]);
        }
        let centroid = vec![2.0 / 8f64.sqrt(); 8];
        assert!(trained.classifier.predict(&centroid).unwrap().value() > 0.9);
    }

    #[test]
    fn training_is_deterministic_and_zero_rate_is_inert() {
        let data = clusters(40, 4, 2);
        let cfg = TrainConfig {
            epochs: 20,
            hidden_width: 5,
            seed: 9,
            ..TrainConfig::default()
        };
        let a = train(&data, &cfg).unwrap().classifier;
        let b = train(&data, &cfg).unwrap().classifier;
        assert_eq!(a.params(), b.params());

        let frozen = TrainConfig {
            learning_rate: 0.0,
            ..cfg
        };
        let trained = train(&data, &frozen).unwrap().classifier;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let init = HiddenClassifier::<f64>::initialize(4, 5, &mut rng);
        assert_eq!(trained.params(), init.params());

        let mini = TrainConfig {
            batch_size: Some(8),
            ..cfg
        };
        let m1 = train(&data, &mini).unwrap().classifier;
        let m2 = train(&data, &mini).unwrap().classifier;
        assert_eq!(m1.params(), m2.params());
    }

    #[test]
    fn training_preconditions() {
        let one_class = vec![(vec![0.0], BinaryLabel::Positive), (vec![1.0], BinaryLabel::Positive)];
        assert!(matches!(
            train(&one_class, &TrainConfig::default()),
            Err(HiddenError::SingleClass)
        ));
        let ragged = vec![(vec![0.0], BinaryLabel::Positive), (vec![1.0, 2.0], BinaryLabel::Negative)];
        assert!(matches!(
            train(&ragged, &TrainConfig::default()),
            Err(HiddenError::DimensionMismatch { .. })
        ));
        let bad = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(bad.validate(), Err(HiddenError::Config(_))));
    }

    #[test]
    fn persistence_round_trip() {
        let data = clusters(30, 3, 4);
        let cfg = TrainConfig {
            epochs: 5,
            hidden_width: 4,
            seed: 11,
            ..TrainConfig::default()
        };
        let clf = train(&data, &cfg).unwrap().classifier;
        let mut buf = Vec::new();
        clf.save(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("gdefer-mlp d=3 hidden=4 seed=11 epochs=5\n"));
        let back = HiddenClassifier::<f64>::load(buf.as_slice()).unwrap();
        assert_eq!(back, clf);
        assert!(HiddenClassifier::<f64>::load("gdefer-mlp d=3 hidden=4\n1.0\n".as_bytes()).is_err());
        assert!(HiddenClassifier::<f64>::load("nonsense\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn pooling_is_linear(
            rows in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 1..6),
            alpha in -3.0f64..3.0,
            beta in -3.0f64..3.0,
            shift in -5.0f64..5.0,
        ) {
            let other: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v * 0.5 + shift).collect()).collect();
            let mixed: Vec<Vec<f64>> = rows
                .iter()
                .zip(&other)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| alpha * x + beta * y).collect())
                .collect();
            let pa = pool_hidden_states(&HiddenStateSequence::new(rows).unwrap());
            let pb = pool_hidden_states(&HiddenStateSequence::new(other).unwrap());
            let pm = pool_hidden_states(&HiddenStateSequence::new(mixed).unwrap());
            for j in 0..3 {
                prop_assert!((pm[j] - (alpha * pa[j] + beta * pb[j])).abs() < 1e-9);
            }
        }

        #[test]
        fn predictions_strictly_inside(
            params in prop::collection::vec(-50.0f64..50.0, parameter_count(2, 2)),
            x in prop::collection::vec(-100.0f64..100.0, 2),
        ) {
            let clf = HiddenClassifier::from_params(2, 2, params).unwrap();
            let p = clf.predict(&x).unwrap().value();
            prop_assert!(p > 0.0 && p < 1.0);
        }
    }
}
