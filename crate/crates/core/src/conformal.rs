//! Split conformal prediction.
//!
//! Scores: `1 − p̂_y` for classification and `|y − ŷ|` for regression. The
//! threshold `qhat` is the ⌈(n+1)(1−α)⌉-th smallest calibration score, with
//! `+∞` when that index exceeds n. Each resample pools calibration and test
//! rows, reshuffles them with a generator seeded by `mix_seed(seed, r)` and
//! splits them back at the original sizes.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{forward_last_layer, softmax_logits, ProbMatrix};
use crate::rng;
use crate::tensor_io::{ModelDump, SplitData, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConformalConfig {
    pub alpha: f64,
    pub resamples: usize,
    pub seed: u64,
}

impl Default for ConformalConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            resamples: 100,
            seed: 0,
        }
    }
}

impl ConformalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.resamples == 0 {
            return Err(Error::Config("resamples must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PredictionSet {
    Classes(Vec<usize>),
    /// `[prediction − radius, prediction + radius]`; `radius` may be `+∞`.
    Interval { prediction: f64, radius: f64 },
}

impl PredictionSet {
    /// Set cardinality or interval width.
    pub fn size(&self) -> f64 {
        match self {
            PredictionSet::Classes(c) => c.len() as f64,
            PredictionSet::Interval { radius, .. } => 2.0 * radius,
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, PredictionSet::Classes(c) if c.is_empty())
    }

    pub fn contains_class(&self, class: usize) -> bool {
        matches!(self, PredictionSet::Classes(c) if c.contains(&class))
    }

    pub fn contains_value(&self, y: f64) -> bool {
        match *self {
            PredictionSet::Interval { prediction, radius } => (y - prediction).abs() <= radius,
            PredictionSet::Classes(_) => false,
        }
    }

    pub fn bounds(&self) -> Option<(f64, f64)> {
        match *self {
            PredictionSet::Interval { prediction, radius } => {
                Some((prediction - radius, prediction + radius))
            }
            PredictionSet::Classes(_) => None,
        }
    }

    pub fn is_unbounded(&self) -> bool {
        matches!(self, PredictionSet::Interval { radius, .. } if radius.is_infinite())
    }
}

/// 1-indexed order statistic ⌈(n+1)(1−α)⌉. The 1e-9 slack absorbs the
/// representation error of decimal α so that exact products are not rounded up.
pub fn quantile_rank(n: usize, alpha: f64) -> usize {
    let x = (n as f64 + 1.0) * (1.0 - alpha);
    (x - 1e-9).ceil().max(1.0) as usize
}

pub fn conformal_quantile(scores: &[f64], alpha: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("conformal scores"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::validation("scores", "non-finite score"));
    }
    let k = quantile_rank(scores.len(), alpha);
    if k > scores.len() {
        return Ok(f64::INFINITY);
    }
    let mut buf = scores.to_vec();
    let (_, kth, _) = buf.select_nth_unstable_by(k - 1, f64::total_cmp);
    Ok(*kth)
}

pub fn score_classification(probs: &ProbMatrix, targets: &[usize]) -> Result<Vec<f64>> {
    if targets.len() != probs.len() {
        return Err(Error::validation(
            "targets",
            format!("{} targets for {} rows", targets.len(), probs.len()),
        ));
    }
    targets
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            probs
                .row(i)
                .get(y)
                .map(|p| 1.0 - p)
                .ok_or_else(|| {
                    Error::validation(
                        "targets",
                        format!("target out of range: {y} >= {}", probs.num_classes()),
                    )
                })
        })
        .collect()
}

pub fn score_regression(predictions: &[f64], targets: &[f64]) -> Result<Vec<f64>> {
    if predictions.len() != targets.len() {
        return Err(Error::validation(
            "targets",
            format!(
                "{} targets for {} predictions",
                targets.len(),
                predictions.len()
            ),
        ));
    }
    Ok(predictions
        .iter()
        .zip(targets)
        .map(|(p, y)| (y - p).abs())
        .collect())
}

/// `{k : 1 − p̂_k ≤ qhat}`; may be empty.
pub fn predict_set_classification(probs_row: &[f64], qhat: f64) -> PredictionSet {
    PredictionSet::Classes(
        probs_row
            .iter()
            .enumerate()
            .filter(|(_, &p)| 1.0 - p <= qhat)
            .map(|(k, _)| k)
            .collect(),
    )
}

pub fn predict_interval_regression(prediction: f64, qhat: f64) -> PredictionSet {
    PredictionSet::Interval {
        prediction,
        radius: qhat,
    }
}

/// Statistics of one calibration/test resample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResampleStat {
    pub index: usize,
    pub coverage: f64,
    /// Mean set size (classification) or mean interval width (regression).
    #[serde(with = "crate::real")]
    pub size: f64,
    pub empty_rate: f64,
    #[serde(with = "crate::real")]
    pub qhat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalResult {
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_set_size: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "crate::real::opt")]
    pub mean_interval_width: Option<f64>,
    pub coverage: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub empty_set_rate: Option<f64>,
    pub per_resample: Vec<ResampleStat>,
    #[serde(with = "crate::real")]
    pub qhat_last: f64,
}

impl ConformalResult {
    /// Set size or interval width, whichever applies.
    pub fn efficiency(&self) -> f64 {
        self.mean_set_size
            .or(self.mean_interval_width)
            .expect("one of set size / width is always present")
    }
}

/// Calibration and test rows stacked, with everything a resample needs.
enum Pool {
    Classification { probs: ProbMatrix, scores: Vec<f64> },
    Regression { predictions: Vec<f64>, scores: Vec<f64> },
}

impl Pool {
    fn scores(&self) -> &[f64] {
        match self {
            Pool::Classification { scores, .. } | Pool::Regression { scores, .. } => scores,
        }
    }
}

fn stack_features(a: &SplitData, b: &SplitData) -> Result<crate::tensor_io::Matrix<f64>> {
    let mut data = Vec::with_capacity(a.features.data().len() + b.features.data().len());
    data.extend_from_slice(a.features.data());
    data.extend_from_slice(b.features.data());
    crate::tensor_io::Matrix::new(a.len() + b.len(), a.features.cols(), data)
}

fn build_pool(dump: &ModelDump) -> Result<Pool> {
    let features = stack_features(&dump.calibration, &dump.test)?;
    let outputs = forward_last_layer(&features, &dump.last_layer)?;
    match dump.task {
        TaskSpec::Classification { .. } => {
            let mut labels = dump.calibration.targets.class_labels().unwrap_or_default();
            labels.extend(dump.test.targets.class_labels().unwrap_or_default());
            let probs = softmax_logits(&outputs)?;
            let scores = score_classification(&probs, &labels)?;
            Ok(Pool::Classification { probs, scores })
        }
        TaskSpec::Regression { .. } => {
            let mut targets = dump.calibration.targets.as_values().unwrap_or_default().to_vec();
            targets.extend_from_slice(dump.test.targets.as_values().unwrap_or_default());
            let predictions = outputs.into_data();
            let scores = score_regression(&predictions, &targets)?;
            Ok(Pool::Regression {
                predictions,
                scores,
            })
        }
    }
}

fn run_resample(pool: &Pool, n_cal: usize, alpha: f64, seed: u64, index: usize) -> Result<ResampleStat> {
    let scores = pool.scores();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.shuffle(&mut rng::stream(seed, index as u64));
    let (cal, test) = order.split_at(n_cal);
    let cal_scores: Vec<f64> = cal.iter().map(|&i| scores[i]).collect();
    let qhat = conformal_quantile(&cal_scores, alpha)?;

    let mut covered = 0usize;
    let mut size_sum = 0.0;
    let mut empty = 0usize;
    for &i in test {
        // Membership of the true target is exactly `score <= qhat`.
        if scores[i] <= qhat {
            covered += 1;
        }
        match pool {
            Pool::Classification { probs, .. } => {
                let set = predict_set_classification(probs.row(i), qhat);
                if set.is_empty() {
                    empty += 1;
                }
                size_sum += set.size();
            }
            Pool::Regression { predictions, .. } => {
                size_sum += predict_interval_regression(predictions[i], qhat).size();
            }
        }
    }
    let n_test = test.len() as f64;
    Ok(ResampleStat {
        index,
        coverage: covered as f64 / n_test,
        size: size_sum / n_test,
        empty_rate: empty as f64 / n_test,
        qhat,
    })
}

/// Split conformal prediction over `config.resamples` reshuffles of the
/// calibration and test splits.
pub fn run_split_cp(dump: &ModelDump, config: &ConformalConfig) -> Result<ConformalResult> {
    config.validate()?;
    if dump.calibration.is_empty() {
        return Err(Error::EmptyInput("calibration split"));
    }
    if dump.test.is_empty() {
        return Err(Error::EmptyInput("test split"));
    }
    let pool = build_pool(dump)?;
    let n_cal = dump.calibration.len();
    let mut per_resample = (0..config.resamples)
        .into_par_iter()
        .map(|r| run_resample(&pool, n_cal, config.alpha, config.seed, r))
        .collect::<Result<Vec<_>>>()?;
    per_resample.sort_by_key(|s| s.index);

    let count = per_resample.len() as f64;
    let mean = |f: fn(&ResampleStat) -> f64| per_resample.iter().map(f).sum::<f64>() / count;
    let coverage = mean(|s| s.coverage);
    let size = mean(|s| s.size);
    let qhat_last = per_resample.last().map_or(f64::NAN, |s| s.qhat);
    let classification = dump.task.is_classification();
    Ok(ConformalResult {
        alpha: config.alpha,
        mean_set_size: classification.then_some(size),
        mean_interval_width: (!classification).then_some(size),
        coverage,
        empty_set_rate: classification.then(|| mean(|s| s.empty_rate)),
        per_resample,
        qhat_last,
    })
}
