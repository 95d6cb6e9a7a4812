//! Point-prediction and probabilistic quality measures.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_io::{LastLayer, Matrix};

/// Lower clamp applied to probabilities before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-15;
pub const DEFAULT_ECE_BINS: usize = 15;
const ROW_SUM_TOL: f64 = 1e-9;

/// Row-stochastic n x K matrix of predicted class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix(Matrix<f64>);

impl ProbMatrix {
    pub fn new(probs: Matrix<f64>) -> Result<Self> {
        for (i, row) in probs.row_iter().enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::validation(
                    "probs",
                    format!("row {i} has an entry outside [0, 1]"),
                ));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::validation(
                    "probs",
                    format!("row {i} sums to {sum}"),
                ));
            }
        }
        Ok(Self(probs))
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        Self::new(Matrix::from_rows(cols, rows)?)
    }

    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.rows() == 0
    }

    pub fn num_classes(&self) -> usize {
        self.0.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn matrix(&self) -> &Matrix<f64> {
        &self.0
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

fn softmax_row(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_logits(logits: &Matrix<f64>) -> Result<ProbMatrix> {
    if let Some((r, c)) = logits.first_non_finite() {
        return Err(Error::validation(
            "logits",
            format!("non-finite value at row {r}, col {c}"),
        ));
    }
    if logits.cols() == 0 {
        return Err(Error::validation("logits", "zero classes"));
    }
    let mut probs = Matrix::zeros(logits.rows(), logits.cols());
    let k = logits.cols();
    let mut buf = vec![0.0; k];
    for (i, row) in logits.row_iter().enumerate() {
        softmax_row(row, &mut buf);
        for (j, &p) in buf.iter().enumerate() {
            probs.set(i, j, p);
        }
    }
    Ok(ProbMatrix(probs))
}

/// `features · weightsᵀ + bias`, one output row per feature row.
pub fn forward_last_layer(features: &Matrix<f64>, layer: &LastLayer) -> Result<Matrix<f64>> {
    let d = layer.input_dim();
    let k = layer.output_dim();
    if features.cols() != d {
        return Err(Error::validation(
            "features",
            format!(
                "feature dim mismatch: features have {} columns, weights have {d}",
                features.cols()
            ),
        ));
    }
    if layer.bias.shape() != (k, 1) {
        return Err(Error::validation(
            "last_layer.bias",
            format!("shape {:?}, expected ({k}, 1)", layer.bias.shape()),
        ));
    }
    let mut out = Matrix::zeros(features.rows(), k);
    for (i, phi) in features.row_iter().enumerate() {
        for c in 0..k {
            let w = layer.weights.row(c);
            let dot: f64 = w.iter().zip(phi).map(|(a, b)| a * b).sum();
            out.set(i, c, dot + layer.bias.get(c, 0));
        }
    }
    Ok(out)
}

fn check_targets(n: usize, targets: &[usize], k: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::EmptyInput("no samples"));
    }
    if targets.len() != n {
        return Err(Error::validation(
            "targets",
            format!("{} targets for {n} predictions", targets.len()),
        ));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
        return Err(Error::validation(
            "targets",
            format!("target out of range: {bad} >= {k}"),
        ));
    }
    Ok(())
}

pub fn accuracy(probs: &ProbMatrix, targets: &[usize]) -> Result<f64> {
    check_targets(probs.len(), targets, probs.num_classes())?;
    let correct = targets
        .iter()
        .enumerate()
        .filter(|(i, &t)| argmax(probs.row(*i)) == t)
        .count();
    Ok(correct as f64 / targets.len() as f64)
}

pub fn mae(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::EmptyInput("no samples"));
    }
    if predictions.len() != targets.len() {
        return Err(Error::validation(
            "targets",
            format!("{} targets for {} predictions", targets.len(), predictions.len()),
        ));
    }
    let total: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, y)| (p - y).abs())
        .sum();
    Ok(total / predictions.len() as f64)
}

/// Summed negative log-likelihood of the true classes.
pub fn nll_classification(probs: &ProbMatrix, targets: &[usize]) -> Result<f64> {
    check_targets(probs.len(), targets, probs.num_classes())?;
    Ok(targets
        .iter()
        .enumerate()
        .map(|(i, &t)| -probs.row(i)[t].max(PROB_FLOOR).ln())
        .sum())
}

/// Summed Gaussian negative log-likelihood with observation noise `sigma`.
pub fn nll_regression(predictions: &[f64], targets: &[f64], sigma: Option<f64>) -> Result<f64> {
    let sigma = sigma.ok_or_else(|| Error::Config("observation noise sigma unresolved".into()))?;
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
    }
    if predictions.len() != targets.len() {
        return Err(Error::validation(
            "targets",
            format!("{} targets for {} predictions", targets.len(), predictions.len()),
        ));
    }
    Ok(-gaussian_loglik(predictions, targets, sigma))
}

/// Σᵢ [−½ log(2πσ²) − (yᵢ − ŷᵢ)² / (2σ²)].
pub fn gaussian_loglik(predictions: &[f64], targets: &[f64], sigma: f64) -> f64 {
    let n = predictions.len() as f64;
    let sse: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, y)| (y - p) * (y - p))
        .sum();
    gaussian_loglik_from_sse(n, sse, sigma)
}

pub(crate) fn gaussian_loglik_from_sse(n: f64, sse: f64, sigma: f64) -> f64 {
    let var = sigma * sigma;
    -0.5 * n * (2.0 * std::f64::consts::PI * var).ln() - sse / (2.0 * var)
}

fn ece_bin(confidence: f64, num_bins: usize) -> usize {
    if confidence <= 0.0 {
        return 0;
    }
    let b = num_bins as f64;
    let mut idx = ((confidence * b).ceil() as usize).clamp(1, num_bins) - 1;
    // Bins are (idx/b, (idx+1)/b]; correct for rounding at the edges.
    if idx > 0 && confidence <= idx as f64 / b {
        idx -= 1;
    } else if idx + 1 < num_bins && confidence > (idx + 1) as f64 / b {
        idx += 1;
    }
    idx
}

/// Expected calibration error over `num_bins` equal-width, right-closed
/// confidence bins.
pub fn ece(probs: &ProbMatrix, targets: &[usize], num_bins: usize) -> Result<f64> {
    if num_bins == 0 {
        return Err(Error::Config("num_bins must be at least 1".into()));
    }
    check_targets(probs.len(), targets, probs.num_classes())?;
    let mut count = vec![0usize; num_bins];
    let mut conf_sum = vec![0.0; num_bins];
    let mut correct_sum = vec![0.0; num_bins];
    for (i, &t) in targets.iter().enumerate() {
        let row = probs.row(i);
        let pred = argmax(row);
        let conf = row[pred];
        let b = ece_bin(conf, num_bins);
        count[b] += 1;
        conf_sum[b] += conf;
        if pred == t {
            correct_sum[b] += 1.0;
        }
    }
    let n = targets.len() as f64;
    Ok((0..num_bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let nb = count[b] as f64;
            (nb / n) * (correct_sum[b] / nb - conf_sum[b] / nb).abs()
        })
        .sum())
}

/// Multiclass Brier score: mean over samples of Σ_k (p̂_k − 1[y = k])².
pub fn brier(probs: &ProbMatrix, targets: &[usize]) -> Result<f64> {
    check_targets(probs.len(), targets, probs.num_classes())?;
    let total: f64 = targets
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            probs
                .row(i)
                .iter()
                .enumerate()
                .map(|(k, &p)| {
                    let e = p - if k == t { 1.0 } else { 0.0 };
                    e * e
                })
                .sum::<f64>()
        })
        .sum();
    Ok(total / targets.len() as f64)
}

/// Named metric values for one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub split_name: String,
    pub metrics: BTreeMap<String, f64>,
}

impl MetricReport {
    pub fn classification(
        split_name: &str,
        probs: &ProbMatrix,
        targets: &[usize],
        num_bins: usize,
    ) -> Result<Self> {
        let nll = nll_classification(probs, targets)?;
        let metrics = BTreeMap::from([
            ("accuracy".to_string(), accuracy(probs, targets)?),
            ("nll".to_string(), nll),
            ("nll_mean".to_string(), nll / targets.len() as f64),
            ("ece".to_string(), ece(probs, targets, num_bins)?),
            ("brier".to_string(), brier(probs, targets)?),
        ]);
        Ok(Self {
            split_name: split_name.to_string(),
            metrics,
        })
    }

    pub fn regression(
        split_name: &str,
        predictions: &[f64],
        targets: &[f64],
        sigma: Option<f64>,
    ) -> Result<Self> {
        let nll = nll_regression(predictions, targets, sigma)?;
        let metrics = BTreeMap::from([
            ("mae".to_string(), mae(predictions, targets)?),
            ("nll".to_string(), nll),
            ("nll_mean".to_string(), nll / targets.len() as f64),
        ]);
        Ok(Self {
            split_name: split_name.to_string(),
            metrics,
        })
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }
}
