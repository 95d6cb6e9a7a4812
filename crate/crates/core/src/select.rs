//! Per-dump evaluation, per-metric model ranking, rank alignment against the
//! error metric, and report rendering.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::conformal::{run_split_cp, ConformalConfig, ConformalResult};
use crate::error::{Error, Result};
use crate::laplace::{optimize_prior_precision, LaplaceConfig, LaplaceResult};
use crate::metrics::{forward_last_layer, softmax_logits, MetricReport, DEFAULT_ECE_BINS};
use crate::tensor_io::{ConstraintTag, ModelDump, SplitData, TaskSpec};

pub const ALIGNMENT_METHOD: &str = "spearman";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    HigherIsBetter,
    LowerIsBetter,
}

/// Ranking direction of every score name this crate produces. Unknown names
/// return `None` and are left out of rankings.
pub fn direction(metric: &str) -> Option<Direction> {
    use Direction::*;
    match metric {
        "accuracy" | "train_accuracy" | "loglik_train" | "log_marglik" | "loglik_test" => {
            Some(HigherIsBetter)
        }
        "mae" | "train_mae" | "nll" | "ece" | "brier" | "set_size" | "interval_width"
        | "complexity" => Some(LowerIsBetter),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvaluationConfig {
    pub conformal: ConformalConfig,
    pub ece_bins: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            conformal: ConformalConfig::default(),
            ece_bins: DEFAULT_ECE_BINS,
        }
    }
}

/// The flat name → value view used for ranking. Deserializes from a full
/// [`ModelEvaluation`] JSON document as well (extra fields are ignored), so
/// hand-written fixtures need only these three fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScores {
    pub model_name: String,
    pub constraint_tag: ConstraintTag,
    #[serde(with = "crate::real::map")]
    pub scores: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEvaluation {
    pub model_name: String,
    pub constraint_tag: ConstraintTag,
    pub task: String,
    pub metric_reports: Vec<MetricReport>,
    pub conformal: ConformalResult,
    pub laplace: LaplaceResult,
    #[serde(with = "crate::real::map")]
    pub scores: BTreeMap<String, f64>,
}

impl ModelEvaluation {
    pub fn to_scores(&self) -> ModelScores {
        ModelScores {
            model_name: self.model_name.clone(),
            constraint_tag: self.constraint_tag.clone(),
            scores: self.scores.clone(),
        }
    }

    pub fn metric_report(&self, split: &str) -> Option<&MetricReport> {
        self.metric_reports.iter().find(|r| r.split_name == split)
    }
}

fn split_report(
    dump: &ModelDump,
    name: &str,
    split: &SplitData,
    sigma: Option<f64>,
    ece_bins: usize,
) -> Result<MetricReport> {
    let out = forward_last_layer(&split.features, &dump.last_layer)?;
    match dump.task {
        TaskSpec::Classification { .. } => {
            let probs = softmax_logits(&out)?;
            let labels = split
                .targets
                .class_labels()
                .ok_or_else(|| Error::validation(name, "classification split needs class targets"))?;
            MetricReport::classification(name, &probs, &labels, ece_bins)
        }
        TaskSpec::Regression { .. } => {
            let targets = split
                .targets
                .as_values()
                .ok_or_else(|| Error::validation(name, "regression split needs real targets"))?;
            MetricReport::regression(name, out.data(), targets, sigma)
        }
    }
}

/// Computes train/test metrics, split conformal statistics and the Laplace
/// evidence for one dump. Regression NLL uses the resolved σ of the Laplace
/// search.
pub fn evaluate_dump(
    dump: &ModelDump,
    eval: &EvaluationConfig,
    laplace: &LaplaceConfig,
) -> Result<ModelEvaluation> {
    dump.validate()?;
    if eval.ece_bins == 0 {
        return Err(Error::Config("ece_bins must be at least 1".into()));
    }
    let laplace = optimize_prior_precision(dump, laplace)?;
    let conformal = run_split_cp(dump, &eval.conformal)?;
    let sigma = laplace.sigma_star;
    let train = split_report(dump, "train", &dump.train, sigma, eval.ece_bins)?;
    let test = split_report(dump, "test", &dump.test, sigma, eval.ece_bins)?;

    let mut scores = BTreeMap::new();
    let task = if dump.task.is_classification() {
        for key in ["accuracy", "nll", "ece", "brier"] {
            scores.insert(key.to_string(), test.metrics[key]);
        }
        scores.insert("train_accuracy".into(), train.metrics["accuracy"]);
        scores.insert(
            "set_size".into(),
            conformal.mean_set_size.expect("classification set size"),
        );
        "classification"
    } else {
        scores.insert("mae".into(), test.metrics["mae"]);
        scores.insert("nll".into(), test.metrics["nll"]);
        scores.insert("train_mae".into(), train.metrics["mae"]);
        scores.insert(
            "interval_width".into(),
            conformal.mean_interval_width.expect("regression width"),
        );
        "regression"
    };
    scores.insert("loglik_train".into(), laplace.loglik_train);
    scores.insert("complexity".into(), laplace.complexity);
    scores.insert("log_marglik".into(), laplace.log_marglik);
    scores.insert("loglik_test".into(), laplace.loglik_test);

    Ok(ModelEvaluation {
        model_name: dump.model_name.clone(),
        constraint_tag: dump.constraint_tag.clone(),
        task: task.to_string(),
        metric_reports: vec![train, test],
        conformal,
        laplace,
        scores,
    })
}

/// 1-based ranks with ties sharing their average rank.
fn average_ranks(keys: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]));
    let mut ranks = vec![0.0; keys.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && keys[idx[j + 1]] == keys[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation of two rank vectors. Tie-free inputs go through the
/// exact `1 − 6Σd²/(n(n²−1))` form; a constant ranking yields 0.
fn rank_correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let distinct = |r: &[f64]| r.iter().map(|v| v.to_bits()).collect::<BTreeSet<_>>().len() == r.len();
    if distinct(a) && distinct(b) {
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

/// Spearman correlation between two best-first orderings of the same items.
pub fn spearman_rho<S: AsRef<str>>(rank_a: &[S], rank_b: &[S]) -> Result<f64> {
    if rank_a.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "rank correlation needs at least 2 models, got {}",
            rank_a.len()
        )));
    }
    let names_a: BTreeSet<&str> = rank_a.iter().map(AsRef::as_ref).collect();
    let names_b: BTreeSet<&str> = rank_b.iter().map(AsRef::as_ref).collect();
    if names_a.len() != rank_a.len() || names_a != names_b || rank_a.len() != rank_b.len() {
        return Err(Error::validation(
            "ranking",
            "both rankings must order the same distinct models",
        ));
    }
    let pos_b: BTreeMap<&str, usize> = rank_b
        .iter()
        .enumerate()
        .map(|(i, m)| (m.as_ref(), i))
        .collect();
    let a: Vec<f64> = (1..=rank_a.len()).map(|i| i as f64).collect();
    let b: Vec<f64> = rank_a
        .iter()
        .map(|m| (pos_b[m.as_ref()] + 1) as f64)
        .collect();
    Ok(rank_correlation(&a, &b))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Disagreement {
    pub metric: String,
    pub preferred_by_metric: String,
    pub preferred_by_error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub error_metric_name: String,
    /// Best first.
    pub per_metric_ranks: BTreeMap<String, Vec<String>>,
    pub preferred: BTreeMap<String, String>,
    /// Spearman ρ of each metric's ranking against the error ranking, with
    /// tied metric values sharing average ranks.
    pub alignment: BTreeMap<String, f64>,
    pub disagreements: Vec<Disagreement>,
    pub alignment_method: String,
}

impl RankingReport {
    pub fn error_ranking(&self) -> &[String] {
        &self.per_metric_ranks[&self.error_metric_name]
    }
}

/// Value oriented so that larger is better.
fn oriented(v: f64, dir: Direction) -> f64 {
    match dir {
        Direction::HigherIsBetter => v,
        Direction::LowerIsBetter => -v,
    }
}

/// Ranks models under every metric with a known direction that all models
/// report. Equal values fall back to model-name order.
pub fn rank_models(models: &[ModelScores], error_metric: &str) -> Result<RankingReport> {
    if models.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "ranking needs at least 2 models, got {}",
            models.len()
        )));
    }
    let names: BTreeSet<&str> = models.iter().map(|m| m.model_name.as_str()).collect();
    if names.len() != models.len() {
        return Err(Error::validation("model_name", "model names must be distinct"));
    }
    if direction(error_metric).is_none() {
        return Err(Error::validation(
            "error_metric",
            format!("`{error_metric}` has no known ranking direction"),
        ));
    }
    for m in models {
        match m.scores.get(error_metric) {
            None => {
                return Err(Error::validation(
                    format!("{}.scores", m.model_name),
                    format!("missing error metric `{error_metric}`"),
                ))
            }
            Some(v) if v.is_nan() => {
                return Err(Error::validation(
                    format!("{}.scores.{error_metric}", m.model_name),
                    "value is NaN",
                ))
            }
            _ => {}
        }
    }
    let metrics: Vec<(String, Direction)> = models[0]
        .scores
        .keys()
        .filter_map(|k| direction(k).map(|d| (k.clone(), d)))
        .filter(|(k, _)| {
            models
                .iter()
                .all(|m| m.scores.get(k).is_some_and(|v| !v.is_nan()))
        })
        .collect();

    let mut per_metric_ranks = BTreeMap::new();
    let mut preferred = BTreeMap::new();
    let mut value_ranks: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (metric, dir) in &metrics {
        let keys: Vec<f64> = models.iter().map(|m| oriented(m.scores[metric], *dir)).collect();
        let mut order: Vec<usize> = (0..models.len()).collect();
        order.sort_by(|&a, &b| {
            keys[b]
                .total_cmp(&keys[a])
                .then_with(|| models[a].model_name.cmp(&models[b].model_name))
        });
        let ranked: Vec<String> = order.iter().map(|&i| models[i].model_name.clone()).collect();
        preferred.insert(metric.clone(), ranked[0].clone());
        per_metric_ranks.insert(metric.clone(), ranked);
        // Rank 1 = best; negate so the ascending average-rank helper applies.
        let neg: Vec<f64> = keys.iter().map(|k| -k).collect();
        value_ranks.insert(metric.clone(), average_ranks(&neg));
    }

    let err_ranks = &value_ranks[error_metric];
    let err_pref = &preferred[error_metric];
    let mut alignment = BTreeMap::new();
    let mut disagreements = Vec::new();
    for (metric, _) in &metrics {
        if metric == error_metric {
            continue;
        }
        alignment.insert(metric.clone(), rank_correlation(&value_ranks[metric], err_ranks));
        if &preferred[metric] != err_pref {
            disagreements.push(Disagreement {
                metric: metric.clone(),
                preferred_by_metric: preferred[metric].clone(),
                preferred_by_error: err_pref.clone(),
            });
        }
    }
    Ok(RankingReport {
        error_metric_name: error_metric.to_string(),
        per_metric_ranks,
        preferred,
        alignment,
        disagreements,
        alignment_method: ALIGNMENT_METHOD.to_string(),
    })
}

// ---------------------------------------------------------------------------
// Rendering

/// Metrics printed as rounded integers once their magnitude reaches 100.
const LOG_SCALE: [&str; 5] = ["loglik_train", "complexity", "log_marglik", "loglik_test", "nll"];

/// Table-style number formatting: log-likelihood-scale quantities become
/// integers at large magnitude, everything else keeps 4 decimals.
pub fn format_value(metric: &str, v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if LOG_SCALE.contains(&metric) && v.abs() >= 100.0 {
        let r = v.round();
        // Avoid printing "-0".
        return format!("{}", if r == 0.0 { 0.0 } else { r });
    }
    format!("{v:.4}")
}

const TABLE_ORDER: [&str; 12] = [
    "mae",
    "accuracy",
    "nll",
    "ece",
    "brier",
    "set_size",
    "interval_width",
    "loglik_train",
    "complexity",
    "log_marglik",
    "loglik_test",
    "train_accuracy",
];

fn table_columns(models: &[ModelScores]) -> Vec<String> {
    let present = |k: &str| models.iter().any(|m| m.scores.contains_key(k));
    let mut cols: Vec<String> = TABLE_ORDER
        .iter()
        .filter(|k| present(k))
        .map(|k| k.to_string())
        .collect();
    let extra: BTreeSet<&String> = models
        .iter()
        .flat_map(|m| m.scores.keys())
        .filter(|k| !TABLE_ORDER.contains(&k.as_str()))
        .collect();
    cols.extend(extra.into_iter().cloned());
    cols
}

/// Per-model table; the model preferred by each ranked metric is starred.
pub fn render_table(models: &[ModelScores], report: Option<&RankingReport>) -> String {
    let cols = table_columns(models);
    let mut header = vec!["model".to_string(), "constraint".to_string()];
    header.extend(cols.iter().map(|c| {
        match direction(c) {
            Some(Direction::HigherIsBetter) => format!("{c} (+)"),
            Some(Direction::LowerIsBetter) => format!("{c} (-)"),
            None => c.clone(),
        }
    }));
    let mut rows = vec![header];
    for m in models {
        let mut row = vec![m.model_name.clone(), m.constraint_tag.to_string()];
        for c in &cols {
            let cell = match m.scores.get(c) {
                None => "-".to_string(),
                Some(&v) => {
                    let star = report
                        .and_then(|r| r.preferred.get(c))
                        .is_some_and(|p| p == &m.model_name);
                    format!("{}{}", format_value(c, v), if star { "*" } else { "" })
                }
            };
            row.push(cell);
        }
        rows.push(row);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|j| rows.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(j, (cell, &w))| {
                if j < 2 {
                    format!("{cell:<w$}")
                } else {
                    format!("{cell:>w$}")
                }
            })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}

pub fn render_ranking(report: &RankingReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "error metric: {}  ({})",
        report.error_metric_name,
        report.error_ranking().join(" > ")
    );
    let _ = writeln!(out, "alignment: {} rank correlation against the error ranking", report.alignment_method);
    let _ = writeln!(out);
    let w = report.per_metric_ranks.keys().map(String::len).max().unwrap_or(0);
    for (metric, ranked) in &report.per_metric_ranks {
        let rho = report
            .alignment
            .get(metric)
            .map_or_else(|| "   (error)".to_string(), |r| format!("rho={r:+.4}"));
        let _ = writeln!(out, "{metric:<w$}  {rho}  {}", ranked.join(" > "));
    }
    let _ = writeln!(out);
    if report.disagreements.is_empty() {
        let _ = writeln!(out, "disagreements: none");
    } else {
        let _ = writeln!(out, "disagreements:");
        for d in &report.disagreements {
            let _ = writeln!(
                out,
                "  {}: prefers {}, {} prefers {}",
                d.metric, d.preferred_by_metric, report.error_metric_name, d.preferred_by_error
            );
        }
    }
    out
}

pub fn render_text_report(models: &[ModelScores], report: &RankingReport) -> String {
    format!("{}\n{}", render_table(models, Some(report)), render_ranking(report))
}

fn csv_real(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        format_value("", v)
    }
}

/// Log-marginal-likelihood grid traces, one row per evaluated grid point.
pub fn render_grid_csv(traces: &[(&str, &LaplaceResult)]) -> String {
    let mut out = String::from("model,delta,sigma,log_marglik\n");
    for (model, lap) in traces {
        for p in &lap.grid_values {
            let sigma = p.sigma.map(csv_real).unwrap_or_default();
            let _ = writeln!(out, "{model},{},{sigma},{}", csv_real(p.delta), csv_real(p.log_marglik));
        }
    }
    out
}

/// Long-format (model, error value, metric value) pairs for scatter plots.
pub fn render_pairs_csv(models: &[ModelScores], error_metric: &str) -> String {
    let mut out = String::from("model,error_metric,error_value,metric,value\n");
    for m in models {
        let Some(&err) = m.scores.get(error_metric) else { continue };
        for (k, &v) in &m.scores {
            if k == error_metric {
                continue;
            }
            let _ = writeln!(out, "{},{error_metric},{},{k},{}", m.model_name, csv_real(err), csv_real(v));
        }
    }
    out
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Format(format!("json encoding failed: {e}")))?;
    s.push('\n');
    Ok(s)
}

pub fn write_report(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn read_scores(path: &Path) -> Result<ModelScores> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores(name: &str, pairs: &[(&str, f64)]) -> ModelScores {
        ModelScores {
            model_name: name.into(),
            constraint_tag: ConstraintTag::Other(name.into()),
            scores: pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    #[test]
    fn spearman_examples() {
        let a = ["a", "b", "c", "d"];
        assert_eq!(spearman_rho(&a, &a).unwrap(), 1.0);
        assert_eq!(spearman_rho(&a, &["d", "c", "b", "a"]).unwrap(), -1.0);
        let r = spearman_rho(&a, &["b", "a", "c", "d"]).unwrap();
        assert!((r - 0.8).abs() < 1e-15);
        assert!(matches!(spearman_rho(&["a"], &["a"]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn tied_values_share_ranks() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        let r = rank_correlation(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]);
        assert_eq!(r, 0.0);
    }

    #[test]
    fn identical_orderings_align_perfectly() {
        let models = vec![
            scores("a", &[("mae", 0.1), ("interval_width", 0.3), ("log_marglik", -5.0)]),
            scores("b", &[("mae", 0.2), ("interval_width", 0.4), ("log_marglik", -6.0)]),
            scores("c", &[("mae", 0.3), ("interval_width", 0.5), ("log_marglik", -7.0)]),
        ];
        let r = rank_models(&models, "mae").unwrap();
        assert!(r.alignment.values().all(|&v| v == 1.0));
        assert!(r.disagreements.is_empty());
        assert_eq!(r.error_ranking(), ["a", "b", "c"]);
    }

    #[test]
    fn missing_error_metric_is_validation_error() {
        let models = vec![scores("a", &[("mae", 0.1)]), scores("b", &[("accuracy", 0.5)])];
        assert!(matches!(rank_models(&models, "mae"), Err(Error::Validation { .. })));
    }

    #[test]
    fn name_breaks_ties() {
        let models = vec![scores("z", &[("accuracy", 0.5)]), scores("a", &[("accuracy", 0.5)])];
        let r = rank_models(&models, "accuracy").unwrap();
        assert_eq!(r.error_ranking(), ["a", "z"]);
    }

    #[test]
    fn value_formatting() {
        assert_eq!(format_value("mae", 0.05224), "0.0522");
        assert_eq!(format_value("log_marglik", -102628.4), "-102628");
        assert_eq!(format_value("loglik_test", 22940.0), "22940");
        assert_eq!(format_value("complexity", 12.34567), "12.3457");
        assert_eq!(format_value("interval_width", f64::INFINITY), "inf");
    }

    #[test]
    fn scores_parse_from_minimal_json() {
        let s: ModelScores = serde_json::from_str(
            r#"{"model_name":"m","constraint_tag":"plain","scores":{"mae":0.5,"interval_width":"inf"},"extra":1}"#,
        )
        .unwrap();
        assert_eq!(s.constraint_tag, ConstraintTag::Plain);
        assert!(s.scores["interval_width"].is_infinite());
    }
}
