//! Last-layer Laplace approximation of the log marginal likelihood.
//!
//! With a Gaussian prior `N(0, δ⁻¹I)` over the `D` last-layer parameters θ
//! (bias included) and curvature `H = H_GGN + δI` at the pretrained θ*:
//!
//! ```text
//! log p(D|M) ≈ log p(D|θ*) − complexity
//! complexity  = ½ log|H/2π| − log N(θ*; 0, δ⁻¹I)
//!             = ½ Σⱼ log(λⱼ + δ) − (D/2) log δ + (δ/2)‖θ*‖²
//! ```
//!
//! The (2π) factors of the two terms cancel exactly. `λⱼ` are eigenvalues of
//! `H_GGN` (Full) or its diagonal entries (Diagonal), cached once so every
//! grid point costs O(D).

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{self, forward_last_layer, softmax_logits, ProbMatrix, PROB_FLOOR};
use crate::tensor_io::{LastLayer, Matrix, ModelDump, SplitData, TaskSpec};

pub const DEFAULT_MAX_FULL_DIM: usize = 2048;
const PSD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HessianKind {
    Full,
    #[serde(rename = "diag")]
    Diagonal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaplaceConfig {
    pub hessian_kind: HessianKind,
    pub delta_grid: Vec<f64>,
    /// Used for regression dumps whose manifest carries no `sigma_obs`.
    pub sigma_grid: Vec<f64>,
    pub delta_fixed: Option<f64>,
    /// Largest parameter count for which the Full Hessian is materialized.
    pub max_full_dim: usize,
}

impl Default for LaplaceConfig {
    fn default() -> Self {
        Self {
            hessian_kind: HessianKind::Full,
            delta_grid: log_grid(1e-4, 1e4, 41).unwrap(),
            sigma_grid: log_grid(1e-2, 1e1, 21).unwrap(),
            delta_fixed: None,
            max_full_dim: DEFAULT_MAX_FULL_DIM,
        }
    }
}

/// `points` log-spaced values from `min` to `max` inclusive.
pub fn log_grid(min: f64, max: f64, points: usize) -> Result<Vec<f64>> {
    if !(min > 0.0 && max.is_finite() && min.is_finite()) {
        return Err(Error::Config(format!("grid bounds must be positive, got {min}..{max}")));
    }
    match points {
        0 => Err(Error::Config("grid needs at least one point".into())),
        1 => Ok(vec![min]),
        _ => {
            if max <= min {
                return Err(Error::Config(format!("grid max {max} must exceed min {min}")));
            }
            let (lo, hi) = (min.log10(), max.log10());
            let step = (hi - lo) / (points - 1) as f64;
            Ok((0..points)
                .map(|i| match i {
                    0 => min,
                    i if i == points - 1 => max,
                    i => 10f64.powf(lo + step * i as f64),
                })
                .collect())
        }
    }
}

fn check_grid(name: &str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Config(format!("{name} is empty")));
    }
    if grid.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::Config(format!("{name} must hold positive finite values")));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config(format!("{name} must be strictly increasing")));
    }
    Ok(())
}

impl LaplaceConfig {
    pub fn validate(&self) -> Result<()> {
        check_grid("delta_grid", &self.delta_grid)?;
        check_grid("sigma_grid", &self.sigma_grid)?;
        if let Some(d) = self.delta_fixed {
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::Config(format!("delta_fixed must be positive, got {d}")));
            }
        }
        Ok(())
    }
}

/// Cached curvature of the negative log-likelihood in the last layer.
#[derive(Debug, Clone)]
pub struct HessianSummary {
    pub kind: HessianKind,
    pub dim: usize,
    /// Eigenvalues (Full) or diagonal entries (Diagonal), clamped at 0.
    pub spectrum: Vec<f64>,
    pub ggn_trace: f64,
    /// Smallest eigenvalue before clamping (Full only).
    pub min_eigenvalue_raw: Option<f64>,
    /// The materialized matrix (Full only).
    pub matrix: Option<DMatrix<f64>>,
}

impl HessianSummary {
    fn from_full(matrix: DMatrix<f64>) -> Result<Self> {
        let dim = matrix.nrows();
        let ggn_trace = matrix.trace();
        let eig = SymmetricEigen::new(matrix.clone());
        let raw: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        let max = raw.iter().copied().fold(0.0f64, f64::max);
        let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("ggn eigendecomposition", "non-finite eigenvalue"));
        }
        if dim > 0 && min < -PSD_TOL * max {
            return Err(Error::numerical(
                "ggn eigendecomposition",
                format!("GGN not positive semidefinite: min eigenvalue {min}, max {max}"),
            ));
        }
        Ok(Self {
            kind: HessianKind::Full,
            dim,
            spectrum: raw.iter().map(|v| v.max(0.0)).collect(),
            ggn_trace,
            min_eigenvalue_raw: (dim > 0).then_some(min),
            matrix: Some(matrix),
        })
    }

    fn from_diagonal(diag: Vec<f64>) -> Self {
        Self {
            kind: HessianKind::Diagonal,
            dim: diag.len(),
            ggn_trace: diag.iter().sum(),
            spectrum: diag.into_iter().map(|v| v.max(0.0)).collect(),
            min_eigenvalue_raw: None,
            matrix: None,
        }
    }

    /// `log|H_GGN + δI|` from the cached spectrum.
    pub fn logdet(&self, delta: f64) -> f64 {
        self.spectrum.iter().map(|l| (l + delta).ln()).sum()
    }

    /// Same curvature multiplied by `factor` (e.g. 1/σ² for regression).
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            kind: self.kind,
            dim: self.dim,
            spectrum: self.spectrum.iter().map(|l| l * factor).collect(),
            ggn_trace: self.ggn_trace * factor,
            min_eigenvalue_raw: self.min_eigenvalue_raw.map(|v| v * factor),
            matrix: self.matrix.as_ref().map(|m| m * factor),
        }
    }
}

/// Appends a constant-1 column so the bias becomes an ordinary weight.
pub fn augment_bias(features: &Matrix<f64>) -> Matrix<f64> {
    let (n, d) = features.shape();
    let mut data = Vec::with_capacity(n * (d + 1));
    for row in features.row_iter() {
        data.extend_from_slice(row);
        data.push(1.0);
    }
    Matrix::new(n, d + 1, data).expect("shape is consistent by construction")
}

fn check_capacity(dim: usize, kind: HessianKind, max_full_dim: usize) -> Result<()> {
    if kind == HessianKind::Full && dim > max_full_dim {
        return Err(Error::Capacity(format!(
            "full Hessian would be {dim}x{dim} (cap {max_full_dim}); use the diagonal Hessian"
        )));
    }
    Ok(())
}

/// GGN of the softmax cross-entropy for a linear layer on `design` rows:
/// `Σᵢ (diag(pᵢ) − pᵢpᵢᵀ) ⊗ xᵢxᵢᵀ`, parameters ordered class-major.
pub fn ggn_classification_design(
    design: &Matrix<f64>,
    probs: &ProbMatrix,
    kind: HessianKind,
    max_full_dim: usize,
) -> Result<HessianSummary> {
    if design.rows() != probs.len() {
        return Err(Error::validation(
            "probs",
            format!("{} rows for {} design rows", probs.len(), design.rows()),
        ));
    }
    let p = design.cols();
    let k = probs.num_classes();
    let dim = k * p;
    check_capacity(dim, kind, max_full_dim)?;
    match kind {
        HessianKind::Diagonal => {
            let mut diag = vec![0.0; dim];
            for (i, x) in design.row_iter().enumerate() {
                for (c, &pc) in probs.row(i).iter().enumerate() {
                    let lam = pc - pc * pc;
                    for (j, &xj) in x.iter().enumerate() {
                        diag[c * p + j] += lam * xj * xj;
                    }
                }
            }
            Ok(HessianSummary::from_diagonal(diag))
        }
        HessianKind::Full => {
            let mut h = DMatrix::<f64>::zeros(dim, dim);
            let mut outer = vec![0.0; p * p];
            for (i, x) in design.row_iter().enumerate() {
                for a in 0..p {
                    for b in a..p {
                        outer[a * p + b] = x[a] * x[b];
                    }
                }
                let pi = probs.row(i);
                for c in 0..k {
                    for l in c..k {
                        let lam = if c == l { pi[c] - pi[c] * pi[c] } else { -pi[c] * pi[l] };
                        if lam == 0.0 {
                            continue;
                        }
                        for a in 0..p {
                            let row = c * p + a;
                            let b_start = if c == l { a } else { 0 };
                            for b in b_start..p {
                                let v = if a <= b { outer[a * p + b] } else { outer[b * p + a] };
                                h[(row, l * p + b)] += lam * v;
                            }
                        }
                    }
                }
            }
            mirror_upper(&mut h);
            HessianSummary::from_full(h)
        }
    }
}

fn mirror_upper(h: &mut DMatrix<f64>) {
    let n = h.nrows();
    for r in 0..n {
        for c in 0..r {
            h[(r, c)] = h[(c, r)];
        }
    }
}

/// GGN (= exact Hessian) of the Gaussian NLL for a linear model: `XᵀX / σ²`.
pub fn ggn_regression_design(
    design: &Matrix<f64>,
    sigma: f64,
    kind: HessianKind,
    max_full_dim: usize,
) -> Result<HessianSummary> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
    }
    let p = design.cols();
    check_capacity(p, kind, max_full_dim)?;
    let inv_var = 1.0 / (sigma * sigma);
    match kind {
        HessianKind::Diagonal => {
            let mut diag = vec![0.0; p];
            for x in design.row_iter() {
                for (d, &v) in diag.iter_mut().zip(x) {
                    *d += v * v;
                }
            }
            Ok(HessianSummary::from_diagonal(
                diag.into_iter().map(|v| v * inv_var).collect(),
            ))
        }
        HessianKind::Full => {
            let mut h = DMatrix::<f64>::zeros(p, p);
            for x in design.row_iter() {
                for a in 0..p {
                    for b in a..p {
                        h[(a, b)] += x[a] * x[b];
                    }
                }
            }
            mirror_upper(&mut h);
            HessianSummary::from_full(h * inv_var)
        }
    }
}

pub fn ggn_classification(
    features: &Matrix<f64>,
    layer: &LastLayer,
    kind: HessianKind,
    max_full_dim: usize,
) -> Result<HessianSummary> {
    let probs = softmax_logits(&forward_last_layer(features, layer)?)?;
    ggn_classification_design(&augment_bias(features), &probs, kind, max_full_dim)
}

pub fn ggn_regression(
    features: &Matrix<f64>,
    sigma: f64,
    kind: HessianKind,
    max_full_dim: usize,
) -> Result<HessianSummary> {
    ggn_regression_design(&augment_bias(features), sigma, kind, max_full_dim)
}

/// Data fit, complexity and their difference at one (δ, σ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvidenceTerms {
    pub loglik: f64,
    pub complexity: f64,
    pub log_marglik: f64,
}

/// Combines a log-likelihood with the Laplace complexity term.
pub fn evidence_terms(
    loglik: f64,
    hessian: &HessianSummary,
    delta: f64,
    theta_sq_norm: f64,
) -> Result<EvidenceTerms> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::Config(format!("delta must be positive, got {delta}")));
    }
    let half_logdet = 0.5 * hessian.logdet(delta);
    let prior_norm = 0.5 * hessian.dim as f64 * delta.ln();
    let prior_quad = 0.5 * delta * theta_sq_norm;
    let complexity = half_logdet - prior_norm + prior_quad;
    for (term, v) in [
        ("loglik", loglik),
        ("logdet", half_logdet),
        ("prior", prior_quad),
        ("complexity", complexity),
    ] {
        if !v.is_finite() {
            return Err(Error::numerical(term, format!("value {v}")));
        }
    }
    Ok(EvidenceTerms {
        loglik,
        complexity,
        log_marglik: loglik - complexity,
    })
}

fn split_loglik(split: &SplitData, layer: &LastLayer, task: &TaskSpec, sigma: Option<f64>) -> Result<f64> {
    let outputs = forward_last_layer(&split.features, layer)?;
    match task {
        TaskSpec::Classification { .. } => {
            let probs = softmax_logits(&outputs)?;
            let labels = split.targets.class_labels().unwrap_or_default();
            Ok(labels
                .iter()
                .enumerate()
                .map(|(i, &y)| probs.row(i)[y].max(PROB_FLOOR).ln())
                .sum())
        }
        TaskSpec::Regression { .. } => {
            let sigma = sigma
                .ok_or_else(|| Error::Config("observation noise sigma unresolved".into()))?;
            if !(sigma.is_finite() && sigma > 0.0) {
                return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
            }
            Ok(metrics::gaussian_loglik(
                outputs.data(),
                split.targets.as_values().unwrap_or_default(),
                sigma,
            ))
        }
    }
}

fn theta_sq_norm(layer: &LastLayer) -> f64 {
    layer.flat_params().iter().map(|v| v * v).sum()
}

/// Eq.-style evidence of `dump` at (δ, σ) given a Hessian computed on the
/// train split at the dump's last layer.
pub fn log_marginal_likelihood(
    dump: &ModelDump,
    delta: f64,
    sigma: Option<f64>,
    hessian: &HessianSummary,
) -> Result<EvidenceTerms> {
    let expected = dump.task.output_dim() * (dump.feature_dim() + 1);
    if hessian.dim != expected {
        return Err(Error::validation(
            "hessian",
            format!("dimension {} does not match {expected} parameters", hessian.dim),
        ));
    }
    let loglik = split_loglik(&dump.train, &dump.last_layer, &dump.task, sigma)?;
    evidence_terms(loglik, hessian, delta, theta_sq_norm(&dump.last_layer))
}

/// Log-likelihood of the test split at the dump's last layer.
pub fn test_loglik(dump: &ModelDump, sigma: Option<f64>) -> Result<f64> {
    if dump.test.is_empty() {
        return Err(Error::EmptyInput("test split"));
    }
    split_loglik(&dump.test, &dump.last_layer, &dump.task, sigma)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    pub log_marglik: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaplaceResult {
    pub hessian_kind: HessianKind,
    pub param_dim: usize,
    pub loglik_train: f64,
    pub complexity: f64,
    pub log_marglik: f64,
    pub delta_star: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_star: Option<f64>,
    pub loglik_test: f64,
    pub grid_values: Vec<GridPoint>,
}

/// Empirical-Bayes grid search over δ (and σ for regression dumps without a
/// known noise scale). Ties resolve to the smallest δ, then smallest σ.
pub fn optimize_prior_precision(dump: &ModelDump, config: &LaplaceConfig) -> Result<LaplaceResult> {
    config.validate()?;
    if dump.train.is_empty() {
        return Err(Error::EmptyInput("train split"));
    }
    let deltas: Vec<f64> = match config.delta_fixed {
        Some(d) => vec![d],
        None => config.delta_grid.clone(),
    };
    let theta_sq = theta_sq_norm(&dump.last_layer);

    // (sigma, loglik, hessian) candidates.
    let candidates: Vec<(Option<f64>, f64, HessianSummary)> = match dump.task {
        TaskSpec::Classification { .. } => {
            let h = ggn_classification(
                &dump.train.features,
                &dump.last_layer,
                config.hessian_kind,
                config.max_full_dim,
            )?;
            let ll = split_loglik(&dump.train, &dump.last_layer, &dump.task, None)?;
            vec![(None, ll, h)]
        }
        TaskSpec::Regression { sigma_obs } => {
            let sigmas = match sigma_obs {
                Some(s) => vec![s],
                None => config.sigma_grid.clone(),
            };
            let base = ggn_regression(
                &dump.train.features,
                1.0,
                config.hessian_kind,
                config.max_full_dim,
            )?;
            let preds = forward_last_layer(&dump.train.features, &dump.last_layer)?;
            let targets = dump.train.targets.as_values().unwrap_or_default();
            let sse: f64 = preds
                .data()
                .iter()
                .zip(targets)
                .map(|(p, y)| (y - p) * (y - p))
                .sum();
            let n = targets.len() as f64;
            sigmas
                .into_iter()
                .map(|s| {
                    (
                        Some(s),
                        metrics::gaussian_loglik_from_sse(n, sse, s),
                        base.scaled(1.0 / (s * s)),
                    )
                })
                .collect()
        }
    };

    let mut grid_values = Vec::with_capacity(deltas.len() * candidates.len());
    let mut best: Option<(EvidenceTerms, f64, Option<f64>)> = None;
    let mut last_err = None;
    for &delta in &deltas {
        for (sigma, ll, hessian) in &candidates {
            match evidence_terms(*ll, hessian, delta, theta_sq) {
                Ok(terms) => {
                    grid_values.push(GridPoint {
                        delta,
                        sigma: *sigma,
                        log_marglik: terms.log_marglik,
                    });
                    if best.is_none_or(|(b, _, _)| terms.log_marglik > b.log_marglik) {
                        best = Some((terms, delta, *sigma));
                    }
                }
                Err(e) => last_err = Some(e),
            }
        }
    }
    let (terms, delta_star, sigma_star) = best.ok_or_else(|| {
        last_err.unwrap_or_else(|| Error::numerical("grid", "no finite grid point"))
    })?;
    Ok(LaplaceResult {
        hessian_kind: config.hessian_kind,
        param_dim: candidates[0].2.dim,
        loglik_train: terms.loglik,
        complexity: terms.complexity,
        log_marglik: terms.log_marglik,
        delta_star,
        sigma_star,
        loglik_test: test_loglik(dump, sigma_star)?,
        grid_values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_io::{ConstraintTag, Targets, SCHEMA_VERSION};

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn two_class_single_point_ggn() {
        let design = Matrix::from_rows(1, &[[1.0]]).unwrap();
        let probs = ProbMatrix::from_rows(&[[0.5, 0.5]]).unwrap();
        let h = ggn_classification_design(&design, &probs, HessianKind::Full, 16).unwrap();
        let m = h.matrix.unwrap();
        assert_eq!(m[(0, 0)], 0.25);
        assert_eq!(m[(0, 1)], -0.25);
        assert_eq!(m[(1, 0)], -0.25);
        assert_eq!(m[(1, 1)], 0.25);
    }

    #[test]
    fn zero_features_only_touch_bias() {
        let features = Matrix::zeros(5, 3);
        let layer = LastLayer {
            weights: Matrix::from_rows(3, &[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap(),
            bias: Matrix::column(vec![0.3, -0.1]),
        };
        let h = ggn_classification(&features, &layer, HessianKind::Full, 64).unwrap();
        let m = h.matrix.unwrap();
        let bias_idx = [3, 7];
        for r in 0..8 {
            for c in 0..8 {
                if !(bias_idx.contains(&r) && bias_idx.contains(&c)) {
                    assert_eq!(m[(r, c)], 0.0, "({r},{c})");
                }
            }
        }
        assert!(m[(3, 3)] > 0.0);
    }

    #[test]
    fn regression_ggn_examples() {
        let design = Matrix::from_rows(1, &[[1.0]]).unwrap();
        let h = ggn_regression_design(&design, 1.0, HessianKind::Full, 16).unwrap();
        assert_eq!(h.matrix.unwrap()[(0, 0)], 1.0);

        let design = Matrix::from_rows(2, &[[1.0, 2.0], [0.5, -1.0], [3.0, 0.25]]).unwrap();
        let a = ggn_regression_design(&design, 0.7, HessianKind::Full, 16).unwrap();
        let b = ggn_regression_design(&design, 1.4, HessianKind::Full, 16).unwrap();
        let (ma, mb) = (a.matrix.unwrap(), b.matrix.unwrap());
        for i in 0..2 {
            for j in 0..2 {
                close(mb[(i, j)], ma[(i, j)] * 0.25, 1e-14 * ma[(i, j)].abs());
            }
        }
        assert!(matches!(
            ggn_regression_design(&design, 0.0, HessianKind::Full, 16),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn zero_curvature_complexity_is_prior_quadratic() {
        let h = HessianSummary::from_diagonal(vec![0.0; 6]);
        for delta in [1e-3, 0.5, 7.0] {
            let t = evidence_terms(-3.0, &h, delta, 2.5).unwrap();
            close(t.complexity, 0.5 * delta * 2.5, 1e-12);
        }
    }

    #[test]
    fn capacity_cap_advises_diagonal() {
        let design = Matrix::zeros(2, 10);
        let err = ggn_regression_design(&design, 1.0, HessianKind::Full, 5).unwrap_err();
        assert!(matches!(err, Error::Capacity(ref m) if m.contains("diagonal")));
        assert!(ggn_regression_design(&design, 1.0, HessianKind::Diagonal, 5).is_ok());
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(1e-4, 1e4, 41).unwrap();
        assert_eq!(g.len(), 41);
        assert_eq!(g[0], 1e-4);
        assert_eq!(g[40], 1e4);
        close(g[20], 1.0, 1e-12);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
        assert!(log_grid(1.0, 0.5, 3).is_err());
        assert!(log_grid(0.0, 1.0, 3).is_err());
    }

    fn regression_dump(sigma_obs: Option<f64>) -> ModelDump {
        let split = |n: usize, off: f64| SplitData {
            features: Matrix::new(n, 1, (0..n).map(|i| i as f64 * 0.3 - 1.0 + off).collect()).unwrap(),
            targets: Targets::values((0..n).map(|i| (i as f64 * 0.7).sin()).collect()),
        };
        ModelDump {
            schema_version: SCHEMA_VERSION,
            model_name: "r".into(),
            constraint_tag: ConstraintTag::Plain,
            task: TaskSpec::Regression { sigma_obs },
            last_layer: LastLayer {
                weights: Matrix::from_rows(1, &[[0.4]]).unwrap(),
                bias: Matrix::column(vec![0.1]),
            },
            train: split(12, 0.0),
            calibration: split(4, 0.1),
            test: split(5, 0.2),
        }
    }

    #[test]
    fn delta_fixed_gives_single_point() {
        let dump = regression_dump(Some(0.5));
        let cfg = LaplaceConfig {
            delta_fixed: Some(2.0),
            ..Default::default()
        };
        let r = optimize_prior_precision(&dump, &cfg).unwrap();
        assert_eq!(r.grid_values.len(), 1);
        assert_eq!(r.delta_star, 2.0);
        assert_eq!(r.sigma_star, Some(0.5));
    }

    #[test]
    fn joint_grid_when_sigma_unknown() {
        let dump = regression_dump(None);
        let cfg = LaplaceConfig::default();
        let r = optimize_prior_precision(&dump, &cfg).unwrap();
        assert_eq!(r.grid_values.len(), 41 * 21);
        let best = r
            .grid_values
            .iter()
            .map(|g| g.log_marglik)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(best, r.log_marglik);
        close(r.log_marglik, r.loglik_train - r.complexity, 1e-9);
        let again = optimize_prior_precision(&dump, &cfg).unwrap();
        assert_eq!(again, r);
    }

    #[test]
    fn sigma_unresolved_test_loglik_is_config_error() {
        let dump = regression_dump(None);
        assert!(matches!(test_loglik(&dump, None), Err(Error::Config(_))));
        let ten = ModelDump {
            test: SplitData {
                features: Matrix::zeros(10, 1),
                targets: Targets::values(vec![0.1; 10]),
            },
            ..regression_dump(None)
        };
        close(
            test_loglik(&ten, Some(1.0)).unwrap(),
            -5.0 * (2.0 * std::f64::consts::PI).ln(),
            1e-12,
        );
    }

    #[test]
    fn invalid_grids_rejected() {
        let cfg = LaplaceConfig {
            delta_grid: vec![1.0, 0.5],
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = LaplaceConfig {
            delta_grid: vec![],
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
