//! Independent oracles and fixture builders shared by the integration tests.
//! Nothing here calls into the library's numerical code.

#![allow(dead_code)]

use equisel::tensor_io::{
    ConstraintTag, LastLayer, Matrix, ModelDump, SplitData, TaskSpec, Targets, SCHEMA_VERSION,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(r: &mut ChaCha8Rng) -> f64 {
    r.sample(StandardNormal)
}

/// Dense row-major square matrix helpers.
pub type Dense = Vec<Vec<f64>>;

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: &Dense) -> Dense {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let v = a[i][i] - s;
                assert!(v > 0.0, "matrix not positive definite");
                l[i][j] = v.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    l
}

pub fn chol_logdet(l: &Dense) -> f64 {
    2.0 * (0..l.len()).map(|i| l[i][i].ln()).sum::<f64>()
}

pub fn chol_solve(l: &Dense, b: &[f64]) -> Vec<f64> {
    let n = l.len();
    let mut z = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i][k] * z[k]).sum();
        z[i] = (b[i] - s) / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k][i] * x[k]).sum();
        x[i] = (z[i] - s) / l[i][i];
    }
    x
}

/// Bayesian linear regression with design `x` (rows include any bias
/// column), prior N(0, δ⁻¹I) and noise σ.
pub struct Conjugate {
    pub x: Dense,
    pub y: Vec<f64>,
}

impl Conjugate {
    fn precision(&self, delta: f64, sigma: f64) -> Dense {
        let p = self.x[0].len();
        let beta = 1.0 / (sigma * sigma);
        let mut a = vec![vec![0.0; p]; p];
        for row in &self.x {
            for i in 0..p {
                for j in 0..p {
                    a[i][j] += beta * row[i] * row[j];
                }
            }
        }
        for (i, r) in a.iter_mut().enumerate() {
            r[i] += delta;
        }
        a
    }

    /// Posterior mean (ridge MAP).
    pub fn map(&self, delta: f64, sigma: f64) -> Vec<f64> {
        let p = self.x[0].len();
        let beta = 1.0 / (sigma * sigma);
        let mut b = vec![0.0; p];
        for (row, y) in self.x.iter().zip(&self.y) {
            for i in 0..p {
                b[i] += beta * row[i] * y;
            }
        }
        chol_solve(&cholesky(&self.precision(delta, sigma)), &b)
    }

    /// Closed-form log evidence log p(y | δ, σ).
    pub fn log_evidence(&self, delta: f64, sigma: f64) -> f64 {
        let n = self.y.len() as f64;
        let p = self.x[0].len() as f64;
        let beta = 1.0 / (sigma * sigma);
        let l = cholesky(&self.precision(delta, sigma));
        let m = self.map(delta, sigma);
        let sse: f64 = self
            .x
            .iter()
            .zip(&self.y)
            .map(|(row, y)| {
                let f: f64 = row.iter().zip(&m).map(|(a, b)| a * b).sum();
                (y - f) * (y - f)
            })
            .sum();
        let mm: f64 = m.iter().map(|v| v * v).sum();
        -0.5 * n * (2.0 * std::f64::consts::PI).ln() + 0.5 * n * beta.ln() + 0.5 * p * delta.ln()
            - 0.5 * chol_logdet(&l)
            - 0.5 * beta * sse
            - 0.5 * delta * mm
    }
}

fn split(features: Matrix<f64>, targets: Targets) -> SplitData {
    SplitData { features, targets }
}

/// Regression dump whose train split is `(features, y)`; calibration and
/// test reuse it. `theta` is `[w_0..w_{d-1}, b]`.
pub fn regression_dump(features: &Dense, y: &[f64], theta: &[f64], sigma_obs: Option<f64>) -> ModelDump {
    let d = features[0].len();
    let f = Matrix::from_rows(d, features).unwrap();
    let s = split(f, Targets::values(y.to_vec()));
    ModelDump {
        schema_version: SCHEMA_VERSION,
        model_name: "conjugate".into(),
        constraint_tag: ConstraintTag::Other("oracle".into()),
        task: TaskSpec::Regression { sigma_obs },
        last_layer: LastLayer {
            weights: Matrix::new(1, d, theta[..d].to_vec()).unwrap(),
            bias: Matrix::column(vec![theta[d]]),
        },
        train: s.clone(),
        calibration: s.clone(),
        test: s,
    }
}

pub fn classification_dump(
    features: &Dense,
    labels: &[usize],
    weights: &Dense,
    bias: &[f64],
) -> ModelDump {
    let d = features[0].len();
    let k = weights.len();
    let s = split(Matrix::from_rows(d, features).unwrap(), Targets::classes(labels));
    ModelDump {
        schema_version: SCHEMA_VERSION,
        model_name: "softmax".into(),
        constraint_tag: ConstraintTag::Other("oracle".into()),
        task: TaskSpec::Classification { num_classes: k },
        last_layer: LastLayer {
            weights: Matrix::from_rows(d, weights).unwrap(),
            bias: Matrix::column(bias.to_vec()),
        },
        train: s.clone(),
        calibration: s.clone(),
        test: s,
    }
}

/// Softmax over one row, computed directly.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Gradient of Σᵢ −log softmax(W x̃ᵢ)_{yᵢ} with θ laid out class-major as
/// `[w_k0..w_k(d-1), b_k]` for each class k.
pub fn softmax_nll_grad(features: &Dense, labels: &[usize], theta: &[f64], k: usize) -> Vec<f64> {
    let d = features[0].len();
    let mut g = vec![0.0; theta.len()];
    for (x, &y) in features.iter().zip(labels) {
        let z: Vec<f64> = (0..k)
            .map(|c| {
                let w = &theta[c * (d + 1)..(c + 1) * (d + 1)];
                w[d] + (0..d).map(|j| w[j] * x[j]).sum::<f64>()
            })
            .collect();
        let p = softmax(&z);
        for c in 0..k {
            let r = p[c] - if c == y { 1.0 } else { 0.0 };
            for j in 0..d {
                g[c * (d + 1) + j] += r * x[j];
            }
            g[c * (d + 1) + d] += r;
        }
    }
    g
}

pub fn random_dense(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Dense {
    (0..rows).map(|_| (0..cols).map(|_| normal(r)).collect()).collect()
}
