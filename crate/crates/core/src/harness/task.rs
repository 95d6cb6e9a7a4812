//! Synthetic rotation-symmetric tasks.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::StandardNormal;

use super::geometry::{radius_of_gyration, Cloud, GroupElement};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    /// Class `c` is a regular `(c + 3)`-gon.
    ShapeClassification { num_classes: usize },
    /// Anisotropic Gaussian blobs; target is the radius of gyration.
    InvariantRegression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Aligned,
    Rotated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub calibration: usize,
    pub test: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointCloudTask {
    pub kind: TaskKind,
    pub points_per_cloud: usize,
    pub mode: Mode,
    pub noise_scale: f64,
    pub sizes: SplitSizes,
    pub seed: u64,
}

impl PointCloudTask {
    pub fn validate(&self) -> Result<()> {
        let s = self.sizes;
        if s.train == 0 || s.calibration == 0 || s.test == 0 {
            return Err(Error::Config("every split needs at least one sample".into()));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale > 0.0) {
            return Err(Error::Config(format!(
                "noise_scale must be positive, got {}",
                self.noise_scale
            )));
        }
        match self.kind {
            TaskKind::ShapeClassification { num_classes } => {
                if self.points_per_cloud < 3 {
                    return Err(Error::Config(format!(
                        "classification needs at least 3 points per cloud, got {}",
                        self.points_per_cloud
                    )));
                }
                if num_classes < 2 {
                    return Err(Error::Config(format!("need at least 2 classes, got {num_classes}")));
                }
            }
            TaskKind::InvariantRegression => {
                if self.points_per_cloud < 2 {
                    return Err(Error::Config(format!(
                        "regression needs at least 2 points per cloud, got {}",
                        self.points_per_cloud
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RawTargets {
    Classes(Vec<usize>),
    Values(Vec<f64>),
}

impl RawTargets {
    pub fn len(&self) -> usize {
        match self {
            RawTargets::Classes(c) => c.len(),
            RawTargets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawSplit {
    pub clouds: Vec<Cloud>,
    pub targets: RawTargets,
}

impl RawSplit {
    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawDatasets {
    pub task: PointCloudTask,
    pub train: RawSplit,
    pub calibration: RawSplit,
    pub test: RawSplit,
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Vertices of a regular `sides`-gon of unit circumradius, mapped onto
/// `points` slots: slot `j` takes vertex `⌊j·sides/points⌋`.
pub fn polygon_points(sides: usize, points: usize) -> Cloud {
    (0..points)
        .map(|j| {
            let v = j * sides / points;
            let a = TAU * v as f64 / sides as f64;
            [a.cos(), a.sin()]
        })
        .collect()
}

fn shape_sample<R: Rng>(rng: &mut R, class: usize, task: &PointCloudTask) -> Cloud {
    polygon_points(class + 3, task.points_per_cloud)
        .into_iter()
        .map(|[x, y]| {
            [
                x + task.noise_scale * normal(rng),
                y + task.noise_scale * normal(rng),
            ]
        })
        .collect()
}

fn blob_sample<R: Rng>(rng: &mut R, task: &PointCloudTask) -> Cloud {
    let sx = 0.3 + 0.9 * rng.random::<f64>();
    let sy = 0.3 + 0.9 * rng.random::<f64>();
    (0..task.points_per_cloud)
        .map(|_| {
            let x = sx * normal(rng) + task.noise_scale * normal(rng);
            let y = sy * normal(rng) + task.noise_scale * normal(rng);
            [x, y]
        })
        .collect()
}

fn generate_split(task: &PointCloudTask, split_index: u64, n: usize) -> RawSplit {
    let mut r = rng::stream(task.seed, split_index);
    let mut clouds = Vec::with_capacity(n);
    let targets = match task.kind {
        TaskKind::ShapeClassification { num_classes } => {
            let labels: Vec<usize> = (0..n).map(|i| i % num_classes).collect();
            for &c in &labels {
                clouds.push(shape_sample(&mut r, c, task));
            }
            RawTargets::Classes(labels)
        }
        TaskKind::InvariantRegression => {
            for _ in 0..n {
                clouds.push(blob_sample(&mut r, task));
            }
            RawTargets::Values(Vec::new())
        }
    };
    if task.mode == Mode::Rotated {
        for cloud in clouds.iter_mut() {
            *cloud = GroupElement::random(&mut r).apply(cloud);
        }
    }
    let targets = match targets {
        RawTargets::Values(_) => RawTargets::Values(clouds.iter().map(|c| radius_of_gyration(c)).collect()),
        t => t,
    };
    RawSplit { clouds, targets }
}

/// Generates train, calibration and test splits; fully determined by `task`.
pub fn generate_task(task: &PointCloudTask) -> Result<RawDatasets> {
    task.validate()?;
    Ok(RawDatasets {
        task: *task,
        train: generate_split(task, 0, task.sizes.train),
        calibration: generate_split(task, 1, task.sizes.calibration),
        test: generate_split(task, 2, task.sizes.test),
    })
}
