//! Desk-scale synthetic harness: rotation-symmetric 2-D point-cloud tasks,
//! four toy model variants that differ only in how they handle rotations,
//! and export into [`ModelDump`]s.

pub mod features;
pub mod geometry;
pub mod mlp;
pub mod task;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor_io::{
    write_dump, ConstraintTag, LastLayer, Matrix, ModelDump, SplitData, TaskSpec, Targets,
    SCHEMA_VERSION,
};
pub use geometry::{Cloud, GroupElement, Point};
use mlp::{Adam, Loss, Mlp, Shape, Target};
pub use task::{generate_task, Mode, PointCloudTask, RawDatasets, RawSplit, RawTargets, SplitSizes, TaskKind};

pub const BATCH_SIZE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Invariant,
    Equivariant,
    Augment,
    Plain,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Invariant,
        Variant::Equivariant,
        Variant::Augment,
        Variant::Plain,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Invariant => "invariant",
            Variant::Equivariant => "equivariant",
            Variant::Augment => "augment",
            Variant::Plain => "plain",
        }
    }

    pub fn constraint_tag(self) -> ConstraintTag {
        match self {
            Variant::Invariant => ConstraintTag::Invariant,
            Variant::Equivariant => ConstraintTag::Equivariant,
            Variant::Augment => ConstraintTag::Augment,
            Variant::Plain => ConstraintTag::Plain,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inv" | "invariant" => Ok(Variant::Invariant),
            "equi" | "equivariant" => Ok(Variant::Equivariant),
            "aug" | "augment" => Ok(Variant::Augment),
            "plain" => Ok(Variant::Plain),
            other => Err(Error::Config(format!("unknown model variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyModelSpec {
    pub variant: Variant,
    pub hidden_dim: usize,
    pub feature_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub train_seed: u64,
}

impl ToyModelSpec {
    pub fn new(variant: Variant, train_seed: u64) -> Self {
        Self {
            variant,
            hidden_dim: 32,
            feature_dim: 16,
            epochs: 200,
            learning_rate: 1e-3,
            train_seed,
        }
    }
}

/// Per-input standardization fitted on the unaugmented training inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct InputScaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputScaler {
    fn fit(rows: &[Vec<f64>]) -> Self {
        let dim = rows.first().map_or(0, Vec::len);
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 { sd } else { 1.0 }
            })
            .collect();
        Self { mean, scale }
    }

    fn apply(&self, mut x: Vec<f64>) -> Vec<f64> {
        for ((v, m), s) in x.iter_mut().zip(&self.mean).zip(&self.scale) {
            *v = (*v - m) / s;
        }
        x
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    /// Mean training loss on unaugmented inputs before the first update.
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Mean minibatch loss per epoch.
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedToyModel {
    pub spec: ToyModelSpec,
    pub task: TaskKind,
    pub scaler: InputScaler,
    pub mlp: Mlp,
    pub report: TrainingReport,
}

impl TrainedToyModel {
    /// Standardized network input for one cloud.
    pub fn encode(&self, cloud: &[Point]) -> Vec<f64> {
        self.scaler.apply(features::featurize(self.spec.variant, cloud))
    }

    /// Exported penultimate representation.
    pub fn feature_map(&self, cloud: &[Point]) -> Vec<f64> {
        self.mlp.features(&self.encode(cloud))
    }

    /// Logits (classification) or the scalar prediction (regression).
    pub fn outputs(&self, cloud: &[Point]) -> Vec<f64> {
        self.mlp.forward(&self.encode(cloud))
    }

    pub fn last_layer(&self) -> LastLayer {
        let s = self.mlp.shape();
        LastLayer {
            weights: Matrix::new(s.output, s.features, self.mlp.head_weights().to_vec())
                .expect("head shape"),
            bias: Matrix::column(self.mlp.head_bias().to_vec()),
        }
    }

    pub fn loss_on(&self, split: &RawSplit) -> f64 {
        let inputs: Vec<Vec<f64>> = split.clouds.iter().map(|c| self.encode(c)).collect();
        let refs: Vec<&[f64]> = inputs.iter().map(|x| x.as_slice()).collect();
        self.mlp.loss(&refs, &raw_targets(&split.targets), loss_kind(&self.task))
    }
}

pub fn loss_kind(task: &TaskKind) -> Loss {
    match task {
        TaskKind::ShapeClassification { .. } => Loss::CrossEntropy,
        TaskKind::InvariantRegression => Loss::SquaredError,
    }
}

pub fn raw_targets(targets: &RawTargets) -> Vec<Target> {
    match targets {
        RawTargets::Classes(c) => c.iter().map(|&y| Target::Class(y)).collect(),
        RawTargets::Values(v) => v.iter().map(|&y| Target::Value(y)).collect(),
    }
}

fn output_dim(task: &TaskKind) -> usize {
    match *task {
        TaskKind::ShapeClassification { num_classes } => num_classes,
        TaskKind::InvariantRegression => 1,
    }
}

/// Untrained network and scaler exactly as training would start from them.
pub fn initial_model(spec: &ToyModelSpec, train: &RawSplit, task: TaskKind) -> Result<TrainedToyModel> {
    if train.is_empty() {
        return Err(Error::EmptyInput("training data"));
    }
    let points = train.clouds[0].len();
    let raw_inputs: Vec<Vec<f64>> = train
        .clouds
        .iter()
        .map(|c| features::featurize(spec.variant, c))
        .collect();
    let scaler = InputScaler::fit(&raw_inputs);
    let shape = Shape {
        input: features::input_dim(spec.variant, points),
        hidden: spec.hidden_dim,
        features: spec.feature_dim,
        output: output_dim(&task),
    };
    let mut mlp = Mlp::init(shape, &mut rng::stream(spec.train_seed, 0));
    if let RawTargets::Values(v) = &train.targets {
        mlp.head_bias_mut()[0] = v.iter().sum::<f64>() / v.len() as f64;
    }
    let mut model = TrainedToyModel {
        spec: *spec,
        task,
        scaler,
        mlp,
        report: TrainingReport {
            initial_loss: 0.0,
            final_loss: 0.0,
            epoch_losses: Vec::new(),
        },
    };
    let initial = model.loss_on(train);
    model.report.initial_loss = initial;
    model.report.final_loss = initial;
    Ok(model)
}

/// Minibatch Adam training. Augment redraws a uniform rotation for every
/// sample in every epoch before featurization.
pub fn train_toy_model(spec: &ToyModelSpec, train: &RawSplit, task: TaskKind) -> Result<TrainedToyModel> {
    if !(spec.learning_rate.is_finite() && spec.learning_rate > 0.0) {
        return Err(Error::Config(format!(
            "learning rate must be positive, got {}",
            spec.learning_rate
        )));
    }
    let mut model = initial_model(spec, train, task)?;
    let targets = raw_targets(&train.targets);
    let loss = loss_kind(&task);
    let fixed_inputs: Vec<Vec<f64>> = train.clouds.iter().map(|c| model.encode(c)).collect();
    let mut order_rng = rng::stream(spec.train_seed, 1);
    let mut aug_rng = rng::stream(spec.train_seed, 2);
    let mut adam = Adam::new(model.mlp.shape().param_count(), spec.learning_rate);
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..spec.epochs {
        let augmented: Option<Vec<Vec<f64>>> = (spec.variant == Variant::Augment).then(|| {
            train
                .clouds
                .iter()
                .map(|c| model.encode(&GroupElement::random(&mut aug_rng).apply(c)))
                .collect()
        });
        let inputs = augmented.as_ref().unwrap_or(&fixed_inputs);
        order.shuffle(&mut order_rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(BATCH_SIZE) {
            let xs: Vec<&[f64]> = batch.iter().map(|&i| inputs[i].as_slice()).collect();
            let ys: Vec<Target> = batch.iter().map(|&i| targets[i]).collect();
            let (value, grad) = model.mlp.loss_and_grad(&xs, &ys, loss);
            if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Training { epoch, loss: value });
            }
            adam.step(model.mlp.params_mut(), &grad);
            epoch_loss += value;
            batches += 1;
        }
        model.report.epoch_losses.push(epoch_loss / batches as f64);
    }
    let final_loss = model.loss_on(train);
    if !final_loss.is_finite() {
        return Err(Error::Training {
            epoch: spec.epochs,
            loss: final_loss,
        });
    }
    model.report.final_loss = final_loss;
    Ok(model)
}

fn export_split(model: &TrainedToyModel, split: &RawSplit) -> Result<SplitData> {
    let d = model.spec.feature_dim;
    let mut data = Vec::with_capacity(split.len() * d);
    for c in &split.clouds {
        data.extend(model.feature_map(c));
    }
    let targets = match &split.targets {
        RawTargets::Classes(c) => Targets::classes(c),
        RawTargets::Values(v) => Targets::values(v.clone()),
    };
    Ok(SplitData {
        features: Matrix::new(split.len(), d, data)?,
        targets,
    })
}

/// Runs the feature map over every split and packages the result; writes it
/// to `out` when given.
pub fn export_dump(model: &TrainedToyModel, data: &RawDatasets, out: Option<&Path>) -> Result<ModelDump> {
    let task = match data.task.kind {
        TaskKind::ShapeClassification { num_classes } => TaskSpec::Classification { num_classes },
        TaskKind::InvariantRegression => TaskSpec::Regression { sigma_obs: None },
    };
    let dump = ModelDump {
        schema_version: SCHEMA_VERSION,
        model_name: model.spec.variant.name().to_string(),
        constraint_tag: model.spec.variant.constraint_tag(),
        task,
        last_layer: model.last_layer(),
        train: export_split(model, &data.train)?,
        calibration: export_split(model, &data.calibration)?,
        test: export_split(model, &data.test)?,
    };
    dump.validate()?;
    if let Some(dir) = out {
        write_dump(&dump, dir)?;
    }
    Ok(dump)
}

/// Everything `equisel synth` needs.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub task: PointCloudTask,
    pub variants: Vec<Variant>,
    pub hidden_dim: usize,
    pub feature_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub train_seed: u64,
}

impl SynthConfig {
    pub fn spec(&self, variant: Variant) -> ToyModelSpec {
        ToyModelSpec {
            variant,
            hidden_dim: self.hidden_dim,
            feature_dim: self.feature_dim,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            train_seed: self.train_seed,
        }
    }

    /// Default rotated radius-of-gyration regression setup.
    pub fn rotated_regression() -> Self {
        Self::defaults(PointCloudTask {
            kind: TaskKind::InvariantRegression,
            points_per_cloud: 16,
            mode: Mode::Rotated,
            noise_scale: 0.05,
            sizes: SplitSizes {
                train: 1000,
                calibration: 500,
                test: 500,
            },
            seed: 0,
        })
    }

    /// Default rotationally aligned polygon classification setup.
    pub fn aligned_classification() -> Self {
        Self::defaults(PointCloudTask {
            kind: TaskKind::ShapeClassification { num_classes: 6 },
            points_per_cloud: 12,
            mode: Mode::Aligned,
            noise_scale: 0.15,
            sizes: SplitSizes {
                train: 1000,
                calibration: 500,
                test: 500,
            },
            seed: 0,
        })
    }

    fn defaults(task: PointCloudTask) -> Self {
        let spec = ToyModelSpec::new(Variant::Plain, 0);
        Self {
            task,
            variants: Variant::ALL.to_vec(),
            hidden_dim: spec.hidden_dim,
            feature_dim: spec.feature_dim,
            epochs: spec.epochs,
            learning_rate: spec.learning_rate,
            train_seed: spec.train_seed,
        }
    }
}

/// Generates the task once, trains every requested variant (in parallel, each
/// deterministic) and exports one dump per variant under `out/<name>/`.
pub fn run_synth(config: &SynthConfig, out: Option<&Path>) -> Result<Vec<(TrainedToyModel, ModelDump)>> {
    let data = generate_task(&config.task)?;
    config
        .variants
        .par_iter()
        .map(|&v| {
            let model = train_toy_model(&config.spec(v), &data.train, data.task.kind)?;
            let dir = out.map(|o| o.join(v.name()));
            let dump = export_dump(&model, &data, dir.as_deref())?;
            Ok((model, dump))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::forward_last_layer;

    fn small_task(kind: TaskKind, mode: Mode) -> PointCloudTask {
        PointCloudTask {
            kind,
            points_per_cloud: 8,
            mode,
            noise_scale: 0.1,
            sizes: SplitSizes {
                train: 64,
                calibration: 16,
                test: 16,
            },
            seed: 5,
        }
    }

    fn spec(variant: Variant, epochs: usize) -> ToyModelSpec {
        ToyModelSpec {
            epochs,
            hidden_dim: 8,
            feature_dim: 4,
            ..ToyModelSpec::new(variant, 3)
        }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let data = generate_task(&small_task(TaskKind::InvariantRegression, Mode::Rotated)).unwrap();
        for v in Variant::ALL {
            let init = initial_model(&spec(v, 0), &data.train, data.task.kind).unwrap();
            let trained = train_toy_model(&spec(v, 0), &data.train, data.task.kind).unwrap();
            assert_eq!(init.mlp, trained.mlp);
        }
    }

    #[test]
    fn augment_and_plain_share_architecture_and_init() {
        let data = generate_task(&small_task(
            TaskKind::ShapeClassification { num_classes: 3 },
            Mode::Aligned,
        ))
        .unwrap();
        let a = initial_model(&spec(Variant::Augment, 0), &data.train, data.task.kind).unwrap();
        let p = initial_model(&spec(Variant::Plain, 0), &data.train, data.task.kind).unwrap();
        assert_eq!(a.mlp, p.mlp);
        let a = train_toy_model(&spec(Variant::Augment, 2), &data.train, data.task.kind).unwrap();
        let p = train_toy_model(&spec(Variant::Plain, 2), &data.train, data.task.kind).unwrap();
        assert_ne!(a.mlp, p.mlp);
    }

    #[test]
    fn exported_logits_match_direct_outputs() {
        let data = generate_task(&small_task(
            TaskKind::ShapeClassification { num_classes: 3 },
            Mode::Rotated,
        ))
        .unwrap();
        let model = train_toy_model(&spec(Variant::Equivariant, 3), &data.train, data.task.kind).unwrap();
        let dump = export_dump(&model, &data, None).unwrap();
        let logits = forward_last_layer(&dump.test.features, &dump.last_layer).unwrap();
        for (i, cloud) in data.test.clouds.iter().enumerate() {
            for (a, b) in logits.row(i).iter().zip(model.outputs(cloud)) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
        assert_eq!(dump.constraint_tag, ConstraintTag::Equivariant);
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = SynthConfig {
            epochs: 3,
            hidden_dim: 8,
            feature_dim: 4,
            task: small_task(TaskKind::InvariantRegression, Mode::Rotated),
            ..SynthConfig::rotated_regression()
        };
        let a = run_synth(&cfg, None).unwrap();
        let b = run_synth(&cfg, None).unwrap();
        for ((_, x), (_, y)) in a.iter().zip(&b) {
            assert!(x.bit_eq(y));
        }
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("inv".parse::<Variant>().unwrap(), Variant::Invariant);
        assert_eq!("equivariant".parse::<Variant>().unwrap(), Variant::Equivariant);
        assert!("cnn".parse::<Variant>().is_err());
    }
}
