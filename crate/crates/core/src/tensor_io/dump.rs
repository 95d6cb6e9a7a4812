//! Model dump bundle: a directory holding `manifest.toml` plus matrix files.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::matrix::{read_any_matrix, read_matrix, write_matrix, AnyMatrix, Matrix};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.toml";

/// Symmetry handling of the model that produced a dump.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ConstraintTag {
    Invariant,
    Equivariant,
    Augment,
    Plain,
    Other(String),
}

impl ConstraintTag {
    pub fn as_str(&self) -> &str {
        match self {
            ConstraintTag::Invariant => "invariant",
            ConstraintTag::Equivariant => "equivariant",
            ConstraintTag::Augment => "augment",
            ConstraintTag::Plain => "plain",
            ConstraintTag::Other(s) => s,
        }
    }

    pub fn parse(s: &str) -> Self {
        match s {
            "invariant" => ConstraintTag::Invariant,
            "equivariant" => ConstraintTag::Equivariant,
            "augment" => ConstraintTag::Augment,
            "plain" => ConstraintTag::Plain,
            other => ConstraintTag::Other(other.to_string()),
        }
    }
}

impl fmt::Display for ConstraintTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for ConstraintTag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ConstraintTag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(ConstraintTag::parse(&s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TaskSpec {
    Classification { num_classes: usize },
    /// `sigma_obs` is the Gaussian observation-noise scale, if known.
    Regression { sigma_obs: Option<f64> },
}

impl TaskSpec {
    pub fn output_dim(&self) -> usize {
        match *self {
            TaskSpec::Classification { num_classes } => num_classes,
            TaskSpec::Regression { .. } => 1,
        }
    }

    pub fn is_classification(&self) -> bool {
        matches!(self, TaskSpec::Classification { .. })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            TaskSpec::Classification { num_classes } if num_classes < 2 => Err(
                Error::validation("task.num_classes", format!("{num_classes} < 2")),
            ),
            TaskSpec::Regression {
                sigma_obs: Some(sigma),
            } if !(sigma.is_finite() && sigma > 0.0) => Err(Error::validation(
                "task.sigma_obs",
                format!("{sigma} is not a positive real"),
            )),
            _ => Ok(()),
        }
    }
}

/// Split targets: class indices or real values, stored as an n x 1 matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes(Matrix<i64>),
    Values(Matrix<f64>),
}

impl Targets {
    pub fn classes(labels: &[usize]) -> Self {
        Targets::Classes(Matrix::column(labels.iter().map(|&c| c as i64).collect()))
    }

    pub fn values(values: Vec<f64>) -> Self {
        Targets::Values(Matrix::column(values))
    }

    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(m) => m.rows(),
            Targets::Values(m) => m.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_classes(&self) -> Option<&[i64]> {
        match self {
            Targets::Classes(m) => Some(m.data()),
            Targets::Values(_) => None,
        }
    }

    pub fn as_values(&self) -> Option<&[f64]> {
        match self {
            Targets::Values(m) => Some(m.data()),
            Targets::Classes(_) => None,
        }
    }

    /// Class labels as `usize`; only valid after dump validation.
    pub fn class_labels(&self) -> Option<Vec<usize>> {
        self.as_classes()
            .map(|c| c.iter().map(|&v| v as usize).collect())
    }

    fn bit_eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Targets::Classes(a), Targets::Classes(b)) => a.bit_eq(b),
            (Targets::Values(a), Targets::Values(b)) => a.bit_eq(b),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitData {
    pub features: Matrix<f64>,
    pub targets: Targets,
}

impl SplitData {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Final linear layer: `weights` is K x d, `bias` is K x 1.
#[derive(Debug, Clone, PartialEq)]
pub struct LastLayer {
    pub weights: Matrix<f64>,
    pub bias: Matrix<f64>,
}

impl LastLayer {
    pub fn output_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    /// Parameters flattened per output row as `[w_k0 .. w_k(d-1), b_k]`.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.output_dim() * (self.input_dim() + 1));
        for k in 0..self.output_dim() {
            out.extend_from_slice(self.weights.row(k));
            out.push(self.bias.get(k, 0));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelDump {
    pub schema_version: u32,
    pub model_name: String,
    pub constraint_tag: ConstraintTag,
    pub task: TaskSpec,
    pub last_layer: LastLayer,
    pub train: SplitData,
    pub calibration: SplitData,
    pub test: SplitData,
}

impl ModelDump {
    pub fn splits(&self) -> [(&'static str, &SplitData); 3] {
        [
            ("train", &self.train),
            ("calibration", &self.calibration),
            ("test", &self.test),
        ]
    }

    pub fn feature_dim(&self) -> usize {
        self.last_layer.input_dim()
    }

    /// Checks every cross-field invariant; the first violation is returned.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::validation(
                "schema_version",
                format!("unsupported version {}", self.schema_version),
            ));
        }
        self.task.validate()?;
        let k = self.task.output_dim();
        let weights = &self.last_layer.weights;
        let bias = &self.last_layer.bias;
        if weights.rows() != k {
            return Err(Error::validation(
                "last_layer.weights",
                format!("has {} rows, task needs {k}", weights.rows()),
            ));
        }
        if bias.shape() != (k, 1) {
            return Err(Error::validation(
                "last_layer.bias",
                format!("shape {:?}, expected ({k}, 1)", bias.shape()),
            ));
        }
        for (field, m) in [("last_layer.weights", weights), ("last_layer.bias", bias)] {
            if let Some((r, c)) = m.first_non_finite() {
                return Err(Error::validation(
                    field,
                    format!("non-finite value at row {r}, col {c}"),
                ));
            }
        }
        let d = weights.cols();
        for (name, split) in self.splits() {
            let field = |leaf: &str| format!("splits.{name}.{leaf}");
            if split.features.cols() != d {
                return Err(Error::validation(
                    field("features"),
                    format!(
                        "feature dim mismatch: features have {} columns, weights have {d}",
                        split.features.cols()
                    ),
                ));
            }
            if let Some((r, c)) = split.features.first_non_finite() {
                return Err(Error::validation(
                    field("features"),
                    format!("non-finite value at row {r}, col {c}"),
                ));
            }
            let (t_rows, t_cols) = match &split.targets {
                Targets::Classes(m) => m.shape(),
                Targets::Values(m) => m.shape(),
            };
            if t_cols != 1 {
                return Err(Error::validation(
                    field("targets"),
                    format!("targets must be a column, found {t_cols} columns"),
                ));
            }
            if t_rows != split.features.rows() {
                return Err(Error::validation(
                    field("targets"),
                    format!(
                        "{t_rows} targets for {} feature rows",
                        split.features.rows()
                    ),
                ));
            }
            match (&self.task, &split.targets) {
                (TaskSpec::Classification { num_classes }, Targets::Classes(m)) => {
                    if let Some((i, &c)) = m
                        .data()
                        .iter()
                        .enumerate()
                        .find(|(_, &c)| c < 0 || c as u64 >= *num_classes as u64)
                    {
                        return Err(Error::validation(
                            field("targets"),
                            format!("target out of range: row {i} has class {c}, num_classes = {num_classes}"),
                        ));
                    }
                }
                (TaskSpec::Regression { .. }, Targets::Values(m)) => {
                    if let Some((r, _)) = m.first_non_finite() {
                        return Err(Error::validation(
                            field("targets"),
                            format!("non-finite target at row {r}"),
                        ));
                    }
                }
                (TaskSpec::Classification { .. }, Targets::Values(_)) => {
                    return Err(Error::validation(
                        field("targets"),
                        "classification targets must be i64 class indices",
                    ))
                }
                (TaskSpec::Regression { .. }, Targets::Classes(_)) => {
                    return Err(Error::validation(
                        field("targets"),
                        "regression targets must be f64",
                    ))
                }
            }
        }
        Ok(())
    }

    /// Bit-exact equality of every matrix plus metadata.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.schema_version == other.schema_version
            && self.model_name == other.model_name
            && self.constraint_tag == other.constraint_tag
            && task_bit_eq(&self.task, &other.task)
            && self.last_layer.weights.bit_eq(&other.last_layer.weights)
            && self.last_layer.bias.bit_eq(&other.last_layer.bias)
            && self
                .splits()
                .iter()
                .zip(other.splits().iter())
                .all(|((_, a), (_, b))| {
                    a.features.bit_eq(&b.features) && a.targets.bit_eq(&b.targets)
                })
    }
}

fn task_bit_eq(a: &TaskSpec, b: &TaskSpec) -> bool {
    match (a, b) {
        (
            TaskSpec::Classification { num_classes: x },
            TaskSpec::Classification { num_classes: y },
        ) => x == y,
        (TaskSpec::Regression { sigma_obs: x }, TaskSpec::Regression { sigma_obs: y }) => {
            x.map(f64::to_bits) == y.map(f64::to_bits)
        }
        _ => false,
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    schema_version: u32,
    model_name: String,
    constraint_tag: ConstraintTag,
    task: ManifestTask,
    last_layer: ManifestLastLayer,
    splits: ManifestSplits,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestTask {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    num_classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigma_obs: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestLastLayer {
    weights: String,
    bias: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestSplit {
    features: String,
    targets: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestSplits {
    train: ManifestSplit,
    calibration: ManifestSplit,
    test: ManifestSplit,
}

impl ManifestTask {
    fn to_spec(&self) -> Result<TaskSpec> {
        match self.kind.as_str() {
            "classification" => {
                let num_classes = self.num_classes.ok_or_else(|| {
                    Error::validation("task.num_classes", "missing for classification")
                })?;
                if self.sigma_obs.is_some() {
                    return Err(Error::validation(
                        "task.sigma_obs",
                        "not allowed for classification",
                    ));
                }
                Ok(TaskSpec::Classification { num_classes })
            }
            "regression" => {
                if self.num_classes.is_some() {
                    return Err(Error::validation(
                        "task.num_classes",
                        "not allowed for regression",
                    ));
                }
                Ok(TaskSpec::Regression {
                    sigma_obs: self.sigma_obs,
                })
            }
            other => Err(Error::validation(
                "task.kind",
                format!("unknown kind `{other}`"),
            )),
        }
    }

    fn from_spec(task: &TaskSpec) -> Self {
        match *task {
            TaskSpec::Classification { num_classes } => ManifestTask {
                kind: "classification".into(),
                num_classes: Some(num_classes),
                sigma_obs: None,
            },
            TaskSpec::Regression { sigma_obs } => ManifestTask {
                kind: "regression".into(),
                num_classes: None,
                sigma_obs,
            },
        }
    }
}

fn split_paths(name: &str) -> ManifestSplit {
    ManifestSplit {
        features: format!("{name}.features.eqmx"),
        targets: format!("{name}.targets.eqmx"),
    }
}

fn write_file<T: super::matrix::Element>(dir: &Path, rel: &str, m: &Matrix<T>) -> Result<()> {
    let path = dir.join(rel);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_matrix(m, BufWriter::new(file)).map_err(|e| match e {
        Error::IoAt { source, .. } => Error::io(&path, source),
        other => other,
    })?;
    Ok(())
}

fn open(dir: &Path, rel: &str, field: &str) -> Result<BufReader<File>> {
    let rel_path = Path::new(rel);
    if rel_path.is_absolute()
        || rel_path
            .components()
            .any(|c| matches!(c, std::path::Component::ParentDir))
    {
        return Err(Error::validation(
            field,
            format!("`{rel}` must be a relative path inside the dump directory"),
        ));
    }
    let path = dir.join(rel_path);
    File::open(&path)
        .map(BufReader::new)
        .map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => {
                Error::validation(field, format!("missing file {}", path.display()))
            }
            _ => Error::io(&path, e),
        })
}

fn with_field<T>(field: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Validation { message, .. } => Error::validation(field, message),
        Error::Format(m) => Error::validation(field, format!("format error: {m}")),
        Error::Truncation { expected, actual } => Error::validation(
            field,
            format!("truncated payload: expected {expected} bytes, found {actual}"),
        ),
        other => other,
    })
}

/// Writes `dump` into `dir` (created if needed). File contents depend only on
/// the dump, so repeated writes are byte-identical.
pub fn write_dump(dump: &ModelDump, dir: &Path) -> Result<()> {
    dump.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        schema_version: dump.schema_version,
        model_name: dump.model_name.clone(),
        constraint_tag: dump.constraint_tag.clone(),
        task: ManifestTask::from_spec(&dump.task),
        last_layer: ManifestLastLayer {
            weights: "last_layer.weights.eqmx".into(),
            bias: "last_layer.bias.eqmx".into(),
        },
        splits: ManifestSplits {
            train: split_paths("train"),
            calibration: split_paths("calibration"),
            test: split_paths("test"),
        },
    };
    write_file(dir, &manifest.last_layer.weights, &dump.last_layer.weights)?;
    write_file(dir, &manifest.last_layer.bias, &dump.last_layer.bias)?;
    for ((_, split), paths) in dump.splits().iter().zip([
        &manifest.splits.train,
        &manifest.splits.calibration,
        &manifest.splits.test,
    ]) {
        write_file(dir, &paths.features, &split.features)?;
        match &split.targets {
            Targets::Classes(m) => write_file(dir, &paths.targets, m)?,
            Targets::Values(m) => write_file(dir, &paths.targets, m)?,
        }
    }
    let text = toml::to_string(&manifest)
        .map_err(|e| Error::Format(format!("manifest serialization: {e}")))?;
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Loads and fully validates a dump directory.
pub fn load_dump(dir: &Path) -> Result<ModelDump> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::validation(
            "manifest",
            format!("missing file {}", manifest_path.display()),
        ),
        _ => Error::io(&manifest_path, e),
    })?;
    let manifest: Manifest = toml::from_str(&text)
        .map_err(|e| Error::validation("manifest", e.message().to_string()))?;
    let task = manifest.task.to_spec()?;

    let f64_file = |rel: &str, field: &str| -> Result<Matrix<f64>> {
        with_field(field, read_matrix::<f64, _>(open(dir, rel, field)?))
    };
    let weights = f64_file(&manifest.last_layer.weights, "last_layer.weights")?;
    let bias = f64_file(&manifest.last_layer.bias, "last_layer.bias")?;

    let load_split = |name: &str, paths: &ManifestSplit| -> Result<SplitData> {
        let features = f64_file(&paths.features, &format!("splits.{name}.features"))?;
        let field = format!("splits.{name}.targets");
        let targets = match with_field(&field, read_any_matrix(open(dir, &paths.targets, &field)?))? {
            AnyMatrix::I64(m) => Targets::Classes(m),
            AnyMatrix::F64(m) => Targets::Values(m),
        };
        Ok(SplitData { features, targets })
    };
    let dump = ModelDump {
        schema_version: manifest.schema_version,
        model_name: manifest.model_name,
        constraint_tag: manifest.constraint_tag,
        task,
        last_layer: LastLayer { weights, bias },
        train: load_split("train", &manifest.splits.train)?,
        calibration: load_split("calibration", &manifest.splits.calibration)?,
        test: load_split("test", &manifest.splits.test)?,
    };
    dump.validate()?;
    Ok(dump)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn split(n: usize, d: usize, classes: Option<usize>) -> SplitData {
        let features = Matrix::new(n, d, (0..n * d).map(|i| i as f64 * 0.5 - 1.0).collect()).unwrap();
        let targets = match classes {
            Some(k) => Targets::classes(&(0..n).map(|i| i % k).collect::<Vec<_>>()),
            None => Targets::values((0..n).map(|i| i as f64).collect()),
        };
        SplitData { features, targets }
    }

    pub(crate) fn tiny_classification() -> ModelDump {
        let (k, d) = (4, 3);
        ModelDump {
            schema_version: SCHEMA_VERSION,
            model_name: "tiny".into(),
            constraint_tag: ConstraintTag::Invariant,
            task: TaskSpec::Classification { num_classes: k },
            last_layer: LastLayer {
                weights: Matrix::new(k, d, (0..k * d).map(|i| i as f64 / 7.0).collect()).unwrap(),
                bias: Matrix::column(vec![0.1, -0.2, 0.3, 0.0]),
            },
            train: split(8, d, Some(k)),
            calibration: split(5, d, Some(k)),
            test: split(6, d, Some(k)),
        }
    }

    #[test]
    fn write_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let dump = tiny_classification();
        write_dump(&dump, dir.path()).unwrap();
        let back = load_dump(dir.path()).unwrap();
        assert!(back.bit_eq(&dump));
        assert_eq!(back.constraint_tag, ConstraintTag::Invariant);
    }

    #[test]
    fn regression_sigma_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut dump = tiny_classification();
        dump.task = TaskSpec::Regression {
            sigma_obs: Some(0.25),
        };
        dump.last_layer.weights = Matrix::new(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        dump.last_layer.bias = Matrix::column(vec![0.5]);
        dump.train = split(8, 3, None);
        dump.calibration = split(5, 3, None);
        dump.test = split(6, 3, None);
        dump.constraint_tag = ConstraintTag::Other("custom".into());
        write_dump(&dump, dir.path()).unwrap();
        assert!(load_dump(dir.path()).unwrap().bit_eq(&dump));
    }

    #[test]
    fn repeated_writes_are_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let dump = tiny_classification();
        write_dump(&dump, a.path()).unwrap();
        write_dump(&dump, b.path()).unwrap();
        let mut names: Vec<_> = fs::read_dir(a.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        assert_eq!(names.len(), 9);
        for name in names {
            assert_eq!(
                fs::read(a.path().join(&name)).unwrap(),
                fs::read(b.path().join(&name)).unwrap()
            );
        }
    }

    #[test]
    fn out_of_range_target_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let dump = tiny_classification();
        write_dump(&dump, dir.path()).unwrap();
        let bad = Targets::Classes(Matrix::column(vec![0, 1, 7, 2, 3, 0]));
        if let Targets::Classes(m) = &bad {
            write_file(dir.path(), "test.targets.eqmx", m).unwrap();
        }
        let err = load_dump(dir.path()).unwrap_err();
        assert!(err.to_string().contains("target out of range"), "{err}");
        assert!(err.to_string().contains("splits.test.targets"), "{err}");
    }

    #[test]
    fn feature_dim_mismatch_is_rejected() {
        let mut dump = tiny_classification();
        dump.train.features = Matrix::zeros(8, 16);
        dump.last_layer.weights = Matrix::zeros(4, 8);
        for s in [&mut dump.calibration, &mut dump.test] {
            s.features = Matrix::zeros(s.len(), 8);
        }
        let err = dump.validate().unwrap_err();
        assert!(err.to_string().contains("feature dim mismatch"), "{err}");
        assert!(err.to_string().contains("splits.train.features"), "{err}");
    }

    #[test]
    fn missing_file_names_field() {
        let dir = tempfile::tempdir().unwrap();
        write_dump(&tiny_classification(), dir.path()).unwrap();
        fs::remove_file(dir.path().join("calibration.features.eqmx")).unwrap();
        let err = load_dump(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Validation { ref field, .. } if field == "splits.calibration.features"));
    }

    #[test]
    fn write_into_file_path_fails_with_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("blocker");
        fs::write(&blocker, b"x").unwrap();
        let err = write_dump(&tiny_classification(), &blocker.join("dump")).unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn wrong_target_dtype_is_rejected() {
        let mut dump = tiny_classification();
        dump.test.targets = Targets::values(vec![0.0; 6]);
        assert!(dump.validate().is_err());
    }

    #[test]
    fn num_classes_below_two_is_rejected() {
        assert!(TaskSpec::Classification { num_classes: 1 }.validate().is_err());
        assert!(TaskSpec::Regression { sigma_obs: Some(0.0) }.validate().is_err());
        assert!(TaskSpec::Regression { sigma_obs: None }.validate().is_ok());
    }
}
