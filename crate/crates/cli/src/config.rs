//! Experiment configuration: one JSON document, with command-line
//! overrides applied to the parsed document before it is typed.
//!
//! Paths written in the config file are relative to the file's directory;
//! paths given on the command line are relative to the working directory.

use std::path::{Path, PathBuf};

use pinvhead::data::split;
use pinvhead::harness::{default_lr_schedule, Splits};
use pinvhead::{Dataset, HeadSpec, Matrix, TrainPlan};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_features: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_features: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_labels: Option<PathBuf>,
    /// A single table that is split per seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_column: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_fraction: Option<f64>,
}

const PATH_FIELDS: [&str; 5] = [
    "train_features",
    "train_labels",
    "test_features",
    "test_labels",
    "csv",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    /// Every layer width, input dimension first and class count last.
    pub widths: Vec<usize>,
    #[serde(default)]
    pub bias: bool,
    #[serde(default)]
    pub seed: u64,
    pub plan: TrainPlan,
    /// Constant SGD learning rate; shorthand for a one-group schedule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_dir: Option<PathBuf>,
}

/// A dotted key (`plan.recompute.C`) and the JSON value to put there.
pub type Override = (String, Value);

/// Parses `key=value`; the value is JSON if it parses, a string otherwise.
pub fn parse_assignment(s: &str) -> Result<Override, String> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| format!("expected KEY=VALUE, got {s:?}"))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(format!("bad key {key:?}"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

fn assign(doc: &mut Value, key: &str, value: Value) -> CliResult<()> {
    let mut node = doc;
    let mut parts = key.split('.').peekable();
    while let Some(part) = parts.next() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::usage(format!("cannot set {key}: parent is not an object")))?;
        if parts.peek().is_none() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    unreachable!("keys have at least one part")
}

fn rebase(base: &Path, v: &mut Value) {
    if let Some(s) = v.as_str() {
        let p = Path::new(s);
        if p.is_relative() {
            *v = Value::String(base.join(p).to_string_lossy().into_owned());
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path, overrides: &[Override]) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
        let mut doc: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
        if !doc.is_object() {
            return Err(CliError::usage(format!(
                "config {}: expected a JSON object",
                path.display()
            )));
        }
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(data) = doc.get_mut("data").and_then(Value::as_object_mut) {
            for field in PATH_FIELDS {
                if let Some(v) = data.get_mut(field) {
                    rebase(base, v);
                }
            }
        }
        for field in ["out", "model_dir"] {
            if let Some(v) = doc.get_mut(field) {
                rebase(base, v);
            }
        }
        Self::from_value(doc, overrides)
            .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))
    }

    fn from_value(mut doc: Value, overrides: &[Override]) -> CliResult<Self> {
        for (key, value) in overrides {
            assign(&mut doc, key, value.clone())?;
        }
        let mut cfg: ExperimentConfig =
            serde_json::from_value(doc).map_err(|e| CliError::usage(e.to_string()))?;
        cfg.resolve()?;
        Ok(cfg)
    }

    /// Makes every default explicit so the embedded copy reproduces the run.
    fn resolve(&mut self) -> CliResult<()> {
        match (self.learning_rate.take(), self.plan.lr_schedule.is_empty()) {
            (Some(_), false) => {
                return Err(CliError::usage(
                    "set either learning_rate or plan.lr_schedule, not both",
                ));
            }
            (Some(lr), true) => self.plan = self.plan.clone().with_constant_lr(lr),
            (None, true) => self.plan.lr_schedule = default_lr_schedule(self.plan.epochs),
            (None, false) => {}
        }
        self.plan.validate()?;
        self.spec().validate()?;

        let d = &mut self.data;
        let files = d.train_features.is_some() || d.train_labels.is_some();
        match (files, d.csv.is_some()) {
            (true, true) => {
                return Err(CliError::usage(
                    "data: give either feature/label files or csv, not both",
                ))
            }
            (false, false) => return Err(CliError::usage("data: no training data given")),
            (true, false) => {
                if d.train_features.is_none() || d.train_labels.is_none() {
                    return Err(CliError::usage(
                        "data: train_features and train_labels go together",
                    ));
                }
                if d.test_features.is_some() != d.test_labels.is_some() {
                    return Err(CliError::usage(
                        "data: test_features and test_labels go together",
                    ));
                }
                if d.label_column.is_some() || d.train_fraction.is_some() {
                    return Err(CliError::usage(
                        "data: label_column and train_fraction apply to csv only",
                    ));
                }
            }
            (false, true) => {
                if d.test_features.is_some() || d.test_labels.is_some() {
                    return Err(CliError::usage(
                        "data: csv input is split, test files are not used with it",
                    ));
                }
                let frac = *d.train_fraction.get_or_insert(0.8);
                if !(frac > 0.0 && frac <= 1.0) {
                    return Err(CliError::usage(format!(
                        "data: train_fraction {frac} must be in (0, 1]"
                    )));
                }
                d.label_column.get_or_insert_with(|| "last".to_string());
            }
        }
        Ok(())
    }

    pub fn spec(&self) -> HeadSpec {
        HeadSpec {
            widths: self.widths.clone(),
            bias: self.bias,
        }
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Data as read from disk, before any per-seed split.
pub enum Loaded {
    Fixed { train: Dataset, test: Dataset },
    Pooled { data: Dataset, train_fraction: f64 },
}

impl Loaded {
    pub fn splits(&self) -> Splits<'_> {
        match self {
            Loaded::Fixed { train, test } => Splits::Fixed { train, test },
            Loaded::Pooled {
                data,
                train_fraction,
            } => Splits::Stratified {
                data,
                train_fraction: *train_fraction,
            },
        }
    }

    pub fn for_seed(&self, seed: u64) -> CliResult<(Dataset, Dataset)> {
        Ok(match self {
            Loaded::Fixed { train, test } => (train.clone(), test.clone()),
            Loaded::Pooled {
                data,
                train_fraction,
            } => split(data, *train_fraction, seed)?,
        })
    }
}

impl DataConfig {
    pub fn load(&self) -> CliResult<Loaded> {
        if let Some(csv) = &self.csv {
            let column = self.label_column.as_deref().unwrap_or("last");
            let data = pinvhead::data::load_csv(csv, &column.parse().expect("infallible"))?;
            return Ok(Loaded::Pooled {
                data,
                train_fraction: self.train_fraction.unwrap_or(0.8),
            });
        }
        let (Some(f), Some(l)) = (&self.train_features, &self.train_labels) else {
            return Err(CliError::usage("data: no training data given"));
        };
        let train = Dataset::load(f, l)?;
        let test = match (&self.test_features, &self.test_labels) {
            (Some(f), Some(l)) => {
                let test = Dataset::load(f, l)?;
                if test.num_classes != train.num_classes {
                    return Err(CliError::data(
                        l,
                        format!(
                            "{} classes, training labels have {}",
                            test.num_classes, train.num_classes
                        ),
                    ));
                }
                test
            }
            _ => Dataset::new(Matrix::zeros(train.dim(), 0), Vec::new(), train.num_classes)?,
        };
        Ok(Loaded::Fixed { train, test })
    }
}
