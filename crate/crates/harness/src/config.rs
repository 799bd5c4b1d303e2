//! Experiment configuration, read from TOML.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use transun::posthoc::CorrectionKind;
use transun::regressor::SpecError;
use transun::{DistributionSpec, RegressorSpec, Scheme, TargetTransform};

/// Metric names accepted in `eval.metrics`, in report order.
pub const METRICS: [&str; 12] = [
    "sre",
    "tre",
    "signed_tre",
    "mre",
    "nrmse",
    "nmae",
    "xauc",
    "pgr",
    "kappa_var",
    "kappa_var_normalized",
    "oracle_gap",
    "loss_ratio",
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("no models configured")]
    NoModels,
    #[error("synthetic data needs at least one distribution")]
    NoDistributions,
    #[error("n must be at least 2, got {0}")]
    SampleSize(usize),
    #[error("replicates must be at least 1")]
    Replicates,
    #[error("top_fraction must lie in (0, 1], got {0}")]
    TopFraction(f64),
    #[error("{name} must lie in (0, 1), got {value}")]
    Fraction { name: &'static str, value: f64 },
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error("duplicate model label `{0}`")]
    DuplicateLabel(String),
    #[error("model `{label}`: {source}")]
    Spec { label: String, source: SpecError },
    #[error("model `{label}`: {message}")]
    Model { label: String, message: String },
    #[error("corrections need at least one tmse model")]
    NothingToCorrect,
    #[error("nte correction needs a log1p transform, model `{0}` uses another")]
    NteTransform(String),
    #[error("sweep over {param}: {message}")]
    Sweep { param: SweepParam, message: String },
    #[error("csv schema: {0}")]
    Schema(String),
}

/// One experiment: data source, model grid, corrections, evaluation and an
/// optional one-parameter sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Defaults to 10 for synthetic data and 5 for csv data.
    #[serde(default)]
    pub replicates: Option<usize>,
    pub data: DataSource,
    pub models: Vec<ModelEntry>,
    #[serde(default)]
    pub corrections: Vec<CorrectionKind>,
    #[serde(default)]
    pub calibration: Calibration,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub sweep: Option<Sweep>,
    #[serde(default)]
    pub on_error: OnError,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Fixed-input samples of each distribution.
    Synthetic { distributions: Vec<DistributionSpec>, n: usize },
    Csv {
        path: PathBuf,
        columns: Vec<ColumnSpec>,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
    },
}

fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case", deny_unknown_fields)]
pub enum ColumnSpec {
    Categorical {
        name: String,
        buckets: u32,
    },
    /// Discretized by explicit `edges`, or else by `quantiles` equal-frequency
    /// bins computed on the training split.
    Continuous {
        name: String,
        #[serde(default)]
        quantiles: Option<usize>,
        #[serde(default)]
        edges: Option<Vec<f64>>,
    },
    Target {
        name: String,
    },
}

impl ColumnSpec {
    pub fn name(&self) -> &str {
        match self {
            ColumnSpec::Categorical { name, .. } | ColumnSpec::Continuous { name, .. } | ColumnSpec::Target { name } => {
                name
            }
        }
    }
}

/// Checks a column list: unique names, exactly one target, usable binning.
pub fn validate_columns(columns: &[ColumnSpec]) -> Result<(), ConfigError> {
    let mut seen = HashSet::new();
    let mut targets = 0;
    for c in columns {
        if !seen.insert(c.name()) {
            return Err(ConfigError::Schema(format!("duplicate column `{}`", c.name())));
        }
        match c {
            ColumnSpec::Target { .. } => targets += 1,
            ColumnSpec::Categorical { name, buckets } if *buckets == 0 => {
                return Err(ConfigError::Schema(format!("`{name}` needs at least one bucket")));
            }
            ColumnSpec::Continuous { name, quantiles, edges } => match (quantiles, edges) {
                (Some(q), None) if *q >= 1 => {}
                (None, Some(e)) if e.iter().all(|x| x.is_finite()) && e.windows(2).all(|w| w[0] < w[1]) => {}
                _ => {
                    return Err(ConfigError::Schema(format!(
                        "`{name}` needs either quantiles >= 1 or strictly increasing finite edges"
                    )))
                }
            },
            _ => {}
        }
    }
    if targets != 1 {
        return Err(ConfigError::Schema(format!("expected exactly one target column, found {targets}")));
    }
    Ok(())
}

/// A labelled model recipe: `label` plus every [`RegressorSpec`] field.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelEntry {
    pub label: String,
    pub spec: RegressorSpec,
}

impl<'de> Deserialize<'de> for ModelEntry {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let mut table = toml::Table::deserialize(d)?;
        let label = match table.remove("label") {
            Some(toml::Value::String(s)) => Some(s),
            Some(_) => return Err(D::Error::custom("`label` must be a string")),
            None => None,
        };
        let spec = RegressorSpec::deserialize(toml::Value::Table(table)).map_err(D::Error::custom)?;
        let label = label.unwrap_or_else(|| default_label(&spec));
        Ok(ModelEntry { label, spec })
    }
}

impl Serialize for ModelEntry {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            label: &'a str,
            #[serde(flatten)]
            spec: &'a RegressorSpec,
        }
        Repr { label: &self.label, spec: &self.spec }.serialize(s)
    }
}

/// `tmse(log1p)`, `gts(log1p,mae,abs)` and so on.
pub fn default_label(spec: &RegressorSpec) -> String {
    let t = match spec.transform {
        TargetTransform::Linear { slope } => format!("{slope}y"),
        other => other.kind_name().to_string(),
    };
    match spec.scheme {
        Scheme::Gts => format!("gts({t},{},{})", spec.point_loss.name(), spec.kappa.name()),
        other => format!("{}({t})", other.name()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    /// Fit corrections on rows held out from training; otherwise reuse the
    /// training rows.
    #[serde(default = "yes")]
    pub held_out: bool,
    #[serde(default = "default_calibration_fraction")]
    pub fraction: f64,
}

fn yes() -> bool {
    true
}

fn default_calibration_fraction() -> f64 {
    0.2
}

impl Default for Calibration {
    fn default() -> Self {
        Calibration { held_out: true, fraction: default_calibration_fraction() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_metrics")]
    pub metrics: Vec<String>,
    #[serde(default = "default_bins")]
    pub bins: usize,
    /// Evaluate on this fraction of rows with the largest targets.
    #[serde(default = "one")]
    pub top_fraction: f64,
    #[serde(default)]
    pub xauc_weighted: bool,
}

fn default_metrics() -> Vec<String> {
    ["sre", "tre", "signed_tre", "mre", "nrmse", "nmae", "xauc", "pgr"].map(String::from).to_vec()
}

fn default_bins() -> usize {
    10
}

fn one() -> f64 {
    1.0
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { metrics: default_metrics(), bins: default_bins(), top_fraction: 1.0, xauc_weighted: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Epsilon,
    LearningRate,
    BatchSize,
    Epochs,
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParam::Epsilon => "epsilon",
            SweepParam::LearningRate => "learning_rate",
            SweepParam::BatchSize => "batch_size",
            SweepParam::Epochs => "epochs",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

impl Sweep {
    /// `spec` with the swept parameter set to `value`.
    pub fn apply(&self, spec: &RegressorSpec, value: f64) -> RegressorSpec {
        let mut s = spec.clone();
        match self.param {
            SweepParam::Epsilon => s.epsilon = value,
            SweepParam::LearningRate => s.optimizer = s.optimizer.with_lr(value),
            SweepParam::BatchSize => s.batch_size = value as usize,
            SweepParam::Epochs => s.epochs = value as usize,
        }
        s
    }
}

/// What to do when a replicate fails to train or evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnError {
    /// Abort the experiment with the first error.
    #[default]
    Fail,
    /// Keep going and record the failure in the replicate row.
    Record,
}

impl ExperimentConfig {
    /// Parses and validates; relative csv paths stay relative.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: ExperimentConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file; a relative csv path resolves against the file's
    /// directory.
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut config = Self::from_toml_str(&text)?;
        if let DataSource::Csv { path: csv, .. } = &mut config.data {
            if csv.is_relative() {
                *csv = path.parent().unwrap_or(Path::new(".")).join(&*csv);
            }
        }
        Ok(config)
    }

    pub fn replicates(&self) -> usize {
        self.replicates.unwrap_or(match self.data {
            DataSource::Synthetic { .. } => 10,
            DataSource::Csv { .. } => 5,
        })
    }

    pub fn is_synthetic(&self) -> bool {
        matches!(self.data, DataSource::Synthetic { .. })
    }

    /// Sweep values, or a single `None` without a sweep.
    pub fn sweep_points(&self) -> Vec<Option<f64>> {
        match &self.sweep {
            Some(s) => s.values.iter().map(|&v| Some(v)).collect(),
            None => vec![None],
        }
    }

    /// The `RegressorSpec` trained for `model` at one sweep point.
    pub fn effective_spec(&self, model: &ModelEntry, point: Option<f64>) -> RegressorSpec {
        match (&self.sweep, point) {
            (Some(s), Some(v)) => s.apply(&model.spec, v),
            _ => model.spec.clone(),
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.replicates == Some(0) {
            return Err(ConfigError::Replicates);
        }
        if self.models.is_empty() {
            return Err(ConfigError::NoModels);
        }
        match &self.data {
            DataSource::Synthetic { distributions, n } => {
                if distributions.is_empty() {
                    return Err(ConfigError::NoDistributions);
                }
                if *n < 2 {
                    return Err(ConfigError::SampleSize(*n));
                }
            }
            DataSource::Csv { columns, test_fraction, .. } => {
                validate_columns(columns)?;
                check_fraction("test_fraction", *test_fraction)?;
            }
        }
        if !(self.eval.top_fraction > 0.0 && self.eval.top_fraction <= 1.0) {
            return Err(ConfigError::TopFraction(self.eval.top_fraction));
        }
        if let Some(m) = self.eval.metrics.iter().find(|m| !METRICS.contains(&m.as_str())) {
            return Err(ConfigError::UnknownMetric(m.clone()));
        }
        let mut labels = HashSet::new();
        for m in &self.models {
            if !labels.insert(m.label.as_str()) {
                return Err(ConfigError::DuplicateLabel(m.label.clone()));
            }
            if !m.spec.architecture.features.is_empty() {
                return Err(ConfigError::Model {
                    label: m.label.clone(),
                    message: "features come from the data source; leave `architecture.features` empty".into(),
                });
            }
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(ConfigError::Sweep { param: s.param, message: "no values".into() });
            }
            let integral = matches!(s.param, SweepParam::BatchSize | SweepParam::Epochs);
            if let Some(v) = s.values.iter().find(|v| integral && (v.fract() != 0.0 || **v < 1.0 || **v > 1e9)) {
                return Err(ConfigError::Sweep { param: s.param, message: format!("{v} is not a positive integer") });
            }
        }
        for point in self.sweep_points() {
            for m in &self.models {
                self.effective_spec(m, point)
                    .validate()
                    .map_err(|source| ConfigError::Spec { label: m.label.clone(), source })?;
            }
        }
        if !self.corrections.is_empty() {
            let tmse: Vec<&ModelEntry> = self.models.iter().filter(|m| m.spec.scheme == Scheme::Tmse).collect();
            if tmse.is_empty() {
                return Err(ConfigError::NothingToCorrect);
            }
            if self.corrections.contains(&CorrectionKind::Nte) {
                if let Some(m) = tmse.iter().find(|m| m.spec.transform != TargetTransform::Log1p) {
                    return Err(ConfigError::NteTransform(m.label.clone()));
                }
            }
            if self.calibration.held_out {
                check_fraction("calibration.fraction", self.calibration.fraction)?;
            }
        }
        Ok(())
    }
}

fn check_fraction(name: &'static str, value: f64) -> Result<(), ConfigError> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(ConfigError::Fraction { name, value })
    }
}
