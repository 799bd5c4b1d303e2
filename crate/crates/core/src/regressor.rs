//! Model recipes, the training loop, prediction rules and the flat parameter
//! file.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ad::{AdError, ParamStore, Tape, Var};
use crate::dataset::Dataset;
use crate::loss::{self, guarded, BiasScheme, KappaKind, PointLoss};
use crate::network::{ArchError, ArchSpec, LeafCache, Layout};
use crate::rng::RngStream;
use crate::transform::{TargetTransform, TransformError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Transformed MSE, predicting `T^-1(f)`.
    Tmse,
    /// Transformed MSE plus the multiplicative bias branch.
    Transun,
    /// Any point loss plus a `kappa`-sloped linear-transformation branch.
    Gts,
    /// Additive bias branch, predicting `T^-1(f) + z`.
    #[serde(alias = "s0")]
    SchemeS0,
    /// Inverted-ratio bias branch, predicting `T^-1(f) / z`.
    #[serde(alias = "s1")]
    SchemeS1,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Tmse => "tmse",
            Scheme::Transun => "transun",
            Scheme::Gts => "gts",
            Scheme::SchemeS0 => "scheme_s0",
            Scheme::SchemeS1 => "scheme_s1",
        }
    }

    pub fn has_bias_branch(&self) -> bool {
        !matches!(self, Scheme::Tmse)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| format!("unknown scheme `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd {
        lr: f64,
    },
    AdagradDecay {
        lr: f64,
        #[serde(default = "one")]
        decay: f64,
        #[serde(default = "adagrad_eps")]
        eps: f64,
    },
}

fn one() -> f64 {
    1.0
}
fn adagrad_eps() -> f64 {
    1e-8
}

impl Optimizer {
    pub fn lr(&self) -> f64 {
        match *self {
            Optimizer::Sgd { lr } | Optimizer::AdagradDecay { lr, .. } => lr,
        }
    }

    pub fn with_lr(self, lr: f64) -> Self {
        match self {
            Optimizer::Sgd { .. } => Optimizer::Sgd { lr },
            Optimizer::AdagradDecay { decay, eps, .. } => Optimizer::AdagradDecay { lr, decay, eps },
        }
    }

    fn step(&self, params: &mut ParamStore) -> Result<(), AdError> {
        match *self {
            Optimizer::Sgd { lr } => params.sgd_step(lr),
            Optimizer::AdagradDecay { lr, decay, eps } => params.adagrad_decay_step(lr, decay, eps),
        }
    }
}

/// Learning-rate multiplier over the run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Linear decay from the base rate to zero at the last step.
    LinearDecay,
    /// Constant for the first `warmup` fraction of steps, then
    /// `lr / (1 + 2 lr k)` at the `k`-th later step. On a scalar
    /// squared-error branch the tail phase makes the final value the running
    /// mean of every tail batch target, with the warm start weighted like
    /// `1 / (2 lr)` batches.
    TailAveraging { warmup: f64 },
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule::TailAveraging { warmup: 0.5 }
    }
}

impl LrSchedule {
    /// Learning rate at zero-based `step` of `total`.
    pub fn rate(&self, base: f64, step: usize, total: usize) -> f64 {
        match *self {
            LrSchedule::TailAveraging { warmup } => {
                let start = (warmup * total as f64).round() as usize;
                match step.checked_sub(start) {
                    None => base,
                    Some(k) => base / (1.0 + 2.0 * base * k as f64),
                }
            }
            _ => base * self.factor(step, total),
        }
    }

    fn factor(&self, step: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::LinearDecay => 1.0 - step as f64 / total as f64,
            LrSchedule::TailAveraging { .. } => 1.0,
        }
    }
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Sgd { lr: 0.1 }
    }
}

/// Full model recipe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressorSpec {
    pub scheme: Scheme,
    pub transform: TargetTransform,
    #[serde(default)]
    pub point_loss: PointLoss,
    #[serde(default)]
    pub kappa: KappaKind,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub architecture: ArchSpec,
    #[serde(default)]
    pub optimizer: Optimizer,
    #[serde(default)]
    pub schedule: LrSchedule,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_epsilon() -> f64 {
    1.0
}
fn default_batch_size() -> usize {
    1024
}
fn default_epochs() -> usize {
    1
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpecError {
    #[error("epsilon must be positive and finite, got {0}")]
    Epsilon(f64),
    #[error("batch_size and epochs must be at least 1")]
    Budget,
    #[error("learning rate must be positive and finite, got {0}")]
    LearningRate(f64),
    #[error("adagrad decay must lie in (0, 1], got {0}")]
    Decay(f64),
    #[error(transparent)]
    Arch(#[from] ArchError),
}

impl RegressorSpec {
    pub fn new(scheme: Scheme, transform: TargetTransform) -> Self {
        RegressorSpec {
            scheme,
            transform,
            point_loss: PointLoss::Mse,
            kappa: KappaKind::InvAbsInverse,
            epsilon: default_epsilon(),
            architecture: ArchSpec::scalar(),
            optimizer: Optimizer::default(),
            schedule: LrSchedule::default(),
            batch_size: default_batch_size(),
            epochs: default_epochs(),
            seed: 0,
        }
    }

    pub fn gts(transform: TargetTransform, point_loss: PointLoss, kappa: KappaKind) -> Self {
        RegressorSpec { point_loss, kappa, ..Self::new(Scheme::Gts, transform) }
    }

    /// The point loss and slope actually used: TranSUN is the
    /// (mse, inv_abs_inverse) member of the family, and every non-GTS scheme
    /// trains its point branch with MSE.
    pub fn effective_point_loss(&self) -> PointLoss {
        match self.scheme {
            Scheme::Gts => self.point_loss,
            _ => PointLoss::Mse,
        }
    }

    pub fn effective_kappa(&self) -> KappaKind {
        match self.scheme {
            Scheme::Gts => self.kappa,
            _ => KappaKind::InvAbsInverse,
        }
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(SpecError::Epsilon(self.epsilon));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(SpecError::Budget);
        }
        let lr = self.optimizer.lr();
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(SpecError::LearningRate(lr));
        }
        if let Optimizer::AdagradDecay { decay, .. } = self.optimizer {
            if !(decay > 0.0 && decay <= 1.0) {
                return Err(SpecError::Decay(decay));
            }
        }
        self.architecture.validate()?;
        Ok(())
    }

    /// Stable 64-bit digest of the canonical JSON form.
    pub fn hash64(&self) -> u64 {
        let bytes = serde_json::to_vec(self).expect("spec serializes");
        stable_hash64(&bytes)
    }

    fn z_init(&self) -> f64 {
        match self.scheme {
            Scheme::SchemeS0 => 0.0,
            _ => 1.0,
        }
    }
}

/// First eight bytes (little-endian) of SHA-256.
pub fn stable_hash64(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid spec: {0}")]
    Spec(#[from] SpecError),
    #[error("row {row}: {source}")]
    Target { row: usize, source: TransformError },
    #[error("row {row}: {source}")]
    Features { row: usize, source: ArchError },
    #[error("step {step}: {source}")]
    Numeric { step: usize, source: AdError },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    /// Batch prediction mean over batch target mean; absent for all-zero batches.
    pub pgr: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub value: f64,
    pub f: f64,
    pub z: Option<f64>,
    /// Slope for the GTS family (TranSUN included).
    pub kappa: Option<f64>,
    /// A guarded denominator was hit (S1 with `z` near zero).
    pub guarded: bool,
}

#[derive(Clone, Debug)]
pub struct TrainedRegressor {
    spec: RegressorSpec,
    layout: Layout,
    params_f: Vec<f64>,
    params_z: Vec<f64>,
    training_log: Vec<StepLog>,
}

/// Maps branch outputs to a prediction in original target units.
pub fn predict_from_outputs(spec: &RegressorSpec, f: f64, z: Option<f64>) -> Prediction {
    let t = &spec.transform;
    let eps = spec.epsilon;
    let inv = t.invert_extended(f);
    let z_or = |d: f64| z.unwrap_or(d);
    let mut guarded_hit = false;
    let (value, kappa) = match spec.scheme {
        Scheme::Tmse => (inv, None),
        Scheme::Transun => {
            let k = KappaKind::InvAbsInverse.value(f, t, eps);
            (z_or(1.0) * (inv.abs() + eps), Some(k))
        }
        Scheme::Gts => {
            let k = spec.kappa.value(f, t, eps);
            (z_or(0.0) / k, Some(k))
        }
        Scheme::SchemeS0 => (inv + z_or(0.0), None),
        Scheme::SchemeS1 => {
            let zv = z_or(1.0);
            if zv.abs() < loss::DELTA {
                guarded_hit = true;
            }
            (inv / if guarded_hit { guarded(zv) } else { zv }, None)
        }
    };
    Prediction { value, f, z, kappa, guarded: guarded_hit }
}

/// Trains `spec` on `data`; deterministic for a fixed `spec.seed`.
pub fn train(data: &Dataset, spec: &RegressorSpec) -> Result<TrainedRegressor, TrainError> {
    spec.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let layout = Layout::new(&spec.architecture, spec.scheme.has_bias_branch()).map_err(SpecError::from)?;
    for row in 0..data.len() {
        spec.transform
            .apply(data.target(row))
            .map_err(|source| TrainError::Target { row, source })?;
        layout
            .check_row(data.row(row))
            .map_err(|source| TrainError::Features { row, source })?;
    }

    let root = RngStream::new(spec.seed);
    let mut params = ParamStore::new(layout.init(&mut root.derive(0x1417), spec.z_init()));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut tape = Tape::new();
    let mut leaves = LeafCache::new(layout.n_total());
    let mut outputs: Vec<(Var, Option<Var>)> = Vec::with_capacity(spec.batch_size);
    let mut terms: Vec<Var> = Vec::with_capacity(spec.batch_size);
    let mut log = Vec::new();
    let mut step = 0usize;
    let total_steps = spec.epochs * data.len().div_ceil(spec.batch_size);
    let base_lr = spec.optimizer.lr();

    for epoch in 0..spec.epochs {
        let mut shuffle_rng = root.derive(0x5_0000 + epoch as u64);
        shuffle_rng.shuffle(&mut order);
        for batch in order.chunks(spec.batch_size) {
            params.zero_grads();
            tape.clear();
            leaves.reset();
            outputs.clear();
            terms.clear();
            for &i in batch {
                let row = data.row(i);
                let y = data.target(i);
                let f = layout.tape_f(&mut tape, &mut leaves, row);
                let z = spec
                    .scheme
                    .has_bias_branch()
                    .then(|| layout.tape_z(&mut tape, &mut leaves, row));
                let l = sample_loss(&mut tape, spec, f, z, y)
                    .map_err(|source| TrainError::Target { row: i, source })?;
                outputs.push((f, z));
                terms.push(l);
            }
            let total = tape.sum(&terms);
            let scale = tape.constant(1.0 / batch.len() as f64);
            let mean_loss = tape.mul(total, scale);
            tape.evaluate(params.values(), &[])
                .map_err(|source| TrainError::Numeric { step, source })?;
            tape.backward_into(mean_loss, params.grads_mut())
                .map_err(|source| TrainError::Numeric { step, source })?;

            let (mut pred_sum, mut y_sum) = (0.0, 0.0);
            for (&(f, z), &i) in outputs.iter().zip(batch) {
                let p = predict_from_outputs(spec, tape.value(f), z.map(|z| tape.value(z)));
                pred_sum += p.value;
                y_sum += data.target(i);
            }
            log.push(StepLog {
                step,
                loss: tape.value(mean_loss),
                pgr: (y_sum != 0.0).then(|| pred_sum / y_sum),
            });

            spec.optimizer
                .with_lr(spec.schedule.rate(base_lr, step, total_steps))
                .step(&mut params)
                .map_err(|source| TrainError::Numeric { step, source })?;
            step += 1;
        }
    }

    let mut values = params.into_values();
    let params_z = values.split_off(layout.n_f());
    Ok(TrainedRegressor { spec: spec.clone(), layout, params_f: values, params_z, training_log: log })
}

fn sample_loss(
    tape: &mut Tape,
    spec: &RegressorSpec,
    f: Var,
    z: Option<Var>,
    y: f64,
) -> Result<Var, TransformError> {
    let t = &spec.transform;
    let eps = spec.epsilon;
    match (spec.scheme, z) {
        (Scheme::Tmse, _) => loss::tmse_loss(tape, f, y, t),
        (Scheme::Transun, Some(z)) => loss::transun_total_loss(tape, f, z, y, t, eps),
        (Scheme::Gts, Some(z)) => loss::gts_loss(tape, f, z, y, t, spec.point_loss, spec.kappa, eps),
        (Scheme::SchemeS0, Some(z)) => {
            let main = loss::tmse_loss(tape, f, y, t)?;
            let bias = loss::scheme_loss(tape, z, f, y, t, BiasScheme::S0, eps);
            Ok(tape.add(main, bias))
        }
        (Scheme::SchemeS1, Some(z)) => {
            let main = loss::tmse_loss(tape, f, y, t)?;
            let bias = loss::scheme_loss(tape, z, f, y, t, BiasScheme::S1, eps);
            Ok(tape.add(main, bias))
        }
        (_, None) => unreachable!("bias schemes always build a z branch"),
    }
}

/// Per-sample training objective at branch outputs `f` and `z`: the same
/// expression the training loop differentiates, evaluated once. `z` is
/// ignored for T-MSE and required for every bias scheme; a non-finite
/// evaluation yields infinity.
pub fn sample_objective(spec: &RegressorSpec, f: f64, z: Option<f64>, y: f64) -> Result<f64, TransformError> {
    let mut tape = Tape::new();
    let fv = tape.param(0);
    let (zv, params) = match (spec.scheme.has_bias_branch(), z) {
        (true, Some(z)) => (Some(tape.param(1)), vec![f, z]),
        (true, None) => return Ok(f64::INFINITY),
        (false, _) => (None, vec![f]),
    };
    let l = sample_loss(&mut tape, spec, fv, zv, y)?;
    Ok(match tape.evaluate(&params, &[]) {
        Ok(()) if tape.value(l).is_finite() => tape.value(l),
        _ => f64::INFINITY,
    })
}

impl TrainedRegressor {
    /// Reassembles a model from raw branch parameters.
    pub fn from_parts(spec: RegressorSpec, params_f: Vec<f64>, params_z: Vec<f64>) -> Result<Self, ModelFileError> {
        spec.validate().map_err(|e| ModelFileError::Spec(e.to_string()))?;
        let layout = Layout::new(&spec.architecture, spec.scheme.has_bias_branch())
            .map_err(|e| ModelFileError::Spec(e.to_string()))?;
        if params_f.len() != layout.n_f() || params_z.len() != layout.n_z() {
            return Err(ModelFileError::Count {
                want_f: layout.n_f() as u64,
                want_z: layout.n_z() as u64,
                got_f: params_f.len() as u64,
                got_z: params_z.len() as u64,
            });
        }
        if params_f.iter().chain(&params_z).any(|v| !v.is_finite()) {
            return Err(ModelFileError::NonFinite);
        }
        Ok(TrainedRegressor { spec, layout, params_f, params_z, training_log: Vec::new() })
    }

    pub fn spec(&self) -> &RegressorSpec {
        &self.spec
    }

    pub fn params_f(&self) -> &[f64] {
        &self.params_f
    }

    pub fn params_z(&self) -> &[f64] {
        &self.params_z
    }

    pub fn training_log(&self) -> &[StepLog] {
        &self.training_log
    }

    fn all_params(&self) -> Vec<f64> {
        let mut v = self.params_f.clone();
        v.extend_from_slice(&self.params_z);
        v
    }

    /// Point-branch output `f(x)`.
    pub fn point_output(&self, row: &[u32]) -> f64 {
        self.layout.eval_f(&self.params_f, row)
    }

    pub fn predict_detailed(&self, row: &[u32]) -> Prediction {
        let p = self.all_params();
        self.predict_with(&p, row)
    }

    fn predict_with(&self, p: &[f64], row: &[u32]) -> Prediction {
        let f = self.layout.eval_f(p, row);
        let z = self.layout.has_bias_branch().then(|| self.layout.eval_z(p, row));
        predict_from_outputs(&self.spec, f, z)
    }

    pub fn predict(&self, row: &[u32]) -> f64 {
        self.predict_detailed(row).value
    }

    /// Predictions for every row of `data`.
    pub fn predict_all(&self, data: &Dataset) -> Vec<Prediction> {
        let p = self.all_params();
        (0..data.len()).map(|i| self.predict_with(&p, data.row(i))).collect()
    }

    /// Encodes the flat parameter file.
    pub fn to_bytes(&self) -> Vec<u8> {
        ParamFile {
            version: PARAM_FILE_VERSION,
            spec_hash: self.spec.hash64(),
            params_f: self.params_f.clone(),
            params_z: self.params_z.clone(),
        }
        .encode()
    }

    /// Decodes a parameter file written for `spec`.
    pub fn from_bytes(bytes: &[u8], spec: &RegressorSpec) -> Result<Self, ModelFileError> {
        let file = ParamFile::decode(bytes)?;
        let want = spec.hash64();
        if file.spec_hash != want {
            return Err(ModelFileError::SpecMismatch { file: file.spec_hash, spec: want });
        }
        TrainedRegressor::from_parts(spec.clone(), file.params_f, file.params_z)
    }
}

pub const PARAM_FILE_MAGIC: &[u8; 8] = b"TSUNPARM";
pub const PARAM_FILE_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8 + 8 + 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelFileError {
    #[error("file too short: {0} bytes")]
    Truncated(usize),
    #[error("bad magic")]
    Magic,
    #[error("unsupported version {0}")]
    Version(u32),
    #[error("body holds {got} bytes but the header announces {want}")]
    Length { want: u128, got: usize },
    #[error("spec hash mismatch: file {file:#018x}, spec {spec:#018x}")]
    SpecMismatch { file: u64, spec: u64 },
    #[error("parameter counts (f {got_f}, z {got_z}) do not match the architecture (f {want_f}, z {want_z})")]
    Count { want_f: u64, want_z: u64, got_f: u64, got_z: u64 },
    #[error("non-finite parameter")]
    NonFinite,
    #[error("invalid spec: {0}")]
    Spec(String),
}

/// Versioned flat parameter file.
///
/// ```text
/// magic "TSUNPARM" | version u32 | spec hash u64 | n_f u64 | n_z u64 | f64 x (n_f + n_z)
/// ```
/// All integers and floats little-endian; parameters in declaration order,
/// point branch first.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamFile {
    pub version: u32,
    pub spec_hash: u64,
    pub params_f: Vec<f64>,
    pub params_z: Vec<f64>,
}

impl ParamFile {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * (self.params_f.len() + self.params_z.len()));
        out.extend_from_slice(PARAM_FILE_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.spec_hash.to_le_bytes());
        out.extend_from_slice(&(self.params_f.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.params_z.len() as u64).to_le_bytes());
        for v in self.params_f.iter().chain(&self.params_z) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ModelFileError> {
        if bytes.len() < HEADER_LEN {
            return Err(ModelFileError::Truncated(bytes.len()));
        }
        if &bytes[..8] != PARAM_FILE_MAGIC {
            return Err(ModelFileError::Magic);
        }
        let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let u64_at = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        let version = u32_at(8);
        if version != PARAM_FILE_VERSION {
            return Err(ModelFileError::Version(version));
        }
        let spec_hash = u64_at(12);
        let n_f = u64_at(20);
        let n_z = u64_at(28);
        let body = &bytes[HEADER_LEN..];
        let want = (n_f as u128 + n_z as u128) * 8;
        if want != body.len() as u128 {
            return Err(ModelFileError::Length { want, got: body.len() });
        }
        let mut floats = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let params_f: Vec<f64> = floats.by_ref().take(n_f as usize).collect();
        let params_z: Vec<f64> = floats.collect();
        Ok(ParamFile { version, spec_hash, params_f, params_z })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rs(scheme: Scheme) -> RegressorSpec {
        RegressorSpec::new(scheme, TargetTransform::Log1p)
    }

    #[test]
    fn sample_objective_values() {
        let (f, z, y) = (0.5, 2.0, 3.0);
        let tmse = sample_objective(&rs(Scheme::Tmse), f, Some(9.0), y).unwrap();
        assert!((tmse - (f - 4f64.ln()).powi(2)).abs() < 1e-12);
        let want = tmse + (z - y / (f.exp_m1() + 1.0)).powi(2);
        assert!((sample_objective(&rs(Scheme::Transun), f, Some(z), y).unwrap() - want).abs() < 1e-12);
        assert_eq!(sample_objective(&rs(Scheme::Transun), f, None, y).unwrap(), f64::INFINITY);
        assert!(sample_objective(&rs(Scheme::Tmse), f, None, -2.0).is_err());
    }

    #[test]
    fn transun_prediction_examples() {
        // T^-1(f) = 3 for log1p means f = ln 4
        let p = predict_from_outputs(&rs(Scheme::Transun), 4f64.ln(), Some(1.0));
        assert!((p.value - 4.0).abs() < 1e-12);
        assert_eq!(predict_from_outputs(&rs(Scheme::Transun), 2.5, Some(0.0)).value, 0.0);
    }

    #[test]
    fn gts_and_identity_predictions() {
        let id = RegressorSpec::new(Scheme::Tmse, TargetTransform::Identity);
        assert_eq!(predict_from_outputs(&id, 3.25, None).value, 3.25);
        // kappa = abs floored at eps: kappa(2) = 2
        let g = RegressorSpec::gts(TargetTransform::Log1p, PointLoss::Mse, KappaKind::Abs);
        assert_eq!(predict_from_outputs(&g, 2.0, Some(6.0)).value, 3.0);
    }

    #[test]
    fn s1_guard_is_flagged() {
        let p = predict_from_outputs(&rs(Scheme::SchemeS1), 1.0, Some(0.0));
        assert!(p.guarded && p.value.is_finite());
        let p = predict_from_outputs(&rs(Scheme::SchemeS1), 1.0, Some(0.5));
        assert!(!p.guarded);
        assert!((p.value - 2.0 * f64::exp_m1(1.0)).abs() < 1e-12);
    }

    #[test]
    fn empty_dataset_rejected() {
        let err = train(&Dataset::constant(vec![]), &rs(Scheme::Transun)).unwrap_err();
        assert!(matches!(err, TrainError::EmptyDataset));
    }

    #[test]
    fn domain_violation_names_row() {
        let err = train(&Dataset::constant(vec![1.0, 2.0, -4.0]), &rs(Scheme::Tmse)).unwrap_err();
        assert!(matches!(err, TrainError::Target { row: 2, .. }));
        assert!(err.to_string().starts_with("row 2: log1p"));
    }

    #[test]
    fn invalid_spec_rejected() {
        let mut s = rs(Scheme::Transun);
        s.epsilon = 0.0;
        assert!(matches!(train(&Dataset::constant(vec![1.0]), &s), Err(TrainError::Spec(_))));
    }

    #[test]
    fn divergence_reports_step() {
        let mut s = rs(Scheme::Tmse);
        s.transform = TargetTransform::Identity;
        s.optimizer = Optimizer::Sgd { lr: 1e6 };
        s.batch_size = 1;
        let data = Dataset::constant(vec![1e3; 400]);
        match train(&data, &s) {
            Err(TrainError::Numeric { step, .. }) => assert!(step > 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = Dataset::constant((0..300).map(|i| (i % 17) as f64).collect());
        let mut s = rs(Scheme::Transun);
        s.batch_size = 32;
        s.seed = 9;
        let a = train(&data, &s).unwrap();
        let b = train(&data, &s).unwrap();
        assert_eq!(a.params_f(), b.params_f());
        assert_eq!(a.params_z(), b.params_z());
        assert_eq!(a.training_log(), b.training_log());
    }

    #[test]
    fn param_file_round_trip() {
        let data = Dataset::constant(vec![1.0, 2.0, 3.0]);
        let spec = rs(Scheme::Transun);
        let m = train(&data, &spec).unwrap();
        let bytes = m.to_bytes();
        assert_eq!(&bytes[..8], PARAM_FILE_MAGIC);
        assert_eq!(bytes.len(), HEADER_LEN + 16);
        let back = TrainedRegressor::from_bytes(&bytes, &spec).unwrap();
        assert_eq!(back.params_f(), m.params_f());
        assert_eq!(back.predict(&[]), m.predict(&[]));

        let other = rs(Scheme::Gts);
        assert!(matches!(
            TrainedRegressor::from_bytes(&bytes, &other),
            Err(ModelFileError::SpecMismatch { .. })
        ));
        assert!(matches!(ParamFile::decode(&bytes[..10]), Err(ModelFileError::Truncated(10))));
        assert!(matches!(ParamFile::decode(&bytes[..bytes.len() - 1]), Err(ModelFileError::Length { .. })));
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(matches!(ParamFile::decode(&bad), Err(ModelFileError::Version(9))));
    }

    #[test]
    fn spec_serde_defaults() {
        let s: RegressorSpec = serde_json::from_str(r#"{"scheme":"transun","transform":"log1p"}"#).unwrap();
        assert_eq!(s, rs(Scheme::Transun));
        let s: RegressorSpec = serde_json::from_str(r#"{"scheme":"s1","transform":"square"}"#).unwrap();
        assert_eq!(s.scheme, Scheme::SchemeS1);
        assert!(serde_json::from_str::<RegressorSpec>(r#"{"scheme":"transun","transform":"log1p","bogus":1}"#).is_err());
        assert_eq!("gts".parse::<Scheme>().unwrap(), Scheme::Gts);
    }
}
