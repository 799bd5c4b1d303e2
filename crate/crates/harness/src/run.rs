//! Experiment orchestration: data, training, corrections, evaluation and
//! oracle rows for every replicate of every grid cell.

use std::collections::HashMap;

use rayon::prelude::*;

use transun::metrics::{evaluate, pairs, EvalOptions, XaucOptions};
use transun::network::FeatureSpec;
use transun::oracle::{population_sre, scheme_optimum};
use transun::posthoc::{correct, CorrectionKind, CorrectionStats};
use transun::regressor::sample_objective;
use transun::{train, Dataset, DistributionSpec, RngStream, Scheme, TrainedRegressor};

use crate::config::{DataSource, ExperimentConfig, ModelEntry, OnError};
use crate::data::{CsvTable, FrozenEdges};
use crate::report::{aggregate, CellKey, OracleRow, Provenance, ReplicateRow, RunReport};
use crate::HarnessError;

const SPLIT_STREAM: u64 = 0x5b11;
const MODEL_STREAM: u64 = 0xa11ce;

/// Data for one dataset of the grid, before replicate-specific sampling.
enum Source {
    Synthetic { dist: DistributionSpec, n: usize, index: u64 },
    Csv { data: Dataset, features: Vec<FeatureSpec>, train: Vec<usize>, test: Vec<usize> },
}

impl Source {
    fn name(&self) -> String {
        match self {
            Source::Synthetic { dist, .. } => dist.id().to_string(),
            Source::Csv { .. } => "csv".into(),
        }
    }
}

/// Rows for one replicate: what to train on, what to calibrate on and what
/// to evaluate.
struct Split {
    train: Dataset,
    calibration: Dataset,
    eval: Dataset,
    features: Vec<FeatureSpec>,
    truth: Option<f64>,
}

/// Data seed of replicate `r`.
pub fn replicate_seed(config_seed: u64, r: usize) -> u64 {
    RngStream::new(config_seed).derive(r as u64).next_u64()
}

/// Model seed for a replicate; shared by every model in it so they start
/// from comparable initializations.
fn model_seed(data_seed: u64, spec_seed: u64) -> u64 {
    RngStream::new(data_seed).derive(MODEL_STREAM ^ spec_seed).next_u64()
}

/// `n_rows - round(fraction * n_rows)`, kept within `1..n_rows`.
fn holdout_start(n_rows: usize, fraction: f64) -> usize {
    let held = ((fraction * n_rows as f64).round() as usize).clamp(1, n_rows.saturating_sub(1).max(1));
    n_rows - held
}

/// Indices of the top `fraction` of rows by target, descending, ties by
/// row index.
pub fn top_rows(targets: &[f64], fraction: f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..targets.len()).collect();
    idx.sort_by(|&a, &b| targets[b].total_cmp(&targets[a]).then(a.cmp(&b)));
    let keep = ((fraction * targets.len() as f64).ceil() as usize).clamp(1, targets.len().max(1));
    idx.truncate(keep);
    idx
}

fn load_sources(config: &ExperimentConfig) -> Result<(Vec<Source>, Vec<FrozenEdges>), HarnessError> {
    match &config.data {
        DataSource::Synthetic { distributions, n } => Ok((
            distributions
                .iter()
                .enumerate()
                .map(|(i, &dist)| Source::Synthetic { dist, n: *n, index: i as u64 + 1 })
                .collect(),
            Vec::new(),
        )),
        DataSource::Csv { path, columns, test_fraction } => {
            let table = CsvTable::from_path(path, columns)?;
            for m in &config.models {
                table.check_domain(&m.spec.transform)?;
            }
            if table.len() < 3 {
                return Err(HarnessError::TooFewRows(table.len()));
            }
            let mut order: Vec<usize> = (0..table.len()).collect();
            RngStream::new(config.seed).derive(SPLIT_STREAM).shuffle(&mut order);
            let cut = holdout_start(order.len(), *test_fraction);
            let (train, test) = (order[..cut].to_vec(), order[cut..].to_vec());
            let edges = table.freeze_edges(&train);
            let (data, features) = table.encode(&edges);
            Ok((vec![Source::Csv { data, features, train, test }], edges))
        }
    }
}

fn split(config: &ExperimentConfig, source: &Source, data_seed: u64) -> Split {
    let calibrate = !config.corrections.is_empty();
    let fraction = config.calibration.fraction;
    let held_out = calibrate && config.calibration.held_out;
    match source {
        Source::Synthetic { dist, n, index } => {
            let y = dist.sample(*n, &mut RngStream::new(data_seed).derive(*index));
            let all = Dataset::constant(y);
            let idx: Vec<usize> = (0..all.len()).collect();
            let (train, calibration) = if held_out {
                let cut = holdout_start(idx.len(), fraction);
                (all.subset(&idx[..cut]), all.subset(&idx[cut..]))
            } else {
                (all.clone(), all.clone())
            };
            let eval = train.clone();
            Split { train, calibration, eval, features: Vec::new(), truth: Some(dist.true_mean()) }
        }
        Source::Csv { data, features, train, test } => {
            let (fit, calibration) = if held_out {
                let cut = holdout_start(train.len(), fraction);
                (data.subset(&train[..cut]), data.subset(&train[cut..]))
            } else {
                (data.subset(train), data.subset(train))
            };
            Split { train: fit, calibration, eval: data.subset(test), features: features.clone(), truth: None }
        }
    }
}

/// Every output of one trained model on one replicate.
struct Outcome {
    model: TrainedRegressor,
    row: ReplicateRow,
}

fn eval_options(config: &ExperimentConfig, truth: Option<f64>, seed: u64) -> EvalOptions {
    EvalOptions {
        truth,
        bins: config.eval.bins,
        xauc: XaucOptions { weighted: config.eval.xauc_weighted, seed, ..XaucOptions::default() },
    }
}

fn train_and_eval(
    config: &ExperimentConfig,
    entry: &ModelEntry,
    point: Option<f64>,
    split: &Split,
    top: &[usize],
    cell: CellKey,
    replicate: usize,
    data_seed: u64,
) -> Result<Outcome, String> {
    let mut spec = config.effective_spec(entry, point);
    spec.seed = model_seed(data_seed, entry.spec.seed);
    spec.architecture.features = split.features.clone();
    let model = train(&split.train, &spec).map_err(|e| e.to_string())?;
    let eval = split.eval.subset(top);
    let preds = model.predict_all(&eval);
    let values: Vec<f64> = preds.iter().map(|p| p.value).collect();
    let kappas: Option<Vec<f64>> = preds.iter().map(|p| p.kappa).collect();
    let report = evaluate(
        &pairs(&values, eval.targets()),
        kappas.as_deref(),
        &eval_options(config, split.truth, data_seed),
    )
    .map_err(|e| e.to_string())?;
    let mean_prediction = values.iter().sum::<f64>() / values.len() as f64;

    let (mut oracle, mut oracle_gap, mut loss_ratio) = (None, None, None);
    if split.train.n_features() == 0 {
        let targets = split.train.targets();
        if let Ok(opt) = scheme_optimum(
            targets,
            &spec.transform,
            spec.scheme,
            spec.effective_point_loss(),
            spec.effective_kappa(),
            spec.epsilon,
        ) {
            let o = opt.prediction.value;
            oracle_gap = Some((mean_prediction - o) / o);
            let trained = model.predict_detailed(&[]);
            let total = |f: f64, z: Option<f64>| -> f64 {
                targets.iter().map(|&y| sample_objective(&spec, f, z, y).expect("trained on it")).sum()
            };
            let best = total(opt.f.value, opt.z.as_ref().map(|z| z.value));
            if best > 0.0 {
                loss_ratio = Some(total(trained.f, trained.z) / best);
            }
            oracle = Some(opt.prediction);
        }
    }
    let row = ReplicateRow {
        cell,
        replicate,
        model_seed: spec.seed,
        eval: Some(report),
        mean_prediction: Some(mean_prediction),
        oracle,
        oracle_gap,
        loss_ratio,
        failure: None,
    };
    Ok(Outcome { model, row })
}

fn corrected(
    config: &ExperimentConfig,
    model: &TrainedRegressor,
    kind: CorrectionKind,
    split: &Split,
    top: &[usize],
    data_seed: u64,
) -> Result<(transun::metrics::EvalReport, f64), String> {
    let t = model.spec().transform;
    let cal = &split.calibration;
    let f_cal: Vec<f64> = (0..cal.len()).map(|i| model.point_output(cal.row(i))).collect();
    let stats = CorrectionStats::fit(&f_cal, cal.targets(), &t).map_err(|e| e.to_string())?;
    let eval = split.eval.subset(top);
    // rows sharing a point output share the corrected value
    let mut memo: HashMap<u64, f64> = HashMap::new();
    let mut values = Vec::with_capacity(eval.len());
    for i in 0..eval.len() {
        let f = model.point_output(eval.row(i));
        let v = match memo.get(&f.to_bits()) {
            Some(&v) => v,
            None => {
                let v = correct(kind, f, &stats, &t).map_err(|e| e.to_string())?;
                memo.insert(f.to_bits(), v);
                v
            }
        };
        values.push(v);
    }
    let report = evaluate(&pairs(&values, eval.targets()), None, &eval_options(config, split.truth, data_seed))
        .map_err(|e| e.to_string())?;
    Ok((report, values.iter().sum::<f64>() / values.len() as f64))
}

fn failed(cell: CellKey, replicate: usize, model_seed: u64, message: String) -> ReplicateRow {
    ReplicateRow {
        cell,
        replicate,
        model_seed,
        eval: None,
        mean_prediction: None,
        oracle: None,
        oracle_gap: None,
        loss_ratio: None,
        failure: Some(message),
    }
}

/// Method labels in report order: each model, followed by its corrections
/// when it is a tmse model.
pub fn method_labels(config: &ExperimentConfig) -> Vec<String> {
    let mut out = Vec::new();
    for m in &config.models {
        out.push(m.label.clone());
        if m.spec.scheme == Scheme::Tmse {
            out.extend(config.corrections.iter().map(|k| format!("{}+{}", m.label, k.name())));
        }
    }
    out
}

struct Unit {
    point: Option<f64>,
    source: usize,
    replicate: usize,
}

fn run_unit(config: &ExperimentConfig, sources: &[Source], unit: &Unit) -> Result<Vec<ReplicateRow>, HarnessError> {
    let source = &sources[unit.source];
    let data_seed = replicate_seed(config.seed, unit.replicate);
    let split = split(config, source, data_seed);
    let top = top_rows(split.eval.targets(), config.eval.top_fraction);
    let dataset = source.name();
    let cell = |method: &str| CellKey { dataset: dataset.clone(), method: method.to_string(), sweep: unit.point };
    let fail = |method: &str, message: String| -> Result<ReplicateRow, HarnessError> {
        match config.on_error {
            OnError::Fail => Err(HarnessError::Replicate {
                replicate: unit.replicate,
                dataset: dataset.clone(),
                method: method.to_string(),
                message,
            }),
            OnError::Record => Ok(failed(cell(method), unit.replicate, 0, message)),
        }
    };
    let mut rows = Vec::new();
    for entry in &config.models {
        let outcome =
            train_and_eval(config, entry, unit.point, &split, &top, cell(&entry.label), unit.replicate, data_seed);
        let model = match outcome {
            Ok(o) => {
                rows.push(o.row);
                Some(o.model)
            }
            Err(message) => {
                rows.push(fail(&entry.label, message)?);
                None
            }
        };
        if entry.spec.scheme != Scheme::Tmse {
            continue;
        }
        for &kind in &config.corrections {
            let label = format!("{}+{}", entry.label, kind.name());
            let result = match &model {
                Some(m) => corrected(config, m, kind, &split, &top, data_seed),
                None => Err("uncorrectable: the model failed to train".to_string()),
            };
            match result {
                Ok((report, mean)) => rows.push(ReplicateRow {
                    cell: cell(&label),
                    replicate: unit.replicate,
                    model_seed: model.as_ref().map_or(0, |m| m.spec().seed),
                    eval: Some(report),
                    mean_prediction: Some(mean),
                    oracle: None,
                    oracle_gap: None,
                    loss_ratio: None,
                    failure: None,
                }),
                Err(message) => rows.push(fail(&label, message)?),
            }
        }
    }
    Ok(rows)
}

/// Runs every replicate of every cell. Replicates run in parallel on the
/// current rayon pool; the report is merged in grid order, so it depends
/// only on the config.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport, HarnessError> {
    config.validate()?;
    let (sources, bin_edges) = load_sources(config)?;
    let replicates = config.replicates();
    let mut units = Vec::new();
    for point in config.sweep_points() {
        for source in 0..sources.len() {
            for replicate in 0..replicates {
                units.push(Unit { point, source, replicate });
            }
        }
    }
    let results: Vec<Result<Vec<ReplicateRow>, HarnessError>> =
        units.par_iter().map(|u| run_unit(config, &sources, u)).collect();
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    let metrics = config.eval.metrics.clone();
    let aggregates = aggregate(&rows, &metrics);

    let mut oracles = Vec::new();
    for source in &sources {
        let Source::Synthetic { dist, .. } = source else { continue };
        for m in &config.models {
            if let Ok(result) = population_sre(*dist, &m.spec.transform, m.spec.scheme) {
                oracles.push(OracleRow { dataset: dist.id().to_string(), method: m.label.clone(), result });
            }
        }
    }

    let provenance = Provenance {
        name: config.name.clone(),
        config_hash: config.hash(),
        seed: config.seed,
        replicates,
        replicate_seeds: (0..replicates).map(|r| replicate_seed(config.seed, r)).collect(),
        metrics,
        sweep_param: config.sweep.as_ref().map(|s| s.param.to_string()),
        datasets: sources.iter().map(Source::name).collect(),
        methods: method_labels(config),
        bin_edges,
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    Ok(RunReport { provenance, rows, aggregates, oracles })
}

/// Trains the first model on the first dataset (replicate 0, first sweep
/// point) and returns it with its evaluation row.
pub fn train_single(config: &ExperimentConfig) -> Result<(TrainedRegressor, ReplicateRow), HarnessError> {
    config.validate()?;
    let (sources, _) = load_sources(config)?;
    let entry = &config.models[0];
    let point = config.sweep_points()[0];
    let data_seed = replicate_seed(config.seed, 0);
    let split = split(config, &sources[0], data_seed);
    let top = top_rows(split.eval.targets(), config.eval.top_fraction);
    let cell = CellKey { dataset: sources[0].name(), method: entry.label.clone(), sweep: point };
    let outcome = train_and_eval(config, entry, point, &split, &top, cell, 0, data_seed).map_err(|message| {
        HarnessError::Replicate { replicate: 0, dataset: sources[0].name(), method: entry.label.clone(), message }
    })?;
    Ok((outcome.model, outcome.row))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_rows_are_stable() {
        assert_eq!(top_rows(&[1.0, 3.0, 3.0, 2.0], 0.5), vec![1, 2]);
        assert_eq!(top_rows(&[1.0, 3.0, 3.0, 2.0], 1.0), vec![1, 2, 3, 0]);
        assert_eq!(top_rows(&[1.0, 2.0, 3.0], 0.01), vec![2]);
    }

    #[test]
    fn holdout_bounds() {
        assert_eq!(holdout_start(10, 0.2), 8);
        assert_eq!(holdout_start(10, 0.001), 9);
        assert_eq!(holdout_start(2, 0.99), 1);
    }
}
