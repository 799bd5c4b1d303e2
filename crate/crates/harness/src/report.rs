//! Run reports: per-replicate rows, aggregates, oracle rows and their CSV,
//! markdown and JSON-lines renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use transun::metrics::{BinStat, EvalReport};
use transun::oracle::OracleResult;

use crate::data::FrozenEdges;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Markdown,
    JsonLines,
}

impl Format {
    pub fn extension(&self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Markdown => "md",
            Format::JsonLines => "jsonl",
        }
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "md" | "markdown" => Ok(Format::Markdown),
            "jsonl" | "json-lines" => Ok(Format::JsonLines),
            other => Err(format!("unknown format `{other}` (expected csv, md or jsonl)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub name: String,
    /// Hex SHA-256 of the canonical config.
    pub config_hash: String,
    pub seed: u64,
    pub replicates: usize,
    /// Data seed of each replicate.
    pub replicate_seeds: Vec<u64>,
    pub metrics: Vec<String>,
    pub sweep_param: Option<String>,
    pub datasets: Vec<String>,
    pub methods: Vec<String>,
    /// Continuous-feature bin edges, frozen on the training split.
    pub bin_edges: Vec<FrozenEdges>,
    pub version: String,
}

/// Identifies one cell of the experiment grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub dataset: String,
    pub method: String,
    pub sweep: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRow {
    #[serde(flatten)]
    pub cell: CellKey,
    pub replicate: usize,
    pub model_seed: u64,
    /// Absent when the replicate failed under `on_error = "record"`.
    pub eval: Option<EvalReport>,
    /// Mean prediction over the evaluation rows.
    pub mean_prediction: Option<f64>,
    /// Prediction optimum of the same scheme on this replicate's training
    /// sample (fixed-input data only).
    pub oracle: Option<OracleResult>,
    /// `(prediction - oracle) / oracle`.
    pub oracle_gap: Option<f64>,
    /// Training objective at the trained outputs over its value at the
    /// scheme optimum.
    pub loss_ratio: Option<f64>,
    pub failure: Option<String>,
}

impl ReplicateRow {
    /// Named scalars available for aggregation.
    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "oracle_gap" => self.oracle_gap,
            "loss_ratio" => self.loss_ratio,
            _ => self.eval.as_ref()?.scalars().into_iter().find(|(k, _)| *k == name).map(|(_, v)| v),
        }
    }

    pub fn bins(&self) -> &[BinStat] {
        self.eval.as_ref().map_or(&[], |e| &e.binned)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    #[serde(flatten)]
    pub cell: CellKey,
    pub metric: String,
    pub mean: f64,
    /// Sample standard deviation (n - 1); zero for a single value.
    pub stddev: f64,
    pub count: usize,
}

/// A population-level oracle quantity for one dataset and method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub dataset: String,
    pub method: String,
    pub result: OracleResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub provenance: Provenance,
    pub rows: Vec<ReplicateRow>,
    pub aggregates: Vec<Aggregate>,
    pub oracles: Vec<OracleRow>,
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("the first record must be the provenance")]
    MissingProvenance,
    #[error("line {0}: second provenance record")]
    DuplicateProvenance(usize),
    #[error("{dataset}/{method}: {got} replicate rows, expected {want}")]
    ReplicateCount { dataset: String, method: String, got: usize, want: usize },
    #[error("aggregate {metric} for {dataset}/{method} does not match its rows")]
    Aggregate { dataset: String, method: String, metric: String },
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Record {
    Provenance(Provenance),
    Replicate(ReplicateRow),
    Aggregate(Aggregate),
    Oracle(OracleRow),
}

/// Mean and sample standard deviation, summed in the given order.
pub fn mean_stddev(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

fn same_cell(a: &CellKey, b: &CellKey) -> bool {
    a.dataset == b.dataset && a.method == b.method && a.sweep.map(f64::to_bits) == b.sweep.map(f64::to_bits)
}

/// Aggregates over `rows` for each metric, cells in first-seen order.
pub fn aggregate(rows: &[ReplicateRow], metrics: &[String]) -> Vec<Aggregate> {
    let mut cells: Vec<&CellKey> = Vec::new();
    for r in rows {
        if !cells.iter().any(|c| same_cell(c, &r.cell)) {
            cells.push(&r.cell);
        }
    }
    let mut out = Vec::new();
    for cell in cells {
        for metric in metrics {
            let values: Vec<f64> =
                rows.iter().filter(|r| same_cell(&r.cell, cell)).filter_map(|r| r.metric(metric)).collect();
            if values.is_empty() {
                continue;
            }
            let (mean, stddev) = mean_stddev(&values);
            out.push(Aggregate { cell: cell.clone(), metric: metric.clone(), mean, stddev, count: values.len() });
        }
    }
    out
}

fn sweep_text(s: Option<f64>) -> String {
    s.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl RunReport {
    pub fn aggregate_for(&self, dataset: &str, method: &str, sweep: Option<f64>, metric: &str) -> Option<&Aggregate> {
        let key = CellKey { dataset: dataset.into(), method: method.into(), sweep };
        self.aggregates.iter().find(|a| same_cell(&a.cell, &key) && a.metric == metric)
    }

    pub fn rows_for<'a>(&'a self, dataset: &'a str, method: &'a str) -> impl Iterator<Item = &'a ReplicateRow> + 'a {
        self.rows.iter().filter(move |r| r.cell.dataset == dataset && r.cell.method == method)
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => self.to_csv(),
            Format::Markdown => self.to_markdown(),
            Format::JsonLines => self.to_jsonl(),
        }
    }

    /// One JSON object per line: provenance, replicate rows, aggregates,
    /// oracle rows.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |r: &Record| {
            out.push_str(&serde_json::to_string(r).expect("report serializes"));
            out.push('\n');
        };
        push(&Record::Provenance(self.provenance.clone()));
        for r in &self.rows {
            push(&Record::Replicate(r.clone()));
        }
        for a in &self.aggregates {
            push(&Record::Aggregate(a.clone()));
        }
        for o in &self.oracles {
            push(&Record::Oracle(o.clone()));
        }
        out
    }

    /// Parses [`RunReport::to_jsonl`] output and checks replicate counts and
    /// aggregates against the rows.
    pub fn from_jsonl(text: &str) -> Result<Self, ReportError> {
        let mut provenance = None;
        let (mut rows, mut aggregates, mut oracles) = (Vec::new(), Vec::new(), Vec::new());
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let record: Record =
                serde_json::from_str(line).map_err(|source| ReportError::Json { line: i + 1, source })?;
            match (record, provenance.is_some()) {
                (Record::Provenance(p), false) => provenance = Some(p),
                (Record::Provenance(_), true) => return Err(ReportError::DuplicateProvenance(i + 1)),
                (_, false) => return Err(ReportError::MissingProvenance),
                (Record::Replicate(r), true) => rows.push(r),
                (Record::Aggregate(a), true) => aggregates.push(a),
                (Record::Oracle(o), true) => oracles.push(o),
            }
        }
        let provenance = provenance.ok_or(ReportError::MissingProvenance)?;
        let report = RunReport { provenance, rows, aggregates, oracles };
        report.check()?;
        Ok(report)
    }

    /// Replicate count per cell and aggregate agreement to 1e-12.
    pub fn check(&self) -> Result<(), ReportError> {
        let want = self.provenance.replicates;
        let mut counts: Vec<(&CellKey, usize)> = Vec::new();
        for r in &self.rows {
            match counts.iter_mut().find(|(c, _)| same_cell(c, &r.cell)) {
                Some((_, n)) => *n += 1,
                None => counts.push((&r.cell, 1)),
            }
        }
        if let Some((c, got)) = counts.iter().find(|(_, n)| *n != want) {
            return Err(ReportError::ReplicateCount {
                dataset: c.dataset.clone(),
                method: c.method.clone(),
                got: *got,
                want,
            });
        }
        for a in &self.aggregates {
            let values: Vec<f64> =
                self.rows.iter().filter(|r| same_cell(&r.cell, &a.cell)).filter_map(|r| r.metric(&a.metric)).collect();
            let ok = !values.is_empty() && {
                let (mean, sd) = mean_stddev(&values);
                let close = |x: f64, y: f64| (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1.0);
                values.len() == a.count && close(mean, a.mean) && close(sd, a.stddev)
            };
            if !ok {
                return Err(ReportError::Aggregate {
                    dataset: a.cell.dataset.clone(),
                    method: a.cell.method.clone(),
                    metric: a.metric.clone(),
                });
            }
        }
        Ok(())
    }

    /// Long format: replicate values, aggregates, binned signed TRE and oracle
    /// rows. Floats at full precision.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("record,dataset,method,sweep,replicate,metric,value,stddev,count,bin,bin_lo,bin_hi\n");
        let metrics = &self.provenance.metrics;
        if metrics.is_empty() {
            return out;
        }
        for r in &self.rows {
            let prefix = format!(
                "{},{},{}",
                csv_field(&r.cell.dataset),
                csv_field(&r.cell.method),
                sweep_text(r.cell.sweep)
            );
            for m in metrics {
                if let Some(v) = r.metric(m) {
                    let _ = writeln!(out, "replicate,{prefix},{},{m},{v},,,,,", r.replicate);
                }
            }
            for (k, b) in r.bins().iter().enumerate() {
                let _ = writeln!(
                    out,
                    "bin,{prefix},{},signed_tre,{},,{},{k},{},{}",
                    r.replicate, b.signed_tre, b.count, b.lo, b.hi
                );
            }
        }
        for a in &self.aggregates {
            let _ = writeln!(
                out,
                "aggregate,{},{},{},,{},{},{},{},,,",
                csv_field(&a.cell.dataset),
                csv_field(&a.cell.method),
                sweep_text(a.cell.sweep),
                a.metric,
                a.mean,
                a.stddev,
                a.count
            );
        }
        for o in &self.oracles {
            let _ = writeln!(
                out,
                "oracle,{},{},,,{},{},{},,,,",
                csv_field(&o.dataset),
                csv_field(&o.method),
                o.result.quantity,
                o.result.value,
                o.result.error_bound
            );
        }
        out
    }

    /// One table per metric (and sweep point): methods as rows, datasets as
    /// columns, `mean ± sd` at 4 decimals.
    pub fn to_markdown(&self) -> String {
        let p = &self.provenance;
        let mut out = format!(
            "# {}\n\nconfig `{}`, seed {}, {} replicates\n\n",
            p.name, p.config_hash, p.seed, p.replicates
        );
        let header = |out: &mut String, first: &str| {
            let _ = writeln!(out, "| {first} | {} |", p.datasets.join(" | "));
            let _ = writeln!(out, "|---|{}", "---:|".repeat(p.datasets.len()));
        };
        if p.metrics.is_empty() {
            header(&mut out, "method");
            return out;
        }
        let mut sweeps: Vec<Option<f64>> = Vec::new();
        for a in &self.aggregates {
            if !sweeps.iter().any(|s| s.map(f64::to_bits) == a.cell.sweep.map(f64::to_bits)) {
                sweeps.push(a.cell.sweep);
            }
        }
        if sweeps.is_empty() {
            sweeps.push(None);
        }
        for metric in &p.metrics {
            for &sweep in &sweeps {
                match (sweep, &p.sweep_param) {
                    (Some(v), Some(param)) => {
                        let _ = writeln!(out, "## {metric} ({param} = {v})\n");
                    }
                    _ => {
                        let _ = writeln!(out, "## {metric}\n");
                    }
                }
                header(&mut out, "method");
                for method in &p.methods {
                    let cells: Vec<String> = p
                        .datasets
                        .iter()
                        .map(|d| match self.aggregate_for(d, method, sweep, metric) {
                            Some(a) => format!("{:.4} ± {:.4}", a.mean, a.stddev),
                            None => "-".into(),
                        })
                        .collect();
                    let _ = writeln!(out, "| {method} | {} |", cells.join(" | "));
                }
                out.push('\n');
            }
        }
        if !self.oracles.is_empty() {
            out.push_str("## oracle\n\n| dataset | method | quantity | value | bound |\n|---|---|---|---:|---:|\n");
            for o in &self.oracles {
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {:.4} | {:.1e} |",
                    o.dataset, o.method, o.result.quantity, o.result.value, o.result.error_bound
                );
            }
            out.push('\n');
        }
        let failures: BTreeMap<(&str, &str), usize> = self
            .rows
            .iter()
            .filter(|r| r.failure.is_some())
            .fold(BTreeMap::new(), |mut m, r| {
                *m.entry((r.cell.dataset.as_str(), r.cell.method.as_str())).or_default() += 1;
                m
            });
        if !failures.is_empty() {
            out.push_str("## failed replicates\n\n| dataset | method | count |\n|---|---|---:|\n");
            for ((d, m), n) in failures {
                let _ = writeln!(out, "| {d} | {m} | {n} |");
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use transun::metrics::{evaluate, pairs, EvalOptions};

    fn row(dataset: &str, method: &str, replicate: usize, pred: f64) -> ReplicateRow {
        let p = pairs(&[pred, pred], &[1.0, 3.0]);
        let opts = EvalOptions { truth: Some(2.0), ..EvalOptions::default() };
        ReplicateRow {
            cell: CellKey { dataset: dataset.into(), method: method.into(), sweep: None },
            replicate,
            model_seed: replicate as u64,
            eval: Some(evaluate(&p, None, &opts).unwrap()),
            mean_prediction: Some(pred),
            oracle: None,
            oracle_gap: None,
            loss_ratio: None,
            failure: None,
        }
    }

    fn sample(metrics: &[&str]) -> RunReport {
        let metrics: Vec<String> = metrics.iter().map(|s| s.to_string()).collect();
        let rows = vec![row("A", "m", 0, 1.9), row("A", "m", 1, 2.1), row("B", "m", 0, 2.0), row("B", "m", 1, 2.2)];
        RunReport {
            provenance: Provenance {
                name: "t".into(),
                config_hash: "00".into(),
                seed: 1,
                replicates: 2,
                replicate_seeds: vec![5, 6],
                metrics: metrics.clone(),
                sweep_param: None,
                datasets: vec!["A".into(), "B".into()],
                methods: vec!["m".into()],
                bin_edges: Vec::new(),
                version: "0".into(),
            },
            aggregates: aggregate(&rows, &metrics),
            rows,
            oracles: Vec::new(),
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let r = sample(&["sre", "tre"]);
        let text = r.to_jsonl();
        assert_eq!(RunReport::from_jsonl(&text).unwrap(), r);
        assert_eq!(text, r.to_jsonl());
    }

    #[test]
    fn aggregates_match_rows() {
        let r = sample(&["sre"]);
        let a = r.aggregate_for("A", "m", None, "sre").unwrap();
        assert!(a.mean.abs() < 1e-15);
        assert!((a.stddev - (0.02f64).sqrt() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn tampered_reports_are_rejected() {
        let r = sample(&["sre"]);
        let mut bad = r.clone();
        bad.aggregates[0].mean += 1e-6;
        assert!(matches!(RunReport::from_jsonl(&bad.to_jsonl()), Err(ReportError::Aggregate { .. })));
        let mut short = r.clone();
        short.rows.pop();
        assert!(matches!(RunReport::from_jsonl(&short.to_jsonl()), Err(ReportError::ReplicateCount { .. })));
        let body: String = r.to_jsonl().lines().skip(1).map(|l| format!("{l}\n")).collect();
        assert!(matches!(RunReport::from_jsonl(&body), Err(ReportError::MissingProvenance)));
        assert!(matches!(RunReport::from_jsonl("{"), Err(ReportError::Json { line: 1, .. })));
    }

    #[test]
    fn empty_metric_selection_gives_header_only() {
        let r = sample(&[]);
        assert_eq!(r.to_csv().lines().count(), 1);
        let md = r.to_markdown();
        assert!(md.ends_with("| method | A | B |\n|---|---:|---:|\n"), "{md}");
    }

    #[test]
    fn markdown_grid_has_datasets_as_columns() {
        let md = sample(&["sre"]).to_markdown();
        assert!(md.contains("| method | A | B |"));
        assert!(md.contains("| m | 0.0000 ± 0.0707 | 0.0500 ± 0.0707 |"), "{md}");
    }

    #[test]
    fn format_names() {
        assert_eq!("md".parse::<Format>().unwrap(), Format::Markdown);
        assert_eq!("jsonl".parse::<Format>().unwrap(), Format::JsonLines);
        assert!("xml".parse::<Format>().is_err());
    }
}
