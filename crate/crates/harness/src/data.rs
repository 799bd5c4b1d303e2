//! CSV ingestion: categorical hashing, quantile discretization and target
//! checks.

use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use transun::network::FeatureSpec;
use transun::{Dataset, TargetTransform};

use crate::config::{validate_columns, ColumnSpec, ConfigError};

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("file has no data rows")]
    Empty,
    #[error("column `{0}` is missing from the header")]
    MissingColumn(String),
    #[error("line {line}, column `{column}`: cannot parse `{value}` as a number")]
    Parse { line: u64, column: String, value: String },
    #[error("line {line}: target {value} is outside the {transform} domain")]
    Domain { line: u64, value: f64, transform: TargetTransform },
    #[error(transparent)]
    Schema(#[from] ConfigError),
}

enum Raw {
    Categorical { buckets: u32, ids: Vec<u32> },
    Continuous { quantiles: Option<usize>, edges: Option<Vec<f64>>, values: Vec<f64> },
}

struct RawColumn {
    name: String,
    data: Raw,
}

/// Parsed CSV with categorical columns already hashed and continuous columns
/// still raw, so bin edges can be computed on a training split.
pub struct CsvTable {
    columns: Vec<RawColumn>,
    targets: Vec<f64>,
    /// Source line of each row (the header is line 1).
    lines: Vec<u64>,
}

/// Edges fixed for one continuous column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrozenEdges {
    pub column: String,
    pub edges: Vec<f64>,
}

/// Stable bucket id: the first eight bytes of SHA-256, little-endian, mod
/// `buckets`.
pub fn hash_bucket(value: &str, buckets: u32) -> u32 {
    let d = Sha256::digest(value.as_bytes());
    let h = u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"));
    (h % buckets as u64) as u32
}

/// Equal-frequency edges over `values`: the value at sorted position
/// `floor(k n / q)` for `k = 1..q`, deduplicated, never at the minimum.
pub fn quantile_edges(values: &[f64], q: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut edges: Vec<f64> = Vec::with_capacity(q.saturating_sub(1));
    if n == 0 {
        return edges;
    }
    for k in 1..q {
        let e = sorted[(k * n / q).min(n - 1)];
        if e > sorted[0] && edges.last().is_none_or(|&last| e > last) {
            edges.push(e);
        }
    }
    edges
}

/// Index of the bin holding `v`: bin `k` covers `[edges[k-1], edges[k])`.
pub fn bin_index(edges: &[f64], v: f64) -> u32 {
    edges.partition_point(|&e| e <= v) as u32
}

impl CsvTable {
    pub fn read<R: Read>(reader: R, columns: &[ColumnSpec]) -> Result<Self, CsvError> {
        validate_columns(columns)?;
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| CsvError::Malformed { line: 1, message: e.to_string() })?
            .clone();
        if header.is_empty() {
            return Err(CsvError::Empty);
        }
        let position = |name: &str| {
            header
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| CsvError::MissingColumn(name.to_string()))
        };
        let mut target_at = 0;
        let mut raw = Vec::new();
        for c in columns {
            let at = position(c.name())?;
            match c {
                ColumnSpec::Target { .. } => target_at = at,
                ColumnSpec::Categorical { name, buckets } => raw.push((
                    at,
                    RawColumn { name: name.clone(), data: Raw::Categorical { buckets: *buckets, ids: Vec::new() } },
                )),
                ColumnSpec::Continuous { name, quantiles, edges } => raw.push((
                    at,
                    RawColumn {
                        name: name.clone(),
                        data: Raw::Continuous { quantiles: *quantiles, edges: edges.clone(), values: Vec::new() },
                    },
                )),
            }
        }
        let target_name = columns.iter().find(|c| matches!(c, ColumnSpec::Target { .. })).expect("validated").name();
        let mut targets = Vec::new();
        let mut lines = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(|e| CsvError::Malformed {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            let line = record.position().map_or(0, |p| p.line());
            let number = |at: usize, column: &str| {
                let cell = record.get(at).unwrap_or("").trim();
                cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| CsvError::Parse {
                    line,
                    column: column.to_string(),
                    value: cell.to_string(),
                })
            };
            targets.push(number(target_at, target_name)?);
            for (at, col) in &mut raw {
                match &mut col.data {
                    Raw::Categorical { buckets, ids } => {
                        ids.push(hash_bucket(record.get(*at).unwrap_or("").trim(), *buckets))
                    }
                    Raw::Continuous { values, .. } => values.push(number(*at, &col.name)?),
                }
            }
            lines.push(line);
        }
        if targets.is_empty() {
            return Err(CsvError::Empty);
        }
        Ok(CsvTable { columns: raw.into_iter().map(|(_, c)| c).collect(), targets, lines })
    }

    pub fn from_path(path: &Path, columns: &[ColumnSpec]) -> Result<Self, CsvError> {
        let file = std::fs::File::open(path).map_err(|source| CsvError::Io { path: path.to_path_buf(), source })?;
        Self::read(std::io::BufReader::new(file), columns)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// First target outside the transform's domain.
    pub fn check_domain(&self, t: &TargetTransform) -> Result<(), CsvError> {
        match self.targets.iter().position(|&y| !t.in_domain(y)) {
            Some(i) => Err(CsvError::Domain { line: self.lines[i], value: self.targets[i], transform: *t }),
            None => Ok(()),
        }
    }

    /// Bin edges per continuous column, computed on `fit_rows`.
    pub fn freeze_edges(&self, fit_rows: &[usize]) -> Vec<FrozenEdges> {
        self.columns
            .iter()
            .filter_map(|c| match &c.data {
                Raw::Continuous { edges: Some(e), .. } => Some(FrozenEdges { column: c.name.clone(), edges: e.clone() }),
                Raw::Continuous { quantiles: Some(q), values, .. } => {
                    let fit: Vec<f64> = fit_rows.iter().map(|&i| values[i]).collect();
                    Some(FrozenEdges { column: c.name.clone(), edges: quantile_edges(&fit, *q) })
                }
                _ => None,
            })
            .collect()
    }

    /// Encodes every row with the given continuous-column edges (in column
    /// order, as returned by [`CsvTable::freeze_edges`]).
    pub fn encode(&self, edges: &[FrozenEdges]) -> (Dataset, Vec<FeatureSpec>) {
        let mut specs = Vec::with_capacity(self.columns.len());
        let mut next_edges = edges.iter();
        let mut encoded: Vec<Vec<u32>> = Vec::with_capacity(self.columns.len());
        for c in &self.columns {
            match &c.data {
                Raw::Categorical { buckets, ids } => {
                    specs.push(FeatureSpec::HashedCategorical { buckets: *buckets });
                    encoded.push(ids.clone());
                }
                Raw::Continuous { values, .. } => {
                    let e = &next_edges.next().expect("one edge set per continuous column").edges;
                    specs.push(FeatureSpec::DiscretizedContinuous { edges: e.clone() });
                    encoded.push(values.iter().map(|&v| bin_index(e, v)).collect());
                }
            }
        }
        let n = self.len();
        let mut features = Vec::with_capacity(n * encoded.len());
        for i in 0..n {
            features.extend(encoded.iter().map(|col| col[i]));
        }
        let data = Dataset::new(encoded.len(), features, self.targets.clone()).expect("targets checked finite");
        (data, specs)
    }
}

/// Reads and encodes a CSV in one go, with bins fitted on every row.
pub fn load_csv<R: Read>(reader: R, columns: &[ColumnSpec]) -> Result<(Dataset, Vec<FeatureSpec>), CsvError> {
    let table = CsvTable::read(reader, columns)?;
    let all: Vec<usize> = (0..table.len()).collect();
    Ok(table.encode(&table.freeze_edges(&all)))
}
