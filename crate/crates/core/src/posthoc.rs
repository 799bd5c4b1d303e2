//! Post-hoc retransformation corrections for a trained transformed-MSE
//! model: normal-theory, smearing and smoothed isotonic calibration.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::transform::{TargetTransform, TransformError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionKind {
    Nte,
    Smearing,
    Sir,
}

impl CorrectionKind {
    pub const ALL: [CorrectionKind; 3] = [CorrectionKind::Nte, CorrectionKind::Smearing, CorrectionKind::Sir];

    pub fn name(&self) -> &'static str {
        match self {
            CorrectionKind::Nte => "nte",
            CorrectionKind::Smearing => "smearing",
            CorrectionKind::Sir => "sir",
        }
    }
}

impl fmt::Display for CorrectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorrectionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CorrectionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown correction `{s}`"))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorrectionError {
    #[error("no calibration pairs")]
    Empty,
    #[error("{got} model outputs for {want} targets")]
    Length { got: usize, want: usize },
    #[error("calibration row {row}: {source}")]
    Target { row: usize, source: TransformError },
    #[error("normal-theory correction needs log1p, got {0}")]
    UnsupportedTransform(TargetTransform),
    #[error("{count} of {total} shifted outputs fall outside the range of {transform}")]
    Range { count: usize, total: usize, transform: TargetTransform },
    #[error("non-finite value in calibration data")]
    NonFinite,
}

/// Nondecreasing piecewise-linear map: constant across each PAV block's
/// prediction span, linear across the gaps between blocks, flat beyond the
/// outermost blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsotonicFit {
    pub knots_x: Vec<f64>,
    pub knots_y: Vec<f64>,
}

impl IsotonicFit {
    pub fn eval(&self, x: f64) -> f64 {
        let (xs, ys) = (&self.knots_x, &self.knots_y);
        let last = xs.len() - 1;
        if x <= xs[0] {
            return ys[0];
        }
        if x >= xs[last] {
            return ys[last];
        }
        let j = xs.partition_point(|&k| k <= x);
        let (x0, x1, y0, y1) = (xs[j - 1], xs[j], ys[j - 1], ys[j]);
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }
}

/// Distinct ascending `x` with the count and target sum of each.
fn group_by_x(pairs: &[(f64, f64)]) -> Vec<(f64, f64, f64)> {
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut groups: Vec<(f64, f64, f64)> = Vec::new();
    for (x, y) in sorted {
        match groups.last_mut() {
            Some(g) if g.0 == x => {
                g.1 += 1.0;
                g.2 += y;
            }
            _ => groups.push((x, 1.0, y)),
        }
    }
    groups
}

/// Pool-adjacent-violators least-squares isotonic regression of target on
/// prediction. Equal predictions are pooled first, so the fit is a function
/// of the prediction.
pub fn pav_isotonic(pairs: &[(f64, f64)]) -> Result<IsotonicFit, CorrectionError> {
    if pairs.is_empty() {
        return Err(CorrectionError::Empty);
    }
    if pairs.iter().any(|(x, y)| !(x.is_finite() && y.is_finite())) {
        return Err(CorrectionError::NonFinite);
    }
    // block: (weight, target sum, lowest x, highest x)
    let mut blocks: Vec<(f64, f64, f64, f64)> = Vec::new();
    for (x, w, s) in group_by_x(pairs) {
        blocks.push((w, s, x, x));
        while blocks.len() > 1 {
            let b = blocks[blocks.len() - 1];
            let a = blocks[blocks.len() - 2];
            if a.1 / a.0 <= b.1 / b.0 {
                break;
            }
            blocks.pop();
            *blocks.last_mut().expect("two blocks") = (a.0 + b.0, a.1 + b.1, a.2, b.3);
        }
    }
    let mut fit = IsotonicFit { knots_x: Vec::new(), knots_y: Vec::new() };
    for (w, s, lo, hi) in blocks {
        let v = s / w;
        fit.knots_x.push(lo);
        fit.knots_y.push(v);
        if hi > lo {
            fit.knots_x.push(hi);
            fit.knots_y.push(v);
        }
    }
    Ok(fit)
}

/// Exhaustive least-squares isotonic fit over every contiguous partition of
/// the distinct predictions (2^(m-1) candidates; meant for tiny inputs).
/// Returns the fitted value at each distinct prediction, ascending.
pub fn isotonic_brute_force(pairs: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let groups = group_by_x(pairs);
    let m = groups.len();
    assert!(m <= 20, "exhaustive search is exponential");
    let sse_of = |fitted: &[f64]| -> f64 {
        pairs
            .iter()
            .map(|&(x, y)| {
                let g = groups.partition_point(|q| q.0 < x);
                (fitted[g] - y).powi(2)
            })
            .sum()
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << (m.saturating_sub(1))) {
        // bit i set: cut between group i and i + 1
        let mut fitted = vec![0.0; m];
        let mut start = 0;
        let mut prev = f64::NEG_INFINITY;
        let mut monotone = true;
        for i in 0..m {
            if i == m - 1 || mask & (1 << i) != 0 {
                let (w, s) = groups[start..=i].iter().fold((0.0, 0.0), |(w, s), g| (w + g.1, s + g.2));
                let v = s / w;
                if v < prev {
                    monotone = false;
                    break;
                }
                prev = v;
                fitted[start..=i].iter_mut().for_each(|f| *f = v);
                start = i + 1;
            }
        }
        if !monotone {
            continue;
        }
        let sse = sse_of(&fitted);
        if best.as_ref().is_none_or(|(b, _)| sse < *b) {
            best = Some((sse, fitted));
        }
    }
    let fitted = best.expect("the single-block partition is always monotone").1;
    groups.iter().zip(fitted).map(|(g, v)| (g.0, v)).collect()
}

/// Residual statistics of a transformed-MSE model on calibration data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectionStats {
    /// `T(y) - f(x)` per calibration row.
    pub residuals: Vec<f64>,
    /// Sample variance of the residuals (n - 1 denominator; 0 for one row).
    pub sigma2_hat: f64,
    /// Raw prediction `T^-1(f)` to target.
    pub isotonic_fit: IsotonicFit,
}

impl CorrectionStats {
    pub fn fit(f_outs: &[f64], targets: &[f64], t: &TargetTransform) -> Result<Self, CorrectionError> {
        if f_outs.len() != targets.len() {
            return Err(CorrectionError::Length { got: f_outs.len(), want: targets.len() });
        }
        if targets.is_empty() {
            return Err(CorrectionError::Empty);
        }
        let mut residuals = Vec::with_capacity(targets.len());
        for (row, (&f, &y)) in f_outs.iter().zip(targets).enumerate() {
            let ty = t.apply(y).map_err(|source| CorrectionError::Target { row, source })?;
            residuals.push(ty - f);
        }
        if residuals.iter().any(|r| !r.is_finite()) {
            return Err(CorrectionError::NonFinite);
        }
        let n = residuals.len() as f64;
        let m = residuals.iter().sum::<f64>() / n;
        let sigma2_hat = if residuals.len() > 1 {
            residuals.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let raw: Vec<(f64, f64)> = f_outs.iter().zip(targets).map(|(&f, &y)| (t.invert_extended(f), y)).collect();
        Ok(CorrectionStats { residuals, sigma2_hat, isotonic_fit: pav_isotonic(&raw)? })
    }
}

/// `exp(f + sigma2_hat / 2) - 1`.
pub fn nte_correct(f_out: f64, stats: &CorrectionStats, t: &TargetTransform) -> Result<f64, CorrectionError> {
    if *t != TargetTransform::Log1p {
        return Err(CorrectionError::UnsupportedTransform(*t));
    }
    Ok((f_out + 0.5 * stats.sigma2_hat).exp_m1())
}

/// Whether `T^-1` extends monotonically to `u` (log1p, identity, linear and
/// square continue over the whole real line; sqrt and arctan do not).
fn smearable(t: &TargetTransform, u: f64) -> bool {
    match t {
        TargetTransform::Identity
        | TargetTransform::Linear { .. }
        | TargetTransform::Log1p
        | TargetTransform::Square => u.is_finite(),
        TargetTransform::Sqrt | TargetTransform::Arctan => t.in_range(u),
    }
}

/// `mean_i T^-1(f + r_i)`.
pub fn smearing_correct(f_out: f64, stats: &CorrectionStats, t: &TargetTransform) -> Result<f64, CorrectionError> {
    let total = stats.residuals.len();
    if total == 0 {
        return Err(CorrectionError::Empty);
    }
    let count = stats.residuals.iter().filter(|&&r| !smearable(t, f_out + r)).count();
    if count > 0 {
        return Err(CorrectionError::Range { count, total, transform: *t });
    }
    Ok(stats.residuals.iter().map(|&r| t.invert_extended(f_out + r)).sum::<f64>() / total as f64)
}

/// Isotonic map evaluated at a raw prediction.
pub fn sir_calibrate(raw_prediction: f64, stats: &CorrectionStats) -> f64 {
    stats.isotonic_fit.eval(raw_prediction)
}

/// Applies `kind` to a point-branch output.
pub fn correct(
    kind: CorrectionKind,
    f_out: f64,
    stats: &CorrectionStats,
    t: &TargetTransform,
) -> Result<f64, CorrectionError> {
    match kind {
        CorrectionKind::Nte => nte_correct(f_out, stats, t),
        CorrectionKind::Smearing => smearing_correct(f_out, stats, t),
        CorrectionKind::Sir => Ok(sir_calibrate(t.invert_extended(f_out), stats)),
    }
}
