//! Evaluation metrics over (prediction, target) pairs in original units.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPair {
    pub prediction: f64,
    pub target: f64,
}

impl EvalPair {
    pub fn new(prediction: f64, target: f64) -> Self {
        EvalPair { prediction, target }
    }
}

/// Zips predictions with targets.
pub fn pairs(predictions: &[f64], targets: &[f64]) -> Vec<EvalPair> {
    assert_eq!(predictions.len(), targets.len(), "prediction and target counts differ");
    predictions.iter().zip(targets).map(|(&p, &t)| EvalPair::new(p, t)).collect()
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("no pairs")]
    Empty,
    #[error("pair {index} is not finite")]
    NonFinite { index: usize },
    #[error("truth is zero")]
    ZeroTruth,
    #[error("predictions sum to zero")]
    ZeroPredictionSum,
    #[error("targets sum to {0}, need a positive total")]
    NonPositiveTargetSum(f64),
    #[error("prediction {index} is {value}, too close to zero for a ratio")]
    ZeroPrediction { index: usize, value: f64 },
    #[error("need at least 2 pairs, got {0}")]
    TooFewPairs(usize),
    #[error("all targets are equal")]
    AllTargetsEqual,
    #[error("{bins} bins requested but only {distinct} distinct targets")]
    TooManyBins { bins: usize, distinct: usize },
    #[error("kappa vector has {got} entries for {want} pairs")]
    KappaLength { got: usize, want: usize },
}

/// Smallest `|prediction|` accepted in the MRE denominator.
pub const MRE_GUARD: f64 = 1e-12;

fn check(pairs: &[EvalPair]) -> Result<(), MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::Empty);
    }
    match pairs.iter().position(|p| !(p.prediction.is_finite() && p.target.is_finite())) {
        Some(index) => Err(MetricError::NonFinite { index }),
        None => Ok(()),
    }
}

/// `(prediction - truth) / truth`.
pub fn sre(prediction: f64, truth: f64) -> Result<f64, MetricError> {
    if truth == 0.0 {
        return Err(MetricError::ZeroTruth);
    }
    Ok((prediction - truth) / truth)
}

/// `sum(pred - y) / sum(pred)`.
pub fn signed_tre(pairs: &[EvalPair]) -> Result<f64, MetricError> {
    check(pairs)?;
    let (gap, total) = pairs
        .iter()
        .fold((0.0, 0.0), |(g, s), p| (g + (p.prediction - p.target), s + p.prediction));
    if total == 0.0 {
        return Err(MetricError::ZeroPredictionSum);
    }
    Ok(gap / total)
}

/// `|sum(pred - y) / sum(pred)|`.
pub fn tre(pairs: &[EvalPair]) -> Result<f64, MetricError> {
    signed_tre(pairs).map(f64::abs)
}

/// `|mean((pred - y) / pred)|`; any `|pred| < MRE_GUARD` is an error.
pub fn mre(pairs: &[EvalPair]) -> Result<f64, MetricError> {
    check(pairs)?;
    let mut acc = 0.0;
    for (index, p) in pairs.iter().enumerate() {
        if p.prediction.abs() < MRE_GUARD {
            return Err(MetricError::ZeroPrediction { index, value: p.prediction });
        }
        acc += (p.prediction - p.target) / p.prediction;
    }
    Ok((acc / pairs.len() as f64).abs())
}

fn target_sum(pairs: &[EvalPair]) -> Result<f64, MetricError> {
    check(pairs)?;
    let s: f64 = pairs.iter().map(|p| p.target).sum();
    if s > 0.0 {
        Ok(s)
    } else {
        Err(MetricError::NonPositiveTargetSum(s))
    }
}

/// `sqrt(sum((pred - y)^2)) / sum(y)`.
pub fn nrmse(pairs: &[EvalPair]) -> Result<f64, MetricError> {
    let s = target_sum(pairs)?;
    let sq: f64 = pairs.iter().map(|p| (p.prediction - p.target).powi(2)).sum();
    Ok(sq.sqrt() / s)
}

/// `sum(|pred - y|) / sum(y)`.
pub fn nmae(pairs: &[EvalPair]) -> Result<f64, MetricError> {
    let s = target_sum(pairs)?;
    let abs: f64 = pairs.iter().map(|p| (p.prediction - p.target).abs()).sum();
    Ok(abs / s)
}

/// `mean(pred) / mean(y)`.
pub fn pgr(pairs: &[EvalPair]) -> Result<f64, MetricError> {
    check(pairs)?;
    let (p, y) = pairs.iter().fold((0.0, 0.0), |(a, b), q| (a + q.prediction, b + q.target));
    if y == 0.0 {
        return Err(MetricError::NonPositiveTargetSum(0.0));
    }
    Ok(p / y)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct XaucOptions {
    /// Weight each pair by `|y_i - y_j|`.
    pub weighted: bool,
    /// Above this many pairs the estimate switches to sampling.
    pub exact_limit: usize,
    pub sampled_pairs: usize,
    pub seed: u64,
}

impl Default for XaucOptions {
    fn default() -> Self {
        XaucOptions { weighted: false, exact_limit: 100_000, sampled_pairs: 1_000_000, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum XaucMethod {
    Exact,
    Sampled { pairs: usize, seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Xauc {
    pub value: f64,
    pub method: XaucMethod,
}

/// Pairwise concordance between prediction order and target order over
/// pairs with distinct targets; prediction ties count one half.
pub fn xauc(pairs: &[EvalPair], opts: &XaucOptions) -> Result<Xauc, MetricError> {
    check(pairs)?;
    if pairs.len() < 2 {
        return Err(MetricError::TooFewPairs(pairs.len()));
    }
    let first = pairs[0].target;
    if pairs.iter().all(|p| p.target == first) {
        return Err(MetricError::AllTargetsEqual);
    }
    if pairs.len() > opts.exact_limit {
        Ok(Xauc {
            value: xauc_sampled(pairs, opts),
            method: XaucMethod::Sampled { pairs: opts.sampled_pairs, seed: opts.seed },
        })
    } else {
        Ok(Xauc { value: xauc_exact(pairs, opts.weighted), method: XaucMethod::Exact })
    }
}

/// Binary indexed tree over prediction ranks holding counts and target sums.
struct Fenwick {
    count: Vec<f64>,
    sum: Vec<f64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Fenwick { count: vec![0.0; n + 1], sum: vec![0.0; n + 1] }
    }

    fn add(&mut self, rank: usize, y: f64) {
        let mut i = rank + 1;
        while i < self.count.len() {
            self.count[i] += 1.0;
            self.sum[i] += y;
            i += i & i.wrapping_neg();
        }
    }

    /// Totals over ranks `< rank`.
    fn prefix(&self, rank: usize) -> (f64, f64) {
        let (mut c, mut s) = (0.0, 0.0);
        let mut i = rank;
        while i > 0 {
            c += self.count[i];
            s += self.sum[i];
            i -= i & i.wrapping_neg();
        }
        (c, s)
    }
}

fn xauc_exact(pairs: &[EvalPair], weighted: bool) -> f64 {
    let n = pairs.len();
    let mut preds: Vec<f64> = pairs.iter().map(|p| p.prediction).collect();
    preds.sort_by(f64::total_cmp);
    preds.dedup();
    let rank = |p: f64| preds.partition_point(|&q| q < p);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| pairs[a].target.total_cmp(&pairs[b].target));

    let mut tree = Fenwick::new(preds.len());
    let (mut seen, mut seen_sum) = (0.0, 0.0);
    let (mut good, mut total) = (0.0, 0.0);
    let mut start = 0;
    while start < n {
        let y = pairs[order[start]].target;
        let end = start + order[start..].partition_point(|&i| pairs[i].target == y);
        // every already-inserted element has a strictly smaller target
        for &i in &order[start..end] {
            let r = rank(pairs[i].prediction);
            let (below, below_sum) = tree.prefix(r);
            let (upto, upto_sum) = tree.prefix(r + 1);
            let (tied, tied_sum) = (upto - below, upto_sum - below_sum);
            if weighted {
                good += below * y - below_sum + 0.5 * (tied * y - tied_sum);
                total += seen * y - seen_sum;
            } else {
                good += below + 0.5 * tied;
                total += seen;
            }
        }
        for &i in &order[start..end] {
            tree.add(rank(pairs[i].prediction), pairs[i].target);
            seen += 1.0;
            seen_sum += pairs[i].target;
        }
        start = end;
    }
    good / total
}

fn xauc_sampled(pairs: &[EvalPair], opts: &XaucOptions) -> f64 {
    let mut rng = RngStream::new(opts.seed);
    let n = pairs.len() as u64;
    let (mut good, mut total) = (0.0, 0.0);
    let mut drawn = 0;
    while drawn < opts.sampled_pairs {
        let i = rng.below(n) as usize;
        let j = rng.below(n) as usize;
        let (a, b) = (pairs[i], pairs[j]);
        if i == j || a.target == b.target {
            continue;
        }
        drawn += 1;
        let w = if opts.weighted { (a.target - b.target).abs() } else { 1.0 };
        let dy = a.target - b.target;
        let dp = a.prediction - b.prediction;
        total += w;
        if dp == 0.0 {
            good += 0.5 * w;
        } else if (dp > 0.0) == (dy > 0.0) {
            good += w;
        }
    }
    good / total
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinStat {
    /// Smallest and largest target in the bin.
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub signed_tre: f64,
    pub mean_kappa: Option<f64>,
}

/// Equal-frequency bins over ascending targets (ties by row index), with
/// tied targets kept in one bin; empty bins are dropped, so fewer than
/// `bins` rows may come back.
pub fn binned_stre(pairs: &[EvalPair], kappas: Option<&[f64]>, bins: usize) -> Result<Vec<BinStat>, MetricError> {
    check(pairs)?;
    if let Some(k) = kappas {
        if k.len() != pairs.len() {
            return Err(MetricError::KappaLength { got: k.len(), want: pairs.len() });
        }
    }
    let n = pairs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| pairs[a].target.total_cmp(&pairs[b].target).then(a.cmp(&b)));
    let distinct = 1 + order.windows(2).filter(|w| pairs[w[0]].target != pairs[w[1]].target).count();
    if bins == 0 || bins > distinct {
        return Err(MetricError::TooManyBins { bins, distinct });
    }

    let mut out = Vec::with_capacity(bins);
    let mut start = 0;
    for b in 1..=bins {
        let mut end = (b * n / bins).max(start);
        while end < n && end > 0 && pairs[order[end]].target == pairs[order[end - 1]].target {
            end += 1;
        }
        if end <= start {
            continue;
        }
        let idx = &order[start..end];
        let members: Vec<EvalPair> = idx.iter().map(|&i| pairs[i]).collect();
        out.push(BinStat {
            lo: members[0].target,
            hi: members[members.len() - 1].target,
            count: members.len(),
            signed_tre: signed_tre(&members)?,
            mean_kappa: kappas.map(|k| idx.iter().map(|&i| k[i]).sum::<f64>() / idx.len() as f64),
        });
        start = end;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaStats {
    /// `Var(kappa * y)`.
    pub variance: f64,
    /// `Var(kappa * y) / E[kappa * y]^2`.
    pub normalized_variance: f64,
}

/// Spread of the linear-transformation target `kappa * y`.
pub fn kappa_stats(pairs: &[EvalPair], kappas: &[f64]) -> Result<KappaStats, MetricError> {
    check(pairs)?;
    if kappas.len() != pairs.len() {
        return Err(MetricError::KappaLength { got: kappas.len(), want: pairs.len() });
    }
    let n = pairs.len() as f64;
    let ky: Vec<f64> = pairs.iter().zip(kappas).map(|(p, k)| k * p.target).collect();
    let m = ky.iter().sum::<f64>() / n;
    let variance = ky.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    Ok(KappaStats { variance, normalized_variance: variance / (m * m) })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Known population mean for scalar tasks; enables SRE.
    pub truth: Option<f64>,
    /// Equal-frequency bins for the binned diagnostic; 0 skips it.
    pub bins: usize,
    pub xauc: XaucOptions,
}

/// Every metric on one prediction set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    /// SRE of the mean prediction against `truth`.
    pub sre: Option<f64>,
    pub tre: f64,
    pub signed_tre: f64,
    pub mre: f64,
    pub nrmse: f64,
    pub nmae: f64,
    /// Absent when all targets coincide.
    pub xauc: Option<Xauc>,
    pub pgr: f64,
    pub binned: Vec<BinStat>,
    pub kappa_stats: Option<KappaStats>,
}

impl EvalReport {
    /// Scalar metrics by name, in a fixed order.
    pub fn scalars(&self) -> Vec<(&'static str, f64)> {
        let mut v = Vec::with_capacity(9);
        if let Some(s) = self.sre {
            v.push(("sre", s));
        }
        v.extend([
            ("tre", self.tre),
            ("signed_tre", self.signed_tre),
            ("mre", self.mre),
            ("nrmse", self.nrmse),
            ("nmae", self.nmae),
        ]);
        if let Some(x) = self.xauc {
            v.push(("xauc", x.value));
        }
        v.push(("pgr", self.pgr));
        if let Some(k) = self.kappa_stats {
            v.push(("kappa_var", k.variance));
            v.push(("kappa_var_normalized", k.normalized_variance));
        }
        v
    }
}

pub fn evaluate(pairs: &[EvalPair], kappas: Option<&[f64]>, opts: &EvalOptions) -> Result<EvalReport, MetricError> {
    check(pairs)?;
    let mean_pred = pairs.iter().map(|p| p.prediction).sum::<f64>() / pairs.len() as f64;
    let xauc = match xauc(pairs, &opts.xauc) {
        Ok(x) => Some(x),
        Err(MetricError::AllTargetsEqual | MetricError::TooFewPairs(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(EvalReport {
        n: pairs.len(),
        sre: opts.truth.map(|t| sre(mean_pred, t)).transpose()?,
        tre: tre(pairs)?,
        signed_tre: signed_tre(pairs)?,
        mre: mre(pairs)?,
        nrmse: nrmse(pairs)?,
        nmae: nmae(pairs)?,
        xauc,
        pgr: pgr(pairs)?,
        binned: if opts.bins > 0 { binned_stre(pairs, kappas, opts.bins)? } else { Vec::new() },
        kappa_stats: kappas.map(|k| kappa_stats(pairs, k)).transpose()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ps(pred: &[f64], y: &[f64]) -> Vec<EvalPair> {
        pairs(pred, y)
    }

    fn exact(p: &[EvalPair]) -> f64 {
        xauc(p, &XaucOptions::default()).unwrap().value
    }

    #[test]
    fn sre_examples() {
        assert_eq!(sre(2.0, 2.0).unwrap(), 0.0);
        assert_eq!(sre(3.0, 2.0).unwrap(), 0.5);
        assert!((sre(1.7183, 2.0).unwrap() + 0.14085).abs() < 1e-4);
        assert_eq!(sre(1.0, 0.0), Err(MetricError::ZeroTruth));
    }

    #[test]
    fn ratio_examples() {
        let p = ps(&[2.0, 4.0], &[1.0, 3.0]);
        assert!((tre(&p).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((signed_tre(&p).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((mre(&p).unwrap() - 0.375).abs() < 1e-15);
        assert!((nrmse(&p).unwrap() - 2f64.sqrt() / 4.0).abs() < 1e-15);
        assert!((nmae(&p).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(mre(&ps(&[2.0], &[1.0])).unwrap(), 0.5);
        assert_eq!(tre(&ps(&[1.0, -1.0], &[1.0, 2.0])), Err(MetricError::ZeroPredictionSum));
        assert!(matches!(mre(&ps(&[1.0, 0.0], &[1.0, 2.0])), Err(MetricError::ZeroPrediction { index: 1, .. })));
    }

    #[test]
    fn perfect_fit_is_zero() {
        let y = [0.5, 3.0, 9.0, 1.0];
        let p = ps(&y, &y);
        for m in [tre, mre, nrmse, nmae] {
            assert_eq!(m(&p).unwrap(), 0.0);
        }
        assert_eq!(pgr(&p).unwrap(), 1.0);
        let scaled: Vec<f64> = y.iter().map(|v| 0.9 * v).collect();
        assert!((pgr(&ps(&scaled, &y)).unwrap() - 0.9).abs() < 1e-15);
    }

    #[test]
    fn xauc_examples() {
        assert_eq!(exact(&ps(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0])), 1.0);
        assert_eq!(exact(&ps(&[3.0, 2.0, 1.0], &[1.0, 2.0, 3.0])), 0.0);
        assert!((exact(&ps(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0])) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(exact(&ps(&[5.0, 5.0], &[1.0, 2.0])), 0.5);
        assert_eq!(xauc(&ps(&[1.0, 2.0], &[3.0, 3.0]), &XaucOptions::default()), Err(MetricError::AllTargetsEqual));
        assert_eq!(xauc(&ps(&[1.0], &[3.0]), &XaucOptions::default()), Err(MetricError::TooFewPairs(1)));
    }

    fn brute(p: &[EvalPair], weighted: bool) -> f64 {
        let (mut good, mut total) = (0.0, 0.0);
        for i in 0..p.len() {
            for j in 0..i {
                let dy = p[i].target - p[j].target;
                if dy == 0.0 {
                    continue;
                }
                let w = if weighted { dy.abs() } else { 1.0 };
                let dp = p[i].prediction - p[j].prediction;
                total += w;
                good += w * if dp == 0.0 { 0.5 } else if (dp > 0.0) == (dy > 0.0) { 1.0 } else { 0.0 };
            }
        }
        good / total
    }

    #[test]
    fn xauc_matches_pair_enumeration() {
        let mut rng = RngStream::new(8);
        for trial in 0..30 {
            let n = 2 + trial * 3;
            let p: Vec<EvalPair> = (0..n)
                .map(|_| EvalPair::new(rng.below(6) as f64, rng.below(5) as f64))
                .collect();
            if p.iter().all(|q| q.target == p[0].target) {
                continue;
            }
            for weighted in [false, true] {
                let got = xauc_exact(&p, weighted);
                assert!((got - brute(&p, weighted)).abs() < 1e-12, "n={n} weighted={weighted}");
            }
        }
    }

    #[test]
    fn binned_single_bin_is_global() {
        let p = ps(&[1.0, 2.5, 2.0, 7.0], &[1.5, 2.0, 3.0, 4.0]);
        let b = binned_stre(&p, None, 1).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].signed_tre, signed_tre(&p).unwrap());
        assert_eq!(b[0].count, 4);
    }

    #[test]
    fn binning_groups_ties() {
        let y = [1.0, 1.0, 1.0, 2.0, 3.0, 4.0];
        let p = ps(&y, &y);
        let b = binned_stre(&p, Some(&[1.0; 6]), 3).unwrap();
        assert_eq!(b.iter().map(|s| s.count).collect::<Vec<_>>(), vec![3, 1, 2]);
        assert!(b.iter().all(|s| s.signed_tre == 0.0 && s.mean_kappa == Some(1.0)));
        assert!(matches!(binned_stre(&p, None, 5), Err(MetricError::TooManyBins { distinct: 4, .. })));
    }

    #[test]
    fn kappa_stats_constant_target() {
        let p = ps(&[1.0, 1.0], &[2.0, 2.0]);
        let k = kappa_stats(&p, &[0.5, 0.5]).unwrap();
        assert_eq!(k.variance, 0.0);
        let k = kappa_stats(&p, &[1.0, 0.5]).unwrap();
        assert!((k.variance - 0.25).abs() < 1e-15);
        assert!((k.normalized_variance - 0.25 / 2.25).abs() < 1e-15);
    }

    #[test]
    fn evaluate_collects_everything() {
        let p = ps(&[2.0, 4.0], &[1.0, 3.0]);
        let r = evaluate(&p, None, &EvalOptions { truth: Some(2.0), bins: 2, ..EvalOptions::default() }).unwrap();
        assert_eq!(r.sre, Some(0.5));
        assert_eq!(r.binned.len(), 2);
        assert_eq!(r.scalars()[0], ("sre", 0.5));
    }
}
