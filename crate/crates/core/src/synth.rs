//! The eight synthetic target distributions (right-skewed, left-skewed and
//! symmetric), their samplers and analytic moments.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use statrs::distribution::{Beta as StatBeta, Continuous, ContinuousCDF, Gamma as StatGamma};
use statrs::function::erf::erfc;

use crate::rng::RngStream;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown distribution `{0}` (expected one of RS-G, RS-BU, RS-ZIG, LS-B, LS-BU, SM-U, SM-TN, SM-BU)")]
pub struct UnknownDistribution(pub String);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DistributionSpec {
    #[serde(rename = "RS-G")]
    RsG,
    #[serde(rename = "RS-BU")]
    RsBu,
    #[serde(rename = "RS-ZIG")]
    RsZig,
    #[serde(rename = "LS-B")]
    LsB,
    #[serde(rename = "LS-BU")]
    LsBu,
    #[serde(rename = "SM-U")]
    SmU,
    #[serde(rename = "SM-TN")]
    SmTn,
    #[serde(rename = "SM-BU")]
    SmBu,
}

pub const ZERO_INFLATE_RATIO: f64 = 0.8;
const GAMMA_SHAPE: f64 = 2.0;
const GAMMA_SCALE: f64 = 1.0;
const BETA_A: f64 = 3.0;
const BETA_B: f64 = 1.5;
const TN_LOC: f64 = 50.0;
const TN_SCALE: f64 = 10.0;

/// One continuous or atomic piece of a mixture.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Component {
    PointMass(f64),
    Gamma { shape: f64, scale: f64 },
    Beta { a: f64, b: f64 },
    Uniform { lo: f64, hi: f64 },
    /// Normal(loc, scale) restricted to `[lo, hi]`.
    TruncNormal { loc: f64, scale: f64, lo: f64, hi: f64 },
}

impl DistributionSpec {
    pub const ALL: [DistributionSpec; 8] = [
        DistributionSpec::RsG,
        DistributionSpec::RsBu,
        DistributionSpec::RsZig,
        DistributionSpec::LsB,
        DistributionSpec::LsBu,
        DistributionSpec::SmU,
        DistributionSpec::SmTn,
        DistributionSpec::SmBu,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            DistributionSpec::RsG => "RS-G",
            DistributionSpec::RsBu => "RS-BU",
            DistributionSpec::RsZig => "RS-ZIG",
            DistributionSpec::LsB => "LS-B",
            DistributionSpec::LsBu => "LS-BU",
            DistributionSpec::SmU => "SM-U",
            DistributionSpec::SmTn => "SM-TN",
            DistributionSpec::SmBu => "SM-BU",
        }
    }

    /// Weighted pieces whose mixture is the distribution.
    pub fn components(&self) -> Vec<(f64, Component)> {
        let gamma = Component::Gamma { shape: GAMMA_SHAPE, scale: GAMMA_SCALE };
        let low = Component::Uniform { lo: 1.0, hi: 11.0 };
        let high = Component::Uniform { lo: 90.0, hi: 100.0 };
        match self {
            DistributionSpec::RsG => vec![(1.0, gamma)],
            DistributionSpec::RsBu => vec![(0.9, low), (0.1, high)],
            DistributionSpec::RsZig => vec![
                (ZERO_INFLATE_RATIO, Component::PointMass(0.0)),
                (1.0 - ZERO_INFLATE_RATIO, gamma),
            ],
            DistributionSpec::LsB => vec![(1.0, Component::Beta { a: BETA_A, b: BETA_B })],
            DistributionSpec::LsBu => vec![(0.1, low), (0.9, high)],
            DistributionSpec::SmU => vec![(1.0, Component::Uniform { lo: 0.0, hi: 100.0 })],
            DistributionSpec::SmTn => vec![(
                1.0,
                Component::TruncNormal { loc: TN_LOC, scale: TN_SCALE, lo: 0.0, hi: 100.0 },
            )],
            DistributionSpec::SmBu => vec![(0.5, low), (0.5, high)],
        }
    }

    /// Analytic mean.
    pub fn true_mean(&self) -> f64 {
        match self {
            DistributionSpec::RsG => GAMMA_SHAPE * GAMMA_SCALE,
            DistributionSpec::RsBu => 0.9 * 6.0 + 0.1 * 95.0,
            DistributionSpec::RsZig => GAMMA_SHAPE * GAMMA_SCALE * (1.0 - ZERO_INFLATE_RATIO),
            DistributionSpec::LsB => BETA_A / (BETA_A + BETA_B),
            DistributionSpec::LsBu => 0.1 * 6.0 + 0.9 * 95.0,
            DistributionSpec::SmU => 50.0,
            DistributionSpec::SmTn => TN_LOC,
            DistributionSpec::SmBu => 0.5 * 6.0 + 0.5 * 95.0,
        }
    }

    /// Analytic variance.
    pub fn true_variance(&self) -> f64 {
        let second: f64 = self.components().iter().map(|(w, c)| w * c.second_moment()).sum();
        let m = self.true_mean();
        second - m * m
    }

    /// Whether `y` lies in the support.
    pub fn in_support(&self, y: f64) -> bool {
        self.components().iter().any(|(_, c)| c.in_support(y))
    }

    /// `n` independent draws.
    pub fn sample(&self, n: usize, rng: &mut RngStream) -> Vec<f64> {
        match self {
            DistributionSpec::RsG => (0..n).map(|_| rng.gamma(GAMMA_SHAPE, GAMMA_SCALE)).collect(),
            DistributionSpec::RsZig => (0..n)
                .map(|_| {
                    let g = rng.gamma(GAMMA_SHAPE, GAMMA_SCALE);
                    if rng.uniform() < ZERO_INFLATE_RATIO {
                        0.0
                    } else {
                        g
                    }
                })
                .collect(),
            DistributionSpec::LsB => (0..n).map(|_| rng.beta(BETA_A, BETA_B)).collect(),
            DistributionSpec::SmU => (0..n).map(|_| rng.uniform_in(0.0, 100.0)).collect(),
            DistributionSpec::SmTn => (0..n)
                .map(|_| rng.truncated_normal(TN_LOC, TN_SCALE, 0.0, 100.0))
                .collect(),
            DistributionSpec::RsBu => bi_uniform(n, 0.9, rng),
            DistributionSpec::LsBu => bi_uniform(n, 0.1, rng),
            DistributionSpec::SmBu => bi_uniform(n, 0.5, rng),
        }
    }

    pub fn moment_check(&self, n: usize, rng: &mut RngStream) -> MomentReport {
        let ys = self.sample(n, rng);
        MomentReport::new(*self, &ys)
    }
}

/// Exact split `floor(n * low_share)` / remainder between `U[1, 11)` and
/// `U[90, 100)`, concatenated and then shuffled.
fn bi_uniform(n: usize, low_share: f64, rng: &mut RngStream) -> Vec<f64> {
    let n_low = (n as f64 * low_share).floor() as usize;
    let mut out = Vec::with_capacity(n);
    out.extend((0..n_low).map(|_| rng.uniform_in(1.0, 11.0)));
    out.extend((n_low..n).map(|_| rng.uniform_in(90.0, 100.0)));
    rng.shuffle(&mut out);
    out
}

impl Component {
    pub fn mean(&self) -> f64 {
        match *self {
            Component::PointMass(v) => v,
            Component::Gamma { shape, scale } => shape * scale,
            Component::Beta { a, b } => a / (a + b),
            Component::Uniform { lo, hi } => 0.5 * (lo + hi),
            Component::TruncNormal { loc, scale, lo, hi } => {
                let (a, b) = ((lo - loc) / scale, (hi - loc) / scale);
                let z = normal_cdf(b) - normal_cdf(a);
                loc + scale * (normal_pdf(a) - normal_pdf(b)) / z
            }
        }
    }

    pub fn second_moment(&self) -> f64 {
        match *self {
            Component::PointMass(v) => v * v,
            Component::Gamma { shape, scale } => shape * (shape + 1.0) * scale * scale,
            Component::Beta { a, b } => a * (a + 1.0) / ((a + b) * (a + b + 1.0)),
            Component::Uniform { lo, hi } => (hi.powi(3) - lo.powi(3)) / (3.0 * (hi - lo)),
            Component::TruncNormal { loc, scale, lo, hi } => {
                let (a, b) = ((lo - loc) / scale, (hi - loc) / scale);
                let z = normal_cdf(b) - normal_cdf(a);
                let m = self.mean();
                let var = scale
                    * scale
                    * (1.0 + (a * normal_pdf(a) - b * normal_pdf(b)) / z
                        - ((normal_pdf(a) - normal_pdf(b)) / z).powi(2));
                var + m * m
            }
        }
    }

    /// Density of a continuous piece at `y`; `None` for a point mass.
    pub fn density(&self, y: f64) -> Option<f64> {
        let d = match *self {
            Component::PointMass(_) => return None,
            Component::Gamma { shape, scale } => {
                StatGamma::new(shape, 1.0 / scale).expect("valid gamma").pdf(y)
            }
            Component::Beta { a, b } => {
                if (0.0..=1.0).contains(&y) {
                    StatBeta::new(a, b).expect("valid beta").pdf(y)
                } else {
                    0.0
                }
            }
            Component::Uniform { lo, hi } => {
                if (lo..=hi).contains(&y) {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
            Component::TruncNormal { loc, scale, lo, hi } => {
                if (lo..=hi).contains(&y) {
                    let z = normal_cdf((hi - loc) / scale) - normal_cdf((lo - loc) / scale);
                    normal_pdf((y - loc) / scale) / (scale * z)
                } else {
                    0.0
                }
            }
        };
        Some(d)
    }

    /// Interval holding all but less than `1e-12` of the piece's mass.
    pub fn effective_support(&self) -> (f64, f64) {
        match *self {
            Component::PointMass(v) => (v, v),
            Component::Gamma { shape, scale } => {
                let dist = StatGamma::new(shape, 1.0 / scale).expect("valid gamma");
                let mut hi = shape * scale;
                while dist.sf(hi) >= 1e-12 {
                    hi *= 1.5;
                }
                (0.0, hi)
            }
            Component::Beta { .. } => (0.0, 1.0),
            Component::Uniform { lo, hi } | Component::TruncNormal { lo, hi, .. } => (lo, hi),
        }
    }

    pub fn in_support(&self, y: f64) -> bool {
        match *self {
            Component::PointMass(v) => y == v,
            Component::Gamma { .. } => y > 0.0 && y.is_finite(),
            Component::Beta { .. } => (0.0..=1.0).contains(&y),
            Component::Uniform { lo, hi } => (lo..=hi).contains(&y),
            Component::TruncNormal { lo, hi, .. } => (lo..=hi).contains(&y),
        }
    }
}

pub(crate) fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub(crate) fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

impl fmt::Display for DistributionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for DistributionSpec {
    type Err = UnknownDistribution;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DistributionSpec::ALL
            .into_iter()
            .find(|d| d.id() == s.trim())
            .ok_or_else(|| UnknownDistribution(s.to_string()))
    }
}

/// Sample moments against the analytic ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub distribution: DistributionSpec,
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub true_mean: f64,
    pub standard_error: f64,
    /// `|mean - true_mean| <= 4 * standard_error`.
    pub within_tolerance: bool,
}

impl MomentReport {
    pub fn new(distribution: DistributionSpec, ys: &[f64]) -> Self {
        let n = ys.len();
        let nf = n as f64;
        let mean = ys.iter().sum::<f64>() / nf;
        let (m2, m3) = ys.iter().fold((0.0, 0.0), |(a, b), &y| {
            let d = y - mean;
            (a + d * d, b + d * d * d)
        });
        let variance = m2 / nf;
        let skewness = if variance > 0.0 { (m3 / nf) / variance.powf(1.5) } else { 0.0 };
        let true_mean = distribution.true_mean();
        let standard_error = (distribution.true_variance() / nf).sqrt();
        MomentReport {
            distribution,
            n,
            mean,
            variance,
            skewness,
            true_mean,
            standard_error,
            within_tolerance: (mean - true_mean).abs() <= 4.0 * standard_error,
        }
    }
}
