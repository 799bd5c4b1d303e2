//! Bijective target transforms and their inverses.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::ad::{Tape, Var, TAN_LIMIT};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("{transform}: value {value} is outside the domain")]
    OutOfDomain { transform: TargetTransform, value: f64 },
    #[error("{transform}: value {value} is outside the range")]
    OutOfRange { transform: TargetTransform, value: f64 },
    #[error("unknown transform `{0}`")]
    Unknown(String),
    #[error("linear transform needs a non-zero finite slope, got {0}")]
    BadSlope(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TargetTransform {
    Identity,
    /// `T(y) = slope * y`.
    Linear { slope: f64 },
    /// `T(y) = ln(1 + y)`.
    Log1p,
    Sqrt,
    /// Restricted to `y >= 0` so that it stays invertible.
    Square,
    Arctan,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Curvature {
    Convex,
    Concave,
    Affine,
}

impl TargetTransform {
    pub fn linear(slope: f64) -> Result<Self, TransformError> {
        if slope == 0.0 || !slope.is_finite() {
            return Err(TransformError::BadSlope(slope));
        }
        Ok(TargetTransform::Linear { slope })
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            TargetTransform::Identity => "identity",
            TargetTransform::Linear { .. } => "linear",
            TargetTransform::Log1p => "log1p",
            TargetTransform::Sqrt => "sqrt",
            TargetTransform::Square => "square",
            TargetTransform::Arctan => "arctan",
        }
    }

    pub fn in_domain(&self, y: f64) -> bool {
        match self {
            TargetTransform::Identity | TargetTransform::Linear { .. } => y.is_finite(),
            _ => y.is_finite() && y >= 0.0,
        }
    }

    pub fn apply(&self, y: f64) -> Result<f64, TransformError> {
        if !self.in_domain(y) {
            return Err(TransformError::OutOfDomain { transform: *self, value: y });
        }
        Ok(match *self {
            TargetTransform::Identity => y,
            TargetTransform::Linear { slope } => slope * y,
            TargetTransform::Log1p => y.ln_1p(),
            TargetTransform::Sqrt => y.sqrt(),
            TargetTransform::Square => y * y,
            TargetTransform::Arctan => y.atan(),
        })
    }

    pub fn in_range(&self, u: f64) -> bool {
        match self {
            TargetTransform::Identity | TargetTransform::Linear { .. } => u.is_finite(),
            TargetTransform::Log1p | TargetTransform::Sqrt | TargetTransform::Square => {
                u.is_finite() && u >= 0.0
            }
            TargetTransform::Arctan => (0.0..TAN_LIMIT).contains(&u),
        }
    }

    /// Two-sided inverse on the transform's range.
    pub fn invert(&self, u: f64) -> Result<f64, TransformError> {
        if !self.in_range(u) {
            return Err(TransformError::OutOfRange { transform: *self, value: u });
        }
        Ok(self.invert_extended(u))
    }

    /// Natural continuation of the inverse to the whole real line: `exp(u) - 1`
    /// and `u^2` as written, the odd extension `sign(u) sqrt(|u|)` for square,
    /// and `tan` with its argument clamped to `(-pi/2, pi/2)` for arctan.
    ///
    /// Model outputs are unconstrained reals, so training slopes and
    /// predictions go through this rather than [`TargetTransform::invert`].
    pub fn invert_extended(&self, u: f64) -> f64 {
        match *self {
            TargetTransform::Identity => u,
            TargetTransform::Linear { slope } => u / slope,
            TargetTransform::Log1p => u.exp_m1(),
            TargetTransform::Sqrt => u * u,
            TargetTransform::Square => u.signum() * u.abs().sqrt(),
            TargetTransform::Arctan => u.clamp(-TAN_LIMIT, TAN_LIMIT).tan(),
        }
    }

    /// Records `|T^-1(u)|` (extended inverse) on a tape.
    pub fn abs_inverse_on_tape(&self, tape: &mut Tape, u: Var) -> Var {
        match *self {
            TargetTransform::Identity => tape.abs(u),
            TargetTransform::Linear { slope } => {
                let a = tape.abs(u);
                let k = tape.constant(1.0 / slope.abs());
                tape.mul(a, k)
            }
            TargetTransform::Log1p => {
                let e = tape.exp(u);
                let one = tape.constant(1.0);
                let d = tape.sub(e, one);
                tape.abs(d)
            }
            TargetTransform::Sqrt => tape.square(u),
            TargetTransform::Square => {
                let a = tape.abs(u);
                tape.sqrt(a)
            }
            TargetTransform::Arctan => {
                let a = tape.abs(u);
                let lim = tape.constant(TAN_LIMIT);
                let c = tape.min(a, lim);
                tape.tan(c)
            }
        }
    }

    /// Records the extended inverse `T^-1(u)` on a tape.
    pub fn inverse_on_tape(&self, tape: &mut Tape, u: Var) -> Var {
        match *self {
            TargetTransform::Identity => u,
            TargetTransform::Linear { slope } => {
                let k = tape.constant(1.0 / slope);
                tape.mul(u, k)
            }
            TargetTransform::Log1p => {
                let e = tape.exp(u);
                let one = tape.constant(1.0);
                tape.sub(e, one)
            }
            TargetTransform::Sqrt => tape.square(u),
            TargetTransform::Square => {
                // sign(u) * sqrt(|u|) == u / sqrt(|u|), and 0 at u = 0
                let a = tape.abs(u);
                let r = tape.sqrt(a);
                let tiny = tape.constant(f64::MIN_POSITIVE);
                let d = tape.max(r, tiny);
                tape.div(u, d)
            }
            TargetTransform::Arctan => {
                let lim = tape.constant(TAN_LIMIT);
                let nlim = tape.constant(-TAN_LIMIT);
                let hi = tape.min(u, lim);
                let c = tape.max(hi, nlim);
                tape.tan(c)
            }
        }
    }

    /// Curvature of `T^-1` on the transform's range.
    pub fn convexity_of_inverse(&self) -> Curvature {
        match self {
            TargetTransform::Identity | TargetTransform::Linear { .. } => Curvature::Affine,
            TargetTransform::Log1p | TargetTransform::Sqrt | TargetTransform::Arctan => Curvature::Convex,
            TargetTransform::Square => Curvature::Concave,
        }
    }
}

impl fmt::Display for TargetTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetTransform::Linear { slope } => write!(f, "linear({slope})"),
            other => f.write_str(other.kind_name()),
        }
    }
}

impl FromStr for TargetTransform {
    type Err = TransformError;

    /// Accepts the bare kind names; `linear` takes its slope as `linear(0.5)`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        Ok(match s {
            "identity" => TargetTransform::Identity,
            "log1p" => TargetTransform::Log1p,
            "sqrt" => TargetTransform::Sqrt,
            "square" => TargetTransform::Square,
            "arctan" => TargetTransform::Arctan,
            _ => {
                let slope = s
                    .strip_prefix("linear(")
                    .and_then(|r| r.strip_suffix(')'))
                    .and_then(|v| v.trim().parse::<f64>().ok())
                    .ok_or_else(|| TransformError::Unknown(s.to_string()))?;
                TargetTransform::linear(slope)?
            }
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum TransformRepr {
    Name(String),
    Table { kind: String, slope: Option<f64> },
}

impl Serialize for TargetTransform {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match *self {
            TargetTransform::Linear { slope } => TransformRepr::Table {
                kind: "linear".into(),
                slope: Some(slope),
            }
            .serialize(s),
            other => other.kind_name().serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for TargetTransform {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        match TransformRepr::deserialize(d)? {
            TransformRepr::Name(s) => s.parse().map_err(D::Error::custom),
            TransformRepr::Table { kind, slope } => match (kind.as_str(), slope) {
                ("linear", Some(a)) => TargetTransform::linear(a).map_err(D::Error::custom),
                ("linear", None) => Err(D::Error::custom("linear transform requires `slope`")),
                (other, None) => other.parse().map_err(D::Error::custom),
                (other, Some(_)) => Err(D::Error::custom(format!("`{other}` takes no slope"))),
            },
        }
    }
}
