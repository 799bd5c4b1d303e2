//! Per-sample loss builders.
//!
//! Every builder records one scalar loss on a [`Tape`] from the branch
//! outputs `f` (point branch) and `z` (bias branch). Slope and ratio targets
//! are wrapped in `stop_grad`, so the bias-learning term only ever trains
//! the `z` branch.

use serde::{Deserialize, Serialize};

use crate::ad::{Tape, Var};
use crate::transform::{TargetTransform, TransformError};

/// Denominator guard for MSPE/MAPE and the S1 ratio; distinct from the
/// user-facing `epsilon`.
pub const DELTA: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PointLoss {
    #[default]
    Mse,
    Mae,
    Mspe,
    Mape,
}

impl PointLoss {
    pub const ALL: [PointLoss; 4] = [PointLoss::Mse, PointLoss::Mae, PointLoss::Mspe, PointLoss::Mape];

    pub fn name(&self) -> &'static str {
        match self {
            PointLoss::Mse => "mse",
            PointLoss::Mae => "mae",
            PointLoss::Mspe => "mspe",
            PointLoss::Mape => "mape",
        }
    }

    pub fn value(&self, f: f64, target: f64) -> f64 {
        let d = f - target;
        match self {
            PointLoss::Mse => d * d,
            PointLoss::Mae => d.abs(),
            PointLoss::Mspe => (d / (target.abs() + DELTA)).powi(2),
            PointLoss::Mape => d.abs() / (target.abs() + DELTA),
        }
    }
}

/// The positive slope function of the linear-transformation term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KappaKind {
    /// `1 / (|T^-1(u)| + eps)`
    #[default]
    InvAbsInverse,
    /// `1 / (|u| + eps)`
    InvAbs,
    /// `max(|u|, eps)`
    Abs,
}

impl KappaKind {
    pub const ALL: [KappaKind; 3] = [KappaKind::InvAbsInverse, KappaKind::InvAbs, KappaKind::Abs];

    pub fn name(&self) -> &'static str {
        match self {
            KappaKind::InvAbsInverse => "inv_abs_inverse",
            KappaKind::InvAbs => "inv_abs",
            KappaKind::Abs => "abs",
        }
    }

    pub fn value(&self, u: f64, t: &TargetTransform, eps: f64) -> f64 {
        match self {
            KappaKind::InvAbsInverse => 1.0 / (t.invert_extended(u).abs() + eps),
            KappaKind::InvAbs => 1.0 / (u.abs() + eps),
            KappaKind::Abs => u.abs().max(eps),
        }
    }

    /// Records `kappa(u)` (without a barrier).
    pub fn on_tape(&self, tape: &mut Tape, u: Var, t: &TargetTransform, eps: f64) -> Var {
        let e = tape.constant(eps);
        match self {
            KappaKind::InvAbsInverse => {
                let a = t.abs_inverse_on_tape(tape, u);
                let d = tape.add(a, e);
                let one = tape.constant(1.0);
                tape.div(one, d)
            }
            KappaKind::InvAbs => {
                let a = tape.abs(u);
                let d = tape.add(a, e);
                let one = tape.constant(1.0);
                tape.div(one, d)
            }
            KappaKind::Abs => {
                let a = tape.abs(u);
                tape.max(a, e)
            }
        }
    }
}

/// Bias-modelling targets for the auxiliary branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasScheme {
    /// additive: `y - T^-1(f)`
    S0,
    /// inverted ratio: `T^-1(f) / y`
    S1,
    /// multiplicative ratio: `y / (|T^-1(f)| + eps)`
    S2,
}

/// `point(f, target)`.
pub fn point_loss(tape: &mut Tape, f: Var, target: f64, kind: PointLoss) -> Var {
    let t = tape.constant(target);
    let d = tape.sub(f, t);
    match kind {
        PointLoss::Mse => tape.square(d),
        PointLoss::Mae => tape.abs(d),
        PointLoss::Mspe => {
            let s = tape.constant(1.0 / (target.abs() + DELTA));
            let r = tape.mul(d, s);
            tape.square(r)
        }
        PointLoss::Mape => {
            let s = tape.constant(1.0 / (target.abs() + DELTA));
            let a = tape.abs(d);
            tape.mul(a, s)
        }
    }
}

/// `(f - T(y))^2`.
pub fn tmse_loss(tape: &mut Tape, f: Var, y: f64, t: &TargetTransform) -> Result<Var, TransformError> {
    let ty = t.apply(y)?;
    Ok(point_loss(tape, f, ty, PointLoss::Mse))
}

fn squared_gap(tape: &mut Tape, z: Var, target: Var) -> Var {
    let d = tape.sub(z, target);
    tape.square(d)
}

/// `(z - stop_grad[y / (|T^-1(f)| + eps)])^2`.
pub fn transun_bias_loss(tape: &mut Tape, z: Var, f: Var, y: f64, t: &TargetTransform, eps: f64) -> Var {
    let a = t.abs_inverse_on_tape(tape, f);
    let e = tape.constant(eps);
    let den = tape.add(a, e);
    let yv = tape.constant(y);
    let ratio = tape.div(yv, den);
    let target = tape.stop_grad(ratio);
    squared_gap(tape, z, target)
}

/// Transformed MSE plus the bias-learning term.
pub fn transun_total_loss(
    tape: &mut Tape,
    f: Var,
    z: Var,
    y: f64,
    t: &TargetTransform,
    eps: f64,
) -> Result<Var, TransformError> {
    let main = tmse_loss(tape, f, y, t)?;
    let bias = transun_bias_loss(tape, z, f, y, t, eps);
    Ok(tape.add(main, bias))
}

/// `point(f, T(y)) + (z - y * stop_grad[kappa(f)])^2`.
pub fn gts_loss(
    tape: &mut Tape,
    f: Var,
    z: Var,
    y: f64,
    t: &TargetTransform,
    point: PointLoss,
    kappa: KappaKind,
    eps: f64,
) -> Result<Var, TransformError> {
    let ty = t.apply(y)?;
    let main = point_loss(tape, f, ty, point);
    let k = kappa.on_tape(tape, f, t, eps);
    let k = tape.stop_grad(k);
    let yv = tape.constant(y);
    let target = tape.mul(yv, k);
    let lin = squared_gap(tape, z, target);
    Ok(tape.add(main, lin))
}

/// Bias-learning term of the alternative schemes (S2 is the TranSUN term).
pub fn scheme_loss(
    tape: &mut Tape,
    z: Var,
    f: Var,
    y: f64,
    t: &TargetTransform,
    scheme: BiasScheme,
    eps: f64,
) -> Var {
    match scheme {
        BiasScheme::S2 => transun_bias_loss(tape, z, f, y, t, eps),
        BiasScheme::S0 => {
            let inv = t.inverse_on_tape(tape, f);
            let yv = tape.constant(y);
            let gap = tape.sub(yv, inv);
            let target = tape.stop_grad(gap);
            squared_gap(tape, z, target)
        }
        BiasScheme::S1 => {
            let inv = t.inverse_on_tape(tape, f);
            let s = tape.constant(1.0 / guarded(y));
            let r = tape.mul(inv, s);
            let target = tape.stop_grad(r);
            squared_gap(tape, z, target)
        }
    }
}

/// `y` with magnitude at least [`DELTA`], keeping its sign (zero maps to
/// `+DELTA`).
pub fn guarded(y: f64) -> f64 {
    if y.abs() >= DELTA {
        y
    } else if y < 0.0 {
        -DELTA
    } else {
        DELTA
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad::ParamStore;
    use std::f64::consts::E;

    fn eval(build: impl FnOnce(&mut Tape, Var, Var) -> Var, f: f64, z: f64) -> (f64, Vec<f64>) {
        let mut tape = Tape::new();
        let fv = tape.param(0);
        let zv = tape.param(1);
        let l = build(&mut tape, fv, zv);
        tape.forward(&ParamStore::new(vec![f, z]), &[]).unwrap();
        let g = tape.backward(l, 2).unwrap();
        (tape.value(l), g)
    }

    #[test]
    fn tmse_examples() {
        let log = TargetTransform::Log1p;
        let (l, _) = eval(|t, f, _| tmse_loss(t, f, 2.0, &log).unwrap(), 3f64.ln(), 0.0);
        assert!(l.abs() < 1e-15);
        let (l, _) = eval(|t, f, _| tmse_loss(t, f, E - 1.0, &log).unwrap(), 0.0, 0.0);
        assert!((l - 1.0).abs() < 1e-15);
        let lin = TargetTransform::linear(0.5).unwrap();
        let (l, _) = eval(|t, f, _| tmse_loss(t, f, 4.0, &lin).unwrap(), 1.0, 0.0);
        assert_eq!(l, 1.0);
        let mut tape = Tape::new();
        let f = tape.param(0);
        assert!(tmse_loss(&mut tape, f, -3.0, &log).is_err());
    }

    #[test]
    fn bias_loss_examples() {
        let t = TargetTransform::Log1p;
        let (f, y, eps) = (0.7, 3.0, 1.0);
        let z = y / (f64::exp_m1(f).abs() + eps);
        let (l, g) = eval(|tp, fv, zv| transun_bias_loss(tp, zv, fv, y, &t, eps), f, z);
        assert!(l.abs() < 1e-24);
        assert_eq!(g[0], 0.0);
        let (l, g) = eval(|tp, fv, zv| transun_bias_loss(tp, zv, fv, 0.0, &t, eps), 1.2, 0.4);
        assert!((l - 0.16).abs() < 1e-15);
        assert_eq!(g[0], 0.0);
        assert!((g[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn total_is_sum_and_f_gradient_is_tmse_gradient() {
        let t = TargetTransform::Square;
        let (total, g_total) = eval(|tp, f, z| transun_total_loss(tp, f, z, 2.0, &t, 1.0).unwrap(), 3.1, 0.9);
        let (main, g_main) = eval(|tp, f, _| tmse_loss(tp, f, 2.0, &t).unwrap(), 3.1, 0.9);
        let (bias, _) = eval(|tp, f, z| transun_bias_loss(tp, z, f, 2.0, &t, 1.0), 3.1, 0.9);
        assert!((total - (main + bias)).abs() < 1e-12);
        assert_eq!(g_total[0], g_main[0]);
    }

    #[test]
    fn point_loss_examples() {
        assert_eq!(PointLoss::Mse.value(3.0, 1.0), 4.0);
        assert_eq!(PointLoss::Mae.value(3.0, 1.0), 2.0);
        assert!((PointLoss::Mspe.value(2.0, 1.0) - 1.0).abs() < 1e-7);
        assert!((PointLoss::Mape.value(2.0, 1.0) - 1.0).abs() < 1e-7);
        for k in PointLoss::ALL {
            let (l, _) = eval(|tp, f, _| point_loss(tp, f, 1.3, k), 2.4, 0.0);
            assert!((l - k.value(2.4, 1.3)).abs() < 1e-12);
        }
    }

    #[test]
    fn gts_second_term_examples() {
        let t = TargetTransform::Log1p;
        // kappa = abs at f = 1 is 1, so z = y zeroes the second term
        let (l, g) = eval(
            |tp, f, z| gts_loss(tp, f, z, 5.0, &t, PointLoss::Mse, KappaKind::Abs, 1e-3).unwrap(),
            1.0,
            5.0,
        );
        let main = PointLoss::Mse.value(1.0, 6f64.ln());
        assert!((l - main).abs() < 1e-12);
        assert!((g[0] - 2.0 * (1.0 - 6f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn kappa_positive_and_consistent() {
        for k in KappaKind::ALL {
            for t in [TargetTransform::Log1p, TargetTransform::Square, TargetTransform::Sqrt] {
                for u in [-2.0, 0.0, 1e-12, 0.5, 3.0] {
                    let v = k.value(u, &t, 1e-2);
                    assert!(v > 0.0);
                    let mut tape = Tape::new();
                    let x = tape.input(0);
                    let kv = k.on_tape(&mut tape, x, &t, 1e-2);
                    tape.evaluate(&[], &[u]).unwrap();
                    assert!((tape.value(kv) - v).abs() <= 1e-12 * v.max(1.0));
                }
            }
        }
    }

    #[test]
    fn scheme_targets() {
        let t = TargetTransform::Log1p;
        let (f, y) = (1.1, 4.0);
        let inv = f64::exp_m1(f);
        let (l, g) = eval(|tp, fv, zv| scheme_loss(tp, zv, fv, y, &t, BiasScheme::S0, 1.0), f, y - inv);
        assert!(l < 1e-24 && g[0] == 0.0);
        let (l, g) = eval(|tp, fv, zv| scheme_loss(tp, zv, fv, y, &t, BiasScheme::S1, 1.0), f, inv / y);
        assert!(l < 1e-15 && g[0] == 0.0);
        let (a, _) = eval(|tp, fv, zv| scheme_loss(tp, zv, fv, y, &t, BiasScheme::S2, 1.0), f, 0.3);
        let (b, _) = eval(|tp, fv, zv| transun_bias_loss(tp, zv, fv, y, &t, 1.0), f, 0.3);
        assert_eq!(a, b);
    }
}
