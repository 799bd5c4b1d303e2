//! Reverse-mode automatic differentiation over scalar graphs.
//!
//! A [`Tape`] is a recorded program: nodes are appended in topological
//! order through the builder methods, then [`Tape::forward`] evaluates the
//! whole program against a [`ParamStore`] and an input vector, and
//! [`Tape::backward`] accumulates gradients of one scalar node into the
//! parameter gradients. The same tape can be re-evaluated with different
//! parameters or inputs.
//!
//! [`Tape::stop_grad`] is the identity in the forward pass and blocks every
//! gradient path through it in the backward pass.

use std::fmt;

use thiserror::Error;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(u32);

impl Var {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Op {
    Input(u32),
    Param(u32),
    Const(f64),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Abs(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    Square(Var),
    Arctan(Var),
    Tan(Var),
    Max(Var, Var),
    StopGrad(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Param(_) => "param",
            Op::Const(_) => "const",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(_) => "neg",
            Op::Abs(_) => "abs",
            Op::Exp(_) => "exp",
            Op::Ln(_) => "ln",
            Op::Sqrt(_) => "sqrt",
            Op::Square(_) => "square",
            Op::Arctan(_) => "arctan",
            Op::Tan(_) => "tan",
            Op::Max(..) => "max",
            Op::StopGrad(_) => "stop_grad",
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Largest |u| accepted by the `tan` primitive.
pub const TAN_LIMIT: f64 = std::f64::consts::FRAC_PI_2 - 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdError {
    #[error("domain error at node {node} ({op}): argument {value}")]
    Domain { node: usize, op: &'static str, value: f64 },
    #[error("non-finite value at node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },
    #[error("node {node} references {what} index {index} but only {len} are available")]
    BadReference { node: usize, what: &'static str, index: usize, len: usize },
    #[error("backward called before a successful forward pass")]
    NotEvaluated,
    #[error("non-finite gradient for parameter {index}")]
    NonFiniteGradient { index: usize },
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Op>,
    values: Vec<f64>,
    adjoints: Vec<f64>,
    outputs: Vec<Var>,
    evaluated: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Tape {
            nodes: Vec::with_capacity(n),
            ..Default::default()
        }
    }

    /// Drops all nodes while keeping the allocations.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.values.clear();
        self.adjoints.clear();
        self.outputs.clear();
        self.evaluated = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Op] {
        &self.nodes
    }

    fn push(&mut self, op: Op) -> Var {
        self.evaluated = false;
        let id = self.nodes.len();
        self.nodes.push(op);
        Var(id as u32)
    }

    pub fn input(&mut self, index: usize) -> Var {
        self.push(Op::Input(index as u32))
    }
    pub fn param(&mut self, index: usize) -> Var {
        self.push(Op::Param(index as u32))
    }
    pub fn constant(&mut self, value: f64) -> Var {
        self.push(Op::Const(value))
    }
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Add(a, b))
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Sub(a, b))
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Mul(a, b))
    }
    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Div(a, b))
    }
    pub fn neg(&mut self, a: Var) -> Var {
        self.push(Op::Neg(a))
    }
    pub fn abs(&mut self, a: Var) -> Var {
        self.push(Op::Abs(a))
    }
    pub fn exp(&mut self, a: Var) -> Var {
        self.push(Op::Exp(a))
    }
    pub fn ln(&mut self, a: Var) -> Var {
        self.push(Op::Ln(a))
    }
    pub fn sqrt(&mut self, a: Var) -> Var {
        self.push(Op::Sqrt(a))
    }
    pub fn square(&mut self, a: Var) -> Var {
        self.push(Op::Square(a))
    }
    pub fn arctan(&mut self, a: Var) -> Var {
        self.push(Op::Arctan(a))
    }
    pub fn tan(&mut self, a: Var) -> Var {
        self.push(Op::Tan(a))
    }
    pub fn max(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Max(a, b))
    }
    pub fn min(&mut self, a: Var, b: Var) -> Var {
        let na = self.neg(a);
        let nb = self.neg(b);
        let m = self.max(na, nb);
        self.neg(m)
    }
    pub fn stop_grad(&mut self, a: Var) -> Var {
        self.push(Op::StopGrad(a))
    }
    pub fn relu(&mut self, a: Var) -> Var {
        let zero = self.constant(0.0);
        self.max(a, zero)
    }

    /// Sum of `terms`; the empty sum is a constant zero.
    pub fn sum(&mut self, terms: &[Var]) -> Var {
        match terms.split_first() {
            None => self.constant(0.0),
            Some((&first, rest)) => rest.iter().fold(first, |acc, &t| self.add(acc, t)),
        }
    }

    /// Marks `v` as an output; [`Tape::forward`] returns outputs in marking order.
    pub fn mark_output(&mut self, v: Var) {
        self.outputs.push(v);
    }

    /// Value of `v` from the last forward pass.
    pub fn value(&self, v: Var) -> f64 {
        self.values[v.index()]
    }

    fn check_ref(&self, node: usize, v: Var) -> Result<(), AdError> {
        if v.index() < node {
            Ok(())
        } else {
            Err(AdError::BadReference { node, what: "node", index: v.index(), len: node })
        }
    }

    /// Evaluates every node and returns the marked outputs.
    pub fn forward(&mut self, params: &ParamStore, inputs: &[f64]) -> Result<Vec<f64>, AdError> {
        self.evaluate(&params.values, inputs)?;
        Ok(self.outputs.iter().map(|v| self.values[v.index()]).collect())
    }

    /// Forward pass against a raw parameter slice.
    pub fn evaluate(&mut self, params: &[f64], inputs: &[f64]) -> Result<(), AdError> {
        self.evaluated = false;
        self.values.clear();
        self.values.reserve(self.nodes.len());
        for (i, op) in self.nodes.iter().enumerate() {
            let v = match *op {
                Op::Input(k) => *inputs.get(k as usize).ok_or(AdError::BadReference {
                    node: i,
                    what: "input",
                    index: k as usize,
                    len: inputs.len(),
                })?,
                Op::Param(k) => *params.get(k as usize).ok_or(AdError::BadReference {
                    node: i,
                    what: "param",
                    index: k as usize,
                    len: params.len(),
                })?,
                Op::Const(c) => c,
                _ => {
                    self.operand_check(i, op)?;
                    let val = |x: Var| self.values[x.index()];
                    match *op {
                        Op::Add(a, b) => val(a) + val(b),
                        Op::Sub(a, b) => val(a) - val(b),
                        Op::Mul(a, b) => val(a) * val(b),
                        Op::Div(a, b) => {
                            let d = val(b);
                            if d == 0.0 {
                                return Err(AdError::Domain { node: i, op: "div", value: d });
                            }
                            val(a) / d
                        }
                        Op::Neg(a) => -val(a),
                        Op::Abs(a) => val(a).abs(),
                        Op::Exp(a) => val(a).exp(),
                        Op::Ln(a) => {
                            let x = val(a);
                            if !(x > 0.0) {
                                return Err(AdError::Domain { node: i, op: "ln", value: x });
                            }
                            x.ln()
                        }
                        Op::Sqrt(a) => {
                            let x = val(a);
                            if !(x >= 0.0) {
                                return Err(AdError::Domain { node: i, op: "sqrt", value: x });
                            }
                            x.sqrt()
                        }
                        Op::Square(a) => val(a) * val(a),
                        Op::Arctan(a) => val(a).atan(),
                        Op::Tan(a) => {
                            let x = val(a);
                            if !(x.abs() < TAN_LIMIT) {
                                return Err(AdError::Domain { node: i, op: "tan", value: x });
                            }
                            x.tan()
                        }
                        Op::Max(a, b) => {
                            let (x, y) = (val(a), val(b));
                            if x >= y {
                                x
                            } else {
                                y
                            }
                        }
                        Op::StopGrad(a) => val(a),
                        Op::Input(_) | Op::Param(_) | Op::Const(_) => unreachable!(),
                    }
                }
            };
            if !v.is_finite() {
                return Err(AdError::NonFinite { node: i, op: op.name() });
            }
            self.values.push(v);
        }
        self.evaluated = true;
        Ok(())
    }

    fn operand_check(&self, i: usize, op: &Op) -> Result<(), AdError> {
        match *op {
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::Max(a, b) => {
                self.check_ref(i, a)?;
                self.check_ref(i, b)
            }
            Op::Neg(a)
            | Op::Abs(a)
            | Op::Exp(a)
            | Op::Ln(a)
            | Op::Sqrt(a)
            | Op::Square(a)
            | Op::Arctan(a)
            | Op::Tan(a)
            | Op::StopGrad(a) => self.check_ref(i, a),
            Op::Input(_) | Op::Param(_) | Op::Const(_) => Ok(()),
        }
    }

    /// Gradient of `root` with respect to every parameter.
    pub fn backward(&mut self, root: Var, n_params: usize) -> Result<Vec<f64>, AdError> {
        let mut grads = vec![0.0; n_params];
        self.backward_into(root, &mut grads)?;
        Ok(grads)
    }

    /// Accumulates the gradient of `root` into `grads` (indexed by parameter).
    pub fn backward_into(&mut self, root: Var, grads: &mut [f64]) -> Result<(), AdError> {
        if !self.evaluated {
            return Err(AdError::NotEvaluated);
        }
        let n = self.nodes.len();
        if root.index() >= n {
            return Err(AdError::BadReference { node: n, what: "node", index: root.index(), len: n });
        }
        self.adjoints.clear();
        self.adjoints.resize(n, 0.0);
        self.adjoints[root.index()] = 1.0;
        for i in (0..=root.index()).rev() {
            let g = self.adjoints[i];
            // zero adjoints never propagate, so inf * 0 cannot leak through a barrier
            if g == 0.0 {
                continue;
            }
            let val = |x: Var| self.values[x.index()];
            match self.nodes[i] {
                Op::Input(_) | Op::Const(_) | Op::StopGrad(_) => {}
                Op::Param(k) => {
                    let k = k as usize;
                    if k >= grads.len() {
                        return Err(AdError::BadReference { node: i, what: "param", index: k, len: grads.len() });
                    }
                    grads[k] += g;
                }
                Op::Add(a, b) => {
                    self.adjoints[a.index()] += g;
                    self.adjoints[b.index()] += g;
                }
                Op::Sub(a, b) => {
                    self.adjoints[a.index()] += g;
                    self.adjoints[b.index()] -= g;
                }
                Op::Mul(a, b) => {
                    let (x, y) = (val(a), val(b));
                    self.adjoints[a.index()] += g * y;
                    self.adjoints[b.index()] += g * x;
                }
                Op::Div(a, b) => {
                    let (x, y) = (val(a), val(b));
                    self.adjoints[a.index()] += g / y;
                    self.adjoints[b.index()] -= g * x / (y * y);
                }
                Op::Neg(a) => self.adjoints[a.index()] -= g,
                Op::Abs(a) => {
                    let x = val(a);
                    // subgradient 0 at exactly 0
                    let s = if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    self.adjoints[a.index()] += g * s;
                }
                Op::Exp(a) => {
                    let out = self.values[i];
                    self.adjoints[a.index()] += g * out;
                }
                Op::Ln(a) => self.adjoints[a.index()] += g / val(a),
                Op::Sqrt(a) => {
                    let out = self.values[i];
                    self.adjoints[a.index()] += g * 0.5 / out;
                }
                Op::Square(a) => self.adjoints[a.index()] += g * 2.0 * val(a),
                Op::Arctan(a) => {
                    let x = val(a);
                    self.adjoints[a.index()] += g / (1.0 + x * x);
                }
                Op::Tan(a) => {
                    let t = self.values[i];
                    self.adjoints[a.index()] += g * (1.0 + t * t);
                }
                Op::Max(a, b) => {
                    if val(a) >= val(b) {
                        self.adjoints[a.index()] += g;
                    } else {
                        self.adjoints[b.index()] += g;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Reverse-mode gradient next to its central-difference estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// Largest `|a - n| / max(|a|, |n|)` over parameters whose gradients
    /// differ by more than `1e-9` in absolute terms.
    pub max_rel_error: f64,
}

/// Compares `backward` against central differences with step `h` at
/// `params`; the tape is re-evaluated in place.
pub fn gradient_check(tape: &mut Tape, root: Var, params: &[f64], inputs: &[f64], h: f64) -> Result<GradCheck, AdError> {
    tape.evaluate(params, inputs)?;
    let analytic = tape.backward(root, params.len())?;
    let mut numeric = Vec::with_capacity(params.len());
    let mut p = params.to_vec();
    for k in 0..params.len() {
        p[k] = params[k] + h;
        tape.evaluate(&p, inputs)?;
        let up = tape.value(root);
        p[k] = params[k] - h;
        tape.evaluate(&p, inputs)?;
        let down = tape.value(root);
        p[k] = params[k];
        numeric.push((up - down) / (2.0 * h));
    }
    tape.evaluate(params, inputs)?;
    let max_rel_error = analytic
        .iter()
        .zip(&numeric)
        .filter(|(a, n)| (*a - *n).abs() > 1e-9)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()))
        .fold(0.0, f64::max);
    Ok(GradCheck { analytic, numeric, max_rel_error })
}

/// Flat parameter vector with gradient accumulator and optimizer state.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    values: Vec<f64>,
    grads: Vec<f64>,
    state: Vec<f64>,
}

impl ParamStore {
    pub fn new(values: Vec<f64>) -> Self {
        let n = values.len();
        ParamStore {
            values,
            grads: vec![0.0; n],
            state: vec![0.0; n],
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grads(&self) -> &[f64] {
        &self.grads
    }

    pub fn grads_mut(&mut self) -> &mut [f64] {
        &mut self.grads
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Multiplies every accumulated gradient by `s`.
    pub fn scale_grads(&mut self, s: f64) {
        self.grads.iter_mut().for_each(|g| *g *= s);
    }

    fn check_grads(&self) -> Result<(), AdError> {
        match self.grads.iter().position(|g| !g.is_finite()) {
            Some(index) => Err(AdError::NonFiniteGradient { index }),
            None => Ok(()),
        }
    }

    /// Plain gradient descent: `w -= lr * g`.
    pub fn sgd_step(&mut self, lr: f64) -> Result<(), AdError> {
        self.check_grads()?;
        for (w, g) in self.values.iter_mut().zip(&self.grads) {
            *w -= lr * g;
        }
        Ok(())
    }

    /// Adagrad with a decaying accumulator:
    /// `acc = decay * acc + g^2; w -= lr * g / (sqrt(acc) + eps)`.
    pub fn adagrad_decay_step(&mut self, lr: f64, decay: f64, eps: f64) -> Result<(), AdError> {
        self.check_grads()?;
        for ((w, g), acc) in self.values.iter_mut().zip(&self.grads).zip(self.state.iter_mut()) {
            *acc = decay * *acc + g * g;
            *w -= lr * g / (acc.sqrt() + eps);
        }
        Ok(())
    }
}
