//! Scalar reverse-mode automatic differentiation on a Wengert tape.
//!
//! Every operation appends a node holding its value and the local partial
//! derivatives with respect to at most two parents. `Tape::gradient` sweeps
//! the tape backwards once.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::network::{sigmoid, softplus, HeadTransform, NetworkSpec, ParameterSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
struct Node {
    op: &'static str,
    value: f64,
    parents: [(usize, f64); 2],
    arity: u8,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: usize,
    value: f64,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(#{} = {})", self.index, self.value)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&self, op: &'static str, value: f64, parents: [(usize, f64); 2], arity: u8) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len();
        nodes.push(Node {
            op,
            value,
            parents,
            arity,
        });
        Var {
            tape: self,
            index,
            value,
        }
    }

    pub fn var(&self, value: f64) -> Var<'_> {
        self.push("leaf", value, [(0, 0.0); 2], 0)
    }

    pub fn constant(&self, value: f64) -> Var<'_> {
        self.push("const", value, [(0, 0.0); 2], 0)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Adjoints of every node with respect to `output`.
    ///
    /// Fails on the first node (in evaluation order) whose value is not
    /// finite, or on the first non-finite adjoint met during the sweep.
    pub fn gradient(&self, output: Var<'_>) -> Result<Vec<f64>> {
        let nodes = self.nodes.borrow();
        if let Some((i, n)) = nodes[..=output.index]
            .iter()
            .enumerate()
            .find(|(_, n)| !n.value.is_finite())
        {
            return Err(Error::NonFinite {
                node: format!("tape node {i} ({})", n.op),
            });
        }
        let mut adj = vec![0.0f64; nodes.len()];
        adj[output.index] = 1.0;
        for i in (0..=output.index).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            if !a.is_finite() {
                return Err(Error::NonFinite {
                    node: format!("adjoint of tape node {i} ({})", nodes[i].op),
                });
            }
            let n = nodes[i];
            for &(p, d) in &n.parents[..n.arity as usize] {
                adj[p] += a * d;
            }
        }
        Ok(adj)
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn index(&self) -> usize {
        self.index
    }

    fn unary(self, op: &'static str, value: f64, d: f64) -> Var<'t> {
        self.tape.push(op, value, [(self.index, d), (0, 0.0)], 1)
    }

    pub fn exp(self) -> Var<'t> {
        let e = self.value.exp();
        self.unary("exp", e, e)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary("ln", self.value.ln(), 1.0 / self.value)
    }

    pub fn sqrt(self) -> Var<'t> {
        let s = self.value.sqrt();
        self.unary("sqrt", s, 0.5 / s)
    }

    pub fn square(self) -> Var<'t> {
        self.unary("square", self.value * self.value, 2.0 * self.value)
    }

    pub fn powi(self, n: i32) -> Var<'t> {
        let d = n as f64 * self.value.powi(n - 1);
        self.unary("powi", self.value.powi(n), d)
    }

    pub fn softplus(self) -> Var<'t> {
        self.unary("softplus", softplus(self.value), sigmoid(self.value))
    }

    pub fn sigmoid(self) -> Var<'t> {
        let s = sigmoid(self.value);
        self.unary("sigmoid", s, s * (1.0 - s))
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        let d = if self.value > 0.0 { 1.0 } else { slope };
        self.unary("leaky_relu", self.value * d, d)
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary("scale", self.value * c, c)
    }

    pub fn offset(self, c: f64) -> Var<'t> {
        self.unary("offset", self.value + c, 1.0)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.tape
            .push("add", self.value + rhs.value, [(self.index, 1.0), (rhs.index, 1.0)], 2)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.tape
            .push("sub", self.value - rhs.value, [(self.index, 1.0), (rhs.index, -1.0)], 2)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.tape.push(
            "mul",
            self.value * rhs.value,
            [(self.index, rhs.value), (rhs.index, self.value)],
            2,
        )
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        let q = self.value / rhs.value;
        self.tape.push(
            "div",
            q,
            [(self.index, 1.0 / rhs.value), (rhs.index, -q / rhs.value)],
            2,
        )
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }
}

/// Sum of a non-empty slice of tape variables.
pub fn sum<'t>(vars: &[Var<'t>]) -> Var<'t> {
    let mut it = vars.iter().copied();
    let first = it.next().expect("sum of empty slice");
    it.fold(first, |acc, v| acc + v)
}

/// Value and gradients of a scalar objective of `(params, inputs)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub value: f64,
    pub params: Vec<f64>,
    pub inputs: Vec<f64>,
}

/// Reverse-mode gradients of `objective` at `(params, inputs)`.
pub fn gradients<F>(objective: F, params: &[f64], inputs: &[f64]) -> Result<Gradients>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>], &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let p: Vec<Var<'_>> = params.iter().map(|&v| tape.var(v)).collect();
    let x: Vec<Var<'_>> = inputs.iter().map(|&v| tape.var(v)).collect();
    let out = objective(&tape, &p, &x);
    let adj = tape.gradient(out)?;
    Ok(Gradients {
        value: out.value(),
        params: p.iter().map(|v| adj[v.index]).collect(),
        inputs: x.iter().map(|v| adj[v.index]).collect(),
    })
}

/// Dense network forward pass recorded on a tape.
///
/// Returns the transformed outputs of every head. This is a slow scalar path
/// kept as an independent reference for the batched reverse pass.
pub fn network_forward<'t>(
    spec: &NetworkSpec,
    params: &[Var<'t>],
    input: &[Var<'t>],
) -> Vec<Vec<Var<'t>>> {
    let shapes = ParameterSet::zeros(spec).layers;
    let affine = |shape: &super::network::LayerShape, x: &[Var<'t>]| -> Vec<Var<'t>> {
        let w = &params[shape.weight_range()];
        let b = &params[shape.bias_range()];
        (0..shape.out_dim)
            .map(|o| {
                let mut acc = b[o];
                for (i, xi) in x.iter().enumerate() {
                    acc = acc + w[o * shape.in_dim + i] * *xi;
                }
                acc
            })
            .collect()
    };
    let mut h: Vec<Var<'t>> = input.to_vec();
    let n_hidden = spec.hidden_widths.len();
    for shape in &shapes[..n_hidden] {
        let pre = affine(shape, &h);
        h = pre
            .into_iter()
            .map(|p| match spec.activation {
                super::network::Activation::LeakyRelu { slope } => p.leaky_relu(slope),
                super::network::Activation::Relu => p.leaky_relu(0.0),
                super::network::Activation::Linear => p,
            })
            .collect();
    }
    spec.heads
        .iter()
        .zip(&shapes[n_hidden..])
        .map(|(head, shape)| {
            affine(shape, &h)
                .into_iter()
                .map(|r| match head.transform {
                    HeadTransform::Identity => r,
                    HeadTransform::Softplus => r.softplus().offset(super::network::SOFTPLUS_FLOOR),
                    HeadTransform::Sigmoid => r.sigmoid(),
                })
                .collect()
        })
        .collect()
}
