//! Scalar reverse-mode tape.
//!
//! Every arithmetic operation on a [`Var`] appends one node to the tape
//! holding its value and the local partial derivatives with respect to its
//! inputs. Nodes are appended in evaluation order, so the node list is
//! topologically sorted by construction and a single reverse sweep computes
//! all adjoints.

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::DiffError;

/// Primitive that produced a node; kept for diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Input,
    Param,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Pow,
    Sqrt,
    Sin,
    Cos,
    Acos,
    Atan2,
    Exp,
    Ln,
    Sigmoid,
    Relu,
    Abs,
    Min,
    Max,
    Dot,
    Norm,
    Sum,
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Copy, Debug)]
struct Node {
    op: Op,
    value: f64,
    edge_start: u32,
    edge_count: u32,
}

#[derive(Default)]
struct Inner {
    nodes: Vec<Node>,
    edges: Vec<(u32, f64)>,
    params: Vec<(u32, usize)>,
}

/// Append-only record of a differentiable computation.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<Inner>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: u32,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}({})", self.idx, self.value())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize) -> Self {
        Self {
            inner: RefCell::new(Inner {
                nodes: Vec::with_capacity(nodes),
                edges: Vec::with_capacity(nodes * 2),
                params: Vec::new(),
            }),
        }
    }

    fn push(&self, op: Op, value: f64, edges: &[(u32, f64)]) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let edge_start = inner.edges.len() as u32;
        inner.edges.extend_from_slice(edges);
        let idx = inner.nodes.len() as u32;
        inner.nodes.push(Node {
            op,
            value,
            edge_start,
            edge_count: edges.len() as u32,
        });
        Var { tape: self, idx }
    }

    fn push_iter<I>(&self, op: Op, value: f64, edges: I) -> Var<'_>
    where
        I: IntoIterator<Item = (u32, f64)>,
    {
        let mut inner = self.inner.borrow_mut();
        let edge_start = inner.edges.len() as u32;
        inner.edges.extend(edges);
        let edge_count = inner.edges.len() as u32 - edge_start;
        let idx = inner.nodes.len() as u32;
        inner.nodes.push(Node {
            op,
            value,
            edge_start,
            edge_count,
        });
        Var { tape: self, idx }
    }

    /// Leaf whose adjoint can be read back after [`Tape::backward`].
    pub fn input(&self, value: f64) -> Var<'_> {
        self.push(Op::Input, value, &[])
    }

    /// Leaf bound to slot `index` of a flat parameter vector.
    pub fn param(&self, index: usize, value: f64) -> Var<'_> {
        let v = self.push(Op::Param, value, &[]);
        self.inner.borrow_mut().params.push((v.idx, index));
        v
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// First node (in evaluation order) holding a NaN or infinite value.
    pub fn first_non_finite(&self) -> Option<(usize, Op, f64)> {
        self.inner
            .borrow()
            .nodes
            .iter()
            .enumerate()
            .find(|(_, n)| !n.value.is_finite())
            .map(|(i, n)| (i, n.op, n.value))
    }

    /// Single reverse sweep seeded with `(output, adjoint)` pairs.
    pub fn backward(&self, seeds: &[(Var<'_>, f64)]) -> Adjoints {
        let inner = self.inner.borrow();
        let mut adj = vec![0.0; inner.nodes.len()];
        for (v, a) in seeds {
            debug_assert!(std::ptr::eq(v.tape, self));
            adj[v.idx as usize] += a;
        }
        for i in (0..inner.nodes.len()).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let node = inner.nodes[i];
            let start = node.edge_start as usize;
            for &(parent, partial) in &inner.edges[start..start + node.edge_count as usize] {
                adj[parent as usize] += a * partial;
            }
        }
        Adjoints {
            adj,
            params: inner.params.clone(),
        }
    }
}

/// Result of a reverse sweep.
pub struct Adjoints {
    adj: Vec<f64>,
    params: Vec<(u32, usize)>,
}

impl Adjoints {
    pub fn of(&self, v: Var<'_>) -> f64 {
        self.adj[v.idx as usize]
    }

    /// Scatter-add parameter adjoints into `grads`.
    pub fn accumulate_params(&self, grads: &mut [f64]) {
        for &(node, slot) in &self.params {
            grads[slot] += self.adj[node as usize];
        }
    }

    pub fn param_grads(&self, n_params: usize) -> Vec<f64> {
        let mut g = vec![0.0; n_params];
        self.accumulate_params(&mut g);
        g
    }
}

impl<'t> Var<'t> {
    pub fn value(self) -> f64 {
        self.tape.inner.borrow().nodes[self.idx as usize].value
    }

    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    pub fn index(self) -> usize {
        self.idx as usize
    }

    fn unary(self, op: Op, value: f64, partial: f64) -> Var<'t> {
        self.tape.push(op, value, &[(self.idx, partial)])
    }

    fn binary(self, other: Var<'t>, op: Op, value: f64, da: f64, db: f64) -> Var<'t> {
        debug_assert!(std::ptr::eq(self.tape, other.tape));
        self.tape.push(op, value, &[(self.idx, da), (other.idx, db)])
    }

    pub fn sqrt(self) -> Var<'t> {
        let r = self.value().sqrt();
        self.unary(Op::Sqrt, r, 0.5 / r)
    }

    pub fn sin(self) -> Var<'t> {
        let x = self.value();
        self.unary(Op::Sin, x.sin(), x.cos())
    }

    pub fn cos(self) -> Var<'t> {
        let x = self.value();
        self.unary(Op::Cos, x.cos(), -x.sin())
    }

    pub fn exp(self) -> Var<'t> {
        let e = self.value().exp();
        self.unary(Op::Exp, e, e)
    }

    pub fn ln(self) -> Var<'t> {
        let x = self.value();
        self.unary(Op::Ln, x.ln(), 1.0 / x)
    }

    pub fn powf(self, p: f64) -> Var<'t> {
        let x = self.value();
        self.unary(Op::Pow, x.powf(p), p * x.powf(p - 1.0))
    }

    pub fn powi(self, p: i32) -> Var<'t> {
        let x = self.value();
        let d = if p == 0 { 0.0 } else { p as f64 * x.powi(p - 1) };
        self.unary(Op::Pow, x.powi(p), d)
    }

    pub fn acos(self) -> Var<'t> {
        let x = clamp_acos(self.value());
        self.unary(Op::Acos, x.acos(), -1.0 / (1.0 - x * x).sqrt())
    }

    pub fn atan2(self, x: Var<'t>) -> Var<'t> {
        let (yv, xv) = (self.value(), x.value());
        let r2 = xv * xv + yv * yv;
        let (dy, dx) = if r2 > 0.0 { (xv / r2, -yv / r2) } else { (0.0, 0.0) };
        self.binary(x, Op::Atan2, yv.atan2(xv), dy, dx)
    }

    pub fn sigmoid(self) -> Var<'t> {
        let s = sigmoid(self.value());
        self.unary(Op::Sigmoid, s, s * (1.0 - s))
    }

    pub fn relu(self) -> Var<'t> {
        let x = self.value();
        if x > 0.0 {
            self.unary(Op::Relu, x, 1.0)
        } else {
            self.unary(Op::Relu, 0.0, 0.0)
        }
    }

    pub fn abs(self) -> Var<'t> {
        let x = self.value();
        let d = if x > 0.0 {
            1.0
        } else if x < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.unary(Op::Abs, x.abs(), d)
    }

    pub fn min(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        if a <= b {
            self.binary(other, Op::Min, a, 1.0, 0.0)
        } else {
            self.binary(other, Op::Min, b, 0.0, 1.0)
        }
    }

    pub fn max(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        if a >= b {
            self.binary(other, Op::Max, a, 1.0, 0.0)
        } else {
            self.binary(other, Op::Max, b, 0.0, 1.0)
        }
    }

    pub fn max_const(self, c: f64) -> Var<'t> {
        let x = self.value();
        if x >= c {
            self.unary(Op::Max, x, 1.0)
        } else {
            self.unary(Op::Max, c, 0.0)
        }
    }

    pub fn min_const(self, c: f64) -> Var<'t> {
        let x = self.value();
        if x <= c {
            self.unary(Op::Min, x, 1.0)
        } else {
            self.unary(Op::Min, c, 0.0)
        }
    }
}

/// Dot product as a single n-ary node.
pub fn dot<'t>(a: &[Var<'t>], b: &[Var<'t>]) -> Var<'t> {
    assert!(!a.is_empty() && a.len() == b.len(), "dot: bad operand lengths");
    let tape = a[0].tape;
    let va: Vec<f64> = a.iter().map(|v| v.value()).collect();
    let vb: Vec<f64> = b.iter().map(|v| v.value()).collect();
    let value = va.iter().zip(&vb).map(|(x, y)| x * y).sum();
    let edges = a
        .iter()
        .zip(&vb)
        .map(|(v, &p)| (v.idx, p))
        .chain(b.iter().zip(&va).map(|(v, &p)| (v.idx, p)));
    tape.push_iter(Op::Dot, value, edges)
}

/// Euclidean norm; the gradient is defined as zero below `1e-12`.
pub fn norm<'t>(a: &[Var<'t>]) -> Var<'t> {
    assert!(!a.is_empty(), "norm of empty slice");
    let tape = a[0].tape;
    let vals: Vec<f64> = a.iter().map(|v| v.value()).collect();
    let n = vals.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n < super::NORM_GUARD {
        tape.push_iter(Op::Norm, n, a.iter().map(|v| (v.idx, 0.0)))
    } else {
        tape.push_iter(Op::Norm, n, a.iter().zip(&vals).map(|(v, &x)| (v.idx, x / n)))
    }
}

pub fn sum<'t>(a: &[Var<'t>]) -> Var<'t> {
    assert!(!a.is_empty(), "sum of empty slice");
    let tape = a[0].tape;
    let value = a.iter().map(|v| v.value()).sum();
    tape.push_iter(Op::Sum, value, a.iter().map(|v| (v.idx, 1.0)))
}

pub(crate) fn clamp_acos(x: f64) -> f64 {
    x.clamp(-1.0 + super::ACOS_EPS, 1.0 - super::ACOS_EPS)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        let v = self.value() + rhs.value();
        self.binary(rhs, Op::Add, v, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        let v = self.value() - rhs.value();
        self.binary(rhs, Op::Sub, v, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), rhs.value());
        self.binary(rhs, Op::Mul, a * b, b, a)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), rhs.value());
        self.binary(rhs, Op::Div, a / b, 1.0 / b, -a / (b * b))
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        let v = -self.value();
        self.unary(Op::Neg, v, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Var<'t> {
        let v = self.value() + rhs;
        self.unary(Op::Add, v, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Var<'t> {
        let v = self.value() - rhs;
        self.unary(Op::Sub, v, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Var<'t> {
        let v = self.value() * rhs;
        self.unary(Op::Mul, v, rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Var<'t> {
        let v = self.value() / rhs;
        self.unary(Op::Div, v, 1.0 / rhs)
    }
}

/// Evaluate `graph` on a fresh tape and return the loss and its gradient
/// with respect to `params`.
pub fn forward_backward<F>(params: &[f64], graph: F) -> Result<(f64, Vec<f64>), DiffError>
where
    F: for<'t> FnOnce(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::with_capacity(params.len() * 4);
    let vars: Vec<Var<'_>> = params
        .iter()
        .enumerate()
        .map(|(i, &p)| tape.param(i, p))
        .collect();
    let loss = graph(&tape, &vars);
    let value = loss.value();
    if !value.is_finite() {
        let (node, op, bad) = tape
            .first_non_finite()
            .unwrap_or((loss.index(), Op::Input, value));
        return Err(DiffError::NonFinite { node, op, value: bad });
    }
    let adj = tape.backward(&[(loss, 1.0)]);
    Ok((value, adj.param_grads(params.len())))
}
