use std::cell::{Cell, RefCell};
use std::ops::{Add, Div, Mul, Neg, Sub};

use arrayvec::ArrayVec;

use super::real::Real;
use crate::{Error, Result};

/// Elementary operation recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Ln,
    Sin,
    Cos,
    Sigmoid,
    Swish,
    Powi,
}

#[derive(Debug)]
struct Node<S> {
    op: Op,
    primal: f64,
    parents: ArrayVec<(usize, S), 2>,
}

/// Record of a scalar computation. Local partial derivatives are stored in
/// the scalar type `S`; with `S = Dual` the reverse sweep yields
/// Hessian-vector products.
///
/// A tape is not `Sync`; it belongs to the thread that records on it.
#[derive(Debug, Default)]
pub struct Tape<S> {
    nodes: RefCell<Vec<Node<S>>>,
    leaves: RefCell<Vec<usize>>,
    visits: Cell<usize>,
}

/// Handle to a value on a tape. Constants carry no node.
#[derive(Clone, Debug)]
pub struct Var<'t, S> {
    tape: &'t Tape<S>,
    idx: Option<usize>,
    val: S,
}

impl<S: Real> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()), leaves: RefCell::new(Vec::new()), visits: Cell::new(0) }
    }

    /// A differentiable input. Gradients are returned in leaf creation order.
    pub fn leaf(&self, value: S) -> Var<'_, S> {
        let idx = self.push(Op::Leaf, value.primal(), ArrayVec::new());
        self.leaves.borrow_mut().push(idx);
        Var { tape: self, idx: Some(idx), val: value }
    }

    pub fn constant(&self, value: S) -> Var<'_, S> {
        Var { tape: self, idx: None, val: value }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Nodes touched by the most recent reverse sweep.
    pub fn last_sweep_visits(&self) -> usize {
        self.visits.get()
    }

    fn push(&self, op: Op, primal: f64, parents: ArrayVec<(usize, S), 2>) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, primal, parents });
        nodes.len() - 1
    }

    /// Reverse sweep from `output`, returning d output / d leaf for every
    /// leaf. Fails on the first recorded node whose value is not finite.
    pub fn gradient(&self, output: &Var<'_, S>) -> Result<Vec<S>> {
        let nodes = self.nodes.borrow();
        if let Some((i, node)) = nodes.iter().enumerate().find(|(_, n)| !n.primal.is_finite()) {
            return Err(Error::non_finite(format!("tape node {i} ({:?})", node.op)));
        }
        if !output.val.primal().is_finite() {
            return Err(Error::non_finite("tape output"));
        }
        let zero = output.val.lift(0.0);
        let leaves = self.leaves.borrow();
        let Some(out) = output.idx else {
            self.visits.set(0);
            return Ok(vec![zero; leaves.len()]);
        };
        let mut adj = vec![zero; out + 1];
        adj[out] = output.val.lift(1.0);
        let mut visits = 0;
        for i in (0..=out).rev() {
            visits += 1;
            let node = &nodes[i];
            if node.parents.is_empty() {
                continue;
            }
            let a = adj[i].clone();
            for (p, d) in &node.parents {
                let acc = std::mem::replace(&mut adj[*p], a.lift(0.0));
                adj[*p] = acc + d.clone() * a.clone();
            }
        }
        self.visits.set(visits);
        let grads: Vec<S> = leaves.iter().map(|&l| if l <= out { adj[l].clone() } else { output.val.lift(0.0) }).collect();
        if let Some(k) = grads.iter().position(|g| !g.primal().is_finite()) {
            return Err(Error::non_finite(format!("adjoint of leaf {k}")));
        }
        Ok(grads)
    }
}

impl<'t, S: Real> Var<'t, S> {
    pub fn value(&self) -> &S {
        &self.val
    }

    pub fn node(&self) -> Option<usize> {
        self.idx
    }

    fn unary(&self, op: Op, val: S, slope: S) -> Self {
        match self.idx {
            None => Var { tape: self.tape, idx: None, val },
            Some(i) => {
                let mut parents = ArrayVec::new();
                parents.push((i, slope));
                let idx = self.tape.push(op, val.primal(), parents);
                Var { tape: self.tape, idx: Some(idx), val }
            }
        }
    }

    fn binary(&self, other: &Self, op: Op, val: S, da: S, db: S) -> Self {
        debug_assert!(std::ptr::eq(self.tape, other.tape), "variables from different tapes");
        let mut parents = ArrayVec::new();
        if let Some(i) = self.idx {
            parents.push((i, da));
        }
        if let Some(j) = other.idx {
            parents.push((j, db));
        }
        if parents.is_empty() {
            return Var { tape: self.tape, idx: None, val };
        }
        let idx = self.tape.push(op, val.primal(), parents);
        Var { tape: self.tape, idx: Some(idx), val }
    }
}

impl<S: Real> Add for Var<'_, S> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let one = self.val.lift(1.0);
        self.binary(&rhs, Op::Add, self.val.clone() + rhs.val.clone(), one.clone(), one)
    }
}

impl<S: Real> Sub for Var<'_, S> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        let one = self.val.lift(1.0);
        self.binary(&rhs, Op::Sub, self.val.clone() - rhs.val.clone(), one.clone(), -one)
    }
}

impl<S: Real> Mul for Var<'_, S> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        self.binary(&rhs, Op::Mul, self.val.clone() * rhs.val.clone(), rhs.val.clone(), self.val.clone())
    }
}

impl<S: Real> Div for Var<'_, S> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let q = self.val.clone() / rhs.val.clone();
        let da = self.val.lift(1.0) / rhs.val.clone();
        let db = -(q.clone() / rhs.val.clone());
        self.binary(&rhs, Op::Div, q, da, db)
    }
}

impl<S: Real> Neg for Var<'_, S> {
    type Output = Self;
    fn neg(self) -> Self {
        let m = -self.val.lift(1.0);
        self.unary(Op::Neg, -self.val.clone(), m)
    }
}

impl<S: Real> Real for Var<'_, S> {
    fn lift(&self, c: f64) -> Self {
        Var { tape: self.tape, idx: None, val: self.val.lift(c) }
    }
    fn primal(&self) -> f64 {
        self.val.primal()
    }
    fn exp(&self) -> Self {
        let e = self.val.exp();
        self.unary(Op::Exp, e.clone(), e)
    }
    fn ln(&self) -> Self {
        self.unary(Op::Ln, self.val.ln(), self.val.lift(1.0) / self.val.clone())
    }
    fn sin(&self) -> Self {
        self.unary(Op::Sin, self.val.sin(), self.val.cos())
    }
    fn cos(&self) -> Self {
        self.unary(Op::Cos, self.val.cos(), -self.val.sin())
    }
    fn sigmoid(&self) -> Self {
        let s = self.val.sigmoid();
        let slope = s.clone() * (s.lift(1.0) - s.clone());
        self.unary(Op::Sigmoid, s, slope)
    }
    fn powi(&self, n: i32) -> Self {
        let slope = if n == 0 { self.val.lift(0.0) } else { self.val.powi(n - 1).scale(n as f64) };
        self.unary(Op::Powi, self.val.powi(n), slope)
    }
    fn swish(&self) -> Self {
        self.unary(Op::Swish, self.val.swish(), self.val.swish_d1())
    }
}
