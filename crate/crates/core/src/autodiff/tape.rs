//! Scalar reverse-mode tape.
//!
//! Every arithmetic operation on a [`Var`] appends one node holding its parent
//! indices and the local partial derivatives with respect to those parents.
//! Nodes are appended in evaluation order, so the node list is topologically
//! sorted and a single backward pass over it visits each node once.

use std::cell::{Cell, RefCell};
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::atomic::{AtomicU64, Ordering};

use super::Scalar;
use crate::{Error, Result};

const NO_PARENT: u32 = u32::MAX;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Operation that produced a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale,
    Offset,
    Tanh,
    Exp,
    Sin,
    Cos,
}

#[derive(Debug, Clone, Copy)]
struct Node {
    kind: OpKind,
    parents: [u32; 2],
    partials: [f64; 2],
}

/// Append-only record of scalar operations.
pub struct Tape {
    id: u64,
    generation: Cell<u32>,
    nodes: RefCell<Vec<Node>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("id", &self.id)
            .field("generation", &self.generation.get())
            .field("len", &self.len())
            .finish()
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::with_capacity(0)
    }

    pub fn with_capacity(capacity: usize) -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            generation: Cell::new(0),
            nodes: RefCell::new(Vec::with_capacity(capacity)),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drop all nodes. Handles created before the reset become stale.
    pub fn reset(&self) {
        self.nodes.borrow_mut().clear();
        self.generation.set(self.generation.get().wrapping_add(1));
    }

    /// Record an independent variable.
    pub fn leaf(&self, value: f64) -> Var<'_> {
        self.push(value, OpKind::Leaf, [NO_PARENT; 2], [0.0; 2])
    }

    /// Record a constant. Identical to a leaf whose adjoint is never read.
    pub fn constant(&self, value: f64) -> Var<'_> {
        self.leaf(value)
    }

    /// Kinds of all nodes in recording order.
    pub fn kinds(&self) -> Vec<OpKind> {
        self.nodes.borrow().iter().map(|n| n.kind).collect()
    }

    #[inline]
    fn push(&self, value: f64, kind: OpKind, parents: [u32; 2], partials: [f64; 2]) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len() as u32;
        nodes.push(Node {
            kind,
            parents,
            partials,
        });
        Var {
            tape: self,
            index,
            generation: self.generation.get(),
            value,
        }
    }

    fn owns(&self, var: &Var<'_>) -> bool {
        std::ptr::eq(self, var.tape)
            && var.generation == self.generation.get()
            && (var.index as usize) < self.len()
    }

    /// Reverse sweep from `root`, returning adjoints of every node.
    pub fn gradient(&self, root: Var<'_>) -> Result<Gradient> {
        if !self.owns(&root) {
            return Err(Error::ForeignTape);
        }
        let nodes = self.nodes.borrow();
        let mut adjoints = vec![0.0; root.index as usize + 1];
        adjoints[root.index as usize] = 1.0;
        for i in (0..=root.index as usize).rev() {
            let adj = adjoints[i];
            if adj == 0.0 {
                continue;
            }
            let node = &nodes[i];
            for k in 0..2 {
                let p = node.parents[k];
                if p != NO_PARENT {
                    adjoints[p as usize] += adj * node.partials[k];
                }
            }
        }
        Ok(Gradient {
            tape_id: self.id,
            generation: self.generation.get(),
            adjoints,
        })
    }
}

/// Adjoints produced by [`Tape::gradient`].
#[derive(Debug, Clone)]
pub struct Gradient {
    tape_id: u64,
    generation: u32,
    adjoints: Vec<f64>,
}

impl Gradient {
    /// Derivative of the root with respect to `var`.
    pub fn wrt(&self, var: Var<'_>) -> Result<f64> {
        if var.tape.id != self.tape_id || var.generation != self.generation {
            return Err(Error::ForeignTape);
        }
        Ok(self.adjoints.get(var.index as usize).copied().unwrap_or(0.0))
    }
}

/// Handle to a node on a [`Tape`], carrying its primal value.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: u32,
    generation: u32,
    value: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var(#{} = {})", self.index, self.value)
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    #[inline]
    fn unary(self, value: f64, kind: OpKind, partial: f64) -> Self {
        self.tape
            .push(value, kind, [self.index, NO_PARENT], [partial, 0.0])
    }

    #[inline]
    fn binary(self, other: Self, value: f64, kind: OpKind, partials: [f64; 2]) -> Self {
        debug_assert!(
            std::ptr::eq(self.tape, other.tape),
            "operands recorded on different tapes"
        );
        debug_assert_eq!(self.generation, other.generation, "stale operand");
        self.tape
            .push(value, kind, [self.index, other.index], partials)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, self.value + rhs.value, OpKind::Add, [1.0, 1.0])
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, self.value - rhs.value, OpKind::Sub, [1.0, -1.0])
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        self.binary(
            rhs,
            self.value * rhs.value,
            OpKind::Mul,
            [rhs.value, self.value],
        )
    }
}

impl<'t> Div for Var<'t> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let q = self.value / rhs.value;
        self.binary(rhs, q, OpKind::Div, [1.0 / rhs.value, -q / rhs.value])
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self.unary(-self.value, OpKind::Neg, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: f64) -> Self {
        self.unary(self.value + rhs, OpKind::Offset, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: f64) -> Self {
        self.unary(self.value - rhs, OpKind::Offset, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: f64) -> Self {
        self.unary(self.value * rhs, OpKind::Scale, rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: f64) -> Self {
        self.unary(self.value / rhs, OpKind::Scale, 1.0 / rhs)
    }
}

impl<'t> Scalar for Var<'t> {
    #[inline]
    fn value(self) -> f64 {
        self.value
    }

    #[inline]
    fn constant_like(self, c: f64) -> Self {
        self.tape.constant(c)
    }

    fn tanh(self) -> Self {
        let t = self.value.tanh();
        self.unary(t, OpKind::Tanh, 1.0 - t * t)
    }

    fn exp(self) -> Self {
        let e = self.value.exp();
        self.unary(e, OpKind::Exp, e)
    }

    fn sin(self) -> Self {
        self.unary(self.value.sin(), OpKind::Sin, self.value.cos())
    }

    fn cos(self) -> Self {
        self.unary(self.value.cos(), OpKind::Cos, -self.value.sin())
    }
}
