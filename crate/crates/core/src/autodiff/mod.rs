//! Exact input derivatives and parameter gradients.
//!
//! Input derivatives up to second order travel forward as [`Jet2`] values.
//! When the jet components are [`Var`]s recorded on a [`Tape`], one reverse
//! sweep from a scalar loss yields its gradient with respect to every network
//! parameter.

mod jet;
mod scalar;
mod tape;

pub use jet::{
    jet_arith, jet_unary, lift_constant, lift_coordinate, packed_index, DerivOrder, Jet2, JetFn,
    JetOp, Operand,
};
pub use scalar::Scalar;
pub use tape::{Gradient, OpKind, Tape, Var};

use crate::network::{forward_generic, Architecture, Parameters};
use crate::{Error, Result};

/// Network parameters recorded as leaves of a tape.
#[derive(Debug, Clone)]
pub struct TrackedParameters<'t> {
    params: &'t Parameters,
    vars: Vec<Var<'t>>,
}

impl<'t> TrackedParameters<'t> {
    pub fn new(tape: &'t Tape, params: &'t Parameters) -> Self {
        let vars = params.as_slice().iter().map(|&v| tape.leaf(v)).collect();
        TrackedParameters { params, vars }
    }

    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }

    pub fn params(&self) -> &'t Parameters {
        self.params
    }
}

/// Output jets at `point`, every component a tape-tracked function of the
/// parameters.
pub fn forward_jets<'t>(
    tracked: &TrackedParameters<'t>,
    arch: &Architecture,
    point: &[f64],
) -> Result<Vec<Jet2<Var<'t>>>> {
    tracked.params.check(arch)?;
    forward_generic(&tracked.vars, tracked.params.shapes(), point, DerivOrder::Second)
}

/// `∂loss/∂θ` for every parameter, in the flat parameter layout.
pub fn parameter_gradient(loss: Var<'_>, tracked: &TrackedParameters<'_>) -> Result<Vec<f64>> {
    let tape = loss.tape();
    if let Some(first) = tracked.vars.first() {
        if !std::ptr::eq(first.tape(), tape) {
            return Err(Error::ForeignTape);
        }
    }
    let g = tape.gradient(loss)?;
    tracked.vars.iter().map(|&v| g.wrt(v)).collect()
}
