use super::{Architecture, LayerShape, Parameters};
use crate::autodiff::{DerivOrder, Jet2, Scalar};
use crate::{Error, Result};

fn check_point(arch: &Architecture, point: &[f64]) -> Result<()> {
    if point.len() != arch.n_inputs {
        return Err(Error::DimensionMismatch {
            expected: arch.n_inputs,
            actual: point.len(),
        });
    }
    Ok(())
}

/// Plain value evaluation of the network at `point`.
pub fn forward(params: &Parameters, arch: &Architecture, point: &[f64]) -> Result<Vec<f64>> {
    params.check(arch)?;
    check_point(arch, point)?;
    let shapes = params.shapes();
    let mut act = point.to_vec();
    let mut offset = 0;
    for (l, shape) in shapes.iter().enumerate() {
        let w = &params.as_slice()[offset..offset + shape.n_weights()];
        let b = &params.as_slice()[offset + shape.n_weights()..offset + shape.n_params()];
        let mut next = Vec::with_capacity(shape.fan_out);
        for o in 0..shape.fan_out {
            let row = &w[o * shape.fan_in..(o + 1) * shape.fan_in];
            let mut acc = b[o];
            for (wi, ai) in row.iter().zip(&act) {
                acc = acc + ai * wi;
            }
            next.push(if l + 1 < shapes.len() { acc.tanh() } else { acc });
        }
        act = next;
        offset += shape.n_params();
    }
    Ok(act)
}

/// Output jets at `point` for weights of any scalar type.
///
/// `weights` is the flat parameter store laid out per `shapes`. With `Var`
/// weights every jet component becomes a tape-tracked function of the
/// parameters.
pub fn forward_generic<T: Scalar>(
    weights: &[T],
    shapes: &[LayerShape],
    point: &[f64],
    order: DerivOrder,
) -> Result<Vec<Jet2<T>>> {
    let n_inputs = shapes.first().map_or(0, |s| s.fan_in);
    if point.len() != n_inputs {
        return Err(Error::DimensionMismatch {
            expected: n_inputs,
            actual: point.len(),
        });
    }
    let total: usize = shapes.iter().map(LayerShape::n_params).sum();
    if weights.len() != total {
        return Err(Error::DimensionMismatch {
            expected: total,
            actual: weights.len(),
        });
    }
    let anchor = weights[0];
    let zero = anchor.constant_like(0.0);
    let n_grad = if order >= DerivOrder::First { n_inputs } else { 0 };
    let zeros_grad = vec![zero; n_grad];
    let zeros_hess = vec![zero; n_grad * (n_grad + 1) / 2];
    let hess_zero = (order == DerivOrder::Second).then_some(zeros_hess.as_slice());

    let mut act: Vec<Jet2<T>> = point
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            if order == DerivOrder::Zero {
                Ok(Jet2::from_components(anchor.constant_like(x), &[], None))
            } else {
                Jet2::coordinate_in(anchor, x, i, n_inputs, order)
            }
        })
        .collect::<Result<_>>()?;

    let mut offset = 0;
    for (l, shape) in shapes.iter().enumerate() {
        let w = &weights[offset..offset + shape.n_weights()];
        let b = &weights[offset + shape.n_weights()..offset + shape.n_params()];
        let mut next = Vec::with_capacity(shape.fan_out);
        for o in 0..shape.fan_out {
            let row = &w[o * shape.fan_in..(o + 1) * shape.fan_in];
            let mut acc = Jet2::from_components(b[o], &zeros_grad, hess_zero);
            for (&wi, ai) in row.iter().zip(&act) {
                acc = acc.add(&ai.scale(wi));
            }
            next.push(if l + 1 < shapes.len() { acc.tanh() } else { acc });
        }
        act = next;
        offset += shape.n_params();
    }
    Ok(act)
}

/// Output jets with plain `f64` components.
pub fn forward_jets_values(
    params: &Parameters,
    arch: &Architecture,
    point: &[f64],
    order: DerivOrder,
) -> Result<Vec<Jet2<f64>>> {
    params.check(arch)?;
    check_point(arch, point)?;
    forward_generic(params.as_slice(), params.shapes(), point, order)
}
