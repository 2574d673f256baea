//! Batched jet propagation with a layer-level reverse sweep.
//!
//! Points are processed in chunks. For a chunk of `P` points every layer's
//! activations are stored as a `width × (C·P)` matrix, where `C` is the number
//! of jet components (value, gradient, packed Hessian) and column `c·P + p`
//! holds component `c` of point `p`. A dense layer then acts on all components
//! with one matrix product; only the value channel receives the bias. The
//! backward pass runs the adjoint of each step in reverse order and
//! accumulates parameter gradients in the flat parameter layout.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

use super::LayerShape;
use crate::autodiff::{DerivOrder, Jet2};
use crate::{Error, Result};

const DEFAULT_CHUNK: usize = 64;

/// Per-point loss term consumed by [`BatchEvaluator`].
pub trait PointLoss {
    /// Contribution of point `index`.
    ///
    /// `adjoint` arrives zeroed with `outputs.len() × C` entries, output-major,
    /// each output's block in jet component order. Fill it with the derivative
    /// of the returned contribution with respect to each component.
    fn point(&mut self, index: usize, outputs: &[Jet2<f64>], adjoint: &mut [f64]) -> Result<f64>;
}

impl<F> PointLoss for F
where
    F: FnMut(usize, &[Jet2<f64>], &mut [f64]) -> Result<f64>,
{
    fn point(&mut self, index: usize, outputs: &[Jet2<f64>], adjoint: &mut [f64]) -> Result<f64> {
        self(index, outputs, adjoint)
    }
}

/// Reusable buffers for evaluating a point loss and its parameter gradient.
#[derive(Debug, Clone)]
pub struct BatchEvaluator {
    shapes: Vec<LayerShape>,
    offsets: Vec<usize>,
    n_inputs: usize,
    order: DerivOrder,
    channels: usize,
    pairs: Vec<(usize, usize)>,
    chunk: usize,
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    bar: Vec<f64>,
    bar_next: Vec<f64>,
    jets: Vec<Jet2<f64>>,
    adjoint: Vec<f64>,
}

impl BatchEvaluator {
    pub fn new(shapes: &[LayerShape], order: DerivOrder) -> Self {
        Self::with_chunk(shapes, order, DEFAULT_CHUNK)
    }

    pub fn with_chunk(shapes: &[LayerShape], order: DerivOrder, chunk: usize) -> Self {
        assert!(!shapes.is_empty() && chunk > 0);
        let n_inputs = shapes[0].fan_in;
        let channels = order.components(n_inputs);
        let mut offsets = Vec::with_capacity(shapes.len());
        let mut off = 0;
        for s in shapes {
            offsets.push(off);
            off += s.n_params();
        }
        let mut pairs = Vec::new();
        for a in 0..n_inputs {
            for b in a..n_inputs {
                pairs.push((a, b));
            }
        }
        let cols = channels * chunk;
        let mut acts = vec![vec![0.0; n_inputs * cols]];
        acts.extend(shapes.iter().map(|s| vec![0.0; s.fan_out * cols]));
        let pre = shapes.iter().map(|s| vec![0.0; s.fan_out * cols]).collect();
        let widest = shapes
            .iter()
            .map(|s| s.fan_in.max(s.fan_out))
            .max()
            .unwrap_or(0);
        BatchEvaluator {
            shapes: shapes.to_vec(),
            offsets,
            n_inputs,
            order,
            channels,
            pairs,
            chunk,
            acts,
            pre,
            bar: vec![0.0; widest * cols],
            bar_next: vec![0.0; widest * cols],
            jets: Vec::new(),
            adjoint: Vec::new(),
        }
    }

    pub fn order(&self) -> DerivOrder {
        self.order
    }

    pub fn n_params(&self) -> usize {
        self.shapes.iter().map(LayerShape::n_params).sum()
    }

    /// Sum of `loss` over all points; when `grad` is given, its parameter
    /// gradient is added into it.
    ///
    /// `points` is flat with stride `n_inputs`. Points are visited in order, so
    /// the result is deterministic for fixed inputs.
    pub fn evaluate(
        &mut self,
        params: &[f64],
        points: &[f64],
        loss: &mut dyn PointLoss,
        mut grad: Option<&mut [f64]>,
    ) -> Result<f64> {
        let n_params = self.n_params();
        if params.len() != n_params {
            return Err(Error::DimensionMismatch {
                expected: n_params,
                actual: params.len(),
            });
        }
        if let Some(g) = grad.as_deref() {
            if g.len() != n_params {
                return Err(Error::DimensionMismatch {
                    expected: n_params,
                    actual: g.len(),
                });
            }
        }
        if points.len() % self.n_inputs != 0 {
            return Err(Error::DimensionMismatch {
                expected: self.n_inputs,
                actual: points.len() % self.n_inputs,
            });
        }
        let n_points = points.len() / self.n_inputs;
        let mut total = 0.0;
        let mut start = 0;
        while start < n_points {
            let pn = (n_points - start).min(self.chunk);
            let chunk_points = &points[start * self.n_inputs..(start + pn) * self.n_inputs];
            self.forward_chunk(params, chunk_points, pn);
            total += self.loss_chunk(start, pn, loss, grad.is_some())?;
            if let Some(g) = grad.as_deref_mut() {
                self.backward_chunk(params, pn, g);
            }
            start += pn;
        }
        Ok(total)
    }

    fn forward_chunk(&mut self, params: &[f64], points: &[f64], pn: usize) {
        let d = self.n_inputs;
        let cols = self.channels * pn;
        {
            let a0 = &mut self.acts[0][..d * cols];
            a0.fill(0.0);
            for p in 0..pn {
                for i in 0..d {
                    a0[i * cols + p] = points[p * d + i];
                    if self.order >= DerivOrder::First {
                        a0[i * cols + (1 + i) * pn + p] = 1.0;
                    }
                }
            }
        }
        let n_layers = self.shapes.len();
        for l in 0..n_layers {
            let s = self.shapes[l];
            let off = self.offsets[l];
            let w = ArrayView2::from_shape((s.fan_out, s.fan_in), &params[off..off + s.n_weights()])
                .expect("weight shape");
            let bias = &params[off + s.n_weights()..off + s.n_params()];
            {
                let a = ArrayView2::from_shape((s.fan_in, cols), &self.acts[l][..s.fan_in * cols])
                    .expect("activation shape");
                let mut z = ArrayViewMut2::from_shape((s.fan_out, cols), &mut self.pre[l][..s.fan_out * cols])
                    .expect("pre-activation shape");
                general_mat_mul(1.0, &w, &a, 0.0, &mut z);
            }
            let z = &mut self.pre[l][..s.fan_out * cols];
            for o in 0..s.fan_out {
                for v in &mut z[o * cols..o * cols + pn] {
                    *v += bias[o];
                }
            }
            if l + 1 < n_layers {
                tanh_forward(
                    &self.pre[l][..s.fan_out * cols],
                    &mut self.acts[l + 1][..s.fan_out * cols],
                    s.fan_out,
                    pn,
                    d,
                    self.order,
                    &self.pairs,
                );
            }
        }
    }

    fn loss_chunk(
        &mut self,
        start: usize,
        pn: usize,
        loss: &mut dyn PointLoss,
        want_adjoint: bool,
    ) -> Result<f64> {
        let d = self.n_inputs;
        let c = self.channels;
        let cols = c * pn;
        let last = self.shapes.len() - 1;
        let n_out = self.shapes[last].fan_out;
        let n_grad = if self.order >= DerivOrder::First { d } else { 0 };
        let n_hess = if self.order == DerivOrder::Second {
            d * (d + 1) / 2
        } else {
            0
        };
        let mut total = 0.0;
        self.adjoint.resize(n_out * c, 0.0);
        if want_adjoint {
            self.bar[..n_out * cols].fill(0.0);
        }
        let mut grad_buf = [0.0f64; 8];
        let mut hess_buf = [0.0f64; 36];
        for p in 0..pn {
            self.jets.clear();
            let z = &self.pre[last];
            for o in 0..n_out {
                let row = &z[o * cols..(o + 1) * cols];
                for i in 0..n_grad {
                    grad_buf[i] = row[(1 + i) * pn + p];
                }
                for k in 0..n_hess {
                    hess_buf[k] = row[(1 + d + k) * pn + p];
                }
                let hess = (n_hess > 0).then_some(&hess_buf[..n_hess]);
                self.jets
                    .push(Jet2::from_components(row[p], &grad_buf[..n_grad], hess));
            }
            self.adjoint.fill(0.0);
            total += loss.point(start + p, &self.jets, &mut self.adjoint)?;
            if want_adjoint {
                for o in 0..n_out {
                    for ch in 0..c {
                        self.bar[o * cols + ch * pn + p] = self.adjoint[o * c + ch];
                    }
                }
            }
        }
        Ok(total)
    }

    fn backward_chunk(&mut self, params: &[f64], pn: usize, grad: &mut [f64]) {
        let cols = self.channels * pn;
        for l in (0..self.shapes.len()).rev() {
            let s = self.shapes[l];
            let off = self.offsets[l];
            {
                let zbar = ArrayView2::from_shape((s.fan_out, cols), &self.bar[..s.fan_out * cols])
                    .expect("adjoint shape");
                let a = ArrayView2::from_shape((s.fan_in, cols), &self.acts[l][..s.fan_in * cols])
                    .expect("activation shape");
                let (wgrad, bgrad) = grad[off..off + s.n_params()].split_at_mut(s.n_weights());
                let mut gw = ArrayViewMut2::from_shape((s.fan_out, s.fan_in), wgrad)
                    .expect("gradient shape");
                general_mat_mul(1.0, &zbar, &a.t(), 1.0, &mut gw);
                for o in 0..s.fan_out {
                    bgrad[o] += self.bar[o * cols..o * cols + pn].iter().sum::<f64>();
                }
            }
            if l == 0 {
                break;
            }
            {
                let w = ArrayView2::from_shape((s.fan_out, s.fan_in), &params[off..off + s.n_weights()])
                    .expect("weight shape");
                let zbar = ArrayView2::from_shape((s.fan_out, cols), &self.bar[..s.fan_out * cols])
                    .expect("adjoint shape");
                let mut abar = ArrayViewMut2::from_shape((s.fan_in, cols), &mut self.bar_next[..s.fan_in * cols])
                    .expect("adjoint shape");
                general_mat_mul(1.0, &w.t(), &zbar, 0.0, &mut abar);
            }
            tanh_backward(
                &mut self.bar_next[..s.fan_in * cols],
                &self.pre[l - 1][..s.fan_in * cols],
                &self.acts[l][..s.fan_in * cols],
                s.fan_in,
                pn,
                self.n_inputs,
                self.order,
                &self.pairs,
            );
            std::mem::swap(&mut self.bar, &mut self.bar_next);
        }
    }
}

/// `h = tanh(z)` propagated through value, gradient and packed Hessian channels.
fn tanh_forward(
    z: &[f64],
    h: &mut [f64],
    rows: usize,
    pn: usize,
    d: usize,
    order: DerivOrder,
    pairs: &[(usize, usize)],
) {
    let cols = z.len() / rows;
    for o in 0..rows {
        let zr = &z[o * cols..(o + 1) * cols];
        let hr = &mut h[o * cols..(o + 1) * cols];
        for p in 0..pn {
            let t = zr[p].tanh();
            let s1 = 1.0 - t * t;
            hr[p] = t;
            if order >= DerivOrder::First {
                for i in 0..d {
                    let k = (1 + i) * pn + p;
                    hr[k] = s1 * zr[k];
                }
            }
            if order == DerivOrder::Second {
                let s2 = -2.0 * t * s1;
                for (k, &(a, b)) in pairs.iter().enumerate() {
                    let idx = (1 + d + k) * pn + p;
                    hr[idx] = s2 * zr[(1 + a) * pn + p] * zr[(1 + b) * pn + p] + s1 * zr[idx];
                }
            }
        }
    }
}

/// Adjoint of [`tanh_forward`]: overwrites `bar` (adjoint of `h`) with the
/// adjoint of `z`.
#[allow(clippy::too_many_arguments)]
fn tanh_backward(
    bar: &mut [f64],
    z: &[f64],
    h: &[f64],
    rows: usize,
    pn: usize,
    d: usize,
    order: DerivOrder,
    pairs: &[(usize, usize)],
) {
    let cols = z.len() / rows;
    let mut gbar = [0.0f64; 8];
    for o in 0..rows {
        let zr = &z[o * cols..(o + 1) * cols];
        let hr = &h[o * cols..(o + 1) * cols];
        let br = &mut bar[o * cols..(o + 1) * cols];
        for p in 0..pn {
            let t = hr[p];
            let s1 = 1.0 - t * t;
            let s2 = -2.0 * t * s1;
            let h0 = br[p];
            let mut s1_bar = 0.0;
            let mut s2_bar = 0.0;
            if order >= DerivOrder::First {
                for i in 0..d {
                    let k = (1 + i) * pn + p;
                    s1_bar += br[k] * zr[k];
                    gbar[i] = s1 * br[k];
                }
            }
            if order == DerivOrder::Second {
                for (k, &(a, b)) in pairs.iter().enumerate() {
                    let idx = (1 + d + k) * pn + p;
                    let hb = br[idx];
                    let za = zr[(1 + a) * pn + p];
                    let zb = zr[(1 + b) * pn + p];
                    s1_bar += hb * zr[idx];
                    s2_bar += hb * za * zb;
                    gbar[a] += s2 * hb * zb;
                    gbar[b] += s2 * hb * za;
                    br[idx] = s1 * hb;
                }
            }
            if order >= DerivOrder::First {
                for i in 0..d {
                    br[(1 + i) * pn + p] = gbar[i];
                }
            }
            let s3 = -2.0 * s1 * (s1 - 2.0 * t * t);
            br[p] = s1 * h0 + s2 * s1_bar + s3 * s2_bar;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{forward_jets_values, init_xavier, Architecture};

    #[test]
    fn chunked_outputs_match_pointwise_jets() {
        let arch = Architecture::uniform(2, 3, 9, 3).unwrap();
        let params = init_xavier(&arch, 8);
        let pts: Vec<f64> = (0..37).flat_map(|k| [0.1 * k as f64, 1.0 - 0.05 * k as f64]).collect();
        for order in [DerivOrder::Zero, DerivOrder::First, DerivOrder::Second] {
            let mut ev = BatchEvaluator::with_chunk(&arch.layer_shapes(), order, 8);
            let mut seen = Vec::new();
            let mut collect = |i: usize, outs: &[Jet2<f64>], _: &mut [f64]| {
                seen.push((i, outs.to_vec()));
                Ok(0.0)
            };
            ev.evaluate(params.as_slice(), &pts, &mut collect, None).unwrap();
            assert_eq!(seen.len(), 37);
            for (i, outs) in seen {
                let reference =
                    forward_jets_values(&params, &arch, &pts[2 * i..2 * i + 2], order).unwrap();
                for (a, b) in outs.iter().zip(&reference) {
                    for (x, y) in a.components().zip(b.components()) {
                        assert!((x - y).abs() <= 1e-13 * (1.0 + y.abs()), "{x} vs {y}");
                    }
                }
            }
        }
    }

    #[test]
    fn sum_of_outputs_gradient_matches_finite_differences() {
        let arch = Architecture::uniform(2, 2, 5, 2).unwrap();
        let params = init_xavier(&arch, 3);
        let pts = [0.3, -0.4, 1.1, 0.2, -0.7, 0.9];
        let loss = |_: usize, outs: &[Jet2<f64>], adj: &mut [f64]| {
            // sum over outputs of every component, each squared
            let c = adj.len() / outs.len();
            let mut s = 0.0;
            for (o, j) in outs.iter().enumerate() {
                for (k, v) in j.components().enumerate() {
                    s += v * v;
                    adj[o * c + k] = 2.0 * v;
                }
            }
            Ok(s)
        };
        let mut ev = BatchEvaluator::with_chunk(&arch.layer_shapes(), DerivOrder::Second, 2);
        let mut g = vec![0.0; params.len()];
        let mut l = loss;
        ev.evaluate(params.as_slice(), &pts, &mut l, Some(&mut g)).unwrap();
        let h = 1e-6;
        for k in 0..params.len() {
            let mut p = params.as_slice().to_vec();
            p[k] += h;
            let fp = ev.evaluate(&p, &pts, &mut l, None).unwrap();
            p[k] -= 2.0 * h;
            let fm = ev.evaluate(&p, &pts, &mut l, None).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-6 * (1.0 + fd.abs()), "param {k}: {fd} vs {}", g[k]);
        }
    }
}
