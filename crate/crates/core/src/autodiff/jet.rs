use smallvec::SmallVec;

use super::Scalar;
use crate::{Error, Result};

/// Highest derivative order carried by a jet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DerivOrder {
    /// Value only.
    Zero,
    /// Value and input gradient.
    First,
    /// Value, input gradient and input Hessian.
    Second,
}

impl DerivOrder {
    /// Number of stored components for `n_inputs` inputs.
    pub fn components(self, n_inputs: usize) -> usize {
        match self {
            DerivOrder::Zero => 1,
            DerivOrder::First => 1 + n_inputs,
            DerivOrder::Second => 1 + n_inputs + n_inputs * (n_inputs + 1) / 2,
        }
    }
}

/// Position of `(i, j)` in packed upper-triangular storage.
#[inline]
pub fn packed_index(i: usize, j: usize, n: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * (2 * n - i + 1) / 2 + (j - i)
}

/// A scalar with its first and second partial derivatives with respect to
/// the network inputs.
///
/// The Hessian is stored once as a packed upper triangle and mirrored on read,
/// so `hess(i, j) == hess(j, i)` holds exactly. A first-order jet carries no
/// Hessian at all; reading one from it panics.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet2<T = f64> {
    value: T,
    grad: SmallVec<[T; 2]>,
    hess: Option<SmallVec<[T; 3]>>,
}

/// Binary jet operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JetOp {
    Add,
    Sub,
    Mul,
    Div,
    Scale,
}

/// Unary jet operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JetFn {
    Tanh,
    Exp,
    Sin,
    Cos,
    Square,
}

/// Right-hand operand of [`jet_arith`].
#[derive(Debug, Clone)]
pub enum Operand<'a, T> {
    Jet(&'a Jet2<T>),
    Real(f64),
}

/// Jet of a constant: zero gradient and Hessian.
pub fn lift_constant(c: f64, n_inputs: usize) -> Result<Jet2<f64>> {
    if n_inputs == 0 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            actual: 0,
        });
    }
    Ok(Jet2::constant_in(c, c, n_inputs, DerivOrder::Second))
}

/// Jet of input coordinate `i`: unit gradient `e_i`, zero Hessian.
pub fn lift_coordinate(x: f64, i: usize, n_inputs: usize) -> Result<Jet2<f64>> {
    Jet2::coordinate_in(x, x, i, n_inputs, DerivOrder::Second)
}

/// Checked binary arithmetic on jets.
pub fn jet_arith<T: Scalar>(op: JetOp, a: &Jet2<T>, b: Operand<'_, T>) -> Result<Jet2<T>> {
    match b {
        Operand::Real(r) => Ok(match op {
            JetOp::Add => a.offset(r),
            JetOp::Sub => a.offset(-r),
            JetOp::Mul | JetOp::Scale => a.scale_real(r),
            JetOp::Div => {
                if r == 0.0 {
                    return Err(Error::SingularOperand);
                }
                a.scale_real(1.0 / r)
            }
        }),
        Operand::Jet(b) => {
            if a.n_inputs() != b.n_inputs() {
                return Err(Error::DimensionMismatch {
                    expected: a.n_inputs(),
                    actual: b.n_inputs(),
                });
            }
            match op {
                JetOp::Add => Ok(a.add(b)),
                JetOp::Sub => Ok(a.sub(b)),
                JetOp::Div => a.try_div(b),
                // scaling by a jet is a product
                JetOp::Mul | JetOp::Scale => Ok(a.mul(b)),
            }
        }
    }
}

/// Apply an elementary function to a jet.
pub fn jet_unary<T: Scalar>(op: JetFn, a: &Jet2<T>) -> Jet2<T> {
    match op {
        JetFn::Tanh => a.tanh(),
        JetFn::Exp => a.exp(),
        JetFn::Sin => a.sin(),
        JetFn::Cos => a.cos(),
        JetFn::Square => a.square(),
    }
}

impl<T: Scalar> Jet2<T> {
    /// Constant jet in the arithmetic context of `anchor`.
    pub fn constant_in(anchor: T, c: f64, n_inputs: usize, order: DerivOrder) -> Self {
        let zero = anchor.constant_like(0.0);
        let value = anchor.constant_like(c);
        Self::from_parts(value, zero, n_inputs, order)
    }

    /// Coordinate jet in the arithmetic context of `anchor`.
    pub fn coordinate_in(
        anchor: T,
        x: f64,
        i: usize,
        n_inputs: usize,
        order: DerivOrder,
    ) -> Result<Self> {
        if i >= n_inputs {
            return Err(Error::IndexOutOfRange { index: i, n_inputs });
        }
        let zero = anchor.constant_like(0.0);
        let mut jet = Self::from_parts(anchor.constant_like(x), zero, n_inputs, order);
        if order >= DerivOrder::First {
            jet.grad[i] = anchor.constant_like(1.0);
        }
        Ok(jet)
    }

    fn from_parts(value: T, zero: T, n_inputs: usize, order: DerivOrder) -> Self {
        let n_grad = if order >= DerivOrder::First {
            n_inputs
        } else {
            0
        };
        let hess = (order == DerivOrder::Second)
            .then(|| std::iter::repeat_n(zero, n_inputs * (n_inputs + 1) / 2).collect());
        Jet2 {
            value,
            grad: std::iter::repeat_n(zero, n_grad).collect(),
            hess,
        }
    }

    /// Build from explicit components. `hess` is packed upper-triangular.
    pub fn from_components(value: T, grad: &[T], hess: Option<&[T]>) -> Self {
        if let Some(h) = hess {
            assert_eq!(h.len(), grad.len() * (grad.len() + 1) / 2);
        }
        Jet2 {
            value,
            grad: grad.iter().copied().collect(),
            hess: hess.map(|h| h.iter().copied().collect()),
        }
    }

    #[inline]
    pub fn value(&self) -> T {
        self.value
    }

    #[inline]
    pub fn n_inputs(&self) -> usize {
        self.grad.len()
    }

    pub fn order(&self) -> DerivOrder {
        if self.hess.is_some() {
            DerivOrder::Second
        } else if self.grad.is_empty() {
            DerivOrder::Zero
        } else {
            DerivOrder::First
        }
    }

    #[inline]
    pub fn grad(&self, i: usize) -> T {
        self.grad[i]
    }

    pub fn grad_slice(&self) -> &[T] {
        &self.grad
    }

    /// `∂²/∂x_i∂x_j`. Panics on a jet propagated without second order.
    #[inline]
    pub fn hess(&self, i: usize, j: usize) -> T {
        let n = self.n_inputs();
        self.hess.as_ref().expect("jet carries no second derivatives")[packed_index(i, j, n)]
    }

    pub fn hess_packed(&self) -> Option<&[T]> {
        self.hess.as_deref()
    }

    /// Apply `f` to every component.
    pub fn map<U: Copy>(&self, mut f: impl FnMut(T) -> U) -> Jet2<U> {
        Jet2 {
            value: f(self.value),
            grad: self.grad.iter().map(|&g| f(g)).collect(),
            hess: self.hess.as_ref().map(|h| h.iter().map(|&x| f(x)).collect()),
        }
    }

    /// All components in storage order: value, gradient, packed Hessian.
    pub fn components(&self) -> impl Iterator<Item = T> + '_ {
        std::iter::once(self.value)
            .chain(self.grad.iter().copied())
            .chain(self.hess.iter().flatten().copied())
    }

    fn zip_hess(
        a: &Option<SmallVec<[T; 3]>>,
        b: &Option<SmallVec<[T; 3]>>,
        f: impl Fn(T, T) -> T,
    ) -> Option<SmallVec<[T; 3]>> {
        match (a, b) {
            (Some(a), Some(b)) => Some(a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()),
            _ => None,
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.n_inputs(), other.n_inputs());
        Jet2 {
            value: self.value + other.value,
            grad: self
                .grad
                .iter()
                .zip(&other.grad)
                .map(|(&a, &b)| a + b)
                .collect(),
            hess: Self::zip_hess(&self.hess, &other.hess, |a, b| a + b),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.n_inputs(), other.n_inputs());
        Jet2 {
            value: self.value - other.value,
            grad: self
                .grad
                .iter()
                .zip(&other.grad)
                .map(|(&a, &b)| a - b)
                .collect(),
            hess: Self::zip_hess(&self.hess, &other.hess, |a, b| a - b),
        }
    }

    pub fn neg(&self) -> Self {
        self.map(|x| -x)
    }

    /// Product rule: `(ab)'' = a''b + a'b'ᵀ + b'a'ᵀ + ab''`.
    pub fn mul(&self, other: &Self) -> Self {
        let n = self.n_inputs();
        assert_eq!(n, other.n_inputs());
        let (a, b) = (self.value, other.value);
        let hess = match (&self.hess, &other.hess) {
            (Some(ha), Some(hb)) => {
                let mut h = SmallVec::with_capacity(ha.len());
                for i in 0..n {
                    for j in i..n {
                        let k = packed_index(i, j, n);
                        h.push(
                            ha[k] * b
                                + self.grad[i] * other.grad[j]
                                + other.grad[i] * self.grad[j]
                                + a * hb[k],
                        );
                    }
                }
                Some(h)
            }
            _ => None,
        };
        Jet2 {
            value: a * b,
            grad: self
                .grad
                .iter()
                .zip(&other.grad)
                .map(|(&ga, &gb)| ga * b + a * gb)
                .collect(),
            hess,
        }
    }

    pub fn try_div(&self, other: &Self) -> Result<Self> {
        if other.value.value() == 0.0 {
            return Err(Error::SingularOperand);
        }
        Ok(self.mul(&other.recip()))
    }

    fn recip(&self) -> Self {
        let inv = self.value.constant_like(1.0) / self.value;
        let d1 = -(inv * inv);
        let d2 = inv * inv * inv * 2.0;
        self.chain(inv, d1, d2)
    }

    /// Multiply every component by a tracked scalar.
    pub fn scale(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    pub fn scale_real(&self, s: f64) -> Self {
        self.map(|x| x * s)
    }

    /// Add a real constant to the value component.
    pub fn offset(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.value = out.value + c;
        out
    }

    /// Chain rule for `f(a)` given `f(a)`, `f'(a)`, `f''(a)`.
    pub fn chain(&self, f: T, d1: T, d2: T) -> Self {
        let n = self.n_inputs();
        let hess = self.hess.as_ref().map(|h| {
            let mut out = SmallVec::with_capacity(h.len());
            for i in 0..n {
                for j in i..n {
                    out.push(d2 * self.grad[i] * self.grad[j] + d1 * h[packed_index(i, j, n)]);
                }
            }
            out
        });
        Jet2 {
            value: f,
            grad: self.grad.iter().map(|&g| d1 * g).collect(),
            hess,
        }
    }

    pub fn tanh(&self) -> Self {
        let t = self.value.tanh();
        let d1 = -(t * t) + 1.0;
        let d2 = t * d1 * -2.0;
        self.chain(t, d1, d2)
    }

    pub fn exp(&self) -> Self {
        let e = self.value.exp();
        self.chain(e, e, e)
    }

    pub fn sin(&self) -> Self {
        let s = self.value.sin();
        let c = self.value.cos();
        self.chain(s, c, -s)
    }

    pub fn cos(&self) -> Self {
        let s = self.value.sin();
        let c = self.value.cos();
        self.chain(c, -s, -c)
    }

    pub fn square(&self) -> Self {
        self.mul(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_jet(j: &Jet2, value: f64, grad: &[f64], hess: &[f64]) {
        assert!((j.value() - value).abs() < 1e-15, "value {}", j.value());
        for (a, b) in j.grad_slice().iter().zip(grad) {
            assert!((a - b).abs() < 1e-15, "grad {a} vs {b}");
        }
        for (a, b) in j.hess_packed().unwrap().iter().zip(hess) {
            assert!((a - b).abs() < 1e-15, "hess {a} vs {b}");
        }
    }

    #[test]
    fn packed_layout() {
        assert_eq!(packed_index(0, 0, 2), 0);
        assert_eq!(packed_index(0, 1, 2), 1);
        assert_eq!(packed_index(1, 0, 2), 1);
        assert_eq!(packed_index(1, 1, 2), 2);
        let mut seen = Vec::new();
        for i in 0..4 {
            for j in i..4 {
                seen.push(packed_index(i, j, 4));
            }
        }
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn constant_lifts() {
        assert_jet(&lift_constant(3.0, 2).unwrap(), 3.0, &[0.0, 0.0], &[0.0; 3]);
        assert_jet(&lift_constant(0.0, 1).unwrap(), 0.0, &[0.0], &[0.0]);
        let j = lift_constant(-1.5, 3).unwrap();
        assert_jet(&j, -1.5, &[0.0; 3], &[0.0; 6]);
        assert!(lift_constant(1.0, 0).is_err());
    }

    #[test]
    fn coordinate_lifts() {
        assert_jet(&lift_coordinate(0.7, 0, 2).unwrap(), 0.7, &[1.0, 0.0], &[0.0; 3]);
        assert_jet(&lift_coordinate(0.0, 1, 2).unwrap(), 0.0, &[0.0, 1.0], &[0.0; 3]);
        assert_jet(&lift_coordinate(4.0, 0, 1).unwrap(), 4.0, &[1.0], &[0.0]);
        assert!(matches!(
            lift_coordinate(1.0, 2, 2),
            Err(Error::IndexOutOfRange { index: 2, n_inputs: 2 })
        ));
    }

    #[test]
    fn product_rule_along_shared_coordinate() {
        let a = lift_coordinate(2.0, 0, 1).unwrap();
        let b = lift_coordinate(3.0, 0, 1).unwrap();
        let p = jet_arith(JetOp::Mul, &a, Operand::Jet(&b)).unwrap();
        assert_jet(&p, 6.0, &[5.0], &[2.0]);
    }

    #[test]
    fn add_zero_is_identity() {
        let j = lift_coordinate(0.3, 1, 2).unwrap().tanh().exp();
        let z = lift_constant(0.0, 2).unwrap();
        assert_eq!(jet_arith(JetOp::Add, &j, Operand::Jet(&z)).unwrap(), j);
    }

    #[test]
    fn reciprocal_at_two() {
        let one = lift_constant(1.0, 1).unwrap();
        let x = lift_coordinate(2.0, 0, 1).unwrap();
        let q = jet_arith(JetOp::Div, &one, Operand::Jet(&x)).unwrap();
        assert_jet(&q, 0.5, &[-0.25], &[0.25]);
        let zero = lift_constant(0.0, 1).unwrap();
        assert!(matches!(
            jet_arith(JetOp::Div, &one, Operand::Jet(&zero)),
            Err(Error::SingularOperand)
        ));
        assert!(matches!(
            jet_arith(JetOp::Div, &one, Operand::Real(0.0)),
            Err(Error::SingularOperand)
        ));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let a = lift_coordinate(1.0, 0, 1).unwrap();
        let b = lift_coordinate(1.0, 0, 2).unwrap();
        assert!(matches!(
            jet_arith(JetOp::Add, &a, Operand::Jet(&b)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn unary_at_origin() {
        for i in 0..2 {
            let x = lift_coordinate(0.0, i, 2).unwrap();
            let mut e = [0.0; 2];
            e[i] = 1.0;
            assert_jet(&jet_unary(JetFn::Tanh, &x), 0.0, &e, &[0.0; 3]);
            assert_jet(&jet_unary(JetFn::Sin, &x), 0.0, &e, &[0.0; 3]);
            let mut h = [0.0; 3];
            h[packed_index(i, i, 2)] = 1.0;
            assert_jet(&jet_unary(JetFn::Exp, &x), 1.0, &e, &h);
        }
    }

    #[test]
    fn chain_matches_closed_forms() {
        // f(x, y) = cos(x·y)² at (0.3, -0.8)
        let (x0, y0) = (0.3, -0.8);
        let x = lift_coordinate(x0, 0, 2).unwrap();
        let y = lift_coordinate(y0, 1, 2).unwrap();
        let f = jet_unary(JetFn::Square, &x.mul(&y).cos());
        let p: f64 = x0 * y0;
        // f = cos²(p), df/dp = -sin(2p), d²f/dp² = -2cos(2p)
        let fp = -(2.0 * p).sin();
        let fpp = -2.0 * (2.0 * p).cos();
        assert!((f.value() - p.cos().powi(2)).abs() < 1e-15);
        assert!((f.grad(0) - fp * y0).abs() < 1e-14);
        assert!((f.grad(1) - fp * x0).abs() < 1e-14);
        assert!((f.hess(0, 0) - fpp * y0 * y0).abs() < 1e-14);
        assert!((f.hess(1, 1) - fpp * x0 * x0).abs() < 1e-14);
        assert!((f.hess(0, 1) - (fpp * x0 * y0 + fp)).abs() < 1e-14);
        assert_eq!(f.hess(0, 1), f.hess(1, 0));
    }

    #[test]
    fn first_order_jets_drop_hessian() {
        let x = Jet2::coordinate_in(0.5, 0.5, 0, 2, DerivOrder::First).unwrap();
        let y = x.tanh().mul(&x);
        assert_eq!(y.order(), DerivOrder::First);
        assert!(y.hess_packed().is_none());
        let z = y.add(&lift_constant(1.0, 2).unwrap());
        assert_eq!(z.order(), DerivOrder::First);
    }
}
