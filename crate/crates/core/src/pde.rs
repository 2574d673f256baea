//! Residual kernels and analytic fields.
//!
//! Input ordering is `(x, y)` for the channel flow and `(x, t)` for Burgers.
//! Channel-flow network outputs are ordered `(u, v, p, σxx, σxy, σyy)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::autodiff::{lift_coordinate, DerivOrder, Jet2, Scalar};
use crate::{Error, Result};

pub const U: usize = 0;
pub const V: usize = 1;
pub const P: usize = 2;
pub const SXX: usize = 3;
pub const SXY: usize = 4;
pub const SYY: usize = 5;

/// Channel height in meters.
pub const CHANNEL_HEIGHT: f64 = 0.4;
/// Burgers viscosity baked into the exact solution.
pub const BURGERS_MU: f64 = 0.01;
/// Spatial extent of the Burgers domain.
pub const BURGERS_X: (f64, f64) = (0.0, 4.0);
/// Time extent of the Burgers domain.
pub const BURGERS_T: (f64, f64) = (0.0, 5.0);

/// Density (kg/m³) and dynamic viscosity (kg/(m·s)).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluidConstants {
    pub rho: f64,
    pub mu: f64,
}

impl FluidConstants {
    pub fn new(rho: f64, mu: f64) -> Result<Self> {
        let c = FluidConstants { rho, mu };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) {
            return Err(Error::config("rho", "must be positive"));
        }
        if !(self.mu > 0.0) {
            return Err(Error::config("mu", "must be positive"));
        }
        Ok(())
    }

    pub fn cylinder() -> Self {
        FluidConstants { rho: 1.0, mu: 0.02 }
    }

    pub fn burgers() -> Self {
        FluidConstants {
            rho: 1.0,
            mu: BURGERS_MU,
        }
    }
}

/// Pointwise residual components `f_0..f_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualVector<T = f64> {
    pub components: SmallVec<[T; 6]>,
}

impl<T: Scalar> ResidualVector<T> {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// `Σ f_k²`.
    pub fn sum_of_squares(&self) -> T {
        let mut it = self.components.iter();
        let first = *it.next().expect("non-empty residual");
        it.fold(first * first, |acc, &f| acc + f * f)
    }

    pub fn values(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.value()).collect()
    }
}

/// PDE whose residual a network is trained against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    /// Steady incompressible Navier-Stokes, mixed velocity-pressure-stress form.
    NavierStokes,
    Burgers,
}

impl Kernel {
    pub fn n_outputs(self) -> usize {
        match self {
            Kernel::NavierStokes => 6,
            Kernel::Burgers => 1,
        }
    }

    /// Highest input-derivative order the residual reads.
    pub fn order(self) -> DerivOrder {
        match self {
            Kernel::NavierStokes => DerivOrder::First,
            Kernel::Burgers => DerivOrder::Second,
        }
    }

    pub fn residual<T: Scalar>(
        self,
        outputs: &[Jet2<T>],
        consts: &FluidConstants,
    ) -> Result<ResidualVector<T>> {
        match self {
            Kernel::NavierStokes => ns_residuals(outputs, consts),
            Kernel::Burgers => {
                if outputs.len() != 1 {
                    return Err(Error::DimensionMismatch {
                        expected: 1,
                        actual: outputs.len(),
                    });
                }
                burgers_residual(&outputs[0], consts)
            }
        }
    }
}

fn check_jets<T: Scalar>(jets: &[Jet2<T>], count: usize, order: DerivOrder) -> Result<()> {
    if jets.len() != count {
        return Err(Error::DimensionMismatch {
            expected: count,
            actual: jets.len(),
        });
    }
    for j in jets {
        if j.n_inputs() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                actual: j.n_inputs(),
            });
        }
        if j.order() < order {
            return Err(Error::DimensionMismatch {
                expected: order.components(2),
                actual: j.order().components(2),
            });
        }
    }
    Ok(())
}

/// Continuity, two momentum and three constitutive residuals.
///
/// ```text
/// f0 = u_x + v_y
/// f1 = ρ(u u_x + v u_y) − ∂σxx/∂x − ∂σxy/∂y
/// f2 = ρ(u v_x + v v_y) − ∂σxy/∂x − ∂σyy/∂y
/// f3 = σxx + p − 2μ u_x
/// f4 = σyy + p − 2μ v_y
/// f5 = σxy − μ(u_y + v_x)
/// ```
///
/// Reads first-order jet components only.
pub fn ns_residuals<T: Scalar>(
    outputs: &[Jet2<T>],
    consts: &FluidConstants,
) -> Result<ResidualVector<T>> {
    check_jets(outputs, 6, DerivOrder::First)?;
    let (rho, mu) = (consts.rho, consts.mu);
    let u = outputs[U].value();
    let v = outputs[V].value();
    let p = outputs[P].value();
    let (u_x, u_y) = (outputs[U].grad(0), outputs[U].grad(1));
    let (v_x, v_y) = (outputs[V].grad(0), outputs[V].grad(1));
    let sxx = &outputs[SXX];
    let sxy = &outputs[SXY];
    let syy = &outputs[SYY];

    let f0 = u_x + v_y;
    let f1 = (u * u_x + v * u_y) * rho - sxx.grad(0) - sxy.grad(1);
    let f2 = (u * v_x + v * v_y) * rho - sxy.grad(0) - syy.grad(1);
    let f3 = sxx.value() + p - u_x * (2.0 * mu);
    let f4 = syy.value() + p - v_y * (2.0 * mu);
    let f5 = sxy.value() - (u_y + v_x) * mu;
    Ok(ResidualVector {
        components: SmallVec::from_buf([f0, f1, f2, f3, f4, f5]),
    })
}

/// `f0 = u_t + u u_x − μ u_xx` for a jet over inputs `(x, t)`.
pub fn burgers_residual<T: Scalar>(
    output: &Jet2<T>,
    consts: &FluidConstants,
) -> Result<ResidualVector<T>> {
    check_jets(std::slice::from_ref(output), 1, DerivOrder::Second)?;
    let u = output.value();
    let f0 = output.grad(1) + u * output.grad(0) - output.hess(0, 0) * consts.mu;
    let mut components = SmallVec::new();
    components.push(f0);
    Ok(ResidualVector { components })
}

/// Exact viscous Burgers solution on the benchmark domain.
pub fn burgers_exact(x: f64, t: f64) -> Result<f64> {
    let e = (-BURGERS_MU * PI * PI * (t - 5.0)).exp();
    let den = 2.0 + (PI * x).cos() * e;
    if den.abs() < 1e-12 {
        return Err(Error::SingularDenominator);
    }
    Ok(2.0 * BURGERS_MU * PI * (PI * x).sin() * e / den)
}

/// Exact solution as a second-order jet at `(x, t)`.
pub fn burgers_exact_jet(x: f64, t: f64) -> Result<Jet2<f64>> {
    let xj = lift_coordinate(x, 0, 2)?;
    let tj = lift_coordinate(t, 1, 2)?;
    let e = tj.offset(-5.0).scale_real(-BURGERS_MU * PI * PI).exp();
    let px = xj.scale_real(PI);
    let num = px.sin().mul(&e).scale_real(2.0 * BURGERS_MU * PI);
    let den = px.cos().mul(&e).offset(2.0);
    num.try_div(&den)
}

/// Parabolic inlet profile `u(y) = 4y(0.4 − y)/0.4²`.
pub fn inlet_velocity(y: f64) -> Result<f64> {
    if !(0.0..=CHANNEL_HEIGHT).contains(&y) {
        return Err(Error::OutOfDomain {
            what: "y",
            value: y,
            min: 0.0,
            max: CHANNEL_HEIGHT,
        });
    }
    Ok(4.0 * y * (CHANNEL_HEIGHT - y) / (CHANNEL_HEIGHT * CHANNEL_HEIGHT))
}

/// Initial condition `u(x, 0)` of the Burgers benchmark.
pub fn burgers_initial(x: f64) -> Result<f64> {
    if !(BURGERS_X.0..=BURGERS_X.1).contains(&x) {
        return Err(Error::OutOfDomain {
            what: "x",
            value: x,
            min: BURGERS_X.0,
            max: BURGERS_X.1,
        });
    }
    burgers_exact(x, 0.0)
}
