//! Finite-difference self-test of input derivatives and parameter gradients.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{parameter_gradient, DerivOrder, Tape, TrackedParameters};
use crate::loss::{pde_loss, Benchmark};
use crate::network::{forward, forward_generic, init_xavier, Architecture, Parameters};
use crate::sampling::PointSet;
use crate::Result;

/// Denominator floor of [`relative_error`].
pub const REL_FLOOR: f64 = 1e-4;
/// Parameters probed per draw.
pub const PARAMS_PER_DRAW: usize = 12;

/// `|a − b| / max(|a|, |b|, REL_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Worst relative errors over all draws.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FdReport {
    pub draws: usize,
    pub first_order: f64,
    pub second_order: f64,
    pub param_grad: f64,
}

impl FdReport {
    pub fn passes(&self, first_tol: f64, second_tol: f64) -> bool {
        self.first_order <= first_tol && self.param_grad <= first_tol && self.second_order <= second_tol
    }
}

// Richardson-extrapolated central differences, fourth-order accurate.
fn d1(f: &mut impl FnMut(f64) -> Result<f64>, h: f64) -> Result<f64> {
    let c = |f: &mut dyn FnMut(f64) -> Result<f64>, h: f64| -> Result<f64> { Ok((f(h)? - f(-h)?) / (2.0 * h)) };
    let a = c(f, h)?;
    let b = c(f, h / 2.0)?;
    Ok((4.0 * b - a) / 3.0)
}

fn outputs_at(params: &Parameters, arch: &Architecture, p: &[f64]) -> Result<Vec<f64>> {
    forward(params, arch, p)
}

fn check_inputs(params: &Parameters, arch: &Architecture, point: &[f64], report: &mut FdReport) -> Result<()> {
    let jets = forward_generic(params.as_slice(), params.shapes(), point, DerivOrder::Second)?;
    let n = point.len();
    let h = 1e-3;
    for (k, jet) in jets.iter().enumerate() {
        for i in 0..n {
            let mut f = |d: f64| {
                let mut q = point.to_vec();
                q[i] += d;
                Ok(outputs_at(params, arch, &q)?[k])
            };
            report.first_order = report.first_order.max(relative_error(jet.grad(i), d1(&mut f, h)?));
            for j in 0..n {
                // derivative along j of the exact first derivative along i
                let mut g = |d: f64| {
                    let mut q = point.to_vec();
                    q[j] += d;
                    let jets = forward_generic(params.as_slice(), params.shapes(), &q, DerivOrder::First)?;
                    Ok(jets[k].grad(i))
                };
                report.second_order = report.second_order.max(relative_error(jet.hess(i, j), d1(&mut g, h)?));
            }
        }
    }
    Ok(())
}

fn check_params(
    params: &Parameters,
    arch: &Architecture,
    benchmark: Benchmark,
    point: &[f64],
    rng: &mut ChaCha8Rng,
    report: &mut FdReport,
) -> Result<()> {
    let set = PointSet::from_coords(point.len(), point.to_vec())?;
    let kernel = benchmark.kernel();
    let consts = benchmark.constants();
    let tape = Tape::new();
    let tracked = TrackedParameters::new(&tape, params);
    let loss = pde_loss(tracked.vars(), arch, &set, kernel, &consts)?;
    let grad = parameter_gradient(loss, &tracked)?;
    let mut w = params.as_slice().to_vec();
    for idx in sample(rng, w.len(), PARAMS_PER_DRAW.min(w.len())) {
        let base = w[idx];
        let h = 1e-3 * base.abs().max(1e-1);
        let mut f = |d: f64| {
            w[idx] = base + d;
            let v = pde_loss(&w, arch, &set, kernel, &consts);
            w[idx] = base;
            v
        };
        report.param_grad = report.param_grad.max(relative_error(grad[idx], d1(&mut f, h)?));
    }
    Ok(())
}

/// Compare jets and tape gradients against finite differences over `draws`
/// random (architecture, parameters, point) draws, alternating between the
/// channel-flow and Burgers networks.
pub fn fd_self_test(draws: usize, seed: u64) -> Result<FdReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = FdReport::default();
    let cases = [
        (Benchmark::CylinderForward, Architecture::uniform(2, 4, 20, 6)?),
        (Benchmark::Burgers, Architecture::burgers()),
        (Benchmark::CylinderForward, Architecture::cylinder()),
        (Benchmark::Burgers, Architecture::uniform(2, 4, 20, 1)?),
    ];
    for d in 0..draws {
        let (benchmark, arch) = &cases[d % cases.len()];
        let params = init_xavier(arch, rng.random());
        let geometry = benchmark.geometry();
        let point: Vec<f64> = loop {
            let p: Vec<f64> = geometry.bounds().iter().map(|&(lo, hi)| rng.random_range(lo..hi)).collect();
            if geometry.contains(&p) {
                break p;
            }
        };
        check_inputs(&params, arch, &point, &mut report)?;
        check_params(&params, arch, *benchmark, &point, &mut rng, &mut report)?;
        report.draws += 1;
    }
    Ok(report)
}
