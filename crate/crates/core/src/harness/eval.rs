//! Solution quality reports.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::loss::{boundary_mse, pointwise_residuals, Benchmark};
use crate::network::{forward, Architecture, Parameters};
use crate::pde::{self, burgers_exact, inlet_velocity};
use crate::sampling::{lhs_sample, sample_boundary, Segment};
use crate::Result;

/// Grid resolution per axis for the Burgers comparison.
pub const BURGERS_GRID: usize = 200;
/// Inlet points for the inverse R².
pub const INLET_POINTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    pub seed: u64,
    pub heldout_points: usize,
    pub boundary_points: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            seed: 12345,
            heldout_points: 1000,
            boundary_points: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct EvalReport {
    pub relative_l2: Option<f64>,
    pub max_error: Option<f64>,
    pub r_squared: Option<f64>,
    pub boundary_mse: BTreeMap<Segment, f64>,
    pub mean_residual: Option<f64>,
}

impl EvalReport {
    /// Headline number for summaries.
    pub fn headline(&self) -> Option<(&'static str, f64)> {
        if let Some(v) = self.relative_l2 {
            Some(("relative_l2", v))
        } else if let Some(v) = self.r_squared {
            Some(("r_squared", v))
        } else {
            self.mean_residual.map(|v| ("mean_residual", v))
        }
    }
}

/// Coefficient of determination of `pred` against `truth`.
pub fn r_squared(pred: &[f64], truth: &[f64]) -> f64 {
    let n = truth.len() as f64;
    let mean = truth.iter().sum::<f64>() / n;
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

fn linspace(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
}

/// Relative L2 and max error of any field against the exact Burgers solution.
pub fn burgers_errors(mut u: impl FnMut(f64, f64) -> Result<f64>) -> Result<(f64, f64)> {
    let (mut num, mut den, mut max) = (0.0, 0.0, 0.0f64);
    for x in linspace(pde::BURGERS_X.0, pde::BURGERS_X.1, BURGERS_GRID) {
        for t in linspace(pde::BURGERS_T.0, pde::BURGERS_T.1, BURGERS_GRID) {
            let e = burgers_exact(x, t)?;
            let d = u(x, t)? - e;
            num += d * d;
            den += e * e;
            max = max.max(d.abs());
        }
    }
    Ok(((num / den).sqrt(), max))
}

/// Error report appropriate to `benchmark`.
pub fn evaluate_solution(
    params: &Parameters,
    arch: &Architecture,
    benchmark: Benchmark,
    options: &EvalOptions,
) -> Result<EvalReport> {
    params.check(arch)?;
    let mut report = EvalReport::default();
    match benchmark {
        Benchmark::Burgers => {
            let (l2, max) = burgers_errors(|x, t| Ok(forward(params, arch, &[x, t])?[0]))?;
            report.relative_l2 = Some(l2);
            report.max_error = Some(max);
        }
        Benchmark::CylinderInverse => {
            let ys: Vec<f64> = linspace(0.0, pde::CHANNEL_HEIGHT, INLET_POINTS).collect();
            let truth = ys.iter().map(|&y| inlet_velocity(y)).collect::<Result<Vec<_>>>()?;
            let pred = crate::loss::inlet_profile(params, arch, &ys)?;
            report.r_squared = Some(r_squared(&pred, &truth));
        }
        Benchmark::CylinderForward => {
            let geometry = benchmark.geometry();
            let counts: Vec<_> = geometry
                .boundary_segments()
                .iter()
                .map(|&s| (s, options.boundary_points))
                .collect();
            let boundary = sample_boundary(&geometry, &counts, options.seed)?;
            for &(s, _) in &counts {
                let v = boundary_mse(params.as_slice(), arch, &boundary.filter_segment(s))?;
                report.boundary_mse.insert(s, v);
            }
            let held = lhs_sample(&geometry, options.heldout_points, options.seed.wrapping_add(1), 0.0)?;
            let r = pointwise_residuals(params, arch, benchmark.kernel(), &benchmark.constants(), &held)?;
            report.mean_residual = Some(r.iter().map(|v| v.sqrt()).sum::<f64>() / r.len() as f64);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::init_xavier;

    #[test]
    fn exact_field_has_zero_error() {
        let (l2, max) = burgers_errors(burgers_exact).unwrap();
        assert_eq!(l2, 0.0);
        assert_eq!(max, 0.0);
    }

    #[test]
    fn constant_predictor_r2_not_positive() {
        let ys: Vec<f64> = linspace(0.0, 0.4, 100).collect();
        let truth: Vec<f64> = ys.iter().map(|&y| inlet_velocity(y).unwrap()).collect();
        for c in [0.0, 0.5, 2.0 / 3.0, 1.0] {
            assert!(r_squared(&vec![c; 100], &truth) <= 1e-12);
        }
        assert!((r_squared(&truth, &truth) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn reports_per_benchmark() {
        let a = Architecture::uniform(2, 2, 5, 1).unwrap();
        let r = evaluate_solution(&init_xavier(&a, 0), &a, Benchmark::Burgers, &EvalOptions::default())
            .unwrap();
        assert!(r.relative_l2.unwrap() > 0.0);
        let a6 = Architecture::uniform(2, 2, 5, 6).unwrap();
        let opts = EvalOptions {
            heldout_points: 50,
            boundary_points: 10,
            ..Default::default()
        };
        let p = init_xavier(&a6, 0);
        let f = evaluate_solution(&p, &a6, Benchmark::CylinderForward, &opts).unwrap();
        assert_eq!(f.boundary_mse.len(), 4);
        assert!(f.mean_residual.unwrap() > 0.0);
        let i = evaluate_solution(&p, &a6, Benchmark::CylinderInverse, &opts).unwrap();
        assert!(i.r_squared.is_some());
    }
}
