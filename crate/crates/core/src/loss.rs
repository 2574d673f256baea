//! Loss terms and their composition per benchmark and phase.
//!
//! Every term is a mean over its own point set. Two routes compute the same
//! quantities: generic functions over any [`Scalar`] (used with tape variables
//! as the reference gradient) and [`LossEvaluator`], which runs batched jets
//! with a layer-level adjoint and is what training uses.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{DerivOrder, Jet2, Scalar, Tape};
use crate::network::BatchEvaluator;
use crate::network::forward_generic;
use crate::network::{Architecture, LayerShape, Parameters};
use crate::pde::{self, FluidConstants, Kernel};
use crate::sampling::{Geometry, Label, PointSet, Segment};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Benchmark {
    CylinderForward,
    CylinderInverse,
    Burgers,
}

impl Benchmark {
    pub const ALL: [Benchmark; 3] = [
        Benchmark::CylinderForward,
        Benchmark::CylinderInverse,
        Benchmark::Burgers,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Benchmark::CylinderForward => "cylinder_forward",
            Benchmark::CylinderInverse => "cylinder_inverse",
            Benchmark::Burgers => "burgers",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.name() == s)
    }

    pub fn kernel(self) -> Kernel {
        match self {
            Benchmark::Burgers => Kernel::Burgers,
            _ => Kernel::NavierStokes,
        }
    }

    pub fn geometry(self) -> Geometry {
        match self {
            Benchmark::Burgers => Geometry::burgers(),
            _ => Geometry::channel(),
        }
    }

    pub fn constants(self) -> FluidConstants {
        match self {
            Benchmark::Burgers => FluidConstants::burgers(),
            _ => FluidConstants::cylinder(),
        }
    }

    pub fn output_names(self) -> &'static [&'static str] {
        match self {
            Benchmark::Burgers => &["u"],
            _ => &["u", "v", "p", "sigma_xx", "sigma_xy", "sigma_yy"],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Reduced term set, unit weights.
    Primary,
    /// All terms, boundary terms weighted by λ.
    Complete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Pde,
    Wall,
    Inlet,
    Cylinder,
    OutletPressure,
    InverseData,
    Initial,
    /// `u(0, t) = 0`.
    Left,
    /// `u(4, t) = 0`.
    Right,
}

impl Term {
    /// Boundary segment the term reads, if any.
    pub fn segment(self) -> Option<Segment> {
        match self {
            Term::Wall => Some(Segment::Wall),
            Term::Inlet => Some(Segment::Inlet),
            Term::Cylinder => Some(Segment::Cylinder),
            Term::OutletPressure => Some(Segment::Outlet),
            Term::Initial => Some(Segment::Initial),
            Term::Left => Some(Segment::Left),
            Term::Right => Some(Segment::Right),
            Term::Pde | Term::InverseData => None,
        }
    }
}

/// Term registry.
pub fn term_set(benchmark: Benchmark, phase: Phase) -> &'static [Term] {
    use Term::*;
    match (benchmark, phase) {
        (Benchmark::CylinderForward, Phase::Complete) => &[Pde, Wall, Inlet, Cylinder, OutletPressure],
        (Benchmark::CylinderInverse, Phase::Complete) => {
            &[Pde, Wall, InverseData, Cylinder, OutletPressure]
        }
        (Benchmark::Burgers, Phase::Complete) => &[Pde, Initial, Left, Right],
        (Benchmark::CylinderForward, Phase::Primary) => &[Pde, Wall, Inlet],
        (Benchmark::CylinderInverse, Phase::Primary) => &[Pde, Wall, InverseData],
        (Benchmark::Burgers, Phase::Primary) => &[Pde, Left],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub benchmark: Benchmark,
    pub phase: Phase,
    pub lambda: f64,
}

impl LossSpec {
    pub fn new(benchmark: Benchmark, phase: Phase, lambda: f64) -> Result<Self> {
        let s = LossSpec {
            benchmark,
            phase,
            lambda,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn primary(benchmark: Benchmark) -> Self {
        LossSpec {
            benchmark,
            phase: Phase::Primary,
            lambda: 1.0,
        }
    }

    pub fn complete(benchmark: Benchmark, lambda: f64) -> Result<Self> {
        Self::new(benchmark, Phase::Complete, lambda)
    }

    /// λ must be finite and non-negative; zero leaves only the PDE term.
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::config("lambda", "must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn terms(&self) -> &'static [Term] {
        term_set(self.benchmark, self.phase)
    }

    /// Factor applied to the non-PDE terms.
    pub fn boundary_weight(&self) -> f64 {
        match self.phase {
            Phase::Primary => 1.0,
            Phase::Complete => self.lambda,
        }
    }

    pub fn kernel(&self) -> Kernel {
        self.benchmark.kernel()
    }

    fn boundary_segments(&self) -> impl Iterator<Item = Segment> + '_ {
        self.terms().iter().filter_map(|t| t.segment())
    }

    fn uses_data(&self) -> bool {
        self.terms().contains(&Term::InverseData)
    }
}

/// Point sets a loss reads.
#[derive(Debug, Clone, PartialEq)]
pub struct LossPoints {
    pub domain: PointSet,
    /// Labeled boundary points, tagged by segment.
    pub boundary: PointSet,
    /// Labeled interior velocity data (inverse benchmark).
    pub data: Option<PointSet>,
}

impl LossPoints {
    /// Check that the sets fit `spec`. Segments the loss spec does not use are
    /// allowed when they belong to the benchmark geometry and are ignored.
    pub fn validate(&self, spec: &LossSpec) -> Result<()> {
        if self.domain.is_empty() {
            return Err(Error::EmptyPointSet);
        }
        let allowed = spec.benchmark.geometry().boundary_segments();
        for s in self.boundary.segment_set() {
            if !allowed.contains(&s) {
                return Err(Error::IncompatibleSegments(format!(
                    "segment {} does not belong to {}",
                    s.name(),
                    spec.benchmark.name()
                )));
            }
        }
        let present = self.boundary.segment_set();
        for s in spec.boundary_segments() {
            if !present.contains(&s) {
                return Err(Error::IncompatibleSegments(format!(
                    "{} loss needs {} points",
                    spec.benchmark.name(),
                    s.name()
                )));
            }
        }
        if !self.boundary.is_empty() && self.boundary.labels().is_none() {
            return Err(Error::MissingLabels);
        }
        if spec.uses_data() {
            match &self.data {
                None => {
                    return Err(Error::IncompatibleSegments(
                        "inverse loss needs velocity data".into(),
                    ))
                }
                Some(d) if d.is_empty() => return Err(Error::EmptyPointSet),
                Some(d) if d.labels().is_none() => return Err(Error::MissingLabels),
                Some(_) => {}
            }
        }
        Ok(())
    }
}

/// Term values of one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub pde: f64,
    pub boundary: BTreeMap<Segment, f64>,
    pub data: Option<f64>,
    /// Weight applied to boundary and data terms.
    pub weight: f64,
}

impl LossBreakdown {
    fn assemble(pde: f64, boundary: BTreeMap<Segment, f64>, data: Option<f64>, weight: f64) -> Self {
        let mut b = LossBreakdown {
            total: 0.0,
            pde,
            boundary,
            data,
            weight,
        };
        b.total = pde + weight * b.boundary_sum();
        b
    }

    /// Sum of the boundary terms and the data term.
    pub fn boundary_sum(&self) -> f64 {
        self.boundary.values().sum::<f64>() + self.data.unwrap_or(0.0)
    }

    pub fn segment(&self, s: Segment) -> Option<f64> {
        self.boundary.get(&s).copied()
    }
}

fn check_weights<T>(weights: &[T], arch: &Architecture) -> Result<Vec<LayerShape>> {
    if weights.len() != arch.n_params() {
        return Err(Error::DimensionMismatch {
            expected: arch.n_params(),
            actual: weights.len(),
        });
    }
    Ok(arch.layer_shapes())
}

/// Mean over `domain` of the squared residual norm.
pub fn pde_loss<T: Scalar>(
    weights: &[T],
    arch: &Architecture,
    domain: &PointSet,
    kernel: Kernel,
    consts: &FluidConstants,
) -> Result<T> {
    let shapes = check_weights(weights, arch)?;
    if domain.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let mut acc = weights[0].constant_like(0.0);
    for p in domain.iter() {
        let out = forward_generic(weights, &shapes, p, kernel.order())?;
        acc = acc + kernel.residual(&out, consts)?.sum_of_squares();
    }
    Ok(acc * (1.0 / domain.len() as f64))
}

fn labeled_sq_error<T: Scalar>(
    weights: &[T],
    shapes: &[LayerShape],
    points: &PointSet,
) -> Result<(T, usize)> {
    let labels = points.labels().ok_or(Error::MissingLabels)?;
    let mut acc = weights[0].constant_like(0.0);
    let mut count = 0;
    for (p, ls) in points.iter().zip(labels) {
        let out = forward_generic(weights, shapes, p, DerivOrder::Zero)?;
        for l in ls {
            let e = out[l.output].value() - l.value;
            acc = acc + e * e;
            count += 1;
        }
    }
    Ok((acc, count))
}

/// Mean over points and labeled components of the squared error.
pub fn boundary_mse<T: Scalar>(weights: &[T], arch: &Architecture, boundary: &PointSet) -> Result<T> {
    let shapes = check_weights(weights, arch)?;
    let (acc, count) = labeled_sq_error(weights, &shapes, boundary)?;
    if count == 0 {
        return Err(Error::EmptyPointSet);
    }
    Ok(acc * (1.0 / count as f64))
}

/// `(1/n)·Σ (u − û)² + (v − v̂)²` over labeled velocity data.
pub fn inverse_data_loss<T: Scalar>(weights: &[T], arch: &Architecture, data: &PointSet) -> Result<T> {
    let shapes = check_weights(weights, arch)?;
    if data.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let (acc, _) = labeled_sq_error(weights, &shapes, data)?;
    Ok(acc * (1.0 / data.len() as f64))
}

/// Full loss for `spec` along with its breakdown.
pub fn compose_loss<T: Scalar>(
    spec: &LossSpec,
    weights: &[T],
    arch: &Architecture,
    points: &LossPoints,
    consts: &FluidConstants,
) -> Result<(T, LossBreakdown)> {
    spec.validate()?;
    points.validate(spec)?;
    let w = spec.boundary_weight();
    let pde_term = pde_loss(weights, arch, &points.domain, spec.kernel(), consts)?;
    let mut rest = weights[0].constant_like(0.0);
    let mut boundary = BTreeMap::new();
    let mut data = None;
    for &term in spec.terms() {
        if let Some(seg) = term.segment() {
            let v = boundary_mse(weights, arch, &points.boundary.filter_segment(seg))?;
            boundary.insert(seg, v.value());
            rest = rest + v;
        } else if term == Term::InverseData {
            let v = inverse_data_loss(weights, arch, points.data.as_ref().expect("validated"))?;
            data = Some(v.value());
            rest = rest + v;
        }
    }
    let total = pde_term + rest * w;
    Ok((total, LossBreakdown::assemble(pde_term.value(), boundary, data, w)))
}

/// Squared residual norm at every point.
pub fn pointwise_residuals(
    params: &Parameters,
    arch: &Architecture,
    kernel: Kernel,
    consts: &FluidConstants,
    points: &PointSet,
) -> Result<Vec<f64>> {
    params.check(arch)?;
    let mut eval = BatchEvaluator::new(params.shapes(), kernel.order());
    let mut out = Vec::with_capacity(points.len());
    eval.evaluate(
        params.as_slice(),
        points.coords(),
        &mut |_: usize, jets: &[Jet2<f64>], _: &mut [f64]| {
            out.push(kernel.residual(jets, consts)?.sum_of_squares());
            Ok(0.0)
        },
        None,
    )?;
    Ok(out)
}

struct LabeledTerm {
    coords: Vec<f64>,
    labels: Vec<Vec<Label>>,
    denominator: f64,
}

impl LabeledTerm {
    fn new(points: &PointSet, per_label: bool) -> Result<Self> {
        let labels = points.labels().ok_or(Error::MissingLabels)?.to_vec();
        let n_labels: usize = labels.iter().map(Vec::len).sum();
        let denominator = if per_label { n_labels } else { points.len() };
        if denominator == 0 {
            return Err(Error::EmptyPointSet);
        }
        Ok(LabeledTerm {
            coords: points.coords().to_vec(),
            labels,
            denominator: denominator as f64,
        })
    }
}

/// Batched loss and gradient for one spec on fixed point sets.
pub struct LossEvaluator {
    spec: LossSpec,
    consts: FluidConstants,
    n_params: usize,
    domain: Vec<f64>,
    n_domain: usize,
    segments: Vec<(Segment, LabeledTerm)>,
    data: Option<LabeledTerm>,
    residual_eval: BatchEvaluator,
    value_eval: BatchEvaluator,
    tape: Tape,
}

impl LossEvaluator {
    pub fn new(
        spec: LossSpec,
        arch: &Architecture,
        points: &LossPoints,
        consts: &FluidConstants,
    ) -> Result<Self> {
        spec.validate()?;
        arch.validate()?;
        consts.validate()?;
        points.validate(&spec)?;
        if arch.n_outputs != spec.kernel().n_outputs() {
            return Err(Error::ArchitectureMismatch {
                expected: format!("{} outputs", spec.kernel().n_outputs()),
                found: arch.describe(),
            });
        }
        let segments = spec
            .boundary_segments()
            .map(|s| Ok((s, LabeledTerm::new(&points.boundary.filter_segment(s), true)?)))
            .collect::<Result<_>>()?;
        let data = if spec.uses_data() {
            Some(LabeledTerm::new(points.data.as_ref().expect("validated"), false)?)
        } else {
            None
        };
        let shapes = arch.layer_shapes();
        Ok(LossEvaluator {
            spec,
            consts: *consts,
            n_params: arch.n_params(),
            domain: points.domain.coords().to_vec(),
            n_domain: points.domain.len(),
            segments,
            data,
            residual_eval: BatchEvaluator::new(&shapes, spec.kernel().order()),
            value_eval: BatchEvaluator::new(&shapes, DerivOrder::Zero),
            tape: Tape::with_capacity(256),
        })
    }

    pub fn spec(&self) -> &LossSpec {
        &self.spec
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    /// Loss breakdown at `params`; when `grad` is given it is overwritten with
    /// the gradient of `total`.
    pub fn evaluate(&mut self, params: &[f64], mut grad: Option<&mut [f64]>) -> Result<LossBreakdown> {
        if params.len() != self.n_params {
            return Err(Error::DimensionMismatch {
                expected: self.n_params,
                actual: params.len(),
            });
        }
        if let Some(g) = grad.as_deref_mut() {
            g.fill(0.0);
        }
        let w = self.spec.boundary_weight();

        let kernel = self.spec.kernel();
        let consts = self.consts;
        let tape = &self.tape;
        let pde_scale = 1.0 / self.n_domain as f64;
        let mut pde_sum = 0.0;
        self.residual_eval.evaluate(
            params,
            &self.domain,
            &mut |_: usize, jets: &[Jet2<f64>], adj: &mut [f64]| {
                tape.reset();
                let tracked: Vec<Jet2<_>> = jets.iter().map(|j| j.map(|c| tape.leaf(c))).collect();
                let r = kernel.residual(&tracked, &consts)?.sum_of_squares();
                let g = tape.gradient(r)?;
                for (slot, leaf) in adj.iter_mut().zip(tracked.iter().flat_map(|j| j.components())) {
                    *slot = pde_scale * g.wrt(leaf)?;
                }
                pde_sum += r.value();
                Ok(0.0)
            },
            grad.as_deref_mut(),
        )?;
        let pde = pde_sum * pde_scale;

        let mut boundary = BTreeMap::new();
        for (seg, term) in &self.segments {
            let v = labeled_term(&mut self.value_eval, params, term, w, grad.as_deref_mut())?;
            boundary.insert(*seg, v);
        }
        let data = match &self.data {
            Some(term) => Some(labeled_term(&mut self.value_eval, params, term, w, grad.as_deref_mut())?),
            None => None,
        };
        Ok(LossBreakdown::assemble(pde, boundary, data, w))
    }
}

fn labeled_term(
    eval: &mut BatchEvaluator,
    params: &[f64],
    term: &LabeledTerm,
    weight: f64,
    grad: Option<&mut [f64]>,
) -> Result<f64> {
    let scale = weight / term.denominator;
    let mut sum = 0.0;
    eval.evaluate(
        params,
        &term.coords,
        &mut |i: usize, jets: &[Jet2<f64>], adj: &mut [f64]| {
            for l in &term.labels[i] {
                let e = jets[l.output].value() - l.value;
                sum += e * e;
                adj[l.output] += 2.0 * scale * e;
            }
            Ok(0.0)
        },
        grad,
    )?;
    Ok(sum / term.denominator)
}

/// Inlet `u` predicted along the inlet for R² checks.
pub fn inlet_profile(params: &Parameters, arch: &Architecture, ys: &[f64]) -> Result<Vec<f64>> {
    ys.iter()
        .map(|&y| Ok(crate::network::forward(params, arch, &[0.0, y])?[pde::U]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{parameter_gradient, TrackedParameters};
    use crate::network::{init_xavier, Provenance};
    use crate::sampling::{lhs_sample, sample_boundary};

    fn burgers_points(n: usize, with_right: bool) -> LossPoints {
        let g = Geometry::burgers();
        let mut counts = vec![(Segment::Initial, 8), (Segment::Left, 6)];
        if with_right {
            counts.push((Segment::Right, 6));
        }
        LossPoints {
            domain: lhs_sample(&g, n, 1, 0.0).unwrap(),
            boundary: sample_boundary(&g, &counts, 2).unwrap(),
            data: None,
        }
    }

    fn cylinder_points() -> LossPoints {
        let g = Geometry::channel();
        let counts = [
            (Segment::Inlet, 8),
            (Segment::Outlet, 5),
            (Segment::Wall, 8),
            (Segment::Cylinder, 6),
        ];
        let mut data = PointSet::new(2);
        for k in 0..4 {
            let p = [0.5 + 0.1 * k as f64, 0.1];
            data.push(&p, Segment::Interior, Some(vec![
                Label { output: 0, value: 0.3 },
                Label { output: 1, value: -0.1 },
            ]));
        }
        LossPoints {
            domain: lhs_sample(&g, 20, 1, 0.3).unwrap(),
            boundary: sample_boundary(&g, &counts, 2).unwrap(),
            data: Some(data),
        }
    }

    #[test]
    fn zero_network_burgers_pde_loss_vanishes() {
        let arch = Architecture::burgers();
        let p = Parameters::zeros(&arch, Provenance::Xavier);
        let pts = burgers_points(30, true);
        let v = pde_loss(p.as_slice(), &arch, &pts.domain, Kernel::Burgers, &FluidConstants::burgers())
            .unwrap();
        assert_eq!(v, 0.0);
    }

    /// Network with all-zero weights except the output biases.
    fn constant_net(arch: &Architecture, outputs: &[f64]) -> Parameters {
        let mut p = Parameters::zeros(arch, Provenance::Xavier);
        let last = arch.n_layers() - 1;
        let range = p.layer_range(last);
        let bias_start = range.end - arch.n_outputs;
        p.as_mut_slice()[bias_start..range.end].copy_from_slice(outputs);
        p
    }

    #[test]
    fn boundary_mse_arithmetic() {
        let arch = Architecture::new(2, vec![3], 1).unwrap();
        let p = constant_net(&arch, &[0.0]);
        let mut b = PointSet::new(2);
        b.push(&[0.0, 0.0], Segment::Left, Some(vec![Label { output: 0, value: 1.0 }]));
        assert_eq!(boundary_mse(p.as_slice(), &arch, &b).unwrap(), 1.0);
        b.push(&[0.0, 1.0], Segment::Left, Some(vec![Label { output: 0, value: 2.0 }]));
        assert_eq!(boundary_mse(p.as_slice(), &arch, &b).unwrap(), 2.5);
        let mut exact = PointSet::new(2);
        exact.push(&[0.0, 0.0], Segment::Left, Some(vec![Label { output: 0, value: 0.0 }]));
        assert_eq!(boundary_mse(p.as_slice(), &arch, &exact).unwrap(), 0.0);
        let unlabeled = PointSet::from_coords(2, vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            boundary_mse(p.as_slice(), &arch, &unlabeled),
            Err(Error::MissingLabels)
        ));
    }

    #[test]
    fn inverse_data_arithmetic() {
        let arch = Architecture::new(2, vec![3], 6).unwrap();
        let p = constant_net(&arch, &[0.0; 6]);
        let mut d = PointSet::new(2);
        let labels = vec![Label { output: 0, value: 1.0 }, Label { output: 1, value: 2.0 }];
        d.push(&[0.5, 0.1], Segment::Interior, Some(labels.clone()));
        assert_eq!(inverse_data_loss(p.as_slice(), &arch, &d).unwrap(), 5.0);
        d.push(&[0.5, 0.1], Segment::Interior, Some(labels));
        assert_eq!(inverse_data_loss(p.as_slice(), &arch, &d).unwrap(), 5.0);
    }

    #[test]
    fn primary_subset_of_complete() {
        for b in Benchmark::ALL {
            let complete = term_set(b, Phase::Complete);
            for t in term_set(b, Phase::Primary) {
                assert!(complete.contains(t));
            }
        }
        assert_eq!(term_set(Benchmark::Burgers, Phase::Primary), &[Term::Pde, Term::Left]);
        assert!(!term_set(Benchmark::CylinderForward, Phase::Primary).contains(&Term::Cylinder));
    }

    #[test]
    fn lambda_zero_leaves_pde() {
        let arch = Architecture::uniform(2, 2, 6, 1).unwrap();
        let p = init_xavier(&arch, 3);
        let pts = burgers_points(20, true);
        let spec = LossSpec::complete(Benchmark::Burgers, 0.0).unwrap();
        let (t, b) = compose_loss(&spec, p.as_slice(), &arch, &pts, &FluidConstants::burgers()).unwrap();
        assert_eq!(t, b.pde);
        assert!(LossSpec::complete(Benchmark::Burgers, -1.0).is_err());
    }

    #[test]
    fn primary_burgers_ignores_right_edge() {
        let arch = Architecture::uniform(2, 2, 6, 1).unwrap();
        let p = init_xavier(&arch, 3);
        let c = FluidConstants::burgers();
        let spec = LossSpec::primary(Benchmark::Burgers);
        let (with, bw) = compose_loss(&spec, p.as_slice(), &arch, &burgers_points(20, true), &c).unwrap();
        let (without, _) =
            compose_loss(&spec, p.as_slice(), &arch, &burgers_points(20, false), &c).unwrap();
        assert_eq!(with, without);
        assert_eq!(bw.boundary.keys().copied().collect::<Vec<_>>(), vec![Segment::Left]);
    }

    #[test]
    fn incompatible_segments_rejected() {
        let arch = Architecture::uniform(2, 2, 6, 1).unwrap();
        let p = init_xavier(&arch, 3);
        let c = FluidConstants::burgers();
        let spec = LossSpec::complete(Benchmark::Burgers, 1.0).unwrap();
        let missing = burgers_points(10, false);
        assert!(matches!(
            compose_loss(&spec, p.as_slice(), &arch, &missing, &c),
            Err(Error::IncompatibleSegments(_))
        ));
        let mut foreign = burgers_points(10, true);
        foreign.boundary = foreign
            .boundary
            .concat(&sample_boundary(&Geometry::channel(), &[(Segment::Inlet, 2)], 0).unwrap())
            .unwrap();
        assert!(compose_loss(&spec, p.as_slice(), &arch, &foreign, &c).is_err());
    }

    fn check_routes_agree(spec: LossSpec, arch: &Architecture, pts: &LossPoints, c: &FluidConstants) {
        let p = init_xavier(arch, 8);
        let (t_ref, b_ref) = compose_loss(&spec, p.as_slice(), arch, pts, c).unwrap();
        let tape = Tape::new();
        let tracked = TrackedParameters::new(&tape, &p);
        let (t_var, _) = compose_loss(&spec, tracked.vars(), arch, pts, c).unwrap();
        let g_ref = parameter_gradient(t_var, &tracked).unwrap();

        let mut ev = LossEvaluator::new(spec, arch, pts, c).unwrap();
        let mut g = vec![0.0; p.len()];
        let b = ev.evaluate(p.as_slice(), Some(&mut g)).unwrap();
        assert!((b.total - t_ref).abs() <= 1e-12 * t_ref.abs().max(1.0));
        assert!((b.pde - b_ref.pde).abs() <= 1e-12 * b_ref.pde.max(1.0));
        for (k, v) in &b_ref.boundary {
            assert!((b.boundary[k] - v).abs() <= 1e-12 * v.max(1.0));
        }
        for (a, r) in g.iter().zip(&g_ref) {
            assert!((a - r).abs() <= 1e-10 * (1.0 + r.abs()), "{a} vs {r}");
        }
    }

    #[test]
    fn batched_matches_tape_burgers() {
        let arch = Architecture::uniform(2, 2, 5, 1).unwrap();
        let pts = burgers_points(25, true);
        let c = FluidConstants::burgers();
        check_routes_agree(LossSpec::complete(Benchmark::Burgers, 1.5).unwrap(), &arch, &pts, &c);
        check_routes_agree(LossSpec::primary(Benchmark::Burgers), &arch, &pts, &c);
    }

    #[test]
    fn batched_matches_tape_cylinder() {
        let arch = Architecture::uniform(2, 2, 5, 6).unwrap();
        let pts = cylinder_points();
        let c = FluidConstants::cylinder();
        for b in [Benchmark::CylinderForward, Benchmark::CylinderInverse] {
            check_routes_agree(LossSpec::complete(b, 0.5).unwrap(), &arch, &pts, &c);
            check_routes_agree(LossSpec::primary(b), &arch, &pts, &c);
        }
    }

    #[test]
    fn breakdown_additivity_and_lambda_scaling() {
        let arch = Architecture::uniform(2, 2, 6, 6).unwrap();
        let pts = cylinder_points();
        let c = FluidConstants::cylinder();
        let p = init_xavier(&arch, 1);
        let eval = |lambda| {
            let spec = LossSpec::complete(Benchmark::CylinderForward, lambda).unwrap();
            LossEvaluator::new(spec, &arch, &pts, &c)
                .unwrap()
                .evaluate(p.as_slice(), None)
                .unwrap()
        };
        let b1 = eval(0.1);
        let b2 = eval(5.0);
        for b in [&b1, &b2] {
            let sum = b.pde + b.weight * b.boundary_sum();
            assert!((b.total - sum).abs() <= 1e-12 * b.total);
            assert!(b.boundary.values().all(|&v| v >= 0.0));
        }
        let lhs = b2.total - b1.total;
        let rhs = (5.0 - 0.1) * b1.boundary_sum();
        assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs());
    }
}
