//! Domain and boundary point generation.

mod points;

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::loss::pointwise_residuals;
use crate::network::{init_xavier, Architecture};
use crate::pde::{self, FluidConstants, Kernel};
use crate::{Error, Result};

pub use points::{Label, PointSet, Segment};

const HOLE_RETRIES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryKind {
    ChannelWithCylinder,
    /// Space-time rectangle `(x, t)`.
    Rectangle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cylinder {
    pub center: [f64; 2],
    pub radius: f64,
}

impl GeometryKind {
    pub fn name(self) -> &'static str {
        match self {
            GeometryKind::ChannelWithCylinder => "channel_with_cylinder",
            GeometryKind::Rectangle => "rectangle",
        }
    }
}

impl Cylinder {
    pub fn distance(&self, p: &[f64]) -> f64 {
        (p[0] - self.center[0]).hypot(p[1] - self.center[1])
    }

    /// Strictly inside or on the circle.
    fn blocks(&self, p: &[f64]) -> bool {
        self.distance(p) <= self.radius
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    kind: GeometryKind,
    bounds: Vec<(f64, f64)>,
    cylinder: Option<Cylinder>,
}

impl Geometry {
    pub fn new(kind: GeometryKind, bounds: Vec<(f64, f64)>, cylinder: Option<Cylinder>) -> Result<Self> {
        let g = Geometry {
            kind,
            bounds,
            cylinder,
        };
        g.validate()?;
        Ok(g)
    }

    /// `[0,1]×[0,0.4]` channel, cylinder of radius 0.05 centred at (0.2, 0.2).
    pub fn channel() -> Self {
        Geometry {
            kind: GeometryKind::ChannelWithCylinder,
            bounds: vec![(0.0, 1.0), (0.0, pde::CHANNEL_HEIGHT)],
            cylinder: Some(Cylinder {
                center: [0.2, 0.2],
                radius: 0.05,
            }),
        }
    }

    /// `x ∈ [0,4]`, `t ∈ [0,5]`.
    pub fn burgers() -> Self {
        Geometry {
            kind: GeometryKind::Rectangle,
            bounds: vec![pde::BURGERS_X, pde::BURGERS_T],
            cylinder: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bounds.is_empty() {
            return Err(Error::InvalidGeometry("no dimensions".into()));
        }
        for (d, &(lo, hi)) in self.bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidGeometry(format!("bounds of dimension {d} not ordered")));
            }
        }
        match (self.kind, &self.cylinder) {
            (GeometryKind::ChannelWithCylinder, Some(c)) => {
                if self.bounds.len() != 2 {
                    return Err(Error::InvalidGeometry("channel must be two-dimensional".into()));
                }
                let inside = c.radius > 0.0
                    && (0..2).all(|d| {
                        let (lo, hi) = self.bounds[d];
                        c.center[d] - c.radius > lo && c.center[d] + c.radius < hi
                    });
                if !inside {
                    return Err(Error::InvalidGeometry(
                        "cylinder must lie strictly inside the bounds".into(),
                    ));
                }
            }
            (GeometryKind::ChannelWithCylinder, None) => {
                return Err(Error::InvalidGeometry("channel requires a cylinder".into()));
            }
            (GeometryKind::Rectangle, Some(_)) => {
                return Err(Error::InvalidGeometry("rectangle has no cylinder".into()));
            }
            (GeometryKind::Rectangle, None) => {}
        }
        Ok(())
    }

    pub fn kind(&self) -> GeometryKind {
        self.kind
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn cylinder(&self) -> Option<&Cylinder> {
        self.cylinder.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    /// Column names for CSV export.
    pub fn coord_names(&self) -> &'static [&'static str] {
        match self.kind {
            GeometryKind::ChannelWithCylinder => &["x", "y"],
            GeometryKind::Rectangle => &["x", "t"],
        }
    }

    /// Inside the bounds and strictly outside the cylinder.
    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.dim()
            && p.iter().zip(&self.bounds).all(|(&v, &(lo, hi))| v >= lo && v <= hi)
            && self.cylinder.is_none_or(|c| !c.blocks(p))
    }

    /// Segments `sample_boundary` accepts for this geometry.
    pub fn boundary_segments(&self) -> &'static [Segment] {
        match self.kind {
            GeometryKind::ChannelWithCylinder => {
                &[Segment::Inlet, Segment::Outlet, Segment::Wall, Segment::Cylinder]
            }
            GeometryKind::Rectangle => &[Segment::Initial, Segment::Left, Segment::Right],
        }
    }
}

/// Latin hypercube sample of `n` domain points.
///
/// `round(densify·n)` points are drawn uniformly by area in the annulus
/// between one and two radii around the cylinder; the rest form a Latin
/// hypercube over the bounding box. A hypercube point landing in the cylinder
/// is redrawn inside its own cell, and the cell is dropped with a warning after
/// 100 failed draws. Densification is ignored when there is no cylinder.
pub fn lhs_sample(geometry: &Geometry, n: usize, seed: u64, densify: f64) -> Result<PointSet> {
    geometry.validate()?;
    if n == 0 {
        return Err(Error::config("n", "at least one point is required"));
    }
    if !(0.0..1.0).contains(&densify) {
        return Err(Error::config("densify_near_cylinder", "must lie in [0, 1)"));
    }
    let n_dense = if geometry.cylinder.is_some() {
        (densify * n as f64).round() as usize
    } else {
        0
    };
    let n_lhs = n - n_dense;
    check_stratification(geometry, n_lhs)?;

    let dim = geometry.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let perms: Vec<Vec<usize>> = (0..dim)
        .map(|_| {
            let mut p: Vec<usize> = (0..n_lhs).collect();
            p.shuffle(&mut rng);
            p
        })
        .collect();

    let mut out = PointSet::new(dim);
    let mut point = vec![0.0; dim];
    let mut skipped = 0;
    for k in 0..n_lhs {
        let mut placed = false;
        for _ in 0..HOLE_RETRIES {
            for d in 0..dim {
                let (lo, hi) = geometry.bounds[d];
                let width = (hi - lo) / n_lhs as f64;
                let u: f64 = rng.random();
                point[d] = (lo + (perms[d][k] as f64 + u) * width).min(hi);
            }
            if geometry.cylinder.is_none_or(|c| !c.blocks(&point)) {
                placed = true;
                break;
            }
        }
        if placed {
            out.push(&point, Segment::Interior, None);
        } else {
            skipped += 1;
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} hypercube cells inside the cylinder were skipped");
    }

    if let Some(c) = geometry.cylinder {
        let mut added = 0;
        while added < n_dense {
            let theta = rng.random::<f64>() * 2.0 * PI;
            let u: f64 = rng.random();
            // uniform by area: r² uniform in [R², 4R²]
            let r = c.radius * (1.0 + 3.0 * u).sqrt();
            let p = [c.center[0] + r * theta.cos(), c.center[1] + r * theta.sin()];
            if geometry.contains(&p) {
                out.push(&p, Segment::Interior, None);
                added += 1;
            }
        }
    }
    Ok(out)
}

/// A stratum slab that the cylinder covers along its whole extent can never
/// hold a point.
fn check_stratification(geometry: &Geometry, n: usize) -> Result<()> {
    let Some(c) = geometry.cylinder else {
        return Ok(());
    };
    if n == 0 {
        return Ok(());
    }
    for d in 0..2 {
        let other = 1 - d;
        let (olo, ohi) = geometry.bounds[other];
        let (lo, hi) = geometry.bounds[d];
        let width = (hi - lo) / n as f64;
        for s in 0..n {
            let a = lo + s as f64 * width;
            let b = a + width;
            // the slab is covered only if every coordinate in it sees a chord
            // spanning the whole other dimension
            let covered = [a, b].iter().all(|&v| {
                let dv = v - c.center[d];
                let half = (c.radius * c.radius - dv * dv).max(-1.0);
                half >= 0.0
                    && c.center[other] - half.sqrt() <= olo
                    && c.center[other] + half.sqrt() >= ohi
            });
            if covered {
                return Err(Error::StratificationInfeasible { dim: d, stratum: s });
            }
        }
    }
    Ok(())
}

/// Boundary points with labels, segment by segment in the order given.
pub fn sample_boundary(
    geometry: &Geometry,
    counts: &[(Segment, usize)],
    seed: u64,
) -> Result<PointSet> {
    geometry.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = PointSet::new(geometry.dim());
    let b = &geometry.bounds;
    let uniform = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| lo + rng.random::<f64>() * (hi - lo);
    let label = |output, value| Label { output, value };
    for &(segment, count) in counts {
        if !geometry.boundary_segments().contains(&segment) {
            return Err(Error::UnknownSegment {
                segment: segment.name(),
                geometry: geometry.kind.name(),
            });
        }
        for _ in 0..count {
            let (p, labels) = match segment {
                Segment::Inlet => {
                    let y = uniform(&mut rng, b[1]);
                    let u = pde::inlet_velocity(y.clamp(0.0, pde::CHANNEL_HEIGHT))?;
                    ([b[0].0, y], vec![label(pde::U, u), label(pde::V, 0.0)])
                }
                Segment::Outlet => ([b[0].1, uniform(&mut rng, b[1])], vec![label(pde::P, 0.0)]),
                Segment::Wall => {
                    let x = uniform(&mut rng, b[0]);
                    let y = if rng.random::<bool>() { b[1].1 } else { b[1].0 };
                    ([x, y], vec![label(pde::U, 0.0), label(pde::V, 0.0)])
                }
                Segment::Cylinder => {
                    let c = geometry.cylinder.expect("validated channel");
                    let theta = rng.random::<f64>() * 2.0 * PI;
                    (
                        [
                            c.center[0] + c.radius * theta.cos(),
                            c.center[1] + c.radius * theta.sin(),
                        ],
                        vec![label(pde::U, 0.0), label(pde::V, 0.0)],
                    )
                }
                Segment::Initial => {
                    let x = uniform(&mut rng, b[0]);
                    ([x, b[1].0], vec![label(0, pde::burgers_initial(x)?)])
                }
                Segment::Left => ([b[0].0, uniform(&mut rng, b[1])], vec![label(0, 0.0)]),
                Segment::Right => ([b[0].1, uniform(&mut rng, b[1])], vec![label(0, 0.0)]),
                Segment::Interior => unreachable!("rejected above"),
            };
            out.push(&p, segment, Some(labels));
        }
    }
    Ok(out)
}

/// Number of points a single seed keeps at quantile `q`.
pub fn per_seed_count(n: usize, quantile: f64) -> usize {
    let dropped = (quantile * n as f64).floor() as usize;
    n.saturating_sub(dropped).max(1).min(n)
}

/// Indices picked by each seed, in ascending seed order.
///
/// A seed ranks candidates by the squared residual norm of a freshly
/// initialized network and keeps the top [`per_seed_count`] of them, ties
/// broken by candidate index.
pub fn per_seed_selections(
    candidates: &PointSet,
    arch: &Architecture,
    kernel: Kernel,
    consts: &FluidConstants,
    seeds: &[u64],
    quantile: f64,
) -> Result<Vec<(u64, Vec<usize>)>> {
    if candidates.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    if !(0.0..=1.0).contains(&quantile) {
        return Err(Error::config("quantile", "must lie in [0, 1]"));
    }
    if !(5..=10).contains(&seeds.len()) {
        log::warn!("{} ensemble seeds given; 5 to 10 are recommended", seeds.len());
    }
    let mut sorted = seeds.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let keep = per_seed_count(candidates.len(), quantile);
    sorted
        .into_iter()
        .map(|s| {
            let params = init_xavier(arch, s);
            let r = pointwise_residuals(&params, arch, kernel, consts, candidates)?;
            let mut order: Vec<usize> = (0..r.len()).collect();
            order.sort_by(|&a, &b| r[b].total_cmp(&r[a]).then(a.cmp(&b)));
            order.truncate(keep);
            order.sort_unstable();
            Ok((s, order))
        })
        .collect()
}

/// Union of the per-seed selections, in candidate order.
pub fn residual_ensemble_select(
    candidates: &PointSet,
    arch: &Architecture,
    kernel: Kernel,
    consts: &FluidConstants,
    seeds: &[u64],
    quantile: f64,
) -> Result<PointSet> {
    let per_seed = per_seed_selections(candidates, arch, kernel, consts, seeds, quantile)?;
    let mut chosen = vec![false; candidates.len()];
    for (_, idx) in &per_seed {
        for &i in idx {
            chosen[i] = true;
        }
    }
    let idx: Vec<usize> = (0..chosen.len()).filter(|&i| chosen[i]).collect();
    Ok(candidates.select(&idx))
}
