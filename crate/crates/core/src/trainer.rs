//! Two-phase training and the single-phase baseline.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::loss::{pointwise_residuals, Benchmark, LossBreakdown, LossEvaluator, LossPoints, LossSpec};
use crate::network::{
    graft_smart_weights, init_reduced_variance, init_xavier, Architecture, GraftPlan, Parameters,
    Provenance,
};
use crate::optim::{
    adam_minimize, lbfgs_minimize, AdamConfig, Control, LbfgsConfig, LbfgsState, Objective,
    OptimReport, Progress, Status, StopCriteria,
};
use crate::pde::FluidConstants;
use crate::sampling::{lhs_sample, residual_ensemble_select, sample_boundary, PointSet, Segment};
use crate::{Error, Result};

/// Losses above this (or non-finite) end a run as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    /// Network initialization; shared by paired FE-PINN and vanilla runs.
    pub init: u64,
    /// Domain and boundary point sampling.
    pub sampling: u64,
    /// Networks used for residual-ensemble point selection.
    pub ensemble: Vec<u64>,
}

/// Per-segment and domain point counts. Segments foreign to the benchmark
/// geometry are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PointCounts {
    pub domain: usize,
    pub inlet: usize,
    pub outlet: usize,
    pub wall: usize,
    pub cylinder: usize,
    pub initial: usize,
    pub left: usize,
    pub right: usize,
    /// Labeled velocity points for the inverse benchmark.
    pub data: usize,
}

impl PointCounts {
    pub fn get(&self, s: Segment) -> usize {
        match s {
            Segment::Inlet => self.inlet,
            Segment::Outlet => self.outlet,
            Segment::Wall => self.wall,
            Segment::Cylinder => self.cylinder,
            Segment::Initial => self.initial,
            Segment::Left => self.left,
            Segment::Right => self.right,
            Segment::Interior => self.domain,
        }
    }

    /// Nonzero boundary counts for the benchmark's segments.
    pub fn boundary(&self, benchmark: Benchmark) -> Vec<(Segment, usize)> {
        benchmark
            .geometry()
            .boundary_segments()
            .iter()
            .map(|&s| (s, self.get(s)))
            .filter(|&(_, n)| n > 0)
            .collect()
    }

    pub fn boundary_total(&self, benchmark: Benchmark) -> usize {
        self.boundary(benchmark).iter().map(|(_, n)| n).sum()
    }

    /// Domain-to-boundary ratio.
    pub fn ratio(&self, benchmark: Benchmark) -> f64 {
        self.domain as f64 / self.boundary_total(benchmark).max(1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSettings {
    pub max_iters: usize,
    pub threshold: f64,
}

impl PhaseSettings {
    fn stop(&self) -> StopCriteria {
        StopCriteria {
            loss_threshold: self.threshold,
            max_iters: self.max_iters,
        }
    }
}

/// Periodic mean squared residual on points not used for training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeldOut {
    pub points: usize,
    pub every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub benchmark: Benchmark,
    /// Hidden width shared by every layer of both phases.
    pub width: usize,
    pub graft: GraftPlan,
    pub seeds: Seeds,
    pub points: PointCounts,
    /// Share of domain points placed near the cylinder.
    pub densify: f64,
    pub quantile: f64,
    pub variance_factor: f64,
    pub lambda: f64,
    pub phase1: PhaseSettings,
    pub phase2: PhaseSettings,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub lbfgs: LbfgsConfig,
    #[serde(default)]
    pub heldout: Option<HeldOut>,
    /// Phase-2 step at which parameters are snapshotted (drift studies).
    #[serde(default)]
    pub snapshot_at: Option<usize>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |field: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(field, "must be positive"))
            }
        };
        positive("lambda", self.lambda)?;
        positive("phase1.threshold", self.phase1.threshold)?;
        positive("phase2.threshold", self.phase2.threshold)?;
        positive("adam.lr", self.adam.lr)?;
        if !(self.variance_factor.is_finite() && self.variance_factor >= 1.0) {
            return Err(Error::config("variance_factor", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.quantile) {
            return Err(Error::config("quantile", "must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.densify) {
            return Err(Error::config("densify", "must lie in [0, 1)"));
        }
        if self.width == 0 {
            return Err(Error::config("width", "must be positive"));
        }
        if self.points.domain == 0 {
            return Err(Error::config("points.domain", "must be positive"));
        }
        if self.seeds.ensemble.is_empty() {
            return Err(Error::config("seeds.ensemble", "needs at least one seed"));
        }
        let spec = LossSpec::complete(self.benchmark, self.lambda)?;
        for term in spec.terms() {
            if let Some(s) = term.segment() {
                if self.points.get(s) == 0 {
                    return Err(Error::config("points", format!("{} count must be positive", s.name())));
                }
            }
        }
        if self.benchmark == Benchmark::CylinderInverse && self.points.data == 0 {
            return Err(Error::config("points.data", "must be positive for the inverse benchmark"));
        }
        self.phase2_architecture()?;
        Ok(())
    }

    pub fn constants(&self) -> FluidConstants {
        self.benchmark.constants()
    }

    /// Smart prefix plus output layer.
    pub fn phase1_architecture(&self) -> Result<Architecture> {
        let k = self.benchmark.kernel();
        Architecture::uniform(2, self.graft.smart_hidden_layers.max(1), self.width, k.n_outputs())
    }

    pub fn phase2_architecture(&self) -> Result<Architecture> {
        self.graft.target_architecture(&self.phase1_architecture()?)
    }

    /// Domain and boundary points shared by phase 2 and the baseline.
    pub fn sample_points(&self) -> Result<LossPoints> {
        let geometry = self.benchmark.geometry();
        let domain = lhs_sample(&geometry, self.points.domain, self.seeds.sampling, self.densify)?;
        let boundary = sample_boundary(
            &geometry,
            &self.points.boundary(self.benchmark),
            self.seeds.sampling.wrapping_add(1),
        )?;
        Ok(LossPoints {
            domain,
            boundary,
            data: None,
        })
    }

    /// Held-out residual points, disjoint in seed from the training points.
    pub fn heldout_points(&self) -> Result<Option<PointSet>> {
        match self.heldout {
            Some(h) if h.points > 0 => Ok(Some(lhs_sample(
                &self.benchmark.geometry(),
                h.points,
                self.seeds.sampling.wrapping_add(2),
                0.0,
            )?)),
            _ => Ok(None),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    BudgetExhausted,
    LineSearchFailed,
    Diverged,
}

impl RunStatus {
    pub fn name(self) -> &'static str {
        match self {
            RunStatus::Converged => "converged",
            RunStatus::BudgetExhausted => "budget_exhausted",
            RunStatus::LineSearchFailed => "line_search_failed",
            RunStatus::Diverged => "diverged",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TracePhase {
    Phase1,
    Phase2,
    Vanilla,
}

impl TracePhase {
    pub fn name(self) -> &'static str {
        match self {
            TracePhase::Phase1 => "phase1",
            TracePhase::Phase2 => "phase2",
            TracePhase::Vanilla => "vanilla",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    /// Strictly increasing across a trace.
    pub iteration: usize,
    pub phase: TracePhase,
    /// Optimizer steps taken within the phase.
    pub step: usize,
    pub breakdown: LossBreakdown,
    pub grad_norm: f64,
    pub heldout_residual: Option<f64>,
    /// Seconds since the phase started.
    pub elapsed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTrace {
    pub records: Vec<TraceRecord>,
    pub status: RunStatus,
}

/// Fixed trace column order.
pub const TRACE_HEADER: [&str; 15] = [
    "iteration",
    "phase",
    "step",
    "total",
    "pde",
    "inlet",
    "outlet",
    "wall",
    "cylinder",
    "initial",
    "left",
    "right",
    "data",
    "grad_norm",
    "heldout_residual",
];

impl TrainingTrace {
    pub fn totals(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.breakdown.total).collect()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// Optimizer steps summed over phases.
    pub fn steps(&self) -> usize {
        let mut total = 0;
        let mut i = 0;
        while i < self.records.len() {
            let phase = self.records[i].phase;
            let mut last = self.records[i].step;
            while i < self.records.len() && self.records[i].phase == phase {
                last = self.records[i].step;
                i += 1;
            }
            total += last;
        }
        total
    }

    pub fn elapsed(&self) -> f64 {
        let mut total = 0.0;
        for w in self.records.windows(2) {
            if w[0].phase != w[1].phase {
                total += w[0].elapsed;
            }
        }
        total + self.records.last().map_or(0.0, |r| r.elapsed)
    }

    /// Append `other`, renumbering its iterations after ours.
    pub fn chain(&self, other: &TrainingTrace) -> TrainingTrace {
        let offset = self.records.last().map_or(0, |r| r.iteration + 1);
        let mut records = self.records.clone();
        records.extend(other.records.iter().cloned().map(|mut r| {
            r.iteration += offset;
            r
        }));
        TrainingTrace {
            records,
            status: other.status,
        }
    }

    /// CSV with [`TRACE_HEADER`] columns. Wall time is left out so that
    /// reruns give identical bytes.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(TRACE_HEADER)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            let b = &r.breakdown;
            let mut row = vec![
                r.iteration.to_string(),
                r.phase.name().to_string(),
                r.step.to_string(),
                b.total.to_string(),
                b.pde.to_string(),
            ];
            for s in [
                Segment::Inlet,
                Segment::Outlet,
                Segment::Wall,
                Segment::Cylinder,
                Segment::Initial,
                Segment::Left,
                Segment::Right,
            ] {
                row.push(opt(b.segment(s)));
            }
            row.push(opt(b.data));
            row.push(r.grad_norm.to_string());
            row.push(opt(r.heldout_residual));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Convergence {
    pub status: RunStatus,
    /// Index into the trace where the status was decided.
    pub at: Option<usize>,
}

/// Status implied by a sequence of totals.
///
/// Scans in order: the first non-finite or over-limit total means diverged,
/// the first total at or below `threshold` means converged; otherwise the
/// budget was exhausted.
pub fn monitor_convergence(totals: &[f64], threshold: f64) -> Convergence {
    for (i, &t) in totals.iter().enumerate() {
        if !t.is_finite() || t > DIVERGENCE_LIMIT {
            return Convergence {
                status: RunStatus::Diverged,
                at: Some(i),
            };
        }
        if t <= threshold {
            return Convergence {
                status: RunStatus::Converged,
                at: Some(i),
            };
        }
    }
    Convergence {
        status: RunStatus::BudgetExhausted,
        at: None,
    }
}

#[derive(Debug, Clone)]
pub struct PhaseOutcome {
    pub initial: Parameters,
    pub params: Parameters,
    pub arch: Architecture,
    pub trace: TrainingTrace,
    /// Parameters at `snapshot_at`, if the run got that far.
    pub snapshot: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct FepinnOutcome {
    pub phase1: PhaseOutcome,
    pub phase2: PhaseOutcome,
}

impl FepinnOutcome {
    pub fn trace(&self) -> TrainingTrace {
        self.phase1.trace.chain(&self.phase2.trace)
    }

    /// Phase-1 plus phase-2 optimizer steps.
    pub fn steps(&self) -> usize {
        self.trace().steps()
    }
}

struct Tracker<'a> {
    eval: LossEvaluator,
    phase: TracePhase,
    last: Option<LossBreakdown>,
    records: Vec<TraceRecord>,
    start: Instant,
    diverged: bool,
    heldout: Option<(&'a PointSet, usize)>,
    arch: &'a Architecture,
    template: &'a Parameters,
    consts: FluidConstants,
    snapshot_at: Option<usize>,
    snapshot: Option<Vec<f64>>,
}

impl Objective for Tracker<'_> {
    fn evaluate(&mut self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        let b = self.eval.evaluate(x, Some(grad))?;
        let total = b.total;
        self.last = Some(b);
        Ok(total)
    }

    fn accepted(&mut self, p: &Progress<'_>) -> Control {
        let breakdown = self.last.clone().expect("evaluated before acceptance");
        let heldout_residual = match self.heldout {
            Some((points, every)) if p.iteration % every.max(1) == 0 => {
                let params = self.template.with_values(p.params.to_vec());
                pointwise_residuals(&params, self.arch, self.eval.spec().kernel(), &self.consts, points)
                    .ok()
                    .map(|r| r.iter().sum::<f64>() / r.len() as f64)
            }
            _ => None,
        };
        if self.snapshot_at == Some(p.iteration) {
            self.snapshot = Some(p.params.to_vec());
        }
        self.records.push(TraceRecord {
            iteration: p.iteration,
            phase: self.phase,
            step: p.iteration,
            breakdown,
            grad_norm: p.grad_norm,
            heldout_residual,
            elapsed: self.start.elapsed().as_secs_f64(),
        });
        if !p.loss.is_finite() || p.loss > DIVERGENCE_LIMIT {
            self.diverged = true;
            return Control::Stop;
        }
        Control::Continue
    }
}

enum Method {
    Adam(AdamConfig),
    Lbfgs(LbfgsConfig),
}

struct PhaseJob<'a> {
    config: &'a RunConfig,
    spec: LossSpec,
    points: &'a LossPoints,
    init: Parameters,
    arch: Architecture,
    phase: TracePhase,
    settings: PhaseSettings,
    method: Method,
    heldout: Option<&'a PointSet>,
    snapshot_at: Option<usize>,
}

fn run_job(job: PhaseJob<'_>) -> Result<PhaseOutcome> {
    let consts = job.config.constants();
    let eval = LossEvaluator::new(job.spec, &job.arch, job.points, &consts)?;
    let every = job.config.heldout.map_or(1, |h| h.every);
    let mut tracker = Tracker {
        eval,
        phase: job.phase,
        last: None,
        records: Vec::new(),
        start: Instant::now(),
        diverged: false,
        heldout: job.heldout.map(|p| (p, every)),
        arch: &job.arch,
        template: &job.init,
        consts,
        snapshot_at: job.snapshot_at,
        snapshot: None,
    };
    let mut values = job.init.as_slice().to_vec();
    let result = match job.method {
        Method::Adam(cfg) => adam_minimize(&mut tracker, &mut values, cfg, job.settings.stop()),
        Method::Lbfgs(cfg) => {
            let mut state = LbfgsState::new(cfg);
            lbfgs_minimize(&mut tracker, &mut values, &mut state, job.settings.stop())
        }
    };
    let diverged = tracker.diverged;
    let records = std::mem::take(&mut tracker.records);
    let snapshot = tracker.snapshot.take();
    let status = match result {
        Ok(OptimReport { status, .. }) => match status {
            _ if diverged => RunStatus::Diverged,
            Status::Converged => RunStatus::Converged,
            Status::LineSearchFailed => RunStatus::LineSearchFailed,
            Status::BudgetExhausted | Status::Stationary | Status::Stopped => {
                RunStatus::BudgetExhausted
            }
        },
        Err(Error::NonFiniteGradient { index }) => {
            log::warn!("non-finite gradient at parameter {index}; run marked diverged");
            RunStatus::Diverged
        }
        Err(e) => return Err(e),
    };
    let params = job.init.with_values(values);
    Ok(PhaseOutcome {
        initial: job.init,
        params,
        arch: job.arch,
        trace: TrainingTrace { records, status },
        snapshot,
    })
}

/// Phase 1 on explicitly given points. The domain set is the candidate pool
/// for ensemble selection.
pub fn run_phase1_on(config: &RunConfig, points: &LossPoints) -> Result<PhaseOutcome> {
    config.validate()?;
    let arch = config.phase1_architecture()?;
    let consts = config.constants();
    let kernel = config.benchmark.kernel();
    let init = init_reduced_variance(&arch, config.seeds.init, config.variance_factor)?;
    let selected = residual_ensemble_select(
        &points.domain,
        &arch,
        kernel,
        &consts,
        &config.seeds.ensemble,
        config.quantile,
    )?;
    log::info!(
        "phase 1: {} of {} candidates selected",
        selected.len(),
        points.domain.len()
    );
    let phase1_points = LossPoints {
        domain: selected,
        boundary: points.boundary.clone(),
        data: points.data.clone(),
    };
    let mut out = run_job(PhaseJob {
        config,
        spec: LossSpec::primary(config.benchmark),
        points: &phase1_points,
        init,
        arch,
        phase: TracePhase::Phase1,
        settings: config.phase1,
        method: Method::Adam(config.adam),
        heldout: None,
        snapshot_at: None,
    })?;
    out.params.tag_all(Provenance::Smart);
    Ok(out)
}

/// Phase 2 on explicitly given points.
pub fn run_phase2_on(config: &RunConfig, smart: &Parameters, points: &LossPoints) -> Result<PhaseOutcome> {
    config.validate()?;
    let phase1_arch = config.phase1_architecture()?;
    let (init, arch) = graft_smart_weights(smart, &phase1_arch, &config.graft, config.seeds.init)?;
    let heldout = config.heldout_points()?;
    run_job(PhaseJob {
        config,
        spec: LossSpec::complete(config.benchmark, config.lambda)?,
        points,
        init,
        arch,
        phase: TracePhase::Phase2,
        settings: config.phase2,
        method: Method::Lbfgs(config.lbfgs),
        heldout: heldout.as_ref(),
        snapshot_at: config.snapshot_at,
    })
}

/// Baseline on explicitly given points: Xavier init of the phase-2
/// architecture with the shared init seed, then L-BFGS on the complete loss.
pub fn run_vanilla_on(config: &RunConfig, points: &LossPoints) -> Result<PhaseOutcome> {
    config.validate()?;
    let arch = config.phase2_architecture()?;
    let heldout = config.heldout_points()?;
    run_job(PhaseJob {
        config,
        spec: LossSpec::complete(config.benchmark, config.lambda)?,
        points,
        init: init_xavier(&arch, config.seeds.init),
        arch,
        phase: TracePhase::Vanilla,
        settings: config.phase2,
        method: Method::Lbfgs(config.lbfgs),
        heldout: heldout.as_ref(),
        snapshot_at: config.snapshot_at,
    })
}

fn points_with_data(config: &RunConfig, data: Option<PointSet>) -> Result<LossPoints> {
    let mut points = config.sample_points()?;
    points.data = data;
    Ok(points)
}

pub fn run_phase1(config: &RunConfig) -> Result<PhaseOutcome> {
    run_phase1_on(config, &config.sample_points()?)
}

pub fn run_phase2(config: &RunConfig, smart: &Parameters) -> Result<PhaseOutcome> {
    run_phase2_on(config, smart, &config.sample_points()?)
}

pub fn run_vanilla(config: &RunConfig) -> Result<PhaseOutcome> {
    run_vanilla_on(config, &config.sample_points()?)
}

/// Both phases. `data` supplies the inverse benchmark's velocity labels.
pub fn run_fepinn(config: &RunConfig, data: Option<PointSet>) -> Result<FepinnOutcome> {
    let points = points_with_data(config, data)?;
    let phase1 = run_phase1_on(config, &points)?;
    if phase1.trace.status == RunStatus::Diverged {
        log::warn!("phase 1 diverged; continuing with its last finite parameters");
    }
    let phase2 = run_phase2_on(config, &phase1.params, &points)?;
    Ok(FepinnOutcome { phase1, phase2 })
}

/// Baseline with optional inverse data.
pub fn run_vanilla_with(config: &RunConfig, data: Option<PointSet>) -> Result<PhaseOutcome> {
    run_vanilla_on(config, &points_with_data(config, data)?)
}

/// Mean absolute parameter change over `layers`.
pub fn layer_drift(before: &Parameters, after: &[f64], layers: &[usize]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0;
    for &l in layers {
        for i in before.layer_range(l) {
            sum += (after[i] - before.as_slice()[i]).abs();
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_burgers() -> RunConfig {
        RunConfig {
            benchmark: Benchmark::Burgers,
            width: 6,
            graft: GraftPlan::burgers(),
            seeds: Seeds {
                init: 1,
                sampling: 2,
                ensemble: vec![1, 2, 3, 4, 5],
            },
            points: PointCounts {
                domain: 60,
                initial: 10,
                left: 6,
                right: 6,
                ..Default::default()
            },
            densify: 0.0,
            quantile: 0.7,
            variance_factor: 5f64.sqrt(),
            lambda: 1.0,
            phase1: PhaseSettings {
                max_iters: 20,
                threshold: 1e-8,
            },
            phase2: PhaseSettings {
                max_iters: 15,
                threshold: 1e-8,
            },
            adam: AdamConfig::default(),
            lbfgs: LbfgsConfig::default(),
            heldout: Some(HeldOut { points: 20, every: 5 }),
            snapshot_at: Some(5),
        }
    }

    #[test]
    fn monitor_examples() {
        let c = monitor_convergence(&[1.0, 0.5, 9e-4], 1e-3);
        assert_eq!(c, Convergence { status: RunStatus::Converged, at: Some(2) });
        assert_eq!(monitor_convergence(&[1.0, 0.5], 1e-3).status, RunStatus::BudgetExhausted);
        let d = monitor_convergence(&[1.0, f64::NAN, 1e-9], 1e-3);
        assert_eq!(d, Convergence { status: RunStatus::Diverged, at: Some(1) });
        assert_eq!(monitor_convergence(&[2e6], 1e-3).status, RunStatus::Diverged);
    }

    #[test]
    fn zero_phase1_budget_keeps_init() {
        let mut cfg = tiny_burgers();
        cfg.phase1.max_iters = 0;
        let out = run_phase1(&cfg).unwrap();
        let arch = cfg.phase1_architecture().unwrap();
        let init = init_reduced_variance(&arch, 1, 5f64.sqrt()).unwrap();
        assert_eq!(out.params.as_slice(), init.as_slice());
        assert!(out.params.provenance().iter().all(|&t| t == Provenance::Smart));
        assert_eq!(out.trace.records.len(), 1);
    }

    #[test]
    fn huge_threshold_converges_immediately() {
        let mut cfg = tiny_burgers();
        cfg.phase2.threshold = 1e300;
        let out = run_vanilla(&cfg).unwrap();
        assert_eq!(out.trace.status, RunStatus::Converged);
        assert_eq!(out.trace.steps(), 0);
    }

    #[test]
    fn two_phase_trace_is_reproducible() {
        let cfg = tiny_burgers();
        let a = run_fepinn(&cfg, None).unwrap();
        let b = run_fepinn(&cfg, None).unwrap();
        let mut ca = Vec::new();
        let mut cb = Vec::new();
        a.trace().write_csv(&mut ca).unwrap();
        b.trace().write_csv(&mut cb).unwrap();
        assert_eq!(ca, cb);
        let t = a.trace();
        assert!(t.records.windows(2).all(|w| w[0].iteration < w[1].iteration));
        assert_eq!(t.steps(), a.phase1.trace.steps() + a.phase2.trace.steps());
        assert!(a.phase2.snapshot.is_some());
        assert!(t.records.iter().any(|r| r.heldout_residual.is_some()));
    }

    #[test]
    fn vanilla_shares_inserted_layers() {
        let cfg = tiny_burgers();
        let fe = run_fepinn(&cfg, None).unwrap();
        let va = run_vanilla(&cfg).unwrap();
        for l in cfg.graft.inserted_layer_indices() {
            assert_eq!(fe.phase2.initial.layer(l), va.initial.layer(l));
        }
        for l in cfg.graft.smart_layer_indices() {
            assert_eq!(fe.phase2.initial.provenance()[l], Provenance::Smart);
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = tiny_burgers();
        cfg.lambda = -1.0;
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig { field, .. }) if field == "lambda"));
        let mut cfg = tiny_burgers();
        cfg.points.left = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn trace_header_is_stable() {
        let t = TrainingTrace {
            records: Vec::new(),
            status: RunStatus::Converged,
        };
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "iteration,phase,step,total,pde,inlet,outlet,wall,cylinder,initial,left,right,data,grad_norm,heldout_residual\n"
        );
    }
}
