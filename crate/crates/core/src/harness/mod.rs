//! Experiment plans, sweeps, persistence and reports.

mod check;
mod checkpoint;
mod config;
mod eval;

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

pub use check::{fd_self_test, relative_error, FdReport, PARAMS_PER_DRAW, REL_FLOOR};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_for, save_checkpoint, MAGIC, VERSION,
};
pub use config::{
    apply_overrides, parse_config, parse_config_str, preset, ExperimentPlan, PlanKind, PlannedRun, RunMode, PRESETS,
};
pub use eval::{burgers_errors, evaluate_solution, r_squared, EvalOptions, EvalReport, BURGERS_GRID, INLET_POINTS};

use crate::loss::{pde_loss, Benchmark, LossBreakdown};
use crate::network::{forward, init_reduced_variance, init_xavier, Architecture, Parameters};
use crate::pde;
use crate::sampling::{lhs_sample, Label, PointSet, Segment};
use crate::trainer::{run_fepinn, run_vanilla_with, PhaseOutcome, RunConfig, TrainingTrace, TRACE_HEADER};
use crate::{Error, Result};

/// Columns of `summary.csv`.
pub const SUMMARY_HEADER: [&str; 24] = [
    "run_id",
    "method",
    "benchmark",
    "lambda",
    "ratio",
    "seed_init",
    "seed_sampling",
    "status",
    "iterations",
    "iterations_to_threshold",
    "wall_seconds",
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
    "metric_name",
    "metric_value",
    "error",
];

/// Columns of `variance.csv`.
pub const VARIANCE_HEADER: [&str; 4] = ["seed", "xavier_pde", "reduced_pde", "ratio"];

const BOUNDARY_COLUMNS: [Segment; 7] = [
    Segment::Inlet,
    Segment::Outlet,
    Segment::Wall,
    Segment::Cylinder,
    Segment::Initial,
    Segment::Left,
    Segment::Right,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Fepinn,
    Vanilla,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Fepinn => "fepinn",
            Method::Vanilla => "vanilla",
        }
    }
}

/// Steps needed to first reach `threshold` in the last phase of a trace,
/// plus the full step counts of every earlier phase. Rows are
/// `(phase, step, total)` in trace order.
pub fn iterations_to_threshold<'a>(
    rows: impl IntoIterator<Item = (&'a str, usize, f64)>,
    threshold: f64,
) -> Option<usize> {
    let rows: Vec<_> = rows.into_iter().collect();
    let final_phase = rows.last()?.0;
    let mut earlier = 0;
    let mut i = 0;
    while i < rows.len() && rows[i].0 != final_phase {
        let phase = rows[i].0;
        while i < rows.len() && rows[i].0 == phase {
            i += 1;
        }
        earlier += rows[i - 1].1;
    }
    rows[i..]
        .iter()
        .find(|r| r.2 <= threshold)
        .map(|r| earlier + r.1)
}

/// [`iterations_to_threshold`] of an in-memory trace.
pub fn trace_iterations_to_threshold(trace: &TrainingTrace, threshold: f64) -> Option<usize> {
    iterations_to_threshold(
        trace
            .records
            .iter()
            .map(|r| (r.phase.name(), r.step, r.breakdown.total)),
        threshold,
    )
}

/// `(phase, step, total)` rows of a trace CSV.
pub fn read_trace_rows<R: Read>(reader: R) -> Result<Vec<(String, usize, f64)>> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers()?.clone();
    if header.iter().ne(TRACE_HEADER) {
        return Err(Error::Parse(format!("unexpected trace header: {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let bad = |c: &str| Error::Parse(format!("bad {c} in trace row {rec:?}"));
        let step = rec[2].parse().map_err(|_| bad("step"))?;
        let total = rec[3].parse().map_err(|_| bad("total"))?;
        rows.push((rec[1].to_string(), step, total));
    }
    Ok(rows)
}

/// PDE loss at Xavier and at reduced-variance initialization for one seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceRow {
    pub seed: u64,
    pub xavier_pde: f64,
    pub reduced_pde: f64,
}

impl VarianceRow {
    pub fn ratio(&self) -> f64 {
        self.reduced_pde / self.xavier_pde
    }
}

pub fn variance_row(
    arch: &Architecture,
    benchmark: Benchmark,
    domain: &PointSet,
    seed: u64,
    factor: f64,
) -> Result<VarianceRow> {
    let consts = benchmark.constants();
    let loss = |p: &Parameters| pde_loss(p.as_slice(), arch, domain, benchmark.kernel(), &consts);
    Ok(VarianceRow {
        seed,
        xavier_pde: loss(&init_xavier(arch, seed))?,
        reduced_pde: loss(&init_reduced_variance(arch, seed, factor)?)?,
    })
}

/// Labeled velocity points for the inverse benchmark, read off a trained
/// forward-problem network.
pub fn label_velocity_data(params: &Parameters, arch: &Architecture, n: usize, seed: u64) -> Result<PointSet> {
    let pts = lhs_sample(&Benchmark::CylinderForward.geometry(), n, seed, 0.0)?;
    let mut data = PointSet::new(2);
    for p in pts.iter() {
        let out = forward(params, arch, p)?;
        let labels = vec![
            Label {
                output: pde::U,
                value: out[pde::U],
            },
            Label {
                output: pde::V,
                value: out[pde::V],
            },
        ];
        data.push(p, Segment::Interior, Some(labels));
    }
    Ok(data)
}

/// Train a forward reference with the inverse run's settings and label
/// `config.points.data` points from it.
pub fn generate_inverse_data(config: &RunConfig) -> Result<PointSet> {
    let mut forward_cfg = config.clone();
    forward_cfg.benchmark = Benchmark::CylinderForward;
    if forward_cfg.points.inlet == 0 {
        forward_cfg.points.inlet = forward_cfg.points.outlet.max(1);
    }
    let reference = run_fepinn(&forward_cfg, None)?;
    log::info!(
        "forward reference finished: {} (loss {:.3e})",
        reference.phase2.trace.status.name(),
        reference.phase2.trace.last().map_or(f64::NAN, |r| r.breakdown.total)
    );
    label_velocity_data(
        &reference.phase2.params,
        &reference.phase2.arch,
        config.points.data,
        config.seeds.sampling.wrapping_add(3),
    )
}

/// Write a labeled velocity set as CSV (`x,y,segment,u,v`).
pub fn write_data_csv<W: Write>(data: &PointSet, writer: W) -> Result<()> {
    data.write_csv(writer, &["x", "y"], &["u", "v"])
}

/// Read a CSV written by [`write_data_csv`].
pub fn read_data_csv<R: Read>(reader: R) -> Result<PointSet> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers()?.clone();
    if header.iter().ne(["x", "y", "segment", "u", "v"]) {
        return Err(Error::Parse(format!("unexpected data header: {header:?}")));
    }
    let mut data = PointSet::new(2);
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| Error::Parse(format!("bad number `{}` in data row", &rec[i])))
        };
        let labels = vec![
            Label {
                output: pde::U,
                value: num(3)?,
            },
            Label {
                output: pde::V,
                value: num(4)?,
            },
        ];
        data.push(&[num(0)?, num(1)?], Segment::Interior, Some(labels));
    }
    Ok(data)
}

/// One line of `summary.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub run_id: String,
    pub method: Method,
    pub benchmark: Benchmark,
    pub lambda: f64,
    pub ratio: f64,
    pub seed_init: u64,
    pub seed_sampling: u64,
    /// Run status name, or `error` when the run failed to start or finish.
    pub status: String,
    pub iterations: usize,
    pub iterations_to_threshold: Option<usize>,
    pub wall_seconds: f64,
    pub breakdown: Option<LossBreakdown>,
    pub metric: Option<(&'static str, f64)>,
    pub error: Option<String>,
    pub trace_file: Option<PathBuf>,
}

impl SummaryRow {
    fn record(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let b = self.breakdown.as_ref();
        let mut row = vec![
            self.run_id.clone(),
            self.method.name().into(),
            self.benchmark.name().into(),
            self.lambda.to_string(),
            self.ratio.to_string(),
            self.seed_init.to_string(),
            self.seed_sampling.to_string(),
            self.status.clone(),
            self.iterations.to_string(),
            self.iterations_to_threshold.map(|v| v.to_string()).unwrap_or_default(),
            format!("{:.3}", self.wall_seconds),
            opt(b.map(|b| b.total)),
            opt(b.map(|b| b.pde)),
        ];
        for s in BOUNDARY_COLUMNS {
            row.push(opt(b.and_then(|b| b.segment(s))));
        }
        row.push(opt(b.and_then(|b| b.data)));
        row.push(self.metric.map(|m| m.0.to_string()).unwrap_or_default());
        row.push(opt(self.metric.map(|m| m.1)));
        row.push(self.error.clone().unwrap_or_default());
        row
    }
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        w.write_record(r.record())?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn write_variance_csv<W: Write>(rows: &[VarianceRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(VARIANCE_HEADER)?;
    for r in rows {
        w.write_record([
            r.seed.to_string(),
            r.xavier_pde.to_string(),
            r.reduced_pde.to_string(),
            r.ratio().to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

/// Files and rows produced by [`run_plan`].
#[derive(Debug, Clone)]
pub struct PlanReport {
    pub out: PathBuf,
    pub rows: Vec<SummaryRow>,
    pub variance: Vec<VarianceRow>,
}

impl PlanReport {
    pub fn summary_path(&self) -> PathBuf {
        self.out.join("summary.csv")
    }

    /// Rows of one method, in plan order.
    pub fn method_rows(&self, method: Method) -> impl Iterator<Item = &SummaryRow> {
        self.rows.iter().filter(move |r| r.method == method)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn headline(outcome: &PhaseOutcome, benchmark: Benchmark) -> Result<Option<(&'static str, f64)>> {
    let report = evaluate_solution(&outcome.params, &outcome.arch, benchmark, &EvalOptions::default())?;
    Ok(report.headline())
}

struct Task<'a> {
    run: &'a PlannedRun,
    method: Method,
}

fn execute(task: &Task<'_>, data: Option<&PointSet>, out: &Path) -> SummaryRow {
    let cfg = &task.run.config;
    let mut row = SummaryRow {
        run_id: task.run.id.clone(),
        method: task.method,
        benchmark: cfg.benchmark,
        lambda: cfg.lambda,
        ratio: task.run.ratio.unwrap_or_else(|| cfg.points.ratio(cfg.benchmark)),
        seed_init: cfg.seeds.init,
        seed_sampling: cfg.seeds.sampling,
        status: "error".into(),
        iterations: 0,
        iterations_to_threshold: None,
        wall_seconds: 0.0,
        breakdown: None,
        metric: None,
        error: None,
        trace_file: None,
    };
    let start = Instant::now();
    let result = (|| -> Result<()> {
        let (trace, last) = match task.method {
            Method::Fepinn => {
                let o = run_fepinn(cfg, data.cloned())?;
                (o.trace(), o.phase2)
            }
            Method::Vanilla => {
                let o = run_vanilla_with(cfg, data.cloned())?;
                (o.trace.clone(), o)
            }
        };
        row.wall_seconds = start.elapsed().as_secs_f64();
        row.status = trace.status.name().into();
        row.iterations = trace.steps();
        row.iterations_to_threshold = trace_iterations_to_threshold(&trace, cfg.phase2.threshold);
        row.breakdown = trace.last().map(|r| r.breakdown.clone());
        let stem = format!("{}-{}", task.run.id, task.method.name());
        let trace_path = out.join("traces").join(format!("{stem}.csv"));
        trace.write_csv(create(&trace_path)?)?;
        row.trace_file = Some(trace_path);
        save_checkpoint(
            &last.params,
            &last.arch,
            &out.join("checkpoints").join(format!("{stem}.ckpt")),
        )?;
        row.metric = headline(&last, cfg.benchmark)?;
        Ok(())
    })();
    if let Err(e) = result {
        log::warn!("run {} ({}) failed: {e}", task.run.id, task.method.name());
        row.wall_seconds = start.elapsed().as_secs_f64();
        row.status = "error".into();
        row.error = Some(e.to_string());
    }
    row
}

/// Execute every run of `plan` with up to `jobs` runs in flight, then write
/// `summary.csv` (and `variance.csv` for variance checks) under the plan's
/// output directory. Failed runs become rows with status `error`.
pub fn run_plan(plan: &ExperimentPlan, jobs: usize) -> Result<PlanReport> {
    plan.validate()?;
    let out = plan.out.clone();
    create_dir(&out)?;
    let mut report = PlanReport {
        out: out.clone(),
        rows: Vec::new(),
        variance: Vec::new(),
    };
    if plan.kind == PlanKind::VarianceCheck {
        for run in &plan.runs {
            let cfg = &run.config;
            let domain = lhs_sample(
                &cfg.benchmark.geometry(),
                plan.variance_points,
                cfg.seeds.sampling,
                cfg.densify,
            )?;
            let arch = cfg.phase1_architecture()?;
            report
                .variance
                .push(variance_row(&arch, cfg.benchmark, &domain, cfg.seeds.init, cfg.variance_factor)?);
        }
        write_variance_csv(&report.variance, create(&out.join("variance.csv"))?)?;
        write_summary_csv(&report.rows, create(&report.summary_path())?)?;
        return Ok(report);
    }
    create_dir(&out.join("traces"))?;
    create_dir(&out.join("checkpoints"))?;

    let data = if plan.runs.iter().any(|r| r.config.benchmark == Benchmark::CylinderInverse) {
        let d = generate_inverse_data(&plan.runs[0].config)?;
        write_data_csv(&d, create(&out.join("data.csv"))?)?;
        Some(d)
    } else {
        None
    };

    let mut tasks = Vec::new();
    for run in &plan.runs {
        if plan.mode.fepinn() {
            tasks.push(Task {
                run,
                method: Method::Fepinn,
            });
        }
        if plan.mode.vanilla() {
            tasks.push(Task {
                run,
                method: Method::Vanilla,
            });
        }
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<SummaryRow>>> = Mutex::new(vec![None; tasks.len()]);
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, tasks.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(task) = tasks.get(i) else { break };
                let d = match task.run.config.benchmark {
                    Benchmark::CylinderInverse => data.as_ref(),
                    _ => None,
                };
                let row = execute(task, d, &out);
                log::info!(
                    "{} {}: {} after {} iterations",
                    row.run_id,
                    row.method.name(),
                    row.status,
                    row.iterations
                );
                results.lock().expect("result lock")[i] = Some(row);
            });
        }
    });
    report.rows = results
        .into_inner()
        .expect("result lock")
        .into_iter()
        .map(|r| r.expect("every task ran"))
        .collect();
    write_summary_csv(&report.rows, create(&report.summary_path())?)?;
    Ok(report)
}

/// Median with `None` counted as larger than every value.
pub fn median_iterations(values: &[Option<usize>]) -> Option<usize> {
    let mut v: Vec<usize> = values.iter().map(|x| x.unwrap_or(usize::MAX)).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_unstable();
    let m = v[v.len() / 2];
    (m != usize::MAX).then_some(m)
}
