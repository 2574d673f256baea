use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use fepinn::harness::{
    evaluate_solution, fd_self_test, load_checkpoint, parse_config, preset, read_data_csv, save_checkpoint,
    write_data_csv, EvalOptions, ExperimentPlan, PlanKind, PRESETS,
};
use fepinn::loss::Benchmark;
use fepinn::network::{Architecture, Parameters};
use fepinn::sampling::PointSet;
use fepinn::trainer::{run_fepinn, run_phase1, run_vanilla_with, RunConfig, TrainingTrace};

#[derive(Parser)]
#[command(name = "fepinn", version, about = "Two-phase PINN training and experiment harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Plan file; its first run configuration is used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset (ignored when --config is given).
    #[arg(long, default_value = "burgers-desk")]
    preset: String,
    /// Overrides the init and sampling seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Labeled velocity CSV for the inverse benchmark.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Phase 1 only: write the smart-weight checkpoint and its trace.
    Phase1(RunArgs),
    /// Both phases.
    Train(RunArgs),
    /// Single-phase baseline.
    Vanilla(RunArgs),
    /// Run every configuration of a plan file.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Replaces the plan's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the init and sampling seeds of every run.
        #[arg(long)]
        seed: Option<u64>,
        /// Runs in flight at once.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Check derivatives and gradients against finite differences.
    Check {
        #[arg(long, default_value_t = 100)]
        draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Error report for a checkpoint.
    Eval {
        checkpoint: PathBuf,
        #[arg(long)]
        benchmark: String,
        #[arg(long, default_value_t = 12345)]
        seed: u64,
    },
    /// Write the sampled training points of a configuration as CSV.
    ExportPoints(RunArgs),
    /// List preset names.
    Presets,
}

fn run_config(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let plan = parse_config(path).with_context(|| format!("reading {}", path.display()))?;
            plan.runs[0].config.clone()
        }
        None => preset(&args.preset)?,
    };
    if let Some(s) = args.seed {
        cfg.seeds.init = s;
        cfg.seeds.sampling = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn inverse_data(cfg: &RunConfig, args: &RunArgs) -> Result<Option<PointSet>> {
    if cfg.benchmark != Benchmark::CylinderInverse {
        return Ok(None);
    }
    match &args.data {
        Some(path) => {
            let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            Ok(Some(read_data_csv(f)?))
        }
        None => {
            log::info!("no --data given; training a forward reference to label velocity data");
            let d = fepinn::harness::generate_inverse_data(cfg)?;
            write_data_csv(&d, create(&args.out.join("data.csv"))?)?;
            Ok(Some(d))
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_trace(trace: &TrainingTrace, path: &Path) -> Result<()> {
    trace.write_csv(create(path)?)?;
    Ok(())
}

fn finish(
    cfg: &RunConfig,
    trace: &TrainingTrace,
    params: &Parameters,
    arch: &Architecture,
    out: &Path,
    stem: &str,
) -> Result<()> {
    write_trace(trace, &out.join(format!("{stem}-trace.csv")))?;
    save_checkpoint(params, arch, &out.join(format!("{stem}.ckpt")))?;
    let last = trace.last().map_or(f64::NAN, |r| r.breakdown.total);
    println!(
        "{stem}: {} after {} iterations, loss {last:.4e}",
        trace.status.name(),
        trace.steps()
    );
    let report = evaluate_solution(params, arch, cfg.benchmark, &EvalOptions::default())?;
    print_report(&report);
    Ok(())
}

fn print_report(report: &fepinn::harness::EvalReport) {
    if let Some(v) = report.relative_l2 {
        println!("relative L2 error: {v:.4e}");
    }
    if let Some(v) = report.max_error {
        println!("max error: {v:.4e}");
    }
    if let Some(v) = report.r_squared {
        println!("inlet R^2: {v:.6}");
    }
    for (s, v) in &report.boundary_mse {
        println!("boundary MSE {}: {v:.4e}", s.name());
    }
    if let Some(v) = report.mean_residual {
        println!("mean |residual|: {v:.4e}");
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Phase1(args) => {
            let cfg = run_config(&args)?;
            fs::create_dir_all(&args.out)?;
            let o = run_phase1(&cfg)?;
            write_trace(&o.trace, &args.out.join("phase1-trace.csv"))?;
            save_checkpoint(&o.params, &o.arch, &args.out.join("smart.ckpt"))?;
            println!(
                "phase 1: {} after {} iterations, primary loss {:.4e} -> {:.4e}",
                o.trace.status.name(),
                o.trace.steps(),
                o.trace.records.first().map_or(f64::NAN, |r| r.breakdown.total),
                o.trace.last().map_or(f64::NAN, |r| r.breakdown.total)
            );
        }
        Command::Train(args) => {
            let cfg = run_config(&args)?;
            fs::create_dir_all(&args.out)?;
            let data = inverse_data(&cfg, &args)?;
            let o = run_fepinn(&cfg, data)?;
            save_checkpoint(&o.phase1.params, &o.phase1.arch, &args.out.join("smart.ckpt"))?;
            finish(&cfg, &o.trace(), &o.phase2.params, &o.phase2.arch, &args.out, "fepinn")?;
        }
        Command::Vanilla(args) => {
            let cfg = run_config(&args)?;
            fs::create_dir_all(&args.out)?;
            let data = inverse_data(&cfg, &args)?;
            let o = run_vanilla_with(&cfg, data)?;
            finish(&cfg, &o.trace, &o.params, &o.arch, &args.out, "vanilla")?;
        }
        Command::Sweep {
            config,
            out,
            seed,
            jobs,
        } => {
            let mut plan: ExperimentPlan =
                parse_config(&config).with_context(|| format!("reading {}", config.display()))?;
            if let Some(o) = out {
                plan.out = o;
            }
            if let Some(s) = seed {
                for r in &mut plan.runs {
                    r.config.seeds.init = s;
                    r.config.seeds.sampling = s;
                }
            }
            let report = fepinn::harness::run_plan(&plan, jobs)?;
            if plan.kind == PlanKind::VarianceCheck {
                println!("seed  xavier_pde  reduced_pde  ratio");
                for r in &report.variance {
                    println!("{}  {:.4e}  {:.4e}  {:.3e}", r.seed, r.xavier_pde, r.reduced_pde, r.ratio());
                }
            } else {
                let failed = report.rows.iter().filter(|r| r.error.is_some()).count();
                println!(
                    "{} runs ({} failed); summary in {}",
                    report.rows.len(),
                    failed,
                    report.summary_path().display()
                );
            }
        }
        Command::Check { draws, seed } => {
            let r = fd_self_test(draws, seed)?;
            println!(
                "{} draws: first-order {:.2e}, second-order {:.2e}, parameter gradient {:.2e}",
                r.draws, r.first_order, r.second_order, r.param_grad
            );
            if !r.passes(1e-6, 1e-4) {
                bail!("finite-difference check failed");
            }
            println!("ok");
        }
        Command::Eval {
            checkpoint,
            benchmark,
            seed,
        } => {
            let b = Benchmark::from_name(&benchmark).with_context(|| {
                format!("unknown benchmark `{benchmark}` (cylinder_forward, cylinder_inverse, burgers)")
            })?;
            let (params, arch) = load_checkpoint(&checkpoint)?;
            let opts = EvalOptions {
                seed,
                ..Default::default()
            };
            print_report(&evaluate_solution(&params, &arch, b, &opts)?);
        }
        Command::ExportPoints(args) => {
            let cfg = run_config(&args)?;
            fs::create_dir_all(&args.out)?;
            let points = cfg.sample_points()?;
            let g = cfg.benchmark.geometry();
            let outputs = cfg.benchmark.output_names();
            points
                .domain
                .write_csv(create(&args.out.join("domain.csv"))?, g.coord_names(), outputs)?;
            points
                .boundary
                .write_csv(create(&args.out.join("boundary.csv"))?, g.coord_names(), outputs)?;
            println!(
                "{} domain and {} boundary points written to {}",
                points.domain.len(),
                points.boundary.len(),
                args.out.display()
            );
        }
        Command::Presets => {
            for p in PRESETS {
                println!("{p}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::new()
        .filter_level(log::LevelFilter::Info)
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
