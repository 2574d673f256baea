//! Presets and experiment plan files.
//!
//! A plan file is TOML:
//!
//! ```toml
//! kind = "ratio_sweep"        # single_run | lambda_sweep | ratio_sweep | variance_check | inverse_eval
//! preset = "burgers-desk"
//! out = "runs/ratios"         # optional, relative to the file
//! mode = "both"               # fepinn | vanilla | both
//!
//! [run]                       # overrides of preset fields
//! lambda = 1.0
//! seeds.init = 7
//! phase2.max_iters = 4000
//!
//! [sweep]
//! seeds = [1, 2, 3]           # init seeds
//! ratios = [5.0, 10.0, 20.0]  # domain / boundary point ratios
//! lambdas = [0.1, 1.0]
//! points = 2000               # variance_check domain points
//! ```
//!
//! Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::loss::Benchmark;
use crate::network::GraftPlan;
use crate::optim::{AdamConfig, LbfgsConfig};
use crate::trainer::{HeldOut, PhaseSettings, PointCounts, RunConfig, Seeds};
use crate::{Error, Result};

pub const PRESETS: [&str; 6] = [
    "burgers-desk",
    "burgers-full",
    "cylinder-desk",
    "cylinder-full",
    "inverse-desk",
    "inverse-full",
];

fn ensemble() -> Vec<u64> {
    (101..=105).collect()
}

/// Named run configuration. `*-full` presets use the full-size networks and
/// point counts and are slow on a desktop.
pub fn preset(name: &str) -> Result<RunConfig> {
    let cfg = match name {
        "burgers-desk" => RunConfig {
            benchmark: Benchmark::Burgers,
            width: 20,
            graft: GraftPlan::burgers(),
            seeds: Seeds {
                init: 1,
                sampling: 1,
                ensemble: ensemble(),
            },
            points: PointCounts {
                domain: 2000,
                initial: 100,
                left: 50,
                right: 50,
                ..Default::default()
            },
            densify: 0.0,
            quantile: 0.7,
            variance_factor: 5f64.sqrt(),
            lambda: 1.0,
            phase1: PhaseSettings {
                max_iters: 100,
                threshold: 1e-12,
            },
            phase2: PhaseSettings {
                max_iters: 10000,
                threshold: 1e-7,
            },
            adam: AdamConfig::default(),
            lbfgs: LbfgsConfig::default(),
            heldout: None,
            snapshot_at: Some(100),
        },
        "burgers-full" => RunConfig {
            width: 40,
            points: PointCounts {
                domain: 20000,
                initial: 1000,
                left: 500,
                right: 500,
                ..Default::default()
            },
            phase1: PhaseSettings {
                max_iters: 2000,
                threshold: 1e-12,
            },
            phase2: PhaseSettings {
                max_iters: 50000,
                threshold: 1e-6,
            },
            ..preset("burgers-desk")?
        },
        "cylinder-desk" => RunConfig {
            benchmark: Benchmark::CylinderForward,
            width: 20,
            graft: GraftPlan::cylinder(),
            seeds: Seeds {
                init: 1,
                sampling: 1,
                ensemble: ensemble(),
            },
            points: PointCounts {
                domain: 4000,
                inlet: 100,
                outlet: 50,
                wall: 200,
                cylinder: 100,
                ..Default::default()
            },
            densify: 0.3,
            quantile: 0.7,
            variance_factor: 10f64.sqrt(),
            lambda: 1.0,
            phase1: PhaseSettings {
                max_iters: 2000,
                threshold: 1e-12,
            },
            phase2: PhaseSettings {
                max_iters: 2000,
                threshold: 1e-3,
            },
            adam: AdamConfig::default(),
            lbfgs: LbfgsConfig::default(),
            heldout: Some(HeldOut {
                points: 1000,
                every: 1,
            }),
            snapshot_at: None,
        },
        "cylinder-full" => RunConfig {
            width: 40,
            points: PointCounts {
                domain: 371_760,
                inlet: 2000,
                outlet: 2000,
                wall: 4000,
                cylinder: 2000,
                ..Default::default()
            },
            phase1: PhaseSettings {
                max_iters: 2000,
                threshold: 1e-12,
            },
            phase2: PhaseSettings {
                max_iters: 50000,
                threshold: 1e-4,
            },
            heldout: Some(HeldOut {
                points: 10000,
                every: 100,
            }),
            ..preset("cylinder-desk")?
        },
        "inverse-desk" => RunConfig {
            benchmark: Benchmark::CylinderInverse,
            points: PointCounts {
                data: 60,
                ..preset("cylinder-desk")?.points
            },
            phase2: PhaseSettings {
                max_iters: 2000,
                threshold: 1e-4,
            },
            ..preset("cylinder-desk")?
        },
        "inverse-full" => RunConfig {
            benchmark: Benchmark::CylinderInverse,
            points: PointCounts {
                data: 60,
                ..preset("cylinder-full")?.points
            },
            ..preset("cylinder-full")?
        },
        _ => {
            return Err(Error::config(
                "preset",
                format!("unknown preset `{name}`; available: {}", PRESETS.join(", ")),
            ))
        }
    };
    Ok(cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanKind {
    SingleRun,
    LambdaSweep,
    RatioSweep,
    VarianceCheck,
    InverseEval,
}

impl PlanKind {
    pub fn name(self) -> &'static str {
        match self {
            PlanKind::SingleRun => "single_run",
            PlanKind::LambdaSweep => "lambda_sweep",
            PlanKind::RatioSweep => "ratio_sweep",
            PlanKind::VarianceCheck => "variance_check",
            PlanKind::InverseEval => "inverse_eval",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Fepinn,
    Vanilla,
    Both,
}

impl RunMode {
    pub fn fepinn(self) -> bool {
        matches!(self, RunMode::Fepinn | RunMode::Both)
    }

    pub fn vanilla(self) -> bool {
        matches!(self, RunMode::Vanilla | RunMode::Both)
    }
}

/// One grid cell of a plan.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedRun {
    pub id: String,
    pub config: RunConfig,
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub kind: PlanKind,
    pub mode: RunMode,
    pub runs: Vec<PlannedRun>,
    pub out: PathBuf,
    /// Domain points for `variance_check`.
    pub variance_points: usize,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.runs.is_empty() {
            return Err(Error::config("sweep", "plan grid is empty"));
        }
        for r in &self.runs {
            r.config.validate()?;
        }
        Ok(())
    }

    /// Plan with a single run of `config`.
    pub fn single(config: RunConfig, mode: RunMode, out: PathBuf) -> Self {
        ExperimentPlan {
            kind: PlanKind::SingleRun,
            mode,
            runs: vec![PlannedRun {
                id: "run".into(),
                config,
                ratio: None,
            }],
            out,
            variance_points: 0,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanFile {
    kind: PlanKind,
    preset: String,
    #[serde(default)]
    out: Option<PathBuf>,
    #[serde(default)]
    mode: Option<RunMode>,
    #[serde(default)]
    run: Option<toml::Table>,
    #[serde(default)]
    sweep: SweepFile,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepFile {
    seeds: Option<Vec<u64>>,
    ratios: Option<Vec<f64>>,
    lambdas: Option<Vec<f64>>,
    points: Option<usize>,
}

fn merge(base: &mut toml::Table, overrides: toml::Table) {
    for (k, v) in overrides {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Preset with a table of overrides applied. Unknown keys are errors.
pub fn apply_overrides(base: &RunConfig, overrides: Option<toml::Table>) -> Result<RunConfig> {
    let Some(o) = overrides else {
        return Ok(base.clone());
    };
    let mut table = toml::Table::try_from(base).map_err(|e| Error::Parse(e.to_string()))?;
    merge(&mut table, o);
    let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
    Ok(cfg)
}

fn with_seed(cfg: &RunConfig, seed: u64) -> RunConfig {
    let mut c = cfg.clone();
    c.seeds.init = seed;
    c.seeds.sampling = seed;
    c
}

fn fmt_num(v: f64) -> String {
    format!("{v}")
}

/// Parse plan text. Relative `out` paths resolve against `base_dir`.
pub fn parse_config_str(text: &str, base_dir: &Path) -> Result<ExperimentPlan> {
    let file: PlanFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let base = apply_overrides(&preset(&file.preset)?, file.run)?;
    let seeds = file.sweep.seeds.clone().unwrap_or_else(|| vec![base.seeds.init]);
    let out = base_dir.join(file.out.unwrap_or_else(|| PathBuf::from("runs")));
    let mut runs = Vec::new();
    let default_mode = match file.kind {
        PlanKind::LambdaSweep => RunMode::Vanilla,
        PlanKind::SingleRun => RunMode::Fepinn,
        _ => RunMode::Both,
    };
    match file.kind {
        PlanKind::SingleRun => runs.push(PlannedRun {
            id: "run".into(),
            config: base.clone(),
            ratio: None,
        }),
        PlanKind::LambdaSweep => {
            let lambdas = file
                .sweep
                .lambdas
                .ok_or_else(|| Error::config("sweep.lambdas", "required for lambda_sweep"))?;
            for &s in &seeds {
                for &l in &lambdas {
                    if !(l.is_finite() && l > 0.0) {
                        return Err(Error::config("sweep.lambdas", "every λ must be positive"));
                    }
                    let mut c = with_seed(&base, s);
                    c.lambda = l;
                    runs.push(PlannedRun {
                        id: format!("lambda{}-seed{s}", fmt_num(l)),
                        config: c,
                        ratio: None,
                    });
                }
            }
        }
        PlanKind::RatioSweep => {
            let ratios = file
                .sweep
                .ratios
                .ok_or_else(|| Error::config("sweep.ratios", "required for ratio_sweep"))?;
            for &s in &seeds {
                for &r in &ratios {
                    if !(r.is_finite() && r > 0.0) {
                        return Err(Error::config("sweep.ratios", "every ratio must be positive"));
                    }
                    let mut c = with_seed(&base, s);
                    let nb = c.points.boundary_total(c.benchmark);
                    c.points.domain = ((r * nb as f64).round() as usize).max(1);
                    runs.push(PlannedRun {
                        id: format!("ratio{}-seed{s}", fmt_num(r)),
                        config: c,
                        ratio: Some(r),
                    });
                }
            }
        }
        PlanKind::VarianceCheck | PlanKind::InverseEval => {
            for &s in &seeds {
                runs.push(PlannedRun {
                    id: format!("seed{s}"),
                    config: with_seed(&base, s),
                    ratio: None,
                });
            }
        }
    }
    let plan = ExperimentPlan {
        kind: file.kind,
        mode: file.mode.unwrap_or(default_mode),
        runs,
        out,
        variance_points: file.sweep.points.unwrap_or(base.points.domain),
    };
    plan.validate()?;
    Ok(plan)
}

/// Read and validate a plan file.
pub fn parse_config(path: &Path) -> Result<ExperimentPlan> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text, path.parent().unwrap_or(Path::new(".")))
}
