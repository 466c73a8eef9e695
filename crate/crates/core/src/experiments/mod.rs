//! Parameter sweeps and 2^k factorial designs over the Fabric model.

mod doe;
mod output;

pub use doe::{doe_2k, effects_from_responses, DoeCell, DoeSpec, Effect, EffectsTable, Factor};
pub use output::{doe_cells_csv, doe_effects_csv, plot_csv, sweep_csv};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::evaluate::BackendConfig;
use crate::hlf::{
    conservation_violations, default_sim_config, evaluate_hlf, utilization_half_width, HlfMetrics,
    HlfParams, Phase, METRIC_NAMES, PARAM_NAMES,
};
use crate::solver::SolverConfig;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid experiment spec: {0}")]
    Spec(String),
    #[error("malformed experiment spec at line {line}, column {column}: {msg}")]
    Parse {
        line: usize,
        column: usize,
        msg: String,
    },
    #[error("cell {index} ({params}) failed: {msg}")]
    Cell {
        index: usize,
        params: String,
        msg: String,
    },
    #[error("worker pool: {0}")]
    Pool(String),
}

fn spec_err(msg: impl Into<String>) -> ExperimentError {
    ExperimentError::Spec(msg.into())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    #[serde(alias = "sim")]
    Simulation,
    Solver,
}

/// Optional replacements for the per-point simulation defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warmup_time_ms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_length_ms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confidence_level: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_states: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub erlang_k: Option<u32>,
}

/// How each parameter point is evaluated.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub backend: BackendKind,
    pub sim: SimOverrides,
    pub solver: SolverOverrides,
}

impl RunSettings {
    pub fn backend_for(&self, p: &HlfParams, seed: u64) -> BackendConfig {
        match self.backend {
            BackendKind::Simulation => {
                let mut cfg = default_sim_config(p, seed);
                let o = &self.sim;
                if let Some(v) = o.warmup_time_ms {
                    cfg.warmup_time_ms = v;
                }
                if let Some(v) = o.batch_count {
                    cfg.batch_count = v;
                }
                if let Some(v) = o.batch_length_ms {
                    cfg.batch_length_ms = v;
                }
                if let Some(v) = o.confidence_level {
                    cfg.confidence_level = v;
                }
                cfg.max_time_ms = cfg.horizon_ms();
                BackendConfig::Simulation(cfg)
            }
            BackendKind::Solver => {
                let d = SolverConfig::default();
                let o = &self.solver;
                BackendConfig::Solver {
                    solver: SolverConfig {
                        max_states: o.max_states.unwrap_or(d.max_states),
                        tol: o.tol.unwrap_or(d.tol),
                        max_iter: o.max_iter.unwrap_or(d.max_iter),
                    },
                    erlang_k: o.erlang_k.unwrap_or(20),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub param: String,
    pub values: Vec<f64>,
}

fn all_metrics() -> Vec<String> {
    METRIC_NAMES.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub base: HlfParams,
    pub axes: Vec<Axis>,
    #[serde(default, flatten)]
    pub run: RunSettings,
    #[serde(default = "all_metrics")]
    pub metrics: Vec<String>,
    #[serde(default)]
    pub seed: u64,
    /// Axis used as the x column of the plot-data output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_axis: Option<String>,
}

pub(crate) fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, ExperimentError> {
    serde_json::from_str(text).map_err(|e| ExperimentError::Parse {
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })
}

pub(crate) fn check_param(name: &str) -> Result<(), ExperimentError> {
    if PARAM_NAMES.contains(&name) {
        Ok(())
    } else {
        Err(spec_err(format!("unknown parameter `{name}`")))
    }
}

pub(crate) fn check_metric(name: &str) -> Result<(), ExperimentError> {
    if HlfMetrics::default().get(name).is_some() {
        Ok(())
    } else {
        Err(spec_err(format!("unknown metric `{name}`")))
    }
}

impl SweepSpec {
    pub fn from_json(text: &str) -> Result<SweepSpec, ExperimentError> {
        let spec: SweepSpec = parse_json(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.axes.is_empty() {
            return Err(spec_err("at least one axis is required"));
        }
        for (i, a) in self.axes.iter().enumerate() {
            check_param(&a.param)?;
            if a.values.is_empty() {
                return Err(spec_err(format!("axis `{}` has no values", a.param)));
            }
            if self.axes[..i].iter().any(|b| b.param == a.param) {
                return Err(spec_err(format!("axis `{}` listed twice", a.param)));
            }
        }
        if self.metrics.is_empty() {
            return Err(spec_err("no metrics requested"));
        }
        for m in &self.metrics {
            check_metric(m)?;
        }
        if let Some(x) = &self.x_axis {
            if !self.axes.iter().any(|a| &a.param == x) {
                return Err(spec_err(format!("x_axis `{x}` is not a sweep axis")));
            }
        }
        self.base.validate().map_err(|e| spec_err(e.to_string()))
    }

    /// Grid points in cartesian order, first axis outermost.
    pub fn points(&self) -> Vec<Vec<f64>> {
        let mut points = vec![Vec::new()];
        for axis in &self.axes {
            points = points
                .into_iter()
                .flat_map(|prefix| {
                    axis.values.iter().map(move |&v| {
                        let mut p = prefix.clone();
                        p.push(v);
                        p
                    })
                })
                .collect();
        }
        points
    }
}

/// Deterministic per-point seed derived from the master seed.
pub fn point_seed(master: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    mix(master ^ mix(index))
}

/// Worker count: `SPNPERF_WORKERS` if set, else available parallelism.
pub fn default_workers() -> usize {
    std::env::var("SPNPERF_WORKERS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

pub(crate) fn run_pool<T: Send>(
    workers: usize,
    job: impl FnOnce() -> T + Send,
) -> Result<T, ExperimentError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| ExperimentError::Pool(e.to_string()))?;
    Ok(pool.install(job))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub values: Vec<f64>,
    pub params: HlfParams,
    pub seed: u64,
    pub outcome: Result<HlfMetrics, String>,
    pub warnings: Vec<String>,
    /// Conservation invariants that failed on this point.
    pub violations: Vec<String>,
    pub nonconvergent: bool,
    /// Half-widths of the endorsement, ordering and commit utilizations.
    pub utilization_half_widths: [f64; 3],
}

/// Evaluate one parameter point, capturing errors in the row.
pub(crate) fn evaluate_point(
    params: HlfParams,
    values: Vec<f64>,
    run: &RunSettings,
    seed: u64,
) -> SweepRow {
    let backend = run.backend_for(&params, seed);
    let mut row = SweepRow {
        values,
        params,
        seed,
        outcome: Err(String::new()),
        warnings: Vec::new(),
        violations: Vec::new(),
        nonconvergent: false,
        utilization_half_widths: [0.0; 3],
    };
    match evaluate_hlf(&row.params, &backend) {
        Ok((metrics, result)) => {
            row.violations =
                conservation_violations(&result, &row.params, 1e-6).unwrap_or_default();
            row.warnings = result.warnings.clone();
            row.nonconvergent = result.nonconvergent;
            for (slot, phase) in row.utilization_half_widths.iter_mut().zip([
                Phase::Endorsement,
                Phase::Ordering,
                Phase::Commit,
            ]) {
                *slot = utilization_half_width(&result, &row.params, phase).unwrap_or(0.0);
            }
            row.outcome = Ok(metrics);
        }
        Err(e) => row.outcome = Err(e.to_string()),
    }
    row
}

/// Evaluate every grid point; row order follows [`SweepSpec::points`].
pub fn run_sweep(spec: &SweepSpec, workers: usize) -> Result<Vec<SweepRow>, ExperimentError> {
    spec.validate()?;
    let points = spec.points();
    run_pool(workers, || {
        points
            .into_par_iter()
            .enumerate()
            .map(|(i, values)| {
                let mut params = spec.base.clone();
                let mut err = None;
                for (axis, &v) in spec.axes.iter().zip(&values) {
                    if let Err(e) = params.set(&axis.param, v) {
                        err = Some(e.to_string());
                    }
                }
                let seed = point_seed(spec.seed, i as u64);
                match err {
                    Some(msg) => SweepRow {
                        values,
                        params,
                        seed,
                        outcome: Err(msg),
                        warnings: Vec::new(),
                        violations: Vec::new(),
                        nonconvergent: false,
                        utilization_half_widths: [0.0; 3],
                    },
                    None => evaluate_point(params, values, &spec.run, seed),
                }
            })
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfilePoint {
    pub timeout_ms: f64,
    pub block_call_rate: f64,
    pub timeout_call_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionProfile {
    pub points: Vec<ProfilePoint>,
    /// First point where complete blocks are cut at least as often as
    /// partial ones.
    pub crossing: Option<usize>,
}

/// Block and timeout call rates along a timeout grid at fixed block size.
pub fn interaction_profile(
    base: &HlfParams,
    timeouts: &[f64],
    run: &RunSettings,
    seed: u64,
    workers: usize,
) -> Result<InteractionProfile, ExperimentError> {
    let spec = SweepSpec {
        name: "interaction".into(),
        base: base.clone(),
        axes: vec![Axis {
            param: "timeout_ms".into(),
            values: timeouts.to_vec(),
        }],
        run: run.clone(),
        metrics: all_metrics(),
        seed,
        x_axis: None,
    };
    let rows = run_sweep(&spec, workers)?;
    let mut points = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        let m = row.outcome.as_ref().map_err(|msg| ExperimentError::Cell {
            index: i,
            params: format!("timeout_ms={}", row.values[0]),
            msg: msg.clone(),
        })?;
        points.push(ProfilePoint {
            timeout_ms: row.values[0],
            block_call_rate: m.block_call_rate_per_ms,
            timeout_call_rate: m.timeout_call_rate_per_ms,
        });
    }
    let crossing = points
        .iter()
        .position(|p| p.block_call_rate >= p.timeout_call_rate);
    Ok(InteractionProfile { points, crossing })
}
