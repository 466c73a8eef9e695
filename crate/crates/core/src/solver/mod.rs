//! Exact steady-state evaluation through the underlying CTMC.

mod ctmc;
mod eliminate;
mod erlang;
mod explore;

pub use ctmc::{steady_state, Stationary};
pub use eliminate::{eliminate_vanishing, Ctmc, SparseRow};
pub use erlang::{erlang_expand, erlang_expansion, Expansion};
pub use explore::{explore, Edge, ReachabilityGraph};

use serde::{Deserialize, Serialize};

use crate::net::{NetError, PetriNet, TransitionKind};
use crate::result::{Backend, EvaluationResult, PlaceStats, Probe, ProbeStats, TransitionStats};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolverError {
    #[error("state space exceeds {max_states} states")]
    StateSpaceExceeded { max_states: usize },
    #[error("immediate transitions cycle forever from marking {marking}")]
    VanishingLoop { marking: String },
    #[error("transition `{0}` is deterministic; expand it into Erlang phases first")]
    Deterministic(String),
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("Erlang expansion needs at least one phase")]
    InvalidPhases,
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_states: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_states: 2_000_000,
            tol: 1e-10,
            max_iter: 100_000,
        }
    }
}

/// Explore, eliminate and solve with default iteration limits.
pub fn evaluate_exact(
    net: &PetriNet,
    max_states: usize,
    tol: f64,
) -> Result<EvaluationResult, SolverError> {
    let cfg = SolverConfig {
        max_states,
        tol,
        ..SolverConfig::default()
    };
    evaluate_exact_with(net, &cfg, &[])
}

pub fn evaluate_exact_with(
    net: &PetriNet,
    cfg: &SolverConfig,
    probes: &[Probe],
) -> Result<EvaluationResult, SolverError> {
    let graph = explore(net, cfg.max_states)?;
    let chain = eliminate_vanishing(&graph)?;
    drop(graph);
    let st = steady_state(&chain, cfg.tol, cfg.max_iter)?;
    let pi = &st.pi;

    let places = net
        .places()
        .iter()
        .enumerate()
        .map(|(p, place)| {
            let top = chain.markings.iter().map(|m| m[p]).max().unwrap_or(0) as usize;
            let mut histogram = vec![0.0; top + 1];
            for (m, &w) in chain.markings.iter().zip(pi) {
                histogram[m[p] as usize] += w;
            }
            let mean = histogram
                .iter()
                .enumerate()
                .map(|(i, w)| i as f64 * w)
                .sum();
            PlaceStats {
                id: place.id.clone(),
                mean,
                half_width: 0.0,
                histogram,
                truncated: false,
            }
        })
        .collect();

    let mut rates = vec![0.0; net.transitions().len()];
    for (i, (m, &w)) in chain.markings.iter().zip(pi).enumerate() {
        if w == 0.0 {
            continue;
        }
        for (t, tr) in net.transitions().iter().enumerate() {
            if let TransitionKind::Exponential { .. } = tr.kind {
                rates[t] += w * net.exponential_rate(t, m.tokens());
            }
        }
        for &(t, f) in &chain.immediate_flow[i] {
            rates[t] += w * f;
        }
    }
    let transitions = net
        .transitions()
        .iter()
        .zip(rates)
        .map(|(t, rate)| TransitionStats {
            id: t.id.clone(),
            rate,
            half_width: 0.0,
        })
        .collect();

    let probes = probes
        .iter()
        .map(|p| ProbeStats {
            name: p.name.clone(),
            probability: chain
                .markings
                .iter()
                .zip(pi)
                .filter(|(m, _)| p.guard.eval(m))
                .map(|(_, w)| w)
                .sum(),
            half_width: 0.0,
        })
        .collect();

    Ok(EvaluationResult {
        backend: Backend::Solver,
        places,
        transitions,
        probes,
        total_time_ms: 0.0,
        nonconvergent: false,
        warnings: st.warnings,
    })
}
