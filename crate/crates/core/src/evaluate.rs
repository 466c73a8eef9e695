//! Backend dispatch: one entry point for simulation and exact analysis.

use serde::{Deserialize, Serialize};

use crate::net::{PetriNet, TransitionKind};
use crate::result::{EvaluationResult, Probe};
use crate::sim::{simulate, SimConfig, SimError};
use crate::solver::{erlang_expansion, evaluate_exact_with, SolverConfig, SolverError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "lowercase")]
pub enum BackendConfig {
    Simulation(SimConfig),
    Solver {
        #[serde(flatten)]
        solver: SolverConfig,
        /// Phases used for deterministic transitions.
        erlang_k: u32,
    },
}

impl BackendConfig {
    pub fn solver_default() -> BackendConfig {
        BackendConfig::Solver {
            solver: SolverConfig::default(),
            erlang_k: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Evaluate `net` with the chosen backend. The solver expands deterministic
/// transitions into Erlang phases and reports on the original elements.
pub fn evaluate(
    net: &PetriNet,
    backend: &BackendConfig,
    probes: &[Probe],
) -> Result<EvaluationResult, EvalError> {
    match backend {
        BackendConfig::Simulation(cfg) => Ok(simulate(net, cfg, probes)?),
        BackendConfig::Solver { solver, erlang_k } => {
            let has_deterministic = net
                .transitions()
                .iter()
                .any(|t| matches!(t.kind, TransitionKind::Deterministic { .. }));
            if !has_deterministic {
                return Ok(evaluate_exact_with(net, solver, probes)?);
            }
            // original places keep their indices, so probes stay valid
            let expansion = erlang_expansion(net, *erlang_k)?;
            let result = evaluate_exact_with(&expansion.net, solver, probes)?;
            Ok(expansion.fold(result, net))
        }
    }
}
