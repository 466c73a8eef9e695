//! Stochastic Petri net modelling and performance evaluation.

pub mod evaluate;
pub mod experiments;
pub mod guard;
pub mod hlf;
pub mod net;
pub mod netfile;
pub mod result;
pub mod sim;
pub mod solver;

pub use evaluate::{evaluate, BackendConfig, EvalError};
pub use guard::{GuardError, GuardExpr};
pub use net::{
    Arc, ArcKind, Marking, NetBuilder, NetError, PetriNet, Place, Servers, Transition,
    TransitionKind,
};
pub use netfile::{NetFile, NetFileError};
pub use result::{
    Backend, EvaluationResult, LookupError, PlaceStats, Probe, ProbeStats, TransitionStats,
};
pub use sim::{simulate, SimConfig, SimError};
pub use solver::{evaluate_exact, SolverConfig, SolverError};
