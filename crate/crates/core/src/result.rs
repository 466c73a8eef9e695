//! Evaluation output shared by the simulator and the exact solver.

use serde::{Deserialize, Serialize};

use crate::guard::GuardExpr;
use crate::net::PetriNet;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LookupError {
    #[error("no statistics for place `{0}`")]
    Place(String),
    #[error("no statistics for transition `{0}`")]
    Transition(String),
    #[error("no probe named `{0}`")]
    Probe(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Simulation,
    Solver,
}

impl std::fmt::Display for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Backend::Simulation => "simulation",
            Backend::Solver => "solver",
        })
    }
}

/// A named marking predicate whose steady-state probability is measured
/// jointly, e.g. "both endorsement queues full".
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub name: String,
    pub guard: GuardExpr,
}

impl Probe {
    pub fn parse(
        net: &PetriNet,
        name: &str,
        text: &str,
    ) -> Result<Probe, crate::guard::GuardError> {
        Ok(Probe {
            name: name.to_string(),
            guard: net.parse_guard(text)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceStats {
    pub id: String,
    /// Expected token count E(P).
    pub mean: f64,
    pub half_width: f64,
    /// `histogram[i]` = P(m(P) = i). With truncation the last bucket also
    /// holds the mass above it.
    pub histogram: Vec<f64>,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionStats {
    pub id: String,
    /// Firings per ms.
    pub rate: f64,
    pub half_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeStats {
    pub name: String,
    pub probability: f64,
    pub half_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    pub backend: Backend,
    pub places: Vec<PlaceStats>,
    pub transitions: Vec<TransitionStats>,
    pub probes: Vec<ProbeStats>,
    /// Post-warmup simulated time; zero for the solver.
    pub total_time_ms: f64,
    /// Set when every tracked estimate has a relative half-width above 50%.
    pub nonconvergent: bool,
    pub warnings: Vec<String>,
}

impl EvaluationResult {
    pub fn place(&self, id: &str) -> Result<&PlaceStats, LookupError> {
        self.places
            .iter()
            .find(|p| p.id == id)
            .ok_or_else(|| LookupError::Place(id.to_string()))
    }

    pub fn mean(&self, id: &str) -> Result<f64, LookupError> {
        self.place(id).map(|p| p.mean)
    }

    pub fn transition(&self, id: &str) -> Result<&TransitionStats, LookupError> {
        self.transitions
            .iter()
            .find(|t| t.id == id)
            .ok_or_else(|| LookupError::Transition(id.to_string()))
    }

    /// Firings of `id` per ms of (post-warmup) time.
    pub fn firing_rate(&self, id: &str) -> Result<f64, LookupError> {
        self.transition(id).map(|t| t.rate)
    }

    pub fn probe(&self, name: &str) -> Result<&ProbeStats, LookupError> {
        self.probes
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| LookupError::Probe(name.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EvaluationResult {
        EvaluationResult {
            backend: Backend::Simulation,
            places: vec![PlaceStats {
                id: "P".into(),
                mean: 0.5,
                half_width: 0.01,
                histogram: vec![0.5, 0.5],
                truncated: false,
            }],
            transitions: vec![
                TransitionStats {
                    id: "t".into(),
                    rate: 500.0 / 50_000.0,
                    half_width: 0.0,
                },
                TransitionStats {
                    id: "never".into(),
                    rate: 0.0,
                    half_width: 0.0,
                },
            ],
            probes: vec![],
            total_time_ms: 50_000.0,
            nonconvergent: false,
            warnings: vec![],
        }
    }

    #[test]
    fn lookups() {
        let r = sample();
        assert_eq!(r.firing_rate("t").unwrap(), 0.01);
        assert_eq!(r.firing_rate("never").unwrap(), 0.0);
        assert_eq!(r.firing_rate("x"), Err(LookupError::Transition("x".into())));
        assert_eq!(r.mean("P").unwrap(), 0.5);
        assert!(r.probe("p").is_err());
    }
}
