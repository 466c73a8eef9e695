//! JSON interchange format for nets.
//!
//! ```json
//! {
//!   "name": "mm1",
//!   "places": [{"id": "Q", "tokens": 0}],
//!   "transitions": [
//!     {"id": "arrive", "kind": "exponential", "delay_ms": 10.0},
//!     {"id": "route", "kind": "immediate", "weight": 1.0, "priority": 1, "guard": "#Q>0"}
//!   ],
//!   "arcs": [{"from": "arrive", "to": "Q", "mult": 1, "kind": "output"}]
//! }
//! ```
//!
//! `kind` on arcs may be omitted and is then inferred from the direction.
//! Exponential transitions accept `"servers": "single" | "infinite"`.

use serde::{Deserialize, Serialize};

use crate::net::{ArcKind, NetBuilder, NetError, PetriNet, Servers, TransitionKind};

#[derive(Debug, thiserror::Error)]
pub enum NetFileError {
    #[error("malformed net file at line {line}, column {column}: {msg}")]
    Parse {
        line: usize,
        column: usize,
        msg: String,
    },
    #[error("transition `{0}`: missing or inconsistent timing fields")]
    Timing(String),
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindTag {
    Immediate,
    Exponential,
    Deterministic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceEntry {
    pub id: String,
    #[serde(default)]
    pub tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionEntry {
    pub id: String,
    pub kind: KindTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priority: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub servers: Option<Servers>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guard: Option<String>,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArcEntry {
    pub from: String,
    pub to: String,
    #[serde(default = "one")]
    pub mult: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<ArcKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetFile {
    #[serde(default)]
    pub name: String,
    pub places: Vec<PlaceEntry>,
    pub transitions: Vec<TransitionEntry>,
    pub arcs: Vec<ArcEntry>,
}

impl NetFile {
    pub fn from_json(text: &str) -> Result<NetFile, NetFileError> {
        serde_json::from_str(text).map_err(|e| NetFileError::Parse {
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        })
    }

    pub fn to_net(&self) -> Result<PetriNet, NetFileError> {
        let mut b = NetBuilder::new(self.name.clone());
        for p in &self.places {
            b.place(p.id.clone(), p.tokens);
        }
        for t in &self.transitions {
            let kind = match t.kind {
                KindTag::Immediate => {
                    if t.delay_ms.is_some() {
                        return Err(NetFileError::Timing(t.id.clone()));
                    }
                    TransitionKind::Immediate {
                        weight: t.weight.unwrap_or(1.0),
                        priority: t.priority.unwrap_or(1),
                    }
                }
                KindTag::Exponential => TransitionKind::Exponential {
                    mean_ms: t
                        .delay_ms
                        .ok_or_else(|| NetFileError::Timing(t.id.clone()))?,
                    servers: t.servers.unwrap_or_default(),
                },
                KindTag::Deterministic => {
                    if t.servers == Some(Servers::Infinite) {
                        return Err(NetFileError::Timing(t.id.clone()));
                    }
                    TransitionKind::Deterministic {
                        delay_ms: t
                            .delay_ms
                            .ok_or_else(|| NetFileError::Timing(t.id.clone()))?,
                    }
                }
            };
            b.transition(t.id.clone(), kind, t.guard.as_deref());
        }
        let is_place = |id: &str| self.places.iter().any(|p| p.id == id);
        for a in &self.arcs {
            let kind = a.kind.unwrap_or(if is_place(&a.from) {
                ArcKind::Input
            } else {
                ArcKind::Output
            });
            b.arc(a.from.clone(), a.to.clone(), a.mult, kind);
        }
        Ok(b.build()?)
    }

    pub fn from_net(net: &PetriNet) -> NetFile {
        NetFile {
            name: net.name().to_string(),
            places: net
                .places()
                .iter()
                .map(|p| PlaceEntry {
                    id: p.id.clone(),
                    tokens: p.initial_tokens,
                })
                .collect(),
            transitions: net
                .transitions()
                .iter()
                .map(|t| {
                    let guard = t.guard.as_ref().map(|g| g.to_string());
                    match t.kind {
                        TransitionKind::Immediate { weight, priority } => TransitionEntry {
                            id: t.id.clone(),
                            kind: KindTag::Immediate,
                            delay_ms: None,
                            weight: Some(weight),
                            priority: Some(priority),
                            servers: None,
                            guard,
                        },
                        TransitionKind::Exponential { mean_ms, servers } => TransitionEntry {
                            id: t.id.clone(),
                            kind: KindTag::Exponential,
                            delay_ms: Some(mean_ms),
                            weight: None,
                            priority: None,
                            servers: Some(servers),
                            guard,
                        },
                        TransitionKind::Deterministic { delay_ms } => TransitionEntry {
                            id: t.id.clone(),
                            kind: KindTag::Deterministic,
                            delay_ms: Some(delay_ms),
                            weight: None,
                            priority: None,
                            servers: None,
                            guard,
                        },
                    }
                })
                .collect(),
            arcs: net
                .arcs()
                .iter()
                .map(|a| ArcEntry {
                    from: a.source.clone(),
                    to: a.target.clone(),
                    mult: a.multiplicity,
                    kind: Some(a.kind),
                })
                .collect(),
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("net file serialises")
    }
}

impl PetriNet {
    pub fn from_json(text: &str) -> Result<PetriNet, NetFileError> {
        NetFile::from_json(text)?.to_net()
    }

    pub fn to_json(&self) -> String {
        NetFile::from_net(self).to_json_pretty()
    }
}
