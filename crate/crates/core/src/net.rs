//! Net structure, markings, and the enabling and firing rules.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::guard::{self, GuardError, GuardExpr};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetError {
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("arc {from} -> {to}: unknown id `{id}`")]
    UnknownArcEndpoint {
        from: String,
        to: String,
        id: String,
    },
    #[error("arc {from} -> {to} does not connect a place and a transition")]
    NotBipartite { from: String, to: String },
    #[error("arc {from} -> {to}: multiplicity must be at least 1")]
    ZeroMultiplicity { from: String, to: String },
    #[error("transition `{0}`: delay must be finite and > 0")]
    InvalidDelay(String),
    #[error("transition `{0}`: weight must be finite and > 0")]
    InvalidWeight(String),
    #[error("transition `{0}`: priority must be >= 1")]
    InvalidPriority(String),
    #[error("transition `{0}`: infinite-server semantics need at least one input arc")]
    InfiniteServerWithoutInput(String),
    #[error("transition `{transition}`: {source}")]
    Guard {
        transition: String,
        #[source]
        source: GuardError,
    },
    #[error("unknown transition `{0}`")]
    UnknownTransition(String),
    #[error("unknown place `{0}`")]
    UnknownPlace(String),
    #[error("transition `{0}` is not enabled")]
    NotEnabled(String),
    #[error("marking has {got} entries, net has {expected} places")]
    MarkingLength { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Place {
    pub id: String,
    pub initial_tokens: u32,
}

/// Server semantics of an exponential transition. With `Infinite`, the
/// firing rate scales with the enabling degree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Servers {
    #[default]
    Single,
    Infinite,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransitionKind {
    Immediate { weight: f64, priority: u32 },
    Exponential { mean_ms: f64, servers: Servers },
    Deterministic { delay_ms: f64 },
}

impl TransitionKind {
    pub fn is_immediate(&self) -> bool {
        matches!(self, TransitionKind::Immediate { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub id: String,
    pub kind: TransitionKind,
    pub guard: Option<GuardExpr>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArcKind {
    Input,
    Output,
    Inhibitor,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Arc {
    pub source: String,
    pub target: String,
    pub multiplicity: u32,
    pub kind: ArcKind,
}

/// Token counts, one per place, in declaration order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Marking(Box<[u32]>);

impl Marking {
    pub fn new(tokens: Vec<u32>) -> Self {
        Marking(tokens.into_boxed_slice())
    }

    pub fn tokens(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Index<usize> for Marking {
    type Output = u32;
    fn index(&self, i: usize) -> &u32 {
        &self.0[i]
    }
}

impl fmt::Display for Marking {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{t}")?;
        }
        write!(f, "]")
    }
}

/// Compiled arcs of one transition, by place index.
#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct ArcSet {
    pub input: Vec<(usize, u32)>,
    pub output: Vec<(usize, u32)>,
    pub inhibitor: Vec<(usize, u32)>,
}

/// An immutable, validated stochastic Petri net.
#[derive(Debug, Clone, PartialEq)]
pub struct PetriNet {
    name: String,
    places: Vec<Place>,
    transitions: Vec<Transition>,
    arcs: Vec<Arc>,
    place_index: HashMap<String, usize>,
    transition_index: HashMap<String, usize>,
    compiled: Vec<ArcSet>,
}

impl PetriNet {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn places(&self) -> &[Place] {
        &self.places
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    pub fn place_index(&self, id: &str) -> Option<usize> {
        self.place_index.get(id).copied()
    }

    pub fn transition_index(&self, id: &str) -> Option<usize> {
        self.transition_index.get(id).copied()
    }

    pub(crate) fn arc_set(&self, t: usize) -> &ArcSet {
        &self.compiled[t]
    }

    pub fn initial_marking(&self) -> Marking {
        Marking::new(self.places.iter().map(|p| p.initial_tokens).collect())
    }

    /// Parse a guard against this net's places.
    pub fn parse_guard(&self, text: &str) -> Result<GuardExpr, GuardError> {
        guard::parse_with(text, &|n: &str| self.place_index(n))
    }

    fn check_len(&self, m: &Marking) -> Result<(), NetError> {
        if m.len() != self.places.len() {
            return Err(NetError::MarkingLength {
                expected: self.places.len(),
                got: m.len(),
            });
        }
        Ok(())
    }

    /// Input, inhibitor and guard conditions, ignoring priorities.
    pub fn is_structurally_enabled(&self, t: usize, tokens: &[u32]) -> bool {
        let arcs = &self.compiled[t];
        arcs.input.iter().all(|&(p, w)| tokens[p] >= w)
            && arcs.inhibitor.iter().all(|&(p, w)| tokens[p] < w)
            && self.transitions[t]
                .guard
                .as_ref()
                .is_none_or(|g| g.eval_tokens(tokens))
    }

    /// Number of concurrent firings the input arcs allow. Zero when disabled.
    pub fn enabling_degree(&self, t: usize, tokens: &[u32]) -> u32 {
        if !self.is_structurally_enabled(t, tokens) {
            return 0;
        }
        self.compiled[t]
            .input
            .iter()
            .map(|&(p, w)| tokens[p] / w)
            .min()
            .unwrap_or(1)
    }

    /// Current firing rate (1/ms) of an exponential transition, zero when
    /// disabled or for other kinds.
    pub fn exponential_rate(&self, t: usize, tokens: &[u32]) -> f64 {
        match self.transitions[t].kind {
            TransitionKind::Exponential { mean_ms, servers } => {
                let degree = match servers {
                    Servers::Single => u32::from(self.is_structurally_enabled(t, tokens)),
                    Servers::Infinite => self.enabling_degree(t, tokens),
                };
                f64::from(degree) / mean_ms
            }
            _ => 0.0,
        }
    }

    pub(crate) fn enabled_indices(&self, tokens: &[u32]) -> Vec<usize> {
        let mut best: Option<u32> = None;
        let mut immediate = Vec::new();
        for (i, t) in self.transitions.iter().enumerate() {
            if let TransitionKind::Immediate { priority, .. } = t.kind {
                if best.is_some_and(|b| priority < b) || !self.is_structurally_enabled(i, tokens) {
                    continue;
                }
                if best != Some(priority) {
                    immediate.clear();
                    best = Some(priority);
                }
                immediate.push(i);
            }
        }
        if !immediate.is_empty() {
            return immediate;
        }
        (0..self.transitions.len())
            .filter(|&i| !self.transitions[i].kind.is_immediate())
            .filter(|&i| self.is_structurally_enabled(i, tokens))
            .collect()
    }

    /// Transitions enabled in `m`. When any immediate transition is enabled
    /// only the immediate transitions of the highest enabled priority are
    /// returned.
    pub fn enabled(&self, m: &Marking) -> Result<Vec<&str>, NetError> {
        self.check_len(m)?;
        Ok(self
            .enabled_indices(m.tokens())
            .into_iter()
            .map(|i| self.transitions[i].id.as_str())
            .collect())
    }

    /// A marking is vanishing when some immediate transition is enabled.
    pub fn is_vanishing(&self, tokens: &[u32]) -> bool {
        self.transitions
            .iter()
            .enumerate()
            .any(|(i, t)| t.kind.is_immediate() && self.is_structurally_enabled(i, tokens))
    }

    pub(crate) fn fire_in_place(&self, t: usize, tokens: &mut [u32]) {
        let arcs = &self.compiled[t];
        for &(p, w) in &arcs.input {
            tokens[p] -= w;
        }
        for &(p, w) in &arcs.output {
            tokens[p] += w;
        }
    }

    /// Fire `t` in `m`, returning the successor marking.
    pub fn fire(&self, m: &Marking, t: &str) -> Result<Marking, NetError> {
        self.check_len(m)?;
        let idx = self
            .transition_index(t)
            .ok_or_else(|| NetError::UnknownTransition(t.to_string()))?;
        if !self.enabled_indices(m.tokens()).contains(&idx) {
            return Err(NetError::NotEnabled(t.to_string()));
        }
        let mut tokens = m.tokens().to_vec();
        self.fire_in_place(idx, &mut tokens);
        Ok(Marking::new(tokens))
    }
}

#[derive(Debug, Clone)]
struct PendingTransition {
    id: String,
    kind: TransitionKind,
    guard: Option<String>,
}

/// Incremental construction of a [`PetriNet`]; all checks run in `build`.
#[derive(Debug, Clone, Default)]
pub struct NetBuilder {
    name: String,
    places: Vec<Place>,
    transitions: Vec<PendingTransition>,
    arcs: Vec<Arc>,
}

impl NetBuilder {
    pub fn new(name: impl Into<String>) -> Self {
        NetBuilder {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn place(&mut self, id: impl Into<String>, tokens: u32) -> &mut Self {
        self.places.push(Place {
            id: id.into(),
            initial_tokens: tokens,
        });
        self
    }

    pub fn transition(
        &mut self,
        id: impl Into<String>,
        kind: TransitionKind,
        guard: Option<&str>,
    ) -> &mut Self {
        self.transitions.push(PendingTransition {
            id: id.into(),
            kind,
            guard: guard.map(str::to_string),
        });
        self
    }

    pub fn immediate(&mut self, id: impl Into<String>, weight: f64, priority: u32) -> &mut Self {
        self.transition(id, TransitionKind::Immediate { weight, priority }, None)
    }

    pub fn exponential(&mut self, id: impl Into<String>, mean_ms: f64) -> &mut Self {
        self.transition(
            id,
            TransitionKind::Exponential {
                mean_ms,
                servers: Servers::Single,
            },
            None,
        )
    }

    pub fn deterministic(&mut self, id: impl Into<String>, delay_ms: f64) -> &mut Self {
        self.transition(id, TransitionKind::Deterministic { delay_ms }, None)
    }

    /// Attach a guard to the most recently declared transition.
    pub fn guard(&mut self, text: &str) -> &mut Self {
        if let Some(t) = self.transitions.last_mut() {
            t.guard = Some(text.to_string());
        }
        self
    }

    pub fn arc(
        &mut self,
        source: impl Into<String>,
        target: impl Into<String>,
        multiplicity: u32,
        kind: ArcKind,
    ) -> &mut Self {
        self.arcs.push(Arc {
            source: source.into(),
            target: target.into(),
            multiplicity,
            kind,
        });
        self
    }

    pub fn input(&mut self, place: &str, transition: &str, mult: u32) -> &mut Self {
        self.arc(place, transition, mult, ArcKind::Input)
    }

    pub fn output(&mut self, transition: &str, place: &str, mult: u32) -> &mut Self {
        self.arc(transition, place, mult, ArcKind::Output)
    }

    pub fn inhibitor(&mut self, place: &str, transition: &str, mult: u32) -> &mut Self {
        self.arc(place, transition, mult, ArcKind::Inhibitor)
    }

    pub fn build(&self) -> Result<PetriNet, NetError> {
        let mut place_index = HashMap::new();
        for (i, p) in self.places.iter().enumerate() {
            if place_index.insert(p.id.clone(), i).is_some() {
                return Err(NetError::DuplicateId(p.id.clone()));
            }
        }
        let mut transition_index = HashMap::new();
        for (i, t) in self.transitions.iter().enumerate() {
            if place_index.contains_key(&t.id) || transition_index.insert(t.id.clone(), i).is_some()
            {
                return Err(NetError::DuplicateId(t.id.clone()));
            }
            match t.kind {
                TransitionKind::Immediate { weight, priority } => {
                    if !(weight.is_finite() && weight > 0.0) {
                        return Err(NetError::InvalidWeight(t.id.clone()));
                    }
                    if priority < 1 {
                        return Err(NetError::InvalidPriority(t.id.clone()));
                    }
                }
                TransitionKind::Exponential { mean_ms: d, .. }
                | TransitionKind::Deterministic { delay_ms: d } => {
                    if !(d.is_finite() && d > 0.0) {
                        return Err(NetError::InvalidDelay(t.id.clone()));
                    }
                }
            }
        }

        let mut compiled = vec![ArcSet::default(); self.transitions.len()];
        for a in &self.arcs {
            let unknown = |id: &str| NetError::UnknownArcEndpoint {
                from: a.source.clone(),
                to: a.target.clone(),
                id: id.to_string(),
            };
            let not_bipartite = || NetError::NotBipartite {
                from: a.source.clone(),
                to: a.target.clone(),
            };
            for id in [&a.source, &a.target] {
                if !place_index.contains_key(id) && !transition_index.contains_key(id) {
                    return Err(unknown(id));
                }
            }
            if a.multiplicity == 0 {
                return Err(NetError::ZeroMultiplicity {
                    from: a.source.clone(),
                    to: a.target.clone(),
                });
            }
            let (place, trans) = match a.kind {
                ArcKind::Input | ArcKind::Inhibitor => (&a.source, &a.target),
                ArcKind::Output => (&a.target, &a.source),
            };
            let (Some(&p), Some(&t)) = (place_index.get(place), transition_index.get(trans)) else {
                return Err(not_bipartite());
            };
            let set = &mut compiled[t];
            let list = match a.kind {
                ArcKind::Input => &mut set.input,
                ArcKind::Output => &mut set.output,
                ArcKind::Inhibitor => &mut set.inhibitor,
            };
            // parallel arcs of the same kind add up
            match list.iter_mut().find(|(q, _)| *q == p) {
                Some(entry) => entry.1 += a.multiplicity,
                None => list.push((p, a.multiplicity)),
            }
        }

        let mut transitions = Vec::with_capacity(self.transitions.len());
        for (i, t) in self.transitions.iter().enumerate() {
            if matches!(
                t.kind,
                TransitionKind::Exponential {
                    servers: Servers::Infinite,
                    ..
                }
            ) && compiled[i].input.is_empty()
            {
                return Err(NetError::InfiniteServerWithoutInput(t.id.clone()));
            }
            let guard = match &t.guard {
                Some(text) => Some(
                    guard::parse_with(text, &|n: &str| place_index.get(n).copied()).map_err(
                        |source| NetError::Guard {
                            transition: t.id.clone(),
                            source,
                        },
                    )?,
                ),
                None => None,
            };
            transitions.push(Transition {
                id: t.id.clone(),
                kind: t.kind.clone(),
                guard,
            });
        }

        Ok(PetriNet {
            name: self.name.clone(),
            places: self.places.clone(),
            transitions,
            arcs: self.arcs.clone(),
            place_index,
            transition_index,
            compiled,
        })
    }
}

impl PetriNet {
    /// A builder pre-populated with this net's elements, for derived nets.
    pub fn to_builder(&self) -> NetBuilder {
        NetBuilder {
            name: self.name.clone(),
            places: self.places.clone(),
            transitions: self
                .transitions
                .iter()
                .map(|t| PendingTransition {
                    id: t.id.clone(),
                    kind: t.kind.clone(),
                    guard: t.guard.as_ref().map(|g| g.to_string()),
                })
                .collect(),
            arcs: self.arcs.clone(),
        }
    }
}
