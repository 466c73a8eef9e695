//! Reachability-graph generation.

use std::collections::VecDeque;

use indexmap::IndexSet;

use crate::net::{Marking, PetriNet, TransitionKind};

use super::SolverError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub transition: usize,
    /// Rate (1/ms) out of a tangible state, unnormalised weight out of a
    /// vanishing one.
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct ReachabilityGraph {
    pub states: IndexSet<Marking>,
    pub vanishing: Vec<bool>,
    /// Grouped by `from`; `offsets[s]..offsets[s + 1]` are the edges of `s`.
    pub edges: Vec<Edge>,
    pub offsets: Vec<usize>,
    pub initial: usize,
    pub transition_ids: Vec<String>,
}

impl ReachabilityGraph {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn out_edges(&self, s: usize) -> &[Edge] {
        &self.edges[self.offsets[s]..self.offsets[s + 1]]
    }

    pub fn tangible_count(&self) -> usize {
        self.vanishing.iter().filter(|v| !**v).count()
    }
}

/// Breadth-first exploration from the initial marking.
pub fn explore(net: &PetriNet, max_states: usize) -> Result<ReachabilityGraph, SolverError> {
    if let Some(t) = net
        .transitions()
        .iter()
        .find(|t| matches!(t.kind, TransitionKind::Deterministic { .. }))
    {
        return Err(SolverError::Deterministic(t.id.clone()));
    }
    let mut states = IndexSet::new();
    states.insert(net.initial_marking());
    let mut vanishing = Vec::new();
    let mut edges = Vec::new();
    let mut offsets = vec![0];
    let mut queue = VecDeque::from([0usize]);
    let mut scratch = Vec::new();

    while let Some(s) = queue.pop_front() {
        debug_assert_eq!(s, vanishing.len());
        let tokens = states[s].tokens().to_vec();
        let enabled = net.enabled_indices(&tokens);
        let is_vanishing = enabled
            .first()
            .is_some_and(|&t| net.transitions()[t].kind.is_immediate());
        vanishing.push(is_vanishing);
        for t in enabled {
            let value = match net.transitions()[t].kind {
                TransitionKind::Immediate { weight, .. } => weight,
                TransitionKind::Exponential { .. } => net.exponential_rate(t, &tokens),
                TransitionKind::Deterministic { .. } => unreachable!(),
            };
            scratch.clear();
            scratch.extend_from_slice(&tokens);
            net.fire_in_place(t, &mut scratch);
            let (to, fresh) = states.insert_full(Marking::new(scratch.clone()));
            if fresh {
                if states.len() > max_states {
                    return Err(SolverError::StateSpaceExceeded { max_states });
                }
                queue.push_back(to);
            }
            edges.push(Edge {
                from: s,
                to,
                transition: t,
                value,
            });
        }
        offsets.push(edges.len());
    }

    let graph = ReachabilityGraph {
        states,
        vanishing,
        edges,
        offsets,
        initial: 0,
        transition_ids: net.transitions().iter().map(|t| t.id.clone()).collect(),
    };
    super::eliminate::check_vanishing_loops(&graph)?;
    Ok(graph)
}
