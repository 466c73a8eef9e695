//! Vanishing-marking elimination: rates entering a zero-time marking are
//! redistributed over the tangible markings it eventually reaches.

use std::collections::BTreeMap;

use petgraph::algo::kosaraju_scc;
use petgraph::graph::{DiGraph, NodeIndex};

use crate::net::Marking;

use super::explore::ReachabilityGraph;
use super::SolverError;

/// Sparse row of `(column, value)` pairs sorted by column.
pub type SparseRow = Vec<(usize, f64)>;

#[derive(Debug, Clone)]
pub struct Ctmc {
    pub markings: Vec<Marking>,
    /// Off-diagonal generator entries `(i, j, rate)`, sorted, `i != j`.
    pub entries: Vec<(usize, usize, f64)>,
    /// Rate of firings that return to the same tangible state.
    pub self_rates: Vec<f64>,
    /// Distribution over tangible states reached from the initial marking.
    pub initial: SparseRow,
    /// Per tangible state, expected immediate firings per ms spent there,
    /// keyed by transition index.
    pub immediate_flow: Vec<SparseRow>,
}

impl Ctmc {
    pub fn len(&self) -> usize {
        self.markings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.markings.is_empty()
    }

    /// Total outgoing rate of state `i`, self-loops included.
    pub fn outflow(&self, i: usize) -> f64 {
        let lo = self.entries.partition_point(|e| e.0 < i);
        let hi = self.entries.partition_point(|e| e.0 <= i);
        self.entries[lo..hi].iter().map(|e| e.2).sum::<f64>() + self.self_rates[i]
    }
}

#[derive(Default, Clone)]
struct Passage {
    /// Tangible (graph index) exit distribution.
    exits: BTreeMap<usize, f64>,
    fires: BTreeMap<usize, f64>,
}

fn add_scaled(dst: &mut BTreeMap<usize, f64>, src: &BTreeMap<usize, f64>, w: f64) {
    for (&k, &v) in src {
        *dst.entry(k).or_insert(0.0) += w * v;
    }
}

struct VanishingGraph {
    local: Vec<Option<usize>>,
    global: Vec<usize>,
    sccs: Vec<Vec<usize>>,
}

fn vanishing_sccs(g: &ReachabilityGraph) -> VanishingGraph {
    let mut local = vec![None; g.len()];
    let mut global = Vec::new();
    for s in 0..g.len() {
        if g.vanishing[s] {
            local[s] = Some(global.len());
            global.push(s);
        }
    }
    let mut dg: DiGraph<(), ()> = DiGraph::with_capacity(global.len(), 0);
    for _ in &global {
        dg.add_node(());
    }
    for (l, &s) in global.iter().enumerate() {
        for e in g.out_edges(s) {
            if let Some(t) = local[e.to] {
                dg.add_edge(NodeIndex::new(l), NodeIndex::new(t), ());
            }
        }
    }
    // successors come before predecessors
    let sccs = kosaraju_scc(&dg)
        .into_iter()
        .map(|c| c.into_iter().map(|n| n.index()).collect())
        .collect();
    VanishingGraph {
        local,
        global,
        sccs,
    }
}

fn loop_error(g: &ReachabilityGraph, s: usize) -> SolverError {
    SolverError::VanishingLoop {
        marking: g.states[s].to_string(),
    }
}

/// Fails when some set of vanishing markings can never be left.
pub(crate) fn check_vanishing_loops(g: &ReachabilityGraph) -> Result<(), SolverError> {
    let vg = vanishing_sccs(g);
    for scc in &vg.sccs {
        let members: Vec<usize> = scc.iter().map(|&l| vg.global[l]).collect();
        let trapped = members
            .iter()
            .all(|&s| g.out_edges(s).iter().all(|e| members.contains(&e.to)));
        if trapped {
            return Err(loop_error(g, members[0]));
        }
    }
    Ok(())
}

fn normalised(g: &ReachabilityGraph, s: usize) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
    let edges = g.out_edges(s);
    let total: f64 = edges.iter().map(|e| e.value).sum();
    edges
        .iter()
        .map(move |e| (e.to, e.transition, e.value / total))
}

const SCC_TOL: f64 = 1e-15;
const SCC_MAX_SWEEPS: usize = 1_000_000;

fn solve_passages(
    g: &ReachabilityGraph,
) -> Result<(Vec<Option<usize>>, Vec<Passage>), SolverError> {
    let vg = vanishing_sccs(g);
    let mut passages = vec![Passage::default(); vg.global.len()];
    let contribution = |passages: &[Passage], to: usize, t: usize, p: f64, acc: &mut Passage| {
        *acc.fires.entry(t).or_insert(0.0) += p;
        match vg.local[to] {
            None => *acc.exits.entry(to).or_insert(0.0) += p,
            Some(l) => {
                add_scaled(&mut acc.exits, &passages[l].exits, p);
                add_scaled(&mut acc.fires, &passages[l].fires, p);
            }
        }
    };
    for scc in &vg.sccs {
        let cyclic = scc.len() > 1
            || g.out_edges(vg.global[scc[0]])
                .iter()
                .any(|e| e.to == vg.global[scc[0]]);
        if !cyclic {
            let s = vg.global[scc[0]];
            let mut acc = Passage::default();
            for (to, t, p) in normalised(g, s) {
                contribution(&passages, to, t, p, &mut acc);
            }
            passages[scc[0]] = acc;
            continue;
        }
        let members: Vec<usize> = scc.iter().map(|&l| vg.global[l]).collect();
        if members
            .iter()
            .all(|&s| g.out_edges(s).iter().all(|e| members.contains(&e.to)))
        {
            return Err(loop_error(g, members[0]));
        }
        // Gauss-Seidel on the absorbing chain restricted to this component
        let mut sweeps = 0;
        loop {
            let mut change: f64 = 0.0;
            for &l in scc {
                let mut acc = Passage::default();
                for (to, t, p) in normalised(g, vg.global[l]) {
                    contribution(&passages, to, t, p, &mut acc);
                }
                let mass =
                    |p: &Passage| p.exits.values().sum::<f64>() + p.fires.values().sum::<f64>();
                let (before, after) = (mass(&passages[l]), mass(&acc));
                change = change.max((after - before).abs() / after.max(1.0));
                passages[l] = acc;
            }
            sweeps += 1;
            if change < SCC_TOL {
                break;
            }
            if sweeps >= SCC_MAX_SWEEPS {
                return Err(SolverError::NoConvergence {
                    iterations: sweeps,
                    residual: change,
                });
            }
        }
    }
    Ok((vg.local, passages))
}

/// Reduce a reachability graph to a CTMC over its tangible markings.
pub fn eliminate_vanishing(g: &ReachabilityGraph) -> Result<Ctmc, SolverError> {
    let (local, passages) = solve_passages(g)?;
    let mut ctmc_index = vec![usize::MAX; g.len()];
    let mut markings = Vec::new();
    for s in 0..g.len() {
        if !g.vanishing[s] {
            ctmc_index[s] = markings.len();
            markings.push(g.states[s].clone());
        }
    }
    let n = markings.len();
    let mut entries = Vec::new();
    let mut self_rates = vec![0.0; n];
    let mut immediate_flow = Vec::with_capacity(n);
    let mut row: BTreeMap<usize, f64> = BTreeMap::new();
    let mut flow: BTreeMap<usize, f64> = BTreeMap::new();
    for s in 0..g.len() {
        if g.vanishing[s] {
            continue;
        }
        let i = ctmc_index[s];
        row.clear();
        flow.clear();
        for e in g.out_edges(s) {
            match local[e.to] {
                None => *row.entry(ctmc_index[e.to]).or_insert(0.0) += e.value,
                Some(l) => {
                    for (&to, &p) in &passages[l].exits {
                        *row.entry(ctmc_index[to]).or_insert(0.0) += e.value * p;
                    }
                    add_scaled(&mut flow, &passages[l].fires, e.value);
                }
            }
        }
        for (&j, &r) in &row {
            if j == i {
                self_rates[i] += r;
            } else if r > 0.0 {
                entries.push((i, j, r));
            }
        }
        immediate_flow.push(flow.iter().map(|(&t, &v)| (t, v)).collect());
    }
    let initial = match local[g.initial] {
        None => vec![(ctmc_index[g.initial], 1.0)],
        Some(l) => passages[l]
            .exits
            .iter()
            .map(|(&s, &p)| (ctmc_index[s], p))
            .collect(),
    };
    Ok(Ctmc {
        markings,
        entries,
        self_rates,
        initial,
        immediate_flow,
    })
}
