//! Steady-state solution of a CTMC by Gauss-Seidel sweeps.

use std::collections::VecDeque;

use petgraph::algo::kosaraju_scc;
use petgraph::graph::{DiGraph, NodeIndex};

use super::eliminate::Ctmc;
use super::SolverError;

#[derive(Debug, Clone, PartialEq)]
pub struct Stationary {
    pub pi: Vec<f64>,
    /// Max-norm of πQ at acceptance.
    pub residual: f64,
    pub iterations: usize,
    pub warnings: Vec<String>,
}

/// Compressed adjacency in both directions.
struct Layout {
    out_off: Vec<usize>,
    out: Vec<(usize, f64)>,
    in_off: Vec<usize>,
    inc: Vec<(usize, f64)>,
    diag: Vec<f64>,
}

impl Layout {
    fn new(c: &Ctmc) -> Layout {
        let n = c.len();
        let mut out_off = vec![0; n + 1];
        let mut in_off = vec![0; n + 1];
        for &(i, j, _) in &c.entries {
            out_off[i + 1] += 1;
            in_off[j + 1] += 1;
        }
        for k in 0..n {
            out_off[k + 1] += out_off[k];
            in_off[k + 1] += in_off[k];
        }
        let mut out = vec![(0, 0.0); c.entries.len()];
        let mut inc = vec![(0, 0.0); c.entries.len()];
        let mut diag = vec![0.0; n];
        let (mut oc, mut ic) = (out_off.clone(), in_off.clone());
        for &(i, j, r) in &c.entries {
            out[oc[i]] = (j, r);
            oc[i] += 1;
            inc[ic[j]] = (i, r);
            ic[j] += 1;
            diag[i] += r;
        }
        Layout {
            out_off,
            out,
            in_off,
            inc,
            diag,
        }
    }

    fn succ(&self, i: usize) -> &[(usize, f64)] {
        &self.out[self.out_off[i]..self.out_off[i + 1]]
    }

    fn pred(&self, j: usize) -> &[(usize, f64)] {
        &self.inc[self.in_off[j]..self.in_off[j + 1]]
    }
}

fn reachable(c: &Ctmc, l: &Layout) -> Vec<bool> {
    let mut seen = vec![false; c.len()];
    let mut queue: VecDeque<usize> = c.initial.iter().map(|e| e.0).collect();
    for &s in &queue {
        seen[s] = true;
    }
    while let Some(i) = queue.pop_front() {
        for &(j, _) in l.succ(i) {
            if !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    seen
}

/// Closed communicating classes among the reachable states.
fn bottom_classes(c: &Ctmc, l: &Layout, live: &[bool]) -> Vec<Vec<usize>> {
    let ids: Vec<usize> = (0..c.len()).filter(|&i| live[i]).collect();
    let mut local = vec![usize::MAX; c.len()];
    for (k, &i) in ids.iter().enumerate() {
        local[i] = k;
    }
    let mut g: DiGraph<(), ()> = DiGraph::with_capacity(ids.len(), 0);
    for _ in &ids {
        g.add_node(());
    }
    for (k, &i) in ids.iter().enumerate() {
        for &(j, _) in l.succ(i) {
            g.add_edge(NodeIndex::new(k), NodeIndex::new(local[j]), ());
        }
    }
    let mut classes = Vec::new();
    for scc in kosaraju_scc(&g) {
        let mut members: Vec<usize> = scc.iter().map(|n| ids[n.index()]).collect();
        members.sort_unstable();
        let closed = members.iter().all(|&i| {
            l.succ(i)
                .iter()
                .all(|&(j, _)| members.binary_search(&j).is_ok())
        });
        if closed {
            classes.push(members);
        }
    }
    classes.sort();
    classes
}

fn residual(l: &Layout, pi: &[f64], members: &[usize]) -> f64 {
    members
        .iter()
        .map(|&j| {
            let inflow: f64 = l.pred(j).iter().map(|&(i, r)| pi[i] * r).sum();
            (inflow - pi[j] * l.diag[j]).abs()
        })
        .fold(0.0, f64::max)
}

/// Gauss-Seidel on πQ = 0 restricted to a closed class; writes into `pi`.
fn solve_class(
    l: &Layout,
    members: &[usize],
    pi: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<(f64, usize), SolverError> {
    let uniform = 1.0 / members.len() as f64;
    for &j in members {
        pi[j] = uniform;
    }
    if members.len() == 1 {
        pi[members[0]] = 1.0;
        return Ok((0.0, 0));
    }
    // transient predecessors carry no mass, so the plain sum stays exact
    let mut res = f64::INFINITY;
    for it in 1..=max_iter {
        for &j in members {
            let inflow: f64 = l.pred(j).iter().map(|&(i, r)| pi[i] * r).sum();
            pi[j] = inflow / l.diag[j];
        }
        let total: f64 = members.iter().map(|&j| pi[j]).sum();
        for &j in members {
            pi[j] /= total;
        }
        res = residual(l, pi, members);
        if res <= tol {
            return Ok((res, it));
        }
    }
    Err(SolverError::NoConvergence {
        iterations: max_iter,
        residual: res,
    })
}

/// Probability of ending in each closed class, starting from the initial
/// distribution.
fn absorption(
    c: &Ctmc,
    l: &Layout,
    live: &[bool],
    classes: &[Vec<usize>],
    max_iter: usize,
) -> Vec<f64> {
    let mut class_of = vec![usize::MAX; c.len()];
    for (k, cls) in classes.iter().enumerate() {
        for &i in cls {
            class_of[i] = k;
        }
    }
    let transient: Vec<usize> = (0..c.len())
        .filter(|&i| live[i] && class_of[i] == usize::MAX)
        .collect();
    let mut weights = vec![0.0; classes.len()];
    for (k, _) in classes.iter().enumerate() {
        let mut h: Vec<f64> = (0..c.len())
            .map(|i| f64::from(u8::from(class_of[i] == k)))
            .collect();
        for _ in 0..max_iter {
            let mut change: f64 = 0.0;
            for &i in &transient {
                let v: f64 = l.succ(i).iter().map(|&(j, r)| r * h[j]).sum::<f64>() / l.diag[i];
                change = change.max((v - h[i]).abs());
                h[i] = v;
            }
            if change < 1e-14 {
                break;
            }
        }
        weights[k] = c.initial.iter().map(|&(i, p)| p * h[i]).sum();
    }
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| w / total).collect()
}

/// Stationary distribution of the chain started from `c.initial`.
///
/// For a reducible chain the mass is restricted to the closed classes
/// reachable from the initial distribution, weighted by their absorption
/// probabilities, and a warning is attached.
pub fn steady_state(c: &Ctmc, tol: f64, max_iter: usize) -> Result<Stationary, SolverError> {
    let l = Layout::new(c);
    let live = reachable(c, &l);
    let classes = bottom_classes(c, &l, &live);
    let mut pi = vec![0.0; c.len()];
    let mut warnings = Vec::new();
    let mut worst = 0.0f64;
    let mut iterations = 0;
    for cls in &classes {
        let (res, it) = solve_class(&l, cls, &mut pi, tol, max_iter)?;
        worst = worst.max(res);
        iterations = iterations.max(it);
    }
    let in_classes: usize = classes.iter().map(Vec::len).sum();
    let live_count = live.iter().filter(|x| **x).count();
    if classes.len() > 1 || in_classes < live_count {
        let weights = absorption(c, &l, &live, &classes, max_iter);
        for (cls, w) in classes.iter().zip(&weights) {
            for &i in cls {
                pi[i] *= w;
            }
        }
        warnings.push(format!(
            "reducible chain: {} transient states carry no mass; {} closed class(es) reachable",
            live_count - in_classes,
            classes.len()
        ));
    }
    Ok(Stationary {
        pi,
        residual: worst,
        iterations,
        warnings,
    })
}
