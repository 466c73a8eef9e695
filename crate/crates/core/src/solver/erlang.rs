//! Erlang-k phase expansion of deterministic transitions.
//!
//! A deterministic transition `t` with delay `d` becomes a phase counter
//! place `t__phase` advanced by `t__stage` (mean `d/k`, reads the inputs of
//! `t` without consuming them) and a final exponential `t` (mean `d/k`) that
//! consumes the inputs together with `k-1` phase tokens. Progress is kept
//! while `t` stays enabled and discarded when it is disabled, either by
//! high-priority `t__abort*` transitions or, for firings that disable `t`
//! only transiently (consume and reproduce), by a reset flag drained by
//! `t__drain`.

use std::collections::HashMap;

use crate::net::{NetBuilder, PetriNet, Servers, TransitionKind};
use crate::result::{EvaluationResult, PlaceStats, TransitionStats};

use super::SolverError;

#[derive(Debug, Clone)]
struct Spec {
    id: String,
    kind: TransitionKind,
    guard: Option<String>,
    input: Vec<(String, u32)>,
    output: Vec<(String, u32)>,
    inhibitor: Vec<(String, u32)>,
    /// Original transition represented, `None` for expansion machinery.
    origin: Option<String>,
}

/// An expanded net and the map back to the original.
#[derive(Debug, Clone)]
pub struct Expansion {
    pub net: PetriNet,
    origin: Vec<Option<String>>,
}

fn and(a: &Option<String>, b: String) -> String {
    match a {
        Some(a) => format!("({a}) AND ({b})"),
        None => b,
    }
}

fn exponential(mean_ms: f64) -> TransitionKind {
    TransitionKind::Exponential {
        mean_ms,
        servers: Servers::Single,
    }
}

/// Replace each deterministic transition with a `k`-stage Erlang chain of
/// the same mean.
pub fn erlang_expand(net: &PetriNet, k: u32) -> Result<PetriNet, SolverError> {
    Ok(erlang_expansion(net, k)?.net)
}

pub fn erlang_expansion(net: &PetriNet, k: u32) -> Result<Expansion, SolverError> {
    if k == 0 {
        return Err(SolverError::InvalidPhases);
    }
    let name = |p: usize| net.places()[p].id.clone();
    let named = |v: &[(usize, u32)]| v.iter().map(|&(p, w)| (name(p), w)).collect::<Vec<_>>();
    let mut places: Vec<(String, u32)> = net
        .places()
        .iter()
        .map(|p| (p.id.clone(), p.initial_tokens))
        .collect();
    let mut specs: Vec<Spec> = net
        .transitions()
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let arcs = net.arc_set(i);
            Spec {
                id: t.id.clone(),
                kind: t.kind.clone(),
                guard: t.guard.as_ref().map(|g| g.to_string()),
                input: named(&arcs.input),
                output: named(&arcs.output),
                inhibitor: named(&arcs.inhibitor),
                origin: Some(t.id.clone()),
            }
        })
        .collect();
    let top = net
        .transitions()
        .iter()
        .filter_map(|t| match t.kind {
            TransitionKind::Immediate { priority, .. } => Some(priority),
            _ => None,
        })
        .max()
        .unwrap_or(0)
        + 1;
    let internal = |priority| TransitionKind::Immediate {
        weight: 1.0,
        priority,
    };

    for (ti, t) in net.transitions().iter().enumerate() {
        let TransitionKind::Deterministic { delay_ms } = t.kind else {
            continue;
        };
        let pos = specs
            .iter()
            .position(|s| s.id == t.id)
            .expect("original kept");
        if k == 1 {
            specs[pos].kind = exponential(delay_ms);
            continue;
        }
        let phase = format!("{}__phase", t.id);
        let flag = format!("{}__reset", t.id);
        places.push((phase.clone(), 0));
        let original = specs[pos].clone();
        let stage_mean = delay_ms / f64::from(k);

        // firings that disable `t` only in their intermediate marking
        let arcs = net.arc_set(ti);
        let mut variants = Vec::new();
        for u in specs.iter_mut() {
            if u.origin.is_none() || u.id == t.id {
                continue;
            }
            let pre: HashMap<&str, u32> = u.input.iter().map(|(p, w)| (p.as_str(), *w)).collect();
            let mut conds: Vec<String> = arcs
                .input
                .iter()
                .filter_map(|&(p, w)| {
                    let n = name(p);
                    pre.get(n.as_str()).map(|s| format!("#{n}<{}", w + s))
                })
                .collect();
            if let Some(g) = &t.guard {
                let touches = g
                    .places()
                    .iter()
                    .any(|&p| pre.contains_key(name(p).as_str()));
                if touches {
                    let shifted = g.shifted(&|p| pre.get(name(p).as_str()).copied().unwrap_or(0));
                    conds.push(format!("NOT ({shifted})"));
                }
            }
            if conds.is_empty() {
                continue;
            }
            let reset = conds
                .iter()
                .map(|c| format!("({c})"))
                .collect::<Vec<_>>()
                .join(" OR ");
            let mut variant = u.clone();
            variant.id = format!("{}__r_{}", u.id, t.id);
            variant.guard = Some(and(&u.guard, format!("({reset}) AND (#{phase}>0)")));
            variant.output.push((flag.clone(), 1));
            u.guard = Some(and(&u.guard, format!("(NOT ({reset})) OR (#{phase}<1)")));
            variants.push(variant);
        }
        if !variants.is_empty() {
            places.push((flag.clone(), 0));
            specs.extend(variants);
            specs.push(Spec {
                id: format!("{}__drain", t.id),
                kind: internal(top),
                guard: None,
                input: vec![(flag.clone(), 1), (phase.clone(), 1)],
                output: vec![(flag.clone(), 1)],
                inhibitor: vec![],
                origin: None,
            });
            specs.push(Spec {
                id: format!("{}__drained", t.id),
                kind: internal(top),
                guard: None,
                input: vec![(flag.clone(), 1)],
                output: vec![],
                inhibitor: vec![(phase.clone(), 1)],
                origin: None,
            });
        }

        // progress is lost whenever `t` is disabled
        let mut aborts = Vec::new();
        for (p, w) in &original.input {
            aborts.push((None, vec![], vec![(p.clone(), *w)]));
        }
        for (p, w) in &original.inhibitor {
            aborts.push((None, vec![(p.clone(), *w)], vec![]));
        }
        if let Some(g) = &original.guard {
            aborts.push((Some(format!("NOT ({g})")), vec![], vec![]));
        }
        for (n, (guard, read, inhibit)) in aborts.into_iter().enumerate() {
            let mut input = vec![(phase.clone(), 1)];
            input.extend(read.iter().cloned());
            specs.push(Spec {
                id: format!("{}__abort{n}", t.id),
                kind: internal(top),
                guard,
                input,
                output: read,
                inhibitor: inhibit,
                origin: None,
            });
        }

        let mut stage = original.clone();
        stage.id = format!("{}__stage", t.id);
        stage.kind = exponential(stage_mean);
        stage.output = original.input.clone();
        stage.output.push((phase.clone(), 1));
        stage.inhibitor.push((phase.clone(), k - 1));
        stage.origin = None;
        specs.push(stage);

        let last = &mut specs[pos];
        last.kind = exponential(stage_mean);
        last.input.push((phase.clone(), k - 1));
    }

    let mut b = NetBuilder::new(net.name());
    for (p, n) in &places {
        b.place(p.clone(), *n);
    }
    for s in &specs {
        b.transition(s.id.clone(), s.kind.clone(), s.guard.as_deref());
        for (p, w) in &s.input {
            b.input(p, &s.id, *w);
        }
        for (p, w) in &s.output {
            b.output(&s.id, p, *w);
        }
        for (p, w) in &s.inhibitor {
            b.inhibitor(p, &s.id, *w);
        }
    }
    Ok(Expansion {
        net: b.build()?,
        origin: specs.into_iter().map(|s| s.origin).collect(),
    })
}

impl Expansion {
    /// Map a result on the expanded net back onto the original places and
    /// transitions; split transitions have their rates summed.
    pub fn fold(&self, result: EvaluationResult, original: &PetriNet) -> EvaluationResult {
        let places: Vec<PlaceStats> = result
            .places
            .into_iter()
            .filter(|p| original.place_index(&p.id).is_some())
            .collect();
        let transitions = original
            .transitions()
            .iter()
            .map(|t| {
                let (rate, hw) = result
                    .transitions
                    .iter()
                    .zip(&self.origin)
                    .filter(|(_, o)| o.as_deref() == Some(t.id.as_str()))
                    .fold((0.0, 0.0), |(r, h), (s, _)| (r + s.rate, h + s.half_width));
                TransitionStats {
                    id: t.id.clone(),
                    rate,
                    half_width: hw,
                }
            })
            .collect();
        EvaluationResult {
            places,
            transitions,
            ..result
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn timer_net() -> PetriNet {
        let mut b = NetBuilder::new("timer");
        b.place("C", 1).place("done", 0);
        b.deterministic("timer", 100.0)
            .input("C", "timer", 1)
            .output("timer", "C", 1);
        b.output("timer", "done", 1);
        b.build().unwrap()
    }

    #[test]
    fn k1_is_plain_exponential() {
        let e = erlang_expand(&timer_net(), 1).unwrap();
        assert_eq!(e.transitions().len(), 1);
        assert_eq!(
            e.transitions()[0].kind,
            TransitionKind::Exponential {
                mean_ms: 100.0,
                servers: Servers::Single
            }
        );
    }

    #[test]
    fn k10_stages_of_mean_10() {
        let e = erlang_expand(&timer_net(), 10).unwrap();
        let stage = e.transition_index("timer__stage").unwrap();
        let last = e.transition_index("timer").unwrap();
        for t in [stage, last] {
            assert_eq!(e.transitions()[t].kind, exponential(10.0));
        }
        assert!(e.place_index("timer__phase").is_some());
        // 9 stage firings then the final one
        let phase = e.place_index("timer__phase").unwrap();
        let mut m = e.initial_marking();
        for _ in 0..9 {
            assert_eq!(e.enabled(&m).unwrap(), vec!["timer__stage"]);
            m = e.fire(&m, "timer__stage").unwrap();
        }
        assert_eq!(m[phase], 9);
        assert_eq!(e.enabled(&m).unwrap(), vec!["timer"]);
    }

    #[test]
    fn consume_and_reproduce_resets_progress() {
        let mut b = NetBuilder::new("touch");
        b.place("C", 1).place("done", 0).place("R", 0);
        b.deterministic("timer", 100.0)
            .input("C", "timer", 1)
            .output("timer", "done", 1);
        b.exponential("touch", 40.0)
            .input("C", "touch", 1)
            .input("R", "touch", 1)
            .output("touch", "C", 1);
        b.exponential("arm", 40.0)
            .output("arm", "R", 1)
            .inhibitor("R", "arm", 1);
        let net = b.build().unwrap();
        let e = erlang_expand(&net, 4).unwrap();
        let phase = e.place_index("timer__phase").unwrap();
        let mut m = e.initial_marking();
        m = e.fire(&m, "timer__stage").unwrap();
        m = e.fire(&m, "timer__stage").unwrap();
        m = e.fire(&m, "arm").unwrap();
        assert_eq!(m[phase], 2);
        // the plain copy is masked while progress exists
        assert!(e.fire(&m, "touch").is_err());
        m = e.fire(&m, "touch__r_timer").unwrap();
        while e
            .enabled(&m)
            .unwrap()
            .iter()
            .any(|t| t.starts_with("timer__drain"))
        {
            let t = e.enabled(&m).unwrap()[0].to_string();
            m = e.fire(&m, &t).unwrap();
        }
        assert_eq!(m[phase], 0);
    }

    #[test]
    fn zero_phases_rejected() {
        assert_eq!(
            erlang_expand(&timer_net(), 0).unwrap_err(),
            SolverError::InvalidPhases
        );
    }
}
