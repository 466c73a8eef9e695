use proptest::prelude::*;
use spnperf::{ArcKind, GuardExpr, Marking, NetBuilder, NetError, PetriNet, TransitionKind};

const PLACES: [&str; 5] = ["P0", "P1", "P2", "P3", "P4"];

#[derive(Debug, Clone)]
struct ArcSpec {
    place: usize,
    trans: usize,
    mult: u32,
    kind: u8,
}

#[derive(Debug, Clone)]
struct TransSpec {
    kind: u8,
    priority: u32,
    weight: f64,
    guard: Option<String>,
}

#[derive(Debug, Clone)]
struct NetSpec {
    places: usize,
    transitions: Vec<TransSpec>,
    arcs: Vec<ArcSpec>,
}

fn atom(places: usize) -> impl Strategy<Value = String> {
    (
        0..places,
        prop::sample::select(vec![">", ">=", "=", "<", "<="]),
        0u32..4,
    )
        .prop_map(|(p, op, v)| format!("#{}{op}{v}", PLACES[p]))
}

fn guard_text(places: usize) -> impl Strategy<Value = String> {
    atom(places).prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(|e| format!("NOT ({e})")),
            inner.clone().prop_map(|e| format!("({e})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("{a} AND {b}")),
            (inner.clone(), inner).prop_map(|(a, b)| format!("({a}) OR ({b})")),
        ]
    })
}

fn net_spec() -> impl Strategy<Value = NetSpec> {
    (1usize..=5, 1usize..=5).prop_flat_map(|(np, nt)| {
        let trans = prop::collection::vec(
            (
                0u8..3,
                1u32..4,
                0.5f64..4.0,
                prop::option::weighted(0.4, guard_text(np)),
            )
                .prop_map(|(kind, priority, weight, guard)| TransSpec {
                    kind,
                    priority,
                    weight,
                    guard,
                }),
            nt,
        );
        let arcs = prop::collection::vec(
            (0..np, 0..nt, 1u32..4, 0u8..3).prop_map(|(place, trans, mult, kind)| ArcSpec {
                place,
                trans,
                mult,
                kind,
            }),
            0..12,
        );
        (Just(np), trans, arcs).prop_map(|(places, transitions, arcs)| NetSpec {
            places,
            transitions,
            arcs,
        })
    })
}

fn build(spec: &NetSpec) -> PetriNet {
    let mut b = NetBuilder::new("random");
    for p in &PLACES[..spec.places] {
        b.place(*p, 0);
    }
    for (i, t) in spec.transitions.iter().enumerate() {
        let id = format!("T{i}");
        match t.kind {
            0 => b.immediate(id, t.weight, t.priority),
            1 => b.exponential(id, t.weight),
            _ => b.deterministic(id, t.weight),
        };
        if let Some(g) = &t.guard {
            b.guard(g);
        }
    }
    // merge duplicate arcs of the same kind between the same pair
    let mut seen = std::collections::HashSet::new();
    for a in &spec.arcs {
        if !seen.insert((a.place, a.trans, a.kind)) {
            continue;
        }
        let (p, t) = (PLACES[a.place], format!("T{}", a.trans));
        match a.kind {
            0 => b.input(p, &t, a.mult),
            1 => b.output(&t, p, a.mult),
            _ => b.inhibitor(p, &t, a.mult),
        };
    }
    b.build().expect("generated nets are well formed")
}

fn marking(places: usize) -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(0u32..6, places)
}

fn input_weight(net: &PetriNet, t: &str, place: &str) -> u32 {
    net.arcs()
        .iter()
        .filter(|a| a.kind == ArcKind::Input && a.source == place && a.target == t)
        .map(|a| a.multiplicity)
        .sum()
}

fn output_weight(net: &PetriNet, t: &str, place: &str) -> u32 {
    net.arcs()
        .iter()
        .filter(|a| a.kind == ArcKind::Output && a.source == t && a.target == place)
        .map(|a| a.multiplicity)
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn firing_keeps_tokens_non_negative((spec, tokens) in net_spec().prop_flat_map(|s| { let n = s.places; (Just(s), marking(n)) })) {
        let net = build(&spec);
        let m = Marking::new(tokens.clone());
        for t in net.enabled(&m).unwrap() {
            let next = net.fire(&m, t).unwrap();
            for (i, place) in net.places().iter().enumerate() {
                let expected = i64::from(tokens[i]) - i64::from(input_weight(&net, t, &place.id))
                    + i64::from(output_weight(&net, t, &place.id));
                prop_assert!(expected >= 0);
                prop_assert_eq!(i64::from(next.tokens()[i]), expected);
            }
        }
    }

    #[test]
    fn disabled_transitions_refuse_to_fire((spec, tokens) in net_spec().prop_flat_map(|s| { let n = s.places; (Just(s), marking(n)) })) {
        let net = build(&spec);
        let m = Marking::new(tokens);
        let enabled = net.enabled(&m).unwrap();
        for t in net.transitions() {
            if !enabled.contains(&t.id.as_str()) {
                prop_assert_eq!(net.fire(&m, &t.id), Err(NetError::NotEnabled(t.id.clone())));
            }
        }
    }

    #[test]
    fn immediate_transitions_preempt_timed((spec, tokens) in net_spec().prop_flat_map(|s| { let n = s.places; (Just(s), marking(n)) })) {
        let net = build(&spec);
        let m = Marking::new(tokens.clone());
        let enabled = net.enabled(&m).unwrap();
        let any_immediate = net
            .transitions()
            .iter()
            .enumerate()
            .any(|(i, t)| t.kind.is_immediate() && net.is_structurally_enabled(i, &tokens));
        prop_assert_eq!(any_immediate, net.is_vanishing(&tokens));
        if any_immediate {
            prop_assert!(!enabled.is_empty());
            let prios: Vec<u32> = enabled
                .iter()
                .map(|id| match net.transitions()[net.transition_index(id).unwrap()].kind {
                    TransitionKind::Immediate { priority, .. } => priority,
                    _ => 0,
                })
                .collect();
            // only immediates, all at the highest enabled priority
            prop_assert!(prios.iter().all(|&p| p >= 1 && p == prios[0]));
            let top = net
                .transitions()
                .iter()
                .enumerate()
                .filter_map(|(i, t)| match t.kind {
                    TransitionKind::Immediate { priority, .. } if net.is_structurally_enabled(i, &tokens) => Some(priority),
                    _ => None,
                })
                .max()
                .unwrap();
            prop_assert_eq!(prios[0], top);
        }
    }

    #[test]
    fn enabled_and_fire_are_pure((spec, tokens) in net_spec().prop_flat_map(|s| { let n = s.places; (Just(s), marking(n)) })) {
        let net = build(&spec);
        let m = Marking::new(tokens);
        let first = net.enabled(&m).unwrap();
        prop_assert_eq!(&first, &net.enabled(&m.clone()).unwrap());
        for t in first {
            prop_assert_eq!(net.fire(&m, t).unwrap(), net.fire(&m, t).unwrap());
        }
    }

    #[test]
    fn guard_print_parse_roundtrip((text, tokens) in guard_text(5).prop_flat_map(|g| (Just(g), marking(5)))) {
        let net = build(&NetSpec { places: 5, transitions: vec![], arcs: vec![] });
        let parsed: GuardExpr = net.parse_guard(&text).unwrap();
        let printed = parsed.to_string();
        let reparsed = net.parse_guard(&printed).unwrap();
        prop_assert_eq!(&parsed, &reparsed);
        prop_assert_eq!(printed, reparsed.to_string());
        let m = Marking::new(tokens);
        prop_assert_eq!(parsed.eval(&m), reparsed.eval(&m));
    }

    #[test]
    fn guard_evaluation_matches_reference(a in 0u32..6, b in 0u32..6, c in 0u32..4, d in 0u32..4) {
        let net = build(&NetSpec { places: 2, transitions: vec![], arcs: vec![] });
        let g = net.parse_guard(&format!("NOT (#P0>={c}) OR (#P1={d} AND #P0<{d})")).unwrap();
        let expected = !(a >= c) || (b == d && a < d);
        prop_assert_eq!(g.eval(&Marking::new(vec![a, b])), expected);
    }
}

#[test]
fn place_to_place_arc_rejected() {
    let mut b = NetBuilder::new("bad");
    b.place("A", 1).place("B", 0).exponential("t", 1.0);
    b.arc("A", "B", 1, ArcKind::Output);
    assert!(matches!(b.build(), Err(NetError::NotBipartite { .. })));
}

#[test]
fn transition_to_transition_arc_rejected() {
    let mut b = NetBuilder::new("bad");
    b.place("A", 1).exponential("t", 1.0).exponential("u", 1.0);
    b.arc("t", "u", 1, ArcKind::Output);
    assert!(matches!(b.build(), Err(NetError::NotBipartite { .. })));
}
