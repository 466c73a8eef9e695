use proptest::prelude::*;
use spnperf::solver::{eliminate_vanishing, explore, steady_state};
use spnperf::{evaluate_exact, simulate, NetBuilder, PetriNet, SimConfig};

fn fixture(name: &str) -> PetriNet {
    let path = format!("{}/tests/fixtures/{name}.json", env!("CARGO_MANIFEST_DIR"));
    PetriNet::from_json(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const FIXTURES: [&str; 6] = [
    "mm1k",
    "tandem",
    "routing",
    "forkjoin",
    "breakdown",
    "toggle",
];

#[test]
fn simulation_agrees_with_solver_on_fixtures() {
    for name in FIXTURES {
        let net = fixture(name);
        let exact = evaluate_exact(&net, 10_000, 1e-12).unwrap();
        let sim = simulate(&net, &SimConfig::new(11, 20_000.0, 30, 40_000.0), &[]).unwrap();
        for (e, s) in exact.places.iter().zip(&sim.places) {
            let tol = (3.0 * s.half_width).max(0.02 * e.mean.abs());
            assert!(
                (s.mean - e.mean).abs() <= tol,
                "{name}/{}: sim {} +- {} vs exact {}",
                e.id,
                s.mean,
                s.half_width,
                e.mean
            );
        }
    }
}

#[test]
fn mm1k_matches_birth_death() {
    let net = fixture("mm1k");
    let exact = evaluate_exact(&net, 100, 1e-13).unwrap();
    let rho: f64 = 7.0 / 10.0;
    let norm: f64 = (0..=10).map(|n| rho.powi(n)).sum();
    let hist = &exact.place("Q").unwrap().histogram;
    for n in 0..=10 {
        assert!(
            (hist[n as usize] - rho.powi(n) / norm).abs() < 1e-9,
            "n={n}"
        );
    }
}

#[test]
fn toggle_is_symmetric() {
    let net = fixture("toggle");
    let r = simulate(&net, &SimConfig::new(3, 1_000.0, 30, 10_000.0), &[]).unwrap();
    let p1 = r.place("P1").unwrap();
    assert!(
        (p1.histogram[1] - 0.5).abs() <= p1.half_width.max(0.01),
        "{p1:?}"
    );
}

#[test]
fn simulation_is_reproducible() {
    for name in FIXTURES {
        let net = fixture(name);
        let cfg = SimConfig::new(99, 1_000.0, 10, 2_000.0);
        let a = simulate(&net, &cfg, &[]).unwrap();
        let b = simulate(&net, &cfg, &[]).unwrap();
        assert_eq!(a, b, "{name}");
        let c = simulate(&net, &SimConfig::new(100, 1_000.0, 10, 2_000.0), &[]).unwrap();
        assert_ne!(a, c, "{name}: different seeds should differ");
    }
}

#[test]
fn conservative_subnets_hold_exactly_in_simulation() {
    let cases: [(&str, &[&str], f64); 4] = [
        ("mm1k", &["free", "Q"], 10.0),
        ("tandem", &["think", "Q1", "Q2"], 6.0),
        ("forkjoin", &["idle", "L", "Ld"], 4.0),
        ("breakdown", &["up", "down"], 1.0),
    ];
    for (name, places, total) in cases {
        let net = fixture(name);
        let r = simulate(&net, &SimConfig::new(5, 500.0, 10, 5_000.0), &[]).unwrap();
        let sum: f64 = places.iter().map(|p| r.mean(p).unwrap()).sum();
        assert!((sum - total).abs() < 1e-6, "{name}: {sum}");
    }
}

#[derive(Debug, Clone)]
struct Chain {
    places: usize,
    arcs: Vec<(usize, usize, bool, u32)>,
    delays: Vec<f64>,
    immediate: Vec<bool>,
    tokens: Vec<u32>,
}

fn closed_net() -> impl Strategy<Value = Chain> {
    (2usize..=4, 2usize..=5).prop_flat_map(|(np, nt)| {
        (
            Just(np),
            prop::collection::vec((0..np, 0..nt, any::<bool>(), 1u32..3), 1..10),
            prop::collection::vec(1.0f64..20.0, nt),
            prop::collection::vec(prop::bool::weighted(0.25), nt),
            prop::collection::vec(0u32..4, np),
        )
            .prop_map(|(places, arcs, delays, immediate, tokens)| Chain {
                places,
                arcs,
                delays,
                immediate,
                tokens,
            })
    })
}

fn build_chain(c: &Chain) -> PetriNet {
    let mut b = NetBuilder::new("chain");
    for p in 0..c.places {
        b.place(format!("P{p}"), c.tokens[p]);
    }
    for (t, d) in c.delays.iter().enumerate() {
        if c.immediate[t] {
            b.immediate(format!("T{t}"), *d, 1);
        } else {
            b.exponential(format!("T{t}"), *d);
        }
    }
    let mut seen = std::collections::HashSet::new();
    for &(p, t, input, w) in &c.arcs {
        if seen.insert((p, t, input)) {
            if input {
                b.input(&format!("P{p}"), &format!("T{t}"), w);
            } else {
                b.output(&format!("T{t}"), &format!("P{p}"), w);
            }
        }
    }
    b.build().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn stationary_distribution_is_a_probability_vector(c in closed_net()) {
        let net = build_chain(&c);
        let graph = match explore(&net, 3_000) {
            Ok(g) => g,
            Err(_) => return Ok(()),
        };
        let chain = match eliminate_vanishing(&graph) {
            Ok(ch) => ch,
            Err(_) => return Ok(()),
        };
        for i in 0..chain.len() {
            let tangible = &chain.markings[i];
            let before: f64 = (0..net.transitions().len())
                .map(|t| net.exponential_rate(t, tangible.tokens()))
                .sum();
            prop_assert!((before - chain.outflow(i)).abs() <= 1e-9 * before.max(1.0));
        }
        let st = match steady_state(&chain, 1e-10, 200_000) {
            Ok(st) => st,
            Err(_) => return Ok(()),
        };
        let total: f64 = st.pi.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        prop_assert!(st.pi.iter().all(|&p| p >= 0.0));
        prop_assert!(st.residual <= 1e-10);
    }
}
