use spnperf::hlf::{
    conservation_violations, default_sim_config, evaluate_hlf, HlfEvalError, HlfParams,
};
use spnperf::{BackendConfig, EvalError, SolverConfig, SolverError};

fn small() -> HlfParams {
    HlfParams {
        eq: 3,
        oq: 3,
        cq: 3,
        ep: 1,
        op: 1,
        cp: 1,
        block_size: 1,
        arrival_delay_ms: 400.0,
        ..HlfParams::default()
    }
}

fn solver(k: u32) -> BackendConfig {
    BackendConfig::Solver {
        solver: SolverConfig::default(),
        erlang_k: k,
    }
}

#[test]
fn small_instance_solves_exactly() {
    let p = small();
    let (m, r) = evaluate_hlf(&p, &solver(2)).unwrap();
    assert!(conservation_violations(&r, &p, 1e-6).unwrap().is_empty());
    assert!(m.discard_probability < 1e-3, "{m:?}");
    // light load: nearly every arrival is committed
    assert!(
        (m.throughput_per_ms - p.arrival_rate()).abs() < 0.02 * p.arrival_rate(),
        "{m:?}"
    );
    assert!(m.mrt_ms > 0.0 && m.mrt_ms.is_finite());
}

#[test]
fn small_instance_simulation_matches_solver() {
    let p = small();
    let (exact, _) = evaluate_hlf(&p, &solver(2)).unwrap();
    let (sim, r) =
        evaluate_hlf(&p, &BackendConfig::Simulation(default_sim_config(&p, 21))).unwrap();
    assert!(conservation_violations(&r, &p, 1e-6).unwrap().is_empty());
    for (name, a, b, tol) in [
        (
            "throughput",
            sim.throughput_per_ms,
            exact.throughput_per_ms,
            0.05,
        ),
        (
            "commit utilization",
            sim.utilization_commit,
            exact.utilization_commit,
            0.1,
        ),
        (
            "endorsement utilization",
            sim.utilization_endorsement,
            exact.utilization_endorsement,
            0.1,
        ),
    ] {
        assert!(
            (a - b).abs() <= tol * b.abs(),
            "{name}: sim {a} vs exact {b}"
        );
    }
}

#[test]
fn default_capacities_exceed_small_state_bound() {
    let backend = BackendConfig::Solver {
        solver: SolverConfig {
            max_states: 1000,
            ..SolverConfig::default()
        },
        erlang_k: 1,
    };
    let err = evaluate_hlf(&HlfParams::default(), &backend).unwrap_err();
    assert!(
        matches!(
            err,
            HlfEvalError::Eval(EvalError::Solver(SolverError::StateSpaceExceeded {
                max_states: 1000
            }))
        ),
        "{err}"
    );
}

#[test]
fn flow_balances_along_the_pipeline() {
    let p = HlfParams {
        arrival_delay_ms: 20.0,
        ..HlfParams::default()
    };
    let (m, r) = evaluate_hlf(&p, &BackendConfig::Simulation(default_sim_config(&p, 4))).unwrap();
    assert!(conservation_violations(&r, &p, 1e-6).unwrap().is_empty());
    let rate = |t: &str| r.transition(t).unwrap();
    let endorsed = rate("TE1").rate + rate("TE2").rate;
    let ordered = rate("TI5").rate;
    let committed = m.throughput_per_ms;
    let noise = 3.0 * (rate("TE1").half_width + rate("TE2").half_width + rate("TI5").half_width)
        + 1e-3 * endorsed;
    assert!(endorsed + noise >= ordered, "{endorsed} < {ordered}");
    assert!(ordered + noise >= committed, "{ordered} < {committed}");
}

#[test]
fn simulation_is_seed_deterministic() {
    let p = small();
    let cfg = default_sim_config(&p, 8);
    let a = evaluate_hlf(&p, &BackendConfig::Simulation(cfg.clone())).unwrap();
    let b = evaluate_hlf(&p, &BackendConfig::Simulation(cfg)).unwrap();
    assert_eq!(a, b);
}
