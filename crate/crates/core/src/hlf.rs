//! Hyperledger Fabric transaction pipeline: net construction and metrics.
//!
//! Transactions arrive at `P_GT`, are routed to one of two endorsers, pass a
//! single orderer that cuts blocks by size (`TI6`) or by timeout (`TI7`), and
//! are committed by two peers. Queue and processing capacities are modelled
//! by complementary places (`eq1_1`, `ep1_1`, ...) initialised to their
//! capacity.
//!
//! Element notes:
//! - Timed transitions are infinite-server: `k` tokens in service complete at
//!   `k` times the single rate, bounded by the capacity places.
//! - `TE1`/`TE2` and `TE3` release their processing slot only when the next
//!   stage has room, so a full downstream queue blocks upstream service.
//! - An ordering slot (`op_1`) stays held while its transaction waits in
//!   `OPF3_1` for a block cut.
//! - A cut reserves one slot in each commit queue (`cq1_*`) that `TI8`
//!   releases when the block enters commit.
//! - `TI8` admits a block into commit holding a slot on both peers (`cp1_*`)
//!   until each peer finishes (`TE7`/`TE8`); `TI9` joins the two copies.
//! - `TI7` opens a draining mode; `TI7_drain` flushes `OPF3_1` one token at
//!   a time and `TI7_close` emits the partial block and restarts `Clock`.
//! - After a partial block is processed (`TE5`) the `RST` token makes `TI10`
//!   restart the timer.

use serde::{Deserialize, Serialize};

use crate::evaluate::{evaluate, BackendConfig, EvalError};
use crate::net::{NetBuilder, NetError, PetriNet, Servers, TransitionKind};
use crate::result::{EvaluationResult, LookupError, Probe};
use crate::sim::SimConfig;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HlfError {
    #[error("invalid parameter `{name}`: {msg}")]
    Param { name: String, msg: String },
    #[error(transparent)]
    Net(#[from] NetError),
}

fn param_err(name: &str, msg: impl Into<String>) -> HlfError {
    HlfError::Param {
        name: name.to_string(),
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HlfParams {
    pub arrival_delay_ms: f64,
    pub block_size: u32,
    pub timeout_ms: f64,
    pub eq: u32,
    pub ep: u32,
    pub oq: u32,
    pub op: u32,
    pub cq: u32,
    pub cp: u32,
    pub te1_ms: f64,
    pub te2_ms: f64,
    pub te3_ms: f64,
    pub te4_ms: f64,
    pub te5_ms: f64,
    pub te6_ms: f64,
    pub te7_ms: f64,
    pub te8_ms: f64,
}

impl Default for HlfParams {
    fn default() -> Self {
        HlfParams {
            arrival_delay_ms: 10.0,
            block_size: 1,
            timeout_ms: 10_000.0,
            eq: 100,
            ep: 6,
            oq: 100,
            op: 6,
            cq: 100,
            cp: 6,
            te1_ms: 5.0,
            te2_ms: 5.0,
            te3_ms: 5.0,
            te4_ms: 2.0,
            te5_ms: 2.0,
            te6_ms: 10.0,
            te7_ms: 80.0,
            te8_ms: 80.0,
        }
    }
}

/// Parameter names accepted by [`HlfParams::set`].
pub const PARAM_NAMES: [&str; 17] = [
    "arrival_delay_ms",
    "block_size",
    "timeout_ms",
    "eq",
    "ep",
    "oq",
    "op",
    "cq",
    "cp",
    "te1_ms",
    "te2_ms",
    "te3_ms",
    "te4_ms",
    "te5_ms",
    "te6_ms",
    "te7_ms",
    "te8_ms",
];

impl HlfParams {
    pub fn arrival_rate(&self) -> f64 {
        1.0 / self.arrival_delay_ms
    }

    fn times(&self) -> [(&'static str, f64); 10] {
        [
            ("arrival_delay_ms", self.arrival_delay_ms),
            ("timeout_ms", self.timeout_ms),
            ("te1_ms", self.te1_ms),
            ("te2_ms", self.te2_ms),
            ("te3_ms", self.te3_ms),
            ("te4_ms", self.te4_ms),
            ("te5_ms", self.te5_ms),
            ("te6_ms", self.te6_ms),
            ("te7_ms", self.te7_ms),
            ("te8_ms", self.te8_ms),
        ]
    }

    pub fn validate(&self) -> Result<(), HlfError> {
        for (name, v) in self.times() {
            if !(v.is_finite() && v > 0.0) {
                return Err(param_err(name, format!("must be a positive time, got {v}")));
            }
        }
        for (name, v) in [
            ("block_size", self.block_size),
            ("eq", self.eq),
            ("ep", self.ep),
            ("oq", self.oq),
            ("op", self.op),
            ("cq", self.cq),
            ("cp", self.cp),
        ] {
            if v < 1 {
                return Err(param_err(name, "must be at least 1"));
            }
        }
        Ok(())
    }

    /// Set a parameter by name; integer parameters reject fractional values.
    pub fn set(&mut self, name: &str, value: f64) -> Result<(), HlfError> {
        let int = |v: f64| -> Result<u32, HlfError> {
            if v.fract() != 0.0 || !(0.0..=f64::from(u32::MAX)).contains(&v) {
                return Err(param_err(
                    name,
                    format!("expects a non-negative integer, got {v}"),
                ));
            }
            Ok(v as u32)
        };
        match name {
            "arrival_delay_ms" => self.arrival_delay_ms = value,
            "block_size" => self.block_size = int(value)?,
            "timeout_ms" => self.timeout_ms = value,
            "eq" => self.eq = int(value)?,
            "ep" => self.ep = int(value)?,
            "oq" => self.oq = int(value)?,
            "op" => self.op = int(value)?,
            "cq" => self.cq = int(value)?,
            "cp" => self.cp = int(value)?,
            "te1_ms" => self.te1_ms = value,
            "te2_ms" => self.te2_ms = value,
            "te3_ms" => self.te3_ms = value,
            "te4_ms" => self.te4_ms = value,
            "te5_ms" => self.te5_ms = value,
            "te6_ms" => self.te6_ms = value,
            "te7_ms" => self.te7_ms = value,
            "te8_ms" => self.te8_ms = value,
            _ => return Err(param_err(name, "unknown parameter")),
        }
        Ok(())
    }
}

fn infinite(mean_ms: f64) -> TransitionKind {
    TransitionKind::Exponential {
        mean_ms,
        servers: Servers::Infinite,
    }
}

/// Build the pipeline net for `p`.
pub fn build_hlf_net(p: &HlfParams) -> Result<PetriNet, HlfError> {
    p.validate()?;
    let mut b = NetBuilder::new("hlf");
    b.place("P_GT", 0);
    for i in 1..=2 {
        b.place(format!("eq1_{i}"), p.eq)
            .place(format!("EQ_{i}"), 0);
        b.place(format!("ep1_{i}"), p.ep)
            .place(format!("EP_{i}"), 0);
    }
    b.place("oq_1", p.oq).place("OQ_1", 0);
    b.place("op_1", p.op).place("OP_1", 0).place("OPF3_1", 0);
    b.place("Clock", 1)
        .place("TO_FINISH", 0)
        .place("DRAINING", 0);
    b.place("OPF4_1_1", 0)
        .place("OPF4_1_2", 0)
        .place("OPF5_1", 0)
        .place("RST", 0);
    b.place("cq1_1", p.cq).place("cq1_2", p.cq);
    b.place("cp1_1", p.cp).place("cp1_2", p.cp);
    b.place("CV", 0);
    b.place("CPF_1", 0)
        .place("CPF_2", 0)
        .place("CD_1", 0)
        .place("CD_2", 0);

    // arrival and endorsement
    b.deterministic("AD", p.arrival_delay_ms)
        .output("AD", "P_GT", 1);
    for (route, admit, te, node, te_ms) in [
        ("TI1", "TI2", "TE1", 1, p.te1_ms),
        ("TI3", "TI4", "TE2", 2, p.te2_ms),
    ] {
        let (eq, q, ep, sv) = (
            format!("eq1_{node}"),
            format!("EQ_{node}"),
            format!("ep1_{node}"),
            format!("EP_{node}"),
        );
        b.immediate(route, 1.0, 2);
        b.input("P_GT", route, 1)
            .input(&eq, route, 1)
            .output(route, &q, 1);
        b.immediate(admit, 1.0, 2);
        b.input(&q, admit, 1).input(&ep, admit, 1);
        b.output(admit, &sv, 1).output(admit, &eq, 1);
        b.transition(te, infinite(te_ms), None);
        b.input(&sv, te, 1).input("oq_1", te, 1);
        b.output(te, "OQ_1", 1).output(te, &ep, 1);
    }
    b.immediate("DISCARD", 1.0, 1).input("P_GT", "DISCARD", 1);

    // ordering
    b.immediate("TI5", 1.0, 2);
    b.input("OQ_1", "TI5", 1).input("op_1", "TI5", 1);
    b.output("TI5", "OP_1", 1).output("TI5", "oq_1", 1);
    b.transition("TE3", infinite(p.te3_ms), None);
    b.input("OP_1", "TE3", 1).output("TE3", "OPF3_1", 1);

    let bs = p.block_size;
    b.immediate("TI6", 1.0, 3).guard("#OPF3_1>0");
    b.input("OPF3_1", "TI6", bs)
        .input("cq1_1", "TI6", 1)
        .input("cq1_2", "TI6", 1);
    b.output("TI6", "OPF4_1_1", 1).output("TI6", "op_1", bs);

    b.deterministic("TE9", p.timeout_ms);
    b.input("Clock", "TE9", 1).output("TE9", "TO_FINISH", 1);
    b.immediate("TI7", 1.0, 2)
        .guard("(#TO_FINISH=1)AND(#OPF3_1>0)");
    b.input("TO_FINISH", "TI7", 1)
        .input("cq1_1", "TI7", 1)
        .input("cq1_2", "TI7", 1);
    b.output("TI7", "DRAINING", 1);
    b.immediate("TI7_drain", 1.0, 7);
    b.input("DRAINING", "TI7_drain", 1)
        .input("OPF3_1", "TI7_drain", 1);
    b.output("TI7_drain", "DRAINING", 1)
        .output("TI7_drain", "op_1", 1);
    b.immediate("TI7_close", 1.0, 6).guard("#OPF3_1=0");
    b.input("DRAINING", "TI7_close", 1);
    b.output("TI7_close", "OPF4_1_2", 1)
        .output("TI7_close", "Clock", 1);

    b.transition("TE4", infinite(p.te4_ms), Some("#OPF4_1_1>0"));
    b.input("OPF4_1_1", "TE4", 1).output("TE4", "OPF5_1", 1);
    b.transition("TE5", infinite(p.te5_ms), Some("#OPF4_1_2>0"));
    b.input("OPF4_1_2", "TE5", 1)
        .output("TE5", "OPF5_1", 1)
        .output("TE5", "RST", 1);

    // timer restart after a partial block
    b.immediate("TI10", 1.0, 5).guard("#OPF5_1>0");
    b.input("RST", "TI10", 1)
        .input("Clock", "TI10", 1)
        .output("TI10", "Clock", 1);
    b.immediate("TI10_clear", 1.0, 5).guard("#OPF5_1>0");
    b.input("RST", "TI10_clear", 1)
        .input("TO_FINISH", "TI10_clear", 1);
    b.output("TI10_clear", "Clock", 1);
    b.immediate("TI10_skip", 1.0, 4);
    b.input("RST", "TI10_skip", 1);
    b.inhibitor("Clock", "TI10_skip", 1)
        .inhibitor("TO_FINISH", "TI10_skip", 1);

    // commit
    b.immediate("TI8", 1.0, 3).guard("#OPF5_1>0");
    b.input("OPF5_1", "TI8", 1)
        .input("cp1_1", "TI8", 1)
        .input("cp1_2", "TI8", 1);
    b.output("TI8", "CV", 1)
        .output("TI8", "cq1_1", 1)
        .output("TI8", "cq1_2", 1);
    b.transition("TE6", infinite(p.te6_ms), None);
    b.input("CV", "TE6", 1)
        .output("TE6", "CPF_1", 1)
        .output("TE6", "CPF_2", 1);
    for (te, node, ms) in [("TE7", 1, p.te7_ms), ("TE8", 2, p.te8_ms)] {
        let cpf = format!("CPF_{node}");
        b.transition(te, infinite(ms), None);
        b.input(&cpf, te, 1);
        b.output(te, &format!("cp1_{node}"), 1)
            .output(te, &format!("CD_{node}"), 1);
    }
    b.immediate("TI9", 1.0, 3)
        .input("CD_1", "TI9", 1)
        .input("CD_2", "TI9", 1);

    Ok(b.build()?)
}

pub const DISCARD_PROBE: &str = "discard";

/// Probes needed by the metric suite.
pub fn hlf_probes(net: &PetriNet) -> Vec<Probe> {
    vec![Probe::parse(net, DISCARD_PROBE, "(#eq1_1=0) AND (#eq1_2=0)").expect("hlf places exist")]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Endorsement,
    Ordering,
    Commit,
}

/// Mean busy fraction of the phase's processing capacity.
pub fn utilization(r: &EvaluationResult, p: &HlfParams, phase: Phase) -> Result<f64, LookupError> {
    let busy = |free: &str, cap: u32| {
        r.mean(free)
            .map(|m| (1.0 - m / f64::from(cap)).clamp(0.0, 1.0))
    };
    Ok(match phase {
        Phase::Endorsement => (busy("ep1_1", p.ep)? + busy("ep1_2", p.ep)?) / 2.0,
        Phase::Ordering => busy("op_1", p.op)?,
        Phase::Commit => (busy("cp1_1", p.cp)? + busy("cp1_2", p.cp)?) / 2.0,
    })
}

/// Confidence half-width of [`utilization`], from the free-pool estimates.
pub fn utilization_half_width(
    r: &EvaluationResult,
    p: &HlfParams,
    phase: Phase,
) -> Result<f64, LookupError> {
    let hw = |free: &str, cap: u32| r.place(free).map(|s| s.half_width / f64::from(cap));
    Ok(match phase {
        Phase::Endorsement => (hw("ep1_1", p.ep)? + hw("ep1_2", p.ep)?) / 2.0,
        Phase::Ordering => hw("op_1", p.op)?,
        Phase::Commit => (hw("cp1_1", p.cp)? + hw("cp1_2", p.cp)?) / 2.0,
    })
}

/// Probability that both endorsement queues are full.
pub fn discard_probability(r: &EvaluationResult) -> Result<f64, LookupError> {
    r.probe(DISCARD_PROBE)
        .map(|s| s.probability.clamp(0.0, 1.0))
}

/// Complete blocks per ms: E(OPF4_1_1)/te4.
pub fn block_call_rate(r: &EvaluationResult, p: &HlfParams) -> Result<f64, LookupError> {
    Ok(r.mean("OPF4_1_1")? / p.te4_ms)
}

/// Partial blocks per ms: E(OPF4_1_2)/te5.
pub fn timeout_call_rate(r: &EvaluationResult, p: &HlfParams) -> Result<f64, LookupError> {
    Ok(r.mean("OPF4_1_2")? / p.te5_ms)
}

/// Mean transactions carried by a partial block; 1 when none were cut.
pub fn partial_block_size(r: &EvaluationResult) -> Result<f64, LookupError> {
    let cuts = r.firing_rate("TI7")?;
    let flushed = r.firing_rate("TI7_drain")?;
    Ok(if cuts > 0.0 { flushed / cuts } else { 1.0 })
}

/// Mean transactions per block over complete and partial blocks.
pub fn block_content(r: &EvaluationResult, p: &HlfParams) -> Result<f64, LookupError> {
    let full = r.firing_rate("TI6")?;
    let cuts = r.firing_rate("TI7")?;
    let flushed = r.firing_rate("TI7_drain")?;
    let bs = f64::from(p.block_size);
    Ok(if full + cuts > 0.0 {
        (bs * full + flushed) / (full + cuts)
    } else {
        bs
    })
}

/// Committed transactions per ms: mean over peers of E(CPF_n)/te_n blocks
/// per ms, times the mean block content.
pub fn throughput(r: &EvaluationResult, p: &HlfParams) -> Result<f64, LookupError> {
    let blocks = (r.mean("CPF_1")? / p.te7_ms + r.mean("CPF_2")? / p.te8_ms) / 2.0;
    Ok(blocks * block_content(r, p)?)
}

/// Expected number of transactions inside the system.
pub fn transactions_in_progress(r: &EvaluationResult, p: &HlfParams) -> Result<f64, LookupError> {
    let mut total = 0.0;
    for place in [
        "P_GT", "EQ_1", "EQ_2", "EP_1", "EP_2", "OQ_1", "OP_1", "OPF3_1",
    ] {
        total += r.mean(place)?;
    }
    total += r.mean("OPF4_1_1")? * f64::from(p.block_size);
    total += r.mean("OPF4_1_2")? * partial_block_size(r)?;
    let committing = r.mean("OPF5_1")? + r.mean("CV")? + r.mean("CPF_1")? + r.mean("CD_1")?;
    total += committing * block_content(r, p)?;
    Ok(total)
}

/// Mean response time by Little's law, in ms.
pub fn mrt(r: &EvaluationResult, p: &HlfParams) -> Result<f64, LookupError> {
    Ok(transactions_in_progress(r, p)? * p.arrival_delay_ms)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HlfMetrics {
    pub mrt_ms: f64,
    pub throughput_per_ms: f64,
    pub utilization_endorsement: f64,
    pub utilization_ordering: f64,
    pub utilization_commit: f64,
    pub discard_probability: f64,
    pub block_call_rate_per_ms: f64,
    pub timeout_call_rate_per_ms: f64,
    pub transactions_in_progress: f64,
}

/// Metric names in output column order.
pub const METRIC_NAMES: [&str; 9] = [
    "mrt_ms",
    "throughput_per_ms",
    "utilization_endorsement",
    "utilization_ordering",
    "utilization_commit",
    "discard_probability",
    "block_call_rate_per_ms",
    "timeout_call_rate_per_ms",
    "transactions_in_progress",
];

impl HlfMetrics {
    pub fn from_result(r: &EvaluationResult, p: &HlfParams) -> Result<HlfMetrics, LookupError> {
        Ok(HlfMetrics {
            mrt_ms: mrt(r, p)?,
            throughput_per_ms: throughput(r, p)?,
            utilization_endorsement: utilization(r, p, Phase::Endorsement)?,
            utilization_ordering: utilization(r, p, Phase::Ordering)?,
            utilization_commit: utilization(r, p, Phase::Commit)?,
            discard_probability: discard_probability(r)?,
            block_call_rate_per_ms: block_call_rate(r, p)?,
            timeout_call_rate_per_ms: timeout_call_rate(r, p)?,
            transactions_in_progress: transactions_in_progress(r, p)?,
        })
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "mrt_ms" | "mrt" => self.mrt_ms,
            "throughput_per_ms" | "throughput" => self.throughput_per_ms,
            "utilization_endorsement" => self.utilization_endorsement,
            "utilization_ordering" => self.utilization_ordering,
            "utilization_commit" => self.utilization_commit,
            "discard_probability" => self.discard_probability,
            "block_call_rate_per_ms" | "block_call_rate" => self.block_call_rate_per_ms,
            "timeout_call_rate_per_ms" | "timeout_call_rate" => self.timeout_call_rate_per_ms,
            "transactions_in_progress" => self.transactions_in_progress,
            _ => return None,
        })
    }
}

/// Run length scaled to the slowest clock in the model.
pub fn default_sim_config(p: &HlfParams, seed: u64) -> SimConfig {
    let slow = p.timeout_ms.max(p.arrival_delay_ms);
    SimConfig::new(
        seed,
        (5.0 * slow).max(50_000.0),
        30,
        (10.0 * slow).max(20_000.0),
    )
}

/// A place set whose token total is constant in every reachable marking.
#[derive(Debug, Clone, PartialEq)]
pub struct Invariant {
    pub name: String,
    pub places: Vec<String>,
    pub total: f64,
}

pub fn conservation_invariants(p: &HlfParams) -> Vec<Invariant> {
    let inv = |name: &str, places: &[&str], total: u32| Invariant {
        name: name.to_string(),
        places: places.iter().map(|s| s.to_string()).collect(),
        total: f64::from(total),
    };
    vec![
        inv("endorsement queue 1", &["eq1_1", "EQ_1"], p.eq),
        inv("endorsement queue 2", &["eq1_2", "EQ_2"], p.eq),
        inv("endorsement service 1", &["ep1_1", "EP_1"], p.ep),
        inv("endorsement service 2", &["ep1_2", "EP_2"], p.ep),
        inv("ordering queue", &["oq_1", "OQ_1"], p.oq),
        inv("ordering service", &["op_1", "OP_1", "OPF3_1"], p.op),
        inv(
            "commit queue 1",
            &["cq1_1", "OPF4_1_1", "OPF4_1_2", "OPF5_1"],
            p.cq,
        ),
        inv(
            "commit queue 2",
            &["cq1_2", "OPF4_1_1", "OPF4_1_2", "OPF5_1"],
            p.cq,
        ),
        inv("commit service 1", &["cp1_1", "CV", "CPF_1"], p.cp),
        inv("commit service 2", &["cp1_2", "CV", "CPF_2"], p.cp),
        inv("clock", &["Clock", "TO_FINISH", "DRAINING"], 1),
    ]
}

/// Invariants whose expected totals deviate by more than `tol`.
pub fn conservation_violations(
    r: &EvaluationResult,
    p: &HlfParams,
    tol: f64,
) -> Result<Vec<String>, LookupError> {
    let mut out = Vec::new();
    for inv in conservation_invariants(p) {
        let mut sum = 0.0;
        for place in &inv.places {
            sum += r.mean(place)?;
        }
        if (sum - inv.total).abs() > tol {
            out.push(format!("{}: expected {}, got {sum}", inv.name, inv.total));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HlfEvalError {
    #[error(transparent)]
    Params(#[from] HlfError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Lookup(#[from] LookupError),
}

/// Build, evaluate and summarise one parameter point.
pub fn evaluate_hlf(
    p: &HlfParams,
    backend: &BackendConfig,
) -> Result<(HlfMetrics, EvaluationResult), HlfEvalError> {
    let net = build_hlf_net(p)?;
    let probes = hlf_probes(&net);
    let result = evaluate(&net, backend, &probes)?;
    let metrics = HlfMetrics::from_result(&result, p)?;
    Ok((metrics, result))
}
