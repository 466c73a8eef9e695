//! Discrete-event simulation of a net with batch-means output analysis.
//!
//! Exponential transitions race with memoryless resampling after every
//! event. Deterministic transitions keep their remaining delay while they
//! stay enabled and lose it when a firing disables them, including a
//! transient disable in the intermediate marking of a firing that consumes
//! and reproduces their input tokens. Immediate transitions fire in zero time
//! by priority, then by weight, until a tangible marking is reached.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::net::{PetriNet, TransitionKind};
use crate::result::{Backend, EvaluationResult, PlaceStats, Probe, ProbeStats, TransitionStats};

/// Consecutive zero-time firings tolerated before declaring a livelock.
pub const MAX_ZERO_TIME_FIRINGS: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("unknown tracked place `{0}`")]
    UnknownPlace(String),
    #[error(
        "immediate transitions fired {firings} times without time advancing at t={time_ms} ms"
    )]
    VanishingLoop { firings: u64, time_ms: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub warmup_time_ms: f64,
    pub batch_count: usize,
    pub batch_length_ms: f64,
    pub max_time_ms: f64,
    pub confidence_level: f64,
    /// Places to report; `None` reports all of them.
    pub tracked_places: Option<Vec<String>>,
    /// Histogram buckets cover 0..=max_tracked_tokens.
    pub max_tracked_tokens: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig::new(1, 10_000.0, 30, 10_000.0)
    }
}

impl SimConfig {
    /// Config whose `max_time_ms` is exactly warmup plus all batches.
    pub fn new(seed: u64, warmup_time_ms: f64, batch_count: usize, batch_length_ms: f64) -> Self {
        SimConfig {
            seed,
            warmup_time_ms,
            batch_count,
            batch_length_ms,
            max_time_ms: warmup_time_ms + batch_count as f64 * batch_length_ms,
            confidence_level: 0.95,
            tracked_places: None,
            max_tracked_tokens: 200,
        }
    }

    pub fn horizon_ms(&self) -> f64 {
        self.warmup_time_ms + self.batch_count as f64 * self.batch_length_ms
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        if !(self.warmup_time_ms >= 0.0 && self.warmup_time_ms.is_finite()) {
            return bad("warmup_time_ms must be finite and >= 0");
        }
        if self.batch_count < 2 {
            return bad("batch_count must be >= 2");
        }
        if !(self.batch_length_ms > 0.0 && self.batch_length_ms.is_finite()) {
            return bad("batch_length_ms must be finite and > 0");
        }
        if !(self.max_time_ms > 0.0) {
            return bad("max_time_ms must be > 0");
        }
        // small slack for the float sum in `new`
        if self.horizon_ms() > self.max_time_ms * (1.0 + 1e-12) {
            return bad("warmup + batch_count * batch_length exceeds max_time_ms");
        }
        if !(self.confidence_level > 0.0 && self.confidence_level < 1.0) {
            return bad("confidence_level must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Student-t half-width factor for `n` batches at `confidence`.
pub fn t_quantile(confidence: f64, n: usize) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("dof >= 1");
    dist.inverse_cdf(0.5 + confidence / 2.0)
}

/// Mean and confidence half-width of a set of batch means.
pub fn batch_estimate(values: &[f64], confidence: f64) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::INFINITY);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, t_quantile(confidence, n) * (var / n as f64).sqrt())
}

struct Accumulators {
    /// `[batch][tracked place]` token-time integrals.
    place: Vec<Vec<f64>>,
    probe: Vec<Vec<f64>>,
    firings: Vec<Vec<u64>>,
    /// `[tracked place][bucket]` time in each token count.
    histogram: Vec<Vec<f64>>,
    truncated: Vec<bool>,
}

struct Engine<'a> {
    net: &'a PetriNet,
    cfg: &'a SimConfig,
    probes: &'a [Probe],
    tracked: Vec<usize>,
    deterministic: Vec<usize>,
    exponential: Vec<usize>,
    deadline: Vec<Option<f64>>,
    tokens: Vec<u32>,
    now: f64,
    rng: ChaCha8Rng,
    acc: Accumulators,
    in_warmup: bool,
    batch: usize,
    next_boundary: f64,
    scratch: Vec<usize>,
}

impl Engine<'_> {
    fn recording(&self) -> bool {
        !self.in_warmup && self.batch < self.cfg.batch_count
    }

    fn boundary(&self, k: usize) -> f64 {
        self.cfg.warmup_time_ms + k as f64 * self.cfg.batch_length_ms
    }

    /// Advance the clock to `to`, integrating the current marking.
    fn advance(&mut self, to: f64) {
        let end = self.cfg.horizon_ms();
        let to = to.min(end);
        while self.now < to {
            let seg_end = to.min(self.next_boundary);
            let dt = seg_end - self.now;
            if dt > 0.0 && self.recording() {
                let b = self.batch;
                let k = self.cfg.max_tracked_tokens;
                for (slot, &p) in self.tracked.iter().enumerate() {
                    let n = self.tokens[p];
                    self.acc.place[b][slot] += f64::from(n) * dt;
                    let bucket = (n as usize).min(k);
                    if n as usize > k {
                        self.acc.truncated[slot] = true;
                    }
                    self.acc.histogram[slot][bucket] += dt;
                }
                for (j, probe) in self.probes.iter().enumerate() {
                    if probe.guard.eval_tokens(&self.tokens) {
                        self.acc.probe[b][j] += dt;
                    }
                }
            }
            self.now = seg_end;
            if self.now >= self.next_boundary {
                if self.in_warmup {
                    self.in_warmup = false;
                } else {
                    self.batch += 1;
                }
                self.next_boundary = self.boundary(self.batch + 1);
            }
        }
    }

    fn fire(&mut self, t: usize) {
        let arcs = self.net.arc_set(t);
        for &(p, w) in &arcs.input {
            self.tokens[p] -= w;
        }
        // a deterministic transition disabled by the intermediate marking
        // loses its remaining delay
        for i in 0..self.deterministic.len() {
            let d = self.deterministic[i];
            if self.deadline[d].is_some()
                && (d == t || !self.net.is_structurally_enabled(d, &self.tokens))
            {
                self.deadline[d] = None;
            }
        }
        for &(p, w) in &arcs.output {
            self.tokens[p] += w;
        }
        for i in 0..self.deterministic.len() {
            let d = self.deterministic[i];
            if self.deadline[d].is_some() && !self.net.is_structurally_enabled(d, &self.tokens) {
                self.deadline[d] = None;
            }
        }
        if self.recording() {
            self.acc.firings[self.batch][t] += 1;
        }
    }

    fn settle(&mut self) -> Result<(), SimError> {
        let mut count = 0u64;
        loop {
            let enabled = self.net.enabled_indices(&self.tokens);
            let immediate: &[usize] = match enabled.first() {
                Some(&i) if self.net.transitions()[i].kind.is_immediate() => &enabled,
                _ => return Ok(()),
            };
            let choice = if immediate.len() == 1 {
                immediate[0]
            } else {
                let weight = |i: usize| match self.net.transitions()[i].kind {
                    TransitionKind::Immediate { weight, .. } => weight,
                    _ => unreachable!(),
                };
                let total: f64 = immediate.iter().map(|&i| weight(i)).sum();
                let mut u = self.rng.random::<f64>() * total;
                let mut pick = *immediate.last().unwrap();
                for &i in immediate {
                    u -= weight(i);
                    if u < 0.0 {
                        pick = i;
                        break;
                    }
                }
                pick
            };
            self.fire(choice);
            count += 1;
            if count > MAX_ZERO_TIME_FIRINGS {
                return Err(SimError::VanishingLoop {
                    firings: count,
                    time_ms: self.now,
                });
            }
        }
    }

    fn run(&mut self) -> Result<(), SimError> {
        let end = self.cfg.horizon_ms();
        self.settle()?;
        while self.now < end {
            for i in 0..self.deterministic.len() {
                let d = self.deterministic[i];
                let enabled = self.net.is_structurally_enabled(d, &self.tokens);
                match (enabled, self.deadline[d]) {
                    (true, None) => {
                        if let TransitionKind::Deterministic { delay_ms } =
                            self.net.transitions()[d].kind
                        {
                            self.deadline[d] = Some(self.now + delay_ms);
                        }
                    }
                    (false, Some(_)) => self.deadline[d] = None,
                    _ => {}
                }
            }
            let mut next_det: Option<(f64, usize)> = None;
            for &d in &self.deterministic {
                if let Some(at) = self.deadline[d] {
                    if next_det.is_none_or(|(best, _)| at < best) {
                        next_det = Some((at, d));
                    }
                }
            }
            self.scratch.clear();
            let mut total = 0.0;
            for &e in &self.exponential {
                let r = self.net.exponential_rate(e, &self.tokens);
                if r > 0.0 {
                    total += r;
                    self.scratch.push(e);
                }
            }
            let next_exp = if total > 0.0 {
                let dt: f64 = Exp1.sample(&mut self.rng);
                Some(self.now + dt / total)
            } else {
                None
            };
            let (at, chosen) = match (next_exp, next_det) {
                (None, None) => {
                    self.advance(end);
                    break;
                }
                (Some(te), Some((td, d))) if td <= te => (td, d),
                (Some(te), _) => {
                    let mut u = self.rng.random::<f64>() * total;
                    let mut pick = *self.scratch.last().unwrap();
                    for &e in &self.scratch {
                        u -= self.net.exponential_rate(e, &self.tokens);
                        if u < 0.0 {
                            pick = e;
                            break;
                        }
                    }
                    (te, pick)
                }
                (None, Some((td, d))) => (td, d),
            };
            if at >= end {
                self.advance(end);
                break;
            }
            self.advance(at);
            self.fire(chosen);
            self.settle()?;
        }
        Ok(())
    }
}

/// Simulate `net` and estimate steady-state place, transition and probe
/// statistics with batch means.
pub fn simulate(
    net: &PetriNet,
    cfg: &SimConfig,
    probes: &[Probe],
) -> Result<EvaluationResult, SimError> {
    cfg.validate()?;
    let tracked: Vec<usize> = match &cfg.tracked_places {
        None => (0..net.places().len()).collect(),
        Some(ids) => ids
            .iter()
            .map(|id| {
                net.place_index(id)
                    .ok_or_else(|| SimError::UnknownPlace(id.clone()))
            })
            .collect::<Result<_, _>>()?,
    };
    let nb = cfg.batch_count;
    let nt = net.transitions().len();
    let (mut deterministic, mut exponential) = (Vec::new(), Vec::new());
    for (i, t) in net.transitions().iter().enumerate() {
        match t.kind {
            TransitionKind::Deterministic { .. } => deterministic.push(i),
            TransitionKind::Exponential { .. } => exponential.push(i),
            TransitionKind::Immediate { .. } => {}
        }
    }
    let mut engine = Engine {
        net,
        cfg,
        probes,
        deterministic,
        exponential,
        deadline: vec![None; nt],
        tokens: net.initial_marking().tokens().to_vec(),
        now: 0.0,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        acc: Accumulators {
            place: vec![vec![0.0; tracked.len()]; nb],
            probe: vec![vec![0.0; probes.len()]; nb],
            firings: vec![vec![0; nt]; nb],
            histogram: vec![vec![0.0; cfg.max_tracked_tokens + 1]; tracked.len()],
            truncated: vec![false; tracked.len()],
        },
        in_warmup: cfg.warmup_time_ms > 0.0,
        batch: 0,
        next_boundary: if cfg.warmup_time_ms > 0.0 {
            cfg.warmup_time_ms
        } else {
            cfg.batch_length_ms
        },
        tracked,
        scratch: Vec::new(),
    };
    engine.run()?;

    let Engine { acc, tracked, .. } = engine;
    let len = cfg.batch_length_ms;
    let total_time = nb as f64 * len;
    let conf = cfg.confidence_level;
    let mut warnings = Vec::new();
    let mut relative_widths = Vec::new();

    let places: Vec<PlaceStats> = tracked
        .iter()
        .enumerate()
        .map(|(slot, &p)| {
            let per_batch: Vec<f64> = acc.place.iter().map(|b| b[slot] / len).collect();
            let (mean, half_width) = batch_estimate(&per_batch, conf);
            if mean > 0.0 {
                relative_widths.push(half_width / mean);
            }
            let id = net.places()[p].id.clone();
            if acc.truncated[slot] {
                warnings.push(format!(
                    "histogram of place `{id}` truncated at {} tokens",
                    cfg.max_tracked_tokens
                ));
            }
            PlaceStats {
                id,
                mean,
                half_width,
                histogram: acc.histogram[slot].iter().map(|t| t / total_time).collect(),
                truncated: acc.truncated[slot],
            }
        })
        .collect();

    let transitions: Vec<TransitionStats> = net
        .transitions()
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let per_batch: Vec<f64> = acc.firings.iter().map(|b| b[i] as f64 / len).collect();
            let (rate, half_width) = batch_estimate(&per_batch, conf);
            if rate > 0.0 {
                relative_widths.push(half_width / rate);
            }
            TransitionStats {
                id: t.id.clone(),
                rate,
                half_width,
            }
        })
        .collect();

    let probes: Vec<ProbeStats> = probes
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let per_batch: Vec<f64> = acc.probe.iter().map(|b| b[j] / len).collect();
            let (probability, half_width) = batch_estimate(&per_batch, conf);
            ProbeStats {
                name: p.name.clone(),
                probability,
                half_width,
            }
        })
        .collect();

    let nonconvergent = !relative_widths.is_empty() && relative_widths.iter().all(|w| *w > 0.5);
    if nonconvergent {
        warnings.push("every estimate has a relative half-width above 50%".into());
    }

    Ok(EvaluationResult {
        backend: Backend::Simulation,
        places,
        transitions,
        probes,
        total_time_ms: total_time,
        nonconvergent,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::NetBuilder;

    #[test]
    fn config_validation() {
        assert!(SimConfig::default().validate().is_ok());
        let mut c = SimConfig::default();
        c.batch_count = 1;
        assert!(c.validate().is_err());
        let mut c = SimConfig::default();
        c.max_time_ms = 100.0;
        assert!(c.validate().is_err());
        let mut c = SimConfig::default();
        c.confidence_level = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn batch_estimate_known_values() {
        let (m, hw) = batch_estimate(&[1.0, 2.0, 3.0], 0.95);
        assert_eq!(m, 2.0);
        // t_{0.975,2} = 4.302652...
        assert!((hw - 4.302652729911275 / 3f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn deterministic_source_rate() {
        let mut b = NetBuilder::new("src");
        b.place("sink", 0)
            .deterministic("src", 250.0)
            .output("src", "sink", 1);
        let net = b.build().unwrap();
        let r = simulate(&net, &SimConfig::new(3, 1000.0, 10, 10_000.0), &[]).unwrap();
        assert!((r.firing_rate("src").unwrap() - 0.004).abs() < 1e-12);
    }

    #[test]
    fn vanishing_loop_detected() {
        let mut b = NetBuilder::new("loop");
        b.place("A", 1).place("B", 0);
        b.immediate("ab", 1.0, 1).immediate("ba", 1.0, 1);
        b.input("A", "ab", 1)
            .output("ab", "B", 1)
            .input("B", "ba", 1)
            .output("ba", "A", 1);
        let net = b.build().unwrap();
        assert!(matches!(
            simulate(&net, &SimConfig::default(), &[]),
            Err(SimError::VanishingLoop { .. })
        ));
    }

    #[test]
    fn reset_through_intermediate_marking() {
        // `timer` needs `C`; `touch` consumes and reproduces `C` every 40 ms,
        // so a 100 ms timer never completes.
        let mut b = NetBuilder::new("reset");
        b.place("C", 1).place("done", 0);
        b.deterministic("timer", 100.0).deterministic("touch", 40.0);
        b.input("C", "timer", 1).output("timer", "done", 1);
        b.input("C", "touch", 1).output("touch", "C", 1);
        let net = b.build().unwrap();
        let r = simulate(&net, &SimConfig::new(1, 0.0, 5, 1000.0), &[]).unwrap();
        assert_eq!(r.firing_rate("timer").unwrap(), 0.0);
        // firings at 40, 80, ..., 4960; one at the horizon is not counted
        assert!((r.firing_rate("touch").unwrap() - 124.0 / 5000.0).abs() < 1e-12);
    }

    #[test]
    fn truncated_histogram_flags() {
        let mut b = NetBuilder::new("grow");
        b.place("P", 0)
            .deterministic("src", 1.0)
            .output("src", "P", 1);
        let net = b.build().unwrap();
        let mut cfg = SimConfig::new(1, 0.0, 2, 50.0);
        cfg.max_tracked_tokens = 10;
        let r = simulate(&net, &cfg, &[]).unwrap();
        let p = r.place("P").unwrap();
        assert!(p.truncated);
        assert!((p.histogram.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(!r.warnings.is_empty());
    }

    #[test]
    fn unknown_tracked_place() {
        let mut b = NetBuilder::new("x");
        b.place("P", 0);
        let net = b.build().unwrap();
        let mut cfg = SimConfig::default();
        cfg.tracked_places = Some(vec!["Q".into()]);
        assert_eq!(
            simulate(&net, &cfg, &[]),
            Err(SimError::UnknownPlace("Q".into()))
        );
    }
}
