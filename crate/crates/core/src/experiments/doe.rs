//! Full 2^k factorial designs with sign-table effect estimation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::hlf::HlfParams;

use super::{
    check_metric, check_param, evaluate_point, parse_json, point_seed, run_pool, spec_err,
    BackendKind, ExperimentError, RunSettings,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Factor {
    pub param: String,
    pub low: f64,
    pub high: f64,
}

fn default_response() -> String {
    "mrt_ms".into()
}

fn default_replications() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoeSpec {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub base: HlfParams,
    pub factors: Vec<Factor>,
    #[serde(default = "default_response")]
    pub response: String,
    /// Independent runs averaged per cell (simulation only).
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default, flatten)]
    pub run: RunSettings,
    #[serde(default)]
    pub seed: u64,
}

impl DoeSpec {
    pub fn from_json(text: &str) -> Result<DoeSpec, ExperimentError> {
        let spec: DoeSpec = parse_json(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let k = self.factors.len();
        if !(2..=6).contains(&k) {
            return Err(spec_err(format!(
                "a 2^k design needs 2 to 6 factors, got {k}"
            )));
        }
        for (i, f) in self.factors.iter().enumerate() {
            check_param(&f.param)?;
            if self.factors[..i].iter().any(|g| g.param == f.param) {
                return Err(spec_err(format!("factor `{}` listed twice", f.param)));
            }
            if f.low == f.high {
                return Err(spec_err(format!("factor `{}` has equal levels", f.param)));
            }
            for v in [f.low, f.high] {
                let mut p = self.base.clone();
                p.set(&f.param, v)
                    .and_then(|_| p.validate())
                    .map_err(|e| spec_err(e.to_string()))?;
            }
        }
        check_metric(&self.response)?;
        if self.replications < 1 {
            return Err(spec_err("replications must be at least 1"));
        }
        self.base.validate().map_err(|e| spec_err(e.to_string()))
    }

    /// Parameters of cell `c`: bit `i` of `c` selects the high level of
    /// factor `i`.
    pub fn cell_params(&self, c: usize) -> HlfParams {
        let mut p = self.base.clone();
        for (i, f) in self.factors.iter().enumerate() {
            let v = if c >> i & 1 == 1 { f.high } else { f.low };
            p.set(&f.param, v).expect("validated");
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Effect {
    /// Factor names joined by `x`, e.g. `timeout_msxblock_size`.
    pub name: String,
    pub factors: Vec<usize>,
    pub value: f64,
    pub variation_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoeCell {
    pub levels: Vec<f64>,
    pub response: f64,
    pub replicates: Vec<f64>,
    /// Conservation invariants that failed in any replicate.
    pub violations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectsTable {
    pub factor_names: Vec<String>,
    pub q0: f64,
    /// Sorted by explained variation, largest first.
    pub effects: Vec<Effect>,
    pub cells: Vec<DoeCell>,
}

impl EffectsTable {
    pub fn effect(&self, name: &str) -> Option<&Effect> {
        self.effects.iter().find(|e| e.name == name)
    }

    /// 0-based rank by |effect|.
    pub fn rank(&self, name: &str) -> Option<usize> {
        self.effects.iter().position(|e| e.name == name)
    }
}

/// Effects of a 2^k design from responses in standard order (factor 0
/// varies fastest).
pub fn effects_from_responses(factor_names: &[String], responses: &[f64]) -> EffectsTable {
    let k = factor_names.len();
    let n = 1usize << k;
    assert_eq!(responses.len(), n, "need 2^k responses");
    let q0 = responses.iter().sum::<f64>() / n as f64;
    let mut effects: Vec<Effect> = (1..n)
        .map(|mask| {
            let value = responses
                .iter()
                .enumerate()
                .map(|(c, y)| {
                    let sign = if (c & mask).count_ones() % 2 == mask.count_ones() % 2 {
                        1.0
                    } else {
                        -1.0
                    };
                    sign * y
                })
                .sum::<f64>()
                / n as f64;
            let factors: Vec<usize> = (0..k).filter(|i| mask >> i & 1 == 1).collect();
            let name = factors
                .iter()
                .map(|&i| factor_names[i].as_str())
                .collect::<Vec<_>>()
                .join("x");
            Effect {
                name,
                factors,
                value,
                variation_pct: 0.0,
            }
        })
        .collect();
    let sst: f64 = effects.iter().map(|e| n as f64 * e.value * e.value).sum();
    if sst > 0.0 {
        for e in &mut effects {
            e.variation_pct = 100.0 * n as f64 * e.value * e.value / sst;
        }
    }
    effects.sort_by(|a, b| {
        b.value
            .abs()
            .total_cmp(&a.value.abs())
            .then(a.factors.len().cmp(&b.factors.len()))
            .then(a.factors.cmp(&b.factors))
    });
    EffectsTable {
        factor_names: factor_names.to_vec(),
        q0,
        effects,
        cells: Vec::new(),
    }
}

/// Evaluate all 2^k cells and compute the effects table.
pub fn doe_2k(spec: &DoeSpec, workers: usize) -> Result<EffectsTable, ExperimentError> {
    spec.validate()?;
    let k = spec.factors.len();
    let n = 1usize << k;
    let reps = match spec.run.backend {
        BackendKind::Simulation => spec.replications,
        BackendKind::Solver => 1,
    };
    let runs: Vec<(usize, usize)> = (0..n)
        .flat_map(|c| (0..reps).map(move |r| (c, r)))
        .collect();
    let results = run_pool(workers, || {
        runs.par_iter()
            .map(|&(c, r)| {
                let p = spec.cell_params(c);
                let row = evaluate_point(
                    p,
                    Vec::new(),
                    &spec.run,
                    point_seed(spec.seed, (c * reps + r) as u64),
                );
                match &row.outcome {
                    Ok(m) => Ok((
                        m.get(&spec.response).expect("validated metric"),
                        row.violations,
                    )),
                    Err(msg) => Err(ExperimentError::Cell {
                        index: c,
                        params: describe(spec, c),
                        msg: msg.clone(),
                    }),
                }
            })
            .collect::<Vec<_>>()
    })?;
    let mut cells = Vec::with_capacity(n);
    let mut it = results.into_iter();
    for c in 0..n {
        let runs = (0..reps)
            .map(|_| it.next().expect("one result per run"))
            .collect::<Result<Vec<(f64, Vec<String>)>, _>>()?;
        let replicates: Vec<f64> = runs.iter().map(|r| r.0).collect();
        let violations = runs.into_iter().flat_map(|r| r.1).collect();
        let levels = spec
            .factors
            .iter()
            .enumerate()
            .map(|(i, f)| if c >> i & 1 == 1 { f.high } else { f.low })
            .collect();
        cells.push(DoeCell {
            levels,
            response: replicates.iter().sum::<f64>() / reps as f64,
            replicates,
            violations,
        });
    }
    let names: Vec<String> = spec.factors.iter().map(|f| f.param.clone()).collect();
    let responses: Vec<f64> = cells.iter().map(|c| c.response).collect();
    let mut table = effects_from_responses(&names, &responses);
    table.cells = cells;
    Ok(table)
}

fn describe(spec: &DoeSpec, c: usize) -> String {
    spec.factors
        .iter()
        .enumerate()
        .map(|(i, f)| {
            format!(
                "{}={}",
                f.param,
                if c >> i & 1 == 1 { f.high } else { f.low }
            )
        })
        .collect::<Vec<_>>()
        .join(", ")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(k: usize) -> Vec<String> {
        ["A", "B", "C", "D"][..k]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    #[test]
    fn two_factor_sign_table() {
        let t = effects_from_responses(&names(2), &[4.0, 8.0, 6.0, 18.0]);
        assert_eq!(t.q0, 9.0);
        assert_eq!(t.effect("A").unwrap().value, 4.0);
        assert_eq!(t.effect("B").unwrap().value, 3.0);
        assert_eq!(t.effect("AxB").unwrap().value, 2.0);
        let total: f64 = t.effects.iter().map(|e| e.variation_pct).sum();
        assert!((total - 100.0).abs() < 1e-9);
        // 16 / 29, 9 / 29, 4 / 29
        assert!((t.effect("A").unwrap().variation_pct - 1600.0 / 29.0).abs() < 1e-9);
        assert_eq!(t.rank("A"), Some(0));
    }

    #[test]
    fn constant_response_has_no_effects() {
        let t = effects_from_responses(&names(2), &[5.0; 4]);
        assert!(t
            .effects
            .iter()
            .all(|e| e.value == 0.0 && e.variation_pct == 0.0));
        assert_eq!(t.q0, 5.0);
    }

    #[test]
    fn linear_response_has_no_interactions() {
        // y = 3 + 2a - b + 0.5c with coded levels
        let ys: Vec<f64> = (0..8)
            .map(|c| {
                let l = |i: usize| if c >> i & 1 == 1 { 1.0 } else { -1.0 };
                3.0 + 2.0 * l(0) - l(1) + 0.5 * l(2)
            })
            .collect();
        let t = effects_from_responses(&names(3), &ys);
        for e in &t.effects {
            if e.factors.len() > 1 {
                assert!(e.value.abs() < 1e-12);
            }
        }
        assert_eq!(t.effect("A").unwrap().value, 2.0);
        assert_eq!(t.effect("B").unwrap().value, -1.0);
    }

    #[test]
    fn spec_validation() {
        let one = r#"{"factors": [{"param": "cp", "low": 2, "high": 6}]}"#;
        assert!(DoeSpec::from_json(one).is_err());
        let same = r#"{"factors": [{"param": "cp", "low": 2, "high": 2}, {"param": "timeout_ms", "low": 1, "high": 2}]}"#;
        assert!(DoeSpec::from_json(same).is_err());
        let bad_level = r#"{"factors": [{"param": "cp", "low": 0, "high": 2}, {"param": "timeout_ms", "low": 1, "high": 2}]}"#;
        assert!(DoeSpec::from_json(bad_level).is_err());
        let ok = r#"{"factors": [{"param": "cp", "low": 2, "high": 6}, {"param": "timeout_ms", "low": 10, "high": 100}]}"#;
        let spec = DoeSpec::from_json(ok).unwrap();
        assert_eq!(spec.replications, 3);
        assert_eq!(spec.response, "mrt_ms");
        assert_eq!(spec.cell_params(1).cp, 6);
        assert_eq!(spec.cell_params(1).timeout_ms, 10.0);
        assert_eq!(spec.cell_params(2).cp, 2);
    }

    #[test]
    fn solver_design_on_small_instance() {
        let spec = DoeSpec::from_json(
            r#"{
                "base": {"eq": 2, "oq": 2, "cq": 2, "ep": 1, "op": 1, "cp": 1, "timeout_ms": 1000},
                "factors": [
                    {"param": "arrival_delay_ms", "low": 50, "high": 100},
                    {"param": "te7_ms", "low": 20, "high": 40}
                ],
                "response": "utilization_commit",
                "backend": "solver",
                "solver": {"erlang_k": 2}
            }"#,
        )
        .unwrap();
        let t = doe_2k(&spec, 2).unwrap();
        assert_eq!(t.cells.len(), 4);
        assert!(t.cells.iter().all(|c| c.replicates.len() == 1));
        let total: f64 = t.effects.iter().map(|e| e.variation_pct).sum();
        assert!((total - 100.0).abs() < 0.1);
        // faster arrivals and slower commit both raise commit utilisation
        assert!(t.effect("arrival_delay_ms").unwrap().value < 0.0);
        assert!(t.effect("te7_ms").unwrap().value > 0.0);
    }
}
