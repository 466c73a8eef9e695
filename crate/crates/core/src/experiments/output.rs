//! CSV rendering of experiment results.

use super::doe::EffectsTable;
use super::{SweepRow, SweepSpec};

fn float(v: f64) -> String {
    format!("{v}")
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 output")
}

fn status(row: &SweepRow) -> String {
    match &row.outcome {
        Ok(_) if row.nonconvergent => "nonconvergent".into(),
        Ok(_) => "ok".into(),
        Err(msg) => format!("error: {msg}"),
    }
}

fn metric_cells(spec: &SweepSpec, row: &SweepRow) -> Vec<String> {
    spec.metrics
        .iter()
        .map(|m| match &row.outcome {
            Ok(metrics) => float(metrics.get(m).expect("validated metric")),
            Err(_) => String::new(),
        })
        .collect()
}

/// One header row, then one row per grid point: axis values, arrival rate,
/// requested metrics, status.
pub fn sweep_csv(spec: &SweepSpec, rows: &[SweepRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = spec.axes.iter().map(|a| a.param.clone()).collect();
    header.push("arrival_rate_per_ms".into());
    header.extend(spec.metrics.iter().cloned());
    header.push("status".into());
    w.write_record(&header).expect("write to memory");
    for row in rows {
        let mut rec: Vec<String> = row.values.iter().map(|v| float(*v)).collect();
        rec.push(float(row.params.arrival_rate()));
        rec.extend(metric_cells(spec, row));
        rec.push(status(row));
        w.write_record(&rec).expect("write to memory");
    }
    finish(w)
}

/// Plot-ready layout: the designated x axis first, the remaining axis values
/// combined into a series label, then the metrics.
pub fn plot_csv(spec: &SweepSpec, rows: &[SweepRow], x_axis: &str) -> Option<String> {
    let xi = spec.axes.iter().position(|a| a.param == x_axis)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![x_axis.to_string(), "series".to_string()];
    header.extend(spec.metrics.iter().cloned());
    w.write_record(&header).expect("write to memory");
    for row in rows {
        let series = spec
            .axes
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != xi)
            .map(|(i, a)| format!("{}={}", a.param, row.values[i]))
            .collect::<Vec<_>>()
            .join(";");
        let mut rec = vec![float(row.values[xi]), series];
        rec.extend(metric_cells(spec, row));
        w.write_record(&rec).expect("write to memory");
    }
    Some(finish(w))
}

/// One row per cell: factor levels, mean response, replicate responses.
pub fn doe_cells_csv(t: &EffectsTable, response: &str) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let reps = t.cells.first().map_or(0, |c| c.replicates.len());
    let mut header: Vec<String> = t.factor_names.clone();
    header.push(response.to_string());
    header.extend((1..=reps).map(|r| format!("replicate_{r}")));
    w.write_record(&header).expect("write to memory");
    for c in &t.cells {
        let mut rec: Vec<String> = c.levels.iter().map(|v| float(*v)).collect();
        rec.push(float(c.response));
        rec.extend(c.replicates.iter().map(|v| float(*v)));
        w.write_record(&rec).expect("write to memory");
    }
    finish(w)
}

/// One row per effect, largest first, after the mean response.
pub fn doe_effects_csv(t: &EffectsTable) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["effect", "order", "value", "variation_pct"])
        .expect("write to memory");
    w.write_record(["q0", "0", &float(t.q0), ""])
        .expect("write to memory");
    for e in &t.effects {
        w.write_record([
            e.name.clone(),
            e.factors.len().to_string(),
            float(e.value),
            float(e.variation_pct),
        ])
        .expect("write to memory");
    }
    finish(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{effects_from_responses, Axis, RunSettings};
    use crate::hlf::{HlfMetrics, HlfParams};

    fn spec() -> SweepSpec {
        SweepSpec {
            name: "t".into(),
            base: HlfParams::default(),
            axes: vec![
                Axis {
                    param: "cp".into(),
                    values: vec![2.0],
                },
                Axis {
                    param: "arrival_delay_ms".into(),
                    values: vec![400.0],
                },
            ],
            run: RunSettings::default(),
            metrics: vec!["mrt_ms".into(), "throughput_per_ms".into()],
            seed: 0,
            x_axis: None,
        }
    }

    fn row(outcome: Result<HlfMetrics, String>) -> SweepRow {
        let mut params = HlfParams::default();
        params.cp = 2;
        params.arrival_delay_ms = 400.0;
        SweepRow {
            values: vec![2.0, 400.0],
            params,
            seed: 1,
            outcome,
            warnings: vec![],
            violations: vec![],
            nonconvergent: false,
            utilization_half_widths: [0.0; 3],
        }
    }

    #[test]
    fn sweep_layout() {
        let m = HlfMetrics {
            mrt_ms: 150.5,
            throughput_per_ms: 0.1,
            ..HlfMetrics::default()
        };
        let text = sweep_csv(&spec(), &[row(Ok(m)), row(Err("bad, \"quoted\"".into()))]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "cp,arrival_delay_ms,arrival_rate_per_ms,mrt_ms,throughput_per_ms,status"
        );
        assert_eq!(lines[1], "2,400,0.0025,150.5,0.1,ok");
        assert_eq!(lines[2], "2,400,0.0025,,,\"error: bad, \"\"quoted\"\"\"");
    }

    #[test]
    fn plot_layout() {
        let text = plot_csv(
            &spec(),
            &[row(Ok(HlfMetrics::default()))],
            "arrival_delay_ms",
        )
        .unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "400,cp=2,0,0");
        assert!(plot_csv(&spec(), &[], "nope").is_none());
    }

    #[test]
    fn effects_layout() {
        let t = effects_from_responses(&["A".to_string(), "B".to_string()], &[4.0, 8.0, 6.0, 18.0]);
        let text = doe_effects_csv(&t);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[1], "q0,0,9,");
        assert!(lines[2].starts_with("A,1,4,"));
    }
}
