use std::path::Path;
use std::process::{Command, Output};

fn spnperf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spnperf"))
        .args(args)
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const NET: &str = r##"{
  "name": "mm1k",
  "places": [{"id": "free", "tokens": 3}, {"id": "Q", "tokens": 0}],
  "transitions": [
    {"id": "arrive", "kind": "exponential", "delay_ms": 10.0},
    {"id": "serve", "kind": "exponential", "delay_ms": 5.0, "guard": "#Q>0"}
  ],
  "arcs": [
    {"from": "free", "to": "arrive"},
    {"from": "arrive", "to": "Q"},
    {"from": "Q", "to": "serve"},
    {"from": "serve", "to": "free"}
  ]
}"##;

#[test]
fn validate_accepts_default_model() {
    let dir = tempfile::tempdir().unwrap();
    let file = write(dir.path(), "defaults.json", "{}");
    let out = spnperf(&["validate", &file]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stderr(&out).contains("valid"));
}

#[test]
fn validate_names_unknown_place() {
    let dir = tempfile::tempdir().unwrap();
    let file = write(
        dir.path(),
        "bad.json",
        &NET.replace(
            r#""from": "Q", "to": "serve""#,
            r#""from": "Nowhere", "to": "serve""#,
        ),
    );
    let out = spnperf(&["validate", &file]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("Nowhere"), "{}", stderr(&out));
}

#[test]
fn validate_reports_guard_syntax_position() {
    let dir = tempfile::tempdir().unwrap();
    let file = write(dir.path(), "bad.json", &NET.replace("#Q>0", "(#Q>0"));
    let out = spnperf(&["validate", &file]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("position"), "{}", stderr(&out));
}

#[test]
fn validate_reports_json_location() {
    let dir = tempfile::tempdir().unwrap();
    let file = write(dir.path(), "bad.json", "{\n  \"places\": [,]\n}");
    let out = spnperf(&["validate", &file]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains(":2:"), "{}", stderr(&out));
}

#[test]
fn empty_axes_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let file = write(dir.path(), "s.spec", r#"{"axes": []}"#);
    let out = spnperf(&["sweep", &file, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("axis"), "{}", stderr(&out));
}

#[test]
fn solver_state_space_bound_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let file = write(dir.path(), "defaults.json", "{}");
    let out = spnperf(&[
        "evaluate",
        &file,
        "--backend",
        "solver",
        "--max-states",
        "1000",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn solver_on_reduced_capacities_emits_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let file = write(
        dir.path(),
        "small.json",
        r#"{"eq": 3, "oq": 3, "cq": 3, "ep": 1, "op": 1, "cp": 1, "block_size": 1, "arrival_delay_ms": 400}"#,
    );
    let out = spnperf(&[
        "evaluate",
        &file,
        "--backend",
        "solver",
        "--erlang-k",
        "1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.contains("mrt_ms") && stdout.contains("throughput_per_ms"),
        "{stdout}"
    );
    let names: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    let result = names
        .iter()
        .find(|n| {
            n.starts_with("evaluate-small-")
                && n.ends_with(".json")
                && !n.ends_with(".manifest.json")
        })
        .unwrap();
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(result)).unwrap()).unwrap();
    assert!(json["metrics"]["mrt_ms"].as_f64().unwrap() > 0.0);
    let manifest = json["manifest"].as_str().unwrap();
    assert!(names.iter().any(|n| n == manifest), "{names:?}");
}

#[test]
fn evaluate_is_deterministic_and_never_overwrites() {
    let dir = tempfile::tempdir().unwrap();
    let file = write(dir.path(), "net.json", NET);
    let out_dir = dir.path().join("out");
    let args = |seed: &'static str| {
        vec![
            "evaluate".to_string(),
            file.clone(),
            "--seed".into(),
            seed.into(),
            "--batches".into(),
            "5".into(),
            "--batch-ms".into(),
            "500".into(),
            "--out".into(),
            out_dir.to_str().unwrap().into(),
        ]
    };
    let run = |a: Vec<String>| {
        Command::new(env!("CARGO_BIN_EXE_spnperf"))
            .args(a)
            .output()
            .unwrap()
    };
    let first = run(args("1"));
    assert!(first.status.success(), "{}", stderr(&first));
    let snapshot = |dir: &Path| {
        let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| !p.to_str().unwrap().ends_with(".manifest.json"))
            .map(|p| {
                (
                    p.file_name().unwrap().to_str().unwrap().to_string(),
                    std::fs::read(&p).unwrap(),
                )
            })
            .collect();
        v.sort();
        v
    };
    let before = snapshot(&out_dir);
    assert_eq!(before.len(), 2);
    assert!(before.iter().all(|(n, _)| n.starts_with("evaluate-net-")));
    let again = run(args("1"));
    assert!(again.status.success(), "{}", stderr(&again));
    assert_eq!(before, snapshot(&out_dir));

    // tamper with a result: the rerun must refuse to replace it
    let victim = out_dir.join(&before[0].0);
    std::fs::write(&victim, "edited").unwrap();
    let refused = run(args("1"));
    assert_eq!(refused.status.code(), Some(1));
    assert!(
        stderr(&refused).contains("refusing to overwrite"),
        "{}",
        stderr(&refused)
    );
    assert_eq!(std::fs::read_to_string(&victim).unwrap(), "edited");

    // a different seed lands in different files
    let other = run(args("2"));
    assert!(other.status.success(), "{}", stderr(&other));
    assert_eq!(snapshot(&out_dir).len(), 4);
}
