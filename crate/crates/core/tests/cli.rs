mod support;

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use support::{brute_triangles, random_graph, rng};
use tempfile::TempDir;

fn stsimplex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stsimplex"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = stsimplex(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_edges(dir: &Path, edges: &[(usize, usize)]) -> PathBuf {
    let p = dir.join("edges.txt");
    let body: String = edges.iter().map(|(a, b)| format!("{a} {b}\n")).collect();
    fs::write(&p, body).unwrap();
    p
}

fn build(dir: &Path, edges: &[(usize, usize)]) -> PathBuf {
    let input = write_edges(dir, edges);
    let out = dir.join("built");
    ok(&["build", "--input", s(&input), "--out", s(&out)]);
    out
}

fn counts(summary: &Value) -> [u64; 3] {
    ["vertices", "edges", "triangles"].map(|k| summary[k].as_u64().unwrap())
}

const TAILED_TRIANGLE: [(usize, usize); 4] = [(1, 2), (1, 3), (2, 3), (2, 4)];

#[test]
fn build_counts_fixture() {
    let d = TempDir::new().unwrap();
    let out = build(d.path(), &TAILED_TRIANGLE);
    assert_eq!(counts(&json(&out.join("summary.json"))), [4, 4, 1]);
    assert!(out.join("complex.json").exists());
}

#[test]
fn build_empty_edge_list() {
    let d = TempDir::new().unwrap();
    let out = build(d.path(), &[]);
    assert_eq!(counts(&json(&out.join("summary.json"))), [0, 0, 0]);
}

#[test]
fn build_matches_triangle_enumeration() {
    let d = TempDir::new().unwrap();
    let edges = random_graph(10, 0.5, &mut rng(21));
    let out = build(d.path(), &edges);
    let verts: BTreeSet<usize> = edges.iter().flat_map(|&(a, b)| [a, b]).collect();
    let want = [verts.len(), edges.len(), brute_triangles(&edges).len()].map(|v| v as u64);
    assert_eq!(counts(&json(&out.join("summary.json"))), want);
}

fn walk(dir: &Path, complex: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let mut args = vec!["--seed", "5", "walk", "--complex", s(complex), "--out", s(&out)];
    args.extend_from_slice(extra);
    ok(&args);
    out
}

#[test]
fn walk_dump_size_and_reproducibility() {
    let d = TempDir::new().unwrap();
    let c = build(d.path(), &TAILED_TRIANGLE).join("complex.json");
    let one = walk(
        d.path(),
        &c,
        "one",
        &["--length", "1", "--samples", "1", "--freq-draws", "0"],
    );
    // header (magic, version, starts, samples, length) then u32 indices and u16 labels
    assert_eq!(fs::metadata(one.join("walks.bin")).unwrap().len(), 20 + 4 * 2 * 6);
    assert!(!one.join("frequencies.csv").exists());

    let all = walk(
        d.path(),
        &c,
        "all",
        &[
            "--length",
            "3",
            "--samples",
            "2",
            "--starts",
            "all",
            "--freq-draws",
            "0",
        ],
    );
    assert_eq!(
        fs::metadata(all.join("walks.bin")).unwrap().len(),
        20 + 9 * 2 * 4 * 6
    );

    let again = walk(
        d.path(),
        &c,
        "again",
        &[
            "--length",
            "3",
            "--samples",
            "2",
            "--starts",
            "all",
            "--freq-draws",
            "0",
        ],
    );
    assert_eq!(
        fs::read(all.join("walks.bin")).unwrap(),
        fs::read(again.join("walks.bin")).unwrap()
    );
    assert_eq!(
        fs::read(all.join("walks.jsonl")).unwrap(),
        fs::read(again.join("walks.jsonl")).unwrap()
    );
}

#[test]
fn walk_frequencies_match_transition_rows() {
    let d = TempDir::new().unwrap();
    let c = build(d.path(), &TAILED_TRIANGLE).join("complex.json");
    for biased in ["false", "true"] {
        let out = walk(
            d.path(),
            &c,
            biased,
            &["--starts", "all", "--biased", biased, "--freq-draws", "100000"],
        );
        let mut rows = csv::Reader::from_path(out.join("frequencies.csv")).unwrap();
        let mut per_start: HashMap<u64, f64> = HashMap::new();
        for rec in rows.deserialize::<HashMap<String, String>>() {
            let rec = rec.unwrap();
            let emp: f64 = rec["empirical"].parse().unwrap();
            let exact: f64 = rec["analytic"].parse().unwrap();
            assert!((emp - exact).abs() < 0.01, "{rec:?}");
            *per_start.entry(rec["start"].parse().unwrap()).or_default() += exact;
        }
        assert_eq!(per_start.len(), 9);
        assert!(per_start.values().all(|&p| (p - 1.0).abs() < 1e-12));
    }
}

fn synth(dir: &Path) -> PathBuf {
    let out = dir.join("data");
    ok(&[
        "--seed",
        "2",
        "synth",
        "--nodes",
        "6",
        "--steps",
        "120",
        "--out",
        s(&out),
    ]);
    out
}

const TINY: &[&str] = &[
    "--window",
    "6",
    "--horizon",
    "3",
    "--embed",
    "4",
    "--blocks",
    "1",
    "--epochs",
    "3",
    "--windows-per-epoch",
    "2",
    "--val-every",
    "1",
    "--deterministic",
];

fn train(dir: &Path, data: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let mut args = vec![
        "--seed",
        "3",
        "--threads",
        "2",
        "train",
        "--data",
        s(data),
        "--out",
        s(&out),
    ];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    ok(&args);
    out
}

fn assert_metrics_schema(v: &Value) {
    for part in ["model", "baseline"] {
        for k in ["mae", "rmse", "mre"] {
            let x = v[part][k]
                .as_f64()
                .unwrap_or_else(|| panic!("{part}.{k} missing in {v}"));
            assert!(x.is_finite() && x >= 0.0);
        }
        assert!(v[part]["rmse"].as_f64().unwrap() + 1e-12 >= v[part]["mae"].as_f64().unwrap());
    }
    assert!(v["windows"].as_u64().unwrap() > 0);
    assert!(v["baseline_name"].is_string());
}

#[test]
fn train_eval_and_reproducibility() {
    let d = TempDir::new().unwrap();
    let data = synth(d.path());
    let a = train(d.path(), &data, "a", &[]);
    let b = train(d.path(), &data, "b", &[]);
    assert_eq!(
        fs::read(a.join("loss_curve.csv")).unwrap(),
        fs::read(b.join("loss_curve.csv")).unwrap()
    );
    assert_eq!(
        fs::read(a.join("model.sprm")).unwrap(),
        fs::read(b.join("model.sprm")).unwrap()
    );
    let m = json(&a.join("metrics.json"));
    assert_metrics_schema(&m);
    assert_eq!(m["baseline_name"], "persistence");

    let resolved = json(&a.join("resolved_config.json"));
    assert_eq!(resolved["command"], "train");
    assert_eq!(resolved["seed"], 3);
    assert_eq!(resolved["model"]["window"], 6);

    let e = d.path().join("eval");
    ok(&[
        "eval",
        "--data",
        s(&data),
        "--model",
        s(&a.join("model.sprm")),
        "--split",
        "val",
        "--out",
        s(&e),
    ]);
    let v = json(&e.join("metrics.json"));
    assert_metrics_schema(&v);
    assert_eq!(v["split"], "val");
}

#[test]
fn impute_keeps_observed_cells() {
    let d = TempDir::new().unwrap();
    let data = synth(d.path());
    let m = train(
        d.path(),
        &data,
        "imp",
        &["--task", "impute", "--point-rate", "0.3"],
    );
    assert_metrics_schema(&json(&m.join("metrics.json")));
    let out = d.path().join("filled");
    ok(&[
        "impute",
        "--data",
        s(&data),
        "--model",
        s(&m.join("model.sprm")),
        "--point-rate",
        "0.3",
        "--out",
        s(&out),
    ]);
    let mut rows = csv::Reader::from_path(out.join("imputed.csv")).unwrap();
    let (mut missing, mut total) = (0, 0);
    for rec in rows.deserialize::<HashMap<String, String>>() {
        let rec = rec.unwrap();
        total += 1;
        if rec["missing"] == "1" {
            missing += 1;
        } else {
            assert_eq!(rec["truth"], rec["imputed"]);
        }
    }
    assert!(missing > 0 && missing < total);

    let forecast = train(d.path(), &data, "fc", &[]);
    let bad = stsimplex(&[
        "impute",
        "--data",
        s(&data),
        "--model",
        s(&forecast.join("model.sprm")),
        "--out",
        s(&out),
    ]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn flags_override_config_file() {
    let d = TempDir::new().unwrap();
    let c = build(d.path(), &TAILED_TRIANGLE).join("complex.json");
    let cfg = d.path().join("walk.json");
    fs::write(&cfg, r#"{"walk": {"length": 4, "samples": 2}, "freq_draws": 0}"#).unwrap();
    let out = d.path().join("w");
    ok(&[
        "walk",
        "--config",
        s(&cfg),
        "--complex",
        s(&c),
        "--samples",
        "1",
        "--out",
        s(&out),
    ]);
    let r = json(&out.join("resolved_config.json"));
    assert_eq!(r["walk"]["length"], 4);
    assert_eq!(r["walk"]["samples"], 1);
    assert_eq!(fs::metadata(out.join("walks.bin")).unwrap().len(), 20 + 4 * 5 * 6);
}

#[test]
fn bench_report() {
    let d = TempDir::new().unwrap();
    let c = build(d.path(), &TAILED_TRIANGLE).join("complex.json");
    let run = |name: &str, reps: &str, samples: &str| {
        let out = d.path().join(name);
        ok(&[
            "bench",
            "--complex",
            s(&c),
            "--repetitions",
            reps,
            "--samples",
            samples,
            "--out",
            s(&out),
        ]);
        json(&out.join("bench.json"))
    };
    let one = run("one", "1", "2");
    assert_eq!(one["samples_s"].as_array().unwrap().len(), 1);
    let two = run("two", "3", "4");
    assert_eq!(two["samples_s"].as_array().unwrap().len(), 3);
    assert_eq!(two["steps"].as_u64().unwrap(), 2 * one["steps"].as_u64().unwrap());
    assert_eq!(two["walks"].as_u64().unwrap(), 2 * one["walks"].as_u64().unwrap());

    let schema: Value = serde_json::from_str(include_str!("../schemas/bench.schema.json")).unwrap();
    let required: BTreeSet<&str> = schema["required"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    let present: BTreeSet<&str> = one.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(required, present);
    for (k, spec) in schema["properties"].as_object().unwrap() {
        let ty = spec["type"].as_str().unwrap();
        let v = &one[k];
        let fits = match ty {
            "integer" => v.is_u64(),
            "number" => v.is_number(),
            "array" => v.is_array(),
            other => panic!("unexpected schema type {other}"),
        };
        assert!(fits, "{k} is not {ty}: {v}");
    }
}

#[test]
fn export_writes_matrix_market() {
    let d = TempDir::new().unwrap();
    let c = build(d.path(), &TAILED_TRIANGLE).join("complex.json");
    let out = d.path().join("ops");
    ok(&["export-operators", "--complex", s(&c), "--out", s(&out)]);
    for name in ["B1", "B2", "L0", "L1", "L2", "A_full_v1", "A_full_v2"] {
        let text = fs::read_to_string(out.join(format!("{name}.mtx"))).unwrap();
        assert!(text.starts_with("%%MatrixMarket matrix coordinate"), "{name}");
    }
    let b1 = fs::read_to_string(out.join("B1.mtx")).unwrap();
    let size = b1.lines().find(|l| !l.starts_with('%')).unwrap();
    assert_eq!(size.split_whitespace().collect::<Vec<_>>(), ["4", "4", "8"]);
}

#[test]
fn exit_codes() {
    let d = TempDir::new().unwrap();
    let missing = d.path().join("nope.txt");
    assert_eq!(
        stsimplex(&["build", "--input", s(&missing), "--out", s(d.path())])
            .status
            .code(),
        Some(2)
    );

    let bad = d.path().join("bad.txt");
    fs::write(&bad, "1 2\n3 x\n").unwrap();
    let out = stsimplex(&["build", "--input", s(&bad), "--out", s(d.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains('2'));

    let c = build(d.path(), &TAILED_TRIANGLE).join("complex.json");
    let out = stsimplex(&["walk", "--complex", s(&c), "--variant", "3", "--out", s(d.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stsimplex(&["walk", "--length", "oops"]).status.code(), Some(2));
}
