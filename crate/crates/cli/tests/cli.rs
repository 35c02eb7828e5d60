use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_minshap"));
    c.env_remove("MINSHAP_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn validate(schema: &str, doc: &Value) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schema").join(schema);
    let schema = read_json(&path);
    let v = jsonschema::validator_for(&schema).expect("schema compiles");
    let errors: Vec<String> = v
        .iter_errors(doc)
        .map(|e| format!("{e} at {}", e.instance_path))
        .collect();
    assert!(errors.is_empty(), "{schema:?} violations: {errors:?}");
}

/// Drops the fields that legitimately differ between identical runs.
fn without_clock(mut doc: Value) -> Value {
    let meta = doc["metadata"].as_object_mut().unwrap();
    meta.remove("created_unix_secs");
    meta.remove("wall_clock_secs");
    doc
}

struct Work(TempDir);

impl Work {
    fn new() -> Self {
        Work(tempfile::tempdir().unwrap())
    }
    fn path(&self, name: &str) -> PathBuf {
        self.0.path().join(name)
    }
    fn s(&self, name: &str) -> String {
        self.path(name).to_str().unwrap().to_owned()
    }
    fn simulate(&self, model: &str, n: usize, seed: u64, name: &str) {
        let (n, seed) = (n.to_string(), seed.to_string());
        ok(&[
            "simulate",
            "--model",
            model,
            "--n",
            &n,
            "--seed",
            &seed,
            "--output",
            &self.s(name),
            "--summary",
            &self.s(&format!("{name}.truth.json")),
        ]);
    }
}

fn selected(doc: &Value, test: &str) -> Vec<String> {
    doc["selected"][test]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_owned())
        .collect()
}

#[test]
fn chain_select_with_all_orderings_picks_x3() {
    let w = Work::new();
    w.simulate("chain", 20_000, 3, "chain.csv");
    let truth = read_json(&w.path("chain.csv.truth.json"));
    validate("simulation_truth.v1.json", &truth);
    assert_eq!(truth["support"], serde_json::json!(["X3"]));
    std::fs::write(w.path("perms.txt"), "X1,X2,X3\nX1 X3 X2\n1,0,2\n1 2 0\n2 0 1\n2 1 0\n").unwrap();
    ok(&[
        "select",
        "--input",
        &w.s("chain.csv"),
        "--response",
        "y",
        "--learner",
        "ridge",
        "--perms-file",
        &w.s("perms.txt"),
        "--output",
        &w.s("r.json"),
    ]);
    let r = read_json(&w.path("r.json"));
    validate("selection_report.v1.json", &r);
    assert_eq!(selected(&r, "minshap"), ["X3"]);
    let means: Vec<f64> = r["records"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x["phi_mean"].as_f64().unwrap())
        .collect();
    for (got, want) in means.iter().zip([1.0 / 3.0, 5.0 / 6.0, 11.0 / 6.0]) {
        assert!((got - want).abs() < 0.1, "phi_mean {means:?}");
    }
}

#[test]
fn selected_sets_match_recorded_decisions() {
    let w = Work::new();
    w.simulate("a", 300, 5, "a.csv");
    ok(&[
        "select",
        "--input",
        &w.s("a.csv"),
        "--response",
        "y",
        "--learner",
        "ridge",
        "--K",
        "12",
        "--seed",
        "5",
        "--baselines",
        "lasso,gcm",
        "--dump-matrix",
        "--output",
        &w.s("r.json"),
    ]);
    let r = read_json(&w.path("r.json"));
    validate("selection_report.v1.json", &r);
    let key = |t: &str| {
        match t {
            "pcht-bonferroni" => "bonferroni",
            "pcht-stouffer" => "stouffer",
            "pcht-fisher" => "fisher",
            other => other,
        }
        .to_owned()
    };
    for t in ["minshap", "maxp", "pcht-bonferroni", "pcht-stouffer", "pcht-fisher"] {
        let expect: Vec<String> = r["records"]
            .as_array()
            .unwrap()
            .iter()
            .filter(|x| x["decisions"][key(t)].as_bool().unwrap())
            .map(|x| x["name"].as_str().unwrap().to_owned())
            .collect();
        assert_eq!(selected(&r, t), expect, "{t}");
    }
    let u = r["u"]["pcht-fisher"].as_u64().unwrap();
    assert!((8..=12).contains(&u), "screened u {u} outside the default range");
    assert_eq!(r["vi_matrix"]["vi"].as_array().unwrap().len(), 20);
    assert_eq!(r["baselines"]["lasso"]["diagnostics"]["kind"], "coefficients");
    assert!(r["selected"]["gcm"].is_array());
}

#[test]
fn same_config_gives_identical_reports() {
    let w = Work::new();
    w.simulate("b", 200, 9, "b.csv");
    let args = |out: &str| -> Vec<String> {
        [
            "select",
            "--input",
            &w.s("b.csv"),
            "--response",
            "y",
            "--K",
            "6",
            "--eval-mode",
            "dropout",
            "--seed",
            "11",
            "--output",
            &w.s(out),
        ]
        .map(str::to_owned)
        .to_vec()
    };
    let a1 = args("1.json");
    let a2 = args("2.json");
    ok(&a1.iter().map(String::as_str).collect::<Vec<_>>());
    ok(&a2.iter().map(String::as_str).collect::<Vec<_>>());
    let r1 = without_clock(read_json(&w.path("1.json")));
    let r2 = without_clock(read_json(&w.path("2.json")));
    assert_eq!(r1, r2);
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let w = Work::new();
    w.simulate("c", 250, 4, "c.csv");
    for workers in ["1", "3"] {
        ok(&[
            "select",
            "--input",
            &w.s("c.csv"),
            "--response",
            "y",
            "--K",
            "8",
            "--seed",
            "2",
            "--workers",
            workers,
            "--output",
            &w.s(&format!("w{workers}.json")),
        ]);
    }
    let r1 = read_json(&w.path("w1.json"));
    let r3 = read_json(&w.path("w3.json"));
    assert_eq!(r1["metadata"]["config"]["workers"], 1);
    assert_eq!(r3["metadata"]["config"]["workers"], 3);
    for field in ["records", "selected", "u", "n_eval"] {
        assert_eq!(r1[field], r3[field], "{field}");
    }
}

#[test]
fn matrix_round_trip_reproduces_decisions() {
    let w = Work::new();
    w.simulate("a", 300, 6, "a.csv");
    let common = [
        "--input",
        &w.s("a.csv"),
        "--response",
        "y",
        "--learner",
        "ridge",
        "--K",
        "10",
        "--seed",
        "6",
    ];
    let (matrix_path, stats_path) = (w.s("m.csv"), w.s("stats.json"));
    let mut args = vec!["shapley", "--output", &matrix_path, "--summary", &stats_path];
    args.extend(common);
    ok(&args);
    validate("shapley_stats.v1.json", &read_json(&w.path("stats.json")));

    let direct = w.s("direct.json");
    let mut args = vec!["select", "--u", "7", "--output", &direct];
    args.extend(common);
    ok(&args);
    ok(&[
        "select",
        "--from-matrix",
        &w.s("m.csv"),
        "--u",
        "7",
        "--output",
        &w.s("matrix.json"),
    ]);
    let a = read_json(&w.path("direct.json"));
    let b = read_json(&w.path("matrix.json"));
    validate("selection_report.v1.json", &b);
    for field in ["records", "selected", "u", "features", "n_eval"] {
        assert_eq!(a[field], b[field], "{field}");
    }
}

#[test]
fn single_ordering_gives_equal_mean_and_min() {
    let w = Work::new();
    w.simulate("d", 200, 1, "d.csv");
    ok(&[
        "shapley",
        "--input",
        &w.s("d.csv"),
        "--response",
        "y",
        "--learner",
        "ridge",
        "--K",
        "1",
        "--output",
        &w.s("m.csv"),
        "--summary",
        &w.s("s.json"),
    ]);
    let s = read_json(&w.path("s.json"));
    for f in s["features"].as_array().unwrap() {
        assert_eq!(f["phi_mean"], f["phi_min"]);
    }
}

#[test]
fn bench_writes_one_row_per_method() {
    let w = Work::new();
    ok(&[
        "bench",
        "--model",
        "a",
        "--n",
        "200",
        "--reps",
        "5",
        "--methods",
        "minshap,lasso",
        "--learner",
        "ridge",
        "--K",
        "8",
        "--seed",
        "1",
        "--output",
        &w.s("b.csv"),
    ]);
    let mut rdr = csv::Reader::from_path(w.path("b.csv")).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(str::to_owned).collect();
    let metric_cols = header
        .iter()
        .filter(|h| h.ends_with("_mean") || h.ends_with("_sd"))
        .count();
    assert_eq!(metric_cols, 10, "5 metrics x (mean, sd): {header:?}");
    assert!(header.contains(&"runtime_mean_secs".to_owned()));
    let methods: Vec<String> = rdr.records().map(|r| r.unwrap()[0].to_owned()).collect();
    assert_eq!(methods, ["minshap", "lasso"]);
    let summary = read_json(&w.path("b.json"));
    validate("bench_summary.v1.json", &summary);
    assert_eq!(summary["result"]["records"].as_array().unwrap().len(), 10);
}

#[test]
fn single_rep_bench_matches_select_on_the_same_data() {
    let w = Work::new();
    ok(&[
        "bench",
        "--model",
        "b",
        "--n",
        "300",
        "--reps",
        "1",
        "--methods",
        "minshap,maxp,lasso",
        "--learner",
        "ridge",
        "--K",
        "10",
        "--seed",
        "13",
        "--output",
        &w.s("b.csv"),
    ]);
    w.simulate("b", 300, 13, "b_data.csv");
    ok(&[
        "select",
        "--input",
        &w.s("b_data.csv"),
        "--response",
        "y",
        "--learner",
        "ridge",
        "--K",
        "10",
        "--seed",
        "13",
        "--test",
        "minshap,maxp",
        "--baselines",
        "lasso",
        "--output",
        &w.s("r.json"),
    ]);
    let bench = read_json(&w.path("b.json"));
    let report = read_json(&w.path("r.json"));
    for rec in bench["result"]["records"].as_array().unwrap() {
        let method = rec["method"].as_str().unwrap();
        let from_bench: Vec<String> = rec["selected"]
            .as_array()
            .unwrap()
            .iter()
            .map(|j| format!("X{}", j.as_u64().unwrap() + 1))
            .collect();
        assert_eq!(selected(&report, method), from_bench, "{method}");
    }
}

#[test]
fn config_file_fills_gaps_and_flags_override() {
    let w = Work::new();
    w.simulate("a", 200, 2, "a.csv");
    let cfg = serde_json::json!({
        "input": w.s("a.csv"), "response": "y", "K": 5, "alpha": 0.1, "test": "minshap",
        "learner-spec": {"kind": "ridge", "hyperparams": {"lambda": 0.5}},
        "seed": 4
    });
    std::fs::write(w.path("cfg.json"), cfg.to_string()).unwrap();
    ok(&[
        "select",
        "--config",
        &w.s("cfg.json"),
        "--alpha",
        "0.2",
        "--output",
        &w.s("r.json"),
    ]);
    let c = read_json(&w.path("r.json"))["metadata"]["config"].clone();
    assert_eq!(c["K"], 5);
    assert_eq!(c["alpha"], 0.2);
    assert_eq!(c["seed"], 4);
    assert_eq!(c["learner"]["kind"], "ridge");
    assert_eq!(c["learner"]["hyperparams"]["lambda"], 0.5);
    assert_eq!(c["tests"], serde_json::json!(["minshap"]));
}

#[test]
fn seed_falls_back_to_environment() {
    let w = Work::new();
    w.simulate("a", 150, 2, "a.csv");
    let base = [
        "select",
        "--input",
        &w.s("a.csv"),
        "--response",
        "y",
        "--learner",
        "ridge",
        "--K",
        "4",
    ];
    let mut flag = base.to_vec();
    let out_flag = w.s("flag.json");
    flag.extend(["--seed", "77", "--output", &out_flag]);
    ok(&flag);
    let mut env = base.to_vec();
    let out_env = w.s("env.json");
    env.extend(["--output", &out_env]);
    let status = bin().args(&env).env("MINSHAP_SEED", "77").status().unwrap();
    assert!(status.success());
    let a = read_json(&w.path("flag.json"));
    let b = read_json(&w.path("env.json"));
    assert_eq!(b["metadata"]["config"]["seed"], 77);
    assert_eq!(a["records"], b["records"]);
}

#[test]
fn exit_codes_classify_failures() {
    let w = Work::new();
    w.simulate("a", 100, 2, "a.csv");
    let input = w.s("a.csv");
    let out = w.s("r.json");
    let code = |args: &[&str]| run(args).status.code().unwrap();
    assert_eq!(
        code(&["select", "--input", &input, "--response", "nope", "--output", &out]),
        3
    );
    assert_eq!(
        code(&[
            "select",
            "--input",
            &input,
            "--response",
            "y",
            "--alpha",
            "1.5",
            "--output",
            &out
        ]),
        2
    );
    assert_eq!(
        code(&[
            "select",
            "--input",
            &input,
            "--response",
            "y",
            "--K",
            "4",
            "--u",
            "9",
            "--output",
            &out
        ]),
        2
    );
    assert_eq!(
        code(&[
            "select",
            "--input",
            &w.s("missing.csv"),
            "--response",
            "y",
            "--output",
            &out
        ]),
        3
    );
    assert_eq!(
        code(&["select", "--response", "y", "--learner", "forest", "--input", &input]),
        2
    );
    assert_eq!(code(&["select", "--bogus"]), 2);
    std::fs::write(w.path("bad.json"), r#"{"no-such-key": 1}"#).unwrap();
    assert_eq!(code(&["select", "--config", &w.s("bad.json")]), 2);
    std::fs::write(w.path("bad.csv"), "X1,y\n1.0,2.0\nabc,3.0\n").unwrap();
    assert_eq!(
        code(&[
            "select",
            "--input",
            &w.s("bad.csv"),
            "--response",
            "y",
            "--output",
            &out
        ]),
        3
    );
}
