use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ftclab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ftclab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = ftclab(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TRACE_COLUMNS: [&str; 6] = [
    "iter",
    "consensus_err",
    "centroid_err",
    "msd",
    "thm1_bound",
    "thm2_bound",
];

/// Checks a trace CSV against the column schema and returns its rows.
fn check_trace_csv(path: &Path) -> Vec<Vec<Option<f64>>> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    let meta: Value = serde_json::from_str(header.strip_prefix("# ").unwrap()).unwrap();
    assert!(meta.get("config").is_some());
    assert!(meta.get("bound_params").is_some());
    assert_eq!(lines.next().unwrap(), TRACE_COLUMNS.join(","));
    let mut last_iter = None;
    lines
        .map(|l| {
            let cells: Vec<&str> = l.split(',').collect();
            assert_eq!(cells.len(), 6, "{l}");
            let iter: usize = cells[0].parse().unwrap();
            assert!(last_iter.is_none_or(|p| iter > p));
            last_iter = Some(iter);
            cells
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    if c.is_empty() {
                        assert!(i >= 4, "only bound columns may be empty");
                        None
                    } else {
                        Some(c.parse::<f64>().unwrap())
                    }
                })
                .collect()
        })
        .collect()
}

#[test]
fn gen_hypercube_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("seq");
    let line = ok(&[
        "gen",
        "seq",
        "--graph",
        "hypercube:4",
        "--construction",
        "hypercube",
        "--out",
        s(&out),
    ]);
    assert!(line.contains("tau=4"));
    let meta = json(&out.join("meta.json"));
    assert_eq!(meta["tau"], 4);
    assert!(meta["eps_tau"].as_f64().unwrap() <= 1e-12);
    for j in 1..=4 {
        assert!(out.join(format!("A_{j}.mtx")).exists());
    }
}

#[test]
fn gen_laplacian_sequence_reports_tau() {
    let dir = tempfile::tempdir().unwrap();
    let line = ok(&[
        "gen",
        "seq",
        "--graph",
        "path:16",
        "--construction",
        "laplacian_factor",
        "--out",
        s(dir.path()),
    ]);
    // a path on 16 nodes has 15 distinct nonzero Laplacian eigenvalues
    assert!(line.contains("tau=15"), "{line}");
    assert_eq!(json(&dir.path().join("meta.json"))["tau"], 15);
}

#[test]
fn gen_problem_defaults() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen", "problem", "--out", s(dir.path())]);
    let meta = json(&dir.path().join("meta.json"));
    assert_eq!(meta["K"], 16);
    assert_eq!(meta["N"], 15);
    assert_eq!(meta["M"], 10);
    assert_eq!(meta["rho"], 0.01);
}

#[test]
fn gen_graph_and_reuse_it() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen", "graph", "--graph", "ring:8", "--out", s(dir.path())]);
    let g = dir.path().join("graph.json");
    assert_eq!(json(&g)["K"], 8);
    let seq = dir.path().join("seq");
    let line = ok(&["gen", "seq", "--graph-file", s(&g), "--out", s(&seq)]);
    assert!(line.contains("graph=ring:8"));
    let run = dir.path().join("run");
    ok(&[
        "run",
        "--construction",
        "load",
        "--seq-dir",
        s(&seq),
        "--graph-file",
        s(&g),
        "--K",
        "8",
        "--iters",
        "20",
        "--no-bounds",
        "--out",
        s(&run),
    ]);
    assert!(run.join("mean.csv").exists());
}

#[test]
fn run_is_repeatable_and_outputs_follow_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let args = |o: &Path| {
        vec![
            "run".to_string(),
            "--graph".into(),
            "ring:8".into(),
            "--K".into(),
            "8".into(),
            "--iters".into(),
            "60".into(),
            "--replications".into(),
            "3".into(),
            "--seed".into(),
            "11".into(),
            "--mu".into(),
            "1e-4".into(),
            "--out".into(),
            s(o).into(),
        ]
    };
    let a_args = args(&a);
    let b_args = args(&b);
    ok(&a_args.iter().map(String::as_str).collect::<Vec<_>>());
    ok(&b_args.iter().map(String::as_str).collect::<Vec<_>>());
    let mean_a = std::fs::read(a.join("mean.csv")).unwrap();
    assert_eq!(mean_a, std::fs::read(b.join("mean.csv")).unwrap());
    for seed in 11..14 {
        let rows = check_trace_csv(&a.join(format!("seed_{seed}.csv")));
        assert_eq!(rows.len(), 61);
        // admissible step: every row carries the consensus bound
        assert!(rows.iter().all(|r| r[4].is_some()));
    }
    check_trace_csv(&a.join("mean.csv"));

    let schema = json(&Path::new(env!("CARGO_MANIFEST_DIR")).join("schema/summary.schema.json"));
    let validator = jsonschema::validator_for(&schema).unwrap();
    let summary = json(&a.join("summary.json"));
    let errors: Vec<String> = validator
        .iter_errors(&summary)
        .map(|e| e.to_string())
        .collect();
    assert!(errors.is_empty(), "{errors:?}");
    assert_eq!(summary["seeds"], serde_json::json!([11, 12, 13]));
    let mut broken = summary.clone();
    broken.as_object_mut().unwrap().remove("steady_state_msd");
    assert!(!validator.is_valid(&broken));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"graph": {"topology": "ring:6"}, "problem": {"K": 6, "N": 4, "M": 3},
            "run": {"mu": 0.05, "num_iters": 10, "replications": 2, "seed": 5}}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    ftclab(&[
        "run",
        "--config",
        s(&cfg),
        "--iters",
        "7",
        "--seed",
        "40",
        "--out",
        s(&out),
    ]);
    let summary = json(&out.join("summary.json"));
    assert_eq!(summary["num_iters"], 7);
    assert_eq!(summary["seeds"], serde_json::json!([40, 41]));
    assert_eq!(summary["mu"], 0.05);
    assert_eq!(summary["K"], 6);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = |n: &str| dir.path().join(n).to_str().unwrap().to_string();
    let code = |args: &[&str]| ftclab(args).status.code().unwrap();
    assert_eq!(code(&["run", "--graph", "blob:3", "--out", &out("a")]), 2);
    assert_eq!(
        code(&["run", "--graph", "ring:6", "--out", &out("b")]),
        2,
        "K mismatch"
    );
    let bad_cfg = dir.path().join("bad.json");
    std::fs::write(&bad_cfg, "{\"run\": {\"mu\": \"fast\"}}").unwrap();
    assert_eq!(
        code(&[
            "run",
            "--config",
            bad_cfg.to_str().unwrap(),
            "--out",
            &out("c")
        ]),
        2
    );
    let small = [
        "--graph", "ring:6", "--K", "6", "--N", "4", "--M", "3", "--iters", "20",
    ];
    let with = |extra: &[&str], o: &str| {
        let mut v: Vec<String> = vec!["run".into()];
        v.extend(small.iter().map(|x| x.to_string()));
        v.extend(extra.iter().map(|x| x.to_string()));
        v.push("--out".into());
        v.push(out(o));
        v
    };
    let run = |v: Vec<String>| code(&v.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(run(with(&["--mu", "1e300"], "d")), 3);
    assert!(dir.path().join("d/seed_0.partial.csv").exists());
    assert_eq!(run(with(&["--mu", "0.5"], "e")), 4);
    assert!(
        dir.path().join("e/summary.json").exists(),
        "run completes before exit 4"
    );
    assert_eq!(run(with(&["--mu", "0.5", "--no-bounds"], "f")), 0);
    assert_eq!(run(with(&["--mu", "1e-4"], "g")), 0);
}

#[test]
fn sweep_is_byte_identical_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let go = |name: &str, jobs: &str| {
        let o = dir.path().join(name);
        ok(&[
            "sweep",
            "--variable",
            "eps_tau",
            "--values",
            "0,0.1,0.3",
            "--graph",
            "ring:8",
            "--K",
            "8",
            "--iters",
            "50",
            "--replications",
            "3",
            "--jobs",
            jobs,
            "--out",
            s(&o),
        ]);
        o
    };
    let a = go("a", "1");
    let b = go("b", "3");
    let files = [
        "sweep.csv",
        "value_0/mean.csv",
        "value_1/seed_2.csv",
        "value_2/summary.json",
    ];
    for f in files {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let sweep = std::fs::read_to_string(a.join("sweep.csv")).unwrap();
    let mut lines = sweep.lines();
    assert_eq!(
        lines.next().unwrap(),
        "value,tau,eps_tau,mu,steady_state_msd,final_consensus_err,iters_to_target"
    );
    let eps: Vec<f64> = lines
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(eps.len(), 3);
    assert!(eps[0] < 1e-8);
    assert!((eps[1] - 0.1).abs() < 0.005 && (eps[2] - 0.3).abs() < 0.015);
    for v in 0..3 {
        check_trace_csv(&a.join(format!("value_{v}/mean.csv")));
    }
}

#[test]
fn tau_sweep_from_flags() {
    let dir = tempfile::tempdir().unwrap();
    let line = ok(&[
        "sweep",
        "--variable",
        "tau",
        "--tau-graphs",
        "complete:4,hypercube:2,path:4",
        "--K",
        "4",
        "--rho",
        "0.5",
        "--deterministic",
        "--iters",
        "400",
        "--mu-grid",
        "0.8,0.4,0.2",
        "--target",
        "1e-6",
        "--no-bounds",
        "--out",
        s(dir.path()),
    ]);
    let taus: Vec<usize> = line
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(taus, vec![1, 2, 3]);
}

#[test]
fn bounds_report_exact_case() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(&[
        "bounds",
        "--graph",
        "hypercube:4",
        "--construction",
        "hypercube",
        "--mu",
        "1e-3",
        "--iters",
        "40",
        "--out",
        s(dir.path()),
    ]);
    assert!(text.contains("thm1: applicable"));
    let rep = json(&dir.path().join("bounds.json"));
    let bp = &rep["bound_params"];
    let f = |k: &str| bp[k].as_f64().unwrap();
    let (mu, tau, k) = (f("mu"), f("tau"), f("K"));
    let c = mu * mu * tau * (2.0 * tau - 1.0);
    let expected = 27.0 * c * k * f("B").powi(2) + 3.0 * c * f("sigma2");
    let csv = std::fs::read_to_string(dir.path().join("bounds.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "iter,thm1_bound,thm2_bound");
    for l in lines {
        let v: f64 = l.split(',').nth(1).unwrap().parse().unwrap();
        assert!((v - expected).abs() <= 1e-12 * expected);
    }
}

#[test]
fn bounds_report_flags_inadmissible_step() {
    let dir = tempfile::tempdir().unwrap();
    let out = ftclab(&[
        "bounds",
        "--graph",
        "hypercube:4",
        "--construction",
        "hypercube",
        "--mu",
        "0.1",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(4));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("thm1: not applicable"));
    assert!(text.contains("thm2: not applicable"));
}

#[test]
fn exact_deterministic_run_has_decreasing_centroid_error() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "run",
        "--graph",
        "hypercube:4",
        "--construction",
        "hypercube",
        "--deterministic",
        "--mu",
        "0.5",
        "--rho",
        "0.1",
        "--iters",
        "300",
        "--no-bounds",
        "--out",
        s(dir.path()),
    ]);
    let rows = check_trace_csv(&dir.path().join("mean.csv"));
    let centroid: Vec<f64> = rows.iter().map(|r| r[2].unwrap()).collect();
    for i in 4..centroid.len() - 1 {
        assert!(
            centroid[i + 1] < centroid[i],
            "iteration {i}: {} -> {}",
            centroid[i],
            centroid[i + 1]
        );
    }
}
