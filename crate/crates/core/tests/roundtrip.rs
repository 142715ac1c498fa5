use std::fs;

use ftclab::algorithm::{self, Init, Mode, RunConfig};
use ftclab::experiment::ExperimentConfig;
use ftclab::ftc::{self, MatrixSeq};
use ftclab::graphs::{build_topology, Graph, Topology};
use ftclab::linalg::Matrix;
use ftclab::metrics::Trace;
use ftclab::mtx;
use ftclab::problems::{
    estimate_constants, generate_logistic, solve_centralized, EstimateOptions, LogisticSpec,
    Problem,
};
use ftclab::Error;

#[test]
fn graph_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for (kind, size) in [
        (Topology::Ring, 7),
        (Topology::Hypercube, 3),
        (Topology::Star, 2),
    ] {
        let g = build_topology(kind, size).unwrap();
        let path = dir.path().join(format!("{kind}.json"));
        g.save(&path).unwrap();
        assert_eq!(Graph::load(&path).unwrap(), g);
    }
}

#[test]
fn graph_rejects_bad_edges() {
    assert!(Graph::new(3, [(0, 3)], "oob").is_err());
    assert!(Graph::new(3, [(1, 1)], "loop").is_err());
    assert!(!Graph::new(4, [(0, 1), (2, 3)], "split")
        .unwrap()
        .is_connected());
}

#[test]
fn mtx_round_trip_is_bitwise() {
    let a = Matrix::from_row_slice(
        3,
        2,
        &[0.1, -1.0 / 3.0, 0.0, 1e-300, 7.0, f64::MIN_POSITIVE],
    );
    assert_eq!(mtx::parse(&mtx::to_array_string(&a)).unwrap(), a);
    assert_eq!(mtx::parse(&mtx::to_coordinate_string(&a)).unwrap(), a);
}

#[test]
fn mtx_rejects_malformed_input() {
    assert!(matches!(mtx::parse(""), Err(Error::Format(_))));
    assert!(mtx::parse("%%MatrixMarket matrix array real general\n2 2\n1\n2\n3\n").is_err());
    assert!(mtx::parse("%%MatrixMarket matrix array real general\n1 1\nnan\n").is_err());
    assert!(mtx::parse("%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1.0\n").is_err());
}

#[test]
fn sequence_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let base = ftc::laplacian_factor_sequence(&build_topology(Topology::Path, 6).unwrap()).unwrap();
    let seq = ftc::perturb_sequence(&base, 0.2, 8).unwrap();
    seq.save(dir.path()).unwrap();
    let back = MatrixSeq::load(dir.path()).unwrap();
    assert_eq!(back, seq);
}

#[test]
fn sequence_load_rejects_edited_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let seq = ftc::hypercube_sequence(2).unwrap();
    seq.save(dir.path()).unwrap();
    let mut a = seq.matrix(1).clone();
    a[(0, 0)] = 0.4;
    a[(0, 1)] = 0.6;
    mtx::write_array(dir.path().join("A_1.mtx"), &a).unwrap();
    assert!(MatrixSeq::load(dir.path()).is_err());
}

#[test]
fn problem_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = generate_logistic(&LogisticSpec {
        k: 4,
        n: 7,
        m: 3,
        seed: 21,
        ..Default::default()
    })
    .unwrap();
    p.save(dir.path()).unwrap();
    let back = Problem::load(dir.path()).unwrap();
    assert_eq!(back, p);
    fs::write(dir.path().join("features.bin"), [0u8; 5]).unwrap();
    assert!(matches!(Problem::load(dir.path()), Err(Error::Format(_))));
}

#[test]
fn trace_csv_round_trip() {
    let p = generate_logistic(&LogisticSpec {
        k: 4,
        n: 10,
        m: 2,
        seed: 2,
        ..Default::default()
    })
    .unwrap();
    let seq = ftc::hypercube_sequence(2).unwrap();
    let cfg = RunConfig {
        mu: 0.01,
        num_iters: 30,
        record_every: 7,
        seed: 3,
        init: Init::Random { scale: 0.5 },
        ..Default::default()
    };
    let w_opt = solve_centralized(&p, 1e-10).unwrap().w;
    let opts = EstimateOptions::default();
    let bp = estimate_constants(&p, &w_opt, cfg.mu, &seq, &opts).unwrap();
    let trace = algorithm::run(&p, &seq, &cfg, Mode::Transformed, &w_opt, Some(&bp)).unwrap();
    let iters: Vec<usize> = trace.rows.iter().map(|r| r.iter).collect();
    assert_eq!(iters, vec![0, 7, 14, 21, 28, 30]);
    assert!(trace.rows.iter().all(|r| r.thm1_bound.is_some()));
    let back = Trace::from_csv(&trace.to_csv()).unwrap();
    assert_eq!(back, trace);
}

#[test]
fn experiment_config_json_round_trip() {
    let cfg = ExperimentConfig::default();
    let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
    assert_eq!(back, cfg);
    assert!(
        ExperimentConfig::from_json(r#"{"graph": {"topology": "ring:5"}, "typo": 1}"#).is_err()
    );
}
