use std::fs;
use std::path::Path;

use emsense::experiment::{
    cell_artifact_paths, decode_artifact, encode_artifact, evaluate_saved, load_artifact, prepare, run_experiment,
    save_artifact, sweep_patterns, train_surrogate, Artifact, ExperimentConfig,
};
use emsense::objective::{MeasurementMode, Stage, Task};
use emsense::physics::GeometryParams;
use emsense::{Error, PatternOrigin};

fn tiny(task: Task, dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::for_task(task);
    cfg.geometry = GeometryParams::scaled(3, 8);
    cfg.dataset.n_train_per_class = 10;
    cfg.dataset.n_val_per_class = 3;
    cfg.dataset.n_test_per_class = 3;
    cfg.m_list = vec![2, 3];
    cfg.seeds = vec![1, 2];
    cfg.output_dir = dir.to_path_buf();
    cfg.train.hidden = vec![8];
    cfg.train.learning_rates = vec![1e-2, 1e-3];
    cfg.train.init_std = 0.1;
    cfg.train.epochs = 3;
    cfg.train.outer_iters = 2;
    cfg.train.spsa_batch_size = 8;
    cfg.mann_triples = 40;
    cfg.mann_rows_per_triple = 2;
    cfg.mann.epochs = 2;
    cfg
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn recognition_run_writes_complete_deterministic_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let report = run_experiment(&tiny(Task::Recognition, a.path())).unwrap();
    run_experiment(&tiny(Task::Recognition, b.path())).unwrap();

    // Every requested cell exactly once, each tagged with the run's hash.
    assert_eq!(report.records.len(), 2 * 2 * 3);
    for m in [2, 3] {
        for seed in [1, 2] {
            for s in [PatternOrigin::Random, PatternOrigin::Pca, PatternOrigin::Learned] {
                assert_eq!(
                    report
                        .records
                        .iter()
                        .filter(|r| r.strategy == s && r.m == m && r.seed == seed)
                        .count(),
                    1
                );
            }
        }
    }
    assert!(report.records.iter().all(|r| r.config_hash == report.config_hash));
    assert!(report
        .records
        .iter()
        .all(|r| r.confusion.as_ref().is_some_and(|c| c.total() == 9)));

    let tree_a = read_tree(a.path());
    let tree_b = read_tree(b.path());
    let names: Vec<&str> = tree_a.iter().map(|(n, _)| n.as_str()).collect();
    for required in [
        "config.txt",
        "summary.csv",
        "confusion.csv",
        "report.iems",
        "curves/learned_M3_seed2.csv",
    ] {
        assert!(names.contains(&required), "missing {required}");
    }
    let csvs = |t: &[(String, Vec<u8>)]| -> Vec<(String, Vec<u8>)> {
        t.iter().filter(|(n, _)| n.ends_with(".csv")).cloned().collect()
    };
    assert_eq!(csvs(&tree_a), csvs(&tree_b));

    let curve = fs::read_to_string(a.path().join("curves/learned_M3_seed2.csv")).unwrap();
    assert!(
        curve.starts_with("stage,outer_iter,epoch,train_loss,test_loss,recon_term,kl_term,metric,M,strategy,seed\n")
    );
    assert!(curve.lines().any(|l| l.starts_with("II,")));

    match load_artifact(&a.path().join("report.iems")).unwrap() {
        Artifact::Report(r) => assert_eq!(r, report),
        other => panic!("report.iems holds a {}", other.kind()),
    }
}

#[test]
fn random_only_run_has_stage1_records_only() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(Task::Imaging, dir.path());
    cfg.strategies = vec![PatternOrigin::Random];
    cfg.m_list = vec![2];
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.records.len(), 2);
    for r in &report.records {
        assert!(r.log.records.iter().all(|e| e.stage == Stage::I));
        assert_eq!(r.pattern.origin(), PatternOrigin::Random);
        assert!(r.confusion.is_none());
        assert!((-1.0..=1.0).contains(&r.metric));
    }
    assert!(!dir.path().join("confusion.csv").exists());
}

#[test]
fn saved_cells_reproduce_their_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(Task::Recognition, dir.path());
    cfg.m_list = vec![2];
    cfg.seeds = vec![5];
    let report = run_experiment(&cfg).unwrap();
    let ws = prepare(&cfg).unwrap();
    for r in &report.records {
        let e = evaluate_saved(&cfg, &ws, dir.path(), r.strategy, r.m, r.seed).unwrap();
        assert_eq!(e.metric, r.metric, "{}", r.strategy);
        assert_eq!(e.loss, r.test_loss);
        let (_, code) = cell_artifact_paths(dir.path(), r.strategy, r.m, r.seed);
        assert_eq!(load_artifact(&code).unwrap(), Artifact::Pattern(r.pattern.clone()));
    }
    assert!(evaluate_saved(&cfg, &ws, dir.path(), PatternOrigin::Random, 7, 5).is_err());
}

#[test]
fn sweep_aggregates_one_row_per_strategy_and_m() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(Task::Imaging, dir.path());
    let (report, rows) = sweep_patterns(&cfg).unwrap();
    assert_eq!(rows.len(), 3 * 2);
    for row in &rows {
        let v = report.metrics(row.strategy, row.m);
        assert_eq!(row.n, v.len());
        assert!((row.mean - v.iter().sum::<f64>() / v.len() as f64).abs() < 1e-15);
    }
    let text = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + rows.len());
    assert_eq!(text.lines().next(), Some("strategy,M,mean,std,n"));
}

#[test]
fn sweep_preconditions() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(Task::Imaging, dir.path());
    cfg.m_list.clear();
    assert!(matches!(sweep_patterns(&cfg), Err(Error::Config { ref key, .. }) if key == "experiment.m_list"));
    let mut cfg = tiny(Task::Imaging, dir.path());
    cfg.seeds = vec![1];
    assert!(matches!(sweep_patterns(&cfg), Err(Error::Config { ref key, .. }) if key == "experiment.seeds"));
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let cfg = tiny(Task::Imaging, &blocker.join("out"));
    assert!(matches!(run_experiment(&cfg), Err(Error::Io(_))));
}

#[test]
fn surrogate_mode_trains_and_saves_the_measurement_network() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(Task::Recognition, dir.path());
    cfg.measurement_mode = MeasurementMode::Surrogate;
    cfg.strategies = vec![PatternOrigin::Random];
    cfg.m_list = vec![2];
    cfg.seeds = vec![1];
    let report = run_experiment(&cfg).unwrap();
    assert!(report.surrogate_fidelity.is_some());
    match load_artifact(&dir.path().join("mann.iems")).unwrap() {
        Artifact::Surrogate(s) => {
            assert!(s.is_trained());
            assert_eq!(s.fidelity, report.surrogate_fidelity);
        }
        other => panic!("mann.iems holds a {}", other.kind()),
    }
}

#[test]
fn artifacts_round_trip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(Task::Recognition, dir.path());
    let ws = prepare(&cfg).unwrap();
    let (surrogate, _) = train_surrogate(&cfg, &ws).unwrap();
    let artifacts = [
        Artifact::Dataset(ws.splits.val.clone()),
        Artifact::Surrogate(surrogate.clone()),
        Artifact::Network(surrogate.hypernet().clone()),
    ];
    for (k, a) in artifacts.into_iter().enumerate() {
        let path = dir.path().join(format!("a{k}.iems"));
        save_artifact(&path, &a).unwrap();
        let back = load_artifact(&path).unwrap();
        assert_eq!(encode_artifact(&back).unwrap(), fs::read(&path).unwrap());
        assert_eq!(back, a);
    }
}

#[test]
fn corrupted_files_name_the_failing_section() {
    let p = emsense::coding::random_pattern(3, 256, 1).unwrap();
    let bytes = encode_artifact(&Artifact::Pattern(p.clone())).unwrap();
    assert_eq!(decode_artifact(&bytes).unwrap(), Artifact::Pattern(p));

    let mut bad = bytes.clone();
    bad[0] = b'X';
    let msg = decode_artifact(&bad).unwrap_err().to_string();
    assert!(msg.contains("header"), "{msg}");

    let msg = decode_artifact(&bytes[..bytes.len() - 10]).unwrap_err().to_string();
    assert!(msg.contains("PATT"), "{msg}");
}

#[test]
fn config_file_round_trips_and_rejects_typos() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(Task::Recognition, dir.path());
    let text = cfg.to_text();
    let back = ExperimentConfig::from_text(&text).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.hash(), cfg.hash());

    let typo = format!("{text}spsa.alpah=0.6\n");
    match ExperimentConfig::from_text(&typo) {
        Err(Error::Config { key, .. }) => assert_eq!(key, "spsa.alpah"),
        other => panic!("expected a config error, got {other:?}"),
    }
    let mut changed = cfg.clone();
    changed.train.spsa.a = 0.2;
    assert_ne!(changed.hash(), cfg.hash());
}
