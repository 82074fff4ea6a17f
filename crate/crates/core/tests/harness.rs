use std::fs;

use cbo_core::harness::{
    inspect_run, replica_seed, report, run, sweep, validate, ExperimentConfig, RunStatus,
    MANIFEST_FILE, SMALL_CONFIG,
};
use cbo_core::CboError;

const TINY: &str = r#"
replicas = 1
sim.d = 2
sim.N = 5
sim.dt = 0.1
sim.t_end = {T}
sim.seed = 1
init.law = "gaussian"
init.mean = [0.0, 0.0]
init.sigma = 1.0
"#;

fn with(extra: &str) -> ExperimentConfig {
    let mut t_end = "0.0";
    let mut rest = String::new();
    for line in extra.lines() {
        match line.strip_prefix("sim.t_end = ") {
            Some(v) => t_end = v,
            None => {
                rest.push_str(line);
                rest.push('\n');
            }
        }
    }
    ExperimentConfig::from_toml(&format!("{}{rest}", TINY.replace("{T}", t_end))).unwrap()
}

#[test]
fn zero_horizon_writes_single_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let manifest = run(&with(""), &out, false).unwrap();
    assert_eq!(manifest.replicas.len(), 1);
    let csv = fs::read_to_string(out.join(&manifest.replicas[0].csv)).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("step,time,m2_sq,mean_x_0,mean_x_1,mean_lambda"));
    assert!(out.join(MANIFEST_FILE).exists());
}

#[test]
fn csv_columns_follow_declared_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with("sim.t_end = 0.2\nobservers.statistics = [\"mean_lambda\", \"m2_sq\"]\n");
    let manifest = run(&cfg, dir.path(), false).unwrap();
    let csv = fs::read_to_string(dir.path().join(&manifest.replicas[0].csv)).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "step,time,mean_lambda,m2_sq");
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "0");
    // 17 significant digits in scientific notation
    assert_eq!(row[2], "5.0000000000000000e-1");
    assert_eq!(row[1].split('e').next().unwrap().len(), 18);
}

#[test]
fn replicas_get_distinct_recorded_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let text = TINY
        .replace("replicas = 1", "replicas = 4")
        .replace("{T}", "0.0");
    let cfg = ExperimentConfig::from_toml(&text).unwrap();
    let out = dir.path().join("four");
    let manifest = run(&cfg, &out, false).unwrap();
    assert_eq!(manifest.replicas.len(), 4);
    let seeds: Vec<u64> = manifest.replicas.iter().map(|r| r.seed).collect();
    for (i, s) in seeds.iter().enumerate() {
        assert_eq!(*s, replica_seed(1, i));
        assert!(!seeds[..i].contains(s));
    }
    let csvs = fs::read_dir(&out)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "csv")
        })
        .count();
    assert_eq!(csvs, 4);
}

#[test]
fn reruns_are_byte_identical_and_hashes_match() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_toml(SMALL_CONFIG).unwrap();
    let a = run(&cfg, &dir.path().join("a"), false).unwrap();
    let b = run(&cfg, &dir.path().join("b"), false).unwrap();
    assert_eq!(a.files, b.files);
    for f in &a.files {
        assert_eq!(
            fs::read(dir.path().join("a").join(&f.path)).unwrap(),
            fs::read(dir.path().join("b").join(&f.path)).unwrap()
        );
    }
    assert!(a.passed(), "{:?}", a.checks);
    assert!(matches!(
        inspect_run(&dir.path().join("a")).unwrap(),
        RunStatus::Complete(_)
    ));
}

#[test]
fn refuses_to_overwrite_without_force() {
    let dir = tempfile::tempdir().unwrap();
    run(&with(""), dir.path(), false).unwrap();
    let err = run(&with(""), dir.path(), false).unwrap_err();
    assert!(matches!(err, CboError::Io { .. }));
    run(&with(""), dir.path(), true).unwrap();
}

#[test]
fn detects_incomplete_and_tampered_runs() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = run(&with("sim.t_end = 0.2\n"), dir.path(), false).unwrap();
    let csv = dir.path().join(&manifest.replicas[0].csv);
    fs::write(&csv, "step,time\n").unwrap();
    match inspect_run(dir.path()).unwrap() {
        RunStatus::Corrupt { mismatched, .. } => {
            assert_eq!(mismatched, vec![manifest.replicas[0].csv.clone()])
        }
        s => panic!("{s:?}"),
    }
    fs::remove_file(dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(inspect_run(dir.path()).unwrap(), RunStatus::Incomplete);
    let (text, _) = report(dir.path()).unwrap();
    assert!(text.contains("incomplete"));
}

#[test]
fn report_lists_replicas_and_checks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with("sim.t_end = 0.2\nchecks = [\"gronwall\"]\n");
    run(&cfg, dir.path(), false).unwrap();
    let (text, status) = report(dir.path()).unwrap();
    assert!(matches!(status, RunStatus::Complete(_)));
    assert!(text.contains("check gronwall"));
    assert!(text.contains("m2_sq"));
}

#[test]
fn sweep_index_and_axes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with("sim.t_end = 0.2\n");
    let (index, manifests) = sweep(&cfg, "n", &[], &dir.path().join("empty"), false).unwrap();
    assert!(index.entries.is_empty() && manifests.is_empty());
    let (index, manifests) = sweep(&cfg, "n", &[1.0, 4.0], &dir.path().join("n"), false).unwrap();
    assert_eq!(index.entries.len(), 2);
    assert_eq!(manifests.len(), 2);
    assert_eq!(manifests[1].config.sim.n, 4.0);
    assert!(dir
        .path()
        .join("n")
        .join(&index.entries[1].dir)
        .join(MANIFEST_FILE)
        .exists());
    let err = sweep(&cfg, "kernel.a", &[1.0], &dir.path().join("bad"), false).unwrap_err();
    assert!(err.is_config_error());
    assert!(sweep(&cfg, "N", &[2.5], &dir.path().join("bad2"), false).is_err());
}

#[test]
fn unknown_suite_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = validate("nope", dir.path(), false).unwrap_err();
    assert!(err.is_config_error());
}

#[test]
fn contracts_suite_passes() {
    let dir = tempfile::tempdir().unwrap();
    let report = validate("contracts", dir.path(), false).unwrap();
    assert!(report.passed, "{report:?}");
    assert!(dir.path().join("validate-contracts.json").exists());
}

#[test]
fn decay_suite_passes_on_committed_config() {
    let dir = tempfile::tempdir().unwrap();
    let report = validate("decay", dir.path(), false).unwrap();
    assert!(report.passed, "{report:?}");
}
