use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{CheckKind, ExperimentConfig, RawConfig, Statistic};
use crate::diagnostics::{
    gronwall_envelope_check, lambda_persistence_check, mass_bound_fit, mean_decay_check,
    second_moment_bound_check,
};
use crate::error::{CboError, Result};
use crate::record::TrajectoryRecord;
use crate::rng::{derive_seed, GENERATOR_NAME, GENERATOR_VERSION};
use crate::sde::simulate;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const INDEX_FILE: &str = "index.json";
/// Overrides the worker count of a run.
pub const WORKERS_ENV: &str = "CBO_WORKERS";
/// Root directory that relative output paths are resolved against.
pub const OUTPUT_ROOT_ENV: &str = "CBO_OUTPUT_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub name: String,
    pub version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicaEntry {
    pub index: usize,
    pub seed: u64,
    pub csv: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckEntry {
    pub name: String,
    pub passed: bool,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Everything needed to reproduce a run. Written last; its presence marks
/// the run as complete.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RawConfig,
    pub generator: Generator,
    pub code_version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub master_seed: u64,
    pub replicas: Vec<ReplicaEntry>,
    pub checks: Vec<CheckEntry>,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Seed of replica `index`; replica 0 also uses a derived seed so that a
/// one-replica run is not special.
pub fn replica_seed(master: u64, index: usize) -> u64 {
    derive_seed(master, index as u64)
}

/// Resolves where a run writes: an explicit path wins, then the config's
/// `output_dir`; relative paths land under `$CBO_OUTPUT_ROOT` when set.
pub fn resolve_output_dir(config: &ExperimentConfig, explicit: Option<&Path>) -> Result<PathBuf> {
    let path = match (explicit, &config.raw.output_dir) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(p)) => PathBuf::from(p),
        (None, None) => return Err(CboError::invalid("output_dir", "is required")),
    };
    if path.is_relative() {
        if let Ok(root) = std::env::var(OUTPUT_ROOT_ENV) {
            return Ok(Path::new(&root).join(path));
        }
    }
    Ok(path)
}

/// Worker count from `$CBO_WORKERS`, falling back to the config.
pub fn worker_count(config: &ExperimentConfig) -> Result<Option<usize>> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CboError::invalid(WORKERS_ENV, "must be a positive integer")),
        },
        Err(_) => Ok(config.raw.workers),
    }
}

/// Sizes the global worker pool from `$CBO_WORKERS`, if set. Must run before
/// any parallel work; later calls are no-ops.
pub fn init_global_workers() -> Result<()> {
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n = v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| CboError::invalid(WORKERS_ENV, "must be a positive integer"))?;
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    Ok(())
}

fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

/// CSV of the enabled statistics, one row per recorded step.
pub fn statistics_csv(record: &TrajectoryRecord, statistics: &[Statistic], d: usize) -> String {
    let mut header = vec!["step".to_string(), "time".to_string()];
    for stat in statistics {
        match stat {
            Statistic::MeanX | Statistic::Consensus => {
                header.extend((0..d).map(|j| format!("{}_{j}", stat.name())))
            }
            Statistic::MassBall => header.extend(
                record
                    .mass_ball
                    .iter()
                    .map(|s| format!("mass_ball_{}", s.radius)),
            ),
            _ => header.push(stat.name().to_string()),
        }
    }
    let mut out = header.join(",");
    out.push('\n');
    for k in 0..record.len() {
        let mut row = vec![record.steps[k].to_string(), fmt_num(record.times[k])];
        for stat in statistics {
            match stat {
                Statistic::M2Sq => row.push(fmt_num(record.m2_sq[k])),
                Statistic::MeanX => row.extend(record.mean_x[k].iter().map(|v| fmt_num(*v))),
                Statistic::MeanLambda => row.push(fmt_num(record.mean_lambda[k])),
                Statistic::MinLambda => row.push(fmt_num(record.min_lambda[k])),
                Statistic::MaxLambda => row.push(fmt_num(record.max_lambda[k])),
                Statistic::MassBall => {
                    row.extend(record.mass_ball.iter().map(|s| fmt_num(s.mass[k])))
                }
                Statistic::Consensus => {
                    row.extend(record.consensus_point[k].iter().map(|v| fmt_num(*v)))
                }
            }
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct CheckOutput {
    check: &'static str,
    passed: bool,
    replicas: Vec<ReplicaCheck>,
}

#[derive(Serialize)]
struct ReplicaCheck {
    replica: usize,
    passed: bool,
    report: serde_json::Value,
}

fn evaluate_check(
    kind: CheckKind,
    config: &ExperimentConfig,
    record: &TrajectoryRecord,
) -> Result<(bool, serde_json::Value)> {
    let sim = &config.sim;
    Ok(match kind {
        CheckKind::MeanDecay => {
            let r = mean_decay_check(record)?;
            (r.max_rel_error <= config.mean_decay_tolerance, to_json(&r))
        }
        CheckKind::SecondMoment => {
            let r = second_moment_bound_check(record, sim)?;
            (r.violated_at.is_none(), to_json(&r))
        }
        CheckKind::Gronwall => {
            let r = gronwall_envelope_check(record, sim);
            (r.violated_at.is_none(), to_json(&r))
        }
        CheckKind::LambdaPersistence => {
            let r = lambda_persistence_check(record, sim)?;
            let summary = serde_json::json!({
                "min_mean_lambda": r.min_mean_lambda,
                "final_integral": r.integral.last(),
                "persistent": r.persistent,
            });
            (r.persistent, summary)
        }
        CheckKind::MassFloor => {
            let reports = config
                .observers
                .radii
                .iter()
                .map(|&r| mass_bound_fit(record, r))
                .collect::<Result<Vec<_>>>()?;
            let ok = reports
                .iter()
                .all(|r| r.floor_ok && r.fitted_rate.is_finite() && r.initial_smoothed_mass > 0.0);
            (ok, to_json(&reports))
        }
        CheckKind::ClampFree => {
            let in_range = record
                .min_lambda
                .iter()
                .zip(&record.max_lambda)
                .all(|(lo, hi)| *lo >= 0.0 && *hi <= 1.0);
            (
                record.clamp_events == 0 && in_range,
                serde_json::json!({ "clamp_events": record.clamp_events, "in_range": in_range }),
            )
        }
    })
}

fn to_json<T: Serialize>(report: &T) -> serde_json::Value {
    serde_json::to_value(report).expect("report is serializable")
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| CboError::io(&path, e))
}

fn hash_file(dir: &Path, name: &str) -> Result<FileEntry> {
    let path = dir.join(name);
    let bytes = fs::read(&path).map_err(|e| CboError::io(&path, e))?;
    Ok(FileEntry {
        path: name.to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
        bytes: bytes.len() as u64,
    })
}

fn prepare_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let occupied = fs::read_dir(dir)
            .map_err(|e| CboError::io(dir, e))?
            .next()
            .is_some();
        if occupied {
            if !force {
                return Err(CboError::io(
                    dir,
                    std::io::Error::new(
                        std::io::ErrorKind::AlreadyExists,
                        "output directory is not empty (use force to overwrite)",
                    ),
                ));
            }
            fs::remove_dir_all(dir).map_err(|e| CboError::io(dir, e))?;
        }
    }
    fs::create_dir_all(dir).map_err(|e| CboError::io(dir, e))
}

fn install<T: Send>(workers: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(job()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CboError::invalid("workers", e.to_string()))?;
            Ok(pool.install(job))
        }
    }
}

/// Executes every replica, writes one CSV per replica and one JSON per
/// check into `out_dir`, then the manifest.
pub fn run(config: &ExperimentConfig, out_dir: &Path, force: bool) -> Result<RunManifest> {
    let started_unix = unix_now();
    prepare_dir(out_dir, force)?;
    let workers = worker_count(config)?;
    let master = config.sim.seed;
    let replicas: Vec<ReplicaEntry> = (0..config.raw.replicas)
        .map(|index| ReplicaEntry {
            index,
            seed: replica_seed(master, index),
            csv: format!("replica-{index:04}.csv"),
        })
        .collect();

    let results: Vec<Result<Vec<(bool, serde_json::Value)>>> = install(workers, || {
        replicas
            .par_iter()
            .map(|entry| {
                let mut sim = config.sim.clone();
                sim.seed = entry.seed;
                let record = simulate(&sim, &config.observers, &mut [])?;
                write_file(
                    out_dir,
                    &entry.csv,
                    statistics_csv(&record, &config.statistics, sim.d).as_bytes(),
                )?;
                let mut replica_config = config.clone();
                replica_config.sim = sim;
                config
                    .checks
                    .iter()
                    .map(|&kind| evaluate_check(kind, &replica_config, &record))
                    .collect()
            })
            .collect()
    })?;
    let per_replica = results.into_iter().collect::<Result<Vec<_>>>()?;

    let mut checks = Vec::new();
    for (c, kind) in config.checks.iter().enumerate() {
        let rows: Vec<ReplicaCheck> = per_replica
            .iter()
            .enumerate()
            .map(|(replica, outcomes)| ReplicaCheck {
                replica,
                passed: outcomes[c].0,
                report: outcomes[c].1.clone(),
            })
            .collect();
        let passed = rows.iter().all(|r| r.passed);
        let file = format!("check-{}.json", kind.name());
        let body = CheckOutput {
            check: kind.name(),
            passed,
            replicas: rows,
        };
        write_file(
            out_dir,
            &file,
            serde_json::to_string_pretty(&body)
                .expect("serializable")
                .as_bytes(),
        )?;
        checks.push(CheckEntry {
            name: kind.name().to_string(),
            passed,
            file,
        });
    }

    let mut files = Vec::new();
    for name in replicas
        .iter()
        .map(|r| &r.csv)
        .chain(checks.iter().map(|c| &c.file))
    {
        files.push(hash_file(out_dir, name)?);
    }
    let manifest = RunManifest {
        config: config.raw.clone(),
        generator: Generator {
            name: GENERATOR_NAME.into(),
            version: GENERATOR_VERSION.into(),
        },
        code_version: crate::VERSION.into(),
        started_unix,
        finished_unix: unix_now(),
        master_seed: master,
        replicas,
        checks,
        files,
    };
    write_file(
        out_dir,
        MANIFEST_FILE,
        serde_json::to_string_pretty(&manifest)
            .expect("serializable")
            .as_bytes(),
    )?;
    Ok(manifest)
}

/// Scalar fields a sweep may vary.
pub const SWEEP_AXES: [&str; 4] = ["n", "N", "noise_strength", "dt"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub value: f64,
    pub dir: String,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepIndex {
    pub axis: String,
    pub entries: Vec<SweepEntry>,
}

/// Applies `axis = value` to a config, revalidating the result.
pub fn with_axis(config: &ExperimentConfig, axis: &str, value: f64) -> Result<ExperimentConfig> {
    let mut raw = config.raw.clone();
    match axis {
        "n" => raw.sim.n = value,
        "N" => {
            if !(value >= 1.0 && value.fract() == 0.0) {
                return Err(CboError::invalid(
                    "sim.N",
                    format!("sweep value {value} is not a positive integer"),
                ));
            }
            raw.sim.n_particles = value as usize
        }
        "noise_strength" => raw.sim.noise_strength = value,
        "dt" => raw.sim.dt = value,
        other => {
            return Err(CboError::invalid(
                "axis",
                format!(
                    "`{other}` is not sweepable (one of {})",
                    SWEEP_AXES.join(", ")
                ),
            ))
        }
    }
    ExperimentConfig::from_raw(raw)
}

/// One run per value, each in `out_root/<axis>=<value>`, plus an index.
pub fn sweep(
    config: &ExperimentConfig,
    axis: &str,
    values: &[f64],
    out_root: &Path,
    force: bool,
) -> Result<(SweepIndex, Vec<RunManifest>)> {
    // validate every point before running any
    let configs = values
        .iter()
        .map(|&v| with_axis(config, axis, v))
        .collect::<Result<Vec<_>>>()?;
    if configs.is_empty() && !SWEEP_AXES.contains(&axis) {
        with_axis(config, axis, 1.0)?;
    }
    prepare_dir(out_root, force)?;
    let mut index = SweepIndex {
        axis: axis.to_string(),
        entries: Vec::new(),
    };
    let mut manifests = Vec::new();
    for (value, cfg) in values.iter().zip(&configs) {
        let dir = format!("{axis}={value}");
        let manifest = run(cfg, &out_root.join(&dir), force)?;
        index.entries.push(SweepEntry {
            value: *value,
            dir,
            passed: manifest.passed(),
        });
        manifests.push(manifest);
    }
    write_file(
        out_root,
        INDEX_FILE,
        serde_json::to_string_pretty(&index)
            .expect("serializable")
            .as_bytes(),
    )?;
    Ok((index, manifests))
}

#[derive(Clone, Debug, PartialEq)]
pub enum RunStatus {
    Complete(RunManifest),
    /// The files named in the manifest do not match their recorded hashes.
    Corrupt {
        manifest: RunManifest,
        mismatched: Vec<String>,
    },
    /// No manifest: the run never finished.
    Incomplete,
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| CboError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| CboError::Parse(format!("{}: {e}", path.display())))
}

pub fn inspect_run(dir: &Path) -> Result<RunStatus> {
    if !dir.is_dir() {
        return Err(CboError::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "run directory does not exist"),
        ));
    }
    if !dir.join(MANIFEST_FILE).exists() {
        return Ok(RunStatus::Incomplete);
    }
    let manifest = read_manifest(dir)?;
    let mut mismatched = Vec::new();
    for f in &manifest.files {
        match hash_file(dir, &f.path) {
            Ok(actual) if actual.sha256 == f.sha256 => {}
            _ => mismatched.push(f.path.clone()),
        }
    }
    Ok(if mismatched.is_empty() {
        RunStatus::Complete(manifest)
    } else {
        RunStatus::Corrupt {
            manifest,
            mismatched,
        }
    })
}

/// Human-readable summary of a finished run.
pub fn report(dir: &Path) -> Result<(String, RunStatus)> {
    let status = inspect_run(dir)?;
    let mut out = String::new();
    let manifest = match &status {
        RunStatus::Incomplete => {
            writeln!(
                out,
                "{}: incomplete run (no {MANIFEST_FILE})",
                dir.display()
            )
            .unwrap();
            return Ok((out, status));
        }
        RunStatus::Complete(m) => m,
        RunStatus::Corrupt {
            manifest,
            mismatched,
        } => {
            writeln!(out, "hash mismatch: {}", mismatched.join(", ")).unwrap();
            manifest
        }
    };
    let sim = &manifest.config.sim;
    writeln!(out, "run       {}", dir.display()).unwrap();
    writeln!(
        out,
        "system    {} d={} N={} n={} dt={} t_end={}",
        sim.mode, sim.d, sim.n_particles, sim.n, sim.dt, sim.t_end
    )
    .unwrap();
    writeln!(
        out,
        "generator {} ({}), code {}",
        manifest.generator.name, manifest.generator.version, manifest.code_version
    )
    .unwrap();
    writeln!(
        out,
        "seed      {} ({} replicas)",
        manifest.master_seed,
        manifest.replicas.len()
    )
    .unwrap();
    writeln!(out).unwrap();
    writeln!(
        out,
        "{:<8} {:>20} {:>24}  last row",
        "replica", "seed", "rows"
    )
    .unwrap();
    for r in &manifest.replicas {
        let path = dir.join(&r.csv);
        let text = fs::read_to_string(&path).map_err(|e| CboError::io(&path, e))?;
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        let rows: Vec<&str> = lines.collect();
        let last = rows.last().copied().unwrap_or_default();
        writeln!(out, "{:<8} {:>20} {:>24}", r.index, r.seed, rows.len()).unwrap();
        for (name, value) in header.split(',').zip(last.split(',')) {
            let shown = value
                .parse::<f64>()
                .map(|v| format!("{v:.6e}"))
                .unwrap_or_else(|_| value.to_string());
            writeln!(out, "    {name:<20} {shown}").unwrap();
        }
    }
    if !manifest.checks.is_empty() {
        writeln!(out).unwrap();
        for c in &manifest.checks {
            writeln!(
                out,
                "check {:<20} {}",
                c.name,
                if c.passed { "pass" } else { "FAIL" }
            )
            .unwrap();
        }
    }
    Ok((out, status))
}
