//! Experiment runner: configuration, seeding, persistence and validation
//! suites.

mod config;
mod run;
mod suites;

pub use config::{
    CheckKind, ExperimentConfig, RawCheckParams, RawConfig, RawInit, RawKernel, RawObjective,
    RawObservable, RawObservers, RawSim, Statistic,
};
pub use run::{
    init_global_workers, inspect_run, read_manifest, replica_seed, report, resolve_output_dir, run,
    statistics_csv, sweep, with_axis, worker_count, CheckEntry, FileEntry, Generator, ReplicaEntry,
    RunManifest, RunStatus, SweepEntry, SweepIndex, INDEX_FILE, MANIFEST_FILE, OUTPUT_ROOT_ENV,
    SWEEP_AXES, WORKERS_ENV,
};
pub use suites::{validate, Outcome, SuiteReport, DECAY_CONFIG, SMALL_CONFIG, SUITES};
