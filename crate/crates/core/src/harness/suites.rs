use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::Serialize;

use super::config::ExperimentConfig;
use super::run::run;
use crate::diagnostics::{
    concentration_sweep, g_phi_scaling_study, gronwall_envelope_check, mass_bound_fit,
    second_moment_bound_check, second_moment_constant, TestFunction,
};
use crate::error::{CboError, Result};
use crate::gibbs::{gibbs_weights, weighted_consensus, ConsensusParams};
use crate::infokernel::{check_kernel_contract, KernelSpec};
use crate::measures::EmpiricalMeasure;
use crate::objectives::{verify_growth, ObjectiveSpec, ObservableMap};
use crate::record::RecordOptions;
use crate::rng::stream;
use crate::sde::{simulate, InitLaw, LambdaInit, SimConfig};

/// Config of the `decay` suite, also shipped as `configs/decay.toml`.
pub const DECAY_CONFIG: &str = include_str!("../../configs/decay.toml");
/// Small full-system config, shipped as `configs/small.toml`.
pub const SMALL_CONFIG: &str = include_str!("../../configs/small.toml");

pub const SUITES: [&str; 5] = ["contracts", "decay", "bounds", "meanfield", "concentration"];

#[derive(Clone, Debug, Serialize)]
pub struct Outcome {
    pub name: String,
    pub passed: bool,
    pub detail: serde_json::Value,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub passed: bool,
    pub outcomes: Vec<Outcome>,
}

fn outcome(name: &str, passed: bool, detail: serde_json::Value) -> Outcome {
    Outcome {
        name: name.to_string(),
        passed,
        detail,
    }
}

/// Runs a named suite. Reports (and any runs it makes) go under `out_dir`.
pub fn validate(suite: &str, out_dir: &Path, force: bool) -> Result<SuiteReport> {
    let outcomes = match suite {
        "contracts" => contracts()?,
        "decay" => decay(out_dir, force)?,
        "bounds" => bounds()?,
        "meanfield" => meanfield()?,
        "concentration" => concentration()?,
        other => {
            return Err(CboError::invalid(
                "suite",
                format!("unknown suite `{other}` (one of {})", SUITES.join(", ")),
            ))
        }
    };
    let report = SuiteReport {
        suite: suite.to_string(),
        passed: outcomes.iter().all(|o| o.passed),
        outcomes,
    };
    std::fs::create_dir_all(out_dir).map_err(|e| CboError::io(out_dir, e))?;
    let path = out_dir.join(format!("validate-{suite}.json"));
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&report).expect("serializable"),
    )
    .map_err(|e| CboError::io(&path, e))?;
    Ok(report)
}

fn contracts() -> Result<Vec<Outcome>> {
    let mut out = Vec::new();
    for kernel in [
        KernelSpec::logistic(1.0, 1.0)?,
        KernelSpec::crowd_coupled(1.0, 1.0)?,
    ] {
        let r = check_kernel_contract(&kernel, 10_000, 11)?;
        out.push(outcome(
            &format!("kernel-{}", kernel.variant.name()),
            r.passes(),
            serde_json::to_value(&r).expect("serializable"),
        ));
    }
    for spec in [
        ObjectiveSpec::quadratic(3),
        ObjectiveSpec::rastrigin_like(3),
    ] {
        let r = verify_growth(&spec, 10_000, 10.0, 12)?;
        out.push(outcome(
            &format!("growth-{}", spec.name()),
            r.is_clean(),
            serde_json::json!({ "samples": r.samples, "violations": r.violations.len() }),
        ));
    }

    let mut rng = stream(13, 0);
    let mut sum_err: f64 = 0.0;
    let mut shift_err: f64 = 0.0;
    let mut dirac_err: f64 = 0.0;
    let lifted = ObjectiveSpec::custom(
        "quadratic-plus-3",
        3,
        Arc::new(|x: &[f64]| x.iter().map(|v| v * v).sum::<f64>() + 3.0),
        1.0,
        4.0,
        2.0,
    )?;
    for _ in 0..200 {
        let k = rng.random_range(1..20);
        let points: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..3).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let n = rng.random_range(0.0..50.0);
        let params = ConsensusParams::new(n, ObjectiveSpec::quadratic(3), ObservableMap::Identity)?;
        let shifted = ConsensusParams::new(n, lifted.clone(), ObservableMap::Identity)?;
        let w = gibbs_weights(&params, &points)?;
        sum_err = sum_err.max((w.iter().sum::<f64>() - 1.0).abs());
        let mu = EmpiricalMeasure::uniform(points.clone())?;
        let f = weighted_consensus(&params, &mu)?;
        let g = weighted_consensus(&shifted, &mu)?;
        for (a, b) in f.iter().zip(&g) {
            shift_err = shift_err.max((a - b).abs() / a.abs().max(1.0));
        }
        let dirac = weighted_consensus(&params, &EmpiricalMeasure::dirac(points[0].clone()))?;
        for (a, b) in dirac.iter().zip(&points[0]) {
            dirac_err = dirac_err.max((a - b).abs());
        }
    }
    out.push(outcome(
        "gibbs-invariants",
        sum_err <= 1e-12 && shift_err <= 1e-12 && dirac_err == 0.0,
        serde_json::json!({
            "weight_sum_error": sum_err,
            "shift_error": shift_err,
            "dirac_error": dirac_err,
        }),
    ));
    Ok(out)
}

fn decay(out_dir: &Path, force: bool) -> Result<Vec<Outcome>> {
    let cfg = ExperimentConfig::from_toml(DECAY_CONFIG)?;
    let manifest = run(&cfg, &out_dir.join("decay-run"), force)?;
    Ok(manifest
        .checks
        .iter()
        .map(|c| {
            outcome(
                &c.name,
                c.passed,
                serde_json::json!({ "file": format!("decay-run/{}", c.file) }),
            )
        })
        .collect())
}

fn bounds() -> Result<Vec<Outcome>> {
    let mut out = Vec::new();
    let c0 = second_moment_constant(0.0)?;
    let c1 = second_moment_constant(1.0)?;
    out.push(outcome(
        "constant-formula",
        c0 == 2.0 && c1 == 3.0,
        serde_json::json!({ "c_at_0": c0, "c_at_1": c1 }),
    ));
    let aux = ExperimentConfig::from_toml(DECAY_CONFIG)?.sim;
    let rec = simulate(
        &aux,
        &RecordOptions {
            stride: 10,
            ..Default::default()
        },
        &mut [],
    )?;
    let r = second_moment_bound_check(&rec, &aux)?;
    out.push(outcome(
        "second-moment",
        r.violated_at.is_none(),
        serde_json::to_value(&r).expect("serializable"),
    ));
    let full = ExperimentConfig::from_toml(SMALL_CONFIG)?.sim;
    let rec = simulate(
        &full,
        &RecordOptions {
            stride: 10,
            ..Default::default()
        },
        &mut [],
    )?;
    let g = gronwall_envelope_check(&rec, &full);
    out.push(outcome(
        "gronwall",
        g.violated_at.is_none(),
        serde_json::to_value(&g).expect("serializable"),
    ));
    Ok(out)
}

fn meanfield() -> Result<Vec<Outcome>> {
    let cfg = SimConfig::builder(2, 250)
        .noise_load(0.5)
        .init(InitLaw::gaussian(
            vec![0.0, 0.0],
            1.0,
            LambdaInit::Constant { value: 0.5 },
        ))
        .dt(0.01)
        .t_end(2.0)
        .seed(505)
        .build()?;
    let rows = g_phi_scaling_study(
        &cfg,
        &[250, 1000],
        200,
        &TestFunction::GaussianBump { width: 2.0 },
        1,
    )?;
    let z = 2.5758;
    let ratio = rows[0].variance / rows[1].variance;
    let mut out: Vec<Outcome> = rows
        .iter()
        .map(|r| {
            outcome(
                &format!("centred-N{}", r.n_particles),
                r.mean.abs() <= z * r.stderr,
                serde_json::to_value(r).expect("serializable"),
            )
        })
        .collect();
    out.push(outcome(
        "variance-ratio",
        (2.5..=6.5).contains(&ratio),
        serde_json::json!({ "ratio": ratio, "interval": [2.5, 6.5] }),
    ));
    Ok(out)
}

fn concentration() -> Result<Vec<Outcome>> {
    let cfg = SimConfig::builder(2, 2000)
        .noise_load(0.5)
        .init(InitLaw::gaussian(
            vec![0.0, 0.0],
            1.0,
            LambdaInit::Constant { value: 0.2 },
        ))
        .dt(0.01)
        .t_end(10.0)
        .seed(404)
        .build()?;
    let opts = RecordOptions {
        stride: 10,
        radii: vec![0.5],
        snapshot_stride: Some(cfg.step_count()),
    };
    let rows = concentration_sweep(&cfg, &[1.0, 4.0, 16.0, 64.0], &opts)?;
    let m2: Vec<f64> = rows.iter().map(|r| r.terminal_m2_sq).collect();
    let monotone = m2.windows(2).all(|w| w[1] <= w[0]);
    let last = *m2.last().expect("four rows");
    let fit = mass_bound_fit(&rows[3].record, 0.5)?;
    Ok(vec![
        outcome(
            "terminal-second-moment",
            monotone && last <= 1e-2,
            serde_json::json!({ "n": [1.0, 4.0, 16.0, 64.0], "terminal_m2_sq": m2, "epsilon": 1e-2 }),
        ),
        outcome(
            "mass-floor",
            fit.floor_ok && fit.fitted_rate.is_finite() && fit.initial_smoothed_mass > 0.0,
            serde_json::to_value(&fit).expect("serializable"),
        ),
    ])
}
