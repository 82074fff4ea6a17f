//! Acceptance gate. Each criterion prints one PASS/FAIL line; the test
//! fails if any criterion does.

use std::time::Instant;

use cbo_core::diagnostics::{
    concentration_sweep, g_phi_scaling_study, mass_bound_fit, mean_decay_check,
    second_moment_bound_check, second_moment_constant, TestFunction,
};
use cbo_core::gibbs::{weighted_consensus, ConsensusParams};
use cbo_core::infokernel::KernelSpec;
use cbo_core::measures::{w1_exact, EmpiricalMeasure};
use cbo_core::objectives::{ObjectiveSpec, ObservableMap};
use cbo_core::rng::stream;
use cbo_core::sde::{simulate, InitLaw, LambdaInit, Mode, SimConfig};
use cbo_core::RecordOptions;
use rand::Rng;

struct Gate {
    failures: Vec<String>,
}

impl Gate {
    fn report(&mut self, id: u32, name: &str, ok: bool, detail: String) {
        println!(
            "criterion {id} [{}] {name}: {detail}",
            if ok { "PASS" } else { "FAIL" }
        );
        if !ok {
            self.failures.push(format!("{id} {name}"));
        }
    }
}

fn constraint_preservation(gate: &mut Gate) {
    let start = Instant::now();
    let kernel = KernelSpec::logistic(1.0, 1.0).unwrap();
    assert_eq!(kernel.theta, 0.5);
    let cfg = SimConfig::builder(2, 500)
        .kernel(kernel)
        .noise_load(0.5)
        .sharpness(10.0)
        .init(InitLaw::gaussian(
            vec![1.0, 1.0],
            1.0,
            LambdaInit::Uniform { min: 0.0, max: 1.0 },
        ))
        .dt(0.25)
        .t_end(2500.0)
        .seed(101)
        .build()
        .unwrap();
    assert_eq!(cfg.step_count(), 10_000);
    let rec = simulate(&cfg, &RecordOptions::default(), &mut []).unwrap();
    let in_range = rec
        .min_lambda
        .iter()
        .zip(&rec.max_lambda)
        .all(|(lo, hi)| *lo >= 0.0 && *hi <= 1.0);
    let secs = start.elapsed().as_secs_f64();
    gate.report(
        1,
        "constraint preservation",
        rec.clamp_events == 0 && in_range && rec.len() == 10_001 && secs < 10.0,
        format!(
            "clamp events {}, lambda in [0,1]: {in_range}, {secs:.2}s",
            rec.clamp_events
        ),
    );
}

fn decay_config() -> SimConfig {
    SimConfig::builder(2, 10_000)
        .mode(Mode::Auxiliary)
        .noise_load(0.5)
        .kernel(KernelSpec::logistic(1.0, 1.0).unwrap())
        .init(InitLaw::gaussian(
            vec![2.0, 2.0],
            1.0,
            LambdaInit::Constant { value: 0.5 },
        ))
        .dt(0.01)
        .t_end(5.0)
        .seed(202)
        .build()
        .unwrap()
}

fn decay_and_ceiling(gate: &mut Gate) {
    let start = Instant::now();
    let cfg = decay_config();
    let rec = simulate(&cfg, &RecordOptions::default(), &mut []).unwrap();
    let decay = mean_decay_check(&rec).unwrap();
    let secs = start.elapsed().as_secs_f64();
    gate.report(
        2,
        "mean decay law",
        decay.max_rel_error <= 0.05 && secs < 60.0,
        format!(
            "max rel error {:.4} at t={:.2} (tol 0.05), {secs:.2}s",
            decay.max_rel_error, decay.worst_time
        ),
    );

    let bound = second_moment_bound_check(&rec, &cfg).unwrap();
    let c0 = second_moment_constant(0.0).unwrap();
    let c1 = second_moment_constant(1.0).unwrap();
    let formula_ok = (c0 - 2.0).abs() < 1e-15 && (c1 - 3.0).abs() < 1e-15;
    gate.report(
        3,
        "second-moment ceiling",
        bound.violated_at.is_none() && formula_ok,
        format!(
            "max m2/m2(0) {:.4} vs {:.4}; C(0)={c0}, C(load 1)={c1}",
            bound.max_ratio,
            bound.slack * bound.c_bound
        ),
    );
}

fn concentration_and_mass(gate: &mut Gate) {
    let start = Instant::now();
    let cfg = SimConfig::builder(2, 2000)
        .objective(ObjectiveSpec::quadratic(2))
        .observable(ObservableMap::Identity)
        .noise_load(0.5)
        .kernel(KernelSpec::logistic(1.0, 1.0).unwrap())
        .init(InitLaw::gaussian(
            vec![0.0, 0.0],
            1.0,
            LambdaInit::Constant { value: 0.2 },
        ))
        .dt(0.01)
        .t_end(10.0)
        .seed(404)
        .build()
        .unwrap();
    let opts = RecordOptions {
        stride: 10,
        radii: vec![0.5],
        snapshot_stride: Some(1000),
    };
    let rows = concentration_sweep(&cfg, &[1.0, 4.0, 16.0, 64.0], &opts).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let m2: Vec<f64> = rows.iter().map(|r| r.terminal_m2_sq).collect();
    let monotone = m2.windows(2).all(|w| w[1] <= w[0]);
    let last = *m2.last().unwrap();
    gate.report(
        4,
        "concentration with persistent information",
        monotone && last <= 1e-2 && secs < 120.0,
        format!(
            "terminal m2_sq [{}] (n=64 tol 1e-2), {secs:.2}s",
            m2.iter()
                .map(|v| format!("{v:.3e}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    );

    let rec = &rows[3].record;
    let fit = mass_bound_fit(rec, 0.5).unwrap();
    let series = rec.ball_series(0.5).unwrap();
    let floor_holds = rec.times.iter().zip(&series.mass).all(|(t, m)| {
        *m >= fit.initial_smoothed_mass * (-fit.fitted_rate * t).exp() * (1.0 - 1e-12)
    });
    gate.report(
        6,
        "mass-in-ball floor",
        fit.floor_ok
            && fit.fitted_rate.is_finite()
            && floor_holds
            && fit.initial_smoothed_mass > 0.0,
        format!(
            "min mass {:.4}, fitted rate {:.4}, initial smoothed mass {:.4}",
            fit.min_mass, fit.fitted_rate, fit.initial_smoothed_mass
        ),
    );
}

fn residual_scaling(gate: &mut Gate) {
    let start = Instant::now();
    let cfg = SimConfig::builder(2, 250)
        .noise_load(0.5)
        .sharpness(1.0)
        .kernel(KernelSpec::logistic(1.0, 1.0).unwrap())
        .init(InitLaw::gaussian(
            vec![0.0, 0.0],
            1.0,
            LambdaInit::Constant { value: 0.5 },
        ))
        .dt(0.01)
        .t_end(2.0)
        .seed(505)
        .build()
        .unwrap();
    // bump as wide as the ensemble: the quadrature bias relative to the
    // martingale spread falls like 1/width
    let phi = TestFunction::GaussianBump { width: 2.0 };
    let rows = g_phi_scaling_study(&cfg, &[250, 1000], 200, &phi, 1).unwrap();
    let secs = start.elapsed().as_secs_f64();
    // two-sided 99% normal quantile
    let z = 2.5758;
    let centred = rows.iter().all(|r| r.mean.abs() <= z * r.stderr);
    let ratio = rows[0].variance / rows[1].variance;
    let detail = rows
        .iter()
        .map(|r| {
            format!(
                "N={}: mean {:.2e} ± {:.2e}, var {:.3e}",
                r.n_particles,
                r.mean,
                z * r.stderr,
                r.variance
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    gate.report(
        5,
        "mean-field residual scaling",
        centred && (2.5..=6.5).contains(&ratio) && secs < 300.0,
        format!("{detail}; variance ratio {ratio:.3}, {secs:.2}s"),
    );
}

fn w1_brute_force(a: &[f64], b: &[f64]) -> f64 {
    fn permute(k: usize, perm: &mut Vec<usize>, a: &[f64], b: &[f64], best: &mut f64) {
        if k == perm.len() {
            let cost: f64 = perm
                .iter()
                .enumerate()
                .map(|(i, &j)| (a[i] - b[j]).abs())
                .sum();
            *best = best.min(cost / a.len() as f64);
            return;
        }
        for i in k..perm.len() {
            perm.swap(k, i);
            permute(k + 1, perm, a, b, best);
            perm.swap(k, i);
        }
    }
    let mut perm: Vec<usize> = (0..a.len()).collect();
    let mut best = f64::INFINITY;
    permute(0, &mut perm, a, b, &mut best);
    best
}

fn direct_consensus(n: f64, atoms: &[Vec<f64>]) -> Vec<f64> {
    let weights: Vec<f64> = atoms
        .iter()
        .map(|x| (-n * x.iter().map(|v| v * v).sum::<f64>()).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let mut out = vec![0.0; atoms[0].len()];
    for (x, w) in atoms.iter().zip(&weights) {
        for (o, xi) in out.iter_mut().zip(x) {
            *o += w * xi / total;
        }
    }
    out
}

fn oracle_equivalences(gate: &mut Gate) {
    let mut rng = stream(707, 0);
    let mut w1_err: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..=8);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mu = EmpiricalMeasure::uniform(a.iter().map(|v| vec![*v]).collect()).unwrap();
        let nu = EmpiricalMeasure::uniform(b.iter().map(|v| vec![*v]).collect()).unwrap();
        w1_err = w1_err.max((w1_exact(&mu, &nu).unwrap() - w1_brute_force(&a, &b)).abs());
    }

    let mut consensus_err: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(0.0..5.0);
        let d = rng.random_range(1..=3);
        let k = rng.random_range(1..=10);
        let atoms: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let params =
            ConsensusParams::new(n, ObjectiveSpec::quadratic(d), ObservableMap::Identity).unwrap();
        let got = weighted_consensus(&params, &EmpiricalMeasure::uniform(atoms.clone()).unwrap())
            .unwrap();
        let want = direct_consensus(n, &atoms);
        for (g, w) in got.iter().zip(&want) {
            consensus_err = consensus_err.max((g - w).abs());
        }
    }

    let cfg = SimConfig::builder(1, 1)
        .kernel(KernelSpec::logistic(1.0, 1.0).unwrap())
        .init(InitLaw::gaussian(
            vec![0.0],
            1.0,
            LambdaInit::Constant { value: 0.0 },
        ))
        .dt(0.01)
        .t_end(5.0)
        .build()
        .unwrap();
    let rec = simulate(&cfg, &RecordOptions::default(), &mut []).unwrap();
    let ode_err = rec
        .times
        .iter()
        .zip(&rec.mean_lambda)
        .map(|(t, l)| (l - 0.5 * (1.0 - (-2.0 * t).exp())).abs())
        .fold(0.0, f64::max);

    gate.report(
        7,
        "oracle equivalences",
        w1_err <= 1e-9 && consensus_err <= 1e-10 && ode_err <= 2.0 * cfg.dt,
        format!(
            "w1 {w1_err:.1e}, consensus {consensus_err:.1e}, rate ODE {ode_err:.2e} (tol {:.0e})",
            2.0 * cfg.dt
        ),
    );
}

fn gibbs_properties(gate: &mut Gate) {
    let mut rng = stream(808, 0);
    let atoms: Vec<Vec<f64>> = (0..5)
        .map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
        .collect();
    let mu = EmpiricalMeasure::uniform(atoms.clone()).unwrap();
    let quad =
        ConsensusParams::new(3.0, ObjectiveSpec::quadratic(2), ObservableMap::Identity).unwrap();
    let base = weighted_consensus(&quad, &mu).unwrap();

    let shift = 7.5;
    let shifted_obj = ObjectiveSpec::custom(
        "shifted-quadratic",
        2,
        std::sync::Arc::new(move |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>() + shift),
        1.0,
        1.0 + shift,
        2.0,
    )
    .unwrap();
    let shifted = ConsensusParams::new(3.0, shifted_obj, ObservableMap::Identity).unwrap();
    let moved = weighted_consensus(&shifted, &mu).unwrap();
    let shift_err = base
        .iter()
        .zip(&moved)
        .map(|(a, b)| (a - b).abs() / a.abs().max(1e-300))
        .fold(0.0, f64::max);

    let flat =
        ConsensusParams::new(0.0, ObjectiveSpec::quadratic(2), ObservableMap::Identity).unwrap();
    let f0 = weighted_consensus(&flat, &mu).unwrap();
    let mean = [0, 1].map(|j| atoms.iter().map(|a| a[j]).sum::<f64>() / 5.0);
    let f0_err = f0
        .iter()
        .zip(&mean)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let x = vec![0.3, -1.7];
    let dirac_exact = weighted_consensus(&quad, &EmpiricalMeasure::dirac(x.clone())).unwrap() == x;

    let sharp =
        ConsensusParams::new(1e3, ObjectiveSpec::quadratic(2), ObservableMap::Identity).unwrap();
    let laplace = weighted_consensus(&sharp, &mu).unwrap();
    let argmin = atoms
        .iter()
        .min_by(|a, b| (a[0] * a[0] + a[1] * a[1]).total_cmp(&(b[0] * b[0] + b[1] * b[1])))
        .unwrap();
    let laplace_err = laplace
        .iter()
        .zip(argmin)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    gate.report(
        8,
        "gibbs functional properties",
        shift_err <= 1e-12 && f0_err <= 1e-15 && dirac_exact && laplace_err <= 1e-6,
        format!("shift {shift_err:.1e}, f_0 {f0_err:.1e}, dirac exact {dirac_exact}, laplace {laplace_err:.1e}"),
    );
}

fn determinism(gate: &mut Gate) {
    let dir = tempfile::tempdir().unwrap();
    let config = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/small.toml");
    let exp = cbo_core::harness::ExperimentConfig::from_path(config).unwrap();
    let mut first = None;
    let mut same = true;
    for k in 0..2 {
        let out = dir.path().join(format!("run{k}"));
        let manifest = cbo_core::harness::run(&exp, &out, false).unwrap();
        let csvs: Vec<Vec<u8>> = manifest
            .files
            .iter()
            .filter(|f| f.path.ends_with(".csv"))
            .map(|f| std::fs::read(out.join(&f.path)).unwrap())
            .collect();
        assert!(!csvs.is_empty());
        match &first {
            None => first = Some(csvs),
            Some(prev) => same = prev == &csvs,
        }
    }
    gate.report(
        9,
        "determinism",
        same,
        format!("configs/small.toml twice: byte-identical {same}"),
    );
}

fn main() {
    let mut gate = Gate {
        failures: Vec::new(),
    };
    constraint_preservation(&mut gate);
    decay_and_ceiling(&mut gate);
    concentration_and_mass(&mut gate);
    residual_scaling(&mut gate);
    oracle_equivalences(&mut gate);
    gibbs_properties(&mut gate);
    determinism(&mut gate);
    if !gate.failures.is_empty() {
        eprintln!("failed criteria: {:?}", gate.failures);
        std::process::exit(1);
    }
    println!("all criteria passed");
}
