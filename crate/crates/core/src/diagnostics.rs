//! Estimators and theory-bound checks on simulated trajectories.
//!
//! Expectations of the mean-field statements are replaced by averages over
//! the N-agent ensemble, and time integrals by the trapezoidal rule at the
//! recording stride.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{CboError, Result};
use crate::linalg::{dot, norm, norm_sq};
use crate::measures::phi_r_expectation;
use crate::record::{RecordOptions, Snapshot, StepContext};
use crate::rng::derive_seed;
use crate::sde::{simulate, Ensemble, Mode, Observer, SimConfig};

pub use crate::record::TrajectoryRecord;

fn trapezoid_cumulative(times: &[f64], values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    out.push(0.0);
    for k in 1..values.len() {
        acc += 0.5 * (values[k] + values[k - 1]) * (times[k] - times[k - 1]);
        out.push(acc);
    }
    out
}

fn require_auxiliary(record: &TrajectoryRecord, check: &str) -> Result<()> {
    if record.mode == Mode::Auxiliary {
        Ok(())
    } else {
        Err(CboError::Hypothesis(format!(
            "{check} applies to the auxiliary (f = 0) system only"
        )))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MeanDecayReport {
    pub max_rel_error: f64,
    pub worst_time: f64,
    pub observed: Vec<f64>,
    pub predicted: Vec<f64>,
}

/// Compares `‖E X_t‖` with `‖E X_0‖ exp(−∫₀ᵗ E Λ_s ds)`.
///
/// Errors are relative to the predicted curve; if the initial mean is exactly
/// zero the absolute error is reported instead.
pub fn mean_decay_check(record: &TrajectoryRecord) -> Result<MeanDecayReport> {
    require_auxiliary(record, "mean decay law")?;
    if record.is_empty() {
        return Err(CboError::invalid("record", "is empty"));
    }
    let observed: Vec<f64> = record.mean_x.iter().map(|m| norm(m)).collect();
    let integral = trapezoid_cumulative(&record.times, &record.mean_lambda);
    let start = observed[0];
    let predicted: Vec<f64> = integral.iter().map(|s| start * (-s).exp()).collect();
    let mut max_rel_error = 0.0;
    let mut worst_time = 0.0;
    for k in 0..observed.len() {
        let scale = if start > 0.0 { predicted[k] } else { 1.0 };
        let err = (observed[k] - predicted[k]).abs() / scale;
        if err > max_rel_error {
            max_rel_error = err;
            worst_time = record.times[k];
        }
    }
    Ok(MeanDecayReport {
        max_rel_error,
        worst_time,
        observed,
        predicted,
    })
}

/// `C(ς, d) = 1 + (4|1 − s| + 2 s (2 − s)) / (2 − s)²` with `s = ς² d`.
pub fn second_moment_constant(noise_load: f64) -> Result<f64> {
    if !(noise_load >= 0.0) {
        return Err(CboError::invalid("noise_load", "must be nonnegative"));
    }
    if noise_load >= 2.0 {
        return Err(CboError::Hypothesis(format!(
            "the second-moment bound requires noise_strength² · d < 2 (got {noise_load})"
        )));
    }
    let s = noise_load;
    Ok(1.0 + (4.0 * (1.0 - s).abs() + 2.0 * s * (2.0 - s)) / ((2.0 - s) * (2.0 - s)))
}

/// Tolerance factor on the second-moment ceiling for finite-N fluctuation.
pub const SECOND_MOMENT_SLACK: f64 = 1.1;

#[derive(Clone, Debug, Serialize)]
pub struct SecondMomentReport {
    pub c_bound: f64,
    pub slack: f64,
    pub initial_m2_sq: f64,
    pub max_ratio: f64,
    pub violated_at: Option<f64>,
}

/// Checks `E‖X_t‖² ≤ slack · C(ς,d) · E‖X_0‖²` along an auxiliary run.
pub fn second_moment_bound_check(
    record: &TrajectoryRecord,
    config: &SimConfig,
) -> Result<SecondMomentReport> {
    let c_bound = second_moment_constant(config.drift.noise_load(config.d))?;
    require_auxiliary(record, "second-moment bound")?;
    let initial = record.m2_sq[0];
    let ceiling = SECOND_MOMENT_SLACK * c_bound * initial;
    let violated_at = record
        .times
        .iter()
        .zip(&record.m2_sq)
        .find(|(_, m)| **m > ceiling)
        .map(|(t, _)| *t);
    let max_ratio = if initial > 0.0 {
        record.m2_sq.iter().fold(0.0f64, |a, m| a.max(m / initial))
    } else {
        0.0
    };
    Ok(SecondMomentReport {
        c_bound,
        slack: SECOND_MOMENT_SLACK,
        initial_m2_sq: initial,
        max_ratio,
        violated_at,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct GronwallReport {
    pub a_constant: f64,
    pub violated_at: Option<f64>,
}

/// Grönwall-type ceiling `E‖X_t‖² ≤ (E‖X_0‖² + A t) e^{A t}` with
/// `A = 4 (M_f + 1) ν + ς² d (6 + 6 M_f²)`, where `M_f` is the linear-growth
/// constant of the observable.
pub fn gronwall_envelope_check(record: &TrajectoryRecord, config: &SimConfig) -> GronwallReport {
    let m_f = config.consensus.observable.growth_constant();
    let a = 4.0 * (m_f + 1.0) * config.drift.drift_gain
        + config.drift.noise_load(config.d) * (6.0 + 6.0 * m_f * m_f);
    let initial = record.m2_sq[0];
    let violated_at = record
        .times
        .iter()
        .zip(&record.m2_sq)
        .find(|(t, m)| **m > (initial + a * **t) * (a * **t).exp())
        .map(|(t, _)| *t);
    GronwallReport {
        a_constant: a,
        violated_at,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LambdaPersistenceReport {
    /// Minimum of the mean rate over `t > 0` (over `t = 0` for a one-row record).
    pub min_mean_lambda: f64,
    /// Running integral `∫₀ᵗ E Λ_s ds` at each recorded time.
    pub integral: Vec<f64>,
    pub persistent: bool,
}

pub fn lambda_persistence_check(
    record: &TrajectoryRecord,
    config: &SimConfig,
) -> Result<LambdaPersistenceReport> {
    if !config.kernel.satisfies_positivity() {
        return Err(CboError::Hypothesis(
            "kernel must satisfy T(x, 0) > 0".into(),
        ));
    }
    let tail = if record.len() > 1 {
        &record.mean_lambda[1..]
    } else {
        &record.mean_lambda[..]
    };
    let min_mean_lambda = tail.iter().copied().fold(f64::INFINITY, f64::min);
    let integral = trapezoid_cumulative(&record.times, &record.mean_lambda);
    Ok(LambdaPersistenceReport {
        min_mean_lambda,
        integral,
        persistent: min_mean_lambda > 0.0,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct MassBoundReport {
    pub radius: f64,
    pub initial_smoothed_mass: f64,
    /// Smallest `q` with `ρ_t(B_r) ≥ E φ_r(X₀) e^{−q t}` along the record.
    pub fitted_rate: f64,
    pub min_mass: f64,
    pub floor_ok: bool,
}

/// Fits the exponential floor on the mass near the minimizer.
pub fn mass_bound_fit(record: &TrajectoryRecord, r: f64) -> Result<MassBoundReport> {
    let series = record.ball_series(r).ok_or_else(|| {
        CboError::invalid(
            "observers.radii",
            format!("record has no ball-mass series for r = {r}"),
        )
    })?;
    let initial = record
        .snapshots
        .iter()
        .find(|s| s.step == 0)
        .ok_or_else(|| {
            CboError::invalid("observers.snapshot_stride", "initial snapshot required")
        })?;
    let phi0 = phi_r_expectation(r, &initial.ensemble.spatial_measure());
    let min_mass = series.mass.iter().copied().fold(f64::INFINITY, f64::min);
    let mut rate: f64 = 0.0;
    if phi0 > 0.0 {
        for (t, m) in record.times.iter().zip(&series.mass) {
            if *t <= 0.0 {
                continue;
            }
            if *m <= 0.0 {
                rate = f64::INFINITY;
                break;
            }
            rate = rate.max((phi0 / m).ln() / t);
        }
    }
    Ok(MassBoundReport {
        radius: r,
        initial_smoothed_mass: phi0,
        fitted_rate: rate,
        min_mass,
        floor_ok: min_mass > 0.0,
    })
}

/// Smooth bounded test functions on ℝ^d × [0, 1] with analytic derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum TestFunction {
    Constant {
        value: f64,
    },
    /// `exp(−‖x‖²/(2s²)) · (1 + cos πλ)/2`
    GaussianBump {
        width: f64,
    },
    /// `(1 + λ)/2 · Π_j 1/(1 + x_j²/s²)`
    CoordinateWindow {
        width: f64,
    },
}

impl TestFunction {
    pub fn name(&self) -> &'static str {
        match self {
            TestFunction::Constant { .. } => "constant",
            TestFunction::GaussianBump { .. } => "gaussian-bump",
            TestFunction::CoordinateWindow { .. } => "coordinate-window",
        }
    }

    pub fn eval(&self, x: &[f64], lambda: f64) -> f64 {
        match *self {
            TestFunction::Constant { value } => value,
            TestFunction::GaussianBump { width } => {
                (-norm_sq(x) / (2.0 * width * width)).exp() * lambda_bump(lambda)
            }
            TestFunction::CoordinateWindow { width } => {
                0.5 * (1.0 + lambda) * x.iter().map(|&t| window(t, width)).product::<f64>()
            }
        }
    }

    pub fn grad_x(&self, x: &[f64], lambda: f64) -> Vec<f64> {
        match *self {
            TestFunction::Constant { .. } => vec![0.0; x.len()],
            TestFunction::GaussianBump { width } => {
                let phi = self.eval(x, lambda);
                x.iter().map(|&t| -t / (width * width) * phi).collect()
            }
            TestFunction::CoordinateWindow { width } => {
                let w: Vec<f64> = x.iter().map(|&t| window(t, width)).collect();
                let scale = 0.5 * (1.0 + lambda);
                (0..x.len())
                    .map(|j| {
                        let others: f64 = (0..x.len()).filter(|&k| k != j).map(|k| w[k]).product();
                        scale * window_d1(x[j], width) * others
                    })
                    .collect()
            }
        }
    }

    pub fn grad_lambda(&self, x: &[f64], lambda: f64) -> f64 {
        match *self {
            TestFunction::Constant { .. } => 0.0,
            TestFunction::GaussianBump { width } => {
                let pi = std::f64::consts::PI;
                (-norm_sq(x) / (2.0 * width * width)).exp() * (-0.5 * pi * (pi * lambda).sin())
            }
            TestFunction::CoordinateWindow { width } => {
                0.5 * x.iter().map(|&t| window(t, width)).product::<f64>()
            }
        }
    }

    pub fn laplacian_x(&self, x: &[f64], lambda: f64) -> f64 {
        match *self {
            TestFunction::Constant { .. } => 0.0,
            TestFunction::GaussianBump { width } => {
                let s2 = width * width;
                (norm_sq(x) / (s2 * s2) - x.len() as f64 / s2) * self.eval(x, lambda)
            }
            TestFunction::CoordinateWindow { width } => {
                let w: Vec<f64> = x.iter().map(|&t| window(t, width)).collect();
                let scale = 0.5 * (1.0 + lambda);
                (0..x.len())
                    .map(|j| {
                        let others: f64 = (0..x.len()).filter(|&k| k != j).map(|k| w[k]).product();
                        scale * window_d2(x[j], width) * others
                    })
                    .sum()
            }
        }
    }
}

fn lambda_bump(lambda: f64) -> f64 {
    0.5 * (1.0 + (std::f64::consts::PI * lambda).cos())
}

fn window(t: f64, s: f64) -> f64 {
    1.0 / (1.0 + t * t / (s * s))
}

fn window_d1(t: f64, s: f64) -> f64 {
    let w = window(t, s);
    -2.0 * t / (s * s) * w * w
}

fn window_d2(t: f64, s: f64) -> f64 {
    let w = window(t, s);
    let s2 = s * s;
    8.0 * t * t / (s2 * s2) * w * w * w - 2.0 / s2 * w * w
}

/// Ensemble average of `φ`.
fn phi_average(ensemble: &Ensemble, phi: &TestFunction) -> f64 {
    ensemble
        .agents
        .iter()
        .map(|a| phi.eval(&a.x, a.lambda))
        .sum::<f64>()
        / ensemble.len() as f64
}

/// Ensemble average of the generator applied to `φ`:
/// `(ν v, T) · ∇φ + (ς²/2) ‖v‖² Δ_x φ`.
fn generator_average(
    ensemble: &Ensemble,
    ctx: &StepContext,
    config: &SimConfig,
    phi: &TestFunction,
) -> f64 {
    let gain = config.drift.drift_gain;
    let half_var = 0.5 * config.drift.noise_strength * config.drift.noise_strength;
    let mut v = vec![0.0; config.d];
    let mut total = 0.0;
    for a in &ensemble.agents {
        ctx.velocity_into(&a.x, a.lambda, &mut v);
        let rate = config.kernel.rate(&ctx.summary, &a.x, a.lambda);
        total += gain * dot(&v, &phi.grad_x(&a.x, a.lambda))
            + rate * phi.grad_lambda(&a.x, a.lambda)
            + half_var * norm_sq(&v) * phi.laplacian_x(&a.x, a.lambda);
    }
    total / ensemble.len() as f64
}

/// Streaming evaluation of the weak-form residual, usable as an observer.
#[derive(Clone, Debug)]
pub struct GPhiAccumulator<'a> {
    config: &'a SimConfig,
    phi: TestFunction,
    first_phi: Option<f64>,
    last_phi: f64,
    last_time: f64,
    last_generator: f64,
    integral: f64,
    visits: usize,
}

impl<'a> GPhiAccumulator<'a> {
    pub fn new(config: &'a SimConfig, phi: TestFunction) -> Self {
        GPhiAccumulator {
            config,
            phi,
            first_phi: None,
            last_phi: 0.0,
            last_time: 0.0,
            last_generator: 0.0,
            integral: 0.0,
            visits: 0,
        }
    }

    pub fn push(&mut self, ensemble: &Ensemble, ctx: &StepContext, time: f64) {
        let generator = generator_average(ensemble, ctx, self.config, &self.phi);
        let value = phi_average(ensemble, &self.phi);
        if self.first_phi.is_none() {
            self.first_phi = Some(value);
        } else {
            self.integral += 0.5 * (generator + self.last_generator) * (time - self.last_time);
        }
        self.last_phi = value;
        self.last_time = time;
        self.last_generator = generator;
        self.visits += 1;
    }

    pub fn residual(&self) -> Result<f64> {
        if self.visits < 2 {
            return Err(CboError::invalid("snapshots", "at least two are required"));
        }
        let first = self.first_phi.expect("visited");
        Ok(self.last_phi - first - self.integral)
    }
}

impl Observer for GPhiAccumulator<'_> {
    fn observe(&mut self, step: usize, ensemble: &Ensemble, ctx: &StepContext) {
        self.push(ensemble, ctx, step as f64 * self.config.dt);
    }
}

/// Weak-form residual
///
/// ```text
/// G = ⟨φ⟩_T − ⟨φ⟩_0 − ∫₀ᵀ ⟨(ν v, T)·∇φ + (ς²/2)‖v‖² Δ_x φ⟩ dt
/// ```
///
/// over snapshots at a uniform stride; the time integral is trapezoidal.
/// The diffusion term carries the sign given by Itô's formula, so `G` is a
/// mean-zero martingale integral under the dynamics.
pub fn g_phi_residual(
    snapshots: &[Snapshot],
    config: &SimConfig,
    phi: &TestFunction,
) -> Result<f64> {
    if snapshots.len() < 2 {
        return Err(CboError::invalid("snapshots", "at least two are required"));
    }
    let stride = snapshots[1].step - snapshots[0].step;
    if stride == 0
        || snapshots
            .windows(2)
            .any(|w| w[1].step < w[0].step || w[1].step - w[0].step != stride)
    {
        return Err(CboError::invalid(
            "snapshots",
            "must be at a uniform stride",
        ));
    }
    let mut acc = GPhiAccumulator::new(config, *phi);
    for s in snapshots {
        acc.push(&s.ensemble, &s.context, s.step as f64 * config.dt);
    }
    acc.residual()
}

#[derive(Clone, Debug, Serialize)]
pub struct GPhiRow {
    pub n_particles: usize,
    pub replicas: usize,
    pub mean: f64,
    pub variance: f64,
    pub stderr: f64,
    #[serde(skip)]
    pub samples: Vec<f64>,
}

impl GPhiRow {
    fn from_samples(n_particles: usize, samples: Vec<f64>) -> Self {
        let k = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / k;
        let variance = samples.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (k - 1.0);
        GPhiRow {
            n_particles,
            replicas: samples.len(),
            mean,
            variance,
            stderr: (variance / k).sqrt(),
            samples,
        }
    }
}

/// Seed of replica `replica` at population size `n_particles`.
pub fn replica_seed(master: u64, n_particles: usize, replica: usize) -> u64 {
    derive_seed(derive_seed(master, n_particles as u64), replica as u64)
}

/// `G_φ` statistics over independent replicas for each population size.
pub fn g_phi_scaling_study(
    config: &SimConfig,
    n_list: &[usize],
    replica_count: usize,
    phi: &TestFunction,
    stride: usize,
) -> Result<Vec<GPhiRow>> {
    if replica_count < 30 {
        return Err(CboError::invalid(
            "replicas",
            "at least 30 replicas are required",
        ));
    }
    n_list
        .iter()
        .map(|&n_particles| {
            let samples: Result<Vec<f64>> = (0..replica_count)
                .into_par_iter()
                .map(|r| {
                    let mut cfg = config.clone();
                    cfg.n_particles = n_particles;
                    cfg.seed = replica_seed(config.seed, n_particles, r);
                    let opts = RecordOptions {
                        stride,
                        ..RecordOptions::default()
                    };
                    let mut acc = GPhiAccumulator::new(&cfg, *phi);
                    simulate(&cfg, &opts, &mut [&mut acc])?;
                    acc.residual()
                })
                .collect();
            Ok(GPhiRow::from_samples(n_particles, samples?))
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub n: f64,
    pub terminal_m2_sq: f64,
    pub terminal_consensus: Vec<f64>,
    #[serde(skip)]
    pub record: TrajectoryRecord,
}

/// Runs the full system for each sharpness value with common random numbers
/// and reports the terminal second moment.
pub fn concentration_sweep(
    base_config: &SimConfig,
    n_list: &[f64],
    options: &RecordOptions,
) -> Result<Vec<SweepRow>> {
    if base_config.mode != Mode::Full {
        return Err(CboError::invalid(
            "sim.mode",
            "concentration sweep runs the full system",
        ));
    }
    base_config.require_concentration_hypotheses()?;
    if !base_config.init.spatial.charges_origin_balls() {
        return Err(CboError::Hypothesis(
            "initial law must charge every ball around the minimizer".into(),
        ));
    }
    n_list
        .par_iter()
        .map(|&n| {
            let mut cfg = base_config.clone();
            cfg.consensus.n = n;
            let record = simulate(&cfg, options, &mut [])?;
            Ok(SweepRow {
                n,
                terminal_m2_sq: record.final_m2_sq(),
                terminal_consensus: record.consensus_point.last().cloned().unwrap_or_default(),
                record,
            })
        })
        .collect()
}
