//! Euler–Maruyama integration of the N-agent system
//!
//! ```text
//! dX^i = ν v(X^i, Λ^i) dt + ς ‖v(X^i, Λ^i)‖ dB^i
//! dΛ^i = T(X^i, Λ^i) dt
//! ```
//!
//! with `v = -x + λ f_n(ρ^N) + (1-λ) e(ρ^N)` in full mode and
//! `v = -x + (1-λ) e(ρ^N)` in auxiliary mode. The consensus quantities are
//! evaluated once per step from the state at the start of the step.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check_dim, CboError, Result};
use crate::gibbs::{self, ConsensusParams, DriftParams};
use crate::infokernel::{KernelSpec, PopulationSummary};
use crate::linalg::{dist, norm, norm_sq};
use crate::objectives::{sample_uniform_ball, ObjectiveSpec, ObservableMap};
use crate::record::{RecordOptions, Snapshot, StepContext, TrajectoryRecord};
use crate::rng::{self, SimRng};

/// Rounding slack tolerated before a rate update counts as a clamp event.
pub const CLAMP_TOLERANCE: f64 = 1e-12;

/// Below this population size agent updates run on the calling thread.
const PARALLEL_THRESHOLD: usize = 4096;

/// RNG stream of the initial sample.
pub const INIT_STREAM: u64 = 0;
/// RNG stream of the Brownian increments.
pub const NOISE_STREAM: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Agent {
    pub x: Vec<f64>,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Ensemble {
    pub agents: Vec<Agent>,
    pub time: f64,
}

impl Ensemble {
    pub fn new(agents: Vec<Agent>, time: f64) -> Result<Self> {
        let first = agents.first().ok_or(CboError::EmptyMeasure)?;
        let d = first.x.len();
        for a in &agents {
            check_dim(d, a.x.len())?;
            if !(0.0..=1.0).contains(&a.lambda) {
                return Err(CboError::LambdaOutOfRange(a.lambda));
            }
        }
        Ok(Ensemble { agents, time })
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.agents[0].x.len()
    }

    /// Spatial marginal as (point, mass) pairs with uniform mass.
    pub fn spatial(&self) -> impl Iterator<Item = (&[f64], f64)> + Clone + '_ {
        let m = 1.0 / self.agents.len() as f64;
        self.agents.iter().map(move |a| (a.x.as_slice(), m))
    }

    pub fn spatial_measure(&self) -> crate::measures::EmpiricalMeasure {
        crate::measures::EmpiricalMeasure::uniform(
            self.agents.iter().map(|a| a.x.clone()).collect(),
        )
        .expect("ensemble is nonempty")
    }

    pub fn summary(&self) -> PopulationSummary {
        PopulationSummary::from_states(
            self.agents.iter().map(|a| (a.x.as_slice(), a.lambda)),
            self.dimension(),
        )
        .expect("ensemble is nonempty and dimension-consistent")
    }

    pub fn m2_sq(&self) -> f64 {
        self.agents.iter().map(|a| norm_sq(&a.x)).sum::<f64>() / self.len() as f64
    }

    pub fn mean_lambda(&self) -> f64 {
        self.agents.iter().map(|a| a.lambda).sum::<f64>() / self.len() as f64
    }

    pub fn diameter(&self) -> f64 {
        let mut best: f64 = 0.0;
        for (i, a) in self.agents.iter().enumerate() {
            for b in &self.agents[i + 1..] {
                best = best.max(dist(&a.x, &b.x));
            }
        }
        best
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Full,
    Auxiliary,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "law")]
pub enum SpatialInit {
    Gaussian { mean: Vec<f64>, sigma: f64 },
    UniformBall { center: Vec<f64>, radius: f64 },
    PointMass { at: Vec<f64> },
}

impl SpatialInit {
    fn dimension(&self) -> usize {
        match self {
            SpatialInit::Gaussian { mean, .. } => mean.len(),
            SpatialInit::UniformBall { center, .. } => center.len(),
            SpatialInit::PointMass { at } => at.len(),
        }
    }

    /// Whether the law charges every ball around the origin.
    pub fn charges_origin_balls(&self) -> bool {
        match self {
            SpatialInit::Gaussian { sigma, .. } => *sigma > 0.0,
            SpatialInit::UniformBall { center, radius } => norm(center) < *radius,
            SpatialInit::PointMass { at } => at.iter().all(|v| *v == 0.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "law")]
pub enum LambdaInit {
    Constant { value: f64 },
    Uniform { min: f64, max: f64 },
}

impl LambdaInit {
    pub fn mean(&self) -> f64 {
        match self {
            LambdaInit::Constant { value } => *value,
            LambdaInit::Uniform { min, max } => 0.5 * (min + max),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InitLaw {
    pub spatial: SpatialInit,
    pub lambda: LambdaInit,
}

impl InitLaw {
    pub fn gaussian(mean: Vec<f64>, sigma: f64, lambda: LambdaInit) -> Self {
        InitLaw {
            spatial: SpatialInit::Gaussian { mean, sigma },
            lambda,
        }
    }

    pub fn sample(&self, n_particles: usize, rng: &mut SimRng) -> Ensemble {
        let d = self.spatial.dimension();
        let agents = (0..n_particles)
            .map(|_| {
                let mut x = vec![0.0; d];
                match &self.spatial {
                    SpatialInit::Gaussian { mean, sigma } => {
                        for (xi, mi) in x.iter_mut().zip(mean) {
                            *xi = mi + sigma * rng.sample::<f64, _>(StandardNormal);
                        }
                    }
                    SpatialInit::UniformBall { center, radius } => {
                        sample_uniform_ball(rng, *radius, &mut x);
                        for (xi, ci) in x.iter_mut().zip(center) {
                            *xi += ci;
                        }
                    }
                    SpatialInit::PointMass { at } => x.copy_from_slice(at),
                }
                let lambda = match self.lambda {
                    LambdaInit::Constant { value } => value,
                    LambdaInit::Uniform { min, max } => min + (max - min) * rng.random::<f64>(),
                };
                Agent { x, lambda }
            })
            .collect();
        Ensemble { agents, time: 0.0 }
    }

    fn validate(&self, d: usize) -> Result<()> {
        if self.spatial.dimension() != d {
            return Err(CboError::invalid(
                "init",
                format!(
                    "initial law has dimension {}, expected {d}",
                    self.spatial.dimension()
                ),
            ));
        }
        match &self.spatial {
            SpatialInit::Gaussian { sigma, .. } if !(*sigma >= 0.0) => {
                return Err(CboError::invalid("init.sigma", "must be nonnegative"))
            }
            SpatialInit::UniformBall { radius, .. } if !(*radius > 0.0) => {
                return Err(CboError::invalid("init.radius", "must be positive"))
            }
            _ => {}
        }
        match self.lambda {
            LambdaInit::Constant { value } if !(0.0..=1.0).contains(&value) => {
                Err(CboError::invalid("init.lambda", "must lie in [0, 1]"))
            }
            LambdaInit::Uniform { min, max } if !(0.0 <= min && min <= max && max <= 1.0) => Err(
                CboError::invalid("init.lambda_min/lambda_max", "need 0 ≤ min ≤ max ≤ 1"),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub d: usize,
    pub n_particles: usize,
    pub consensus: ConsensusParams,
    pub drift: DriftParams,
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    pub kernel: KernelSpec,
    pub mode: Mode,
    pub truncation_radius: Option<f64>,
    pub init: InitLaw,
    /// Drive every agent with one common Brownian motion instead of
    /// independent ones.
    pub shared_noise: bool,
}

impl SimConfig {
    /// Defaults: quadratic objective, identity observable, logistic kernel
    /// `a = b = 1`, standard Gaussian start with `λ₀ = 0.5`.
    pub fn builder(d: usize, n_particles: usize) -> SimConfigBuilder {
        SimConfigBuilder::new(d, n_particles)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(CboError::invalid("sim.d", "must be positive"));
        }
        if self.n_particles == 0 {
            return Err(CboError::invalid("sim.N", "must be at least 1"));
        }
        if self.consensus.objective.dimension != self.d {
            return Err(CboError::invalid(
                "objective.dimension",
                format!(
                    "objective is {}-dimensional, sim.d = {}",
                    self.consensus.objective.dimension, self.d
                ),
            ));
        }
        self.consensus.objective.validate()?;
        self.consensus.observable.validate()?;
        if !(self.consensus.n >= 0.0) {
            return Err(CboError::invalid("sim.n", "must be nonnegative"));
        }
        self.drift.validate()?;
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(CboError::invalid("sim.dt", "must be positive"));
        }
        if self.dt > self.kernel.theta * (1.0 + 1e-12) {
            return Err(CboError::invalid(
                "sim.dt",
                format!(
                    "must not exceed the kernel step bound theta = {}",
                    self.kernel.theta
                ),
            ));
        }
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return Err(CboError::invalid(
                "sim.t_end",
                "must be finite and nonnegative",
            ));
        }
        let steps = (self.t_end / self.dt).round();
        if (steps * self.dt - self.t_end).abs() > 1e-9 * self.t_end.max(1.0) {
            return Err(CboError::invalid(
                "sim.t_end",
                "must be an integer multiple of sim.dt",
            ));
        }
        if let Some(r) = self.truncation_radius {
            if !(r > 0.0) {
                return Err(CboError::invalid(
                    "sim.truncation_radius",
                    "must be positive",
                ));
            }
        }
        self.init.validate(self.d)
    }

    pub fn step_count(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    /// Rejects configurations outside the hypotheses of the concentration
    /// results: `ς² d < 2`, `E(Λ₀) > 0`, and a positive-rate kernel.
    pub fn require_concentration_hypotheses(&self) -> Result<()> {
        self.drift.require_concentration_regime(self.d)?;
        if !(self.init.lambda.mean() > 0.0) {
            return Err(CboError::Hypothesis(
                "initial information rate must have positive mean".into(),
            ));
        }
        if !self.kernel.satisfies_positivity() {
            return Err(CboError::Hypothesis(
                "kernel must satisfy T(x, 0) > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn with_mode(&self, mode: Mode) -> Self {
        SimConfig {
            mode,
            ..self.clone()
        }
    }
}

pub struct SimConfigBuilder {
    config: SimConfig,
}

impl SimConfigBuilder {
    fn new(d: usize, n_particles: usize) -> Self {
        SimConfigBuilder {
            config: SimConfig {
                d,
                n_particles,
                consensus: ConsensusParams {
                    n: 1.0,
                    objective: ObjectiveSpec::quadratic(d),
                    observable: ObservableMap::Identity,
                },
                drift: DriftParams::default(),
                dt: 0.01,
                t_end: 1.0,
                seed: 0,
                kernel: KernelSpec::logistic(1.0, 1.0).expect("valid default kernel"),
                mode: Mode::Full,
                truncation_radius: None,
                init: InitLaw::gaussian(vec![0.0; d], 1.0, LambdaInit::Constant { value: 0.5 }),
                shared_noise: false,
            },
        }
    }

    pub fn sharpness(mut self, n: f64) -> Self {
        self.config.consensus.n = n;
        self
    }
    pub fn objective(mut self, objective: ObjectiveSpec) -> Self {
        self.config.consensus.objective = objective;
        self
    }
    pub fn observable(mut self, observable: ObservableMap) -> Self {
        self.config.consensus.observable = observable;
        self
    }
    pub fn drift_gain(mut self, gain: f64) -> Self {
        self.config.drift.drift_gain = gain;
        self
    }
    pub fn noise_strength(mut self, sigma: f64) -> Self {
        self.config.drift.noise_strength = sigma;
        self
    }
    /// Sets `ς` from the noise load `ς² d`.
    pub fn noise_load(mut self, load: f64) -> Self {
        self.config.drift.noise_strength = (load / self.config.d as f64).sqrt();
        self
    }
    pub fn dt(mut self, dt: f64) -> Self {
        self.config.dt = dt;
        self
    }
    pub fn t_end(mut self, t_end: f64) -> Self {
        self.config.t_end = t_end;
        self
    }
    pub fn seed(mut self, seed: u64) -> Self {
        self.config.seed = seed;
        self
    }
    pub fn kernel(mut self, kernel: KernelSpec) -> Self {
        self.config.kernel = kernel;
        self
    }
    pub fn mode(mut self, mode: Mode) -> Self {
        self.config.mode = mode;
        self
    }
    pub fn truncation_radius(mut self, radius: f64) -> Self {
        self.config.truncation_radius = Some(radius);
        self
    }
    pub fn init(mut self, init: InitLaw) -> Self {
        self.config.init = init;
        self
    }
    pub fn shared_noise(mut self, shared: bool) -> Self {
        self.config.shared_noise = shared;
        self
    }
    pub fn build(self) -> Result<SimConfig> {
        self.config.validate()?;
        Ok(self.config)
    }
}

impl StepContext {
    pub fn compute(ensemble: &Ensemble, config: &SimConfig) -> Result<Self> {
        let d = ensemble.dimension();
        check_dim(config.d, d)?;
        let mut e_val = vec![0.0; d];
        gibbs::mean_into(ensemble.spatial(), &mut e_val)?;
        let f_val = match config.mode {
            Mode::Full => {
                let mut f = vec![0.0; d];
                gibbs::consensus_into(&config.consensus, ensemble.spatial(), &mut f)?;
                Some(f)
            }
            Mode::Auxiliary => None,
        };
        let cutoff = match config.truncation_radius {
            Some(r) => gibbs::cutoff_eta(r, gibbs::first_moment(ensemble.spatial())),
            None => 1.0,
        };
        Ok(StepContext {
            f_val,
            e_val,
            cutoff,
            summary: ensemble.summary(),
        })
    }

    /// Velocity field `v(x, λ)` for this step, written into `out`.
    #[inline]
    pub fn velocity_into(&self, x: &[f64], lambda: f64, out: &mut [f64]) {
        let c = self.cutoff;
        match &self.f_val {
            Some(f) => {
                for i in 0..x.len() {
                    out[i] = -x[i] + lambda * (c * f[i]) + (1.0 - lambda) * (c * self.e_val[i]);
                }
            }
            None => {
                for i in 0..x.len() {
                    out[i] = -x[i] + (1.0 - lambda) * (c * self.e_val[i]);
                }
            }
        }
    }

    pub fn velocity(&self, x: &[f64], lambda: f64) -> Vec<f64> {
        let mut v = vec![0.0; x.len()];
        self.velocity_into(x, lambda, &mut v);
        v
    }
}

/// Standard Gaussian increments for one step: `N·d` values, or `d` values
/// reused by every agent when the noise is shared.
pub fn draw_noise(config: &SimConfig, rng: &mut SimRng, buf: &mut Vec<f64>) {
    let len = if config.shared_noise {
        config.d
    } else {
        config.d * config.n_particles
    };
    buf.clear();
    buf.extend((0..len).map(|_| rng.sample::<f64, _>(StandardNormal)));
}

fn update_agent(agent: &mut Agent, ctx: &StepContext, config: &SimConfig, xi: &[f64]) -> bool {
    let dt = config.dt;
    let gain = config.drift.drift_gain;
    let diffusion = config.drift.noise_strength * dt.sqrt();
    let d = agent.x.len();
    let mut v = [0.0f64; 8];
    let mut v_heap;
    let v: &mut [f64] = if d <= 8 {
        &mut v[..d]
    } else {
        v_heap = vec![0.0; d];
        &mut v_heap
    };
    ctx.velocity_into(&agent.x, agent.lambda, v);
    let rate = config.kernel.rate(&ctx.summary, &agent.x, agent.lambda);
    let speed = norm(v);
    for k in 0..d {
        agent.x[k] += gain * v[k] * dt + diffusion * speed * xi[k];
    }
    let next = agent.lambda + dt * rate;
    let clamped = next.clamp(0.0, 1.0);
    agent.lambda = clamped;
    (next - clamped).abs() > CLAMP_TOLERANCE
}

/// Advances `ensemble` by one step in place using precomputed context and
/// noise. Returns the number of clamp events.
pub fn advance(
    ensemble: &mut Ensemble,
    config: &SimConfig,
    ctx: &StepContext,
    noise: &[f64],
    step: usize,
) -> Result<u64> {
    let d = config.d;
    let shared = config.shared_noise;
    let slice_for = |i: usize| -> &[f64] {
        if shared {
            &noise[..d]
        } else {
            &noise[i * d..(i + 1) * d]
        }
    };
    let clamps: u64 = if ensemble.len() >= PARALLEL_THRESHOLD {
        ensemble
            .agents
            .par_iter_mut()
            .enumerate()
            .map(|(i, a)| update_agent(a, ctx, config, slice_for(i)) as u64)
            .sum()
    } else {
        ensemble
            .agents
            .iter_mut()
            .enumerate()
            .map(|(i, a)| update_agent(a, ctx, config, slice_for(i)) as u64)
            .sum()
    };
    if ensemble
        .agents
        .iter()
        .any(|a| !a.lambda.is_finite() || a.x.iter().any(|v| !v.is_finite()))
    {
        return Err(CboError::NonFinite { step });
    }
    ensemble.time = (step + 1) as f64 * config.dt;
    Ok(clamps)
}

/// One explicit Euler–Maruyama step.
pub fn em_step(ensemble: &Ensemble, config: &SimConfig, rng: &mut SimRng) -> Result<Ensemble> {
    check_dim(config.d, ensemble.dimension())?;
    if ensemble.len() != config.n_particles && !config.shared_noise {
        return Err(CboError::ConfigMismatch(format!(
            "ensemble has {} agents, config expects {}",
            ensemble.len(),
            config.n_particles
        )));
    }
    if config.dt > config.kernel.theta * (1.0 + 1e-12) {
        return Err(CboError::invalid("sim.dt", "exceeds kernel step bound"));
    }
    let ctx = StepContext::compute(ensemble, config)?;
    let mut noise = Vec::new();
    draw_noise(config, rng, &mut noise);
    let mut next = ensemble.clone();
    let step = (ensemble.time / config.dt).round() as usize;
    advance(&mut next, config, &ctx, &noise, step)?;
    Ok(next)
}

/// Hook called at every recorded step.
pub trait Observer {
    fn observe(&mut self, step: usize, ensemble: &Ensemble, ctx: &StepContext);
}

impl<F: FnMut(usize, &Ensemble, &StepContext)> Observer for F {
    fn observe(&mut self, step: usize, ensemble: &Ensemble, ctx: &StepContext) {
        self(step, ensemble, ctx)
    }
}

fn validate_options(options: &RecordOptions, steps: usize) -> Result<()> {
    if options.stride == 0 || (steps > 0 && !steps.is_multiple_of(options.stride)) {
        return Err(CboError::invalid(
            "observers.stride",
            format!("must be positive and divide the step count {steps}"),
        ));
    }
    if let Some(s) = options.snapshot_stride {
        if s == 0 || (steps > 0 && !steps.is_multiple_of(s)) {
            return Err(CboError::invalid(
                "observers.snapshot_stride",
                format!("must be positive and divide the step count {steps}"),
            ));
        }
    }
    if options.radii.iter().any(|r| !(*r > 0.0)) || options.radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CboError::invalid(
            "observers.radii",
            "must be positive and strictly increasing",
        ));
    }
    Ok(())
}

fn record_row(
    record: &mut TrajectoryRecord,
    step: usize,
    ensemble: &Ensemble,
    ctx: &StepContext,
    config: &SimConfig,
) -> Result<()> {
    record.steps.push(step);
    record.times.push(step as f64 * config.dt);
    record.m2_sq.push(ensemble.m2_sq());
    record.mean_x.push(ctx.e_val.clone());
    record.mean_lambda.push(ensemble.mean_lambda());
    let (lo, hi) = ensemble
        .agents
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), a| {
            (lo.min(a.lambda), hi.max(a.lambda))
        });
    record.min_lambda.push(lo);
    record.max_lambda.push(hi);
    let inv = 1.0 / ensemble.len() as f64;
    for series in record.mass_ball.iter_mut() {
        let inside = ensemble
            .agents
            .iter()
            .filter(|a| norm(&a.x) < series.radius)
            .count();
        series.mass.push(inside as f64 * inv);
    }
    let consensus = match &ctx.f_val {
        Some(f) => f.clone(),
        None => {
            let mut f = vec![0.0; config.d];
            gibbs::consensus_into(&config.consensus, ensemble.spatial(), &mut f)?;
            f
        }
    };
    record.consensus_point.push(consensus);
    Ok(())
}

struct Run<'a> {
    config: &'a SimConfig,
    options: &'a RecordOptions,
    ensemble: Ensemble,
    record: TrajectoryRecord,
}

impl<'a> Run<'a> {
    fn start(config: &'a SimConfig, options: &'a RecordOptions, ensemble: Ensemble) -> Self {
        Run {
            config,
            options,
            ensemble,
            record: TrajectoryRecord::new(config.mode, config.dt, &options.radii),
        }
    }

    /// Computes the step context and records/observes as configured.
    fn visit(&mut self, step: usize, observers: &mut [&mut dyn Observer]) -> Result<StepContext> {
        let ctx = StepContext::compute(&self.ensemble, self.config)?;
        if step.is_multiple_of(self.options.stride) {
            record_row(&mut self.record, step, &self.ensemble, &ctx, self.config)?;
            for obs in observers.iter_mut() {
                obs.observe(step, &self.ensemble, &ctx);
            }
        }
        if let Some(s) = self.options.snapshot_stride {
            if step.is_multiple_of(s) {
                self.record.snapshots.push(Snapshot {
                    step,
                    ensemble: self.ensemble.clone(),
                    context: ctx.clone(),
                });
            }
        }
        Ok(ctx)
    }
}

/// Integrates from `t = 0` to `t_end`. The result depends only on the
/// configuration (including its seed).
pub fn simulate(
    config: &SimConfig,
    options: &RecordOptions,
    observers: &mut [&mut dyn Observer],
) -> Result<TrajectoryRecord> {
    config.validate()?;
    let steps = config.step_count();
    validate_options(options, steps)?;
    simulate_from(config, options, initial_ensemble(config), observers)
}

/// The initial ensemble [`simulate`] starts from.
pub fn initial_ensemble(config: &SimConfig) -> Ensemble {
    config.init.sample(
        config.n_particles,
        &mut rng::stream(config.seed, INIT_STREAM),
    )
}

/// Like [`simulate`] but from a given initial ensemble.
pub fn simulate_from(
    config: &SimConfig,
    options: &RecordOptions,
    initial: Ensemble,
    observers: &mut [&mut dyn Observer],
) -> Result<TrajectoryRecord> {
    config.validate()?;
    let steps = config.step_count();
    validate_options(options, steps)?;
    check_dim(config.d, initial.dimension())?;
    let mut noise_rng = rng::stream(config.seed, NOISE_STREAM);
    let mut noise = Vec::new();
    let mut run = Run::start(config, options, initial);
    for step in 0..steps {
        let ctx = run.visit(step, observers)?;
        draw_noise(config, &mut noise_rng, &mut noise);
        run.record.clamp_events += advance(&mut run.ensemble, config, &ctx, &noise, step)?;
    }
    run.visit(steps, observers)?;
    Ok(run.record)
}

#[derive(Clone, Debug, Serialize)]
pub struct CoupledRecord {
    pub full: TrajectoryRecord,
    pub auxiliary: TrajectoryRecord,
    /// Ensemble average of `‖X^full_i − X^aux_i‖²` at each recorded time.
    pub gap: Vec<f64>,
}

fn same_except_mode(a: &SimConfig, b: &SimConfig) -> std::result::Result<(), String> {
    let checks: [(&str, bool); 12] = [
        ("d", a.d == b.d),
        ("N", a.n_particles == b.n_particles),
        ("n", a.consensus.n == b.consensus.n),
        (
            "objective",
            a.consensus.objective.name() == b.consensus.objective.name()
                && a.consensus.objective.dimension == b.consensus.objective.dimension,
        ),
        (
            "observable",
            a.consensus.observable == b.consensus.observable,
        ),
        ("drift", a.drift == b.drift),
        ("dt", a.dt == b.dt),
        ("t_end", a.t_end == b.t_end),
        ("seed", a.seed == b.seed),
        (
            "kernel",
            a.kernel.variant.name() == b.kernel.variant.name()
                && a.kernel.a.to_bits() == b.kernel.a.to_bits()
                && a.kernel.b.to_bits() == b.kernel.b.to_bits()
                && a.kernel.theta == b.kernel.theta,
        ),
        (
            "init",
            a.init == b.init && a.truncation_radius == b.truncation_radius,
        ),
        ("shared_noise", a.shared_noise == b.shared_noise),
    ];
    match checks.iter().find(|(_, ok)| !ok) {
        Some((field, _)) => Err(format!("coupled configs differ in `{field}`")),
        None => Ok(()),
    }
}

/// Runs the full and auxiliary systems from the same initial agents with
/// the same Brownian increments (synchronous coupling).
pub fn simulate_pair_coupled(
    config_full: &SimConfig,
    config_aux: &SimConfig,
    options: &RecordOptions,
) -> Result<CoupledRecord> {
    if config_full.mode != Mode::Full || config_aux.mode != Mode::Auxiliary {
        return Err(CboError::ConfigMismatch(
            "expected one full-mode and one auxiliary-mode config".into(),
        ));
    }
    same_except_mode(config_full, config_aux).map_err(CboError::ConfigMismatch)?;
    config_full.validate()?;
    let steps = config_full.step_count();
    validate_options(options, steps)?;

    let initial = config_full.init.sample(
        config_full.n_particles,
        &mut rng::stream(config_full.seed, INIT_STREAM),
    );
    let mut noise_rng = rng::stream(config_full.seed, NOISE_STREAM);
    let mut noise = Vec::new();
    let mut full = Run::start(config_full, options, initial.clone());
    let mut aux = Run::start(config_aux, options, initial);
    let mut gap = Vec::new();
    let gap_of = |a: &Ensemble, b: &Ensemble| -> f64 {
        a.agents
            .iter()
            .zip(&b.agents)
            .map(|(p, q)| {
                p.x.iter()
                    .zip(&q.x)
                    .map(|(u, v)| (u - v) * (u - v))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / a.len() as f64
    };
    for step in 0..steps {
        let ctx_full = full.visit(step, &mut [])?;
        let ctx_aux = aux.visit(step, &mut [])?;
        if step % options.stride == 0 {
            gap.push(gap_of(&full.ensemble, &aux.ensemble));
        }
        draw_noise(config_full, &mut noise_rng, &mut noise);
        full.record.clamp_events +=
            advance(&mut full.ensemble, config_full, &ctx_full, &noise, step)?;
        aux.record.clamp_events += advance(&mut aux.ensemble, config_aux, &ctx_aux, &noise, step)?;
    }
    full.visit(steps, &mut [])?;
    aux.visit(steps, &mut [])?;
    gap.push(gap_of(&full.ensemble, &aux.ensemble));
    Ok(CoupledRecord {
        full: full.record,
        auxiliary: aux.record,
        gap,
    })
}
