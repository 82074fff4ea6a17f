//! Flat, strictly parsed experiment documents.
//!
//! Keys are dotted (`sim.d = 2`, `kernel.a = 1.0`); any key not listed here
//! is rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CboError, Result};
use crate::gibbs::{ConsensusParams, DriftParams};
use crate::infokernel::{KernelSpec, KernelVariant};
use crate::objectives::{ObjectiveSpec, ObservableMap};
use crate::record::RecordOptions;
use crate::sde::{InitLaw, LambdaInit, Mode, SimConfig, SpatialInit};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub output_dir: Option<String>,
    #[serde(default = "one")]
    pub replicas: usize,
    pub workers: Option<usize>,
    #[serde(default)]
    pub checks: Vec<String>,
    pub sim: RawSim,
    #[serde(default)]
    pub objective: RawObjective,
    #[serde(default)]
    pub observable: RawObservable,
    #[serde(default)]
    pub kernel: RawKernel,
    pub init: RawInit,
    #[serde(default)]
    pub observers: RawObservers,
    #[serde(default)]
    pub check: RawCheckParams,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSim {
    pub d: usize,
    #[serde(rename = "N")]
    pub n_particles: usize,
    #[serde(default = "unit")]
    pub n: f64,
    #[serde(default = "unit")]
    pub drift_gain: f64,
    #[serde(default)]
    pub noise_strength: f64,
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    #[serde(default = "full")]
    pub mode: String,
    pub truncation_radius: Option<f64>,
    #[serde(default)]
    pub shared_noise: bool,
}

fn unit() -> f64 {
    1.0
}

fn full() -> String {
    "full".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawObjective {
    pub kind: String,
    pub table_radii: Option<Vec<f64>>,
    pub table_values: Option<Vec<f64>>,
    pub c2: Option<f64>,
    pub c3: Option<f64>,
    pub growth_exponent: Option<f64>,
}

impl Default for RawObjective {
    fn default() -> Self {
        RawObjective {
            kind: "quadratic".into(),
            table_radii: None,
            table_values: None,
            c2: None,
            c3: None,
            growth_exponent: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawObservable {
    pub kind: String,
    pub m_g: Option<f64>,
}

impl Default for RawObservable {
    fn default() -> Self {
        RawObservable {
            kind: "identity".into(),
            m_g: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawKernel {
    pub kind: String,
    #[serde(default = "unit")]
    pub a: f64,
    #[serde(default = "unit")]
    pub b: f64,
    pub theta: Option<f64>,
}

impl Default for RawKernel {
    fn default() -> Self {
        RawKernel {
            kind: "logistic".into(),
            a: 1.0,
            b: 1.0,
            theta: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawInit {
    pub law: String,
    pub mean: Option<Vec<f64>>,
    pub sigma: Option<f64>,
    pub center: Option<Vec<f64>>,
    pub radius: Option<f64>,
    pub at: Option<Vec<f64>>,
    pub lambda: Option<f64>,
    pub lambda_min: Option<f64>,
    pub lambda_max: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawObservers {
    #[serde(default = "one")]
    pub stride: usize,
    pub statistics: Option<Vec<String>>,
    #[serde(default)]
    pub radii: Vec<f64>,
}

impl Default for RawObservers {
    fn default() -> Self {
        RawObservers {
            stride: 1,
            statistics: None,
            radii: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawCheckParams {
    pub mean_decay_tolerance: Option<f64>,
}

/// Per-row statistics that can be written to the CSV.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    M2Sq,
    MeanX,
    MeanLambda,
    MinLambda,
    MaxLambda,
    MassBall,
    Consensus,
}

impl Statistic {
    pub const ALL: [Statistic; 7] = [
        Statistic::M2Sq,
        Statistic::MeanX,
        Statistic::MeanLambda,
        Statistic::MinLambda,
        Statistic::MaxLambda,
        Statistic::MassBall,
        Statistic::Consensus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Statistic::M2Sq => "m2_sq",
            Statistic::MeanX => "mean_x",
            Statistic::MeanLambda => "mean_lambda",
            Statistic::MinLambda => "min_lambda",
            Statistic::MaxLambda => "max_lambda",
            Statistic::MassBall => "mass_ball",
            Statistic::Consensus => "consensus",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        Statistic::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                CboError::invalid("observers.statistics", format!("unknown statistic `{s}`"))
            })
    }
}

/// Diagnostic checks a run can evaluate on each replica.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckKind {
    MeanDecay,
    SecondMoment,
    Gronwall,
    LambdaPersistence,
    MassFloor,
    ClampFree,
}

impl CheckKind {
    pub const ALL: [CheckKind; 6] = [
        CheckKind::MeanDecay,
        CheckKind::SecondMoment,
        CheckKind::Gronwall,
        CheckKind::LambdaPersistence,
        CheckKind::MassFloor,
        CheckKind::ClampFree,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckKind::MeanDecay => "mean-decay",
            CheckKind::SecondMoment => "second-moment",
            CheckKind::Gronwall => "gronwall",
            CheckKind::LambdaPersistence => "lambda-persistence",
            CheckKind::MassFloor => "mass-floor",
            CheckKind::ClampFree => "clamp-free",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        CheckKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| CboError::invalid("checks", format!("unknown check `{s}`")))
    }
}

/// A validated experiment.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub raw: RawConfig,
    pub sim: SimConfig,
    pub observers: RecordOptions,
    pub statistics: Vec<Statistic>,
    pub checks: Vec<CheckKind>,
    pub mean_decay_tolerance: f64,
}

fn need<T>(value: Option<T>, field: &str) -> Result<T> {
    value.ok_or_else(|| CboError::invalid(field, "is required"))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| CboError::Parse(e.to_string()))?;
        Self::from_raw(raw)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CboError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.raw).expect("raw config is serializable")
    }

    pub fn from_raw(raw: RawConfig) -> Result<Self> {
        if raw.replicas == 0 {
            return Err(CboError::invalid("replicas", "must be at least 1"));
        }
        if raw.workers == Some(0) {
            return Err(CboError::invalid("workers", "must be at least 1"));
        }
        let s = &raw.sim;
        let d = s.d;
        let objective = build_objective(&raw.objective, d)?;
        let observable = match raw.observable.kind.as_str() {
            "identity" => ObservableMap::Identity,
            "saturated" => ObservableMap::Saturated {
                m_g: need(raw.observable.m_g, "observable.m_g")?,
            },
            other => {
                return Err(CboError::invalid(
                    "observable.kind",
                    format!("unknown observable `{other}` (identity | saturated)"),
                ))
            }
        };
        let variant = match raw.kernel.kind.as_str() {
            "logistic" => KernelVariant::Logistic,
            "crowd-coupled" => KernelVariant::CrowdCoupled,
            "frozen" => KernelVariant::Frozen,
            other => {
                return Err(CboError::invalid(
                    "kernel.kind",
                    format!("unknown kernel `{other}` (logistic | crowd-coupled | frozen)"),
                ))
            }
        };
        let kernel = KernelSpec::new(variant, raw.kernel.a, raw.kernel.b, raw.kernel.theta)?;
        let mode = match s.mode.as_str() {
            "full" => Mode::Full,
            "auxiliary" => Mode::Auxiliary,
            other => {
                return Err(CboError::invalid(
                    "sim.mode",
                    format!("unknown mode `{other}` (full | auxiliary)"),
                ))
            }
        };
        let init = build_init(&raw.init)?;
        let sim = SimConfig {
            d,
            n_particles: s.n_particles,
            consensus: ConsensusParams::new(s.n, objective, observable)?,
            drift: DriftParams {
                drift_gain: s.drift_gain,
                noise_strength: s.noise_strength,
            },
            dt: s.dt,
            t_end: s.t_end,
            seed: s.seed,
            kernel,
            mode,
            truncation_radius: s.truncation_radius,
            init,
            shared_noise: s.shared_noise,
        };
        sim.validate()?;

        let statistics = match &raw.observers.statistics {
            None => Statistic::ALL.to_vec(),
            Some(list) => {
                let parsed = list
                    .iter()
                    .map(|x| Statistic::parse(x))
                    .collect::<Result<Vec<_>>>()?;
                if parsed
                    .iter()
                    .enumerate()
                    .any(|(i, a)| parsed[..i].contains(a))
                {
                    return Err(CboError::invalid(
                        "observers.statistics",
                        "lists a statistic twice",
                    ));
                }
                parsed
            }
        };
        let checks = raw
            .checks
            .iter()
            .map(|x| CheckKind::parse(x))
            .collect::<Result<Vec<_>>>()?;
        let steps = sim.step_count();
        let mut observers = RecordOptions {
            stride: raw.observers.stride,
            radii: raw.observers.radii.clone(),
            snapshot_stride: None,
        };
        if observers.stride == 0 || (steps > 0 && !steps.is_multiple_of(observers.stride)) {
            return Err(CboError::invalid(
                "observers.stride",
                format!("must be positive and divide the step count {steps}"),
            ));
        }
        if observers.radii.iter().any(|r| !(*r > 0.0))
            || observers.radii.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(CboError::invalid(
                "observers.radii",
                "must be positive and strictly increasing",
            ));
        }
        for check in &checks {
            match check {
                CheckKind::MeanDecay | CheckKind::SecondMoment if mode != Mode::Auxiliary => {
                    return Err(CboError::invalid(
                        "checks",
                        format!("`{}` needs sim.mode = \"auxiliary\"", check.name()),
                    ))
                }
                CheckKind::SecondMoment => sim.drift.require_concentration_regime(d)?,
                CheckKind::LambdaPersistence if !sim.kernel.satisfies_positivity() => {
                    return Err(CboError::invalid(
                        "checks",
                        "`lambda-persistence` needs a kernel with T(x, 0) > 0",
                    ))
                }
                CheckKind::MassFloor => {
                    if observers.radii.is_empty() {
                        return Err(CboError::invalid(
                            "observers.radii",
                            "`mass-floor` needs at least one radius",
                        ));
                    }
                    observers.snapshot_stride = Some(steps.max(1));
                }
                _ => {}
            }
        }
        let mean_decay_tolerance = raw.check.mean_decay_tolerance.unwrap_or(0.05);
        if !(mean_decay_tolerance > 0.0) {
            return Err(CboError::invalid(
                "check.mean_decay_tolerance",
                "must be positive",
            ));
        }
        Ok(ExperimentConfig {
            raw,
            sim,
            observers,
            statistics,
            checks,
            mean_decay_tolerance,
        })
    }
}

fn build_objective(raw: &RawObjective, d: usize) -> Result<ObjectiveSpec> {
    let mut spec = match raw.kind.as_str() {
        "quadratic" => ObjectiveSpec::quadratic(d),
        "rastrigin-like" => ObjectiveSpec::rastrigin_like(d),
        "table" => {
            return ObjectiveSpec::table(
                d,
                need(raw.table_radii.clone(), "objective.table_radii")?,
                need(raw.table_values.clone(), "objective.table_values")?,
                need(raw.c2, "objective.c2")?,
                need(raw.c3, "objective.c3")?,
                need(raw.growth_exponent, "objective.growth_exponent")?,
            )
        }
        other => {
            return Err(CboError::invalid(
                "objective.kind",
                format!("unknown objective `{other}` (quadratic | rastrigin-like | table)"),
            ))
        }
    };
    if raw.table_radii.is_some() || raw.table_values.is_some() {
        return Err(CboError::invalid(
            "objective.table_radii",
            "only valid with kind = \"table\"",
        ));
    }
    if let Some(c2) = raw.c2 {
        spec.c2 = c2;
    }
    if let Some(c3) = raw.c3 {
        spec.c3 = c3;
    }
    if let Some(nu) = raw.growth_exponent {
        spec.growth_exponent = nu;
    }
    spec.validate()?;
    Ok(spec)
}

fn build_init(raw: &RawInit) -> Result<InitLaw> {
    let spatial = match raw.law.as_str() {
        "gaussian" => SpatialInit::Gaussian {
            mean: need(raw.mean.clone(), "init.mean")?,
            sigma: need(raw.sigma, "init.sigma")?,
        },
        "uniform-ball" => SpatialInit::UniformBall {
            center: need(raw.center.clone(), "init.center")?,
            radius: need(raw.radius, "init.radius")?,
        },
        "point-mass" => SpatialInit::PointMass {
            at: need(raw.at.clone(), "init.at")?,
        },
        other => {
            return Err(CboError::invalid(
                "init.law",
                format!("unknown law `{other}` (gaussian | uniform-ball | point-mass)"),
            ))
        }
    };
    let lambda = match (raw.lambda, raw.lambda_min, raw.lambda_max) {
        (Some(value), None, None) => LambdaInit::Constant { value },
        (None, Some(min), Some(max)) => LambdaInit::Uniform { min, max },
        (None, None, None) => LambdaInit::Constant { value: 0.5 },
        _ => {
            return Err(CboError::invalid(
                "init.lambda",
                "give either init.lambda or both init.lambda_min and init.lambda_max",
            ))
        }
    };
    Ok(InitLaw { spatial, lambda })
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
replicas = 2
checks = ["gronwall"]
sim.d = 2
sim.N = 10
sim.dt = 0.1
sim.t_end = 1.0
sim.seed = 3
init.law = "gaussian"
init.mean = [0.0, 0.0]
init.sigma = 1.0
"#;

    #[test]
    fn parses_dotted_document() {
        let cfg = ExperimentConfig::from_toml(BASE).unwrap();
        assert_eq!(cfg.sim.n_particles, 10);
        assert_eq!(cfg.sim.step_count(), 10);
        assert_eq!(cfg.statistics, Statistic::ALL.to_vec());
        assert_eq!(cfg.checks, vec![CheckKind::Gronwall]);
        assert_eq!(cfg.sim.kernel.theta, 0.5);
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig::from_toml(BASE).unwrap();
        let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg.raw, again.raw);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = ExperimentConfig::from_toml(&format!("{BASE}sim.typo = 1\n")).unwrap_err();
        assert!(
            matches!(err, CboError::Parse(ref m) if m.contains("typo")),
            "{err}"
        );
    }

    #[test]
    fn errors_name_the_field() {
        let bad_stride = format!("{BASE}observers.stride = 3\n");
        match ExperimentConfig::from_toml(&bad_stride).unwrap_err() {
            CboError::InvalidParameter { field, .. } => assert_eq!(field, "observers.stride"),
            e => panic!("{e}"),
        }
        let bad_radii = format!("{BASE}observers.radii = [1.0, 0.5]\n");
        match ExperimentConfig::from_toml(&bad_radii).unwrap_err() {
            CboError::InvalidParameter { field, .. } => assert_eq!(field, "observers.radii"),
            e => panic!("{e}"),
        }
        let bad_check = BASE.replace("\"gronwall\"", "\"mean-decay\"");
        assert!(ExperimentConfig::from_toml(&bad_check)
            .unwrap_err()
            .is_config_error());
    }

    #[test]
    fn statistics_keep_declared_order() {
        let text = format!("{BASE}observers.statistics = [\"mean_lambda\", \"m2_sq\"]\n");
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(cfg.statistics, vec![Statistic::MeanLambda, Statistic::M2Sq]);
        let dup = format!("{BASE}observers.statistics = [\"m2_sq\", \"m2_sq\"]\n");
        assert!(ExperimentConfig::from_toml(&dup).is_err());
    }
}
