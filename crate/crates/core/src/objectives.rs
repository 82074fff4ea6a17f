//! Objective functions with declared growth constants, and the observable
//! map entering the Gibbs-weighted consensus.
//!
//! Every objective is normalized so that its global minimizer sits at the
//! origin with value zero. The declared constants describe the two-sided
//! growth bound
//!
//! ```text
//! c2 ‖x‖^ν ≤ E(x) ≤ c3 (1 + ‖x‖^ν)
//! ```
//!
//! which the concentration results rely on. [`verify_growth`] audits the
//! declaration on random samples.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{check_dim, CboError, Result};
use crate::linalg::norm;
use crate::rng;

pub type ObjectiveFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum ObjectiveKind {
    /// `‖x‖²`
    Quadratic,
    /// `Σ x_i² + 10 (1 − cos 2π x_i)`
    RastriginLike,
    /// Radial profile `E(x) = p(‖x‖)`, piecewise linear through the nodes and
    /// extended linearly past the last node.
    Table { radii: Vec<f64>, values: Vec<f64> },
    /// Arbitrary user closure.
    Custom { label: String, func: ObjectiveFn },
}

impl fmt::Debug for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObjectiveKind::Quadratic => f.write_str("Quadratic"),
            ObjectiveKind::RastriginLike => f.write_str("RastriginLike"),
            ObjectiveKind::Table { radii, values } => f
                .debug_struct("Table")
                .field("radii", radii)
                .field("values", values)
                .finish(),
            ObjectiveKind::Custom { label, .. } => write!(f, "Custom({label})"),
        }
    }
}

impl ObjectiveKind {
    pub fn name(&self) -> &str {
        match self {
            ObjectiveKind::Quadratic => "quadratic",
            ObjectiveKind::RastriginLike => "rastrigin-like",
            ObjectiveKind::Table { .. } => "table",
            ObjectiveKind::Custom { label, .. } => label,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    pub dimension: usize,
    pub c2: f64,
    pub c3: f64,
    pub growth_exponent: f64,
    /// Exponent of the gradient growth bound. Metadata only; no algorithm
    /// here evaluates gradients.
    pub gamma: Option<f64>,
}

impl ObjectiveSpec {
    pub fn quadratic(dimension: usize) -> Self {
        ObjectiveSpec {
            kind: ObjectiveKind::Quadratic,
            dimension,
            c2: 1.0,
            c3: 1.0,
            growth_exponent: 2.0,
            gamma: Some(1.0),
        }
    }

    pub fn rastrigin_like(dimension: usize) -> Self {
        ObjectiveSpec {
            kind: ObjectiveKind::RastriginLike,
            dimension,
            c2: 1.0,
            c3: 1.0 + 20.0 * dimension as f64,
            growth_exponent: 2.0,
            gamma: None,
        }
    }

    /// Radial table objective. `radii` must start at 0 with value 0 and be
    /// strictly increasing; values must be nonnegative.
    pub fn table(
        dimension: usize,
        radii: Vec<f64>,
        values: Vec<f64>,
        c2: f64,
        c3: f64,
        growth_exponent: f64,
    ) -> Result<Self> {
        if radii.len() < 2 || radii.len() != values.len() {
            return Err(CboError::invalid(
                "objective.table_radii",
                "needs at least two nodes and one value per node",
            ));
        }
        if radii[0] != 0.0 || values[0] != 0.0 {
            return Err(CboError::invalid(
                "objective.table_values",
                "profile must start at radius 0 with value 0",
            ));
        }
        if radii.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CboError::invalid(
                "objective.table_radii",
                "radii must be strictly increasing",
            ));
        }
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(CboError::invalid(
                "objective.table_values",
                "values must be finite and nonnegative",
            ));
        }
        let spec = ObjectiveSpec {
            kind: ObjectiveKind::Table { radii, values },
            dimension,
            c2,
            c3,
            growth_exponent,
            gamma: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn custom(
        label: impl Into<String>,
        dimension: usize,
        func: ObjectiveFn,
        c2: f64,
        c3: f64,
        growth_exponent: f64,
    ) -> Result<Self> {
        let spec = ObjectiveSpec {
            kind: ObjectiveKind::Custom {
                label: label.into(),
                func,
            },
            dimension,
            c2,
            c3,
            growth_exponent,
            gamma: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension == 0 {
            return Err(CboError::invalid("objective.dimension", "must be positive"));
        }
        if !(self.c2 > 0.0) {
            return Err(CboError::invalid("objective.c2", "must be positive"));
        }
        if !(self.c3 > 0.0) {
            return Err(CboError::invalid("objective.c3", "must be positive"));
        }
        // zero exponent is admissible for custom objectives
        if !(self.growth_exponent >= 0.0) || !self.growth_exponent.is_finite() {
            return Err(CboError::invalid(
                "objective.growth_exponent",
                "must be finite and nonnegative",
            ));
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        self.kind.name()
    }

    /// Evaluates the objective without the dimension check.
    #[inline]
    pub fn value(&self, x: &[f64]) -> f64 {
        match &self.kind {
            ObjectiveKind::Quadratic => x.iter().map(|t| t * t).sum(),
            ObjectiveKind::RastriginLike => x
                .iter()
                .map(|t| t * t + 10.0 * (1.0 - (2.0 * std::f64::consts::PI * t).cos()))
                .sum(),
            ObjectiveKind::Table { radii, values } => radial_profile(radii, values, norm(x)),
            ObjectiveKind::Custom { func, .. } => func(x),
        }
    }
}

fn radial_profile(radii: &[f64], values: &[f64], r: f64) -> f64 {
    let last = radii.len() - 1;
    let seg = match radii.iter().position(|&node| node > r) {
        Some(0) => 0,
        Some(i) => i - 1,
        None => last - 1,
    };
    let (r0, r1) = (radii[seg], radii[seg + 1]);
    let (v0, v1) = (values[seg], values[seg + 1]);
    (v0 + (v1 - v0) * (r - r0) / (r1 - r0)).max(0.0)
}

pub fn eval_objective(spec: &ObjectiveSpec, x: &[f64]) -> Result<f64> {
    check_dim(spec.dimension, x.len())?;
    Ok(spec.value(x))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum GrowthBound {
    Lower,
    Upper,
}

#[derive(Clone, Debug, Serialize)]
pub struct GrowthViolation {
    pub point: Vec<f64>,
    pub value: f64,
    pub bound: GrowthBound,
    pub bound_value: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct GrowthReport {
    pub samples: usize,
    pub violations: Vec<GrowthViolation>,
}

impl GrowthReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Samples `sample_count` points uniformly in the ball of `radius` and
/// reports every point breaking either growth bound.
pub fn verify_growth(
    spec: &ObjectiveSpec,
    sample_count: usize,
    radius: f64,
    rng_seed: u64,
) -> Result<GrowthReport> {
    if sample_count == 0 {
        return Err(CboError::invalid("sample_count", "must be at least 1"));
    }
    if !(radius > 0.0) {
        return Err(CboError::invalid("radius", "must be positive"));
    }
    let mut rng = rng::stream(rng_seed, 0);
    let d = spec.dimension;
    let nu = spec.growth_exponent;
    let mut report = GrowthReport {
        samples: sample_count,
        violations: Vec::new(),
    };
    let mut x = vec![0.0; d];
    for _ in 0..sample_count {
        sample_uniform_ball(&mut rng, radius, &mut x);
        let value = spec.value(&x);
        let r_nu = norm(&x).powf(nu);
        let lower = spec.c2 * r_nu;
        let upper = spec.c3 * (1.0 + r_nu);
        // rounding slack: ‖x‖^ν and Σx_i² can differ in the last bits
        let slack = 1e-12 * value.abs().max(1e-300);
        if !(value >= 0.0) || lower > value + slack {
            report.violations.push(GrowthViolation {
                point: x.clone(),
                value,
                bound: GrowthBound::Lower,
                bound_value: lower,
            });
        } else if value > upper + slack {
            report.violations.push(GrowthViolation {
                point: x.clone(),
                value,
                bound: GrowthBound::Upper,
                bound_value: upper,
            });
        }
    }
    Ok(report)
}

pub(crate) fn sample_uniform_ball<R: Rng + ?Sized>(rng: &mut R, radius: f64, out: &mut [f64]) {
    loop {
        for v in out.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let len = norm(out);
        if len > 0.0 {
            let u: f64 = rng.random();
            let r = radius * u.powf(1.0 / out.len() as f64);
            for v in out.iter_mut() {
                *v *= r / len;
            }
            return;
        }
    }
}

/// The observable `g` weighted inside the consensus point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum ObservableMap {
    Identity,
    /// `x ↦ M_g · x / (1 + ‖x‖)`
    Saturated {
        m_g: f64,
    },
}

impl ObservableMap {
    /// Linear-growth constant: `‖g(x)‖ ≤ M_g (1 + ‖x‖)`.
    pub fn growth_constant(&self) -> f64 {
        match self {
            ObservableMap::Identity => 1.0,
            ObservableMap::Saturated { m_g } => *m_g,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let ObservableMap::Saturated { m_g } = self {
            if !(*m_g > 0.0) {
                return Err(CboError::invalid("observable.m_g", "must be positive"));
            }
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            ObservableMap::Identity => out.copy_from_slice(x),
            ObservableMap::Saturated { m_g } => {
                let scale = m_g / (1.0 + norm(x));
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = scale * xi;
                }
            }
        }
    }
}

pub fn eval_observable(map: &ObservableMap, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    map.apply_into(x, &mut out);
    out
}
