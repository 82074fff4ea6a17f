//! Information-rate operators `T_Ψ(x, λ)` governing how each agent's rate
//! `λ ∈ [0, 1]` evolves.
//!
//! Every shipped operator honours three contracts:
//!
//! * Lipschitz dependence on `(x, λ, Ψ)`;
//! * `λ + θ T(x, λ) ∈ [0, 1]` for the declared step bound `θ`;
//! * `T(x, 0) > 0`, so information never dies out completely.
//!
//! The operators see the population only through a [`PopulationSummary`],
//! whose statistics are themselves W₁-Lipschitz in the law.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{CboError, Result};
use crate::linalg::{dist, norm_sq};
use crate::rng;

pub type KernelFn = Arc<dyn Fn(&PopulationSummary, &[f64], f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum KernelVariant {
    /// `a (1 − λ) − b λ`
    Logistic,
    /// `(1 − λ) a / (1 + ‖x − e(μ)‖) − b λ`
    CrowdCoupled,
    /// `T ≡ 0`: every rate stays at its initial value. Breaks the positivity
    /// contract, so it is only meant for deterministic reference runs.
    Frozen,
    Custom {
        label: String,
        func: KernelFn,
    },
}

impl fmt::Debug for KernelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl KernelVariant {
    pub fn name(&self) -> &str {
        match self {
            KernelVariant::Logistic => "logistic",
            KernelVariant::CrowdCoupled => "crowd-coupled",
            KernelVariant::Frozen => "frozen",
            KernelVariant::Custom { label, .. } => label,
        }
    }
}

#[derive(Clone, Debug)]
pub struct KernelSpec {
    pub variant: KernelVariant,
    pub a: f64,
    pub b: f64,
    /// Step bound under which an explicit Euler update keeps λ in [0, 1].
    pub theta: f64,
}

impl KernelSpec {
    /// Builds a logistic or crowd-coupled kernel; `theta` defaults to `1/(a+b)`.
    pub fn new(variant: KernelVariant, a: f64, b: f64, theta: Option<f64>) -> Result<Self> {
        if matches!(variant, KernelVariant::Frozen) {
            return Ok(Self::frozen());
        }
        if !(a > 0.0) || !a.is_finite() {
            return Err(CboError::invalid(
                "kernel.a",
                "must be positive (T(x,0) > 0 needs a > 0)",
            ));
        }
        if !(b >= 0.0) || !b.is_finite() {
            return Err(CboError::invalid("kernel.b", "must be nonnegative"));
        }
        let bound = 1.0 / (a + b);
        let theta = theta.unwrap_or(bound);
        if !(theta > 0.0) {
            return Err(CboError::invalid("kernel.theta", "must be positive"));
        }
        if theta * (a + b) > 1.0 + 1e-12 {
            return Err(CboError::invalid(
                "kernel.theta",
                format!("theta·(a+b) must not exceed 1 (theta ≤ {bound})"),
            ));
        }
        Ok(KernelSpec {
            variant,
            a,
            b,
            theta,
        })
    }

    pub fn logistic(a: f64, b: f64) -> Result<Self> {
        Self::new(KernelVariant::Logistic, a, b, None)
    }

    pub fn crowd_coupled(a: f64, b: f64) -> Result<Self> {
        Self::new(KernelVariant::CrowdCoupled, a, b, None)
    }

    pub fn frozen() -> Self {
        KernelSpec {
            variant: KernelVariant::Frozen,
            a: 0.0,
            b: 0.0,
            theta: f64::INFINITY,
        }
    }

    /// User-supplied operator with a declared step bound. Its contracts are
    /// only checked through [`check_kernel_contract`]'s summary surrogate.
    pub fn custom(label: impl Into<String>, func: KernelFn, theta: f64) -> Result<Self> {
        if !(theta > 0.0) {
            return Err(CboError::invalid("kernel.theta", "must be positive"));
        }
        Ok(KernelSpec {
            variant: KernelVariant::Custom {
                label: label.into(),
                func,
            },
            a: f64::NAN,
            b: f64::NAN,
            theta,
        })
    }

    pub fn satisfies_positivity(&self) -> bool {
        !matches!(self.variant, KernelVariant::Frozen)
    }

    #[inline]
    pub(crate) fn rate(&self, summary: &PopulationSummary, x: &[f64], lambda: f64) -> f64 {
        match &self.variant {
            KernelVariant::Logistic => self.a * (1.0 - lambda) - self.b * lambda,
            KernelVariant::CrowdCoupled => {
                (1.0 - lambda) * self.a / (1.0 + dist(x, &summary.mean_x)) - self.b * lambda
            }
            KernelVariant::Frozen => 0.0,
            KernelVariant::Custom { func, .. } => func(summary, x, lambda),
        }
    }

    /// Analytic Lipschitz constant where one is known.
    pub fn lipschitz_bound(&self) -> Option<f64> {
        match self.variant {
            KernelVariant::Logistic | KernelVariant::CrowdCoupled => Some(self.a + self.b),
            KernelVariant::Frozen => Some(0.0),
            KernelVariant::Custom { .. } => None,
        }
    }
}

/// Population statistics the operators depend on.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PopulationSummary {
    pub mean_x: Vec<f64>,
    /// First moment of the joint measure on ℝ^d × [0, 1].
    pub m1: f64,
}

impl PopulationSummary {
    pub fn from_states<'a, I>(states: I, d: usize) -> Result<Self>
    where
        I: Iterator<Item = (&'a [f64], f64)>,
    {
        let mut mean_x = vec![0.0; d];
        let mut m1 = 0.0;
        let mut count = 0usize;
        for (x, lambda) in states {
            crate::error::check_dim(d, x.len())?;
            for (m, xi) in mean_x.iter_mut().zip(x) {
                *m += xi;
            }
            m1 += (norm_sq(x) + lambda * lambda).sqrt();
            count += 1;
        }
        if count == 0 {
            return Err(CboError::EmptyMeasure);
        }
        let inv = 1.0 / count as f64;
        mean_x.iter_mut().for_each(|m| *m *= inv);
        Ok(PopulationSummary {
            mean_x,
            m1: m1 * inv,
        })
    }
}

pub fn eval_kernel(
    kernel: &KernelSpec,
    summary: &PopulationSummary,
    x: &[f64],
    lambda: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(CboError::LambdaOutOfRange(lambda));
    }
    Ok(kernel.rate(summary, x, lambda))
}

/// `θ = 1/(a+b)`: the largest explicit-Euler step keeping λ in [0, 1].
pub fn max_stable_step(kernel: &KernelSpec) -> Result<f64> {
    let s = kernel.a + kernel.b;
    if !(s > 0.0) {
        return Err(CboError::invalid("kernel", "a + b must be positive"));
    }
    Ok(1.0 / s)
}

#[derive(Clone, Debug, Serialize)]
pub struct KernelContractReport {
    pub trials: usize,
    pub t1_lipschitz_estimate: f64,
    pub t1_analytic_bound: Option<f64>,
    pub t2_violations: usize,
    pub t3_violations: usize,
    /// Samples where `T(x, 1) > 0`.
    pub upper_edge_violations: usize,
}

impl KernelContractReport {
    pub fn passes(&self) -> bool {
        let lipschitz_ok = match self.t1_analytic_bound {
            Some(bound) => self.t1_lipschitz_estimate <= bound * (1.0 + 1e-9) + 1e-12,
            None => self.t1_lipschitz_estimate.is_finite(),
        };
        lipschitz_ok
            && self.t2_violations == 0
            && self.t3_violations == 0
            && self.upper_edge_violations == 0
    }
}

const CONTRACT_DIM: usize = 2;

fn random_state<R: Rng>(rng: &mut R) -> (PopulationSummary, Vec<f64>, f64) {
    let mean_x: Vec<f64> = (0..CONTRACT_DIM)
        .map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let x: Vec<f64> = (0..CONTRACT_DIM)
        .map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let m1 = crate::linalg::norm(&mean_x) + rng.random::<f64>();
    let lambda: f64 = rng.random();
    (PopulationSummary { mean_x, m1 }, x, lambda)
}

/// Randomized audit of the three operator contracts.
///
/// The Lipschitz estimate uses `‖Δx‖ + |Δλ| + ‖Δe‖ + |Δm₁|` as the distance,
/// with the summary statistics standing in for W₁ of the underlying laws.
/// That surrogate is exact for the shipped kernels; for custom kernels it is
/// a weaker check.
pub fn check_kernel_contract(
    kernel: &KernelSpec,
    trial_count: usize,
    rng_seed: u64,
) -> Result<KernelContractReport> {
    if trial_count == 0 {
        return Err(CboError::invalid("trial_count", "must be at least 1"));
    }
    let mut rng = rng::stream(rng_seed, 0);
    let mut report = KernelContractReport {
        trials: trial_count,
        t1_lipschitz_estimate: 0.0,
        t1_analytic_bound: kernel.lipschitz_bound(),
        t2_violations: 0,
        t3_violations: 0,
        upper_edge_violations: 0,
    };
    for trial in 0..trial_count {
        let (summary, x, lambda) = random_state(&mut rng);
        let t = kernel.rate(&summary, &x, lambda);
        let next = lambda + kernel.theta * t;
        if !(-1e-12..=1.0 + 1e-12).contains(&next) {
            report.t2_violations += 1;
        }
        if !(kernel.rate(&summary, &x, 0.0) > 0.0) {
            report.t3_violations += 1;
        }
        if kernel.rate(&summary, &x, 1.0) > 0.0 {
            report.upper_edge_violations += 1;
        }

        // alternate between far pairs and small perturbations
        let (s2, x2, l2) = if trial % 2 == 0 {
            random_state(&mut rng)
        } else {
            let eps = 1e-3;
            let jitter =
                |v: f64, rng: &mut rng::SimRng| v + eps * rng.sample::<f64, _>(StandardNormal);
            let mean_x = summary
                .mean_x
                .iter()
                .map(|&v| jitter(v, &mut rng))
                .collect();
            let x2 = x.iter().map(|&v| jitter(v, &mut rng)).collect();
            let l2 = jitter(lambda, &mut rng).clamp(0.0, 1.0);
            let m1 = (summary.m1 + eps * rng.random::<f64>()).max(0.0);
            (PopulationSummary { mean_x, m1 }, x2, l2)
        };
        let gap = dist(&x, &x2)
            + (lambda - l2).abs()
            + dist(&summary.mean_x, &s2.mean_x)
            + (summary.m1 - s2.m1).abs();
        if gap > 0.0 {
            let ratio = (t - kernel.rate(&s2, &x2, l2)).abs() / gap;
            report.t1_lipschitz_estimate = report.t1_lipschitz_estimate.max(ratio);
        }
    }
    Ok(report)
}
