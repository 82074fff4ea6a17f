//! Empirical probability measures on ℝ^d: moments, Wasserstein-1 distances,
//! ball masses and the smooth bump `φ_r`.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check_dim, CboError, Result};
use crate::linalg::{dist, dot, norm};
use crate::rng;

mod assignment;

pub use assignment::min_cost_assignment;

/// Largest atom count for which [`w1_exact`] solves the assignment problem
/// in dimension two or higher.
pub const MAX_ASSIGNMENT_ATOMS: usize = 256;

const MASS_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EmpiricalMeasure {
    atoms: Vec<Vec<f64>>,
    masses: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn uniform(atoms: Vec<Vec<f64>>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(CboError::EmptyMeasure);
        }
        let m = 1.0 / atoms.len() as f64;
        let masses = vec![m; atoms.len()];
        Self::weighted(atoms, masses)
    }

    pub fn weighted(atoms: Vec<Vec<f64>>, masses: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(CboError::EmptyMeasure);
        }
        if atoms.len() != masses.len() {
            return Err(CboError::invalid("masses", "one mass per atom required"));
        }
        let d = atoms[0].len();
        for a in &atoms {
            check_dim(d, a.len())?;
        }
        if masses.iter().any(|m| !(*m >= 0.0)) {
            return Err(CboError::invalid("masses", "must be nonnegative"));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(CboError::invalid(
                "masses",
                format!("must sum to 1 (got {total})"),
            ));
        }
        Ok(EmpiricalMeasure { atoms, masses })
    }

    pub fn dirac(x: Vec<f64>) -> Self {
        EmpiricalMeasure {
            atoms: vec![x],
            masses: vec![1.0],
        }
    }

    pub fn atoms(&self) -> &[Vec<f64>] {
        &self.atoms
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.atoms[0].len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + Clone + '_ {
        self.atoms
            .iter()
            .map(Vec::as_slice)
            .zip(self.masses.iter().copied())
    }

    fn has_uniform_masses(&self) -> bool {
        let m = 1.0 / self.len() as f64;
        self.masses.iter().all(|w| (w - m).abs() <= MASS_TOL)
    }
}

/// `m_p(μ) = (∫ ‖x‖^p dμ)^{1/p}`
pub fn moment_p(measure: &EmpiricalMeasure, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(CboError::invalid("p", "must be at least 1"));
    }
    let s: f64 = measure.iter().map(|(x, m)| m * norm(x).powf(p)).sum();
    Ok(s.powf(1.0 / p))
}

/// Exact W₁ between two weighted measures on the real line, from the
/// integral of the absolute CDF difference.
fn w1_line(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let mut events: Vec<(f64, f64)> = Vec::with_capacity(a.len() + b.len());
    events.extend(a.iter().copied());
    events.extend(b.iter().map(|&(x, m)| (x, -m)));
    events.sort_by(|p, q| p.0.total_cmp(&q.0));
    let mut cdf_gap = 0.0;
    let mut total = 0.0;
    for w in 0..events.len() {
        cdf_gap += events[w].1;
        if let Some(next) = events.get(w + 1) {
            total += cdf_gap.abs() * (next.0 - events[w].0);
        }
    }
    total
}

/// Exact Wasserstein-1 distance.
///
/// Supported shapes: any pair of measures in d = 1, or equal-size uniform
/// measures with at most [`MAX_ASSIGNMENT_ATOMS`] atoms in d ≥ 2. Other
/// shapes are rejected; use [`w1_sliced`] for them.
pub fn w1_exact(mu1: &EmpiricalMeasure, mu2: &EmpiricalMeasure) -> Result<f64> {
    let d = mu1.dimension();
    check_dim(d, mu2.dimension())?;
    if d == 1 {
        let a: Vec<_> = mu1.iter().map(|(x, m)| (x[0], m)).collect();
        let b: Vec<_> = mu2.iter().map(|(x, m)| (x[0], m)).collect();
        return Ok(w1_line(&a, &b));
    }
    if mu1.len() != mu2.len()
        || mu1.len() > MAX_ASSIGNMENT_ATOMS
        || !mu1.has_uniform_masses()
        || !mu2.has_uniform_masses()
    {
        return Err(CboError::Unsupported(format!(
            "exact W1 in d={d} needs equal-size uniform measures with at most \
             {MAX_ASSIGNMENT_ATOMS} atoms (got {} and {}); use w1_sliced",
            mu1.len(),
            mu2.len()
        )));
    }
    let n = mu1.len();
    let cost: Vec<Vec<f64>> = mu1
        .atoms
        .iter()
        .map(|a| mu2.atoms.iter().map(|b| dist(a, b)).collect())
        .collect();
    let (total, _) = min_cost_assignment(&cost);
    Ok(total / n as f64)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SlicedW1 {
    pub estimate: f64,
    pub std_error: f64,
    pub projections: usize,
}

/// Monte-Carlo sliced W₁: the mean over random unit directions of the exact
/// one-dimensional W₁ between the projected measures.
pub fn w1_sliced(
    mu1: &EmpiricalMeasure,
    mu2: &EmpiricalMeasure,
    projection_count: usize,
    rng_seed: u64,
) -> Result<SlicedW1> {
    if projection_count == 0 {
        return Err(CboError::invalid("projection_count", "must be at least 1"));
    }
    let d = mu1.dimension();
    check_dim(d, mu2.dimension())?;
    let samples: Vec<f64> = (0..projection_count as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng::stream(rng_seed, k);
            let mut u: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let len = norm(&u);
            if len == 0.0 {
                u[0] = 1.0;
            } else {
                u.iter_mut().for_each(|c| *c /= len);
            }
            let a: Vec<_> = mu1.iter().map(|(x, m)| (dot(&u, x), m)).collect();
            let b: Vec<_> = mu2.iter().map(|(x, m)| (dot(&u, x), m)).collect();
            w1_line(&a, &b)
        })
        .collect();
    let k = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / k;
    let std_error = if samples.len() > 1 {
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (k - 1.0);
        (var / k).sqrt()
    } else {
        0.0
    };
    Ok(SlicedW1 {
        estimate: mean,
        std_error,
        projections: samples.len(),
    })
}

/// `α_r(t) = exp(1 − r²/(r² − t²))` on `[0, r)`, zero from `r` on.
pub fn alpha_r(r: f64, t: f64) -> f64 {
    if t >= r {
        return 0.0;
    }
    let gap = r * r - t * t;
    if gap <= 0.0 {
        return 0.0;
    }
    (1.0 - r * r / gap).exp()
}

/// `∫ α_r(‖x‖) dμ`
pub fn phi_r_expectation(r: f64, measure: &EmpiricalMeasure) -> f64 {
    measure.iter().map(|(x, m)| m * alpha_r(r, norm(x))).sum()
}

/// Mass of the open ball of radius `r` around the origin.
pub fn mass_in_ball(measure: &EmpiricalMeasure, r: f64) -> f64 {
    measure
        .iter()
        .filter(|(x, _)| norm(x) < r)
        .map(|(_, m)| m)
        .sum()
}
