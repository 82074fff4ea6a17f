//! Consensus functionals: the Gibbs-weighted consensus point, the mean, the
//! CBO drift field and its cut-off truncation.
//!
//! The consensus point of a measure μ at sharpness `n` is
//!
//! ```text
//! f_n(μ) = ∫ g(x) e^{-n E(x)} dμ(x) / ∫ e^{-n E(x)} dμ(x)
//! ```
//!
//! Weights are formed after shifting every exponent by the largest one, which
//! leaves the ratio unchanged and keeps large `n` from underflowing.

use serde::Serialize;

use crate::error::{check_dim, CboError, Result};
use crate::linalg::norm;
use crate::measures::EmpiricalMeasure;
use crate::objectives::{ObjectiveSpec, ObservableMap};

#[derive(Clone, Debug)]
pub struct ConsensusParams {
    /// Gibbs sharpness. Real-valued; zero gives the plain mean of `g`.
    pub n: f64,
    pub objective: ObjectiveSpec,
    pub observable: ObservableMap,
}

impl ConsensusParams {
    pub fn new(n: f64, objective: ObjectiveSpec, observable: ObservableMap) -> Result<Self> {
        if !(n >= 0.0) || !n.is_finite() {
            return Err(CboError::invalid("sim.n", "must be finite and nonnegative"));
        }
        objective.validate()?;
        observable.validate()?;
        Ok(ConsensusParams {
            n,
            objective,
            observable,
        })
    }

    fn log_weight(&self, x: &[f64], mass: f64) -> f64 {
        if mass <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let energy_term = if self.n == 0.0 {
            0.0
        } else {
            let e = self.objective.value(x);
            if e.is_nan() {
                f64::INFINITY
            } else {
                self.n * e
            }
        };
        mass.ln() - energy_term
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DriftParams {
    /// Gain multiplying the drift in the position update.
    pub drift_gain: f64,
    pub noise_strength: f64,
}

impl Default for DriftParams {
    fn default() -> Self {
        DriftParams {
            drift_gain: 1.0,
            noise_strength: 0.0,
        }
    }
}

impl DriftParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.drift_gain > 0.0) {
            return Err(CboError::invalid("sim.drift_gain", "must be positive"));
        }
        if !(self.noise_strength >= 0.0) {
            return Err(CboError::invalid(
                "sim.noise_strength",
                "must be nonnegative",
            ));
        }
        Ok(())
    }

    /// `ς² d`, the quantity entering every concentration hypothesis.
    pub fn noise_load(&self, d: usize) -> f64 {
        self.noise_strength * self.noise_strength * d as f64
    }

    /// Rejects `ς² d ≥ 2`, outside which the concentration estimates fail.
    pub fn require_concentration_regime(&self, d: usize) -> Result<()> {
        let load = self.noise_load(d);
        if load < 2.0 {
            Ok(())
        } else {
            Err(CboError::Hypothesis(format!(
                "concentration requires noise_strength² · d < 2 (got {load})"
            )))
        }
    }
}

/// Normalized log-weights shifted by their maximum. Returns the shifted
/// exponents; all entries are ≤ 0 and at least one is 0.
fn shifted_log_weights<'a, I>(params: &ConsensusParams, atoms: I) -> Result<Vec<f64>>
where
    I: Iterator<Item = (&'a [f64], f64)>,
{
    let mut logs: Vec<f64> = atoms.map(|(x, m)| params.log_weight(x, m)).collect();
    if logs.is_empty() {
        return Err(CboError::EmptyMeasure);
    }
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return Err(CboError::AllInfiniteEnergy);
    }
    for l in logs.iter_mut() {
        *l -= top;
    }
    Ok(logs)
}

fn normalized_weights<'a, I>(params: &ConsensusParams, atoms: I) -> Result<Vec<f64>>
where
    I: Iterator<Item = (&'a [f64], f64)>,
{
    let mut w = shifted_log_weights(params, atoms)?;
    let mut total = 0.0;
    for v in w.iter_mut() {
        *v = v.exp();
        total += *v;
    }
    for v in w.iter_mut() {
        *v /= total;
    }
    Ok(w)
}

/// Gibbs weights `w_i ∝ exp(-n E(x_i))` of equally weighted points.
pub fn gibbs_weights(params: &ConsensusParams, points: &[Vec<f64>]) -> Result<Vec<f64>> {
    normalized_weights(params, points.iter().map(|p| (p.as_slice(), 1.0)))
}

/// Consensus point over weighted atoms, written into `out`.
pub(crate) fn consensus_into<'a, I>(
    params: &ConsensusParams,
    atoms: I,
    out: &mut [f64],
) -> Result<()>
where
    I: Iterator<Item = (&'a [f64], f64)> + Clone,
{
    let w = normalized_weights(params, atoms.clone())?;
    let mut g = vec![0.0; out.len()];
    out.iter_mut().for_each(|o| *o = 0.0);
    for ((x, _), wi) in atoms.zip(w) {
        if wi == 0.0 {
            continue;
        }
        check_dim(out.len(), x.len())?;
        params.observable.apply_into(x, &mut g);
        for (o, gi) in out.iter_mut().zip(&g) {
            *o += wi * gi;
        }
    }
    Ok(())
}

/// `f_n(μ)`: the Gibbs-weighted average of the observable.
pub fn weighted_consensus(
    params: &ConsensusParams,
    measure: &EmpiricalMeasure,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; measure.dimension()];
    consensus_into(params, measure.iter(), &mut out)?;
    Ok(out)
}

pub(crate) fn mean_into<'a, I>(atoms: I, out: &mut [f64]) -> Result<()>
where
    I: Iterator<Item = (&'a [f64], f64)>,
{
    out.iter_mut().for_each(|o| *o = 0.0);
    let mut seen = false;
    for (x, m) in atoms {
        check_dim(out.len(), x.len())?;
        seen = true;
        for (o, xi) in out.iter_mut().zip(x) {
            *o += m * xi;
        }
    }
    if seen {
        Ok(())
    } else {
        Err(CboError::EmptyMeasure)
    }
}

/// `e(μ) = ∫ x dμ`
pub fn mean_point(measure: &EmpiricalMeasure) -> Result<Vec<f64>> {
    let mut out = vec![0.0; measure.dimension()];
    mean_into(measure.iter(), &mut out)?;
    Ok(out)
}

#[inline]
pub(crate) fn drift_into(x: &[f64], lambda: f64, f_val: &[f64], e_val: &[f64], out: &mut [f64]) {
    for i in 0..x.len() {
        out[i] = -x[i] + lambda * f_val[i] + (1.0 - lambda) * e_val[i];
    }
}

/// `v(x, λ) = -x + λ f + (1 - λ) e`
pub fn drift(x: &[f64], lambda: f64, f_val: &[f64], e_val: &[f64]) -> Result<Vec<f64>> {
    check_dim(x.len(), f_val.len())?;
    check_dim(x.len(), e_val.len())?;
    let mut out = vec![0.0; x.len()];
    drift_into(x, lambda, f_val, e_val, &mut out);
    Ok(out)
}

#[inline]
fn h(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

/// Smooth cut-off: 1 up to `radius`, 0 from `radius + 1`, monotone between.
pub fn cutoff_eta(radius: f64, z: f64) -> f64 {
    if z <= radius {
        return 1.0;
    }
    if z >= radius + 1.0 {
        return 0.0;
    }
    let a = h(radius + 1.0 - z);
    let b = h(z - radius);
    a / (a + b)
}

/// `φ_R(μ) = η_R(m₁(μ))`
pub fn cutoff_phi_measure(radius: f64, measure: &EmpiricalMeasure) -> f64 {
    cutoff_eta(radius, first_moment(measure.iter()))
}

pub(crate) fn first_moment<'a, I>(atoms: I) -> f64
where
    I: Iterator<Item = (&'a [f64], f64)>,
{
    atoms.map(|(x, m)| m * norm(x)).sum()
}

/// Drift with the consensus and mean terms damped by `φ_R(μ)`.
pub fn truncated_drift(
    radius: f64,
    params: &ConsensusParams,
    measure: &EmpiricalMeasure,
    x: &[f64],
    lambda: f64,
) -> Result<Vec<f64>> {
    check_dim(measure.dimension(), x.len())?;
    let phi = cutoff_phi_measure(radius, measure);
    let mut f = weighted_consensus(params, measure)?;
    let mut e = mean_point(measure)?;
    f.iter_mut().for_each(|v| *v *= phi);
    e.iter_mut().for_each(|v| *v *= phi);
    drift(x, lambda, &f, &e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::w1_exact;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn quad(d: usize, n: f64) -> ConsensusParams {
        ConsensusParams::new(n, ObjectiveSpec::quadratic(d), ObservableMap::Identity).unwrap()
    }

    fn line(points: &[f64]) -> EmpiricalMeasure {
        EmpiricalMeasure::uniform(points.iter().map(|&p| vec![p]).collect()).unwrap()
    }

    #[test]
    fn flat_weights_at_zero_sharpness() {
        let pts = vec![vec![0.0], vec![5.0], vec![-2.0]];
        let w = gibbs_weights(&quad(1, 0.0), &pts).unwrap();
        for wi in w {
            assert!((wi - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(
            gibbs_weights(&quad(1, 7.0), &[vec![3.0]]).unwrap(),
            vec![1.0]
        );
    }

    #[test]
    fn two_point_weights() {
        let w = gibbs_weights(&quad(1, 1.0), &[vec![0.0], vec![1.0]]).unwrap();
        let e = (-1f64).exp();
        assert!((w[0] - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((w[1] - e / (1.0 + e)).abs() < 1e-15);
        assert!((w[0] - 0.73106).abs() < 1e-5);
    }

    #[test]
    fn empty_inputs_error() {
        assert!(matches!(
            gibbs_weights(&quad(1, 1.0), &[]),
            Err(CboError::EmptyMeasure)
        ));
    }

    #[test]
    fn infinite_energy_atoms_get_zero_weight() {
        let f: crate::objectives::ObjectiveFn = Arc::new(|x: &[f64]| {
            if x[0] > 1.0 {
                f64::INFINITY
            } else {
                x[0] * x[0]
            }
        });
        let spec = ObjectiveSpec::custom("wall", 1, f, 1e-9, 1e9, 2.0).unwrap();
        let p = ConsensusParams::new(1.0, spec.clone(), ObservableMap::Identity).unwrap();
        let w = gibbs_weights(&p, &[vec![0.5], vec![2.0]]).unwrap();
        assert_eq!(w, vec![1.0, 0.0]);
        assert!(matches!(
            gibbs_weights(&p, &[vec![2.0], vec![3.0]]),
            Err(CboError::AllInfiniteEnergy)
        ));
    }

    #[test]
    fn consensus_examples() {
        let m = EmpiricalMeasure::dirac(vec![3.0, -1.0]);
        assert_eq!(
            weighted_consensus(&quad(2, 9.0), &m).unwrap(),
            vec![3.0, -1.0]
        );
        assert_eq!(
            weighted_consensus(&quad(1, 0.0), &line(&[0.0, 2.0])).unwrap(),
            vec![1.0]
        );
        let f = weighted_consensus(&quad(1, 1.0), &line(&[0.0, 1.0])).unwrap();
        let e = (-1f64).exp();
        assert!((f[0] - e / (1.0 + e)).abs() < 1e-15);
    }

    #[test]
    fn large_sharpness_does_not_underflow() {
        let f = weighted_consensus(&quad(1, 1e6), &line(&[3.0, 4.0, 5.0])).unwrap();
        assert_eq!(f, vec![3.0]);
    }

    #[test]
    fn means() {
        let m = EmpiricalMeasure::uniform(vec![vec![1.0, 1.0], vec![3.0, 3.0]]).unwrap();
        assert_eq!(mean_point(&m).unwrap(), vec![2.0, 2.0]);
        assert_eq!(
            mean_point(&EmpiricalMeasure::dirac(vec![4.0])).unwrap(),
            vec![4.0]
        );
        let w = EmpiricalMeasure::weighted(vec![vec![0.0], vec![4.0]], vec![0.25, 0.75]).unwrap();
        assert_eq!(mean_point(&w).unwrap(), vec![3.0]);
    }

    #[test]
    fn drift_examples() {
        assert_eq!(drift(&[2.0], 1.0, &[5.0], &[0.0]).unwrap(), vec![3.0]);
        assert_eq!(drift(&[2.0], 0.0, &[9.0], &[0.0]).unwrap(), vec![-2.0]);
        assert_eq!(drift(&[1.0], 0.5, &[2.0], &[0.0]).unwrap(), vec![0.0]);
        assert!(drift(&[1.0, 2.0], 0.5, &[2.0], &[0.0]).is_err());
    }

    #[test]
    fn cutoff_examples() {
        assert_eq!(cutoff_eta(1.0, 0.5), 1.0);
        assert_eq!(cutoff_eta(1.0, 3.0), 0.0);
        assert!((cutoff_eta(1.0, 1.5) - 0.5).abs() < 1e-15);
        assert_eq!(
            cutoff_phi_measure(4.0, &EmpiricalMeasure::dirac(vec![0.0, 0.0])),
            1.0
        );
        assert_eq!(
            cutoff_phi_measure(1.0, &EmpiricalMeasure::dirac(vec![3.0, 0.0])),
            0.0
        );
        let m = EmpiricalMeasure::dirac(vec![0.9, 1.2]);
        assert!((cutoff_phi_measure(1.0, &m) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cutoff_slope_bounded_by_two() {
        let r = 2.0;
        let steps = 100_000;
        let mut worst: f64 = 0.0;
        for k in 0..steps {
            let z0 = r + k as f64 / steps as f64;
            let z1 = r + (k + 1) as f64 / steps as f64;
            worst = worst.max((cutoff_eta(r, z1) - cutoff_eta(r, z0)).abs() * steps as f64);
        }
        assert!(worst <= 2.0 + 1e-6, "max slope {worst}");
    }

    #[test]
    fn truncated_examples() {
        let p = quad(1, 1.0);
        let inside = line(&[0.2, -0.4]);
        assert_eq!(
            truncated_drift(1.0, &p, &inside, &[0.7], 0.3).unwrap(),
            drift(
                &[0.7],
                0.3,
                &weighted_consensus(&p, &inside).unwrap(),
                &mean_point(&inside).unwrap()
            )
            .unwrap()
        );
        let far = line(&[5.0, 6.0]);
        assert_eq!(
            truncated_drift(1.0, &p, &far, &[0.7], 0.3).unwrap(),
            vec![-0.7]
        );
        let half = EmpiricalMeasure::dirac(vec![1.5]);
        let v = truncated_drift(1.0, &p, &half, &[0.0], 0.0).unwrap();
        assert!((v[0] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn laplace_limit_on_five_atoms() {
        let atoms = vec![
            vec![1.0, 2.0],
            vec![-0.3, 0.1],
            vec![0.8, -0.9],
            vec![2.0, 0.0],
            vec![-1.5, 1.5],
        ];
        let m = EmpiricalMeasure::uniform(atoms).unwrap();
        let f = weighted_consensus(&quad(2, 1e3), &m).unwrap();
        assert!((f[0] + 0.3).abs() < 1e-6 && (f[1] - 0.1).abs() < 1e-6);
    }

    fn atoms_strategy(d: usize, max: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(-3.0f64..3.0, d), 1..=max)
    }

    proptest! {
        #[test]
        fn weights_form_a_distribution(pts in atoms_strategy(3, 20), n in 0.0f64..50.0) {
            let w = gibbs_weights(&quad(3, n), &pts).unwrap();
            prop_assert!(w.iter().all(|&x| x >= 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn energy_shift_invariance(pts in atoms_strategy(2, 12), n in 0.0f64..10.0, c in -50.0f64..50.0) {
            let base = quad(2, n);
            let shifted_fn: crate::objectives::ObjectiveFn =
                Arc::new(move |x: &[f64]| x.iter().map(|t| t * t).sum::<f64>() + c);
            let shifted = ConsensusParams::new(
                n,
                ObjectiveSpec::custom("shifted", 2, shifted_fn, 1.0, 1.0, 2.0).unwrap(),
                ObservableMap::Identity,
            ).unwrap();
            let m = EmpiricalMeasure::uniform(pts).unwrap();
            let a = weighted_consensus(&base, &m).unwrap();
            let b = weighted_consensus(&shifted, &m).unwrap();
            let scale = norm(&a).max(1e-300);
            for (ai, bi) in a.iter().zip(&b) {
                prop_assert!((ai - bi).abs() <= 1e-12 * scale.max(1.0));
            }
        }

        #[test]
        fn consensus_has_linear_growth(pts in atoms_strategy(2, 15), n in 0.0f64..30.0) {
            // identity observable: f_n lies in the convex hull of the atoms
            let m = EmpiricalMeasure::uniform(pts.clone()).unwrap();
            let f = weighted_consensus(&quad(2, n), &m).unwrap();
            let max_norm = pts.iter().map(|p| norm(p)).fold(0.0, f64::max);
            prop_assert!(norm(&f) <= max_norm + 1e-12);
            let m1 = first_moment(m.iter());
            let rast = ConsensusParams::new(n, ObjectiveSpec::rastrigin_like(2),
                ObservableMap::Saturated { m_g: 2.0 }).unwrap();
            let fr = weighted_consensus(&rast, &m).unwrap();
            prop_assert!(norm(&fr) <= 2.0 * (1.0 + m1));
        }

        #[test]
        fn cutoff_is_two_lipschitz_in_w1(
            a in prop::collection::vec(-4.0f64..4.0, 1..10),
            b in prop::collection::vec(-4.0f64..4.0, 1..10),
            radius in 0.2f64..3.0,
        ) {
            let ma = line(&a);
            let mb = line(&b);
            let w = w1_exact(&ma, &mb).unwrap();
            let gap = (cutoff_phi_measure(radius, &ma) - cutoff_phi_measure(radius, &mb)).abs();
            prop_assert!(gap <= 2.0 * w + 1e-12);
        }

        #[test]
        fn consensus_locally_lipschitz(
            a in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 2), 6),
            shift in prop::collection::vec(prop::collection::vec(-0.05f64..0.05, 2), 6),
        ) {
            // m1 ≤ R = 1.5 on both measures; the fitted constant must stay finite
            let b: Vec<Vec<f64>> = a.iter().zip(&shift)
                .map(|(p, s)| vec![p[0] + s[0], p[1] + s[1]]).collect();
            let ma = EmpiricalMeasure::uniform(a).unwrap();
            let mb = EmpiricalMeasure::uniform(b).unwrap();
            let w = w1_exact(&ma, &mb).unwrap();
            let p = quad(2, 2.0);
            let fa = weighted_consensus(&p, &ma).unwrap();
            let fb = weighted_consensus(&p, &mb).unwrap();
            let gap = crate::linalg::dist(&fa, &fb);
            // generous empirical ceiling for n = 2 on the 1.5-ball
            prop_assert!(gap <= 200.0 * w + 1e-12, "ratio {}", gap / w);
        }
    }
}
