use serde::Serialize;

use crate::infokernel::PopulationSummary;
use crate::sde::{Ensemble, Mode};

/// What to record while simulating.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecordOptions {
    /// Record statistics every `stride` steps (step 0 and the final step are
    /// always included when the stride divides the step count).
    pub stride: usize,
    /// Radii for the ball-mass series, positive and increasing.
    pub radii: Vec<f64>,
    /// Keep full ensemble snapshots every this many steps.
    pub snapshot_stride: Option<usize>,
}

impl Default for RecordOptions {
    fn default() -> Self {
        RecordOptions {
            stride: 1,
            radii: Vec::new(),
            snapshot_stride: None,
        }
    }
}

/// Consensus-side quantities frozen at the start of a step. Shared by every
/// agent update within the step.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepContext {
    /// `f_n(ρ^N)`; absent for the auxiliary system.
    pub f_val: Option<Vec<f64>>,
    pub e_val: Vec<f64>,
    /// `φ_R(ρ^N)`, or 1 when truncation is off.
    pub cutoff: f64,
    pub summary: PopulationSummary,
}

#[derive(Clone, Debug, Serialize)]
pub struct Snapshot {
    pub step: usize,
    pub ensemble: Ensemble,
    pub context: StepContext,
}

#[derive(Clone, Debug, Serialize)]
pub struct BallSeries {
    pub radius: f64,
    pub mass: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrajectoryRecord {
    pub mode: Mode,
    pub dt: f64,
    pub steps: Vec<usize>,
    pub times: Vec<f64>,
    /// Empirical `E‖X_t‖²`.
    pub m2_sq: Vec<f64>,
    pub mean_x: Vec<Vec<f64>>,
    pub mean_lambda: Vec<f64>,
    pub min_lambda: Vec<f64>,
    pub max_lambda: Vec<f64>,
    pub mass_ball: Vec<BallSeries>,
    pub consensus_point: Vec<Vec<f64>>,
    /// Rate updates that left `[0, 1]` by more than rounding and were clamped.
    pub clamp_events: u64,
    pub snapshots: Vec<Snapshot>,
}

impl TrajectoryRecord {
    pub(crate) fn new(mode: Mode, dt: f64, radii: &[f64]) -> Self {
        TrajectoryRecord {
            mode,
            dt,
            steps: Vec::new(),
            times: Vec::new(),
            m2_sq: Vec::new(),
            mean_x: Vec::new(),
            mean_lambda: Vec::new(),
            min_lambda: Vec::new(),
            max_lambda: Vec::new(),
            mass_ball: radii
                .iter()
                .map(|&radius| BallSeries {
                    radius,
                    mass: Vec::new(),
                })
                .collect(),
            consensus_point: Vec::new(),
            clamp_events: 0,
            snapshots: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn ball_series(&self, radius: f64) -> Option<&BallSeries> {
        self.mass_ball
            .iter()
            .find(|s| (s.radius - radius).abs() <= 1e-12 * radius.max(1.0))
    }

    pub fn final_m2_sq(&self) -> f64 {
        *self.m2_sq.last().expect("record has at least one row")
    }
}
