//! Numerical parameters shared across the pipeline.

use serde::{Deserialize, Serialize};

/// Axis-aligned box the integrator is confined to. Leaving it aborts the
/// integration, which keeps affine fields effectively bounded.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WorkingBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl WorkingBox {
    pub fn centered(dim: usize, half_width: f64) -> Self {
        WorkingBox {
            lo: vec![-half_width; dim],
            hi: vec![half_width; dim],
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }
}

pub const DEFAULT_STEP: f64 = 1e-3;
pub const DEFAULT_T_MAX: f64 = 100.0;
pub const DEFAULT_DELTA: f64 = 0.1;
pub const DEFAULT_EPSILON: f64 = 1e-2;
pub const DEFAULT_INTERIOR_MARGIN: f64 = 1e-7;
pub const DEFAULT_BOUNDARY_TOL: f64 = 1e-9;
pub const DEFAULT_OUTPUT_STRIDE: usize = 10;
pub const DEFAULT_WORKING_HALF_WIDTH: f64 = 1e4;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct Params {
    /// Integration and hitting-time sampling step.
    pub step: f64,
    /// Closed-loop simulation step; falls back to `step` when absent.
    pub sim_step: Option<f64>,
    /// Horizon for hitting-time searches.
    pub t_max: f64,
    /// Slack added to the infimum time when choosing the control horizon.
    pub delta: f64,
    /// Target tolerance for the approximate pipeline.
    pub epsilon: f64,
    /// Defaults to a large centered box if absent.
    pub working_box: Option<WorkingBox>,
    pub interior_margin: f64,
    pub boundary_tol: f64,
    pub output_stride: usize,
    pub seed: u64,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            step: DEFAULT_STEP,
            sim_step: None,
            t_max: DEFAULT_T_MAX,
            delta: DEFAULT_DELTA,
            epsilon: DEFAULT_EPSILON,
            working_box: None,
            interior_margin: DEFAULT_INTERIOR_MARGIN,
            boundary_tol: DEFAULT_BOUNDARY_TOL,
            output_stride: DEFAULT_OUTPUT_STRIDE,
            seed: 0,
        }
    }
}

impl Params {
    pub fn working_box(&self, dim: usize) -> WorkingBox {
        self.working_box
            .clone()
            .unwrap_or_else(|| WorkingBox::centered(dim, DEFAULT_WORKING_HALF_WIDTH))
    }

    pub fn sim_step(&self) -> f64 {
        self.sim_step.unwrap_or(self.step)
    }
}
