//! Vehicle simulation, path geometry and scenario definitions.

mod episode;
mod path;
mod scenario;
mod vehicle;

pub use episode::{
    Actuator, Episode, EpisodeEnd, LogRow, Observation, SteeringController, TrajectoryLog,
    OFF_PATH_LIMIT,
};
pub use path::{relative_pose, ReferencePath, TrackingError, TransitionFeatures};
pub use scenario::{
    build_scenario, curved_road, curved_road_curvature, double_lane_change, read_waypoints,
    write_waypoints, Scenario, CURVED_SECTIONS, CURVED_SECTION_LENGTH, LANE_OFFSET,
};
pub use vehicle::{advance, step_dynamics, wrap_angle, VehicleParams, VehicleState};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Control period T in seconds.
    pub control_period: f64,
    pub integration_substep: f64,
    /// Receding-horizon window in seconds; a whole number of control periods.
    pub horizon_window: f64,
    pub rng_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            control_period: 0.1,
            integration_substep: 0.01,
            horizon_window: 0.5,
            rng_seed: 0,
        }
    }
}

impl SimConfig {
    fn ratio(a: f64, b: f64) -> Option<usize> {
        let r = a / b;
        let n = r.round();
        (n >= 1.0 && (r - n).abs() < 1e-9).then_some(n as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.control_period > 0.0) || !(self.integration_substep > 0.0) {
            return Err(Error::Config("periods must be positive".into()));
        }
        if self.integration_substep > 0.05 {
            return Err(Error::Config("integration_substep must be <= 0.05 s".into()));
        }
        if Self::ratio(self.control_period, self.integration_substep).is_none() {
            return Err(Error::Config(
                "integration_substep must divide control_period".into(),
            ));
        }
        if Self::ratio(self.horizon_window, self.control_period).is_none() {
            return Err(Error::Config(
                "horizon_window must be a whole multiple of control_period".into(),
            ));
        }
        Ok(())
    }

    /// Window length W in control steps.
    pub fn window_steps(&self) -> usize {
        Self::ratio(self.horizon_window, self.control_period).unwrap_or(1)
    }
}
