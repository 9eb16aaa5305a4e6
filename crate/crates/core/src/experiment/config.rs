use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{MpcConfig, RlConfig};
use crate::llpl::{EvalConfig, Schedule};
use crate::policy::{DemoConfig, IlConfig};
use crate::sim::{Scenario, SimConfig, VehicleParams, CURVED_SECTIONS};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Il,
    Llpl,
    Lll,
    IlRetrain,
    Rl,
    Mpc,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Il => "il",
            Method::Llpl => "llpl",
            Method::Lll => "lll",
            Method::IlRetrain => "il_retrain",
            Method::Rl => "rl",
            Method::Mpc => "mpc",
        }
    }

    /// Whether the method starts from the imitation-learned policy.
    pub fn needs_policy(self) -> bool {
        self != Method::Mpc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Protocol {
    /// Drive the whole scenario `passes` times (the first pass is the
    /// initial policy), updating after each.
    Revisits { passes: usize },
    /// One drive, updating at every section boundary.
    Sections,
    /// One drive, updating every `seconds`.
    FixedDuration { seconds: f64 },
}

impl Protocol {
    pub fn schedule(self) -> Schedule {
        match self {
            Protocol::Revisits { passes } => Schedule::Revisits { passes },
            Protocol::Sections => Schedule::Sections,
            Protocol::FixedDuration { seconds } => Schedule::FixedDuration { seconds },
        }
    }
}

/// Gaussian corruption of logged training data; the simulator stays clean.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorNoise {
    pub sigma_vy: f64,
    pub sigma_yaw_rate: f64,
    pub sigma_steer_log: f64,
}

impl SensorNoise {
    pub fn is_zero(&self) -> bool {
        self.sigma_vy == 0.0 && self.sigma_yaw_rate == 0.0 && self.sigma_steer_log == 0.0
    }

    fn validate(&self) -> Result<()> {
        let s = [self.sigma_vy, self.sigma_yaw_rate, self.sigma_steer_log];
        if s.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config("sensor noise sigmas must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub method: Method,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Where `run` and `noise-replay` look for the demonstration and policy;
    /// defaults to `output_dir`.
    pub artifacts_dir: Option<PathBuf>,
    /// Cruise setpoint per section (the last repeats). Defaults to 12 m/s on
    /// the lane change and 12 -> 20 m/s after section 3 on the curved road.
    pub speeds: Option<Vec<f64>>,
    /// Defaults to 3 revisits, or per-section updates on the curved road.
    pub protocol: Option<Protocol>,
    pub scenario: Scenario,
    pub sensor_noise: SensorNoise,
    pub vehicle: VehicleParams,
    pub sim: SimConfig,
    pub demo: DemoConfig,
    pub il: IlConfig,
    pub eval: EvalConfig,
    pub mpc: MpcConfig,
    pub rl: RlConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: Method::Llpl,
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            artifacts_dir: None,
            speeds: None,
            protocol: None,
            scenario: Scenario::DoubleLaneChange,
            sensor_noise: SensorNoise::default(),
            vehicle: VehicleParams::default(),
            sim: SimConfig::default(),
            demo: DemoConfig::default(),
            il: IlConfig::default(),
            eval: EvalConfig::default(),
            mpc: MpcConfig::default(),
            rl: RlConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.vehicle.validate()?;
        self.sim.validate()?;
        self.eval.validate()?;
        self.mpc.validate()?;
        self.rl.validate()?;
        self.sensor_noise.validate()?;
        if self.il.epochs == 0 || self.il.batch_size == 0 || !(self.il.lr > 0.0) {
            return Err(Error::Config("il epochs, batch_size and lr must be positive".into()));
        }
        if self.demo.speeds.is_empty() || !(self.demo.duration_per_speed > 0.0) {
            return Err(Error::Config("demo needs speeds and a positive duration".into()));
        }
        if self.speeds().iter().any(|v| !(*v > 0.5)) {
            return Err(Error::Config("speed setpoints must exceed 0.5 m/s".into()));
        }
        match self.protocol() {
            Protocol::Revisits { passes: 0 } => {
                return Err(Error::Config("revisit protocol needs at least one pass".into()))
            }
            Protocol::FixedDuration { seconds } if !(seconds > 0.0) => {
                return Err(Error::Config("update interval must be positive".into()))
            }
            _ => {}
        }
        Ok(())
    }

    pub fn speeds(&self) -> Vec<f64> {
        match (&self.speeds, &self.scenario) {
            (Some(v), _) if !v.is_empty() => v.clone(),
            (_, Scenario::CurvedRoad) => {
                (0..CURVED_SECTIONS).map(|i| if i < 3 { 12.0 } else { 20.0 }).collect()
            }
            _ => vec![12.0],
        }
    }

    pub fn protocol(&self) -> Protocol {
        match (self.protocol, &self.scenario) {
            (Some(p), _) => p,
            (None, Scenario::CurvedRoad) => Protocol::Sections,
            (None, _) => Protocol::Revisits { passes: 3 },
        }
    }

    pub fn artifacts_dir(&self) -> &Path {
        self.artifacts_dir.as_deref().unwrap_or(&self.output_dir)
    }

    /// This config with every defaulted choice made explicit.
    pub fn resolved(&self) -> Self {
        Self {
            speeds: Some(self.speeds()),
            protocol: Some(self.protocol()),
            artifacts_dir: Some(self.artifacts_dir().to_path_buf()),
            ..self.clone()
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Independent, reproducible seed for one consumer of randomness.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

pub(crate) mod streams {
    pub const DEMO: u64 = 0;
    pub const INIT: u64 = 1;
    pub const IL: u64 = 2;
    pub const MEMORY: u64 = 3;
    pub const LEARNER: u64 = 4;
    pub const DEMO_NOISE: u64 = 5;
    pub const EXEC_NOISE: u64 = 6;
}

/// Inputs of `compare`: run directories holding `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub baseline: PathBuf,
    pub runs: Vec<PathBuf>,
    #[serde(default = "default_compare_dir")]
    pub output_dir: PathBuf,
}

fn default_compare_dir() -> PathBuf {
    PathBuf::from("runs/compare")
}

impl CompareConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.protocol(), Protocol::Revisits { passes: 3 });
        assert_eq!(cfg.speeds(), vec![12.0]);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(ExperimentConfig::from_toml("bogus = 1"), Err(Error::Config(_))));
        assert!(matches!(
            ExperimentConfig::from_toml("[eval]\neta = 0.1"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn curved_road_defaults() {
        let cfg = ExperimentConfig::from_toml("[scenario]\nname = \"curved_road\"").unwrap();
        assert_eq!(cfg.protocol(), Protocol::Sections);
        assert_eq!(cfg.speeds(), vec![12.0, 12.0, 12.0, 20.0, 20.0, 20.0, 20.0]);
    }

    #[test]
    fn resolved_round_trips() {
        let text = "method = \"rl\"\nseed = 4\n[protocol]\nkind = \"fixed_duration\"\nseconds = 5.0\n\
                    [sensor_noise]\nsigma_vy = 0.05\n";
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        let resolved = cfg.resolved();
        let back = ExperimentConfig::from_toml(&resolved.to_toml().unwrap()).unwrap();
        assert_eq!(back, resolved);
        assert_eq!(back.method, Method::Rl);
        assert_eq!(back.protocol(), Protocol::FixedDuration { seconds: 5.0 });
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(ExperimentConfig::from_toml("speeds = [0.1]").is_err());
        assert!(ExperimentConfig::from_toml("[protocol]\nkind = \"revisits\"\npasses = 0").is_err());
        assert!(ExperimentConfig::from_toml("[sensor_noise]\nsigma_vy = -1.0").is_err());
        assert!(ExperimentConfig::from_toml("[rl]\ngamma = 1.0").is_err());
    }
}
