//! Closed-loop execution of a steering controller along a reference path.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::sim::path::{ReferencePath, TrackingError, TransitionFeatures};
use crate::sim::vehicle::{advance, VehicleParams, VehicleState};
use crate::sim::SimConfig;
use crate::{Error, Result};

/// Lateral error beyond which an episode is aborted.
pub const OFF_PATH_LIMIT: f64 = 10.0;

/// One row of a trajectory (or driving) log, sampled at the control period.
///
/// `steer` is the command held over `[t_s, t_s + T)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub t_s: f64,
    pub pos_x: f64,
    pub pos_y: f64,
    pub yaw: f64,
    pub vx: f64,
    pub vy: f64,
    pub yaw_rate: f64,
    pub steer: f64,
    pub e_lat: f64,
    pub e_head: f64,
    pub section: usize,
}

impl LogRow {
    pub fn new(t: f64, s: &VehicleState, steer: f64, e_lat: f64, e_head: f64, section: usize) -> Self {
        Self {
            t_s: t,
            pos_x: s.pos_x,
            pos_y: s.pos_y,
            yaw: s.yaw,
            vx: s.vx,
            vy: s.vy,
            yaw_rate: s.yaw_rate,
            steer,
            e_lat,
            e_head,
            section,
        }
    }

    pub fn state(&self) -> VehicleState {
        VehicleState {
            pos_x: self.pos_x,
            pos_y: self.pos_y,
            yaw: self.yaw,
            vx: self.vx,
            vy: self.vy,
            yaw_rate: self.yaw_rate,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryLog {
    pub rows: Vec<LogRow>,
}

impl TrajectoryLog {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows_in_section(&self, section: usize) -> impl Iterator<Item = &LogRow> {
        self.rows.iter().filter(move |r| r.section == section)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        if self.rows.is_empty() {
            w.write_record([
                "t_s", "pos_x", "pos_y", "yaw", "vx", "vy", "yaw_rate", "steer", "e_lat",
                "e_head", "section",
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let rows = rdr.deserialize().collect::<std::result::Result<Vec<LogRow>, _>>()?;
        Ok(Self { rows })
    }
}

/// What a controller sees at each control step.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub state: VehicleState,
    pub error: TrackingError,
    pub target: TransitionFeatures,
    /// Path curvature at the foot point.
    pub curvature: f64,
    pub path: &'a ReferencePath,
}

pub trait SteeringController {
    /// Requested steer in radians; the actuator clips and rate-limits it.
    fn command(&mut self, obs: &Observation<'_>) -> Result<f64>;
}

impl<T: SteeringController + ?Sized> SteeringController for &mut T {
    fn command(&mut self, obs: &Observation<'_>) -> Result<f64> {
        (**self).command(obs)
    }
}

/// Steering actuator with magnitude and rate limits.
#[derive(Debug, Clone, Copy)]
pub struct Actuator {
    pub limit: f64,
    pub max_step: f64,
    pub prev: f64,
}

impl Actuator {
    pub fn new(params: &VehicleParams, period: f64) -> Self {
        Self {
            limit: params.steer_limit,
            max_step: params.steer_rate_limit * period,
            prev: 0.0,
        }
    }

    pub fn apply(&mut self, command: f64) -> f64 {
        let clipped = command.clamp(-self.limit, self.limit);
        let out = clipped.clamp(self.prev - self.max_step, self.prev + self.max_step);
        self.prev = out;
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpisodeEnd {
    /// Reached the requested station.
    Reached,
    /// Ran out of path (lookahead or foot point past the end).
    PathEnd,
}

/// A single run of the vehicle along `path`, resumable section by section.
pub struct Episode<'a> {
    path: &'a ReferencePath,
    params: VehicleParams,
    cfg: SimConfig,
    speeds: Vec<f64>,
    pub state: VehicleState,
    pub station: f64,
    pub time: f64,
    actuator: Actuator,
}

impl<'a> Episode<'a> {
    /// Starts on the path at station 0 with the first section's speed.
    ///
    /// `speeds` holds one cruise setpoint per section; the last one repeats.
    pub fn new(
        path: &'a ReferencePath,
        params: VehicleParams,
        cfg: SimConfig,
        speeds: Vec<f64>,
    ) -> Self {
        Self::start_at(path, params, cfg, speeds, 0.0, 0.0)
    }

    /// Starts on the path at `station`, aligned with it, at time `time`.
    pub fn start_at(
        path: &'a ReferencePath,
        params: VehicleParams,
        cfg: SimConfig,
        speeds: Vec<f64>,
        station: f64,
        time: f64,
    ) -> Self {
        assert!(!speeds.is_empty(), "at least one speed setpoint");
        let (x, y, yaw) = path.pose(station);
        let section = path.section_at(station);
        let vx = speeds[section.min(speeds.len() - 1)];
        let state = VehicleState::new(x, y, yaw, vx);
        let station = if station == 0.0 {
            path.global_station(x, y)
        } else {
            station
        };
        Self {
            path,
            params,
            cfg,
            speeds,
            state,
            station,
            time,
            actuator: Actuator::new(&params, cfg.control_period),
        }
    }

    pub fn speed_for_section(&self, section: usize) -> f64 {
        self.speeds[section.min(self.speeds.len() - 1)]
    }

    /// Runs until the foot point reaches `end_station` or the path ends.
    pub fn run_until(
        &mut self,
        end_station: f64,
        controller: &mut dyn SteeringController,
        log: &mut TrajectoryLog,
    ) -> Result<EpisodeEnd> {
        self.run_until_or_time(end_station, f64::INFINITY, controller, log)
    }

    /// Like [`Episode::run_until`], additionally stopping once the clock
    /// reaches `end_time` (reported as `Reached`).
    pub fn run_until_or_time(
        &mut self,
        end_station: f64,
        end_time: f64,
        controller: &mut dyn SteeringController,
        log: &mut TrajectoryLog,
    ) -> Result<EpisodeEnd> {
        loop {
            if self.time >= end_time - 1e-9 {
                return Ok(EpisodeEnd::Reached);
            }
            let error = match self.path.tracking_error(&self.state, self.station) {
                Ok(e) => e,
                Err(Error::PathExhausted { .. }) => return Ok(EpisodeEnd::PathEnd),
                Err(e) => return Err(e),
            };
            self.station = error.station;
            if error.station >= end_station {
                return Ok(EpisodeEnd::Reached);
            }
            if error.lateral.abs() > OFF_PATH_LIMIT {
                return Err(Error::OffPath {
                    lateral: error.lateral,
                    time: self.time,
                });
            }
            let section = self.path.section_at(error.station);
            self.state.vx = self.speed_for_section(section);
            let target = match self.path.lookahead_target(
                &self.state,
                error.station,
                self.cfg.horizon_window,
            ) {
                Ok(t) => t,
                Err(Error::PathExhausted { .. }) => return Ok(EpisodeEnd::PathEnd),
                Err(e) => return Err(e),
            };
            let obs = Observation {
                state: self.state,
                error,
                target,
                curvature: self.path.curvature(error.station),
                path: self.path,
            };
            let steer = self.actuator.apply(controller.command(&obs)?);
            log.rows.push(LogRow::new(
                self.time,
                &self.state,
                steer,
                error.lateral,
                error.heading,
                section,
            ));
            self.state = advance(
                &self.state,
                steer,
                &self.params,
                self.cfg.control_period,
                self.cfg.integration_substep,
            )?;
            self.time += self.cfg.control_period;
        }
    }

    /// Runs the whole path.
    pub fn run(
        &mut self,
        controller: &mut dyn SteeringController,
        log: &mut TrajectoryLog,
    ) -> Result<EpisodeEnd> {
        self.run_until(f64::INFINITY, controller, log)
    }
}
