//! The online execute → collect → evaluate → update loop.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::llpl::memory::{screen_incremental, update_memory, EpisodicMemory};
use crate::llpl::update::{lifelong_update, EvalConfig, UpdateReport};
use crate::policy::{extract_samples, DrivingLog, Policy, PolicyController, Provenance};
use crate::sim::{
    Episode, ReferencePath, SimConfig, SteeringController, TrajectoryLog, VehicleParams,
};
use crate::{Error, Result};

/// Outcome of one update trigger.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriggerReport {
    pub trigger_id: usize,
    pub n_incremental: usize,
    pub n_screened: usize,
    pub n_mem_before: usize,
    pub n_mem_after: usize,
    /// `None` when there was nothing to learn from.
    pub update: Option<UpdateReport>,
    pub update_wall_s: f64,
}

#[derive(Debug, Serialize)]
struct TriggerRow {
    trigger_id: usize,
    n_incremental: usize,
    n_screened: usize,
    n_mem_before: usize,
    n_mem_after: usize,
    loss_data_pre: f64,
    loss_data_post: f64,
    loss_mem_pre: f64,
    loss_mem_post: f64,
    proj_rate: f64,
    update_wall_s: f64,
}

impl TriggerReport {
    pub fn write_csv(reports: &[TriggerReport], path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        if reports.is_empty() {
            w.write_record([
                "trigger_id", "n_incremental", "n_screened", "n_mem_before", "n_mem_after",
                "loss_data_pre", "loss_data_post", "loss_mem_pre", "loss_mem_post", "proj_rate",
                "update_wall_s",
            ])?;
        }
        for r in reports {
            let u = r.update.clone().unwrap_or_default();
            w.serialize(TriggerRow {
                trigger_id: r.trigger_id,
                n_incremental: r.n_incremental,
                n_screened: r.n_screened,
                n_mem_before: r.n_mem_before,
                n_mem_after: r.n_mem_after,
                loss_data_pre: u.loss_data_pre,
                loss_data_post: u.loss_data_post,
                loss_mem_pre: u.loss_mem_pre,
                loss_mem_post: u.loss_mem_post,
                proj_rate: u.proj_rate,
                update_wall_s: r.update_wall_s,
            })?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Anything that drives the vehicle and can learn from what it drove.
pub trait Learner {
    fn controller(&mut self) -> Box<dyn SteeringController + '_>;
    fn learn(&mut self, log: &DrivingLog, trigger_id: usize) -> Result<TriggerReport>;
    fn memory_len(&self) -> usize {
        0
    }
}

/// The proposed learner: screening, A-GEM update, memory maintenance.
pub struct LlplLearner {
    pub policy: Policy,
    pub memory: EpisodicMemory,
    pub cfg: EvalConfig,
    pub window_steps: usize,
    pub max_steer_deviation: Option<f64>,
    pub steer_limit: f64,
    rng: ChaCha8Rng,
}

impl LlplLearner {
    pub fn new(
        policy: Policy,
        memory: EpisodicMemory,
        cfg: EvalConfig,
        window_steps: usize,
        max_steer_deviation: Option<f64>,
        steer_limit: f64,
        seed: u64,
    ) -> Self {
        Self {
            policy,
            memory,
            cfg,
            window_steps,
            max_steer_deviation,
            steer_limit,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Learner for LlplLearner {
    fn controller(&mut self) -> Box<dyn SteeringController + '_> {
        Box::new(PolicyController {
            policy: &self.policy,
            steer_limit: self.steer_limit,
        })
    }

    fn learn(&mut self, log: &DrivingLog, trigger_id: usize) -> Result<TriggerReport> {
        let started = std::time::Instant::now();
        let data = match extract_samples(
            log,
            self.window_steps,
            self.max_steer_deviation,
            Provenance::Execution(trigger_id),
        ) {
            Ok(d) => d,
            Err(Error::LogTooShort { .. }) => {
                return Ok(TriggerReport {
                    trigger_id,
                    n_mem_before: self.memory.len(),
                    n_mem_after: self.memory.len(),
                    ..Default::default()
                })
            }
            Err(e) => return Err(e),
        };
        let screened = screen_incremental(&data, &self.memory, self.cfg.eta_d);
        let n_mem_before = self.memory.len();
        let update = if screened.is_empty() {
            log::info!("trigger {trigger_id}: screening removed all {} samples", data.len());
            None
        } else {
            Some(lifelong_update(
                &mut self.policy,
                &screened,
                &self.memory,
                &self.cfg,
                &mut self.rng,
            )?)
        };
        update_memory(&mut self.memory, &screened);
        Ok(TriggerReport {
            trigger_id,
            n_incremental: data.len(),
            n_screened: screened.len(),
            n_mem_before,
            n_mem_after: self.memory.len(),
            update,
            update_wall_s: started.elapsed().as_secs_f64(),
        })
    }

    fn memory_len(&self) -> usize {
        self.memory.len()
    }
}

/// When updates fire.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    /// Drive the whole path `passes` times, updating after every pass.
    Revisits { passes: usize },
    /// Drive the whole path once, updating at each section boundary.
    Sections,
    /// Drive the whole path once, updating every `seconds` of driving.
    FixedDuration { seconds: f64 },
    /// Drive the whole path once without updating.
    Frozen,
}

/// One executed stretch (a pass, a section, or a duration slice).
#[derive(Debug, Clone)]
pub struct Segment {
    pub index: usize,
    pub log: TrajectoryLog,
    /// `Some` when the vehicle left the path.
    pub failure: Option<String>,
    /// Index into [`LoopReport::triggers`] of the update that learned from
    /// this segment.
    pub trigger: Option<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct LoopReport {
    pub segments: Vec<Segment>,
    pub triggers: Vec<TriggerReport>,
    /// Memory size after each segment (before its trigger for frozen schedules).
    pub memory_sizes: Vec<usize>,
}

/// Environment of the loop: path, vehicle, timing and speed setpoints.
#[derive(Debug, Clone, Copy)]
pub struct Environment<'a> {
    pub path: &'a ReferencePath,
    pub params: VehicleParams,
    pub sim: SimConfig,
    pub speeds: &'a [f64],
}

/// Runs any learner under `schedule`. Failed segments are recorded and
/// skipped for learning.
pub fn run_protocol(
    learner: &mut dyn Learner,
    env: &Environment<'_>,
    schedule: Schedule,
) -> Result<LoopReport> {
    let mut report = LoopReport::default();
    match schedule {
        Schedule::Revisits { passes } => {
            for pass in 0..passes {
                let mut episode = env.episode(0.0, 0.0);
                let mut seg = drive(learner, &mut episode, pass, f64::INFINITY, f64::INFINITY)?;
                learn_from(learner, &mut seg, &mut report)?;
                report.memory_sizes.push(learner.memory_len());
                report.segments.push(seg);
            }
        }
        Schedule::Frozen => {
            let mut episode = env.episode(0.0, 0.0);
            let seg = drive(learner, &mut episode, 0, f64::INFINITY, f64::INFINITY)?;
            report.memory_sizes.push(learner.memory_len());
            report.segments.push(seg);
        }
        Schedule::Sections => {
            let n = env.path.section_count();
            let mut episode = env.episode(0.0, 0.0);
            for section in 0..n {
                let end = env.path.section_end(section);
                let end = if section + 1 < n { end } else { f64::INFINITY };
                let mut seg = drive(learner, &mut episode, section, end, f64::INFINITY)?;
                if seg.failure.is_some() && section + 1 < n {
                    // re-seat the vehicle at the next section start
                    episode = env.episode(env.path.section_end(section), episode.time);
                }
                if section + 1 < n {
                    learn_from(learner, &mut seg, &mut report)?;
                }
                report.memory_sizes.push(learner.memory_len());
                report.segments.push(seg);
            }
        }
        Schedule::FixedDuration { seconds } => {
            let mut episode = env.episode(0.0, 0.0);
            let mut index = 0;
            loop {
                let until = episode.time + seconds;
                let mut seg = drive(learner, &mut episode, index, f64::INFINITY, until)?;
                let finished = seg.failure.is_some() || episode.time < until - 1e-9;
                if !finished {
                    learn_from(learner, &mut seg, &mut report)?;
                }
                report.memory_sizes.push(learner.memory_len());
                report.segments.push(seg);
                if finished {
                    break;
                }
                index += 1;
            }
        }
    }
    Ok(report)
}

fn learn_from(learner: &mut dyn Learner, seg: &mut Segment, report: &mut LoopReport) -> Result<()> {
    if seg.failure.is_none() {
        let r = learner.learn(&seg.log, report.triggers.len())?;
        seg.trigger = Some(report.triggers.len());
        report.triggers.push(r);
    }
    Ok(())
}

impl<'a> Environment<'a> {
    fn episode(&self, station: f64, time: f64) -> Episode<'a> {
        Episode::start_at(self.path, self.params, self.sim, self.speeds.to_vec(), station, time)
    }
}

fn drive(
    learner: &mut dyn Learner,
    episode: &mut Episode<'_>,
    index: usize,
    end_station: f64,
    end_time: f64,
) -> Result<Segment> {
    let mut log = TrajectoryLog::default();
    let mut controller = learner.controller();
    let outcome = episode.run_until_or_time(end_station, end_time, controller.as_mut(), &mut log);
    let failure = match outcome {
        Ok(_) => None,
        Err(e @ Error::OffPath { .. }) => {
            log::warn!("segment {index}: {e}");
            Some(e.to_string())
        }
        Err(e) => return Err(e),
    };
    Ok(Segment { index, log, failure, trigger: None })
}

/// The execute, evaluate, update loop for the proposed learner.
pub fn run_llpl_loop(
    learner: &mut LlplLearner,
    env: &Environment<'_>,
    schedule: Schedule,
) -> Result<LoopReport> {
    run_protocol(learner, env, schedule)
}
