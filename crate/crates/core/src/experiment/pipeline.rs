use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::baselines::{
    demonstration_transitions, FrozenLearner, LllLearner, MpcController, RetrainLearner,
    RlLearner, RlUpdateReport,
};
use crate::experiment::config::{derive_seed, streams, ExperimentConfig, Method, SensorNoise};
use crate::llpl::{
    init_memory, run_protocol, Environment, Learner, LlplLearner, LoopReport, Segment,
    TriggerReport,
};
use crate::mlp::Normalizer;
use crate::policy::{
    extract_samples, generate_demonstration, train_il, Dataset, DrivingLog, Policy, Provenance,
    Sample, TrainReport,
};
use crate::sim::{build_scenario, SteeringController, TrajectoryLog};
use crate::{Error, Result};

/// Demonstration and imitation-learned policy every learner starts from.
#[derive(Debug, Clone)]
pub struct BaseArtifacts {
    pub demo: Dataset,
    /// Needed by the actor-critic baseline for replay transitions.
    pub demo_log: Option<DrivingLog>,
    /// The untrained network, needed by IL retraining.
    pub initial: Option<Policy>,
    pub policy: Policy,
    pub report: Option<TrainReport>,
}

/// Synthetic demonstration log and its extracted samples. Sensor noise, if
/// non-zero, corrupts the log before extraction.
pub fn generate_demo(cfg: &ExperimentConfig, noise: &SensorNoise) -> Result<(DrivingLog, Dataset)> {
    let log = generate_demonstration(
        &cfg.vehicle,
        &cfg.demo,
        &cfg.sim,
        derive_seed(cfg.seed, streams::DEMO),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, streams::DEMO_NOISE));
    let log = corrupt_log(&log, noise, &mut rng);
    let data = demo_samples(cfg, &log)?;
    Ok((log, data))
}

pub fn demo_samples(cfg: &ExperimentConfig, log: &DrivingLog) -> Result<Dataset> {
    extract_samples(log, cfg.sim.window_steps(), cfg.il.max_steer_deviation, Provenance::Demonstration)
}

/// Fits the normalizer, builds the network and trains it by imitation.
/// Returns the untrained network alongside the trained one.
pub fn train_base(cfg: &ExperimentConfig, demo: &Dataset) -> Result<(Policy, Policy, TrainReport)> {
    let normalizer = Normalizer::fit(&demo.features())?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, streams::INIT));
    let initial = Policy::new(&cfg.il.hidden, normalizer, &mut init_rng);
    let mut policy = initial.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, streams::IL));
    let report = train_il(&mut policy, demo, &cfg.il, &mut rng)?;
    log::info!(
        "imitation: {} samples, loss {:.3e} -> {:.3e}",
        demo.len(),
        report.initial_loss,
        report.final_loss()
    );
    Ok((initial, policy, report))
}

/// Demonstration plus IL, entirely in memory.
pub fn prepare_base(cfg: &ExperimentConfig, noise: &SensorNoise) -> Result<BaseArtifacts> {
    let (log, demo) = generate_demo(cfg, noise)?;
    let (initial, policy, report) = train_base(cfg, &demo)?;
    Ok(BaseArtifacts {
        demo,
        demo_log: Some(log),
        initial: Some(initial),
        policy,
        report: Some(report),
    })
}

pub mod files {
    pub const DEMO_LOG: &str = "demo_log.csv";
    pub const DEMO_SAMPLES: &str = "demo_samples.csv";
    pub const NORMALIZER: &str = "normalizer.txt";
    pub const INITIAL_POLICY: &str = "initial_policy.txt";
    pub const POLICY: &str = "policy.txt";
    pub const IL_LOSSES: &str = "il_losses.csv";
    pub const RESOLVED_CONFIG: &str = "resolved_config.toml";
    pub const SUMMARY: &str = "summary.csv";
    pub const TRIGGERS: &str = "triggers.csv";
    pub const FINAL_POLICY: &str = "final_policy.txt";
    pub const MEMORY: &str = "memory.csv";
    pub const RL_UPDATES: &str = "rl_updates.csv";
    pub const NOISE_REPORT: &str = "noise_report.csv";
    pub const COMPARE: &str = "compare.csv";
}

fn require(dir: &Path, name: &str) -> Result<std::path::PathBuf> {
    let p = dir.join(name);
    if p.is_file() {
        Ok(p)
    } else {
        Err(Error::MissingArtifact(p.display().to_string()))
    }
}

/// Loads what `method` needs from a directory written by `demo-gen` and
/// `train-il`.
pub fn load_base(dir: &Path, method: Method) -> Result<BaseArtifacts> {
    let demo = Dataset::read_csv(&require(dir, files::DEMO_SAMPLES)?, Provenance::Demonstration)?;
    let policy = Policy::load(&require(dir, files::POLICY)?)?;
    let initial = match method {
        Method::IlRetrain => Some(Policy::load(&require(dir, files::INITIAL_POLICY)?)?),
        _ => None,
    };
    let demo_log = match method {
        Method::Rl => Some(TrajectoryLog::read_csv(&require(dir, files::DEMO_LOG)?)?),
        _ => None,
    };
    Ok(BaseArtifacts { demo, demo_log, initial, policy, report: None })
}

/// Adds Gaussian noise to the logged lateral velocity, yaw rate and steer.
/// Zero sigmas leave the log bit-for-bit unchanged.
pub fn corrupt_log<R: rand::Rng + ?Sized>(log: &DrivingLog, noise: &SensorNoise, rng: &mut R) -> DrivingLog {
    let mut out = log.clone();
    if noise.is_zero() {
        return out;
    }
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    for row in &mut out.rows {
        let (a, b, c): (f64, f64, f64) = (n.sample(rng), n.sample(rng), n.sample(rng));
        row.vy += noise.sigma_vy * a;
        row.yaw_rate += noise.sigma_yaw_rate * b;
        row.steer += noise.sigma_steer_log * c;
    }
    out
}

/// MPC adapted to the learner loop; it never learns.
pub struct MpcLearner(pub MpcController);

impl Learner for MpcLearner {
    fn controller(&mut self) -> Box<dyn SteeringController + '_> {
        Box::new(&mut self.0)
    }

    fn learn(&mut self, _log: &DrivingLog, trigger_id: usize) -> Result<TriggerReport> {
        Ok(TriggerReport { trigger_id, ..Default::default() })
    }
}

/// Feeds a learner logs corrupted by sensor noise.
pub struct NoisyLearner<'a> {
    pub inner: &'a mut dyn Learner,
    pub noise: SensorNoise,
    rng: ChaCha8Rng,
}

impl<'a> NoisyLearner<'a> {
    pub fn new(inner: &'a mut dyn Learner, noise: SensorNoise, seed: u64) -> Self {
        Self { inner, noise, rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Learner for NoisyLearner<'_> {
    fn controller(&mut self) -> Box<dyn SteeringController + '_> {
        self.inner.controller()
    }

    fn learn(&mut self, log: &DrivingLog, trigger_id: usize) -> Result<TriggerReport> {
        let noisy = corrupt_log(log, &self.noise, &mut self.rng);
        self.inner.learn(&noisy, trigger_id)
    }

    fn memory_len(&self) -> usize {
        self.inner.memory_len()
    }
}

/// Every method behind one type so results can be pulled out afterwards.
pub enum MethodLearner {
    Il(FrozenLearner),
    Llpl(LlplLearner),
    Lll(LllLearner),
    IlRetrain(RetrainLearner),
    Rl(RlLearner),
    Mpc(MpcLearner),
}

impl MethodLearner {
    pub fn build(cfg: &ExperimentConfig, base: Option<&BaseArtifacts>) -> Result<Self> {
        let limit = cfg.vehicle.steer_limit;
        let w = cfg.sim.window_steps();
        let learner_seed = derive_seed(cfg.seed, streams::LEARNER);
        if cfg.method == Method::Mpc {
            let mut mpc = cfg.mpc.clone();
            mpc.period = cfg.sim.control_period;
            return Ok(Self::Mpc(MpcLearner(MpcController::new(mpc, cfg.vehicle))));
        }
        let base = base.ok_or_else(|| Error::MissingArtifact("imitation-learned policy".into()))?;
        let policy = base.policy.clone();
        let memory = || {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, streams::MEMORY));
            init_memory(&base.demo, cfg.eval.eta_m, policy.normalizer.clone(), &mut rng)
        };
        Ok(match cfg.method {
            Method::Il => Self::Il(FrozenLearner { policy, steer_limit: limit }),
            Method::Llpl => {
                let memory = memory()?;
                log::info!("initial memory: {} of {} demonstration samples", memory.len(), base.demo.len());
                Self::Llpl(LlplLearner::new(
                    policy,
                    memory,
                    cfg.eval.clone(),
                    w,
                    cfg.il.max_steer_deviation,
                    limit,
                    learner_seed,
                ))
            }
            Method::Lll => Self::Lll(LllLearner::new(
                policy.clone(),
                memory()?,
                cfg.eval.clone(),
                w,
                cfg.il.max_steer_deviation,
                limit,
                learner_seed,
            )),
            Method::IlRetrain => {
                let initial = base
                    .initial
                    .clone()
                    .ok_or_else(|| Error::MissingArtifact("untrained initial policy".into()))?;
                Self::IlRetrain(RetrainLearner::new(
                    policy,
                    initial,
                    base.demo.clone(),
                    cfg.il.clone(),
                    w,
                    limit,
                    derive_seed(cfg.seed, streams::IL),
                ))
            }
            Method::Rl => {
                let log = base
                    .demo_log
                    .as_ref()
                    .ok_or_else(|| Error::MissingArtifact("demonstration log".into()))?;
                let demo = demonstration_transitions(log, w, cfg.il.max_steer_deviation);
                Self::Rl(RlLearner::new(policy, demo, cfg.rl.clone(), limit, learner_seed))
            }
            Method::Mpc => unreachable!(),
        })
    }

    pub fn as_learner(&mut self) -> &mut dyn Learner {
        match self {
            Self::Il(l) => l,
            Self::Llpl(l) => l,
            Self::Lll(l) => l,
            Self::IlRetrain(l) => l,
            Self::Rl(l) => l,
            Self::Mpc(l) => l,
        }
    }

    pub fn policy(&self) -> Option<&Policy> {
        match self {
            Self::Il(l) => Some(&l.policy),
            Self::Llpl(l) => Some(&l.policy),
            Self::Lll(l) => Some(&l.policy),
            Self::IlRetrain(l) => Some(&l.policy),
            Self::Rl(l) => Some(&l.ac.actor),
            Self::Mpc(_) => None,
        }
    }

    pub fn memory(&self) -> Option<&[Sample]> {
        match self {
            Self::Llpl(l) => Some(l.memory.entries()),
            Self::Lll(l) => Some(l.memory.entries()),
            _ => None,
        }
    }

    pub fn rl_history(&self) -> &[RlUpdateReport] {
        match self {
            Self::Rl(l) => &l.history,
            _ => &[],
        }
    }
}

/// Per-segment metrics; `epoch` is the pass, section or slice index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub epoch: usize,
    pub rows: usize,
    pub failed: bool,
    pub rmse_e_lat: f64,
    pub rmse_e_head: f64,
    pub mean_abs_e_lat: f64,
    pub max_abs_e_lat: f64,
    /// `sum steer^2 * T`.
    pub effort: f64,
    pub steer_rate_rms: f64,
    /// Memory (or training-set / replay) size after the segment's update.
    pub mem_size: usize,
    pub mem_increment: i64,
    pub screened_count: usize,
    pub update_wall_s: f64,
}

/// Tracking statistics of one log: RMSE of lateral and heading error, mean
/// and max absolute lateral error, effort and steer-rate RMS.
pub fn log_metrics(log: &TrajectoryLog, period: f64) -> [f64; 6] {
    let n = log.rows.len();
    if n == 0 {
        return [0.0; 6];
    }
    let nf = n as f64;
    let rows = &log.rows;
    let rmse_lat = (rows.iter().map(|r| r.e_lat * r.e_lat).sum::<f64>() / nf).sqrt();
    let rmse_head = (rows.iter().map(|r| r.e_head * r.e_head).sum::<f64>() / nf).sqrt();
    let mean_abs = rows.iter().map(|r| r.e_lat.abs()).sum::<f64>() / nf;
    let max_abs = rows.iter().map(|r| r.e_lat.abs()).fold(0.0, f64::max);
    let effort = rows.iter().map(|r| r.steer * r.steer).sum::<f64>() * period;
    let rate = if n < 2 {
        0.0
    } else {
        let ss: f64 = rows.windows(2).map(|w| ((w[1].steer - w[0].steer) / period).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    };
    [rmse_lat, rmse_head, mean_abs, max_abs, effort, rate]
}

pub fn summarize(method: &str, report: &LoopReport, period: f64) -> Vec<SummaryRow> {
    report
        .segments
        .iter()
        .enumerate()
        .map(|(i, seg)| segment_row(method, seg, report, i, period))
        .collect()
}

fn segment_row(method: &str, seg: &Segment, report: &LoopReport, i: usize, period: f64) -> SummaryRow {
    let [rmse_lat, rmse_head, mean_abs, max_abs, effort, rate] = log_metrics(&seg.log, period);
    let trigger = seg.trigger.and_then(|t| report.triggers.get(t));
    SummaryRow {
        method: method.to_string(),
        epoch: seg.index,
        rows: seg.log.len(),
        failed: seg.failure.is_some(),
        rmse_e_lat: rmse_lat,
        rmse_e_head: rmse_head,
        mean_abs_e_lat: mean_abs,
        max_abs_e_lat: max_abs,
        effort,
        steer_rate_rms: rate,
        mem_size: report.memory_sizes.get(i).copied().unwrap_or(0),
        mem_increment: trigger.map_or(0, |t| t.n_mem_after as i64 - t.n_mem_before as i64),
        screened_count: trigger.map_or(0, |t| t.n_screened),
        update_wall_s: trigger.map_or(0.0, |t| t.update_wall_s),
    }
}

pub struct RunOutcome {
    pub method: String,
    pub report: LoopReport,
    pub summary: Vec<SummaryRow>,
    pub learner: MethodLearner,
}

impl RunOutcome {
    pub fn any_failed(&self) -> bool {
        self.summary.iter().any(|r| r.failed)
    }

    /// RMSE of the last segment.
    pub fn final_rmse(&self) -> f64 {
        self.summary.last().map_or(f64::NAN, |r| r.rmse_e_lat)
    }

    pub fn rmse_series(&self) -> Vec<f64> {
        self.summary.iter().map(|r| r.rmse_e_lat).collect()
    }
}

/// Runs `cfg.method` under the configured protocol. With `noise`, every
/// execution log is corrupted before the learner sees it.
pub fn run_method(
    cfg: &ExperimentConfig,
    base: Option<&BaseArtifacts>,
    noise: Option<&SensorNoise>,
    label: &str,
) -> Result<RunOutcome> {
    let path = build_scenario(&cfg.scenario)?;
    let speeds = cfg.speeds();
    let env = Environment { path: &path, params: cfg.vehicle, sim: cfg.sim, speeds: &speeds };
    let mut learner = MethodLearner::build(cfg, base)?;
    let schedule = cfg.protocol().schedule();
    let report = match noise {
        Some(n) if !n.is_zero() => {
            let seed = derive_seed(cfg.seed, streams::EXEC_NOISE);
            let mut noisy = NoisyLearner::new(learner.as_learner(), *n, seed);
            run_protocol(&mut noisy, &env, schedule)?
        }
        _ => run_protocol(learner.as_learner(), &env, schedule)?,
    };
    let summary = summarize(label, &report, cfg.sim.control_period);
    for r in &summary {
        log::info!(
            "{label} epoch {}: rmse {:.4} m, max {:.3} m, mem {}{}",
            r.epoch,
            r.rmse_e_lat,
            r.max_abs_e_lat,
            r.mem_size,
            if r.failed { " (left the path)" } else { "" }
        );
    }
    Ok(RunOutcome { method: label.to_string(), report, summary, learner })
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
}

#[derive(Serialize)]
struct RlRow {
    trigger_id: usize,
    lambda_pg: f64,
    steps: usize,
    skipped: usize,
    critic_loss_first: f64,
    critic_loss_last: f64,
    actor_loss_pre: f64,
    actor_loss_post: f64,
    wall_s: f64,
}

pub fn write_config(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(files::RESOLVED_CONFIG), cfg.resolved().to_toml()?)?;
    Ok(())
}

/// Writes trajectories, summary, trigger reports and the learned state.
pub fn write_run(dir: &Path, outcome: &RunOutcome) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for seg in &outcome.report.segments {
        seg.log
            .write_csv(&dir.join(format!("traj_{}_{:02}.csv", outcome.method, seg.index)))?;
    }
    write_summary(&dir.join(files::SUMMARY), &outcome.summary)?;
    TriggerReport::write_csv(&outcome.report.triggers, &dir.join(files::TRIGGERS))?;
    if let Some(p) = outcome.learner.policy() {
        p.save(&dir.join(files::FINAL_POLICY))?;
    }
    if let Some(m) = outcome.learner.memory() {
        crate::policy::write_samples(&dir.join(files::MEMORY), m, true)?;
    }
    let history = outcome.learner.rl_history();
    if !history.is_empty() {
        let mut w = csv::Writer::from_path(dir.join(files::RL_UPDATES))?;
        for h in history {
            w.serialize(RlRow {
                trigger_id: h.trigger_id,
                lambda_pg: h.lambda_pg,
                steps: h.steps,
                skipped: h.skipped,
                critic_loss_first: h.critic_loss_first,
                critic_loss_last: h.critic_loss_last,
                actor_loss_pre: h.actor_loss_pre,
                actor_loss_post: h.actor_loss_post,
                wall_s: h.wall_s,
            })?;
        }
        w.flush()?;
    }
    Ok(())
}
