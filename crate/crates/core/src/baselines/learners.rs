//! Comparison learners that share the online loop with LLPL: frozen IL,
//! offline IL retraining, and plain lifelong learning without screening.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::llpl::{lifelong_update, EpisodicMemory, EvalConfig, Learner, TriggerReport};
use crate::policy::{
    extract_samples, train_il, Dataset, DrivingLog, IlConfig, Policy, PolicyController, Provenance,
    Sample,
};
use crate::sim::SteeringController;
use crate::{Error, Result};

fn execution_samples(
    log: &DrivingLog,
    window_steps: usize,
    max_steer_deviation: Option<f64>,
    trigger_id: usize,
) -> Result<Option<Dataset>> {
    match extract_samples(log, window_steps, max_steer_deviation, Provenance::Execution(trigger_id)) {
        Ok(d) => Ok(Some(d)),
        Err(Error::LogTooShort { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// The IL policy deployed without any further learning.
pub struct FrozenLearner {
    pub policy: Policy,
    pub steer_limit: f64,
}

impl Learner for FrozenLearner {
    fn controller(&mut self) -> Box<dyn SteeringController + '_> {
        Box::new(PolicyController { policy: &self.policy, steer_limit: self.steer_limit })
    }

    fn learn(&mut self, _log: &DrivingLog, trigger_id: usize) -> Result<TriggerReport> {
        Ok(TriggerReport { trigger_id, ..Default::default() })
    }
}

/// Retrains from the initial parameters on the demonstration plus every
/// execution log seen so far.
pub struct RetrainLearner {
    pub policy: Policy,
    initial: Policy,
    demonstration: Dataset,
    execution: Vec<Sample>,
    pub il: IlConfig,
    pub window_steps: usize,
    pub steer_limit: f64,
    seed: u64,
}

impl RetrainLearner {
    /// `initial` must be the untrained network the base policy started from.
    pub fn new(
        policy: Policy,
        initial: Policy,
        demonstration: Dataset,
        il: IlConfig,
        window_steps: usize,
        steer_limit: f64,
        seed: u64,
    ) -> Self {
        Self {
            policy,
            initial,
            demonstration,
            execution: Vec::new(),
            il,
            window_steps,
            steer_limit,
            seed,
        }
    }

    pub fn training_set_size(&self) -> usize {
        self.demonstration.len() + self.execution.len()
    }
}

impl Learner for RetrainLearner {
    fn controller(&mut self) -> Box<dyn SteeringController + '_> {
        Box::new(PolicyController { policy: &self.policy, steer_limit: self.steer_limit })
    }

    fn learn(&mut self, log: &DrivingLog, trigger_id: usize) -> Result<TriggerReport> {
        let started = Instant::now();
        let n_before = self.training_set_size();
        let Some(data) =
            execution_samples(log, self.window_steps, self.il.max_steer_deviation, trigger_id)?
        else {
            return Ok(TriggerReport {
                trigger_id,
                n_mem_before: n_before,
                n_mem_after: n_before,
                ..Default::default()
            });
        };
        self.execution.extend_from_slice(&data.samples);
        let mut all = self.demonstration.samples.clone();
        all.extend_from_slice(&self.execution);
        let mut policy = self.initial.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        train_il(&mut policy, &Dataset::new(all, Provenance::Demonstration), &self.il, &mut rng)?;
        self.policy = policy;
        Ok(TriggerReport {
            trigger_id,
            n_incremental: data.len(),
            n_screened: data.len(),
            n_mem_before: n_before,
            n_mem_after: self.training_set_size(),
            update: None,
            update_wall_s: started.elapsed().as_secs_f64(),
        })
    }

    /// The whole training set is this learner's retained knowledge.
    fn memory_len(&self) -> usize {
        self.training_set_size()
    }
}

/// Plain A-GEM lifelong learning: every incremental sample trains, and the
/// memory grows by a uniform random fraction of each execution's samples.
pub struct LllLearner {
    pub policy: Policy,
    pub memory: EpisodicMemory,
    pub cfg: EvalConfig,
    pub sample_ratio: f64,
    pub window_steps: usize,
    pub max_steer_deviation: Option<f64>,
    pub steer_limit: f64,
    rng: ChaCha8Rng,
}

impl LllLearner {
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
            sample_ratio: 0.10,
            window_steps,
            max_steer_deviation,
            steer_limit,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Memory increment for `n` execution samples: `ceil(ratio * n)`.
    pub fn increment_for(&self, n: usize) -> usize {
        ((self.sample_ratio * n as f64) - 1e-9).ceil().max(0.0) as usize
    }
}

impl Learner for LllLearner {
    fn controller(&mut self) -> Box<dyn SteeringController + '_> {
        Box::new(PolicyController { policy: &self.policy, steer_limit: self.steer_limit })
    }

    fn learn(&mut self, log: &DrivingLog, trigger_id: usize) -> Result<TriggerReport> {
        let started = Instant::now();
        let n_mem_before = self.memory.len();
        let Some(data) =
            execution_samples(log, self.window_steps, self.max_steer_deviation, trigger_id)?
        else {
            return Ok(TriggerReport {
                trigger_id,
                n_mem_before,
                n_mem_after: n_mem_before,
                ..Default::default()
            });
        };
        let update = lifelong_update(&mut self.policy, &data, &self.memory, &self.cfg, &mut self.rng)?;
        let k = self.increment_for(data.len()).min(data.len());
        for i in rand::seq::index::sample(&mut self.rng, data.len(), k) {
            self.memory.push_raw(data.samples[i]);
        }
        Ok(TriggerReport {
            trigger_id,
            n_incremental: data.len(),
            n_screened: data.len(),
            n_mem_before,
            n_mem_after: self.memory.len(),
            update: Some(update),
            update_wall_s: started.elapsed().as_secs_f64(),
        })
    }

    fn memory_len(&self) -> usize {
        self.memory.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::Normalizer;
    use crate::policy::N_FEATURES;
    use crate::sim::{LogRow, VehicleState};

    fn policy(seed: u64) -> Policy {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Policy::new(&[8], Normalizer::identity(N_FEATURES), &mut rng)
    }

    fn straight_log(n: usize) -> DrivingLog {
        DrivingLog {
            rows: (0..n)
                .map(|k| {
                    let s = VehicleState::new(k as f64, 0.0, 0.0, 10.0);
                    LogRow::new(k as f64 * 0.1, &s, 0.0, 0.0, 0.0, 0)
                })
                .collect(),
        }
    }

    #[test]
    fn lll_increment_is_ceiling_of_ten_percent() {
        let mem = EpisodicMemory::from_entries(
            vec![Sample::new([10.0, 0.0, 0.0], [0.0, 0.0], 0.0)],
            0.02,
            Normalizer::identity(N_FEATURES),
        );
        let cfg = EvalConfig { update_epochs: 1, ..EvalConfig::default() };
        let mut lll = LllLearner::new(policy(0), mem, cfg, 5, None, 0.5, 3);
        assert_eq!(lll.increment_for(145), 15);
        assert_eq!(lll.increment_for(150), 15);
        assert_eq!(lll.increment_for(1), 1);
        let r = lll.learn(&straight_log(26), 0).unwrap();
        assert_eq!(r.n_incremental, 21);
        assert_eq!(r.n_mem_after - r.n_mem_before, 3);
    }

    #[test]
    fn retrain_accumulates_and_restarts_from_initial() {
        let demo = Dataset::new(
            vec![Sample::new([10.0, 0.0, 0.0], [0.0, 0.0], 0.0); 4],
            Provenance::Demonstration,
        );
        let il = IlConfig { epochs: 2, ..IlConfig::default() };
        let mut r = RetrainLearner::new(policy(1), policy(1), demo, il, 5, 0.5, 9);
        let a = r.learn(&straight_log(16), 0).unwrap();
        let b = r.learn(&straight_log(16), 1).unwrap();
        assert_eq!(a.n_mem_after, 4 + 11);
        assert_eq!(b.n_mem_after, 4 + 22);
        assert!(b.n_mem_after > a.n_mem_after);
    }

    #[test]
    fn frozen_never_changes() {
        let mut f = FrozenLearner { policy: policy(2), steer_limit: 0.5 };
        let before = f.policy.clone();
        f.learn(&straight_log(30), 0).unwrap();
        assert_eq!(f.policy, before);
    }
}
