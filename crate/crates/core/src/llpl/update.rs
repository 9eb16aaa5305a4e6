use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::llpl::agem::{agem_project, ProjectionOutcome};
use crate::llpl::memory::{EpisodicMemory, EvalScore};
use crate::policy::{targets, Dataset, Policy, Sample};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Screening threshold on squared normalized distance.
    pub eta_d: f64,
    /// Memory neighborhood threshold on squared normalized distance.
    pub eta_m: f64,
    pub ref_batch_size: usize,
    pub update_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub score: EvalScore,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            eta_d: 0.02,
            eta_m: 0.02,
            ref_batch_size: 256,
            update_epochs: 20,
            batch_size: 4,
            lr: 1e-3,
            score: EvalScore::ControlEffort,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta_d > 0.0 && self.eta_m > 0.0) {
            return Err(Error::Config("eta_d and eta_m must be positive".into()));
        }
        if self.lr <= 0.0 || self.batch_size == 0 || self.ref_batch_size == 0 {
            return Err(Error::Config("lr, batch_size and ref_batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    /// Project every step against a fresh memory reference gradient.
    AGem,
    /// Plain SGD on the incremental data.
    None,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateReport {
    pub n_data: usize,
    pub loss_data_pre: f64,
    pub loss_data_post: f64,
    pub loss_mem_pre: f64,
    pub loss_mem_post: f64,
    /// Fraction of optimizer steps whose gradient was projected.
    pub proj_rate: f64,
    pub steps: usize,
    pub wall_s: f64,
}

/// Fine-tunes `policy` on `data` under the A-GEM constraint from `memory`.
pub fn lifelong_update<R: Rng + ?Sized>(
    policy: &mut Policy,
    data: &Dataset,
    memory: &EpisodicMemory,
    cfg: &EvalConfig,
    rng: &mut R,
) -> Result<UpdateReport> {
    constrained_update(policy, data, memory, cfg, Constraint::AGem, rng)
}

/// The update loop with a selectable constraint. On a non-finite loss the
/// policy is rolled back to its parameters on entry.
pub fn constrained_update<R: Rng + ?Sized>(
    policy: &mut Policy,
    data: &Dataset,
    memory: &EpisodicMemory,
    cfg: &EvalConfig,
    constraint: Constraint,
    rng: &mut R,
) -> Result<UpdateReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if memory.is_empty() {
        return Err(Error::EmptyMemory);
    }
    let started = Instant::now();
    let snapshot = policy.model.clone_params();
    let held_out = memory.sample_batch(cfg.ref_batch_size, rng);
    let result = run_steps(policy, data, memory, &held_out, cfg, constraint, rng);
    match result {
        Ok(mut report) => {
            report.wall_s = started.elapsed().as_secs_f64();
            if report.loss_mem_post > report.loss_mem_pre * 1.05 {
                log::info!(
                    "memory loss rose from {:.3e} to {:.3e} during update",
                    report.loss_mem_pre,
                    report.loss_mem_post
                );
            }
            Ok(report)
        }
        Err(e) => {
            policy.model.load_params(&snapshot)?;
            Err(e)
        }
    }
}

fn run_steps<R: Rng + ?Sized>(
    policy: &mut Policy,
    data: &Dataset,
    memory: &EpisodicMemory,
    held_out: &[Sample],
    cfg: &EvalConfig,
    constraint: Constraint,
    rng: &mut R,
) -> Result<UpdateReport> {
    let xs = policy.normalized_inputs(&data.samples);
    let ys = targets(&data.samples);
    let mut report = UpdateReport {
        n_data: data.len(),
        loss_data_pre: policy.model.mse(&xs, &ys)?,
        loss_mem_pre: policy.loss(held_out)?,
        ..Default::default()
    };
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut projected = 0usize;
    for _ in 0..cfg.update_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let bx: Vec<&[f64]> = chunk.iter().map(|&i| xs[i].as_slice()).collect();
            let by: Vec<&[f64]> = chunk.iter().map(|&i| ys[i].as_slice()).collect();
            let (_, g) = policy.model.backward_mse(&bx, &by)?;
            let step = match constraint {
                Constraint::None => g,
                Constraint::AGem => {
                    let batch = memory.sample_batch(cfg.ref_batch_size, rng);
                    let rx = policy.normalized_inputs(&batch);
                    let ry = targets(&batch);
                    let (_, g_ref) = policy.model.backward_mse(&rx, &ry)?;
                    let (g_tilde, outcome) = agem_project(&g, &g_ref);
                    if outcome == ProjectionOutcome::Projected {
                        projected += 1;
                    }
                    g_tilde
                }
            };
            policy.model.sgd_step(&step, cfg.lr)?;
            report.steps += 1;
        }
    }
    report.loss_data_post = policy.model.mse(&xs, &ys)?;
    report.loss_mem_post = policy.loss(held_out)?;
    if !report.loss_data_post.is_finite() || !report.loss_mem_post.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    report.proj_rate = if report.steps > 0 {
        projected as f64 / report.steps as f64
    } else {
        0.0
    };
    Ok(report)
}
