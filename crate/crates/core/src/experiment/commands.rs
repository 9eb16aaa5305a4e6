//! The work behind each CLI subcommand, as library calls.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::experiment::config::{derive_seed, streams, CompareConfig, ExperimentConfig, Method};
use crate::experiment::pipeline::{
    corrupt_log, demo_samples, files, generate_demo, load_base, read_summary, run_method, train_base,
    write_config, write_run, write_summary, BaseArtifacts, RunOutcome, SummaryRow,
};
use crate::policy::{Dataset, Provenance};
use crate::sim::TrajectoryLog;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DemoOutcome {
    pub log_rows: usize,
    pub samples: usize,
}

/// Writes the demonstration log, its samples and their normalizer.
pub fn cmd_demo_gen(cfg: &ExperimentConfig) -> Result<DemoOutcome> {
    let dir = &cfg.output_dir;
    write_config(dir, cfg)?;
    let (log, data) = generate_demo(cfg, &Default::default())?;
    log.write_csv(&dir.join(files::DEMO_LOG))?;
    data.write_csv(&dir.join(files::DEMO_SAMPLES))?;
    let normalizer = crate::mlp::Normalizer::fit(&data.features())?;
    std::fs::write(dir.join(files::NORMALIZER), normalizer.to_text())?;
    log::info!("demonstration: {} rows, {} samples -> {}", log.len(), data.len(), dir.display());
    Ok(DemoOutcome { log_rows: log.len(), samples: data.len() })
}

/// Trains the base policy from the demonstration samples in the artifacts
/// directory and writes both the untrained and trained networks.
pub fn cmd_train_il(cfg: &ExperimentConfig) -> Result<Vec<f64>> {
    let src = cfg.artifacts_dir();
    let samples = src.join(files::DEMO_SAMPLES);
    if !samples.is_file() {
        return Err(Error::MissingArtifact(samples.display().to_string()));
    }
    let demo = Dataset::read_csv(&samples, Provenance::Demonstration)?;
    let dir = &cfg.output_dir;
    write_config(dir, cfg)?;
    let (initial, policy, report) = train_base(cfg, &demo)?;
    initial.save(&dir.join(files::INITIAL_POLICY))?;
    policy.save(&dir.join(files::POLICY))?;
    let mut w = csv::Writer::from_path(dir.join(files::IL_LOSSES))?;
    w.write_record(["epoch", "loss"])?;
    w.write_record(["0".to_string(), report.initial_loss.to_string()])?;
    for (i, l) in report.epoch_losses.iter().enumerate() {
        w.write_record([(i + 1).to_string(), l.to_string()])?;
    }
    w.flush()?;
    let mut losses = vec![report.initial_loss];
    losses.extend_from_slice(&report.epoch_losses);
    Ok(losses)
}

fn base_for(cfg: &ExperimentConfig) -> Result<Option<BaseArtifacts>> {
    if cfg.method.needs_policy() {
        Ok(Some(load_base(cfg.artifacts_dir(), cfg.method)?))
    } else {
        Ok(None)
    }
}

/// Runs the configured method and writes its outputs.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let base = base_for(cfg)?;
    write_config(&cfg.output_dir, cfg)?;
    let outcome = run_method(cfg, base.as_ref(), None, cfg.method.name())?;
    write_run(&cfg.output_dir, &outcome)?;
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseReport {
    pub clean_llpl_final: f64,
    pub noisy_llpl_final: f64,
    pub noisy_il_final: f64,
    /// `(noisy - clean) / clean` of the LLPL final RMSE, in percent.
    pub degradation_pct: f64,
    /// Reduction of noisy LLPL against noisy frozen IL, in percent.
    pub llpl_vs_il_pct: f64,
}

pub struct NoiseOutcome {
    pub clean: RunOutcome,
    pub noisy_llpl: RunOutcome,
    pub noisy_il: RunOutcome,
    pub report: NoiseReport,
}

fn pct_reduction(baseline: f64, value: f64) -> f64 {
    100.0 * (baseline - value) / baseline
}

/// LLPL trained on noisy logs (demonstration and execution alike), next to
/// frozen IL from the same noisy demonstration and to clean LLPL.
/// Policies always drive the clean simulator.
pub fn noise_replay(cfg: &ExperimentConfig, clean_base: &BaseArtifacts, demo_log: &TrajectoryLog) -> Result<NoiseOutcome> {
    let noise = cfg.sensor_noise;
    let llpl = ExperimentConfig { method: Method::Llpl, ..cfg.clone() };
    let noisy_base = if noise.is_zero() {
        clean_base.clone()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, streams::DEMO_NOISE));
        let noisy_log = corrupt_log(demo_log, &noise, &mut rng);
        let demo = demo_samples(cfg, &noisy_log)?;
        let (initial, policy, report) = train_base(cfg, &demo)?;
        BaseArtifacts { demo, demo_log: Some(noisy_log), initial: Some(initial), policy, report: Some(report) }
    };
    let clean = run_method(&llpl, Some(clean_base), None, "llpl_clean")?;
    let noisy_llpl = run_method(&llpl, Some(&noisy_base), Some(&noise), "llpl_noisy")?;
    let il = ExperimentConfig { method: Method::Il, ..cfg.clone() };
    let noisy_il = run_method(&il, Some(&noisy_base), None, "il_noisy")?;
    let report = NoiseReport {
        clean_llpl_final: clean.final_rmse(),
        noisy_llpl_final: noisy_llpl.final_rmse(),
        noisy_il_final: noisy_il.final_rmse(),
        degradation_pct: -pct_reduction(clean.final_rmse(), noisy_llpl.final_rmse()),
        llpl_vs_il_pct: pct_reduction(noisy_il.final_rmse(), noisy_llpl.final_rmse()),
    };
    Ok(NoiseOutcome { clean, noisy_llpl, noisy_il, report })
}

pub fn cmd_noise_replay(cfg: &ExperimentConfig) -> Result<NoiseOutcome> {
    let src = cfg.artifacts_dir();
    let log_path = src.join(files::DEMO_LOG);
    if !log_path.is_file() {
        return Err(Error::MissingArtifact(log_path.display().to_string()));
    }
    let base = load_base(src, Method::Llpl)?;
    let demo_log = TrajectoryLog::read_csv(&log_path)?;
    let dir = &cfg.output_dir;
    write_config(dir, cfg)?;
    let out = noise_replay(cfg, &base, &demo_log)?;
    for run in [&out.clean, &out.noisy_llpl, &out.noisy_il] {
        write_run(&dir.join(&run.method), run)?;
    }
    let mut all: Vec<SummaryRow> = Vec::new();
    for run in [&out.clean, &out.noisy_llpl, &out.noisy_il] {
        all.extend(run.summary.iter().cloned());
    }
    write_summary(&dir.join(files::SUMMARY), &all)?;
    let mut w = csv::Writer::from_path(dir.join(files::NOISE_REPORT))?;
    w.serialize(&out.report)?;
    w.flush()?;
    log::info!(
        "noise replay: clean {:.4}, noisy llpl {:.4}, noisy il {:.4}",
        out.report.clean_llpl_final,
        out.report.noisy_llpl_final,
        out.report.noisy_il_final
    );
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub method: String,
    pub epoch: usize,
    pub rmse_e_lat: f64,
    pub rmse_e_head: f64,
    pub effort: f64,
    pub mem_size: usize,
    /// RMSE reduction against the baseline at the same epoch, in percent.
    pub pct_vs_baseline: f64,
}

/// Joins summaries on epoch against the baseline's first method.
pub fn compare_summaries(baseline: &[SummaryRow], runs: &[Vec<SummaryRow>]) -> Vec<CompareRow> {
    let base_method = baseline.first().map(|r| r.method.as_str()).unwrap_or("");
    let base_at = |epoch: usize| {
        baseline
            .iter()
            .find(|r| r.method == base_method && r.epoch == epoch)
            .map(|r| r.rmse_e_lat)
    };
    runs.iter()
        .flatten()
        .map(|r| CompareRow {
            method: r.method.clone(),
            epoch: r.epoch,
            rmse_e_lat: r.rmse_e_lat,
            rmse_e_head: r.rmse_e_head,
            effort: r.effort,
            mem_size: r.mem_size,
            pct_vs_baseline: base_at(r.epoch).map_or(f64::NAN, |b| {
                if b == r.rmse_e_lat {
                    0.0
                } else {
                    pct_reduction(b, r.rmse_e_lat)
                }
            }),
        })
        .collect()
}

fn summary_in(dir: &Path) -> Result<Vec<SummaryRow>> {
    let p = dir.join(files::SUMMARY);
    if !p.is_file() {
        return Err(Error::MissingArtifact(format!("run summary {}", p.display())));
    }
    read_summary(&p)
}

pub fn cmd_compare(cfg: &CompareConfig) -> Result<Vec<CompareRow>> {
    let baseline = summary_in(&cfg.baseline)?;
    let runs = cfg.runs.iter().map(|d| summary_in(d)).collect::<Result<Vec<_>>>()?;
    let table = compare_summaries(&baseline, &runs);
    std::fs::create_dir_all(&cfg.output_dir)?;
    let mut w = csv::Writer::from_path(cfg.output_dir.join(files::COMPARE))?;
    for row in &table {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(table)
}
