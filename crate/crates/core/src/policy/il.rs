//! Inverse-dynamics imitation: label realized transitions with the steer
//! that produced them, then regress steer on (state, transition).

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::mlp::{Activation, MlpModel, Normalizer};
use crate::policy::sample::{policy_features, Dataset, Provenance, Sample, N_FEATURES};
use crate::sim::{relative_pose, LogRow, Observation, SteeringController, TrajectoryLog};
use crate::{Error, Result};

pub type DrivingLog = TrajectoryLog;

/// Builds inverse-dynamics samples from a log.
///
/// Windows never straddle a change of the `section` tag. When
/// `max_steer_deviation` is set, windows whose steer strays further than that
/// from the window-start steer are dropped.
pub fn extract_samples(
    log: &DrivingLog,
    window_steps: usize,
    max_steer_deviation: Option<f64>,
    provenance: Provenance,
) -> Result<Dataset> {
    let w = window_steps.max(1);
    if log.len() <= w {
        return Err(Error::LogTooShort { len: log.len(), window: w });
    }
    let mut samples = Vec::new();
    for run in contiguous_runs(&log.rows) {
        if run.len() <= w {
            continue;
        }
        for k in 0..run.len() - w {
            let start = &run[k];
            if let Some(limit) = max_steer_deviation {
                let strays = run[k..k + w]
                    .iter()
                    .any(|r| (r.steer - start.steer).abs() > limit);
                if strays {
                    continue;
                }
            }
            samples.push(sample_for_window(start, &run[k + w]));
        }
    }
    Ok(Dataset::new(samples, provenance))
}

pub(crate) fn sample_for_window(start: &LogRow, end: &LogRow) -> Sample {
    let transition = relative_pose(
        (start.pos_x, start.pos_y, start.yaw),
        (end.pos_x, end.pos_y, end.yaw),
    );
    Sample::from_features(&policy_features(&start.state(), &transition), start.steer)
}

/// Splits rows into maximal runs sharing a section tag.
pub(crate) fn contiguous_runs(rows: &[LogRow]) -> Vec<&[LogRow]> {
    let mut runs = Vec::new();
    let mut start = 0;
    for i in 1..=rows.len() {
        if i == rows.len() || rows[i].section != rows[start].section {
            runs.push(&rows[start..i]);
            start = i;
        }
    }
    runs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IlConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Constant-steer filter for sample extraction (radians); `None` keeps every window.
    pub max_steer_deviation: Option<f64>,
}

impl Default for IlConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            epochs: 150,
            batch_size: 1,
            lr: 1e-2,
            max_steer_deviation: Some(0.05),
        }
    }
}

/// Learned steering policy: network plus its input normalizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub model: MlpModel,
    pub normalizer: Normalizer,
}

impl Policy {
    pub fn new<R: Rng + ?Sized>(hidden: &[usize], normalizer: Normalizer, rng: &mut R) -> Self {
        let mut sizes = vec![N_FEATURES];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Self {
            model: MlpModel::new(&sizes, Activation::Tanh, rng),
            normalizer,
        }
    }

    /// Unclipped network output for raw features.
    pub fn predict(&self, features: &[f64; N_FEATURES]) -> f64 {
        self.model
            .forward(&self.normalizer.apply(features))
            .expect("policy input width is fixed")[0]
    }

    /// Clipped steer for the current observation.
    pub fn act(&self, obs: &Observation<'_>, steer_limit: f64) -> f64 {
        self.predict(&policy_features(&obs.state, &obs.target))
            .clamp(-steer_limit, steer_limit)
    }

    pub fn normalized_inputs(&self, samples: &[Sample]) -> Vec<Vec<f64>> {
        samples.iter().map(|s| self.normalizer.apply(&s.features())).collect()
    }

    /// Mean squared steer error on `samples`.
    pub fn loss(&self, samples: &[Sample]) -> Result<f64> {
        let xs = self.normalized_inputs(samples);
        let ys = targets(samples);
        self.model.mse(&xs, &ys)
    }

    pub fn to_text(&self) -> String {
        let mut s = self.model.to_text();
        s.push_str(&self.normalizer.to_text());
        s
    }

    pub fn from_text(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines();
        let model = MlpModel::from_lines(&mut lines)?;
        let normalizer = Normalizer::from_lines(&mut lines)?;
        if model.input_dim() != N_FEATURES || model.output_dim() != 1 || normalizer.dim() != N_FEATURES {
            return Err("policy checkpoint has wrong shape".into());
        }
        Ok(Self { model, normalizer })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text).map_err(|reason| Error::Format {
            path: path.display().to_string(),
            reason,
        })
    }
}

pub(crate) fn targets(samples: &[Sample]) -> Vec<[f64; 1]> {
    samples.iter().map(|s| [s.steer]).collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub initial_loss: f64,
    /// Full-dataset loss after each epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(self.initial_loss)
    }
}

/// Minibatch SGD on the steer MSE.
///
/// On a non-finite loss the parameters are rolled back to the end of the
/// last completed epoch and `NonFiniteLoss` is returned.
pub fn train_il<R: Rng + ?Sized>(
    policy: &mut Policy,
    data: &Dataset,
    cfg: &IlConfig,
    rng: &mut R,
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let xs = policy.normalized_inputs(&data.samples);
    let ys = targets(&data.samples);
    let mut report = TrainReport {
        initial_loss: policy.model.mse(&xs, &ys)?,
        epoch_losses: Vec::with_capacity(cfg.epochs),
    };
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let batch = cfg.batch_size.max(1);
    for _ in 0..cfg.epochs {
        let good = policy.model.clone_params();
        order.shuffle(rng);
        for chunk in order.chunks(batch) {
            let bx: Vec<&[f64]> = chunk.iter().map(|&i| xs[i].as_slice()).collect();
            let by: Vec<&[f64]> = chunk.iter().map(|&i| ys[i].as_slice()).collect();
            match policy.model.backward_mse(&bx, &by) {
                Ok((_, g)) => policy.model.sgd_step(&g, cfg.lr)?,
                Err(e) => {
                    policy.model.load_params(&good)?;
                    return Err(e);
                }
            }
        }
        let loss = policy.model.mse(&xs, &ys)?;
        if !loss.is_finite() {
            policy.model.load_params(&good)?;
            return Err(Error::NonFiniteLoss);
        }
        report.epoch_losses.push(loss);
    }
    Ok(report)
}

/// Closed-loop controller around a policy.
pub struct PolicyController<'p> {
    pub policy: &'p Policy,
    pub steer_limit: f64,
}

impl SteeringController for PolicyController<'_> {
    fn command(&mut self, obs: &Observation<'_>) -> Result<f64> {
        Ok(self.policy.act(obs, self.steer_limit))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{advance, wrap_angle, VehicleParams, VehicleState};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn log_from(states: &[(VehicleState, f64)], section: usize) -> DrivingLog {
        DrivingLog {
            rows: states
                .iter()
                .enumerate()
                .map(|(k, (s, d))| LogRow::new(k as f64 * 0.1, s, *d, 0.0, 0.0, section))
                .collect(),
        }
    }

    fn simulate(start: VehicleState, steers: &[f64]) -> Vec<(VehicleState, f64)> {
        let p = VehicleParams::default();
        let mut s = start;
        steers
            .iter()
            .map(|&d| {
                let row = (s, d);
                s = advance(&s, d, &p, 0.1, 0.01).unwrap();
                row
            })
            .collect()
    }

    #[test]
    fn counts_windows() {
        let rows = simulate(VehicleState::new(0.0, 0.0, 0.0, 10.0), &[0.0; 6]);
        let d = extract_samples(&log_from(&rows, 0), 5, None, Provenance::Demonstration).unwrap();
        assert_eq!(d.len(), 1);
        assert!(matches!(
            extract_samples(&log_from(&rows[..5], 0), 5, None, Provenance::Demonstration),
            Err(Error::LogTooShort { .. })
        ));
    }

    #[test]
    fn straight_log_gives_zero_transitions() {
        let rows = simulate(VehicleState::new(3.0, 4.0, 0.4, 10.0), &[0.0; 40]);
        let d = extract_samples(&log_from(&rows, 0), 5, Some(0.05), Provenance::Demonstration).unwrap();
        assert_eq!(d.len(), 35);
        for s in &d.samples {
            assert!(s.transition_feat[0].abs() < 1e-12 && s.transition_feat[1].abs() < 1e-12);
            assert_eq!(s.steer, 0.0);
        }
    }

    #[test]
    fn steady_circle_heading_change() {
        // circular motion with r = 0.2 rad/s, window 0.5 s => dpsi = 0.1
        let rows: Vec<(VehicleState, f64)> = (0..20)
            .map(|k| {
                let yaw = 0.2 * 0.1 * k as f64;
                let state = VehicleState { pos_x: 0.0, pos_y: 0.0, yaw: wrap_angle(yaw), vx: 10.0, vy: 0.0, yaw_rate: 0.2 };
                (state, 0.0)
            })
            .collect();
        let d = extract_samples(&log_from(&rows, 0), 5, None, Provenance::Demonstration).unwrap();
        for s in &d.samples {
            assert!((s.transition_feat[1] - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn windows_do_not_cross_sections_and_filter_applies() {
        let mut rows = simulate(VehicleState::new(0.0, 0.0, 0.0, 10.0), &[0.05; 10]);
        let mut log = log_from(&rows, 0);
        rows = simulate(VehicleState::new(0.0, 0.0, 0.0, 5.0), &[0.0, 0.0, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2]);
        log.rows.extend(log_from(&rows, 1).rows);
        let all = extract_samples(&log, 5, None, Provenance::Demonstration).unwrap();
        assert_eq!(all.len(), 10);
        let filtered = extract_samples(&log, 5, Some(0.05), Provenance::Demonstration).unwrap();
        // windows starting at k=0,1 of the second run see the 0.2 step
        assert_eq!(filtered.len(), 8);
    }

    #[test]
    fn inverse_dynamics_consistency() {
        let p = VehicleParams::default();
        let start = VehicleState { pos_x: 1.0, pos_y: 2.0, yaw: 0.3, vx: 12.0, vy: 0.05, yaw_rate: -0.02 };
        let rows = simulate(start, &[0.08; 6]);
        let d = extract_samples(&log_from(&rows, 0), 5, Some(0.05), Provenance::Demonstration).unwrap();
        let s = d.samples[0];
        let end = advance(&start, s.steer, &p, 0.5, 0.01).unwrap();
        let t = relative_pose((start.pos_x, start.pos_y, start.yaw), (end.pos_x, end.pos_y, end.yaw));
        assert!((t.dy_body - s.transition_feat[0]).abs() < 1e-6);
        assert!((t.dpsi - s.transition_feat[1]).abs() < 1e-8);
    }

    #[test]
    fn rigid_transform_invariance() {
        let rows = simulate(
            VehicleState::new(0.0, 0.0, 0.0, 10.0),
            &(0..30).map(|k| 0.1 * (k as f64 * 0.2).sin()).collect::<Vec<_>>(),
        );
        let (th, tx, ty) = (1.1f64, 50.0, -20.0);
        let moved: Vec<(VehicleState, f64)> = rows
            .iter()
            .map(|(s, d)| {
                let (sin, cos) = th.sin_cos();
                let st = VehicleState {
                    pos_x: cos * s.pos_x - sin * s.pos_y + tx,
                    pos_y: sin * s.pos_x + cos * s.pos_y + ty,
                    yaw: wrap_angle(s.yaw + th),
                    ..*s
                };
                (st, *d)
            })
            .collect();
        let a = extract_samples(&log_from(&rows, 0), 5, None, Provenance::Demonstration).unwrap();
        let b = extract_samples(&log_from(&moved, 0), 5, None, Provenance::Demonstration).unwrap();
        for (x, y) in a.samples.iter().zip(&b.samples) {
            for (u, v) in x.features().iter().zip(y.features()) {
                assert!((u - v).abs() < 1e-9);
            }
            assert_eq!(x.steer, y.steer);
        }
    }

    #[test]
    fn single_sample_is_fit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = Dataset::new(vec![Sample::new([10.0, 0.1, 0.05], [0.4, 0.08], 0.07)], Provenance::Demonstration);
        let norm = Normalizer::identity(N_FEATURES);
        let mut policy = Policy::new(&[16, 16], norm, &mut rng);
        let cfg = IlConfig { epochs: 2000, batch_size: 1, lr: 1e-2, ..IlConfig::default() };
        let report = train_il(&mut policy, &data, &cfg, &mut rng).unwrap();
        assert!(report.final_loss() < 1e-8, "{}", report.final_loss());
        assert!(report.final_loss() <= report.initial_loss);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut policy = Policy::new(&[4], Normalizer::identity(N_FEATURES), &mut rng);
        let data = Dataset::new(vec![], Provenance::Demonstration);
        assert!(matches!(
            train_il(&mut policy, &data, &IlConfig::default(), &mut rng),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn saturating_target_clips() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut policy = Policy::new(&[4], Normalizer::identity(N_FEATURES), &mut rng);
        // make the output grow with dy_body
        policy.model = MlpModel::zeros(&[5, 1], Activation::Tanh);
        policy.model.load_params(&[0.0, 0.0, 0.0, 0.1, 0.0, 0.0]).unwrap();
        let path = crate::sim::double_lane_change().unwrap();
        let state = VehicleState::new(0.0, 0.0, 0.0, 10.0);
        let error = path.tracking_error(&state, 0.0).unwrap();
        let obs = Observation {
            state,
            error,
            target: crate::sim::TransitionFeatures { dy_body: 100.0, dpsi: 0.0 },
            curvature: 0.0,
            path: &path,
        };
        assert_eq!(policy.act(&obs, 0.5), 0.5);
        let obs = Observation { target: crate::sim::TransitionFeatures { dy_body: -100.0, dpsi: 0.0 }, ..obs };
        assert_eq!(policy.act(&obs, 0.5), -0.5);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let norm = Normalizer { mean: vec![1.0, 2.0, 3.0, 4.0, 5.0], std: vec![0.5; 5] };
        let policy = Policy::new(&[8, 8], norm, &mut rng);
        let back = Policy::from_text(&policy.to_text()).unwrap();
        assert_eq!(back, policy);
    }

}
