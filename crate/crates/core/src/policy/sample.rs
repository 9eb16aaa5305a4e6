use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::sim::{TransitionFeatures, VehicleState};
use crate::Result;

/// Number of policy input features: `(vx, vy, yaw_rate, dy_body, dpsi)`.
pub const N_FEATURES: usize = 5;

/// Policy input for a vehicle state and a body-frame transition.
///
/// Every learner builds its inputs through this one function.
pub fn policy_features(state: &VehicleState, transition: &TransitionFeatures) -> [f64; N_FEATURES] {
    [
        state.vx,
        state.vy,
        state.yaw_rate,
        transition.dy_body,
        transition.dpsi,
    ]
}

/// One knowledge tuple: state, realized (or targeted) transition, steer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub state_feat: [f64; 3],
    pub transition_feat: [f64; 2],
    pub steer: f64,
    /// Cached evaluation score, `steer^2`.
    pub effort: f64,
}

impl Sample {
    pub fn new(state_feat: [f64; 3], transition_feat: [f64; 2], steer: f64) -> Self {
        Self {
            state_feat,
            transition_feat,
            steer,
            effort: steer * steer,
        }
    }

    pub fn from_features(f: &[f64; N_FEATURES], steer: f64) -> Self {
        Self::new([f[0], f[1], f[2]], [f[3], f[4]], steer)
    }

    pub fn features(&self) -> [f64; N_FEATURES] {
        [
            self.state_feat[0],
            self.state_feat[1],
            self.state_feat[2],
            self.transition_feat[0],
            self.transition_feat[1],
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Demonstration,
    /// Execution data from one epoch or section.
    Execution(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub provenance: Provenance,
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleRow {
    vx: f64,
    vy: f64,
    yaw_rate: f64,
    dy_body: f64,
    dpsi: f64,
    steer: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct MemoryRow {
    vx: f64,
    vy: f64,
    yaw_rate: f64,
    dy_body: f64,
    dpsi: f64,
    steer: f64,
    effort: f64,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, provenance: Provenance) -> Self {
        Self { samples, provenance }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn features(&self) -> Vec<[f64; N_FEATURES]> {
        self.samples.iter().map(Sample::features).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_samples(path, &self.samples, false)
    }

    pub fn read_csv(path: &Path, provenance: Provenance) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let samples = rdr
            .deserialize()
            .map(|r| {
                r.map(|r: SampleRow| {
                    Sample::new([r.vx, r.vy, r.yaw_rate], [r.dy_body, r.dpsi], r.steer)
                })
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self::new(samples, provenance))
    }
}

/// Writes samples as CSV, with the `effort` column when `with_effort`.
pub fn write_samples(path: &Path, samples: &[Sample], with_effort: bool) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if samples.is_empty() {
        let mut header = vec!["vx", "vy", "yaw_rate", "dy_body", "dpsi", "steer"];
        if with_effort {
            header.push("effort");
        }
        w.write_record(header)?;
    }
    for s in samples {
        let [vx, vy, yaw_rate] = s.state_feat;
        let [dy_body, dpsi] = s.transition_feat;
        if with_effort {
            w.serialize(MemoryRow { vx, vy, yaw_rate, dy_body, dpsi, steer: s.steer, effort: s.effort })?;
        } else {
            w.serialize(SampleRow { vx, vy, yaw_rate, dy_body, dpsi, steer: s.steer })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a memory CSV (dataset schema plus `effort`).
pub fn read_memory_samples(path: &Path) -> Result<Vec<Sample>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let rows = rdr
        .deserialize()
        .map(|r| r.map(|r: MemoryRow| Sample::new([r.vx, r.vy, r.yaw_rate], [r.dy_body, r.dpsi], r.steer)))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn feature_conversion_round_trips(
            vx in 1.0f64..30.0, vy in -2.0f64..2.0, r in -1.0f64..1.0,
            dy in -5.0f64..5.0, dpsi in -3.0f64..3.0, steer in -0.5f64..0.5,
        ) {
            let st = VehicleState { pos_x: 3.0, pos_y: -4.0, yaw: 1.0, vx, vy, yaw_rate: r };
            let f = policy_features(&st, &TransitionFeatures { dy_body: dy, dpsi });
            let s = Sample::from_features(&f, steer);
            prop_assert_eq!(s.features(), f);
            prop_assert_eq!(s.effort, steer * steer);
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("d.csv");
        let d = Dataset::new(
            vec![
                Sample::new([10.0, 0.1, 0.02], [0.3, 0.05], 0.04),
                Sample::new([5.0, -0.1, -0.2], [-0.1, -0.02], -0.1),
            ],
            Provenance::Demonstration,
        );
        d.write_csv(&f).unwrap();
        let text = std::fs::read_to_string(&f).unwrap();
        assert!(text.starts_with("vx,vy,yaw_rate,dy_body,dpsi,steer\n"));
        assert_eq!(Dataset::read_csv(&f, Provenance::Demonstration).unwrap(), d);

        write_samples(&f, &d.samples, true).unwrap();
        let text = std::fs::read_to_string(&f).unwrap();
        assert!(text.starts_with("vx,vy,yaw_rate,dy_body,dpsi,steer,effort\n"));
        assert_eq!(read_memory_samples(&f).unwrap(), d.samples);
    }
}
