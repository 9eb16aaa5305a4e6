//! Scenario paths: ISO-3888-style double lane change, a procedurally
//! generated 7 km curved road, and user waypoint files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::sim::path::ReferencePath;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Scenario {
    DoubleLaneChange,
    CurvedRoad,
    FromWaypoints { path: PathBuf },
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario::DoubleLaneChange
    }
}

pub const LANE_OFFSET: f64 = 3.5;
pub const CURVED_SECTION_LENGTH: f64 = 1000.0;
pub const CURVED_SECTIONS: usize = 7;

pub fn build_scenario(scenario: &Scenario) -> Result<ReferencePath> {
    match scenario {
        Scenario::DoubleLaneChange => double_lane_change(),
        Scenario::CurvedRoad => curved_road(),
        Scenario::FromWaypoints { path } => {
            let pts = read_waypoints(path)?;
            ReferencePath::from_waypoints(&pts, vec![])
        }
    }
}

fn blend(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    0.5 * (1.0 - (std::f64::consts::PI * u).cos())
}

/// Straight 50 m, shift +3.5 m over 30 m, hold 25 m, return over 30 m,
/// straight 50 m.
pub fn double_lane_change() -> Result<ReferencePath> {
    let offset = |x: f64| {
        if x <= 50.0 {
            0.0
        } else if x <= 80.0 {
            LANE_OFFSET * blend((x - 50.0) / 30.0)
        } else if x <= 105.0 {
            LANE_OFFSET
        } else if x <= 135.0 {
            LANE_OFFSET * (1.0 - blend((x - 105.0) / 30.0))
        } else {
            0.0
        }
    };
    let pts: Vec<(f64, f64)> = (0..=370)
        .map(|i| {
            let x = i as f64 * 0.5;
            (x, offset(x))
        })
        .collect();
    ReferencePath::from_waypoints(&pts, vec![0.0])
}

/// Curvature profile of one curved-road section: `blocks` arcs of equal
/// length, each ramping up over a quarter, holding, and ramping down.
fn section_curvature(peaks: &[f64], s: f64) -> f64 {
    let block = CURVED_SECTION_LENGTH / peaks.len() as f64;
    let i = ((s / block) as usize).min(peaks.len() - 1);
    let u = (s - i as f64 * block) / block;
    let shape = if u < 0.25 {
        u / 0.25
    } else if u < 0.75 {
        1.0
    } else {
        (1.0 - u) / 0.25
    };
    peaks[i] * shape
}

fn curved_road_peaks(section: usize) -> Vec<f64> {
    // Sharp curves first (12 m/s), gentle sweepers after (20 m/s).
    const SHARP: [f64; 6] = [0.020, -0.014, 0.018, -0.010, 0.016, -0.012];
    const GENTLE: [f64; 4] = [0.007, -0.004, 0.006, -0.003];
    let rotate = |v: &[f64], k: usize| -> Vec<f64> {
        let n = v.len();
        (0..n)
            .map(|i| {
                let mag = v[(i + k) % n].abs();
                if i % 2 == 0 { mag } else { -mag }
            })
            .collect()
    };
    if section < 3 {
        let mut p = rotate(&SHARP, section * 2);
        if section % 2 == 1 {
            p.iter_mut().for_each(|k| *k = -*k);
        }
        p
    } else {
        let mut p = rotate(&GENTLE, section);
        if section % 2 == 0 {
            p.iter_mut().for_each(|k| *k = -*k);
        }
        p
    }
}

/// Signed curvature of the curved road at arclength `s`.
pub fn curved_road_curvature(s: f64) -> f64 {
    let section = (s / CURVED_SECTION_LENGTH) as usize;
    if section >= CURVED_SECTIONS {
        return 0.0;
    }
    section_curvature(
        &curved_road_peaks(section),
        s - section as f64 * CURVED_SECTION_LENGTH,
    )
}

/// Seven 1 km sections plus a short straight run-out.
pub fn curved_road() -> Result<ReferencePath> {
    const DS: f64 = 0.1;
    const RUN_OUT: f64 = 60.0;
    const WAYPOINT_SPACING: f64 = 2.0;
    let total = CURVED_SECTION_LENGTH * CURVED_SECTIONS as f64 + RUN_OUT;
    let steps = (total / DS).round() as usize;
    let every = (WAYPOINT_SPACING / DS).round() as usize;
    let (mut x, mut y, mut th) = (0.0f64, 0.0f64, 0.0f64);
    let mut pts = vec![(x, y)];
    for i in 0..steps {
        let s = i as f64 * DS;
        let th_mid = th + 0.5 * DS * curved_road_curvature(s + 0.25 * DS);
        let th_next = th + DS * curved_road_curvature(s + 0.5 * DS);
        x += DS * th_mid.cos();
        y += DS * th_mid.sin();
        th = th_next;
        if (i + 1) % every == 0 {
            pts.push((x, y));
        }
    }
    let bounds = (0..CURVED_SECTIONS)
        .map(|i| i as f64 * CURVED_SECTION_LENGTH)
        .collect();
    ReferencePath::from_waypoints(&pts, bounds)
}

pub fn read_waypoints(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["x_m", "y_m"] {
        return Err(Error::Format {
            path: path.display().to_string(),
            reason: format!("expected header `x_m,y_m`, got `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut pts = Vec::new();
    for rec in rdr.deserialize() {
        let (x, y): (f64, f64) = rec?;
        pts.push((x, y));
    }
    Ok(pts)
}

pub fn write_waypoints(path: &Path, pts: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x_m", "y_m"])?;
    for (x, y) in pts {
        w.serialize((x, y))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn double_lane_change_geometry() {
        let p = double_lane_change().unwrap();
        // the lane shifts add a fraction of a meter over the 185 m run
        assert!((p.length() - 185.0).abs() < 1.0, "{}", p.length());
        let (x_end, _) = p.position(p.length());
        assert!((x_end - 185.0).abs() < 1e-9);
        let max_off = (0..=1850)
            .map(|i| p.position(p.length() * i as f64 / 1850.0).1.abs())
            .fold(0.0, f64::max);
        assert!((max_off - 3.5).abs() < 1e-3, "{max_off}");
    }

    #[test]
    fn curved_road_sections() {
        let p = curved_road().unwrap();
        assert!(p.length() >= 7000.0);
        assert_eq!(p.section_boundaries().len(), 7);
        for (i, b) in p.section_boundaries().iter().enumerate() {
            assert_eq!(*b, 1000.0 * i as f64);
        }
        let max_k = |lo: f64, hi: f64| {
            let n = ((hi - lo) / 1.0) as usize;
            (0..n).map(|i| p.curvature(lo + i as f64).abs()).fold(0.0, f64::max)
        };
        let sharp = max_k(10.0, 2990.0);
        let gentle = max_k(3010.0, 6990.0);
        assert!(sharp > 0.015 && sharp < 0.0205, "{sharp}");
        assert!(gentle < 0.0072, "{gentle}");
    }

    #[test]
    fn waypoint_file_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("wp.csv");
        write_waypoints(&f, &[(0.0, 0.0), (10.0, 0.0), (20.0, 1.0)]).unwrap();
        let sc = Scenario::FromWaypoints { path: f.clone() };
        assert!(matches!(build_scenario(&sc), Err(Error::BadWaypoints(_))));
        write_waypoints(&f, &[(0.0, 0.0), (10.0, 0.0), (20.0, 1.0), (30.0, 3.0)]).unwrap();
        let p = build_scenario(&sc).unwrap();
        assert!(p.length() > 30.0);
    }
}
