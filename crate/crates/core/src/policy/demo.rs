//! Synthetic "imperfect demonstrator": open-loop excitation steering that
//! never tracks any path, run once per cruise speed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::sim::{advance, Actuator, LogRow, SimConfig, TrajectoryLog, VehicleParams, VehicleState};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemoConfig {
    pub speeds: Vec<f64>,
    pub duration_per_speed: f64,
    /// Sinusoid frequency range in Hz.
    pub freq_range: (f64, f64),
    /// Sinusoid amplitude range as a fraction of the steer limit.
    pub amp_range: (f64, f64),
    /// Standard deviation of the band-limited noise as a fraction of the steer limit.
    pub noise_frac: f64,
    pub noise_cutoff_hz: f64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            speeds: vec![5.0, 10.0, 15.0, 20.0],
            duration_per_speed: 150.0,
            freq_range: (0.05, 0.5),
            amp_range: (0.02, 0.3),
            noise_frac: 0.02,
            noise_cutoff_hz: 1.0,
        }
    }
}

struct Excitation {
    freqs: [f64; 3],
    amps: [f64; 3],
    phases: [f64; 3],
}

impl Excitation {
    fn draw(rng: &mut ChaCha8Rng, cfg: &DemoConfig, steer_limit: f64) -> Self {
        let mut ex = Excitation { freqs: [0.0; 3], amps: [0.0; 3], phases: [0.0; 3] };
        for i in 0..3 {
            ex.freqs[i] = uniform(rng, cfg.freq_range);
            ex.amps[i] = uniform(rng, cfg.amp_range) * steer_limit;
            ex.phases[i] = rng.random_range(0.0..std::f64::consts::TAU);
        }
        ex
    }

    fn at(&self, t: f64) -> f64 {
        (0..3)
            .map(|i| self.amps[i] * (std::f64::consts::TAU * self.freqs[i] * t + self.phases[i]).sin())
            .sum()
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Open-loop excitation log. Each speed is one segment tagged by its index
/// in `section`; the pose resets to the origin between segments.
pub fn generate_demonstration(
    params: &VehicleParams,
    cfg: &DemoConfig,
    sim: &SimConfig,
    seed: u64,
) -> Result<TrajectoryLog> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let period = sim.control_period;
    let steps = (cfg.duration_per_speed / period).round() as usize;
    // first-order low-pass y += a (w - y); scale w so that std(y) = sigma
    let tau = 1.0 / (std::f64::consts::TAU * cfg.noise_cutoff_hz);
    let alpha = period / (period + tau);
    let sigma = cfg.noise_frac * params.steer_limit;
    let white = Normal::new(0.0, sigma * ((2.0 - alpha) / alpha).sqrt()).expect("finite sigma");
    let mut log = TrajectoryLog::default();
    let mut t = 0.0;
    for (seg, &speed) in cfg.speeds.iter().enumerate() {
        let ex = Excitation::draw(&mut rng, cfg, params.steer_limit);
        let mut noise = 0.0;
        let mut actuator = Actuator::new(params, period);
        let mut state = VehicleState::new(0.0, 0.0, 0.0, speed);
        for k in 0..steps {
            let local_t = k as f64 * period;
            let w = if sigma > 0.0 { white.sample(&mut rng) } else { 0.0 };
            noise += alpha * (w - noise);
            let steer = actuator.apply(ex.at(local_t) + noise);
            log.rows.push(LogRow::new(t, &state, steer, 0.0, 0.0, seg));
            state = advance(&state, steer, params, period, sim.integration_substep)?;
            t += period;
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_sized() {
        let p = VehicleParams::default();
        let cfg = DemoConfig::default();
        let sim = SimConfig::default();
        let a = generate_demonstration(&p, &cfg, &sim, 1).unwrap();
        let b = generate_demonstration(&p, &cfg, &sim, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 6000);
        for seg in 0..4 {
            assert_eq!(a.rows_in_section(seg).count(), 1500);
        }
        let c = generate_demonstration(&p, &cfg, &sim, 2).unwrap();
        assert_ne!(a, c);
        assert!(a.rows.windows(2).all(|w| w[1].t_s > w[0].t_s));
    }

    #[test]
    fn zero_excitation_drives_straight() {
        let p = VehicleParams::default();
        let cfg = DemoConfig {
            amp_range: (0.0, 0.0),
            noise_frac: 0.0,
            duration_per_speed: 20.0,
            ..DemoConfig::default()
        };
        let log = generate_demonstration(&p, &cfg, &SimConfig::default(), 3).unwrap();
        assert!(log.rows.iter().all(|r| r.steer == 0.0 && r.pos_y == 0.0 && r.yaw == 0.0));
    }

    #[test]
    fn steer_histogram_covers_envelope() {
        let p = VehicleParams::default();
        let log = generate_demonstration(&p, &DemoConfig::default(), &SimConfig::default(), 7).unwrap();
        let edge = 0.3 * p.steer_limit;
        const BINS: usize = 20;
        for seg in 0..4 {
            let mut hit = [false; BINS];
            for r in log.rows_in_section(seg) {
                if r.steer.abs() < edge {
                    let b = ((r.steer + edge) / (2.0 * edge) * BINS as f64) as usize;
                    hit[b.min(BINS - 1)] = true;
                }
            }
            let covered = hit.iter().filter(|h| **h).count() as f64 / BINS as f64;
            assert!(covered >= 0.6, "speed segment {seg}: {covered}");
        }
    }
}
