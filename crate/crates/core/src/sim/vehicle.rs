//! Dynamic single-track (bicycle) model with linear tires.
//!
//! Only the lateral/yaw dynamics are simulated; the longitudinal speed is an
//! exogenous cruise setpoint that stays constant inside each integration step.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let w = a.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub pos_x: f64,
    pub pos_y: f64,
    pub yaw: f64,
    pub vx: f64,
    pub vy: f64,
    pub yaw_rate: f64,
}

impl VehicleState {
    pub fn new(pos_x: f64, pos_y: f64, yaw: f64, vx: f64) -> Self {
        Self {
            pos_x,
            pos_y,
            yaw: wrap_angle(yaw),
            vx,
            vy: 0.0,
            yaw_rate: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.pos_x, self.pos_y, self.yaw, self.vx, self.vy, self.yaw_rate]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Mirror image across the world x axis.
    pub fn mirrored(&self) -> Self {
        Self {
            pos_x: self.pos_x,
            pos_y: -self.pos_y,
            yaw: wrap_angle(-self.yaw),
            vx: self.vx,
            vy: -self.vy,
            yaw_rate: -self.yaw_rate,
        }
    }

    fn check(self) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(Error::NonFiniteState(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleParams {
    pub mass: f64,
    pub yaw_inertia: f64,
    pub dist_front_axle: f64,
    pub dist_rear_axle: f64,
    pub cornering_stiffness_front: f64,
    pub cornering_stiffness_rear: f64,
    pub steer_limit: f64,
    pub steer_rate_limit: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 1500.0,
            yaw_inertia: 2500.0,
            dist_front_axle: 1.2,
            dist_rear_axle: 1.6,
            cornering_stiffness_front: 80_000.0,
            cornering_stiffness_rear: 80_000.0,
            steer_limit: 0.5,
            steer_rate_limit: 1.0,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let all_positive = [
            self.mass,
            self.yaw_inertia,
            self.dist_front_axle,
            self.dist_rear_axle,
            self.cornering_stiffness_front,
            self.cornering_stiffness_rear,
            self.steer_limit,
            self.steer_rate_limit,
        ]
        .iter()
        .all(|v| v.is_finite() && *v > 0.0);
        if !all_positive {
            return Err(Error::Config("vehicle parameters must all be positive".into()));
        }
        if self.steer_limit >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::Config("steer_limit must be below pi/2".into()));
        }
        Ok(())
    }

    pub fn wheelbase(&self) -> f64 {
        self.dist_front_axle + self.dist_rear_axle
    }

    /// Understeer gradient `m (l_r C_r - l_f C_f) / (C_f C_r L)` in rad·s²/m.
    pub fn understeer_gradient(&self) -> f64 {
        let (cf, cr) = (self.cornering_stiffness_front, self.cornering_stiffness_rear);
        self.mass * (self.dist_rear_axle * cr - self.dist_front_axle * cf)
            / (cf * cr * self.wheelbase())
    }

    /// Steady-state yaw rate of the linear model under constant steer.
    pub fn steady_state_yaw_rate(&self, vx: f64, steer: f64) -> f64 {
        vx * steer / (self.wheelbase() + self.understeer_gradient() * vx * vx)
    }

    /// Steer that holds a circle of curvature `kappa` at speed `vx` in steady state.
    pub fn steady_state_steer(&self, vx: f64, kappa: f64) -> f64 {
        (self.wheelbase() + self.understeer_gradient() * vx * vx) * kappa
    }

    pub fn clip_steer(&self, steer: f64) -> f64 {
        steer.clamp(-self.steer_limit, self.steer_limit)
    }

    /// Lateral-dynamics matrices `(A, B)` over `(vy, r)` at speed `vx`.
    pub fn lateral_matrices(&self, vx: f64) -> ([[f64; 2]; 2], [f64; 2]) {
        let (m, iz) = (self.mass, self.yaw_inertia);
        let (lf, lr) = (self.dist_front_axle, self.dist_rear_axle);
        let (cf, cr) = (self.cornering_stiffness_front, self.cornering_stiffness_rear);
        let a = [
            [-(cf + cr) / (m * vx), (lr * cr - lf * cf) / (m * vx) - vx],
            [
                (lr * cr - lf * cf) / (iz * vx),
                -(lf * lf * cf + lr * lr * cr) / (iz * vx),
            ],
        ];
        let b = [cf / m, lf * cf / iz];
        (a, b)
    }
}

fn derivative(s: &VehicleState, steer: f64, params: &VehicleParams) -> [f64; 5] {
    let (a, b) = params.lateral_matrices(s.vx);
    let (sin, cos) = s.yaw.sin_cos();
    [
        s.vx * cos - s.vy * sin,
        s.vx * sin + s.vy * cos,
        s.yaw_rate,
        a[0][0] * s.vy + a[0][1] * s.yaw_rate + b[0] * steer,
        a[1][0] * s.vy + a[1][1] * s.yaw_rate + b[1] * steer,
    ]
}

fn offset(s: &VehicleState, d: &[f64; 5], h: f64) -> VehicleState {
    VehicleState {
        pos_x: s.pos_x + h * d[0],
        pos_y: s.pos_y + h * d[1],
        yaw: s.yaw + h * d[2],
        vx: s.vx,
        vy: s.vy + h * d[3],
        yaw_rate: s.yaw_rate + h * d[4],
    }
}

/// Advances the state by `dt` with one classical RK4 step.
///
/// Steering beyond `steer_limit` is clipped (and logged at debug level).
pub fn step_dynamics(
    state: &VehicleState,
    steer: f64,
    params: &VehicleParams,
    dt: f64,
) -> Result<VehicleState> {
    if !(dt > 0.0 && dt <= 0.05) {
        return Err(Error::InvalidStep(dt));
    }
    let clipped = params.clip_steer(steer);
    if clipped != steer {
        log::debug!("steer {steer:.4} clipped to {clipped:.4}");
    }
    let k1 = derivative(state, clipped, params);
    let k2 = derivative(&offset(state, &k1, dt / 2.0), clipped, params);
    let k3 = derivative(&offset(state, &k2, dt / 2.0), clipped, params);
    let k4 = derivative(&offset(state, &k3, dt), clipped, params);
    let mut incr = [0.0; 5];
    for i in 0..5 {
        incr[i] = (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0;
    }
    let mut next = offset(state, &incr, dt);
    next.yaw = wrap_angle(next.yaw);
    next.check()
}

/// Holds `steer` for `duration`, integrating in substeps of `substep`.
pub fn advance(
    state: &VehicleState,
    steer: f64,
    params: &VehicleParams,
    duration: f64,
    substep: f64,
) -> Result<VehicleState> {
    let n = (duration / substep).round().max(1.0) as usize;
    let dt = duration / n as f64;
    let mut s = *state;
    for _ in 0..n {
        s = step_dynamics(&s, steer, params, dt)?;
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_steer_goes_straight() {
        let p = VehicleParams::default();
        let s = VehicleState::new(0.0, 0.0, 0.0, 10.0);
        let next = step_dynamics(&s, 0.0, &p, 0.05).unwrap();
        let next = step_dynamics(&next, 0.0, &p, 0.05).unwrap();
        assert!((next.pos_x - 1.0).abs() < 1e-12);
        assert_eq!(next.pos_y, 0.0);
        assert_eq!(next.yaw, 0.0);
        assert_eq!(next.vy, 0.0);
        assert_eq!(next.yaw_rate, 0.0);
        assert_eq!(next.vx, 10.0);
    }

    #[test]
    fn steady_state_yaw_rate_matches_closed_form() {
        let p = VehicleParams::default();
        let mut s = VehicleState::new(0.0, 0.0, 0.0, 10.0);
        for _ in 0..100 {
            s = advance(&s, 0.02, &p, 0.1, 0.01).unwrap();
        }
        // independent closed form: r = vx d / (L + K vx^2)
        let l = 2.8;
        let k_us = 1500.0 * (1.6 * 80_000.0 - 1.2 * 80_000.0) / (80_000.0 * 80_000.0 * l);
        let r_ss = 10.0 * 0.02 / (l + k_us * 100.0);
        assert!((s.yaw_rate - r_ss).abs() / r_ss < 0.01, "{} vs {r_ss}", s.yaw_rate);
    }

    #[test]
    fn mirrored_inputs_give_mirrored_trajectory() {
        let p = VehicleParams::default();
        let mut a = VehicleState {
            pos_x: 1.0,
            pos_y: 2.0,
            yaw: 0.3,
            vx: 15.0,
            vy: 0.1,
            yaw_rate: -0.05,
        };
        let mut b = a.mirrored();
        for k in 0..200 {
            let d = 0.1 * (0.03 * k as f64).sin();
            a = step_dynamics(&a, d, &p, 0.01).unwrap();
            b = step_dynamics(&b, -d, &p, 0.01).unwrap();
        }
        let m = a.mirrored();
        assert!((m.pos_x - b.pos_x).abs() < 1e-12);
        assert!((m.pos_y - b.pos_y).abs() < 1e-12);
        assert!((m.yaw - b.yaw).abs() < 1e-12);
        assert!((m.vy - b.vy).abs() < 1e-12);
        assert!((m.yaw_rate - b.yaw_rate).abs() < 1e-12);
    }

    #[test]
    fn lateral_states_stay_zero_without_steer() {
        let p = VehicleParams::default();
        let mut s = VehicleState::new(0.0, 0.0, 0.7, 20.0);
        for _ in 0..1000 {
            s = step_dynamics(&s, 0.0, &p, 0.01).unwrap();
        }
        assert_eq!(s.vy, 0.0);
        assert_eq!(s.yaw_rate, 0.0);
    }

    #[test]
    fn rk4_converges_under_substep_halving() {
        let p = VehicleParams::default();
        let run = |dt: f64| {
            let mut s = VehicleState::new(0.0, 0.0, 0.0, 20.0);
            let n = (10.0 / dt).round() as usize;
            let per = (0.1 / dt).round() as usize;
            for k in 0..n {
                // piecewise constant at 0.1 s so both runs see identical inputs
                let d = 0.05 * (0.5 * (k / per) as f64 * 0.1).sin();
                s = step_dynamics(&s, d, &p, dt).unwrap();
            }
            s
        };
        let a = run(0.01);
        let b = run(0.005);
        let dist = ((a.pos_x - b.pos_x).powi(2) + (a.pos_y - b.pos_y).powi(2)).sqrt();
        assert!(dist < 1e-6, "endpoint moved {dist}");
    }

    #[test]
    fn yaw_stays_wrapped() {
        let p = VehicleParams::default();
        let mut s = VehicleState::new(0.0, 0.0, 3.0, 10.0);
        for _ in 0..2000 {
            s = step_dynamics(&s, 0.3, &p, 0.01).unwrap();
            assert!(s.yaw > -std::f64::consts::PI && s.yaw <= std::f64::consts::PI);
        }
    }

    #[test]
    fn rejects_bad_step_and_non_finite() {
        let p = VehicleParams::default();
        let s = VehicleState::new(0.0, 0.0, 0.0, 10.0);
        assert!(matches!(step_dynamics(&s, 0.0, &p, 0.1), Err(Error::InvalidStep(_))));
        assert!(matches!(step_dynamics(&s, 0.0, &p, 0.0), Err(Error::InvalidStep(_))));
        let bad = VehicleState { vy: f64::NAN, ..s };
        assert!(matches!(
            step_dynamics(&bad, 0.0, &p, 0.01),
            Err(Error::NonFiniteState(_))
        ));
    }

    #[test]
    fn wrap_angle_range() {
        use std::f64::consts::PI;
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_angle(0.1) - 0.1).abs() < 1e-15);
    }
}
