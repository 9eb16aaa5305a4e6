//! Linear error-state MPC with curvature feedforward.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, Matrix4, SMatrix, Vector4};
use serde::{Deserialize, Serialize};

use crate::sim::{Observation, SteeringController, VehicleParams};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcConfig {
    pub horizon_steps: usize,
    pub period: f64,
    /// Diagonal of the state weight over `(e_y, e_y_dot, e_psi, e_psi_dot)`.
    pub weight_state: [f64; 4],
    pub weight_control: f64,
    pub steer_bounds: (f64, f64),
    /// Add the steady-state curvature steer to the feedback action.
    pub feedforward: bool,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon_steps: 50,
            period: 0.1,
            weight_state: [10.0, 1.0, 10.0, 1.0],
            weight_control: 50.0,
            steer_bounds: (-0.5, 0.5),
            feedforward: true,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon_steps == 0 || !(self.period > 0.0) {
            return Err(Error::Config("mpc horizon and period must be positive".into()));
        }
        if self.weight_state.iter().any(|w| !(*w > 0.0)) || !(self.weight_control > 0.0) {
            return Err(Error::Config("mpc weights must be positive".into()));
        }
        if !(self.steer_bounds.0 < self.steer_bounds.1) {
            return Err(Error::Config("mpc steer bounds are empty".into()));
        }
        Ok(())
    }
}

/// Lateral and heading error state relative to the reference.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ErrorState {
    pub e_y: f64,
    pub e_y_dot: f64,
    pub e_psi: f64,
    pub e_psi_dot: f64,
}

impl ErrorState {
    pub fn from_observation(obs: &Observation<'_>) -> Self {
        let s = &obs.state;
        let (sin, cos) = obs.error.heading.sin_cos();
        Self {
            e_y: obs.error.lateral,
            e_y_dot: s.vx * sin + s.vy * cos,
            e_psi: obs.error.heading,
            e_psi_dot: s.yaw_rate - s.vx * obs.curvature,
        }
    }

    pub fn as_vector(&self) -> Vector4<f64> {
        Vector4::new(self.e_y, self.e_y_dot, self.e_psi, self.e_psi_dot)
    }
}

/// Continuous error dynamics about a straight reference.
pub fn continuous_error_dynamics(params: &VehicleParams, vx: f64) -> Result<(Matrix4<f64>, Vector4<f64>)> {
    if !(vx > 0.5) {
        return Err(Error::SpeedTooLow(vx));
    }
    let (m, iz) = (params.mass, params.yaw_inertia);
    let (lf, lr) = (params.dist_front_axle, params.dist_rear_axle);
    let (cf, cr) = (params.cornering_stiffness_front, params.cornering_stiffness_rear);
    #[rustfmt::skip]
    let a = Matrix4::new(
        0.0, 1.0, 0.0, 0.0,
        0.0, -(cf + cr) / (m * vx), (cf + cr) / m, (lr * cr - lf * cf) / (m * vx),
        0.0, 0.0, 0.0, 1.0,
        0.0, (lr * cr - lf * cf) / (iz * vx), (lf * cf - lr * cr) / iz,
        -(lf * lf * cf + lr * lr * cr) / (iz * vx),
    );
    let b = Vector4::new(0.0, cf / m, 0.0, lf * cf / iz);
    Ok((a, b))
}

/// Zero-order-hold discretization of the error dynamics via the matrix
/// exponential of the augmented system.
pub fn linearize_error_dynamics(
    params: &VehicleParams,
    vx: f64,
    period: f64,
) -> Result<(Matrix4<f64>, Vector4<f64>)> {
    let (a, b) = continuous_error_dynamics(params, vx)?;
    let mut aug = SMatrix::<f64, 5, 5>::zeros();
    aug.fixed_view_mut::<4, 4>(0, 0).copy_from(&a);
    aug.fixed_view_mut::<4, 1>(0, 4).copy_from(&b);
    let e = (aug * period).exp();
    let ad = e.fixed_view::<4, 4>(0, 0).into_owned();
    let bd = e.fixed_view::<4, 1>(0, 4).into_owned();
    if !ad.iter().chain(bd.iter()).all(|v| v.is_finite()) {
        return Err(Error::NumericalFailure("matrix exponential overflowed".into()));
    }
    Ok((ad, bd))
}

/// First-step feedback gain `k` of the condensed problem: `u0 = k . xi`.
pub fn condensed_gain(cfg: &MpcConfig, a: &Matrix4<f64>, b: &Vector4<f64>) -> Result<Vector4<f64>> {
    let n = cfg.horizon_steps;
    // predictions xi_i = A^i xi_0 + sum_{j<i} A^{i-1-j} B u_j, i = 1..n
    let mut powers = Vec::with_capacity(n + 1);
    powers.push(Matrix4::identity());
    for i in 0..n {
        powers.push(a * powers[i]);
    }
    let mut sx = DMatrix::zeros(4 * n, 4);
    let mut su = DMatrix::zeros(4 * n, n);
    for i in 1..=n {
        sx.view_mut((4 * (i - 1), 0), (4, 4)).copy_from(&powers[i]);
        for j in 0..i {
            su.view_mut((4 * (i - 1), j), (4, 1))
                .copy_from(&(powers[i - 1 - j] * b));
        }
    }
    let q = DVector::from_iterator(4 * n, (0..4 * n).map(|k| cfg.weight_state[k % 4]));
    let qsu = DMatrix::from_fn(4 * n, n, |r, c| q[r] * su[(r, c)]);
    let qsx = DMatrix::from_fn(4 * n, 4, |r, c| q[r] * sx[(r, c)]);
    let mut h = su.transpose() * &qsu;
    for k in 0..n {
        h[(k, k)] += cfg.weight_control;
    }
    let f = su.transpose() * &qsx;
    let chol = match h.clone().cholesky() {
        Some(c) => c,
        None => {
            log::warn!("mpc normal equations not positive definite; regularizing");
            let mut hr = h;
            for k in 0..n {
                hr[(k, k)] += 1e-9;
            }
            hr.cholesky()
                .ok_or_else(|| Error::NumericalFailure("mpc normal equations singular".into()))?
        }
    };
    let sol = chol.solve(&f);
    let k = -sol.row(0).transpose();
    let k = Vector4::new(k[0], k[1], k[2], k[3]);
    if !k.iter().all(|v| v.is_finite()) {
        return Err(Error::NumericalFailure("mpc gain is not finite".into()));
    }
    Ok(k)
}

/// First control of the unconstrained finite-horizon problem, clipped to the
/// steer bounds. Feedforward is not included.
pub fn mpc_control(xi: &ErrorState, cfg: &MpcConfig, a: &Matrix4<f64>, b: &Vector4<f64>) -> Result<f64> {
    let k = condensed_gain(cfg, a, b)?;
    let u = k.dot(&xi.as_vector());
    Ok(u.clamp(cfg.steer_bounds.0, cfg.steer_bounds.1))
}

/// Receding-horizon controller. Gains are cached per speed setpoint.
pub struct MpcController {
    pub cfg: MpcConfig,
    pub params: VehicleParams,
    gains: HashMap<u64, Vector4<f64>>,
}

impl MpcController {
    pub fn new(cfg: MpcConfig, params: VehicleParams) -> Self {
        Self { cfg, params, gains: HashMap::new() }
    }

    fn gain(&mut self, vx: f64) -> Result<Vector4<f64>> {
        let key = vx.to_bits();
        if let Some(k) = self.gains.get(&key) {
            return Ok(*k);
        }
        let (a, b) = linearize_error_dynamics(&self.params, vx, self.cfg.period)?;
        let k = condensed_gain(&self.cfg, &a, &b)?;
        self.gains.insert(key, k);
        Ok(k)
    }
}

impl SteeringController for MpcController {
    fn command(&mut self, obs: &Observation<'_>) -> Result<f64> {
        let xi = ErrorState::from_observation(obs);
        let k = self.gain(obs.state.vx)?;
        let (lo, hi) = self.cfg.steer_bounds;
        let mut steer = k.dot(&xi.as_vector()).clamp(lo, hi);
        if self.cfg.feedforward {
            steer += self.params.steady_state_steer(obs.state.vx, obs.curvature);
        }
        Ok(steer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn continuous_b_has_no_position_entry() {
        let (_, b) = continuous_error_dynamics(&VehicleParams::default(), 12.0).unwrap();
        assert_eq!(b[0], 0.0);
        assert_eq!(b[2], 0.0);
    }

    #[test]
    fn tiny_period_is_identity() {
        let (a, b) = linearize_error_dynamics(&VehicleParams::default(), 12.0, 1e-9).unwrap();
        assert!((a - Matrix4::identity()).abs().max() < 1e-6);
        assert!(b.abs().max() < 1e-6);
    }

    #[test]
    fn discrete_eigenvalues_in_unit_disc() {
        let (a, _) = linearize_error_dynamics(&VehicleParams::default(), 12.0, 0.1).unwrap();
        for ev in a.complex_eigenvalues().iter() {
            assert!(ev.norm() <= 1.0 + 1e-9, "{ev}");
        }
    }

    #[test]
    fn slow_speed_rejected() {
        assert!(matches!(
            linearize_error_dynamics(&VehicleParams::default(), 0.3, 0.1),
            Err(Error::SpeedTooLow(_))
        ));
    }

    #[test]
    fn zero_error_zero_steer() {
        let cfg = MpcConfig::default();
        let (a, b) = linearize_error_dynamics(&VehicleParams::default(), 20.0, 0.1).unwrap();
        assert_eq!(mpc_control(&ErrorState::default(), &cfg, &a, &b).unwrap(), 0.0);
    }

    #[test]
    fn steers_back_toward_path() {
        let cfg = MpcConfig::default();
        let (a, b) = linearize_error_dynamics(&VehicleParams::default(), 12.0, 0.1).unwrap();
        let left = ErrorState { e_y: 0.5, ..Default::default() };
        assert!(mpc_control(&left, &cfg, &a, &b).unwrap() < 0.0);
    }

    #[test]
    fn bounds_clip() {
        let cfg = MpcConfig { steer_bounds: (-0.01, 0.01), ..MpcConfig::default() };
        let (a, b) = linearize_error_dynamics(&VehicleParams::default(), 12.0, 0.1).unwrap();
        let far = ErrorState { e_y: -5.0, ..Default::default() };
        assert_eq!(mpc_control(&far, &cfg, &a, &b).unwrap(), 0.01);
    }
}
