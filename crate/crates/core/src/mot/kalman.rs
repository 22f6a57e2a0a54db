//! Constant-velocity Kalman filter over (x, y, z, yaw, vx, vy, vz).
//!
//! Yaw has no rate term; it is carried as a random walk. Box size rides
//! alongside the state and is smoothed with an exponential moving average.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::geometry::{wrap_angle, Box7, Detection};

pub type StateVector = SVector<f64, 7>;
pub type StateCovariance = SMatrix<f64, 7, 7>;
type Measurement = SVector<f64, 4>;
type MeasurementMatrix = SMatrix<f64, 4, 7>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KalmanConfig {
    pub init_position_var: f64,
    pub init_yaw_var: f64,
    pub init_velocity_var: f64,
    /// Acceleration noise spectral density for the white-noise-acceleration model, m²/s⁴.
    pub process_accel_var: f64,
    /// Yaw random-walk variance per second, rad²/s.
    pub process_yaw_var: f64,
    pub meas_position_var: f64,
    pub meas_yaw_var: f64,
    /// Weight of the new measurement in the size moving average.
    pub size_smoothing: f64,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        Self {
            init_position_var: 0.1,
            init_yaw_var: 0.1,
            init_velocity_var: 100.0,
            process_accel_var: 0.5,
            process_yaw_var: 0.05,
            meas_position_var: 0.1,
            meas_yaw_var: 0.1,
            size_smoothing: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub x: StateVector,
    pub p: StateCovariance,
    /// Carried (length, width, height).
    pub size: [f64; 3],
}

impl KalmanState {
    pub fn position(&self) -> [f64; 3] {
        [self.x[0], self.x[1], self.x[2]]
    }

    pub fn velocity(&self) -> [f64; 3] {
        [self.x[4], self.x[5], self.x[6]]
    }

    pub fn yaw(&self) -> f64 {
        wrap_angle(self.x[3])
    }

    pub fn to_box(&self) -> Box7 {
        Box7 {
            cx: self.x[0],
            cy: self.x[1],
            cz: self.x[2],
            length: self.size[0],
            width: self.size[1],
            height: self.size[2],
            yaw: self.yaw(),
        }
    }
}

fn measurement_matrix() -> MeasurementMatrix {
    let mut h = MeasurementMatrix::zeros();
    for i in 0..4 {
        h[(i, i)] = 1.0;
    }
    h
}

pub fn kf_init(det: &Detection, cfg: &KalmanConfig) -> KalmanState {
    let b = &det.bbox;
    let x = StateVector::from_column_slice(&[b.cx, b.cy, b.cz, b.yaw, 0.0, 0.0, 0.0]);
    let diag = StateVector::from_column_slice(&[
        cfg.init_position_var,
        cfg.init_position_var,
        cfg.init_position_var,
        cfg.init_yaw_var,
        cfg.init_velocity_var,
        cfg.init_velocity_var,
        cfg.init_velocity_var,
    ]);
    KalmanState { x, p: StateCovariance::from_diagonal(&diag), size: b.size() }
}

/// Propagate by `dt` seconds. Returns the predicted state and its box.
pub fn kf_predict(state: &KalmanState, dt: f64, cfg: &KalmanConfig) -> (KalmanState, Box7) {
    let mut f = StateCovariance::identity();
    for i in 0..3 {
        f[(i, i + 4)] = dt;
    }
    let q = cfg.process_accel_var;
    let mut qm = StateCovariance::zeros();
    for i in 0..3 {
        qm[(i, i)] = q * dt.powi(4) / 4.0;
        qm[(i, i + 4)] = q * dt.powi(3) / 2.0;
        qm[(i + 4, i)] = q * dt.powi(3) / 2.0;
        qm[(i + 4, i + 4)] = q * dt * dt;
    }
    qm[(3, 3)] = cfg.process_yaw_var * dt;

    let x = f * state.x;
    let p = f * state.p * f.transpose() + qm;
    let next = KalmanState { x, p: symmetrize(p), size: state.size };
    let b = next.to_box();
    (next, b)
}

/// Linear measurement update on (x, y, z, yaw), yaw innovation wrapped to `[-π, π)`.
pub fn kf_update(state: &KalmanState, det: &Detection, cfg: &KalmanConfig) -> KalmanState {
    let h = measurement_matrix();
    let r = SMatrix::<f64, 4, 4>::from_diagonal(&Measurement::from_column_slice(&[
        cfg.meas_position_var,
        cfg.meas_position_var,
        cfg.meas_position_var,
        cfg.meas_yaw_var,
    ]));
    let b = &det.bbox;
    let z = Measurement::from_column_slice(&[b.cx, b.cy, b.cz, b.yaw]);
    let mut innovation = z - h * state.x;
    innovation[3] = wrap_angle(innovation[3]);

    let s = h * state.p * h.transpose() + r;
    // S is R plus a PSD term, so it is invertible whenever R is positive definite.
    let s_inv = s
        .try_inverse()
        .unwrap_or_else(|| s.pseudo_inverse(1e-12).expect("pseudo-inverse of innovation covariance"));
    let k = state.p * h.transpose() * s_inv;

    let mut x = state.x + k * innovation;
    x[3] = wrap_angle(x[3]);
    // Joseph form keeps the covariance PSD under rounding.
    let i_kh = StateCovariance::identity() - k * h;
    let p = i_kh * state.p * i_kh.transpose() + k * r * k.transpose();

    let a = cfg.size_smoothing;
    let meas_size = b.size();
    let size = [0, 1, 2].map(|i| (1.0 - a) * state.size[i] + a * meas_size[i]);
    KalmanState { x, p: symmetrize(p), size }
}

/// Wrapped yaw innovation `measured - predicted`.
pub fn yaw_innovation(predicted_yaw: f64, measured_yaw: f64) -> f64 {
    wrap_angle(measured_yaw - predicted_yaw)
}

fn symmetrize(p: StateCovariance) -> StateCovariance {
    (p + p.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ObjectClass;

    fn det_at(x: f64, y: f64, z: f64, yaw: f64) -> Detection {
        Detection::new(Box7::new([x, y, z], [4.0, 2.0, 1.5], yaw).unwrap(), ObjectClass::Vehicle, 0.9).unwrap()
    }

    #[test]
    fn init_from_detection() {
        let cfg = KalmanConfig::default();
        let s = kf_init(&det_at(1.0, 2.0, 0.0, 0.0), &cfg);
        assert_eq!(s.x.as_slice(), &[1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(s.p[(0, 0)], cfg.init_position_var);
        assert_eq!(s.p[(3, 3)], cfg.init_yaw_var);
        assert_eq!(s.p[(6, 6)], cfg.init_velocity_var);
        assert_eq!(s.p[(0, 4)], 0.0);
        assert_eq!(s, kf_init(&det_at(1.0, 2.0, 0.0, 0.0), &cfg));
    }

    #[test]
    fn predict_constant_velocity() {
        let cfg = KalmanConfig::default();
        let mut s = kf_init(&det_at(0.0, 0.0, 0.0, 0.0), &cfg);
        s.x[4] = 1.0;
        let (next, b) = kf_predict(&s, 1.0, &cfg);
        assert_eq!(next.position(), [1.0, 0.0, 0.0]);
        assert_eq!((b.cx, b.length), (1.0, 4.0));
        assert!(next.p.trace() > s.p.trace());

        let still = kf_init(&det_at(3.0, -1.0, 0.5, 0.2), &cfg);
        let (next, _) = kf_predict(&still, 0.1, &cfg);
        assert_eq!(next.position(), still.position());
    }

    #[test]
    fn update_at_prediction_shrinks_covariance() {
        let cfg = KalmanConfig::default();
        let s = kf_init(&det_at(2.0, 1.0, 0.0, 0.3), &cfg);
        let (pred, _) = kf_predict(&s, 0.1, &cfg);
        let upd = kf_update(&pred, &det_at(2.0, 1.0, 0.0, 0.3), &cfg);
        assert!((upd.x[0] - 2.0).abs() < 1e-12 && (upd.x[1] - 1.0).abs() < 1e-12);
        assert!(upd.p.trace() < pred.p.trace());
    }

    #[test]
    fn yaw_wraps_across_pi() {
        assert!((yaw_innovation(3.1, -3.1) - (2.0 * std::f64::consts::PI - 6.2)).abs() < 1e-12);
        let cfg = KalmanConfig::default();
        let s = kf_init(&det_at(0.0, 0.0, 0.0, 3.1), &cfg);
        let upd = kf_update(&s, &det_at(0.0, 0.0, 0.0, -3.1), &cfg);
        // The estimate moves a fraction of +0.083 rad, through π, not back across zero.
        let moved = wrap_angle(upd.x[3] - 3.1);
        assert!(moved > 0.0 && moved < 0.084, "{moved}");
    }
}
