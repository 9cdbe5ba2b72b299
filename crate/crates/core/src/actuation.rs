//! Magnetic field model, PID law, magnetorquer dipole mapping and the
//! thruster fallback used when the field is nearly parallel to the command.

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::AttitudeError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PidGains {
    pub kp: f64,
    pub kd: f64,
    pub ki: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        PidGains {
            kp: 0.5,
            kd: 5.0,
            ki: 1e-3,
        }
    }
}

impl PidGains {
    pub fn validate(&self) -> Result<()> {
        if !(self.kp > 0.0 && self.kp.is_finite()) {
            return Err(Error::Validation("kp must be > 0".into()));
        }
        if !(self.kd > 0.0 && self.kd.is_finite()) {
            return Err(Error::Validation("kd must be > 0".into()));
        }
        if !(self.ki >= 0.0 && self.ki.is_finite()) {
            return Err(Error::Validation("ki must be >= 0".into()));
        }
        Ok(())
    }
}

/// Integrator memory of the PID law. Owned by the control loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidState {
    /// Accumulated `∫e ds`, rad·s.
    pub integral: Vector3<f64>,
    /// Error used by the previous update; `None` before the first one.
    pub last_error: Option<Vector3<f64>>,
    /// Anti-windup bound on `‖integral‖`.
    pub integral_clamp: f64,
}

impl PidState {
    pub fn new(integral_clamp: f64) -> Self {
        PidState {
            integral: Vector3::zeros(),
            last_error: None,
            integral_clamp,
        }
    }
}

/// Body-frame magnetic field, tesla.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MagneticField(pub Vector3<f64>);

/// Tilted-dipole surrogate sampled along a circular orbit:
/// `B(t) = B0·(cos(2πt/P)·a + sin(2πt/P)·b + tilt·c)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldModel {
    /// Tesla.
    pub b0: f64,
    /// Seconds.
    pub orbit_period: f64,
    pub tilt: f64,
    /// In-plane axes `a`, `b` and out-of-plane axis `c`, body frame.
    pub axis_a: [f64; 3],
    pub axis_b: [f64; 3],
    pub axis_c: [f64; 3],
}

impl Default for FieldModel {
    fn default() -> Self {
        FieldModel {
            b0: 3e-5,
            orbit_period: 5400.0,
            tilt: 0.3,
            axis_a: [1.0, 0.0, 0.0],
            axis_b: [0.0, 1.0, 0.0],
            axis_c: [0.0, 0.0, 1.0],
        }
    }
}

impl FieldModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.b0 > 0.0 && self.b0.is_finite()) {
            return Err(Error::Validation("field.b0 must be > 0".into()));
        }
        if !(self.orbit_period > 0.0 && self.orbit_period.is_finite()) {
            return Err(Error::Validation("field.orbit_period must be > 0".into()));
        }
        if !self.tilt.is_finite() {
            return Err(Error::Validation("field.tilt must be finite".into()));
        }
        let (a, b, c) = self.axes();
        let orthonormal = [a.dot(&b), a.dot(&c), b.dot(&c)]
            .iter()
            .all(|d| d.abs() < 1e-9)
            && [a, b, c].iter().all(|v| (v.norm() - 1.0).abs() < 1e-9);
        if !orthonormal {
            return Err(Error::Validation(
                "field axes a, b, c must be orthonormal".into(),
            ));
        }
        Ok(())
    }

    fn axes(&self) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        (
            Vector3::from(self.axis_a),
            Vector3::from(self.axis_b),
            Vector3::from(self.axis_c),
        )
    }

    pub fn field_at(&self, time: f64) -> MagneticField {
        let (a, b, c) = self.axes();
        let phase = 2.0 * PI * time / self.orbit_period;
        MagneticField((a * phase.cos() + b * phase.sin() + c * self.tilt) * self.b0)
    }
}

/// Thruster fallback parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FallbackConfig {
    /// Fallback triggers when the magnetic torque is below this fraction of
    /// the command magnitude.
    pub fraction: f64,
    /// Per-axis thruster torque limit, N·m.
    pub tau_max: f64,
}

impl Default for FallbackConfig {
    fn default() -> Self {
        FallbackConfig {
            fraction: 0.9,
            tau_max: 1e-3,
        }
    }
}

impl FallbackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fraction >= 0.0 && self.fraction < 1.0) {
            return Err(Error::Validation(
                "fallback.fraction must be in [0, 1)".into(),
            ));
        }
        if !(self.tau_max > 0.0 && self.tau_max.is_finite()) {
            return Err(Error::Validation("fallback.tau_max must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    /// Torque command handed to the actuators, N·m.
    pub u_pid: Vector3<f64>,
    /// Magnetorquer dipole, A·m².
    pub dipole: Vector3<f64>,
    /// Torque actually applied, N·m.
    pub tau: Vector3<f64>,
    pub thruster_active: bool,
}

/// `u = −kp·e − kd·ė − ki·∫e`, with the integral advanced by the trapezoid
/// rule and then clamped to `integral_clamp`.
pub fn pid_term(
    error: &AttitudeError,
    pid: &PidState,
    gains: &PidGains,
    dt: f64,
) -> (Vector3<f64>, PidState) {
    debug_assert!(dt > 0.0);
    let e = error.euler;
    let previous = pid.last_error.unwrap_or(e);
    let mut integral = pid.integral + (previous + e) * (0.5 * dt);
    let norm = integral.norm();
    if norm > pid.integral_clamp {
        integral *= pid.integral_clamp / norm;
    }
    let u = -e * gains.kp - error.rate_error * gains.kd - integral * gains.ki;
    (
        u,
        PidState {
            integral,
            last_error: Some(e),
            integral_clamp: pid.integral_clamp,
        },
    )
}

/// Magnetorquer mapping `m = B × u / ‖B‖²`, `τ = m × B`.
///
/// The applied torque is the component of `u` orthogonal to `B`.
pub fn dipole_and_torque(u_pid: &Vector3<f64>, field: &MagneticField) -> ControlOutput {
    let b = field.0;
    let b2 = b.norm_squared();
    let dipole = if b2 > 0.0 {
        b.cross(u_pid) / b2
    } else {
        Vector3::zeros()
    };
    ControlOutput {
        u_pid: *u_pid,
        dipole,
        tau: dipole.cross(&b),
        thruster_active: false,
    }
}

/// Replace a weak magnetic torque by the command clamped to `±tau_max`.
pub fn thruster_fallback(
    u_pid: &Vector3<f64>,
    out: ControlOutput,
    cfg: &FallbackConfig,
) -> ControlOutput {
    if out.tau.norm() < cfg.fraction * u_pid.norm() {
        ControlOutput {
            u_pid: *u_pid,
            dipole: Vector3::zeros(),
            tau: u_pid.map(|c| c.clamp(-cfg.tau_max, cfg.tau_max)),
            thruster_active: true,
        }
    } else {
        out
    }
}

/// Full actuator chain for one control step.
pub fn actuate(u_cmd: &Vector3<f64>, field: &MagneticField, cfg: &FallbackConfig) -> ControlOutput {
    thruster_fallback(u_cmd, dipole_and_torque(u_cmd, field), cfg)
}
