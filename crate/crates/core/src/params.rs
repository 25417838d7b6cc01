//! Physical constants of the variable-impedance joint.
//!
//! The actuator is a single link driven by an equilibrium-position servo
//! (servo 1), a spring-pretension servo winding a drum (servo 2), and a
//! duty-controlled damping circuit. The constants here feed the forward
//! dynamics, the motor power model and every experiment; they are loaded
//! from the `physical` section of the run configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lumped physical parameters of the joint, servos and motor electronics.
///
/// Units are SI throughout: lengths in m, angles in rad, inertias in kg m^2,
/// stiffness in N/m, resistances in Ohm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicalParams {
    /// Link inertia about the joint axis [kg m^2].
    pub inertia: f64,
    /// Viscous friction coefficient of the joint [N m s/rad].
    pub joint_friction: f64,
    /// Linear spring constant [N/m].
    pub spring_const: f64,
    /// Short lever length B [m].
    pub lever_b: f64,
    /// Long lever length C [m].
    pub lever_c: f64,
    /// Radius of the pretension winding drum [m].
    pub drum_radius: f64,
    /// Servo bandwidth beta [1/s]; both servos are critically damped
    /// second-order systems with poles at -beta.
    pub servo_bandwidth: f64,
    /// Maximum damping coefficient of the variable damper [N m s/rad];
    /// the applied damping is `max_damping * u3` with duty `u3` in [0, 1].
    pub max_damping: f64,
    /// Motor winding resistance [Ohm].
    pub motor_resistance: f64,
    /// Motor torque constant [N m/A], motor side.
    pub torque_const: f64,
    /// Gearbox reduction ratio (dimensionless).
    pub gear_ratio: f64,
    /// Rotor inertia reflected to the output shaft [kg m^2].
    pub rotor_inertia: f64,
    /// Motor/gearbox viscous friction at the output shaft [N m s/rad].
    pub motor_friction: f64,
    /// Lower control bounds (u1 [rad], u2 [rad], u3 [-]).
    pub u_min: [f64; 3],
    /// Upper control bounds (u1 [rad], u2 [rad], u3 [-]).
    pub u_max: [f64; 3],
    /// Stiffness-servo travel limits [rad].
    pub theta2_min: f64,
    /// Stiffness-servo travel limits [rad].
    pub theta2_max: f64,
}

impl Default for PhysicalParams {
    /// Bench-scale defaults: centimeter lever geometry, a servo that settles
    /// in roughly 0.12 s, and small-servo electrical constants. Every
    /// experiment threshold in the test suite is calibrated against these.
    fn default() -> Self {
        Self {
            inertia: 0.004,
            joint_friction: 0.002,
            spring_const: 300.0,
            lever_b: 0.12,
            lever_c: 0.13,
            drum_radius: 0.01,
            servo_bandwidth: 50.0,
            max_damping: 0.05,
            motor_resistance: 5.0,
            torque_const: 0.01,
            gear_ratio: 200.0,
            rotor_inertia: 3.0e-4,
            motor_friction: 0.01,
            u_min: [-std::f64::consts::FRAC_PI_2, 0.0, 0.0],
            u_max: [std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2, 1.0],
            theta2_min: 0.0,
            theta2_max: std::f64::consts::FRAC_PI_2,
        }
    }
}

impl PhysicalParams {
    /// Checks the physical invariants; call after deserializing a config.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("inertia", self.inertia),
            ("spring_const", self.spring_const),
            ("lever_b", self.lever_b),
            ("lever_c", self.lever_c),
            ("drum_radius", self.drum_radius),
            ("servo_bandwidth", self.servo_bandwidth),
            ("motor_resistance", self.motor_resistance),
            ("torque_const", self.torque_const),
            ("gear_ratio", self.gear_ratio),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParams(format!("{name} must be > 0, got {v}")));
            }
        }
        let non_negative = [
            ("joint_friction", self.joint_friction),
            ("max_damping", self.max_damping),
            ("rotor_inertia", self.rotor_inertia),
            ("motor_friction", self.motor_friction),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParams(format!("{name} must be >= 0, got {v}")));
            }
        }
        for i in 0..3 {
            if !(self.u_min[i] < self.u_max[i]) {
                return Err(Error::InvalidParams(format!(
                    "u_min[{i}] = {} must be < u_max[{i}] = {}",
                    self.u_min[i], self.u_max[i]
                )));
            }
        }
        if self.u_min[2] != 0.0 || self.u_max[2] != 1.0 {
            return Err(Error::InvalidParams(format!(
                "damping duty bounds must be exactly [0, 1], got [{}, {}]",
                self.u_min[2], self.u_max[2]
            )));
        }
        if !(self.theta2_min < self.theta2_max) {
            return Err(Error::InvalidParams(format!(
                "theta2 limits must satisfy min < max, got [{}, {}]",
                self.theta2_min, self.theta2_max
            )));
        }
        Ok(())
    }

    /// Spring elongation offset at zero deflection and zero winding, |C - B|.
    pub fn pretension_offset(&self) -> f64 {
        (self.lever_c - self.lever_b).abs()
    }

    /// Clamps a raw control vector into the admissible box.
    pub fn clamp_control(&self, u: [f64; 3]) -> [f64; 3] {
        [
            u[0].clamp(self.u_min[0], self.u_max[0]),
            u[1].clamp(self.u_min[1], self.u_max[1]),
            u[2].clamp(self.u_min[2], self.u_max[2]),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        PhysicalParams::default().validate().unwrap();
    }

    #[test]
    fn rejects_nonpositive_spring() {
        let mut p = PhysicalParams::default();
        p.spring_const = 0.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn rejects_swapped_bounds() {
        let mut p = PhysicalParams::default();
        p.u_min[0] = 2.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn rejects_nonunit_damping_bounds() {
        let mut p = PhysicalParams::default();
        p.u_max[2] = 0.9;
        assert!(p.validate().is_err());
    }

    #[test]
    fn pretension_offset_zero_for_equal_levers() {
        let mut p = PhysicalParams::default();
        p.lever_b = p.lever_c;
        assert_eq!(p.pretension_offset(), 0.0);
    }
}
