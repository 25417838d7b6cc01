//! Motor power model and fine-grained energy accounting.
//!
//! Energy is always evaluated by resimulating the episode at a fine step
//! (1 ms by default) because the positive-part integrals are sensitive to
//! the discretization. The motors are treated as non-backdrivable: negative
//! mechanical work is not regenerated, so only the positive part of each
//! power term enters the integrals.

use serde::{Deserialize, Serialize};

use crate::cost::TASK_WEIGHT;
use crate::dynamics::{rollout_from, spring_torques};
use crate::error::{Error, Result};
use crate::params::PhysicalParams;
use crate::state::{Control, State, Trajectory};

/// Instantaneous mechanical and electrical power of the two servos.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotorPowers {
    /// Mechanical input power of the equilibrium-position servo [W].
    pub mech1: f64,
    /// Mechanical input power of the pretension servo [W].
    pub mech2: f64,
    /// Electrical power of the equilibrium-position servo [W].
    pub elec1: f64,
    /// Electrical power of the pretension servo [W].
    pub elec2: f64,
}

fn positive(x: f64) -> f64 {
    x.max(0.0)
}

/// Evaluates the motor power model at one sample.
///
/// The servo accelerations come from the servo ODE evaluated at the sampled
/// state rather than from differencing velocities, which keeps the clamped
/// `[J_m thdd thd]+` term free of differentiation noise.
pub fn motor_powers(state: &State, control: &Control, p: &PhysicalParams) -> Result<MotorPowers> {
    let tau = spring_torques(state, p)?;
    let beta = p.servo_bandwidth;
    let thdd1 = beta * beta * (control.ep_cmd() - state.theta1()) - 2.0 * beta * state.theta1d();
    let thdd2 =
        beta * beta * (control.stiffness_cmd() - state.theta2()) - 2.0 * beta * state.theta2d();

    let motor = |tau_l: f64, thd: f64, thdd: f64| -> (f64, f64) {
        let mech = tau_l * thd;
        let tau_m = tau_l + p.rotor_inertia * thdd + p.motor_friction * thd;
        let current = tau_m / (p.gear_ratio * p.torque_const);
        let elec = current * current * p.motor_resistance
            + positive(p.rotor_inertia * thdd * thd)
            + p.motor_friction * thd * thd
            + positive(tau_l * thd);
        (mech, elec)
    };
    let (mech1, elec1) = motor(tau.load1, state.theta1d(), thdd1);
    let (mech2, elec2) = motor(tau.load2, state.theta2d(), thdd2);
    Ok(MotorPowers { mech1, mech2, elec1, elec2 })
}

/// Which energy measure the outer loop minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyObjective {
    /// Positive input mechanical work.
    #[default]
    MechanicalIn,
    /// Positive electrical work.
    Electrical,
}

/// Options for the fine-grained energy evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyOptions {
    /// Resimulation step [s].
    pub dt_fine: f64,
    /// Measure reported as the outer-loop objective `j_e`.
    pub objective: EnergyObjective,
    /// When set, the power dissipated by the damping circuit
    /// (`d_max u3 qd^2`) is charged to the electrical budget. The motor
    /// power model alone covers only the two servos.
    pub damping_channel_energy: bool,
}

impl Default for EnergyOptions {
    fn default() -> Self {
        Self {
            dt_fine: 1e-3,
            objective: EnergyObjective::MechanicalIn,
            damping_channel_energy: false,
        }
    }
}

/// Energy and performance summary of one episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    /// Positive input mechanical work of both servos [J].
    pub e_in: f64,
    /// Positive electrical work of both servos [J].
    pub e_elec: f64,
    pub e_in1: f64,
    pub e_in2: f64,
    pub e_elec1: f64,
    pub e_elec2: f64,
    /// Task-performance cost of the episode.
    pub j_p: f64,
    /// Outer-loop energy objective (`e_in` or `e_elec`).
    pub j_e: f64,
}

/// One reaching segment for performance evaluation: a target angle held for
/// `steps` control intervals of the evaluated trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerfSegment {
    pub target: f64,
    pub steps: usize,
}

/// Trapezoid integral of per-interval endpoint values.
///
/// `values` holds `N + 1` samples; the control of interval `i` applies to
/// both of its endpoints, so callers supply a closure over (state, control).
fn integrate<F: FnMut(&State, &Control) -> f64>(traj: &Trajectory, mut f: F) -> f64 {
    let mut acc = 0.0;
    for i in 0..traj.len() {
        let u = &traj.controls[i];
        let left = f(&traj.states[i], u);
        let right = f(&traj.states[i + 1], u);
        acc += 0.5 * traj.dt * (left + right);
    }
    acc
}

/// Positive-part energy integrals over an already fine-grained trajectory.
pub fn integrate_energy(
    traj: &Trajectory,
    p: &PhysicalParams,
    opts: &EnergyOptions,
) -> Result<EnergyReport> {
    // Propagate a power-model failure instead of silently zeroing it.
    let mut failure = None;
    let mut powers = |s: &State, u: &Control| -> MotorPowers {
        match motor_powers(s, u, p) {
            Ok(m) => m,
            Err(e) => {
                failure = Some(e);
                MotorPowers { mech1: 0.0, mech2: 0.0, elec1: 0.0, elec2: 0.0 }
            }
        }
    };
    let e_in1 = integrate(traj, |s, u| positive(powers(s, u).mech1));
    let e_in2 = integrate(traj, |s, u| positive(powers(s, u).mech2));
    let e_elec1 = integrate(traj, |s, u| positive(powers(s, u).elec1));
    let mut e_elec2 = integrate(traj, |s, u| positive(powers(s, u).elec2));
    if let Some(e) = failure {
        return Err(e);
    }
    if opts.damping_channel_energy {
        e_elec2 += integrate(traj, |s, u| {
            p.max_damping * u.damping_duty() * s.qd() * s.qd()
        });
    }
    let e_in = e_in1 + e_in2;
    let e_elec = e_elec1 + e_elec2;
    Ok(EnergyReport {
        e_in,
        e_elec,
        e_in1,
        e_in2,
        e_elec1,
        e_elec2,
        j_p: 0.0,
        j_e: match opts.objective {
            EnergyObjective::MechanicalIn => e_in,
            EnergyObjective::Electrical => e_elec,
        },
    })
}

/// Reaching-task performance over consecutive segments of a trajectory:
/// per segment, `1000 (q(tf) - q*)^2` plus the integral of
/// `1000 (q - q*)^2` over the segment.
pub fn performance_cost_segments(traj: &Trajectory, segments: &[PerfSegment]) -> Result<f64> {
    let total: usize = segments.iter().map(|s| s.steps).sum();
    if total != traj.len() {
        return Err(Error::InvalidInput(format!(
            "segments cover {total} steps but trajectory has {}",
            traj.len()
        )));
    }
    let mut j_p = 0.0;
    let mut start = 0usize;
    for seg in segments {
        let end = start + seg.steps;
        let err = |q: f64| {
            let e = q - seg.target;
            TASK_WEIGHT * e * e
        };
        let mut integral = 0.0;
        for i in start..end {
            integral +=
                0.5 * traj.dt * (err(traj.states[i].q()) + err(traj.states[i + 1].q()));
        }
        j_p += integral + err(traj.states[end].q());
        start = end;
    }
    Ok(j_p)
}

/// Zero-order-hold resampling of a coarse control sequence onto a fine grid.
pub fn resample_zoh(controls: &[Control], dt_coarse: f64, dt_fine: f64) -> Result<Vec<Control>> {
    if !(dt_fine > 0.0) {
        return Err(Error::InvalidInput(format!("dt_fine must be > 0, got {dt_fine}")));
    }
    let ratio = dt_coarse / dt_fine;
    let n = ratio.round();
    if n < 1.0 || (ratio - n).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "dt_coarse = {dt_coarse} must be an integer multiple of dt_fine = {dt_fine}"
        )));
    }
    let n = n as usize;
    let mut fine = Vec::with_capacity(controls.len() * n);
    for u in controls {
        fine.extend(std::iter::repeat(*u).take(n));
    }
    Ok(fine)
}

/// Resimulates a coarse-grid episode at the fine step and reports energies
/// and the reaching performance over the given segments (segment steps are
/// counted on the coarse grid).
pub fn energy_report(
    x0: &State,
    controls: &[Control],
    dt_coarse: f64,
    segments: &[PerfSegment],
    p: &PhysicalParams,
    opts: &EnergyOptions,
) -> Result<(Trajectory, EnergyReport)> {
    let fine_controls = resample_zoh(controls, dt_coarse, opts.dt_fine)?;
    let traj = rollout_from(x0, &fine_controls, opts.dt_fine, 0.0, p)?;
    let ratio = (dt_coarse / opts.dt_fine).round() as usize;
    let fine_segments: Vec<PerfSegment> = segments
        .iter()
        .map(|s| PerfSegment { target: s.target, steps: s.steps * ratio })
        .collect();
    let mut report = integrate_energy(&traj, p, opts)?;
    report.j_p = performance_cost_segments(&traj, &fine_segments)?;
    Ok((traj, report))
}
