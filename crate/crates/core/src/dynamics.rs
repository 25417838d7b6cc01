//! Forward dynamics of the variable-impedance joint and its integration.
//!
//! The model is a single link with inertia `I`, driven through a spring by
//! two critically damped position servos and a duty-controlled damper:
//!
//! ```text
//! qdd    = (tau_s - (d_max u3 + b) qd) / I
//! th_idd = beta^2 (u_i - th_i) - 2 beta th_id      (i = 1, 2)
//! ```
//!
//! The spring torque follows the lever geometry: with deflection
//! `delta = th1 - q` and chord `A = sqrt(B^2 + C^2 - 2 B C cos delta)`,
//!
//! ```text
//! tau_s  = k B C sin(delta) (1 + (r th2 - |C - B|) / A)
//! tau_l1 = tau_s
//! tau_l2 = k (r th2 - |C - B| + A)
//! ```
//!
//! External joint loading is fixed at zero; the field structure keeps a slot
//! for it in `spring_torques` callers if it is ever needed.

use nalgebra::{Matrix6, Vector6};

use crate::error::{Error, Result};
use crate::params::PhysicalParams;
use crate::state::{Control, State, Trajectory};

/// Matrix type for the control Jacobian (6 states, 3 inputs).
pub type Matrix6x3 = nalgebra::Matrix6x3<f64>;

/// Spring torque on the joint and load torques seen by the two servos.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpringTorques {
    /// Torque applied to the joint by the spring [N m].
    pub joint: f64,
    /// Load torque on the equilibrium-position servo [N m].
    pub load1: f64,
    /// Load on the pretension servo, `k (r th2 - |C - B| + A)`.
    pub load2: f64,
}

/// Minimum admissible lever chord; below this the geometry is degenerate.
const MIN_CHORD: f64 = 1e-12;

fn chord(delta: f64, p: &PhysicalParams) -> f64 {
    let (b, c) = (p.lever_b, p.lever_c);
    (b * b + c * c - 2.0 * b * c * delta.cos()).max(0.0).sqrt()
}

/// Spring torque and per-servo load torques at the given state.
pub fn spring_torques(state: &State, p: &PhysicalParams) -> Result<SpringTorques> {
    let delta = state.theta1() - state.q();
    let a = chord(delta, p);
    if a < MIN_CHORD {
        return Err(Error::SingularGeometry);
    }
    let elongation = p.drum_radius * state.theta2() - p.pretension_offset();
    let tau_s = p.spring_const * p.lever_b * p.lever_c * delta.sin() * (1.0 + elongation / a);
    Ok(SpringTorques {
        joint: tau_s,
        load1: tau_s,
        load2: p.spring_const * (elongation + a),
    })
}

/// Continuous-time state derivative `f(x, u)`.
pub fn dynamics(state: &State, control: &Control, p: &PhysicalParams) -> Result<Vector6<f64>> {
    if !state.is_finite() || !control.is_finite() {
        return Err(Error::InvalidInput("non-finite state or control".into()));
    }
    let tau = spring_torques(state, p)?;
    Ok(derivative(state, control, tau.joint, p))
}

fn derivative(state: &State, control: &Control, tau_s: f64, p: &PhysicalParams) -> Vector6<f64> {
    let beta = p.servo_bandwidth;
    let damping = p.max_damping * control.damping_duty() + p.joint_friction;
    Vector6::new(
        state.qd(),
        (tau_s - damping * state.qd()) / p.inertia,
        state.theta1d(),
        state.theta2d(),
        beta * beta * (control.ep_cmd() - state.theta1()) - 2.0 * beta * state.theta1d(),
        beta * beta * (control.stiffness_cmd() - state.theta2()) - 2.0 * beta * state.theta2d(),
    )
}

/// Continuous-time Jacobians of `f` with respect to state and control.
#[derive(Debug, Clone, Copy)]
pub struct DynamicsJacobians {
    /// `df/dx`, 6 x 6.
    pub a: Matrix6<f64>,
    /// `df/du`, 6 x 3.
    pub b: Matrix6x3,
}

/// Analytic linearization of the forward dynamics.
pub fn dynamics_jacobians(
    state: &State,
    control: &Control,
    p: &PhysicalParams,
) -> Result<DynamicsJacobians> {
    if !state.is_finite() || !control.is_finite() {
        return Err(Error::InvalidInput("non-finite state or control".into()));
    }
    let delta = state.theta1() - state.q();
    let a_chord = chord(delta, p);
    if a_chord < MIN_CHORD {
        return Err(Error::SingularGeometry);
    }
    let kbc = p.spring_const * p.lever_b * p.lever_c;
    let elongation = p.drum_radius * state.theta2() - p.pretension_offset();
    let (sd, cd) = delta.sin_cos();
    // d tau_s / d delta and d tau_s / d th2.
    let dtau_ddelta = kbc
        * (cd * (1.0 + elongation / a_chord)
            - elongation * p.lever_b * p.lever_c * sd * sd / (a_chord * a_chord * a_chord));
    let dtau_dth2 = kbc * sd * p.drum_radius / a_chord;

    let beta = p.servo_bandwidth;
    let inv_i = 1.0 / p.inertia;
    let damping = p.max_damping * control.damping_duty() + p.joint_friction;

    let mut a = Matrix6::zeros();
    a[(0, 1)] = 1.0;
    a[(1, 0)] = -dtau_ddelta * inv_i;
    a[(1, 1)] = -damping * inv_i;
    a[(1, 2)] = dtau_ddelta * inv_i;
    a[(1, 3)] = dtau_dth2 * inv_i;
    a[(2, 4)] = 1.0;
    a[(3, 5)] = 1.0;
    a[(4, 2)] = -beta * beta;
    a[(4, 4)] = -2.0 * beta;
    a[(5, 3)] = -beta * beta;
    a[(5, 5)] = -2.0 * beta;

    let mut b = Matrix6x3::zeros();
    b[(1, 2)] = -p.max_damping * state.qd() * inv_i;
    b[(4, 0)] = beta * beta;
    b[(5, 1)] = beta * beta;

    Ok(DynamicsJacobians { a, b })
}

/// One explicit fourth-order Runge-Kutta step with zero-order-hold control.
pub fn step(state: &State, control: &Control, dt: f64, p: &PhysicalParams) -> Result<State> {
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!("dt must be > 0, got {dt}")));
    }
    if !state.is_finite() || !control.is_finite() {
        return Err(Error::InvalidInput("non-finite state or control".into()));
    }
    let eval = |x: &Vector6<f64>| -> Result<Vector6<f64>> {
        let s = State(*x);
        let tau = spring_torques(&s, p)?;
        Ok(derivative(&s, control, tau.joint, p))
    };
    let x = state.0;
    let k1 = eval(&x)?;
    let k2 = eval(&(x + k1 * (dt / 2.0)))?;
    let k3 = eval(&(x + k2 * (dt / 2.0)))?;
    let k4 = eval(&(x + k3 * dt))?;
    Ok(State(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)))
}

/// RK4 step together with the exact Jacobians of the discrete map,
/// propagated through the stages by the chain rule.
pub fn step_with_jacobians(
    state: &State,
    control: &Control,
    dt: f64,
    p: &PhysicalParams,
) -> Result<(State, Matrix6<f64>, Matrix6x3)> {
    let stage = |x: &Vector6<f64>| -> Result<(Vector6<f64>, DynamicsJacobians)> {
        let s = State(*x);
        let tau = spring_torques(&s, p)?;
        let jac = dynamics_jacobians(&s, control, p)?;
        Ok((derivative(&s, control, tau.joint, p), jac))
    };

    let x = state.0;
    let eye = Matrix6::identity();

    let (k1, j1) = stage(&x)?;
    let dk1_dx = j1.a;
    let dk1_du = j1.b;

    let x2 = x + k1 * (dt / 2.0);
    let (k2, j2) = stage(&x2)?;
    let dk2_dx = j2.a * (eye + dk1_dx * (dt / 2.0));
    let dk2_du = j2.b + j2.a * dk1_du * (dt / 2.0);

    let x3 = x + k2 * (dt / 2.0);
    let (k3, j3) = stage(&x3)?;
    let dk3_dx = j3.a * (eye + dk2_dx * (dt / 2.0));
    let dk3_du = j3.b + j3.a * dk2_du * (dt / 2.0);

    let x4 = x + k3 * dt;
    let (k4, j4) = stage(&x4)?;
    let dk4_dx = j4.a * (eye + dk3_dx * dt);
    let dk4_du = j4.b + j4.a * dk3_du * dt;

    let next = State(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0));
    let a_d = eye + (dk1_dx + dk2_dx * 2.0 + dk3_dx * 2.0 + dk4_dx) * (dt / 6.0);
    let b_d = (dk1_du + dk2_du * 2.0 + dk3_du * 2.0 + dk4_du) * (dt / 6.0);
    Ok((next, a_d, b_d))
}

/// Rolls out a zero-order-hold control sequence from `x0`.
pub fn rollout(x0: &State, controls: &[Control], dt: f64, p: &PhysicalParams) -> Result<Trajectory> {
    rollout_from(x0, controls, dt, 0.0, p)
}

/// Rollout with an explicit start time (used when chaining sub-movements).
pub fn rollout_from(
    x0: &State,
    controls: &[Control],
    dt: f64,
    t0: f64,
    p: &PhysicalParams,
) -> Result<Trajectory> {
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!("dt must be > 0, got {dt}")));
    }
    let mut states = Vec::with_capacity(controls.len() + 1);
    states.push(*x0);
    let mut x = *x0;
    for u in controls {
        x = step(&x, u, dt, p)?;
        states.push(x);
    }
    Trajectory::new(dt, t0, states, controls.to_vec())
}
