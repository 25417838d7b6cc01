//! Third-order tracking inverse-dynamics control with null-space shaping.
//!
//! The joint model `I qdd + b qd = tau_s(q, th1, th2)` is differentiated once
//! so that the servo velocities appear:
//!
//! ```text
//! I qddd + b qdd = J_th1 th1d + J_th2 th2d + J_q qd
//! ```
//!
//! Imposing the third-order error law
//! `(qddd - qddd_des) + K3 (qdd - qdd_des) + K2 (qd - qd_des)
//!  + K1 (q - q_des) = 0` turns tracking into a linear equation
//! `J_th v = b` in the commanded actuation rates `v = (th1d, th2d, u3d)`.
//! The single joint leaves a two-dimensional null space, which a secondary
//! controller uses to pull the servos toward `(q*, p_s)` without disturbing
//! the joint. Commanded rates are integrated into position references for
//! the second-order servos at the control rate.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::cost::TASK_WEIGHT;
use crate::dynamics::{spring_torques, step};
use crate::energy::{integrate_energy, EnergyOptions, EnergyReport};
use crate::error::{Error, Result};
use crate::minjerk::{min_jerk, MinJerkPoint, MinJerkSegment};
use crate::params::PhysicalParams;
use crate::state::{Control, State, Trajectory};

/// Gains and redundancy metric of the tracking controller.
#[derive(Debug, Clone, PartialEq)]
pub struct TidcGains {
    /// Position-error gain (s^0 coefficient).
    pub k1: f64,
    /// Velocity-error gain.
    pub k2: f64,
    /// Acceleration-error gain.
    pub k3: f64,
    /// Positive-definite metric weighting the redundancy resolution.
    pub metric: Matrix3<f64>,
    /// Scalar gain on the null-space target pull.
    pub ns_gain: f64,
    metric_sqrt: Matrix3<f64>,
    metric_inv_sqrt: Matrix3<f64>,
}

impl TidcGains {
    pub fn new(k1: f64, k2: f64, k3: f64, metric: Matrix3<f64>, ns_gain: f64) -> Result<Self> {
        // Routh conditions for s^3 + K3 s^2 + K2 s + K1.
        if !(k1 > 0.0 && k2 > 0.0 && k3 > 0.0 && k2 * k3 > k1) {
            return Err(Error::InvalidParams(format!(
                "error dynamics are not Hurwitz: K1={k1}, K2={k2}, K3={k3}"
            )));
        }
        if (metric - metric.transpose()).amax() > 1e-9 {
            return Err(Error::InvalidParams("redundancy metric must be symmetric".into()));
        }
        let eig = metric.symmetric_eigen();
        if eig.eigenvalues.iter().any(|l| *l <= 0.0) {
            return Err(Error::InvalidParams("redundancy metric must be positive definite".into()));
        }
        let sqrt_vals = Matrix3::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
        let inv_sqrt_vals = Matrix3::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
        let metric_sqrt = eig.eigenvectors * sqrt_vals * eig.eigenvectors.transpose();
        let metric_inv_sqrt = eig.eigenvectors * inv_sqrt_vals * eig.eigenvectors.transpose();
        Ok(Self { k1, k2, k3, metric, ns_gain, metric_sqrt, metric_inv_sqrt })
    }

    /// Triple pole placement at `-pole` with the identity metric.
    pub fn triple_pole(pole: f64) -> Result<Self> {
        Self::new(
            pole * pole * pole,
            3.0 * pole * pole,
            3.0 * pole,
            Matrix3::identity(),
            1.0,
        )
    }
}

/// Partial derivatives of the spring torque.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorqueJacobians {
    pub wrt_theta1: f64,
    pub wrt_theta2: f64,
    pub wrt_q: f64,
    /// The spring torque has no direct joint-velocity dependence; damping is
    /// carried by the plant term instead.
    pub wrt_qd: f64,
}

/// Analytic partials of the spring torque at the current state.
pub fn actuator_torque_jacobians(state: &State, p: &PhysicalParams) -> Result<TorqueJacobians> {
    let delta = state.theta1() - state.q();
    let (b, c) = (p.lever_b, p.lever_c);
    let a = (b * b + c * c - 2.0 * b * c * delta.cos()).max(0.0).sqrt();
    if a < 1e-12 {
        return Err(Error::SingularGeometry);
    }
    let kbc = p.spring_const * b * c;
    let elongation = p.drum_radius * state.theta2() - p.pretension_offset();
    let (sd, cd) = delta.sin_cos();
    let wrt_delta =
        kbc * (cd * (1.0 + elongation / a) - elongation * b * c * sd * sd / (a * a * a));
    Ok(TorqueJacobians {
        wrt_theta1: wrt_delta,
        wrt_theta2: kbc * sd * p.drum_radius / a,
        wrt_q: -wrt_delta,
        wrt_qd: 0.0,
    })
}

/// Output of the tracking law at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TidcCommand {
    /// Commanded actuation rates `(th1d, th2d, u3d)`.
    pub v: Vector3<f64>,
    /// True when the torque Jacobian row collapsed and only the null-space
    /// pull was applied.
    pub rank_deficient: bool,
}

/// The tracking equation `J_th v = b` at the current state: returns the
/// Jacobian row and the right-hand side implied by the error law.
pub fn tracking_equation(
    state: &State,
    desired: &MinJerkPoint,
    gains: &TidcGains,
    damping_duty: f64,
    p: &PhysicalParams,
) -> Result<(Vector3<f64>, f64)> {
    let jac = actuator_torque_jacobians(state, p)?;
    let tau = spring_torques(state, p)?;
    let damping = p.max_damping * damping_duty + p.joint_friction;
    let qdd = (tau.joint - damping * state.qd()) / p.inertia;
    let qddd_cmd = desired.jerk
        - gains.k3 * (qdd - desired.acc)
        - gains.k2 * (state.qd() - desired.vel)
        - gains.k1 * (state.q() - desired.pos);
    // I qddd + damping qdd = J_th1 th1d + J_th2 th2d + J_q qd
    let rhs = p.inertia * qddd_cmd + damping * qdd - jac.wrt_q * state.qd();
    Ok((Vector3::new(jac.wrt_theta1, jac.wrt_theta2, 0.0), rhs))
}

/// Threshold on the weighted Jacobian norm below which the tracking row is
/// treated as rank deficient.
const RANK_EPS: f64 = 1e-9;

/// Computes the commanded actuation rates for one control step.
///
/// `ns_target` is the `(q*, p_s)` pair the null-space term pulls the servos
/// toward; the third null-space component (damping) is zero.
pub fn tidc_control(
    state: &State,
    desired: &MinJerkPoint,
    ns_target: (f64, f64),
    gains: &TidcGains,
    damping_duty: f64,
    p: &PhysicalParams,
) -> Result<TidcCommand> {
    let (j_theta, rhs) = tracking_equation(state, desired, gains, damping_duty, p)?;
    let v_ns = Vector3::new(
        gains.ns_gain * (ns_target.0 - state.theta1()),
        gains.ns_gain * (ns_target.1 - state.theta2()),
        0.0,
    );
    // Weighted pseudoinverse: v = N^-1/2 pinv(J N^-1/2) b
    //                           + N^-1/2 (I - pinv(J~) J~) N^1/2 v_ns.
    let j_tilde = (j_theta.transpose() * gains.metric_inv_sqrt).transpose();
    let norm_sq = j_tilde.norm_squared();
    if norm_sq < RANK_EPS * RANK_EPS {
        return Ok(TidcCommand { v: v_ns, rank_deficient: true });
    }
    let pinv = j_tilde / norm_sq;
    let projector = Matrix3::identity() - pinv * j_tilde.transpose();
    let v = gains.metric_inv_sqrt * (pinv * rhs)
        + gains.metric_inv_sqrt * projector * gains.metric_sqrt * v_ns;
    Ok(TidcCommand { v, rank_deficient: false })
}

/// Specification of a consecutive tracking episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSpec {
    /// Reaching targets, one per segment.
    pub targets: Vec<f64>,
    /// Free segment durations; one fewer than targets, the last duration is
    /// the remainder of the total.
    pub durations: Vec<f64>,
    /// Null-space stiffness preset per segment.
    pub presets: Vec<f64>,
    /// Episode length [s].
    pub total_time: f64,
    /// Feasibility floor for every duration, including the derived one.
    pub min_duration: f64,
    /// Starting joint angle; the plant starts at rest with zero deflection.
    pub q_start: f64,
    /// Initial pretension winding.
    pub theta2_start: f64,
    /// Control (and simulation) step.
    pub dt: f64,
    /// Fixed damping duty during tracking.
    pub damping_duty: f64,
}

impl TrackSpec {
    /// All segment durations including the derived last one.
    pub fn all_durations(&self) -> Result<Vec<f64>> {
        if self.durations.len() + 1 != self.targets.len() {
            return Err(Error::InvalidParams(format!(
                "{} targets need {} free durations, got {}",
                self.targets.len(),
                self.targets.len() - 1,
                self.durations.len()
            )));
        }
        let used: f64 = self.durations.iter().sum();
        let last = self.total_time - used;
        if last < self.min_duration {
            return Err(Error::InfeasibleTiming { got: last, min: self.min_duration });
        }
        for d in &self.durations {
            if *d < self.min_duration {
                return Err(Error::InfeasibleTiming { got: *d, min: self.min_duration });
            }
        }
        let mut all = self.durations.clone();
        all.push(last);
        Ok(all)
    }
}

/// Episode produced by the tracking controller.
#[derive(Debug, Clone)]
pub struct TrackOutcome {
    pub trajectory: Trajectory,
    pub energy: EnergyReport,
    /// Desired joint position at every state sample.
    pub desired: Vec<f64>,
    pub max_tracking_error: f64,
    /// Steps on which the controller fell back to the pure null-space pull.
    pub rank_deficient_steps: usize,
    /// Realized segment boundaries as state-sample indices.
    pub segment_ends: Vec<usize>,
    /// Realized segment durations after grid quantization.
    pub segment_durations: Vec<f64>,
}

/// Runs the tracking controller over a chained minimum-jerk sequence.
pub fn track_sequence(
    spec: &TrackSpec,
    gains: &TidcGains,
    p: &PhysicalParams,
    energy_opts: &EnergyOptions,
) -> Result<TrackOutcome> {
    if !(spec.dt > 0.0) {
        return Err(Error::InvalidInput(format!("dt must be > 0, got {}", spec.dt)));
    }
    let durations = spec.all_durations()?;

    // Quantize segment boundaries onto the control grid so the step counts
    // always sum to the episode total.
    let total_steps = (spec.total_time / spec.dt).round() as usize;
    let mut boundaries = Vec::with_capacity(durations.len());
    let mut acc = 0.0;
    for d in &durations {
        acc += d;
        boundaries.push(((acc / spec.dt).round() as usize).min(total_steps));
    }
    *boundaries.last_mut().expect("at least one segment") = total_steps;

    let mut x = State::at_rest(spec.q_start, spec.theta2_start);
    let mut u_ref = [x.theta1(), x.theta2(), spec.damping_duty];
    let mut states = vec![x];
    let mut controls = Vec::with_capacity(total_steps);
    let mut desired = vec![spec.q_start];
    let mut max_err: f64 = 0.0;
    let mut rank_deficient_steps = 0;
    let mut segment_durations = Vec::with_capacity(durations.len());

    let mut seg_start_step = 0usize;
    let mut seg_q0 = spec.q_start;
    for (i, target) in spec.targets.iter().enumerate() {
        let seg_steps = boundaries[i] - seg_start_step;
        if seg_steps == 0 {
            return Err(Error::InfeasibleTiming { got: 0.0, min: spec.dt });
        }
        let seg_duration = seg_steps as f64 * spec.dt;
        segment_durations.push(seg_duration);
        let seg = MinJerkSegment::new(seg_q0, *target, seg_duration)?;
        for k in 0..seg_steps {
            let t_local = k as f64 * spec.dt;
            let des = min_jerk(&seg, t_local)?;
            let cmd = tidc_control(&x, &des, (*target, spec.presets[i]), gains, u_ref[2], p)?;
            if cmd.rank_deficient {
                rank_deficient_steps += 1;
            }
            u_ref[0] = (u_ref[0] + cmd.v[0] * spec.dt).clamp(p.u_min[0], p.u_max[0]);
            u_ref[1] = (u_ref[1] + cmd.v[1] * spec.dt).clamp(p.u_min[1], p.u_max[1]);
            u_ref[2] = (u_ref[2] + cmd.v[2] * spec.dt).clamp(p.u_min[2], p.u_max[2]);
            let u = Control::new(u_ref[0], u_ref[1], u_ref[2]);
            x = step(&x, &u, spec.dt, p)?;
            controls.push(u);
            states.push(x);
            let t_next = (k + 1) as f64 * spec.dt;
            let des_next = min_jerk(&seg, t_next.min(seg_duration))?;
            desired.push(des_next.pos);
            max_err = max_err.max((x.q() - des_next.pos).abs());
        }
        seg_start_step = boundaries[i];
        seg_q0 = *target;
    }

    let trajectory = Trajectory::new(spec.dt, 0.0, states, controls)?;
    let mut energy = integrate_energy(&trajectory, p, energy_opts)?;
    energy.j_p = tracking_performance(&trajectory, &desired, &spec.targets, &boundaries);
    Ok(TrackOutcome {
        trajectory,
        energy,
        desired,
        max_tracking_error: max_err,
        rank_deficient_steps,
        segment_ends: boundaries,
        segment_durations,
    })
}

/// Performance of a tracking episode: per segment, the terminal error
/// against the target plus the integral of the squared desired-vs-actual
/// error, both weighted like the reaching cost.
fn tracking_performance(
    traj: &Trajectory,
    desired: &[f64],
    targets: &[f64],
    boundaries: &[usize],
) -> f64 {
    let mut j_p = 0.0;
    let mut start = 0usize;
    for (target, end) in targets.iter().zip(boundaries) {
        let mut integral = 0.0;
        for k in start..*end {
            let e0 = traj.states[k].q() - desired[k];
            let e1 = traj.states[k + 1].q() - desired[k + 1];
            integral += 0.5 * traj.dt * (e0 * e0 + e1 * e1);
        }
        let terminal = traj.states[*end].q() - target;
        j_p += TASK_WEIGHT * (integral + terminal * terminal);
        start = *end;
    }
    j_p
}
