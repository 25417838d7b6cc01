//! Cost functions for the reaching and tracking problems.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::energy::{performance_cost_segments, PerfSegment};
use crate::error::Result;
use crate::state::{Control, State, Trajectory};

/// Weight on the squared joint error, in both running and terminal terms.
pub const TASK_WEIGHT: f64 = 1000.0;
/// Neutral damping duty; effort is measured as deviation from it.
pub const DAMPING_NEUTRAL: f64 = 0.5;
/// Weight on the damping-effort term.
pub const DAMPING_EFFORT_WEIGHT: f64 = 1e-3;
/// Weight on the motor-angle effort terms of the composite variant.
pub const SERVO_EFFORT_WEIGHT: f64 = 100.0;

/// Matrix type for stage cross-terms (3 inputs, 6 states).
pub type Matrix3x6 = nalgebra::Matrix3x6<f64>;

/// Which running/terminal cost shape an optimal control problem uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostVariant {
    /// Fast reaching: joint error plus control effort around the target
    /// command, `l = 1000 (q - q*)^2 + w_e ((u1 - q*)^2 + u2^2
    /// + 1e-3 (u3 - 0.5))`, terminal `1000 (q(tf) - q*)^2`.
    #[default]
    FastReach,
    /// Whole-sequence composite used by the flat policy-search baseline:
    /// joint error plus motor-angle effort `100 (th1 - q*)^2 + 100 th2^2
    /// + 1e-3 u3`, terminal `1000 ((q - q*)^2 + qd^2)`.
    SequenceComposite,
}

/// Cost specification of one sub-movement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    /// Reaching target q* [rad].
    pub target: f64,
    /// Control-effort weight w_e (>= 0).
    pub effort_weight: f64,
    pub variant: CostVariant,
    /// Square the damping-effort term instead of the plain linear form.
    /// The linear form can reward duties below neutral; this switch exists
    /// for sensitivity studies and defaults to off.
    pub damping_effort_squared: bool,
}

impl CostSpec {
    pub fn fast_reach(target: f64, effort_weight: f64) -> Self {
        Self {
            target,
            effort_weight,
            variant: CostVariant::FastReach,
            damping_effort_squared: false,
        }
    }

    pub fn sequence_composite(target: f64) -> Self {
        Self {
            target,
            effort_weight: 0.0,
            variant: CostVariant::SequenceComposite,
            damping_effort_squared: false,
        }
    }

    /// Running cost `l(x, u)` (undiscretized; integrate over time).
    pub fn running(&self, state: &State, control: &Control) -> f64 {
        let eq = state.q() - self.target;
        let task = TASK_WEIGHT * eq * eq;
        match self.variant {
            CostVariant::FastReach => {
                let e1 = control.ep_cmd() - self.target;
                let e3 = control.damping_duty() - DAMPING_NEUTRAL;
                let damping = if self.damping_effort_squared { e3 * e3 } else { e3 };
                task + self.effort_weight
                    * (e1 * e1
                        + control.stiffness_cmd() * control.stiffness_cmd()
                        + DAMPING_EFFORT_WEIGHT * damping)
            }
            CostVariant::SequenceComposite => {
                let e1 = state.theta1() - self.target;
                task + SERVO_EFFORT_WEIGHT * (e1 * e1 + state.theta2() * state.theta2())
                    + DAMPING_EFFORT_WEIGHT * control.damping_duty()
            }
        }
    }

    /// Terminal cost `H(x(tf))`.
    pub fn terminal(&self, state: &State) -> f64 {
        let eq = state.q() - self.target;
        match self.variant {
            CostVariant::FastReach => TASK_WEIGHT * eq * eq,
            CostVariant::SequenceComposite => {
                TASK_WEIGHT * (eq * eq + state.qd() * state.qd())
            }
        }
    }

    /// Gradient and Hessian blocks of the fast-reach running cost.
    /// Only the fast-reach variant is solved by the trajectory optimizer;
    /// the composite variant is evaluated along rollouts only.
    pub fn running_derivatives(
        &self,
        state: &State,
        control: &Control,
    ) -> (Vector6<f64>, Vector3<f64>, Matrix6<f64>, Matrix3<f64>, Matrix3x6) {
        debug_assert_eq!(self.variant, CostVariant::FastReach);
        let mut lx = Vector6::zeros();
        lx[0] = 2.0 * TASK_WEIGHT * (state.q() - self.target);
        let mut lxx = Matrix6::zeros();
        lxx[(0, 0)] = 2.0 * TASK_WEIGHT;

        let w = self.effort_weight;
        let mut lu = Vector3::zeros();
        lu[0] = 2.0 * w * (control.ep_cmd() - self.target);
        lu[1] = 2.0 * w * control.stiffness_cmd();
        let mut luu = Matrix3::zeros();
        luu[(0, 0)] = 2.0 * w;
        luu[(1, 1)] = 2.0 * w;
        if self.damping_effort_squared {
            lu[2] = 2.0 * w * DAMPING_EFFORT_WEIGHT * (control.damping_duty() - DAMPING_NEUTRAL);
            luu[(2, 2)] = 2.0 * w * DAMPING_EFFORT_WEIGHT;
        } else {
            lu[2] = w * DAMPING_EFFORT_WEIGHT;
        }
        (lx, lu, lxx, luu, Matrix3x6::zeros())
    }

    /// Gradient and Hessian of the terminal cost.
    pub fn terminal_derivatives(&self, state: &State) -> (Vector6<f64>, Matrix6<f64>) {
        let mut hx = Vector6::zeros();
        let mut hxx = Matrix6::zeros();
        hx[0] = 2.0 * TASK_WEIGHT * (state.q() - self.target);
        hxx[(0, 0)] = 2.0 * TASK_WEIGHT;
        if self.variant == CostVariant::SequenceComposite {
            hx[1] = 2.0 * TASK_WEIGHT * state.qd();
            hxx[(1, 1)] = 2.0 * TASK_WEIGHT;
        }
        (hx, hxx)
    }
}

/// Reaching performance of a trajectory against a single target:
/// terminal error cost plus the integral of the running error term.
pub fn performance_cost(traj: &Trajectory, target: f64) -> Result<f64> {
    performance_cost_segments(traj, &[PerfSegment { target, steps: traj.len() }])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use crate::dynamics::rollout;
    use crate::params::PhysicalParams;

    #[test]
    fn zero_residuals_give_zero_cost() {
        let c = CostSpec::fast_reach(0.4, 2.0);
        let s = State::at_rest(0.4, 0.0);
        let u = Control::new(0.4, 0.0, 0.5);
        assert_eq!(c.running(&s, &u), 0.0);
        assert_eq!(c.terminal(&s), 0.0);
    }

    #[test]
    fn direct_evaluation_of_offset_state() {
        let c = CostSpec::fast_reach(0.4, 1.0);
        let s = State::at_rest(0.5, 0.0);
        let u = Control::new(0.4, 0.0, 0.5);
        assert_relative_eq!(c.running(&s, &u), 10.0, max_relative = 1e-12);
    }

    #[test]
    fn linear_damping_term_is_signed() {
        let c = CostSpec::fast_reach(0.0, 1.0);
        let s = State::at_rest(0.0, 0.0);
        let low = c.running(&s, &Control::new(0.0, 0.0, 0.0));
        let high = c.running(&s, &Control::new(0.0, 0.0, 1.0));
        assert!(low < 0.0 && high > 0.0);
        assert_relative_eq!(high - low, 1e-3, max_relative = 1e-12);
    }

    #[test]
    fn composite_terminal_penalizes_velocity() {
        let c = CostSpec::sequence_composite(0.0);
        let s = State::new(0.0, 2.0, 0.0, 0.0, 0.0, 0.0);
        assert_relative_eq!(c.terminal(&s), 4000.0, max_relative = 1e-12);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let c = CostSpec::fast_reach(0.3, 1.7);
        let s = State::new(0.1, -0.2, 0.05, 0.3, 1.0, -2.0);
        let u = Control::new(0.2, 0.25, 0.7);
        let (lx, lu, lxx, luu, _) = c.running_derivatives(&s, &u);
        let h = 1e-6;
        for j in 0..6 {
            let mut xp = s.0;
            let mut xm = s.0;
            xp[j] += h;
            xm[j] -= h;
            let fd = (c.running(&State(xp), &u) - c.running(&State(xm), &u)) / (2.0 * h);
            assert_relative_eq!(lx[j], fd, epsilon = 1e-5);
            assert_relative_eq!(lxx[(j, j)], if j == 0 { 2000.0 } else { 0.0 });
        }
        for j in 0..3 {
            let mut up = u.0;
            let mut um = u.0;
            up[j] += h;
            um[j] -= h;
            let fd = (c.running(&s, &Control(up)) - c.running(&s, &Control(um))) / (2.0 * h);
            assert_relative_eq!(lu[j], fd, epsilon = 1e-5);
        }
        assert_eq!(luu[(2, 2)], 0.0);
    }

    #[test]
    fn performance_cost_of_on_target_trajectory_is_zero() {
        let p = PhysicalParams::default();
        let x0 = State::at_rest(0.7, 0.0);
        let controls = vec![Control::new(0.7, 0.0, 0.5); 20];
        let traj = rollout(&x0, &controls, 0.01, &p).unwrap();
        assert!(performance_cost(&traj, 0.7).unwrap() < 1e-12);
    }
}
