//! State, control and trajectory value types.

use std::io::Write;

use nalgebra::{Vector3, Vector6};

use crate::error::{Error, Result};
use crate::params::PhysicalParams;

/// Joint state `(q, qd, th1, th2, th1d, th2d)`: joint angle and velocity,
/// then the two servo angles and their velocities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct State(pub Vector6<f64>);

impl State {
    pub fn new(q: f64, qd: f64, th1: f64, th2: f64, th1d: f64, th2d: f64) -> Self {
        Self(Vector6::new(q, qd, th1, th2, th1d, th2d))
    }

    /// Equilibrium state: the joint rests at `q` with zero deflection and
    /// pretension winding `th2`.
    pub fn at_rest(q: f64, th2: f64) -> Self {
        Self::new(q, 0.0, q, th2, 0.0, 0.0)
    }

    pub fn q(&self) -> f64 {
        self.0[0]
    }
    pub fn qd(&self) -> f64 {
        self.0[1]
    }
    pub fn theta1(&self) -> f64 {
        self.0[2]
    }
    pub fn theta2(&self) -> f64 {
        self.0[3]
    }
    pub fn theta1d(&self) -> f64 {
        self.0[4]
    }
    pub fn theta2d(&self) -> f64 {
        self.0[5]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Control input `(u1, u2, u3)`: equilibrium-position servo command [rad],
/// stiffness-servo command [rad], and normalized damping duty in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Control(pub Vector3<f64>);

impl Control {
    pub fn new(u1: f64, u2: f64, u3: f64) -> Self {
        Self(Vector3::new(u1, u2, u3))
    }

    pub fn ep_cmd(&self) -> f64 {
        self.0[0]
    }
    pub fn stiffness_cmd(&self) -> f64 {
        self.0[1]
    }
    pub fn damping_duty(&self) -> f64 {
        self.0[2]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Clamped copy within the parameter box.
    pub fn clamped(&self, params: &PhysicalParams) -> Self {
        let u = params.clamp_control([self.0[0], self.0[1], self.0[2]]);
        Self::new(u[0], u[1], u[2])
    }

    /// True when every channel lies inside the box (inclusive).
    pub fn within(&self, params: &PhysicalParams) -> bool {
        (0..3).all(|i| self.0[i] >= params.u_min[i] && self.0[i] <= params.u_max[i])
    }
}

/// A fixed-step trajectory: `N + 1` states and `N` zero-order-hold controls.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub t0: f64,
    pub states: Vec<State>,
    pub controls: Vec<Control>,
}

impl Trajectory {
    pub fn new(dt: f64, t0: f64, states: Vec<State>, controls: Vec<Control>) -> Result<Self> {
        let traj = Self { dt, t0, states, controls };
        traj.validate()?;
        Ok(traj)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::InvalidInput(format!("dt must be > 0, got {}", self.dt)));
        }
        if self.states.len() != self.controls.len() + 1 {
            return Err(Error::InvalidInput(format!(
                "trajectory needs states = controls + 1, got {} states, {} controls",
                self.states.len(),
                self.controls.len()
            )));
        }
        Ok(())
    }

    /// Number of control steps N.
    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }

    pub fn tf(&self) -> f64 {
        self.t0 + self.dt * self.controls.len() as f64
    }

    pub fn initial_state(&self) -> &State {
        &self.states[0]
    }

    pub fn final_state(&self) -> &State {
        self.states.last().expect("trajectory holds at least the initial state")
    }

    /// Appends another trajectory that starts where this one ends.
    pub fn extend(&mut self, other: &Trajectory) -> Result<()> {
        if (other.dt - self.dt).abs() > 1e-12 {
            return Err(Error::InvalidInput("cannot concatenate trajectories with different dt".into()));
        }
        if (other.states[0].0 - self.final_state().0).abs().max() > 1e-9 {
            return Err(Error::InvalidInput(
                "trajectory concatenation requires matching boundary states".into(),
            ));
        }
        self.controls.extend_from_slice(&other.controls);
        self.states.extend_from_slice(&other.states[1..]);
        Ok(())
    }

    /// Writes the trajectory as CSV with header
    /// `t,q,qd,th1,th2,th1d,th2d,u1,u2,u3`. The terminal state row carries
    /// empty control columns.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,q,qd,th1,th2,th1d,th2d,u1,u2,u3")?;
        for (i, s) in self.states.iter().enumerate() {
            let t = self.t0 + self.dt * i as f64;
            write!(
                w,
                "{},{},{},{},{},{},{}",
                t,
                s.q(),
                s.qd(),
                s.theta1(),
                s.theta2(),
                s.theta1d(),
                s.theta2d()
            )?;
            match self.controls.get(i) {
                Some(u) => writeln!(w, ",{},{},{}", u.ep_cmd(), u.stiffness_cmd(), u.damping_duty())?,
                None => writeln!(w, ",,,")?,
            }
        }
        Ok(())
    }
}
