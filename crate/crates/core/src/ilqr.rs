//! Box-constrained iterative LQR.
//!
//! The solver core is generic over the problem dimensions so the same code
//! drives both the actuator reaching problems and small verification
//! problems. Control limits are handled by clamping in the forward pass and
//! dropping the feedforward/feedback rows of bound-active channels in the
//! backward pass. Regularization is a Levenberg-style shift on the control
//! Hessian with a backtracking line search on the rollout cost.

use nalgebra::{Cholesky, SMatrix, SVector, Vector3};

use crate::cost::{CostSpec, CostVariant, Matrix3x6, DAMPING_NEUTRAL};
use crate::dynamics::{step, step_with_jacobians};
use crate::error::{Error, Result};
use crate::params::PhysicalParams;
use crate::state::{Control, State, Trajectory};

/// Stage-cost derivative blocks at one knot.
#[derive(Debug, Clone, Copy)]
pub struct StageDerivatives<const NX: usize, const NU: usize> {
    pub lx: SVector<f64, NX>,
    pub lu: SVector<f64, NU>,
    pub lxx: SMatrix<f64, NX, NX>,
    pub luu: SMatrix<f64, NU, NU>,
    pub lux: SMatrix<f64, NU, NX>,
}

/// A discrete-time optimal control problem the solver can iterate on.
pub trait IlqrProblem<const NX: usize, const NU: usize>: Sync {
    fn horizon(&self) -> usize;
    fn initial_state(&self) -> SVector<f64, NX>;
    /// Discrete dynamics `x_{k+1} = f_k(x, u)`.
    fn step(&self, x: &SVector<f64, NX>, u: &SVector<f64, NU>, k: usize)
        -> Result<SVector<f64, NX>>;
    /// Jacobians of the discrete dynamics.
    fn step_jacobians(
        &self,
        x: &SVector<f64, NX>,
        u: &SVector<f64, NU>,
        k: usize,
    ) -> Result<(SMatrix<f64, NX, NX>, SMatrix<f64, NX, NU>)>;
    fn stage_cost(&self, x: &SVector<f64, NX>, u: &SVector<f64, NU>, k: usize) -> f64;
    fn stage_derivatives(
        &self,
        x: &SVector<f64, NX>,
        u: &SVector<f64, NU>,
        k: usize,
    ) -> StageDerivatives<NX, NU>;
    fn terminal_cost(&self, x: &SVector<f64, NX>) -> f64;
    fn terminal_derivatives(&self, x: &SVector<f64, NX>)
        -> (SVector<f64, NX>, SMatrix<f64, NX, NX>);
    /// Control box; `None` means unconstrained.
    fn bounds(&self) -> Option<(SVector<f64, NU>, SVector<f64, NU>)> {
        None
    }
}

/// Solver settings.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IlqrOptions {
    pub max_iters: usize,
    /// Relative cost-decrease threshold for convergence.
    pub cost_tol: f64,
    pub reg_init: f64,
    pub reg_min: f64,
    pub reg_max: f64,
    /// Number of halvings tried in the backtracking line search.
    pub line_search_steps: usize,
}

impl Default for IlqrOptions {
    fn default() -> Self {
        Self {
            max_iters: 300,
            cost_tol: 1e-6,
            reg_init: 1e-6,
            reg_min: 1e-9,
            reg_max: 1e10,
            line_search_steps: 16,
        }
    }
}

/// Result of a generic solve.
#[derive(Debug, Clone)]
pub struct IlqrOutcome<const NX: usize, const NU: usize> {
    pub xs: Vec<SVector<f64, NX>>,
    pub us: Vec<SVector<f64, NU>>,
    /// Time-varying feedback gains of the last accepted backward pass.
    pub gains: Vec<SMatrix<f64, NU, NX>>,
    /// Accepted cost per iteration, starting with the initialization rollout.
    pub cost_history: Vec<f64>,
    pub cost: f64,
    pub converged: bool,
    pub iterations: usize,
}

fn clamp_vec<const NU: usize>(
    u: &SVector<f64, NU>,
    bounds: &Option<(SVector<f64, NU>, SVector<f64, NU>)>,
) -> SVector<f64, NU> {
    match bounds {
        Some((lo, hi)) => {
            let mut out = *u;
            for i in 0..NU {
                out[i] = out[i].clamp(lo[i], hi[i]);
            }
            out
        }
        None => *u,
    }
}

struct BackwardPass<const NX: usize, const NU: usize> {
    feedforward: Vec<SVector<f64, NU>>,
    gains: Vec<SMatrix<f64, NU, NX>>,
}

fn backward_pass<P: IlqrProblem<NX, NU>, const NX: usize, const NU: usize>(
    prob: &P,
    xs: &[SVector<f64, NX>],
    us: &[SVector<f64, NU>],
    reg: f64,
) -> Result<Option<BackwardPass<NX, NU>>> {
    let n = us.len();
    let bounds = prob.bounds();
    let (mut vx, mut vxx) = prob.terminal_derivatives(&xs[n]);
    let mut feedforward = vec![SVector::<f64, NU>::zeros(); n];
    let mut gains = vec![SMatrix::<f64, NU, NX>::zeros(); n];

    for k in (0..n).rev() {
        let (a, b) = prob.step_jacobians(&xs[k], &us[k], k)?;
        let d = prob.stage_derivatives(&xs[k], &us[k], k);

        let qx = d.lx + a.transpose() * vx;
        let qu = d.lu + b.transpose() * vx;
        let qxx = d.lxx + a.transpose() * vxx * a;
        let mut quu = d.luu + b.transpose() * vxx * b;
        let mut qux = d.lux + b.transpose() * vxx * a;
        for i in 0..NU {
            quu[(i, i)] += reg;
        }

        // Channels pinned at a bound with the gradient pushing outward are
        // frozen: their rows are dropped from the solve.
        let mut active = [false; NU];
        if let Some((lo, hi)) = &bounds {
            for i in 0..NU {
                let at_lo = us[k][i] <= lo[i] + 1e-12 && qu[i] > 0.0;
                let at_hi = us[k][i] >= hi[i] - 1e-12 && qu[i] < 0.0;
                active[i] = at_lo || at_hi;
            }
        }
        let mut quu_mod = quu;
        let mut qu_mod = qu;
        for i in 0..NU {
            if active[i] {
                for j in 0..NU {
                    quu_mod[(i, j)] = 0.0;
                    quu_mod[(j, i)] = 0.0;
                }
                quu_mod[(i, i)] = 1.0;
                qu_mod[i] = 0.0;
                qux.set_row(i, &SMatrix::<f64, 1, NX>::zeros());
            }
        }

        let chol = match Cholesky::new(quu_mod) {
            Some(c) => c,
            None => return Ok(None),
        };
        let k_ff = -chol.solve(&qu_mod);
        let k_fb = -chol.solve(&qux);

        vx = qx
            + k_fb.transpose() * quu * k_ff
            + k_fb.transpose() * qu
            + qux.transpose() * k_ff;
        vxx = qxx
            + k_fb.transpose() * quu * k_fb
            + k_fb.transpose() * qux
            + qux.transpose() * k_fb;
        vxx = (vxx + vxx.transpose()) * 0.5;

        feedforward[k] = k_ff;
        gains[k] = k_fb;
    }
    Ok(Some(BackwardPass { feedforward, gains }))
}

fn rollout_cost<P: IlqrProblem<NX, NU>, const NX: usize, const NU: usize>(
    prob: &P,
    us: &[SVector<f64, NU>],
) -> Result<(Vec<SVector<f64, NX>>, f64)> {
    let mut xs = Vec::with_capacity(us.len() + 1);
    xs.push(prob.initial_state());
    let mut cost = 0.0;
    for (k, u) in us.iter().enumerate() {
        cost += prob.stage_cost(&xs[k], u, k);
        xs.push(prob.step(&xs[k], u, k)?);
    }
    cost += prob.terminal_cost(&xs[us.len()]);
    if !cost.is_finite() {
        return Err(Error::InvalidInput("non-finite rollout cost".into()));
    }
    Ok((xs, cost))
}

/// Runs the solver from an initial control sequence.
pub fn solve_ilqr<P: IlqrProblem<NX, NU>, const NX: usize, const NU: usize>(
    prob: &P,
    u_init: &[SVector<f64, NU>],
    opts: &IlqrOptions,
) -> Result<IlqrOutcome<NX, NU>> {
    let n = prob.horizon();
    if u_init.len() != n {
        return Err(Error::InvalidInput(format!(
            "initial control sequence has {} steps, horizon needs {n}",
            u_init.len()
        )));
    }
    let bounds = prob.bounds();
    let mut us: Vec<SVector<f64, NU>> = u_init.iter().map(|u| clamp_vec(u, &bounds)).collect();
    let (mut xs, mut cost) = rollout_cost(prob, &us)?;
    let mut cost_history = vec![cost];
    let mut gains = vec![SMatrix::<f64, NU, NX>::zeros(); n];
    let mut reg = opts.reg_init;
    let mut converged = false;
    let mut iterations = 0;

    'outer: for _ in 0..opts.max_iters {
        iterations += 1;

        // Backward pass, escalating regularization until it factors.
        let bp = loop {
            match backward_pass(prob, &xs, &us, reg)? {
                Some(bp) => break bp,
                None => {
                    reg = (reg * 10.0).max(opts.reg_min);
                    if reg > opts.reg_max {
                        return Err(Error::SolverDiverged(opts.reg_max));
                    }
                }
            }
        };

        // Line search on the rollout cost.
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..opts.line_search_steps {
            let mut new_us = Vec::with_capacity(n);
            let mut new_xs = Vec::with_capacity(n + 1);
            new_xs.push(prob.initial_state());
            let mut new_cost = 0.0;
            let mut failed = false;
            for k in 0..n {
                let dx = new_xs[k] - xs[k];
                let u = clamp_vec(
                    &(us[k] + bp.feedforward[k] * alpha + bp.gains[k] * dx),
                    &bounds,
                );
                new_cost += prob.stage_cost(&new_xs[k], &u, k);
                match prob.step(&new_xs[k], &u, k) {
                    Ok(x) => new_xs.push(x),
                    Err(_) => {
                        failed = true;
                        break;
                    }
                }
                new_us.push(u);
            }
            if !failed {
                new_cost += prob.terminal_cost(&new_xs[n]);
                if new_cost.is_finite() && new_cost < cost {
                    let decrease = cost - new_cost;
                    us = new_us;
                    xs = new_xs;
                    cost = new_cost;
                    gains = bp.gains.clone();
                    cost_history.push(cost);
                    reg = (reg * 0.5).max(opts.reg_min);
                    accepted = true;
                    if decrease <= opts.cost_tol * cost.abs().max(1.0) {
                        converged = true;
                        break 'outer;
                    }
                    break;
                }
            }
            alpha *= 0.5;
        }

        if !accepted {
            reg *= 10.0;
            if reg > opts.reg_max {
                // No descent direction left; the current iterate is as good
                // as this scheme gets.
                converged = true;
                break;
            }
        }
    }

    Ok(IlqrOutcome { xs, us, gains, cost_history, cost, converged, iterations })
}

// ---------------------------------------------------------------------------
// Actuator reaching problem
// ---------------------------------------------------------------------------

/// One sub-movement's optimal control problem on the actuator.
#[derive(Debug, Clone)]
pub struct OcpSpec {
    pub x0: State,
    /// Horizon length tf - t0 [s].
    pub duration: f64,
    /// Coarse solver step [s].
    pub dt: f64,
    pub cost: CostSpec,
    /// Effective control box; the stiffness lower bound carries the preset.
    pub u_min: Vector3<f64>,
    pub u_max: Vector3<f64>,
    /// Controls used for the hold-style initialization rollout.
    pub init_control: Control,
}

impl OcpSpec {
    /// Fast-reach sub-problem: effort weight `w_e`, stiffness preset `p_s`
    /// raising the lower bound of the pretension command.
    pub fn fast_reach(
        params: &PhysicalParams,
        x0: State,
        target: f64,
        duration: f64,
        dt: f64,
        effort_weight: f64,
        stiffness_preset: f64,
    ) -> Result<Self> {
        if !(params.theta2_min..=params.theta2_max).contains(&stiffness_preset) {
            return Err(Error::InvalidInput(format!(
                "stiffness preset {stiffness_preset} outside travel [{}, {}]",
                params.theta2_min, params.theta2_max
            )));
        }
        if !(effort_weight >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "effort weight must be >= 0, got {effort_weight}"
            )));
        }
        let u_min = Vector3::new(
            params.u_min[0],
            params.u_min[1].max(stiffness_preset),
            params.u_min[2],
        );
        let u_max = Vector3::from_row_slice(&params.u_max);
        let spec = Self {
            x0,
            duration,
            dt,
            cost: CostSpec::fast_reach(target, effort_weight),
            u_min,
            u_max,
            init_control: Control::new(x0.q(), stiffness_preset, DAMPING_NEUTRAL),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) || !(self.dt > 0.0) {
            return Err(Error::InvalidInput("duration and dt must be > 0".into()));
        }
        if self.steps() == 0 {
            return Err(Error::InvalidInput("horizon shorter than one step".into()));
        }
        for i in 0..3 {
            if !(self.u_min[i] <= self.u_max[i]) {
                return Err(Error::InvalidInput(format!(
                    "bound {i}: min {} > max {}",
                    self.u_min[i], self.u_max[i]
                )));
            }
        }
        if !self.x0.is_finite() {
            return Err(Error::InvalidInput("non-finite initial state".into()));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }
}

/// Solved sub-movement.
#[derive(Debug, Clone)]
pub struct IlqrSolution {
    pub trajectory: Trajectory,
    pub gains: Vec<Matrix3x6>,
    /// Accepted cost per iteration (first entry: initialization rollout).
    pub cost_history: Vec<f64>,
    pub cost: f64,
    pub converged: bool,
    pub iterations: usize,
}

struct ActuatorProblem<'a> {
    spec: &'a OcpSpec,
    params: &'a PhysicalParams,
}

impl IlqrProblem<6, 3> for ActuatorProblem<'_> {
    fn horizon(&self) -> usize {
        self.spec.steps()
    }

    fn initial_state(&self) -> SVector<f64, 6> {
        self.spec.x0.0
    }

    fn step(&self, x: &SVector<f64, 6>, u: &SVector<f64, 3>, _k: usize) -> Result<SVector<f64, 6>> {
        Ok(step(&State(*x), &Control(*u), self.spec.dt, self.params)?.0)
    }

    fn step_jacobians(
        &self,
        x: &SVector<f64, 6>,
        u: &SVector<f64, 3>,
        _k: usize,
    ) -> Result<(SMatrix<f64, 6, 6>, SMatrix<f64, 6, 3>)> {
        let (_, a, b) = step_with_jacobians(&State(*x), &Control(*u), self.spec.dt, self.params)?;
        Ok((a, b))
    }

    fn stage_cost(&self, x: &SVector<f64, 6>, u: &SVector<f64, 3>, _k: usize) -> f64 {
        self.spec.cost.running(&State(*x), &Control(*u)) * self.spec.dt
    }

    fn stage_derivatives(
        &self,
        x: &SVector<f64, 6>,
        u: &SVector<f64, 3>,
        _k: usize,
    ) -> StageDerivatives<6, 3> {
        let (lx, lu, lxx, luu, lux) =
            self.spec.cost.running_derivatives(&State(*x), &Control(*u));
        StageDerivatives {
            lx: lx * self.spec.dt,
            lu: lu * self.spec.dt,
            lxx: lxx * self.spec.dt,
            luu: luu * self.spec.dt,
            lux: lux * self.spec.dt,
        }
    }

    fn terminal_cost(&self, x: &SVector<f64, 6>) -> f64 {
        self.spec.cost.terminal(&State(*x))
    }

    fn terminal_derivatives(
        &self,
        x: &SVector<f64, 6>,
    ) -> (SVector<f64, 6>, SMatrix<f64, 6, 6>) {
        self.spec.cost.terminal_derivatives(&State(*x))
    }

    fn bounds(&self) -> Option<(SVector<f64, 3>, SVector<f64, 3>)> {
        Some((self.spec.u_min, self.spec.u_max))
    }
}

/// Solves one sub-movement to a locally optimal trajectory.
pub fn solve(ocp: &OcpSpec, params: &PhysicalParams, opts: &IlqrOptions) -> Result<IlqrSolution> {
    debug_assert_eq!(ocp.cost.variant, CostVariant::FastReach);
    ocp.validate()?;
    let prob = ActuatorProblem { spec: ocp, params };
    let u_init = vec![ocp.init_control.0; ocp.steps()];
    let out = solve_ilqr(&prob, &u_init, opts)?;
    let states = out.xs.into_iter().map(State).collect();
    let controls = out.us.into_iter().map(Control).collect();
    Ok(IlqrSolution {
        trajectory: Trajectory::new(ocp.dt, 0.0, states, controls)?,
        gains: out.gains,
        cost_history: out.cost_history,
        cost: out.cost,
        converged: out.converged,
        iterations: out.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{Matrix2, SMatrix, SVector, Vector2};

    /// Discrete double integrator with quadratic costs; the Riccati oracle
    /// lives beside it.
    struct DoubleIntegrator {
        n: usize,
        a: Matrix2<f64>,
        b: SMatrix<f64, 2, 1>,
        q: Matrix2<f64>,
        r: SMatrix<f64, 1, 1>,
        qf: Matrix2<f64>,
        x0: Vector2<f64>,
    }

    impl DoubleIntegrator {
        fn new(n: usize) -> Self {
            let h = 0.1;
            Self {
                n,
                a: Matrix2::new(1.0, h, 0.0, 1.0),
                b: SMatrix::<f64, 2, 1>::new(0.5 * h * h, h),
                q: Matrix2::new(1.0, 0.0, 0.0, 0.1),
                r: SMatrix::<f64, 1, 1>::new(0.5),
                qf: Matrix2::new(50.0, 0.0, 0.0, 5.0),
                x0: Vector2::new(1.5, -0.4),
            }
        }

        /// Backward Riccati recursion; returns the optimal cost and the
        /// optimal control sequence from the closed-loop rollout.
        fn riccati(&self) -> (f64, Vec<f64>) {
            let mut p = self.qf;
            let mut ks: Vec<SMatrix<f64, 1, 2>> = Vec::with_capacity(self.n);
            for _ in 0..self.n {
                let btpb = self.r + self.b.transpose() * p * self.b;
                let k = btpb.try_inverse().unwrap() * self.b.transpose() * p * self.a;
                p = self.q + self.a.transpose() * p * (self.a - self.b * k);
                p = (p + p.transpose()) * 0.5;
                ks.push(k);
            }
            ks.reverse();
            let mut x = self.x0;
            let mut cost = 0.0;
            let mut us = Vec::with_capacity(self.n);
            for k in &ks {
                let u = -(k * x);
                cost += (x.transpose() * self.q * x)[(0, 0)]
                    + (u.transpose() * self.r * u)[(0, 0)];
                x = self.a * x + self.b * u;
                us.push(u[0]);
            }
            cost += (x.transpose() * self.qf * x)[(0, 0)];
            (cost, us)
        }
    }

    impl IlqrProblem<2, 1> for DoubleIntegrator {
        fn horizon(&self) -> usize {
            self.n
        }
        fn initial_state(&self) -> Vector2<f64> {
            self.x0
        }
        fn step(&self, x: &Vector2<f64>, u: &SVector<f64, 1>, _k: usize) -> Result<Vector2<f64>> {
            Ok(self.a * x + self.b * u)
        }
        fn step_jacobians(
            &self,
            _x: &Vector2<f64>,
            _u: &SVector<f64, 1>,
            _k: usize,
        ) -> Result<(Matrix2<f64>, SMatrix<f64, 2, 1>)> {
            Ok((self.a, self.b))
        }
        fn stage_cost(&self, x: &Vector2<f64>, u: &SVector<f64, 1>, _k: usize) -> f64 {
            (x.transpose() * self.q * x)[(0, 0)] + (u.transpose() * self.r * u)[(0, 0)]
        }
        fn stage_derivatives(
            &self,
            x: &Vector2<f64>,
            u: &SVector<f64, 1>,
            _k: usize,
        ) -> StageDerivatives<2, 1> {
            StageDerivatives {
                lx: (self.q + self.q.transpose()) * x,
                lu: (self.r + self.r.transpose()) * u,
                lxx: self.q * 2.0,
                luu: self.r * 2.0,
                lux: SMatrix::zeros(),
            }
        }
        fn terminal_cost(&self, x: &Vector2<f64>) -> f64 {
            (x.transpose() * self.qf * x)[(0, 0)]
        }
        fn terminal_derivatives(&self, x: &Vector2<f64>) -> (Vector2<f64>, Matrix2<f64>) {
            ((self.qf + self.qf.transpose()) * x, self.qf * 2.0)
        }
    }

    #[test]
    fn matches_riccati_on_linear_quadratic_problem() {
        let prob = DoubleIntegrator::new(60);
        let (opt_cost, opt_us) = prob.riccati();
        let opts = IlqrOptions { reg_init: 0.0, ..Default::default() };
        let out = solve_ilqr(&prob, &vec![SVector::<f64, 1>::zeros(); 60], &opts).unwrap();
        assert!(out.converged);
        assert_relative_eq!(out.cost, opt_cost, max_relative = 1e-6);
        for (u, u_opt) in out.us.iter().zip(opt_us.iter()) {
            assert!((u[0] - u_opt).abs() < 1e-6, "control {} vs {}", u[0], u_opt);
        }
    }

    fn default_reach() -> (PhysicalParams, OcpSpec) {
        let p = PhysicalParams::default();
        let x0 = State::new(0.0, 0.0, 0.0, std::f64::consts::PI / 24.0, 0.0, 0.0);
        let ocp = OcpSpec::fast_reach(&p, x0, 0.7, 1.0, 0.02, 1.0, std::f64::consts::PI / 24.0)
            .unwrap();
        (p, ocp)
    }

    #[test]
    fn reaches_first_task_target() {
        let (p, ocp) = default_reach();
        let sol = solve(&ocp, &p, &IlqrOptions::default()).unwrap();
        let q_f = sol.trajectory.final_state().q();
        assert!(
            (q_f - 0.7).abs() < 0.05,
            "terminal joint angle {q_f:.4} missed the 0.7 target"
        );
        assert!(sol.cost <= sol.cost_history[0]);
    }

    #[test]
    fn accepted_costs_are_monotone() {
        let (p, ocp) = default_reach();
        let sol = solve(&ocp, &p, &IlqrOptions::default()).unwrap();
        for w in sol.cost_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn controls_respect_bounds() {
        let (p, ocp) = default_reach();
        let sol = solve(&ocp, &p, &IlqrOptions::default()).unwrap();
        for u in &sol.trajectory.controls {
            for i in 0..3 {
                assert!(u.0[i] >= ocp.u_min[i] - 0.0 && u.0[i] <= ocp.u_max[i] + 0.0);
            }
        }
    }

    #[test]
    fn pinned_stiffness_channel_stays_constant() {
        let p = PhysicalParams::default();
        let x0 = State::new(0.0, 0.0, 0.0, 0.3, 0.0, 0.0);
        let mut ocp =
            OcpSpec::fast_reach(&p, x0, 0.5, 0.6, 0.02, 1.0, 0.3).unwrap();
        ocp.u_min[1] = 0.3;
        ocp.u_max[1] = 0.3;
        let sol = solve(&ocp, &p, &IlqrOptions::default()).unwrap();
        for u in &sol.trajectory.controls {
            assert_eq!(u.stiffness_cmd(), 0.3);
        }
    }

    #[test]
    fn identical_specs_solve_bit_identically() {
        let (p, ocp) = default_reach();
        let a = solve(&ocp, &p, &IlqrOptions::default()).unwrap();
        let b = solve(&ocp, &p, &IlqrOptions::default()).unwrap();
        assert_eq!(a.cost.to_bits(), b.cost.to_bits());
        for (ua, ub) in a.trajectory.controls.iter().zip(&b.trajectory.controls) {
            assert_eq!(ua, ub);
        }
    }
}
