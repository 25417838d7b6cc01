//! Dynamic movement primitives for actuator command trajectories.
//!
//! Each command channel is a scalar point attractor driven by a phase-gated
//! forcing term:
//!
//! ```text
//! tau thd = z
//! tau zd  = alpha_z (beta_z (g - th) - z) + s A f(s)
//! tau sd  = -alpha_s s
//! f(s)    = sum_i psi_i(s) w_i / sum_i psi_i(s)
//! psi_i   = exp(-(s - c_i)^2 / (2 sigma_i^2))
//! ```
//!
//! with `A = g - th(0)` scaling the forcing by the movement distance. The
//! flat policy encoding stacks the goals and shape weights of a whole
//! sub-movement sequence into one bounded parameter vector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default attractor gain; `beta_z = alpha_z / 4` makes it critically damped.
pub const DEFAULT_ALPHA_Z: f64 = 25.0;
/// Default phase decay rate.
pub const DEFAULT_ALPHA_S: f64 = 8.0;
/// Default basis count per channel.
pub const DEFAULT_BASIS_COUNT: usize = 10;
/// Practical box half-width for the nominally unconstrained shape weights.
pub const WEIGHT_BOUND: f64 = 1e6;

/// One scalar movement primitive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmpParams {
    /// Movement duration tau [s].
    pub duration: f64,
    /// Goal value g.
    pub goal: f64,
    /// Start value th(0).
    pub start: f64,
    pub alpha_z: f64,
    pub beta_z: f64,
    pub alpha_s: f64,
    /// Basis centers in phase space.
    pub centers: Vec<f64>,
    /// Basis widths.
    pub widths: Vec<f64>,
    /// Shape weights, one per basis.
    pub weights: Vec<f64>,
}

/// Centers equally spaced in phase, `c_i = exp(-alpha_s i / (N - 1))`, with
/// widths chosen so adjacent bases intersect near half activation.
pub fn default_basis(n: usize, alpha_s: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let centers: Vec<f64> = if n == 1 {
        vec![1.0]
    } else {
        (0..n).map(|i| (-alpha_s * i as f64 / (n - 1) as f64).exp()).collect()
    };
    let half_width = 2.0 * (2.0 * 2.0_f64.ln()).sqrt();
    let mut widths = Vec::with_capacity(n);
    for i in 0..n {
        let gap = if i + 1 < n {
            (centers[i] - centers[i + 1]).abs()
        } else if n >= 2 {
            (centers[n - 2] - centers[n - 1]).abs()
        } else {
            1.0
        };
        widths.push((gap / half_width).max(1e-12));
    }
    (centers, widths)
}

impl DmpParams {
    /// A primitive with the default gains and basis layout and zero forcing.
    pub fn point_attractor(start: f64, goal: f64, duration: f64, n_basis: usize) -> Self {
        let (centers, widths) = default_basis(n_basis, DEFAULT_ALPHA_S);
        Self {
            duration,
            goal,
            start,
            alpha_z: DEFAULT_ALPHA_Z,
            beta_z: DEFAULT_ALPHA_Z / 4.0,
            alpha_s: DEFAULT_ALPHA_S,
            centers,
            widths,
            weights: vec![0.0; n_basis],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) {
            return Err(Error::InvalidParams(format!(
                "dmp duration must be > 0, got {}",
                self.duration
            )));
        }
        if !(self.alpha_z > 0.0 && self.beta_z > 0.0 && self.alpha_s > 0.0) {
            return Err(Error::InvalidParams("dmp gains must be > 0".into()));
        }
        if self.centers.is_empty()
            || self.centers.len() != self.widths.len()
            || self.centers.len() != self.weights.len()
        {
            return Err(Error::InvalidParams(
                "dmp centers, widths and weights must share a nonzero length".into(),
            ));
        }
        if self.widths.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::InvalidParams("dmp widths must be > 0".into()));
        }
        Ok(())
    }

    /// Normalized basis mix `f(s)`.
    pub fn forcing(&self, s: f64) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for ((c, sigma), w) in self.centers.iter().zip(&self.widths).zip(&self.weights) {
            let d = s - c;
            let psi = (-d * d / (2.0 * sigma * sigma)).exp();
            num += psi * w;
            den += psi;
        }
        num / den
    }

    /// Full forcing contribution `s A f(s)` with the distance scaling.
    pub fn forcing_term(&self, s: f64) -> f64 {
        s * (self.goal - self.start) * self.forcing(s)
    }
}

/// Sampled rollout of one primitive.
#[derive(Debug, Clone, PartialEq)]
pub struct DmpRollout {
    pub dt: f64,
    /// Command positions, `N + 1` samples.
    pub positions: Vec<f64>,
    /// Command velocities.
    pub velocities: Vec<f64>,
    /// Phase variable.
    pub phases: Vec<f64>,
}

impl DmpRollout {
    pub fn final_position(&self) -> f64 {
        *self.positions.last().expect("rollout holds at least the start sample")
    }
}

/// Integrates the primitive over its own duration with step `dt` (RK4).
pub fn dmp_rollout(params: &DmpParams, dt: f64) -> Result<DmpRollout> {
    dmp_rollout_for(params, dt, params.duration)
}

/// Integrates the primitive over an arbitrary horizon, e.g. past its
/// duration to observe settling.
pub fn dmp_rollout_for(params: &DmpParams, dt: f64, horizon: f64) -> Result<DmpRollout> {
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!("dt must be > 0, got {dt}")));
    }
    if !(horizon > 0.0) {
        return Err(Error::InvalidInput(format!("horizon must be > 0, got {horizon}")));
    }
    params.validate()?;
    let n = (horizon / dt).round().max(1.0) as usize;
    let tau = params.duration;
    let deriv = |y: &[f64; 3]| -> [f64; 3] {
        let (th, z, s) = (y[0], y[1], y[2]);
        [
            z / tau,
            (params.alpha_z * (params.beta_z * (params.goal - th) - z)
                + params.forcing_term(s))
                / tau,
            -params.alpha_s * s / tau,
        ]
    };
    let mut y = [params.start, 0.0, 1.0];
    let mut positions = Vec::with_capacity(n + 1);
    let mut velocities = Vec::with_capacity(n + 1);
    let mut phases = Vec::with_capacity(n + 1);
    positions.push(y[0]);
    velocities.push(y[1] / tau);
    phases.push(y[2]);
    for _ in 0..n {
        let k1 = deriv(&y);
        let y2 = [y[0] + 0.5 * dt * k1[0], y[1] + 0.5 * dt * k1[1], y[2] + 0.5 * dt * k1[2]];
        let k2 = deriv(&y2);
        let y3 = [y[0] + 0.5 * dt * k2[0], y[1] + 0.5 * dt * k2[1], y[2] + 0.5 * dt * k2[2]];
        let k3 = deriv(&y3);
        let y4 = [y[0] + dt * k3[0], y[1] + dt * k3[1], y[2] + dt * k3[2]];
        let k4 = deriv(&y4);
        for i in 0..3 {
            y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        positions.push(y[0]);
        velocities.push(y[1] / tau);
        phases.push(y[2]);
    }
    Ok(DmpRollout { dt, positions, velocities, phases })
}

// ---------------------------------------------------------------------------
// Flat sequence encoding
// ---------------------------------------------------------------------------

/// Goals and shape weights of one sub-movement (three command channels:
/// equilibrium position, stiffness, damping duty).
#[derive(Debug, Clone, PartialEq)]
pub struct SubMovementDmp {
    pub goals: [f64; 3],
    pub weights: [Vec<f64>; 3],
}

/// Layout of the flat policy vector for a DMP-parametrized sequence: all
/// shape weights first (sub-movement major, channel, then basis), followed
/// by all goals (sub-movement major, then channel).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqPolicyEncoding {
    pub n_sub: usize,
    pub n_basis: usize,
    /// Per-channel goal boxes.
    pub goal_bounds: [(f64, f64); 3],
}

impl SeqPolicyEncoding {
    pub fn new(n_sub: usize, n_basis: usize, goal_bounds: [(f64, f64); 3]) -> Self {
        Self { n_sub, n_basis, goal_bounds }
    }

    pub fn dim(&self) -> usize {
        self.n_sub * (3 * self.n_basis + 3)
    }

    fn weight_block(&self) -> usize {
        self.n_sub * 3 * self.n_basis
    }

    /// Index of the goal entry for `(sub, channel)`.
    pub fn goal_index(&self, sub: usize, channel: usize) -> usize {
        self.weight_block() + sub * 3 + channel
    }

    /// Index of the weight entry for `(sub, channel, basis)`.
    pub fn weight_index(&self, sub: usize, channel: usize, basis: usize) -> usize {
        (sub * 3 + channel) * self.n_basis + basis
    }

    /// Box bounds in flat layout; weights get the wide practical box.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![-WEIGHT_BOUND; self.dim()];
        let mut hi = vec![WEIGHT_BOUND; self.dim()];
        for sub in 0..self.n_sub {
            for ch in 0..3 {
                let i = self.goal_index(sub, ch);
                lo[i] = self.goal_bounds[ch].0;
                hi[i] = self.goal_bounds[ch].1;
            }
        }
        (lo, hi)
    }

    /// Initialization vector: zero weights, goals at
    /// `(target_i, stiffness_goal, damping_goal)`.
    pub fn initial(&self, targets: &[f64], stiffness_goal: f64, damping_goal: f64) -> Vec<f64> {
        assert_eq!(targets.len(), self.n_sub);
        let mut xi = vec![0.0; self.dim()];
        for (sub, target) in targets.iter().enumerate() {
            xi[self.goal_index(sub, 0)] = *target;
            xi[self.goal_index(sub, 1)] = stiffness_goal;
            xi[self.goal_index(sub, 2)] = damping_goal;
        }
        xi
    }

    pub fn decode(&self, xi: &[f64]) -> Result<Vec<SubMovementDmp>> {
        if xi.len() != self.dim() {
            return Err(Error::InvalidEncoding { expected: self.dim(), got: xi.len() });
        }
        let mut subs = Vec::with_capacity(self.n_sub);
        for sub in 0..self.n_sub {
            let mut goals = [0.0; 3];
            let mut weights: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
            for ch in 0..3 {
                goals[ch] = xi[self.goal_index(sub, ch)];
                weights[ch] =
                    (0..self.n_basis).map(|b| xi[self.weight_index(sub, ch, b)]).collect();
            }
            subs.push(SubMovementDmp { goals, weights });
        }
        Ok(subs)
    }

    /// Inverse of [`decode`](Self::decode); goal entries are projected onto
    /// their boxes.
    pub fn encode(&self, subs: &[SubMovementDmp]) -> Result<Vec<f64>> {
        if subs.len() != self.n_sub {
            return Err(Error::InvalidEncoding { expected: self.n_sub, got: subs.len() });
        }
        let mut xi = vec![0.0; self.dim()];
        for (sub, s) in subs.iter().enumerate() {
            for ch in 0..3 {
                if s.weights[ch].len() != self.n_basis {
                    return Err(Error::InvalidEncoding {
                        expected: self.n_basis,
                        got: s.weights[ch].len(),
                    });
                }
                let (lo, hi) = self.goal_bounds[ch];
                xi[self.goal_index(sub, ch)] = s.goals[ch].clamp(lo, hi);
                for b in 0..self.n_basis {
                    xi[self.weight_index(sub, ch, b)] = s.weights[ch][b];
                }
            }
        }
        Ok(xi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_at_goal_is_a_fixed_point() {
        let dmp = DmpParams::point_attractor(0.4, 0.4, 1.0, 10);
        let roll = dmp_rollout(&dmp, 0.01).unwrap();
        for th in &roll.positions {
            assert_relative_eq!(*th, 0.4, epsilon = 1e-12);
        }
    }

    #[test]
    fn critically_damped_convergence_matches_closed_form() {
        // With zero forcing the attractor is linear:
        // th(t) = g + (th0 - g)(1 + p t) exp(-p t), p = alpha_z / (2 tau).
        let dmp = DmpParams::point_attractor(0.0, 1.0, 1.0, 10);
        let dt = 1e-5;
        let roll = dmp_rollout_for(&dmp, dt, 1.5 * dmp.duration).unwrap();
        let p = dmp.alpha_z / (2.0 * dmp.duration);
        for (i, th) in roll.positions.iter().enumerate().step_by(5000) {
            let t = i as f64 * dt;
            let expected = 1.0 - (1.0 + p * t) * (-p * t).exp();
            assert_relative_eq!(*th, expected, epsilon = 1e-8);
        }
        let settle = (roll.final_position() - dmp.goal).abs();
        assert!(settle < 1e-3 * (dmp.goal - dmp.start).abs(), "residual {settle:.2e}");
    }

    #[test]
    fn phase_matches_exponential_decay() {
        let dmp = DmpParams::point_attractor(0.0, 1.0, 0.8, 10);
        let dt = 1e-3;
        let roll = dmp_rollout(&dmp, dt).unwrap();
        for (i, s) in roll.phases.iter().enumerate() {
            let t = i as f64 * dt;
            let expected = (-dmp.alpha_s * t / dmp.duration).exp();
            assert!((s - expected).abs() < 1e-9, "phase at t={t}: {s} vs {expected}");
        }
    }

    #[test]
    fn goal_convergence_under_bounded_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let mut dmp = DmpParams::point_attractor(0.0, 0.9, 1.0, 10);
            for w in dmp.weights.iter_mut() {
                *w = rng.random_range(-50.0..50.0);
            }
            let roll = dmp_rollout_for(&dmp, 1e-3, 3.0 * dmp.duration).unwrap();
            let residual = (roll.final_position() - dmp.goal).abs();
            assert!(residual < 1e-3, "ended {residual:.2e} away from the goal");
        }
    }

    #[test]
    fn basis_partition_stays_positive() {
        let (centers, widths) = default_basis(10, DEFAULT_ALPHA_S);
        for i in 0..=1000 {
            let s = 1e-3 + (1.0 - 1e-3) * i as f64 / 1000.0;
            let total: f64 = centers
                .iter()
                .zip(&widths)
                .map(|(c, w)| (-(s - c) * (s - c) / (2.0 * w * w)).exp())
                .sum();
            assert!(total > 0.0);
        }
    }

    #[test]
    fn forcing_scales_with_movement_distance() {
        let mut dmp = DmpParams::point_attractor(0.0, 0.5, 1.0, 10);
        dmp.weights = (0..10).map(|i| (i as f64) - 4.0).collect();
        let doubled = DmpParams { goal: 1.0, ..dmp.clone() };
        for i in 1..=20 {
            let s = i as f64 / 20.0;
            assert_relative_eq!(
                doubled.forcing_term(s),
                2.0 * dmp.forcing_term(s),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn encode_decode_round_trip() {
        let enc = SeqPolicyEncoding::new(
            3,
            10,
            [
                (-std::f64::consts::FRAC_PI_3, std::f64::consts::FRAC_PI_3),
                (std::f64::consts::PI / 24.0, std::f64::consts::FRAC_PI_2),
                (0.0, 1.0),
            ],
        );
        assert_eq!(enc.dim(), 99);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (lo, hi) = enc.bounds();
        for _ in 0..100 {
            let xi: Vec<f64> = (0..enc.dim())
                .map(|i| {
                    if lo[i] <= -WEIGHT_BOUND {
                        rng.random_range(-30.0..30.0)
                    } else {
                        rng.random_range(lo[i]..hi[i])
                    }
                })
                .collect();
            let decoded = enc.decode(&xi).unwrap();
            let back = enc.encode(&decoded).unwrap();
            assert_eq!(back, xi);
        }
    }

    #[test]
    fn encode_projects_goals_onto_box() {
        let enc = SeqPolicyEncoding::new(1, 2, [(0.0, 1.0), (0.1, 0.5), (0.0, 1.0)]);
        let sub = SubMovementDmp {
            goals: [2.0, 0.05, 0.5],
            weights: [vec![0.0; 2], vec![0.0; 2], vec![0.0; 2]],
        };
        let xi = enc.encode(&[sub]).unwrap();
        assert_eq!(xi[enc.goal_index(0, 0)], 1.0);
        assert_eq!(xi[enc.goal_index(0, 1)], 0.1);
    }

    #[test]
    fn decode_rejects_wrong_dimension() {
        let enc = SeqPolicyEncoding::new(3, 10, [(0.0, 1.0); 3]);
        assert!(matches!(
            enc.decode(&vec![0.0; 98]),
            Err(Error::InvalidEncoding { expected: 99, got: 98 })
        ));
    }

    #[test]
    fn initial_vector_has_zero_weights_and_default_goals() {
        let enc = SeqPolicyEncoding::new(3, 10, [(-1.1, 1.1), (0.13, 1.6), (0.0, 1.0)]);
        let xi = enc.initial(&[0.7, -0.35, 0.3], 0.14, 0.5);
        let subs = enc.decode(&xi).unwrap();
        for (i, target) in [0.7, -0.35, 0.3].iter().enumerate() {
            assert_eq!(subs[i].goals[0], *target);
            assert_eq!(subs[i].goals[1], 0.14);
            assert_eq!(subs[i].goals[2], 0.5);
            for ch in 0..3 {
                assert!(subs[i].weights[ch].iter().all(|w| *w == 0.0));
            }
        }
    }
}
