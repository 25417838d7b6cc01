//! Minimum-jerk rest-to-rest segments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A rest-to-rest segment: zero velocity and acceleration at both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinJerkSegment {
    pub q0: f64,
    pub qf: f64,
    /// Duration T [s].
    pub duration: f64,
}

/// Desired kinematics at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinJerkPoint {
    pub pos: f64,
    pub vel: f64,
    pub acc: f64,
    pub jerk: f64,
}

impl MinJerkSegment {
    pub fn new(q0: f64, qf: f64, duration: f64) -> Result<Self> {
        if !(duration > 0.0) {
            return Err(Error::InvalidParams(format!(
                "segment duration must be > 0, got {duration}"
            )));
        }
        Ok(Self { q0, qf, duration })
    }
}

/// Evaluates the quintic `q(t) = q0 + dq (10 s^3 - 15 s^4 + 6 s^5)` and its
/// derivatives, `s = t / T`.
pub fn min_jerk(seg: &MinJerkSegment, t: f64) -> Result<MinJerkPoint> {
    if t < 0.0 || t > seg.duration {
        return Err(Error::Extrapolation { t, duration: seg.duration });
    }
    let big_t = seg.duration;
    let s = t / big_t;
    let dq = seg.qf - seg.q0;
    let s2 = s * s;
    let s3 = s2 * s;
    let s4 = s3 * s;
    let s5 = s4 * s;
    Ok(MinJerkPoint {
        pos: seg.q0 + dq * (10.0 * s3 - 15.0 * s4 + 6.0 * s5),
        vel: dq * (30.0 * s2 - 60.0 * s3 + 30.0 * s4) / big_t,
        acc: dq * (60.0 * s - 180.0 * s2 + 120.0 * s3) / (big_t * big_t),
        jerk: dq * (60.0 - 360.0 * s + 360.0 * s2) / (big_t * big_t * big_t),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

    #[test]
    fn boundary_conditions_are_exact() {
        let seg = MinJerkSegment::new(0.2, 1.4, 0.7).unwrap();
        let start = min_jerk(&seg, 0.0).unwrap();
        let end = min_jerk(&seg, seg.duration).unwrap();
        assert!((start.pos - 0.2).abs() < 1e-12);
        assert!(start.vel.abs() < 1e-12);
        assert!(start.acc.abs() < 1e-12);
        assert!((end.pos - 1.4).abs() < 1e-12);
        assert!(end.vel.abs() < 1e-12);
        assert!(end.acc.abs() < 1e-12);
        // Initial jerk has the closed form 60 dq / T^3.
        let t3 = seg.duration.powi(3);
        assert_relative_eq!(start.jerk, 60.0 * 1.2 / t3, max_relative = 1e-12);
    }

    #[test]
    fn midpoint_symmetry() {
        let seg = MinJerkSegment::new(-0.3, 0.9, 1.3).unwrap();
        let mid = min_jerk(&seg, seg.duration / 2.0).unwrap();
        assert_relative_eq!(mid.pos, 0.3, epsilon = 1e-12);
    }

    #[test]
    fn rejects_extrapolation() {
        let seg = MinJerkSegment::new(0.0, 1.0, 1.0).unwrap();
        assert!(min_jerk(&seg, -0.01).is_err());
        assert!(min_jerk(&seg, 1.01).is_err());
    }

    /// Brute-force variational oracle: discretize the segment as a triple
    /// integrator with piecewise-constant jerk on a 101-point grid, take the
    /// minimum-norm jerk sequence that satisfies the rest-to-rest boundary
    /// conditions, and integrate it.
    fn jerk_qp_positions(q0: f64, qf: f64, duration: f64, n: usize) -> Vec<f64> {
        let h = duration / n as f64;
        let a = Matrix3::new(1.0, h, 0.5 * h * h, 0.0, 1.0, h, 0.0, 0.0, 1.0);
        let b = Vector3::new(h * h * h / 6.0, 0.5 * h * h, h);
        // m[:, k] = A^(n-1-k) b ; rhs = x_f - A^n x_0.
        let mut cols = vec![Vector3::zeros(); n];
        let mut ak = Matrix3::identity();
        for k in (0..n).rev() {
            cols[k] = ak * b;
            ak *= a;
        }
        let x0 = Vector3::new(q0, 0.0, 0.0);
        let xf = Vector3::new(qf, 0.0, 0.0);
        let rhs = xf - ak * x0;
        let mut m = DMatrix::<f64>::zeros(3, n);
        for (k, c) in cols.iter().enumerate() {
            m.set_column(k, &DVector::from_column_slice(c.as_slice()));
        }
        let gram = &m * m.transpose();
        let lambda = gram
            .lu()
            .solve(&DVector::from_column_slice(rhs.as_slice()))
            .expect("gram matrix is invertible");
        let jerk = m.transpose() * lambda;
        let mut x = x0;
        let mut qs = Vec::with_capacity(n + 1);
        qs.push(x[0]);
        for k in 0..n {
            x = a * x + b * jerk[k];
            qs.push(x[0]);
        }
        qs
    }

    #[test]
    fn quintic_matches_discrete_jerk_minimization() {
        let seg = MinJerkSegment::new(0.0, 1.0, 1.0).unwrap();
        let n = 100;
        let qp = jerk_qp_positions(seg.q0, seg.qf, seg.duration, n);
        let mut max_dev: f64 = 0.0;
        for (k, q) in qp.iter().enumerate() {
            let t = seg.duration * k as f64 / n as f64;
            let quintic = min_jerk(&seg, t).unwrap().pos;
            max_dev = max_dev.max((q - quintic).abs());
        }
        assert!(max_dev < 1e-4, "QP deviates from the quintic by {max_dev:.2e}");
    }
}
