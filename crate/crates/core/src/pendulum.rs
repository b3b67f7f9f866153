//! Closed-form separatrix machinery of the unperturbed pendulum
//! `p^2/2 + eps (cos 2pi q - 1)`.
//!
//! The hyperbolic fixed point sits at `(q, p) = (0, 0)`; its stable and
//! unstable manifolds coincide in the homoclinic loop, which is the graph
//! `p = +- s0_prime(q)` of the generating function `s0`.

use crate::error::{Error, Result};
use crate::model::TWO_PI;

/// Generating function of the unperturbed manifolds,
/// `S0(q) = (2 sqrt(eps) / pi) (1 - cos(pi q))`.
pub fn s0(epsilon: f64, q: f64) -> f64 {
    (2.0 * epsilon.sqrt() / std::f64::consts::PI) * (1.0 - (std::f64::consts::PI * q).cos())
}

/// `dS0/dq = 2 sqrt(eps) sin(pi q)`, the separatrix momentum at `q`.
pub fn s0_prime(epsilon: f64, q: f64) -> f64 {
    2.0 * epsilon.sqrt() * (std::f64::consts::PI * q).sin()
}

/// `d2 S0 / dq2`.
pub fn s0_second(epsilon: f64, q: f64) -> f64 {
    2.0 * epsilon.sqrt() * std::f64::consts::PI * (std::f64::consts::PI * q).cos()
}

fn check_anchor(q_anchor: f64) -> Result<()> {
    if q_anchor <= 0.0 || q_anchor >= 1.0 {
        return Err(Error::Domain(format!(
            "separatrix anchor q must lie in (0, 1), got {q_anchor}"
        )));
    }
    Ok(())
}

/// Homoclinic orbit of the pendulum through `q_anchor` at time `t_anchor`:
///
/// `q(s) = (2/pi) atan( e^{2 pi sqrt(eps) (s - t_anchor)} tan(pi q_anchor / 2) )`.
///
/// Monotone increasing from 0 to 1 as `s` runs over the line.
pub fn separatrix_q(epsilon: f64, t_anchor: f64, q_anchor: f64, s: f64) -> Result<f64> {
    check_anchor(q_anchor)?;
    let tan_half = (std::f64::consts::PI * q_anchor / 2.0).tan();
    let e = (TWO_PI * epsilon.sqrt() * (s - t_anchor)).exp();
    Ok((2.0 / std::f64::consts::PI) * (e * tan_half).atan())
}

/// Separatrix momentum along the same orbit: `p(s) = s0_prime(q(s))`,
/// which also equals `dq/ds`.
pub fn separatrix_p(epsilon: f64, t_anchor: f64, q_anchor: f64, s: f64) -> Result<f64> {
    let q = separatrix_q(epsilon, t_anchor, q_anchor, s)?;
    Ok(s0_prime(epsilon, q))
}

/// Time for the separatrix to travel from `q_from` to `q_to`
/// (both in (0,1), `q_to > q_from`).
pub fn transit_time(epsilon: f64, q_from: f64, q_to: f64) -> Result<f64> {
    check_anchor(q_from)?;
    check_anchor(q_to)?;
    let lam = TWO_PI * epsilon.sqrt();
    let a = (std::f64::consts::PI * q_from / 2.0).tan();
    let b = (std::f64::consts::PI * q_to / 2.0).tan();
    Ok((b.ln() - a.ln()) / lam)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn s0_values() {
        assert_eq!(s0(0.25, 0.0), 0.0);
        assert_relative_eq!(s0(0.25, 0.5), 1.0 / std::f64::consts::PI, max_relative = 1e-15);
        assert_relative_eq!(s0(0.25, 1.0), 2.0 / std::f64::consts::PI, max_relative = 1e-15);
    }

    #[test]
    fn anchor_is_hit_exactly() {
        for q in [0.1, 0.5, 0.9] {
            let v = separatrix_q(0.25, 0.3, q, 0.3).unwrap();
            assert_abs_diff_eq!(v, q, epsilon = 1e-14);
        }
    }

    #[test]
    fn limits_and_monotonicity() {
        let v = separatrix_q(0.25, 0.0, 0.5, 5.0).unwrap();
        assert!(1.0 - v < 2e-6, "q(5) = {v} should be within 2e-6 of 1");
        let mut prev = -1.0;
        for i in 0..200 {
            let s = -8.0 + i as f64 * 0.08;
            let q = separatrix_q(0.25, 0.0, 0.5, s).unwrap();
            assert!(q > prev);
            assert!((0.0..1.0).contains(&q));
            prev = q;
        }
    }

    #[test]
    fn reflection_symmetry() {
        for s in [0.0, 0.3, 1.7, 4.0] {
            let a = separatrix_q(0.25, 0.0, 0.5, s).unwrap();
            let b = separatrix_q(0.25, 0.0, 0.5, -s).unwrap();
            assert_abs_diff_eq!(a + b, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn momentum_examples() {
        // at the anchor q = 1/2: p = 2 sqrt(eps)
        let p = separatrix_p(0.25, 0.0, 0.5, 0.0).unwrap();
        assert_relative_eq!(p, 1.0, max_relative = 1e-14);
        // tails vanish
        assert!(separatrix_p(0.25, 0.0, 0.5, 40.0).unwrap().abs() < 1e-15);
        assert!(separatrix_p(0.25, 0.0, 0.5, -40.0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn momentum_is_time_derivative_of_q() {
        let h = 1e-5;
        for s in [-2.0, -0.4, 0.0, 0.9, 2.3] {
            let dq = (separatrix_q(0.25, 0.0, 0.5, s + h).unwrap()
                - separatrix_q(0.25, 0.0, 0.5, s - h).unwrap())
                / (2.0 * h);
            let p = separatrix_p(0.25, 0.0, 0.5, s).unwrap();
            assert_abs_diff_eq!(dq, p, epsilon = 1e-8);
        }
    }

    #[test]
    fn graph_tangency_and_zero_energy() {
        // On the graph p = s0'(q): pdot - S0''(q) qdot = 0 and the pendulum
        // energy vanishes identically.
        for i in 1..200 {
            let q = i as f64 / 200.0;
            let eps = 0.25;
            let p = s0_prime(eps, q);
            let qdot = p;
            let pdot = TWO_PI * eps * (TWO_PI * q).sin();
            assert_abs_diff_eq!(pdot - s0_second(eps, q) * qdot, 0.0, epsilon = 1e-10);
            let energy = 0.5 * p * p + eps * ((TWO_PI * q).cos() - 1.0);
            assert_abs_diff_eq!(energy, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn hamilton_jacobi_identity_at_mu_zero() {
        // dS0/dt + H(t, theta, q, a + dS0/dtheta, dS0/dq) = a^2/2 reduces to
        // the zero-energy identity since S0 depends on q alone.
        let eps = 0.25;
        for i in 1..100 {
            let q = -0.75 + 1.5 * i as f64 / 100.0;
            let a = 0.8;
            let lhs = 0.5 * s0_prime(eps, q).powi(2) + 0.5 * a * a + eps * ((TWO_PI * q).cos() - 1.0);
            assert_abs_diff_eq!(lhs, 0.5 * a * a, epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_bad_anchor() {
        assert!(separatrix_q(0.25, 0.0, 0.0, 0.0).is_err());
        assert!(separatrix_q(0.25, 0.0, 1.0, 0.0).is_err());
        assert!(separatrix_q(0.25, 0.0, -0.3, 0.0).is_err());
        assert!(separatrix_p(0.25, 0.0, 1.7, 0.0).is_err());
    }

    #[test]
    fn transit_time_matches_parametrization() {
        let eps = 0.0625;
        let dt = transit_time(eps, 0.1, 0.9).unwrap();
        let q = separatrix_q(eps, 0.0, 0.1, dt).unwrap();
        assert_abs_diff_eq!(q, 0.9, epsilon = 1e-12);
    }
}
