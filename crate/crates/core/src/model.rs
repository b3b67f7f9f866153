//! The Hamiltonian family under study and its Lagrangian counterpart.
//!
//! The model is a pendulum coupled to a rotator, with a time-periodic
//! trigonometric perturbation switched on by the parameter `mu`:
//!
//! ```text
//! H(t, theta, q, I, p) = p^2/2 + I^2/2 + eps (cos 2pi q - 1)(1 + mu f(t, theta, q))
//! ```
//!
//! All angle variables live on the unit circle; the crate carries them as
//! real lifts and wraps only at reporting boundaries. For every `mu` the
//! two-tori `{q = 0, p = 0, I = a}` are invariant because the perturbation
//! factor `(cos 2pi q - 1)` vanishes to second order on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// One cosine term `amplitude * cos(2pi (k_t t + k_theta theta + k_q q) + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(i32, i32, i32, f64, f64)", into = "(i32, i32, i32, f64, f64)")]
pub struct FourierTerm {
    pub k_t: i32,
    pub k_theta: i32,
    pub k_q: i32,
    pub amplitude: f64,
    pub phase: f64,
}

impl From<(i32, i32, i32, f64, f64)> for FourierTerm {
    fn from(v: (i32, i32, i32, f64, f64)) -> Self {
        FourierTerm { k_t: v.0, k_theta: v.1, k_q: v.2, amplitude: v.3, phase: v.4 }
    }
}

impl From<FourierTerm> for (i32, i32, i32, f64, f64) {
    fn from(t: FourierTerm) -> Self {
        (t.k_t, t.k_theta, t.k_q, t.amplitude, t.phase)
    }
}

/// Finite trigonometric sum `f(t, theta, q)`, 1-periodic in each argument.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Perturbation {
    pub terms: Vec<FourierTerm>,
}

impl Perturbation {
    pub fn new(terms: Vec<FourierTerm>) -> Self {
        Perturbation { terms }
    }

    /// `f = cos(2pi theta) + cos(2pi t)`, the classical choice.
    pub fn arnold() -> Self {
        Perturbation {
            terms: vec![
                FourierTerm { k_t: 1, k_theta: 0, k_q: 0, amplitude: 1.0, phase: 0.0 },
                FourierTerm { k_t: 0, k_theta: 1, k_q: 0, amplitude: 1.0, phase: 0.0 },
            ],
        }
    }

    pub fn zero() -> Self {
        Perturbation { terms: Vec::new() }
    }

    /// Whether this is exactly the Arnold perturbation (any term order).
    pub fn is_arnold(&self) -> bool {
        if self.terms.len() != 2 {
            return false;
        }
        let want_t = FourierTerm { k_t: 1, k_theta: 0, k_q: 0, amplitude: 1.0, phase: 0.0 };
        let want_th = FourierTerm { k_t: 0, k_theta: 1, k_q: 0, amplitude: 1.0, phase: 0.0 };
        (self.terms[0] == want_t && self.terms[1] == want_th)
            || (self.terms[0] == want_th && self.terms[1] == want_t)
    }

    pub fn eval(&self, t: f64, theta: f64, q: f64) -> f64 {
        self.terms
            .iter()
            .map(|c| {
                let arg = TWO_PI
                    * (c.k_t as f64 * t + c.k_theta as f64 * theta + c.k_q as f64 * q)
                    + c.phase;
                c.amplitude * arg.cos()
            })
            .sum()
    }

    /// Value together with the three partial derivatives, sharing one
    /// sin/cos evaluation per term.
    pub fn eval_with_grad(&self, t: f64, theta: f64, q: f64) -> (f64, f64, f64, f64) {
        let mut f = 0.0;
        let mut ft = 0.0;
        let mut fth = 0.0;
        let mut fq = 0.0;
        for c in &self.terms {
            let arg = TWO_PI * (c.k_t as f64 * t + c.k_theta as f64 * theta + c.k_q as f64 * q)
                + c.phase;
            let (s, co) = arg.sin_cos();
            f += c.amplitude * co;
            let d = -c.amplitude * TWO_PI * s;
            ft += d * c.k_t as f64;
            fth += d * c.k_theta as f64;
            fq += d * c.k_q as f64;
        }
        (f, ft, fth, fq)
    }

    /// Sum of |amplitudes|; bounds |f| pointwise.
    pub fn amplitude_bound(&self) -> f64 {
        self.terms.iter().map(|c| c.amplitude.abs()).sum()
    }
}

/// Parameters of the Hamiltonian family: pendulum coupling `epsilon`,
/// perturbation size `mu`, and the perturbation shape `f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub epsilon: f64,
    pub mu: f64,
    pub perturbation: Perturbation,
}

impl ModelParams {
    pub fn new(epsilon: f64, mu: f64, perturbation: Perturbation) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::Domain(format!("epsilon must be positive, got {epsilon}")));
        }
        if !(mu >= 0.0) || !mu.is_finite() {
            return Err(Error::Domain(format!("mu must be non-negative, got {mu}")));
        }
        Ok(ModelParams { epsilon, mu, perturbation })
    }

    /// Arnold perturbation shorthand.
    pub fn arnold(epsilon: f64, mu: f64) -> Result<Self> {
        Self::new(epsilon, mu, Perturbation::arnold())
    }

    /// Hyperbolicity rate of the pendulum fixed point, `2 pi sqrt(eps)`.
    pub fn lambda(&self) -> f64 {
        TWO_PI * self.epsilon.sqrt()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("ModelParams serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: ModelParams =
            serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        ModelParams::new(p.epsilon, p.mu, p.perturbation)
    }
}

/// Extended phase-space state `(t, theta, q, I, p)` with angle lifts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub t: f64,
    pub theta: f64,
    pub q: f64,
    /// Momentum conjugate to `theta`.
    pub i: f64,
    /// Momentum conjugate to `q`.
    pub p: f64,
}

impl PhasePoint {
    pub fn new(t: f64, theta: f64, q: f64, i: f64, p: f64) -> Self {
        PhasePoint { t, theta, q, i, p }
    }

    /// A point on the invariant torus `T(a)` at extended time `t`.
    pub fn on_torus(t: f64, theta: f64, a: f64) -> Self {
        PhasePoint { t, theta, q: 0.0, i: a, p: 0.0 }
    }

    /// Reduce `(t, theta, q)` mod 1. Idempotent; momenta untouched.
    pub fn wrap(&self) -> Self {
        PhasePoint {
            t: self.t.rem_euclid(1.0),
            theta: self.theta.rem_euclid(1.0),
            q: self.q.rem_euclid(1.0),
            i: self.i,
            p: self.p,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.theta.is_finite()
            && self.q.is_finite()
            && self.i.is_finite()
            && self.p.is_finite()
    }
}

/// Hamiltonian of the family evaluated at `x`.
pub fn hamiltonian(params: &ModelParams, x: &PhasePoint) -> f64 {
    let f = params.perturbation.eval(x.t, x.theta, x.q);
    0.5 * x.p * x.p
        + 0.5 * x.i * x.i
        + params.epsilon * ((TWO_PI * x.q).cos() - 1.0) * (1.0 + params.mu * f)
}

/// Lagrangian `qdot^2/2 + thetadot^2/2 + eps (1 - cos 2pi q)(1 + mu f)`.
pub fn lagrangian(
    params: &ModelParams,
    t: f64,
    theta: f64,
    q: f64,
    theta_dot: f64,
    q_dot: f64,
) -> f64 {
    let f = params.perturbation.eval(t, theta, q);
    0.5 * q_dot * q_dot
        + 0.5 * theta_dot * theta_dot
        + params.epsilon * (1.0 - (TWO_PI * q).cos()) * (1.0 + params.mu * f)
}

/// Reduced Lagrangian density `L - a thetadot + a^2/2`.
///
/// Completing the square gives
/// `qdot^2/2 + (thetadot - a)^2/2 + eps (1 - cos 2pi q)(1 + mu f) >= 0`
/// whenever `1 + mu f >= 0`, with equality exactly on torus motion.
pub fn reduced_lagrangian(
    params: &ModelParams,
    a: f64,
    t: f64,
    theta: f64,
    q: f64,
    theta_dot: f64,
    q_dot: f64,
) -> f64 {
    lagrangian(params, t, theta, q, theta_dot, q_dot) - a * theta_dot + 0.5 * a * a
}

/// Tangent vector of the extended flow: `(1, I, p, -dH/dtheta, -dH/dq)`.
pub fn vector_field(params: &ModelParams, x: &PhasePoint) -> [f64; 5] {
    let (f, _ft, fth, fq) = params.perturbation.eval_with_grad(x.t, x.theta, x.q);
    let (sq, cq) = (TWO_PI * x.q).sin_cos();
    let pot = params.epsilon * (cq - 1.0);
    let i_dot = -pot * params.mu * fth;
    let p_dot = TWO_PI * params.epsilon * sq * (1.0 + params.mu * f) - pot * params.mu * fq;
    [1.0, x.i, x.p, i_dot, p_dot]
}
