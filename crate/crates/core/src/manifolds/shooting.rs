//! Boundary-value matcher for orbits asymptotic to the invariant tori.
//!
//! A whisker orbit through a section node `(t, theta, q)` is found by
//! launching on the unperturbed separatrix at a small offset `|q| = delta`
//! from the torus and shooting with a damped Newton method on the launch
//! parameters (transit duration and launch angle). The torus tail inside
//! the offset is replaced by the closed form `S0(delta)`; the tori are
//! exactly invariant for this family, so the launch error is O(mu delta)
//! in the momentum direction only, which the action value does not see to
//! first order.

use crate::error::{Error, Result};
use crate::integrate::flow_with_action;
use crate::model::{hamiltonian, ModelParams, PhasePoint};
use crate::pendulum;

/// Which whisker a generating function describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifoldSign {
    /// Unstable manifold; reduced action over `(-inf, t]`, converging to `+S0`.
    Plus,
    /// Stable manifold; minus the reduced action over `[t, +inf)`, converging to `-S0`.
    Minus,
}

/// Knobs of the boundary-value matcher.
#[derive(Debug, Clone)]
pub struct ShootingConfig {
    /// Integrator step bound; actual steps divide the transit exactly.
    pub step: f64,
    /// Launch offset factor; the launch point sits at `|q| = offset_factor * 2 sqrt(eps)`.
    pub offset_factor: f64,
    /// Position residual tolerance at the section node.
    pub tol: f64,
    pub max_iter: usize,
    /// Restart ladder length on Newton failure.
    pub retries: usize,
}

impl Default for ShootingConfig {
    fn default() -> Self {
        ShootingConfig { step: 1e-3, offset_factor: 1e-4, tol: 1e-11, max_iter: 40, retries: 8 }
    }
}

impl ShootingConfig {
    pub fn delta(&self, epsilon: f64) -> f64 {
        self.offset_factor * 2.0 * epsilon.sqrt()
    }
}

/// A matched whisker orbit through one section node.
#[derive(Debug, Clone)]
pub struct ShotSolution {
    pub sign: ManifoldSign,
    pub a: f64,
    /// Section node (t, theta, q), angles in [0, 1), q in [-3/4, 3/4].
    pub node: (f64, f64, f64),
    /// Transit duration between launch offset and section.
    pub transit: f64,
    /// Launch angle on the torus.
    pub theta0: f64,
    /// Generating-function value at the node (sign convention included).
    pub value: f64,
    /// State at the section time; `I - a` and `p` are the theta- and
    /// q-gradients of the generating function there.
    pub endpoint: PhasePoint,
}

impl ShotSolution {
    /// `dS/dtheta` at the node.
    pub fn grad_theta(&self) -> f64 {
        self.endpoint.i - self.a
    }

    /// `dS/dq` at the node.
    pub fn grad_q(&self) -> f64 {
        self.endpoint.p
    }

    /// `dS/dt` at the node, read off the Hamilton-Jacobi relation
    /// `dS/dt = a^2/2 - H(endpoint)`.
    pub fn grad_t(&self, params: &ModelParams) -> f64 {
        0.5 * self.a * self.a - hamiltonian(params, &self.endpoint)
    }
}

/// Warm-start hint: previous transit and launch angle.
pub type WarmStart = (f64, f64);

struct Launch {
    q0: f64,
    p0: f64,
    /// +1 integrates forward from the past (unstable), -1 backward from the
    /// future (stable).
    time_dir: f64,
}

fn launch_data(params: &ModelParams, sign: ManifoldSign, q_side: f64, delta: f64) -> Launch {
    let q0 = q_side.signum() * delta;
    let p_sep = pendulum::s0_prime(params.epsilon, q0);
    match sign {
        ManifoldSign::Plus => Launch { q0, p0: p_sep, time_dir: 1.0 },
        ManifoldSign::Minus => Launch { q0, p0: -p_sep, time_dir: -1.0 },
    }
}

/// Integrate from the launch point defined by `(transit, theta0)` to the
/// section time and return the endpoint together with the accumulated
/// reduced action (oriented along physical time).
fn shoot_once(
    params: &ModelParams,
    a: f64,
    sign: ManifoldSign,
    node_t: f64,
    transit: f64,
    theta0: f64,
    launch: &Launch,
    step: f64,
) -> Result<(PhasePoint, f64)> {
    let (t_start, duration) = match sign {
        ManifoldSign::Plus => (node_t - transit, transit),
        ManifoldSign::Minus => (node_t + transit, -transit),
    };
    let x0 = PhasePoint::new(t_start, theta0, launch.q0, a, launch.p0);
    let n = (transit / step).ceil().max(1.0);
    let h = transit / n;
    let (end, act) = flow_with_action(params, &x0, a, duration, h)?;
    // stable side integrates backward; the forward action over [t, t+T] is
    // minus the accumulated value
    let forward_action = act * launch.time_dir;
    Ok((end, forward_action))
}

/// Solve the two-point problem for one section node.
///
/// For `q = 0` the node lies on the torus and the value is exactly zero.
pub fn shoot_section_node(
    params: &ModelParams,
    a: f64,
    sign: ManifoldSign,
    node: (f64, f64, f64),
    config: &ShootingConfig,
    warm: Option<WarmStart>,
) -> Result<ShotSolution> {
    let (node_t, node_theta, node_q) = node;
    if node_q.abs() > 0.75 + 1e-12 {
        return Err(Error::Domain(format!("section q must lie in [-3/4, 3/4], got {node_q}")));
    }
    let delta = config.delta(params.epsilon);
    if node_q == 0.0 {
        return Ok(ShotSolution {
            sign,
            a,
            node,
            transit: 0.0,
            theta0: node_theta,
            value: 0.0,
            endpoint: PhasePoint::on_torus(node_t, node_theta, a),
        });
    }
    if node_q.abs() <= delta {
        return Err(Error::Domain(format!(
            "section q = {node_q} lies inside the launch offset {delta}"
        )));
    }

    let launch = launch_data(params, sign, node_q, delta);
    let transit0 = pendulum::transit_time(params.epsilon, delta, node_q.abs())?;
    let drift = match sign {
        ManifoldSign::Plus => -a,
        ManifoldSign::Minus => a,
    };
    let (mut transit, mut theta0) = warm.unwrap_or((transit0, node_theta + drift * transit0));

    let mut jitter = crate::SplitMix::new(0x5EED ^ (sign as u64) << 17);
    for restart in 0..=config.retries {
        if restart > 0 {
            transit = transit0 * (1.0 + 0.15 * (jitter.next_f64() - 0.5));
            theta0 = node_theta + drift * transit + 0.1 * (jitter.next_f64() - 0.5);
        }
        match newton_match(
            params, a, sign, node_t, node_theta, node_q, transit, theta0, &launch, config,
        ) {
            Ok((tr, th0, end, fwd_action)) => {
                let tail = pendulum::s0(params.epsilon, delta);
                let value = match sign {
                    ManifoldSign::Plus => tail + fwd_action,
                    ManifoldSign::Minus => -(tail + fwd_action),
                };
                return Ok(ShotSolution {
                    sign,
                    a,
                    node,
                    transit: tr,
                    theta0: th0,
                    value,
                    endpoint: end,
                });
            }
            Err(_) if restart < config.retries => continue,
            Err(e) => return Err(e),
        }
    }
    unreachable!()
}

#[allow(clippy::too_many_arguments)]
fn newton_match(
    params: &ModelParams,
    a: f64,
    sign: ManifoldSign,
    node_t: f64,
    node_theta: f64,
    node_q: f64,
    mut transit: f64,
    mut theta0: f64,
    launch: &Launch,
    config: &ShootingConfig,
) -> Result<(f64, f64, PhasePoint, f64)> {
    let fail = |reason: String| Error::ShootingFailure {
        t: node_t,
        theta: node_theta,
        q: node_q,
        reason,
    };

    let (mut end, mut action) =
        shoot_once(params, a, sign, node_t, transit, theta0, launch, config.step)?;
    // fix the theta lift target from the initial trajectory
    let theta_target = node_theta + (end.theta - node_theta).round();
    let mut res = [end.theta - theta_target, end.q - node_q];
    let mut rnorm = res[0].abs().max(res[1].abs());

    for _ in 0..config.max_iter {
        if rnorm <= config.tol {
            return Ok((transit, theta0, end, action));
        }
        // finite-difference Jacobian in (transit, theta0)
        let dt = 1e-7 * transit.abs().max(1.0);
        let dth = 1e-7;
        let (end_t, _) =
            shoot_once(params, a, sign, node_t, transit + dt, theta0, launch, config.step)?;
        let (end_th, _) =
            shoot_once(params, a, sign, node_t, transit, theta0 + dth, launch, config.step)?;
        let j = [
            [(end_t.theta - end.theta) / dt, (end_th.theta - end.theta) / dth],
            [(end_t.q - end.q) / dt, (end_th.q - end.q) / dth],
        ];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det.abs() < 1e-14 || !det.is_finite() {
            return Err(fail("singular shooting Jacobian".into()));
        }
        let step_t = (-res[0] * j[1][1] + res[1] * j[0][1]) / det;
        let step_th = (res[0] * j[1][0] - res[1] * j[0][0]) / det;

        // damped update
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..10 {
            let cand_transit = transit + lambda * step_t;
            let cand_theta0 = theta0 + lambda * step_th;
            if cand_transit <= 0.0 {
                lambda *= 0.5;
                continue;
            }
            let (cand_end, cand_action) = shoot_once(
                params, a, sign, node_t, cand_transit, cand_theta0, launch, config.step,
            )?;
            let cand_res = [cand_end.theta - theta_target, cand_end.q - node_q];
            let cand_norm = cand_res[0].abs().max(cand_res[1].abs());
            if cand_norm < rnorm || cand_norm <= config.tol {
                transit = cand_transit;
                theta0 = cand_theta0;
                end = cand_end;
                action = cand_action;
                res = cand_res;
                rnorm = cand_norm;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(fail(format!("damped Newton stalled at residual {rnorm:.3e}")));
        }
    }
    if rnorm <= config.tol {
        return Ok((transit, theta0, end, action));
    }
    Err(fail(format!("no convergence within {} iterations, residual {rnorm:.3e}", config.max_iter)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn unperturbed_plus_matches_s0() {
        let params = ModelParams::arnold(0.25, 0.0).unwrap();
        let cfg = ShootingConfig::default();
        for q in [0.5, 0.25, -0.5, 0.75] {
            let sol = shoot_section_node(&params, 1.0, ManifoldSign::Plus, (0.3, 0.7, q), &cfg, None)
                .unwrap();
            assert_relative_eq!(sol.value, pendulum::s0(0.25, q), epsilon = 1e-10);
            // endpoint gradient = separatrix momentum, sign following the branch
            assert_relative_eq!(sol.grad_q(), pendulum::s0_prime(0.25, q), epsilon = 1e-8);
            assert_abs_diff_eq!(sol.grad_theta(), 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn unperturbed_minus_matches_negative_s0() {
        let params = ModelParams::arnold(0.25, 0.0).unwrap();
        let cfg = ShootingConfig::default();
        for q in [0.5, -0.5, -0.25] {
            let sol =
                shoot_section_node(&params, 0.7, ManifoldSign::Minus, (0.1, 0.2, q), &cfg, None)
                    .unwrap();
            assert_relative_eq!(sol.value, -pendulum::s0(0.25, q), epsilon = 1e-10);
            // stable branch has momentum -s0'(q)
            assert_relative_eq!(sol.grad_q(), -pendulum::s0_prime(0.25, q), epsilon = 1e-8);
        }
    }

    #[test]
    fn torus_node_is_exact_zero() {
        let params = ModelParams::arnold(0.25, 1e-3).unwrap();
        let cfg = ShootingConfig::default();
        let sol =
            shoot_section_node(&params, 1.0, ManifoldSign::Plus, (0.2, 0.9, 0.0), &cfg, None)
                .unwrap();
        assert_eq!(sol.value, 0.0);
    }

    #[test]
    fn perturbed_value_tracks_melnikov() {
        // S+ = S0 + mu M+ + O(mu^2)
        let eps = 0.25;
        let cfg = ShootingConfig::default();
        let (t, th, q) = (0.0, 0.0, 0.5);
        let mut defects = Vec::new();
        for mu in [1e-3, 5e-4] {
            let params = ModelParams::arnold(eps, mu).unwrap();
            let sol = shoot_section_node(&params, 1.0, ManifoldSign::Plus, (t, th, q), &cfg, None)
                .unwrap();
            let m_plus = crate::melnikov::melnikov_plus(&params, 1.0, t, th, q).unwrap();
            defects.push((sol.value - pendulum::s0(eps, q) - mu * m_plus).abs());
        }
        let ratio = defects[0] / defects[1];
        assert!(
            (3.0..6.0).contains(&ratio),
            "second-order defect ratio {ratio} (defects {defects:?})"
        );
    }

    #[test]
    fn warm_start_converges_fast() {
        let params = ModelParams::arnold(0.25, 1e-3).unwrap();
        let cfg = ShootingConfig::default();
        let s1 = shoot_section_node(&params, 1.0, ManifoldSign::Plus, (0.0, 0.0, 0.5), &cfg, None)
            .unwrap();
        let s2 = shoot_section_node(
            &params,
            1.0,
            ManifoldSign::Plus,
            (0.0, 0.0, 0.53),
            &cfg,
            Some((s1.transit, s1.theta0)),
        )
        .unwrap();
        assert!(s2.value > s1.value);
    }

    #[test]
    fn rejects_nodes_outside_strip() {
        let params = ModelParams::arnold(0.25, 0.0).unwrap();
        let cfg = ShootingConfig::default();
        assert!(
            shoot_section_node(&params, 0.0, ManifoldSign::Plus, (0.0, 0.0, 0.9), &cfg, None)
                .is_err()
        );
    }
}
