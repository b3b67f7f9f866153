//! The variational diffusion mechanism: two-point minimal actions, the
//! composite discrete action functional over a chain schedule, its local
//! minimization in the junction variables, and extraction of a genuine
//! drifting orbit.
//!
//! The composite functional over junctions `(t_i, theta_i)` with dwell
//! integers `tau_i` is
//!
//! ```text
//! S+_{a_0}(t_0, theta_0, 1/2)
//!   + sum_i A_{a_{i+1}}((t_i, theta_i, 1/2), (t_{i+1} + tau_{i+1}, theta_{i+1}, 1/2))
//!   + sum_i (a_i - a_{i+1}) theta_i
//!   - S-_{a_k}(t_{k-1}, theta_{k-1}, -1/2)
//! ```
//!
//! on the open box `(-1, 1)^{2k}`, plus per-junction energy couplings
//! `(a_{i+1}^2 - a_i^2)/2 t_i`. The energy couplings are to the lifted
//! times what `(a_i - a_{i+1}) theta_i` is to the angles: each `A` and `S`
//! term normalizes its integrand with its own `a^2/2`, so without them the
//! reference energy would jump at every level change and critical points
//! would carry velocity jumps of size `O(a_{i+1} - a_i)` instead of being
//! true orbits.
//!
//! Every `A` term is a discrete broken extremal: short true orbit pieces
//! joined at nodes, the nodes optimized until the discrete Euler-Lagrange
//! conditions (velocity continuity) hold. For large dwells the functional
//! separates into independent per-junction terms, which is what makes
//! seeds from the chain links nearly optimal.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrate::{flow, flow_endpoint, rk_step};
use crate::lbfgs::{self, LbfgsConfig};
use crate::manifolds::{
    shoot_section_node, ChainSchedule, ManifoldSign, ShootingConfig, ShotSolution,
};
use crate::model::{hamiltonian, ModelParams, PhasePoint};
use crate::pendulum;

/// Knobs of the variational solvers.
#[derive(Debug, Clone)]
pub struct BessiConfig {
    /// Discrete-curve node spacing, at most 1/20.
    pub node_spacing: f64,
    /// Integrator substeps per inter-node piece.
    pub piece_substeps: usize,
    /// Discrete Euler-Lagrange tolerance (gradient norm of a curve).
    pub el_tol: f64,
    /// Gradient tolerance of the junction minimization.
    pub junction_tol: f64,
    /// Smallest admissible dwell integer.
    pub tau_min: i64,
    pub shooting: ShootingConfig,
}

impl Default for BessiConfig {
    fn default() -> Self {
        BessiConfig {
            node_spacing: 0.05,
            piece_substeps: 4,
            el_tol: 1e-8,
            junction_tol: 1e-8,
            tau_min: 6,
            shooting: ShootingConfig::default(),
        }
    }
}

/// Broken extremal over uniform node times with fixed endpoints.
#[derive(Debug, Clone)]
pub struct DiscreteCurve {
    pub a: f64,
    pub t_start: f64,
    /// Node spacing.
    pub h: f64,
    /// Node positions (theta, q) as real lifts, endpoints included.
    pub nodes: Vec<[f64; 2]>,
    /// Launch velocity of each inter-node piece.
    pub velocities: Vec<[f64; 2]>,
    /// End velocity of each piece.
    pub end_velocities: Vec<[f64; 2]>,
    /// Reduced action of each piece.
    pub piece_actions: Vec<f64>,
    /// Total reduced action.
    pub value: f64,
    /// Discrete Euler-Lagrange residual (gradient norm over interior nodes).
    pub el_residual: f64,
}

impl DiscreteCurve {
    pub fn pieces(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn duration(&self) -> f64 {
        self.h * self.pieces() as f64
    }

    pub fn start_velocity(&self) -> [f64; 2] {
        self.velocities[0]
    }

    pub fn end_velocity(&self) -> [f64; 2] {
        *self.end_velocities.last().unwrap()
    }
}

/// One piece integration: position, velocity and reduced action at the end.
fn piece_flow(
    params: &ModelParams,
    a: f64,
    t0: f64,
    pos: [f64; 2],
    vel: [f64; 2],
    h: f64,
    substeps: usize,
) -> ([f64; 2], [f64; 2], f64) {
    let hs = h / substeps as f64;
    let mut y = [pos[0], pos[1], vel[0], vel[1], 0.0];
    for i in 0..substeps {
        y = rk_step(params, Some(a), t0 + i as f64 * hs, &y, hs);
    }
    ([y[0], y[1]], [y[2], y[3]], y[4])
}

/// Solve one piece boundary-value problem for the launch velocity.
///
/// Fixed-point iteration `v += (target - end) / h` contracts at rate
/// `O(h^2 V'')`; a finite-difference Newton step covers slow starts.
/// Returns `None` when the piece cannot be matched.
fn solve_piece(
    params: &ModelParams,
    a: f64,
    t0: f64,
    from: [f64; 2],
    to: [f64; 2],
    v0: [f64; 2],
    h: f64,
    substeps: usize,
) -> Option<([f64; 2], [f64; 2], f64)> {
    let tol = 1e-12;
    let mut v = v0;
    for _ in 0..14 {
        let (pos, vel, act) = piece_flow(params, a, t0, from, v, h, substeps);
        if !pos[0].is_finite() || !pos[1].is_finite() {
            return None;
        }
        let r = [to[0] - pos[0], to[1] - pos[1]];
        let rn = r[0].abs().max(r[1].abs());
        if rn <= tol {
            return Some((v, vel, act));
        }
        if rn > 0.3 * h {
            // far from the target: Newton on the endpoint map
            let d = 1e-7;
            let (p1, _, _) = piece_flow(params, a, t0, from, [v[0] + d, v[1]], h, substeps);
            let (p2, _, _) = piece_flow(params, a, t0, from, [v[0], v[1] + d], h, substeps);
            let j = [
                [(p1[0] - pos[0]) / d, (p2[0] - pos[0]) / d],
                [(p1[1] - pos[1]) / d, (p2[1] - pos[1]) / d],
            ];
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            if det.abs() < 1e-18 || !det.is_finite() {
                return None;
            }
            v = [
                v[0] + (r[0] * j[1][1] - r[1] * j[0][1]) / det,
                v[1] + (-r[0] * j[1][0] + r[1] * j[0][0]) / det,
            ];
        } else {
            v = [v[0] + r[0] / h, v[1] + r[1] / h];
        }
    }
    let (pos, vel, act) = piece_flow(params, a, t0, from, v, h, substeps);
    let rn = (to[0] - pos[0]).abs().max((to[1] - pos[1]).abs());
    if rn <= 1e-9 {
        Some((v, vel, act))
    } else {
        None
    }
}

/// Two-point minimal-action problem over broken extremals.
struct CurveProblem<'p> {
    params: &'p ModelParams,
    a: f64,
    t_start: f64,
    h: f64,
    substeps: usize,
    n: usize,
    start: [f64; 2],
    end: [f64; 2],
    /// Warm launch velocities, one per piece.
    vels: Vec<[f64; 2]>,
}

impl<'p> CurveProblem<'p> {
    fn node(&self, j: usize, interior: &[f64]) -> [f64; 2] {
        if j == 0 {
            self.start
        } else if j == self.n {
            self.end
        } else {
            [interior[2 * (j - 1)], interior[2 * j - 1]]
        }
    }

    /// Objective and gradient over the flattened interior nodes; the
    /// gradient of a broken extremal is the velocity mismatch at each
    /// interior node. Unmatchable pieces surface as an infinite value so
    /// the line search backtracks.
    fn eval(
        &mut self,
        interior: &[f64],
        grad: &mut [f64],
    ) -> (f64, Vec<[f64; 2]>, Vec<f64>) {
        let n = self.n;
        let mut value = 0.0;
        let mut end_vels = vec![[0.0_f64; 2]; n];
        let mut actions = vec![0.0_f64; n];
        for j in 0..n {
            let from = self.node(j, interior);
            let to = self.node(j + 1, interior);
            let t0 = self.t_start + j as f64 * self.h;
            match solve_piece(self.params, self.a, t0, from, to, self.vels[j], self.h, self.substeps)
            {
                Some((v, vel_end, act)) => {
                    self.vels[j] = v;
                    end_vels[j] = vel_end;
                    actions[j] = act;
                    value += act;
                }
                None => {
                    grad.fill(0.0);
                    return (f64::INFINITY, end_vels, actions);
                }
            }
        }
        for j in 1..n {
            grad[2 * (j - 1)] = end_vels[j - 1][0] - self.vels[j][0];
            grad[2 * j - 1] = end_vels[j - 1][1] - self.vels[j][1];
        }
        (value, end_vels, actions)
    }

    /// Assemble the block-tridiagonal Jacobian of the velocity-mismatch
    /// system by finite differences of the piece boundary maps.
    fn assemble_jacobian(&mut self, interior: &[f64]) -> Result<ArcJacobian> {
        let n = self.n;
        let m = n - 1;
        let d = 1e-7;
        let mut dv_end_dfrom = vec![[[0.0; 2]; 2]; n];
        let mut dv_end_dto = vec![[[0.0; 2]; 2]; n];
        let mut dv_start_dfrom = vec![[[0.0; 2]; 2]; n];
        let mut dv_start_dto = vec![[[0.0; 2]; 2]; n];
        for j in 0..n {
            let from = self.node(j, interior);
            let to = self.node(j + 1, interior);
            let t0 = self.t_start + j as f64 * self.h;
            let (v_base, ve_base, _) = solve_piece(
                self.params, self.a, t0, from, to, self.vels[j], self.h, self.substeps,
            )
            .ok_or(Error::MinimizationFailure {
                reason: "piece solve failed during Jacobian assembly".into(),
                grad_norm: f64::NAN,
            })?;
            for c in 0..2 {
                let mut fp = from;
                fp[c] += d;
                if let Some((v, ve, _)) =
                    solve_piece(self.params, self.a, t0, fp, to, v_base, self.h, self.substeps)
                {
                    for r in 0..2 {
                        dv_start_dfrom[j][r][c] = (v[r] - v_base[r]) / d;
                        dv_end_dfrom[j][r][c] = (ve[r] - ve_base[r]) / d;
                    }
                }
                let mut tp = to;
                tp[c] += d;
                if let Some((v, ve, _)) =
                    solve_piece(self.params, self.a, t0, from, tp, v_base, self.h, self.substeps)
                {
                    for r in 0..2 {
                        dv_start_dto[j][r][c] = (v[r] - v_base[r]) / d;
                        dv_end_dto[j][r][c] = (ve[r] - ve_base[r]) / d;
                    }
                }
            }
        }
        let mut jac = ArcJacobian {
            lower: vec![[[0.0; 2]; 2]; m],
            diag: vec![[[0.0; 2]; 2]; m],
            upper: vec![[[0.0; 2]; 2]; m],
        };
        for j in 1..n {
            let i = j - 1;
            for r in 0..2 {
                for c in 0..2 {
                    jac.lower[i][r][c] = dv_end_dfrom[j - 1][r][c];
                    jac.diag[i][r][c] = dv_end_dto[j - 1][r][c] - dv_start_dfrom[j][r][c];
                    jac.upper[i][r][c] = -dv_start_dto[j][r][c];
                }
            }
        }
        Ok(jac)
    }

    /// Damped block-tridiagonal Newton on the velocity-mismatch system;
    /// polishes the quasi-Newton minimizer to the Euler-Lagrange tolerance.
    /// A cached Jacobian is reused across calls and refreshed on stall.
    fn newton_polish(
        &mut self,
        interior: &mut [f64],
        tol: f64,
        jac_cache: &mut Option<ArcJacobian>,
    ) -> Result<f64> {
        let m = self.n - 1;
        let mut grad = vec![0.0; 2 * m];
        let (_, _, _) = self.eval(interior, &mut grad);
        let mut rnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let mut fresh = false;
        for _ in 0..12 {
            if rnorm <= tol {
                break;
            }
            if jac_cache.is_none() {
                *jac_cache = Some(self.assemble_jacobian(interior)?);
                fresh = true;
            }
            let jac = jac_cache.as_ref().unwrap();
            let rhs: Vec<[f64; 2]> = (0..m).map(|i| [-grad[2 * i], -grad[2 * i + 1]]).collect();
            let delta = block_tridiag_solve(&jac.lower, &jac.diag, &jac.upper, &rhs).ok_or(
                Error::MinimizationFailure {
                    reason: "singular tridiagonal system in Newton polish".into(),
                    grad_norm: rnorm,
                },
            )?;
            let mut lambda = 1.0;
            let mut improved = false;
            for _ in 0..8 {
                let mut cand: Vec<f64> = interior.to_vec();
                for i in 0..m {
                    cand[2 * i] += lambda * delta[i][0];
                    cand[2 * i + 1] += lambda * delta[i][1];
                }
                let mut g2 = vec![0.0; 2 * m];
                let (v2, _, _) = self.eval(&cand, &mut g2);
                let rn2 = g2.iter().map(|g| g * g).sum::<f64>().sqrt();
                if v2.is_finite() && rn2 < rnorm {
                    interior.copy_from_slice(&cand);
                    grad = g2;
                    rnorm = rn2;
                    improved = true;
                    break;
                }
                lambda *= 0.5;
            }
            if !improved {
                if fresh {
                    break;
                }
                // stale Jacobian: refresh once and retry
                *jac_cache = None;
                continue;
            }
        }
        Ok(rnorm)
    }
}

/// Cached block-tridiagonal Jacobian of one arc.
#[derive(Debug, Clone)]
pub(crate) struct ArcJacobian {
    lower: Vec<[[f64; 2]; 2]>,
    diag: Vec<[[f64; 2]; 2]>,
    upper: Vec<[[f64; 2]; 2]>,
}

/// Warm state of one arc in the composite cache.
#[derive(Debug, Clone)]
pub(crate) struct ArcState {
    curve: DiscreteCurve,
    jac: Option<ArcJacobian>,
}

fn block_tridiag_solve(
    lower: &[[[f64; 2]; 2]],
    diag: &[[[f64; 2]; 2]],
    upper: &[[[f64; 2]; 2]],
    rhs: &[[f64; 2]],
) -> Option<Vec<[f64; 2]>> {
    let m = diag.len();
    let inv2 = |a: &[[f64; 2]; 2]| -> Option<[[f64; 2]; 2]> {
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        if det.abs() < 1e-300 || !det.is_finite() {
            return None;
        }
        Some([[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]])
    };
    let mul = |a: &[[f64; 2]; 2], b: &[[f64; 2]; 2]| -> [[f64; 2]; 2] {
        let mut out = [[0.0; 2]; 2];
        for r in 0..2 {
            for c in 0..2 {
                out[r][c] = a[r][0] * b[0][c] + a[r][1] * b[1][c];
            }
        }
        out
    };
    let mulv = |a: &[[f64; 2]; 2], v: &[f64; 2]| -> [f64; 2] {
        [a[0][0] * v[0] + a[0][1] * v[1], a[1][0] * v[0] + a[1][1] * v[1]]
    };

    let mut c_star = vec![[[0.0; 2]; 2]; m];
    let mut d_star = vec![[0.0; 2]; m];
    let mut inv = inv2(&diag[0])?;
    c_star[0] = mul(&inv, &upper[0]);
    d_star[0] = mulv(&inv, &rhs[0]);
    for i in 1..m {
        let lc = mul(&lower[i], &c_star[i - 1]);
        let denom = [
            [diag[i][0][0] - lc[0][0], diag[i][0][1] - lc[0][1]],
            [diag[i][1][0] - lc[1][0], diag[i][1][1] - lc[1][1]],
        ];
        inv = inv2(&denom)?;
        c_star[i] = mul(&inv, &upper[i]);
        let lv = mulv(&lower[i], &d_star[i - 1]);
        d_star[i] = mulv(&inv, &[rhs[i][0] - lv[0], rhs[i][1] - lv[1]]);
    }
    let mut x = vec![[0.0; 2]; m];
    x[m - 1] = d_star[m - 1];
    for i in (0..m - 1).rev() {
        let cv = mulv(&c_star[i], &x[i + 1]);
        x[i] = [d_star[i][0] - cv[0], d_star[i][1] - cv[1]];
    }
    Some(x)
}

/// Separatrix-profile initial guess for an inter-torus arc.
fn initial_nodes(
    params: &ModelParams,
    t1: f64,
    theta1: f64,
    t2: f64,
    theta2_lift: f64,
    q_from: f64,
    q_to: f64,
    n: usize,
    h: f64,
) -> Vec<[f64; 2]> {
    let lam = params.lambda();
    let tan_to = (std::f64::consts::PI * q_to / 2.0).tan();
    let tan_from = (std::f64::consts::PI * (-q_from) / 2.0).tan();
    (0..=n)
        .map(|j| {
            let s = t1 + j as f64 * h;
            let up = (2.0 / std::f64::consts::PI) * (tan_to * (lam * (s - t2)).exp()).atan();
            let dn = -(2.0 / std::f64::consts::PI) * (tan_from * (-lam * (s - t1)).exp()).atan();
            let mut q = up + dn;
            if j == 0 {
                q = q_from;
            } else if j == n {
                q = q_to;
            }
            let theta = theta1 + (theta2_lift - theta1) * (s - t1) / (t2 - t1);
            [theta, q]
        })
        .collect()
}

/// Minimal reduced action `A_a` between two section points, together with
/// its minimizing discrete curve.
///
/// Endpoints follow the lift convention of the composite functional: the
/// curve runs from `(theta1, q1 - 1)` at `t1` to `(theta2, q2)` at `t2`.
pub fn action_a(
    params: &ModelParams,
    a: f64,
    endpoint1: (f64, f64, f64),
    endpoint2: (f64, f64, f64),
    config: &BessiConfig,
) -> Result<(f64, DiscreteCurve)> {
    let (t1, theta1, q1) = endpoint1;
    let (t2, theta2, q2) = endpoint2;
    if t2 <= t1 {
        return Err(Error::Domain(format!("action_a requires t2 > t1, got {t1} .. {t2}")));
    }
    if !(0.0 < q1 && q1 < 1.0 && 0.0 < q2 && q2 < 1.0) {
        return Err(Error::Domain("action_a endpoints need q in (0, 1)".into()));
    }
    let mut state = None;
    let value = solve_arc(params, a, t1, theta1, q1 - 1.0, t2, theta2, q2, config, &mut state)?;
    Ok((value, state.expect("arc state populated on success").curve))
}

/// Arc solver shared by `action_a` and the composite functional; `state`
/// carries the warm curve and the cached Jacobian across calls.
#[allow(clippy::too_many_arguments)]
fn solve_arc(
    params: &ModelParams,
    a: f64,
    t1: f64,
    theta1: f64,
    q_from: f64,
    t2: f64,
    theta2: f64,
    q_to: f64,
    config: &BessiConfig,
    state: &mut Option<ArcState>,
) -> Result<f64> {
    let duration = t2 - t1;
    let n = ((duration / config.node_spacing).ceil() as usize).max(2);
    let h = duration / n as f64;
    // integer winding keeps the drift near rate a
    let winding = (a * duration - (theta2 - theta1)).round();
    let theta2_lift = theta2 + winding;
    let start = [theta1, q_from];
    let end = [theta2_lift, q_to];

    let warm_ok = matches!(state, Some(st) if st.curve.pieces() == n);
    if !warm_ok {
        *state = None;
    }
    let (mut interior, vels, mut jac_cache) = match state.take() {
        Some(st) => {
            let mut int = Vec::with_capacity(2 * (n - 1));
            for j in 1..n {
                int.push(st.curve.nodes[j][0]);
                int.push(st.curve.nodes[j][1]);
            }
            (int, st.curve.velocities, st.jac)
        }
        None => {
            let nodes = initial_nodes(params, t1, theta1, t2, theta2_lift, q_from, q_to, n, h);
            let mut int = Vec::with_capacity(2 * (n - 1));
            for node in nodes.iter().take(n).skip(1) {
                int.push(node[0]);
                int.push(node[1]);
            }
            let vels: Vec<[f64; 2]> = (0..n)
                .map(|j| {
                    [(nodes[j + 1][0] - nodes[j][0]) / h, (nodes[j + 1][1] - nodes[j][1]) / h]
                })
                .collect();
            (int, vels, None)
        }
    };

    let mut problem = CurveProblem {
        params,
        a,
        t_start: t1,
        h,
        substeps: config.piece_substeps,
        n,
        start,
        end,
        vels,
    };

    // quasi-Newton only when the start is far; warm re-solves go straight
    // to the cached-Jacobian Newton
    let mut g0 = vec![0.0; 2 * (n - 1)];
    let (v0, _, _) = problem.eval(&interior, &mut g0);
    let r0 = g0.iter().map(|g| g * g).sum::<f64>().sqrt();
    if !v0.is_finite() || r0 > 1e-3 {
        let lb = LbfgsConfig {
            gtol: (config.el_tol * 100.0).min(1e-6),
            max_iter: 500,
            ..Default::default()
        };
        let out = lbfgs::minimize(
            |x, g| Ok(problem.eval(x, g).0),
            interior.clone(),
            &lb,
            |_, _| f64::INFINITY,
        )?;
        interior = out.x;
        jac_cache = None;
    }
    let rnorm = problem.newton_polish(&mut interior, config.el_tol * 0.3, &mut jac_cache)?;
    if rnorm > config.el_tol {
        return Err(Error::MinimizationFailure {
            reason: "discrete curve failed to reach the Euler-Lagrange tolerance".into(),
            grad_norm: rnorm,
        });
    }

    let mut grad = vec![0.0; 2 * (n - 1)];
    let (value, end_vels, actions) = problem.eval(&interior, &mut grad);
    let mut nodes = Vec::with_capacity(n + 1);
    nodes.push(start);
    for j in 1..n {
        nodes.push([interior[2 * (j - 1)], interior[2 * j - 1]]);
    }
    nodes.push(end);
    let curve = DiscreteCurve {
        a,
        t_start: t1,
        h,
        nodes,
        velocities: problem.vels,
        end_velocities: end_vels,
        piece_actions: actions,
        value,
        el_residual: rnorm,
    };
    *state = Some(ArcState { curve, jac: jac_cache });
    Ok(value)
}

/// Junction variables of the composite functional: per-junction section
/// coordinates in the open box and the dwell integers.
#[derive(Debug, Clone, Serialize)]
pub struct JunctionVariables {
    pub t: Vec<f64>,
    pub theta: Vec<f64>,
    /// `dwells[i]` belongs to the arc ending at junction `i` (entry 0
    /// unused).
    pub dwells: Vec<i64>,
}

impl JunctionVariables {
    pub fn k(&self) -> usize {
        self.t.len()
    }

    /// Seed from the verified chain links and the schedule dwells.
    pub fn seed_from_chain(schedule: &ChainSchedule) -> Result<Self> {
        if schedule.links.is_empty() {
            return Err(Error::Domain(
                "schedule has no links; seed the homoclinic junction directly".into(),
            ));
        }
        let rep = |x: f64| if x > 0.5 { x - 1.0 } else { x };
        let t = schedule.links.iter().map(|l| rep(l.t)).collect();
        let theta = schedule.links.iter().map(|l| rep(l.theta)).collect();
        let dwells = schedule.dwells[..schedule.links.len()].to_vec();
        Ok(JunctionVariables { t, theta, dwells })
    }

    fn validate(&self, tau_min: i64) -> Result<()> {
        if self.t.len() != self.theta.len() || self.t.len() != self.dwells.len() {
            return Err(Error::Domain("junction variable lengths disagree".into()));
        }
        for (i, (&t, &th)) in self.t.iter().zip(&self.theta).enumerate() {
            if t.abs() >= 1.0 || th.abs() >= 1.0 {
                return Err(Error::EscapedBox { junction: i });
            }
        }
        for &d in self.dwells.iter().skip(1) {
            if d < tau_min {
                return Err(Error::Domain(format!("dwell {d} below tau_min {tau_min}")));
            }
        }
        Ok(())
    }
}

/// Evaluation record of the composite functional.
pub struct CompositeEval {
    pub value: f64,
    /// Gradient over `(t_0, theta_0, t_1, theta_1, ...)`.
    pub grad: Vec<f64>,
    pub boundary_plus: ShotSolution,
    pub boundary_minus: ShotSolution,
}

/// Composite functional with warm caches for the arcs and the boundary
/// shooting problems.
pub struct CompositeProblem<'p> {
    pub params: &'p ModelParams,
    pub levels: Vec<f64>,
    pub config: BessiConfig,
    arc_cache: Vec<Option<ArcState>>,
    warm_plus: Option<(f64, f64)>,
    warm_minus: Option<(f64, f64)>,
}

impl<'p> CompositeProblem<'p> {
    pub fn new(params: &'p ModelParams, schedule: &ChainSchedule, config: BessiConfig) -> Self {
        let junctions = (schedule.levels.len() - 1).max(1);
        CompositeProblem {
            params,
            levels: schedule.levels.clone(),
            config,
            arc_cache: vec![None; junctions - 1],
            warm_plus: None,
            warm_minus: None,
        }
    }

    pub fn junction_count(&self) -> usize {
        (self.levels.len() - 1).max(1)
    }

    /// Level of the torus the arc after junction `i` dwells at.
    fn arc_level(&self, i: usize) -> f64 {
        self.levels[(i + 1).min(self.levels.len() - 1)]
    }

    pub fn evaluate(&mut self, vars: &JunctionVariables) -> Result<CompositeEval> {
        vars.validate(self.config.tau_min)?;
        let k = self.junction_count();
        if vars.k() != k {
            return Err(Error::Domain(format!("expected {k} junctions, got {}", vars.k())));
        }

        let sp = shoot_section_node(
            self.params,
            self.levels[0],
            ManifoldSign::Plus,
            (vars.t[0].rem_euclid(1.0), vars.theta[0].rem_euclid(1.0), 0.5),
            &self.config.shooting,
            self.warm_plus,
        )?;
        self.warm_plus = Some((sp.transit, sp.theta0));
        let last = k - 1;
        let a_last = *self.levels.last().unwrap();
        let sm = shoot_section_node(
            self.params,
            a_last,
            ManifoldSign::Minus,
            (vars.t[last].rem_euclid(1.0), vars.theta[last].rem_euclid(1.0), -0.5),
            &self.config.shooting,
            self.warm_minus,
        )?;
        self.warm_minus = Some((sm.transit, sm.theta0));

        let arcs: Vec<Result<f64>> = {
            let params = self.params;
            let config = &self.config;
            let levels = &self.levels;
            self.arc_cache
                .par_iter_mut()
                .enumerate()
                .map(|(i, cache)| {
                    let a = levels[i + 1];
                    let t2 = vars.t[i + 1] + vars.dwells[i + 1] as f64;
                    solve_arc(
                        params,
                        a,
                        vars.t[i],
                        vars.theta[i],
                        -0.5,
                        t2,
                        vars.theta[i + 1],
                        0.5,
                        config,
                        cache,
                    )
                })
                .collect()
        };

        let mut value = sp.value - sm.value;
        let mut grad = vec![0.0; 2 * k];
        grad[0] += sp.grad_t(self.params);
        grad[1] += sp.grad_theta();
        grad[2 * last] -= sm.grad_t(self.params);
        grad[2 * last + 1] -= sm.grad_theta();
        for i in 0..k {
            let a_lo = self.levels[i.min(self.levels.len() - 1)];
            let a_hi = self.arc_level(i);
            // momentum coupling (a_i - a_{i+1}) theta_i and its energy
            // counterpart (a_{i+1}^2 - a_i^2)/2 t_i; the latter cancels the
            // jump of the a^2/2 reference between consecutive action terms,
            // so that critical points have continuous energy (hence
            // continuous q-velocity) across the junction
            let da = a_lo - a_hi;
            let de = 0.5 * (a_hi * a_hi - a_lo * a_lo);
            value += da * vars.theta[i] + de * vars.t[i];
            grad[2 * i + 1] += da;
            grad[2 * i] += de;
        }
        for (i, arc) in arcs.into_iter().enumerate() {
            let av = arc?;
            value += av;
            let curve = &self.arc_cache[i].as_ref().expect("arc solved").curve;
            let a = self.arc_level(i);
            let vstart = curve.start_velocity();
            let vend = curve.end_velocity();
            let x_start = PhasePoint::new(
                curve.t_start,
                curve.nodes[0][0],
                curve.nodes[0][1],
                vstart[0],
                vstart[1],
            );
            let nend = *curve.nodes.last().unwrap();
            let x_end = PhasePoint::new(
                curve.t_start + curve.duration(),
                nend[0],
                nend[1],
                vend[0],
                vend[1],
            );
            let h_start = hamiltonian(self.params, &x_start) - 0.5 * a * a;
            let h_end = hamiltonian(self.params, &x_end) - 0.5 * a * a;
            grad[2 * i] += h_start;
            grad[2 * i + 1] -= vstart[0] - a;
            grad[2 * (i + 1)] -= h_end;
            grad[2 * (i + 1) + 1] += vend[0] - a;
        }

        Ok(CompositeEval { value, grad, boundary_plus: sp, boundary_minus: sm })
    }

    /// Gradient block of one junction; re-solves only the one or two arcs
    /// that touch it.
    fn block_grad(&mut self, vars: &JunctionVariables, i: usize) -> Result<[f64; 2]> {
        let t = vars.t[i];
        let theta = vars.theta[i];
        let k = self.junction_count();
        let last = k - 1;
        let mut g = [0.0, 0.0];
        if i == 0 {
            let sp = shoot_section_node(
                self.params,
                self.levels[0],
                ManifoldSign::Plus,
                (t.rem_euclid(1.0), theta.rem_euclid(1.0), 0.5),
                &self.config.shooting,
                self.warm_plus,
            )?;
            g[0] += sp.grad_t(self.params);
            g[1] += sp.grad_theta();
        }
        if i == last {
            let sm = shoot_section_node(
                self.params,
                *self.levels.last().unwrap(),
                ManifoldSign::Minus,
                (t.rem_euclid(1.0), theta.rem_euclid(1.0), -0.5),
                &self.config.shooting,
                self.warm_minus,
            )?;
            g[0] -= sm.grad_t(self.params);
            g[1] -= sm.grad_theta();
        }
        let a_lo = self.levels[i.min(self.levels.len() - 1)];
        let a_hi = self.arc_level(i);
        g[1] += a_lo - a_hi;
        g[0] += 0.5 * (a_hi * a_hi - a_lo * a_lo);
        // arc ending at junction i
        if i > 0 {
            let a = self.arc_level(i - 1);
            let t2 = t + vars.dwells[i] as f64;
            solve_arc(
                self.params,
                a,
                vars.t[i - 1],
                vars.theta[i - 1],
                -0.5,
                t2,
                theta,
                0.5,
                &self.config,
                &mut self.arc_cache[i - 1],
            )?;
            let curve = &self.arc_cache[i - 1].as_ref().unwrap().curve;
            let vend = curve.end_velocity();
            let nend = *curve.nodes.last().unwrap();
            let x_end = PhasePoint::new(
                curve.t_start + curve.duration(),
                nend[0],
                nend[1],
                vend[0],
                vend[1],
            );
            g[0] -= hamiltonian(self.params, &x_end) - 0.5 * a * a;
            g[1] += vend[0] - a;
        }
        // arc starting at junction i
        if i < last {
            let a = self.arc_level(i);
            let t2 = vars.t[i + 1] + vars.dwells[i + 1] as f64;
            solve_arc(
                self.params,
                a,
                t,
                theta,
                -0.5,
                t2,
                vars.theta[i + 1],
                0.5,
                &self.config,
                &mut self.arc_cache[i],
            )?;
            let curve = &self.arc_cache[i].as_ref().unwrap().curve;
            let vstart = curve.start_velocity();
            let x_start = PhasePoint::new(
                curve.t_start,
                curve.nodes[0][0],
                curve.nodes[0][1],
                vstart[0],
                vstart[1],
            );
            g[0] += hamiltonian(self.params, &x_start) - 0.5 * a * a;
            g[1] -= vstart[0] - a;
        }
        Ok(g)
    }
}

/// The composite discrete action functional at given junction variables.
pub fn composite_action(
    params: &ModelParams,
    schedule: &ChainSchedule,
    vars: &JunctionVariables,
    config: &BessiConfig,
) -> Result<f64> {
    let mut problem = CompositeProblem::new(params, schedule, config.clone());
    Ok(problem.evaluate(vars)?.value)
}

/// Locally minimize the composite functional over the junction variables
/// inside the open box `(-1,1)^{2k}`, starting from `seed`.
pub fn minimize_composite(
    params: &ModelParams,
    schedule: &ChainSchedule,
    seed: &JunctionVariables,
    config: &BessiConfig,
) -> Result<(JunctionVariables, f64)> {
    let mut problem = CompositeProblem::new(params, schedule, config.clone());
    let k = problem.junction_count();
    let dwells = seed.dwells.clone();
    let mut z0 = Vec::with_capacity(2 * k);
    for i in 0..k {
        z0.push(seed.t[i]);
        z0.push(seed.theta[i]);
    }
    let unpack = |z: &[f64]| JunctionVariables {
        t: (0..k).map(|i| z[2 * i]).collect(),
        theta: (0..k).map(|i| z[2 * i + 1]).collect(),
        dwells: dwells.clone(),
    };

    // Quasi-Newton descent only when the seed is rough; chain seeds start
    // within the Newton basin and go straight to the tridiagonal polish.
    let e0 = problem.evaluate(&unpack(&z0))?;
    let mut gnorm = e0.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let mut z = z0;
    if gnorm > 5e-2 {
        let lb = LbfgsConfig { gtol: 1e-4, max_iter: 300, ..Default::default() };
        let margin = 1e-7;
        let out = lbfgs::minimize(
            |zz, g| {
                let vars = unpack(zz);
                match problem.evaluate(&vars) {
                    Ok(e) => {
                        g.copy_from_slice(&e.grad);
                        Ok(e.value)
                    }
                    Err(Error::EscapedBox { .. }) => {
                        g.fill(0.0);
                        Ok(f64::INFINITY)
                    }
                    Err(e) => Err(e),
                }
            },
            z,
            &lb,
            |zz, d| {
                let mut cap = f64::INFINITY;
                for (zi, di) in zz.iter().zip(d) {
                    if *di > 0.0 {
                        cap = cap.min((1.0 - margin - zi) / di);
                    } else if *di < 0.0 {
                        cap = cap.min((-1.0 + margin - zi) / di);
                    }
                }
                cap
            },
        )?;
        z = out.x;
        gnorm = out.grad_norm;
    }

    // Newton polish on the junction-gradient system. The junction Hessian
    // is block tridiagonal: each arc couples its two junctions with a
    // stiffness of order 1/tau (the finite-window drift constraint), on
    // top of the per-junction splitting blocks of order mu. The assembled
    // Hessian doubles as the second-difference certificate: its block
    // elimination pivots must be positive definite with margin, which is
    // positive semidefiniteness on the non-flat directions.
    let hstep = 1e-5;
    let mut lower = vec![[[0.0_f64; 2]; 2]; k];
    let mut diag = vec![[[0.0_f64; 2]; 2]; k];
    let mut upper = vec![[[0.0_f64; 2]; 2]; k];
    {
        let vars0 = unpack(&z);
        for j in 0..k {
            // central differences in (t_j, theta_j) of the block gradients
            // at junctions j-1, j, j+1
            for (c, is_theta) in [(0usize, false), (1usize, true)] {
                let mut vp = vars0.clone();
                let mut vm = vars0.clone();
                if is_theta {
                    vp.theta[j] += hstep;
                    vm.theta[j] -= hstep;
                } else {
                    vp.t[j] += hstep;
                    vm.t[j] -= hstep;
                }
                for delta in [-1_i64, 0, 1] {
                    let i = j as i64 + delta;
                    if i < 0 || i >= k as i64 {
                        continue;
                    }
                    let i = i as usize;
                    let gp = problem.block_grad(&vp, i)?;
                    let gm = problem.block_grad(&vm, i)?;
                    let col = [(gp[0] - gm[0]) / (2.0 * hstep), (gp[1] - gm[1]) / (2.0 * hstep)];
                    // d g_i / d z_j contributes to the block with offset
                    // j - i relative to row i
                    let target = match j as i64 - i as i64 {
                        -1 => &mut lower[i],
                        0 => &mut diag[i],
                        1 => &mut upper[i],
                        _ => unreachable!(),
                    };
                    target[0][c] = col[0];
                    target[1][c] = col[1];
                }
            }
        }
        // symmetrize the Hessian across the sub/super diagonal
        for i in 0..k.saturating_sub(1) {
            for r in 0..2 {
                for c in 0..2 {
                    let avg = 0.5 * (upper[i][r][c] + lower[i + 1][c][r]);
                    upper[i][r][c] = avg;
                    lower[i + 1][c][r] = avg;
                }
            }
        }
    }

    for _ in 0..15 {
        if gnorm <= config.junction_tol {
            break;
        }
        let e = problem.evaluate(&unpack(&z))?;
        let rhs: Vec<[f64; 2]> = (0..k).map(|i| [-e.grad[2 * i], -e.grad[2 * i + 1]]).collect();
        let step = block_tridiag_solve(&lower, &diag, &upper, &rhs).ok_or(
            Error::MinimizationFailure {
                reason: "singular junction Hessian in the Newton polish".into(),
                grad_norm: gnorm,
            },
        )?;
        let mut lambda = 1.0;
        let mut improved = false;
        for _ in 0..8 {
            let mut z_new = z.clone();
            for i in 0..k {
                z_new[2 * i] += lambda * step[i][0];
                z_new[2 * i + 1] += lambda * step[i][1];
            }
            if z_new.iter().any(|v| v.abs() >= 1.0) {
                lambda *= 0.5;
                continue;
            }
            match problem.evaluate(&unpack(&z_new)) {
                Ok(e_new) => {
                    let gn_new = e_new.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                    if gn_new < gnorm {
                        z = z_new;
                        gnorm = gn_new;
                        improved = true;
                        break;
                    }
                    lambda *= 0.5;
                }
                Err(_) => lambda *= 0.5,
            }
        }
        if !improved {
            break;
        }
    }
    if gnorm > config.junction_tol {
        return Err(Error::MinimizationFailure {
            reason: "junction minimization did not reach tolerance".into(),
            grad_norm: gnorm,
        });
    }
    let vars = unpack(&z);
    for (i, (&t, &th)) in vars.t.iter().zip(&vars.theta).enumerate() {
        if t.abs() >= 1.0 - 1e-6 || th.abs() >= 1.0 - 1e-6 {
            return Err(Error::EscapedBox { junction: i });
        }
    }

    // positive-definiteness certificate from the block elimination pivots
    let pd_margin = 1e-6;
    {
        let mut schur = diag[0];
        for i in 0..k {
            if i > 0 {
                // schur_i = D_i - L_i schur_{i-1}^{-1} U_{i-1}
                let det =
                    schur[0][0] * schur[1][1] - schur[0][1] * schur[1][0];
                let inv = [
                    [schur[1][1] / det, -schur[0][1] / det],
                    [-schur[1][0] / det, schur[0][0] / det],
                ];
                let mut li = [[0.0; 2]; 2];
                for r in 0..2 {
                    for c in 0..2 {
                        li[r][c] = lower[i][r][0] * inv[0][c] + lower[i][r][1] * inv[1][c];
                    }
                }
                let mut lu = [[0.0; 2]; 2];
                for r in 0..2 {
                    for c in 0..2 {
                        lu[r][c] = li[r][0] * upper[i - 1][0][c] + li[r][1] * upper[i - 1][1][c];
                    }
                }
                for r in 0..2 {
                    for c in 0..2 {
                        schur[r][c] = diag[i][r][c] - lu[r][c];
                    }
                }
            }
            let tr = schur[0][0] + schur[1][1];
            let det = schur[0][0] * schur[1][1] - schur[0][1] * schur[1][0];
            let lam_min = 0.5 * (tr - (tr * tr - 4.0 * det).max(0.0).sqrt());
            if lam_min < pd_margin {
                return Err(Error::MinimizationFailure {
                    reason: format!(
                        "second-difference test failed at junction {i} (pivot eigenvalue {lam_min:.3e})"
                    ),
                    grad_norm: gnorm,
                });
            }
        }
    }

    let value = problem.evaluate(&vars)?.value;
    Ok((vars, value))
}

/// Orbit summary of an extracted diffusion orbit.
#[derive(Debug, Clone, Serialize)]
pub struct OrbitSummary {
    #[serde(rename = "I_min")]
    pub i_min: f64,
    #[serde(rename = "I_max")]
    pub i_max: f64,
    #[serde(rename = "T")]
    pub duration: f64,
    pub max_junction_defect: f64,
}

/// Concatenated drifting orbit with junction diagnostics.
#[derive(Debug, Clone)]
pub struct DiffusionOrbit {
    pub params: ModelParams,
    /// Lifted samples, glued continuously across junctions.
    pub samples: Vec<PhasePoint>,
    pub junction_defects: Vec<f64>,
    pub summary: OrbitSummary,
}

impl DiffusionOrbit {
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,theta,q,I,p")?;
        for s in &self.samples {
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                s.t, s.theta, s.q, s.i, s.p
            )?;
        }
        Ok(())
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serialization cannot fail")
    }

    /// Windowed re-integration self-consistency: from an anchor sample the
    /// flow must reproduce the stored samples until the anchor advances
    /// (every `window` time units). Transverse hyperbolicity makes
    /// single-shot re-integration of the whole orbit meaningless (errors
    /// grow like e^{lambda t}), so the verifiable statement is that the
    /// stored curve is everywhere a true orbit over windows.
    pub fn reintegration_deviation(&self, window: f64, step: f64) -> Result<f64> {
        let mut worst = 0.0_f64;
        let mut cur = self.samples[0];
        let mut anchor_t = cur.t;
        for s in &self.samples[1..] {
            let dt = s.t - cur.t;
            if dt <= 0.0 {
                cur = *s;
                anchor_t = s.t;
                continue;
            }
            let n = (dt / step).ceil().max(1.0);
            let next = flow_endpoint(&self.params, &cur, dt, dt / n)?;
            worst = worst
                .max((next.theta - s.theta).abs())
                .max((next.q - s.q).abs())
                .max((next.i - s.i).abs())
                .max((next.p - s.p).abs());
            if s.t - anchor_t >= window {
                cur = *s;
                anchor_t = s.t;
            } else {
                cur = next;
            }
        }
        Ok(worst)
    }

    /// First time `I <= lower` followed by the first later time `I >= upper`.
    pub fn drift_window(&self, lower: f64, upper: f64) -> Option<(f64, f64)> {
        let start = self.samples.iter().find(|s| s.i <= lower)?.t;
        let end = self.samples.iter().filter(|s| s.t >= start).find(|s| s.i >= upper)?.t;
        Some((start, end))
    }
}

/// Junction velocity-defect tolerance of the extracted orbit.
pub const JUNCTION_DEFECT_TOL: f64 = 1e-6;

/// Concatenate the minimizing arcs and the boundary whisker orbits into one
/// trajectory, reporting junction defects and the action profile.
pub fn extract_orbit(
    params: &ModelParams,
    schedule: &ChainSchedule,
    vars: &JunctionVariables,
    config: &BessiConfig,
) -> Result<DiffusionOrbit> {
    let mut problem = CompositeProblem::new(params, schedule, config.clone());
    let eval = problem.evaluate(vars)?;
    let arcs: Vec<DiscreteCurve> =
        problem.arc_cache.iter().map(|c| c.as_ref().expect("arcs solved").curve.clone()).collect();
    let sp = &eval.boundary_plus;
    let sm = &eval.boundary_minus;

    let mut samples: Vec<PhasePoint> = Vec::new();
    let mut defects: Vec<f64> = Vec::new();

    // incoming whisker: launch near T(a_0), flow to junction 0
    {
        let delta = config.shooting.delta(params.epsilon);
        let launch = PhasePoint::new(
            vars.t[0] - sp.transit,
            sp.theta0,
            delta,
            schedule.levels[0],
            pendulum::s0_prime(params.epsilon, delta),
        );
        let n = (sp.transit / config.node_spacing).ceil().max(1.0);
        let seg = flow(params, &launch, sp.transit, sp.transit / n)?;
        samples.extend(seg.samples.iter().copied());
    }

    // arcs, glued by integer time shifts and lift offsets
    for arc in &arcs {
        let prev = *samples.last().unwrap();
        let time_offset = (prev.t - arc.t_start).round();
        let theta_offset = prev.theta - arc.nodes[0][0];
        let q_offset = prev.q - arc.nodes[0][1];
        let v = arc.start_velocity();
        defects.push((prev.i - v[0]).abs().max((prev.p - v[1]).abs()));
        samples.pop();
        for (j, node) in arc.nodes.iter().enumerate() {
            let (vel, t_local) = if j < arc.pieces() {
                (arc.velocities[j], arc.t_start + j as f64 * arc.h)
            } else {
                (arc.end_velocity(), arc.t_start + arc.duration())
            };
            samples.push(PhasePoint::new(
                t_local + time_offset,
                node[0] + theta_offset,
                node[1] + q_offset,
                vel[0],
                vel[1],
            ));
        }
    }

    // outgoing whisker: from the last junction toward T(a_k)
    {
        let prev = *samples.last().unwrap();
        defects.push(
            (prev.i - sm.endpoint.i).abs().max((prev.p - sm.endpoint.p).abs()),
        );
        let x0 = PhasePoint::new(prev.t, prev.theta, prev.q, sm.endpoint.i, sm.endpoint.p);
        let n = (sm.transit / config.node_spacing).ceil().max(1.0);
        let seg = flow(params, &x0, sm.transit, sm.transit / n)?;
        samples.pop();
        samples.extend(seg.samples.iter().copied());
    }

    // the first junction defect compares the incoming whisker against the
    // first arc only when arcs exist; for the single-junction case the two
    // whiskers were compared directly above
    let max_defect = defects.iter().copied().fold(0.0, f64::max);
    if let Some((j, &d)) = defects.iter().enumerate().find(|(_, &d)| d > JUNCTION_DEFECT_TOL) {
        return Err(Error::JunctionDefect { junction: j, defect: d });
    }

    let i_min = samples.iter().map(|s| s.i).fold(f64::MAX, f64::min);
    let i_max = samples.iter().map(|s| s.i).fold(f64::MIN, f64::max);
    let duration = samples.last().unwrap().t - samples[0].t;
    let margin = 2.0 * schedule.max_spacing().max(f64::MIN_POSITIVE);
    let a0 = schedule.levels[0];
    let ak = *schedule.levels.last().unwrap();
    if i_min > a0 + margin || i_max < ak - margin {
        return Err(Error::MinimizationFailure {
            reason: format!(
                "extracted orbit spans I in [{i_min}, {i_max}], short of [{a0}, {ak}] with margin {margin}"
            ),
            grad_norm: max_defect,
        });
    }

    Ok(DiffusionOrbit {
        params: params.clone(),
        samples,
        junction_defects: defects,
        summary: OrbitSummary { i_min, i_max, duration, max_junction_defect: max_defect },
    })
}
