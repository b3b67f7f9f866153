//! Numerical generating functions of the whisker manifolds, splitting
//! functions on the section `q = 1/2`, heteroclinic links and transition
//! chains.

mod shooting;

pub use shooting::{shoot_section_node, ManifoldSign, ShootingConfig, ShotSolution};

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fd::derivative_1d;
use crate::melnikov;
use crate::model::{ModelParams, TWO_PI};

/// Sampled generating function `S(t, theta, q)` on
/// `T x T x [-3/4, 3/4]` with its Hamilton-Jacobi defect.
#[derive(Debug, Clone)]
pub struct GeneratingFunctionGrid {
    pub params: ModelParams,
    pub a: f64,
    pub sign: ManifoldSign,
    pub nt: usize,
    pub ntheta: usize,
    pub nq: usize,
    /// Row-major `[it][itheta][iq]`.
    pub values: Vec<f64>,
    /// Max Hamilton-Jacobi defect over nodes, from finite-difference
    /// gradients of the grid itself.
    pub hj_residual: f64,
}

impl GeneratingFunctionGrid {
    pub fn t_node(&self, it: usize) -> f64 {
        it as f64 / self.nt as f64
    }

    pub fn theta_node(&self, ith: usize) -> f64 {
        ith as f64 / self.ntheta as f64
    }

    pub fn q_node(&self, iq: usize) -> f64 {
        -0.75 + 1.5 * iq as f64 / (self.nq - 1) as f64
    }

    pub fn value(&self, it: usize, ith: usize, iq: usize) -> f64 {
        self.values[(it * self.ntheta + ith) * self.nq + iq]
    }

    /// Max deviation from a reference function of `q` alone (used against
    /// `+-S0` in the unperturbed regression).
    pub fn max_deviation_from(&self, f: impl Fn(f64) -> f64) -> f64 {
        let mut worst = 0.0_f64;
        for it in 0..self.nt {
            for ith in 0..self.ntheta {
                for iq in 0..self.nq {
                    worst = worst.max((self.value(it, ith, iq) - f(self.q_node(iq))).abs());
                }
            }
        }
        worst
    }

    /// CSV export with header `t,theta,q,S`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,theta,q,S")?;
        for it in 0..self.nt {
            for ith in 0..self.ntheta {
                for iq in 0..self.nq {
                    writeln!(
                        w,
                        "{:.16e},{:.16e},{:.16e},{:.16e}",
                        self.t_node(it),
                        self.theta_node(ith),
                        self.q_node(iq),
                        self.value(it, ith, iq)
                    )?;
                }
            }
        }
        Ok(())
    }
}

/// Grid sizes `(n_t, n_theta, n_q)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct GridResolution {
    pub nt: usize,
    pub ntheta: usize,
    pub nq: usize,
}

impl Default for GridResolution {
    fn default() -> Self {
        GridResolution { nt: 32, ntheta: 32, nq: 48 }
    }
}

/// Compute `S+` or `S-` on the full grid by per-node shooting.
///
/// Node columns run in a parallel map; within a column the solver is
/// warm-started from the neighbouring `q` node.
pub fn compute_generating_function(
    params: &ModelParams,
    a: f64,
    sign: ManifoldSign,
    resolution: GridResolution,
    config: &ShootingConfig,
) -> Result<GeneratingFunctionGrid> {
    if resolution.nt < 16 || resolution.ntheta < 16 || resolution.nq < 32 {
        return Err(Error::Domain(format!(
            "grid resolution must be at least (16, 16, 32), got {resolution:?}"
        )));
    }
    compute_generating_function_unchecked(params, a, sign, resolution, config)
}

/// Same as [`compute_generating_function`] without the minimum-resolution
/// floor; used by tests and by section fills.
pub fn compute_generating_function_unchecked(
    params: &ModelParams,
    a: f64,
    sign: ManifoldSign,
    resolution: GridResolution,
    config: &ShootingConfig,
) -> Result<GeneratingFunctionGrid> {
    let GridResolution { nt, ntheta, nq } = resolution;
    let q_of = |iq: usize| -0.75 + 1.5 * iq as f64 / (nq - 1) as f64;

    let columns: Vec<(usize, usize)> =
        (0..nt).flat_map(|it| (0..ntheta).map(move |ith| (it, ith))).collect();

    let results: Vec<Result<Vec<f64>>> = columns
        .par_iter()
        .map(|&(it, ith)| {
            let t = it as f64 / nt as f64;
            let theta = ith as f64 / ntheta as f64;
            let mut col = vec![0.0; nq];
            // march outward from q = 0 on each side so warm starts stay close
            let mut order: Vec<usize> = (0..nq).collect();
            order.sort_by(|x, y| q_of(*x).abs().partial_cmp(&q_of(*y).abs()).unwrap());
            let mut warm_pos: Option<(f64, f64)> = None;
            let mut warm_neg: Option<(f64, f64)> = None;
            for iq in order {
                let q = q_of(iq);
                let warm = if q > 0.0 { warm_pos } else { warm_neg };
                let sol = shooting::shoot_section_node(params, a, sign, (t, theta, q), config, warm)?;
                col[iq] = sol.value;
                if q > 0.0 {
                    warm_pos = Some((sol.transit, sol.theta0));
                } else if q < 0.0 {
                    warm_neg = Some((sol.transit, sol.theta0));
                }
            }
            Ok(col)
        })
        .collect();

    let mut values = vec![0.0; nt * ntheta * nq];
    for ((it, ith), col) in columns.into_iter().zip(results) {
        let col = col?;
        let base = (it * ntheta + ith) * nq;
        values[base..base + nq].copy_from_slice(&col);
    }

    let mut grid = GeneratingFunctionGrid {
        params: params.clone(),
        a,
        sign,
        nt,
        ntheta,
        nq,
        values,
        hj_residual: 0.0,
    };
    grid.hj_residual = hj_residual(&grid);
    Ok(grid)
}

/// Hamilton-Jacobi defect of a computed grid:
/// `dS/dt + H(t, theta, q, a + dS/dtheta, dS/dq) - a^2/2` in max norm,
/// with order-8 finite-difference gradients (periodic stencils in `t`,
/// `theta`; one-sided stencils at the `q` edges).
pub fn hj_residual(grid: &GeneratingFunctionGrid) -> f64 {
    let (nt, ntheta, nq) = (grid.nt, grid.ntheta, grid.nq);
    let ht = 1.0 / nt as f64;
    let hth = 1.0 / ntheta as f64;
    let hq = 1.5 / (nq - 1) as f64;
    // order-8 stencils when the grid affords them
    let order_for = |n: usize| 8.min((n - 1) / 2 * 2).max(2);
    let (order_t, order_th, order_q) = (order_for(nt), order_for(ntheta), order_for(nq));

    let mut ds_dt = vec![0.0; nt * ntheta * nq];
    let mut ds_dth = vec![0.0; nt * ntheta * nq];
    let mut ds_dq = vec![0.0; nt * ntheta * nq];

    // q lines
    for it in 0..nt {
        for ith in 0..ntheta {
            let base = (it * ntheta + ith) * nq;
            let line: Vec<f64> = grid.values[base..base + nq].to_vec();
            let d = derivative_1d(&line, hq, false, order_q);
            ds_dq[base..base + nq].copy_from_slice(&d);
        }
    }
    // theta lines
    for it in 0..nt {
        for iq in 0..nq {
            let line: Vec<f64> =
                (0..ntheta).map(|ith| grid.value(it, ith, iq)).collect();
            let d = derivative_1d(&line, hth, true, order_th);
            for (ith, v) in d.into_iter().enumerate() {
                ds_dth[(it * ntheta + ith) * nq + iq] = v;
            }
        }
    }
    // t lines
    for ith in 0..ntheta {
        for iq in 0..nq {
            let line: Vec<f64> = (0..nt).map(|it| grid.value(it, ith, iq)).collect();
            let d = derivative_1d(&line, ht, true, order_t);
            for (it, v) in d.into_iter().enumerate() {
                ds_dt[(it * ntheta + ith) * nq + iq] = v;
            }
        }
    }

    let mut worst = 0.0_f64;
    for it in 0..nt {
        let t = grid.t_node(it);
        for ith in 0..ntheta {
            let theta = grid.theta_node(ith);
            for iq in 0..nq {
                let q = grid.q_node(iq);
                let idx = (it * ntheta + ith) * nq + iq;
                let f = grid.params.perturbation.eval(t, theta, q);
                let i_mom = grid.a + ds_dth[idx];
                let h = 0.5 * ds_dq[idx] * ds_dq[idx]
                    + 0.5 * i_mom * i_mom
                    + grid.params.epsilon * ((TWO_PI * q).cos() - 1.0)
                        * (1.0 + grid.params.mu * f);
                worst = worst.max((ds_dt[idx] + h - 0.5 * grid.a * grid.a).abs());
            }
        }
    }
    worst
}

/// Splitting data on the section `q = 1/2`.
///
/// Stores the periodic part `S+_a(t, theta, 1/2) - S-_a'(t, theta, -1/2)`
/// on a uniform torus grid; the full field adds the lift term
/// `(a - a') theta` analytically at evaluation, so the non-periodic case
/// is exact on the whole lift window.
#[derive(Debug, Clone)]
pub struct SplittingField {
    pub params: ModelParams,
    pub a: f64,
    pub a_prime: f64,
    pub nt: usize,
    pub ntheta: usize,
    /// Periodic part, row-major `[it][itheta]`.
    pub periodic: Vec<f64>,
}

impl SplittingField {
    pub fn is_delta(&self) -> bool {
        self.a == self.a_prime
    }

    fn periodic_at(&self, it: usize, ith: usize) -> f64 {
        self.periodic[it.rem_euclid(self.nt) * self.ntheta + ith.rem_euclid(self.ntheta)]
    }

    /// Bicubic (Catmull-Rom) interpolation of the periodic part plus the
    /// exact lift term. `theta` may be any lift; for `a = a'` the value is
    /// 1-periodic in it.
    pub fn eval(&self, t: f64, theta: f64) -> f64 {
        let ft = t.rem_euclid(1.0) * self.nt as f64;
        let fth = theta.rem_euclid(1.0) * self.ntheta as f64;
        let it = ft.floor() as usize;
        let ith = fth.floor() as usize;
        let xt = ft - it as f64;
        let xth = fth - ith as f64;
        let mut rows = [0.0_f64; 4];
        for (r, row) in rows.iter_mut().enumerate() {
            let i = (it + self.nt + r - 1) % self.nt;
            let p = [
                self.periodic_at(i, (ith + self.ntheta - 1) % self.ntheta),
                self.periodic_at(i, ith),
                self.periodic_at(i, ith + 1),
                self.periodic_at(i, ith + 2),
            ];
            *row = catmull_rom(&p, xth);
        }
        catmull_rom(&rows, xt) + (self.a - self.a_prime) * theta
    }

    /// Grid values of the full field at the nodes (lift representative in
    /// [0, 1)).
    pub fn node_value(&self, it: usize, ith: usize) -> f64 {
        self.periodic_at(it, ith)
            + (self.a - self.a_prime) * (ith as f64 / self.ntheta as f64)
    }

    /// CSV export `t,theta,value` over nodes (theta in [0,1)).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,theta,value")?;
        for it in 0..self.nt {
            for ith in 0..self.ntheta {
                writeln!(
                    w,
                    "{:.16e},{:.16e},{:.16e}",
                    it as f64 / self.nt as f64,
                    ith as f64 / self.ntheta as f64,
                    self.node_value(it, ith)
                )?;
            }
        }
        Ok(())
    }
}

fn catmull_rom(p: &[f64; 4], x: f64) -> f64 {
    0.5 * (2.0 * p[1]
        + (p[2] - p[0]) * x
        + (2.0 * p[0] - 5.0 * p[1] + 4.0 * p[2] - p[3]) * x * x
        + (-p[0] + 3.0 * p[1] - 3.0 * p[2] + p[3]) * x * x * x)
}

/// Fill the two section grids `S+_a(.,.,1/2)` and `S-_a'(.,.,-1/2)` and
/// return their difference field.
fn section_field(
    params: &ModelParams,
    a: f64,
    a_prime: f64,
    nt: usize,
    ntheta: usize,
    config: &ShootingConfig,
) -> Result<SplittingField> {
    let columns: Vec<usize> = (0..nt).collect();
    let rows: Vec<Result<Vec<f64>>> = columns
        .par_iter()
        .map(|&it| {
            let t = it as f64 / nt as f64;
            let mut row = vec![0.0; ntheta];
            let mut warm_p: Option<(f64, f64)> = None;
            let mut warm_m: Option<(f64, f64)> = None;
            for ith in 0..ntheta {
                let theta = ith as f64 / ntheta as f64;
                let sp = shooting::shoot_section_node(
                    params,
                    a,
                    ManifoldSign::Plus,
                    (t, theta, 0.5),
                    config,
                    warm_p,
                )?;
                let sm = shooting::shoot_section_node(
                    params,
                    a_prime,
                    ManifoldSign::Minus,
                    (t, theta, -0.5),
                    config,
                    warm_m,
                )?;
                warm_p = Some((sp.transit, sp.theta0));
                warm_m = Some((sm.transit, sm.theta0));
                row[ith] = sp.value - sm.value;
            }
            Ok(row)
        })
        .collect();

    let mut periodic = vec![0.0; nt * ntheta];
    for (it, row) in rows.into_iter().enumerate() {
        periodic[it * ntheta..(it + 1) * ntheta].copy_from_slice(&row?);
    }
    Ok(SplittingField { params: params.clone(), a, a_prime, nt, ntheta, periodic })
}

/// Restriction of the homoclinic splitting to the section:
/// `Delta_a(t, theta) = S+_a(t,theta,1/2) - S-_a(t,theta,-1/2)`.
pub fn splitting_delta(
    params: &ModelParams,
    a: f64,
    resolution: (usize, usize),
    config: &ShootingConfig,
) -> Result<SplittingField> {
    section_field(params, a, a, resolution.0, resolution.1, config)
}

/// Heteroclinic splitting function
/// `Sigma_{a,a'}(t, theta) = S+_a - S-_a' + (a - a') theta` on the lift
/// window `theta in [-1, 1]`.
pub fn sigma(
    params: &ModelParams,
    a: f64,
    a_prime: f64,
    resolution: (usize, usize),
    config: &ShootingConfig,
) -> Result<SplittingField> {
    if (a - a_prime).abs() > 0.1 {
        return Err(Error::Domain(format!(
            "sigma is local in the action: |a - a'| = {} exceeds 0.1",
            (a - a_prime).abs()
        )));
    }
    section_field(params, a, a_prime, resolution.0, resolution.1, config)
}

/// A verified critical point of `Sigma_{a,a'}`.
#[derive(Debug, Clone, Serialize)]
pub struct LinkPoint {
    pub a: f64,
    pub a_prime: f64,
    pub t: f64,
    pub theta: f64,
    pub sigma_value: f64,
    pub hessian: [[f64; 2]; 2],
    pub kind: melnikov::CriticalKind,
    pub isolated: bool,
    /// Gradient norm at the refined point.
    pub grad_norm: f64,
    /// Mismatch |dS+/dq - dS-/dq| at the point (manifold matching defect).
    pub matching_defect: f64,
    #[serde(skip)]
    pub endpoint_plus: crate::model::PhasePoint,
    #[serde(skip)]
    pub endpoint_minus: crate::model::PhasePoint,
}

/// Cache of warm starts for the two shooting problems at the section.
#[derive(Debug, Clone, Default)]
struct SectionWarm {
    plus: Option<(f64, f64)>,
    minus: Option<(f64, f64)>,
}

struct SigmaEval<'p> {
    params: &'p ModelParams,
    a: f64,
    a_prime: f64,
    config: &'p ShootingConfig,
    warm: SectionWarm,
}

impl<'p> SigmaEval<'p> {
    fn new(params: &'p ModelParams, a: f64, a_prime: f64, config: &'p ShootingConfig) -> Self {
        SigmaEval { params, a, a_prime, config, warm: SectionWarm::default() }
    }

    fn solutions(&mut self, t: f64, theta: f64) -> Result<(ShotSolution, ShotSolution)> {
        let tm = t.rem_euclid(1.0);
        let thm = theta.rem_euclid(1.0);
        let sp = shooting::shoot_section_node(
            self.params,
            self.a,
            ManifoldSign::Plus,
            (tm, thm, 0.5),
            self.config,
            self.warm.plus,
        )?;
        let sm = shooting::shoot_section_node(
            self.params,
            self.a_prime,
            ManifoldSign::Minus,
            (tm, thm, -0.5),
            self.config,
            self.warm.minus,
        )?;
        self.warm.plus = Some((sp.transit, sp.theta0));
        self.warm.minus = Some((sm.transit, sm.theta0));
        Ok((sp, sm))
    }

    /// Gradient of the heteroclinic section functional
    /// `Sigma_{a,a'} + (a'^2 - a^2)/2 * t` from the endpoint states.
    ///
    /// The energy tilt pairs the lifted time with the level change the same
    /// way `(a - a') theta` pairs the angle with the momentum change; with
    /// it the gradient reads `(H- - H+, I+ - I-)`, so zeros are exactly the
    /// points where both momenta match, i.e. heteroclinic intersections.
    /// For `a = a'` the tilt vanishes and this is the gradient of
    /// `Delta_bar_a`.
    fn grad(&mut self, t: f64, theta: f64) -> Result<[f64; 2]> {
        let (sp, sm) = self.solutions(t, theta)?;
        let dt = crate::model::hamiltonian(self.params, &sm.endpoint)
            - crate::model::hamiltonian(self.params, &sp.endpoint);
        let dth = sp.endpoint.i - sm.endpoint.i;
        Ok([dt, dth])
    }

    fn hessian(&mut self, t: f64, theta: f64) -> Result<[[f64; 2]; 2]> {
        let h = 1e-5;
        let gt_p = self.grad(t + h, theta)?;
        let gt_m = self.grad(t - h, theta)?;
        let gth_p = self.grad(t, theta + h)?;
        let gth_m = self.grad(t, theta - h)?;
        let hess = [
            [(gt_p[0] - gt_m[0]) / (2.0 * h), (gth_p[0] - gth_m[0]) / (2.0 * h)],
            [(gt_p[1] - gt_m[1]) / (2.0 * h), (gth_p[1] - gth_m[1]) / (2.0 * h)],
        ];
        // symmetrize the off-diagonal finite differences
        let off = 0.5 * (hess[0][1] + hess[1][0]);
        Ok([[hess[0][0], off], [off, hess[1][1]]])
    }
}

/// Analytic Newton seed for the minimum of the tilted Melnikov model
/// `mu M_a + (a - a') theta + (a'^2 - a^2)/2 t` when the perturbation
/// admits a closed form.
fn link_seed(params: &ModelParams, a: f64, a_prime: f64) -> Result<(f64, f64)> {
    if params.mu == 0.0 {
        return Err(Error::NoCriticalPoint { a, a_prime });
    }
    if params.perturbation.is_arnold() {
        let se = params.epsilon.sqrt();
        let coef_theta = if a == 0.0 {
            2.0 * se / std::f64::consts::PI
        } else {
            a / (std::f64::consts::PI * a / (2.0 * se)).sinh()
        };
        let coef_t = 1.0 / (std::f64::consts::PI / (2.0 * se)).sinh();
        let ratio_theta = (a - a_prime) / (TWO_PI * params.mu * coef_theta);
        let ratio_t =
            (a_prime * a_prime - a * a) / (2.0 * TWO_PI * params.mu * coef_t);
        if ratio_theta.abs() > 1.0 || ratio_t.abs() > 1.0 {
            return Err(Error::NoCriticalPoint { a, a_prime });
        }
        // minimum branches (second derivative positive)
        let theta = 0.5 - ratio_theta.asin() / TWO_PI;
        let t = 0.5 - ratio_t.asin() / TWO_PI;
        Ok((t, theta))
    } else {
        // general perturbation: refine each Melnikov critical point under
        // the tilted functional and keep the first minimum
        let field = melnikov::MelnikovField::compute(params, a, 24)?;
        let report = melnikov::critical_points(&field)?;
        for p in &report.points {
            let mut t = p.t;
            let mut theta = p.theta;
            let mut ok = false;
            for _ in 0..60 {
                let g0 = melnikov::melnikov_grad(params, a, t, theta)?;
                let g = [
                    params.mu * g0[0] + 0.5 * (a_prime * a_prime - a * a),
                    params.mu * g0[1] + (a - a_prime),
                ];
                if g[0].abs().max(g[1].abs()) < 1e-12 {
                    ok = true;
                    break;
                }
                let h0 = melnikov::melnikov_hessian(params, a, t, theta)?;
                let h = [
                    [params.mu * h0[0][0], params.mu * h0[0][1]],
                    [params.mu * h0[1][0], params.mu * h0[1][1]],
                ];
                let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
                if det.abs() < 1e-18 {
                    break;
                }
                let dt = (-g[0] * h[1][1] + g[1] * h[0][1]) / det;
                let dth = (g[0] * h[1][0] - g[1] * h[0][0]) / det;
                if dt.abs() + dth.abs() > 0.5 {
                    break;
                }
                t += dt;
                theta += dth;
            }
            if ok {
                let h0 = melnikov::melnikov_hessian(params, a, t, theta)?;
                let det = h0[0][0] * h0[1][1] - h0[0][1] * h0[1][0];
                if det > 0.0 && h0[0][0] > 0.0 {
                    return Ok((t.rem_euclid(1.0), theta.rem_euclid(1.0)));
                }
            }
        }
        Err(Error::NoCriticalPoint { a, a_prime })
    }
}

/// Locate and classify the critical point of `Sigma_{a,a'}` nearest the
/// Melnikov prediction, verifying isolation on a small ring.
pub fn find_link(
    params: &ModelParams,
    a: f64,
    a_prime: f64,
    config: &ShootingConfig,
    seed: Option<(f64, f64)>,
) -> Result<LinkPoint> {
    if params.mu == 0.0 && a != a_prime {
        return Err(Error::NoCriticalPoint { a, a_prime });
    }
    let (mut t, mut theta) = match seed {
        Some(s) => s,
        None => link_seed(params, a, a_prime)?,
    };
    let mut eval = SigmaEval::new(params, a, a_prime, config);

    let gtol = 1e-9;
    let mut grad = eval.grad(t, theta)?;
    let mut gnorm = (grad[0] * grad[0] + grad[1] * grad[1]).sqrt();
    let mut converged = gnorm <= gtol;
    for _ in 0..40 {
        if converged {
            break;
        }
        let hess = eval.hessian(t, theta)?;
        let det = hess[0][0] * hess[1][1] - hess[0][1] * hess[1][0];
        if det.abs() < 1e-16 || !det.is_finite() {
            return Err(Error::NoCriticalPoint { a, a_prime });
        }
        let mut dt = (-grad[0] * hess[1][1] + grad[1] * hess[0][1]) / det;
        let mut dth = (grad[0] * hess[1][0] - grad[1] * hess[0][0]) / det;
        let cap = 0.2;
        let norm = dt.hypot(dth);
        if norm > cap {
            dt *= cap / norm;
            dth *= cap / norm;
        }
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..8 {
            let (ct, cth) = (t + lambda * dt, theta + lambda * dth);
            let g = eval.grad(ct, cth)?;
            let gn = (g[0] * g[0] + g[1] * g[1]).sqrt();
            if gn < gnorm {
                t = ct;
                theta = cth;
                grad = g;
                gnorm = gn;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
        converged = gnorm <= gtol;
    }
    if !converged && gnorm > gtol {
        return Err(Error::NoCriticalPoint { a, a_prime });
    }

    t = t.rem_euclid(1.0);
    theta = theta.rem_euclid(1.0);
    let hessian = eval.hessian(t, theta)?;
    let det = hessian[0][0] * hessian[1][1] - hessian[0][1] * hessian[1][0];
    let kind = if det.abs() <= 1e-10 {
        melnikov::CriticalKind::Degenerate
    } else if det < 0.0 {
        melnikov::CriticalKind::Saddle
    } else if hessian[0][0] > 0.0 {
        melnikov::CriticalKind::Minimum
    } else {
        melnikov::CriticalKind::Maximum
    };

    // isolation: on a ring of radius 1e-3 the radial derivative must stay
    // positive for a strict local minimum (no other critical value nearby)
    let mut isolated = kind == melnikov::CriticalKind::Minimum;
    if isolated {
        let r = 1e-3;
        for k in 0..8 {
            let phi = TWO_PI * k as f64 / 8.0;
            let (dx, dy) = (r * phi.cos(), r * phi.sin());
            let g = eval.grad(t + dx, theta + dy)?;
            let radial = g[0] * dx + g[1] * dy;
            if radial <= 1e-12 || (g[0] * g[0] + g[1] * g[1]).sqrt() <= 1e-10 {
                isolated = false;
                break;
            }
        }
    }

    let (sp, sm) = eval.solutions(t, theta)?;
    Ok(LinkPoint {
        a,
        a_prime,
        t,
        theta,
        sigma_value: sp.value - sm.value + (a - a_prime) * theta,
        hessian,
        kind,
        isolated,
        grad_norm: gnorm,
        matching_defect: (sp.grad_q() - sm.grad_q()).abs(),
        endpoint_plus: sp.endpoint,
        endpoint_minus: sm.endpoint,
    })
}

/// Transition-chain data: action levels, verified links, and the spacing
/// bound actually used.
#[derive(Debug, Clone, Serialize)]
pub struct ChainSchedule {
    pub levels: Vec<f64>,
    pub links: Vec<LinkPoint>,
    pub c_used: f64,
    pub mu: f64,
    /// Dwell integers per junction (entry 0 unused by the composite
    /// functional; kept for schedule completeness).
    pub dwells: Vec<i64>,
}

impl ChainSchedule {
    pub fn k(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn max_spacing(&self) -> f64 {
        self.levels.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max)
    }

    /// JSON per the external interface:
    /// `{"levels": [...], "links": [{"i":..,"t":..,"theta":..,"isolated":..}], "c_used": ..}`.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct LinkOut {
            i: usize,
            t: f64,
            theta: f64,
            isolated: bool,
        }
        #[derive(Serialize)]
        struct Out<'a> {
            levels: &'a [f64],
            links: Vec<LinkOut>,
            c_used: f64,
        }
        let out = Out {
            levels: &self.levels,
            links: self
                .links
                .iter()
                .enumerate()
                .map(|(i, l)| LinkOut { i, t: l.t, theta: l.theta, isolated: l.isolated })
                .collect(),
            c_used: self.c_used,
        };
        serde_json::to_string_pretty(&out).expect("schedule serialization cannot fail")
    }
}

/// Default dwell heuristic `ceil(tau_min + 4 ln(1/mu) / lambda)`.
pub fn dwell_heuristic(params: &ModelParams, tau_min: i64) -> i64 {
    if params.mu <= 0.0 {
        return tau_min.max(1);
    }
    let lam = params.lambda();
    (tau_min as f64 + 4.0 / lam * (1.0 / params.mu).ln()).ceil() as i64
}

/// Build a transition chain from `a_minus` to `a_plus` with spacing at most
/// `c * mu`, verifying an isolated minimum of `Sigma` on every consecutive
/// pair. Failing links are refined locally down to spacing `c mu / 8`.
pub fn build_chain(
    params: &ModelParams,
    a_minus: f64,
    a_plus: f64,
    c: f64,
    config: &ShootingConfig,
    tau_min: i64,
) -> Result<ChainSchedule> {
    if a_plus < a_minus {
        return Err(Error::Domain("chain requires a_minus <= a_plus".into()));
    }
    let spacing = c * params.mu;
    if a_plus > a_minus && !(spacing > 0.0) {
        return Err(Error::Domain(format!("chain spacing c*mu = {spacing} must be positive")));
    }
    let dwell = dwell_heuristic(params, tau_min);
    if a_plus == a_minus {
        return Ok(ChainSchedule {
            levels: vec![a_minus],
            links: Vec::new(),
            c_used: c,
            mu: params.mu,
            dwells: vec![dwell],
        });
    }

    let k = ((a_plus - a_minus) / spacing).ceil() as usize;
    let mut levels: Vec<f64> =
        (0..=k).map(|i| a_minus + (a_plus - a_minus) * i as f64 / k as f64).collect();
    *levels.last_mut().unwrap() = a_plus;

    let mut links: Vec<LinkPoint> = Vec::with_capacity(k);
    let mut final_levels: Vec<f64> = vec![levels[0]];
    let mut warm: Option<(f64, f64)> = None;
    for i in 0..k {
        let (lo, hi) = (levels[i], levels[i + 1]);
        let segment = verify_span(params, lo, hi, 0, config, &mut warm)
            .map_err(|_| Error::ChainBroken(i))?;
        for (level, link) in segment {
            final_levels.push(level);
            links.push(link);
        }
    }

    let dwells = vec![dwell; final_levels.len()];
    Ok(ChainSchedule { levels: final_levels, links, c_used: c, mu: params.mu, dwells })
}

/// Verify the link (lo, hi), bisecting recursively (at most 3 levels, i.e.
/// spacing / 8) when verification fails. Returns (upper level, link) pairs.
fn verify_span(
    params: &ModelParams,
    lo: f64,
    hi: f64,
    depth: usize,
    config: &ShootingConfig,
    warm: &mut Option<(f64, f64)>,
) -> Result<Vec<(f64, LinkPoint)>> {
    let attempt = find_link(params, lo, hi, config, *warm);
    match attempt {
        Ok(link) if link.kind == melnikov::CriticalKind::Minimum && link.isolated => {
            *warm = Some((link.t, link.theta));
            Ok(vec![(hi, link)])
        }
        _ if depth < 3 => {
            let mid = 0.5 * (lo + hi);
            let mut out = verify_span(params, lo, mid, depth + 1, config, warm)?;
            out.extend(verify_span(params, mid, hi, depth + 1, config, warm)?);
            Ok(out)
        }
        Ok(_) => Err(Error::NoCriticalPoint { a: lo, a_prime: hi }),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pendulum;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn cfg() -> ShootingConfig {
        ShootingConfig::default()
    }

    #[test]
    fn unperturbed_grid_is_s0() {
        let params = ModelParams::arnold(0.25, 0.0).unwrap();
        let res = GridResolution { nt: 4, ntheta: 4, nq: 17 };
        let plus = compute_generating_function_unchecked(
            &params,
            0.8,
            ManifoldSign::Plus,
            res,
            &cfg(),
        )
        .unwrap();
        assert!(plus.max_deviation_from(|q| pendulum::s0(0.25, q)) <= 1e-8);
        let minus = compute_generating_function_unchecked(
            &params,
            0.8,
            ManifoldSign::Minus,
            res,
            &cfg(),
        )
        .unwrap();
        assert!(minus.max_deviation_from(|q| -pendulum::s0(0.25, q)) <= 1e-8);
    }

    #[test]
    fn resolution_floor_enforced() {
        let params = ModelParams::arnold(0.25, 0.0).unwrap();
        let res = GridResolution { nt: 8, ntheta: 8, nq: 16 };
        assert!(compute_generating_function(&params, 0.0, ManifoldSign::Plus, res, &cfg())
            .is_err());
    }

    #[test]
    fn delta_field_unperturbed_is_constant() {
        let params = ModelParams::arnold(0.25, 0.0).unwrap();
        let field = splitting_delta(&params, 1.0, (8, 8), &cfg()).unwrap();
        let expect = 2.0 * pendulum::s0(0.25, 0.5);
        for it in 0..8 {
            for ith in 0..8 {
                assert_abs_diff_eq!(field.node_value(it, ith), expect, epsilon = 1e-9);
            }
        }
        // interpolation reproduces the constant
        assert_abs_diff_eq!(field.eval(0.13, 0.77), expect, epsilon = 1e-9);
    }

    #[test]
    fn sigma_unperturbed_is_affine() {
        let params = ModelParams::arnold(0.25, 0.0).unwrap();
        let (a, ap) = (1.0, 1.03);
        let field = sigma(&params, a, ap, (6, 6), &cfg()).unwrap();
        let expect = |theta: f64| 2.0 * pendulum::s0(0.25, 0.5) + (a - ap) * theta;
        assert_relative_eq!(field.eval(0.3, -0.8), expect(-0.8), epsilon = 1e-8);
        assert_relative_eq!(field.eval(0.9, 0.95), expect(0.95), epsilon = 1e-8);
        assert!(sigma(&params, 1.0, 1.2, (6, 6), &cfg()).is_err(), "locality cap");
    }

    #[test]
    fn delta_matches_melnikov_at_first_order() {
        let eps = 0.25;
        let a = 1.0;
        let mut defects = Vec::new();
        for mu in [1e-3, 5e-4] {
            let params = ModelParams::arnold(eps, mu).unwrap();
            let field = splitting_delta(&params, a, (4, 4), &cfg()).unwrap();
            let mut worst = 0.0_f64;
            for it in 0..4 {
                for ith in 0..4 {
                    let t = it as f64 / 4.0;
                    let th = ith as f64 / 4.0;
                    let m = melnikov::melnikov_total(&params, a, t, th).unwrap();
                    let d = field.node_value(it, ith) - 2.0 * pendulum::s0(eps, 0.5) - mu * m;
                    worst = worst.max(d.abs());
                }
            }
            defects.push(worst);
        }
        let ratio = defects[0] / defects[1];
        assert!((3.3..=4.8).contains(&ratio), "ratio {ratio}, defects {defects:?}");
    }

    #[test]
    fn find_link_homoclinic_case() {
        let params = ModelParams::arnold(0.25, 1e-3).unwrap();
        let link = find_link(&params, 1.0, 1.0, &cfg(), None).unwrap();
        // minimum of mu M at (1/2, 1/2)
        assert_abs_diff_eq!(link.t, 0.5, epsilon = 1e-3);
        assert_abs_diff_eq!(link.theta, 0.5, epsilon = 1e-3);
        assert_eq!(link.kind, melnikov::CriticalKind::Minimum);
        assert!(link.isolated);
        assert!(link.matching_defect <= 1e-6, "matching defect {}", link.matching_defect);
        assert!(link.grad_norm <= 1e-9);
    }

    #[test]
    fn find_link_heteroclinic_case() {
        let params = ModelParams::arnold(0.25, 1e-3).unwrap();
        let link = find_link(&params, 1.0, 1.0 + 5e-4, &cfg(), None).unwrap();
        assert_eq!(link.kind, melnikov::CriticalKind::Minimum);
        assert!(link.isolated);
        // both tilts move the minimum away from (1/2, 1/2)
        assert!(link.theta > 0.5 && link.theta < 1.0, "theta = {}", link.theta);
        assert!(link.t < 0.5 && link.t > 0.0, "t = {}", link.t);
        // at a heteroclinic link the q-momenta match across the section
        assert!(link.matching_defect <= 1e-6, "matching defect {}", link.matching_defect);
    }

    #[test]
    fn find_link_failure_modes() {
        // mu = 0, distinct levels: affine in theta, no critical point
        let p0 = ModelParams::arnold(0.25, 0.0).unwrap();
        assert!(matches!(
            find_link(&p0, 1.0, 1.01, &cfg(), None),
            Err(Error::NoCriticalPoint { .. })
        ));
        // gap far beyond the melnikov amplitude
        let pm = ModelParams::arnold(0.25, 1e-3).unwrap();
        assert!(find_link(&pm, 1.0, 1.0 + 3e-2, &cfg(), None).is_err());
    }

    #[test]
    fn chain_trivial_and_small() {
        let params = ModelParams::arnold(0.25, 1e-3).unwrap();
        let trivial = build_chain(&params, 0.7, 0.7, 1.0, &cfg(), 6).unwrap();
        assert_eq!(trivial.k(), 0);
        assert_eq!(trivial.levels, vec![0.7]);

        let chain = build_chain(&params, 1.0, 1.003, 0.3, &cfg(), 6).unwrap();
        assert!(chain.k() >= 3);
        assert_eq!(chain.links.len(), chain.k());
        assert!(chain.max_spacing() <= 0.3 * 1e-3 + 1e-12);
        for l in &chain.links {
            assert!(l.isolated);
            assert_eq!(l.kind, melnikov::CriticalKind::Minimum);
        }
        // sub-chain of a valid chain is valid by construction: spacing only
        // shrinks; spot-check the JSON shape
        let js = chain.to_json();
        assert!(js.contains("\"levels\""));
        assert!(js.contains("\"c_used\""));
    }

    #[test]
    fn chain_halving_mu_doubles_links() {
        let p1 = ModelParams::arnold(0.25, 1e-3).unwrap();
        let c1 = build_chain(&p1, 1.0, 1.004, 0.3, &cfg(), 6).unwrap();
        let p2 = ModelParams::arnold(0.25, 5e-4).unwrap();
        let c2 = build_chain(&p2, 1.0, 1.004, 0.3, &cfg(), 6).unwrap();
        let (k1, k2) = (c1.k() as i64, c2.k() as i64);
        assert!((k2 - 2 * k1).abs() <= 1, "k1={k1}, k2={k2}");
    }

    #[test]
    fn link_point_is_heteroclinic_in_phase_space() {
        // flowing the mapped link point forward approaches the target torus
        // and lands on its energy level
        let params = ModelParams::arnold(0.25, 1e-3).unwrap();
        let a_prime = 1.0 + 5e-4;
        let link = find_link(&params, 1.0, a_prime, &cfg(), None).unwrap();
        let x0 = link.endpoint_plus;
        let mut best = f64::MAX;
        let mut h_at_best = 0.0;
        let _ = crate::integrate::flow_fold(&params, &x0, 20.0, 1e-3, (), |(), s| {
            let dq = {
                let w = s.q.rem_euclid(1.0);
                w.min(1.0 - w)
            };
            let d = (dq * dq + s.p * s.p).sqrt();
            if d < best {
                best = d;
                h_at_best = crate::model::hamiltonian(&params, s);
            }
        })
        .unwrap();
        assert!(best <= 2e-4, "closest torus approach {best}");
        assert!(
            (h_at_best - 0.5 * a_prime * a_prime).abs() <= 1e-6,
            "H at closest approach {h_at_best} vs {}",
            0.5 * a_prime * a_prime
        );
    }

    #[test]
    fn hj_residual_unperturbed_tiny() {
        let params = ModelParams::arnold(0.25, 0.0).unwrap();
        let res = GridResolution { nt: 4, ntheta: 4, nq: 33 };
        let grid = compute_generating_function_unchecked(
            &params,
            0.5,
            ManifoldSign::Plus,
            res,
            &cfg(),
        )
        .unwrap();
        assert!(grid.hj_residual <= 5e-7, "hj residual {}", grid.hj_residual);
    }
}
