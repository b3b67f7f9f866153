//! Splitting integrals along the unperturbed separatrix and their
//! critical-point analysis on the section `q = 1/2`.
//!
//! The first-order term of the manifold splitting is
//!
//! ```text
//! M_a(t, theta) = eps * int_R F(s, theta + a(s-t), q_sep(s - t)) ds,
//! F(t, theta, q) = (1 - cos 2pi q) f(t, theta, q),
//! ```
//!
//! integrated along the homoclinic orbit `q_sep`. For the Arnold
//! perturbation the integral collapses by residues to
//! `a cos(2pi theta)/sinh(pi a / 2 sqrt(eps)) + cos(2pi t)/sinh(pi / 2 sqrt(eps))`.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ModelParams, TWO_PI};
use crate::quad::GaussLegendre;

const GL_NODES: usize = 16;
/// Relative tail tolerance for the truncated improper integrals.
const TAIL_TOL: f64 = 1e-10;

fn lambda(epsilon: f64) -> f64 {
    TWO_PI * epsilon.sqrt()
}

/// One-sided truncation length; tails of the integrand decay like
/// `exp(-2 lambda |s|)`, so this leaves tails below e^-24.
fn truncation(epsilon: f64) -> f64 {
    (12.0 / lambda(epsilon)).max(8.0)
}

/// Panel width; capped at one forcing period so oscillatory terms stay
/// resolved by the 16-node rule at small coupling.
fn panel_width(epsilon: f64) -> f64 {
    (1.0 / (4.0 * epsilon.sqrt())).min(1.0)
}

/// `(1 - cos 2pi q) f` at time offset `u = s - t`, with `q` on a separatrix
/// branch whose exponent carries its own sign (`+1` grows toward the
/// section, `-1` decays away from it); `tan_half = tan(pi q / 2)` is
/// precomputed by the caller, and negative `q` (lower branch) is supported.
#[inline]
fn integrand(
    params: &ModelParams,
    a: f64,
    t: f64,
    theta: f64,
    tan_half: f64,
    exp_sign: f64,
    u: f64,
) -> f64 {
    let q_sep = (2.0 / std::f64::consts::PI)
        * ((exp_sign * lambda(params.epsilon) * u).exp() * tan_half).atan();
    let weight = 1.0 - (TWO_PI * q_sep).cos();
    if weight == 0.0 {
        return 0.0;
    }
    weight * params.perturbation.eval(t + u, theta + a * u, q_sep)
}

/// Analytic bound on the discarded tail beyond offset `L`.
fn tail_bound(params: &ModelParams, tan_half: f64, l: f64) -> f64 {
    // 1 - cos(2 pi q_sep) <= 2 pi^2 q_sep^2 <= 8 tan_half^2 e^{-2 lam L} on
    // the far side, and the same bound with 1/tan_half near q = 1.
    let lam = lambda(params.epsilon);
    let t2 = tan_half.abs().max(1.0 / tan_half.abs());
    params.epsilon * params.perturbation.amplitude_bound() * 8.0 * t2 * t2
        * (-2.0 * lam * l).exp()
        / (2.0 * lam)
}

fn check_section_q(q: f64, lo: f64, hi: f64) -> Result<()> {
    if q <= lo || q >= hi {
        return Err(Error::Domain(format!("section q must lie in ({lo}, {hi}), got {q}")));
    }
    Ok(())
}

fn half_integral(
    params: &ModelParams,
    a: f64,
    t: f64,
    theta: f64,
    q: f64,
    side_plus: bool,
) -> Result<f64> {
    let tan_half = (std::f64::consts::PI * q / 2.0).tan();
    let gl = GaussLegendre::new(GL_NODES);
    let width = panel_width(params.epsilon);
    let mut l = truncation(params.epsilon);
    for attempt in 0..3 {
        let tail = tail_bound(params, tan_half, l);
        if tail <= TAIL_TOL {
            let panels = (l / width).ceil() as usize;
            // plus side: u in [-L, 0], exponent grows toward the section;
            // minus side: u in [0, L], exponent exp(lam (t - s)) decays
            let (lo, hi, exp_sign) = if side_plus { (-l, 0.0, 1.0) } else { (0.0, l, -1.0) };
            let val = gl.integrate_panels(lo, hi, panels, |u| {
                integrand(params, a, t, theta, tan_half, exp_sign, u)
            });
            return Ok(params.epsilon * val);
        }
        if attempt < 2 {
            l *= 2.0;
        } else {
            return Err(Error::NonConvergence { tail });
        }
    }
    unreachable!()
}

/// `M+_a(t, theta, q)`: integral over `(-inf, t]` along the separatrix
/// branch arriving at `q in (0, 1)`.
pub fn melnikov_plus(params: &ModelParams, a: f64, t: f64, theta: f64, q: f64) -> Result<f64> {
    check_section_q(q, 0.0, 1.0)?;
    half_integral(params, a, t, theta, q, true)
}

/// `M-_a(t, theta, q)`: integral over `[t, +inf)` with the decaying
/// exponent; `q in (-1, 1)` covers both branches approaching the torus,
/// the lower one being the `q - 1` pairing of the section trick.
pub fn melnikov_minus(params: &ModelParams, a: f64, t: f64, theta: f64, q: f64) -> Result<f64> {
    check_section_q(q, -1.0, 1.0)?;
    half_integral(params, a, t, theta, q, false)
}

/// Full-line integral `M_a(t, theta) = M+_a(t,theta,1/2) + M-_a(t,theta,-1/2)`,
/// evaluated directly as one quadrature along the whole separatrix.
pub fn melnikov_total(params: &ModelParams, a: f64, t: f64, theta: f64) -> Result<f64> {
    let tan_half = 1.0; // tan(pi/4)
    let gl = GaussLegendre::new(GL_NODES);
    let width = panel_width(params.epsilon);
    let mut l = truncation(params.epsilon);
    for attempt in 0..3 {
        let tail = 2.0 * tail_bound(params, tan_half, l);
        if tail <= TAIL_TOL {
            let panels = (2.0 * l / width).ceil() as usize;
            let val = gl.integrate_panels(-l, l, panels, |u| {
                integrand(params, a, t, theta, tan_half, 1.0, u)
            });
            return Ok(params.epsilon * val);
        }
        if attempt < 2 {
            l *= 2.0;
        } else {
            return Err(Error::NonConvergence { tail });
        }
    }
    unreachable!()
}

/// Residue evaluation of `M_a` for the Arnold perturbation, with the `a = 0`
/// coefficient taken as the removable-singularity limit `2 sqrt(eps) / pi`.
pub fn melnikov_closed_form(epsilon: f64, a: f64, t: f64, theta: f64) -> f64 {
    let se = epsilon.sqrt();
    let coef_theta = if a == 0.0 {
        2.0 * se / std::f64::consts::PI
    } else {
        a / (std::f64::consts::PI * a / (2.0 * se)).sinh()
    };
    let coef_t = 1.0 / (std::f64::consts::PI / (2.0 * se)).sinh();
    coef_theta * (TWO_PI * theta).cos() + coef_t * (TWO_PI * t).cos()
}

/// Checked wrapper that rejects non-Arnold perturbations.
pub fn melnikov_closed_form_checked(
    params: &ModelParams,
    a: f64,
    t: f64,
    theta: f64,
) -> Result<f64> {
    if !params.perturbation.is_arnold() {
        return Err(Error::UnsupportedPerturbation(
            "residue closed form is available for f = cos(2 pi theta) + cos(2 pi t) only".into(),
        ));
    }
    Ok(melnikov_closed_form(params.epsilon, a, t, theta))
}

/// Gradient of `(t, theta) -> M_a(t, theta)` by differentiating under the
/// integral (the separatrix factor is independent of `t` after the shift
/// `u = s - t`).
pub fn melnikov_grad(params: &ModelParams, a: f64, t: f64, theta: f64) -> Result<[f64; 2]> {
    let grad_of = |which: usize| -> Result<f64> {
        let gl = GaussLegendre::new(GL_NODES);
        let l = truncation(params.epsilon);
        let width = panel_width(params.epsilon);
        let panels = (2.0 * l / width).ceil() as usize;
        let val = gl.integrate_panels(-l, l, panels, |u| {
            let q_sep =
                (2.0 / std::f64::consts::PI) * ((lambda(params.epsilon) * u).exp()).atan();
            let weight = 1.0 - (TWO_PI * q_sep).cos();
            let (_f, ft, fth, _fq) =
                params.perturbation.eval_with_grad(t + u, theta + a * u, q_sep);
            weight * if which == 0 { ft } else { fth }
        });
        Ok(params.epsilon * val)
    };
    Ok([grad_of(0)?, grad_of(1)?])
}

/// Hessian of `(t, theta) -> M_a(t, theta)` by the same route.
pub fn melnikov_hessian(params: &ModelParams, a: f64, t: f64, theta: f64) -> Result<[[f64; 2]; 2]> {
    let gl = GaussLegendre::new(GL_NODES);
    let l = truncation(params.epsilon);
    let width = panel_width(params.epsilon);
    let panels = (2.0 * l / width).ceil() as usize;
    let mut h = [[0.0; 2]; 2];
    for (r, c) in [(0, 0), (0, 1), (1, 1)] {
        let val = gl.integrate_panels(-l, l, panels, |u| {
            let q_sep =
                (2.0 / std::f64::consts::PI) * ((lambda(params.epsilon) * u).exp()).atan();
            let weight = 1.0 - (TWO_PI * q_sep).cos();
            let mut acc = 0.0;
            for term in &params.perturbation.terms {
                let arg = TWO_PI
                    * (term.k_t as f64 * (t + u)
                        + term.k_theta as f64 * (theta + a * u)
                        + term.k_q as f64 * q_sep)
                    + term.phase;
                let k = [term.k_t as f64, term.k_theta as f64];
                acc -= term.amplitude * TWO_PI * TWO_PI * k[r] * k[c] * arg.cos();
            }
            weight * acc
        });
        h[r][c] = params.epsilon * val;
        h[c][r] = h[r][c];
    }
    Ok(h)
}

/// Sampled values of `M_a(t, theta, 1/2)` on an N x N uniform grid over the
/// torus.
#[derive(Debug, Clone)]
pub struct MelnikovField {
    pub params: ModelParams,
    pub a: f64,
    pub n: usize,
    /// Row-major `[i_t][i_theta]` values.
    pub grid: Vec<f64>,
}

impl MelnikovField {
    pub fn compute(params: &ModelParams, a: f64, n: usize) -> Result<Self> {
        let mut grid = vec![0.0; n * n];
        for it in 0..n {
            let t = it as f64 / n as f64;
            for ith in 0..n {
                let theta = ith as f64 / n as f64;
                grid[it * n + ith] = melnikov_total(params, a, t, theta)?;
            }
        }
        Ok(MelnikovField { params: params.clone(), a, n, grid })
    }

    pub fn value(&self, it: usize, ith: usize) -> f64 {
        self.grid[it * self.n + ith]
    }

    pub fn mean(&self) -> f64 {
        self.grid.iter().sum::<f64>() / self.grid.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.grid.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// CSV export with header `t,theta,M`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,theta,M")?;
        for it in 0..self.n {
            for ith in 0..self.n {
                writeln!(
                    w,
                    "{:.16e},{:.16e},{:.16e}",
                    it as f64 / self.n as f64,
                    ith as f64 / self.n as f64,
                    self.value(it, ith)
                )?;
            }
        }
        Ok(())
    }
}

/// Definiteness class of a critical point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticalKind {
    Minimum,
    Maximum,
    Saddle,
    Degenerate,
}

#[derive(Debug, Clone, Serialize)]
pub struct CriticalPoint {
    pub t: f64,
    pub theta: f64,
    pub value: f64,
    pub hessian: [[f64; 2]; 2],
    pub kind: CriticalKind,
}

/// Outcome of the critical-point sweep. Failed seed cells are reported,
/// not fatal.
#[derive(Debug, Clone, Serialize)]
pub struct CriticalPointReport {
    pub points: Vec<CriticalPoint>,
    pub degenerate_field: bool,
    pub failed_cells: Vec<(f64, f64)>,
}

impl CriticalPointReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

fn classify(h: &[[f64; 2]; 2]) -> CriticalKind {
    let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
    if det.abs() <= 1e-8 {
        CriticalKind::Degenerate
    } else if det < 0.0 {
        CriticalKind::Saddle
    } else if h[0][0] > 0.0 {
        CriticalKind::Minimum
    } else {
        CriticalKind::Maximum
    }
}

/// All critical points of `(t, theta) -> M_a(t, theta, 1/2)` on the torus,
/// refined by Newton iteration from sign-change cells of the gradient grid.
pub fn critical_points(field: &MelnikovField) -> Result<CriticalPointReport> {
    let n = field.n;
    let params = &field.params;
    let a = field.a;

    if field.max_abs() < 1e-13 {
        return Ok(CriticalPointReport {
            points: Vec::new(),
            degenerate_field: true,
            failed_cells: Vec::new(),
        });
    }

    // gradient on the nodes
    let mut gt = vec![0.0; n * n];
    let mut gth = vec![0.0; n * n];
    for it in 0..n {
        for ith in 0..n {
            let g = melnikov_grad(params, a, it as f64 / n as f64, ith as f64 / n as f64)?;
            gt[it * n + ith] = g[0];
            gth[it * n + ith] = g[1];
        }
    }

    let mut points: Vec<CriticalPoint> = Vec::new();
    let mut failed = Vec::new();
    for it in 0..n {
        for ith in 0..n {
            let corners = [
                it * n + ith,
                ((it + 1) % n) * n + ith,
                it * n + (ith + 1) % n,
                ((it + 1) % n) * n + (ith + 1) % n,
            ];
            let sign_change = |g: &[f64]| {
                let mut pos = false;
                let mut neg = false;
                for &c in &corners {
                    pos |= g[c] > 0.0;
                    neg |= g[c] < 0.0;
                }
                pos && neg
            };
            if !(sign_change(&gt) && sign_change(&gth)) {
                continue;
            }
            let t0 = (it as f64 + 0.5) / n as f64;
            let th0 = (ith as f64 + 0.5) / n as f64;
            match newton_refine(params, a, t0, th0) {
                Some((t, theta)) => {
                    let t = t.rem_euclid(1.0);
                    let theta = theta.rem_euclid(1.0);
                    let dup = points.iter().any(|p| {
                        torus_dist(p.t, t) < 1e-6 && torus_dist(p.theta, theta) < 1e-6
                    });
                    if !dup {
                        let h = melnikov_hessian(params, a, t, theta)?;
                        points.push(CriticalPoint {
                            t,
                            theta,
                            value: melnikov_total(params, a, t, theta)?,
                            hessian: h,
                            kind: classify(&h),
                        });
                    }
                }
                None => failed.push((t0, th0)),
            }
        }
    }
    points.sort_by(|a, b| (a.t, a.theta).partial_cmp(&(b.t, b.theta)).unwrap());
    Ok(CriticalPointReport { points, degenerate_field: false, failed_cells: failed })
}

fn torus_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

fn newton_refine(params: &ModelParams, a: f64, mut t: f64, mut theta: f64) -> Option<(f64, f64)> {
    for _ in 0..50 {
        let g = melnikov_grad(params, a, t, theta).ok()?;
        let gn = (g[0] * g[0] + g[1] * g[1]).sqrt();
        if gn <= 1e-10 {
            return Some((t, theta));
        }
        let h = melnikov_hessian(params, a, t, theta).ok()?;
        let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
        if det.abs() < 1e-14 {
            return None;
        }
        let dt = (-g[0] * h[1][1] + g[1] * h[0][1]) / det;
        let dth = (g[0] * h[1][0] - g[1] * h[0][0]) / det;
        if !(dt.is_finite() && dth.is_finite()) || dt.abs() + dth.abs() > 0.5 {
            return None;
        }
        t += dt;
        theta += dth;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Perturbation;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn arnold(epsilon: f64) -> ModelParams {
        ModelParams::arnold(epsilon, 0.0).unwrap()
    }

    #[test]
    fn zero_perturbation_integrals_vanish() {
        let params = ModelParams::new(0.25, 0.0, Perturbation::zero()).unwrap();
        assert_eq!(melnikov_plus(&params, 1.0, 0.1, 0.2, 0.5).unwrap(), 0.0);
        assert_eq!(melnikov_minus(&params, 1.0, 0.1, 0.2, -0.5).unwrap(), 0.0);
        assert_eq!(melnikov_total(&params, 1.0, 0.1, 0.2).unwrap(), 0.0);
    }

    #[test]
    fn symmetric_point_halves() {
        let params = arnold(0.25);
        let plus = melnikov_plus(&params, 1.0, 0.0, 0.0, 0.5).unwrap();
        let minus = melnikov_minus(&params, 1.0, 0.0, 0.0, -0.5).unwrap();
        let expect = 1.0 / std::f64::consts::PI.sinh();
        assert_relative_eq!(plus, expect, epsilon = 1e-8);
        assert_relative_eq!(minus, expect, epsilon = 1e-8);
        assert_relative_eq!(plus + minus, 2.0 * expect, epsilon = 1e-8);
    }

    #[test]
    fn plus_minus_additivity() {
        let params = arnold(0.25);
        for (t, theta) in [(0.0, 0.0), (0.3, 0.7), (0.91, 0.13)] {
            let total = melnikov_total(&params, 0.8, t, theta).unwrap();
            let sum = melnikov_plus(&params, 0.8, t, theta, 0.5).unwrap()
                + melnikov_minus(&params, 0.8, t, theta, -0.5).unwrap();
            assert_abs_diff_eq!(total, sum, epsilon = 1e-10);
        }
    }

    #[test]
    fn closed_form_values() {
        assert_abs_diff_eq!(melnikov_closed_form(0.25, 1.0, 0.25, 0.25), 0.0, epsilon = 1e-15);
        assert_relative_eq!(
            melnikov_closed_form(0.25, 1.0, 0.0, 0.0),
            2.0 / std::f64::consts::PI.sinh(),
            epsilon = 1e-14
        );
        // eps=0.0625, a=0.5: 0.5/sinh(pi) + 1/sinh(2 pi)
        let v = melnikov_closed_form(0.0625, 0.5, 0.0, 0.0);
        let expect = 0.5 / std::f64::consts::PI.sinh() + 1.0 / (2.0 * std::f64::consts::PI).sinh();
        assert_relative_eq!(v, expect, epsilon = 1e-14);
        assert_abs_diff_eq!(expect, 0.0470297, epsilon = 1e-6);
    }

    #[test]
    fn closed_form_a_zero_limit() {
        let v0 = melnikov_closed_form(0.25, 0.0, 0.0, 0.0);
        let expect = 1.0 / std::f64::consts::PI + 1.0 / std::f64::consts::PI.sinh();
        assert_relative_eq!(v0, expect, epsilon = 1e-14);
        // continuous limit
        let v_small = melnikov_closed_form(0.25, 1e-8, 0.0, 0.0);
        assert_abs_diff_eq!(v0, v_small, epsilon = 1e-12);
        // and the quadrature agrees at a = 0
        let params = arnold(0.25);
        let q = melnikov_total(&params, 0.0, 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(q, 0.4048995, epsilon = 1e-6);
        assert_abs_diff_eq!(q, v0, epsilon = 1e-7);
    }

    #[test]
    fn oracle_equivalence_sweep() {
        let mut worst = 0.0_f64;
        for eps in [0.0625, 0.25] {
            let params = arnold(eps);
            for a in [0.0, 0.5, 1.0] {
                for i in 0..5 {
                    for j in 0..5 {
                        let t = i as f64 / 5.0;
                        let th = j as f64 / 5.0;
                        let quad = melnikov_total(&params, a, t, th).unwrap();
                        let closed = melnikov_closed_form(eps, a, t, th);
                        worst = worst.max((quad - closed).abs());
                    }
                }
            }
        }
        assert!(worst <= 1e-7, "worst oracle disagreement {worst:.3e}");
    }

    #[test]
    fn half_shift_antisymmetry() {
        let params = arnold(0.0625);
        for (t, theta) in [(0.1, 0.2), (0.6, 0.9)] {
            let v = melnikov_total(&params, 0.7, t, theta).unwrap();
            let w = melnikov_total(&params, 0.7, t + 0.5, theta + 0.5).unwrap();
            assert_abs_diff_eq!(v, -w, epsilon = 1e-10);
        }
    }

    #[test]
    fn integer_time_shift_covariance() {
        let params = arnold(0.25);
        let v = melnikov_minus(&params, 0.9, 0.3, 0.4, -0.5).unwrap();
        let w = melnikov_minus(&params, 0.9, 1.3, 0.4, -0.5).unwrap();
        assert_abs_diff_eq!(v, w, epsilon = 1e-12);
    }

    #[test]
    fn truncation_soundness() {
        // widening the window must not move the value
        let params = arnold(0.25);
        let gl = GaussLegendre::new(GL_NODES);
        let base = melnikov_total(&params, 1.0, 0.17, 0.31).unwrap();
        let l = 2.0 * truncation(0.25);
        let wide = params.epsilon
            * gl.integrate_panels(-l, l, (2.0 * l / panel_width(0.25)).ceil() as usize, |u| {
                integrand(&params, 1.0, 0.17, 0.31, 1.0, 1.0, u)
            });
        assert_abs_diff_eq!(base, wide, epsilon = 1e-10);
    }

    #[test]
    fn rejects_out_of_range_sections() {
        let params = arnold(0.25);
        assert!(melnikov_plus(&params, 1.0, 0.0, 0.0, 0.0).is_err());
        assert!(melnikov_plus(&params, 1.0, 0.0, 0.0, 1.0).is_err());
        assert!(melnikov_plus(&params, 1.0, 0.0, 0.0, -0.5).is_err());
        assert!(melnikov_minus(&params, 1.0, 0.0, 0.0, -1.0).is_err());
        assert!(melnikov_closed_form_checked(
            &ModelParams::new(0.25, 0.0, Perturbation::zero()).unwrap(),
            1.0,
            0.0,
            0.0
        )
        .is_err());
    }

    #[test]
    fn arnold_critical_set() {
        let params = arnold(0.25);
        let field = MelnikovField::compute(&params, 1.0, 24).unwrap();
        // grid mean matches the zero torus average of the Arnold field
        assert_abs_diff_eq!(field.mean(), 0.0, epsilon = 1e-12);
        let report = critical_points(&field).unwrap();
        assert!(!report.degenerate_field);
        assert_eq!(report.points.len(), 4, "points: {:?}", report.points);
        for p in &report.points {
            let near = |x: f64| torus_dist(x, 0.0).min(torus_dist(x, 0.5));
            assert!(near(p.t) < 1e-9 && near(p.theta) < 1e-9, "spurious point {p:?}");
            assert!(p.kind != CriticalKind::Degenerate);
        }
        // Hessian at the origin: diag(-4 pi^2 / sinh(pi)) for eps = 1/4, a = 1
        let origin = report
            .points
            .iter()
            .find(|p| torus_dist(p.t, 0.0) < 1e-9 && torus_dist(p.theta, 0.0) < 1e-9)
            .unwrap();
        let expect = -4.0 * std::f64::consts::PI.powi(2) / std::f64::consts::PI.sinh();
        assert_abs_diff_eq!(origin.hessian[0][0], expect, epsilon = 1e-3);
        assert_abs_diff_eq!(origin.hessian[1][1], expect, epsilon = 1e-3);
        assert_abs_diff_eq!(origin.hessian[0][1], 0.0, epsilon = 1e-8);
        assert_eq!(origin.kind, CriticalKind::Maximum);
    }

    #[test]
    fn degenerate_field_flagged() {
        let params = ModelParams::new(0.25, 0.0, Perturbation::zero()).unwrap();
        let field = MelnikovField::compute(&params, 1.0, 8).unwrap();
        let report = critical_points(&field).unwrap();
        assert!(report.degenerate_field);
        assert!(report.points.is_empty());
    }

    #[test]
    fn csv_export_shape() {
        let params = arnold(0.25);
        let field = MelnikovField::compute(&params, 1.0, 4).unwrap();
        let mut buf = Vec::new();
        field.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().count(), 17);
        assert!(s.starts_with("t,theta,M\n"));
    }
}
