//! Limited-memory BFGS with a Wolfe line search and an optional feasible-box
//! step cap. Shared by the discrete-curve solver and the junction
//! minimization.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub gtol: f64,
    pub max_iter: usize,
    /// Stop when the value decrease falls below this relative amount while
    /// the gradient is already small-ish; guards against line-search churn
    /// at machine precision.
    pub ftol_rel: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig { memory: 12, gtol: 1e-8, max_iter: 600, ftol_rel: 1e-15 }
    }
}

#[derive(Debug, Clone)]
pub struct MinimizeOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimize `f` from `x0`. `f` fills the gradient and returns the value.
/// `max_feasible` caps the line-search step so iterates stay strictly
/// inside a feasible region (returns the largest admissible step along a
/// direction, `f64::INFINITY` when unconstrained).
pub fn minimize<F, B>(
    mut f: F,
    x0: Vec<f64>,
    cfg: &LbfgsConfig,
    mut max_feasible: B,
) -> Result<MinimizeOutcome>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
    B: FnMut(&[f64], &[f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut value = f(&x, &mut g)?;
    let mut gnorm = norm(&g);

    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();
    let mut gamma = 1.0;

    for iter in 0..cfg.max_iter {
        if gnorm <= cfg.gtol {
            return Ok(MinimizeOutcome { x, value, grad_norm: gnorm, iterations: iter, converged: true });
        }

        // two-loop recursion
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let m = s_hist.len();
        let mut alpha = vec![0.0; m];
        for i in (0..m).rev() {
            alpha[i] = rho_hist[i] * dot(&s_hist[i], &d);
            for (dj, yj) in d.iter_mut().zip(&y_hist[i]) {
                *dj -= alpha[i] * yj;
            }
        }
        for dj in d.iter_mut() {
            *dj *= gamma;
        }
        for i in 0..m {
            let beta = rho_hist[i] * dot(&y_hist[i], &d);
            for (dj, sj) in d.iter_mut().zip(&s_hist[i]) {
                *dj += (alpha[i] - beta) * sj;
            }
        }

        let mut dg = dot(&d, &g);
        if dg >= 0.0 {
            // history lost descent; restart from steepest descent
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            d = g.iter().map(|v| -v).collect();
            dg = -gnorm * gnorm;
        }

        let step_cap = max_feasible(&x, &d);
        let mut step = 1.0_f64.min(0.99 * step_cap);
        if step <= 0.0 {
            return Err(Error::MinimizationFailure {
                reason: "no feasible step inside the box".into(),
                grad_norm: gnorm,
            });
        }

        // Wolfe line search: backtrack on Armijo, expand once on curvature
        let c1 = 1e-4;
        let c2 = 0.9;
        let mut x_new = vec![0.0; n];
        let mut g_new = vec![0.0; n];
        let mut v_new;
        let mut ok = false;
        let mut expansions = 0;
        for _ in 0..30 {
            for i in 0..n {
                x_new[i] = x[i] + step * d[i];
            }
            v_new = f(&x_new, &mut g_new)?;
            if !v_new.is_finite() || v_new > value + c1 * step * dg {
                step *= 0.5;
                continue;
            }
            let dg_new = dot(&d, &g_new);
            if dg_new < c2 * dg && expansions < 4 && step < 0.5 * step_cap {
                step = (step * 2.5).min(0.99 * step_cap);
                expansions += 1;
                continue;
            }
            // accept
            let mut s = vec![0.0; n];
            let mut y = vec![0.0; n];
            for i in 0..n {
                s[i] = x_new[i] - x[i];
                y[i] = g_new[i] - g[i];
            }
            let sy = dot(&s, &y);
            if sy > 1e-14 * norm(&s) * norm(&y) {
                if s_hist.len() == cfg.memory {
                    s_hist.remove(0);
                    y_hist.remove(0);
                    rho_hist.remove(0);
                }
                gamma = sy / dot(&y, &y);
                rho_hist.push(1.0 / sy);
                s_hist.push(s);
                y_hist.push(y);
            }
            let decrease = value - v_new;
            x.copy_from_slice(&x_new);
            g.copy_from_slice(&g_new);
            value = v_new;
            gnorm = norm(&g);
            ok = true;
            if decrease.abs() <= cfg.ftol_rel * value.abs().max(1.0) && gnorm <= 10.0 * cfg.gtol {
                return Ok(MinimizeOutcome {
                    x,
                    value,
                    grad_norm: gnorm,
                    iterations: iter + 1,
                    converged: gnorm <= cfg.gtol,
                });
            }
            break;
        }
        if !ok {
            return Ok(MinimizeOutcome {
                x,
                value,
                grad_norm: gnorm,
                iterations: iter,
                converged: gnorm <= cfg.gtol,
            });
        }
    }
    let converged = gnorm <= cfg.gtol;
    Ok(MinimizeOutcome { x, value, grad_norm: gnorm, iterations: cfg.max_iter, converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn quadratic_bowl() {
        let f = |x: &[f64], g: &mut [f64]| {
            let mut v = 0.0;
            for (i, xi) in x.iter().enumerate() {
                let w = (i + 1) as f64;
                v += 0.5 * w * xi * xi;
                g[i] = w * xi;
            }
            Ok(v)
        };
        let out = minimize(f, vec![1.0, -2.0, 3.0], &LbfgsConfig::default(), |_, _| f64::INFINITY)
            .unwrap();
        assert!(out.converged);
        for xi in out.x {
            assert_abs_diff_eq!(xi, 0.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64], g: &mut [f64]| {
            let (a, b) = (1.0, 100.0);
            let v = (a - x[0]).powi(2) + b * (x[1] - x[0] * x[0]).powi(2);
            g[0] = -2.0 * (a - x[0]) - 4.0 * b * x[0] * (x[1] - x[0] * x[0]);
            g[1] = 2.0 * b * (x[1] - x[0] * x[0]);
            Ok(v)
        };
        let cfg = LbfgsConfig { max_iter: 2000, ..Default::default() };
        let out = minimize(f, vec![-1.2, 1.0], &cfg, |_, _| f64::INFINITY).unwrap();
        assert!(out.converged, "gnorm {}", out.grad_norm);
        assert_abs_diff_eq!(out.x[0], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(out.x[1], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn box_cap_respected() {
        // minimum outside the box: iterates must stay strictly inside [-1,1]
        let f = |x: &[f64], g: &mut [f64]| {
            g[0] = 2.0 * (x[0] - 3.0);
            Ok((x[0] - 3.0) * (x[0] - 3.0))
        };
        let cap = |x: &[f64], d: &[f64]| {
            if d[0] > 0.0 {
                (1.0 - x[0]) / d[0]
            } else if d[0] < 0.0 {
                (-1.0 - x[0]) / d[0]
            } else {
                f64::INFINITY
            }
        };
        let out = minimize(f, vec![0.0], &LbfgsConfig::default(), cap).unwrap();
        assert!(out.x[0] < 1.0 && out.x[0] > 0.9);
    }
}
