//! Gauss-Legendre panels for improper-integral truncation.

/// Nodes and weights of an n-point Gauss-Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// Newton iteration on the Legendre polynomial from Chebyshev-like
    /// initial guesses; standard construction, accurate to machine
    /// precision for moderate n.
    pub fn new(n: usize) -> Self {
        assert!(n >= 2);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (p, dp) = legendre_with_deriv(n, x);
                let dx = p / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, dp) = legendre_with_deriv(n, x);
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        GaussLegendre { nodes, weights }
    }

    /// Integrate `f` over `[a, b]` with a single panel.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x);
        }
        half * acc
    }

    /// Integrate over `[a, b]` split into `panels` equal panels.
    pub fn integrate_panels<F: FnMut(f64) -> f64>(
        &self,
        a: f64,
        b: f64,
        panels: usize,
        mut f: F,
    ) -> f64 {
        let width = (b - a) / panels as f64;
        let mut acc = 0.0;
        for i in 0..panels {
            acc += self.integrate(a + i as f64 * width, a + (i + 1) as f64 * width, &mut f);
        }
        acc
    }
}

fn legendre_with_deriv(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn polynomial_exactness() {
        let gl = GaussLegendre::new(16);
        // exact for degree <= 31
        let v = gl.integrate(0.0, 1.0, |x| x.powi(20));
        assert_abs_diff_eq!(v, 1.0 / 21.0, epsilon = 1e-14);
    }

    #[test]
    fn known_16_point_node() {
        let gl = GaussLegendre::new(16);
        // largest abscissa of the 16-point rule
        assert_abs_diff_eq!(gl.nodes[15], 0.9894009349916499, epsilon = 1e-13);
        assert_abs_diff_eq!(gl.weights[15], 0.027152459411754095, epsilon = 1e-13);
        assert_abs_diff_eq!(gl.weights.iter().sum::<f64>(), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn panels_handle_oscillation() {
        let gl = GaussLegendre::new(16);
        let v = gl.integrate_panels(0.0, 10.0, 10, |x| (2.0 * std::f64::consts::PI * x).cos());
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-13);
        let w = gl.integrate_panels(0.0, 3.0, 6, f64::exp);
        assert_abs_diff_eq!(w, 3.0_f64.exp() - 1.0, epsilon = 1e-11);
    }
}
