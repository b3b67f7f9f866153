//! Finite-difference weights on arbitrary stencils (Fornberg's recursion).
//!
//! Used for the Hamilton-Jacobi residual of computed generating-function
//! grids, where high-order one-sided stencils are needed at the edges of
//! the non-periodic `q` direction.

/// Weights `w` such that `f^(m)(z) ~= sum_i w[i] f(x[i])`.
///
/// Classic recursion from Fornberg, "Generation of finite difference
/// formulas on arbitrarily spaced grids" (1988).
pub fn fd_weights(z: f64, x: &[f64], m: usize) -> Vec<f64> {
    let n = x.len();
    assert!(n > m, "need more nodes than the derivative order");
    let mut c = vec![vec![0.0_f64; m + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = x[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = x[i] - z;
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[m]).collect()
}

/// First-derivative values along one axis of uniformly spaced data.
///
/// `periodic` selects wrap-around central stencils; otherwise stencils
/// shift one-sided near the boundaries. `order` is the accuracy order
/// (stencil width `order + 1`).
pub fn derivative_1d(values: &[f64], h: f64, periodic: bool, order: usize) -> Vec<f64> {
    let n = values.len();
    let width = order + 1;
    assert!(n >= width, "grid too small for requested order");
    let mut out = vec![0.0; n];
    if periodic {
        let half = order / 2;
        let offsets: Vec<f64> = (0..width).map(|j| (j as f64 - half as f64) * h).collect();
        let w = fd_weights(0.0, &offsets, 1);
        for i in 0..n {
            let mut acc = 0.0;
            for (j, wj) in w.iter().enumerate() {
                let idx = (i + n + j - half) % n;
                acc += wj * values[idx];
            }
            out[i] = acc;
        }
    } else {
        for i in 0..n {
            let start = i.saturating_sub(order / 2).min(n - width);
            let offsets: Vec<f64> =
                (0..width).map(|j| (start + j) as f64 * h - i as f64 * h).collect();
            let w = fd_weights(0.0, &offsets, 1);
            let mut acc = 0.0;
            for (j, wj) in w.iter().enumerate() {
                acc += wj * values[start + j];
            }
            out[i] = acc;
        }
    }
    out
}
