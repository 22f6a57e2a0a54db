//! Natural cubic smoothing spline evaluated at its knots (Reinsch form).
//!
//! Minimises `Σ (yᵢ − f(tᵢ))² + λ ∫ f''(t)² dt`. The normal equations
//! `(R + λ QᵀQ) γ = Qᵀ y` are pentadiagonal and solved with a banded
//! Cholesky factorisation, so the cost is linear in the number of knots.

/// Fitted values at `t` for smoothing parameter `lambda`.
///
/// `lambda = 0` interpolates; `lambda = ∞` returns the least-squares line.
/// `t` must be strictly increasing and at least as long as `y`.
pub fn smoothing_spline(t: &[f64], y: &[f64], lambda: f64) -> Vec<f64> {
    let n = y.len();
    assert_eq!(t.len(), n, "knots and values must align");
    if n <= 2 || lambda == 0.0 {
        return y.to_vec();
    }
    if lambda.is_infinite() {
        return linear_fit(t, y);
    }
    let h: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    let m = n - 2;

    // Q is n × m with three non-zeros per column j (rows j, j+1, j+2).
    let q = |j: usize| -> [f64; 3] { [1.0 / h[j], -1.0 / h[j] - 1.0 / h[j + 1], 1.0 / h[j + 1]] };

    // Bands of A = R + λ QᵀQ: a0 diagonal, a1 first super-diagonal, a2 second.
    let mut a0 = vec![0.0; m];
    let mut a1 = vec![0.0; m];
    let mut a2 = vec![0.0; m];
    for j in 0..m {
        let qj = q(j);
        a0[j] = (h[j] + h[j + 1]) / 3.0 + lambda * qj.iter().map(|v| v * v).sum::<f64>();
        if j + 1 < m {
            let qk = q(j + 1);
            // Column j spans rows j..j+2, column j+1 spans rows j+1..j+3.
            a1[j] = h[j + 1] / 6.0 + lambda * (qj[1] * qk[0] + qj[2] * qk[1]);
        }
        if j + 2 < m {
            let qk = q(j + 2);
            a2[j] = lambda * qj[2] * qk[0];
        }
    }
    let rhs: Vec<f64> = (0..m)
        .map(|j| {
            let qj = q(j);
            qj[0] * y[j] + qj[1] * y[j + 1] + qj[2] * y[j + 2]
        })
        .collect();
    let gamma = solve_pentadiagonal_spd(a0, a1, a2, rhs);

    let mut f = y.to_vec();
    for (j, g) in gamma.iter().enumerate() {
        let qj = q(j);
        for (k, qv) in qj.iter().enumerate() {
            f[j + k] -= lambda * qv * g;
        }
    }
    f
}

/// Least-squares line through `(t, y)`, evaluated at `t`.
pub fn linear_fit(t: &[f64], y: &[f64]) -> Vec<f64> {
    let n = y.len() as f64;
    let tm = t.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let sxx: f64 = t.iter().map(|ti| (ti - tm).powi(2)).sum();
    let sxy: f64 = t.iter().zip(y).map(|(ti, yi)| (ti - tm) * (yi - ym)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    t.iter().map(|ti| ym + slope * (ti - tm)).collect()
}

/// Banded Cholesky (`A = L Lᵀ`, bandwidth 2) followed by two triangular solves.
fn solve_pentadiagonal_spd(a0: Vec<f64>, a1: Vec<f64>, a2: Vec<f64>, mut b: Vec<f64>) -> Vec<f64> {
    let m = a0.len();
    // L bands: l0 diagonal, l1[i] = L[i+1][i], l2[i] = L[i+2][i].
    let mut l0 = vec![0.0; m];
    let mut l1 = vec![0.0; m];
    let mut l2 = vec![0.0; m];
    for i in 0..m {
        let mut d = a0[i];
        if i >= 1 {
            d -= l1[i - 1] * l1[i - 1];
        }
        if i >= 2 {
            d -= l2[i - 2] * l2[i - 2];
        }
        l0[i] = d.sqrt();
        if i + 1 < m {
            let mut v = a1[i];
            if i >= 1 {
                v -= l2[i - 1] * l1[i - 1];
            }
            l1[i] = v / l0[i];
        }
        if i + 2 < m {
            l2[i] = a2[i] / l0[i];
        }
    }
    for i in 0..m {
        if i >= 1 {
            b[i] -= l1[i - 1] * b[i - 1];
        }
        if i >= 2 {
            b[i] -= l2[i - 2] * b[i - 2];
        }
        b[i] /= l0[i];
    }
    for i in (0..m).rev() {
        if i + 1 < m {
            b[i] -= l1[i] * b[i + 1];
        }
        if i + 2 < m {
            b[i] -= l2[i] * b[i + 2];
        }
        b[i] /= l0[i];
    }
    b
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    /// Dense reference solution of the same normal equations.
    fn dense_reference(t: &[f64], y: &[f64], lambda: f64) -> Vec<f64> {
        let n = y.len();
        let h: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
        let mut q = DMatrix::<f64>::zeros(n, n - 2);
        let mut r = DMatrix::<f64>::zeros(n - 2, n - 2);
        for j in 0..n - 2 {
            q[(j, j)] = 1.0 / h[j];
            q[(j + 1, j)] = -1.0 / h[j] - 1.0 / h[j + 1];
            q[(j + 2, j)] = 1.0 / h[j + 1];
            r[(j, j)] = (h[j] + h[j + 1]) / 3.0;
            if j + 1 < n - 2 {
                r[(j, j + 1)] = h[j + 1] / 6.0;
                r[(j + 1, j)] = h[j + 1] / 6.0;
            }
        }
        let yv = DVector::from_column_slice(y);
        let a = &r + lambda * q.transpose() * &q;
        let gamma = a.lu().solve(&(q.transpose() * &yv)).unwrap();
        (yv - lambda * q * gamma).iter().copied().collect()
    }

    #[test]
    fn matches_dense_solver() {
        let t: Vec<f64> = [0.0, 0.1, 0.25, 0.3, 0.5, 0.55, 0.8, 1.0, 1.1].to_vec();
        let y: Vec<f64> = t.iter().map(|v: &f64| (3.0 * v).sin() + 0.1 * (17.0 * v).cos()).collect();
        for lambda in [1e-4, 0.01, 1.0, 50.0] {
            let a = smoothing_spline(&t, &y, lambda);
            let b = dense_reference(&t, &y, lambda);
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-9, "{lambda}: {u} vs {v}");
            }
        }
    }

    #[test]
    fn interpolates_at_zero_and_preserves_lines() {
        let t: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = t.iter().map(|v| v * v).collect();
        assert_eq!(smoothing_spline(&t, &y, 0.0), y);
        let line: Vec<f64> = t.iter().map(|v| 2.0 - 3.0 * v).collect();
        for lambda in [0.1, 10.0, f64::INFINITY] {
            for (a, b) in smoothing_spline(&t, &line, lambda).iter().zip(&line) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn large_lambda_approaches_regression_line() {
        let t: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y = vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        let fit = linear_fit(&t, &y);
        for (a, b) in smoothing_spline(&t, &y, 1e9).iter().zip(&fit) {
            assert!((a - b).abs() < 1e-4);
        }
    }
}
