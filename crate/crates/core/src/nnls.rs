//! Lawson-Hanson non-negative least squares.

use nalgebra::{DMatrix, DVector};

pub(crate) struct NnlsSolution {
    pub x: DVector<f64>,
    pub converged: bool,
}

/// Minimizes `|A x - b|` subject to `x >= 0`.
pub(crate) fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> NnlsSolution {
    let (m, n) = a.shape();
    let mut x = DVector::zeros(n);
    if n == 0 {
        return NnlsSolution { x, converged: true };
    }
    let norm = a.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let tol = 10.0 * f64::EPSILON * norm.max(1.0) * (m.max(n) as f64);
    let mut passive = vec![false; n];
    // indices whose least-squares coefficient came out non-positive because
    // of rounding; skipped until x moves again
    let mut blocked = vec![false; n];
    let max_outer = 30 * n + 100;
    // Rounding can leave gradients just above `tol` on columns that are
    // dependent on the passive set, and the method then cycles. A repeated
    // passive set ends the search when the gradient is negligible anyway.
    let loose = 1e-9 * norm.max(1.0) * b.amax().max(1.0);
    let mut seen = std::collections::HashSet::new();

    for _ in 0..max_outer {
        let w = a.tr_mul(&(b - a * &x));
        let pick = (0..n).filter(|&j| !passive[j] && !blocked[j]).max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = pick.filter(|&j| w[j] > tol) else {
            return NnlsSolution { x, converged: true };
        };
        if !seen.insert(passive.clone()) {
            return NnlsSolution { x, converged: w[j] <= loose };
        }
        passive[j] = true;

        let mut first = true;
        loop {
            let idx: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
            let z = solve_passive(a, b, &idx);
            if first {
                first = false;
                let zj = idx.iter().zip(z.iter()).find(|(i, _)| **i == j).map(|(_, z)| *z);
                if zj.is_none_or(|zj| zj <= 0.0) {
                    passive[j] = false;
                    blocked[j] = true;
                    break;
                }
            }
            if z.iter().all(|&zi| zi > 0.0) {
                x.fill(0.0);
                for (&i, &zi) in idx.iter().zip(z.iter()) {
                    x[i] = zi;
                }
                blocked.fill(false);
                break;
            }
            let mut alpha = 1.0f64;
            for (&i, &zi) in idx.iter().zip(z.iter()) {
                if zi <= 0.0 {
                    alpha = alpha.min(x[i] / (x[i] - zi));
                }
            }
            for (&i, &zi) in idx.iter().zip(z.iter()) {
                x[i] += alpha * (zi - x[i]);
            }
            for &i in &idx {
                if x[i] <= tol {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
            blocked.fill(false);
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    NnlsSolution { x, converged: false }
}

fn solve_passive(a: &DMatrix<f64>, b: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    let sub = a.select_columns(idx);
    let solve = |rhs: &DVector<f64>| least_squares(&sub, rhs);
    let mut z = solve(b);
    // one step of iterative refinement recovers most of the accuracy lost
    // to an ill-conditioned passive set
    let r = b - &sub * &z;
    z += solve(&r);
    z
}

fn least_squares(sub: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    if sub.nrows() >= sub.ncols() {
        let qr = sub.clone().qr();
        let (q, r) = (qr.q(), qr.r());
        let diag_max = r.diagonal().amax();
        if r.diagonal().iter().all(|d| d.abs() > 1e-12 * diag_max) {
            if let Some(z) = r.solve_upper_triangular(&q.tr_mul(rhs)) {
                return z;
            }
        }
    }
    let svd = sub.clone().svd(true, true);
    let eps = f64::EPSILON * svd.singular_values.max() * (sub.nrows().max(sub.ncols()) as f64);
    svd.solve(rhs, eps).unwrap_or_else(|_| DVector::zeros(sub.ncols()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconstrained_optimum_inside_orthant() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let s = nnls(&a, &b);
        assert!(s.converged);
        assert!((s.x[0] - 1.0).abs() < 1e-12 && (s.x[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn clamps_negative_component() {
        let a = DMatrix::identity(2, 2);
        let b = DVector::from_vec(vec![-1.0, 2.0]);
        let s = nnls(&a, &b);
        assert_eq!(s.x[0], 0.0);
        assert!((s.x[1] - 2.0).abs() < 1e-12);
    }
}
