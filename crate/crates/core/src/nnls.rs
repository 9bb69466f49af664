//! Nonnegative least squares, `min ||A x - b||_2` subject to `x >= 0`,
//! by the Lawson-Hanson active-set method.

use nalgebra::{DMatrix, DVector};

/// Solution of an NNLS problem.
#[derive(Debug, Clone)]
pub struct NnlsSolution {
    pub x: DVector<f64>,
    /// `||A x - b||_2`.
    pub residual_norm: f64,
    pub iterations: usize,
}

pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> NnlsSolution {
    nnls_from(a, b, &vec![false; a.ncols()])
}

/// [`nnls`] starting from the guessed support `hint` (for example the
/// support of a nearby problem's solution). The guess only changes the
/// path, not the optimality conditions the result satisfies.
pub fn nnls_from(a: &DMatrix<f64>, b: &DVector<f64>, hint: &[bool]) -> NnlsSolution {
    let (m, n) = a.shape();
    assert_eq!(m, b.len(), "nnls: row count of A must match b");
    assert_eq!(n, hint.len(), "nnls: hint length must match the column count");
    let mut x = DVector::<f64>::zeros(n);
    let mut passive = hint.to_vec();
    let col_norm_max = (0..n).map(|j| a.column(j).norm()).fold(0.0, f64::max);
    let tol = 1e-14 * col_norm_max.max(1.0) * b.norm().max(1.0) * (m.max(n) as f64);
    let max_outer = 3 * n + 10;
    let mut iterations = 0;

    // Columns whose entry came out nonpositive right after entering; they are
    // skipped until the iterate moves again.
    let mut blocked = vec![false; n];
    // Shrink the guessed support from x = 0 until its least-squares
    // solution is strictly positive.
    while passive.iter().any(|&p| p) {
        let set: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
        let z = least_squares_on(a, b, &set);
        if z.iter().all(|&zj| zj > 0.0) {
            for (&j, &zj) in set.iter().zip(z.iter()) {
                x[j] = zj;
            }
            break;
        }
        for (&j, &zj) in set.iter().zip(z.iter()) {
            if zj <= 0.0 {
                passive[j] = false;
            }
        }
    }
    let mut grad = a.tr_mul(&(b - a * &x));
    while iterations < max_outer {
        // Most violated dual constraint among the zero coordinates.
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if !passive[j] && !blocked[j] && grad[j] > tol && best.is_none_or(|(_, g)| grad[j] > g) {
                best = Some((j, grad[j]));
            }
        }
        let Some((t, _)) = best else { break };
        iterations += 1;
        passive[t] = true;

        let mut first = true;
        loop {
            let set: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
            let z = least_squares_on(a, b, &set);
            if z.iter().all(|&zj| zj > 0.0) {
                for (&j, &zj) in set.iter().zip(z.iter()) {
                    x[j] = zj;
                }
                blocked.fill(false);
                break;
            }
            if first && z[set.iter().position(|&j| j == t).expect("t is passive")] <= 0.0 {
                passive[t] = false;
                blocked[t] = true;
                break;
            }
            first = false;
            // Move from x toward z until the first passive coordinate hits zero.
            let mut alpha = f64::INFINITY;
            let mut hit = set[0];
            for (&j, &zj) in set.iter().zip(z.iter()) {
                if zj <= 0.0 {
                    let r = x[j] / (x[j] - zj);
                    if r < alpha {
                        alpha = r;
                        hit = j;
                    }
                }
            }
            for (&j, &zj) in set.iter().zip(z.iter()) {
                x[j] += alpha * (zj - x[j]);
            }
            x[hit] = 0.0;
            for &j in &set {
                if x[j] <= 0.0 {
                    x[j] = 0.0;
                    passive[j] = false;
                }
            }
            blocked.fill(false);
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
        grad = a.tr_mul(&(b - a * &x));
    }
    let residual_norm = (a * &x - b).norm();
    NnlsSolution {
        x,
        residual_norm,
        iterations,
    }
}

/// Unconstrained least squares restricted to the columns in `set`.
/// Householder QR when the subproblem is well conditioned, SVD otherwise.
fn least_squares_on(a: &DMatrix<f64>, b: &DVector<f64>, set: &[usize]) -> DVector<f64> {
    let sub = a.select_columns(set);
    if sub.nrows() >= sub.ncols() {
        let qr = sub.clone().qr();
        let r = qr.r();
        let diag: Vec<f64> = r.diagonal().iter().map(|v| v.abs()).collect();
        let dmax = diag.iter().cloned().fold(0.0, f64::max);
        let dmin = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        if dmin > 1e-10 * dmax {
            let qtb = qr.q().tr_mul(b);
            let k = set.len();
            if let Some(z) = r.solve_upper_triangular(&qtb.rows(0, k).into_owned()) {
                return z;
            }
        }
    }
    let svd = sub.svd(true, true);
    let tol = f64::EPSILON * svd.singular_values.max() * (a.nrows().max(set.len()) as f64);
    svd.solve(b, tol).expect("svd computed with u and v")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn kkt_violation(a: &DMatrix<f64>, b: &DVector<f64>, x: &DVector<f64>) -> f64 {
        // gradient of 1/2 ||Ax - b||^2
        let g = a.tr_mul(&(a * x - b));
        x.iter()
            .zip(g.iter())
            .map(|(&xi, &gi)| if xi > 0.0 { gi.abs() } else { (-gi).max(0.0) })
            .fold(0.0, f64::max)
    }

    #[test]
    fn identity_returns_rhs_clipped() {
        let a = DMatrix::identity(4, 4);
        let b = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(nnls(&a, &b).x, b);
        let b2 = DVector::from_vec(vec![1.0, -2.0, 3.0, -4.0]);
        let x = nnls(&a, &b2).x;
        for (got, want) in x.iter().zip([1.0, 0.0, 3.0, 0.0]) {
            assert!((got - want).abs() <= 1e-14, "{x:?}");
        }
    }

    #[test]
    fn matches_unconstrained_when_positive() {
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.5, 0.2, 1.0, 0.3, 0.3, 1.0, 0.1]);
        let truth = DVector::from_vec(vec![0.7, 1.3]);
        let b = &a * &truth;
        let s = nnls(&a, &b);
        assert!((s.x - truth).amax() < 1e-12);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, -1.0, 2.0, 0.5, 3.0, -1.0]);
        let s = nnls(&a, &DVector::zeros(2));
        assert_eq!(s.x, DVector::zeros(3));
    }

    proptest! {
        #[test]
        fn warm_start_satisfies_kkt(
            rows in 2usize..12,
            cols in 1usize..15,
            seed in any::<u64>(),
            mask in any::<u16>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0));
            let b = DVector::from_fn(rows, |_, _| rng.random_range(-1.0..1.0));
            let hint: Vec<bool> = (0..cols).map(|j| mask >> j & 1 == 1).collect();
            let s = nnls_from(&a, &b, &hint);
            prop_assert!(s.x.iter().all(|&v| v >= 0.0));
            prop_assert!(kkt_violation(&a, &b, &s.x) < 1e-10, "kkt {}", kkt_violation(&a, &b, &s.x));
        }

        #[test]
        fn solution_satisfies_kkt(
            rows in 2usize..12,
            cols in 1usize..15,
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0));
            let b = DVector::from_fn(rows, |_, _| rng.random_range(-1.0..1.0));
            let s = nnls(&a, &b);
            prop_assert!(s.x.iter().all(|&v| v >= 0.0));
            prop_assert!(kkt_violation(&a, &b, &s.x) < 1e-10, "kkt {}", kkt_violation(&a, &b, &s.x));
        }
    }
}
