//! Dense helpers for the small `d x d` systems produced by Hessian work.
//!
//! The matrix dimension here is the lattice dimension (one to three in
//! practice), so partial-pivot elimination and plain Jacobi sweeps are both
//! exact enough and faster than pulling in a linear-algebra crate.

// Pivoting and sweep loops read most clearly with explicit indices.
#![allow(clippy::needless_range_loop)]

use crate::scalar::Scalar;

pub type Matrix<F> = Vec<Vec<F>>;

pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(F::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn norm<F: Scalar>(a: &[F]) -> F {
    dot(a, a).sqrt()
}

/// Solve `a x = b` by Gaussian elimination with partial pivoting.
/// Returns `None` when the system is numerically singular.
pub fn solve<F: Scalar>(a: &Matrix<F>, b: &[F]) -> Option<Vec<F>> {
    let n = b.len();
    debug_assert!(a.len() == n && a.iter().all(|row| row.len() == n));
    let mut m: Matrix<F> = a.clone();
    let mut rhs: Vec<F> = b.to_vec();

    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            m[i][col]
                .abs()
                .partial_cmp(&m[j][col].abs())
                .expect("pivot comparison")
        })?;
        if m[pivot][col].abs() <= F::zero() {
            return None;
        }
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..n {
            let factor = m[row][col] / m[col][col];
            for k in col..n {
                let delta = factor * m[col][k];
                m[row][k] = m[row][k] - delta;
            }
            let delta = factor * rhs[col];
            rhs[row] = rhs[row] - delta;
        }
    }

    let mut x = vec![F::zero(); n];
    for row in (0..n).rev() {
        let mut acc = rhs[row];
        for k in row + 1..n {
            acc = acc - m[row][k] * x[k];
        }
        if !(acc / m[row][row]).is_finite() {
            return None;
        }
        x[row] = acc / m[row][row];
    }
    Some(x)
}

/// Invert a small matrix column by column. `None` when singular.
pub fn invert<F: Scalar>(a: &Matrix<F>) -> Option<Matrix<F>> {
    let n = a.len();
    let mut columns = Vec::with_capacity(n);
    for j in 0..n {
        let mut e = vec![F::zero(); n];
        e[j] = F::one();
        columns.push(solve(a, &e)?);
    }
    let mut inv = vec![vec![F::zero(); n]; n];
    for (j, col) in columns.iter().enumerate() {
        for i in 0..n {
            inv[i][j] = col[i];
        }
    }
    Some(inv)
}

/// Smallest eigenvalue of a symmetric matrix via cyclic Jacobi rotations.
pub fn min_eigenvalue_symmetric<F: Scalar>(a: &Matrix<F>) -> F {
    let n = a.len();
    if n == 1 {
        return a[0][0];
    }
    let mut m = a.clone();
    let eps = F::of(1e-14);
    for _sweep in 0..64 {
        let mut off = F::zero();
        for i in 0..n {
            for j in i + 1..n {
                off = off + m[i][j] * m[i][j];
            }
        }
        let scale = (0..n).fold(F::zero(), |acc, i| acc + m[i][i] * m[i][i]);
        if off <= eps * eps * (scale + F::one()) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() <= F::zero() {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (F::of(2.0) * m[p][q]);
                let t = {
                    let sign = if theta >= F::zero() { F::one() } else { -F::one() };
                    sign / (theta.abs() + (theta * theta + F::one()).sqrt())
                };
                let c = F::one() / (t * t + F::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k][p];
                    let mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p][k];
                    let mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
            }
        }
    }
    (0..n)
        .map(|i| m[i][i])
        .fold(F::infinity(), |acc, x| if x < acc { x } else { acc })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_2x2() {
        let a: Matrix<f64> = vec![vec![2.0, 1.0], vec![1.0, 3.0]];
        let x = solve(&a, &[5.0, 10.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12);
        assert!((x[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn invert_matches_solve() {
        let a: Matrix<f64> = vec![vec![4.0, 1.0, 0.0], vec![1.0, 3.0, 1.0], vec![0.0, 1.0, 2.0]];
        let inv = invert(&a).unwrap();
        for j in 0..3 {
            let mut e = vec![0.0; 3];
            e[j] = 1.0;
            let x = solve(&a, &e).unwrap();
            for i in 0..3 {
                assert!((inv[i][j] - x[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn singular_is_detected() {
        let a: Matrix<f64> = vec![vec![1.0, 2.0], vec![2.0, 4.0]];
        assert!(solve(&a, &[1.0, 2.0]).is_none());
    }

    #[test]
    fn jacobi_eigenvalues() {
        // Symmetric with known spectrum {1, 3}.
        let a: Matrix<f64> = vec![vec![2.0, 1.0], vec![1.0, 2.0]];
        assert!((min_eigenvalue_symmetric(&a) - 1.0).abs() < 1e-10);
        let b = vec![vec![5.0f64]];
        assert_eq!(min_eigenvalue_symmetric(&b), 5.0);
    }
}
