//! Small dense linear-algebra kernel: LU solves, bordered (Lagrange) solves
//! for the rank-1-deficient systems of the chain calculus, and a Jacobi
//! eigensolver for symmetric matrices.
//!
//! Everything here is O(n³) dense, which is the right tool at desk scale;
//! the rest of the crate never needs more than a few hundred states.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Solve `a · x = b` by LU decomposition with partial pivoting.
///
/// `a` is consumed as the factorization workspace.
pub fn lu_solve<T: Scalar>(mut a: Array2<T>, mut b: Array1<T>) -> Result<Array1<T>> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(Error::Shape(format!(
            "lu_solve expects square system, got {}x{} with rhs {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    for k in 0..n {
        // pivot search
        let mut piv = k;
        let mut best = a[[k, k]].abs();
        for r in (k + 1)..n {
            let v = a[[r, k]].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if !(best > T::zero()) || !best.is_finite() {
            return Err(Error::SolveFailed(format!(
                "singular pivot at column {k} (|pivot| = {:e})",
                best.to_f64_lossy()
            )));
        }
        if piv != k {
            for c in 0..n {
                let t = a[[k, c]];
                a[[k, c]] = a[[piv, c]];
                a[[piv, c]] = t;
            }
            b.swap(k, piv);
        }
        let pivot = a[[k, k]];
        for r in (k + 1)..n {
            let m = a[[r, k]] / pivot;
            if m != T::zero() {
                for c in (k + 1)..n {
                    let akc = a[[k, c]];
                    a[[r, c]] = a[[r, c]] - m * akc;
                }
                b[r] = b[r] - m * b[k];
            }
            a[[r, k]] = m;
        }
    }
    // back substitution
    let mut x = b;
    for k in (0..n).rev() {
        let mut s = x[k];
        for c in (k + 1)..n {
            s = s - a[[k, c]] * x[c];
        }
        x[k] = s / a[[k, k]];
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SolveFailed("non-finite solution".into()));
    }
    Ok(x)
}

/// Solve the rank-1-deficient system `m · x = rhs` subject to `wᵀ x = c`,
/// through the bordered (Lagrange-multiplier) system
///
/// ```text
/// [ m  e ] [x]   [rhs]
/// [ wᵀ 0 ] [μ] = [ c ]
/// ```
///
/// For the singular operators appearing here (generators and weighted
/// Laplacians, with left kernel spanned by Q and right kernel by constants)
/// the bordered matrix is nonsingular, and μ vanishes exactly when `rhs`
/// satisfies the compatibility condition.
pub fn bordered_solve<T: Scalar>(
    m: &Array2<T>,
    rhs: &Array1<T>,
    w: &Array1<T>,
    c: T,
) -> Result<Array1<T>> {
    let n = m.nrows();
    if m.ncols() != n || rhs.len() != n || w.len() != n {
        return Err(Error::Shape("bordered_solve dimension mismatch".into()));
    }
    let mut big = Array2::zeros((n + 1, n + 1));
    for i in 0..n {
        for j in 0..n {
            big[[i, j]] = m[[i, j]];
        }
        big[[i, n]] = T::one();
        big[[n, i]] = w[i];
    }
    let mut b = Array1::zeros(n + 1);
    for i in 0..n {
        b[i] = rhs[i];
    }
    b[n] = c;
    let sol = lu_solve(big, b)?;
    Ok(sol.slice(ndarray::s![0..n]).to_owned())
}

/// Eigenvalues (ascending) and eigenvectors (columns) of a symmetric matrix
/// by the cyclic Jacobi method.
pub fn symmetric_eigen<T: Scalar>(a: &Array2<T>) -> Result<(Array1<T>, Array2<T>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Shape("symmetric_eigen expects a square matrix".into()));
    }
    let mut m = a.clone();
    let mut v: Array2<T> = Array2::eye(n);
    let tol = T::epsilon() * T::of(64.0);
    let scale = m.iter().fold(T::zero(), |acc, x| acc.max(x.abs())).max(T::one());
    let max_sweeps = 64;
    for _ in 0..max_sweeps {
        let mut off = T::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(m[[p, q]].abs());
            }
        }
        if off <= tol * scale {
            let mut vals = Array1::zeros(n);
            for i in 0..n {
                vals[i] = m[[i, i]];
            }
            // sort ascending, permuting eigenvector columns alongside
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&i, &j| vals[i].partial_cmp(&vals[j]).expect("non-NaN eigenvalues"));
            let sorted_vals = Array1::from(idx.iter().map(|&i| vals[i]).collect::<Vec<_>>());
            let mut sorted_vecs = Array2::zeros((n, n));
            for (new, &old) in idx.iter().enumerate() {
                for r in 0..n {
                    sorted_vecs[[r, new]] = v[[r, old]];
                }
            }
            return Ok((sorted_vals, sorted_vecs));
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if m[[p, q]].abs() <= tol * scale * T::of(1e-3) {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                let apq = m[[p, q]];
                let theta = (aqq - app) / (T::of(2.0) * apq);
                let t = {
                    let s = if theta >= T::zero() { T::one() } else { -T::one() };
                    s / (theta.abs() + (theta * theta + T::one()).sqrt())
                };
                let cos = T::one() / (t * t + T::one()).sqrt();
                let sin = t * cos;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = cos * mkp - sin * mkq;
                    m[[k, q]] = sin * mkp + cos * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = cos * mpk - sin * mqk;
                    m[[q, k]] = sin * mpk + cos * mqk;
                }
                m[[p, q]] = T::zero();
                m[[q, p]] = T::zero();
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = cos * vkp - sin * vkq;
                    v[[k, q]] = sin * vkp + cos * vkq;
                }
            }
        }
    }
    Err(Error::EigenFailed(format!(
        "Jacobi sweep limit reached for {n}x{n} matrix"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn lu_solves_a_known_system() {
        let a: ndarray::Array2<f64> = array![[2.0, 1.0], [1.0, 3.0]];
        let b = array![5.0, 10.0];
        let x = lu_solve(a, b).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14);
        assert!((x[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn lu_rejects_singular_matrix() {
        let a = array![[1.0, 2.0], [2.0, 4.0]];
        let b = array![1.0, 2.0];
        assert!(matches!(lu_solve(a, b), Err(Error::SolveFailed(_))));
    }

    #[test]
    fn bordered_solve_handles_generator_kernel() {
        // K is a 2-state generator; solve K g = f with Σ g = 0 for mean-zero f.
        let k: ndarray::Array2<f64> = array![[-2.0, 2.0], [1.0, -1.0]];
        // f must be in Range(K): orthogonal to Q = (1/3, 2/3).
        let f = array![2.0, -1.0];
        let w = array![1.0, 1.0];
        let g = bordered_solve(&k, &f, &w, 0.0).unwrap();
        let r0 = -2.0 * g[0] + 2.0 * g[1] - f[0];
        let r1 = g[0] - g[1] - f[1];
        assert!(r0.abs() < 1e-14 && r1.abs() < 1e-14);
        assert!((g[0] + g[1]).abs() < 1e-14);
    }

    #[test]
    fn jacobi_matches_hand_computed_spectrum() {
        let a: ndarray::Array2<f64> = array![[2.0, 1.0], [1.0, 2.0]];
        let (vals, vecs) = symmetric_eigen(&a).unwrap();
        assert!((vals[0] - 1.0).abs() < 1e-12);
        assert!((vals[1] - 3.0).abs() < 1e-12);
        // residual check A v = λ v
        for j in 0..2 {
            for i in 0..2 {
                let av = a[[i, 0]] * vecs[[0, j]] + a[[i, 1]] * vecs[[1, j]];
                assert!((av - vals[j] * vecs[[i, j]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn jacobi_handles_f32() {
        let a = ndarray::Array2::<f32>::from_shape_vec(
            (3, 3),
            vec![4.0, 1.0, 0.5, 1.0, 3.0, 0.25, 0.5, 0.25, 2.0],
        )
        .unwrap();
        let (vals, _) = symmetric_eigen(&a).unwrap();
        let trace: f32 = vals.sum();
        assert!((trace - 9.0).abs() < 1e-4);
    }
}
