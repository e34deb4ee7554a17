//! Small dense linear-algebra kernels: Khatri-Rao products, SPD solves for
//! the normal equations, and a Jacobi eigensolver for the SVD-style init.
//!
//! The systems solved here are `R × R` with `R` a tensor rank, so simple
//! dense routines are sufficient.

use crate::error::{Error, Result};
use crate::scalar::{cast, Scalar};
use ndarray::{Array1, Array2, ArrayView2};

/// Column-wise Kronecker product. For `m1: P × R` and `m2: Q × R` the result
/// is `(P·Q) × R` with column `r = m1(:,r) ⊗ m2(:,r)`; the row index of `m2`
/// varies fastest, matching the unfolding convention in [`crate::tensor`].
pub fn khatri_rao<T: Scalar>(m1: &Array2<T>, m2: &Array2<T>) -> Result<Array2<T>> {
    let r = m1.ncols();
    if m2.ncols() != r {
        return Err(Error::InvalidParameter(format!(
            "khatri_rao column counts differ: {} vs {}",
            r,
            m2.ncols()
        )));
    }
    let (p, q) = (m1.nrows(), m2.nrows());
    let mut out = Array2::zeros((p * q, r));
    for col in 0..r {
        for i in 0..p {
            let a = m1[(i, col)];
            for j in 0..q {
                out[(j + q * i, col)] = a * m2[(j, col)];
            }
        }
    }
    Ok(out)
}

/// Elementwise product of equally shaped matrices.
pub(crate) fn hadamard<T: Scalar>(a: &Array2<T>, b: &Array2<T>) -> Array2<T> {
    debug_assert_eq!(a.dim(), b.dim());
    a * b
}

/// `mᵀ m` for a factor matrix.
pub(crate) fn gram<T: Scalar>(m: &Array2<T>) -> Array2<T> {
    m.t().dot(m)
}

/// Lower-triangular Cholesky factor of a symmetric matrix, or `None` when
/// the matrix is not positive definite.
pub(crate) fn cholesky<T: Scalar>(g: &Array2<T>) -> Option<Array2<T>> {
    let n = g.nrows();
    if g.ncols() != n {
        return None;
    }
    let mut l = Array2::<T>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = g[(i, j)];
            for k in 0..j {
                sum -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if sum <= T::zero() || !sum.is_finite() {
                    return None;
                }
                l[(i, i)] = sum.sqrt();
            } else {
                l[(i, j)] = sum / l[(j, j)];
            }
        }
    }
    Some(l)
}

/// Solves `L Lᵀ X = B` column by column.
fn chol_solve<T: Scalar>(l: &Array2<T>, b: &Array2<T>) -> Array2<T> {
    let n = l.nrows();
    let cols = b.ncols();
    let mut x = b.clone();
    for col in 0..cols {
        // Forward substitution.
        for i in 0..n {
            let mut v = x[(i, col)];
            for k in 0..i {
                v -= l[(i, k)] * x[(k, col)];
            }
            x[(i, col)] = v / l[(i, i)];
        }
        // Back substitution with Lᵀ.
        for i in (0..n).rev() {
            let mut v = x[(i, col)];
            for k in i + 1..n {
                v -= l[(k, i)] * x[(k, col)];
            }
            x[(i, col)] = v / l[(i, i)];
        }
    }
    x
}

/// Solves the symmetric positive (semi-)definite system `G X = B`. A failed
/// factorization is retried once with ridge `1e-12` on the diagonal; a second
/// failure is reported as a singular system.
pub(crate) fn solve_spd<T: Scalar>(g: &Array2<T>, b: &Array2<T>, context: &str) -> Result<Array2<T>> {
    if let Some(l) = cholesky(g) {
        return Ok(chol_solve(&l, b));
    }
    let mut ridged = g.clone();
    let ridge = cast::<T>(1e-12);
    for i in 0..ridged.nrows() {
        ridged[(i, i)] += ridge;
    }
    match cholesky(&ridged) {
        Some(l) => Ok(chol_solve(&l, b)),
        None => Err(Error::SingularSystem(context.to_string())),
    }
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns `(eigenvalues, eigenvectors)` sorted by descending eigenvalue;
/// eigenvectors are the columns of the returned matrix.
pub(crate) fn symmetric_eig<T: Scalar>(s: &Array2<T>) -> (Array1<T>, Array2<T>) {
    let n = s.nrows();
    debug_assert_eq!(n, s.ncols());
    let mut a = s.clone();
    let mut v = Array2::<T>::eye(n);
    let eps = T::epsilon() * cast::<T>(n as f64);
    for _sweep in 0..60 {
        let mut off = T::zero();
        for p in 0..n {
            for q in p + 1..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        let scale = a.iter().fold(T::zero(), |acc, &x| acc + x * x);
        if off <= eps * eps * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = (aqq - app) / (cast::<T>(2.0) * apq);
                let t = {
                    let sign = if theta >= T::zero() { T::one() } else { -T::one() };
                    sign / (theta.abs() + (theta * theta + T::one()).sqrt())
                };
                let c = T::one() / (t * t + T::one()).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - sn * akq;
                    a[(k, q)] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - sn * aqk;
                    a[(q, k)] = sn * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - sn * vkq;
                    v[(k, q)] = sn * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| {
        a[(y, y)]
            .partial_cmp(&a[(x, x)])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let vals = Array1::from_iter(order.iter().map(|&i| a[(i, i)]));
    let mut vecs = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        vecs.column_mut(dst).assign(&v.column(src));
    }
    (vals, vecs)
}

/// ℓ2 norms of the columns of a matrix view.
pub(crate) fn column_norms<T: Scalar>(m: &ArrayView2<'_, T>) -> Array1<T> {
    Array1::from_iter(
        m.columns()
            .into_iter()
            .map(|c| c.iter().map(|&x| x * x).sum::<T>().sqrt()),
    )
}
