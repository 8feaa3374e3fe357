//! Small dense linear-algebra helpers shared across the crate: Hermitian
//! eigendecompositions, Kronecker products, partial traces, operator norms.
//!
//! Everything here is desk-scale (dimensions up to a few hundred), so we use
//! nalgebra's dynamic matrices throughout and favor clarity over blocking.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;
pub type RMat = DMatrix<f64>;
pub type RVec = DVector<f64>;

/// Hermiticity defect `max |A[i,j] - conj(A[j,i])|`.
pub fn hermiticity_defect(a: &CMat) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Involution defect `opnorm-free` estimate: `max |(A^2 - I)[i,j]|`.
pub fn involution_defect(a: &CMat) -> f64 {
    let n = a.nrows();
    let sq = a * a;
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
            worst = worst.max((sq[(i, j)] - target).norm());
        }
    }
    worst
}

/// Eigendecomposition of a Hermitian matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order with matching orthonormal
/// eigenvector columns. The input is symmetrized first so callers may pass
/// matrices that are Hermitian only up to rounding.
///
/// Jacobi is quadratic-cost per sweep but backward stable and keeps full
/// accuracy on (near-)degenerate clusters, which the block decompositions
/// downstream rely on; the matrices here are small enough that the extra
/// sweeps are irrelevant.
pub fn hermitian_eigen(a: &CMat) -> (RVec, CMat) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "hermitian_eigen needs a square matrix");
    // (A + A*)/2 removes rounding-level asymmetry.
    let mut m = (a + a.adjoint()).scale(0.5);
    let mut vecs = CMat::identity(n, n);

    let frob = m.norm().max(f64::MIN_POSITIVE);
    let target = 1e-15 * frob;
    for _sweep in 0..60 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[(p, q)].norm_sqr();
            }
        }
        if (2.0 * off).sqrt() <= target {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                let r = apq.norm();
                if r <= 1e-300 {
                    continue;
                }
                // Phase so the pivot becomes real, then a real rotation.
                let phase = apq / r; // e^{i phi}
                let app = m[(p, p)].re;
                let aqq = m[(q, q)].re;
                let tau = (aqq - app) / (2.0 * r);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                // G = I except G[p,p] = c, G[p,q] = s, G[q,p] = -s e^{-i phi},
                // G[q,q] = c e^{-i phi}; apply A <- G* A G, V <- V G.
                let gqp = phase.conj() * (-s);
                let gqq = phase.conj() * c;
                for k in 0..n {
                    let akp = m[(k, p)];
                    let akq = m[(k, q)];
                    m[(k, p)] = akp * c + akq * gqp;
                    m[(k, q)] = akp * s + akq * gqq;
                }
                for k in 0..n {
                    let apk = m[(p, k)];
                    let aqk = m[(q, k)];
                    m[(p, k)] = apk * c + aqk * gqp.conj();
                    m[(q, k)] = apk * s + aqk * gqq.conj();
                }
                m[(p, q)] = C64::new(0.0, 0.0);
                m[(q, p)] = C64::new(0.0, 0.0);
                m[(p, p)] = C64::new(m[(p, p)].re, 0.0);
                m[(q, q)] = C64::new(m[(q, q)].re, 0.0);
                for k in 0..n {
                    let vkp = vecs[(k, p)];
                    let vkq = vecs[(k, q)];
                    vecs[(k, p)] = vkp * c + vkq * gqp;
                    vecs[(k, q)] = vkp * s + vkq * gqq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].re.partial_cmp(&m[(j, j)].re).unwrap());
    let vals = RVec::from_iterator(n, order.iter().map(|&i| m[(i, i)].re));
    let mut sorted = CMat::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        sorted.set_column(k, &vecs.column(i));
    }
    (vals, sorted)
}

/// Eigendecomposition of a real symmetric matrix (ascending eigenvalues),
/// through the same Jacobi kernel.
pub fn symmetric_eigen(a: &RMat) -> (RVec, RMat) {
    let n = a.nrows();
    let complexified = CMat::from_fn(n, n, |i, j| C64::new(0.5 * (a[(i, j)] + a[(j, i)]), 0.0));
    let (vals, vecs) = hermitian_eigen(&complexified);
    let real_vecs = RMat::from_fn(n, n, |i, j| vecs[(i, j)].re);
    (vals, real_vecs)
}

/// Spectral norm (largest singular value).
pub fn opnorm(a: &CMat) -> f64 {
    // Singular values of A are the square roots of the eigenvalues of A*A,
    // which is Hermitian positive semidefinite.
    let gram = a.adjoint() * a;
    let (vals, _) = hermitian_eigen(&gram);
    vals[vals.len() - 1].max(0.0).sqrt()
}

/// Spectral norm of a Hermitian matrix, via `max |eigenvalue|`.
pub fn opnorm_hermitian(a: &CMat) -> f64 {
    let (vals, _) = hermitian_eigen(a);
    vals.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
}

/// Kronecker product of complex matrices.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

/// Kronecker product of a list of matrices, left to right.
pub fn kron_all(mats: &[CMat]) -> CMat {
    assert!(!mats.is_empty());
    let mut out = mats[0].clone();
    for m in &mats[1..] {
        out = out.kronecker(m);
    }
    out
}

/// Density operator |v><v| of a pure state.
pub fn outer(v: &CVec) -> CMat {
    v * v.adjoint()
}

/// Partial trace of a density operator on a tensor product with the given
/// factor dimensions, tracing out the factors whose indices appear in
/// `traced` and keeping the rest in their original order.
pub fn partial_trace(rho: &CMat, dims: &[usize], traced: &[usize]) -> CMat {
    let total: usize = dims.iter().product();
    assert_eq!(rho.nrows(), total, "density dimension mismatch");
    let kept: Vec<usize> = (0..dims.len()).filter(|k| !traced.contains(k)).collect();
    let kept_dim: usize = kept.iter().map(|&k| dims[k]).product();
    let traced_dim: usize = traced.iter().map(|&k| dims[k]).product();

    // Row-major multi-index strides.
    let mut strides = vec![1usize; dims.len()];
    for k in (0..dims.len().saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * dims[k + 1];
    }
    let flatten = |kept_idx: usize, traced_idx: usize| -> usize {
        let mut idx = 0;
        let mut rem = kept_idx;
        // Decode kept_idx into per-factor digits (kept order), same for traced.
        let mut kept_digits = vec![0usize; kept.len()];
        for (pos, &k) in kept.iter().enumerate().rev() {
            kept_digits[pos] = rem % dims[k];
            rem /= dims[k];
        }
        let mut rem_t = traced_idx;
        let mut traced_digits = vec![0usize; traced.len()];
        for (pos, &k) in traced.iter().enumerate().rev() {
            traced_digits[pos] = rem_t % dims[k];
            rem_t /= dims[k];
        }
        for (pos, &k) in kept.iter().enumerate() {
            idx += kept_digits[pos] * strides[k];
        }
        for (pos, &k) in traced.iter().enumerate() {
            idx += traced_digits[pos] * strides[k];
        }
        idx
    };

    let mut out = CMat::zeros(kept_dim, kept_dim);
    for i in 0..kept_dim {
        for j in 0..kept_dim {
            let mut acc = C64::new(0.0, 0.0);
            for t in 0..traced_dim {
                acc += rho[(flatten(i, t), flatten(j, t))];
            }
            out[(i, j)] = acc;
        }
    }
    out
}

/// Trace norm `sum of singular values`; for Hermitian input this is the sum
/// of absolute eigenvalues.
pub fn trace_norm_hermitian(a: &CMat) -> f64 {
    let (vals, _) = hermitian_eigen(a);
    vals.iter().map(|v| v.abs()).sum()
}

/// Orthonormalize the columns of `basis` in place with modified Gram-Schmidt,
/// dropping columns whose residual norm falls below `tol`. Returns the
/// matrix of surviving orthonormal columns.
pub fn orthonormalize(basis: &CMat, tol: f64) -> CMat {
    let n = basis.nrows();
    let mut cols: Vec<CVec> = Vec::new();
    for j in 0..basis.ncols() {
        let mut v = CVec::from_iterator(n, basis.column(j).iter().cloned());
        for u in &cols {
            let overlap = u.dotc(&v);
            v -= u.scale_complex(overlap);
        }
        let norm = v.norm();
        if norm > tol {
            cols.push(v.unscale(norm));
        }
    }
    let mut out = CMat::zeros(n, cols.len());
    for (j, c) in cols.iter().enumerate() {
        out.set_column(j, c);
    }
    out
}

trait ScaleComplex {
    fn scale_complex(&self, s: C64) -> CVec;
}

impl ScaleComplex for CVec {
    fn scale_complex(&self, s: C64) -> CVec {
        self.map(|x| x * s)
    }
}
