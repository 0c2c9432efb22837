//! Dense linear-algebra helpers shared by the solver, subspace and tracker code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Eigen-decomposition of a symmetric matrix with eigenvalues in decreasing order.
///
/// Each eigenvector is returned as the matching column of the second element.
pub fn sym_eig_desc(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    if n == 0 {
        return (Vec::new(), DMatrix::zeros(0, 0));
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Largest absolute entry of `PᵀP − I`.
pub fn orthonormality_error(p: &DMatrix<f64>) -> f64 {
    let gram = p.transpose() * p;
    let mut worst = 0.0_f64;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - target).abs());
        }
    }
    worst
}

/// Largest absolute entry of a matrix (0 for an empty one).
pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Columns `r..m` of the orthogonal factor `H` in a full Householder QR of the
/// `m × r` matrix `p`, i.e. an orthonormal basis of the null space of `pᵀ`
/// when `p` has full column rank.
pub fn householder_complement(p: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, r) = p.shape();
    assert!(r < m, "complement requested for a basis with no spare dimension");
    let mut work = p.clone();
    let mut reflectors: Vec<(usize, DVector<f64>, f64)> = Vec::with_capacity(r);
    for k in 0..r {
        let mut v = work.view((k, k), (m - k, 1)).column(0).clone_owned();
        let alpha = v.norm();
        if alpha == 0.0 {
            continue;
        }
        v[0] += if v[0] >= 0.0 { alpha } else { -alpha };
        let vv = v.norm_squared();
        for j in k..r {
            let mut col = work.view_mut((k, j), (m - k, 1));
            let s = 2.0 * v.dot(&col.column(0)) / vv;
            col.column_mut(0).axpy(-s, &v, 1.0);
        }
        reflectors.push((k, v, vv));
    }
    let mut q = DMatrix::zeros(m, m - r);
    for j in 0..(m - r) {
        q[(r + j, j)] = 1.0;
    }
    for (k, v, vv) in reflectors.iter().rev() {
        for j in 0..(m - r) {
            let mut col = q.view_mut((*k, j), (m - k, 1));
            let s = 2.0 * v.dot(&col.column(0)) / vv;
            col.column_mut(0).axpy(-s, v, 1.0);
        }
    }
    q
}

/// Thin QR orthonormalization with the sign convention `diag(R) ≥ 0`, so a
/// nearly orthonormal input comes back almost unchanged.
pub fn orthonormalize(p: &DMatrix<f64>) -> DMatrix<f64> {
    if p.ncols() == 0 {
        return p.clone();
    }
    let qr = p.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..q.ncols() {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

pub fn select_columns(p: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(p.nrows(), idx.len(), |r, c| p[(r, idx[c])])
}

/// `[a b]`; either side may have zero columns.
pub fn hstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.nrows(), b.nrows());
    let (n, ca, cb) = (a.nrows(), a.ncols(), b.ncols());
    DMatrix::from_fn(n, ca + cb, |r, c| if c < ca { a[(r, c)] } else { b[(r, c - ca)] })
}

/// Minimum-norm least-squares solution of `a·x ≈ b` together with the 2-norm
/// condition number of `a` (infinite when `a` is rank deficient).
pub fn min_norm_lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, f64) {
    let (n, q) = a.shape();
    if q == 0 {
        return (DVector::zeros(0), 1.0);
    }
    if n == 0 {
        return (DVector::zeros(q), f64::INFINITY);
    }
    let svd = a.clone().svd(true, true);
    let sv = &svd.singular_values;
    let smax = sv.max();
    let tol = smax * (n.max(q) as f64) * f64::EPSILON;
    let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let cond = if q > n || smin <= tol {
        f64::INFINITY
    } else {
        smax / smin
    };
    if smax == 0.0 {
        return (DVector::zeros(q), cond);
    }
    let x = svd.solve(b, tol).expect("svd computed with both factors");
    (x, cond)
}

/// SplitMix64 finalizer; used to derive independent seeds from a master seed.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
