//! Small dense linear-algebra helpers used by graph construction and the
//! spectral convolution: compensated summation, symmetric positive-definite
//! factorization, and power iteration for dominant eigenvalues.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Compensated summation (Neumaier variant, which survives terms larger
/// than the running sum).
pub fn kahan_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Largest absolute difference between a matrix and its transpose.
pub fn symmetry_defect(a: &Array2<f64>) -> f64 {
    let n = a.nrows();
    let mut defect = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            defect = defect.max((a[[i, j]] - a[[j, i]]).abs());
        }
    }
    defect
}

/// Replace a matrix by its symmetric part (a + aᵀ)/2.
pub fn symmetrize(a: &mut Array2<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (a[[i, j]] + a[[j, i]]);
            a[[i, j]] = m;
            a[[j, i]] = m;
        }
    }
}

/// Cholesky factorization of a symmetric positive-definite matrix.
/// Returns the lower-triangular factor L with A = L·Lᵀ.
pub fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(Error::numerical("singular correlation matrix"));
                }
                l[[i, j]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Ok(l)
}

/// Solve A·x = b given the Cholesky factor L of A.
pub fn cholesky_solve(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = l.nrows();
    // forward substitution L·y = b
    let mut y = Array1::<f64>::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    // back substitution Lᵀ·x = y
    let mut x = Array1::<f64>::zeros(n);
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
pub fn spd_inverse(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    let l = cholesky(a)?;
    let mut inv = Array2::<f64>::zeros((n, n));
    let mut e = Array1::<f64>::zeros(n);
    for j in 0..n {
        e.fill(0.0);
        e[j] = 1.0;
        let col = cholesky_solve(&l, &e);
        inv.column_mut(j).assign(&col);
    }
    // the solve introduces tiny asymmetries; the inverse of an SPD matrix is symmetric
    symmetrize(&mut inv);
    Ok(inv)
}

/// Maximum absolute column sum (induced 1-norm).
pub fn one_norm(a: &Array2<f64>) -> f64 {
    let mut best = 0.0f64;
    for j in 0..a.ncols() {
        let s: f64 = a.column(j).iter().map(|v| v.abs()).sum();
        best = best.max(s);
    }
    best
}

/// Deterministic unit-norm start vector for power iteration. A fixed
/// splitmix64 stream avoids starting orthogonal to the dominant eigenvector
/// (the all-ones vector is in the kernel of a normalized Laplacian).
fn power_start(n: usize) -> Array1<f64> {
    let mut state = 0x9e37_79b9_7f4a_7c15u64;
    let mut v = Array1::<f64>::zeros(n);
    for i in 0..n {
        state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
        v[i] = (z >> 11) as f64 / (1u64 << 53) as f64 + 0.1;
    }
    let norm = v.dot(&v).sqrt();
    v.mapv_inplace(|x| x / norm);
    v
}

/// Dominant eigenvalue of a symmetric positive-semidefinite matrix by power
/// iteration. Stops on the residual ‖Ax − θx‖ ≤ tol·max(θ, 1), which for
/// symmetric matrices bounds the distance from θ to the spectrum; successive
/// Rayleigh-quotient differences can stall early when eigenvalues cluster.
pub fn power_iteration_psd(a: &Array2<f64>, tol: f64, max_iter: usize) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut x = power_start(n);
    let mut lambda = 0.0f64;
    for _ in 0..max_iter {
        let y = a.dot(&x);
        let theta = x.dot(&y);
        let residual = (&y - &(&x * theta)).mapv(|v| v * v).sum().sqrt();
        let norm = y.dot(&y).sqrt();
        if norm <= 1e-300 {
            return 0.0;
        }
        x = y / norm;
        lambda = theta;
        if residual <= tol * theta.abs().max(1.0) {
            return theta;
        }
    }
    lambda
}

/// Spectral radius of a symmetric matrix. Iterates on A² (positive
/// semidefinite even when A is indefinite, so a ±ρ eigenvalue pair cannot
/// stall the iteration) and returns √λ_max(A²).
pub fn spectral_radius_symmetric(a: &Array2<f64>, tol: f64, max_iter: usize) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut x = power_start(n);
    let mut lambda = 0.0f64;
    for _ in 0..max_iter {
        let y = a.dot(&x);
        let z = a.dot(&y);
        let next = x.dot(&z);
        let norm = z.dot(&z).sqrt();
        if norm <= 1e-300 {
            return 0.0;
        }
        x = z / norm;
        if (next - lambda).abs() <= tol * lambda.abs().max(1.0) {
            return next.max(0.0).sqrt();
        }
        lambda = next;
    }
    lambda.max(0.0).sqrt()
}

/// Mix a master seed with a sequence of tags into a derived stream seed
/// (splitmix64 finalizer per word). Fold and sample indices get independent,
/// reproducible generators this way regardless of evaluation order.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut state = master ^ 0x6a09_e667_f3bc_c908;
    for &t in tags {
        state = state.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(t);
        state = (state ^ (state >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        state = (state ^ (state >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        state ^= state >> 31;
    }
    state
}
