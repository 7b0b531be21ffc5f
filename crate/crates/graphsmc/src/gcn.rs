//! Chebyshev spectral graph convolution.
//!
//! A layer maps node features F through H = Σ_k T_k(L̃)·F·W_k + bias, where
//! T_k are Chebyshev polynomials of the scaled graph Laplacian. The plain and
//! tape-recorded forward passes perform the same floating-point operations in
//! the same order, so their outputs agree bitwise.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::linalg::{power_iteration_psd, symmetry_defect};
use crate::tape::{Tape, Var};

/// Builds the scaled Laplacian L̃ = (2/λ_max)·L − I from a symmetric
/// adjacency, with L = I − D^{−1/2}|A|D^{−1/2} on absolute edge weights.
/// Isolated nodes receive a unit self-loop so their degree is well defined;
/// a fully zero adjacency therefore yields exactly −I. The λ_max estimate is
/// capped at 2, the bound attained by bipartite normalized Laplacians.
pub fn scaled_laplacian(a: &Array2<f64>) -> Result<Array2<f64>> {
    let r = a.nrows();
    if a.ncols() != r {
        return Err(Error::input(format!(
            "adjacency must be square, got {}x{}",
            r,
            a.ncols()
        )));
    }
    if symmetry_defect(a) > 1e-9 {
        return Err(Error::invariant("adjacency must be symmetric"));
    }
    let mut abs = a.mapv(f64::abs);
    for i in 0..r {
        let degree = abs.row(i).sum();
        if degree == 0.0 {
            abs[[i, i]] = 1.0;
        }
    }
    let inv_sqrt_deg: Vec<f64> = (0..r).map(|i| 1.0 / abs.row(i).sum().sqrt()).collect();
    let mut lap = Array2::<f64>::zeros((r, r));
    for i in 0..r {
        for j in 0..r {
            let normalized = inv_sqrt_deg[i] * abs[[i, j]] * inv_sqrt_deg[j];
            lap[[i, j]] = if i == j { 1.0 - normalized } else { -normalized };
        }
    }
    // the estimate converges from below; a hair of inflation keeps the
    // scaled spectrum inside [-1, 1] before the cap at the bipartite bound
    let mut lambda_max = power_iteration_psd(&lap, 1e-8, 10_000) * (1.0 + 1e-7);
    if lambda_max > 2.0 || lambda_max < 1e-12 {
        lambda_max = 2.0;
    }
    let scale = 2.0 / lambda_max;
    let mut scaled = lap * scale;
    for i in 0..r {
        scaled[[i, i]] -= 1.0;
    }
    Ok(scaled)
}

fn check_shapes(
    f: (usize, usize),
    l: (usize, usize),
    w: (usize, usize),
    bias_cols: usize,
) -> Result<()> {
    if l.0 != l.1 {
        return Err(Error::input(format!(
            "laplacian must be square, got {}x{}",
            l.0, l.1
        )));
    }
    if f.0 != l.0 {
        return Err(Error::input(format!(
            "feature rows {} do not match laplacian size {}",
            f.0, l.0
        )));
    }
    if f.1 != w.0 {
        return Err(Error::input(format!(
            "feature width {} does not match layer input width {}",
            f.1, w.0
        )));
    }
    if bias_cols != w.1 {
        return Err(Error::input(format!(
            "bias width {} does not match layer output width {}",
            bias_cols, w.1
        )));
    }
    Ok(())
}

/// Plain forward pass: H = Σ_k T_k(L̃)·F·W_k + bias, ReLU optional.
///
/// The recursion runs on the products T_k(L̃)·F directly (T_0·F = F,
/// T_1·F = L̃F, T_k·F = 2L̃·T_{k−1}F − T_{k−2}F), never materializing T_k.
pub fn cheb_forward(
    f: &Array2<f64>,
    l_tilde: &Array2<f64>,
    weights: &[Array2<f64>],
    bias: &Array2<f64>,
    relu: bool,
) -> Result<Array2<f64>> {
    if weights.is_empty() {
        return Err(Error::input("layer needs at least one Chebyshev order"));
    }
    check_shapes(f.dim(), l_tilde.dim(), weights[0].dim(), bias.ncols())?;
    for w in weights {
        if w.dim() != weights[0].dim() {
            return Err(Error::input(format!(
                "inconsistent weight shapes {}x{} vs {}x{}",
                w.nrows(),
                w.ncols(),
                weights[0].nrows(),
                weights[0].ncols()
            )));
        }
    }
    let mut out = f.dot(&weights[0]);
    let mut prev = f.clone();
    let mut curr = if weights.len() > 1 {
        let t1 = l_tilde.dot(f);
        out = out + t1.dot(&weights[1]);
        t1
    } else {
        f.clone()
    };
    for w_k in weights.iter().skip(2) {
        let next = l_tilde.dot(&curr) * 2.0 - &prev;
        out = out + next.dot(w_k);
        prev = curr;
        curr = next;
    }
    for mut row in out.rows_mut() {
        row += &bias.row(0);
    }
    if relu {
        out.mapv_inplace(|x| x.max(0.0));
    }
    Ok(out)
}

/// Tape-recorded forward pass; mirrors [`cheb_forward`] operation for
/// operation so the recorded values equal the plain path bitwise.
pub fn cheb_forward_tape(
    tape: &mut Tape,
    f: Var,
    l_tilde: Var,
    weights: &[Var],
    bias: Var,
    relu: bool,
) -> Result<Var> {
    if weights.is_empty() {
        return Err(Error::input("layer needs at least one Chebyshev order"));
    }
    check_shapes(
        tape.value(f).dim(),
        tape.value(l_tilde).dim(),
        tape.value(weights[0]).dim(),
        tape.value(bias).ncols(),
    )?;
    let mut out = tape.matmul(f, weights[0]);
    let mut prev = f;
    let mut curr = if weights.len() > 1 {
        let t1 = tape.matmul(l_tilde, f);
        let term = tape.matmul(t1, weights[1]);
        out = tape.add(out, term);
        t1
    } else {
        f
    };
    for &w_k in weights.iter().skip(2) {
        let lt = tape.matmul(l_tilde, curr);
        let doubled = tape.scale(lt, 2.0);
        let next = tape.sub(doubled, prev);
        let term = tape.matmul(next, w_k);
        out = tape.add(out, term);
        prev = curr;
        curr = next;
    }
    out = tape.add_row(out, bias);
    if relu {
        out = tape.relu(out);
    }
    Ok(out)
}
