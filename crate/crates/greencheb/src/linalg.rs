//! Small dense linear-algebra helpers shared across modules.
//!
//! Factorisations go through LAPACK (via the linked OpenBLAS); everything
//! here operates on matrices of at most a few hundred rows, so robustness
//! and determinism matter more than asymptotics. The SVD wrapper fixes the
//! inherent sign ambiguity of singular vector pairs so that downstream
//! results are reproducible and comparable across runs.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use ndarray_linalg::{Factorize, Solve, SVD, UPLO};

/// Thin SVD `A = U diag(s) Vᵀ` with descending singular values and a
/// canonical sign: in each column of `U` the entry of largest magnitude is
/// made non-negative (ties broken by the lowest row index), with the
/// matching row of `Vᵀ` flipped in tandem.
pub fn svd_canonical(a: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>, Array2<f64>)> {
    let (u, s, vt) = a
        .svd(true, true)
        .map_err(|e| Error::InvalidArgument(format!("dense SVD failed: {e}")))?;
    let k = s.len();
    // LAPACK hands back the full factors; keep the thin ones.
    let mut u = u.expect("requested U").slice_move(ndarray::s![.., ..k]);
    let mut vt = vt.expect("requested Vt").slice_move(ndarray::s![..k, ..]);
    for j in 0..k {
        let col = u.column(j);
        let mut imax = 0;
        let mut vmax = -1.0f64;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > vmax {
                vmax = v.abs();
                imax = i;
            }
        }
        if u[[imax, j]] < 0.0 {
            u.column_mut(j).mapv_inplace(|v| -v);
            vt.row_mut(j).mapv_inplace(|v| -v);
        }
    }
    Ok((u, s, vt))
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix,
/// or `None` if the factorisation breaks down.
pub fn cholesky_lower(a: &Array2<f64>) -> Option<Array2<f64>> {
    use ndarray_linalg::Cholesky;
    a.cholesky(UPLO::Lower).ok()
}

/// Solve `A X = B` for a square `A` and multiple right-hand sides, using a
/// single LU factorisation.
pub fn solve_multi(a: &Array2<f64>, b: &ArrayView2<f64>) -> Result<Array2<f64>> {
    let f = a
        .factorize()
        .map_err(|e| Error::SingularOperator(format!("LU factorisation failed: {e}")))?;
    let mut out = Array2::<f64>::zeros(b.raw_dim());
    for (j, col) in b.axis_iter(Axis(1)).enumerate() {
        let x = f
            .solve(&col.to_owned())
            .map_err(|e| Error::SingularOperator(format!("LU solve failed: {e}")))?;
        out.column_mut(j).assign(&x);
    }
    Ok(out)
}

/// Matrix exponential by scaling-and-squaring with a diagonal Padé [6/6]
/// approximant; ample accuracy for the small, moderately normed matrices
/// produced by the geodesic formulas.
pub fn expm(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm needs a square matrix");
    // 1-norm scaling so the Padé argument has norm <= 0.5.
    let norm1 = a
        .axis_iter(Axis(1))
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0f64, f64::max);
    let s = if norm1 > 0.5 {
        (norm1 / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scaled = a.mapv(|v| v / (1u64 << s) as f64);

    // Padé [6/6]: N(A) = Σ c_j A^j, D(A) = Σ c_j (-A)^j with
    // c_j = (12 - j)! 6! / (12! j! (6 - j)!).
    let mut c = [0.0f64; 7];
    c[0] = 1.0;
    for j in 0..6 {
        c[j + 1] = c[j] * (6.0 - j as f64) / ((12.0 - j as f64) * (j as f64 + 1.0));
    }
    let eye = Array2::<f64>::eye(n);
    let mut num = &eye * c[0];
    let mut den = num.clone();
    let mut pow = eye.clone();
    for (j, &cj) in c.iter().enumerate().skip(1) {
        pow = pow.dot(&scaled);
        num = num + &pow * cj;
        if j % 2 == 0 {
            den = den + &pow * cj;
        } else {
            den = den - &pow * cj;
        }
    }
    let mut e = solve_multi(&den, &num.view())?;
    for _ in 0..s {
        e = e.dot(&e);
    }
    Ok(e)
}

/// Composite trapezoid quadrature weights for an arbitrary increasing grid.
pub fn trapezoid_weights(grid: &[f64]) -> Vec<f64> {
    let n = grid.len();
    assert!(n >= 2, "trapezoid rule needs at least two nodes");
    let mut w = vec![0.0; n];
    for i in 0..n - 1 {
        let h = 0.5 * (grid[i + 1] - grid[i]);
        w[i] += h;
        w[i + 1] += h;
    }
    w
}
