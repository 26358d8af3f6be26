//! Quasimatrices: ∞×K column collections of Chebyshev series.
//!
//! A quasimatrix `A` has K columns, each a function on a shared interval;
//! `A*B` denotes the K×L Gram matrix of L² inner products. The centrepiece
//! is a Householder QR factorisation `A = Q R` in function space: working
//! against a fixed orthonormal Legendre basis `E`, each step reflects the
//! current column onto `±‖x‖ e_k`,
//!
//! ```text
//! v_k = (y - x)/‖y - x‖,   y = S_k ‖x‖ e_k,   S_k = -sign(e_k* x),
//! H_k = I - 2 v_k v_k*,
//! ```
//!
//! leaving `R` upper triangular with non-negative diagonal and
//! `Q = H_1 ⋯ H_n E S` orthonormal. When a target `y - x` nearly vanishes
//! the column is already in position and the reflection is skipped.

use crate::chebcore::{
    clenshaw_curtis_weights, legendre_basis, trim_tail, vals2coeffs, ChebSeries, Domain1D,
};
use crate::error::{Error, Result};
use ndarray::{Array1, Array2, ArrayView2};

/// Columns whose norm falls below this fraction of the largest original
/// column norm abort the factorisation as numerically rank deficient.
const QR_RANK_TOL: f64 = 1e-13;

/// Reflections with `‖y - x‖ < 1e-14 ‖x‖` are skipped: the column already
/// coincides with its target up to rounding, and normalising the tiny
/// difference would amplify noise.
const REFLECTION_SKIP_TOL: f64 = 1e-14;

/// An ∞×K quasimatrix. `new` demands K ≥ 1; the explicitly-empty form only
/// arises as the factor set of a rank-0 kernel.
#[derive(Clone, Debug)]
pub struct Quasimatrix {
    domain: Domain1D,
    cols: Vec<ChebSeries>,
}

impl Quasimatrix {
    pub fn new(cols: Vec<ChebSeries>) -> Result<Self> {
        let first = cols.first().ok_or(Error::EmptyQuasimatrix)?;
        let domain = *first.domain();
        for c in &cols[1..] {
            domain.require_same(c.domain())?;
        }
        Ok(Self { domain, cols })
    }

    /// Zero-column quasimatrix (rank-0 factor sets).
    pub fn empty(domain: Domain1D) -> Self {
        Self { domain, cols: Vec::new() }
    }

    pub fn domain(&self) -> &Domain1D {
        &self.domain
    }

    pub fn ncols(&self) -> usize {
        self.cols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cols.is_empty()
    }

    pub fn col(&self, j: usize) -> &ChebSeries {
        &self.cols[j]
    }

    pub fn cols(&self) -> &[ChebSeries] {
        &self.cols
    }

    pub fn max_degree(&self) -> usize {
        self.cols.iter().map(|c| c.degree()).max().unwrap_or(0)
    }

    /// First `k` columns.
    pub fn take_cols(&self, k: usize) -> Self {
        Self {
            domain: self.domain,
            cols: self.cols[..k.min(self.cols.len())].to_vec(),
        }
    }

    /// `A · C` for a K×M coefficient matrix: column `j` of the result is
    /// `Σ_i C[i, j] A_i`.
    pub fn matmul(&self, c: &ArrayView2<f64>) -> Result<Self> {
        if c.nrows() != self.ncols() {
            return Err(Error::ShapeMismatch {
                cols: self.ncols(),
                rows: c.nrows(),
                mcols: c.ncols(),
            });
        }
        let mut cols = Vec::with_capacity(c.ncols());
        for j in 0..c.ncols() {
            let terms: Vec<(f64, &ChebSeries)> = self
                .cols
                .iter()
                .enumerate()
                .map(|(i, a)| (c[[i, j]], a))
                .collect();
            cols.push(ChebSeries::linear_combination(&terms)?);
        }
        Ok(Self {
            domain: self.domain,
            cols,
        })
    }

    /// Gram matrix `(A*B)_il = ⟨A_i, B_l⟩`.
    pub fn inner(&self, other: &Quasimatrix) -> Result<Array2<f64>> {
        self.domain.require_same(&other.domain)?;
        let mut g = Array2::<f64>::zeros((self.ncols(), other.ncols()));
        for (i, a) in self.cols.iter().enumerate() {
            for (l, b) in other.cols.iter().enumerate() {
                g[[i, l]] = a.inner_product(b)?;
            }
        }
        Ok(g)
    }

    /// Inner products of every column with a single function.
    pub fn inner_fn(&self, f: &ChebSeries) -> Result<Array1<f64>> {
        self.domain.require_same(f.domain())?;
        let mut v = Array1::<f64>::zeros(self.ncols());
        for (i, a) in self.cols.iter().enumerate() {
            v[i] = a.inner_product(f)?;
        }
        Ok(v)
    }

    /// Columnwise `self + other · C` is covered by [`matmul`] plus this
    /// columnwise sum: `self - other` scaled, used for tangent arithmetic.
    pub fn add_scaled(&self, alpha: f64, other: &Quasimatrix) -> Result<Self> {
        self.domain.require_same(&other.domain)?;
        if self.ncols() != other.ncols() {
            return Err(Error::ShapeMismatch {
                cols: self.ncols(),
                rows: other.ncols(),
                mcols: 1,
            });
        }
        let cols = self
            .cols
            .iter()
            .zip(&other.cols)
            .map(|(a, b)| ChebSeries::linear_combination(&[(1.0, a), (alpha, b)]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            domain: self.domain,
            cols,
        })
    }

    /// Hilbert–Schmidt norm `sqrt(Σ_k ‖A_k‖²)`.
    pub fn hs_norm(&self) -> f64 {
        self.cols
            .iter()
            .map(|c| {
                let n = c.norm();
                n * n
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Householder QR: `A = Q R` with orthonormal `Q` (K columns) and upper
    /// triangular `R` with non-negative diagonal.
    ///
    /// All inner products are evaluated in value space on one shared
    /// Chebyshev grid, fine enough that Clenshaw–Curtis quadrature is exact
    /// for the product of any two participating polynomials. The arithmetic
    /// therefore matches coefficient-space L² products to rounding, while
    /// each dot costs O(grid) instead of a fresh product-length transform.
    pub fn householder_qr(&self) -> Result<(Quasimatrix, Array2<f64>)> {
        let n = self.ncols();
        if n == 0 {
            return Err(Error::EmptyQuasimatrix);
        }
        let e = legendre_basis(n, &self.domain)?;
        // Pairwise products have degree ≤ 2·maxdeg (basis included).
        let maxdeg = self.max_degree().max(n - 1);
        let ng = (2 * maxdeg).next_power_of_two().max(16);
        let w = clenshaw_curtis_weights(ng, &self.domain);
        let dot = |x: &[f64], y: &[f64]| -> f64 {
            w.iter()
                .zip(x)
                .zip(y)
                .map(|((wi, xi), yi)| wi * xi * yi)
                .sum()
        };
        let norm = |x: &[f64]| -> f64 { dot(x, x).max(0.0).sqrt() };

        let ev: Vec<Vec<f64>> = e.iter().map(|c| c.sample_cheb(ng)).collect();
        let mut a: Vec<Vec<f64>> = self.cols.iter().map(|c| c.sample_cheb(ng)).collect();
        let max_norm = a.iter().map(|c| norm(c)).fold(0.0f64, f64::max);
        if max_norm == 0.0 {
            return Err(Error::RankDeficient(0));
        }

        let mut r = Array2::<f64>::zeros((n, n));
        let mut reflectors: Vec<Option<Vec<f64>>> = Vec::with_capacity(n);
        let mut signs = vec![1.0f64; n];

        for k in 0..n {
            let rkk = norm(&a[k]);
            if rkk < QR_RANK_TOL * max_norm {
                return Err(Error::RankDeficient(k));
            }
            r[[k, k]] = rkk;
            let ekx = dot(&ev[k], &a[k]);
            let sk = if ekx > 0.0 { -1.0 } else { 1.0 };
            signs[k] = sk;
            // v = (y - x)/‖y - x‖ with y = S_k ‖x‖ e_k.
            let mut v: Vec<f64> = ev[k]
                .iter()
                .zip(&a[k])
                .map(|(eb, ab)| sk * rkk * eb - ab)
                .collect();
            let nv = norm(&v);
            if nv < REFLECTION_SKIP_TOL * rkk {
                reflectors.push(None);
            } else {
                for t in &mut v {
                    *t /= nv;
                }
                for aj in a.iter_mut().skip(k + 1) {
                    let ip = -2.0 * dot(&v, aj);
                    for (t, vi) in aj.iter_mut().zip(&v) {
                        *t += ip * vi;
                    }
                }
                reflectors.push(Some(v));
            }
            for j in k + 1..n {
                // Entries of row k pair with Q's column H_1⋯H_n (S_k e_k),
                // so they are taken against the *signed* basis column.
                let raw = dot(&ev[k], &a[j]);
                r[[k, j]] = sk * raw;
                for (aj, eb) in a[j].iter_mut().zip(&ev[k]) {
                    *aj -= raw * eb;
                }
            }
        }

        // Q = H_1 ⋯ H_n E S, reflections applied innermost-first. Columns
        // are polynomials of degree ≤ the grid degree, so transforming the
        // values back (with a machine-level tail trim) loses nothing.
        let mut q_cols = Vec::with_capacity(n);
        for j in 0..n {
            let mut wv: Vec<f64> = ev[j].iter().map(|t| signs[j] * t).collect();
            for v in reflectors.iter().rev().flatten() {
                let ip = -2.0 * dot(v, &wv);
                for (wi, vi) in wv.iter_mut().zip(v) {
                    *wi += ip * vi;
                }
            }
            let coeffs = vals2coeffs(&wv);
            let maxc = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
            q_cols.push(ChebSeries::from_coeffs(
                self.domain,
                trim_tail(coeffs, 1e-15 * maxc),
            ));
        }
        Ok((
            Quasimatrix {
                domain: self.domain,
                cols: q_cols,
            },
            r,
        ))
    }

    /// Orthonormal factor of the QR decomposition (`qf` in retraction
    /// formulas).
    pub fn qf(&self) -> Result<Quasimatrix> {
        Ok(self.householder_qr()?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chebcore::{ChebSeries, Domain1D, Tolerance};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn unit() -> Domain1D {
        Domain1D::new(-1.0, 1.0).unwrap()
    }

    fn monomials(n: usize, dom: Domain1D) -> Quasimatrix {
        let cols = (0..n)
            .map(|k| {
                ChebSeries::build_adaptive(|x| x.powi(k as i32), dom, Tolerance::default())
                    .unwrap()
            })
            .collect();
        Quasimatrix::new(cols).unwrap()
    }

    /// Modified Gram–Schmidt oracle built only on chebcore primitives.
    fn mgs(a: &Quasimatrix) -> Vec<ChebSeries> {
        let mut q: Vec<ChebSeries> = Vec::new();
        for j in 0..a.ncols() {
            let mut w = a.col(j).clone();
            for qi in &q {
                let ip = qi.inner_product(&w).unwrap();
                w = ChebSeries::linear_combination(&[(1.0, &w), (-ip, qi)]).unwrap();
            }
            let n = w.norm();
            q.push(ChebSeries::linear_combination(&[(1.0 / n, &w)]).unwrap());
        }
        q
    }

    #[test]
    fn matmul_against_pointwise_oracle() {
        let a = monomials(3, unit());
        let c = ndarray::array![[1.0, 0.5], [-2.0, 0.0], [0.25, 3.0]];
        let b = a.matmul(&c.view()).unwrap();
        for i in 0..50 {
            let x = -1.0 + 2.0 * i as f64 / 49.0;
            for j in 0..2 {
                let expect: f64 = (0..3).map(|k| c[[k, j]] * a.col(k).eval(x)).sum();
                assert_abs_diff_eq!(b.col(j).eval(x), expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn gram_matrix_against_trapezoid_oracle() {
        // Random gentle pair: decaying coefficients keep the oracle's own
        // O(h²) quadrature error well under the comparison tolerance.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let mut col = || {
            let coeffs: Vec<f64> = (0..5)
                .map(|k| rng.gen_range(-0.3..0.3) / ((1 + k) as f64).powi(3))
                .collect();
            ChebSeries::from_coeffs(unit(), coeffs)
        };
        let a = Quasimatrix::new(vec![col(), col()]).unwrap();
        let g = a.inner(&a).unwrap();
        let n = 10_000usize;
        for i in 0..2 {
            for j in 0..2 {
                let mut acc = 0.0;
                for m in 0..=n {
                    let x = -1.0 + 2.0 * m as f64 / n as f64;
                    let w = if m == 0 || m == n { 0.5 } else { 1.0 };
                    acc += w * a.col(i).eval(x) * a.col(j).eval(x);
                }
                acc *= 2.0 / n as f64;
                assert_abs_diff_eq!(g[[i, j]], acc, epsilon = 1e-8);
                assert_abs_diff_eq!(g[[i, j]], g[[j, i]], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn qr_of_monomials_matches_gram_schmidt() {
        let a = monomials(3, unit());
        let (q, r) = a.householder_qr().unwrap();
        let oracle = mgs(&a);
        for (j, oj) in oracle.iter().enumerate() {
            for i in 0..100 {
                let x = -1.0 + 2.0 * i as f64 / 99.0;
                assert_abs_diff_eq!(q.col(j).eval(x), oj.eval(x), epsilon = 1e-9);
            }
        }
        // Upper triangular, non-negative diagonal.
        for i in 0..3 {
            assert!(r[[i, i]] >= 0.0);
            for j in 0..i {
                assert_eq!(r[[i, j]], 0.0);
            }
        }
    }

    #[test]
    fn qr_reconstructs_and_q_is_orthonormal() {
        let cols = vec![
            ChebSeries::build_adaptive(|x| (3.0 * x).sin() + 0.2 * x, unit(), Tolerance::default())
                .unwrap(),
            ChebSeries::build_adaptive(|x| (x * x).exp(), unit(), Tolerance::default()).unwrap(),
            ChebSeries::build_adaptive(|x| 1.0 / (1.0 + x * x), unit(), Tolerance::default())
                .unwrap(),
            ChebSeries::build_adaptive(|x| x.powi(4) - 0.3, unit(), Tolerance::default()).unwrap(),
        ];
        let a = Quasimatrix::new(cols).unwrap();
        let (q, r) = a.householder_qr().unwrap();
        let qtq = q.inner(&q).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(qtq[[i, j]], expect, epsilon = 1e-10);
            }
        }
        let qr = q.matmul(&r.view()).unwrap();
        let scale = a.hs_norm();
        for j in 0..4 {
            let diff =
                ChebSeries::linear_combination(&[(1.0, qr.col(j)), (-1.0, a.col(j))]).unwrap();
            assert!(diff.norm() <= 1e-10 * scale, "column {j} differs");
        }
    }

    #[test]
    fn span_is_reproduced() {
        // For f = A c: Q Q* f = f (the range of Q equals the range of A).
        let a = monomials(4, unit());
        let (q, _r) = a.householder_qr().unwrap();
        let c = ndarray::array![[0.3], [-1.0], [2.0], [0.7]];
        let f = a.matmul(&c.view()).unwrap();
        let coeff = q.inner_fn(f.col(0)).unwrap();
        let proj = q
            .matmul(&coeff.view().insert_axis(ndarray::Axis(1)))
            .unwrap();
        let diff =
            ChebSeries::linear_combination(&[(1.0, proj.col(0)), (-1.0, f.col(0))]).unwrap();
        assert!(diff.norm() <= 1e-10 * f.col(0).norm());
    }

    #[test]
    fn duplicate_column_is_rank_deficient() {
        let f =
            ChebSeries::build_adaptive(|x| x.cos(), unit(), Tolerance::default()).unwrap();
        let a = Quasimatrix::new(vec![f.clone(), f]).unwrap();
        assert!(matches!(a.householder_qr(), Err(Error::RankDeficient(1))));
    }

    #[test]
    fn empty_and_shape_errors() {
        assert!(matches!(
            Quasimatrix::new(Vec::new()),
            Err(Error::EmptyQuasimatrix)
        ));
        let a = monomials(2, unit());
        let c = ndarray::Array2::<f64>::zeros((3, 2));
        assert!(matches!(
            a.matmul(&c.view()),
            Err(Error::ShapeMismatch { .. })
        ));
        let e = Quasimatrix::empty(unit());
        assert!(matches!(e.householder_qr(), Err(Error::EmptyQuasimatrix)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn qr_properties_on_random_smooth_columns(
            seedcols in proptest::collection::vec(
                proptest::collection::vec(-2.0f64..2.0, 3..12), 1..5)
        ) {
            // Random series with a decaying envelope plus a diagonal boost so
            // columns are generically independent.
            let dom = unit();
            let cols: Vec<ChebSeries> = seedcols
                .iter()
                .enumerate()
                .map(|(j, cs)| {
                    let mut coeffs: Vec<f64> = cs
                        .iter()
                        .enumerate()
                        .map(|(k, c)| c * 0.5f64.powi(k as i32))
                        .collect();
                    if coeffs.len() <= j { coeffs.resize(j + 1, 0.0); }
                    coeffs[j] += 3.0;
                    ChebSeries::from_coeffs(dom, coeffs)
                })
                .collect();
            let a = Quasimatrix::new(cols).unwrap();
            let (q, r) = a.householder_qr().unwrap();
            let k = a.ncols();
            let qtq = q.inner(&q).unwrap();
            for i in 0..k {
                for j in 0..k {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((qtq[[i, j]] - expect).abs() <= 1e-10);
                }
                prop_assert!(r[[i, i]] >= 0.0);
            }
            let qr = q.matmul(&r.view()).unwrap();
            let scale = a.hs_norm().max(1.0);
            for j in 0..k {
                let diff = ChebSeries::linear_combination(
                    &[(1.0, qr.col(j)), (-1.0, a.col(j))]).unwrap();
                prop_assert!(diff.norm() <= 1e-9 * scale);
            }
        }
    }
}
