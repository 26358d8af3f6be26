//! Chebyshev series on an interval.
//!
//! A [`ChebSeries`] stores the coefficients `c_k` of
//! `f(x) = Σ_k c_k T_k(t(x))` where `t` maps the domain `[a, b]` affinely
//! onto `[-1, 1]`. Construction from a black-box function is adaptive:
//! sample at `2^k + 1` Chebyshev points for growing `k`, transform, and stop
//! once the coefficient tail sits below a relative tolerance; the converged
//! tail is then trimmed. Calculus (integration, products, inner products) is
//! exact for polynomial data up to rounding.

mod transforms;

pub use transforms::{coeffs2vals, vals2coeffs};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Coarsest adaptive level: `2^4 + 1` sample points.
const ADAPT_MIN_LOG2: u32 = 4;
/// Finest adaptive level: `2^16 + 1` sample points; beyond this the input is
/// declared unresolved.
const ADAPT_MAX_LOG2: u32 = 16;

/// A finite interval `[a, b]`, `a < b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain1D {
    a: f64,
    b: f64,
}

impl Domain1D {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::InvalidDomain { a, b });
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn length(&self) -> f64 {
        self.b - self.a
    }

    /// Affine map `[a, b] -> [-1, 1]`.
    pub fn to_unit(&self, x: f64) -> f64 {
        (2.0 * x - self.a - self.b) / (self.b - self.a)
    }

    /// Affine map `[-1, 1] -> [a, b]`; endpoints map exactly.
    pub fn from_unit(&self, t: f64) -> f64 {
        if t == 1.0 {
            self.b
        } else if t == -1.0 {
            self.a
        } else {
            0.5 * (self.a + self.b) + 0.5 * (self.b - self.a) * t
        }
    }

    pub(crate) fn mismatch(&self, other: &Domain1D) -> Error {
        Error::DomainMismatch {
            a0: self.a,
            b0: self.b,
            a1: other.a,
            b1: other.b,
        }
    }

    /// Check exact equality of endpoints, erring otherwise.
    pub fn require_same(&self, other: &Domain1D) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(self.mismatch(other))
        }
    }
}

/// Relative tolerance driving adaptive construction and tail trimming.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    eps_rel: f64,
}

impl Tolerance {
    pub fn new(eps_rel: f64) -> Result<Self> {
        if !(eps_rel > 0.0 && eps_rel < 1.0) {
            return Err(Error::InvalidTolerance(eps_rel));
        }
        Ok(Self { eps_rel })
    }

    pub fn eps_rel(&self) -> f64 {
        self.eps_rel
    }
}

impl Default for Tolerance {
    /// Double-precision machine epsilon, 2.22e-16.
    fn default() -> Self {
        Self {
            eps_rel: f64::EPSILON,
        }
    }
}

/// Chebyshev points of the second kind on `domain`, *descending*: the image
/// of `cos(iπ/n)`, `i = 0..n` (so `n + 1` points, endpoints included for
/// `n ≥ 1`). For `n = 0` the single point is the interval midpoint.
pub fn cheb_points(n: usize, domain: &Domain1D) -> Vec<f64> {
    if n == 0 {
        return vec![0.5 * (domain.a + domain.b)];
    }
    let nf = n as f64;
    (0..=n)
        .map(|i| {
            // sin form of cos(iπ/n): exactly antisymmetric about the midpoint.
            let t = (std::f64::consts::PI * (nf - 2.0 * i as f64) / (2.0 * nf)).sin();
            domain.from_unit(t)
        })
        .collect()
}

/// A truncated Chebyshev expansion on an interval.
#[derive(Clone, Debug, PartialEq)]
pub struct ChebSeries {
    domain: Domain1D,
    coeffs: Vec<f64>,
}

impl ChebSeries {
    /// Wrap raw coefficients; `coeffs` must be non-empty.
    pub fn from_coeffs(domain: Domain1D, coeffs: Vec<f64>) -> Self {
        assert!(!coeffs.is_empty(), "a series needs at least one coefficient");
        Self { domain, coeffs }
    }

    /// The identically-zero series.
    pub fn zero(domain: Domain1D) -> Self {
        Self {
            domain,
            coeffs: vec![0.0],
        }
    }

    /// Adaptive construction from a pointwise function.
    pub fn build_adaptive<F: FnMut(f64) -> f64>(
        mut f: F,
        domain: Domain1D,
        tol: Tolerance,
    ) -> Result<Self> {
        Self::build_adaptive_batch(
            |pts| pts.iter().map(|&x| f(x)).collect(),
            domain,
            tol,
        )
    }

    /// Adaptive construction from a batch sampler. The sampler is called
    /// with the exact set of *new* points needed at each refinement level
    /// (Chebyshev grids nest, so previous values are reused) and must return
    /// one value per point, in order.
    pub fn build_adaptive_batch<F: FnMut(&[f64]) -> Vec<f64>>(
        sampler: F,
        domain: Domain1D,
        tol: Tolerance,
    ) -> Result<Self> {
        Self::build_adaptive_batch_from(sampler, domain, tol, 1usize << ADAPT_MIN_LOG2)
    }

    /// Like [`ChebSeries::build_adaptive_batch`] but starting at degree `n0`
    /// (clamped to the sampling ladder). Callers use this when they already
    /// know the function carries structure a coarse grid would miss — e.g. a
    /// residual spike located on a fine probe grid — since a spuriously
    /// converged coarse tail would otherwise end refinement early.
    pub fn build_adaptive_batch_from<F: FnMut(&[f64]) -> Vec<f64>>(
        mut sampler: F,
        domain: Domain1D,
        tol: Tolerance,
        n0: usize,
    ) -> Result<Self> {
        let eps = tol.eps_rel;
        let mut n = n0
            .next_power_of_two()
            .clamp(1usize << ADAPT_MIN_LOG2, 1usize << ADAPT_MAX_LOG2);
        let mut vals = sampler(&cheb_points(n, &domain));
        assert_eq!(vals.len(), n + 1, "sampler returned wrong batch length");
        loop {
            let coeffs = vals2coeffs(&vals);
            let maxc = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
            if !maxc.is_finite() {
                return Err(Error::InvalidArgument(
                    "non-finite sample during adaptive construction".into(),
                ));
            }
            if maxc == 0.0 {
                return Ok(Self::zero(domain));
            }
            let tail = (n / 8).max(3);
            let thr = eps * maxc;
            if coeffs[coeffs.len() - tail..].iter().all(|c| c.abs() < thr) {
                return Ok(Self::from_coeffs(domain, trim_tail(coeffs, thr)));
            }
            if n >= 1usize << ADAPT_MAX_LOG2 {
                return Err(Error::NonConvergence {
                    degree_cap: n,
                    eps_rel: eps,
                });
            }
            // Double the grid; even indices of the fine grid are the coarse
            // grid, so only odd-index points are sampled.
            n *= 2;
            let pts = cheb_points(n, &domain);
            let odd: Vec<f64> = pts.iter().skip(1).step_by(2).copied().collect();
            let new_vals = sampler(&odd);
            assert_eq!(new_vals.len(), n / 2, "sampler returned wrong batch length");
            let mut merged = vec![0.0; n + 1];
            for (i, v) in vals.iter().enumerate() {
                merged[2 * i] = *v;
            }
            for (i, v) in new_vals.iter().enumerate() {
                merged[2 * i + 1] = *v;
            }
            vals = merged;
        }
    }

    pub fn domain(&self) -> &Domain1D {
        &self.domain
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    /// Evaluate by Clenshaw recurrence.
    pub fn eval(&self, x: f64) -> f64 {
        clenshaw(&self.coeffs, self.domain.to_unit(x))
    }

    pub fn eval_many(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.eval(x)).collect()
    }

    /// Values on the descending Chebyshev grid of degree `n`. Exact (via the
    /// inverse transform with zero padding) when `n ≥ degree`.
    pub fn sample_cheb(&self, n: usize) -> Vec<f64> {
        if n >= self.degree() {
            let mut padded = self.coeffs.clone();
            padded.resize(n + 1, 0.0);
            coeffs2vals(&padded)
        } else {
            self.eval_many(&cheb_points(n, &self.domain))
        }
    }

    /// `∫_a^b f` from the coefficients: odd modes vanish, even mode `k`
    /// contributes `2/(1 - k²)`, all scaled by the interval half-length.
    pub fn integrate(&self) -> f64 {
        let mut total = 2.0 * self.coeffs[0];
        for k in (2..self.coeffs.len()).step_by(2) {
            total += 2.0 * self.coeffs[k] / (1.0 - (k * k) as f64);
        }
        total * 0.5 * self.domain.length()
    }

    /// Pointwise product. The result has exact degree `deg f + deg g`
    /// (computed in value space on the product grid) apart from standard
    /// tail trimming at machine precision.
    pub fn multiply(&self, other: &ChebSeries) -> Result<ChebSeries> {
        self.domain.require_same(&other.domain)?;
        if self.is_zero() || other.is_zero() {
            return Ok(Self::zero(self.domain));
        }
        let deg = self.degree() + other.degree();
        let fv = self.sample_cheb(deg);
        let gv = other.sample_cheb(deg);
        let prod: Vec<f64> = fv.iter().zip(&gv).map(|(a, b)| a * b).collect();
        let coeffs = vals2coeffs(&prod);
        let maxc = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        Ok(Self::from_coeffs(
            self.domain,
            trim_tail(coeffs, f64::EPSILON * maxc),
        ))
    }

    /// `Σ_i a_i f_i` over series on a common domain (zero-padded to the
    /// longest operand; exact trailing zeros are dropped).
    pub fn linear_combination(terms: &[(f64, &ChebSeries)]) -> Result<ChebSeries> {
        let first = terms
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty linear combination".into()))?;
        let domain = first.1.domain;
        let len = terms.iter().map(|(_, f)| f.coeffs.len()).max().unwrap();
        let mut acc = vec![0.0; len];
        for (a, f) in terms {
            domain.require_same(&f.domain)?;
            for (dst, c) in acc.iter_mut().zip(&f.coeffs) {
                *dst += a * c;
            }
        }
        while acc.len() > 1 && *acc.last().unwrap() == 0.0 {
            acc.pop();
        }
        Ok(Self::from_coeffs(domain, acc))
    }

    /// L² inner product `∫_a^b f g`, via the exact product-grid quadrature.
    pub fn inner_product(&self, other: &ChebSeries) -> Result<f64> {
        self.domain.require_same(&other.domain)?;
        if self.is_zero() || other.is_zero() {
            return Ok(0.0);
        }
        let deg = self.degree() + other.degree();
        let fv = self.sample_cheb(deg);
        let gv = other.sample_cheb(deg);
        let prod: Vec<f64> = fv.iter().zip(&gv).map(|(a, b)| a * b).collect();
        let coeffs = vals2coeffs(&prod);
        let mut total = 2.0 * coeffs[0];
        for k in (2..coeffs.len()).step_by(2) {
            total += 2.0 * coeffs[k] / (1.0 - (k * k) as f64);
        }
        Ok(total * 0.5 * self.domain.length())
    }

    /// L² norm.
    pub fn norm(&self) -> f64 {
        self.inner_product(self).map(|v| v.max(0.0).sqrt()).unwrap()
    }
}

/// Drop trailing coefficients strictly below `thr` (keeping at least one).
pub(crate) fn trim_tail(mut coeffs: Vec<f64>, thr: f64) -> Vec<f64> {
    while coeffs.len() > 1 && coeffs.last().unwrap().abs() < thr {
        coeffs.pop();
    }
    coeffs
}

/// Clenshaw–Curtis quadrature weights for the degree-`n` descending Chebyshev
/// grid on `domain`, exact for polynomials of degree ≤ `n`.
///
/// The weight vector is the image of the Chebyshev-mode integrals
/// `∫ T_k = 2/(1 - k²)` (even `k`, else 0) under the transpose of the
/// values→coefficients map. That map is a cosine matrix framed by the same
/// end-halving diagonal on both sides, hence symmetric — so the transpose
/// action is a single `vals2coeffs` call, O(n log n) instead of the O(n²)
/// textbook cosine sums.
pub(crate) fn clenshaw_curtis_weights(n: usize, domain: &Domain1D) -> Vec<f64> {
    let modes: Vec<f64> = (0..=n)
        .map(|k| {
            if k % 2 == 0 {
                2.0 / (1.0 - (k * k) as f64)
            } else {
                0.0
            }
        })
        .collect();
    let mut w = vals2coeffs(&modes);
    let half = 0.5 * domain.length();
    for wi in &mut w {
        *wi *= half;
    }
    w
}

fn clenshaw(c: &[f64], t: f64) -> f64 {
    let two_t = 2.0 * t;
    let mut b1 = 0.0f64;
    let mut b2 = 0.0f64;
    for &ck in c.iter().skip(1).rev() {
        let b = two_t.mul_add(b1, ck - b2);
        b2 = b1;
        b1 = b;
    }
    t.mul_add(b1, c[0] - b2)
}

/// The first `k` L²-orthonormalized Legendre polynomials on `domain`
/// (degrees `0..k`), each represented exactly in the Chebyshev basis.
pub fn legendre_basis(k: usize, domain: &Domain1D) -> Result<Vec<ChebSeries>> {
    if k == 0 {
        return Err(Error::InvalidArgument(
            "legendre_basis needs k >= 1 columns".into(),
        ));
    }
    let mut cols = Vec::with_capacity(k);
    for j in 0..k {
        let pts = cheb_points(j, domain);
        let vals: Vec<f64> = pts
            .iter()
            .map(|&x| legendre_eval(j, domain.to_unit(x)))
            .collect();
        let mut coeffs = vals2coeffs(&vals);
        // ‖P_j‖²_[a,b] = (b - a)/(2j + 1)
        let scale = ((2 * j + 1) as f64 / domain.length()).sqrt();
        for c in &mut coeffs {
            *c *= scale;
        }
        cols.push(ChebSeries::from_coeffs(*domain, coeffs));
    }
    Ok(cols)
}

/// Legendre `P_n(t)` by the Bonnet three-term recurrence.
fn legendre_eval(n: usize, t: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let mut pm1 = 1.0f64;
    let mut p = t;
    for m in 1..n {
        let mf = m as f64;
        let next = ((2.0 * mf + 1.0) * t * p - mf * pm1) / (mf + 1.0);
        pm1 = p;
        p = next;
    }
    p
}
