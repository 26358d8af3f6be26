//! Synthetic benchmark problems: Gaussian-process forcings, reference
//! spectral solvers, noise injection and dataset assembly.
//!
//! A dataset is a collection of forcing/response pairs `(f_i, u_i)` of a
//! reference operator `L_θ u = f`.  Forcings are drawn from a zero-mean
//! Gaussian process whose covariance is either squared-exponential,
//!
//! ```text
//! K_SE(x, s)  = exp(−|x − s|² / 2ℓ²),
//! ```
//!
//! or, for periodic problems, the periodic kernel
//!
//! ```text
//! K_per(x, s) = exp(−2 sin²(π|x − s|/p) / ℓ²),
//! ```
//!
//! with the length scale reported as the normalised value `σ = ℓ/(b − a)`.
//! Sampling factorises the covariance matrix `K + jI` (Cholesky, with the
//! diagonal jitter `j` grown geometrically from `10⁻¹⁴·tr(K)/n` until the
//! factorisation succeeds) and applies the factor to per-column standard
//! normal draws.
//!
//! The reference operators, all with homogeneous boundary conditions:
//!
//! ```text
//! poisson               −u″           = f     x ∈ [0, 1]        Dirichlet
//! advection_diffusion    u″ + θ u′    = f     x ∈ [−1, 1]       Dirichlet
//! airy                   u″ − θ² x u  = f     x ∈ [0, 1]        Dirichlet
//! helmholtz              u″ + θ² u    = f     x ∈ [0, 1]        Dirichlet
//! fractional_laplacian  (−Δ)^θ u      = f     x ∈ [−π/2, π/2]   periodic
//! ```
//!
//! Dirichlet problems are solved by Chebyshev spectral collocation on `n+1`
//! second-kind points (default `n = 512`): the differentiation matrix `D`
//! is squared, boundary rows and columns are eliminated (which enforces the
//! boundary values exactly), and the interior system is solved by LU with a
//! single factorisation shared across all right-hand sides.  Solutions are
//! evaluated off the grid with the barycentric formula, so the sensor
//! samples come from a continuous Chebyshev representation.
//!
//! The fractional Laplacian is diagonal in the Fourier basis of period
//! `π`: the mode `e^{2ikx}` has eigenvalue `(4k²)^θ`, `0 < θ < 1`.  The
//! solver expands the forcing by FFT on a uniform grid (default 1024
//! nodes), divides by the multiplier, and returns the trigonometric
//! interpolant.  Constants are in the null space, so the forcing must have
//! (numerically) zero mean and the response is pinned to zero mean.
//!
//! Measured responses can be polluted with white Gaussian noise at level
//! `ζ`,
//!
//! ```text
//! u_i^noisy(x_j) = u_i(x_j) + ζ c_{i,j} |u_i|‾,     c_{i,j} ~ N(0, 1),
//! ```
//!
//! where `|u_i|‾` is the mean absolute response of sample `i`.  Assembled
//! datasets are split ~95/5 into training and validation samples by a
//! seeded shuffle; every random stage derives its own sub-seed from the
//! master seed, so datasets are bit-for-bit reproducible.

use crate::chebcore::{cheb_points, Domain1D};
use crate::error::{Error, Result};
use crate::linalg::{cholesky_lower, solve_multi};
use crate::ratnet::{SampleSet, TrainData};
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use std::cell::RefCell;
use std::f64::consts::PI;

/// Collocation degree for the Dirichlet reference solvers (`n + 1` points).
pub const COLLOCATION_N: usize = 512;

/// Fourier grid size for the fractional Laplacian reference solver.
pub const FOURIER_N: usize = 1024;

/// Default normalised GP length scale, `σ = ℓ/(b − a)`.
pub const DEFAULT_SIGMA_NORM: f64 = 1e-2;

/// Relative tolerance of the zero-mean check for periodic forcings.
const ZERO_MEAN_RTOL: f64 = 1e-8;

/// Jitter ladder for the GP covariance factorisation: start relative value,
/// growth factor and cap (both relative to the mean diagonal `tr(K)/n`).
const JITTER_START: f64 = 1e-14;
const JITTER_GROWTH: f64 = 10.0;
const JITTER_MAX: f64 = 1e-8;

// ---------------------------------------------------------------------------
// Gaussian-process kernels
// ---------------------------------------------------------------------------

/// Covariance kernel of the forcing Gaussian process.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GpKernel {
    /// `exp(−|x−s|²/2ℓ²)`.
    SquaredExponential { l: f64 },
    /// `exp(−2 sin²(π|x−s|/p)/ℓ²)` with period `p`.
    Periodic { l: f64, p: f64 },
}

impl GpKernel {
    /// Squared-exponential kernel with length scale `ℓ`.
    pub fn squared_exponential(l: f64) -> Result<Self> {
        if l <= 0.0 || !l.is_finite() {
            return Err(Error::InvalidKernel(format!(
                "length scale must be positive and finite, got {l}"
            )));
        }
        Ok(Self::SquaredExponential { l })
    }

    /// Squared-exponential kernel from the normalised length scale
    /// `σ = ℓ/(b − a)`.
    pub fn se_normalized(sigma_norm: f64, domain: &Domain1D) -> Result<Self> {
        Self::squared_exponential(sigma_norm * domain.length())
    }

    /// Periodic kernel with length scale `ℓ` and period `p`.
    pub fn periodic(l: f64, p: f64) -> Result<Self> {
        if l <= 0.0 || !l.is_finite() {
            return Err(Error::InvalidKernel(format!(
                "length scale must be positive and finite, got {l}"
            )));
        }
        if p <= 0.0 || !p.is_finite() {
            return Err(Error::InvalidKernel(format!(
                "period must be positive and finite, got {p}"
            )));
        }
        Ok(Self::Periodic { l, p })
    }

    /// Periodic kernel from the normalised length scale, with the period
    /// equal to the domain length.
    pub fn periodic_normalized(sigma_norm: f64, domain: &Domain1D) -> Result<Self> {
        Self::periodic(sigma_norm * domain.length(), domain.length())
    }

    /// Length scale `ℓ`.
    pub fn l(&self) -> f64 {
        match *self {
            Self::SquaredExponential { l } | Self::Periodic { l, .. } => l,
        }
    }

    /// Normalised length scale `σ = ℓ/(b − a)` on `domain`.
    pub fn sigma_norm(&self, domain: &Domain1D) -> f64 {
        self.l() / domain.length()
    }

    /// Covariance value `K(x, s)`.
    pub fn eval(&self, x: f64, s: f64) -> f64 {
        match *self {
            Self::SquaredExponential { l } => {
                let r = (x - s) / l;
                (-0.5 * r * r).exp()
            }
            Self::Periodic { l, p } => {
                let t = (PI * (x - s).abs() / p).sin();
                (-2.0 * t * t / (l * l)).exp()
            }
        }
    }
}

/// Lower Cholesky factor of `K + jI`, climbing the jitter ladder
/// `j = 10⁻¹⁴ d, …, 10⁻⁸ d` (`d` the mean diagonal) until the
/// factorisation succeeds.  Returns the factor and the jitter used.
pub(crate) fn factor_with_jitter(k: &Array2<f64>) -> Result<(Array2<f64>, f64)> {
    let n = k.nrows();
    let diag_mean = k.diag().sum() / n as f64;
    let rungs = ((JITTER_MAX / JITTER_START).log(JITTER_GROWTH).round() as usize) + 1;
    let mut jitter = JITTER_START * diag_mean;
    if diag_mean > 0.0 {
        for _ in 0..rungs {
            let mut kj = k.clone();
            for i in 0..n {
                kj[[i, i]] += jitter;
            }
            if let Some(l) = cholesky_lower(&kj) {
                return Ok((l, jitter));
            }
            jitter *= JITTER_GROWTH;
        }
    }
    Err(Error::FactorizationFailure {
        max_jitter: JITTER_MAX * diag_mean.max(0.0),
    })
}

/// Draw `n` independent zero-mean GP samples on `grid` (one per column).
///
/// Column `j` consumes its own ChaCha stream `j + 1` of the seed, so any
/// subset of columns is reproducible and columns could be generated in
/// parallel without changing the result.
pub fn sample_gp(kernel: &GpKernel, grid: &[f64], n: usize, seed: u64) -> Result<Array2<f64>> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one GP sample".into()));
    }
    let m = grid.len();
    if m == 0 {
        return Err(Error::InvalidArgument("empty GP sample grid".into()));
    }
    // Resolution requirement: the grid must resolve the length scale.
    let max_gap = grid
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .fold(0.0f64, f64::max);
    if max_gap > kernel.l() {
        return Err(Error::InvalidKernel(format!(
            "length scale {:.3e} is below the grid spacing {:.3e}; samples would alias",
            kernel.l(),
            max_gap
        )));
    }
    let mut k = Array2::<f64>::zeros((m, m));
    for i in 0..m {
        for j in 0..m {
            k[[i, j]] = kernel.eval(grid[i], grid[j]);
        }
    }
    let (l, _) = factor_with_jitter(&k)?;
    let mut f = Array2::<f64>::zeros((m, n));
    for j in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(j as u64 + 1);
        let z = ndarray::Array1::from_iter((0..m).map(|_| rng.sample::<f64, _>(StandardNormal)));
        // One matvec per column keeps each sample bit-identical no matter
        // how many neighbours are drawn alongside it.
        f.column_mut(j).assign(&l.dot(&z));
    }
    Ok(f)
}

// ---------------------------------------------------------------------------
// Problem specifications
// ---------------------------------------------------------------------------

/// Identifier of a reference operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemId {
    Poisson,
    AdvectionDiffusion,
    Airy,
    Helmholtz,
    FractionalLaplacian,
}

impl ProblemId {
    pub const ALL: [ProblemId; 5] = [
        ProblemId::Poisson,
        ProblemId::AdvectionDiffusion,
        ProblemId::Airy,
        ProblemId::Helmholtz,
        ProblemId::FractionalLaplacian,
    ];

    /// Stable string id (used by the CLI and file manifests).
    pub fn as_str(&self) -> &'static str {
        match self {
            ProblemId::Poisson => "poisson",
            ProblemId::AdvectionDiffusion => "advection_diffusion",
            ProblemId::Airy => "airy",
            ProblemId::Helmholtz => "helmholtz",
            ProblemId::FractionalLaplacian => "fractional_laplacian",
        }
    }
}

impl std::fmt::Display for ProblemId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ProblemId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProblemId::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown problem id `{s}`")))
    }
}

/// Boundary conditions of a reference problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    Dirichlet,
    Periodic,
}

/// A reference operator instance: identifier, parameter, domain and
/// boundary conditions (the latter two fixed per problem).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    id: ProblemId,
    theta: f64,
    domain: Domain1D,
    bc: BoundaryKind,
}

impl ProblemSpec {
    /// Problem instance at parameter `theta` on the problem's own domain.
    ///
    /// `theta` has no effect on `poisson` (the operator is parameter-free)
    /// and must satisfy `0 < θ < 1` for `fractional_laplacian`.
    pub fn new(id: ProblemId, theta: f64) -> Result<Self> {
        if !theta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "non-finite problem parameter θ = {theta}"
            )));
        }
        let (domain, bc) = match id {
            ProblemId::Poisson | ProblemId::Airy | ProblemId::Helmholtz => {
                (Domain1D::new(0.0, 1.0)?, BoundaryKind::Dirichlet)
            }
            ProblemId::AdvectionDiffusion => (Domain1D::new(-1.0, 1.0)?, BoundaryKind::Dirichlet),
            ProblemId::FractionalLaplacian => {
                if !(theta > 0.0 && theta < 1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "fractional order must satisfy 0 < θ < 1, got {theta}"
                    )));
                }
                (Domain1D::new(-0.5 * PI, 0.5 * PI)?, BoundaryKind::Periodic)
            }
        };
        Ok(Self {
            id,
            theta,
            domain,
            bc,
        })
    }

    pub fn id(&self) -> ProblemId {
        self.id
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn domain(&self) -> &Domain1D {
        &self.domain
    }

    pub fn bc(&self) -> BoundaryKind {
        self.bc
    }

    /// Default sensor grid sizes `(N_x, N_s)` for generated datasets.
    pub fn default_grid_sizes(&self) -> (usize, usize) {
        match self.id {
            ProblemId::FractionalLaplacian => (600, 600),
            _ => (500, 500),
        }
    }

    /// Default forcing kernel for generated datasets (`σ = 10⁻²`).
    pub fn default_kernel(&self) -> GpKernel {
        match self.bc {
            BoundaryKind::Dirichlet => {
                GpKernel::se_normalized(DEFAULT_SIGMA_NORM, &self.domain).expect("valid default")
            }
            BoundaryKind::Periodic => GpKernel::periodic_normalized(DEFAULT_SIGMA_NORM, &self.domain)
                .expect("valid default"),
        }
    }
}

/// Uniform grid of `n ≥ 2` points on `domain`, endpoints included.
pub fn uniform_grid(domain: &Domain1D, n: usize) -> Vec<f64> {
    assert!(n >= 2, "uniform grid needs at least two points");
    let (a, len) = (domain.a(), domain.length());
    (0..n)
        .map(|j| a + len * (j as f64 / (n - 1) as f64))
        .collect()
}

// ---------------------------------------------------------------------------
// Dirichlet collocation solver
// ---------------------------------------------------------------------------

/// Chebyshev differentiation matrix on the `n+1` descending second-kind
/// points of `domain` (rows/columns follow the point order of
/// [`cheb_points`]), with the negative-sum trick on the diagonal.
fn cheb_diff_matrix(n: usize, domain: &Domain1D) -> (Vec<f64>, Array2<f64>) {
    let nodes = cheb_points(n, domain);
    let m = n + 1;
    let mut d = Array2::<f64>::zeros((m, m));
    let c = |i: usize| -> f64 {
        let e = if i == 0 || i == n { 2.0 } else { 1.0 };
        if i.is_multiple_of(2) {
            e
        } else {
            -e
        }
    };
    for i in 0..m {
        let mut row_sum = 0.0;
        for j in 0..m {
            if i != j {
                let v = c(i) / c(j) / (nodes[i] - nodes[j]);
                d[[i, j]] = v;
                row_sum += v;
            }
        }
        d[[i, i]] = -row_sum;
    }
    (nodes, d)
}

/// Interior collocation matrix of a Dirichlet problem at resolution `n`:
/// boundary rows and columns are eliminated, so solving against interior
/// forcing values yields a response that is exactly zero at the endpoints.
fn dirichlet_interior_matrix(spec: &ProblemSpec, n: usize) -> Result<(Vec<f64>, Array2<f64>)> {
    let (nodes, d) = cheb_diff_matrix(n, &spec.domain);
    let d2 = d.dot(&d);
    let th = spec.theta;
    let mut a = match spec.id {
        ProblemId::Poisson => -&d2,
        ProblemId::AdvectionDiffusion => &d2 + &(th * &d),
        ProblemId::Airy => d2,
        ProblemId::Helmholtz => {
            // Guard the resonances θ = kπ where the operator is singular.
            let k = (th.abs() / PI).round();
            if k >= 1.0 && (th.abs() - k * PI).abs() <= 1e-8 * k * PI {
                return Err(Error::SingularOperator(format!(
                    "helmholtz frequency θ = {th} is within 1e-8 of the resonance {k}π"
                )));
            }
            &d2 + &(th * th * Array2::<f64>::eye(n + 1))
        }
        ProblemId::FractionalLaplacian => {
            return Err(Error::InvalidArgument(
                "fractional_laplacian is periodic, not a Dirichlet collocation problem".into(),
            ))
        }
    };
    if spec.id == ProblemId::Airy {
        // u″ − θ² x u: subtract θ²x on the diagonal.
        for i in 0..=n {
            a[[i, i]] -= th * th * nodes[i];
        }
    }
    let interior = a.slice(ndarray::s![1..n, 1..n]).to_owned();
    Ok((nodes, interior))
}

/// Solve a Dirichlet problem for many forcings at once.  `f_nodes` holds
/// forcing values on all `n+1` collocation nodes (one column per sample);
/// the returned array holds response values on the same nodes, with exact
/// zeros in the boundary rows.
fn solve_dirichlet_batch(spec: &ProblemSpec, n: usize, f_nodes: &Array2<f64>) -> Result<Array2<f64>> {
    let (_, a_int) = dirichlet_interior_matrix(spec, n)?;
    let f_int = f_nodes.slice(ndarray::s![1..n, ..]);
    let u_int = solve_multi(&a_int, &f_int)?;
    let mut u = Array2::<f64>::zeros(f_nodes.raw_dim());
    u.slice_mut(ndarray::s![1..n, ..]).assign(&u_int);
    Ok(u)
}

/// Barycentric evaluation of the interpolating polynomial through
/// `(nodes, values)` on descending second-kind Chebyshev points.  Exact
/// node hits return the stored value (so boundary zeros survive exactly).
fn barycentric_eval(nodes: &[f64], values: &[f64], x: f64) -> f64 {
    let n = nodes.len() - 1;
    let mut num = 0.0;
    let mut den = 0.0;
    for j in 0..=n {
        let dx = x - nodes[j];
        if dx == 0.0 {
            return values[j];
        }
        let mut w = if j % 2 == 0 { 1.0 } else { -1.0 };
        if j == 0 || j == n {
            w *= 0.5;
        }
        let t = w / dx;
        num += t * values[j];
        den += t;
    }
    num / den
}

// ---------------------------------------------------------------------------
// Fourier solver for the fractional Laplacian
// ---------------------------------------------------------------------------

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn fft_forward(buf: &mut [Complex<f64>]) {
    PLANNER.with(|p| {
        let fft = p.borrow_mut().plan_fft_forward(buf.len());
        fft.process(buf);
    });
}

/// Real trigonometric interpolant on a periodic domain,
/// `f(x) = a₀ + Σ_k a_k cos(2πk τ) + b_k sin(2πk τ)`, `τ = (x−a)/(b−a)`.
#[derive(Clone, Debug)]
pub(crate) struct TrigInterp {
    domain: Domain1D,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl TrigInterp {
    /// Interpolant of `values` at the `m` uniform nodes
    /// `x_j = a + j(b−a)/m` (right endpoint excluded).
    fn from_values(domain: Domain1D, values: &[f64]) -> Self {
        let mut buf: Vec<Complex<f64>> = values.iter().map(|&v| Complex::new(v, 0.0)).collect();
        fft_forward(&mut buf);
        Self::from_spectrum(domain, &buf)
    }

    /// Interpolant from a forward-FFT spectrum of length `m` (the Nyquist
    /// mode, present for even `m`, becomes a pure cosine).
    fn from_spectrum(domain: Domain1D, spectrum: &[Complex<f64>]) -> Self {
        let m = spectrum.len();
        let half = m / 2;
        let scale = 1.0 / m as f64;
        let mut a = vec![0.0; half + 1];
        let mut b = vec![0.0; half + 1];
        a[0] = spectrum[0].re * scale;
        for k in 1..=half {
            if 2 * k == m {
                a[k] = spectrum[k].re * scale;
            } else {
                a[k] = 2.0 * spectrum[k].re * scale;
                b[k] = -2.0 * spectrum[k].im * scale;
            }
        }
        Self { domain, a, b }
    }

    /// Evaluate at `x`; the phase is wrapped to one period first, so the
    /// two endpoints produce bitwise-identical values.
    fn eval(&self, x: f64) -> f64 {
        let tau = (x - self.domain.a()) / self.domain.length();
        let t = tau - tau.floor();
        let (s1, c1) = (2.0 * PI * t).sin_cos();
        let mut ck = 1.0;
        let mut sk = 0.0;
        let mut sum = self.a[0];
        for k in 1..self.a.len() {
            let cn = ck * c1 - sk * s1;
            sk = sk * c1 + ck * s1;
            ck = cn;
            sum += self.a[k] * ck + self.b[k] * sk;
        }
        sum
    }

    fn eval_many(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.eval(x)).collect()
    }
}

/// Uniform Fourier nodes `x_j = a + j(b−a)/m`, `j = 0..m` (half-open).
fn fourier_nodes(domain: &Domain1D, m: usize) -> Vec<f64> {
    let (a, len) = (domain.a(), domain.length());
    (0..m).map(|j| a + len * (j as f64 / m as f64)).collect()
}

/// Apply the inverse fractional Laplacian to forcing values on the `m`
/// uniform Fourier nodes: divide mode `k` by `(4k²)^θ` and zero the mean.
/// Returns the trigonometric interpolant of the response.
fn solve_fractional_spectrum(spec: &ProblemSpec, f_nodes: &[f64]) -> TrigInterp {
    let m = f_nodes.len();
    let mut buf: Vec<Complex<f64>> = f_nodes.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft_forward(&mut buf);
    buf[0] = Complex::new(0.0, 0.0);
    for (i, v) in buf.iter_mut().enumerate().skip(1) {
        let k = if 2 * i <= m { i as f64 } else { i as f64 - m as f64 };
        *v /= (4.0 * k * k).powf(spec.theta);
    }
    TrigInterp::from_spectrum(spec.domain, &buf)
}

// ---------------------------------------------------------------------------
// Public solving interface
// ---------------------------------------------------------------------------

/// Solve the reference problem for a continuous forcing `f`, returning
/// response values on `x_grid`.
///
/// Dirichlet problems are collocated at resolution [`COLLOCATION_N`]; the
/// fractional Laplacian uses [`FOURIER_N`] Fourier nodes and requires the
/// forcing mean over the period to vanish (relative to `max|f|`), since
/// constants are in the operator's null space.
pub fn solve<F: FnMut(f64) -> f64>(spec: &ProblemSpec, f: F, x_grid: &[f64]) -> Result<Vec<f64>> {
    match spec.bc {
        BoundaryKind::Dirichlet => solve_dirichlet_fn(spec, COLLOCATION_N, f, x_grid),
        BoundaryKind::Periodic => solve_fractional_fn(spec, FOURIER_N, f, x_grid),
    }
}

pub(crate) fn solve_dirichlet_fn<F: FnMut(f64) -> f64>(
    spec: &ProblemSpec,
    n: usize,
    mut f: F,
    x_grid: &[f64],
) -> Result<Vec<f64>> {
    let nodes = cheb_points(n, &spec.domain);
    let fv: Vec<f64> = nodes.iter().map(|&x| f(x)).collect();
    let f_nodes = Array2::from_shape_vec((n + 1, 1), fv).expect("column shape");
    let u_nodes = solve_dirichlet_batch(spec, n, &f_nodes)?;
    let uv: Vec<f64> = u_nodes.column(0).to_vec();
    Ok(x_grid
        .iter()
        .map(|&x| barycentric_eval(&nodes, &uv, x))
        .collect())
}

pub(crate) fn solve_fractional_fn<F: FnMut(f64) -> f64>(
    spec: &ProblemSpec,
    m: usize,
    mut f: F,
    x_grid: &[f64],
) -> Result<Vec<f64>> {
    let nodes = fourier_nodes(&spec.domain, m);
    let fv: Vec<f64> = nodes.iter().map(|&x| f(x)).collect();
    let mean = fv.iter().sum::<f64>() / m as f64;
    let fmax = fv.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if mean.abs() > ZERO_MEAN_RTOL * fmax.max(f64::MIN_POSITIVE) {
        return Err(Error::ZeroMeanViolation { mean });
    }
    let u = solve_fractional_spectrum(spec, &fv);
    Ok(u.eval_many(x_grid))
}

/// Solve the reference problem for a forcing known only by samples on a
/// strictly increasing grid spanning the domain.  The samples are lifted
/// to a continuous function by piecewise-cubic Lagrange interpolation and
/// passed to [`solve`].
pub fn solve_sampled(
    spec: &ProblemSpec,
    s_grid: &[f64],
    f_vals: &[f64],
    x_grid: &[f64],
) -> Result<Vec<f64>> {
    if s_grid.len() != f_vals.len() {
        return Err(Error::DatasetShape(format!(
            "forcing grid and values disagree: {} vs {}",
            s_grid.len(),
            f_vals.len()
        )));
    }
    if s_grid.len() < 4 || s_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "forcing grid must be strictly increasing with at least 4 points".into(),
        ));
    }
    let tol = 1e-12 * spec.domain.length();
    if s_grid[0] > spec.domain.a() + tol || s_grid[s_grid.len() - 1] < spec.domain.b() - tol {
        return Err(Error::InvalidArgument(format!(
            "forcing grid [{}, {}] does not span the problem domain [{}, {}]",
            s_grid[0],
            s_grid[s_grid.len() - 1],
            spec.domain.a(),
            spec.domain.b()
        )));
    }
    solve(spec, |x| cubic_interp(s_grid, f_vals, x), x_grid)
}

/// Piecewise-cubic Lagrange interpolation through the four grid points
/// surrounding `x` (clamped at the ends).
fn cubic_interp(grid: &[f64], vals: &[f64], x: f64) -> f64 {
    let n = grid.len();
    // Index of the first node > x, clamped so the stencil stays in range.
    let hi = grid.partition_point(|&g| g <= x);
    let lo = hi.saturating_sub(2).min(n - 4);
    let xs = &grid[lo..lo + 4];
    let fs = &vals[lo..lo + 4];
    let mut acc = 0.0;
    for i in 0..4 {
        let mut li = fs[i];
        for j in 0..4 {
            if i != j {
                li *= (x - xs[j]) / (xs[i] - xs[j]);
            }
        }
        acc += li;
    }
    acc
}

// ---------------------------------------------------------------------------
// Noise injection
// ---------------------------------------------------------------------------

/// Add white Gaussian noise at level `ζ` to responses (one sample per
/// column): `u + ζ c |u_i|‾` with `c ~ N(0,1)` drawn per entry and `|u_i|‾`
/// the mean absolute value of column `i`.  Column `i` uses ChaCha stream
/// `i + 1` of the seed; `ζ = 0` returns the input bit-for-bit.
pub fn add_noise(u: &Array2<f64>, zeta: f64, seed: u64) -> Result<Array2<f64>> {
    if zeta < 0.0 || !zeta.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "noise level must be finite and ≥ 0, got {zeta}"
        )));
    }
    let mut out = u.clone();
    if zeta == 0.0 {
        return Ok(out);
    }
    let nx = u.nrows();
    for (i, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
        let mabs = col.iter().map(|v| v.abs()).sum::<f64>() / nx as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64 + 1);
        for v in col.iter_mut() {
            let c: f64 = rng.sample(StandardNormal);
            *v += zeta * c * mabs;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Dataset assembly
// ---------------------------------------------------------------------------

/// Sub-seed derivation (SplitMix64 finaliser), one tag per random stage.
fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const SEED_TAG_FORCING: u64 = 1;
const SEED_TAG_NOISE: u64 = 2;
const SEED_TAG_SPLIT: u64 = 3;

/// A generated dataset: sensor grids, forcing/response samples (one per
/// column), and the train/validation split.
#[derive(Clone, Debug)]
pub struct DatasetFile {
    problem: ProblemSpec,
    kernel: GpKernel,
    xgrid: Vec<f64>,
    sgrid: Vec<f64>,
    forcings: Array2<f64>,
    responses: Array2<f64>,
    noise: f64,
    seed: u64,
    train_idx: Vec<usize>,
    val_idx: Vec<usize>,
}

impl DatasetFile {
    /// Assemble a dataset from parts, validating grids, shapes and the
    /// split (disjoint, sorted, jointly covering all samples).
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        problem: ProblemSpec,
        kernel: GpKernel,
        xgrid: Vec<f64>,
        sgrid: Vec<f64>,
        forcings: Array2<f64>,
        responses: Array2<f64>,
        noise: f64,
        seed: u64,
        train_idx: Vec<usize>,
        val_idx: Vec<usize>,
    ) -> Result<Self> {
        for (name, g) in [("x", &xgrid), ("s", &sgrid)] {
            if g.len() < 2 || g.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::DatasetShape(format!(
                    "{name}-grid must be strictly increasing with ≥ 2 points"
                )));
            }
        }
        let n = forcings.ncols();
        if responses.ncols() != n || n == 0 {
            return Err(Error::DatasetShape(format!(
                "forcing/response sample counts differ or are zero: {} vs {}",
                n,
                responses.ncols()
            )));
        }
        if forcings.nrows() != sgrid.len() || responses.nrows() != xgrid.len() {
            return Err(Error::DatasetShape(format!(
                "array/grid mismatch: F is {}×{} on {} s-points, U is {}×{} on {} x-points",
                forcings.nrows(),
                forcings.ncols(),
                sgrid.len(),
                responses.nrows(),
                responses.ncols(),
                xgrid.len()
            )));
        }
        let mut seen = vec![false; n];
        for &i in train_idx.iter().chain(&val_idx) {
            if i >= n || seen[i] {
                return Err(Error::DatasetShape(format!(
                    "split index {i} out of range or repeated"
                )));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::DatasetShape(
                "split does not cover every sample".into(),
            ));
        }
        if train_idx.windows(2).any(|w| w[1] <= w[0]) || val_idx.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::DatasetShape("split indices must be sorted".into()));
        }
        if train_idx.is_empty() {
            return Err(Error::DatasetShape("empty training split".into()));
        }
        Ok(Self {
            problem,
            kernel,
            xgrid,
            sgrid,
            forcings,
            responses,
            noise,
            seed,
            train_idx,
            val_idx,
        })
    }

    pub fn problem(&self) -> &ProblemSpec {
        &self.problem
    }

    pub fn kernel(&self) -> &GpKernel {
        &self.kernel
    }

    pub fn theta(&self) -> f64 {
        self.problem.theta
    }

    pub fn xgrid(&self) -> &[f64] {
        &self.xgrid
    }

    pub fn sgrid(&self) -> &[f64] {
        &self.sgrid
    }

    /// Forcing samples, `N_s × N_samples`.
    pub fn forcings(&self) -> &Array2<f64> {
        &self.forcings
    }

    /// Response samples (noisy when `noise > 0`), `N_x × N_samples`.
    pub fn responses(&self) -> &Array2<f64> {
        &self.responses
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn nsamples(&self) -> usize {
        self.forcings.ncols()
    }

    pub fn train_idx(&self) -> &[usize] {
        &self.train_idx
    }

    pub fn val_idx(&self) -> &[usize] {
        &self.val_idx
    }

    /// Package the split as training data for the network trainer.
    pub fn to_train_data(&self) -> Result<TrainData> {
        let train = SampleSet::new(
            self.xgrid.clone(),
            self.sgrid.clone(),
            self.forcings.select(Axis(1), &self.train_idx),
            self.responses.select(Axis(1), &self.train_idx),
        )?;
        let val = if self.val_idx.is_empty() {
            None
        } else {
            Some(SampleSet::new(
                self.xgrid.clone(),
                self.sgrid.clone(),
                self.forcings.select(Axis(1), &self.val_idx),
                self.responses.select(Axis(1), &self.val_idx),
            )?)
        };
        TrainData::new(train, val)
    }
}

/// Generate a complete dataset: draw `n_samples` GP forcings, solve the
/// reference problem, sample both on uniform sensor grids of `nx`/`ns`
/// points, add noise at level `zeta`, and split ~95/5 into train and
/// validation by a seeded shuffle.
///
/// Forcings are drawn on the solver's own grid (collocation or Fourier
/// nodes) and transferred to the sensor grids through the same continuous
/// interpolant the solver uses, so stored pairs satisfy the operator
/// equation to solver accuracy.  For the periodic problem the kernel must
/// be [`GpKernel::Periodic`] with the domain length as period, and each
/// forcing is mean-subtracted (on the Fourier grid) before solving.
pub fn make_dataset(
    problem: &ProblemSpec,
    kernel: &GpKernel,
    n_samples: usize,
    nx: usize,
    ns: usize,
    zeta: f64,
    seed: u64,
) -> Result<DatasetFile> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    if nx < 2 || ns < 2 {
        return Err(Error::InvalidArgument(
            "sensor grids need at least two points".into(),
        ));
    }
    let xgrid = uniform_grid(&problem.domain, nx);
    let sgrid = uniform_grid(&problem.domain, ns);
    let forcing_seed = derive_seed(seed, SEED_TAG_FORCING);

    let (f_sensor, u_sensor) = match problem.bc {
        BoundaryKind::Dirichlet => {
            let nodes = cheb_points(COLLOCATION_N, &problem.domain);
            let f_nodes = sample_gp(kernel, &nodes, n_samples, forcing_seed)?;
            let u_nodes = solve_dirichlet_batch(problem, COLLOCATION_N, &f_nodes)?;
            let resample = |vals: &Array2<f64>, grid: &[f64]| {
                let mut out = Array2::<f64>::zeros((grid.len(), n_samples));
                for j in 0..n_samples {
                    let col: Vec<f64> = vals.column(j).to_vec();
                    for (i, &x) in grid.iter().enumerate() {
                        out[[i, j]] = barycentric_eval(&nodes, &col, x);
                    }
                }
                out
            };
            (resample(&f_nodes, &sgrid), resample(&u_nodes, &xgrid))
        }
        BoundaryKind::Periodic => {
            match kernel {
                GpKernel::Periodic { p, .. }
                    if (p - problem.domain.length()).abs() <= 1e-12 * problem.domain.length() => {}
                GpKernel::Periodic { p, .. } => {
                    return Err(Error::InvalidKernel(format!(
                        "periodic problem needs the domain length {:.6} as period, got {p}",
                        problem.domain.length()
                    )))
                }
                GpKernel::SquaredExponential { .. } => {
                    return Err(Error::InvalidKernel(
                        "periodic problem requires the periodic kernel".into(),
                    ))
                }
            }
            let nodes = fourier_nodes(&problem.domain, FOURIER_N);
            let mut f_nodes = sample_gp(kernel, &nodes, n_samples, forcing_seed)?;
            let mut f_sensor = Array2::<f64>::zeros((ns, n_samples));
            let mut u_sensor = Array2::<f64>::zeros((nx, n_samples));
            for j in 0..n_samples {
                let mut col = f_nodes.column_mut(j);
                let mean = col.sum() / FOURIER_N as f64;
                col.mapv_inplace(|v| v - mean);
                let fv: Vec<f64> = col.to_vec();
                let fi = TrigInterp::from_values(problem.domain, &fv);
                let ui = solve_fractional_spectrum(problem, &fv);
                for (i, &x) in sgrid.iter().enumerate() {
                    f_sensor[[i, j]] = fi.eval(x);
                }
                for (i, &x) in xgrid.iter().enumerate() {
                    u_sensor[[i, j]] = ui.eval(x);
                }
            }
            (f_sensor, u_sensor)
        }
    };

    let u_noisy = add_noise(&u_sensor, zeta, derive_seed(seed, SEED_TAG_NOISE))?;

    // ~5% validation: a seeded shuffle donates ⌊n/20⌋ samples (at least one
    // once there are two).
    let mut order: Vec<usize> = (0..n_samples).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, SEED_TAG_SPLIT));
    order.shuffle(&mut rng);
    let n_val = if n_samples >= 2 {
        (n_samples / 20).max(1)
    } else {
        0
    };
    let mut val_idx: Vec<usize> = order[..n_val].to_vec();
    let mut train_idx: Vec<usize> = order[n_val..].to_vec();
    val_idx.sort_unstable();
    train_idx.sort_unstable();

    DatasetFile::new(
        *problem, *kernel, xgrid, sgrid, f_sensor, u_noisy, zeta, seed, train_idx, val_idx,
    )
}

// ---------------------------------------------------------------------------
// Closed forms
// ---------------------------------------------------------------------------

/// Exact Green's function of the Poisson problem `−u″ = f` on `[0, 1]`
/// with homogeneous Dirichlet conditions:
/// `G(x, s) = x(1−s)` for `x ≤ s`, `s(1−x)` otherwise.
pub fn poisson_exact_green(x: f64, s: f64) -> f64 {
    if x <= s {
        x * (1.0 - s)
    } else {
        s * (1.0 - x)
    }
}

/// Exact Green's function of the advection–diffusion operator
/// `u″ + θu′ = f` on `[−1, 1]` with homogeneous Dirichlet conditions.
///
/// In self-adjoint form `(e^{θx} u′)′ = e^{θx} f`, the one-sided solutions
/// are `u₁(t) = 1 − e^{−θ(t+1)}` (vanishing at −1) and
/// `u₂(t) = e^{−θ(t−1)} − 1` (vanishing at +1) with constant conjunct
/// `p W = −2θ sinh θ`, so
///
/// ```text
/// G(x, s) = −e^{θs} u₁(min(x,s)) u₂(max(x,s)) / (2θ sinh θ),
/// ```
///
/// which degrades continuously to `−(x_< + 1)(1 − x_>)/2` as `θ → 0`.
pub fn advection_diffusion_exact_green(theta: f64, x: f64, s: f64) -> f64 {
    let (lo, hi) = if x <= s { (x, s) } else { (s, x) };
    if theta == 0.0 {
        return -(lo + 1.0) * (1.0 - hi) / 2.0;
    }
    let u1 = 1.0 - (-theta * (lo + 1.0)).exp();
    let u2 = (-theta * (hi - 1.0)).exp() - 1.0;
    -(theta * s).exp() * u1 * u2 / (2.0 * theta * theta.sinh())
}

/// Singular values `σ_k = 1/(θ² − (kπ)²)`, `k = 1..k_max`, of the Green's
/// function of the Helmholtz operator `u″ + θ²u` on `[0, 1]`.  The first
/// two cross in magnitude at `θ = √(5/2)π`; values at a resonance `θ = kπ`
/// do not exist.
pub fn helmholtz_singular_values(theta: f64, k_max: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let kpi = k as f64 * PI;
        let den = theta * theta - kpi * kpi;
        if den == 0.0 || (theta.abs() - kpi).abs() <= 4.0 * f64::EPSILON * kpi {
            return Err(Error::Resonance { theta, k });
        }
        out.push(1.0 / den);
    }
    Ok(out)
}
