//! Rational neural networks for Green's-function learning.
//!
//! Two networks are trained jointly against forcing/response pairs
//! `{f_i, u_i}`: `𝒩_G(x, s)` for the Green's function and `𝒩_hom(x)` for the
//! homogeneous solution, minimising the relative empirical loss
//!
//! ```text
//! Loss = (1/N) Σ_i ‖u_i − 𝒩_hom − ∫ α(·,s) 𝒩_G(·,s) f_i(s) ds‖² / ‖u_i‖²,
//! ```
//!
//! with every integral discretised by the trapezoidal rule on the sensor
//! grids. For problems with known Dirichlet conditions the weight `α` is the
//! approximate distance function of the rectangle `Ω×Ω`, assembled from the
//! per-segment distance
//!
//! ```text
//! β = sqrt(h² + ((φ − t)/2)²),   φ = sqrt(t² + h⁴),
//! h = ((x−x₁)(s₂−s₁) − (s−s₁)(x₂−x₁))/L,   t = ((L/2)² − ‖x − x_c‖²)/L,
//! ```
//!
//! via the order-1 R-equivalence `α = 1/(1/β₁ + 1/β₂ + 1/β₃ + 1/β₄)`, which
//! vanishes on the boundary and reproduces the distance to first order at
//! regular boundary points; otherwise `α ≡ 1`. Each network alternates affine
//! layers with a trainable elementwise rational activation `r(z) = p(z)/q(z)`
//! of degree (3, 2), initialised once by an iteratively-reweighted
//! least-squares fit of `ReLU` on `[−1, 1]`. Training is full-batch Adam with
//! an exponentially decaying learning rate and is bitwise deterministic for a
//! fixed seed: evaluation sweeps the response grid in fixed-size row blocks
//! and all reductions run in a fixed order.

use crate::bivariate::{build_cdr, sve, BivariateFn, Sve};
use crate::chebcore::{ChebSeries, Domain1D, Tolerance};
use crate::error::{Error, Result};
use crate::rt;
use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2};
use ndarray_linalg::Solve;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

/// Hidden width of the default architecture.
pub const HIDDEN_WIDTH: usize = 50;

/// Hidden depth (number of rational layers) of the default architecture.
pub const HIDDEN_LAYERS: usize = 4;

/// Row-block sizing for grid sweeps: blocks hold roughly this many (x, s)
/// pairs so per-block activations stay cache resident.
const PAIR_CHUNK_TARGET: usize = 4096;

/// Sample count and sweep count of the build-time ReLU fit.
const RELU_FIT_POINTS: usize = 1000;
const RELU_FIT_SWEEPS: usize = 30;

// ---------------------------------------------------------------------------
// Approximate distance functions
// ---------------------------------------------------------------------------

/// Approximate distance `β ≥ 0` from `point = (x, s)` to the segment
/// `p1–p2`, zero exactly on the segment (the `h = 0` branch avoids the
/// final square root so on-segment points round to literal zero).
pub fn adf_segment(point: (f64, f64), p1: (f64, f64), p2: (f64, f64)) -> Result<f64> {
    let (x, s) = point;
    let (x1, s1) = p1;
    let (x2, s2) = p2;
    let l = (x2 - x1).hypot(s2 - s1);
    if l <= 0.0 || !l.is_finite() {
        return Err(Error::ZeroLengthSegment);
    }
    let h = ((x - x1) * (s2 - s1) - (s - s1) * (x2 - x1)) / l;
    let cx = 0.5 * (x1 + x2);
    let cs = 0.5 * (s1 + s2);
    let dist2 = (x - cx) * (x - cx) + (s - cs) * (s - cs);
    let t = ((0.5 * l) * (0.5 * l) - dist2) / l;
    if h == 0.0 {
        // φ = |t| exactly, so β = (|t| − t)/2: zero on the slab, the
        // beyond-endpoint distance elsewhere.
        return Ok(0.5 * (t.abs() - t));
    }
    let phi = (t * t + h * h * h * h).sqrt();
    let d = 0.5 * (phi - t);
    Ok((h * h + d * d).sqrt())
}

/// The weight rectangle `Ω×Ω` (x-interval × s-interval) with the order-1
/// R-equivalence combination; `enabled = false` turns the weight off
/// (`α ≡ 1`) for problems without known Dirichlet conditions.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AdfSpec {
    xdomain: Domain1D,
    sdomain: Domain1D,
    /// Normalisation order of the R-equivalence combination; fixed at 1.
    m: u32,
    enabled: bool,
}

impl AdfSpec {
    /// Dirichlet weight on the rectangle `xdomain × sdomain`.
    pub fn dirichlet(xdomain: Domain1D, sdomain: Domain1D) -> Self {
        Self { xdomain, sdomain, m: 1, enabled: true }
    }

    /// Disabled weight (`α ≡ 1`) carrying the same rectangle.
    pub fn disabled(xdomain: Domain1D, sdomain: Domain1D) -> Self {
        Self { xdomain, sdomain, m: 1, enabled: false }
    }

    pub fn xdomain(&self) -> &Domain1D {
        &self.xdomain
    }

    pub fn sdomain(&self) -> &Domain1D {
        &self.sdomain
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn enabled(&self) -> bool {
        self.enabled
    }

    /// `α(x, s)`; see [`adf_rect`].
    pub fn alpha(&self, x: f64, s: f64) -> f64 {
        adf_rect((x, s), self)
    }

    /// `α` on the tensor grid `xs × ss` (rows index `x`).
    pub fn alpha_grid(&self, xs: &[f64], ss: &[f64]) -> Array2<f64> {
        if !self.enabled {
            return Array2::ones((xs.len(), ss.len()));
        }
        let mut a = Array2::zeros((xs.len(), ss.len()));
        for (j, &x) in xs.iter().enumerate() {
            for (l, &s) in ss.iter().enumerate() {
                a[[j, l]] = self.alpha(x, s);
            }
        }
        a
    }
}

/// `α(x, s)` for the rectangle of `spec`: the reciprocal sum of reciprocal
/// segment distances over the four edges (order `m = 1`). Zero exactly on
/// any edge, strictly positive inside, and `≡ 1` when the spec is disabled.
pub fn adf_rect(point: (f64, f64), spec: &AdfSpec) -> f64 {
    if !spec.enabled {
        return 1.0;
    }
    let (xa, xb) = (spec.xdomain.a(), spec.xdomain.b());
    let (sa, sb) = (spec.sdomain.a(), spec.sdomain.b());
    let corners = [(xa, sa), (xb, sa), (xb, sb), (xa, sb)];
    let mut recip = 0.0f64;
    for k in 0..4 {
        // Segment length is positive for any valid rectangle.
        let beta = adf_segment(point, corners[k], corners[(k + 1) % 4]).unwrap();
        if beta == 0.0 {
            return 0.0;
        }
        recip += 1.0 / beta;
    }
    1.0 / recip
}

// ---------------------------------------------------------------------------
// Rational activation
// ---------------------------------------------------------------------------

/// Trainable elementwise activation `r(z) = p(z)/q(z)`, numerator degree 3
/// and denominator degree 2, coefficients in ascending order.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RationalActivation {
    p: [f64; 4],
    q: [f64; 3],
}

impl RationalActivation {
    pub fn new(p: [f64; 4], q: [f64; 3]) -> Result<Self> {
        if !(p.iter().all(|c| c.is_finite()) && q.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidArgument(
                "rational activation coefficients must be finite".into(),
            ));
        }
        Ok(Self { p, q })
    }

    /// The identity map: `p = [0, 1, 0, 0]`, `q = [1, 0, 0]`.
    pub fn identity() -> Self {
        Self { p: [0.0, 1.0, 0.0, 0.0], q: [1.0, 0.0, 0.0] }
    }

    /// Initial activation: least-squares fit of `ReLU` on `[−1, 1]` at 1000
    /// equispaced points, solved by iteratively reweighted linear least
    /// squares (denominator frozen from the previous sweep, constant term
    /// pinned at 1). Computed once per process and cached; the result keeps
    /// `q` bounded away from zero on the operating range `[−3, 3]`.
    pub fn relu_init() -> Self {
        static FIT: OnceLock<RationalActivation> = OnceLock::new();
        *FIT.get_or_init(Self::fit_relu)
    }

    fn fit_relu() -> Self {
        let n = RELU_FIT_POINTS;
        let xs: Vec<f64> = (0..n)
            .map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64)
            .collect();
        let ys: Vec<f64> = xs.iter().map(|&x| x.max(0.0)).collect();
        let mut q = [1.0f64, 0.0, 0.0];
        let mut p = [0.0f64; 4];
        for _ in 0..RELU_FIT_SWEEPS {
            // Linearised residual p(x) − y·(1 + q₁x + q₂x²) ≈ y, weighted by
            // the previous denominator; unknowns θ = (p₀..p₃, q₁, q₂).
            let mut ata = Array2::<f64>::zeros((6, 6));
            let mut atb = Array1::<f64>::zeros(6);
            for (&x, &y) in xs.iter().zip(&ys) {
                let qv = (q[0] + q[1] * x + q[2] * x * x).abs().max(1e-3);
                let w = 1.0 / qv;
                let row = [1.0, x, x * x, x * x * x, -y * x, -y * x * x];
                for a in 0..6 {
                    for b in 0..6 {
                        ata[[a, b]] += w * w * row[a] * row[b];
                    }
                    atb[a] += w * w * row[a] * y;
                }
            }
            let theta = ata.solve_into(atb).expect("ReLU fit normal equations");
            p = [theta[0], theta[1], theta[2], theta[3]];
            q = [1.0, theta[4], theta[5]];
        }
        Self { p, q }
    }

    pub fn p(&self) -> &[f64; 4] {
        &self.p
    }

    pub fn q(&self) -> &[f64; 3] {
        &self.q
    }

    /// `r(z)`.
    pub fn eval(&self, z: f64) -> f64 {
        let z2 = z * z;
        let pv = self.p[0] + self.p[1] * z + self.p[2] * z2 + self.p[3] * z2 * z;
        let qv = self.q[0] + self.q[1] * z + self.q[2] * z2;
        pv / qv
    }

}

// ---------------------------------------------------------------------------
// Networks
// ---------------------------------------------------------------------------

/// Feed-forward rational network: affine layers `z = x Wᵀ + b` alternating
/// with a per-layer rational activation; the final layer is affine only.
/// Raw inputs are rescaled coordinate-wise to `[−1, 1]` through the stored
/// domains before the first layer.
#[derive(Clone, Debug)]
pub struct RatNet {
    dims: Vec<usize>,
    scale: Vec<Domain1D>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    acts: Vec<RationalActivation>,
}

/// Forward-pass intermediates for one row block, kept for backpropagation.
struct Tape {
    /// Layer inputs `x_0 … x_{L−1}` (`x_0` already rescaled).
    xs: Vec<Array2<f64>>,
    /// Pre-activations `z_0 … z_{L−2}` of the rational layers.
    zs: Vec<Array2<f64>>,
}

/// Parameter cotangents, same shapes and ordering as the network tensors.
pub(crate) struct Grads {
    w: Vec<Array2<f64>>,
    b: Vec<Array1<f64>>,
    p: Vec<[f64; 4]>,
    q: Vec<[f64; 3]>,
}

impl Grads {
    fn zeros_like(net: &RatNet) -> Self {
        Self {
            w: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            b: net.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
            p: vec![[0.0; 4]; net.acts.len()],
            q: vec![[0.0; 3]; net.acts.len()],
        }
    }

    /// Flatten in the canonical parameter order (see [`RatNet::params_vec`]).
    fn flat(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for w in &self.w {
            v.extend(w.iter());
        }
        for b in &self.b {
            v.extend(b.iter());
        }
        for (p, q) in self.p.iter().zip(&self.q) {
            v.extend(p.iter());
            v.extend(q.iter());
        }
        v
    }
}

impl RatNet {
    /// A fresh network with layer widths `dims` (input first, output last),
    /// per-input rescaling `scale`, weights drawn uniformly from
    /// `±1/sqrt(fan_in)` by a seeded generator, zero biases, and every
    /// activation at the shared ReLU fit.
    pub fn new(dims: &[usize], scale: &[Domain1D], seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidArgument(
                "network needs at least two nonzero layer dims".into(),
            ));
        }
        if scale.len() != dims[0] {
            return Err(Error::InvalidArgument(format!(
                "got {} rescale domains for input dimension {}",
                scale.len(),
                dims[0]
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..dims.len() - 1 {
            let bound = 1.0 / (dims[l] as f64).sqrt();
            let mut w = Array2::zeros((dims[l + 1], dims[l]));
            for e in w.iter_mut() {
                *e = rng.gen_range(-bound..bound);
            }
            weights.push(w);
            biases.push(Array1::zeros(dims[l + 1]));
        }
        let acts = vec![RationalActivation::relu_init(); dims.len() - 2];
        Ok(Self {
            dims: dims.to_vec(),
            scale: scale.to_vec(),
            weights,
            biases,
            acts,
        })
    }

    /// Default Green's-function network: `(x, s) ∈ xdomain × sdomain → ℝ`,
    /// four rational layers of width 50.
    pub fn green_default(xdomain: Domain1D, sdomain: Domain1D, seed: u64) -> Self {
        let mut dims = vec![2];
        dims.extend(std::iter::repeat_n(HIDDEN_WIDTH, HIDDEN_LAYERS));
        dims.push(1);
        Self::new(&dims, &[xdomain, sdomain], seed).unwrap()
    }

    /// Default homogeneous-solution network: `x ∈ xdomain → ℝ`, same shape.
    pub fn hom_default(xdomain: Domain1D, seed: u64) -> Self {
        let mut dims = vec![1];
        dims.extend(std::iter::repeat_n(HIDDEN_WIDTH, HIDDEN_LAYERS));
        dims.push(1);
        Self::new(&dims, &[xdomain], seed).unwrap()
    }

    /// All parameters zero: the constant-0 map for any input.
    pub fn zeroed(dims: &[usize], scale: &[Domain1D]) -> Result<Self> {
        let mut net = Self::new(dims, scale, 0)?;
        for w in &mut net.weights {
            w.fill(0.0);
        }
        Ok(net)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn scale(&self) -> &[Domain1D] {
        &self.scale
    }

    pub fn activations(&self) -> &[RationalActivation] {
        &self.acts
    }

    /// Total trainable parameter count.
    pub fn nparams(&self) -> usize {
        let tensors: usize = self
            .weights
            .iter()
            .map(|w| w.len())
            .chain(self.biases.iter().map(|b| b.len()))
            .sum();
        tensors + 7 * self.acts.len()
    }

    /// All parameters flattened in a fixed order: weight matrices (row
    /// major, input side first), then biases, then per-layer activation
    /// coefficients `p₀..p₃ q₀..q₂`.
    pub fn params_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.nparams());
        for w in &self.weights {
            v.extend(w.iter());
        }
        for b in &self.biases {
            v.extend(b.iter());
        }
        for a in &self.acts {
            v.extend(a.p.iter());
            v.extend(a.q.iter());
        }
        v
    }

    /// Inverse of [`params_vec`].
    pub fn set_params(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.nparams() {
            return Err(Error::InvalidArgument(format!(
                "parameter vector length {} != {}",
                v.len(),
                self.nparams()
            )));
        }
        let mut it = v.iter().copied();
        for w in &mut self.weights {
            for e in w.iter_mut() {
                *e = it.next().unwrap();
            }
        }
        for b in &mut self.biases {
            for e in b.iter_mut() {
                *e = it.next().unwrap();
            }
        }
        for a in &mut self.acts {
            for e in a.p.iter_mut().chain(a.q.iter_mut()) {
                *e = it.next().unwrap();
            }
        }
        Ok(())
    }

    fn rescaled(&self, raw: &ArrayView2<f64>) -> Array2<f64> {
        let mut x = raw.to_owned();
        for (d, dom) in self.scale.iter().enumerate() {
            for e in x.column_mut(d).iter_mut() {
                *e = dom.to_unit(*e);
            }
        }
        x
    }

    fn affine(&self, l: usize, x: &Array2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weights[l].t());
        z += &self.biases[l];
        z
    }

    /// Forward pass on raw inputs (rows are samples). Errors if any output
    /// entry is non-finite — the signature of a collapsed denominator or
    /// diverged parameters.
    pub fn forward(&self, raw: &ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_tape(raw, false)?.0)
    }

    /// Forward pass that optionally records intermediates for backprop.
    fn forward_tape(&self, raw: &ArrayView2<f64>, record: bool) -> Result<(Array2<f64>, Tape)> {
        if raw.ncols() != self.dims[0] {
            return Err(Error::InvalidArgument(format!(
                "input width {} != network input dim {}",
                raw.ncols(),
                self.dims[0]
            )));
        }
        let nl = self.weights.len();
        let mut tape = Tape { xs: Vec::new(), zs: Vec::new() };
        let mut x = self.rescaled(raw);
        for l in 0..nl {
            let z = self.affine(l, &x);
            if record {
                tape.xs.push(x);
            }
            if l + 1 < nl {
                let act = &self.acts[l];
                let mut out = z.clone();
                for e in out.iter_mut() {
                    *e = act.eval(*e);
                }
                if record {
                    tape.zs.push(z);
                }
                x = out;
            } else {
                x = z;
            }
        }
        if !x.iter().all(|e| e.is_finite()) {
            return Err(Error::NonFiniteOutput);
        }
        Ok((x, tape))
    }

    /// Backpropagate an output cotangent through a recorded tape,
    /// accumulating parameter cotangents into `g`.
    fn backward(&self, tape: &Tape, dout: &Array2<f64>, g: &mut Grads) {
        let nl = self.weights.len();
        let mut dz = dout.clone();
        for l in (0..nl).rev() {
            general_mat_mul(1.0, &dz.t(), &tape.xs[l], 1.0, &mut g.w[l]);
            for (gb, col) in g.b[l].iter_mut().zip(dz.t().rows()) {
                *gb += col.sum();
            }
            if l == 0 {
                break;
            }
            let dx = dz.dot(&self.weights[l]);
            // Rational layer l−1: dz ← dx ⊙ r′(z); accumulate dp, dq.
            let act = &self.acts[l - 1];
            let z = &tape.zs[l - 1];
            let mut dzn = Array2::zeros(z.raw_dim());
            let (mut dp, mut dq) = ([0.0f64; 4], [0.0f64; 3]);
            ndarray::Zip::from(&mut dzn).and(z).and(&dx).for_each(|o, &zi, &di| {
                let z2 = zi * zi;
                let z3 = z2 * zi;
                let qv = act.q[0] + act.q[1] * zi + act.q[2] * z2;
                let pv = act.p[0] + act.p[1] * zi + act.p[2] * z2 + act.p[3] * z3;
                let inv = 1.0 / qv;
                let r = pv * inv;
                let dpv = act.p[1] + 2.0 * act.p[2] * zi + 3.0 * act.p[3] * z2;
                let dqv = act.q[1] + 2.0 * act.q[2] * zi;
                *o = di * (dpv - r * dqv) * inv;
                let wp = di * inv;
                dp[0] += wp;
                dp[1] += wp * zi;
                dp[2] += wp * z2;
                dp[3] += wp * z3;
                let wq = -di * r * inv;
                dq[0] += wq;
                dq[1] += wq * zi;
                dq[2] += wq * z2;
            });
            for (gp, d) in g.p[l - 1].iter_mut().zip(&dp) {
                *gp += d;
            }
            for (gq, d) in g.q[l - 1].iter_mut().zip(&dq) {
                *gq += d;
            }
            dz = dzn;
        }
    }

    /// Grid evaluation for 2-input networks: `out[j, l] = net(xs[j], ss[l])`,
    /// swept in row blocks.
    pub fn eval_pairs(&self, xs: &[f64], ss: &[f64]) -> Result<Array2<f64>> {
        if self.dims[0] != 2 || *self.dims.last().unwrap() != 1 {
            return Err(Error::InvalidArgument(
                "eval_pairs needs a 2-input scalar network".into(),
            ));
        }
        let (nx, ns) = (xs.len(), ss.len());
        let mut out = Array2::zeros((nx, ns));
        let cx = (PAIR_CHUNK_TARGET / ns.max(1)).clamp(1, nx.max(1));
        let mut j0 = 0;
        while j0 < nx {
            let j1 = (j0 + cx).min(nx);
            let mut input = Array2::zeros(((j1 - j0) * ns, 2));
            for (r, &x) in xs[j0..j1].iter().enumerate() {
                for (l, &s) in ss.iter().enumerate() {
                    input[[r * ns + l, 0]] = x;
                    input[[r * ns + l, 1]] = s;
                }
            }
            let o = self.forward(&input.view())?;
            for r in 0..j1 - j0 {
                for l in 0..ns {
                    out[[j0 + r, l]] = o[[r * ns + l, 0]];
                }
            }
            j0 = j1;
        }
        Ok(out)
    }

    /// Scalar evaluation for 1-input networks.
    pub fn eval_scalar(&self, x: f64) -> Result<f64> {
        if self.dims[0] != 1 || *self.dims.last().unwrap() != 1 {
            return Err(Error::InvalidArgument(
                "eval_scalar needs a 1-input scalar network".into(),
            ));
        }
        let input = Array2::from_shape_vec((1, 1), vec![x]).unwrap();
        Ok(self.forward(&input.view())?[[0, 0]])
    }
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

/// Trapezoid weights of a strictly ascending grid.
pub(crate) fn trapezoid_weights(grid: &[f64]) -> Result<Vec<f64>> {
    if grid.len() < 2 {
        return Err(Error::DatasetShape(format!(
            "grid needs at least 2 points, got {}",
            grid.len()
        )));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) || grid.iter().any(|g| !g.is_finite()) {
        return Err(Error::DatasetShape(
            "grid must be finite and strictly ascending".into(),
        ));
    }
    let n = grid.len();
    let mut w = vec![0.0; n];
    w[0] = 0.5 * (grid[1] - grid[0]);
    w[n - 1] = 0.5 * (grid[n - 1] - grid[n - 2]);
    for i in 1..n - 1 {
        w[i] = 0.5 * (grid[i + 1] - grid[i - 1]);
    }
    Ok(w)
}

/// A set of forcing/response pairs sampled on fixed sensor grids: column `i`
/// of `f` holds `f_i` on the `ss` grid, column `i` of `u` holds `u_i` on the
/// `xs` grid.
#[derive(Clone, Debug)]
pub struct SampleSet {
    xs: Vec<f64>,
    ss: Vec<f64>,
    f: Array2<f64>,
    u: Array2<f64>,
}

impl SampleSet {
    pub fn new(xs: Vec<f64>, ss: Vec<f64>, f: Array2<f64>, u: Array2<f64>) -> Result<Self> {
        trapezoid_weights(&xs)?;
        trapezoid_weights(&ss)?;
        if f.ncols() != u.ncols() || f.ncols() == 0 {
            return Err(Error::DatasetShape(format!(
                "forcing/response sample counts differ or are zero: {} vs {}",
                f.ncols(),
                u.ncols()
            )));
        }
        if f.nrows() != ss.len() || u.nrows() != xs.len() {
            return Err(Error::DatasetShape(format!(
                "grid/array mismatch: f is {}×{} on {} s-points, u is {}×{} on {} x-points",
                f.nrows(),
                f.ncols(),
                ss.len(),
                u.nrows(),
                u.ncols(),
                xs.len()
            )));
        }
        if f.iter().chain(u.iter()).any(|v| !v.is_finite()) {
            return Err(Error::DatasetShape("non-finite sample data".into()));
        }
        Ok(Self { xs, ss, f, u })
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ss(&self) -> &[f64] {
        &self.ss
    }

    pub fn f(&self) -> &Array2<f64> {
        &self.f
    }

    pub fn u(&self) -> &Array2<f64> {
        &self.u
    }

    pub fn nsamples(&self) -> usize {
        self.f.ncols()
    }
}

/// Training split plus optional held-out validation split on the same grids.
#[derive(Clone, Debug)]
pub struct TrainData {
    train: SampleSet,
    val: Option<SampleSet>,
}

impl TrainData {
    pub fn new(train: SampleSet, val: Option<SampleSet>) -> Result<Self> {
        if let Some(v) = &val {
            if v.xs != train.xs || v.ss != train.ss {
                return Err(Error::DatasetShape(
                    "validation split must share the training sensor grids".into(),
                ));
            }
        }
        Ok(Self { train, val })
    }

    pub fn train(&self) -> &SampleSet {
        &self.train
    }

    pub fn val(&self) -> Option<&SampleSet> {
        self.val.as_ref()
    }
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

/// Per-sample squared trapezoid norms of the response columns, in ascending
/// grid order (the loss reuses this exact summation order so the zero model
/// scores exactly 1).
fn response_norms(u: &Array2<f64>, wx: &[f64]) -> Result<Vec<f64>> {
    let mut norms = vec![0.0f64; u.ncols()];
    for (j, &w) in wx.iter().enumerate() {
        for (i, n) in norms.iter_mut().enumerate() {
            *n += w * u[[j, i]] * u[[j, i]];
        }
    }
    for (i, n) in norms.iter().enumerate() {
        if *n == 0.0 {
            return Err(Error::ZeroResponseNorm { index: i });
        }
    }
    Ok(norms)
}

/// Precomputed grid quantities shared by every epoch of a training run.
struct LossEngine<'a> {
    data: &'a TrainData,
    alpha: Array2<f64>,
    wx: Vec<f64>,
    /// `ws`-scaled forcing matrices (quadrature folded in).
    fw_train: Array2<f64>,
    fw_val: Option<Array2<f64>>,
    norms_train: Vec<f64>,
    norms_val: Option<Vec<f64>>,
    chunk: usize,
}

impl<'a> LossEngine<'a> {
    fn new(data: &'a TrainData, adf: &AdfSpec) -> Result<Self> {
        let tr = &data.train;
        let wx = trapezoid_weights(&tr.xs)?;
        let ws = trapezoid_weights(&tr.ss)?;
        let alpha = adf.alpha_grid(&tr.xs, &tr.ss);
        let scale_f = |f: &Array2<f64>| {
            let mut fw = f.clone();
            for (l, &w) in ws.iter().enumerate() {
                for e in fw.row_mut(l).iter_mut() {
                    *e *= w;
                }
            }
            fw
        };
        let norms_train = response_norms(&tr.u, &wx)?;
        let (fw_val, norms_val) = match &data.val {
            Some(v) => (Some(scale_f(&v.f)), Some(response_norms(&v.u, &wx)?)),
            None => (None, None),
        };
        let ns = tr.ss.len();
        Ok(Self {
            data,
            alpha,
            wx,
            fw_train: scale_f(&tr.f),
            fw_val,
            norms_train,
            norms_val,
            chunk: (PAIR_CHUNK_TARGET / ns.max(1)).clamp(1, tr.xs.len()),
        })
    }

    /// One sweep over the response grid: training loss, validation loss, and
    /// (if requested) parameter cotangents of the training loss.
    fn pass(
        &self,
        netg: &RatNet,
        neth: &RatNet,
        mut grads: Option<(&mut Grads, &mut Grads)>,
    ) -> Result<(f64, Option<f64>)> {
        let tr = &self.data.train;
        let (nx, ns, ntr) = (tr.xs.len(), tr.ss.len(), tr.nsamples());
        let record = grads.is_some();

        let hin = Array2::from_shape_vec((nx, 1), tr.xs.clone()).unwrap();
        let (hout, htape) = neth.forward_tape(&hin.view(), record)?;
        let mut dh = Array2::<f64>::zeros((nx, 1));

        let mut resid_tr = vec![0.0f64; ntr];
        let mut resid_val = self.data.val.as_ref().map(|v| vec![0.0f64; v.nsamples()]);

        let mut j0 = 0;
        while j0 < nx {
            let j1 = (j0 + self.chunk).min(nx);
            let rows = j1 - j0;
            let mut input = Array2::zeros((rows * ns, 2));
            for (r, &x) in tr.xs[j0..j1].iter().enumerate() {
                for (l, &s) in tr.ss.iter().enumerate() {
                    input[[r * ns + l, 0]] = x;
                    input[[r * ns + l, 1]] = s;
                }
            }
            let (gout, gtape) = netg.forward_tape(&input.view(), record)?;
            // Weighted kernel block (α ⊙ 𝒩_G) and its forcings image.
            let mut galpha = Array2::zeros((rows, ns));
            for r in 0..rows {
                for l in 0..ns {
                    galpha[[r, l]] = self.alpha[[j0 + r, l]] * gout[[r * ns + l, 0]];
                }
            }
            let pred = galpha.dot(&self.fw_train);
            let mut e = Array2::zeros((rows, ntr));
            for r in 0..rows {
                for i in 0..ntr {
                    e[[r, i]] = tr.u[[j0 + r, i]] - hout[[j0 + r, 0]] - pred[[r, i]];
                }
            }
            for r in 0..rows {
                let w = self.wx[j0 + r];
                for (i, acc) in resid_tr.iter_mut().enumerate() {
                    *acc += w * e[[r, i]] * e[[r, i]];
                }
            }
            if let Some((gg, _)) = grads.as_mut() {
                // dLoss/dE = (2/N)·ν_i·w_j·E.
                let mut et = e;
                for r in 0..rows {
                    let w = 2.0 * self.wx[j0 + r] / ntr as f64;
                    for i in 0..ntr {
                        et[[r, i]] *= w / self.norms_train[i];
                    }
                }
                for r in 0..rows {
                    dh[[j0 + r, 0]] -= et.row(r).sum();
                }
                let dgalpha = et.dot(&self.fw_train.t());
                let mut dgout = Array2::zeros((rows * ns, 1));
                for r in 0..rows {
                    for l in 0..ns {
                        dgout[[r * ns + l, 0]] = -dgalpha[[r, l]] * self.alpha[[j0 + r, l]];
                    }
                }
                netg.backward(&gtape, &dgout, gg);
            }
            if let (Some(v), Some(fwv), Some(acc)) =
                (&self.data.val, &self.fw_val, resid_val.as_mut())
            {
                let predv = galpha.dot(fwv);
                for r in 0..rows {
                    let w = self.wx[j0 + r];
                    for (i, a) in acc.iter_mut().enumerate() {
                        let ev = v.u[[j0 + r, i]] - hout[[j0 + r, 0]] - predv[[r, i]];
                        *a += w * ev * ev;
                    }
                }
            }
            j0 = j1;
        }
        if let Some((_, gh)) = grads.as_mut() {
            neth.backward(&htape, &dh, gh);
        }

        // Summing the exact ratios keeps the zero-model loss at literal 1.
        let mut total = 0.0;
        for (r, n) in resid_tr.iter().zip(&self.norms_train) {
            total += r / n;
        }
        let loss = total / ntr as f64;
        let vloss = match (resid_val, &self.norms_val) {
            (Some(rv), Some(nv)) => {
                let mut t = 0.0;
                for (r, n) in rv.iter().zip(nv) {
                    t += r / n;
                }
                Some(t / nv.len() as f64)
            }
            _ => None,
        };
        Ok((loss, vloss))
    }
}

/// The relative empirical loss of a network pair on one sample set.
pub fn loss(data: &SampleSet, netg: &RatNet, neth: &RatNet, adf: &AdfSpec) -> Result<f64> {
    let td = TrainData::new(data.clone(), None)?;
    let engine = LossEngine::new(&td, adf)?;
    Ok(engine.pass(netg, neth, None)?.0)
}

/// The loss together with its parameter cotangents, each flattened in
/// [`RatNet::params_vec`] order — for external optimizers and
/// finite-difference verification.
pub fn loss_gradients(
    data: &SampleSet,
    netg: &RatNet,
    neth: &RatNet,
    adf: &AdfSpec,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let td = TrainData::new(data.clone(), None)?;
    let engine = LossEngine::new(&td, adf)?;
    let mut gg = Grads::zeros_like(netg);
    let mut gh = Grads::zeros_like(neth);
    let (l, _) = engine.pass(netg, neth, Some((&mut gg, &mut gh)))?;
    Ok((l, gg.flat(), gh.flat()))
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Quadrature rule for the loss integrals. Sensor grids may be non-uniform;
/// weights always come from the actual spacing.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quadrature {
    #[default]
    #[serde(rename = "trapezoid")]
    Trapezoid,
}

/// Training hyperparameters. The learning rate decays exponentially,
/// `lr(t) = lr_start · (lr_end/lr_start)^{t/epochs}`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub seed: u64,
    pub quadrature: Quadrature,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            lr_start: 1e-2,
            lr_end: 1e-3,
            seed: 0,
            quadrature: Quadrature::Trapezoid,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if !(self.lr_end > 0.0 && self.lr_end <= self.lr_start && self.lr_start.is_finite()) {
            return Err(Error::InvalidArgument(
                "learning rates must satisfy 0 < lr_end <= lr_start".into(),
            ));
        }
        Ok(())
    }

    fn lr(&self, epoch: usize) -> f64 {
        self.lr_start * (self.lr_end / self.lr_start).powf(epoch as f64 / self.epochs as f64)
    }
}

/// Full-batch Adam over one flat parameter vector; β₁ = 0.9, β₂ = 0.999,
/// ε = 1e-8 (conventional values — unstated upstream).
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t as i32);
        let c2 = 1.0 - Self::BETA2.powi(self.t as i32);
        for i in 0..theta.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            theta[i] -= lr * mhat / (vhat.sqrt() + Self::EPS);
        }
    }
}

/// A trained network pair with its loss history (one entry per epoch,
/// evaluated before that epoch's update).
#[derive(Clone, Debug)]
pub struct TrainReport {
    pub netg: RatNet,
    pub neth: RatNet,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
}

/// Train `𝒩_G` and `𝒩_hom` jointly on `data` with full-batch Adam.
/// Deterministic for a fixed config: initialisation is seeded and every
/// reduction runs in a fixed order.
pub fn train(data: &TrainData, config: &TrainConfig, adf: &AdfSpec) -> Result<TrainReport> {
    config.validate()?;
    rt::init();
    let engine = LossEngine::new(data, adf)?;
    let mut netg = RatNet::green_default(*adf.xdomain(), *adf.sdomain(), config.seed);
    let mut neth = RatNet::hom_default(*adf.xdomain(), config.seed.wrapping_add(1));
    let (npg, nph) = (netg.nparams(), neth.nparams());
    let mut theta = netg.params_vec();
    theta.extend(neth.params_vec());
    let mut adam = Adam::new(npg + nph);
    let mut train_loss = Vec::with_capacity(config.epochs);
    let mut val_loss = Vec::new();

    for epoch in 0..config.epochs {
        let mut gg = Grads::zeros_like(&netg);
        let mut gh = Grads::zeros_like(&neth);
        let (tl, vl) = engine
            .pass(&netg, &neth, Some((&mut gg, &mut gh)))
            .map_err(|e| match e {
                Error::NonFiniteOutput => Error::Diverged { epoch },
                other => other,
            })?;
        if !tl.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        train_loss.push(tl);
        if let Some(v) = vl {
            val_loss.push(v);
        }
        let mut grad = gg.flat();
        grad.extend(gh.flat());
        adam.step(&mut theta, &grad, config.lr(epoch));
        netg.set_params(&theta[..npg])?;
        neth.set_params(&theta[npg..])?;
    }
    Ok(TrainReport { netg, neth, train_loss, val_loss })
}

// ---------------------------------------------------------------------------
// Conversion to a continuous model
// ---------------------------------------------------------------------------

/// The learned kernel `α(x, s) · 𝒩_G(x, s)` as a black-box bivariate
/// function for cross approximation.
struct LearnedKernel<'a> {
    net: &'a RatNet,
    adf: &'a AdfSpec,
}

impl BivariateFn for LearnedKernel<'_> {
    fn eval_grid(&self, xs: &[f64], ss: &[f64]) -> Array2<f64> {
        match self.net.eval_pairs(xs, ss) {
            Ok(mut g) => {
                g *= &self.adf.alpha_grid(xs, ss);
                g
            }
            // Non-finite grids are surfaced by the builder's own validation.
            Err(_) => Array2::from_elem((xs.len(), ss.len()), f64::NAN),
        }
    }
}

/// Convert a trained network pair into the continuous form: a singular value
/// expansion of `α·𝒩_G` (via cross approximation at the given tolerances)
/// plus the homogeneous solution resolved to `tol_x`.
pub fn to_green_model(
    netg: &RatNet,
    neth: &RatNet,
    adf: &AdfSpec,
    tol_x: Tolerance,
    tol_s: Tolerance,
    max_rank: usize,
) -> Result<(Sve, ChebSeries)> {
    let kernel = LearnedKernel { net: netg, adf };
    let cdr = build_cdr(
        &kernel,
        *adf.xdomain(),
        *adf.sdomain(),
        tol_x,
        tol_s,
        max_rank,
    )?;
    let model = sve(&cdr)?;
    let hom = ChebSeries::build_adaptive(
        |x| neth.eval_scalar(x).unwrap_or(f64::NAN),
        *adf.xdomain(),
        tol_x,
    )?;
    Ok((model, hom))
}
