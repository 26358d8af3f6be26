//! Bivariate kernels: pivoted cross approximation and the singular value
//! expansion.
//!
//! A kernel `g(x, s)` is first captured in CDR form
//!
//! ```text
//! g(x, s) ≈ g_K(x, s) = Σ_{k=1}^K D_k C_k(s) R_k(x),
//! ```
//!
//! by greedy cross approximation: at step `k` the pivot `(x_k, s_k)` is the
//! point of largest residual `|g − g_{k−1}|` over a refining Chebyshev tensor
//! probe grid, `C_k` and `R_k` are the residual slices through the pivot
//! (resolved adaptively in each variable), and `D_k` is the reciprocal pivot
//! residual, the Gaussian-elimination convention that makes the formula above
//! hold verbatim. The expansion is then orthogonalised into a singular value
//! expansion
//!
//! ```text
//! g(x, s) = Σ_k σ_k U_k(s) V_k(x),   U*U = V*V = I,  σ_1 ≥ σ_2 ≥ … ≥ 0,
//! ```
//!
//! via Householder QR of both slice quasimatrices and a dense SVD of the
//! small core matrix `R_C ·diag(D)· R_R^T`.
//!
//! Stopping is governed by `max(tol_x, tol_s) · max|g|`, floored by the
//! accumulated rounding level of the running residual: after `K` rank-one
//! downdates the probe values carry `O(K·ε·max|g|)` of roundoff, so demanding
//! less than that would loop forever on noise.

use std::cell::RefCell;
use std::collections::BTreeMap;

use ndarray::Array2;

use crate::chebcore::{cheb_points, ChebSeries, Domain1D, Tolerance};
use crate::error::{Error, Result};
use crate::linalg::svd_canonical;
use crate::quasimatrix::Quasimatrix;
use crate::rt;

/// Coarsest probe grid: degree 16, i.e. 17×17 tensor points.
const PROBE_MIN: usize = 16;
/// Finest probe grid per axis (2049 points). Beyond this, pivots cannot be
/// located more precisely; construction proceeds at this granularity.
const PROBE_MAX: usize = 2048;
/// Multiplier for the rounding floor `mult · (K+1) · ε · max|g|`.
const ROUND_FLOOR_MULT: f64 = 4.0;
/// Default cross-approximation rank cap.
pub const DEFAULT_MAX_RANK: usize = 256;

/// A bivariate function `g(x, s)` evaluable on tensor grids.
///
/// `eval_grid` is the performance-critical entry point: implementations
/// backed by a network amortise one batched forward pass over the whole
/// grid, so the builder always asks for values in bulk. Implementations
/// must be pure — the builder may fan evaluation out across workers.
pub trait BivariateFn: Sync {
    /// Values `g(x_i, s_j)` as an `xs.len() × ss.len()` matrix.
    fn eval_grid(&self, xs: &[f64], ss: &[f64]) -> Array2<f64>;

    /// Single-point convenience wrapper.
    fn eval(&self, x: f64, s: f64) -> f64 {
        self.eval_grid(&[x], &[s])[[0, 0]]
    }
}

/// Adapter giving a plain closure the [`BivariateFn`] interface.
pub struct FnKernel<F>(pub F);

impl<F: Fn(f64, f64) -> f64 + Sync> BivariateFn for FnKernel<F> {
    fn eval_grid(&self, xs: &[f64], ss: &[f64]) -> Array2<f64> {
        Array2::from_shape_fn((xs.len(), ss.len()), |(i, j)| (self.0)(xs[i], ss[j]))
    }
}

/// Rank-K cross approximation `g_K(x, s) = Σ_k D_k C_k(s) R_k(x)`.
#[derive(Clone, Debug)]
pub struct BivariateCdr {
    xdomain: Domain1D,
    sdomain: Domain1D,
    /// Column slices, functions of `s`.
    c: Quasimatrix,
    /// Row slices, functions of `x`.
    r: Quasimatrix,
    /// Reciprocal pivot residuals.
    d: Vec<f64>,
    /// Set when construction stopped at `max_rank` before reaching the
    /// stopping threshold; the representation is the best found so far.
    rank_capped: bool,
}

impl BivariateCdr {
    fn empty(xdomain: Domain1D, sdomain: Domain1D) -> Self {
        Self {
            xdomain,
            sdomain,
            c: Quasimatrix::empty(sdomain),
            r: Quasimatrix::empty(xdomain),
            d: Vec::new(),
            rank_capped: false,
        }
    }

    pub fn rank(&self) -> usize {
        self.d.len()
    }

    pub fn xdomain(&self) -> &Domain1D {
        &self.xdomain
    }

    pub fn sdomain(&self) -> &Domain1D {
        &self.sdomain
    }

    /// Column slices (functions of `s`).
    pub fn c(&self) -> &Quasimatrix {
        &self.c
    }

    /// Row slices (functions of `x`).
    pub fn r(&self) -> &Quasimatrix {
        &self.r
    }

    /// Reciprocal pivot residuals `D_k`.
    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn rank_capped(&self) -> bool {
        self.rank_capped
    }

    /// `Σ_k D_k C_k(s) R_k(x)`.
    pub fn eval2(&self, x: f64, s: f64) -> f64 {
        self.d
            .iter()
            .enumerate()
            .map(|(k, dk)| dk * self.c.col(k).eval(s) * self.r.col(k).eval(x))
            .sum()
    }
}

impl BivariateFn for BivariateCdr {
    fn eval_grid(&self, xs: &[f64], ss: &[f64]) -> Array2<f64> {
        factored_grid_eval(&self.r, &self.c, &self.d, xs, ss)
    }
}

/// Singular value expansion `g(x, s) = Σ_k σ_k U_k(s) V_k(x)`.
#[derive(Clone, Debug)]
pub struct Sve {
    /// Left singular functions, columns in `s`.
    u: Quasimatrix,
    /// Right singular functions, columns in `x`.
    v: Quasimatrix,
    sigma: Vec<f64>,
}

impl Sve {
    /// Assemble from parts. Shapes and domains are validated; orthonormality
    /// and the ordering of `sigma` are the caller's responsibility ([`sve`]
    /// guarantees both, whereas interpolated expansions may legitimately
    /// carry non-monotone `sigma` near a spectral crossing).
    pub fn new(u: Quasimatrix, v: Quasimatrix, sigma: Vec<f64>) -> Result<Self> {
        if u.ncols() != sigma.len() || v.ncols() != sigma.len() {
            return Err(Error::ShapeMismatch {
                cols: u.ncols(),
                rows: v.ncols(),
                mcols: sigma.len(),
            });
        }
        if sigma.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument(
                "singular values must be finite".into(),
            ));
        }
        Ok(Self { u, v, sigma })
    }

    /// The rank-0 expansion of the zero kernel.
    pub fn empty(xdomain: Domain1D, sdomain: Domain1D) -> Self {
        Self {
            u: Quasimatrix::empty(sdomain),
            v: Quasimatrix::empty(xdomain),
            sigma: Vec::new(),
        }
    }

    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    /// Left singular functions (of `s`).
    pub fn u(&self) -> &Quasimatrix {
        &self.u
    }

    /// Right singular functions (of `x`).
    pub fn v(&self) -> &Quasimatrix {
        &self.v
    }

    pub fn xdomain(&self) -> &Domain1D {
        self.v.domain()
    }

    pub fn sdomain(&self) -> &Domain1D {
        self.u.domain()
    }

    /// Keep the leading `rank` terms.
    pub fn truncate(&self, rank: usize) -> Self {
        let k = rank.min(self.rank());
        Self {
            u: self.u.take_cols(k),
            v: self.v.take_cols(k),
            sigma: self.sigma[..k].to_vec(),
        }
    }

    /// `Σ_k σ_k U_k(s) V_k(x)`.
    pub fn eval2(&self, x: f64, s: f64) -> f64 {
        self.sigma
            .iter()
            .enumerate()
            .map(|(k, sk)| sk * self.u.col(k).eval(s) * self.v.col(k).eval(x))
            .sum()
    }
}

impl BivariateFn for Sve {
    fn eval_grid(&self, xs: &[f64], ss: &[f64]) -> Array2<f64> {
        factored_grid_eval(&self.v, &self.u, &self.sigma, xs, ss)
    }
}

/// Tensor-grid evaluation of `Σ_k w_k xcols_k(x) scols_k(s)` as one GEMM.
fn factored_grid_eval(
    xcols: &Quasimatrix,
    scols: &Quasimatrix,
    w: &[f64],
    xs: &[f64],
    ss: &[f64],
) -> Array2<f64> {
    if w.is_empty() {
        return Array2::zeros((xs.len(), ss.len()));
    }
    rt::init();
    let k = w.len();
    let mut xv = Array2::<f64>::zeros((xs.len(), k));
    for (j, col) in xcols.cols()[..k].iter().enumerate() {
        for (i, v) in col.eval_many(xs).into_iter().enumerate() {
            xv[[i, j]] = v;
        }
    }
    let mut sv = Array2::<f64>::zeros((k, ss.len()));
    for (j, col) in scols.cols()[..k].iter().enumerate() {
        for (i, v) in col.eval_many(ss).into_iter().enumerate() {
            sv[[j, i]] = w[j] * v;
        }
    }
    xv.dot(&sv)
}

/// Per-axis cache of slice values on the nested Chebyshev grids, keyed by
/// grid degree. Every cached level holds one value row per slice built so
/// far; rows are appended as slices are created and whole levels are filled
/// in lazily the first time a degree is touched.
type LevelCache = RefCell<BTreeMap<usize, Vec<Vec<f64>>>>;

fn ensure_level(cache: &LevelCache, slices: &[ChebSeries], n: usize) {
    let mut map = cache.borrow_mut();
    map.entry(n)
        .or_insert_with(|| slices.iter().map(|c| c.sample_cheb(n)).collect());
}

struct CrossBuilder<'a, G: BivariateFn + ?Sized> {
    g: &'a G,
    xd: Domain1D,
    sd: Domain1D,
    tol_x: f64,
    tol_s: f64,
    /// Probe grid degrees per axis.
    nx: usize,
    ns: usize,
    xpts: Vec<f64>,
    spts: Vec<f64>,
    /// `g` on the probe grid, `(nx+1) × (ns+1)`.
    gvals: Array2<f64>,
    /// Running residual `g − g_k` on the probe grid.
    resid: Array2<f64>,
    /// Largest `|g|` seen on any probe grid so far.
    gmax: f64,
    cslices: Vec<ChebSeries>,
    rslices: Vec<ChebSeries>,
    d: Vec<f64>,
    ccache: LevelCache,
    rcache: LevelCache,
}

impl<'a, G: BivariateFn + ?Sized> CrossBuilder<'a, G> {
    fn new(g: &'a G, xd: Domain1D, sd: Domain1D, tol_x: f64, tol_s: f64) -> Result<Self> {
        let mut b = Self {
            g,
            xd,
            sd,
            tol_x,
            tol_s,
            nx: PROBE_MIN,
            ns: PROBE_MIN,
            xpts: Vec::new(),
            spts: Vec::new(),
            gvals: Array2::zeros((0, 0)),
            resid: Array2::zeros((0, 0)),
            gmax: 0.0,
            cslices: Vec::new(),
            rslices: Vec::new(),
            d: Vec::new(),
            ccache: RefCell::new(BTreeMap::new()),
            rcache: RefCell::new(BTreeMap::new()),
        };
        b.reprobe()?;
        Ok(b)
    }

    /// Rebuild probe points, kernel values and the residual after a grid
    /// change (also used once at startup).
    fn reprobe(&mut self) -> Result<()> {
        self.xpts = cheb_points(self.nx, &self.xd);
        self.spts = cheb_points(self.ns, &self.sd);
        self.gvals = self.g.eval_grid(&self.xpts, &self.spts);
        if self.gvals.shape() != [self.xpts.len(), self.spts.len()] {
            return Err(Error::InvalidArgument(
                "kernel returned a grid of the wrong shape".into(),
            ));
        }
        let mut m = 0.0f64;
        for &v in &self.gvals {
            if !v.is_finite() {
                return Err(Error::InvalidArgument(
                    "kernel produced a non-finite value on the probe grid".into(),
                ));
            }
            m = m.max(v.abs());
        }
        self.gmax = self.gmax.max(m);
        ensure_level(&self.ccache, &self.cslices, self.ns);
        ensure_level(&self.rcache, &self.rslices, self.nx);
        self.resid = self.gvals.clone();
        if !self.d.is_empty() {
            let cm = self.ccache.borrow();
            let rm = self.rcache.borrow();
            let k = self.d.len();
            let mut dc = Array2::<f64>::zeros((k, self.spts.len()));
            for (i, row) in cm[&self.ns].iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    dc[[i, j]] = self.d[i] * v;
                }
            }
            let mut rv = Array2::<f64>::zeros((self.xpts.len(), k));
            for (i, row) in rm[&self.nx].iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    rv[[j, i]] = v;
                }
            }
            self.resid -= &rv.dot(&dc);
        }
        Ok(())
    }

    /// Double both probe axes (where not yet at the cap). Returns whether
    /// anything changed.
    fn refine(&mut self) -> Result<bool> {
        let mut changed = false;
        if self.nx < PROBE_MAX {
            self.nx *= 2;
            changed = true;
        }
        if self.ns < PROBE_MAX {
            self.ns *= 2;
            changed = true;
        }
        if changed {
            self.reprobe()?;
        }
        Ok(changed)
    }

    /// Keep each probe axis at least twice as fine as the slices it must
    /// resolve, so the pivot search does not alias past slice oscillations.
    fn refine_for_degree(&mut self) -> Result<bool> {
        let dx = self.rslices.iter().map(|c| c.degree()).max().unwrap_or(0);
        let ds = self.cslices.iter().map(|c| c.degree()).max().unwrap_or(0);
        let mut changed = false;
        while self.nx < PROBE_MAX && 2 * dx > self.nx {
            self.nx *= 2;
            changed = true;
        }
        while self.ns < PROBE_MAX && 2 * ds > self.ns {
            self.ns *= 2;
            changed = true;
        }
        if changed {
            self.reprobe()?;
        }
        Ok(changed)
    }

    fn at_cap(&self) -> bool {
        self.nx >= PROBE_MAX && self.ns >= PROBE_MAX
    }

    /// Position and value of the largest-magnitude probe residual. Ties go
    /// to the first entry in row-major order, keeping runs reproducible.
    fn pivot(&self) -> (usize, usize, f64) {
        let mut best = (0, 0, 0.0f64);
        for (i, row) in self.resid.outer_iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v.abs() > best.2.abs() {
                    best = (i, j, v);
                }
            }
        }
        best
    }

    /// Accumulated rounding level of the running residual: `K` rank-one
    /// downdates each contribute `O(ε·max|g|)`.
    fn round_floor(&self) -> f64 {
        ROUND_FLOOR_MULT * (self.d.len() as f64 + 1.0) * f64::EPSILON * self.gmax
    }

    fn stop_threshold(&self) -> f64 {
        (self.tol_x.max(self.tol_s) * self.gmax).max(self.round_floor())
    }

    /// Append the pivot `(x_k, s_k)` at probe indices `(ix, is)`: build both
    /// residual slices, extend the caches, and downdate the probe residual.
    fn add_slice(&mut self, ix: usize, is: usize) -> Result<()> {
        let x_k = self.xpts[ix];
        let s_k = self.spts[is];
        let r = self.resid[[ix, is]];
        // Slice tolerances are relative to the slice's own scale (≈ |r|);
        // the rounding floor keeps cancellation noise in the sampled
        // residual from masquerading as unresolved structure.
        let eps_c = effective_eps(self.tol_s, self.round_floor(), r);
        let eps_r = effective_eps(self.tol_x, self.round_floor(), r);

        // Column slice s ↦ g(x_k, s) − g_{k−1}(x_k, s). Sampling starts at
        // the probe resolution: the pivot was located there, and a coarser
        // start could converge spuriously before seeing the feature.
        let col = {
            let w: Vec<f64> = {
                let rm = self.rcache.borrow();
                rm[&self.nx].iter().zip(&self.d).map(|(row, dk)| dk * row[ix]).collect()
            };
            let (g, ccache, cslices, n0) = (self.g, &self.ccache, &self.cslices, self.ns);
            let mut call = 0usize;
            ChebSeries::build_adaptive_batch_from(
                |pts| {
                    let n = n0 << call;
                    call += 1;
                    ensure_level(ccache, cslices, n);
                    let map = ccache.borrow();
                    let lev = &map[&n];
                    let gr = g.eval_grid(&[x_k], pts);
                    (0..pts.len())
                        .map(|i| {
                            // First call covers the full grid; later calls
                            // get the odd-index points of the doubled grid.
                            let idx = if call == 1 { i } else { 2 * i + 1 };
                            let mut v = gr[[0, i]];
                            for (wj, cj) in w.iter().zip(lev.iter()) {
                                v -= wj * cj[idx];
                            }
                            v
                        })
                        .collect()
                },
                self.sd,
                Tolerance::new(eps_c)?,
                n0,
            )?
        };

        // Row slice x ↦ g(x, s_k) − g_{k−1}(x, s_k), from the same residual.
        let row = {
            let w: Vec<f64> = {
                let cm = self.ccache.borrow();
                cm[&self.ns].iter().zip(&self.d).map(|(row, dk)| dk * row[is]).collect()
            };
            let (g, rcache, rslices, n0) = (self.g, &self.rcache, &self.rslices, self.nx);
            let mut call = 0usize;
            ChebSeries::build_adaptive_batch_from(
                |pts| {
                    let n = n0 << call;
                    call += 1;
                    ensure_level(rcache, rslices, n);
                    let map = rcache.borrow();
                    let lev = &map[&n];
                    let gc = g.eval_grid(pts, &[s_k]);
                    (0..pts.len())
                        .map(|i| {
                            let idx = if call == 1 { i } else { 2 * i + 1 };
                            let mut v = gc[[i, 0]];
                            for (wj, rj) in w.iter().zip(lev.iter()) {
                                v -= wj * rj[idx];
                            }
                            v
                        })
                        .collect()
                },
                self.xd,
                Tolerance::new(eps_r)?,
                n0,
            )?
        };

        let dk = 1.0 / r;
        for (n, rows) in self.ccache.borrow_mut().iter_mut() {
            rows.push(col.sample_cheb(*n));
        }
        for (n, rows) in self.rcache.borrow_mut().iter_mut() {
            rows.push(row.sample_cheb(*n));
        }
        {
            let cm = self.ccache.borrow();
            let rm = self.rcache.borrow();
            let k = self.d.len();
            let cv = &cm[&self.ns][k];
            let rv = &rm[&self.nx][k];
            for (i, mut rrow) in self.resid.outer_iter_mut().enumerate() {
                let a = dk * rv[i];
                for (j, e) in rrow.iter_mut().enumerate() {
                    *e -= a * cv[j];
                }
            }
        }
        self.cslices.push(col);
        self.rslices.push(row);
        self.d.push(dk);
        Ok(())
    }

    fn finish(self, rank_capped: bool) -> Result<BivariateCdr> {
        if self.d.is_empty() {
            return Ok(BivariateCdr::empty(self.xd, self.sd));
        }
        Ok(BivariateCdr {
            xdomain: self.xd,
            sdomain: self.sd,
            c: Quasimatrix::new(self.cslices)?,
            r: Quasimatrix::new(self.rslices)?,
            d: self.d,
            rank_capped,
        })
    }
}

/// Slice-resolution tolerance: the requested relative tolerance, floored by
/// the residual rounding level expressed relative to the slice scale.
fn effective_eps(tol: f64, floor_abs: f64, pivot: f64) -> f64 {
    let rel_floor = if pivot != 0.0 {
        floor_abs / pivot.abs()
    } else {
        0.0
    };
    tol.max(rel_floor).min(0.5)
}

/// Greedy pivoted cross approximation of `g` on `xd × sd`.
///
/// Pivots maximise the probe-grid residual; the search grid starts at 17×17
/// and doubles whenever built slices oscillate near its resolution or when a
/// tentative convergence must be confirmed on a finer grid. Construction
/// stops once the largest residual falls under
/// `max(tol_x, tol_s) · max|g|` (or under the rounding floor), or at
/// `max_rank`, in which case the best representation found so far is
/// returned with [`BivariateCdr::rank_capped`] set. An identically zero
/// kernel yields the rank-0 representation.
pub fn build_cdr<G: BivariateFn + ?Sized>(
    g: &G,
    xd: Domain1D,
    sd: Domain1D,
    tol_x: Tolerance,
    tol_s: Tolerance,
    max_rank: usize,
) -> Result<BivariateCdr> {
    rt::init();
    let mut b = CrossBuilder::new(g, xd, sd, tol_x.eps_rel(), tol_s.eps_rel())?;
    if b.gmax == 0.0 {
        // Confirm the zero kernel on one refinement before giving up.
        b.refine()?;
        if b.gmax == 0.0 {
            return Ok(BivariateCdr::empty(xd, sd));
        }
    }
    let mut just_refined = false;
    let mut rank_capped = false;
    loop {
        if b.refine_for_degree()? {
            just_refined = true;
        }
        let (ix, is, r) = b.pivot();
        if r.abs() <= b.stop_threshold() {
            // Converged — but only trust a maximum measured on a grid finer
            // than the one that placed the last pivot.
            if just_refined || b.at_cap() {
                break;
            }
            b.refine()?;
            just_refined = true;
            continue;
        }
        if b.d.len() == max_rank {
            rank_capped = true;
            break;
        }
        b.add_slice(ix, is)?;
        just_refined = false;
    }
    b.finish(rank_capped)
}

/// Convert a CDR representation to a singular value expansion.
///
/// Slices are normalised (their magnitudes folded into the core diagonal),
/// both quasimatrices are QR-factorised, and the small matrix
/// `A = R_C ·diag(D)· R_R^T` is decomposed densely: with `A = U_A S V_A^T`,
/// the expansion is `U = Q_C U_A`, `V = Q_R V_A`, `σ = diag(S)`.
pub fn sve(cdr: &BivariateCdr) -> Result<Sve> {
    rt::init();
    let mut cn = Vec::new();
    let mut rn = Vec::new();
    let mut dn = Vec::new();
    for k in 0..cdr.rank() {
        let (ck, rk) = (cdr.c.col(k), cdr.r.col(k));
        let (ncv, nrv) = (ck.norm(), rk.norm());
        if ncv == 0.0 || nrv == 0.0 {
            // A vanishing slice contributes nothing to the reconstruction.
            continue;
        }
        cn.push(ChebSeries::linear_combination(&[(1.0 / ncv, ck)])?);
        rn.push(ChebSeries::linear_combination(&[(1.0 / nrv, rk)])?);
        dn.push(cdr.d[k] * ncv * nrv);
    }
    if dn.is_empty() {
        return Ok(Sve::empty(cdr.xdomain, cdr.sdomain));
    }
    let (qc, rc) = Quasimatrix::new(cn)?.householder_qr()?;
    let (qr, rr) = Quasimatrix::new(rn)?.householder_qr()?;
    let k = dn.len();
    let mut core = Array2::<f64>::zeros((k, k));
    for j in 0..k {
        for i in 0..k {
            let mut a = 0.0f64;
            for (l, dl) in dn.iter().enumerate() {
                a += rc[[i, l]] * dl * rr[[j, l]];
            }
            core[[i, j]] = a;
        }
    }
    let (ua, sig, vta) = svd_canonical(&core)?;
    let u = qc.matmul(&ua.view())?;
    let v = qr.matmul(&vta.t())?;
    Sve::new(u, v, sig.to_vec())
}

/// Apply the learned solution operator: `ũ = V ·diag(σ)· (U* f) + ℋ`.
///
/// `f` must live on the source domain of the expansion and `hom` on the
/// response domain; the integrals `⟨U_k, f⟩` are exact for polynomial data.
pub fn apply_operator(model: &Sve, hom: &ChebSeries, f: &ChebSeries) -> Result<ChebSeries> {
    f.domain().require_same(model.sdomain())?;
    hom.domain().require_same(model.xdomain())?;
    if model.rank() == 0 {
        return Ok(hom.clone());
    }
    let w = model.u.inner_fn(f)?;
    let mut terms: Vec<(f64, &ChebSeries)> = model
        .sigma
        .iter()
        .enumerate()
        .map(|(k, sk)| (sk * w[k], model.v.col(k)))
        .collect();
    terms.push((1.0, hom));
    ChebSeries::linear_combination(&terms)
}

#[cfg(test)]
mod tests;
