//! Interpolation of singular value expansions across the model parameter θ
//! by tangent-space interpolation on an infinite-dimensional Stiefel
//! manifold.
//!
//! The left and right singular functions of an expansion live on the
//! manifold `S_K` of L²-orthonormal K-frames `Φ = [φ_1, …, φ_K]` with
//! `Φ*Φ = I_K`.  Its tangent space at `Φ` is
//!
//! ```text
//! T_Φ S_K = { Ψ : Φ*Ψ + Ψ*Φ = 0 },
//! ```
//!
//! and the orthogonal projection onto it is
//!
//! ```text
//! P_Φ(Ψ) = Ψ − Φ sym(Φ*Ψ),        sym(A) = (A + Aᵀ)/2.
//! ```
//!
//! Given a library of expansions `{U(θ_j), Σ(θ_j), V(θ_j)}` the unseen
//! parameter θ* is reached in four steps.  A base instance θ₀ nearest to θ*
//! is chosen; every other instance is aligned to it by greedily matching
//! singular functions through `argmax_ℓ |⟨U_ℓ(θ_j), U_k(θ₀)⟩|` and flipping
//! the sign of the pairs `(U_k, V_k)` whose inner product with the base is
//! negative (singular functions are unique only up to order near spectral
//! crossings and up to sign everywhere).  The aligned frames are lifted to
//! the base tangent space, `Γ_j = U(θ_j) − U(θ₀) sym(U*(θ₀) U(θ_j))`, the
//! lifts and the singular values are combined with Lagrange cardinal
//! weights in θ, and the result is retracted back onto the manifold with
//! the orthonormal QR factor, `U* = qf(U(θ₀) + Γ*)`.  A final match/sign
//! pass restores the base ordering.
//!
//! The retraction and projection carry quantitative error bounds — the
//! retraction deviates from the straight-line step by `O(t²)` and the
//! projected geodesic chord from `tΓ` by `O(t³)` inside the injectivity
//! radius π — which [`stiefel_exp`] makes checkable by computing the exact
//! geodesic with the 2K×2K matrix exponential
//!
//! ```text
//! γ(t) = [Φ, Γ] exp(t [[A, −S], [I, A]]) [I; 0] exp(−tA),
//! A = Φ*Γ,  S = Γ*Γ.
//! ```

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::bivariate::Sve;
use crate::chebcore::{ChebSeries, Domain1D};
use crate::error::{Error, Result};
use crate::linalg::expm;
use crate::quasimatrix::Quasimatrix;

/// Largest Frobenius defect `‖Φ*Φ − I‖` accepted for a manifold point.
pub const ORTHO_TOL: f64 = 1e-9;

/// Largest skew defect `‖Φ*Γ + Γ*Φ‖ / ‖Γ‖` accepted for a tangent element.
pub const SKEW_TOL: f64 = 1e-9;

/// Absolute skew-defect floor.  A numerically zero element (for instance
/// the projection of the base point itself) has both defect and norm at
/// rounding level, where the relative test is meaningless; defects below
/// this are indistinguishable from inner-product rounding of O(1) frames.
const SKEW_ABS_FLOOR: f64 = 1e-13;

fn fro(m: &Array2<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Frobenius norm of `Φ*Φ − I`, the distance of a frame from the manifold.
pub fn orthonormality_defect(q: &Quasimatrix) -> Result<f64> {
    let mut g = q.inner(q)?;
    for i in 0..q.ncols() {
        g[[i, i]] -= 1.0;
    }
    Ok(fro(&g))
}

fn require_orthonormal(q: &Quasimatrix) -> Result<()> {
    let defect = orthonormality_defect(q)?;
    if defect > ORTHO_TOL {
        return Err(Error::NotOrthonormalBase { defect });
    }
    Ok(())
}

fn require_equal_rank(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch {
            cols: a,
            rows: b,
            mcols: b,
        });
    }
    Ok(())
}

/// Exact sign flip: every coefficient negated, representation length kept.
fn negate(f: &ChebSeries) -> ChebSeries {
    ChebSeries::from_coeffs(*f.domain(), f.coeffs().iter().map(|c| -c).collect())
}

fn permute_cols(q: &Quasimatrix, perm: &[usize]) -> Result<Quasimatrix> {
    Quasimatrix::new(perm.iter().map(|&l| q.col(l).clone()).collect())
}

/// A parameterised singular value expansion `G(x, s; θ) ≈ Σ_k σ_k U_k(s)
/// V_k(x)` together with the homogeneous response `ℋ(x)` of the underlying
/// operator.
#[derive(Clone, Debug)]
pub struct SveModel {
    sve: Sve,
    hom: ChebSeries,
    theta: f64,
}

impl SveModel {
    /// Validating constructor: both factor sets orthonormal within
    /// [`ORTHO_TOL`], singular values non-negative and descending, the
    /// homogeneous part on the kernel's `x` domain.
    pub fn new(sve: Sve, hom: ChebSeries, theta: f64) -> Result<Self> {
        if !theta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "model parameter must be finite, got {theta}"
            )));
        }
        if sve.rank() == 0 {
            return Err(Error::EmptyQuasimatrix);
        }
        sve.xdomain().require_same(hom.domain())?;
        let descending = sve.sigma().windows(2).all(|w| w[1] <= w[0]);
        if sve.sigma().iter().any(|&s| s < 0.0) || !descending {
            return Err(Error::InvalidArgument(
                "singular values must be non-negative and descending".into(),
            ));
        }
        require_orthonormal(sve.u())?;
        require_orthonormal(sve.v())?;
        Ok(Self { sve, hom, theta })
    }

    /// Assemble without the ordering check.  Mode matching permutes σ and
    /// Lagrange interpolation can leave it non-monotone near a spectral
    /// crossing; orthonormality still holds for every caller by
    /// construction (permutation, paired sign flips, or a fresh QR factor).
    pub(crate) fn assemble(sve: Sve, hom: ChebSeries, theta: f64) -> Self {
        Self { sve, hom, theta }
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn rank(&self) -> usize {
        self.sve.rank()
    }

    pub fn sigma(&self) -> &[f64] {
        self.sve.sigma()
    }

    /// Left singular functions (of `s`).
    pub fn u(&self) -> &Quasimatrix {
        self.sve.u()
    }

    /// Right singular functions (of `x`).
    pub fn v(&self) -> &Quasimatrix {
        self.sve.v()
    }

    pub fn sve(&self) -> &Sve {
        &self.sve
    }

    /// Homogeneous response `ℋ(x)` added to every kernel prediction.
    pub fn hom(&self) -> &ChebSeries {
        &self.hom
    }

    pub fn xdomain(&self) -> &Domain1D {
        self.sve.xdomain()
    }

    pub fn sdomain(&self) -> &Domain1D {
        self.sve.sdomain()
    }

    /// Kernel value `G(x, s) = Σ_k σ_k U_k(s) V_k(x)`.
    pub fn eval_kernel(&self, x: f64, s: f64) -> f64 {
        self.sve.eval2(x, s)
    }

    /// Keep the leading `rank` terms.
    pub fn truncate(&self, rank: usize) -> Self {
        Self {
            sve: self.sve.truncate(rank),
            hom: self.hom.clone(),
            theta: self.theta,
        }
    }
}

/// An ordered family of [`SveModel`]s at distinct θ, truncated to a common
/// rank so that every frame lives on the same manifold `S_K`.
#[derive(Clone, Debug)]
pub struct ModelLibrary {
    models: Vec<SveModel>,
    rank: usize,
}

impl ModelLibrary {
    /// Sorts by θ, rejects duplicate parameters and mixed domains, and
    /// truncates every model to the minimum shared rank.
    pub fn new(models: Vec<SveModel>) -> Result<Self> {
        if models.len() < 2 {
            return Err(Error::InsufficientModels(models.len()));
        }
        let mut models = models;
        models.sort_by(|a, b| a.theta.total_cmp(&b.theta));
        for w in models.windows(2) {
            if w[0].theta == w[1].theta {
                return Err(Error::DegenerateNodes(w[0].theta));
            }
            w[0].xdomain().require_same(w[1].xdomain())?;
            w[0].sdomain().require_same(w[1].sdomain())?;
        }
        let rank = models.iter().map(|m| m.rank()).min().unwrap();
        let models = models.iter().map(|m| m.truncate(rank)).collect();
        Ok(Self { models, rank })
    }

    pub fn models(&self) -> &[SveModel] {
        &self.models
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Common truncation rank `K`.
    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Parameters in ascending order.
    pub fn thetas(&self) -> Vec<f64> {
        self.models.iter().map(|m| m.theta).collect()
    }
}

/// An element `Γ` of the tangent space at some base frame, kept skew by
/// construction: projections create it, linear combinations preserve it.
#[derive(Clone, Debug)]
pub struct TangentElement {
    gamma: Quasimatrix,
}

impl TangentElement {
    /// Wrap a quasimatrix after checking the skew condition
    /// `‖Φ*Γ + Γ*Φ‖ ≤ SKEW_TOL · ‖Γ‖` at the given base.
    pub fn new(base: &Quasimatrix, gamma: Quasimatrix) -> Result<Self> {
        require_equal_rank(gamma.ncols(), base.ncols())?;
        let a = base.inner(&gamma)?;
        let defect = fro(&(&a + &a.t()));
        if defect > SKEW_TOL * gamma.hs_norm() && defect > SKEW_ABS_FLOOR {
            return Err(Error::InvalidArgument(format!(
                "not a tangent vector: skew defect {defect:.3e} exceeds \
                 {SKEW_TOL:.0e} relative to the element norm"
            )));
        }
        Ok(Self { gamma })
    }

    pub fn gamma(&self) -> &Quasimatrix {
        &self.gamma
    }

    pub fn hs_norm(&self) -> f64 {
        self.gamma.hs_norm()
    }

    /// `t · Γ`; scaling stays in the (linear) tangent space.
    pub fn scale(&self, t: f64) -> Result<Self> {
        let cols = self
            .gamma
            .cols()
            .iter()
            .map(|c| ChebSeries::linear_combination(&[(t, c)]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            gamma: Quasimatrix::new(cols)?,
        })
    }
}

/// Index of the library model nearest to `theta_star`; ties go to the
/// smaller θ (the library is sorted ascending).
pub fn select_base(library: &ModelLibrary, theta_star: f64) -> usize {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (j, m) in library.models().iter().enumerate() {
        let d = (m.theta() - theta_star).abs();
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

/// Reorder a model's singular triples so that its k-th left singular
/// function has the minimal angle with the base's k-th one: greedily pick
/// `argmax_ℓ |⟨U_ℓ(model), U_k(base)⟩|` for `k = 1..K` without replacement
/// and permute `(U, σ, V)` together, which leaves the reconstructed kernel
/// bit-identical.
pub fn match_modes(model: &SveModel, base: &SveModel) -> Result<SveModel> {
    require_equal_rank(model.rank(), base.rank())?;
    let k = base.rank();
    let m = model.u().inner(base.u())?;
    let mut used = vec![false; k];
    let mut perm = Vec::with_capacity(k);
    for kk in 0..k {
        let mut pick = usize::MAX;
        let mut best = -1.0;
        for (l, u) in used.iter().enumerate() {
            if !u && m[[l, kk]].abs() > best {
                best = m[[l, kk]].abs();
                pick = l;
            }
        }
        used[pick] = true;
        perm.push(pick);
    }
    let sigma = perm.iter().map(|&l| model.sigma()[l]).collect();
    let sve = Sve::new(
        permute_cols(model.u(), &perm)?,
        permute_cols(model.v(), &perm)?,
        sigma,
    )?;
    Ok(SveModel::assemble(sve, model.hom().clone(), model.theta()))
}

/// Flip the sign of every pair `(U_k, V_k)` whose left factor points away
/// from the base, so that `⟨U_k(model), U_k(base)⟩ ≥ 0` for all k.  Paired
/// flips leave `U Σ V*` unchanged exactly.
pub fn fix_signs(model: &SveModel, base: &SveModel) -> Result<SveModel> {
    require_equal_rank(model.rank(), base.rank())?;
    let mut ucols = Vec::with_capacity(model.rank());
    let mut vcols = Vec::with_capacity(model.rank());
    for k in 0..model.rank() {
        let d = model.u().col(k).inner_product(base.u().col(k))?;
        if d < 0.0 {
            ucols.push(negate(model.u().col(k)));
            vcols.push(negate(model.v().col(k)));
        } else {
            ucols.push(model.u().col(k).clone());
            vcols.push(model.v().col(k).clone());
        }
    }
    let sve = Sve::new(
        Quasimatrix::new(ucols)?,
        Quasimatrix::new(vcols)?,
        model.sigma().to_vec(),
    )?;
    Ok(SveModel::assemble(sve, model.hom().clone(), model.theta()))
}

/// Orthogonal projection onto the tangent space at `base`:
/// `Γ = Ψ − Φ sym(Φ*Ψ)`.
pub fn project_tangent(base: &Quasimatrix, point: &Quasimatrix) -> Result<TangentElement> {
    require_orthonormal(base)?;
    require_equal_rank(point.ncols(), base.ncols())?;
    let a = base.inner(point)?;
    let sym = (&a + &a.t()) * 0.5;
    let gamma = point.add_scaled(-1.0, &base.matmul(&sym.view())?)?;
    TangentElement::new(base, gamma)
}

/// Lagrange cardinal weights `w_j(θ*) = Π_{m≠j} (θ* − θ_m)/(θ_j − θ_m)`.
///
/// When θ* coincides bitwise with a node the weights come out exactly
/// one-hot (the zero numerator and the `x/x = 1` quotient are both exact).
pub fn lagrange_weights(nodes: &[f64], theta_star: f64) -> Result<Vec<f64>> {
    if nodes.is_empty() {
        return Err(Error::InvalidArgument(
            "interpolation needs at least one node".into(),
        ));
    }
    if nodes.iter().any(|n| !n.is_finite()) || !theta_star.is_finite() {
        return Err(Error::InvalidArgument(
            "interpolation nodes and target must be finite".into(),
        ));
    }
    for (j, &nj) in nodes.iter().enumerate() {
        if nodes[..j].contains(&nj) {
            return Err(Error::DegenerateNodes(nj));
        }
    }
    let mut w = Vec::with_capacity(nodes.len());
    for (j, &nj) in nodes.iter().enumerate() {
        let mut wj = 1.0;
        for (m, &nm) in nodes.iter().enumerate() {
            if m != j {
                wj *= (theta_star - nm) / (nj - nm);
            }
        }
        w.push(wj);
    }
    Ok(w)
}

/// Shared plumbing for the typed interpolants: validates shapes and nodes,
/// and returns the stored value bitwise when θ* hits a node.
fn lagrange_apply<T: Clone>(
    nodes: &[f64],
    values: &[T],
    theta_star: f64,
    combine: impl FnOnce(&[f64], &[T]) -> Result<T>,
) -> Result<T> {
    require_equal_rank(values.len(), nodes.len())?;
    let w = lagrange_weights(nodes, theta_star)?;
    if let Some(j) = nodes.iter().position(|&n| n == theta_star) {
        return Ok(values[j].clone());
    }
    combine(&w, values)
}

/// Lagrange interpolation of per-mode value vectors (singular values).
pub fn lagrange_interp_vector(
    nodes: &[f64],
    values: &[Vec<f64>],
    theta_star: f64,
) -> Result<Vec<f64>> {
    lagrange_apply(nodes, values, theta_star, |w, vals| {
        let len = vals[0].len();
        for v in vals {
            require_equal_rank(v.len(), len)?;
        }
        let mut out = vec![0.0; len];
        for (wj, v) in w.iter().zip(vals) {
            for (o, x) in out.iter_mut().zip(v) {
                *o += wj * x;
            }
        }
        Ok(out)
    })
}

/// Lagrange interpolation of Chebyshev series, coefficientwise after
/// zero-padding to the longest operand (homogeneous responses).
pub fn lagrange_interp_series(
    nodes: &[f64],
    values: &[ChebSeries],
    theta_star: f64,
) -> Result<ChebSeries> {
    lagrange_apply(nodes, values, theta_star, |w, vals| {
        let terms: Vec<(f64, &ChebSeries)> = w.iter().copied().zip(vals).collect();
        ChebSeries::linear_combination(&terms)
    })
}

/// Columnwise Lagrange interpolation of quasimatrices of equal rank.
pub fn lagrange_interp_quasimatrix(
    nodes: &[f64],
    values: &[Quasimatrix],
    theta_star: f64,
) -> Result<Quasimatrix> {
    lagrange_apply(nodes, values, theta_star, |w, vals| {
        let k = vals[0].ncols();
        for v in vals {
            require_equal_rank(v.ncols(), k)?;
        }
        let mut cols = Vec::with_capacity(k);
        for j in 0..k {
            let terms: Vec<(f64, &ChebSeries)> =
                w.iter().copied().zip(vals.iter().map(|v| v.col(j))).collect();
            cols.push(ChebSeries::linear_combination(&terms)?);
        }
        Quasimatrix::new(cols)
    })
}

/// Lagrange interpolation of tangent elements lifted at a common base; the
/// tangent space is linear, so the combination needs no re-projection.
pub fn lagrange_interp_tangents(
    nodes: &[f64],
    values: &[TangentElement],
    theta_star: f64,
) -> Result<TangentElement> {
    let gammas: Vec<Quasimatrix> = values.iter().map(|t| t.gamma.clone()).collect();
    let gamma = lagrange_interp_quasimatrix(nodes, &gammas, theta_star)?;
    Ok(TangentElement { gamma })
}

/// Riemannian exponential on `S_K` for the metric inherited from L²:
/// `γ(t) = [Φ, Γ] exp(t [[A, −S], [I, A]]) [I; 0] exp(−tA)` with
/// `A = Φ*Γ` and `S = Γ*Γ`.  Serves as the order-of-accuracy oracle for
/// the projection and retraction bounds.
pub fn stiefel_exp(base: &Quasimatrix, tangent: &TangentElement, t: f64) -> Result<Quasimatrix> {
    require_orthonormal(base)?;
    let gamma = tangent.gamma();
    require_equal_rank(gamma.ncols(), base.ncols())?;
    let k = base.ncols();
    let a = base.inner(gamma)?;
    // A is skew up to rounding; re-skewing keeps both exponentials in the
    // orthogonal group to machine precision.
    let a = (&a - &a.t()) * 0.5;
    let ss = gamma.inner(gamma)?;
    let mut b = Array2::<f64>::zeros((2 * k, 2 * k));
    b.slice_mut(s![..k, ..k]).assign(&a);
    b.slice_mut(s![..k, k..]).assign(&(-&ss));
    b.slice_mut(s![k.., ..k]).assign(&Array2::eye(k));
    b.slice_mut(s![k.., k..]).assign(&a);
    let e_big = expm(&(&b * t))?;
    let e_small = expm(&(&a * (-t)))?;
    let m = e_big.slice(s![.., ..k]).dot(&e_small);
    let mut cols: Vec<ChebSeries> = base.cols().to_vec();
    cols.extend(gamma.cols().iter().cloned());
    Quasimatrix::new(cols)?.matmul(&m.view())
}

/// Provenance of an interpolated model: which library produced it, which
/// instance anchored the tangent space, and whether θ* left the node hull.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpProvenance {
    thetas: Vec<f64>,
    theta_star: f64,
    base_index: usize,
    extrapolated: bool,
    rank: usize,
}

impl InterpProvenance {
    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub fn theta_star(&self) -> f64 {
        self.theta_star
    }

    pub fn base_index(&self) -> usize {
        self.base_index
    }

    pub fn extrapolated(&self) -> bool {
        self.extrapolated
    }

    pub fn rank(&self) -> usize {
        self.rank
    }
}

/// An interpolated [`SveModel`] together with its [`InterpProvenance`].
#[derive(Clone, Debug)]
pub struct InterpolatedModel {
    model: SveModel,
    provenance: InterpProvenance,
}

impl InterpolatedModel {
    pub fn model(&self) -> &SveModel {
        &self.model
    }

    pub fn provenance(&self) -> &InterpProvenance {
        &self.provenance
    }

    pub fn into_parts(self) -> (SveModel, InterpProvenance) {
        (self.model, self.provenance)
    }
}

/// Interpolate a rank-aligned library to θ*.
///
/// Steps: select the base instance nearest θ*; align every other instance
/// to it by mode matching and sign fixing; lift the aligned `U` and `V`
/// frames to the base tangent space; Lagrange-interpolate the lifts, the
/// singular values (raw, no transform) and the homogeneous responses;
/// retract with the QR orthonormal factor; and re-align the assembled
/// model to the base once more, since large tangent steps can reshuffle
/// modes.  θ* outside the node hull is permitted and flagged as
/// extrapolation in the provenance.
pub fn interpolate_models(library: &ModelLibrary, theta_star: f64) -> Result<InterpolatedModel> {
    if !theta_star.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "interpolation target must be finite, got {theta_star}"
        )));
    }
    interpolate_from_base(library, theta_star, select_base(library, theta_star))
}

/// Steps 2–4 with the base instance fixed, so the approximate recovery at
/// non-base nodes (projection and retraction are not mutually inverse) can
/// be measured directly.
fn interpolate_from_base(
    library: &ModelLibrary,
    theta_star: f64,
    b: usize,
) -> Result<InterpolatedModel> {
    let base = &library.models()[b];
    let aligned = library
        .models()
        .iter()
        .enumerate()
        .map(|(j, m)| {
            if j == b {
                Ok(m.clone())
            } else {
                fix_signs(&match_modes(m, base)?, base)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut lifts_u = Vec::with_capacity(aligned.len());
    let mut lifts_v = Vec::with_capacity(aligned.len());
    for m in &aligned {
        lifts_u.push(project_tangent(base.u(), m.u())?);
        lifts_v.push(project_tangent(base.v(), m.v())?);
    }
    let thetas = library.thetas();
    let gu = lagrange_interp_tangents(&thetas, &lifts_u, theta_star)?;
    let gv = lagrange_interp_tangents(&thetas, &lifts_v, theta_star)?;
    let sigmas: Vec<Vec<f64>> = aligned.iter().map(|m| m.sigma().to_vec()).collect();
    let sigma = lagrange_interp_vector(&thetas, &sigmas, theta_star)?;
    let homs: Vec<ChebSeries> = aligned.iter().map(|m| m.hom().clone()).collect();
    let hom = lagrange_interp_series(&thetas, &homs, theta_star)?;
    let u = base.u().add_scaled(1.0, gu.gamma())?.qf()?;
    let v = base.v().add_scaled(1.0, gv.gamma())?.qf()?;
    let candidate = SveModel::assemble(Sve::new(u, v, sigma)?, hom, theta_star);
    let model = fix_signs(&match_modes(&candidate, base)?, base)?;
    let provenance = InterpProvenance {
        extrapolated: theta_star < thetas[0] || theta_star > thetas[thetas.len() - 1],
        thetas,
        theta_star,
        base_index: b,
        rank: library.rank(),
    };
    Ok(InterpolatedModel { model, provenance })
}
