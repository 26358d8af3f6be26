//! End-to-end plumbing: error metrics, the on-disk container format, report
//! assembly and the orchestration calls behind the command-line interface.
//!
//! Two scalar metrics summarise a learned kernel `𝒢` with homogeneous part
//! `ℋ`.  The *relative error* against a reference kernel `G` is the
//! `L²(Ω×Ω)` norm ratio
//!
//! ```text
//!   ε = ‖𝒢 − G‖ / ‖G‖,     ‖F‖² = ∬ F(x,s)² dx ds,
//! ```
//!
//! computed by Clenshaw–Curtis tensor quadrature at a resolution of at least
//! twice the model degree per axis.  The *test error* against a held-out
//! dataset `{(f_i, u_i)}` is the mean relative response misfit in percent,
//!
//! ```text
//!   ε_test = (100/N) Σ_i ‖ũ_i − u_i‖ / ‖u_i‖,
//!   ũ_i(x) = ∫ 𝒢(x,s) f_i(s) ds + ℋ(x),
//! ```
//!
//! with all univariate norms and the forcing integral taken by the trapezoid
//! rule on the dataset's own sensor grids, so a model is scored with exactly
//! the quadrature it was trained against.
//!
//! Artifacts use one container layout for both models (`.gcm`) and datasets
//! (`.gds`): a four-byte magic, a little-endian `u32` format version, a
//! little-endian `u64` manifest length, a JSON manifest, then back-to-back
//! sections of little-endian `f64` values whose lengths the manifest
//! declares.  Reads are strict — wrong magic, truncation, undeclared
//! trailing bytes or an inconsistent manifest all fail loudly — and
//! roundtrips are bit-exact, which is what makes seeded commands bitwise
//! reproducible end to end.
//!
//! Reports tie every metric to the SHA-256 of the files it was computed
//! from, and are always recomputed from those artifacts rather than cached.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bivariate::{BivariateFn, Sve};
use crate::chebcore::{
    cheb_points, clenshaw_curtis_weights, legendre_basis, ChebSeries, Domain1D, Tolerance,
};
use crate::error::{Error, Result};
use crate::linalg::trapezoid_weights;
use crate::manifold::{
    interpolate_models, project_tangent, stiefel_exp, InterpProvenance, ModelLibrary, SveModel,
};
use crate::problems::{
    advection_diffusion_exact_green, make_dataset, poisson_exact_green, BoundaryKind, DatasetFile,
    GpKernel, ProblemId, ProblemSpec,
};
use crate::quasimatrix::Quasimatrix;
use crate::ratnet::{to_green_model, train, AdfSpec, RatNet, TrainConfig};

#[cfg(test)]
mod tests;

// ---------------------------------------------------------------------------
// Error metrics
// ---------------------------------------------------------------------------

/// Floor on the per-axis Clenshaw–Curtis degree for kernel error integrals;
/// low-rank models can have tiny degrees while the reference kernel (e.g. a
/// kinked Green's function) still needs a dense grid.
const MIN_QUAD_DEGREE: usize = 256;

/// Relative `L²(Ω×Ω)` error of the model kernel against a reference
/// bivariate function, `‖𝒢 − G‖/‖G‖`.
///
/// The integrals use tensor-product Clenshaw–Curtis quadrature with per-axis
/// degree `max(2·deg, 256)`, where `deg` is the corresponding factor degree
/// of the model, so the quadrature always resolves the model itself and
/// oscillatory or kinked references are not under-sampled.
pub fn relative_error<F>(model: &SveModel, exact: F) -> Result<f64>
where
    F: Fn(f64, f64) -> f64,
{
    let xd = *model.xdomain();
    let sd = *model.sdomain();
    let nx = (2 * model.v().max_degree()).max(MIN_QUAD_DEGREE);
    let ns = (2 * model.u().max_degree()).max(MIN_QUAD_DEGREE);
    let xs = cheb_points(nx, &xd);
    let ss = cheb_points(ns, &sd);
    let wx = clenshaw_curtis_weights(nx, &xd);
    let ws = clenshaw_curtis_weights(ns, &sd);
    let g = model.sve().eval_grid(&xs, &ss);
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, (&x, &wi)) in xs.iter().zip(&wx).enumerate() {
        for (j, (&s, &wj)) in ss.iter().zip(&ws).enumerate() {
            let ge = exact(x, s);
            if !ge.is_finite() {
                return Err(Error::NonFiniteOutput);
            }
            let d = g[[i, j]] - ge;
            num += wi * wj * d * d;
            den += wi * wj * ge * ge;
        }
    }
    if den <= 0.0 {
        return Err(Error::ZeroExactNorm);
    }
    Ok((num / den).sqrt())
}

/// Mean relative response misfit of the model over every sample of a
/// dataset, in percent.
///
/// Each prediction is `ũ_i = ∫ 𝒢(x,s) f_i(s) ds + ℋ(x)` with the forcing
/// integral and both `L²` norms taken by the trapezoid rule on the dataset
/// grids.  All samples count — pass a held-out dataset to measure test
/// error.
pub fn test_error(model: &SveModel, data: &DatasetFile) -> Result<f64> {
    let dom = data.problem().domain();
    for md in [model.xdomain(), model.sdomain()] {
        if dom != md {
            return Err(Error::DomainMismatch {
                a0: md.a(),
                b0: md.b(),
                a1: dom.a(),
                b1: dom.b(),
            });
        }
    }
    let xs = data.xgrid();
    let ss = data.sgrid();
    // Fold the s-quadrature into the kernel columns: one GEMM then predicts
    // every sample at once.
    let mut gw = model.sve().eval_grid(xs, ss);
    let wq = trapezoid_weights(ss);
    for (mut col, &w) in gw.columns_mut().into_iter().zip(&wq) {
        col *= w;
    }
    let pred = gw.dot(data.forcings());
    let hom = model.hom().eval_many(xs);
    let wx = trapezoid_weights(xs);
    let u = data.responses();
    let mut total = 0.0;
    for i in 0..data.nsamples() {
        let mut num = 0.0;
        let mut den = 0.0;
        for (j, (&wj, &hj)) in wx.iter().zip(&hom).enumerate() {
            let d = pred[[j, i]] + hj - u[[j, i]];
            num += wj * d * d;
            den += wj * u[[j, i]] * u[[j, i]];
        }
        if den <= 0.0 {
            return Err(Error::ZeroResponseNorm { index: i });
        }
        total += (num / den).sqrt();
    }
    Ok(100.0 * total / data.nsamples() as f64)
}

// ---------------------------------------------------------------------------
// Container format
// ---------------------------------------------------------------------------

/// On-disk container format version shared by models and datasets.
pub const CONTAINER_VERSION: u32 = 1;
const MODEL_MAGIC: [u8; 4] = *b"GCMF";
const DATASET_MAGIC: [u8; 4] = *b"GDSF";
const HEADER_LEN: usize = 16;

/// Everything needed to resume from a training run: both networks, the
/// boundary form they were trained under and the exact configuration.
#[derive(Clone, Debug)]
pub struct NetCheckpoint {
    pub netg: RatNet,
    pub neth: RatNet,
    pub adf: AdfSpec,
    pub config: TrainConfig,
}

/// A model artifact: the compressed expansion plus optional sidecar data —
/// the problem it was learned for, the network checkpoint it came from, the
/// expansion tolerance used and, for interpolants, their provenance.
#[derive(Clone, Debug)]
pub struct ModelContainer {
    model: SveModel,
    problem: Option<ProblemId>,
    tol: Option<f64>,
    nets: Option<NetCheckpoint>,
    provenance: Option<InterpProvenance>,
}

impl ModelContainer {
    pub fn new(model: SveModel) -> Self {
        Self {
            model,
            problem: None,
            tol: None,
            nets: None,
            provenance: None,
        }
    }

    pub fn with_problem(mut self, id: ProblemId) -> Self {
        self.problem = Some(id);
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = Some(tol);
        self
    }

    pub fn with_nets(mut self, nets: NetCheckpoint) -> Self {
        self.nets = Some(nets);
        self
    }

    pub fn with_provenance(mut self, provenance: InterpProvenance) -> Self {
        self.provenance = Some(provenance);
        self
    }

    pub fn model(&self) -> &SveModel {
        &self.model
    }

    pub fn problem(&self) -> Option<ProblemId> {
        self.problem
    }

    pub fn tol(&self) -> Option<f64> {
        self.tol
    }

    pub fn nets(&self) -> Option<&NetCheckpoint> {
        self.nets.as_ref()
    }

    pub fn provenance(&self) -> Option<&InterpProvenance> {
        self.provenance.as_ref()
    }

    pub fn into_model(self) -> SveModel {
        self.model
    }
}

/// Shape of one serialized network: enough to rebuild it before loading the
/// flat parameter section.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct NetRecord {
    dims: Vec<usize>,
    scale: Vec<Domain1D>,
    nparams: usize,
}

impl NetRecord {
    fn describe(net: &RatNet) -> Self {
        Self {
            dims: net.dims().to_vec(),
            scale: net.scale().to_vec(),
            nparams: net.nparams(),
        }
    }

    fn restore(&self, params: &[f64]) -> Result<RatNet> {
        let mut net = RatNet::zeroed(&self.dims, &self.scale)?;
        net.set_params(params)?;
        Ok(net)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelManifest {
    problem: Option<ProblemId>,
    theta: f64,
    xdomain: Domain1D,
    sdomain: Domain1D,
    rank: usize,
    tol: Option<f64>,
    u_lens: Vec<usize>,
    v_lens: Vec<usize>,
    hom_len: usize,
    adf: Option<AdfSpec>,
    train_config: Option<TrainConfig>,
    netg: Option<NetRecord>,
    neth: Option<NetRecord>,
    provenance: Option<InterpProvenance>,
}

#[derive(Serialize, Deserialize)]
struct DatasetManifest {
    problem: ProblemSpec,
    kernel: GpKernel,
    noise: f64,
    seed: u64,
    nx: usize,
    ns: usize,
    nsamples: usize,
    train_idx: Vec<usize>,
    val_idx: Vec<usize>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptContainer(msg.into())
}

fn push_f64s(buf: &mut Vec<u8>, vals: &[f64]) {
    buf.reserve(8 * vals.len());
    for v in vals {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Cursor over the binary payload; every section read is bounds-checked and
/// `finish` rejects bytes no manifest entry accounts for.
struct SectionReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> SectionReader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = n
            .checked_mul(8)
            .ok_or_else(|| corrupt("section length overflows"))?;
        let end = self
            .pos
            .checked_add(bytes)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| corrupt("payload ends inside a section"))?;
        let vals = self.buf[self.pos..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        self.pos = end;
        Ok(vals)
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(corrupt("trailing bytes after the final section"));
        }
        Ok(())
    }
}

fn write_container<M: Serialize>(
    path: &Path,
    magic: [u8; 4],
    manifest: &M,
    payload: &[u8],
) -> Result<()> {
    let json = serde_json::to_vec(manifest)?;
    let mut out = Vec::with_capacity(HEADER_LEN + json.len() + payload.len());
    out.extend_from_slice(&magic);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(payload);
    fs::write(path, out)?;
    Ok(())
}

fn read_container<M: serde::de::DeserializeOwned>(
    path: &Path,
    magic: [u8; 4],
) -> Result<(M, Vec<u8>)> {
    let bytes = fs::read(path)?;
    if bytes.len() < HEADER_LEN {
        return Err(corrupt("file shorter than the fixed header"));
    }
    if bytes[..4] != magic {
        return Err(corrupt("unrecognized magic bytes"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CONTAINER_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CONTAINER_VERSION,
        });
    }
    let mlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let mlen = usize::try_from(mlen).map_err(|_| corrupt("manifest length overflows"))?;
    let end = HEADER_LEN
        .checked_add(mlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| corrupt("file ends inside the manifest"))?;
    let manifest = serde_json::from_slice(&bytes[HEADER_LEN..end])
        .map_err(|e| corrupt(format!("manifest: {e}")))?;
    Ok((manifest, bytes[end..].to_vec()))
}

/// Write a model container (`.gcm`).  The payload sections are, in order:
/// `σ`, the `U` column coefficients, the `V` column coefficients, the `ℋ`
/// coefficients and, when a checkpoint is attached, the flat parameter
/// vectors of `𝒩_G` and `𝒩_hom`.
pub fn save_model(path: &Path, container: &ModelContainer) -> Result<()> {
    let m = container.model();
    let manifest = ModelManifest {
        problem: container.problem,
        theta: m.theta(),
        xdomain: *m.xdomain(),
        sdomain: *m.sdomain(),
        rank: m.rank(),
        tol: container.tol,
        u_lens: m.u().cols().iter().map(|c| c.coeffs().len()).collect(),
        v_lens: m.v().cols().iter().map(|c| c.coeffs().len()).collect(),
        hom_len: m.hom().coeffs().len(),
        adf: container.nets.as_ref().map(|n| n.adf),
        train_config: container.nets.as_ref().map(|n| n.config),
        netg: container.nets.as_ref().map(|n| NetRecord::describe(&n.netg)),
        neth: container.nets.as_ref().map(|n| NetRecord::describe(&n.neth)),
        provenance: container.provenance.clone(),
    };
    let mut payload = Vec::new();
    push_f64s(&mut payload, m.sigma());
    for c in m.u().cols() {
        push_f64s(&mut payload, c.coeffs());
    }
    for c in m.v().cols() {
        push_f64s(&mut payload, c.coeffs());
    }
    push_f64s(&mut payload, m.hom().coeffs());
    if let Some(nets) = &container.nets {
        push_f64s(&mut payload, &nets.netg.params_vec());
        push_f64s(&mut payload, &nets.neth.params_vec());
    }
    write_container(path, MODEL_MAGIC, &manifest, &payload)
}

/// Read a model container back.  Reconstruction is bit-exact; the singular
/// values are restored as stored, so interpolated models whose `σ` is not
/// monotone roundtrip unchanged.
pub fn load_model(path: &Path) -> Result<ModelContainer> {
    let (manifest, payload): (ModelManifest, Vec<u8>) = read_container(path, MODEL_MAGIC)?;
    if manifest.rank == 0 {
        return Err(corrupt("model rank must be at least one"));
    }
    if manifest.u_lens.len() != manifest.rank || manifest.v_lens.len() != manifest.rank {
        return Err(corrupt("mode count disagrees with the declared rank"));
    }
    if !manifest.theta.is_finite() {
        return Err(corrupt("non-finite θ"));
    }
    let mut r = SectionReader::new(&payload);
    let sigma = r.take(manifest.rank)?;
    let mut read_cols = |lens: &[usize], domain: Domain1D| -> Result<Vec<ChebSeries>> {
        let mut cols = Vec::with_capacity(lens.len());
        for &len in lens {
            if len == 0 {
                return Err(corrupt("empty coefficient section"));
            }
            cols.push(ChebSeries::from_coeffs(domain, r.take(len)?));
        }
        Ok(cols)
    };
    // U columns live on the s-domain, V columns and ℋ on the x-domain.
    let ucols = read_cols(&manifest.u_lens, manifest.sdomain)?;
    let vcols = read_cols(&manifest.v_lens, manifest.xdomain)?;
    if manifest.hom_len == 0 {
        return Err(corrupt("empty homogeneous-part section"));
    }
    let hom = ChebSeries::from_coeffs(manifest.xdomain, r.take(manifest.hom_len)?);
    let sve = Sve::new(
        Quasimatrix::new(ucols)?,
        Quasimatrix::new(vcols)?,
        sigma,
    )?;
    let model = SveModel::assemble(sve, hom, manifest.theta);
    let nets = match (manifest.netg, manifest.neth, manifest.adf, manifest.train_config) {
        (None, None, None, None) => None,
        (Some(g), Some(h), Some(adf), Some(config)) => {
            let pg = r.take(g.nparams)?;
            let ph = r.take(h.nparams)?;
            Some(NetCheckpoint {
                netg: g.restore(&pg)?,
                neth: h.restore(&ph)?,
                adf,
                config,
            })
        }
        _ => return Err(Error::MissingSection("network checkpoint".into())),
    };
    r.finish()?;
    let mut container = ModelContainer::new(model);
    container.problem = manifest.problem;
    container.tol = manifest.tol;
    container.nets = nets;
    container.provenance = manifest.provenance;
    Ok(container)
}

/// Write a dataset container (`.gds`).  Payload sections: x-grid, s-grid,
/// forcings (row-major `N_s × n`), responses (row-major `N_x × n`).
pub fn save_dataset(path: &Path, data: &DatasetFile) -> Result<()> {
    let manifest = DatasetManifest {
        problem: *data.problem(),
        kernel: *data.kernel(),
        noise: data.noise(),
        seed: data.seed(),
        nx: data.xgrid().len(),
        ns: data.sgrid().len(),
        nsamples: data.nsamples(),
        train_idx: data.train_idx().to_vec(),
        val_idx: data.val_idx().to_vec(),
    };
    let mut payload = Vec::new();
    push_f64s(&mut payload, data.xgrid());
    push_f64s(&mut payload, data.sgrid());
    // `iter` walks logical row-major order regardless of memory layout.
    let forcings: Vec<f64> = data.forcings().iter().copied().collect();
    let responses: Vec<f64> = data.responses().iter().copied().collect();
    push_f64s(&mut payload, &forcings);
    push_f64s(&mut payload, &responses);
    write_container(path, DATASET_MAGIC, &manifest, &payload)
}

/// Read a dataset container back through the full validating constructor.
pub fn load_dataset(path: &Path) -> Result<DatasetFile> {
    let (m, payload): (DatasetManifest, Vec<u8>) = read_container(path, DATASET_MAGIC)?;
    let n = m.nsamples;
    let count = |rows: usize| {
        rows.checked_mul(n)
            .ok_or_else(|| corrupt("sample count overflows"))
    };
    let mut r = SectionReader::new(&payload);
    let xgrid = r.take(m.nx)?;
    let sgrid = r.take(m.ns)?;
    let forcings = Array2::from_shape_vec((m.ns, n), r.take(count(m.ns)?)?)
        .expect("shape matches by construction");
    let responses = Array2::from_shape_vec((m.nx, n), r.take(count(m.nx)?)?)
        .expect("shape matches by construction");
    r.finish()?;
    // Rebuild the problem through its constructor so an id/domain mismatch
    // smuggled into the manifest cannot bypass validation.
    let spec = ProblemSpec::new(m.problem.id(), m.problem.theta())?;
    if spec != m.problem {
        return Err(corrupt("problem record is internally inconsistent"));
    }
    DatasetFile::new(
        spec,
        m.kernel,
        xgrid,
        sgrid,
        forcings,
        responses,
        m.noise,
        m.seed,
        m.train_idx,
        m.val_idx,
    )
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// SHA-256 of a file's bytes, lowercase hex.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// A file a metric was computed from, pinned by content hash.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub path: String,
    pub sha256: String,
}

impl ArtifactRef {
    pub fn describe(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        })
    }
}

/// One metric value, traceable to the model (and dataset, when one was
/// involved) it was recomputed from, with an optional pass/fail verdict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub name: String,
    pub value: f64,
    pub threshold: Option<f64>,
    pub pass: Option<bool>,
    pub model: ArtifactRef,
    pub dataset: Option<ArtifactRef>,
}

/// A benchmark report: everything is recomputed from the referenced
/// artifacts at assembly time, never copied from caches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub problem: Option<String>,
    pub theta: f64,
    /// Library parameters when the model is an interpolant.
    pub thetas: Vec<f64>,
    /// Seeds of the artifacts involved: training seed first when known,
    /// then dataset seeds in the order metrics reference them.
    pub seeds: Vec<u64>,
    pub metrics: Vec<MetricRecord>,
    pub runtime_s: f64,
}

/// Inputs for [`build_report`].  Datasets are optional; ε against a closed
/// form is emitted whenever the problem has one.  Test error is reported
/// separately per dataset so a run tested on noisy data and its clean
/// counterpart stay distinguishable.
#[derive(Clone, Copy, Debug)]
pub struct ReportSpec<'a> {
    pub model: &'a Path,
    pub test_data: Option<&'a Path>,
    pub clean_data: Option<&'a Path>,
    /// Verdict threshold for `relative_error` (fraction, not percent).
    pub eps_threshold: Option<f64>,
    /// Verdict threshold for `test_error` (percent).
    pub test_threshold: Option<f64>,
}

fn verdict(value: f64, threshold: Option<f64>) -> Option<bool> {
    threshold.map(|t| value <= t)
}

/// Assemble a [`Report`] by loading the referenced artifacts and recomputing
/// every metric from them.
pub fn build_report(spec: &ReportSpec) -> Result<Report> {
    let start = std::time::Instant::now();
    let model_path = spec.model;
    let container = load_model(model_path)?;
    let model_ref = ArtifactRef::describe(model_path)?;
    let model = container.model();

    let mut seeds = Vec::new();
    if let Some(nets) = container.nets() {
        seeds.push(nets.config.seed);
    }
    let mut metrics = Vec::new();

    if let Some(id) = container.problem() {
        if let Ok(exact) = exact_green(id, model.theta()) {
            let eps = relative_error(model, exact.as_ref())?;
            metrics.push(MetricRecord {
                name: "relative_error".into(),
                value: eps,
                threshold: spec.eps_threshold,
                pass: verdict(eps, spec.eps_threshold),
                model: model_ref.clone(),
                dataset: None,
            });
        }
    }

    for (name, path) in [
        ("test_error", spec.test_data),
        ("test_error_clean", spec.clean_data),
    ] {
        let Some(path) = path else { continue };
        let data = load_dataset(path)?;
        seeds.push(data.seed());
        let value = test_error(model, &data)?;
        metrics.push(MetricRecord {
            name: name.into(),
            value,
            threshold: spec.test_threshold,
            pass: verdict(value, spec.test_threshold),
            model: model_ref.clone(),
            dataset: Some(ArtifactRef::describe(path)?),
        });
    }

    Ok(Report {
        problem: container.problem().map(|p| p.as_str().to_string()),
        theta: model.theta(),
        thetas: container
            .provenance()
            .map(|p| p.thetas().to_vec())
            .unwrap_or_default(),
        seeds,
        metrics,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

// ---------------------------------------------------------------------------
// Orchestration
// ---------------------------------------------------------------------------

/// The forcing kernel a problem's datasets use: squared-exponential under
/// Dirichlet conditions, its periodic counterpart under periodic ones, with
/// a caller-chosen normalized length scale.
pub fn kernel_for(spec: &ProblemSpec, sigma_norm: f64) -> Result<GpKernel> {
    match spec.bc() {
        BoundaryKind::Dirichlet => GpKernel::se_normalized(sigma_norm, spec.domain()),
        BoundaryKind::Periodic => GpKernel::periodic_normalized(sigma_norm, spec.domain()),
    }
}

/// Generate a forcing/response dataset for a reference problem.
pub fn generate(
    spec: &ProblemSpec,
    sigma_norm: f64,
    n_samples: usize,
    nx: usize,
    ns: usize,
    zeta: f64,
    seed: u64,
) -> Result<DatasetFile> {
    let kernel = kernel_for(spec, sigma_norm)?;
    make_dataset(spec, &kernel, n_samples, nx, ns, zeta, seed)
}

/// Knobs for a training run; defaults mirror [`TrainConfig`] plus an
/// expansion tolerance of `1e-6` and a generous rank cap.
#[derive(Clone, Copy, Debug)]
pub struct TrainOptions {
    pub epochs: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub seed: u64,
    /// Chebyshev tolerance used when compressing the trained networks.
    pub tol: f64,
    pub rank_cap: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        let c = TrainConfig::default();
        Self {
            epochs: c.epochs,
            lr_start: c.lr_start,
            lr_end: c.lr_end,
            seed: c.seed,
            tol: 1e-6,
            rank_cap: 50,
        }
    }
}

/// A finished training run: the saved-ready container plus the final loss
/// values for logging.
#[derive(Debug)]
pub struct TrainOutcome {
    pub container: ModelContainer,
    pub train_loss: Option<f64>,
    pub val_loss: Option<f64>,
}

/// Train both networks on a dataset and compress them into a model
/// container that keeps the checkpoint for later re-expansion.
pub fn train_on(data: &DatasetFile, opts: &TrainOptions) -> Result<TrainOutcome> {
    let spec = *data.problem();
    let dom = *spec.domain();
    let adf = match spec.bc() {
        BoundaryKind::Dirichlet => AdfSpec::dirichlet(dom, dom),
        BoundaryKind::Periodic => AdfSpec::disabled(dom, dom),
    };
    let config = TrainConfig {
        epochs: opts.epochs,
        lr_start: opts.lr_start,
        lr_end: opts.lr_end,
        seed: opts.seed,
        ..TrainConfig::default()
    };
    let report = train(&data.to_train_data()?, &config, &adf)?;
    let tol = Tolerance::new(opts.tol)?;
    let (sve, hom) = to_green_model(&report.netg, &report.neth, &adf, tol, tol, opts.rank_cap)?;
    let model = SveModel::new(sve, hom, spec.theta())?;
    let container = ModelContainer::new(model)
        .with_problem(spec.id())
        .with_tol(opts.tol)
        .with_nets(NetCheckpoint {
            netg: report.netg,
            neth: report.neth,
            adf,
            config,
        });
    Ok(TrainOutcome {
        container,
        train_loss: report.train_loss.last().copied(),
        val_loss: report.val_loss.last().copied(),
    })
}

/// Re-expand the stored network checkpoint at a new tolerance and rank cap,
/// producing a fresh container with the same checkpoint attached.
pub fn recompress(container: &ModelContainer, tol: f64, rank_cap: usize) -> Result<ModelContainer> {
    let nets = container
        .nets()
        .ok_or_else(|| Error::MissingSection("network checkpoint".into()))?;
    let t = Tolerance::new(tol)?;
    let (sve, hom) = to_green_model(&nets.netg, &nets.neth, &nets.adf, t, t, rank_cap)?;
    let model = SveModel::new(sve, hom, container.model().theta())?;
    let mut out = ModelContainer::new(model)
        .with_tol(tol)
        .with_nets(nets.clone());
    out.problem = container.problem;
    Ok(out)
}

/// Interpolate a library of model containers to `θ*`.  The problem id is
/// kept only when every member agrees on it; network checkpoints do not
/// carry over (an interpolant has no single parent network).
pub fn interpolate_library(containers: &[ModelContainer], theta_star: f64) -> Result<ModelContainer> {
    let library = ModelLibrary::new(containers.iter().map(|c| c.model().clone()).collect())?;
    let (model, provenance) = interpolate_models(&library, theta_star)?.into_parts();
    let mut problem = containers.first().and_then(|c| c.problem());
    if containers.iter().any(|c| c.problem() != problem) {
        problem = None;
    }
    let mut out = ModelContainer::new(model).with_provenance(provenance);
    out.problem = problem;
    Ok(out)
}

/// Closed-form reference kernel for problems that have one, as an evaluable
/// `G(x, s)`.
pub fn exact_green(problem: ProblemId, theta: f64) -> Result<Box<dyn Fn(f64, f64) -> f64 + Sync>> {
    match problem {
        ProblemId::Poisson => Ok(Box::new(poisson_exact_green)),
        ProblemId::AdvectionDiffusion => Ok(Box::new(move |x, s| {
            advection_diffusion_exact_green(theta, x, s)
        })),
        _ => Err(Error::InvalidArgument(format!(
            "no closed-form kernel for problem `{}`",
            problem.as_str()
        ))),
    }
}

/// Singular-value spectrum as a two-column CSV (`k,sigma`), for external
/// plotting.
pub fn write_sigma_csv(path: &Path, model: &SveModel) -> Result<()> {
    let mut out = String::from("k,sigma\n");
    for (k, s) in model.sigma().iter().enumerate() {
        out.push_str(&format!("{},{}\n", k + 1, s));
    }
    fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Order verification
// ---------------------------------------------------------------------------

/// Fitted log-log convergence slopes for the two manifold error bounds,
/// with the raw error series kept for plotting.
#[derive(Clone, Debug, Serialize)]
pub struct OrderReport {
    pub ts: Vec<f64>,
    pub retraction_errors: Vec<f64>,
    pub projection_errors: Vec<f64>,
    pub retraction_slope: f64,
    pub projection_slope: f64,
}

/// Least-squares slope of `ln err` against `ln t`.
fn loglog_slope(ts: &[f64], errs: &[f64]) -> f64 {
    let n = ts.len() as f64;
    let xs: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    num / den
}

/// Measure the orders of accuracy of the retraction and of the
/// projected-chord tangent recovery against the exact geodesic.
///
/// With a unit tangent `Γ` (norm `1 < π`, inside the injectivity radius)
/// the QR retraction satisfies `‖qf(Φ + tΓ) − γ(t)‖ = O(t²)` and the lifted
/// chord satisfies `‖P_Φ(γ(t) − Φ) − tΓ‖ = O(t³)`; the fitted slopes should
/// be ≈ 2 and ≈ 3.
pub fn verify_orders(seed: u64) -> Result<OrderReport> {
    let domain = Domain1D::new(0.0, 1.0)?;
    let phi = Quasimatrix::new(legendre_basis(3, &domain)?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols = (0..3)
        .map(|_| {
            let coeffs: Vec<f64> = (0..=8)
                .map(|j| (rng.gen::<f64>() - 0.5) * 0.5f64.powi(j))
                .collect();
            ChebSeries::from_coeffs(domain, coeffs)
        })
        .collect();
    let raw = project_tangent(&phi, &Quasimatrix::new(cols)?)?;
    let norm = raw.hs_norm();
    if norm == 0.0 {
        return Err(Error::InvalidArgument(
            "degenerate random tangent; try another seed".into(),
        ));
    }
    let gamma = raw.scale(1.0 / norm)?;
    let ts = [1e-1, 10f64.powf(-1.5), 1e-2, 10f64.powf(-2.5), 1e-3];
    let mut retraction = Vec::with_capacity(ts.len());
    let mut projection = Vec::with_capacity(ts.len());
    for &t in &ts {
        let geodesic = stiefel_exp(&phi, &gamma, t)?;
        let step = phi.add_scaled(t, gamma.gamma())?;
        retraction.push(step.qf()?.add_scaled(-1.0, &geodesic)?.hs_norm());
        let chord = geodesic.add_scaled(-1.0, &phi)?;
        let lifted = project_tangent(&phi, &chord)?;
        projection.push(lifted.gamma().add_scaled(-t, gamma.gamma())?.hs_norm());
    }
    Ok(OrderReport {
        retraction_slope: loglog_slope(&ts, &retraction),
        projection_slope: loglog_slope(&ts, &projection),
        ts: ts.to_vec(),
        retraction_errors: retraction,
        projection_errors: projection,
    })
}
