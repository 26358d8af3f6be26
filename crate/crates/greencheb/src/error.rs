//! Crate-wide error type.
//!
//! Every fallible operation returns [`Result`]. Variants carry enough
//! context to be actionable: which domain pair mismatched, which column of a
//! factorisation collapsed, which container section was missing, and so on.

use thiserror::Error;

/// Alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // ---- chebcore ----
    /// Interval endpoints were non-finite or not increasing.
    #[error("invalid domain [{a}, {b}]: endpoints must be finite with a < b")]
    InvalidDomain { a: f64, b: f64 },

    /// Relative tolerance outside (0, 1).
    #[error("invalid tolerance {0}: must lie in (0, 1)")]
    InvalidTolerance(f64),

    /// Operands live on different intervals.
    #[error("domain mismatch: [{a0}, {b0}] vs [{a1}, {b1}]")]
    DomainMismatch { a0: f64, b0: f64, a1: f64, b1: f64 },

    /// Adaptive sampling hit the degree cap without the coefficient tail
    /// falling below the requested tolerance.
    #[error("adaptive construction did not converge by degree {degree_cap} (tol {eps_rel:.3e}); input may be non-smooth or under-resolved")]
    NonConvergence { degree_cap: usize, eps_rel: f64 },

    // ---- quasimatrix ----
    /// A column norm collapsed during QR (0-based column index).
    #[error("rank deficient: column {0} of the quasimatrix is numerically dependent on its predecessors")]
    RankDeficient(usize),

    /// Operation requires at least one column.
    #[error("empty quasimatrix")]
    EmptyQuasimatrix,

    /// Coefficient matrix dimensions incompatible with the quasimatrix.
    #[error("shape mismatch: quasimatrix has {cols} columns, matrix is {rows}x{mcols}")]
    ShapeMismatch { cols: usize, rows: usize, mcols: usize },

    // ---- ratnet ----
    /// Forward pass produced NaN or infinity (rational denominator collapse).
    #[error("non-finite network output")]
    NonFiniteOutput,

    /// Training loss became non-finite.
    #[error("training diverged: non-finite loss at epoch {epoch}")]
    Diverged { epoch: usize },

    /// A distance function was requested for a degenerate segment.
    #[error("zero-length segment")]
    ZeroLengthSegment,

    /// A response has zero trapezoid norm, so the relative loss is undefined.
    #[error("response {index} has zero trapezoid norm")]
    ZeroResponseNorm { index: usize },

    /// The reference kernel has zero L² norm, so a relative error is
    /// undefined.
    #[error("relative error undefined: the reference kernel has zero norm")]
    ZeroExactNorm,

    /// Dataset arrays disagree on grid length or sample count.
    #[error("dataset shape error: {0}")]
    DatasetShape(String),

    // ---- problems ----
    /// Covariance factorisation failed even at the maximum jitter.
    #[error("Gaussian process covariance factorisation failed (jitter up to {max_jitter:.1e})")]
    FactorizationFailure { max_jitter: f64 },

    /// Operator is singular for the requested parameter (resonance).
    #[error("singular operator: {0}")]
    SingularOperator(String),

    /// Fractional problem requires a zero-mean forcing.
    #[error("zero-mean violation: forcing has mean {mean:.3e} on a periodic problem")]
    ZeroMeanViolation { mean: f64 },

    /// Kernel parameters out of range (non-positive length scale, etc).
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    /// Helmholtz frequency sits on a resonance, where `σ_k = 1/(θ² − (kπ)²)`
    /// is undefined.
    #[error("resonance: θ = {theta} coincides with mode k = {k} (θ = kπ)")]
    Resonance { theta: f64, k: usize },

    // ---- manifold ----
    /// Base point is not orthonormal to the required tolerance.
    #[error("base quasimatrix is not orthonormal: max |Φ*Φ - I| = {defect:.3e}")]
    NotOrthonormalBase { defect: f64 },

    /// Interpolation requires at least two models.
    #[error("model library needs at least 2 models with distinct θ, got {0}")]
    InsufficientModels(usize),

    /// Interpolation nodes must be pairwise distinct.
    #[error("degenerate interpolation nodes: θ = {0} appears more than once")]
    DegenerateNodes(f64),

    // ---- pipeline ----
    /// Container failed structural validation.
    #[error("corrupt container: {0}")]
    CorruptContainer(String),

    /// Container was written by an incompatible format version.
    #[error("container format version {found} unsupported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    /// Named binary section absent from the container.
    #[error("missing container section `{0}`")]
    MissingSection(String),

    /// CLI / pipeline argument error.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable code used by the CLI's JSON error channel.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidDomain { .. } => "invalid_domain",
            Error::InvalidTolerance(_) => "invalid_tolerance",
            Error::DomainMismatch { .. } => "domain_mismatch",
            Error::NonConvergence { .. } => "non_convergence",
            Error::RankDeficient(_) => "rank_deficient",
            Error::EmptyQuasimatrix => "empty_quasimatrix",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::NonFiniteOutput => "non_finite_output",
            Error::Diverged { .. } => "diverged",
            Error::ZeroLengthSegment => "zero_length_segment",
            Error::ZeroResponseNorm { .. } => "zero_response_norm",
            Error::ZeroExactNorm => "zero_exact_norm",
            Error::DatasetShape(_) => "dataset_shape",
            Error::FactorizationFailure { .. } => "factorization_failure",
            Error::SingularOperator(_) => "singular_operator",
            Error::ZeroMeanViolation { .. } => "zero_mean_violation",
            Error::InvalidKernel(_) => "invalid_kernel",
            Error::Resonance { .. } => "resonance",
            Error::NotOrthonormalBase { .. } => "not_orthonormal_base",
            Error::InsufficientModels(_) => "insufficient_models",
            Error::DegenerateNodes(_) => "degenerate_nodes",
            Error::CorruptContainer(_) => "corrupt_container",
            Error::VersionMismatch { .. } => "version_mismatch",
            Error::MissingSection(_) => "missing_section",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
