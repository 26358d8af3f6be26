//! Data-driven Green's functions for 1-D linear differential operators.
//!
//! Given forcing/response pairs `(f_i, u_i)` of a hidden operator `L u = f`,
//! this crate learns the kernel `G(x, s)` of the solution map
//!
//! ```text
//! u(x) = ∫ G(x, s) f(s) ds + u_hom(x)
//! ```
//!
//! with a rational neural network, converts the learned kernel into a
//! continuous low-rank singular value expansion
//!
//! ```text
//! G(x, s) = Σ_k σ_k  V_k(x) U_k(s),     σ_1 ≥ σ_2 ≥ … ≥ 0,
//! ```
//!
//! whose factors are Chebyshev series, and interpolates such expansions
//! across a scalar operator parameter θ by working in the tangent space of
//! the (infinite-dimensional) Stiefel manifold of orthonormal quasimatrices.
//!
//! The crate is organised bottom-up:
//!
//! * [`chebcore`] — Chebyshev series on an interval: transforms, adaptive
//!   construction, calculus.
//! * [`quasimatrix`] — ∞×K "tall" matrices whose columns are Chebyshev
//!   series, with a Householder QR factorisation.
//! * [`bivariate`] — low-rank CDR representation of bivariate kernels via
//!   pivoted cross approximation, and the SVE built from it.
//! * [`ratnet`] — rational neural networks, the analytic distance function
//!   used to enforce boundary conditions, and full-batch Adam training.
//! * [`problems`] — reference differential operators, Gaussian-process
//!   forcing generation and dataset assembly.
//! * [`manifold`] — mode matching, tangent-space projection, Lagrange
//!   interpolation and retraction of SVE models across θ.
//! * [`pipeline`] — model/dataset containers, error metrics, reports.

pub mod bivariate;
pub mod chebcore;
pub mod error;
pub mod linalg;
pub mod manifold;
pub mod pipeline;
pub mod problems;
pub mod quasimatrix;
pub mod ratnet;
pub mod rt;

pub use error::{Error, Result};

// Fortran BLAS/LAPACK symbols are provided by the system OpenBLAS; the
// explicit `use` keeps the link directive alive.
extern crate blas_src;
