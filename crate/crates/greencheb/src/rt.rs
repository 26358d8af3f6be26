//! Process-level numerical runtime configuration.
//!
//! Two things have to be pinned before the first BLAS call for runs to be
//! fast *and* bitwise reproducible:
//!
//! * the OpenBLAS thread count — reductions in threaded GEMM are not
//!   order-stable, so workers are capped (default 1, override with
//!   `GREENCHEB_THREADS`);
//! * the OpenBLAS kernel family — on hosts whose hypervisor masks CPUID
//!   leaves, the runtime dispatcher falls back to generic SSE3 kernels even
//!   when AVX-512 is available. If the user has not chosen a core type we
//!   pin one matching the compile target.
//!
//! [`init`] is idempotent and called from every entry point that reaches
//! BLAS (CLI, trainers, builders), so library users need not care.

use std::sync::Once;

static INIT: Once = Once::new();

/// Worker cap honoured by BLAS and any future fan-out: `GREENCHEB_THREADS`
/// if set and parseable, else 1.
pub fn worker_cap() -> usize {
    std::env::var("GREENCHEB_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

/// Pin BLAS threading and kernel dispatch. Safe to call repeatedly; only the
/// first call has any effect, and it must happen before the first BLAS call
/// in the process to be honoured.
pub fn init() {
    INIT.call_once(|| {
        let threads = worker_cap();
        if std::env::var_os("OPENBLAS_NUM_THREADS").is_none() {
            std::env::set_var("OPENBLAS_NUM_THREADS", threads.to_string());
        }
        if std::env::var_os("OPENBLAS_CORETYPE").is_none() {
            #[cfg(target_arch = "x86_64")]
            if is_x86_feature_detected!("avx512f") {
                std::env::set_var("OPENBLAS_CORETYPE", "SKYLAKEX");
            } else if is_x86_feature_detected!("avx2") {
                std::env::set_var("OPENBLAS_CORETYPE", "HASWELL");
            }
        }
    });
}
