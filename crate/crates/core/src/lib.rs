//! Disentangling breaks in factor variance from breaks in loadings in large
//! approximate factor models.
//!
//! The pipeline for one panel and a known break date:
//!
//! 1. [`panel_io`]: load and transform a panel (FRED-QD style CSV).
//! 2. [`pca`]: principal components on each regime.
//! 3. [`projection`]: split the post-break loadings into a rotation `Z̃` of
//!    the pre-break loadings plus an orthogonal shift `W̃`.
//! 4. [`break_tests`]: Wald tests for `Z = I` (factor variance) and `W = 0`
//!    (loadings), with Holm adjustment.
//! 5. [`bootstrap`]: block-bootstrap interval for the trace ratio.
//!
//! [`break_tests::disentangle`] runs all of it. [`montecarlo`] simulates the
//! standard design and tabulates rejection frequencies.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod bootstrap;
pub mod error;
pub mod hac;
pub mod montecarlo;
pub mod numerics;
pub mod panel_io;
pub mod pca;
pub mod projection;

pub use bootstrap::{block_bootstrap_ci, BootstrapConfig, BootstrapInterval};
pub use break_tests::{
    disentangle, holm_adjust, run_tests, w_individual_test, w_joint_test, z_lm_test, z_wald_test,
    DisentangleConfig, DisentangleReport, FactorCounts, HolmFamily, TestMethod, TestResult, WResidual,
};
pub use error::{Error, Result};
pub use hac::{bartlett_lrv, HacConfig};
pub use montecarlo::{run_experiment, simulate_dgp, BreakType, DGPConfig, ExperimentOptions, ExperimentRow, ZSpec};
pub use panel_io::{finalize, load_csv, BreakSpec, Panel, RawPanel, TransformCode};
pub use pca::{estimate_factors, estimate_on, ic_p2, FactorEstimate};
pub use projection::{
    aggregate_r_squared, decompose, r_squared_decomposition, trace_ratio, CategoryMap, CategoryRSquared,
    ProjectionDecomposition,
};

/// `f(0), …, f(n − 1)` in index order, evaluated in parallel when the
/// `parallel` feature is enabled.
#[cfg(feature = "parallel")]
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Cap the worker threads used for replications and per-series tests.
/// Must be called before any parallel work; a no-op without `parallel`.
pub fn configure_threads(threads: usize) -> Result<()> {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    Ok(())
}
