//! Moving-block bootstrap interval for the trace ratio.
//!
//! Blocks of whole cross-sectional rows are drawn independently within each
//! regime, so the break date and the cross-sectional dependence are kept.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::break_tests::FactorCounts;
use crate::error::{Error, Result};
use crate::panel_io::{BreakSpec, Panel};
use crate::pca::estimate_factors;
use crate::projection::{decompose_loadings, trace_ratio_of};

pub const DEFAULT_REPLICATIONS: usize = 399;
/// Replicates failing beyond this share abort the interval.
pub const MAX_SKIPPED_SHARE: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub replications: usize,
    /// Defaults to `floor(T^{1/3})` of the full sample.
    pub block_length: Option<usize>,
    /// Two-sided miscoverage; 0.05 gives a 95% interval.
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replications: DEFAULT_REPLICATIONS,
            block_length: None,
            level: 0.05,
            seed: 0,
        }
    }
}

impl BootstrapConfig {
    pub fn block_length_for(&self, t: usize) -> usize {
        self.block_length
            .unwrap_or_else(|| ((t as f64).cbrt() + 1e-9).floor() as usize)
            .max(1)
    }

    fn validate(&self, brk: &BreakSpec) -> Result<usize> {
        if self.replications < 100 {
            return Err(Error::Config(format!(
                "bootstrap needs at least 100 replications, got {}",
                self.replications
            )));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!("level {} must lie in (0, 1)", self.level)));
        }
        let l = self.block_length_for(brk.t);
        if l >= brk.t1().min(brk.t2()) {
            return Err(Error::Config(format!(
                "block length {l} must be shorter than both regimes ({} and {})",
                brk.t1(),
                brk.t2()
            )));
        }
        Ok(l)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapInterval {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub block_length: usize,
    /// Replicates that produced a trace ratio.
    pub replications: usize,
    pub skipped: usize,
}

/// Seed for replicate `b`, independent of scheduling order.
pub fn replicate_seed(master: u64, b: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = master ^ (b as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Row indices `0..len` resampled as overlapping blocks of length `l`.
pub fn moving_block_indices<R: Rng>(len: usize, l: usize, rng: &mut R) -> Vec<usize> {
    let starts = len - l + 1;
    let mut out = Vec::with_capacity(len);
    while out.len() < len {
        let s = rng.random_range(0..starts);
        out.extend((s..s + l).take(len - out.len()));
    }
    out
}

fn resample_rows(x: &DMatrix<f64>, offset: usize, idx: &[usize], out: &mut DMatrix<f64>, out_offset: usize) {
    for (row, &i) in idx.iter().enumerate() {
        out.row_mut(out_offset + row).copy_from(&x.row(offset + i));
    }
}

fn replicate(x: &DMatrix<f64>, brk: BreakSpec, counts: FactorCounts, l: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx1 = moving_block_indices(brk.t1(), l, &mut rng);
    let idx2 = moving_block_indices(brk.t2(), l, &mut rng);
    let mut x1 = DMatrix::zeros(brk.t1(), x.ncols());
    let mut x2 = DMatrix::zeros(brk.t2(), x.ncols());
    resample_rows(x, 0, &idx1, &mut x1, 0);
    resample_rows(x, brk.k, &idx2, &mut x2, 0);
    let e1 = estimate_factors(&x1, counts.r1)?;
    let e2 = estimate_factors(&x2, counts.r2)?;
    let z = decompose_loadings(&e1.loadings, &e2.loadings)?.0;
    let tr = trace_ratio_of(&z);
    if tr.is_finite() {
        Ok(tr)
    } else {
        Err(Error::Numerical("non-finite bootstrap trace ratio".into()))
    }
}

/// Percentile of sorted data with linear interpolation between order statistics.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile interval `(level/2, 1 − level/2)` of the bootstrap trace ratios.
/// Requires `r1 >= r2`.
pub fn block_bootstrap_ci(
    panel: &Panel,
    brk: BreakSpec,
    counts: FactorCounts,
    cfg: &BootstrapConfig,
) -> Result<BootstrapInterval> {
    if brk.t != panel.t() {
        return Err(Error::shape("break and panel lengths differ"));
    }
    if counts.r2 > counts.r1 {
        return Err(Error::Config("bootstrap needs r1 >= r2".into()));
    }
    brk.validate_for(counts.r1, counts.r2)?;
    let l = cfg.validate(&brk)?;
    let x = panel.values();
    let draws = crate::map_indexed(cfg.replications, |b| {
        replicate(x, brk, counts, l, replicate_seed(cfg.seed, b))
    });
    let mut values = Vec::with_capacity(draws.len());
    let mut skipped = 0;
    for d in draws {
        match d {
            Ok(v) => values.push(v),
            Err(e) if e.is_numerical() => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if skipped as f64 > MAX_SKIPPED_SHARE * cfg.replications as f64 || values.is_empty() {
        return Err(Error::BootstrapUnstable {
            skipped,
            total: cfg.replications,
        });
    }
    values.sort_by(f64::total_cmp);
    Ok(BootstrapInterval {
        lower: percentile(&values, cfg.level / 2.0),
        upper: percentile(&values, 1.0 - cfg.level / 2.0),
        level: cfg.level,
        block_length: l,
        replications: values.len(),
        skipped,
    })
}
