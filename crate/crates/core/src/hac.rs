//! Bartlett-kernel long-run covariance of multivariate score series.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::clip_psd;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    #[default]
    Bartlett,
}

/// Lag truncation and kernel settings. Without an explicit `bandwidth`, each
/// (sub)sample of length `T_m` uses `floor(scale * T_m^{1/3})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HacConfig {
    pub bandwidth: Option<usize>,
    pub scale: f64,
    pub kernel: Kernel,
    pub demean: bool,
}

impl Default for HacConfig {
    fn default() -> Self {
        HacConfig {
            bandwidth: None,
            scale: 1.0,
            kernel: Kernel::Bartlett,
            demean: false,
        }
    }
}

impl HacConfig {
    pub fn fixed(bandwidth: usize) -> Self {
        HacConfig {
            bandwidth: Some(bandwidth),
            ..HacConfig::default()
        }
    }

    /// Bandwidth used on a sample of `len` periods.
    pub fn bandwidth_for(&self, len: usize) -> usize {
        match self.bandwidth {
            Some(b) => b,
            // the epsilon keeps exact cubes (125 -> 5) from rounding down
            None => (self.scale * (len as f64).cbrt() + 1e-9).floor().max(0.0) as usize,
        }
    }
}

/// Bartlett weight `1 − j/(b+1)` for lag `j` at bandwidth `b`.
pub fn bartlett_weight(j: usize, bandwidth: usize) -> f64 {
    if j > bandwidth {
        0.0
    } else {
        1.0 - j as f64 / (bandwidth as f64 + 1.0)
    }
}

/// Output of [`bartlett_lrv`].
#[derive(Debug, Clone)]
pub struct LongRunVariance {
    /// `p x p`, symmetric PSD.
    pub matrix: DMatrix<f64>,
    pub bandwidth: usize,
    /// Negative eigenvalue mass removed to enforce PSD (zero in exact arithmetic).
    pub clipped_mass: f64,
}

/// `Γ̂0 + Σ_{j=1..b} (1 − j/(b+1)) (Γ̂j + Γ̂j')` with
/// `Γ̂j = (1/T) Σ_{t>j} u_t u_{t−j}'`, rows of `series` being `u_t`.
pub fn bartlett_lrv(series: &DMatrix<f64>, cfg: &HacConfig) -> Result<LongRunVariance> {
    let bandwidth = cfg.bandwidth_for(series.nrows());
    bartlett_lrv_with_bandwidth(series, bandwidth, cfg.demean)
}

pub fn bartlett_lrv_with_bandwidth(
    series: &DMatrix<f64>,
    bandwidth: usize,
    demean: bool,
) -> Result<LongRunVariance> {
    let (t, p) = series.shape();
    if p == 0 {
        return Err(Error::shape("long-run variance of a zero-dimensional series"));
    }
    if bandwidth >= t {
        return Err(Error::Bandwidth { bandwidth, len: t });
    }
    let centered;
    let u = if demean {
        let mut c = series.clone();
        for mut col in c.column_iter_mut() {
            let m = col.mean();
            col.add_scalar_mut(-m);
        }
        centered = c;
        &centered
    } else {
        series
    };
    let mut s = u.transpose() * u;
    for j in 1..=bandwidth {
        let gamma = u.rows(j, t - j).transpose() * u.rows(0, t - j);
        let w = bartlett_weight(j, bandwidth);
        s += (&gamma + gamma.transpose()) * w;
    }
    s /= t as f64;
    let s = (&s + s.transpose()) * 0.5;
    let (matrix, clipped_mass) = clip_psd(&s)?;
    Ok(LongRunVariance {
        matrix,
        bandwidth,
        clipped_mass,
    })
}
