//! Simulation design for size and power studies and the experiment runner.
//!
//! ```text
//! x_it = λ1_i' f_t + √θ e_it                 t <= floor(πT)
//! x_it = (Z λ1_i + ω w_i)' f_t + √θ e_it     t >  floor(πT)
//! f_t = ρ f_{t−1} + μ_t,  μ_t ~ N(0, (1 − ρ²) I)
//! e_t = α e_{t−1} + v_t,  v_t ~ N(0, Ω),  Ω_ij = β^|i−j|
//! ```
//!
//! `W` is the residual of projecting an independent draw `Λ2` on `Λ1`.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bootstrap::replicate_seed;
use crate::break_tests::{holm_adjust, run_tests, DisentangleConfig, FactorCounts, WResidual};
use crate::error::{Error, Result};
use crate::hac::HacConfig;
use crate::numerics::least_squares;
use crate::panel_io::{BreakSpec, Panel};
use crate::pca::ic_p2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BreakType {
    #[default]
    None,
    WOnly,
    ZOnly,
    Both,
    /// The last factor stops loading on every series after the break.
    Vanish,
}

impl BreakType {
    fn rotates(self) -> bool {
        matches!(self, BreakType::ZOnly | BreakType::Both)
    }

    fn shifts(self) -> bool {
        matches!(self, BreakType::WOnly | BreakType::Both)
    }
}

/// Rotation applied under `Z_ONLY` and `BOTH`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ZSpec {
    Identity,
    /// Lower triangular, diagonal evenly spaced from 2.5 down to 0.5
    /// (`[2.5, 1.5, 0.5]` for three factors), strictly lower entries N(0, 1).
    #[default]
    LowerTriangular,
    /// `c I`.
    Scaled(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DGPConfig {
    pub n: usize,
    pub t: usize,
    pub r: usize,
    pub pi: f64,
    pub rho: f64,
    pub alpha: f64,
    pub beta: f64,
    pub theta: f64,
    pub omega: f64,
    pub break_type: BreakType,
    pub z_spec: ZSpec,
    pub seed: u64,
    /// When set, the random part of `Z` is drawn from this seed instead of
    /// the replication stream, holding `Z` fixed across replications.
    pub z_seed: Option<u64>,
}

impl Default for DGPConfig {
    fn default() -> Self {
        DGPConfig {
            n: 200,
            t: 500,
            r: 3,
            pi: 0.5,
            rho: 0.0,
            alpha: 0.0,
            beta: 0.0,
            theta: 3.0,
            omega: 1.0,
            break_type: BreakType::None,
            z_spec: ZSpec::LowerTriangular,
            seed: 0,
            z_seed: None,
        }
    }
}

impl DGPConfig {
    pub fn validate(&self) -> Result<BreakSpec> {
        let bad = |m: String| Err(Error::Config(m));
        if self.r == 0 || self.n <= self.r {
            return bad(format!("need 1 <= r < N, got r = {}, N = {}", self.r, self.n));
        }
        for (name, v) in [("rho", self.rho), ("alpha", self.alpha), ("beta", self.beta)] {
            if !(v.abs() < 1.0) {
                return bad(format!("|{name}| must be below 1, got {v}"));
            }
        }
        if !(self.theta > 0.0) {
            return bad(format!("theta must be positive, got {}", self.theta));
        }
        if !self.omega.is_finite() {
            return bad("omega must be finite".into());
        }
        if self.break_type == BreakType::Vanish && self.r < 2 {
            return bad("a vanishing factor needs r >= 2".into());
        }
        let brk = BreakSpec::from_fraction(self.pi, self.t).map_err(|e| Error::Config(e.to_string()))?;
        brk.validate_for(self.r, self.r)
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(brk)
    }

    /// Factor counts a correctly specified analysis uses.
    pub fn true_counts(&self) -> FactorCounts {
        match self.break_type {
            BreakType::Vanish => FactorCounts { r1: self.r, r2: self.r - 1 },
            _ => FactorCounts::same(self.r),
        }
    }
}

/// Population quantities behind a simulated panel.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub lambda1: DMatrix<f64>,
    /// Loadings in force after the break.
    pub lambda2: DMatrix<f64>,
    /// `r x r` rotation used (identity when not rotating).
    pub z: DMatrix<f64>,
    /// Orthogonal shift actually added (already scaled by `ω`, zero when inactive).
    pub w: DMatrix<f64>,
    pub factors: DMatrix<f64>,
    pub errors: DMatrix<f64>,
    pub brk: BreakSpec,
    pub counts: FactorCounts,
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Diagonal entries of the lower-triangular rotation for `r` factors.
pub fn default_z_diagonal(r: usize) -> Vec<f64> {
    if r == 1 {
        return vec![2.5];
    }
    (0..r).map(|i| 2.5 - 2.0 * i as f64 / (r - 1) as f64).collect()
}

fn rotation(cfg: &DGPConfig, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let r = cfg.r;
    match cfg.z_spec {
        ZSpec::Identity => DMatrix::identity(r, r),
        ZSpec::Scaled(c) => DMatrix::identity(r, r) * c,
        ZSpec::LowerTriangular => {
            let mut own;
            let rng = match cfg.z_seed {
                Some(s) => {
                    own = ChaCha8Rng::seed_from_u64(s);
                    &mut own
                }
                None => rng,
            };
            let diag = default_z_diagonal(r);
            let mut z = DMatrix::zeros(r, r);
            for i in 0..r {
                z[(i, i)] = diag[i];
                for j in 0..i {
                    z[(i, j)] = StandardNormal.sample(rng);
                }
            }
            z
        }
    }
}

fn ar1_rows(innovations: DMatrix<f64>, phi: f64, init_scale: f64) -> DMatrix<f64> {
    let mut x = innovations;
    let t = x.nrows();
    if t > 0 {
        x.row_mut(0).scale_mut(init_scale);
    }
    for j in 0..x.ncols() {
        for s in 1..t {
            x[(s, j)] += phi * x[(s - 1, j)];
        }
    }
    x
}

/// Cholesky factor of the Toeplitz matrix `β^|i−j|`.
fn toeplitz_cholesky(n: usize, beta: f64) -> Result<DMatrix<f64>> {
    let omega = DMatrix::from_fn(n, n, |i, j| beta.powi(i.abs_diff(j) as i32));
    Cholesky::new(omega)
        .map(|c| c.unpack())
        .ok_or_else(|| Error::Numerical(format!("Toeplitz covariance with beta = {beta} is not positive definite")))
}

/// Draw one panel. Deterministic in `cfg.seed` (and `cfg.z_seed`).
pub fn simulate_dgp(cfg: &DGPConfig) -> Result<(Panel, GroundTruth)> {
    let brk = cfg.validate()?;
    let (n, t, r) = (cfg.n, cfg.t, cfg.r);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let lambda1 = gaussian(n, r, &mut rng);
    let draw2 = gaussian(n, r, &mut rng);
    let coef = least_squares(&lambda1, &draw2)?;
    let w_raw = &draw2 - &lambda1 * coef;
    let z_draw = rotation(cfg, &mut rng);

    let z = if cfg.break_type.rotates() {
        z_draw
    } else {
        DMatrix::identity(r, r)
    };
    let w = if cfg.break_type.shifts() {
        w_raw * cfg.omega
    } else {
        DMatrix::zeros(n, r)
    };
    let mut lambda2 = &lambda1 * z.transpose() + &w;
    if cfg.break_type == BreakType::Vanish {
        lambda2.column_mut(r - 1).fill(0.0);
    }

    let rho_scale = (1.0 - cfg.rho * cfg.rho).sqrt();
    let factors = ar1_rows(gaussian(t, r, &mut rng) * rho_scale, cfg.rho, 1.0 / rho_scale);

    let mut v = gaussian(t, n, &mut rng);
    if cfg.beta != 0.0 {
        let l = toeplitz_cholesky(n, cfg.beta)?;
        v *= l.transpose();
    }
    let errors = ar1_rows(v, cfg.alpha, 1.0 / (1.0 - cfg.alpha * cfg.alpha).sqrt());

    let k = brk.k;
    let mut x = &errors * cfg.theta.sqrt();
    x.rows_mut(0, k)
        .gemm(1.0, &factors.rows(0, k), &lambda1.transpose(), 1.0);
    x.rows_mut(k, t - k)
        .gemm(1.0, &factors.rows(k, t - k), &lambda2.transpose(), 1.0);

    let panel = Panel::from_matrix(x)?;
    let truth = GroundTruth {
        lambda1,
        lambda2,
        z,
        w,
        factors,
        errors,
        brk,
        counts: cfg.true_counts(),
    };
    Ok((panel, truth))
}

/// Settings shared by every cell of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentOptions {
    pub reps: usize,
    pub level: f64,
    pub hac: HacConfig,
    /// Upper bound for the full-sample factor count search.
    pub r_max: usize,
    pub with_lm: bool,
    pub w_residual: WResidual,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        ExperimentOptions {
            reps: 1000,
            level: 0.05,
            hac: HacConfig::default(),
            r_max: 8,
            with_lm: false,
            w_residual: WResidual::OwnRegime,
        }
    }
}

/// Outcome of one replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicationOutcome {
    pub z_p: f64,
    pub z_adj_p: f64,
    pub w_p: f64,
    pub w_adj_p: f64,
    pub z_lm_p: Option<f64>,
    pub individual_rate: f64,
    pub r_tilde: usize,
}

/// Simulate and test one panel.
pub fn run_replication(cfg: &DGPConfig, opts: &ExperimentOptions) -> Result<ReplicationOutcome> {
    let (panel, truth) = simulate_dgp(cfg)?;
    let dcfg = DisentangleConfig {
        hac: opts.hac,
        level: opts.level,
        with_lm: opts.with_lm,
        w_residual: opts.w_residual,
        ..DisentangleConfig::default()
    };
    let bundle = run_tests(&panel, truth.brk, truth.counts, &dcfg)?;
    let adj = holm_adjust(&[bundle.z.p_value, bundle.w_joint.p_value])?;
    let rejected = bundle
        .w_individual
        .iter()
        .filter(|t| t.p_value < opts.level)
        .count();
    Ok(ReplicationOutcome {
        z_p: bundle.z.p_value,
        z_adj_p: adj[0],
        w_p: bundle.w_joint.p_value,
        w_adj_p: adj[1],
        z_lm_p: bundle.z_lm.map(|t| t.p_value),
        individual_rate: rejected as f64 / panel.n() as f64,
        r_tilde: ic_p2(panel.values(), opts.r_max)?,
    })
}

/// One row of an experiment table.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExperimentRow {
    pub break_type: BreakType,
    pub n: usize,
    pub t: usize,
    pub r: usize,
    pub pi: f64,
    pub rho: f64,
    pub alpha: f64,
    pub beta: f64,
    pub theta: f64,
    pub omega: f64,
    pub reps: usize,
    pub z_unadjusted: f64,
    pub z_adjusted: f64,
    pub w_unadjusted: f64,
    pub w_adjusted: f64,
    pub w_individual: f64,
    pub r_tilde: f64,
    pub z_lm: Option<f64>,
    pub se_z_unadjusted: f64,
    pub se_z_adjusted: f64,
    pub se_w_unadjusted: f64,
    pub se_w_adjusted: f64,
    pub se_r_tilde: f64,
}

/// Binomial Monte Carlo standard error `sqrt(p(1 − p)/reps)`.
pub fn mc_standard_error(p: f64, reps: usize) -> f64 {
    (p * (1.0 - p) / reps as f64).sqrt()
}

/// Aggregate replication outcomes for one cell.
pub fn summarize(cfg: &DGPConfig, outcomes: &[ReplicationOutcome], level: f64) -> ExperimentRow {
    let reps = outcomes.len();
    let rate = |f: &dyn Fn(&ReplicationOutcome) -> f64| {
        outcomes.iter().filter(|o| f(o) < level).count() as f64 / reps as f64
    };
    let z_unadjusted = rate(&|o| o.z_p);
    let z_adjusted = rate(&|o| o.z_adj_p);
    let w_unadjusted = rate(&|o| o.w_p);
    let w_adjusted = rate(&|o| o.w_adj_p);
    let z_lm = if outcomes.iter().all(|o| o.z_lm_p.is_some()) && reps > 0 {
        Some(rate(&|o| o.z_lm_p.unwrap_or(1.0)))
    } else {
        None
    };
    let r_vals: Vec<f64> = outcomes.iter().map(|o| o.r_tilde as f64).collect();
    let r_tilde = r_vals.iter().sum::<f64>() / reps as f64;
    let r_var = if reps > 1 {
        r_vals.iter().map(|v| (v - r_tilde).powi(2)).sum::<f64>() / (reps - 1) as f64
    } else {
        0.0
    };
    ExperimentRow {
        break_type: cfg.break_type,
        n: cfg.n,
        t: cfg.t,
        r: cfg.r,
        pi: cfg.pi,
        rho: cfg.rho,
        alpha: cfg.alpha,
        beta: cfg.beta,
        theta: cfg.theta,
        omega: cfg.omega,
        reps,
        z_unadjusted,
        z_adjusted,
        w_unadjusted,
        w_adjusted,
        w_individual: outcomes.iter().map(|o| o.individual_rate).sum::<f64>() / reps as f64,
        r_tilde,
        z_lm,
        se_z_unadjusted: mc_standard_error(z_unadjusted, reps),
        se_z_adjusted: mc_standard_error(z_adjusted, reps),
        se_w_unadjusted: mc_standard_error(w_unadjusted, reps),
        se_w_adjusted: mc_standard_error(w_adjusted, reps),
        se_r_tilde: (r_var / reps as f64).sqrt(),
    }
}

/// Run `opts.reps` replications of one cell. Replication `b` uses seed
/// `replicate_seed(cfg.seed, b)`, so results do not depend on scheduling.
pub fn run_cell(cfg: &DGPConfig, opts: &ExperimentOptions) -> Result<ExperimentRow> {
    cfg.validate()?;
    let outcomes = crate::map_indexed(opts.reps, |b| {
        let rep_cfg = DGPConfig {
            seed: replicate_seed(cfg.seed, b),
            ..*cfg
        };
        run_replication(&rep_cfg, opts).map_err(|e| {
            e.context(format!("replication {b} (seed {}) of {:?} cell", rep_cfg.seed, cfg.break_type))
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(summarize(cfg, &outcomes, opts.level))
}

/// Fewest replications [`run_experiment`] accepts.
pub const MIN_EXPERIMENT_REPS: usize = 100;

/// Run every cell of a grid.
pub fn run_experiment(grid: &[DGPConfig], opts: &ExperimentOptions) -> Result<Vec<ExperimentRow>> {
    if opts.reps < MIN_EXPERIMENT_REPS {
        return Err(Error::Config(format!("experiments need at least 100 replications, got {}", opts.reps)));
    }
    if !(opts.level > 0.0 && opts.level < 1.0) {
        return Err(Error::Config(format!("level {} must lie in (0, 1)", opts.level)));
    }
    grid.iter()
        .enumerate()
        .map(|(i, cell)| run_cell(cell, opts).map_err(|e| e.context(format!("grid cell {}", i + 1))))
        .collect()
}

pub fn write_experiment_csv<W: Write>(rows: &[ExperimentRow], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    for row in rows {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}
