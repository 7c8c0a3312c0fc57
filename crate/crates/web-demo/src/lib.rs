//! Browser demo: simulate a panel, run the break tests and draw the results.
//!
//! Each exported function takes a JSON object of settings and returns a JSON
//! string, so the page only needs `JSON.parse`. The plain Rust functions are
//! the same ones the wasm exports call, which keeps them testable natively.

use factorbreak::montecarlo::run_replication;
use factorbreak::{
    decompose, disentangle, estimate_on, simulate_dgp, trace_ratio, BreakType, DGPConfig,
    DisentangleConfig, ExperimentOptions, ZSpec,
};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

/// Largest panel the page may request; keeps the tab responsive.
const MAX_CELLS: usize = 400 * 1000;

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct DemoParams {
    pub n: usize,
    pub t: usize,
    pub break_type: BreakType,
    pub omega: f64,
    pub rho: f64,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    /// Replications per point of a rejection curve.
    pub reps: usize,
    /// Points on a curve.
    pub points: usize,
}

impl Default for DemoParams {
    fn default() -> Self {
        DemoParams {
            n: 100,
            t: 200,
            break_type: BreakType::Both,
            omega: 1.0,
            rho: 0.0,
            alpha: 0.0,
            beta: 0.0,
            seed: 1,
            reps: 40,
            points: 9,
        }
    }
}

impl DemoParams {
    fn parse(json: &str) -> Result<Self, String> {
        let p: DemoParams = if json.trim().is_empty() {
            DemoParams::default()
        } else {
            serde_json::from_str(json).map_err(|e| format!("bad settings: {e}"))?
        };
        if p.n * p.t > MAX_CELLS {
            return Err(format!("N x T = {} exceeds the demo limit of {MAX_CELLS}", p.n * p.t));
        }
        if p.points < 2 || p.points > 25 || p.reps == 0 || p.reps > 500 {
            return Err("points must lie in 2..=25 and reps in 1..=500".into());
        }
        Ok(p)
    }

    fn dgp(&self) -> DGPConfig {
        DGPConfig {
            n: self.n,
            t: self.t,
            break_type: self.break_type,
            omega: self.omega,
            rho: self.rho,
            alpha: self.alpha,
            beta: self.beta,
            seed: self.seed,
            ..DGPConfig::default()
        }
    }
}

#[derive(Debug, Serialize)]
pub struct TestSummary {
    pub z_statistic: f64,
    pub z_p: f64,
    pub w_statistic: f64,
    pub w_p: f64,
    pub holm: (f64, f64),
    pub trace_ratio: f64,
    pub rejections: usize,
    pub n: usize,
    /// `‖w̃_i‖` per series, for the bar chart.
    pub w_norms: Vec<f64>,
}

/// One simulated panel, tested at its true break.
pub fn simulate_and_test_json(settings: &str) -> Result<String, String> {
    let p = DemoParams::parse(settings)?;
    let (panel, truth) = simulate_dgp(&p.dgp()).map_err(|e| e.to_string())?;
    let rep = disentangle(&panel, truth.brk, truth.counts, &DisentangleConfig::default())
        .map_err(|e| e.to_string())?;
    let out = TestSummary {
        z_statistic: rep.z_result.statistic,
        z_p: rep.z_result.p_value,
        w_statistic: rep.w_joint_result.statistic,
        w_p: rep.w_joint_result.p_value,
        holm: rep.holm_adjusted,
        trace_ratio: rep.trace_ratio,
        rejections: rep.rejection_count,
        n: rep.n,
        w_norms: rep.series.iter().map(|s| s.w_norm).collect(),
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Debug, Serialize)]
pub struct Curve {
    pub x: Vec<f64>,
    pub series: Vec<(String, Vec<f64>)>,
}

fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .collect()
}

/// Estimated trace ratio when the factors are scaled by `c` after the break
/// (`Z = c·I`), against the population value `c²`.
pub fn trace_ratio_curve_json(settings: &str) -> Result<String, String> {
    let p = DemoParams::parse(settings)?;
    let scales = linspace(0.25, 2.0, p.points);
    let mut estimated = Vec::with_capacity(scales.len());
    for (i, &c) in scales.iter().enumerate() {
        let cfg = DGPConfig {
            break_type: BreakType::ZOnly,
            z_spec: ZSpec::Scaled(c),
            omega: 0.0,
            seed: p.seed.wrapping_add(i as u64),
            ..p.dgp()
        };
        let (panel, truth) = simulate_dgp(&cfg).map_err(|e| e.to_string())?;
        let e1 = estimate_on(&panel, truth.brk.regime1(), cfg.r).map_err(|e| e.to_string())?;
        let e2 = estimate_on(&panel, truth.brk.regime2(), cfg.r).map_err(|e| e.to_string())?;
        let d = decompose(&e1, &e2).map_err(|e| e.to_string())?;
        estimated.push(trace_ratio(&d));
    }
    let truth = scales.iter().map(|c| c * c).collect();
    let curve = Curve {
        x: scales,
        series: vec![("estimated".into(), estimated), ("c squared".into(), truth)],
    };
    serde_json::to_string(&curve).map_err(|e| e.to_string())
}

/// Rejection frequencies of the Z and W tests as the loading shift `ω`
/// grows, with the factor-variance break switched on or off by `break_type`.
pub fn rejection_curve_json(settings: &str) -> Result<String, String> {
    let p = DemoParams::parse(settings)?;
    let omegas = linspace(0.0, 1.0, p.points);
    let with_z = matches!(p.break_type, BreakType::ZOnly | BreakType::Both);
    let opts = ExperimentOptions {
        reps: p.reps,
        ..ExperimentOptions::default()
    };
    let mut z = Vec::new();
    let mut w = Vec::new();
    for (i, &omega) in omegas.iter().enumerate() {
        let break_type = match (with_z, omega > 0.0) {
            (true, true) => BreakType::Both,
            (true, false) => BreakType::ZOnly,
            (false, true) => BreakType::WOnly,
            (false, false) => BreakType::None,
        };
        let (mut zr, mut wr) = (0usize, 0usize);
        for b in 0..p.reps {
            let cfg = DGPConfig {
                break_type,
                omega,
                seed: p.seed.wrapping_mul(1_000_003).wrapping_add((i * p.reps + b) as u64),
                ..p.dgp()
            };
            let o = run_replication(&cfg, &opts).map_err(|e| e.to_string())?;
            zr += usize::from(o.z_p < opts.level);
            wr += usize::from(o.w_p < opts.level);
        }
        z.push(zr as f64 / p.reps as f64);
        w.push(wr as f64 / p.reps as f64);
    }
    let curve = Curve {
        x: omegas,
        series: vec![("Z test".into(), z), ("W test".into(), w)],
    };
    serde_json::to_string(&curve).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn simulate_and_test(settings: &str) -> Result<String, JsValue> {
    simulate_and_test_json(settings).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn trace_ratio_curve(settings: &str) -> Result<String, JsValue> {
    trace_ratio_curve_json(settings).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn rejection_curve(settings: &str) -> Result<String, JsValue> {
    rejection_curve_json(settings).map_err(|e| JsValue::from_str(&e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn simulate_and_test_returns_per_series_norms() {
        let out: Value = serde_json::from_str(&simulate_and_test_json("").unwrap()).unwrap();
        assert_eq!(out["w_norms"].as_array().unwrap().len(), 100);
        assert!(out["z_p"].as_f64().unwrap() < 0.05);
    }

    #[test]
    fn trace_curve_tracks_c_squared() {
        let out: Value =
            serde_json::from_str(&trace_ratio_curve_json(r#"{"n": 60, "t": 300, "points": 3}"#).unwrap()).unwrap();
        let est = out["series"][0][1].as_array().unwrap();
        let truth = out["series"][1][1].as_array().unwrap();
        for (e, t) in est.iter().zip(truth) {
            let (e, t) = (e.as_f64().unwrap(), t.as_f64().unwrap());
            assert!((e / t - 1.0).abs() < 0.3, "{e} vs {t}");
        }
    }

    #[test]
    fn rejection_curve_shape() {
        let s = r#"{"n": 30, "t": 100, "reps": 4, "points": 2, "break_type": "NONE"}"#;
        let out: Value = serde_json::from_str(&rejection_curve_json(s).unwrap()).unwrap();
        assert_eq!(out["x"].as_array().unwrap().len(), 2);
        assert_eq!(out["series"][1][1].as_array().unwrap().len(), 2);
    }

    #[test]
    fn oversized_requests_are_refused() {
        assert!(simulate_and_test_json(r#"{"n": 5000, "t": 5000}"#).is_err());
        assert!(rejection_curve_json(r#"{"points": 1}"#).is_err());
        assert!(simulate_and_test_json("{not json").is_err());
    }
}
