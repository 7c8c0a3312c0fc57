use factorbreak::bootstrap::{block_bootstrap_ci, BootstrapConfig};
use factorbreak::montecarlo::{run_experiment, write_experiment_csv};
use factorbreak::panel_io::parse_csv;
use factorbreak::{
    aggregate_r_squared, disentangle, estimate_on, finalize, r_squared_decomposition, simulate_dgp,
    BreakSpec, BreakType, CategoryMap, DGPConfig, DisentangleConfig, Error, ExperimentOptions,
    FactorCounts, Panel,
};
use factorbreak::{decompose, load_csv};

fn dgp(break_type: BreakType, seed: u64) -> DGPConfig {
    DGPConfig {
        n: 80,
        t: 200,
        break_type,
        seed,
        ..DGPConfig::default()
    }
}

fn quarter_labels(t: usize) -> Vec<String> {
    (0..t).map(|i| format!("{}Q{}", 1960 + i / 4, i % 4 + 1)).collect()
}

fn labelled(panel: &Panel) -> Panel {
    Panel::new(
        panel.values().clone(),
        panel.series_ids().to_vec(),
        quarter_labels(panel.t()),
    )
    .unwrap()
}

#[test]
fn csv_round_trip_preserves_values_and_labels() {
    let (panel, _) = simulate_dgp(&dgp(BreakType::None, 1)).unwrap();
    let panel = labelled(&panel);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("panel.csv");
    panel.write_csv(std::fs::File::create(&path).unwrap()).unwrap();

    let raw = load_csv(&path, 1).unwrap();
    assert!(raw.tcodes.iter().all(|c| c.order() == 0));
    let back = finalize(&raw, false).unwrap();
    assert_eq!(back.series_ids(), panel.series_ids());
    assert_eq!(back.time_index(), panel.time_index());
    assert_eq!(back.values(), panel.values());
}

#[test]
fn fred_style_file_with_codes_and_missing_values() {
    let text = "sasdate,GDP,UNRATE,CPI\n\
                factors,1,1,1\n\
                transform,5,2,6\n\
                3/1/1960,100,5.0,30\n\
                6/1/1960,101,5.2,30.3\n\
                9/1/1960,103,5.1,30.5\n\
                12/1/1960,104,5.5,30.9\n\
                3/1/1961,106,5.3,31.0\n\
                6/1/1961,107,5.0,31.4\n\
                9/1/1961,,4.9,31.9\n";
    let raw = parse_csv(text.as_bytes(), 3).unwrap();
    assert_eq!(raw.series_ids, ["GDP", "UNRATE", "CPI"]);
    // The last row has a gap in GDP, which must be reported.
    let err = finalize(&raw, true).unwrap_err();
    assert!(matches!(err.root(), Error::UnbalancedPanel { .. }), "{err}");

    let raw = parse_csv(text.rsplit_once("9/1/1961").unwrap().0.as_bytes(), 3).unwrap();
    let panel = finalize(&raw, true).unwrap();
    // Second differences of logs drop two rows.
    assert_eq!(panel.t(), 4);
    assert_eq!(panel.time_index()[0], "9/1/1960");
    assert_eq!(panel.resolve_period("1961Q2").unwrap(), 3);
    assert!(panel.is_standardized());
}

#[test]
fn disentangle_report_serializes() {
    let (panel, truth) = simulate_dgp(&dgp(BreakType::Both, 2)).unwrap();
    let panel = labelled(&panel);
    let cfg = DisentangleConfig {
        bootstrap: Some(BootstrapConfig {
            replications: 100,
            seed: 11,
            ..BootstrapConfig::default()
        }),
        ..DisentangleConfig::default()
    };
    let rep = disentangle(&panel, truth.brk, FactorCounts::same(3), &cfg).unwrap();
    assert_eq!(rep.break_label, panel.time_index()[truth.brk.k - 1]);
    assert_eq!(rep.series.len(), 80);
    assert!(!rep.swapped);
    let ci = rep.trace_ci.unwrap();
    assert!(ci.lower <= ci.upper);

    let json: serde_json::Value = serde_json::from_str(&rep.to_json().unwrap()).unwrap();
    assert_eq!(json["z_result"]["method"]["kind"], "Z_WALD");
    assert_eq!(json["w_joint_result"]["df"], 3);
    assert_eq!(json["series"].as_array().unwrap().len(), 80);

    let mut buf = Vec::new();
    rep.write_series_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "series_id,w_statistic,p_value,rejected_at_5pct");
    assert_eq!(lines.count(), 80);
    assert!(rep.summary().contains("Holm p"));
}

#[test]
fn both_breaks_detected_on_simulated_panel() {
    let (panel, truth) = simulate_dgp(&DGPConfig {
        t: 400,
        break_type: BreakType::Both,
        seed: 3,
        ..DGPConfig::default()
    })
    .unwrap();
    let rep = disentangle(&panel, truth.brk, FactorCounts::same(3), &DisentangleConfig::default()).unwrap();
    assert!(rep.holm_adjusted.0 < 0.01);
    assert!(rep.holm_adjusted.1 < 0.01);
}

#[test]
fn emerging_factor_swaps_regimes() {
    let (panel, truth) = simulate_dgp(&DGPConfig {
        n: 100,
        t: 300,
        break_type: BreakType::Vanish,
        seed: 4,
        ..DGPConfig::default()
    })
    .unwrap();
    // Reversing time turns the vanishing factor into an emerging one.
    let rev = panel.reversed();
    let brk = truth.brk.reversed();
    let rep = disentangle(&rev, brk, FactorCounts { r1: 2, r2: 3 }, &DisentangleConfig::default()).unwrap();
    assert!(rep.swapped);
    assert_eq!((rep.r1, rep.r2), (2, 3));
    assert_eq!(rep.k, brk.k);
    assert!(rep.notes.iter().any(|n| n.contains("rectangular")));

    let direct = disentangle(&panel, truth.brk, FactorCounts { r1: 3, r2: 2 }, &DisentangleConfig::default()).unwrap();
    assert!((direct.z_result.statistic - rep.z_result.statistic).abs() < 1e-8 * direct.z_result.statistic);
    assert_eq!(direct.z_result.df, 6);
}

#[test]
fn bootstrap_interval_covers_truth_without_noise_dominance() {
    let (panel, truth) = simulate_dgp(&DGPConfig {
        n: 100,
        t: 400,
        theta: 0.1,
        break_type: BreakType::None,
        seed: 5,
        ..DGPConfig::default()
    })
    .unwrap();
    let cfg = BootstrapConfig {
        replications: 199,
        seed: 3,
        ..BootstrapConfig::default()
    };
    let ci = block_bootstrap_ci(&panel, truth.brk, FactorCounts::same(3), &cfg).unwrap();
    assert!(ci.lower <= 1.0 && 1.0 <= ci.upper, "{ci:?}");
    assert_eq!(ci.block_length, 7);

    let other = block_bootstrap_ci(&panel, truth.brk, FactorCounts::same(3), &BootstrapConfig { seed: 4, ..cfg }).unwrap();
    assert_ne!(ci, other);
}

#[test]
fn bootstrap_rejects_bad_configuration() {
    let (panel, _) = simulate_dgp(&dgp(BreakType::None, 6)).unwrap();
    let brk = BreakSpec::new(100, 200).unwrap();
    let cfg = BootstrapConfig {
        block_length: Some(150),
        ..BootstrapConfig::default()
    };
    let err = block_bootstrap_ci(&panel, brk, FactorCounts::same(3), &cfg).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

fn category_r2(break_type: BreakType) -> Vec<factorbreak::CategoryRSquared> {
    let (panel, truth) = simulate_dgp(&DGPConfig {
        t: 300,
        break_type,
        seed: 7,
        ..DGPConfig::default()
    })
    .unwrap();
    let e1 = estimate_on(&panel, truth.brk.regime1(), 3).unwrap();
    let e2 = estimate_on(&panel, truth.brk.regime2(), 3).unwrap();
    let d = decompose(&e1, &e2).unwrap();
    let u = r_squared_decomposition(&panel, &e1, &e2, &d, false).unwrap();
    let r = r_squared_decomposition(&panel, &e1, &e2, &d, true).unwrap();
    let map: CategoryMap = panel
        .series_ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), format!("group{}", i % 4)))
        .collect();
    aggregate_r_squared(panel.series_ids(), &u, &r, &map).unwrap()
}

#[test]
fn restriction_not_binding_without_break() {
    for c in category_r2(BreakType::None) {
        assert!(c.gap >= 0.0);
        assert!(c.gap < 0.02, "{c:?}");
    }
}

#[test]
fn restriction_binds_under_loading_break() {
    for c in category_r2(BreakType::WOnly) {
        assert!(c.gap > 0.1, "{c:?}");
    }
}

#[test]
fn experiment_csv_is_reproducible() {
    let grid = vec![
        DGPConfig {
            n: 40,
            t: 100,
            seed: 9,
            ..DGPConfig::default()
        },
        DGPConfig {
            n: 40,
            t: 100,
            break_type: BreakType::ZOnly,
            seed: 10,
            ..DGPConfig::default()
        },
    ];
    let opts = ExperimentOptions {
        reps: 100,
        ..ExperimentOptions::default()
    };
    let render = || {
        let rows = run_experiment(&grid, &opts).unwrap();
        let mut buf = Vec::new();
        write_experiment_csv(&rows, &mut buf).unwrap();
        buf
    };
    let a = render();
    assert_eq!(a, render());
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.starts_with("break_type,"));
}
