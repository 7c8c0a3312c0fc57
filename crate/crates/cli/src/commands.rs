use std::fs;
use std::path::Path;

use factorbreak::bootstrap::{block_bootstrap_ci, BootstrapConfig};
use factorbreak::montecarlo::{run_cell, write_experiment_csv, MIN_EXPERIMENT_REPS};
use factorbreak::panel_io::{finalize_with, FinalizeOptions};
use factorbreak::{
    aggregate_r_squared, configure_threads, decompose, disentangle, estimate_on, load_csv,
    r_squared_decomposition, run_experiment, BreakSpec, CategoryMap, DGPConfig, DisentangleConfig,
    Error, ExperimentOptions, FactorCounts, HacConfig, HolmFamily, Panel, WResidual,
};
use serde::{Deserialize, Serialize};

use crate::args::{
    BootstrapArgs, BreakArgs, Cli, Command, HacArgs, HolmArg, IngestArgs, PanelArgs, R2Args,
    ResidualArg, SimulateArgs, TestArgs,
};
use crate::manifest::Manifest;
use crate::{CliError, CliResult};

pub fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        configure_threads(n)?;
    }
    match &cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Test(a) => test(a),
        Command::Simulate(a) => simulate(a),
        Command::BootstrapCi(a) => bootstrap_ci(a),
        Command::R2Report(a) => r2_report(a),
    }
}

fn out_dir(path: &Path) -> CliResult<&Path> {
    fs::create_dir_all(path)?;
    Ok(path)
}

fn load_panel(a: &PanelArgs) -> CliResult<Panel> {
    let window = match &a.window {
        None => None,
        Some(w) => match w.split_once(',') {
            Some((s, e)) => Some((s.trim().to_string(), e.trim().to_string())),
            None => return Err(CliError::usage(format!("--window expects START,END, got `{w}`"))),
        },
    };
    let raw = load_csv(&a.input, a.header_rows)?;
    let opts = FinalizeOptions {
        standardize: !a.no_standardize,
        window,
    };
    Ok(finalize_with(&raw, &opts)?)
}

fn break_and_counts(panel: &Panel, a: &BreakArgs) -> CliResult<(BreakSpec, FactorCounts)> {
    let counts: FactorCounts = a.factors.parse()?;
    let brk = panel.parse_break(&a.break_date)?;
    Ok((brk, counts))
}

/// Reverse time when fewer factors precede the break, so that `r1 >= r2`.
fn oriented(panel: Panel, brk: BreakSpec, counts: FactorCounts) -> (Panel, BreakSpec, FactorCounts, bool) {
    if counts.r1 < counts.r2 {
        let swapped = FactorCounts {
            r1: counts.r2,
            r2: counts.r1,
        };
        (panel.reversed(), brk.reversed(), swapped, true)
    } else {
        (panel, brk, counts, false)
    }
}

fn check_level(level: f64) -> CliResult<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(CliError::usage(format!("--level {level} must lie in (0, 1)")))
    }
}

fn apply_hac(hac: &mut HacConfig, a: &HacArgs) -> CliResult<()> {
    if let Some(b) = a.bandwidth {
        hac.bandwidth = Some(b);
    }
    if let Some(s) = a.bandwidth_scale {
        if !(s > 0.0 && s.is_finite()) {
            return Err(CliError::usage(format!("--bandwidth-scale {s} must be positive")));
        }
        hac.scale = s;
    }
    Ok(())
}

fn residual(a: ResidualArg) -> WResidual {
    match a {
        ResidualArg::OwnRegime => WResidual::OwnRegime,
        ResidualArg::PostBreakLoadings => WResidual::PostBreakLoadings,
    }
}

/// Read a TOML or JSON file, choosing the format by extension.
fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path)?;
    let is_json = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let parsed = if is_json {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| Error::Config(format!("{}: {e}", path.display())).into())
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> factorbreak::Result<()>) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

#[derive(Serialize)]
struct IngestSummary<'a> {
    t: usize,
    n: usize,
    first_period: &'a str,
    last_period: &'a str,
    standardized: bool,
}

fn ingest(a: &IngestArgs) -> CliResult<()> {
    let panel = load_panel(&a.panel)?;
    let dir = out_dir(&a.out.out)?;
    let mut m = Manifest::new("ingest", a);
    m.inputs.push(a.panel.input.clone());
    m.output(dir, "panel.csv", csv_bytes(|b| panel.write_csv(b))?)?;
    let idx = panel.time_index();
    let summary = IngestSummary {
        t: panel.t(),
        n: panel.n(),
        first_period: &idx[0],
        last_period: &idx[idx.len() - 1],
        standardized: panel.is_standardized(),
    };
    let text = serde_json::to_string_pretty(&summary).map_err(Error::from)?;
    println!("{text}");
    m.settings(&summary);
    m.output(dir, "ingest.json", text)?;
    m.finish(dir)
}

fn test_config(a: &TestArgs) -> CliResult<DisentangleConfig> {
    let mut cfg = match &a.config {
        Some(path) => read_config::<DisentangleConfig>(path)?,
        None => DisentangleConfig {
            bootstrap: Some(BootstrapConfig::default()),
            ..DisentangleConfig::default()
        },
    };
    apply_hac(&mut cfg.hac, &a.hac)?;
    if let Some(level) = a.level {
        cfg.level = level;
    }
    check_level(cfg.level)?;
    if let Some(h) = a.holm_family {
        cfg.holm_family = match h {
            HolmArg::Pair => HolmFamily::Pair,
            HolmArg::WithIndividual => HolmFamily::WithIndividual,
        };
    }
    if let Some(r) = a.w_residual {
        cfg.w_residual = residual(r);
    }
    if a.reps == Some(0) {
        cfg.bootstrap = None;
    } else if a.reps.is_some() || a.block_length.is_some() || a.seed.is_some() {
        let mut b = cfg.bootstrap.unwrap_or_default();
        b.replications = a.reps.unwrap_or(b.replications);
        b.block_length = a.block_length.or(b.block_length);
        b.seed = a.seed.unwrap_or(b.seed);
        cfg.bootstrap = Some(b);
    }
    Ok(cfg)
}

fn test(a: &TestArgs) -> CliResult<()> {
    let cfg = test_config(a)?;
    let panel = load_panel(&a.panel)?;
    let (brk, counts) = break_and_counts(&panel, &a.brk)?;
    let report = disentangle(&panel, brk, counts, &cfg)?;

    let dir = out_dir(&a.out.out)?;
    let mut m = Manifest::new("test", a);
    m.seed = cfg.bootstrap.map(|b| b.seed);
    m.inputs.push(a.panel.input.clone());
    if let Some(c) = &a.config {
        m.inputs.push(c.clone());
    }
    m.settings(&cfg);
    m.output(dir, "report.json", report.to_json()?)?;
    m.output(dir, "series.csv", csv_bytes(|b| report.write_series_csv(b))?)?;
    let summary = report.summary();
    print!("{summary}");
    m.output(dir, "summary.txt", summary)?;

    let (panel, brk, counts, _) = oriented(panel, brk, counts);
    let e1 = estimate_on(&panel, brk.regime1(), counts.r1)?;
    let e2 = estimate_on(&panel, brk.regime2(), counts.r2)?;
    let export = decompose(&e1, &e2)?.export(panel.series_ids())?;
    m.output(dir, "decomposition.csv", csv_bytes(|b| export.write_csv(b))?)?;
    m.finish(dir)
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    #[serde(default)]
    options: ExperimentOptions,
    #[serde(rename = "cell")]
    cells: Vec<DGPConfig>,
}

fn simulate(a: &SimulateArgs) -> CliResult<()> {
    let mut grid: GridFile = read_config(&a.grid)?;
    if grid.cells.is_empty() {
        return Err(Error::Config(format!("{} defines no cells", a.grid.display())).into());
    }
    let opts = &mut grid.options;
    if let Some(r) = a.reps {
        opts.reps = r;
    }
    if let Some(l) = a.level {
        opts.level = l;
    }
    check_level(opts.level)?;
    opts.with_lm |= a.with_lm;
    if let Some(r) = a.w_residual {
        opts.w_residual = residual(r);
    }
    apply_hac(&mut opts.hac, &a.hac)?;
    if let Some(seed) = a.seed {
        for (i, cell) in grid.cells.iter_mut().enumerate() {
            cell.seed = seed.wrapping_add(i as u64);
        }
    }

    let dir = out_dir(&a.out.out)?;
    let mut m = Manifest::new("simulate", a);
    m.seed = a.seed;
    let rows = if grid.options.reps >= MIN_EXPERIMENT_REPS {
        run_experiment(&grid.cells, &grid.options)?
    } else {
        // Smoke runs: same cells, too few replications for the tables.
        if grid.options.reps == 0 {
            return Err(CliError::usage("--reps must be positive"));
        }
        eprintln!(
            "warning: {} replications per cell; rates and standard errors are only indicative",
            grid.options.reps
        );
        m.notes.push(format!("smoke run with {} replications per cell", grid.options.reps));
        grid.cells
            .iter()
            .map(|c| run_cell(c, &grid.options))
            .collect::<factorbreak::Result<Vec<_>>>()?
    };
    m.inputs.push(a.grid.clone());
    m.settings(&grid);
    m.output(dir, "table.csv", csv_bytes(|b| write_experiment_csv(&rows, b))?)?;

    println!(
        "{:<8}{:>6}{:>5}{:>6}{:>6}{:>8}{:>8}{:>8}{:>8}{:>8}",
        "break", "T", "rho", "alpha", "omega", "Z", "Z adj", "W", "W adj", "r~"
    );
    for r in &rows {
        println!(
            "{:<8}{:>6}{:>5}{:>6}{:>6}{:>8.3}{:>8.3}{:>8.3}{:>8.3}{:>8.3}",
            serde_json::to_value(r.break_type).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default(),
            r.t,
            r.rho,
            r.alpha,
            r.omega,
            r.z_unadjusted,
            r.z_adjusted,
            r.w_unadjusted,
            r.w_adjusted,
            r.r_tilde
        );
    }
    m.finish(dir)
}

fn bootstrap_ci(a: &BootstrapArgs) -> CliResult<()> {
    check_level(a.level)?;
    let panel = load_panel(&a.panel)?;
    let (brk, counts) = break_and_counts(&panel, &a.brk)?;
    let (panel, brk, counts, _) = oriented(panel, brk, counts);
    let cfg = BootstrapConfig {
        replications: a.reps,
        block_length: a.block_length,
        level: a.level,
        seed: a.seed,
    };
    let ci = block_bootstrap_ci(&panel, brk, counts, &cfg)?;

    let dir = out_dir(&a.out.out)?;
    let mut m = Manifest::new("bootstrap-ci", a);
    m.seed = Some(a.seed);
    m.inputs.push(a.panel.input.clone());
    m.settings(&cfg);
    let text = serde_json::to_string_pretty(&ci).map_err(Error::from)?;
    println!("{text}");
    m.output(dir, "ci.json", text)?;
    m.finish(dir)
}

fn r2_report(a: &R2Args) -> CliResult<()> {
    let panel = load_panel(&a.panel)?;
    let (brk, counts) = break_and_counts(&panel, &a.brk)?;
    let (panel, brk, counts, _) = oriented(panel, brk, counts);
    let e1 = estimate_on(&panel, brk.regime1(), counts.r1)?;
    let e2 = estimate_on(&panel, brk.regime2(), counts.r2)?;
    let d = decompose(&e1, &e2)?;
    let unrestricted = r_squared_decomposition(&panel, &e1, &e2, &d, false)?;
    let restricted = r_squared_decomposition(&panel, &e1, &e2, &d, true)?;

    let categories = match &a.categories {
        Some(path) => Some(CategoryMap::parse(fs::File::open(path)?)?),
        None => None,
    };
    let by_category = match &categories {
        Some(map) => Some(aggregate_r_squared(panel.series_ids(), &unrestricted, &restricted, map)?),
        None => None,
    };

    let dir = out_dir(&a.out.out)?;
    let mut m = Manifest::new("r2-report", a);
    m.inputs.push(a.panel.input.clone());
    if let Some(c) = &a.categories {
        m.inputs.push(c.clone());
    }

    let series = csv_bytes(|b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["series_id", "category", "r2_unrestricted", "r2_restricted", "gap"])?;
        for (i, id) in panel.series_ids().iter().enumerate() {
            let cat = categories.as_ref().and_then(|c| c.get(id)).unwrap_or("");
            w.write_record([
                id.as_str(),
                cat,
                &unrestricted[i].to_string(),
                &restricted[i].to_string(),
                &(unrestricted[i] - restricted[i]).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    m.output(dir, "r2_series.csv", series)?;

    if let Some(rows) = &by_category {
        let table = csv_bytes(|b| {
            let mut w = csv::Writer::from_writer(b);
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
            Ok(())
        })?;
        m.output(dir, "r2_categories.csv", table)?;
        println!("{:<24}{:>8}{:>14}{:>12}{:>10}", "category", "series", "unrestricted", "restricted", "gap");
        for r in rows {
            println!(
                "{:<24}{:>8}{:>14.4}{:>12.4}{:>10.4}",
                r.category, r.series, r.unrestricted, r.restricted, r.gap
            );
        }
    } else {
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        println!(
            "mean R² over {} series: unrestricted {:.4}, restricted {:.4}",
            panel.n(),
            mean(&unrestricted),
            mean(&restricted)
        );
    }
    m.finish(dir)
}
