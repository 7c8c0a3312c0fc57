//! Panel ingestion: CSV parsing, per-series transformation codes, balancing
//! and standardization.
//!
//! The CSV layout follows the FRED-MD/FRED-QD convention: the first column is
//! the period label, the first header row names the series, and an optional
//! header row (labelled `transform`, or simply the second row) carries the
//! integer transformation code of each series.

use std::fmt;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shortest regime the estimators accept, independent of the factor count.
pub const MIN_REGIME_LEN: usize = 8;

/// Stationarity transformation applied to a raw series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum TransformCode {
    /// x
    Level = 1,
    /// Δx
    Diff = 2,
    /// Δ²x
    Diff2 = 3,
    /// log x
    Log = 4,
    /// Δ log x
    LogDiff = 5,
    /// Δ² log x
    LogDiff2 = 6,
    /// Δ(x_t / x_{t-1} - 1)
    PctChangeDiff = 7,
}

impl TransformCode {
    /// Rows lost to differencing.
    pub fn order(self) -> usize {
        match self {
            TransformCode::Level | TransformCode::Log => 0,
            TransformCode::Diff | TransformCode::LogDiff => 1,
            TransformCode::Diff2 | TransformCode::LogDiff2 | TransformCode::PctChangeDiff => 2,
        }
    }

    fn takes_log(self) -> bool {
        matches!(
            self,
            TransformCode::Log
                | TransformCode::LogDiff
                | TransformCode::LogDiff2
                | TransformCode::PctChangeDiff
        )
    }
}

impl TryFrom<u8> for TransformCode {
    type Error = Error;

    fn try_from(code: u8) -> Result<Self> {
        Ok(match code {
            1 => TransformCode::Level,
            2 => TransformCode::Diff,
            3 => TransformCode::Diff2,
            4 => TransformCode::Log,
            5 => TransformCode::LogDiff,
            6 => TransformCode::LogDiff2,
            7 => TransformCode::PctChangeDiff,
            other => {
                return Err(Error::InvalidTransformCode {
                    series: String::new(),
                    code: other as i64,
                })
            }
        })
    }
}

impl From<TransformCode> for u8 {
    fn from(code: TransformCode) -> u8 {
        code as u8
    }
}

impl fmt::Display for TransformCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", *self as u8)
    }
}

/// Untransformed levels as read from disk. Missing entries are NaN.
#[derive(Debug, Clone)]
pub struct RawPanel {
    /// `T0 x N`
    pub values: DMatrix<f64>,
    pub series_ids: Vec<String>,
    pub tcodes: Vec<TransformCode>,
    pub time_index: Vec<String>,
}

impl RawPanel {
    pub fn new(
        values: DMatrix<f64>,
        series_ids: Vec<String>,
        tcodes: Vec<TransformCode>,
        time_index: Vec<String>,
    ) -> Result<Self> {
        let n = values.ncols();
        if series_ids.len() != n || tcodes.len() != n {
            return Err(Error::shape(format!(
                "{} columns but {} series ids and {} transformation codes",
                n,
                series_ids.len(),
                tcodes.len()
            )));
        }
        if time_index.len() != values.nrows() {
            return Err(Error::shape(format!(
                "{} rows but {} period labels",
                values.nrows(),
                time_index.len()
            )));
        }
        Ok(RawPanel {
            values,
            series_ids,
            tcodes,
            time_index,
        })
    }

    pub fn n(&self) -> usize {
        self.values.ncols()
    }
}

/// Balanced, finite `T x N` panel ready for estimation. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    values: DMatrix<f64>,
    series_ids: Vec<String>,
    time_index: Vec<String>,
    standardized: bool,
}

/// A known break date. `k` is the number of periods in regime 1, so regime 1
/// is rows `0..k` and regime 2 is rows `k..t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BreakSpec {
    pub k: usize,
    pub t: usize,
}

impl BreakSpec {
    pub fn new(k: usize, t: usize) -> Result<Self> {
        if k == 0 || k >= t {
            return Err(Error::Domain(format!(
                "break index {k} must satisfy 1 <= k <= T - 1 (T = {t})"
            )));
        }
        Ok(BreakSpec { k, t })
    }

    /// `k = floor(pi * T)`.
    pub fn from_fraction(pi: f64, t: usize) -> Result<Self> {
        if !(pi > 0.0 && pi < 1.0) {
            return Err(Error::Domain(format!("break fraction {pi} must lie in (0, 1)")));
        }
        BreakSpec::new((pi * t as f64).floor() as usize, t)
    }

    pub fn pi(&self) -> f64 {
        self.k as f64 / self.t as f64
    }

    pub fn t1(&self) -> usize {
        self.k
    }

    pub fn t2(&self) -> usize {
        self.t - self.k
    }

    pub fn regime1(&self) -> Range<usize> {
        0..self.k
    }

    pub fn regime2(&self) -> Range<usize> {
        self.k..self.t
    }

    /// Both regimes must hold at least `max(r + 1, MIN_REGIME_LEN)` periods.
    pub fn validate_for(&self, r1: usize, r2: usize) -> Result<()> {
        for (len, r, which) in [(self.t1(), r1, "pre-break"), (self.t2(), r2, "post-break")] {
            let need = (r + 1).max(MIN_REGIME_LEN);
            if len < need {
                return Err(Error::InsufficientData {
                    required: need,
                    actual: len,
                    context: format!("{which} regime with {r} factors"),
                });
            }
        }
        Ok(())
    }

    /// The same break seen on the time-reversed sample.
    pub fn reversed(&self) -> BreakSpec {
        BreakSpec {
            k: self.t - self.k,
            t: self.t,
        }
    }
}

impl Panel {
    pub fn new(values: DMatrix<f64>, series_ids: Vec<String>, time_index: Vec<String>) -> Result<Self> {
        if series_ids.len() != values.ncols() || time_index.len() != values.nrows() {
            return Err(Error::shape(format!(
                "{}x{} values with {} series ids and {} period labels",
                values.nrows(),
                values.ncols(),
                series_ids.len(),
                time_index.len()
            )));
        }
        check_finite(&values, &series_ids, &time_index)?;
        Ok(Panel {
            values,
            series_ids,
            time_index,
            standardized: false,
        })
    }

    /// Panel with generated labels `s0001..` and `1..=T`.
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        let ids = (1..=values.ncols()).map(|i| format!("s{i:04}")).collect();
        let periods = (1..=values.nrows()).map(|t| t.to_string()).collect();
        Panel::new(values, ids, periods)
    }

    pub fn t(&self) -> usize {
        self.values.nrows()
    }

    pub fn n(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn series_ids(&self) -> &[String] {
        &self.series_ids
    }

    pub fn time_index(&self) -> &[String] {
        &self.time_index
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    /// Copy of rows `range`.
    pub fn rows(&self, range: Range<usize>) -> DMatrix<f64> {
        self.values.rows(range.start, range.len()).into_owned()
    }

    /// Demean every column and scale it to unit sample variance.
    pub fn standardized(&self) -> Result<Panel> {
        let t = self.t();
        if t < 2 {
            return Err(Error::InsufficientData {
                required: 2,
                actual: t,
                context: "standardization".into(),
            });
        }
        let mut values = self.values.clone();
        for (j, mut col) in values.column_iter_mut().enumerate() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
            let var = col.norm_squared() / (t - 1) as f64;
            let sd = var.sqrt();
            if !(sd > 1e-12 * (1.0 + mean.abs())) {
                return Err(Error::DegenerateSeries(self.series_ids[j].clone()));
            }
            col /= sd;
        }
        Ok(Panel {
            values,
            series_ids: self.series_ids.clone(),
            time_index: self.time_index.clone(),
            standardized: true,
        })
    }

    /// Row index of a period label. Besides exact matches, quarterly labels
    /// such as `1984Q1` match date-style labels (`3/1/1984`, `1984-01-01`).
    pub fn resolve_period(&self, label: &str) -> Result<usize> {
        resolve_period(&self.time_index, label)
    }

    /// Break whose last regime-1 period is `label`.
    pub fn break_at(&self, label: &str) -> Result<BreakSpec> {
        let idx = self.resolve_period(label)?;
        BreakSpec::new(idx + 1, self.t())
    }

    /// Break given either as a period label or as an integer `k`.
    pub fn parse_break(&self, spec: &str) -> Result<BreakSpec> {
        if let Ok(idx) = self.resolve_period(spec) {
            return BreakSpec::new(idx + 1, self.t());
        }
        match spec.trim().parse::<usize>() {
            Ok(k) => BreakSpec::new(k, self.t()),
            Err(_) => Err(Error::Config(format!("unknown break date `{spec}`"))),
        }
    }

    /// Rows from `start` through `end` inclusive, by period label.
    pub fn window(&self, start: &str, end: &str) -> Result<Panel> {
        let a = self.resolve_period(start)?;
        let b = self.resolve_period(end)?;
        if b < a {
            return Err(Error::Config(format!("window end `{end}` precedes start `{start}`")));
        }
        Ok(Panel {
            values: self.rows(a..b + 1),
            series_ids: self.series_ids.clone(),
            time_index: self.time_index[a..=b].to_vec(),
            standardized: false,
        })
    }

    /// Time-reversed copy.
    pub fn reversed(&self) -> Panel {
        let t = self.t();
        let values = DMatrix::from_fn(t, self.n(), |i, j| self.values[(t - 1 - i, j)]);
        let mut time_index = self.time_index.clone();
        time_index.reverse();
        Panel {
            values,
            series_ids: self.series_ids.clone(),
            time_index,
            standardized: self.standardized,
        }
    }

    /// New panel with the same labels and different values (e.g. a
    /// bootstrap resample). Values must be finite.
    pub fn with_values(&self, values: DMatrix<f64>) -> Result<Panel> {
        if values.shape() != self.values.shape() {
            return Err(Error::shape("replacement values change the panel shape"));
        }
        check_finite(&values, &self.series_ids, &self.time_index)?;
        Ok(Panel {
            values,
            series_ids: self.series_ids.clone(),
            time_index: self.time_index.clone(),
            standardized: self.standardized,
        })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["period".to_string()];
        header.extend(self.series_ids.iter().cloned());
        w.write_record(&header)?;
        for (i, label) in self.time_index.iter().enumerate() {
            let mut rec = vec![label.clone()];
            rec.extend(self.values.row(i).iter().map(|v| format!("{v}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_finite(values: &DMatrix<f64>, ids: &[String], periods: &[String]) -> Result<()> {
    for j in 0..values.ncols() {
        for i in 0..values.nrows() {
            if !values[(i, j)].is_finite() {
                return Err(Error::UnbalancedPanel {
                    series: ids[j].clone(),
                    period: periods[i].clone(),
                });
            }
        }
    }
    Ok(())
}

fn parse_year_quarter(label: &str) -> Option<(i32, u32)> {
    let s = label.trim().to_ascii_uppercase();
    // 1984Q1, 1984:Q1, 1984 Q1, 1984-Q1
    if let Some(pos) = s.find('Q') {
        let year: i32 = s[..pos].trim_end_matches([':', ' ', '-']).parse().ok()?;
        let q: u32 = s[pos + 1..].trim().parse().ok()?;
        return (1..=4).contains(&q).then_some((year, q));
    }
    let month_to_q = |m: u32| (1..=12).contains(&m).then(|| (m - 1) / 3 + 1);
    // m/d/yyyy
    let parts: Vec<&str> = s.split('/').collect();
    if parts.len() == 3 {
        let m: u32 = parts[0].parse().ok()?;
        let y: i32 = parts[2].parse().ok()?;
        return Some((y, month_to_q(m)?));
    }
    // yyyy-mm or yyyy-mm-dd
    let parts: Vec<&str> = s.split('-').collect();
    if parts.len() >= 2 && parts[0].len() == 4 {
        let y: i32 = parts[0].parse().ok()?;
        let m: u32 = parts[1].parse().ok()?;
        return Some((y, month_to_q(m)?));
    }
    None
}

pub(crate) fn resolve_period(index: &[String], label: &str) -> Result<usize> {
    if let Some(i) = index.iter().position(|l| l == label) {
        return Ok(i);
    }
    if let Some(target) = parse_year_quarter(label) {
        if let Some(i) = index.iter().position(|l| parse_year_quarter(l) == Some(target)) {
            return Ok(i);
        }
    }
    Err(Error::Config(format!("period `{label}` not found in the panel")))
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("na") || c.eq_ignore_ascii_case("nan") || c == "."
}

/// Parse a raw panel from CSV text. `header_rows` counts the rows above the
/// data (at least one: the series names).
pub fn parse_csv<R: Read>(reader: R, header_rows: usize) -> Result<RawPanel> {
    if header_rows == 0 {
        return Err(Error::Config("at least one header row (series names) is required".into()));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut records = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            line: line + 1,
            message: e.to_string(),
        })?;
        if rec.iter().all(|c| c.is_empty()) {
            continue;
        }
        records.push((line + 1, rec));
    }
    if records.len() < header_rows {
        return Err(Error::Parse {
            line: records.len(),
            message: format!("expected {header_rows} header rows"),
        });
    }
    let (_, names) = &records[0];
    let width = names.len();
    if width < 2 {
        return Err(Error::Parse {
            line: 1,
            message: "need a period column and at least one series".into(),
        });
    }
    let series_ids: Vec<String> = names.iter().skip(1).map(str::to_string).collect();

    let tcode_row = records[1..header_rows]
        .iter()
        .find(|(_, r)| r.get(0).is_some_and(|c| c.to_ascii_lowercase().starts_with("transform")))
        .or(if header_rows >= 2 { records.get(1) } else { None });

    let tcodes = match tcode_row {
        Some((line, rec)) => {
            if rec.len() != width {
                return Err(Error::Parse {
                    line: *line,
                    message: format!("transformation row has {} fields, expected {width}", rec.len()),
                });
            }
            rec.iter()
                .skip(1)
                .zip(&series_ids)
                .map(|(cell, id)| {
                    let v: f64 = cell.parse().map_err(|_| Error::Parse {
                        line: *line,
                        message: format!("transformation code `{cell}` for `{id}` is not a number"),
                    })?;
                    let bad = || Error::InvalidTransformCode {
                        series: id.clone(),
                        code: v as i64,
                    };
                    if v.fract() != 0.0 || !(1.0..=7.0).contains(&v) {
                        return Err(bad());
                    }
                    TransformCode::try_from(v as u8).map_err(|_| bad())
                })
                .collect::<Result<Vec<_>>>()?
        }
        None => vec![TransformCode::Level; series_ids.len()],
    };

    let data = &records[header_rows..];
    if data.len() < 3 {
        return Err(Error::InsufficientData {
            required: 3,
            actual: data.len(),
            context: "data rows in CSV".into(),
        });
    }
    let n = series_ids.len();
    let mut values = DMatrix::from_element(data.len(), n, f64::NAN);
    let mut time_index = Vec::with_capacity(data.len());
    for (i, (line, rec)) in data.iter().enumerate() {
        if rec.len() != width {
            return Err(Error::Parse {
                line: *line,
                message: format!("row has {} fields, expected {width}", rec.len()),
            });
        }
        time_index.push(rec[0].to_string());
        for (j, cell) in rec.iter().skip(1).enumerate() {
            if is_missing(cell) {
                continue;
            }
            values[(i, j)] = cell.parse().map_err(|_| Error::Parse {
                line: *line,
                message: format!("`{cell}` is not a number"),
            })?;
        }
    }
    RawPanel::new(values, series_ids, tcodes, time_index)
}

/// Read a raw panel from a CSV file.
pub fn load_csv(path: impl AsRef<Path>, header_rows: usize) -> Result<RawPanel> {
    let file = std::fs::File::open(path.as_ref())?;
    parse_csv(std::io::BufReader::new(file), header_rows)
}

fn diff(x: &[f64]) -> Vec<f64> {
    x.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Apply a transformation code. Output is shorter by the differencing order.
/// Missing (NaN) inputs propagate.
pub fn apply_transform(series: &[f64], code: TransformCode) -> Result<Vec<f64>> {
    if series.len() <= code.order() {
        return Err(Error::InsufficientData {
            required: code.order() + 1,
            actual: series.len(),
            context: format!("series under transformation code {code}"),
        });
    }
    if code.takes_log() {
        if let Some(v) = series.iter().find(|v| v.is_finite() && **v <= 0.0) {
            return Err(Error::Domain(format!(
                "transformation code {code} requires positive values, found {v}"
            )));
        }
    }
    Ok(match code {
        TransformCode::Level => series.to_vec(),
        TransformCode::Diff => diff(series),
        TransformCode::Diff2 => diff(&diff(series)),
        TransformCode::Log => series.iter().map(|v| v.ln()).collect(),
        TransformCode::LogDiff => diff(&series.iter().map(|v| v.ln()).collect::<Vec<_>>()),
        TransformCode::LogDiff2 => diff(&diff(&series.iter().map(|v| v.ln()).collect::<Vec<_>>())),
        TransformCode::PctChangeDiff => {
            let growth: Vec<f64> = series.windows(2).map(|w| w[1] / w[0] - 1.0).collect();
            diff(&growth)
        }
    })
}

/// Options for [`finalize_with`].
#[derive(Debug, Clone, Default)]
pub struct FinalizeOptions {
    pub standardize: bool,
    /// Inclusive `(start, end)` period labels applied after transformation.
    pub window: Option<(String, String)>,
}

/// Transform, balance and optionally standardize a raw panel.
pub fn finalize(raw: &RawPanel, standardize: bool) -> Result<Panel> {
    finalize_with(
        raw,
        &FinalizeOptions {
            standardize,
            window: None,
        },
    )
}

/// Like [`finalize`], restricting to a sample window after transformation so
/// that differencing can use observations before the window start.
pub fn finalize_with(raw: &RawPanel, opts: &FinalizeOptions) -> Result<Panel> {
    let t0 = raw.values.nrows();
    let max_order = raw.tcodes.iter().map(|c| c.order()).max().unwrap_or(0);
    if t0 < max_order + 4 {
        return Err(Error::InsufficientData {
            required: max_order + 4,
            actual: t0,
            context: "rows after differencing".into(),
        });
    }
    let t = t0 - max_order;
    let mut values = DMatrix::zeros(t, raw.n());
    for (j, code) in raw.tcodes.iter().enumerate() {
        let col: Vec<f64> = raw.values.column(j).iter().copied().collect();
        let out = apply_transform(&col, *code)
            .map_err(|e| e.context(format!("series `{}`", raw.series_ids[j])))?;
        let skip = max_order - code.order();
        for (i, v) in out[skip..].iter().enumerate() {
            values[(i, j)] = *v;
        }
    }
    let mut time_index = raw.time_index[max_order..].to_vec();
    if let Some((start, end)) = &opts.window {
        let a = resolve_period(&time_index, start)?;
        let b = resolve_period(&time_index, end)?;
        if b < a {
            return Err(Error::Config(format!("window end `{end}` precedes start `{start}`")));
        }
        values = values.rows(a, b - a + 1).into_owned();
        time_index = time_index[a..=b].to_vec();
    }
    let panel = Panel::new(values, raw.series_ids.clone(), time_index)?;
    if opts.standardize {
        panel.standardized()
    } else {
        Ok(panel)
    }
}
