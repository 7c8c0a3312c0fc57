//! Rotational change / orthogonal shift decomposition of the post-break
//! loadings, the rotated factor series, trace ratios and R² decompositions.
//!
//! With subsample loadings `Λ̃1` (N×r1) and `Λ̃2` (N×r2):
//!
//! ```text
//! Z̃ = (Λ̃1'Λ̃1)⁻¹ Λ̃1'Λ̃2        r1 x r2, rotational change
//! W̃ = Λ̃2 − Λ̃1 Z̃               N x r2, orthogonal shift (Λ̃1'W̃ = 0)
//! F̂ = [F̃1 ; F̃2 Z̃']             T x r1, post-break factors in the pre-break basis
//! ```

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::least_squares;
use crate::panel_io::{BreakSpec, Panel};
use crate::pca::FactorEstimate;

#[derive(Debug, Clone, Serialize)]
pub struct ProjectionDecomposition {
    /// `r1 x r2`
    pub z: DMatrix<f64>,
    /// `N x r2`
    pub w: DMatrix<f64>,
    /// `T x r1`
    pub f_hat: DMatrix<f64>,
    pub brk: BreakSpec,
}

impl ProjectionDecomposition {
    pub fn r1(&self) -> usize {
        self.z.nrows()
    }

    pub fn r2(&self) -> usize {
        self.z.ncols()
    }

    pub fn is_rectangular(&self) -> bool {
        self.r1() != self.r2()
    }

    /// Euclidean norm of each row of `W̃`.
    pub fn w_norms(&self) -> Vec<f64> {
        self.w.row_iter().map(|row| row.norm()).collect()
    }

    pub fn export(&self, series_ids: &[String]) -> Result<DecompositionExport> {
        if series_ids.len() != self.w.nrows() {
            return Err(Error::shape("series ids do not match the rows of W"));
        }
        let rows = |m: &DMatrix<f64>| m.row_iter().map(|r| r.iter().copied().collect()).collect();
        Ok(DecompositionExport {
            k: self.brk.k,
            t: self.brk.t,
            r1: self.r1(),
            r2: self.r2(),
            trace_ratio: trace_ratio(self),
            z: rows(&self.z),
            w: rows(&self.w),
            series_ids: series_ids.to_vec(),
            w_norms: self.w_norms(),
        })
    }
}

/// Serializable view of a decomposition.
#[derive(Debug, Clone, Serialize)]
pub struct DecompositionExport {
    pub k: usize,
    pub t: usize,
    pub r1: usize,
    pub r2: usize,
    pub trace_ratio: f64,
    /// Row-major `Z̃`.
    pub z: Vec<Vec<f64>>,
    /// Row-major `W̃`.
    pub w: Vec<Vec<f64>>,
    pub series_ids: Vec<String>,
    pub w_norms: Vec<f64>,
}

impl DecompositionExport {
    /// One row per series: id, `‖w̃_i‖`, then the components of `w̃_i`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let mut header = vec!["series_id".to_string(), "w_norm".to_string()];
        header.extend((1..=self.r2).map(|j| format!("w{j}")));
        out.write_record(&header)?;
        for ((id, norm), row) in self.series_ids.iter().zip(&self.w_norms).zip(&self.w) {
            let mut rec = vec![id.clone(), norm.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `(Z̃, W̃)` from two loading matrices.
pub fn decompose_loadings(
    l1: &DMatrix<f64>,
    l2: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if l1.nrows() != l2.nrows() {
        return Err(Error::shape(format!(
            "loadings cover {} and {} series",
            l1.nrows(),
            l2.nrows()
        )));
    }
    if l2.ncols() > l1.ncols() {
        return Err(Error::shape(format!(
            "post-break factor count {} exceeds pre-break count {}; swap the regimes",
            l2.ncols(),
            l1.ncols()
        )));
    }
    let z = least_squares(l1, l2)?;
    let w = l2 - l1 * &z;
    Ok((z, w))
}

/// Decompose two adjacent subsample estimates. `est1` must cover rows
/// `0..k` and `est2` rows `k..T` of the same panel.
pub fn decompose(est1: &FactorEstimate, est2: &FactorEstimate) -> Result<ProjectionDecomposition> {
    if est1.span.start != 0 || est1.span.end != est2.span.start {
        return Err(Error::shape(format!(
            "estimates must cover adjacent regimes starting at 0, got {:?} and {:?}",
            est1.span, est2.span
        )));
    }
    let brk = BreakSpec::new(est1.span.end, est2.span.end)?;
    let (z, w) = decompose_loadings(&est1.loadings, &est2.loadings)?;
    let (k, t, r1) = (brk.k, brk.t, est1.r());
    let mut f_hat = DMatrix::zeros(t, r1);
    f_hat.rows_mut(0, k).copy_from(&est1.factors);
    f_hat
        .rows_mut(k, t - k)
        .copy_from(&(&est2.factors * z.transpose()));
    Ok(ProjectionDecomposition { z, w, f_hat, brk })
}

/// `tr(Z̃Z̃') / r1`: post- to pre-break ratio of total factor variance, in
/// the pre-break normalization basis.
pub fn trace_ratio(decomp: &ProjectionDecomposition) -> f64 {
    trace_ratio_of(&decomp.z)
}

/// `‖Z‖_F² / rows(Z)`.
pub fn trace_ratio_of(z: &DMatrix<f64>) -> f64 {
    z.norm_squared() / z.nrows() as f64
}

/// Per-series `R² = 1 − Σ_t (X̂ − X)² / Σ_t X²` for the fitted common
/// component `[F̃1Λ̃1' ; F̃2Λ̃2']`, or `[F̃1Λ̃1' ; F̃2(Λ̃1Z̃)']` when
/// `restrict_w` imposes `W̃ = 0`. Values can be negative.
pub fn r_squared_decomposition(
    panel: &Panel,
    est1: &FactorEstimate,
    est2: &FactorEstimate,
    decomp: &ProjectionDecomposition,
    restrict_w: bool,
) -> Result<Vec<f64>> {
    let brk = decomp.brk;
    if est1.span != brk.regime1() || est2.span != brk.regime2() || panel.t() != brk.t {
        return Err(Error::shape("estimates, decomposition and panel cover different samples"));
    }
    if panel.n() != est1.n() || panel.n() != est2.n() {
        return Err(Error::shape("panel and estimates have different cross sections"));
    }
    let fit1 = est1.common_component();
    let post_loadings = if restrict_w {
        &est1.loadings * &decomp.z
    } else {
        est2.loadings.clone()
    };
    let fit2 = &est2.factors * post_loadings.transpose();
    let x = panel.values();
    let k = brk.k;
    let out = (0..panel.n())
        .map(|i| {
            let mut ssr = 0.0;
            let mut sst = 0.0;
            for t in 0..brk.t {
                let fitted = if t < k { fit1[(t, i)] } else { fit2[(t - k, i)] };
                let v = x[(t, i)];
                ssr += (fitted - v).powi(2);
                sst += v * v;
            }
            1.0 - ssr / sst
        })
        .collect();
    Ok(out)
}

/// Series-to-category assignment read from a two-column CSV
/// (`series_id,category`, with a header row).
#[derive(Debug, Clone, Default)]
pub struct CategoryMap {
    map: HashMap<String, String>,
}

impl CategoryMap {
    pub fn parse<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut map = HashMap::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() < 2 || rec[0].is_empty() || rec[1].is_empty() {
                return Err(Error::Parse {
                    line: line + 2,
                    message: "expected `series_id,category`".into(),
                });
            }
            if map.insert(rec[0].to_string(), rec[1].to_string()).is_some() {
                return Err(Error::Mapping(format!("series `{}` is listed twice", &rec[0])));
            }
        }
        Ok(CategoryMap { map })
    }

    pub fn get(&self, series: &str) -> Option<&str> {
        self.map.get(series).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

impl FromIterator<(String, String)> for CategoryMap {
    fn from_iter<I: IntoIterator<Item = (String, String)>>(iter: I) -> Self {
        CategoryMap {
            map: iter.into_iter().collect(),
        }
    }
}

/// Mean R² of one category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRSquared {
    pub category: String,
    pub series: usize,
    pub unrestricted: f64,
    pub restricted: f64,
    /// `unrestricted − restricted`
    pub gap: f64,
}

/// Average per-series R² within each category, in category name order.
/// Every panel series must be mapped and every mapped series must exist.
pub fn aggregate_r_squared(
    series_ids: &[String],
    unrestricted: &[f64],
    restricted: &[f64],
    categories: &CategoryMap,
) -> Result<Vec<CategoryRSquared>> {
    if unrestricted.len() != series_ids.len() || restricted.len() != series_ids.len() {
        return Err(Error::shape("R² vectors do not match the series list"));
    }
    let mut sums: BTreeMap<&str, (usize, f64, f64)> = BTreeMap::new();
    for (i, id) in series_ids.iter().enumerate() {
        let cat = categories
            .get(id)
            .ok_or_else(|| Error::Mapping(format!("series `{id}` has no category")))?;
        let e = sums.entry(cat).or_default();
        e.0 += 1;
        e.1 += unrestricted[i];
        e.2 += restricted[i];
    }
    if categories.len() != series_ids.len() {
        let known: std::collections::HashSet<&str> = series_ids.iter().map(String::as_str).collect();
        let extra = categories.map.keys().find(|k| !known.contains(k.as_str()));
        return Err(Error::Mapping(format!(
            "category file names series `{}` absent from the panel",
            extra.map(String::as_str).unwrap_or("?")
        )));
    }
    Ok(sums
        .into_iter()
        .map(|(cat, (n, u, r))| {
            let (u, r) = (u / n as f64, r / n as f64);
            CategoryRSquared {
                category: cat.to_string(),
                series: n,
                unrestricted: u,
                restricted: r,
                gap: u - r,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pca::estimate_factors;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
    }

    #[test]
    fn identical_loadings_give_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = gaussian(40, 3, &mut rng);
        let (z, w) = decompose_loadings(&l, &l).unwrap();
        assert_abs_diff_eq!(z, DMatrix::identity(3, 3), epsilon = 1e-12);
        assert_abs_diff_eq!(w, DMatrix::zeros(40, 3), epsilon = 1e-12);
    }

    #[test]
    fn orthogonal_columns() {
        let l1 = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let l2 = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let (z, w) = decompose_loadings(&l1, &l2).unwrap();
        assert_abs_diff_eq!(z[(0, 0)], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w, l2, epsilon = 1e-15);
    }

    #[test]
    fn reconstruction_and_orthogonality() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let l1 = gaussian(50, 3, &mut rng);
        let l2 = gaussian(50, 3, &mut rng);
        let (z, w) = decompose_loadings(&l1, &l2).unwrap();
        assert_abs_diff_eq!(&l1 * &z + &w, l2, epsilon = 1e-10);
        assert_abs_diff_eq!(l1.transpose() * &w, DMatrix::zeros(3, 3), epsilon = 1e-8 * 50.0);
    }

    #[test]
    fn rejects_mismatch_and_singular() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l1 = gaussian(10, 2, &mut rng);
        assert!(matches!(decompose_loadings(&l1, &gaussian(11, 2, &mut rng)), Err(Error::Shape(_))));
        let mut sing = l1.clone();
        let c0 = sing.column(0).into_owned();
        sing.set_column(1, &c0);
        assert!(matches!(decompose_loadings(&sing, &l1), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn trace_ratio_values() {
        let mk = |z: DMatrix<f64>| ProjectionDecomposition {
            w: DMatrix::zeros(4, z.ncols()),
            f_hat: DMatrix::zeros(10, z.nrows()),
            z,
            brk: BreakSpec::new(5, 10).unwrap(),
        };
        assert_abs_diff_eq!(trace_ratio(&mk(DMatrix::identity(3, 3))), 1.0);
        assert_abs_diff_eq!(trace_ratio(&mk(DMatrix::identity(3, 3) * 2.0)), 4.0);
    }

    #[test]
    fn f_hat_layout_and_second_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = gaussian(60, 30, &mut rng);
        let e1 = estimate_factors(&x.rows(0, 25).into_owned(), 3).unwrap();
        let e2 = estimate_factors(&x.rows(25, 35).into_owned(), 3).unwrap().with_span(25..60).unwrap();
        let d = decompose(&e1, &e2).unwrap();
        assert_eq!(d.f_hat.rows(0, 25), e1.factors);
        assert_abs_diff_eq!(d.f_hat.rows(25, 35).into_owned(), &e2.factors * d.z.transpose(), epsilon = 1e-14);
        let m1 = d.f_hat.rows(0, 25).transpose() * d.f_hat.rows(0, 25) / 25.0;
        let m2 = d.f_hat.rows(25, 35).transpose() * d.f_hat.rows(25, 35) / 35.0;
        assert_abs_diff_eq!(m1, DMatrix::identity(3, 3), epsilon = 1e-12);
        assert_abs_diff_eq!(m2, &d.z * d.z.transpose(), epsilon = 1e-12);
    }

    #[test]
    fn basis_rotation_leaves_trace_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let l1 = gaussian(40, 3, &mut rng);
        let l2 = gaussian(40, 3, &mut rng);
        let q = gaussian(3, 3, &mut rng).qr().q();
        let (z, _) = decompose_loadings(&l1, &l2).unwrap();
        let (zq, _) = decompose_loadings(&l1, &(&l2 * &q)).unwrap();
        assert_abs_diff_eq!(z.norm_squared(), zq.norm_squared(), epsilon = 1e-10);
    }

    #[test]
    fn rescaling_data_scales_w_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let l1 = gaussian(40, 3, &mut rng);
        let l2 = gaussian(40, 3, &mut rng);
        let (z, w) = decompose_loadings(&l1, &l2).unwrap();
        let (zc, wc) = decompose_loadings(&(&l1 * 2.5), &(&l2 * 2.5)).unwrap();
        assert_abs_diff_eq!(z, zc, epsilon = 1e-12);
        assert_abs_diff_eq!(w * 2.5, wc, epsilon = 1e-12);
    }

    #[test]
    fn rectangular_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (z, w) = decompose_loadings(&gaussian(30, 3, &mut rng), &gaussian(30, 2, &mut rng)).unwrap();
        assert_eq!(z.shape(), (3, 2));
        assert_eq!(w.shape(), (30, 2));
        assert!(decompose_loadings(&gaussian(30, 2, &mut rng), &gaussian(30, 3, &mut rng)).is_err());
    }

    #[test]
    fn r_squared_exact_fit_and_unrestricted_ordering() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f = gaussian(80, 2, &mut rng);
        let l = gaussian(30, 2, &mut rng);
        let x = &f * l.transpose();
        let panel = Panel::from_matrix(x.clone()).unwrap();
        let e1 = estimate_factors(&x.rows(0, 40).into_owned(), 2).unwrap();
        let e2 = estimate_factors(&x.rows(40, 40).into_owned(), 2).unwrap().with_span(40..80).unwrap();
        let d = decompose(&e1, &e2).unwrap();
        let unr = r_squared_decomposition(&panel, &e1, &e2, &d, false).unwrap();
        let res = r_squared_decomposition(&panel, &e1, &e2, &d, true).unwrap();
        for (a, b) in unr.iter().zip(&res) {
            assert_abs_diff_eq!(*a, 1.0, epsilon = 1e-8);
            assert_abs_diff_eq!(*b, 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn category_aggregation_and_mismatch() {
        let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let map = CategoryMap::parse("series_id,category\na,prices\nb,output\nc,prices\n".as_bytes()).unwrap();
        let out = aggregate_r_squared(&ids, &[0.9, 0.5, 0.7], &[0.5, 0.5, 0.3], &map).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].category, "output");
        assert_eq!(out[1].series, 2);
        assert!((out[1].gap - 0.4).abs() < 1e-12);

        let short = CategoryMap::parse("series_id,category\na,x\nb,x\n".as_bytes()).unwrap();
        let err = aggregate_r_squared(&ids, &[0.0; 3], &[0.0; 3], &short).unwrap_err();
        assert!(matches!(err, Error::Mapping(_)));
        let extra = CategoryMap::parse("series_id,category\na,x\nb,x\nc,x\nd,x\n".as_bytes()).unwrap();
        let err = aggregate_r_squared(&ids, &[0.0; 3], &[0.0; 3], &extra).unwrap_err();
        assert!(matches!(err, Error::Mapping(_)));
    }
}
