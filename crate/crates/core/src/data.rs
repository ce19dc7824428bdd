//! Monthly panels with explicit missing cells, data transformations,
//! standardization and the per-period observation structure used by the
//! missing-data Kalman filter.
//!
//! Missing cells are stored as `NaN` inside the value matrix and are never
//! exposed as numbers: use [`Panel::get`] to read a cell as `Option<f64>`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A calendar month, ordered chronologically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Month {
    pub year: i32,
    /// 1..=12
    pub month: u32,
}

impl Month {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::Domain(format!("month {month} out of range")));
        }
        Ok(Self { year, month })
    }

    fn ordinal(self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }

    fn from_ordinal(k: i64) -> Self {
        Self {
            year: k.div_euclid(12) as i32,
            month: (k.rem_euclid(12) + 1) as u32,
        }
    }

    /// The month `k` steps later (earlier when negative).
    pub fn offset(self, k: i64) -> Self {
        Self::from_ordinal(self.ordinal() + k)
    }

    pub fn succ(self) -> Self {
        self.offset(1)
    }

    /// Number of months from `self` to `other`.
    pub fn months_until(self, other: Month) -> i64 {
        other.ordinal() - self.ordinal()
    }
}

impl fmt::Display for Month {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for Month {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim();
        let (y, m) = s
            .split_once('-')
            .ok_or_else(|| format!("expected YYYY-MM, got `{s}`"))?;
        if y.len() != 4 || m.len() != 2 {
            return Err(format!("expected YYYY-MM, got `{s}`"));
        }
        let year: i32 = y.parse().map_err(|_| format!("bad year in `{s}`"))?;
        let month: u32 = m.parse().map_err(|_| format!("bad month in `{s}`"))?;
        if !(1..=12).contains(&month) {
            return Err(format!("month out of range in `{s}`"));
        }
        Ok(Month { year, month })
    }
}

/// Time-indexed multivariate series (`n` series by `T` months).
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    dates: Vec<Month>,
    values: DMatrix<f64>,
    series_ids: Vec<String>,
    vintage: Option<Month>,
    lineage: Vec<String>,
}

impl Panel {
    /// Build a panel from per-series rows of optional values.
    pub fn from_rows(
        series_ids: Vec<String>,
        dates: Vec<Month>,
        rows: &[Vec<Option<f64>>],
    ) -> Result<Self> {
        let n = series_ids.len();
        if rows.len() != n {
            return Err(Error::Shape(format!("{} rows for {} series", rows.len(), n)));
        }
        let t_len = dates.len();
        let mut values = DMatrix::from_element(n, t_len, f64::NAN);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != t_len {
                return Err(Error::Shape(format!(
                    "series `{}` has {} values for {} dates",
                    series_ids[i],
                    row.len(),
                    t_len
                )));
            }
            for (t, v) in row.iter().enumerate() {
                if let Some(x) = v {
                    values[(i, t)] = *x;
                }
            }
        }
        Self::from_matrix(series_ids, dates, values)
    }

    /// Build a panel from an `n x T` matrix where `NaN` marks a missing cell.
    pub fn from_matrix(series_ids: Vec<String>, dates: Vec<Month>, values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != series_ids.len() || values.ncols() != dates.len() {
            return Err(Error::Shape(format!(
                "values are {}x{}, expected {}x{}",
                values.nrows(),
                values.ncols(),
                series_ids.len(),
                dates.len()
            )));
        }
        check_monthly(&dates)?;
        if values.iter().any(|v| v.is_infinite()) {
            return Err(Error::Domain("panel contains infinite values".into()));
        }
        Ok(Self {
            dates,
            values,
            series_ids,
            vintage: None,
            lineage: Vec::new(),
        })
    }

    pub fn with_vintage(mut self, vintage: Month) -> Self {
        self.vintage = Some(vintage);
        self
    }

    pub fn vintage(&self) -> Option<Month> {
        self.vintage
    }

    /// Transformations applied so far, oldest first.
    pub fn lineage(&self) -> &[String] {
        &self.lineage
    }

    pub fn n_series(&self) -> usize {
        self.series_ids.len()
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn dates(&self) -> &[Month] {
        &self.dates
    }

    pub fn series_ids(&self) -> &[String] {
        &self.series_ids
    }

    pub fn series_index(&self, id: &str) -> Option<usize> {
        self.series_ids.iter().position(|s| s == id)
    }

    /// Cell value, `None` when missing.
    pub fn get(&self, i: usize, t: usize) -> Option<f64> {
        let v = self.values[(i, t)];
        (!v.is_nan()).then_some(v)
    }

    pub fn is_observed(&self, i: usize, t: usize) -> bool {
        !self.values[(i, t)].is_nan()
    }

    /// Raw matrix with `NaN` for missing cells.
    pub fn raw(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn series(&self, i: usize) -> Vec<Option<f64>> {
        (0..self.len()).map(|t| self.get(i, t)).collect()
    }

    pub fn observed_count(&self, i: usize) -> usize {
        (0..self.len()).filter(|&t| self.is_observed(i, t)).count()
    }

    /// Error unless every series has at least one observed cell.
    pub fn check_coverage(&self) -> Result<()> {
        for i in 0..self.n_series() {
            if self.observed_count(i) == 0 {
                return Err(Error::Integrity(format!(
                    "series `{}` has no observed values",
                    self.series_ids[i]
                )));
            }
        }
        Ok(())
    }

    /// Copy with the given cells (series, period) set missing.
    pub fn with_missing(&self, cells: &[(usize, usize)]) -> Self {
        let mut out = self.clone();
        for &(i, t) in cells {
            out.values[(i, t)] = f64::NAN;
        }
        out
    }

    /// First `len` periods.
    pub fn truncate(&self, len: usize) -> Self {
        let len = len.min(self.len());
        Self {
            dates: self.dates[..len].to_vec(),
            values: self.values.columns(0, len).into_owned(),
            series_ids: self.series_ids.clone(),
            vintage: self.vintage,
            lineage: self.lineage.clone(),
        }
    }

    /// Periods `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        let end = end.min(self.len());
        let start = start.min(end);
        Self {
            dates: self.dates[start..end].to_vec(),
            values: self.values.columns(start, end - start).into_owned(),
            series_ids: self.series_ids.clone(),
            vintage: self.vintage,
            lineage: self.lineage.clone(),
        }
    }

    /// Sub-panel with the named series, in the given order.
    pub fn select(&self, ids: &[String]) -> Result<Self> {
        let idx = ids
            .iter()
            .map(|id| {
                self.series_index(id)
                    .ok_or_else(|| Error::Shape(format!("series `{id}` not in panel")))
            })
            .collect::<Result<Vec<_>>>()?;
        let values = DMatrix::from_fn(idx.len(), self.len(), |r, c| self.values[(idx[r], c)]);
        Ok(Self {
            dates: self.dates.clone(),
            values,
            series_ids: ids.to_vec(),
            vintage: self.vintage,
            lineage: self.lineage.clone(),
        })
    }

    /// Index of the last period with at least one observation in series `i`.
    pub fn last_observed(&self, i: usize) -> Option<usize> {
        (0..self.len()).rev().find(|&t| self.is_observed(i, t))
    }

    /// Observed entries of period `t` as a dense vector, in series order.
    pub fn observed_vector(&self, t: usize, rows: &[usize]) -> DVector<f64> {
        DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.values[(i, t)]))
    }

    fn map_values(&self, values: DMatrix<f64>, step: String) -> Self {
        let mut lineage = self.lineage.clone();
        lineage.push(step);
        Self {
            dates: self.dates.clone(),
            values,
            series_ids: self.series_ids.clone(),
            vintage: self.vintage,
            lineage,
        }
    }
}

fn check_monthly(dates: &[Month]) -> Result<()> {
    for w in dates.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::Integrity(format!(
                "dates not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
        if w[0].months_until(w[1]) != 1 {
            return Err(Error::Integrity(format!(
                "non-contiguous monthly index between {} and {}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

/// Optional column selection applied while loading a CSV panel.
#[derive(Debug, Clone, Default)]
pub struct ColumnMap {
    /// Columns to keep, in output order. `None` keeps every column.
    pub columns: Option<Vec<String>>,
}

fn parse_cell(raw: &str) -> std::result::Result<Option<f64>, String> {
    let s = raw.trim();
    if s.is_empty() || s == "NA" {
        return Ok(None);
    }
    let v: f64 = s.parse().map_err(|_| format!("non-numeric cell `{s}`"))?;
    if !v.is_finite() {
        return Err(format!("non-finite cell `{s}`"));
    }
    Ok(Some(v))
}

/// Load a `date,<id>,...` CSV with `YYYY-MM` dates. Empty fields and `NA`
/// are missing.
pub fn load_csv_panel(path: &Path, schema: &ColumnMap) -> Result<Panel> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::Parse { row: 1, msg: "empty header".into() });
    }
    let ids: Vec<String> = headers.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let width = headers.len();
    let mut dates = Vec::new();
    let mut cols: Vec<Vec<Option<f64>>> = vec![Vec::new(); ids.len()];
    for (k, rec) in rdr.records().enumerate() {
        // header is row 1
        let row = k + 2;
        let rec = rec?;
        if rec.len() != width {
            return Err(Error::Integrity(format!(
                "ragged row {row}: {} fields, header has {width}",
                rec.len()
            )));
        }
        let date: Month = rec[0].parse().map_err(|msg| Error::Parse { row, msg })?;
        if let Some(&prev) = dates.last() {
            if date == prev {
                return Err(Error::Integrity(format!("duplicate date {date} at row {row}")));
            }
        }
        dates.push(date);
        for (j, col) in cols.iter_mut().enumerate() {
            let v = parse_cell(&rec[j + 1]).map_err(|msg| Error::Parse { row, msg })?;
            col.push(v);
        }
    }
    let panel = Panel::from_rows(ids, dates, &cols)?;
    match &schema.columns {
        Some(keep) => panel.select(keep),
        None => Ok(panel),
    }
}

/// Write a panel as `date,<id>,...` with empty fields for missing cells.
pub fn write_csv_panel(path: &Path, panel: &Panel) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["date".to_string()];
    header.extend(panel.series_ids().iter().cloned());
    w.write_record(&header)?;
    for t in 0..panel.len() {
        let mut rec = vec![panel.dates()[t].to_string()];
        for i in 0..panel.n_series() {
            rec.push(panel.get(i, t).map(|v| format!("{v}")).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Vintage files `YYYY-MM.csv` in `dir`, sorted by vintage date.
///
/// Errors when the monthly sequence of vintages has gaps, listing them.
pub fn list_vintages(dir: &Path) -> Result<Vec<(Month, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("csv") {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            if let Ok(m) = stem.parse::<Month>() {
                out.push((m, path));
            }
        }
    }
    out.sort_by_key(|(m, _)| *m);
    let mut gaps = Vec::new();
    for w in out.windows(2) {
        let mut m = w[0].0.succ();
        while m < w[1].0 {
            gaps.push(m.to_string());
            m = m.succ();
        }
    }
    if !gaps.is_empty() {
        return Err(Error::Integrity(format!("missing vintage files: {}", gaps.join(", "))));
    }
    if out.is_empty() {
        return Err(Error::Integrity(format!("no vintage files in {}", dir.display())));
    }
    Ok(out)
}

/// Per-series transformation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransformSpec {
    Levels,
    /// `100 (x_t / x_{t-12} - 1)`
    YoYReturn,
    /// `(100 (x_t / x_{t-1} - 1))^2`
    MoMSquaredReturn,
}

impl TransformSpec {
    /// Observations lost at the start of the sample.
    pub fn lag(self) -> usize {
        match self {
            TransformSpec::Levels => 0,
            TransformSpec::YoYReturn => 12,
            TransformSpec::MoMSquaredReturn => 1,
        }
    }

    fn label(self) -> &'static str {
        match self {
            TransformSpec::Levels => "levels",
            TransformSpec::YoYReturn => "yoy",
            TransformSpec::MoMSquaredReturn => "mom2",
        }
    }
}

impl FromStr for TransformSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "levels" | "level" => Ok(TransformSpec::Levels),
            "yoy" | "yoyreturn" => Ok(TransformSpec::YoYReturn),
            "mom2" | "momsquaredreturn" | "mom_squared" => Ok(TransformSpec::MoMSquaredReturn),
            other => Err(Error::Config(format!("unknown transform `{other}`"))),
        }
    }
}

/// Apply one transform per series. Leading undefined periods become missing.
pub fn apply_transform(panel: &Panel, specs: &[TransformSpec]) -> Result<Panel> {
    if specs.len() != panel.n_series() {
        return Err(Error::Shape(format!(
            "{} transforms for {} series",
            specs.len(),
            panel.n_series()
        )));
    }
    let (n, t_len) = (panel.n_series(), panel.len());
    let mut out = DMatrix::from_element(n, t_len, f64::NAN);
    for (i, spec) in specs.iter().enumerate() {
        let lag = spec.lag();
        if lag > 0 {
            if let Some(t) = (0..t_len).find(|&t| panel.get(i, t).is_some_and(|x| x <= 0.0)) {
                return Err(Error::Domain(format!(
                    "nonpositive level {} in series `{}` at {} under a return transform",
                    panel.get(i, t).unwrap_or_default(),
                    panel.series_ids()[i],
                    panel.dates()[t]
                )));
            }
        }
        for t in 0..t_len {
            out[(i, t)] = match spec {
                TransformSpec::Levels => panel.values[(i, t)],
                _ if t < lag => f64::NAN,
                TransformSpec::YoYReturn => match (panel.get(i, t), panel.get(i, t - 12)) {
                    (Some(x), Some(x0)) => 100.0 * (x / x0 - 1.0),
                    _ => f64::NAN,
                },
                TransformSpec::MoMSquaredReturn => match (panel.get(i, t), panel.get(i, t - 1)) {
                    (Some(x), Some(x0)) => {
                        let r = 100.0 * (x / x0 - 1.0);
                        r * r
                    }
                    _ => f64::NAN,
                },
            };
        }
    }
    let step = format!(
        "transform[{}]",
        specs.iter().map(|s| s.label()).collect::<Vec<_>>().join(",")
    );
    Ok(panel.map_values(out, step))
}

/// Per-series positive scale factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub scales: Vec<f64>,
}

impl Standardizer {
    pub fn new(scales: Vec<f64>) -> Result<Self> {
        if scales.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Domain("scale factors must be positive and finite".into()));
        }
        Ok(Self { scales })
    }

    pub fn identity(n: usize) -> Self {
        Self { scales: vec![1.0; n] }
    }

    pub fn apply(&self, panel: &Panel) -> Result<Panel> {
        self.check(panel)?;
        let mut v = panel.values.clone();
        for (i, s) in self.scales.iter().enumerate() {
            v.row_mut(i).iter_mut().for_each(|x| *x /= s);
        }
        Ok(panel.map_values(v, "standardize".into()))
    }

    pub fn destandardize(&self, panel: &Panel) -> Result<Panel> {
        self.check(panel)?;
        let mut v = panel.values.clone();
        for (i, s) in self.scales.iter().enumerate() {
            v.row_mut(i).iter_mut().for_each(|x| *x *= s);
        }
        let mut out = panel.map_values(v, "destandardize".into());
        // destandardize undoes the last standardize step
        let k = out.lineage.len();
        if k >= 2 && out.lineage[k - 2] == "standardize" {
            out.lineage.truncate(k - 2);
        }
        Ok(out)
    }

    fn check(&self, panel: &Panel) -> Result<()> {
        if self.scales.len() != panel.n_series() {
            return Err(Error::Shape(format!(
                "{} scale factors for {} series",
                self.scales.len(),
                panel.n_series()
            )));
        }
        Ok(())
    }
}

/// Divide each series by its sample standard deviation (divisor `|T_i| - 1`).
pub fn standardize(panel: &Panel) -> Result<(Panel, Standardizer)> {
    let mut scales = Vec::with_capacity(panel.n_series());
    for i in 0..panel.n_series() {
        let obs: Vec<f64> = (0..panel.len()).filter_map(|t| panel.get(i, t)).collect();
        if obs.len() < 2 {
            return Err(Error::DegenerateScale(panel.series_ids()[i].clone()));
        }
        let mean = obs.iter().sum::<f64>() / obs.len() as f64;
        let var = obs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (obs.len() - 1) as f64;
        let sd = var.sqrt();
        if !(sd > 1e-300) {
            return Err(Error::DegenerateScale(panel.series_ids()[i].clone()));
        }
        scales.push(sd);
    }
    let st = Standardizer { scales };
    Ok((st.apply(panel)?, st))
}

/// Which series are observed in each period.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMask {
    n: usize,
    /// `D_t` for each period, sorted series indices.
    observed: Vec<Vec<usize>>,
    /// Periods with at least one observation.
    periods: Vec<usize>,
}

impl ObservationMask {
    pub fn n_series(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.observed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }

    /// Observed series at period `t` (`D_t`).
    pub fn observed(&self, t: usize) -> &[usize] {
        &self.observed[t]
    }

    /// Periods with at least one observation (`T`).
    pub fn periods(&self) -> &[usize] {
        &self.periods
    }

    /// Periods with an observation among the first `s` periods (`T(s)`).
    pub fn periods_until(&self, s: usize) -> &[usize] {
        let k = self.periods.partition_point(|&t| t < s);
        &self.periods[..k]
    }

    /// Selection matrix `A_t` (`|D_t| x n`).
    pub fn selection(&self, t: usize) -> DMatrix<f64> {
        let rows = &self.observed[t];
        let mut a = DMatrix::zeros(rows.len(), self.n);
        for (k, &i) in rows.iter().enumerate() {
            a[(k, i)] = 1.0;
        }
        a
    }

    /// Copy restricted to the first `s` periods.
    pub fn truncate(&self, s: usize) -> Self {
        let s = s.min(self.len());
        Self {
            n: self.n,
            observed: self.observed[..s].to_vec(),
            periods: self.periods_until(s).to_vec(),
        }
    }
}

/// Compute `D_t`, `A_t` and `T` for a panel.
pub fn observation_structure(panel: &Panel) -> ObservationMask {
    let observed: Vec<Vec<usize>> = (0..panel.len())
        .map(|t| (0..panel.n_series()).filter(|&i| panel.is_observed(i, t)).collect())
        .collect();
    let periods = observed
        .iter()
        .enumerate()
        .filter(|(_, d)| !d.is_empty())
        .map(|(t, _)| t)
        .collect();
    ObservationMask {
        n: panel.n_series(),
        observed,
        periods,
    }
}

/// Consecutive months starting at `start`.
pub fn month_range(start: Month, len: usize) -> Vec<Month> {
    (0..len as i64).map(|k| start.offset(k)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn m(s: &str) -> Month {
        s.parse().unwrap()
    }

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn month_arithmetic() {
        assert_eq!(m("1984-12").succ(), m("1985-01"));
        assert_eq!(m("1985-01").offset(-13), m("1983-12"));
        assert_eq!(m("2000-03").months_until(m("2001-03")), 12);
        assert!("1984-13".parse::<Month>().is_err());
        assert!("84-01".parse::<Month>().is_err());
    }

    #[test]
    fn csv_with_empty_cell() {
        let f = write_tmp("date,a,b\n1984-01,1,2\n1984-02,,4\n1984-03,5,NA\n");
        let p = load_csv_panel(f.path(), &ColumnMap::default()).unwrap();
        assert_eq!(p.series_ids(), &["a".to_string(), "b".to_string()]);
        assert_eq!(p.len(), 3);
        assert_eq!(p.get(0, 1), None);
        assert_eq!(p.get(1, 2), None);
        assert_eq!(p.get(0, 2), Some(5.0));
        let missing: usize = (0..2).map(|i| p.len() - p.observed_count(i)).sum();
        assert_eq!(missing, 2);
    }

    #[test]
    fn csv_errors() {
        let gap = write_tmp("date,a\n1984-01,1\n1984-03,2\n");
        let e = load_csv_panel(gap.path(), &ColumnMap::default()).unwrap_err();
        assert!(e.to_string().contains("non-contiguous monthly index"), "{e}");

        let dup = write_tmp("date,a\n1984-01,1\n1984-01,2\n");
        assert!(matches!(
            load_csv_panel(dup.path(), &ColumnMap::default()),
            Err(Error::Integrity(_))
        ));

        let ragged = write_tmp("date,a,b\n1984-01,1,2\n1984-02,3\n");
        assert!(matches!(
            load_csv_panel(ragged.path(), &ColumnMap::default()),
            Err(Error::Integrity(_))
        ));

        let bad = write_tmp("date,a\n1984-01,1\nJan84,2\n");
        match load_csv_panel(bad.path(), &ColumnMap::default()) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_quoted_header_and_selection() {
        let f = write_tmp("date,\"x, y\",z\n2001-01,1,2\n2001-02,3,4\n");
        let p = load_csv_panel(
            f.path(),
            &ColumnMap { columns: Some(vec!["z".into(), "x, y".into()]) },
        )
        .unwrap();
        assert_eq!(p.series_ids()[1], "x, y");
        assert_eq!(p.get(0, 1), Some(4.0));
    }

    #[test]
    fn table_mnemonics_round_trip() {
        let ids = [
            "TCU", "INDPRO", "RPCE", "PAYEMS", "EMRATIO", "UNRATE", "WTISPLC", "CPIAUCNS", "CPILFENS",
        ];
        let mut s = String::from("date");
        for id in ids {
            s.push(',');
            s.push_str(id);
        }
        s.push('\n');
        for k in 0..3 {
            s.push_str(&format!("1984-0{}", k + 1));
            for j in 0..ids.len() {
                s.push_str(&format!(",{}", 100 + j + k));
            }
            s.push('\n');
        }
        let f = write_tmp(&s);
        let p = load_csv_panel(f.path(), &ColumnMap::default()).unwrap();
        assert_eq!(p.series_ids(), ids.map(String::from).as_slice());
    }

    fn single(values: &[Option<f64>]) -> Panel {
        Panel::from_rows(
            vec!["x".into()],
            month_range(m("2000-01"), values.len()),
            &[values.to_vec()],
        )
        .unwrap()
    }

    #[test]
    fn transforms() {
        let p = single(&[Some(100.0), Some(110.0)]);
        let mom = apply_transform(&p, &[TransformSpec::MoMSquaredReturn]).unwrap();
        assert_eq!(mom.get(0, 0), None);
        assert!((mom.get(0, 1).unwrap() - 100.0).abs() < 1e-9);

        let lv = apply_transform(&p, &[TransformSpec::Levels]).unwrap();
        assert_eq!(lv.raw(), p.raw());

        let mut xs = vec![Some(100.0); 13];
        xs[12] = Some(105.0);
        let yoy = apply_transform(&single(&xs), &[TransformSpec::YoYReturn]).unwrap();
        assert!((0..12).all(|t| yoy.get(0, t).is_none()));
        assert!((yoy.get(0, 12).unwrap() - 5.0).abs() < 1e-9);

        let neg = single(&[Some(1.0), Some(-1.0)]);
        let e = apply_transform(&neg, &[TransformSpec::MoMSquaredReturn]).unwrap_err();
        assert!(e.to_string().contains("2000-02"), "{e}");
    }

    #[test]
    fn standardize_examples() {
        let (z, st) = standardize(&single(&[Some(2.0), Some(-2.0)])).unwrap();
        assert!((st.scales[0] - 8f64.sqrt()).abs() < 1e-12);
        assert!((z.get(0, 0).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);

        let (z, st) = standardize(&single(&[Some(1.0), Some(-1.0), Some(0.0)])).unwrap();
        assert!((st.scales[0] - 1.0).abs() < 1e-12);
        assert_eq!(z.get(0, 0), Some(1.0));

        assert!(matches!(
            standardize(&single(&[Some(3.0), Some(3.0)])),
            Err(Error::DegenerateScale(_))
        ));
        assert!(matches!(
            standardize(&single(&[Some(3.0), None])),
            Err(Error::DegenerateScale(_))
        ));
    }

    #[test]
    fn observation_examples() {
        let dates = month_range(m("2000-01"), 3);
        let full = Panel::from_rows(
            vec!["a".into(), "b".into()],
            dates.clone(),
            &[vec![Some(1.0); 3], vec![Some(2.0); 3]],
        )
        .unwrap();
        let mask = observation_structure(&full);
        for t in 0..3 {
            assert_eq!(mask.observed(t), &[0, 1]);
            assert_eq!(mask.selection(t), DMatrix::<f64>::identity(2, 2));
        }

        let holes = Panel::from_rows(
            vec!["a".into(), "b".into()],
            dates,
            &[vec![Some(1.0), None, Some(1.0)], vec![None, None, Some(2.0)]],
        )
        .unwrap();
        let mask = observation_structure(&holes);
        assert_eq!(mask.observed(0), &[0]);
        assert_eq!(mask.selection(0), DMatrix::from_row_slice(1, 2, &[1.0, 0.0]));
        assert_eq!(mask.periods(), &[0, 2]);
        assert_eq!(mask.periods_until(2), &[0]);
    }

    #[test]
    fn vintage_gaps_are_listed() {
        let dir = tempfile::tempdir().unwrap();
        for v in ["2005-01", "2005-02", "2005-05"] {
            std::fs::write(dir.path().join(format!("{v}.csv")), "date,a\n").unwrap();
        }
        let e = list_vintages(dir.path()).unwrap_err().to_string();
        assert!(e.contains("2005-03") && e.contains("2005-04"), "{e}");
    }
}
