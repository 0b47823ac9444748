//! Yield-curve ingestion and return-matrix construction.
//!
//! Input files are delimited text (comma or semicolon, auto-detected)
//! with a header row, one date column (ISO-8601) and one column per
//! tenor. Returns are one-day absolute yield differences in the same
//! units as the input yields.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::factor::FactorId;

/// Calendar date in ISO-8601 `YYYY-MM-DD` form. No business-day logic,
/// only parsing, ordering and display.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct IsoDate {
    pub year: i32,
    pub month: u8,
    pub day: u8,
}

impl IsoDate {
    pub fn new(year: i32, month: u8, day: u8) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::data(format!("invalid month in date {year:04}-{month:02}-{day:02}")));
        }
        if day == 0 || day > days_in_month(year, month) {
            return Err(Error::data(format!("invalid day in date {year:04}-{month:02}-{day:02}")));
        }
        Ok(IsoDate { year, month, day })
    }

    /// Next calendar day.
    pub fn succ(self) -> IsoDate {
        let (mut y, mut m, mut d) = (self.year, self.month, self.day + 1);
        if d > days_in_month(y, m) {
            d = 1;
            m += 1;
            if m > 12 {
                m = 1;
                y += 1;
            }
        }
        IsoDate { year: y, month: m, day: d }
    }
}

fn days_in_month(year: i32, month: u8) -> u8 {
    match month {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        2 => {
            let leap = (year % 4 == 0 && year % 100 != 0) || year % 400 == 0;
            if leap {
                29
            } else {
                28
            }
        }
        _ => unreachable!(),
    }
}

impl fmt::Display for IsoDate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}-{:02}", self.year, self.month, self.day)
    }
}

impl FromStr for IsoDate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split('-').collect();
        if parts.len() != 3 {
            return Err(Error::data(format!("date `{s}` is not YYYY-MM-DD")));
        }
        let year: i32 = parts[0].parse().map_err(|_| Error::data(format!("date `{s}`: bad year")))?;
        let month: u8 = parts[1].parse().map_err(|_| Error::data(format!("date `{s}`: bad month")))?;
        let day: u8 = parts[2].parse().map_err(|_| Error::data(format!("date `{s}`: bad day")))?;
        IsoDate::new(year, month, day)
    }
}

impl Serialize for IsoDate {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for IsoDate {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(|e| D::Error::custom(format!("{e}")))
    }
}

/// Sequential calendar dates for synthetic samples.
pub fn synthetic_dates(n: usize) -> Vec<IsoDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = IsoDate { year: 2000, month: 1, day: 1 };
    for _ in 0..n {
        out.push(d);
        d = d.succ();
    }
    out
}

/// Historical yields of one curve on a pillar set.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSeries {
    curve_id: String,
    pillars: Vec<String>,
    dates: Vec<IsoDate>,
    yields: DMatrix<f64>,
}

impl CurveSeries {
    pub fn new(
        curve_id: impl Into<String>,
        pillars: Vec<String>,
        dates: Vec<IsoDate>,
        yields: DMatrix<f64>,
    ) -> Result<Self> {
        let curve_id = curve_id.into();
        if pillars.is_empty() {
            return Err(Error::validation("curve series needs at least one pillar".to_string()));
        }
        {
            let mut sorted = pillars.clone();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != pillars.len() {
                return Err(Error::validation(format!("duplicate pillar labels for curve {curve_id}")));
            }
        }
        if yields.nrows() != dates.len() || yields.ncols() != pillars.len() {
            return Err(Error::validation(format!(
                "curve {curve_id}: yields are {}x{} but {} dates and {} pillars given",
                yields.nrows(),
                yields.ncols(),
                dates.len(),
                pillars.len()
            )));
        }
        for w in dates.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::data(format!(
                    "curve {curve_id}: dates not strictly increasing at {}",
                    w[1]
                )));
            }
        }
        if yields.iter().any(|v| !v.is_finite()) {
            return Err(Error::data(format!("curve {curve_id}: non-finite yield cell")));
        }
        Ok(CurveSeries { curve_id, pillars, dates, yields })
    }

    pub fn curve_id(&self) -> &str {
        &self.curve_id
    }

    pub fn pillars(&self) -> &[String] {
        &self.pillars
    }

    pub fn dates(&self) -> &[IsoDate] {
        &self.dates
    }

    pub fn yields(&self) -> &DMatrix<f64> {
        &self.yields
    }

    /// Yield level on the last date for one pillar.
    pub fn last_yield(&self, pillar: &str) -> Result<f64> {
        let j = self
            .pillars
            .iter()
            .position(|p| p == pillar)
            .ok_or_else(|| Error::validation(format!("curve {} has no pillar {pillar}", self.curve_id)))?;
        Ok(self.yields[(self.dates.len() - 1, j)])
    }
}

/// Ingestion settings; defaults match the bundled fixtures.
#[derive(Debug, Clone)]
pub struct IngestOptions {
    /// Header name of the date column.
    pub date_column: String,
    /// Maps file header names to pillar labels (for exports whose
    /// headers differ from the configured tenor labels).
    pub column_map: BTreeMap<String, String>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            date_column: "DATE".to_string(),
            column_map: BTreeMap::new(),
        }
    }
}

const MISSING_MARKERS: &[&str] = &["", "NA", "N/A", "NaN", "-", "."];

/// Reads one curve from a delimited text file, restricted to
/// `pillar_filter`. Rows with a missing requested cell are dropped;
/// dates are sorted ascending.
pub fn ingest_curve(
    file_path: impl AsRef<Path>,
    curve_id: &str,
    pillar_filter: &[String],
    options: &IngestOptions,
) -> Result<CurveSeries> {
    let path = file_path.as_ref();
    let mut text = String::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    ingest_curve_reader(text.as_bytes(), curve_id, pillar_filter, options)
        .map_err(|e| match e {
            Error::Data(msg) => Error::data(format!("{}: {msg}", path.display())),
            other => other,
        })
}

/// Reader-based variant of [`ingest_curve`].
pub fn ingest_curve_reader(
    input: impl Read,
    curve_id: &str,
    pillar_filter: &[String],
    options: &IngestOptions,
) -> Result<CurveSeries> {
    if pillar_filter.is_empty() {
        return Err(Error::validation("pillar filter must not be empty".to_string()));
    }
    let mut raw = Vec::new();
    let mut input = input;
    input
        .read_to_end(&mut raw)
        .map_err(|e| Error::io("<reader>".to_string(), e))?;
    let header_line = raw
        .split(|&b| b == b'\n')
        .next()
        .unwrap_or(&[]);
    let delimiter = detect_delimiter(header_line);

    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(raw.as_slice());

    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::data(format!("cannot read header row: {e}")))?
        .iter()
        .map(|h| {
            let h = h.trim();
            options.column_map.get(h).cloned().unwrap_or_else(|| h.to_string())
        })
        .collect();

    let date_idx = headers
        .iter()
        .position(|h| h == &options.date_column)
        .ok_or_else(|| {
            Error::data(format!(
                "no date column `{}`; headers are [{}]",
                options.date_column,
                headers.join(", ")
            ))
        })?;
    let pillar_idx: Vec<usize> = pillar_filter
        .iter()
        .map(|p| {
            headers.iter().position(|h| h == p).ok_or_else(|| {
                Error::data(format!("unknown pillar label `{p}`; headers are [{}]", headers.join(", ")))
            })
        })
        .collect::<Result<_>>()?;

    let mut rows: Vec<(IsoDate, Vec<f64>)> = Vec::new();
    for (row_no, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::data(format!("row {}: {e}", row_no + 2)))?;
        let date_cell = record.get(date_idx).unwrap_or("");
        let date: IsoDate = date_cell
            .parse()
            .map_err(|_| Error::data(format!("row {}, column `{}`: unparseable date `{date_cell}`", row_no + 2, options.date_column)))?;
        let mut values = Vec::with_capacity(pillar_idx.len());
        let mut missing = false;
        for (&col, pillar) in pillar_idx.iter().zip(pillar_filter) {
            let cell = record.get(col).unwrap_or("").trim();
            if MISSING_MARKERS.contains(&cell) {
                missing = true;
                break;
            }
            let v: f64 = cell.replace(',', ".").parse().map_err(|_| {
                Error::data(format!("row {}, column `{pillar}`: unparseable numeric cell `{cell}`", row_no + 2))
            })?;
            values.push(v);
        }
        if !missing {
            rows.push((date, values));
        }
    }

    if rows.len() < 2 {
        return Err(Error::data(format!(
            "curve {curve_id}: only {} usable rows after dropping incomplete ones (need at least 2)",
            rows.len()
        )));
    }
    rows.sort_by_key(|(d, _)| *d);
    for w in rows.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(Error::data(format!("curve {curve_id}: duplicate date {}", w[0].0)));
        }
    }

    let dates: Vec<IsoDate> = rows.iter().map(|(d, _)| *d).collect();
    let yields = DMatrix::from_fn(rows.len(), pillar_filter.len(), |i, j| rows[i].1[j]);
    CurveSeries::new(curve_id, pillar_filter.to_vec(), dates, yields)
}

fn detect_delimiter(header_line: &[u8]) -> u8 {
    let semis = header_line.iter().filter(|&&b| b == b';').count();
    let commas = header_line.iter().filter(|&&b| b == b',').count();
    if semis > commas {
        b';'
    } else {
        b','
    }
}

/// Aligned one-day yield differences across curves.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnMatrix {
    factors: Vec<FactorId>,
    dates: Vec<IsoDate>,
    data: DMatrix<f64>,
}

impl ReturnMatrix {
    pub fn from_parts(factors: Vec<FactorId>, dates: Vec<IsoDate>, data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() != dates.len() || data.ncols() != factors.len() {
            return Err(Error::validation(format!(
                "return matrix is {}x{} but {} dates and {} factors given",
                data.nrows(),
                data.ncols(),
                dates.len(),
                factors.len()
            )));
        }
        let mut sorted = factors.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != factors.len() {
            return Err(Error::validation("duplicate factor labels".to_string()));
        }
        Ok(ReturnMatrix { factors, dates, data })
    }

    pub fn factors(&self) -> &[FactorId] {
        &self.factors
    }

    pub fn dates(&self) -> &[IsoDate] {
        &self.dates
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn n_obs(&self) -> usize {
        self.data.nrows()
    }

    pub fn column_index(&self, factor: &FactorId) -> Option<usize> {
        self.factors.iter().position(|f| f == factor)
    }

    pub fn column(&self, factor: &FactorId) -> Result<Vec<f64>> {
        let j = self
            .column_index(factor)
            .ok_or_else(|| Error::validation(format!("unknown factor {factor}")))?;
        Ok(self.data.column(j).iter().copied().collect())
    }

    /// Observation submatrix for a factor subset, columns in subset order.
    pub fn submatrix(&self, subset: &[FactorId]) -> Result<DMatrix<f64>> {
        let idx: Vec<usize> = subset
            .iter()
            .map(|f| self.column_index(f).ok_or_else(|| Error::validation(format!("unknown factor {f}"))))
            .collect::<Result<_>>()?;
        Ok(DMatrix::from_fn(self.n_obs(), idx.len(), |i, j| self.data[(i, idx[j])]))
    }

    /// First and last return dates (the historical window).
    pub fn window(&self) -> Option<(IsoDate, IsoDate)> {
        Some((*self.dates.first()?, *self.dates.last()?))
    }

    /// Checks that every column has at least `min_obs` observations.
    pub fn validate_min_observations(&self, min_obs: usize) -> Result<()> {
        if self.n_obs() < min_obs {
            return Err(Error::data(format!(
                "{} observations available but {min_obs} required for fitting",
                self.n_obs()
            )));
        }
        Ok(())
    }
}

/// Inner-joins the series on dates and takes first differences per
/// factor. Factor order is curve order as given, pillar order within
/// curve.
pub fn to_returns(series_list: &[CurveSeries]) -> Result<ReturnMatrix> {
    if series_list.is_empty() {
        return Err(Error::validation("no curve series given".to_string()));
    }
    let mut factors = Vec::new();
    for s in series_list {
        for p in s.pillars() {
            factors.push(FactorId::new(s.curve_id(), p.clone()));
        }
    }
    {
        let mut sorted = factors.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != factors.len() {
            return Err(Error::validation("duplicate factor labels across series".to_string()));
        }
    }

    let mut common: BTreeSet<IsoDate> = series_list[0].dates().iter().copied().collect();
    for s in &series_list[1..] {
        let other: BTreeSet<IsoDate> = s.dates().iter().copied().collect();
        common = common.intersection(&other).copied().collect();
    }
    if common.is_empty() {
        return Err(Error::data("empty date intersection across curve series".to_string()));
    }
    if common.len() < 2 {
        return Err(Error::data(
            "only one common date across curve series; need at least 2".to_string(),
        ));
    }
    let joined: Vec<IsoDate> = common.into_iter().collect();

    // Joined yield levels, then first differences.
    let n = joined.len();
    let d = factors.len();
    let mut levels = DMatrix::zeros(n, d);
    let mut col = 0;
    for s in series_list {
        let date_pos: BTreeMap<IsoDate, usize> =
            s.dates().iter().enumerate().map(|(i, &dt)| (dt, i)).collect();
        for j in 0..s.pillars().len() {
            for (row, dt) in joined.iter().enumerate() {
                levels[(row, col)] = s.yields()[(date_pos[dt], j)];
            }
            col += 1;
        }
    }
    let mut returns = DMatrix::zeros(n - 1, d);
    for i in 1..n {
        for j in 0..d {
            returns[(i - 1, j)] = levels[(i, j)] - levels[(i - 1, j)];
        }
    }
    ReturnMatrix::from_parts(factors, joined[1..].to_vec(), returns)
}
