//! Panel data model: calendar quarters, the unit × quarter table, CSV ingest
//! and descriptive statistics.

use std::fmt;
use std::io::{Read, Write};
use std::ops::{Add, Sub};
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const UNIT_KEY: &str = "msa_id";
pub const QUARTER_KEY: &str = "quarter";

/// Columns every ingest file must carry besides the two key columns.
pub const REQUIRED_COLUMNS: [&str; 4] = ["CPI_core", "CPI", "vu", "shift_share"];

/// A calendar quarter, stored as `year * 4 + (q - 1)`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Quarter(i32);

impl Quarter {
    pub fn new(year: i32, q: u8) -> Result<Self> {
        if !(1..=4).contains(&q) {
            return Err(Error::QuarterParse {
                token: format!("{year}q{q}"),
                reason: "quarter digit must be 1..4",
            });
        }
        Ok(Quarter(year * 4 + i32::from(q) - 1))
    }

    pub fn from_index(index: i32) -> Self {
        Quarter(index)
    }

    pub fn index(self) -> i32 {
        self.0
    }

    pub fn year(self) -> i32 {
        self.0.div_euclid(4)
    }

    pub fn q(self) -> u8 {
        (self.0.rem_euclid(4) + 1) as u8
    }
}

pub fn parse_quarter(text: &str) -> Result<Quarter> {
    text.parse()
}

impl FromStr for Quarter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let token = s.trim();
        let err = |reason| Error::QuarterParse {
            token: token.to_string(),
            reason,
        };
        let pos = token
            .find(['q', 'Q'])
            .ok_or_else(|| err("expected the form YYYYqQ"))?;
        let (year, rest) = token.split_at(pos);
        let digit = &rest[1..];
        if year.is_empty() || !year.chars().all(|c| c.is_ascii_digit() || c == '-') {
            return Err(err("year is not an integer"));
        }
        let year: i32 = year.parse().map_err(|_| err("year is not an integer"))?;
        if digit.len() != 1 || !digit.chars().all(|c| c.is_ascii_digit()) {
            return Err(err("expected a single quarter digit after `q`"));
        }
        let q: u8 = digit.parse().map_err(|_| err("bad quarter digit"))?;
        if !(1..=4).contains(&q) {
            return Err(err("quarter digit must be 1..4"));
        }
        Ok(Quarter(year * 4 + i32::from(q) - 1))
    }
}

impl fmt::Display for Quarter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}q{}", self.year(), self.q())
    }
}

impl fmt::Debug for Quarter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Quarter({self})")
    }
}

impl Add<i32> for Quarter {
    type Output = Quarter;
    fn add(self, k: i32) -> Quarter {
        Quarter(self.0 + k)
    }
}

impl Sub<i32> for Quarter {
    type Output = Quarter;
    fn sub(self, k: i32) -> Quarter {
        Quarter(self.0 - k)
    }
}

impl Sub<Quarter> for Quarter {
    type Output = i32;
    fn sub(self, other: Quarter) -> i32 {
        self.0 - other.0
    }
}

impl Serialize for Quarter {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Quarter {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Inclusive range of quarters, written `YYYYqQ:YYYYqQ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QuarterRange {
    pub start: Quarter,
    pub end: Quarter,
}

impl QuarterRange {
    pub fn new(start: Quarter, end: Quarter) -> Result<Self> {
        if end < start {
            return Err(Error::InvalidArgument(format!(
                "window end {end} precedes start {start}"
            )));
        }
        Ok(QuarterRange { start, end })
    }

    /// The baseline estimation sample, 2001q1 through 2024q2.
    pub fn baseline() -> Self {
        QuarterRange {
            start: Quarter(2001 * 4),
            end: Quarter(2024 * 4 + 1),
        }
    }

    pub fn contains(&self, q: Quarter) -> bool {
        self.start <= q && q <= self.end
    }

    pub fn len(&self) -> usize {
        (self.end - self.start + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn intersect(&self, other: &QuarterRange) -> Option<QuarterRange> {
        let start = self.start.max(other.start);
        let end = self.end.min(other.end);
        (start <= end).then_some(QuarterRange { start, end })
    }
}

impl FromStr for QuarterRange {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s.split_once(':').ok_or_else(|| {
            Error::InvalidArgument(format!("window `{s}` must have the form YYYYqQ:YYYYqQ"))
        })?;
        QuarterRange::new(a.parse()?, b.parse()?)
    }
}

impl fmt::Display for QuarterRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.start, self.end)
    }
}

impl Serialize for QuarterRange {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for QuarterRange {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One column of a panel: a cell per (unit, quarter), unit-major.
pub type Column = Vec<Option<f64>>;

/// Rectangular unit × quarter table of optional numeric cells.
///
/// Cell `(u, t)` of every column lives at `u * n_quarters + t`. The quarter
/// index is contiguous from `start`.
#[derive(Clone, Debug, PartialEq)]
pub struct PanelDataset {
    units: Vec<String>,
    start: Quarter,
    n_quarters: usize,
    columns: IndexMap<String, Column>,
}

impl PanelDataset {
    pub fn new(units: Vec<String>, quarters: QuarterRange) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for u in &units {
            if !seen.insert(u.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate unit id `{u}`")));
            }
        }
        Ok(PanelDataset {
            units,
            start: quarters.start,
            n_quarters: quarters.len(),
            columns: IndexMap::new(),
        })
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    pub fn n_quarters(&self) -> usize {
        self.n_quarters
    }

    pub fn n_cells(&self) -> usize {
        self.units.len() * self.n_quarters
    }

    pub fn range(&self) -> QuarterRange {
        QuarterRange {
            start: self.start,
            end: self.start + (self.n_quarters as i32 - 1),
        }
    }

    pub fn quarters(&self) -> impl Iterator<Item = Quarter> + '_ {
        (0..self.n_quarters).map(|t| self.start + t as i32)
    }

    pub fn quarter_at(&self, t: usize) -> Quarter {
        self.start + t as i32
    }

    pub fn quarter_pos(&self, q: Quarter) -> Option<usize> {
        let d = q - self.start;
        (d >= 0 && (d as usize) < self.n_quarters).then_some(d as usize)
    }

    pub fn unit_pos(&self, id: &str) -> Option<usize> {
        self.units.iter().position(|u| u == id)
    }

    #[inline]
    pub fn cell(&self, unit: usize, t: usize) -> usize {
        unit * self.n_quarters + t
    }

    /// Inverse of [`PanelDataset::cell`].
    #[inline]
    pub fn cell_coords(&self, idx: usize) -> (usize, usize) {
        (idx / self.n_quarters, idx % self.n_quarters)
    }

    pub(crate) fn domain_error(&self, what: &'static str, idx: usize, value: f64) -> Error {
        let (u, t) = self.cell_coords(idx);
        Error::Domain {
            what,
            unit: self.units[u].clone(),
            quarter: self.quarter_at(t).to_string(),
            value,
        }
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(String::as_str)
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.columns.contains_key(name)
    }

    pub fn column(&self, name: &str) -> Result<&[Option<f64>]> {
        self.columns
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    pub fn value(&self, name: &str, unit: usize, t: usize) -> Result<Option<f64>> {
        Ok(self.column(name)?[self.cell(unit, t)])
    }

    /// Appends a column. Never replaces an existing one.
    pub fn add_column(&mut self, name: impl Into<String>, values: Column) -> Result<()> {
        let name = name.into();
        if name == UNIT_KEY || name == QUARTER_KEY || self.columns.contains_key(&name) {
            return Err(Error::ColumnExists(name));
        }
        if values.len() != self.n_cells() {
            return Err(Error::ColumnLength {
                name,
                got: values.len(),
                expected: self.n_cells(),
            });
        }
        self.columns.insert(name, values);
        Ok(())
    }

    pub fn missing_count(&self, name: &str) -> Result<usize> {
        Ok(self.column(name)?.iter().filter(|v| v.is_none()).count())
    }

    /// Restricts the quarter index to its intersection with `window`.
    pub fn select_window(&self, window: &QuarterRange) -> Result<PanelDataset> {
        let keep = self.range().intersect(window).ok_or_else(|| {
            Error::EmptyPanel(format!(
                "window {window} does not overlap data range {}",
                self.range()
            ))
        })?;
        let t0 = (keep.start - self.start) as usize;
        let nt = keep.len();
        let mut out = PanelDataset {
            units: self.units.clone(),
            start: keep.start,
            n_quarters: nt,
            columns: IndexMap::new(),
        };
        for (name, col) in &self.columns {
            let mut sub = Vec::with_capacity(self.units.len() * nt);
            for u in 0..self.units.len() {
                let base = u * self.n_quarters + t0;
                sub.extend_from_slice(&col[base..base + nt]);
            }
            out.columns.insert(name.clone(), sub);
        }
        Ok(out)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![UNIT_KEY.to_string(), QUARTER_KEY.to_string()];
        header.extend(self.columns.keys().cloned());
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for (u, unit) in self.units.iter().enumerate() {
            for t in 0..self.n_quarters {
                record.clear();
                record.push(unit.clone());
                record.push(self.quarter_at(t).to_string());
                let idx = self.cell(u, t);
                for col in self.columns.values() {
                    record.push(col[idx].map(|v| v.to_string()).unwrap_or_default());
                }
                w.write_record(&record)?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Reads a panel CSV from `path`; see [`read_csv`].
pub fn load_csv(path: impl AsRef<Path>, schema: &[&str]) -> Result<PanelDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(std::io::BufReader::new(file), schema)
}

/// Parses a panel from CSV with `msa_id`, `quarter` and every column in
/// `schema`. Extra columns are kept when all their cells are numeric and
/// skipped otherwise. Absent (unit, quarter) rows become missing cells.
pub fn read_csv<R: Read>(reader: R, schema: &[&str]) -> Result<PanelDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| header.iter().position(|h| h == name);
    let unit_col = find(UNIT_KEY).ok_or_else(|| Error::MissingColumn(UNIT_KEY.into()))?;
    let quarter_col = find(QUARTER_KEY).ok_or_else(|| Error::MissingColumn(QUARTER_KEY.into()))?;
    for name in schema {
        if find(name).is_none() {
            return Err(Error::MissingColumn(name.to_string()));
        }
    }
    let data_cols: Vec<usize> = (0..header.len())
        .filter(|&i| i != unit_col && i != quarter_col)
        .collect();

    struct Row {
        unit: usize,
        quarter: Quarter,
        values: Vec<Option<f64>>,
    }
    let mut units: Vec<String> = Vec::new();
    let mut unit_index = std::collections::HashMap::<String, usize>::new();
    let mut rows = Vec::new();
    // extras with any non-numeric cell are dropped after the scan
    let mut numeric = vec![true; data_cols.len()];
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let unit = rec.get(unit_col).unwrap_or("").to_string();
        let quarter: Quarter = rec.get(quarter_col).unwrap_or("").parse()?;
        let next = units.len();
        let u = *unit_index.entry(unit.clone()).or_insert(next);
        if u == next {
            units.push(unit);
        }
        let mut values = Vec::with_capacity(data_cols.len());
        for (j, &c) in data_cols.iter().enumerate() {
            let raw = rec.get(c).unwrap_or("");
            if raw.is_empty() {
                values.push(None);
                continue;
            }
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(Some(v)),
                _ if schema.contains(&header[c].as_str()) => {
                    return Err(Error::BadCell {
                        row: line,
                        column: header[c].clone(),
                        value: raw.to_string(),
                    })
                }
                _ => {
                    numeric[j] = false;
                    values.push(None);
                }
            }
        }
        rows.push((line, Row { unit: u, quarter, values }));
    }
    if rows.is_empty() {
        return Err(Error::EmptyPanel("csv has no data rows".into()));
    }
    let qmin = rows.iter().map(|(_, r)| r.quarter).min().unwrap();
    let qmax = rows.iter().map(|(_, r)| r.quarter).max().unwrap();
    let mut panel = PanelDataset::new(units, QuarterRange::new(qmin, qmax)?)?;
    let n_cells = panel.n_cells();
    let mut cols: Vec<Column> = vec![vec![None; n_cells]; data_cols.len()];
    let mut filled = vec![false; n_cells];
    for (line, row) in rows {
        let idx = panel.cell(row.unit, (row.quarter - qmin) as usize);
        if std::mem::replace(&mut filled[idx], true) {
            return Err(Error::DuplicateKey {
                unit: panel.units[row.unit].clone(),
                quarter: row.quarter.to_string(),
                row: line,
            });
        }
        for (j, v) in row.values.into_iter().enumerate() {
            cols[j][idx] = v;
        }
    }
    for ((j, &c), col) in data_cols.iter().enumerate().zip(cols) {
        if numeric[j] {
            panel.add_column(header[c].clone(), col)?;
        }
    }
    Ok(panel)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Period {
    Full,
    Pre,
    Post,
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Period::Full => "full",
            Period::Pre => "pre",
            Period::Post => "post",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StatsRow {
    pub column: String,
    pub period: Period,
    pub count: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryStats {
    pub split: Quarter,
    pub rows: Vec<StatsRow>,
}

impl SummaryStats {
    pub fn get(&self, column: &str, period: Period) -> Option<&StatsRow> {
        self.rows
            .iter()
            .find(|r| r.column == column && r.period == period)
    }
}

fn describe(column: &str, period: Period, values: &[f64]) -> StatsRow {
    let n = values.len();
    if n == 0 {
        return StatsRow {
            column: column.to_string(),
            period,
            count: 0,
            mean: None,
            sd: None,
            min: None,
            max: None,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    let sd = if n > 1 { (ss / (n - 1) as f64).sqrt() } else { 0.0 };
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    StatsRow {
        column: column.to_string(),
        period,
        count: n,
        mean: Some(mean.clamp(min, max)),
        sd: Some(sd),
        min: Some(min),
        max: Some(max),
    }
}

/// Count, mean, sample standard deviation, min and max of each column over
/// the full sample, quarters before `split`, and quarters from `split` on.
/// A split outside the index leaves one of the halves empty.
pub fn summary_stats(data: &PanelDataset, columns: &[&str], split: Quarter) -> Result<SummaryStats> {
    let mut rows = Vec::with_capacity(columns.len() * 3);
    for &name in columns {
        let col = data.column(name)?;
        let (mut pre, mut post) = (Vec::new(), Vec::new());
        for (idx, v) in col.iter().enumerate() {
            if let Some(v) = *v {
                let (_, t) = data.cell_coords(idx);
                if data.quarter_at(t) < split {
                    pre.push(v);
                } else {
                    post.push(v);
                }
            }
        }
        let full: Vec<f64> = pre.iter().chain(&post).copied().collect();
        rows.push(describe(name, Period::Full, &full));
        rows.push(describe(name, Period::Pre, &pre));
        rows.push(describe(name, Period::Post, &post));
    }
    Ok(SummaryStats { split, rows })
}
