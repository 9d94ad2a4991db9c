//! Price panels, gross returns and multivariate series tables.
//!
//! All tables are dense and complete: a missing or non-positive price is a
//! hard error, never imputed. Dates are calendar dates (`YYYY-MM-DD`); monthly
//! files may use `YYYY-MM`, which is read as the last day of that month.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Delimited-text layout. Lines starting with `comment` are skipped on read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvFormat {
    pub delimiter: u8,
    pub comment: Option<u8>,
}

impl Default for CsvFormat {
    fn default() -> Self {
        CsvFormat {
            delimiter: b',',
            comment: Some(b'#'),
        }
    }
}

/// N assets observed on T dates, all prices strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    asset_ids: Vec<String>,
    timestamps: Vec<NaiveDate>,
    /// N × T, row = asset.
    prices: Array2<f64>,
}

impl PricePanel {
    pub fn new(asset_ids: Vec<String>, timestamps: Vec<NaiveDate>, prices: Array2<f64>) -> Result<Self> {
        let (n, t) = prices.dim();
        if n != asset_ids.len() || t != timestamps.len() {
            return Err(Error::invalid(format!(
                "price grid is {n}x{t} but there are {} assets and {} dates",
                asset_ids.len(),
                timestamps.len()
            )));
        }
        if n < 2 {
            return Err(Error::invalid(format!("need at least 2 assets, got {n}")));
        }
        if t < 2 {
            return Err(Error::invalid(format!("need at least 2 dates, got {t}")));
        }
        check_unique(&asset_ids, "asset")?;
        check_increasing(&timestamps)?;
        for ((i, j), &p) in prices.indexed_iter() {
            if !(p.is_finite() && p > 0.0) {
                return Err(Error::invalid_at(
                    format!("price must be finite and > 0, got {p}"),
                    format!("asset {} on {}", asset_ids[i], timestamps[j]),
                ));
            }
        }
        Ok(PricePanel {
            asset_ids,
            timestamps,
            prices,
        })
    }

    pub fn asset_ids(&self) -> &[String] {
        &self.asset_ids
    }

    pub fn timestamps(&self) -> &[NaiveDate] {
        &self.timestamps
    }

    pub fn prices(&self) -> &Array2<f64> {
        &self.prices
    }

    pub fn n_assets(&self) -> usize {
        self.asset_ids.len()
    }

    pub fn n_dates(&self) -> usize {
        self.timestamps.len()
    }
}

/// Gross returns `r_i(t) = C_i(t) / C_i(t-1)`, stamped with the later date.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    asset_ids: Vec<String>,
    timestamps: Vec<NaiveDate>,
    /// N × (T-1), row = asset.
    returns: Array2<f64>,
}

impl ReturnPanel {
    /// Builds a return panel directly, e.g. for windows or tests.
    pub fn new(asset_ids: Vec<String>, timestamps: Vec<NaiveDate>, returns: Array2<f64>) -> Result<Self> {
        let (n, t) = returns.dim();
        if n != asset_ids.len() || t != timestamps.len() {
            return Err(Error::invalid(format!(
                "return grid is {n}x{t} but there are {} assets and {} dates",
                asset_ids.len(),
                timestamps.len()
            )));
        }
        if n < 2 || t < 1 {
            return Err(Error::invalid("return panel needs N >= 2 assets and T >= 1 periods"));
        }
        for ((i, j), &r) in returns.indexed_iter() {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::invalid_at(
                    format!("return must be finite and > 0, got {r}"),
                    format!("asset {} on {}", asset_ids[i], timestamps[j]),
                ));
            }
        }
        Ok(ReturnPanel {
            asset_ids,
            timestamps,
            returns,
        })
    }

    pub fn asset_ids(&self) -> &[String] {
        &self.asset_ids
    }

    pub fn timestamps(&self) -> &[NaiveDate] {
        &self.timestamps
    }

    pub fn returns(&self) -> &Array2<f64> {
        &self.returns
    }

    pub fn n_assets(&self) -> usize {
        self.asset_ids.len()
    }

    pub fn n_periods(&self) -> usize {
        self.timestamps.len()
    }

    /// Cross-section of returns at period `t`.
    pub fn period(&self, t: usize) -> ArrayView1<'_, f64> {
        self.returns.column(t)
    }

    /// Periods `start..end` as a new panel.
    pub fn window(&self, start: usize, end: usize) -> Result<ReturnPanel> {
        if start >= end || end > self.n_periods() {
            return Err(Error::Contract(format!(
                "window {start}..{end} outside 0..{}",
                self.n_periods()
            )));
        }
        Ok(ReturnPanel {
            asset_ids: self.asset_ids.clone(),
            timestamps: self.timestamps[start..end].to_vec(),
            returns: self.returns.slice(ndarray::s![.., start..end]).to_owned(),
        })
    }
}

pub fn gross_returns(panel: &PricePanel) -> Result<ReturnPanel> {
    let t = panel.n_dates();
    if t < 2 {
        return Err(Error::InsufficientData(format!("gross returns need T >= 2 dates, got {t}")));
    }
    let p = &panel.prices;
    let later = p.slice(ndarray::s![.., 1..]);
    let earlier = p.slice(ndarray::s![.., ..t - 1]);
    let returns = &later / &earlier;
    Ok(ReturnPanel {
        asset_ids: panel.asset_ids.clone(),
        timestamps: panel.timestamps[1..].to_vec(),
        returns,
    })
}

/// K named real-valued series on a common set of dates.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesTable {
    names: Vec<String>,
    timestamps: Vec<NaiveDate>,
    /// K × T, row = series.
    values: Array2<f64>,
}

impl SeriesTable {
    pub fn new(names: Vec<String>, timestamps: Vec<NaiveDate>, values: Array2<f64>) -> Result<Self> {
        let (k, t) = values.dim();
        if k != names.len() || t != timestamps.len() {
            return Err(Error::invalid(format!(
                "value grid is {k}x{t} but there are {} names and {} dates",
                names.len(),
                timestamps.len()
            )));
        }
        if k < 2 {
            return Err(Error::invalid(format!("a series table needs at least 2 series, got {k}")));
        }
        check_unique(&names, "series")?;
        check_increasing(&timestamps)?;
        for ((i, j), &v) in values.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::invalid_at(
                    format!("non-finite value {v}"),
                    format!("series {} on {}", names[i], timestamps[j]),
                ));
            }
        }
        Ok(SeriesTable {
            names,
            timestamps,
            values,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn timestamps(&self) -> &[NaiveDate] {
        &self.timestamps
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn n_series(&self) -> usize {
        self.names.len()
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn series(&self, k: usize) -> ArrayView1<'_, f64> {
        self.values.row(k)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Same data with the series reordered by `order` (a permutation of 0..K).
    pub fn reorder(&self, order: &[usize]) -> Result<SeriesTable> {
        let mut seen = vec![false; self.n_series()];
        if order.len() != self.n_series() || order.iter().any(|&i| i >= seen.len() || std::mem::replace(&mut seen[i], true)) {
            return Err(Error::Contract("reorder needs a permutation of the series indices".into()));
        }
        Ok(SeriesTable {
            names: order.iter().map(|&i| self.names[i].clone()).collect(),
            timestamps: self.timestamps.clone(),
            values: self.values.select(Axis(0), order),
        })
    }

    /// Natural log of every value; all values must be positive.
    pub fn log_transform(&self) -> Result<SeriesTable> {
        if let Some(((i, j), v)) = self.values.indexed_iter().find(|(_, v)| **v <= 0.0) {
            return Err(Error::invalid_at(
                format!("cannot take log of {v}"),
                format!("series {} on {}", self.names[i], self.timestamps[j]),
            ));
        }
        Ok(SeriesTable {
            names: self.names.clone(),
            timestamps: self.timestamps.clone(),
            values: self.values.mapv(f64::ln),
        })
    }

    /// First differences, stamped with the later date.
    pub fn difference(&self) -> Result<SeriesTable> {
        let t = self.len();
        if t < 2 {
            return Err(Error::InsufficientData("differencing needs at least 2 dates".into()));
        }
        let later = self.values.slice(ndarray::s![.., 1..]);
        let earlier = self.values.slice(ndarray::s![.., ..t - 1]);
        Ok(SeriesTable {
            names: self.names.clone(),
            timestamps: self.timestamps[1..].to_vec(),
            values: &later - &earlier,
        })
    }
}

/// Reads a price panel: header `date,<asset>,...`, one row per date.
pub fn load_price_panel(path: &Path, format: CsvFormat) -> Result<PricePanel> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_price_panel(file, format)
}

pub fn read_price_panel<R: Read>(reader: R, format: CsvFormat) -> Result<PricePanel> {
    let grid = read_grid(reader, format)?;
    if grid.names.len() < 2 {
        return Err(Error::invalid(format!("need at least 2 asset columns, got {}", grid.names.len())));
    }
    for (r, row) in grid.rows.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            if !(v > 0.0) {
                return Err(Error::invalid_at(
                    format!("price must be > 0, got {v}"),
                    format!("row {} (date {}), column {}", r + 1, grid.dates[r], grid.names[c]),
                ));
            }
        }
    }
    let (names, dates, values) = grid.into_sorted()?;
    PricePanel::new(names, dates, values)
}

/// Reads a series table: header `date,<series>,...`, one row per date.
pub fn load_series_table(path: &Path, format: CsvFormat) -> Result<SeriesTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_series_table(file, format)
}

pub fn read_series_table<R: Read>(reader: R, format: CsvFormat) -> Result<SeriesTable> {
    let grid = read_grid(reader, format)?;
    if grid.names.len() < 2 {
        return Err(Error::invalid(format!("need at least 2 series columns, got {}", grid.names.len())));
    }
    let (names, dates, values) = grid.into_sorted()?;
    SeriesTable::new(names, dates, values)
}

/// Inner join on dates; columns are concatenated in input order.
pub fn align_and_join(tables: &[SeriesTable]) -> Result<SeriesTable> {
    let first = tables
        .first()
        .ok_or_else(|| Error::Contract("align_and_join needs at least one table".into()))?;
    let mut names: Vec<String> = Vec::new();
    let mut seen = HashSet::new();
    for table in tables {
        for n in &table.names {
            if !seen.insert(n.clone()) {
                return Err(Error::invalid(format!("series name collision: {n}")));
            }
            names.push(n.clone());
        }
    }
    let mut common: BTreeSet<NaiveDate> = first.timestamps.iter().copied().collect();
    for table in &tables[1..] {
        let other: BTreeSet<NaiveDate> = table.timestamps.iter().copied().collect();
        common = common.intersection(&other).copied().collect();
    }
    if common.is_empty() {
        return Err(Error::Alignment("the tables share no dates".into()));
    }
    let dates: Vec<NaiveDate> = common.into_iter().collect();
    let mut values = Array2::zeros((names.len(), dates.len()));
    let mut row = 0;
    for table in tables {
        let index: HashMap<NaiveDate, usize> =
            table.timestamps.iter().enumerate().map(|(i, d)| (*d, i)).collect();
        for k in 0..table.n_series() {
            for (c, d) in dates.iter().enumerate() {
                values[[row, c]] = table.values[[k, index[d]]];
            }
            row += 1;
        }
    }
    SeriesTable::new(names, dates, values)
}

/// Writes `date,<series>...` with 17 significant digits per value. When
/// `metadata` is given it is emitted first as a single `# ` comment line.
pub fn write_series_table<W: Write>(table: &SeriesTable, writer: W, metadata: Option<&str>) -> Result<()> {
    write_grid(writer, &table.names, &table.timestamps, &table.values, metadata)
}

pub fn write_price_panel<W: Write>(panel: &PricePanel, writer: W, metadata: Option<&str>) -> Result<()> {
    write_grid(writer, &panel.asset_ids, &panel.timestamps, &panel.prices, metadata)
}

/// Full-precision decimal form used by every CSV writer in the crate.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn format_date(d: NaiveDate) -> String {
    d.format("%Y-%m-%d").to_string()
}

/// Accepts `YYYY-MM-DD`, or `YYYY-MM` mapped to the month's last day.
pub fn parse_date(s: &str) -> Option<NaiveDate> {
    let s = s.trim();
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Some(d);
    }
    let (y, m) = s.split_once('-')?;
    if m.len() != 2 {
        return None;
    }
    let first = NaiveDate::from_ymd_opt(y.parse().ok()?, m.parse().ok()?, 1)?;
    let next = if first.month() == 12 {
        NaiveDate::from_ymd_opt(first.year() + 1, 1, 1)?
    } else {
        NaiveDate::from_ymd_opt(first.year(), first.month() + 1, 1)?
    };
    next.pred_opt()
}

struct Grid {
    names: Vec<String>,
    dates: Vec<NaiveDate>,
    rows: Vec<Vec<f64>>,
}

impl Grid {
    /// Sorts rows by date, rejects duplicates, returns a column-per-row grid.
    fn into_sorted(self) -> Result<(Vec<String>, Vec<NaiveDate>, Array2<f64>)> {
        let mut order: Vec<usize> = (0..self.dates.len()).collect();
        order.sort_by_key(|&i| self.dates[i]);
        for w in order.windows(2) {
            if self.dates[w[0]] == self.dates[w[1]] {
                return Err(Error::invalid_at(
                    "duplicate date",
                    format!("rows {} and {} ({})", w[0] + 1, w[1] + 1, self.dates[w[0]]),
                ));
            }
        }
        if order.len() < 2 {
            return Err(Error::invalid(format!("need at least 2 dated rows, got {}", order.len())));
        }
        let k = self.names.len();
        let mut values = Array2::zeros((k, order.len()));
        for (c, &r) in order.iter().enumerate() {
            for j in 0..k {
                values[[j, c]] = self.rows[r][j];
            }
        }
        let dates = order.iter().map(|&r| self.dates[r]).collect();
        Ok((self.names, dates, values))
    }
}

fn read_grid<R: Read>(reader: R, format: CsvFormat) -> Result<Grid> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(format.delimiter)
        .comment(format.comment)
        .flexible(true)
        .has_headers(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() < 2 {
        return Err(Error::invalid_at("expected a date column and at least one data column", "header"));
    }
    let names: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    check_unique(&names, "column")?;
    if let Some(empty) = names.iter().position(|n| n.is_empty()) {
        return Err(Error::invalid_at("empty column name", format!("header column {}", empty + 2)));
    }
    let mut dates = Vec::new();
    let mut rows = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let line = r + 1;
        if record.len() != header.len() {
            return Err(Error::invalid_at(
                format!("expected {} fields, found {}", header.len(), record.len()),
                format!("data row {line}"),
            ));
        }
        let date = parse_date(&record[0])
            .ok_or_else(|| Error::invalid_at(format!("bad date {:?}", &record[0]), format!("data row {line}")))?;
        let mut row = Vec::with_capacity(names.len());
        for (c, field) in record.iter().skip(1).enumerate() {
            let field = field.trim();
            let v: f64 = field.parse().map_err(|_| {
                let what = if field.is_empty() { "missing value".to_string() } else { format!("unparseable number {field:?}") };
                Error::invalid_at(what, format!("data row {line} (date {date}), column {}", names[c]))
            })?;
            if !v.is_finite() {
                return Err(Error::invalid_at(
                    format!("non-finite value {field:?}"),
                    format!("data row {line} (date {date}), column {}", names[c]),
                ));
            }
            row.push(v);
        }
        dates.push(date);
        rows.push(row);
    }
    Ok(Grid { names, dates, rows })
}

fn write_grid<W: Write>(
    mut writer: W,
    names: &[String],
    dates: &[NaiveDate],
    values: &Array2<f64>,
    metadata: Option<&str>,
) -> Result<()> {
    if let Some(meta) = metadata {
        writeln!(writer, "# {meta}").map_err(|e| Error::io(Path::new("<writer>"), e))?;
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["date".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (c, d) in dates.iter().enumerate() {
        let mut rec = vec![format_date(*d)];
        rec.extend(values.column(c).iter().map(|&v| format_f64(v)));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(Path::new("<writer>"), e))?;
    Ok(())
}

fn check_unique(names: &[String], what: &str) -> Result<()> {
    let mut seen = HashSet::new();
    for n in names {
        if !seen.insert(n.as_str()) {
            return Err(Error::invalid(format!("duplicate {what} name {n:?}")));
        }
    }
    Ok(())
}

fn check_increasing(dates: &[NaiveDate]) -> Result<()> {
    for (i, w) in dates.windows(2).enumerate() {
        if w[0] >= w[1] {
            return Err(Error::invalid_at(
                format!("dates must be strictly increasing ({} then {})", w[0], w[1]),
                format!("positions {} and {}", i, i + 1),
            ));
        }
    }
    Ok(())
}

/// Consecutive calendar days starting at `start`.
pub fn daily_dates(start: NaiveDate, count: usize) -> Vec<NaiveDate> {
    start.iter_days().take(count).collect()
}
