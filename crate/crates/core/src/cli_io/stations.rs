//! Station tables: annual maxima (or daily values aggregated to annual
//! maxima) in a long CSV format, one row per station and year.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::config::{Covariate, MarginConfig};
use crate::error::{Error, Result};
use crate::inference::Dataset;
use crate::kernel::Point;
use crate::margins::MarginalDesign;
use crate::simulate::SimulatedDataset;

/// Header of an annual-maxima file.
pub const STATION_HEADER: [&str; 6] = ["station_id", "lon", "lat", "elev", "year", "value"];
/// Header of a daily file; `day` is the day within the season.
pub const DAILY_HEADER: [&str; 7] = ["station_id", "lon", "lat", "elev", "year", "day", "value"];

/// First year assigned to simulated replicates.
pub const SIMULATED_FIRST_YEAR: i64 = 1;

/// Which station-years of daily data are complete enough to keep: the
/// non-missing fraction must exceed `lower` (or equal it when
/// `lower_inclusive`) and not exceed `upper`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletenessRule {
    pub lower: f64,
    pub lower_inclusive: bool,
    pub upper: f64,
    /// Days per season; when absent, the rows listed for the station-year.
    pub season_days: Option<u32>,
}

impl CompletenessRule {
    /// At least two thirds of the days observed.
    pub fn two_thirds() -> Self {
        Self { lower: 2.0 / 3.0, lower_inclusive: true, upper: 1.0, season_days: None }
    }

    /// At least 90% observed, for training stations.
    pub fn training() -> Self {
        Self { lower: 0.9, lower_inclusive: true, upper: 1.0, season_days: None }
    }

    /// More than 85% and at most 90% observed, for holdout stations.
    pub fn holdout() -> Self {
        Self { lower: 0.85, lower_inclusive: false, upper: 0.9, season_days: None }
    }

    pub fn accepts(&self, fraction: f64) -> bool {
        let above = if self.lower_inclusive { fraction >= self.lower } else { fraction > self.lower };
        above && fraction <= self.upper
    }
}

/// Station metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub id: String,
    pub lon: f64,
    pub lat: f64,
    pub elev: f64,
}

/// Stations × years of annual maxima, `NaN` where missing.
#[derive(Clone, Debug, PartialEq)]
pub struct StationTable {
    pub stations: Vec<Station>,
    pub years: Vec<i64>,
    pub y: DMatrix<f64>,
}

/// What ingestion kept and dropped.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct IngestReport {
    pub rows: usize,
    pub daily: bool,
    pub stations_kept: usize,
    pub stations_dropped: Vec<String>,
    /// Station-years masked by the completeness rule.
    pub masked_by_rule: usize,
    /// Stations by missing fraction of their years, in tenths `[0, 0.1), …, [0.9, 1]`.
    pub missing_histogram: [usize; 10],
    /// Non-missing fraction of each station's daily record (daily input only).
    pub station_completeness: BTreeMap<String, f64>,
}

struct Row {
    line: u64,
    station: Station,
    year: i64,
    day: Option<i64>,
    value: Option<f64>,
}

fn field<'a>(rec: &'a csv::StringRecord, i: usize, line: u64) -> Result<&'a str> {
    rec.get(i).ok_or_else(|| Error::Ingest(format!("row {line}: missing column {}", i + 1)))
}

fn number(s: &str, what: &str, line: u64) -> Result<f64> {
    let v: f64 = s.trim().parse().map_err(|_| Error::Ingest(format!("row {line}: {what} {s:?} is not a number")))?;
    if !v.is_finite() {
        return Err(Error::Ingest(format!("row {line}: {what} must be finite")));
    }
    Ok(v)
}

fn integer(s: &str, what: &str, line: u64) -> Result<i64> {
    s.trim().parse().map_err(|_| Error::Ingest(format!("row {line}: {what} {s:?} is not an integer")))
}

fn read_rows(path: &Path) -> Result<(Vec<Row>, bool)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let daily = if header == STATION_HEADER {
        false
    } else if header == DAILY_HEADER {
        true
    } else {
        return Err(Error::Ingest(format!(
            "header must be exactly {} (or {} for daily values), found {}",
            STATION_HEADER.join(","),
            DAILY_HEADER.join(","),
            header.join(",")
        )));
    };
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(Error::Ingest(format!("row {line}: expected {} fields, found {}", header.len(), rec.len())));
        }
        let id = field(&rec, 0, line)?.to_string();
        if id.is_empty() {
            return Err(Error::Ingest(format!("row {line}: empty station_id")));
        }
        let station = Station {
            id,
            lon: number(field(&rec, 1, line)?, "lon", line)?,
            lat: number(field(&rec, 2, line)?, "lat", line)?,
            elev: number(field(&rec, 3, line)?, "elev", line)?,
        };
        let year = integer(field(&rec, 4, line)?, "year", line)?;
        let day = if daily { Some(integer(field(&rec, 5, line)?, "day", line)?) } else { None };
        let raw = field(&rec, header.len() - 1, line)?;
        let value = if raw.trim().is_empty() { None } else { Some(number(raw, "value", line)?) };
        rows.push(Row { line, station, year, day, value });
    }
    Ok((rows, daily))
}

/// Reads a station file. Annual maxima pass through unchanged; daily values
/// are reduced to seasonal maxima, masking station-years that fail `rule`.
/// Stations without any retained year are dropped.
pub fn ingest_stations(path: &Path, rule: &CompletenessRule) -> Result<(StationTable, IngestReport)> {
    let (rows, daily) = read_rows(path)?;
    let mut report = IngestReport { rows: rows.len(), daily, ..Default::default() };
    let mut meta: BTreeMap<String, (Station, u64)> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    // (station, year) -> (first row, values)
    let mut cells: BTreeMap<(String, i64), (u64, Vec<Option<f64>>)> = BTreeMap::new();
    let mut days: BTreeMap<(String, i64, i64), u64> = BTreeMap::new();
    for r in &rows {
        match meta.get(&r.station.id) {
            Some((s, first)) if *s != r.station => {
                return Err(Error::Ingest(format!(
                    "rows {first} and {}: station {} has inconsistent coordinates or elevation",
                    r.line, r.station.id
                )));
            }
            Some(_) => {}
            None => {
                meta.insert(r.station.id.clone(), (r.station.clone(), r.line));
                order.push(r.station.id.clone());
            }
        }
        let key = (r.station.id.clone(), r.year);
        if let Some(d) = r.day {
            if let Some(first) = days.insert((key.0.clone(), key.1, d), r.line) {
                return Err(Error::Ingest(format!("rows {first} and {}: duplicate station {} year {} day {d}", r.line, key.0, key.1)));
            }
        } else if let Some((first, _)) = cells.get(&key) {
            return Err(Error::Ingest(format!("rows {first} and {}: duplicate station {} year {}", r.line, key.0, key.1)));
        }
        cells.entry(key).or_insert_with(|| (r.line, Vec::new())).1.push(r.value);
    }
    let years: Vec<i64> = cells.keys().map(|k| k.1).collect::<BTreeSet<_>>().into_iter().collect();
    let col: BTreeMap<i64, usize> = years.iter().enumerate().map(|(t, &y)| (y, t)).collect();
    let mut kept = Vec::new();
    let mut y_rows: Vec<Vec<f64>> = Vec::new();
    for id in &order {
        let mut row = vec![f64::NAN; years.len()];
        let (mut seen, mut due) = (0usize, 0usize);
        for (&yr, &t) in &col {
            let Some((_, vals)) = cells.get(&(id.clone(), yr)) else { continue };
            if daily {
                let observed = vals.iter().filter(|v| v.is_some()).count();
                let expected = rule.season_days.map_or(vals.len(), |d| d as usize).max(1);
                seen += observed;
                due += expected;
                if !rule.accepts(observed as f64 / expected as f64) {
                    report.masked_by_rule += 1;
                    continue;
                }
                row[t] = vals.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
            } else if let Some(v) = vals[0] {
                row[t] = v;
            }
        }
        if daily {
            report.station_completeness.insert(id.clone(), seen as f64 / due.max(1) as f64);
        }
        let present = row.iter().filter(|v| !v.is_nan()).count();
        if present == 0 {
            report.stations_dropped.push(id.clone());
            continue;
        }
        let frac = 1.0 - present as f64 / years.len() as f64;
        report.missing_histogram[((frac * 10.0) as usize).min(9)] += 1;
        kept.push(meta[id].0.clone());
        y_rows.push(row);
    }
    report.stations_kept = kept.len();
    if kept.is_empty() {
        return Err(Error::Ingest("no station has any retained year".into()));
    }
    let y = DMatrix::from_fn(kept.len(), years.len(), |j, t| y_rows[j][t]);
    Ok((StationTable { stations: kept, years, y }, report))
}

impl StationTable {
    /// Simulated replicates as consecutive years of synthetic stations.
    pub fn from_simulation(sim: &SimulatedDataset) -> Self {
        let stations = sim
            .truth
            .sites
            .iter()
            .enumerate()
            .map(|(j, p)| Station { id: format!("s{:05}", j + 1), lon: p[0], lat: p[1], elev: 0.0 })
            .collect();
        let years = (0..sim.y.ncols() as i64).map(|t| SIMULATED_FIRST_YEAR + t).collect();
        Self { stations, years, y: sim.y.clone() }
    }

    pub fn n_stations(&self) -> usize {
        self.stations.len()
    }

    pub fn sites(&self) -> Vec<Point> {
        self.stations.iter().map(|s| [s.lon, s.lat]).collect()
    }

    /// Writes every station-year, with empty values where missing.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
        w.write_record(STATION_HEADER)?;
        for (j, s) in self.stations.iter().enumerate() {
            for (t, yr) in self.years.iter().enumerate() {
                let v = self.y[(j, t)];
                let value = if v.is_nan() { String::new() } else { v.to_string() };
                w.write_record([s.id.clone(), s.lon.to_string(), s.lat.to_string(), s.elev.to_string(), yr.to_string(), value])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Stations whose daily record satisfies `rule`; annual-maxima input
    /// (no completeness recorded) keeps every station.
    pub fn select_complete(&self, report: &IngestReport, rule: &CompletenessRule) -> Result<Self> {
        if !report.daily {
            return Ok(self.clone());
        }
        let keep: Vec<usize> =
            (0..self.n_stations()).filter(|&j| report.station_completeness.get(&self.stations[j].id).is_some_and(|f| rule.accepts(*f))).collect();
        if keep.is_empty() {
            return Err(Error::Ingest("no station meets the completeness rule".into()));
        }
        Ok(Self { stations: keep.iter().map(|&j| self.stations[j].clone()).collect(), years: self.years.clone(), y: self.y.select_rows(&keep) })
    }

    /// Restricts the columns to `years`, inserting missing years as empty.
    pub fn align_years(&self, years: &[i64]) -> Result<Self> {
        if let Some(y) = self.years.iter().find(|y| !years.contains(y)) {
            return Err(Error::Ingest(format!("year {y} is not among the reference years")));
        }
        let y = DMatrix::from_fn(self.n_stations(), years.len(), |j, t| match self.years.iter().position(|v| *v == years[t]) {
            Some(c) => self.y[(j, c)],
            None => f64::NAN,
        });
        Ok(Self { stations: self.stations.clone(), years: years.to_vec(), y })
    }

    /// Marginal design: intercept plus the requested covariates, and the
    /// time covariate in decades since the first year.
    pub fn design(&self, cfg: &MarginConfig) -> MarginalDesign {
        let d = self.n_stations();
        let p = 1 + cfg.covariates.len();
        let x = DMatrix::from_fn(d, p, |j, c| {
            if c == 0 {
                return 1.0;
            }
            let s = &self.stations[j];
            match cfg.covariates[c - 1] {
                Covariate::Lon => s.lon,
                Covariate::Lat => s.lat,
                Covariate::Elev => s.elev,
            }
        });
        let y0 = self.years[0];
        MarginalDesign {
            mu0: x.clone(),
            mu1: if cfg.trend { x.clone() } else { DMatrix::zeros(d, 0) },
            log_sigma: x.clone(),
            xi: x,
            time: self.years.iter().map(|y| (y - y0) as f64 / 10.0).collect(),
        }
    }

    pub fn dataset(&self, cfg: &MarginConfig) -> Result<Dataset> {
        Dataset::new(self.sites(), self.y.clone(), self.design(cfg))
    }
}
