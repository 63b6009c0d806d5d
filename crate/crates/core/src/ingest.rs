//! CSV ingestion for radiation (Safecast-style) and cell-signal
//! (Radiocells-style) logs, pseudo-user derivation and consistency filters.
//!
//! Safecast columns (header required, any order, extra columns are kept in
//! `extras`):
//!
//! ```text
//! user_id,device_id,captured_at,latitude,longitude,value,unit
//! ```
//!
//! Radiocells columns:
//!
//! ```text
//! manufacturer,model,country,operator,captured_at,latitude,longitude,value[,unit][,antenna_id]
//! ```
//!
//! `captured_at` is UTC, either integer Unix seconds, RFC 3339, or
//! `YYYY-MM-DD HH:MM:SS`.

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Read, Write};

use crate::error::{Error, Result};
use crate::geo::{haversine, GeoPoint};
use crate::trace::{Measurement, UserTrace, UtcOffset};

pub const SAFECAST_COLUMNS: [&str; 7] = [
    "user_id",
    "device_id",
    "captured_at",
    "latitude",
    "longitude",
    "value",
    "unit",
];

pub const QUASI_ID_COLUMNS: [&str; 4] = ["manufacturer", "model", "country", "operator"];

/// Default minimum trace length; users need strictly more than this.
pub const MIN_POINTS: usize = 100;
pub const MAX_SPEED_KMH: f64 = 200.0;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParseReport {
    pub rows_total: usize,
    pub malformed_rows: usize,
    pub excluded_rows: usize,
}

#[derive(Debug, Clone)]
pub struct Parsed<T> {
    pub items: T,
    pub report: ParseReport,
}

pub fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(secs) = s.parse::<i64>() {
        return Some(secs);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S")
        .ok()
        .map(|dt| dt.and_utc().timestamp())
}

pub fn format_timestamp(t: i64) -> String {
    match DateTime::from_timestamp(t, 0) {
        Some(dt) => dt.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
        None => t.to_string(),
    }
}

struct Columns {
    index: BTreeMap<String, usize>,
    headers: Vec<String>,
}

impl Columns {
    fn new(headers: &csv::StringRecord, required: &[&str]) -> Result<Self> {
        let headers: Vec<String> = headers.iter().map(|h| h.trim().to_string()).collect();
        let index: BTreeMap<String, usize> = headers
            .iter()
            .enumerate()
            .map(|(i, h)| (h.clone(), i))
            .collect();
        for col in required {
            if !index.contains_key(*col) {
                return Err(Error::Malformed(format!("missing column `{col}`")));
            }
        }
        Ok(Self { index, headers })
    }

    fn get<'r>(&self, rec: &'r csv::StringRecord, name: &str) -> Option<&'r str> {
        self.index.get(name).and_then(|&i| rec.get(i)).map(str::trim)
    }

    fn extras(&self, rec: &csv::StringRecord, known: &[&str]) -> BTreeMap<String, String> {
        self.headers
            .iter()
            .enumerate()
            .filter(|(_, h)| !known.contains(&h.as_str()))
            .filter_map(|(i, h)| {
                rec.get(i)
                    .map(str::trim)
                    .filter(|v| !v.is_empty())
                    .map(|v| (h.clone(), v.to_string()))
            })
            .collect()
    }
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input)
}

/// Reads records, counting rows that fail to decode. I/O errors are fatal.
fn for_each_record<R: Read>(
    rdr: &mut csv::Reader<R>,
    report: &mut ParseReport,
    mut f: impl FnMut(&csv::StringRecord) -> bool,
) -> Result<()> {
    for rec in rdr.records() {
        report.rows_total += 1;
        match rec {
            Ok(rec) => {
                if !f(&rec) {
                    report.malformed_rows += 1;
                }
            }
            Err(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => return Err(e.into()),
            Err(_) => report.malformed_rows += 1,
        }
    }
    Ok(())
}

fn parse_point(lat: Option<&str>, lon: Option<&str>) -> Option<GeoPoint> {
    let lat = lat?.parse::<f64>().ok()?;
    let lon = lon?.parse::<f64>().ok()?;
    GeoPoint::new(lat, lon).ok()
}

fn parse_finite(s: Option<&str>) -> Option<f64> {
    s?.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn group_traces(measurements: Vec<Measurement>, offset: UtcOffset) -> Vec<UserTrace> {
    let mut by_user: BTreeMap<String, Vec<Measurement>> = BTreeMap::new();
    for m in measurements {
        by_user.entry(m.user_id.clone()).or_default().push(m);
    }
    by_user
        .into_iter()
        .map(|(user, ms)| UserTrace::new(user, offset, ms))
        .collect()
}

/// Parses a Safecast-style CSV into per-user traces, dropping malformed rows
/// and rows whose user is in `exclude`.
pub fn parse_safecast<R: Read>(
    input: R,
    tz_offset_hours: f64,
    exclude: &BTreeSet<String>,
) -> Result<Parsed<Vec<UserTrace>>> {
    let mut rdr = reader(input);
    let cols = Columns::new(rdr.headers()?, &["user_id", "captured_at", "latitude", "longitude", "value"])?;
    let mut report = ParseReport::default();
    let mut measurements = Vec::new();
    let mut excluded = 0usize;
    for_each_record(&mut rdr, &mut report, |rec| {
        let Some(m) = safecast_row(&cols, rec) else {
            return false;
        };
        if exclude.contains(&m.user_id) {
            excluded += 1;
        } else {
            measurements.push(m);
        }
        true
    })?;
    report.excluded_rows = excluded;
    Ok(Parsed {
        items: group_traces(measurements, UtcOffset::from_hours(tz_offset_hours)),
        report,
    })
}

fn safecast_row(cols: &Columns, rec: &csv::StringRecord) -> Option<Measurement> {
    let user_id = cols.get(rec, "user_id").filter(|s| !s.is_empty())?.to_string();
    let t = parse_timestamp(cols.get(rec, "captured_at")?)?;
    let point = parse_point(cols.get(rec, "latitude"), cols.get(rec, "longitude"))?;
    let value = parse_finite(cols.get(rec, "value"))?;
    Some(Measurement {
        user_id,
        device_id: cols
            .get(rec, "device_id")
            .filter(|s| !s.is_empty())
            .map(str::to_string),
        t,
        point,
        value,
        unit: cols.get(rec, "unit").unwrap_or("cpm").to_string(),
        extras: cols.extras(rec, &SAFECAST_COLUMNS),
    })
}

/// Writes traces in the Safecast schema. Extra keys become additional
/// columns (union over all measurements, sorted).
pub fn write_safecast<W: Write>(out: W, traces: &[UserTrace]) -> Result<()> {
    let extra_keys: BTreeSet<&str> = traces
        .iter()
        .flat_map(|t| t.measurements.iter())
        .flat_map(|m| m.extras.keys().map(String::as_str))
        .collect();
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = SAFECAST_COLUMNS.to_vec();
    header.extend(extra_keys.iter().copied());
    w.write_record(&header)?;
    for trace in traces {
        for m in &trace.measurements {
            let mut row = vec![
                m.user_id.clone(),
                m.device_id.clone().unwrap_or_default(),
                format_timestamp(m.t),
                m.point.lat().to_string(),
                m.point.lon().to_string(),
                m.value.to_string(),
                m.unit.clone(),
            ];
            for k in &extra_keys {
                row.push(m.extras.get(*k).cloned().unwrap_or_default());
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Phone attributes that jointly stand in for a user identity.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct QuasiId {
    pub manufacturer: String,
    pub model: String,
    pub country: String,
    pub operator: String,
}

impl QuasiId {
    pub fn new(manufacturer: &str, model: &str, country: &str, operator: &str) -> Option<Self> {
        let fields = [manufacturer, model, country, operator];
        if fields.iter().any(|f| f.trim().is_empty()) {
            return None;
        }
        Some(Self {
            manufacturer: manufacturer.trim().to_string(),
            model: model.trim().to_string(),
            country: country.trim().to_string(),
            operator: operator.trim().to_string(),
        })
    }

    /// Canonical user id, the four fields joined by `|`.
    pub fn user_id(&self) -> String {
        format!("{}|{}|{}|{}", self.manufacturer, self.model, self.country, self.operator)
    }
}

/// A cell-signal record before pseudo-user assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct RadiocellsRecord {
    pub manufacturer: String,
    pub model: String,
    pub country: String,
    pub operator: String,
    pub t: i64,
    pub point: GeoPoint,
    pub value: f64,
    pub unit: String,
    pub extras: BTreeMap<String, String>,
}

impl RadiocellsRecord {
    pub fn quasi_id(&self) -> Option<QuasiId> {
        QuasiId::new(&self.manufacturer, &self.model, &self.country, &self.operator)
    }
}

/// Parses a Radiocells-style CSV. Rows with bad coordinates, time or value
/// are malformed; missing quasi-identifier fields are left for
/// [`derive_radiocells_users`] to tally.
pub fn parse_radiocells<R: Read>(input: R) -> Result<Parsed<Vec<RadiocellsRecord>>> {
    let mut rdr = reader(input);
    let mut required: Vec<&str> = QUASI_ID_COLUMNS.to_vec();
    required.extend(["captured_at", "latitude", "longitude", "value"]);
    let cols = Columns::new(rdr.headers()?, &required)?;
    let mut known: Vec<&str> = required.clone();
    known.push("unit");
    let mut report = ParseReport::default();
    let mut records = Vec::new();
    for_each_record(&mut rdr, &mut report, |rec| {
        let row = (|| {
            Some(RadiocellsRecord {
                manufacturer: cols.get(rec, "manufacturer").unwrap_or("").to_string(),
                model: cols.get(rec, "model").unwrap_or("").to_string(),
                country: cols.get(rec, "country").unwrap_or("").to_string(),
                operator: cols.get(rec, "operator").unwrap_or("").to_string(),
                t: parse_timestamp(cols.get(rec, "captured_at")?)?,
                point: parse_point(cols.get(rec, "latitude"), cols.get(rec, "longitude"))?,
                value: parse_finite(cols.get(rec, "value"))?,
                unit: cols.get(rec, "unit").unwrap_or("dBm").to_string(),
                extras: cols.extras(rec, &known),
            })
        })();
        match row {
            Some(r) => {
                records.push(r);
                true
            }
            None => false,
        }
    })?;
    Ok(Parsed { items: records, report })
}

/// Groups records into one trace per distinct quasi-identifier.
pub fn derive_radiocells_users(
    records: Vec<RadiocellsRecord>,
    offset: UtcOffset,
) -> Parsed<Vec<UserTrace>> {
    let mut report = ParseReport {
        rows_total: records.len(),
        ..Default::default()
    };
    let mut by_user: BTreeMap<QuasiId, Vec<Measurement>> = BTreeMap::new();
    for r in records {
        let Some(qid) = r.quasi_id() else {
            report.malformed_rows += 1;
            continue;
        };
        let m = Measurement {
            user_id: qid.user_id(),
            device_id: None,
            t: r.t,
            point: r.point,
            value: r.value,
            unit: r.unit,
            extras: r.extras,
        };
        by_user.entry(qid).or_default().push(m);
    }
    let traces = by_user
        .into_iter()
        .map(|(qid, ms)| UserTrace::new(qid.user_id(), offset, ms))
        .collect();
    Parsed { items: traces, report }
}

/// Reads a user exclusion list: one id per line, blank lines and `#`
/// comments ignored.
pub fn read_exclusion_list<R: BufRead>(input: R) -> Result<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    for line in input.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        out.insert(line.to_string());
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub users_in: usize,
    pub dropped_too_few: usize,
    pub dropped_speed: usize,
}

/// True if two consecutive measurements imply a speed above `max_speed_kmh`.
/// Zero elapsed time with non-zero displacement counts as a violation.
pub fn has_speed_violation(trace: &UserTrace, max_speed_kmh: f64) -> bool {
    let max_mps = max_speed_kmh / 3.6;
    trace.measurements.windows(2).any(|w| {
        let d = haversine(w[0].point, w[1].point);
        let dt = (w[1].t - w[0].t) as f64;
        if dt <= 0.0 {
            d > 0.0
        } else {
            d / dt > max_mps
        }
    })
}

/// Keeps users with strictly more than `min_points` measurements and no
/// speed inconsistency.
pub fn filter_users(
    traces: Vec<UserTrace>,
    min_points: usize,
    max_speed_kmh: f64,
) -> (Vec<UserTrace>, FilterReport) {
    let mut report = FilterReport {
        users_in: traces.len(),
        ..Default::default()
    };
    let kept = traces
        .into_iter()
        .filter(|t| {
            if t.len() <= min_points {
                report.dropped_too_few += 1;
                false
            } else if has_speed_violation(t, max_speed_kmh) {
                report.dropped_speed += 1;
                false
            } else {
                true
            }
        })
        .collect();
    (kept, report)
}
