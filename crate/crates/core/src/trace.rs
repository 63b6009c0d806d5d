//! Measurement records and per-user traces.

use chrono::{DateTime, Datelike, Timelike, Weekday};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::geo::GeoPoint;

pub const SECONDS_PER_DAY: i64 = 86_400;

/// One geo-located sensor reading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub user_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device_id: Option<String>,
    /// UTC seconds since the Unix epoch.
    pub t: i64,
    pub point: GeoPoint,
    pub value: f64,
    pub unit: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extras: BTreeMap<String, String>,
}

impl Measurement {
    pub fn with_point(&self, point: GeoPoint) -> Self {
        Self { point, ..self.clone() }
    }
}

/// Fixed offset between UTC and the local civil time of a region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct UtcOffset {
    pub seconds: i32,
}

impl UtcOffset {
    pub fn from_hours(hours: f64) -> Self {
        Self { seconds: (hours * 3600.0).round() as i32 }
    }

    pub fn local_seconds(&self, utc: i64) -> i64 {
        utc + self.seconds as i64
    }

    /// Index of the local calendar day containing `utc`.
    pub fn local_day(&self, utc: i64) -> i64 {
        self.local_seconds(utc).div_euclid(SECONDS_PER_DAY)
    }

    pub fn local_datetime(&self, utc: i64) -> Option<DateTime<chrono::Utc>> {
        DateTime::from_timestamp(self.local_seconds(utc), 0)
    }
}

/// Time-ordered measurements of a single user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserTrace {
    pub user_id: String,
    #[serde(default)]
    pub utc_offset: UtcOffset,
    pub measurements: Vec<Measurement>,
}

impl UserTrace {
    /// Builds a trace, sorting by time. Equal timestamps keep input order.
    pub fn new(user_id: impl Into<String>, utc_offset: UtcOffset, mut measurements: Vec<Measurement>) -> Self {
        measurements.sort_by_key(|m| m.t);
        Self {
            user_id: user_id.into(),
            utc_offset,
            measurements,
        }
    }

    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }

    pub fn points(&self) -> Vec<GeoPoint> {
        self.measurements.iter().map(|m| m.point).collect()
    }

    pub fn is_time_sorted(&self) -> bool {
        self.measurements.windows(2).all(|w| w[0].t <= w[1].t)
    }

    /// Same user and offset, different measurements.
    pub fn with_measurements(&self, measurements: Vec<Measurement>) -> Self {
        Self {
            user_id: self.user_id.clone(),
            utc_offset: self.utc_offset,
            measurements,
        }
    }

    /// Measurements taken Monday to Friday, local time in [09:00, 17:00).
    pub fn work_hours(&self) -> Self {
        let kept = self
            .measurements
            .iter()
            .filter(|m| is_work_hour(self.utc_offset, m.t))
            .cloned()
            .collect();
        self.with_measurements(kept)
    }
}

pub fn is_work_hour(offset: UtcOffset, utc: i64) -> bool {
    let Some(local) = offset.local_datetime(utc) else {
        return false;
    };
    let weekday = local.weekday();
    if matches!(weekday, Weekday::Sat | Weekday::Sun) {
        return false;
    }
    let secs = local.num_seconds_from_midnight();
    (9 * 3600..17 * 3600).contains(&secs)
}

/// Restricts a trace to working hours; see [`UserTrace::work_hours`].
pub fn split_work_hours(trace: &UserTrace) -> UserTrace {
    trace.work_hours()
}
