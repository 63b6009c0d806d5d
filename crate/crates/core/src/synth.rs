//! Deterministic synthetic users: daily visits to a few anchor places,
//! with measurement values drawn from a spatial field.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geo::{haversine, GeoPoint};
use crate::seed::{derive_seed, rng_from_seed};
use crate::trace::{Measurement, UserTrace, UtcOffset, SECONDS_PER_DAY};
use crate::utility::RegionSpec;

/// Jitter is a 2-D Gaussian truncated at this many sigmas.
pub const JITTER_CAP_SIGMAS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ValueField {
    Constant { cpm: f64 },
    Bump { center: GeoPoint, peak: f64, sigma_m: f64, background: f64 },
}

impl ValueField {
    pub fn value_at(&self, p: GeoPoint) -> f64 {
        match *self {
            ValueField::Constant { cpm } => cpm,
            ValueField::Bump {
                center,
                peak,
                sigma_m,
                background,
            } => {
                let d = haversine(center, p);
                background + (peak - background) * (-(d * d) / (2.0 * sigma_m * sigma_m)).exp()
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            ValueField::Constant { cpm } => cpm.is_finite(),
            ValueField::Bump { peak, sigma_m, background, .. } => {
                peak.is_finite() && background.is_finite() && sigma_m.is_finite() && sigma_m > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter("invalid value field".into()))
        }
    }
}

/// When and how a place is visited.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitSchedule {
    pub name: String,
    /// Local hour the daily visit starts.
    pub start_hour: f64,
    pub dwell_min: f64,
    pub points_per_visit: usize,
    #[serde(default)]
    pub weekdays_only: bool,
}

impl VisitSchedule {
    pub fn new(name: &str, start_hour: f64, dwell_min: f64, points_per_visit: usize) -> Self {
        Self {
            name: name.to_string(),
            start_hour,
            dwell_min,
            points_per_visit,
            weekdays_only: false,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = (0.0..24.0).contains(&self.start_hour)
            && self.dwell_min.is_finite()
            && self.dwell_min > 0.0
            && self.points_per_visit > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid visit schedule {:?}", self.name)))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub point: GeoPoint,
    pub schedule: VisitSchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthProfile {
    pub user_id: String,
    pub anchors: Vec<Anchor>,
    pub jitter_m: f64,
    pub field: ValueField,
    pub days: u32,
    /// Start of day zero, UTC seconds. Visit hours are relative to it.
    pub start: i64,
    #[serde(default)]
    pub utc_offset_hours: f64,
    pub seed: u64,
}

impl SynthProfile {
    pub fn validate(&self) -> Result<()> {
        if self.anchors.is_empty() {
            return Err(Error::InvalidParameter("profile needs at least one anchor".into()));
        }
        if !(self.jitter_m.is_finite() && self.jitter_m >= 0.0) {
            return Err(Error::InvalidParameter("jitter must be non-negative".into()));
        }
        for a in &self.anchors {
            a.schedule.validate()?;
        }
        self.field.validate()
    }
}

fn jitter<R: Rng>(rng: &mut R, center: GeoPoint, sigma: f64) -> GeoPoint {
    if sigma == 0.0 {
        return center;
    }
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    loop {
        let dx: f64 = normal.sample(rng);
        let dy: f64 = normal.sample(rng);
        let r = dx.hypot(dy);
        if r <= JITTER_CAP_SIGMAS * sigma {
            return center.destination(r, dx.atan2(dy));
        }
    }
}

/// One measurement sequence per profile; identical profiles give identical
/// traces.
pub fn generate_trace(profile: &SynthProfile) -> Result<UserTrace> {
    profile.validate()?;
    let offset = UtcOffset::from_hours(profile.utc_offset_hours);
    let mut rng = rng_from_seed(derive_seed(profile.seed, &format!("synth/{}", profile.user_id)));
    let mut ms = Vec::new();
    for day in 0..profile.days as i64 {
        let midnight_utc = profile.start + day * SECONDS_PER_DAY;
        for a in &profile.anchors {
            let s = &a.schedule;
            let visit_start = midnight_utc + (s.start_hour * 3600.0).round() as i64;
            if s.weekdays_only {
                let weekday = (offset.local_day(visit_start) + 3).rem_euclid(7); // 0 = Monday
                if weekday >= 5 {
                    continue;
                }
            }
            let step = s.dwell_min * 60.0 / s.points_per_visit as f64;
            for k in 0..s.points_per_visit {
                let point = jitter(&mut rng, a.point, profile.jitter_m);
                ms.push(Measurement {
                    user_id: profile.user_id.clone(),
                    device_id: None,
                    t: visit_start + (k as f64 * step).round() as i64,
                    point,
                    value: profile.field.value_at(point),
                    unit: "cpm".into(),
                    extras: BTreeMap::new(),
                });
            }
        }
    }
    Ok(UserTrace::new(profile.user_id.clone(), offset, ms))
}

/// Cohort settings: every user gets the same schedules with anchor
/// positions drawn uniformly inside `region`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortTemplate {
    pub region: RegionSpec,
    pub schedules: Vec<VisitSchedule>,
    pub jitter_m: f64,
    pub field: ValueField,
    pub days: u32,
    pub start: i64,
    /// Anchors of one user are at least this far apart.
    #[serde(default)]
    pub min_anchor_separation_m: f64,
}

impl CohortTemplate {
    /// Home, work and an evening place inside a small region.
    pub fn default_city() -> Self {
        let region = RegionSpec::new("synthetic-city", 35.60, 35.75, 139.60, 139.80).expect("valid region");
        Self {
            schedules: vec![
                VisitSchedule::new("home", 19.0, 600.0, 40),
                VisitSchedule {
                    weekdays_only: true,
                    ..VisitSchedule::new("work", 9.0, 480.0, 30)
                },
                VisitSchedule::new("leisure", 17.5, 60.0, 8),
            ],
            jitter_m: 10.0,
            field: ValueField::Constant { cpm: 35.0 },
            days: 14,
            start: 1_600_000_000 - 1_600_000_000 % SECONDS_PER_DAY,
            min_anchor_separation_m: 500.0,
            region,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub user_id: String,
    /// `(schedule name, anchor)` in template order.
    pub anchors: Vec<(String, GeoPoint)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub traces: Vec<UserTrace>,
    pub truth: Vec<GroundTruth>,
}

pub fn user_id(i: usize) -> String {
    format!("synth-{i:04}")
}

fn draw_anchors(template: &CohortTemplate, seed: u64) -> Result<Vec<GeoPoint>> {
    let r = &template.region;
    let mut rng = rng_from_seed(seed);
    let mut out: Vec<GeoPoint> = Vec::new();
    let mut attempts = 0;
    while out.len() < template.schedules.len() {
        attempts += 1;
        if attempts > 10_000 {
            return Err(Error::InvalidParameter("region too small for the anchor separation".into()));
        }
        let p = GeoPoint::new(rng.random_range(r.lat_min..r.lat_max), rng.random_range(r.lon_min..r.lon_max))?;
        if out.iter().all(|q| haversine(*q, p) >= template.min_anchor_separation_m) {
            out.push(p);
        }
    }
    Ok(out)
}

pub fn generate_cohort(n: usize, template: &CohortTemplate, seed: u64) -> Result<Cohort> {
    if n == 0 {
        return Err(Error::InvalidParameter("cohort needs at least one user".into()));
    }
    template.region.validate()?;
    let users: Vec<(UserTrace, GroundTruth)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let id = user_id(i);
            let user_seed = derive_seed(seed, &format!("cohort/{id}"));
            let points = draw_anchors(template, derive_seed(user_seed, "anchors"))?;
            let anchors: Vec<Anchor> = points
                .iter()
                .zip(&template.schedules)
                .map(|(&point, s)| Anchor {
                    point,
                    schedule: s.clone(),
                })
                .collect();
            let profile = SynthProfile {
                user_id: id.clone(),
                anchors,
                jitter_m: template.jitter_m,
                field: template.field,
                days: template.days,
                start: template.start,
                utc_offset_hours: template.region.utc_offset_hours,
                seed: user_seed,
            };
            let trace = generate_trace(&profile)?;
            let truth = GroundTruth {
                user_id: id,
                anchors: template.schedules.iter().map(|s| s.name.clone()).zip(points).collect(),
            };
            Ok((trace, truth))
        })
        .collect::<Result<_>>()?;
    let (traces, truth) = users.into_iter().unzip();
    Ok(Cohort { traces, truth })
}
