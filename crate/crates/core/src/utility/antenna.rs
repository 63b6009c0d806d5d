//! Antenna positions estimated from the measurements that observed them.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::geo::{haversine, GeoPoint};
use crate::trace::Measurement;

use super::stats::{summarize, Summary};

pub const ANTENNA_KEY: &str = "antenna_id";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AntennaEstimate {
    pub antenna_id: String,
    pub point: GeoPoint,
    pub count: usize,
}

/// Arithmetic mean of latitudes and longitudes per antenna id, sorted by
/// id. Measurements without an id are skipped.
pub fn locate_antennas<'a, I>(measurements: I) -> Vec<AntennaEstimate>
where
    I: IntoIterator<Item = &'a Measurement>,
{
    let mut groups: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for m in measurements {
        if let Some(id) = m.extras.get(ANTENNA_KEY).filter(|s| !s.is_empty()) {
            groups.entry(id.as_str()).or_default().push((m.point.lat(), m.point.lon()));
        }
    }
    groups
        .into_iter()
        .map(|(id, mut pts)| {
            pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
            let n = pts.len() as f64;
            let lat = pts.iter().map(|p| p.0).sum::<f64>() / n;
            let lon = pts.iter().map(|p| p.1).sum::<f64>() / n;
            AntennaEstimate {
                antenna_id: id.to_string(),
                point: GeoPoint::new(lat.clamp(-90.0, 90.0), lon.clamp(-180.0, 180.0))
                    .expect("mean of valid coordinates"),
                count: pts.len(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AntennaError {
    /// `(antenna_id, meters)` for ids present in both passes.
    pub errors: Vec<(String, f64)>,
    /// Ids present before but missing after.
    pub lost: usize,
    pub summary: Option<Summary>,
}

pub fn antenna_error(before: &[AntennaEstimate], after: &[AntennaEstimate]) -> AntennaError {
    let after_by_id: BTreeMap<&str, &AntennaEstimate> = after.iter().map(|a| (a.antenna_id.as_str(), a)).collect();
    let mut errors = Vec::new();
    let mut lost = 0;
    for b in before {
        match after_by_id.get(b.antenna_id.as_str()) {
            Some(a) => errors.push((b.antenna_id.clone(), haversine(b.point, a.point))),
            None => lost += 1,
        }
    }
    let d: Vec<f64> = errors.iter().map(|e| e.1).collect();
    AntennaError {
        summary: summarize(&d),
        errors,
        lost,
    }
}
