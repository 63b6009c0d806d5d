//! Utility of protected data for the crowdsensing application: location
//! error, radiation maps, hotspots and antenna positions.

pub mod antenna;
pub mod grid_io;
pub mod radiation;
pub mod stats;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{haversine, GeoPoint};
use crate::lppm::Protected;
use crate::trace::UserTrace;

pub use antenna::{antenna_error, locate_antennas, AntennaError, AntennaEstimate};
pub use radiation::{
    average_recent, build_radiation_map, categorize, detect_hotspots, map_diff, transition_matrix, AveragedPoint,
    DangerCategory, MapDiff, RadiationGrid, TransitionMatrix, DEFAULT_RESOLUTION, HOTSPOT_CPM, WINDOW_DAYS,
};
pub use stats::{summarize, Summary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub name: String,
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    #[serde(default)]
    pub utc_offset_hours: f64,
}

impl RegionSpec {
    pub fn new(name: &str, lat_min: f64, lat_max: f64, lon_min: f64, lon_max: f64) -> Result<Self> {
        let r = Self {
            name: name.to_string(),
            lat_min,
            lat_max,
            lon_min,
            lon_max,
            utc_offset_hours: 0.0,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lat_min < self.lat_max
            && self.lon_min < self.lon_max
            && (-90.0..=90.0).contains(&self.lat_min)
            && (-90.0..=90.0).contains(&self.lat_max)
            && (-180.0..=180.0).contains(&self.lon_min)
            && (-180.0..=180.0).contains(&self.lon_max);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("region {:?} has an invalid bounding box", self.name)))
        }
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        (self.lat_min..=self.lat_max).contains(&p.lat()) && (self.lon_min..=self.lon_max).contains(&p.lon())
    }

    pub fn center(&self) -> Result<GeoPoint> {
        GeoPoint::new((self.lat_min + self.lat_max) / 2.0, (self.lon_min + self.lon_max) / 2.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceStats {
    /// Distance per released measurement, in output order.
    pub distances: Vec<f64>,
    pub hidden: usize,
    pub summary: Option<Summary>,
}

/// Distance between each released location and the original location of
/// the same measurement.
pub fn haversine_error_stats(original: &UserTrace, protected: &Protected) -> Result<DistanceStats> {
    if protected.source_index.len() != protected.trace.len() {
        return Err(Error::Misaligned("protected trace lacks an alignment map".into()));
    }
    let mut distances = Vec::with_capacity(protected.trace.len());
    for (m, &i) in protected.trace.measurements.iter().zip(&protected.source_index) {
        let o = original
            .measurements
            .get(i)
            .ok_or_else(|| Error::Misaligned(format!("source index {i} out of range")))?;
        distances.push(haversine(o.point, m.point));
    }
    let hidden = original
        .len()
        .checked_sub(distances.len())
        .ok_or_else(|| Error::Misaligned("more released points than originals".into()))?;
    let summary = summarize(&distances);
    Ok(DistanceStats {
        distances,
        hidden,
        summary,
    })
}
