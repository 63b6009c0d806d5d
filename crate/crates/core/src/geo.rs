//! Geographic primitives on a spherical Earth.
//!
//! Everything that needs meter-scale distances goes through this module:
//! great-circle distances, a local equirectangular frame for planar math,
//! Earth-centered Cartesian coordinates for spatial indexing, and decimal
//! rounding of coordinates.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Mean Earth radius in meters (IUGG).
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Meters spanned by one degree of latitude on the sphere.
pub const METERS_PER_DEG_LAT: f64 = EARTH_RADIUS_M * PI / 180.0;

/// A validated latitude/longitude pair in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPoint", into = "RawPoint")]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

#[derive(Serialize, Deserialize)]
struct RawPoint {
    lat: f64,
    lon: f64,
}

impl TryFrom<RawPoint> for GeoPoint {
    type Error = Error;
    fn try_from(raw: RawPoint) -> Result<Self> {
        GeoPoint::new(raw.lat, raw.lon)
    }
}

impl From<GeoPoint> for RawPoint {
    fn from(p: GeoPoint) -> Self {
        RawPoint { lat: p.lat, lon: p.lon }
    }
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(Error::InvalidCoordinate { lat, lon });
        }
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::InvalidCoordinate { lat, lon });
        }
        Ok(Self { lat, lon })
    }

    #[inline]
    pub fn lat(&self) -> f64 {
        self.lat
    }

    #[inline]
    pub fn lon(&self) -> f64 {
        self.lon
    }

    /// Point reached by travelling `distance_m` along the great circle
    /// leaving `self` with initial `bearing` (radians, clockwise from north).
    pub fn destination(&self, distance_m: f64, bearing: f64) -> GeoPoint {
        let delta = distance_m / EARTH_RADIUS_M;
        let phi1 = self.lat.to_radians();
        let lambda1 = self.lon.to_radians();
        let sin_phi2 = phi1.sin() * delta.cos() + phi1.cos() * delta.sin() * bearing.cos();
        let phi2 = sin_phi2.clamp(-1.0, 1.0).asin();
        let y = bearing.sin() * delta.sin() * phi1.cos();
        let x = delta.cos() - phi1.sin() * sin_phi2;
        let lambda2 = lambda1 + y.atan2(x);
        GeoPoint {
            lat: phi2.to_degrees().clamp(-90.0, 90.0),
            lon: wrap_lon(lambda2.to_degrees()),
        }
    }

    /// Total order on (lat, lon); used for deterministic tie-breaking.
    pub fn lexicographic_cmp(&self, other: &GeoPoint) -> Ordering {
        self.lat
            .total_cmp(&other.lat)
            .then_with(|| self.lon.total_cmp(&other.lon))
    }
}

fn wrap_lon(lon: f64) -> f64 {
    if (-180.0..=180.0).contains(&lon) {
        lon
    } else {
        let wrapped = (lon + 180.0).rem_euclid(360.0) - 180.0;
        if wrapped == -180.0 && lon > 0.0 {
            180.0
        } else {
            wrapped
        }
    }
}

/// Great-circle distance in meters.
pub fn haversine(a: GeoPoint, b: GeoPoint) -> f64 {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Equirectangular projection around an origin; planar coordinates are
/// meters east and meters north of the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame {
    origin: GeoPoint,
    meters_per_deg_lat: f64,
    meters_per_deg_lon: f64,
}

/// Planar offset in meters, `x` east and `y` north.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Planar {
    pub x: f64,
    pub y: f64,
}

impl Planar {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(&self, other: &Planar) -> f64 {
        self.dist_sq(other).sqrt()
    }

    #[inline]
    pub fn dist_sq(&self, other: &Planar) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }
}

impl LocalFrame {
    /// Frames are rejected within one degree of a pole, where the
    /// longitude scale collapses.
    pub fn new(origin: GeoPoint) -> Result<Self> {
        if origin.lat.abs() >= 89.0 {
            return Err(Error::DegenerateFrame(origin.lat));
        }
        Ok(Self {
            origin,
            meters_per_deg_lat: METERS_PER_DEG_LAT,
            meters_per_deg_lon: METERS_PER_DEG_LAT * origin.lat.to_radians().cos(),
        })
    }

    pub fn origin(&self) -> GeoPoint {
        self.origin
    }

    pub fn meters_per_deg_lat(&self) -> f64 {
        self.meters_per_deg_lat
    }

    pub fn meters_per_deg_lon(&self) -> f64 {
        self.meters_per_deg_lon
    }

    pub fn to_local(&self, p: GeoPoint) -> Planar {
        Planar {
            x: (p.lon - self.origin.lon) * self.meters_per_deg_lon,
            y: (p.lat - self.origin.lat) * self.meters_per_deg_lat,
        }
    }

    /// Inverse of [`to_local`](Self::to_local). Fails when the planar offset
    /// leaves the valid coordinate range.
    pub fn from_local(&self, q: Planar) -> Result<GeoPoint> {
        GeoPoint::new(
            self.origin.lat + q.y / self.meters_per_deg_lat,
            self.origin.lon + q.x / self.meters_per_deg_lon,
        )
    }
}

/// Earth-centered Cartesian coordinates on the sphere, meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EcefPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl EcefPoint {
    pub fn as_array(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn to_geo(&self) -> Result<GeoPoint> {
        let r = self.norm();
        if r == 0.0 {
            return Err(Error::InvalidCoordinate { lat: f64::NAN, lon: f64::NAN });
        }
        let lat = (self.z / r).clamp(-1.0, 1.0).asin().to_degrees();
        let lon = self.y.atan2(self.x).to_degrees();
        GeoPoint::new(lat, lon)
    }
}

pub fn to_ecef(p: GeoPoint) -> EcefPoint {
    let phi = p.lat.to_radians();
    let lambda = p.lon.to_radians();
    EcefPoint {
        x: EARTH_RADIUS_M * phi.cos() * lambda.cos(),
        y: EARTH_RADIUS_M * phi.cos() * lambda.sin(),
        z: EARTH_RADIUS_M * phi.sin(),
    }
}

/// Straight-line (chord) length between two surface points separated by
/// the great-circle distance `arc_m`.
pub fn chord_for_arc(arc_m: f64) -> f64 {
    2.0 * EARTH_RADIUS_M * (arc_m / (2.0 * EARTH_RADIUS_M)).min(PI / 2.0).sin()
}

/// Rounds a coordinate to `decimals` places, half away from zero.
pub fn round_value(v: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    (v * scale).round() / scale
}

/// Rounds both coordinates to `decimals` places (0 through 6).
pub fn round_coords(p: GeoPoint, decimals: u32) -> Result<GeoPoint> {
    if decimals > 6 {
        return Err(Error::InvalidParameter(format!(
            "rounding decimals must be within 0..=6, got {decimals}"
        )));
    }
    GeoPoint::new(round_value(p.lat, decimals), round_value(p.lon, decimals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gp(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(GeoPoint::new(91.0, 0.0).is_err());
        assert!(GeoPoint::new(0.0, -180.5).is_err());
        assert!(GeoPoint::new(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn haversine_examples() {
        assert_eq!(haversine(gp(0.0, 0.0), gp(0.0, 0.0)), 0.0);
        let one_deg = EARTH_RADIUS_M * PI / 180.0;
        assert!((haversine(gp(0.0, 0.0), gp(0.0, 1.0)) - one_deg).abs() < 1e-6);
        assert!((one_deg - 111_195.08).abs() < 0.01);
        let quarter = haversine(gp(0.0, 0.0), gp(90.0, 0.0));
        assert!((quarter - EARTH_RADIUS_M * PI / 2.0).abs() < 1e-6);
        assert!((quarter - 10_007_557.2).abs() < 0.1);
    }

    #[test]
    fn local_frame_examples() {
        let f = LocalFrame::new(gp(35.0, 139.0)).unwrap();
        assert_eq!(f.to_local(gp(35.0, 139.0)), Planar::new(0.0, 0.0));

        let f = LocalFrame::new(gp(0.0, 0.0)).unwrap();
        assert!((f.to_local(gp(0.0, 0.001)).x - 111.19).abs() < 0.01);

        let f = LocalFrame::new(gp(60.0, 0.0)).unwrap();
        assert!((f.to_local(gp(60.0, 0.001)).x - 55.60).abs() < 0.01);

        assert!(LocalFrame::new(gp(89.0, 0.0)).is_err());
        assert!(LocalFrame::new(gp(-89.5, 0.0)).is_err());
        let f = LocalFrame::new(gp(45.0, 10.0)).unwrap();
        assert!(f.meters_per_deg_lon() <= f.meters_per_deg_lat());
    }

    #[test]
    fn ecef_examples() {
        let r = EARTH_RADIUS_M;
        let e = to_ecef(gp(0.0, 0.0));
        assert!((e.x - r).abs() < 1e-6 && e.y.abs() < 1e-6 && e.z.abs() < 1e-6);
        let e = to_ecef(gp(90.0, 0.0));
        assert!(e.x.abs() < 1e-6 && e.y.abs() < 1e-6 && (e.z - r).abs() < 1e-6);
        let e = to_ecef(gp(0.0, 90.0));
        assert!(e.x.abs() < 1e-6 && (e.y - r).abs() < 1e-6 && e.z.abs() < 1e-6);
    }

    #[test]
    fn rounding_examples() {
        let p = round_coords(gp(35.123456, 139.654321), 2).unwrap();
        assert_eq!((p.lat(), p.lon()), (35.12, 139.65));
        let p = round_coords(gp(-0.005, 0.005), 2).unwrap();
        assert_eq!((p.lat(), p.lon()), (-0.01, 0.01));
        let p = round_coords(gp(35.123456, 139.654321), 4).unwrap();
        assert_eq!((p.lat(), p.lon()), (35.1235, 139.6543));
        assert!(round_coords(gp(1.0, 1.0), 7).is_err());
    }

    #[test]
    fn destination_matches_haversine() {
        let p = gp(35.68, 139.69);
        for i in 0..16 {
            let q = p.destination(250.0, i as f64 * PI / 8.0);
            assert!((haversine(p, q) - 250.0).abs() < 1e-6);
        }
        let q = gp(10.0, 179.9999).destination(100.0, PI / 2.0);
        assert!(q.lon() < 0.0);
    }

    fn any_point() -> impl Strategy<Value = GeoPoint> {
        (-89.0f64..89.0, -179.0f64..179.0).prop_map(|(a, b)| gp(a, b))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn triangle_inequality(a in any_point(), b in any_point(), c in any_point()) {
            let ab = haversine(a, b);
            let bc = haversine(b, c);
            let ac = haversine(a, c);
            prop_assert!(ac <= (ab + bc) * (1.0 + 1e-6) + 1e-9);
            prop_assert!((haversine(b, a) - ab).abs() < 1e-9);
        }

        #[test]
        fn local_round_trip(origin in (-80.0f64..80.0, -170.0f64..170.0),
                            d in (-5.0f64..5.0, -5.0f64..5.0)) {
            let o = gp(origin.0, origin.1);
            let f = LocalFrame::new(o).unwrap();
            let p = gp(origin.0 + d.0, origin.1 + d.1);
            let back = f.from_local(f.to_local(p)).unwrap();
            prop_assert!((back.lat() - p.lat()).abs() < 1e-9);
            prop_assert!((back.lon() - p.lon()).abs() < 1e-9);
        }

        #[test]
        fn local_distance_distortion(a in (-70.0f64..70.0, -170.0f64..170.0),
                                     dist in 10.0f64..50_000.0,
                                     bearing in 0.0f64..(2.0 * PI)) {
            let a = gp(a.0, a.1);
            let b = a.destination(dist, bearing);
            prop_assume!(b.lat().abs() < 70.0);
            let mid = gp((a.lat() + b.lat()) / 2.0, (a.lon() + b.lon()) / 2.0);
            let f = LocalFrame::new(mid).unwrap();
            let planar = f.to_local(a).dist(&f.to_local(b));
            let h = haversine(a, b);
            prop_assert!((h - planar).abs() / h < 0.01);
        }

        #[test]
        fn ecef_round_trip(p in any_point()) {
            let e = to_ecef(p);
            prop_assert!((e.norm() - EARTH_RADIUS_M).abs() / EARTH_RADIUS_M < 1e-3);
            let back = e.to_geo().unwrap();
            prop_assert!((back.lat() - p.lat()).abs() < 1e-9);
            prop_assert!((back.lon() - p.lon()).abs() < 1e-9);
        }

        #[test]
        fn rounding_idempotent(p in any_point(), d in 0u32..=6) {
            let once = round_coords(p, d).unwrap();
            prop_assert_eq!(round_coords(once, d).unwrap(), once);
            let bound = 0.5 * 10f64.powi(-(d as i32)) + 1e-12;
            prop_assert!((once.lat() - p.lat()).abs() <= bound);
        }
    }
}
