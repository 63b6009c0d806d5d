//! Radiation maps: per-location averaging, nearest-neighbor interpolation
//! onto a regular grid, map differences, danger categories and hotspots.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geo::{GeoPoint, LocalFrame};
use crate::index::KdTree;
use crate::trace::{Measurement, SECONDS_PER_DAY};

use super::stats::{summarize, Summary};
use super::RegionSpec;

pub const WINDOW_DAYS: i64 = 270;
pub const DEFAULT_RESOLUTION: usize = 1500;
pub const HOTSPOT_CPM: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AveragedPoint {
    pub point: GeoPoint,
    pub value: f64,
    pub count: usize,
}

/// Mean value per exact coordinate over `[anchor - window_days, anchor]`.
/// The anchor defaults to the latest timestamp. Output is sorted by
/// `(lat, lon)`.
pub fn average_recent(measurements: &[Measurement], window_days: i64, anchor: Option<i64>) -> Vec<AveragedPoint> {
    let Some(anchor) = anchor.or_else(|| measurements.iter().map(|m| m.t).max()) else {
        return Vec::new();
    };
    let start = anchor - window_days * SECONDS_PER_DAY;
    let mut groups: HashMap<(u64, u64), (GeoPoint, Vec<f64>)> = HashMap::new();
    for m in measurements.iter().filter(|m| (start..=anchor).contains(&m.t)) {
        let key = (m.point.lat().to_bits(), m.point.lon().to_bits());
        groups.entry(key).or_insert_with(|| (m.point, Vec::new())).1.push(m.value);
    }
    let mut out: Vec<AveragedPoint> = groups
        .into_values()
        .map(|(point, mut values)| {
            // summation order must not depend on input order
            values.sort_by(f64::total_cmp);
            AveragedPoint {
                point,
                value: values.iter().sum::<f64>() / values.len() as f64,
                count: values.len(),
            }
        })
        .collect();
    out.sort_by(|a, b| a.point.lexicographic_cmp(&b.point));
    out
}

/// Averaged coordinates with a value strictly above `threshold`.
pub fn detect_hotspots(averaged: &[AveragedPoint], threshold: f64) -> Vec<AveragedPoint> {
    let mut v: Vec<AveragedPoint> = averaged.iter().filter(|a| a.value > threshold).copied().collect();
    v.sort_by(|a, b| a.point.lexicographic_cmp(&b.point));
    v
}

/// Square grid over a region, row 0 at the northern edge. Grid points are
/// spaced uniformly in degrees and include the corners.
#[derive(Debug, Clone, PartialEq)]
pub struct RadiationGrid {
    pub region: RegionSpec,
    pub resolution: usize,
    /// Row-major; NaN marks a point without a value.
    pub values: Vec<f32>,
}

impl RadiationGrid {
    pub fn new(region: RegionSpec, resolution: usize) -> Result<Self> {
        region.validate()?;
        if resolution < 2 {
            return Err(Error::InvalidParameter("grid resolution must be at least 2".into()));
        }
        Ok(Self {
            region,
            resolution,
            values: vec![f32::NAN; resolution * resolution],
        })
    }

    pub fn lat_of_row(&self, row: usize) -> f64 {
        let r = &self.region;
        r.lat_max - row as f64 * (r.lat_max - r.lat_min) / (self.resolution - 1) as f64
    }

    pub fn lon_of_col(&self, col: usize) -> f64 {
        let r = &self.region;
        r.lon_min + col as f64 * (r.lon_max - r.lon_min) / (self.resolution - 1) as f64
    }

    pub fn point(&self, row: usize, col: usize) -> GeoPoint {
        GeoPoint::new(self.lat_of_row(row), self.lon_of_col(col)).expect("grid inside a valid region")
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.resolution + col]
    }

    pub fn same_layout(&self, other: &RadiationGrid) -> Result<()> {
        if self.region != other.region || self.resolution != other.resolution {
            return Err(Error::GridMismatch(format!(
                "grids differ: {:?}@{} vs {:?}@{}",
                self.region.name, self.resolution, other.region.name, other.resolution
            )));
        }
        Ok(())
    }
}

/// Fills every grid point with the value of the nearest averaged point
/// inside the region. Distances are planar in a frame centered on the
/// region; exact ties go to the smaller `(lat, lon)` source.
pub fn build_radiation_map(averaged: &[AveragedPoint], region: &RegionSpec, resolution: usize) -> Result<RadiationGrid> {
    let mut grid = RadiationGrid::new(region.clone(), resolution)?;
    let mut sources: Vec<AveragedPoint> = averaged.iter().filter(|a| region.contains(a.point)).copied().collect();
    if sources.is_empty() {
        return Err(Error::EmptyInput("averaged points inside the region"));
    }
    sources.sort_by(|a, b| a.point.lexicographic_cmp(&b.point));
    let frame = LocalFrame::new(region.center()?)?;
    let xy: Vec<[f64; 2]> = sources
        .iter()
        .map(|s| {
            let q = frame.to_local(s.point);
            [q.x, q.y]
        })
        .collect();
    let tree = KdTree::build(&xy);
    // sources are sorted, so a smaller index is a smaller coordinate
    let prefer = |a: usize, b: usize| a.cmp(&b);

    let cols: Vec<f64> = (0..resolution).map(|c| grid.lon_of_col(c)).collect();
    let rows: Vec<f64> = (0..resolution).map(|r| grid.lat_of_row(r)).collect();
    grid.values
        .par_chunks_mut(resolution)
        .zip(rows.par_iter())
        .for_each(|(row, &lat)| {
            for (v, &lon) in row.iter_mut().zip(&cols) {
                let q = frame.to_local(GeoPoint::new(lat, lon).expect("grid inside a valid region"));
                let (i, _) = tree.nearest_by(&[q.x, q.y], prefer).expect("non-empty tree");
                *v = sources[i].value as f32;
            }
        });
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapDiff {
    pub values: Vec<f32>,
    pub summary: Option<Summary>,
}

/// Absolute per-point difference of two grids on the same layout.
pub fn map_diff(a: &RadiationGrid, b: &RadiationGrid) -> Result<MapDiff> {
    a.same_layout(b)?;
    let values: Vec<f32> = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).collect();
    let wide: Vec<f64> = values.iter().map(|&v| v as f64).collect();
    Ok(MapDiff {
        summary: summarize(&wide),
        values,
    })
}

/// Safety scale in cpm: 1 up to 50, 2 up to 100, 3 up to 1000, 4 up to
/// 2000, 5 above.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DangerCategory(u8);

impl DangerCategory {
    pub const COUNT: usize = 5;

    pub fn ordinal(&self) -> u8 {
        self.0
    }

    pub fn index(&self) -> usize {
        self.0 as usize - 1
    }
}

pub fn categorize(cpm: f64) -> Result<DangerCategory> {
    if cpm.is_nan() || cpm < 0.0 {
        return Err(Error::NegativeCpm(cpm));
    }
    let c = match cpm {
        v if v <= 50.0 => 1,
        v if v <= 100.0 => 2,
        v if v <= 1000.0 => 3,
        v if v <= 2000.0 => 4,
        _ => 5,
    };
    Ok(DangerCategory(c))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    /// `counts[i][j]`: grid points in category `i + 1` before and `j + 1` after.
    pub counts: [[u64; 5]; 5],
}

impl TransitionMatrix {
    pub fn row_total(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    /// Each row as percentages of its total; empty rows stay zero.
    pub fn row_percentages(&self) -> [[f64; 5]; 5] {
        let mut p = [[0.0; 5]; 5];
        for (i, row) in self.counts.iter().enumerate() {
            let total = self.row_total(i);
            if total > 0 {
                for j in 0..5 {
                    p[i][j] = 100.0 * row[j] as f64 / total as f64;
                }
            }
        }
        p
    }
}

pub fn transition_matrix(before: &RadiationGrid, after: &RadiationGrid) -> Result<TransitionMatrix> {
    before.same_layout(after)?;
    let mut counts = [[0u64; 5]; 5];
    for (&b, &a) in before.values.iter().zip(&after.values) {
        let i = categorize(b as f64)?.index();
        let j = categorize(a as f64)?.index();
        counts[i][j] += 1;
    }
    Ok(TransitionMatrix { counts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::Planar;
    use crate::seed::rng_from_seed;
    use rand::Rng;
    use std::collections::BTreeMap;

    fn m(lat: f64, lon: f64, t: i64, v: f64) -> Measurement {
        Measurement {
            user_id: "u".into(),
            device_id: None,
            t,
            point: GeoPoint::new(lat, lon).unwrap(),
            value: v,
            unit: "cpm".into(),
            extras: BTreeMap::new(),
        }
    }

    fn region() -> RegionSpec {
        RegionSpec::new("r", 35.0, 35.1, 139.0, 139.1).unwrap()
    }

    #[test]
    fn averaging() {
        let d = SECONDS_PER_DAY;
        let ms = vec![
            m(35.0, 139.0, 300 * d, 30.0),
            m(35.0, 139.0, 299 * d, 60.0),
            m(35.0, 139.0, 298 * d, 90.0),
            m(35.0, 139.0, 29 * d, 1000.0),
            m(35.01, 139.0, 300 * d - 270 * d, 5.0),
        ];
        let a = average_recent(&ms, WINDOW_DAYS, None);
        assert_eq!(a.len(), 2);
        assert_eq!(a[0].value, 60.0);
        assert_eq!(a[0].count, 3);
        assert_eq!(a[1].value, 5.0);
        let mut rev = ms.clone();
        rev.reverse();
        assert_eq!(average_recent(&rev, WINDOW_DAYS, None), a);
        assert!(average_recent(&[], WINDOW_DAYS, None).is_empty());
    }

    #[test]
    fn hotspot_threshold() {
        let p = GeoPoint::new(35.0, 139.0).unwrap();
        let pts = [
            AveragedPoint { point: p, value: 150.0, count: 1 },
            AveragedPoint { point: p.destination(100.0, 0.0), value: 100.0, count: 1 },
        ];
        let h = detect_hotspots(&pts, HOTSPOT_CPM);
        assert_eq!(h.len(), 1);
        assert_eq!(h[0].value, 150.0);
        assert!(detect_hotspots(&[], HOTSPOT_CPM).is_empty());
    }

    #[test]
    fn categories() {
        let cat = |v: f64| categorize(v).unwrap().ordinal();
        assert_eq!([cat(45.0), cat(75.0), cat(150.0), cat(1500.0), cat(2500.0)], [1, 2, 3, 4, 5]);
        assert_eq!([cat(0.0), cat(50.0), cat(51.0), cat(100.0), cat(1000.0), cat(2000.0)], [1, 1, 2, 2, 3, 4]);
        assert!(categorize(-1.0).is_err());
    }

    #[test]
    fn single_source_constant() {
        let src = [AveragedPoint { point: GeoPoint::new(35.05, 139.05).unwrap(), value: 40.0, count: 1 }];
        let g = build_radiation_map(&src, &region(), 30).unwrap();
        assert!(g.values.iter().all(|&v| v == 40.0));
        assert_eq!(g.lat_of_row(0), 35.1);
        assert_eq!(g.lon_of_col(29), 139.1);
    }

    #[test]
    fn no_sources_in_region() {
        let src = [AveragedPoint { point: GeoPoint::new(10.0, 10.0).unwrap(), value: 40.0, count: 1 }];
        assert!(build_radiation_map(&src, &region(), 10).is_err());
    }

    fn brute(src: &[AveragedPoint], g: &RadiationGrid) -> Vec<f32> {
        let frame = LocalFrame::new(g.region.center().unwrap()).unwrap();
        let mut out = Vec::new();
        for r in 0..g.resolution {
            for c in 0..g.resolution {
                let q = frame.to_local(g.point(r, c));
                let mut best: Option<(f64, &AveragedPoint)> = None;
                for s in src {
                    let p = frame.to_local(s.point);
                    let d = crate::index::dist_sq(&[p.x, p.y], &[q.x, q.y]);
                    let better = match best {
                        None => true,
                        Some((bd, bs)) => d < bd || (d == bd && s.point.lexicographic_cmp(&bs.point).is_lt()),
                    };
                    if better {
                        best = Some((d, s));
                    }
                }
                out.push(best.unwrap().1.value as f32);
            }
        }
        out
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = rng_from_seed(11);
        for _ in 0..20 {
            let n = rng.random_range(1..30);
            let src: Vec<AveragedPoint> = (0..n)
                .map(|i| AveragedPoint {
                    point: GeoPoint::new(rng.random_range(35.0..35.1), rng.random_range(139.0..139.1)).unwrap(),
                    value: i as f64,
                    count: 1,
                })
                .collect();
            let g = build_radiation_map(&src, &region(), 20).unwrap();
            assert_eq!(g.values, brute(&src, &g));
        }
    }

    #[test]
    fn equidistant_tie() {
        let r = region();
        let frame = LocalFrame::new(r.center().unwrap()).unwrap();
        let c = r.center().unwrap();
        let west = frame.from_local(Planar::new(-500.0, 0.0)).unwrap();
        let east = frame.from_local(Planar::new(500.0, 0.0)).unwrap();
        let src = [
            AveragedPoint { point: east, value: 2.0, count: 1 },
            AveragedPoint { point: west, value: 1.0, count: 1 },
        ];
        // odd resolution puts a grid point on the center
        let g = build_radiation_map(&src, &r, 3).unwrap();
        let q = frame.to_local(c);
        let dw = frame.to_local(west).dist_sq(&q);
        let de = frame.to_local(east).dist_sq(&q);
        let expect = if dw < de || (dw == de && west.lexicographic_cmp(&east).is_lt()) { 1.0 } else { 2.0 };
        assert_eq!(g.get(1, 1), expect);
        assert_eq!(g.values, brute(&src, &g));
    }

    #[test]
    fn diff_and_transitions() {
        let a = RadiationGrid { values: vec![40.0; 16], ..RadiationGrid::new(region(), 4).unwrap() };
        let b = RadiationGrid { values: vec![45.0; 16], ..a.clone() };
        let d = map_diff(&a, &b).unwrap();
        assert!(d.values.iter().all(|&v| v == 5.0));
        assert!(map_diff(&a, &a).unwrap().values.iter().all(|&v| v == 0.0));

        let mut mixed = a.clone();
        mixed.values[..4].fill(150.0);
        let t = transition_matrix(&mixed, &mixed).unwrap();
        assert_eq!(t.counts[0][0], 12);
        assert_eq!(t.counts[2][2], 4);
        let p = t.row_percentages();
        assert_eq!((p[0][0], p[2][2], p[1][1]), (100.0, 100.0, 0.0));

        let t = transition_matrix(&mixed, &b).unwrap();
        assert_eq!(t.counts[2][0], 4);
        assert_eq!(t.row_total(0), 12);

        let other = RadiationGrid::new(region(), 5).unwrap();
        assert!(map_diff(&a, &other).is_err());
    }
}
