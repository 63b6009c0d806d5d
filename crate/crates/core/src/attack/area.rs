//! Rasterized geographic footprints.
//!
//! Cells live on a global grid of fixed-height rows (`cell_m` meters of
//! latitude). Each row is cut into columns `cell_m` meters wide at the
//! row's center latitude, so every cell covers about `cell_m²` anywhere on
//! Earth and footprints of different users and passes are directly
//! comparable. Shapes are rasterized by cell-center sampling.

use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::geo::{GeoPoint, METERS_PER_DEG_LAT};

pub const DEFAULT_CELL_M: f64 = 10.0;

pub type Cell = (i64, i64);

#[derive(Debug, Clone, PartialEq)]
pub struct AreaEstimate {
    cell_m: f64,
    cells: HashSet<Cell>,
}

fn row_center_lat(row: i64, cell_m: f64) -> f64 {
    (row as f64 + 0.5) * cell_m / METERS_PER_DEG_LAT
}

fn meters_per_deg_lon(lat: f64) -> f64 {
    // floor keeps polar rows finite
    METERS_PER_DEG_LAT * lat.to_radians().cos().max(1e-6)
}

/// Number of lattice centers `(k + 0.5) * s` in `[a, a + len)` and the first `k`.
fn lattice_span(a: f64, len: f64, s: f64) -> (i64, i64) {
    let k0 = (a / s - 0.5).ceil() as i64;
    let ratio = len / s;
    let n = if (ratio - ratio.round()).abs() < 1e-9 {
        ratio.round() as i64
    } else {
        ((a + len) / s - 0.5).ceil() as i64 - k0
    };
    (k0, n.max(0))
}

impl AreaEstimate {
    pub fn empty(cell_m: f64) -> Self {
        Self {
            cell_m,
            cells: HashSet::new(),
        }
    }

    pub fn cell_m(&self) -> f64 {
        self.cell_m
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cell_area_m2(&self) -> f64 {
        self.cell_m * self.cell_m
    }

    pub fn area_km2(&self) -> f64 {
        self.cells.len() as f64 * self.cell_area_m2() / 1e6
    }

    pub fn cells_sorted(&self) -> Vec<Cell> {
        let mut v: Vec<Cell> = self.cells.iter().copied().collect();
        v.sort_unstable();
        v
    }

    /// Cell that owns `p` (floor indexing, so boundaries belong to the
    /// cell above/east).
    pub fn cell_of(&self, p: GeoPoint) -> Cell {
        cell_of(p, self.cell_m)
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        self.cells.contains(&self.cell_of(p))
    }

    pub fn contains_cell(&self, c: &Cell) -> bool {
        self.cells.contains(c)
    }

    pub fn insert_cell(&mut self, c: Cell) {
        self.cells.insert(c);
    }

    pub fn cell_center(&self, c: Cell) -> GeoPoint {
        let lat = row_center_lat(c.0, self.cell_m).clamp(-90.0, 90.0);
        let lon = (c.1 as f64 + 0.5) * self.cell_m / meters_per_deg_lon(lat);
        GeoPoint::new(lat, lon.clamp(-180.0, 180.0)).expect("cell center within range")
    }

    /// South, west, north, east bounds in degrees.
    pub fn bounding_box(&self) -> Option<(f64, f64, f64, f64)> {
        let mut it = self.cells.iter();
        let first = it.next()?;
        let mut b = self.cell_bounds(*first);
        for c in it {
            let cb = self.cell_bounds(*c);
            b.0 = b.0.min(cb.0);
            b.1 = b.1.min(cb.1);
            b.2 = b.2.max(cb.2);
            b.3 = b.3.max(cb.3);
        }
        Some(b)
    }

    fn cell_bounds(&self, c: Cell) -> (f64, f64, f64, f64) {
        let s = self.cell_m;
        let south = c.0 as f64 * s / METERS_PER_DEG_LAT;
        let north = (c.0 + 1) as f64 * s / METERS_PER_DEG_LAT;
        let mlon = meters_per_deg_lon(row_center_lat(c.0, s));
        (south, c.1 as f64 * s / mlon, north, (c.1 + 1) as f64 * s / mlon)
    }

    fn same_grid(&self, other: &AreaEstimate) -> Result<()> {
        if self.cell_m != other.cell_m {
            return Err(Error::GridMismatch(format!(
                "cell sizes differ: {} m vs {} m",
                self.cell_m, other.cell_m
            )));
        }
        Ok(())
    }

    pub fn union_with(&mut self, other: &AreaEstimate) -> Result<()> {
        self.same_grid(other)?;
        self.cells.extend(other.cells.iter().copied());
        Ok(())
    }

    pub fn intersection_cells(&self, other: &AreaEstimate) -> Result<usize> {
        self.same_grid(other)?;
        let (small, large) = if self.cells.len() <= other.cells.len() {
            (self, other)
        } else {
            (other, self)
        };
        Ok(small.cells.iter().filter(|c| large.cells.contains(c)).count())
    }

    /// Cells in `self` but not in `other`.
    pub fn difference_cells(&self, other: &AreaEstimate) -> Result<usize> {
        self.same_grid(other)?;
        Ok(self.cells.iter().filter(|c| !other.cells.contains(c)).count())
    }

    pub fn cells_to_km2(&self, n: usize) -> f64 {
        n as f64 * self.cell_area_m2() / 1e6
    }

    /// Adds every cell whose center lies within `radius_m` of `center`.
    pub fn add_disk(&mut self, center: GeoPoint, radius_m: f64) {
        let s = self.cell_m;
        let yc = center.lat() * METERS_PER_DEG_LAT;
        let r2 = radius_m * radius_m;
        let row_lo = ((yc - radius_m) / s).floor() as i64;
        let row_hi = ((yc + radius_m) / s).floor() as i64;
        for row in row_lo..=row_hi {
            let dy = (row as f64 + 0.5) * s - yc;
            if dy * dy > r2 {
                continue;
            }
            let hw = (r2 - dy * dy).sqrt();
            let xc = center.lon() * meters_per_deg_lon(row_center_lat(row, s));
            let k_lo = ((xc - hw) / s - 0.5).ceil() as i64;
            let k_hi = ((xc + hw) / s - 0.5).floor() as i64;
            for col in k_lo..=k_hi {
                self.cells.insert((row, col));
            }
        }
    }

    /// Adds the cells whose centers fall in an axis-aligned rectangle of
    /// `width_m` × `height_m` centered on `center` (half-open on the
    /// south/west sides' opposites, so a square of side `k·cell_m` covers
    /// exactly `k²` cells).
    pub fn add_rect(&mut self, center: GeoPoint, width_m: f64, height_m: f64) {
        let s = self.cell_m;
        let yc = center.lat() * METERS_PER_DEG_LAT;
        let (row0, nrows) = lattice_span(yc - height_m / 2.0, height_m, s);
        for row in row0..row0 + nrows {
            let xc = center.lon() * meters_per_deg_lon(row_center_lat(row, s));
            let (col0, ncols) = lattice_span(xc - width_m / 2.0, width_m, s);
            for col in col0..col0 + ncols {
                self.cells.insert((row, col));
            }
        }
    }

    pub fn from_disks(centers: impl IntoIterator<Item = GeoPoint>, radius_m: f64, cell_m: f64) -> Self {
        let mut a = Self::empty(cell_m);
        for c in centers {
            a.add_disk(c, radius_m);
        }
        a
    }

    pub fn from_rect(center: GeoPoint, width_m: f64, height_m: f64, cell_m: f64) -> Self {
        let mut a = Self::empty(cell_m);
        a.add_rect(center, width_m, height_m);
        a
    }
}

pub fn cell_of(p: GeoPoint, cell_m: f64) -> Cell {
    let row = (p.lat() * METERS_PER_DEG_LAT / cell_m).floor() as i64;
    let mlon = meters_per_deg_lon(row_center_lat(row, cell_m));
    let col = (p.lon() * mlon / cell_m).floor() as i64;
    (row, col)
}

/// Summary of an area suitable for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaSummary {
    pub cell_m: f64,
    pub cells: usize,
    pub area_km2: f64,
}

impl From<&AreaEstimate> for AreaSummary {
    fn from(a: &AreaEstimate) -> Self {
        Self {
            cell_m: a.cell_m,
            cells: a.cells.len(),
            area_km2: a.area_km2(),
        }
    }
}
