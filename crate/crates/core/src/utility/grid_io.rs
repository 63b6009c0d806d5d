//! Grid, hotspot and transition-matrix files.
//!
//! A grid is a flat binary file with a 16-byte header followed by
//! row-major little-endian `f32` values, north row first:
//!
//! | bytes | content |
//! |-------|---------|
//! | 0..4  | magic `RGRD` |
//! | 4..6  | format version (u16 LE) |
//! | 6..8  | reserved, zero |
//! | 8..12 | resolution per axis (u32 LE) |
//! | 12..16 | checksum of the bounding box (u32 LE) |
//!
//! The bounding box itself lives in a JSON sidecar; the checksum ties the
//! two files together.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{Read, Write};

use crate::error::{Error, Result};

use super::radiation::{AveragedPoint, RadiationGrid, TransitionMatrix};
use super::RegionSpec;

pub const MAGIC: &[u8; 4] = b"RGRD";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSidecar {
    pub format_version: u16,
    pub region: RegionSpec,
    pub resolution: usize,
    pub row_order: String,
    pub dtype: String,
    pub bbox_checksum: u32,
}

pub fn bbox_checksum(r: &RegionSpec) -> u32 {
    let mut h = Sha256::new();
    for v in [r.lat_min, r.lat_max, r.lon_min, r.lon_max] {
        h.update(v.to_le_bytes());
    }
    let d = h.finalize();
    u32::from_le_bytes([d[0], d[1], d[2], d[3]])
}

pub fn sidecar(grid: &RadiationGrid) -> GridSidecar {
    GridSidecar {
        format_version: FORMAT_VERSION,
        region: grid.region.clone(),
        resolution: grid.resolution,
        row_order: "north-to-south".into(),
        dtype: "f32le".into(),
        bbox_checksum: bbox_checksum(&grid.region),
    }
}

pub fn write_grid<W: Write>(mut out: W, grid: &RadiationGrid) -> Result<()> {
    let res = u32::try_from(grid.resolution)
        .map_err(|_| Error::InvalidParameter("grid resolution does not fit the header".into()))?;
    let mut header = [0u8; HEADER_LEN];
    header[0..4].copy_from_slice(MAGIC);
    header[4..6].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
    header[8..12].copy_from_slice(&res.to_le_bytes());
    header[12..16].copy_from_slice(&bbox_checksum(&grid.region).to_le_bytes());
    out.write_all(&header)?;
    let mut buf = Vec::with_capacity(grid.values.len() * 4);
    for v in &grid.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

pub fn read_grid<R: Read>(mut input: R, meta: &GridSidecar) -> Result<RadiationGrid> {
    let mut header = [0u8; HEADER_LEN];
    input.read_exact(&mut header)?;
    if &header[0..4] != MAGIC {
        return Err(Error::Malformed("not a grid file".into()));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::Malformed(format!("unsupported grid version {version}")));
    }
    let res = u32::from_le_bytes(header[8..12].try_into().expect("4 bytes")) as usize;
    let sum = u32::from_le_bytes(header[12..16].try_into().expect("4 bytes"));
    if res != meta.resolution || sum != bbox_checksum(&meta.region) {
        return Err(Error::GridMismatch("grid header does not match its sidecar".into()));
    }
    let mut grid = RadiationGrid::new(meta.region.clone(), res)?;
    let mut bytes = vec![0u8; res * res * 4];
    input.read_exact(&mut bytes)?;
    for (v, c) in grid.values.iter_mut().zip(bytes.chunks_exact(4)) {
        *v = f32::from_le_bytes(c.try_into().expect("4 bytes"));
    }
    Ok(grid)
}

#[derive(Serialize)]
struct HotspotRow {
    lat: f64,
    lon: f64,
    cpm: f64,
    count: usize,
}

pub fn write_hotspots<W: Write>(out: W, hotspots: &[AveragedPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for h in hotspots {
        w.serialize(HotspotRow {
            lat: h.point.lat(),
            lon: h.point.lon(),
            cpm: h.value,
            count: h.count,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// One row per before-category: counts then row percentages.
pub fn write_transition_matrix<W: Write>(out: W, m: &TransitionMatrix) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["before".to_string()];
    header.extend((1..=5).map(|j| format!("count_{j}")));
    header.extend((1..=5).map(|j| format!("pct_{j}")));
    w.write_record(&header)?;
    let pct = m.row_percentages();
    for (i, (counts, pct)) in m.counts.iter().zip(&pct).enumerate() {
        let mut row = vec![(i + 1).to_string()];
        row.extend(counts.iter().map(|c| c.to_string()));
        row.extend(pct.iter().map(|p| format!("{p:.4}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
