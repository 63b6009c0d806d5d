//! Privacy gain: how much of what the adversary inferred before a defense
//! it still infers after it.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::io::Write;

use crate::attack::AreaEstimate;
use crate::error::{Error, Result};
use crate::geo::GeoPoint;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyGain {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub tp: f64,
    pub fp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
}

impl PrivacyGain {
    pub fn from_counts(tp: f64, fp: f64, fn_: f64) -> Self {
        let ratio = |num: f64, den: f64| (den > 0.0).then(|| num / den);
        Self {
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            tp,
            fp,
            fn_,
        }
    }

    /// The same comparison seen from the other side.
    pub fn swapped(&self) -> Self {
        Self::from_counts(self.tp, self.fn_, self.fp)
    }
}

/// Area overlap in km². Both estimates must share a grid.
pub fn spatial_gain(before: &AreaEstimate, after: &AreaEstimate) -> Result<PrivacyGain> {
    let tp = before.intersection_cells(after)?;
    let fp = after.difference_cells(before)?;
    let fn_ = before.difference_cells(after)?;
    Ok(PrivacyGain::from_counts(
        before.cells_to_km2(tp),
        before.cells_to_km2(fp),
        before.cells_to_km2(fn_),
    ))
}

pub fn poi_gain(before: &BTreeSet<String>, after: &BTreeSet<String>) -> PrivacyGain {
    let tp = before.intersection(after).count();
    let fp = after.difference(before).count();
    let fn_ = before.difference(after).count();
    PrivacyGain::from_counts(tp as f64, fp as f64, fn_ as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VulnerabilityStats {
    pub users_total: usize,
    pub vulnerable_before: usize,
    pub vulnerable_after: usize,
    pub reduction: f64,
    /// Set when no user was vulnerable to begin with, so `reduction` is
    /// meaningless.
    pub no_baseline: bool,
}

/// Per-user vulnerability flags of the two passes, in the same user order.
pub fn vulnerability_stats(before: &[bool], after: &[bool]) -> Result<VulnerabilityStats> {
    if before.len() != after.len() {
        return Err(Error::Misaligned(format!(
            "{} users before, {} after",
            before.len(),
            after.len()
        )));
    }
    let vb = before.iter().filter(|&&v| v).count();
    let va = after.iter().filter(|&&v| v).count();
    let reduction = if vb == 0 { 0.0 } else { 1.0 - va as f64 / vb as f64 };
    Ok(VulnerabilityStats {
        users_total: before.len(),
        vulnerable_before: vb,
        vulnerable_after: va,
        reduction,
        no_baseline: vb == 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VolumeBin {
    Under10k,
    From10kTo50k,
    Over50k,
}

impl VolumeBin {
    pub fn of(measurements: usize) -> Self {
        match measurements {
            n if n < 10_000 => VolumeBin::Under10k,
            n if n <= 50_000 => VolumeBin::From10kTo50k,
            _ => VolumeBin::Over50k,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            VolumeBin::Under10k => "<10k",
            VolumeBin::From10kTo50k => "10k-50k",
            VolumeBin::Over50k => ">50k",
        }
    }
}

/// Fraction of known anchor locations that fall inside the inferred area.
/// `None` without anchors.
pub fn anchor_recall(area: &AreaEstimate, anchors: &[GeoPoint]) -> Option<f64> {
    if anchors.is_empty() {
        return None;
    }
    let hit = anchors.iter().filter(|a| area.contains(**a)).count();
    Some(hit as f64 / anchors.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainRow {
    pub user_id: String,
    pub lppm: String,
    pub metric: String,
    pub volume_bin: String,
    pub measurements: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub tp: f64,
    pub fp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
}

impl GainRow {
    pub fn new(user_id: &str, lppm: &str, metric: &str, measurements: usize, gain: &PrivacyGain) -> Self {
        Self {
            user_id: user_id.to_string(),
            lppm: lppm.to_string(),
            metric: metric.to_string(),
            volume_bin: VolumeBin::of(measurements).as_str().to_string(),
            measurements,
            precision: gain.precision,
            recall: gain.recall,
            tp: gain.tp,
            fp: gain.fp,
            fn_: gain.fn_,
        }
    }
}

/// Writes rows as CSV; undefined precision/recall become empty fields.
pub fn write_gain_rows<W: Write>(out: W, rows: &[GainRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
