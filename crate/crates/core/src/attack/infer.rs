//! Area inference: DBSCAN with a relaxation schedule, top-k cluster
//! selection, footprint rasterization, the time-of-visit filter and the
//! square heuristic used against rounded coordinates.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::attack::area::{AreaEstimate, DEFAULT_CELL_M};
use crate::attack::dbscan::{dbscan_weighted, DbscanParams};
use crate::error::{Error, Result};
use crate::geo::{chord_for_arc, to_ecef, GeoPoint};
use crate::trace::UserTrace;

pub const DEFAULT_TOP_K: usize = 5;

/// Minimum stay, in seconds, for a single visit to count.
pub const MIN_STAY_S: i64 = 30 * 60;

/// DBSCAN parameter sets tried in order until one yields clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schedule(pub Vec<DbscanParams>);

impl Schedule {
    /// 80 points / 60 m, relaxed by +30 m and −15 points per step, capped
    /// at 120 m and 35 points.
    pub fn relaxed() -> Self {
        Self(vec![
            DbscanParams { min_pts: 80, eps: 60.0 },
            DbscanParams { min_pts: 65, eps: 90.0 },
            DbscanParams { min_pts: 50, eps: 120.0 },
            DbscanParams { min_pts: 35, eps: 120.0 },
        ])
    }

    pub fn safecast_tight() -> Self {
        Self(vec![DbscanParams { min_pts: 75, eps: 30.0 }])
    }

    pub fn radiocells_tight() -> Self {
        Self(vec![DbscanParams { min_pts: 25, eps: 30.0 }])
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "relaxed" => Some(Self::relaxed()),
            "safecast-tight" => Some(Self::safecast_tight()),
            "radiocells-tight" => Some(Self::radiocells_tight()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::InvalidParameter("empty DBSCAN schedule".into()));
        }
        self.0.iter().try_for_each(DbscanParams::validate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferOptions {
    pub top_k: usize,
    pub cell_m: f64,
    pub temporal_filter: bool,
}

impl Default for InferOptions {
    fn default() -> Self {
        Self {
            top_k: DEFAULT_TOP_K,
            cell_m: DEFAULT_CELL_M,
            temporal_filter: false,
        }
    }
}

/// A cluster of trace measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub label: usize,
    /// Indices into the trace, ascending.
    pub members: Vec<usize>,
}

impl Cluster {
    pub fn count(&self) -> usize {
        self.members.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum AttackMethod {
    Dbscan(DbscanParams),
    RoundingSquares { side_m: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    /// Method that produced the clusters; `None` if nothing was found.
    pub method: Option<AttackMethod>,
    pub clusters: Vec<Cluster>,
    pub area: AreaEstimate,
}

impl AttackResult {
    pub fn not_vulnerable(cell_m: f64) -> Self {
        Self {
            method: None,
            clusters: Vec::new(),
            area: AreaEstimate::empty(cell_m),
        }
    }

    pub fn is_vulnerable(&self) -> bool {
        !self.clusters.is_empty()
    }

    /// Measurement indices of all kept clusters, ascending.
    pub fn member_indices(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.clusters.iter().flat_map(|c| c.members.iter().copied()).collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// Runs DBSCAN on the trace's locations, with distances measured as the
/// chord through the Earth (indistinguishable from arc length at DBSCAN
/// radii). Coincident points are collapsed with multiplicities.
pub fn cluster_trace(trace: &UserTrace, params: &DbscanParams) -> Vec<Cluster> {
    let mut unique: Vec<[f64; 3]> = Vec::new();
    let mut weights: Vec<usize> = Vec::new();
    let mut slot_of: HashMap<(u64, u64), usize> = HashMap::new();
    let mut slot = Vec::with_capacity(trace.len());
    for m in &trace.measurements {
        let key = (m.point.lat().to_bits(), m.point.lon().to_bits());
        let s = *slot_of.entry(key).or_insert_with(|| {
            unique.push(to_ecef(m.point).as_array());
            weights.push(0);
            unique.len() - 1
        });
        weights[s] += 1;
        slot.push(s);
    }
    let chord = DbscanParams {
        eps: chord_for_arc(params.eps),
        min_pts: params.min_pts,
    };
    let labels = dbscan_weighted(&unique, &weights, &chord);
    let n_clusters = labels.iter().flatten().map(|l| l + 1).max().unwrap_or(0);
    let mut clusters: Vec<Cluster> = (0..n_clusters)
        .map(|label| Cluster { label, members: Vec::new() })
        .collect();
    for (i, s) in slot.iter().enumerate() {
        if let Some(l) = labels[*s] {
            clusters[l].members.push(i);
        }
    }
    clusters
}

/// Keeps clusters visited for at least 30 minutes in one visit, or on at
/// least two distinct local days. A visit is a maximal run of member
/// points whose consecutive gaps are shorter than 30 minutes.
pub fn temporal_filter(clusters: Vec<Cluster>, trace: &UserTrace) -> Vec<Cluster> {
    clusters
        .into_iter()
        .filter(|c| cluster_is_significant(c, trace))
        .collect()
}

fn cluster_is_significant(c: &Cluster, trace: &UserTrace) -> bool {
    let mut times: Vec<i64> = c.members.iter().map(|&i| trace.measurements[i].t).collect();
    if times.is_empty() {
        return false;
    }
    times.sort_unstable();
    let off = trace.utc_offset;
    let first_day = off.local_day(times[0]);
    if times.iter().any(|&t| off.local_day(t) != first_day) {
        return true;
    }
    let mut start = times[0];
    for w in times.windows(2) {
        if w[1] - w[0] >= MIN_STAY_S {
            start = w[1];
        }
        if w[1] - start >= MIN_STAY_S {
            return true;
        }
    }
    false
}

fn top_k(mut clusters: Vec<Cluster>, k: usize) -> Vec<Cluster> {
    // members are ascending and the trace is time-sorted, so the first
    // member is the earliest
    clusters.sort_by(|a, b| {
        b.count()
            .cmp(&a.count())
            .then_with(|| a.members.first().cmp(&b.members.first()))
            .then_with(|| a.label.cmp(&b.label))
    });
    clusters.truncate(k);
    clusters
}

/// Runs the schedule until some step yields clusters, keeps the `top_k`
/// largest and rasterizes the union of eps-disks around their members.
pub fn infer_areas(trace: &UserTrace, schedule: &Schedule, opts: &InferOptions) -> Result<AttackResult> {
    schedule.validate()?;
    for params in &schedule.0 {
        let mut clusters = cluster_trace(trace, params);
        if opts.temporal_filter {
            clusters = temporal_filter(clusters, trace);
        }
        if clusters.is_empty() {
            continue;
        }
        let clusters = top_k(clusters, opts.top_k);
        let area = footprint(trace, &clusters, params.eps, opts.cell_m);
        return Ok(AttackResult {
            method: Some(AttackMethod::Dbscan(*params)),
            clusters,
            area,
        });
    }
    Ok(AttackResult::not_vulnerable(opts.cell_m))
}

/// Union of `radius_m` disks around every distinct member location.
pub fn footprint(trace: &UserTrace, clusters: &[Cluster], radius_m: f64, cell_m: f64) -> AreaEstimate {
    let mut seen = std::collections::HashSet::new();
    let mut area = AreaEstimate::empty(cell_m);
    for c in clusters {
        for &i in &c.members {
            let p = trace.measurements[i].point;
            if seen.insert((p.lat().to_bits(), p.lon().to_bits())) {
                area.add_disk(p, radius_m);
            }
        }
    }
    area
}

/// Nominal side of the square of true locations behind one rounded
/// coordinate; `None` where DBSCAN still applies.
pub fn rounding_square_side(decimals: u32) -> Option<f64> {
    match decimals {
        2 => Some(1100.0),
        3 => Some(110.0),
        _ => None,
    }
}

/// Distinct reported locations ordered by frequency (ties by first
/// occurrence), with the measurement indices reporting each.
pub fn most_frequent_locations(trace: &UserTrace, k: usize) -> Vec<(GeoPoint, Vec<usize>)> {
    let mut order: Vec<(GeoPoint, Vec<usize>)> = Vec::new();
    let mut slot: HashMap<(u64, u64), usize> = HashMap::new();
    for (i, m) in trace.measurements.iter().enumerate() {
        let key = (m.point.lat().to_bits(), m.point.lon().to_bits());
        let s = *slot.entry(key).or_insert_with(|| {
            order.push((m.point, Vec::new()));
            order.len() - 1
        });
        order[s].1.push(i);
    }
    // stable sort keeps first-occurrence order among equal counts
    order.sort_by_key(|o| std::cmp::Reverse(o.1.len()));
    order.truncate(k);
    order
}

/// Square-based inference against coordinates rounded to 2 or 3 decimals:
/// squares of the nominal cell size centered on the `top_k` most frequent
/// reported locations. Other precisions fall back to [`infer_areas`].
pub fn rounding_adversary_areas(
    trace: &UserTrace,
    decimals: u32,
    schedule: &Schedule,
    opts: &InferOptions,
) -> Result<AttackResult> {
    let Some(side) = rounding_square_side(decimals) else {
        return infer_areas(trace, schedule, opts);
    };
    let anchors = most_frequent_locations(trace, opts.top_k);
    if anchors.is_empty() {
        return Ok(AttackResult::not_vulnerable(opts.cell_m));
    }
    let mut area = AreaEstimate::empty(opts.cell_m);
    let clusters = anchors
        .into_iter()
        .enumerate()
        .map(|(label, (p, members))| {
            area.add_rect(p, side, side);
            Cluster { label, members }
        })
        .collect();
    Ok(AttackResult {
        method: Some(AttackMethod::RoundingSquares { side_m: side }),
        clusters,
        area,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{Measurement, UtcOffset};
    use std::collections::BTreeMap;
    use std::f64::consts::PI;

    fn meas(t: i64, p: GeoPoint) -> Measurement {
        Measurement {
            user_id: "u".into(),
            device_id: None,
            t,
            point: p,
            value: 0.0,
            unit: "cpm".into(),
            extras: BTreeMap::new(),
        }
    }

    fn base() -> GeoPoint {
        GeoPoint::new(35.6, 139.6).unwrap()
    }

    /// `n` points within 10 m of `center`, one per `step` seconds from `t0`.
    fn blob(center: GeoPoint, n: usize, t0: i64, step: i64) -> Vec<Measurement> {
        (0..n)
            .map(|i| meas(t0 + i as i64 * step, center.destination((i % 10) as f64, i as f64 * 0.7)))
            .collect()
    }

    fn trace(ms: Vec<Measurement>) -> UserTrace {
        UserTrace::new("u", UtcOffset::default(), ms)
    }

    #[test]
    fn first_schedule_step_succeeds() {
        let t = trace(blob(base(), 100, 0, 30));
        let r = infer_areas(&t, &Schedule::relaxed(), &InferOptions::default()).unwrap();
        assert_eq!(r.method, Some(AttackMethod::Dbscan(Schedule::relaxed().0[0])));
        assert_eq!(r.clusters.len(), 1);
        assert_eq!(r.clusters[0].count(), 100);
        // ~60 m disk around a ~10 m blob
        let km2 = r.area.area_km2();
        assert!(km2 > PI * 0.06 * 0.06 && km2 < PI * 0.075 * 0.075, "{km2}");
    }

    #[test]
    fn relaxation_advances() {
        let t = trace(blob(base(), 40, 0, 30));
        let r = infer_areas(&t, &Schedule::relaxed(), &InferOptions::default()).unwrap();
        assert_eq!(r.method, Some(AttackMethod::Dbscan(Schedule::relaxed().0[3])));
    }

    #[test]
    fn small_user_not_vulnerable() {
        let t = trace(blob(base(), 10, 0, 30));
        let r = infer_areas(&t, &Schedule::relaxed(), &InferOptions::default()).unwrap();
        assert!(!r.is_vulnerable());
        assert!(r.area.is_empty());
    }

    #[test]
    fn keeps_five_largest() {
        let mut ms = Vec::new();
        for k in 0..7 {
            let c = base().destination(1000.0 * k as f64, 0.3);
            ms.extend(blob(c, 90 + 5 * k, k as i64 * 100_000, 10));
        }
        let t = trace(ms);
        let r = infer_areas(&t, &Schedule::relaxed(), &InferOptions::default()).unwrap();
        let counts: Vec<usize> = r.clusters.iter().map(Cluster::count).collect();
        assert_eq!(counts, vec![120, 115, 110, 105, 100]);
    }

    #[test]
    fn temporal_rules() {
        let day = 86_400;
        let c = |members: Vec<usize>| Cluster { label: 0, members };
        // 45 minutes, one point a minute
        let t = trace(blob(base(), 46, 10_000, 60));
        assert_eq!(temporal_filter(vec![c((0..46).collect())], &t).len(), 1);
        // 10 minutes on one day
        let t = trace(blob(base(), 11, 10_000, 60));
        assert!(temporal_filter(vec![c((0..11).collect())], &t).is_empty());
        // 5 minutes on each of two days
        let mut ms = blob(base(), 6, 10_000, 60);
        ms.extend(blob(base(), 6, 10_000 + day, 60));
        let t = trace(ms);
        assert_eq!(temporal_filter(vec![c((0..12).collect())], &t).len(), 1);
        // two 20-minute visits on the same day separated by an hour
        let mut ms = blob(base(), 21, 10_000, 60);
        ms.extend(blob(base(), 21, 10_000 + 3 * 3600, 60));
        let t = trace(ms);
        assert!(temporal_filter(vec![c((0..42).collect())], &t).is_empty());
    }

    #[test]
    fn rounding_squares() {
        let p = GeoPoint::new(35.69, 139.69).unwrap();
        let t = trace((0..50).map(|i| meas(i, p)).collect());
        let r = rounding_adversary_areas(&t, 2, &Schedule::relaxed(), &InferOptions::default()).unwrap();
        assert_eq!(r.method, Some(AttackMethod::RoundingSquares { side_m: 1100.0 }));
        assert!((r.area.area_km2() - 1.21).abs() < 1e-12);

        let r = rounding_adversary_areas(&t, 3, &Schedule::relaxed(), &InferOptions::default()).unwrap();
        assert!((r.area.area_km2() - 0.0121).abs() < 1e-12);

        // decimals=4 goes through DBSCAN: 50 coincident points form a cluster
        let r = rounding_adversary_areas(&t, 4, &Schedule::relaxed(), &InferOptions::default()).unwrap();
        assert!(matches!(r.method, Some(AttackMethod::Dbscan(_))));
    }

    #[test]
    fn most_frequent_picks_five() {
        let mut ms = Vec::new();
        let mut t = 0;
        for (k, count) in [9, 8, 7, 6, 5, 4].into_iter().enumerate() {
            let p = GeoPoint::new(35.0 + k as f64 * 0.01, 139.0).unwrap();
            for _ in 0..count {
                ms.push(meas(t, p));
                t += 1;
            }
        }
        let tr = trace(ms);
        let top = most_frequent_locations(&tr, 5);
        let counts: Vec<usize> = top.iter().map(|(_, m)| m.len()).collect();
        assert_eq!(counts, vec![9, 8, 7, 6, 5]);
        let r = rounding_adversary_areas(&tr, 3, &Schedule::relaxed(), &InferOptions::default()).unwrap();
        assert_eq!(r.area.cell_count(), 5 * 121);
    }

    #[test]
    fn frequency_ties_by_first_occurrence() {
        let a = GeoPoint::new(35.0, 139.0).unwrap();
        let b = GeoPoint::new(35.1, 139.0).unwrap();
        let tr = trace(vec![meas(0, b), meas(1, a), meas(2, a), meas(3, b)]);
        let top = most_frequent_locations(&tr, 1);
        assert_eq!(top[0].0, b);
    }

    #[test]
    fn looser_schedule_grows_area() {
        let mut ms = blob(base(), 100, 0, 30);
        ms.extend(blob(base().destination(70.0, 1.0), 60, 10_000, 30));
        let t = trace(ms);
        let tight = infer_areas(&t, &Schedule::safecast_tight(), &InferOptions::default()).unwrap();
        let loose = infer_areas(&t, &Schedule::relaxed(), &InferOptions::default()).unwrap();
        assert!(loose.area.area_km2() >= tight.area.area_km2() * 0.98);
    }
}
