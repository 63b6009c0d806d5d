//! Co-location detection between users.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geo::haversine;
use crate::trace::UserTrace;

pub const DEFAULT_MAX_DISTANCE_M: f64 = 50.0;
pub const DEFAULT_MAX_DT_S: i64 = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoLocationEvent {
    /// Index into the first user's trace.
    pub index_a: usize,
    pub index_b: usize,
    pub distance_m: f64,
    pub dt_s: i64,
}

/// Pairs of users `(a, b)` with `a < b` and their co-location events.
pub type CoLocations = BTreeMap<(String, String), Vec<CoLocationEvent>>;

/// Reports every pair of users with at least one pair of measurements
/// within `d_max` meters and `t_max` seconds of each other.
pub fn detect_colocations(traces: &[UserTrace], d_max: f64, t_max: i64) -> Result<CoLocations> {
    if !(d_max.is_finite() && d_max >= 0.0) || t_max < 0 {
        return Err(Error::InvalidParameter("co-location thresholds must be non-negative".into()));
    }
    let mut all: Vec<(i64, usize, usize)> = traces
        .iter()
        .enumerate()
        .flat_map(|(u, t)| t.measurements.iter().enumerate().map(move |(i, m)| (m.t, u, i)))
        .collect();
    all.sort_unstable();

    let mut out = CoLocations::new();
    for (k, &(t1, u1, i1)) in all.iter().enumerate() {
        for &(t2, u2, i2) in &all[k + 1..] {
            if t2 - t1 > t_max {
                break;
            }
            if u1 == u2 || traces[u1].user_id == traces[u2].user_id {
                continue;
            }
            let d = haversine(traces[u1].measurements[i1].point, traces[u2].measurements[i2].point);
            if d > d_max {
                continue;
            }
            let (ua, ia, ub, ib) = if traces[u1].user_id < traces[u2].user_id {
                (u1, i1, u2, i2)
            } else {
                (u2, i2, u1, i1)
            };
            out.entry((traces[ua].user_id.clone(), traces[ub].user_id.clone()))
                .or_default()
                .push(CoLocationEvent {
                    index_a: ia,
                    index_b: ib,
                    distance_m: d,
                    dt_s: t2 - t1,
                });
        }
    }
    for events in out.values_mut() {
        events.sort_by_key(|e| (e.index_a, e.index_b));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::GeoPoint;
    use crate::trace::{Measurement, UtcOffset};
    use proptest::prelude::*;
    use std::collections::{BTreeMap, BTreeSet};

    fn user(id: &str, pts: &[(i64, GeoPoint)]) -> UserTrace {
        let ms = pts
            .iter()
            .map(|&(t, p)| Measurement {
                user_id: id.into(),
                device_id: None,
                t,
                point: p,
                value: 0.0,
                unit: "cpm".into(),
                extras: BTreeMap::new(),
            })
            .collect();
        UserTrace::new(id, UtcOffset::default(), ms)
    }

    fn base() -> GeoPoint {
        GeoPoint::new(35.0, 139.0).unwrap()
    }

    #[test]
    fn same_place_same_time() {
        let a = user("a", &[(100, base())]);
        let b = user("b", &[(100, base())]);
        let c = detect_colocations(&[b, a], 50.0, 300).unwrap();
        assert_eq!(c.len(), 1);
        assert!(c.contains_key(&("a".to_string(), "b".to_string())));
    }

    #[test]
    fn far_apart_never() {
        let a = user("a", &[(100, base()), (200, base())]);
        let b = user("b", &[(100, base().destination(10_000.0, 0.0))]);
        assert!(detect_colocations(&[a, b], 50.0, 300).unwrap().is_empty());
    }

    #[test]
    fn threshold_semantics() {
        let a = user("a", &[(0, base())]);
        let b = user("b", &[(200, base().destination(40.0, 1.0))]);
        let c = detect_colocations(&[a.clone(), b.clone()], 50.0, 300).unwrap();
        let ev = &c[&("a".to_string(), "b".to_string())][0];
        assert_eq!(ev.dt_s, 200);
        assert!((ev.distance_m - 40.0).abs() < 1e-6);
        assert!(detect_colocations(&[a.clone(), b.clone()], 30.0, 300).unwrap().is_empty());
        assert!(detect_colocations(&[a, b], 50.0, 100).unwrap().is_empty());
    }

    fn pairs(c: &CoLocations) -> BTreeSet<(String, String)> {
        c.keys().cloned().collect()
    }

    proptest! {
        #[test]
        fn symmetric_and_monotone(
            pts in proptest::collection::vec((0usize..4, 0i64..2000, 0.0f64..300.0, 0.0f64..std::f64::consts::TAU), 2..40),
            d in 0.0f64..200.0, t in 0i64..600,
        ) {
            let mut per_user: Vec<Vec<(i64, GeoPoint)>> = vec![Vec::new(); 4];
            for (u, ts, r, b) in pts {
                per_user[u].push((ts, base().destination(r, b)));
            }
            let traces: Vec<UserTrace> = per_user
                .iter()
                .enumerate()
                .map(|(i, p)| user(&format!("u{i}"), p))
                .collect();
            let fwd = detect_colocations(&traces, d, t).unwrap();
            let mut rev_traces = traces.clone();
            rev_traces.reverse();
            let rev = detect_colocations(&rev_traces, d, t).unwrap();
            prop_assert_eq!(pairs(&fwd), pairs(&rev));
            let looser = detect_colocations(&traces, d * 1.5, t * 2).unwrap();
            prop_assert!(pairs(&fwd).is_subset(&pairs(&looser)));
        }
    }
}
