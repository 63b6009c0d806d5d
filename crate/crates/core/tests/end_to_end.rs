use std::collections::BTreeSet;

use geopriv_core::attack::{infer_areas, InferOptions, Schedule};
use geopriv_core::ingest::{filter_users, parse_safecast, write_safecast, MAX_SPEED_KMH, MIN_POINTS};
use geopriv_core::lppm::{build_prior, Mechanism};
use geopriv_core::metrics::{anchor_recall, spatial_gain};
use geopriv_core::synth::{generate_cohort, Cohort, CohortTemplate};
use geopriv_core::utility::haversine_error_stats;
use geopriv_core::GeoPoint;

fn cohort() -> Cohort {
    generate_cohort(5, &CohortTemplate::default_city(), 17).unwrap()
}

#[test]
fn csv_round_trip_then_attack() {
    let c = cohort();
    let mut buf = Vec::new();
    write_safecast(&mut buf, &c.traces).unwrap();
    let parsed = parse_safecast(buf.as_slice(), 0.0, &BTreeSet::new()).unwrap();
    assert_eq!(parsed.report.malformed_rows, 0);
    let (traces, report) = filter_users(parsed.items, MIN_POINTS, MAX_SPEED_KMH);
    assert_eq!(traces.len(), 5, "{report:?}");

    let opts = InferOptions {
        temporal_filter: true,
        ..InferOptions::default()
    };
    for (t, g) in traces.iter().zip(&c.truth) {
        assert_eq!(t.user_id, g.user_id);
        let orig = c.traces.iter().find(|o| o.user_id == t.user_id).unwrap();
        assert_eq!(t.len(), orig.len());
        for (a, b) in t.measurements.iter().zip(&orig.measurements) {
            assert_eq!(a.t, b.t);
            assert!(geopriv_core::haversine(a.point, b.point) < 0.01);
        }
        let r = infer_areas(t, &Schedule::relaxed(), &opts).unwrap();
        let anchors: Vec<GeoPoint> = g.anchors.iter().map(|a| a.1).collect();
        assert_eq!(anchor_recall(&r.area, &anchors), Some(1.0), "{}", t.user_id);
    }
}

#[test]
fn every_preset_keeps_values_and_times() {
    let c = cohort();
    let prior = build_prior(&c.traces[..2]).unwrap();
    for name in Mechanism::preset_names() {
        let m = Mechanism::preset(name).unwrap();
        for t in &c.traces[2..] {
            let p = m.apply(t, 4, Some(&prior)).unwrap();
            assert_eq!(p.trace.len(), p.source_index.len());
            if !m.is_hiding() {
                assert_eq!(p.trace.len(), t.len(), "{name}");
            }
            assert!(p.source_index.windows(2).all(|w| w[0] < w[1]), "{name}");
            for (out, &i) in p.trace.measurements.iter().zip(&p.source_index) {
                assert_eq!(out.t, t.measurements[i].t, "{name}");
                assert_eq!(out.value, t.measurements[i].value, "{name}");
            }
            let d = haversine_error_stats(t, &p).unwrap();
            if m.is_hiding() || name == "identity" {
                assert!(d.distances.iter().all(|&x| x == 0.0), "{name}");
            }
            assert_eq!(m.apply(t, 4, Some(&prior)).unwrap(), p, "{name} is not deterministic");
        }
    }
}

#[test]
fn identity_gain_is_perfect() {
    let c = cohort();
    for t in &c.traces {
        let before = infer_areas(t, &Schedule::relaxed(), &InferOptions::default()).unwrap();
        let p = Mechanism::Identity.apply(t, 0, None).unwrap();
        let after = infer_areas(&p.trace, &Schedule::relaxed(), &InferOptions::default()).unwrap();
        let g = spatial_gain(&before.area, &after.area).unwrap();
        assert_eq!((g.precision, g.recall), (Some(1.0), Some(1.0)));
    }
}
