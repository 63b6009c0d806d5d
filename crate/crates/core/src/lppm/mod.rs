//! Location-privacy-preserving mechanisms.
//!
//! Six defenses: geo-indistinguishability (GeoInd), GeoInd with optimal
//! remapping, Release-GeoInd, random hiding, release hiding and rounding.
//! Every mechanism keeps measurement values and timestamps; only the
//! reported coordinates, or the presence of a measurement, change.

pub mod noise;
pub mod remap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{haversine, round_coords, GeoPoint};
use crate::seed::{derive_seed, rng_from_seed};
use crate::trace::UserTrace;

pub use noise::{lambert_w_minus1, sample_planar_laplace, Displacement, PlanarLaplace};
pub use remap::{build_prior, candidate_radius, geometric_median, remap_optimal, Prior};

/// Default privacy level `l = ln(1.6)`.
pub fn default_privacy_level() -> f64 {
    1.6f64.ln()
}

/// Slack on movement thresholds so points placed exactly `z` meters apart
/// are not lost to rounding in the distance computation.
pub const DISTANCE_SLACK_M: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoIndConfig {
    #[serde(default = "default_privacy_level")]
    pub l: f64,
    /// Radius in meters.
    pub r: f64,
}

impl GeoIndConfig {
    pub fn new(l: f64, r: f64) -> Result<Self> {
        let cfg = Self { l, r };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_radius(r: f64) -> Result<Self> {
        Self::new(default_privacy_level(), r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.l.is_finite() && self.l > 0.0 && self.r.is_finite() && self.r > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "geo-indistinguishability needs l > 0 and r > 0 (l={}, r={})",
                self.l, self.r
            )));
        }
        Ok(())
    }

    /// Privacy parameter per meter, `l / r`.
    pub fn epsilon(&self) -> f64 {
        self.l / self.r
    }

    fn distribution(&self) -> Result<PlanarLaplace> {
        PlanarLaplace::new(self.epsilon())
            .ok_or_else(|| Error::InvalidParameter("epsilon must be positive".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReleaseGeoIndConfig {
    pub base: GeoIndConfig,
    /// Movement threshold in meters.
    pub z: f64,
}

impl ReleaseGeoIndConfig {
    pub fn new(base: GeoIndConfig, z: f64) -> Result<Self> {
        let cfg = Self { base, z };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if !(self.z.is_finite() && self.z > 0.0) {
            return Err(Error::InvalidParameter(format!("release threshold must be > 0, got {}", self.z)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum HidingConfig {
    Random { keep_fraction: f64 },
    Release { x: f64 },
}

impl HidingConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            HidingConfig::Random { keep_fraction } if !(keep_fraction > 0.0 && keep_fraction <= 1.0) => {
                Err(Error::InvalidParameter(format!("keep_fraction must be in (0, 1], got {keep_fraction}")))
            }
            HidingConfig::Release { x } if !(x.is_finite() && x > 0.0) => {
                Err(Error::InvalidParameter(format!("release distance must be > 0, got {x}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundingConfig {
    pub decimals: u32,
}

impl RoundingConfig {
    pub fn new(decimals: u32) -> Result<Self> {
        let cfg = Self { decimals };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=4).contains(&self.decimals) {
            return Err(Error::InvalidParameter(format!(
                "rounding decimals must be 2, 3 or 4, got {}",
                self.decimals
            )));
        }
        Ok(())
    }
}

/// A mechanism together with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Mechanism {
    Identity,
    GeoInd(GeoIndConfig),
    GeoIndOr(GeoIndConfig),
    ReleaseGeoInd(ReleaseGeoIndConfig),
    Hiding(HidingConfig),
    Rounding(RoundingConfig),
}

/// Output of a mechanism: the reported trace plus, for each reported
/// measurement, its index in the input trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protected {
    pub trace: UserTrace,
    pub source_index: Vec<usize>,
}

impl Protected {
    fn aligned(trace: UserTrace) -> Self {
        let n = trace.len();
        Self {
            trace,
            source_index: (0..n).collect(),
        }
    }

    pub fn hidden_count(&self, original_len: usize) -> usize {
        original_len - self.source_index.len()
    }
}

impl Mechanism {
    pub fn validate(&self) -> Result<()> {
        match self {
            Mechanism::Identity => Ok(()),
            Mechanism::GeoInd(c) | Mechanism::GeoIndOr(c) => c.validate(),
            Mechanism::ReleaseGeoInd(c) => c.validate(),
            Mechanism::Hiding(c) => c.validate(),
            Mechanism::Rounding(c) => c.validate(),
        }
    }

    /// Named parameterizations used in the evaluation grid.
    pub fn preset(name: &str) -> Option<Mechanism> {
        let (kind, param) = match name.rsplit_once('-') {
            Some((k, p)) => (k, p.parse::<u32>().ok()?),
            None if name == "identity" => return Some(Mechanism::Identity),
            None => return None,
        };
        let geo = |r: u32| GeoIndConfig::with_radius(r as f64).ok();
        let m = match (kind, param) {
            ("geoind", r @ (50 | 150 | 300)) => Mechanism::GeoInd(geo(r)?),
            ("geoind-or", r @ (50 | 150 | 300)) => Mechanism::GeoIndOr(geo(r)?),
            ("release-geoind", z @ (30 | 60 | 90)) => Mechanism::ReleaseGeoInd(ReleaseGeoIndConfig {
                base: geo(50)?,
                z: z as f64,
            }),
            ("random-hiding", k @ (40 | 60 | 80)) => Mechanism::Hiding(HidingConfig::Random {
                keep_fraction: k as f64 / 100.0,
            }),
            ("release-hiding", x @ (30 | 60 | 90)) => Mechanism::Hiding(HidingConfig::Release { x: x as f64 }),
            ("rounding", d @ 2..=4) => Mechanism::Rounding(RoundingConfig { decimals: d }),
            _ => return None,
        };
        Some(m)
    }

    pub fn preset_names() -> Vec<&'static str> {
        vec![
            "identity",
            "geoind-50",
            "geoind-150",
            "geoind-300",
            "geoind-or-50",
            "geoind-or-150",
            "geoind-or-300",
            "release-geoind-30",
            "release-geoind-60",
            "release-geoind-90",
            "random-hiding-40",
            "random-hiding-60",
            "random-hiding-80",
            "release-hiding-30",
            "release-hiding-60",
            "release-hiding-90",
            "rounding-2",
            "rounding-3",
            "rounding-4",
        ]
    }

    pub fn is_hiding(&self) -> bool {
        matches!(self, Mechanism::Hiding(_))
    }

    /// Short label, e.g. `geoind-50`.
    pub fn label(&self) -> String {
        match self {
            Mechanism::Identity => "identity".into(),
            Mechanism::GeoInd(c) => format!("geoind-{}", c.r),
            Mechanism::GeoIndOr(c) => format!("geoind-or-{}", c.r),
            Mechanism::ReleaseGeoInd(c) => format!("release-geoind-{}", c.z),
            Mechanism::Hiding(HidingConfig::Random { keep_fraction }) => {
                format!("random-hiding-{}", (keep_fraction * 100.0).round())
            }
            Mechanism::Hiding(HidingConfig::Release { x }) => format!("release-hiding-{x}"),
            Mechanism::Rounding(c) => format!("rounding-{}", c.decimals),
        }
    }

    /// Applies the mechanism to one trace. Randomized mechanisms draw from
    /// a stream derived from `seed` and the trace's user id.
    pub fn apply(&self, trace: &UserTrace, seed: u64, prior: Option<&Prior>) -> Result<Protected> {
        self.validate()?;
        match self {
            Mechanism::Identity => Ok(Protected::aligned(trace.clone())),
            Mechanism::GeoInd(c) => Ok(Protected::aligned(apply_geoind(trace, c, seed)?)),
            Mechanism::GeoIndOr(c) => {
                let prior = prior.ok_or_else(|| {
                    Error::InvalidParameter("optimal remapping requires a prior".into())
                })?;
                Ok(Protected::aligned(apply_geoind_or(trace, c, prior, seed)?))
            }
            Mechanism::ReleaseGeoInd(c) => Ok(Protected::aligned(apply_release_geoind(trace, c, seed)?)),
            Mechanism::Hiding(HidingConfig::Random { keep_fraction }) => {
                apply_random_hiding(trace, *keep_fraction, seed)
            }
            Mechanism::Hiding(HidingConfig::Release { x }) => apply_release_hiding(trace, *x),
            Mechanism::Rounding(c) => Ok(Protected::aligned(apply_rounding(trace, c)?)),
        }
    }
}

fn user_rng(seed: u64, trace: &UserTrace, purpose: &str) -> rand_chacha::ChaCha12Rng {
    rng_from_seed(derive_seed(seed, &format!("{purpose}/{}", trace.user_id)))
}

fn displace(p: GeoPoint, d: Displacement) -> GeoPoint {
    p.destination(d.distance, d.angle)
}

/// Adds independent planar-Laplace noise to every location.
pub fn apply_geoind(trace: &UserTrace, cfg: &GeoIndConfig, seed: u64) -> Result<UserTrace> {
    let dist = cfg.distribution()?;
    let mut rng = user_rng(seed, trace, "geoind");
    let ms = trace
        .measurements
        .iter()
        .map(|m| m.with_point(displace(m.point, dist.sample(&mut rng))))
        .collect();
    Ok(trace.with_measurements(ms))
}

/// GeoInd followed by optimal remapping of every noisy point.
pub fn apply_geoind_or(trace: &UserTrace, cfg: &GeoIndConfig, prior: &Prior, seed: u64) -> Result<UserTrace> {
    let noisy = apply_geoind(trace, cfg, seed)?;
    let ms = noisy
        .measurements
        .iter()
        .map(|m| m.with_point(remap_optimal(m.point, prior, cfg)))
        .collect();
    Ok(trace.with_measurements(ms))
}

/// Reports a fresh noisy location only after the user has moved at least
/// `z` meters (true positions) from the point that triggered the previous
/// release; otherwise repeats the last reported location.
pub fn apply_release_geoind(trace: &UserTrace, cfg: &ReleaseGeoIndConfig, seed: u64) -> Result<UserTrace> {
    cfg.validate()?;
    let dist = cfg.base.distribution()?;
    let mut rng = user_rng(seed, trace, "release-geoind");
    let mut anchor: Option<(GeoPoint, GeoPoint)> = None;
    let ms = trace
        .measurements
        .iter()
        .map(|m| {
            let reported = match anchor {
                Some((trigger, last)) if haversine(trigger, m.point) < cfg.z - DISTANCE_SLACK_M => last,
                _ => {
                    let fresh = displace(m.point, dist.sample(&mut rng));
                    anchor = Some((m.point, fresh));
                    fresh
                }
            };
            m.with_point(reported)
        })
        .collect();
    Ok(trace.with_measurements(ms))
}

/// Keeps each measurement independently with probability `keep_fraction`.
pub fn apply_random_hiding(trace: &UserTrace, keep_fraction: f64, seed: u64) -> Result<Protected> {
    HidingConfig::Random { keep_fraction }.validate()?;
    let mut rng = user_rng(seed, trace, "random-hiding");
    let mut kept = Vec::new();
    let mut idx = Vec::new();
    for (i, m) in trace.measurements.iter().enumerate() {
        if keep_fraction >= 1.0 || rng.random_bool(keep_fraction) {
            kept.push(m.clone());
            idx.push(i);
        }
    }
    Ok(Protected {
        trace: trace.with_measurements(kept),
        source_index: idx,
    })
}

/// Releases a location only if it is at least `x` meters from the last
/// released one, or falls on a different local day.
pub fn apply_release_hiding(trace: &UserTrace, x: f64) -> Result<Protected> {
    HidingConfig::Release { x }.validate()?;
    let off = trace.utc_offset;
    let mut last: Option<(GeoPoint, i64)> = None;
    let mut kept = Vec::new();
    let mut idx = Vec::new();
    for (i, m) in trace.measurements.iter().enumerate() {
        let day = off.local_day(m.t);
        let release = match last {
            None => true,
            Some((p, d)) => d != day || haversine(p, m.point) >= x - DISTANCE_SLACK_M,
        };
        if release {
            last = Some((m.point, day));
            kept.push(m.clone());
            idx.push(i);
        }
    }
    Ok(Protected {
        trace: trace.with_measurements(kept),
        source_index: idx,
    })
}

pub fn apply_rounding(trace: &UserTrace, cfg: &RoundingConfig) -> Result<UserTrace> {
    cfg.validate()?;
    let ms = trace
        .measurements
        .iter()
        .map(|m| Ok(m.with_point(round_coords(m.point, cfg.decimals)?)))
        .collect::<Result<_>>()?;
    Ok(trace.with_measurements(ms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{Measurement, UtcOffset};
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn meas(t: i64, p: GeoPoint) -> Measurement {
        Measurement {
            user_id: "u".into(),
            device_id: None,
            t,
            point: p,
            value: t as f64 * 0.5,
            unit: "cpm".into(),
            extras: BTreeMap::new(),
        }
    }

    fn base() -> GeoPoint {
        GeoPoint::new(35.6895, 139.6917).unwrap()
    }

    fn stationary(n: usize) -> UserTrace {
        UserTrace::new("u", UtcOffset::default(), (0..n).map(|i| meas(i as i64 * 10, base())).collect())
    }

    #[test]
    fn epsilon_values() {
        let l = default_privacy_level();
        for (r, e) in [(50.0, 0.00940), (150.0, 0.00313), (300.0, 0.00157)] {
            let c = GeoIndConfig::with_radius(r).unwrap();
            assert_eq!(c.epsilon(), l / r);
            assert!((c.epsilon() - e).abs() < 5e-6);
        }
        assert!(GeoIndConfig::new(0.0, 50.0).is_err());
        assert!(GeoIndConfig::new(1.0, -5.0).is_err());
    }

    #[test]
    fn geoind_empty_and_deterministic() {
        let cfg = GeoIndConfig::with_radius(50.0).unwrap();
        let empty = stationary(0);
        assert!(apply_geoind(&empty, &cfg, 1).unwrap().is_empty());
        let one = stationary(1);
        assert_eq!(apply_geoind(&one, &cfg, 3).unwrap(), apply_geoind(&one, &cfg, 3).unwrap());
        assert_ne!(apply_geoind(&one, &cfg, 3).unwrap(), apply_geoind(&one, &cfg, 4).unwrap());
    }

    #[test]
    fn geoind_mean_displacement() {
        let cfg = GeoIndConfig::with_radius(50.0).unwrap();
        let t = stationary(100_000);
        let out = apply_geoind(&t, &cfg, 17).unwrap();
        let mean: f64 = out.measurements.iter().map(|m| haversine(base(), m.point)).sum::<f64>() / t.len() as f64;
        assert!((mean - 212.8).abs() / 212.8 < 0.02, "mean={mean}");
    }

    #[test]
    fn release_geoind_stationary_repeats() {
        let cfg = ReleaseGeoIndConfig::new(GeoIndConfig::with_radius(50.0).unwrap(), 30.0).unwrap();
        let out = apply_release_geoind(&stationary(50), &cfg, 9).unwrap();
        assert_eq!(out.len(), 50);
        let first = out.measurements[0].point;
        assert!(out.measurements.iter().all(|m| m.point == first));
        assert_ne!(first, base());
    }

    #[test]
    fn release_geoind_exact_threshold_refreshes() {
        let cfg = ReleaseGeoIndConfig::new(GeoIndConfig::with_radius(50.0).unwrap(), 30.0).unwrap();
        let ms: Vec<Measurement> = (0..10).map(|i| meas(i, base().destination(30.0 * i as f64, 0.0))).collect();
        let t = UserTrace::new("u", UtcOffset::default(), ms);
        let out = apply_release_geoind(&t, &cfg, 1).unwrap();
        for w in out.measurements.windows(2) {
            assert_ne!(w[0].point, w[1].point);
        }
    }

    #[test]
    fn release_geoind_uses_trigger_not_previous_point() {
        let cfg = ReleaseGeoIndConfig::new(GeoIndConfig::with_radius(50.0).unwrap(), 30.0).unwrap();
        // creeping 10 m per step: fresh noise every third step
        let ms: Vec<Measurement> = (0..7).map(|i| meas(i, base().destination(10.0 * i as f64, 0.0))).collect();
        let t = UserTrace::new("u", UtcOffset::default(), ms);
        let out = apply_release_geoind(&t, &cfg, 1).unwrap();
        let p: Vec<GeoPoint> = out.measurements.iter().map(|m| m.point).collect();
        assert_eq!(p[0], p[1]);
        assert_eq!(p[1], p[2]);
        assert_ne!(p[2], p[3]);
        assert_eq!(p[3], p[5]);
        assert_ne!(p[5], p[6]);
    }

    #[test]
    fn random_hiding_rates() {
        let t = stationary(100_000);
        let out = apply_random_hiding(&t, 0.6, 2).unwrap();
        let k = out.trace.len() as f64;
        assert!((k - 60_000.0).abs() <= 600.0, "kept {k}");
        assert_eq!(apply_random_hiding(&t, 1.0, 2).unwrap().trace, t);
        assert!(apply_random_hiding(&stationary(0), 0.4, 1).unwrap().trace.is_empty());
        assert!(apply_random_hiding(&t, 0.0, 1).is_err());
    }

    #[test]
    fn release_hiding_rule_trace() {
        let day = 86_400;
        let p0 = base();
        let ms = vec![
            meas(1_000, p0),
            meas(1_100, p0.destination(20.0, 0.0)),
            meas(1_200, p0.destination(50.0, 0.0)),
            meas(day + 1_000, p0.destination(55.0, 0.0)),
        ];
        let t = UserTrace::new("u", UtcOffset::default(), ms);
        let out = apply_release_hiding(&t, 30.0).unwrap();
        assert_eq!(out.source_index, vec![0, 2, 3]);
        assert_eq!(out.hidden_count(4), 1);

        let spread: Vec<Measurement> = (0..5).map(|i| meas(i, p0.destination(100.0 * i as f64, 1.0))).collect();
        let t = UserTrace::new("u", UtcOffset::default(), spread);
        assert_eq!(apply_release_hiding(&t, 90.0).unwrap().trace, t);
    }

    #[test]
    fn rounding_mechanism() {
        let t = UserTrace::new("u", UtcOffset::default(), vec![meas(0, base())]);
        let r2 = apply_rounding(&t, &RoundingConfig::new(2).unwrap()).unwrap();
        assert_eq!(r2.measurements[0].point, GeoPoint::new(35.69, 139.69).unwrap());
        assert_eq!(apply_rounding(&r2, &RoundingConfig::new(2).unwrap()).unwrap(), r2);
        assert!(RoundingConfig::new(5).is_err());
    }

    #[test]
    fn presets_cover_grid() {
        for name in Mechanism::preset_names() {
            let m = Mechanism::preset(name).unwrap_or_else(|| panic!("{name}"));
            assert_eq!(m.label(), name);
            m.validate().unwrap();
        }
        assert!(Mechanism::preset("geoind-70").is_none());
        assert!(Mechanism::preset("bogus").is_none());
        let json = serde_json::to_string(&Mechanism::preset("release-geoind-60").unwrap()).unwrap();
        let back: Mechanism = serde_json::from_str(&json).unwrap();
        assert_eq!(back.label(), "release-geoind-60");
    }

    #[test]
    fn geoind_or_needs_prior() {
        let m = Mechanism::preset("geoind-or-50").unwrap();
        assert!(m.apply(&stationary(3), 1, None).is_err());
        let prior = build_prior([&stationary(3)]).unwrap();
        let out = m.apply(&stationary(3), 1, Some(&prior)).unwrap();
        assert_eq!(out.trace.len(), 3);
    }

    fn arb_trace() -> impl Strategy<Value = UserTrace> {
        proptest::collection::vec((0i64..200_000, -0.01f64..0.01, -0.01f64..0.01), 0..60).prop_map(|rows| {
            let ms = rows
                .into_iter()
                .map(|(t, a, b)| meas(t, GeoPoint::new(35.0 + a, 139.0 + b).unwrap()))
                .collect();
            UserTrace::new("p", UtcOffset::default(), ms)
        })
    }

    proptest! {
        #[test]
        fn mechanisms_preserve_values_and_times(t in arb_trace(), seed in 0u64..1000) {
            let prior = build_prior([&t]).ok();
            for name in Mechanism::preset_names() {
                let m = Mechanism::preset(name).unwrap();
                if prior.is_none() && matches!(m, Mechanism::GeoIndOr(_)) {
                    continue;
                }
                let out = m.apply(&t, seed, prior.as_ref()).unwrap();
                prop_assert_eq!(out.trace.len(), out.source_index.len());
                if !m.is_hiding() {
                    prop_assert_eq!(out.trace.len(), t.len());
                }
                prop_assert!(out.source_index.windows(2).all(|w| w[0] < w[1]));
                for (m_out, &src) in out.trace.measurements.iter().zip(&out.source_index) {
                    let m_in = &t.measurements[src];
                    prop_assert_eq!(m_out.t, m_in.t);
                    prop_assert_eq!(m_out.value, m_in.value);
                    if m.is_hiding() {
                        prop_assert_eq!(m_out.point, m_in.point);
                    }
                }
                let again = m.apply(&t, seed, prior.as_ref()).unwrap();
                prop_assert_eq!(
                    serde_json::to_string(&out).unwrap(),
                    serde_json::to_string(&again).unwrap()
                );
            }
        }
    }
}
