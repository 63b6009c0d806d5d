//! Optimal remapping of noisy locations against a location prior.
//!
//! Candidate locations are prior cells within the 99th percentile of the
//! noise distance. Each is weighted by its posterior given the noisy
//! report, and the report is replaced by the posterior-weighted geometric
//! median of the candidates.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geo::{chord_for_arc, haversine, round_value, to_ecef, GeoPoint, LocalFrame, Planar};
use crate::index::KdTree;
use crate::lppm::noise::PlanarLaplace;
use crate::lppm::GeoIndConfig;
use crate::trace::UserTrace;

/// Decimals used to merge nearby locations into prior cells.
pub const PRIOR_DECIMALS: u32 = 3;

/// Quantile of the noise distance that bounds the candidate search.
pub const CANDIDATE_QUANTILE: f64 = 0.99;

pub const WEISZFELD_TOLERANCE_M: f64 = 1e-6;
pub const WEISZFELD_MAX_ITER: usize = 200;
const COINCIDENCE_M: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct PriorCell {
    pub point: GeoPoint,
    pub count: u64,
    pub probability: f64,
}

/// Empirical distribution of rounded locations with an ECEF index.
#[derive(Debug, Clone)]
pub struct Prior {
    cells: Vec<PriorCell>,
    index: KdTree<3>,
}

impl Prior {
    pub fn cells(&self) -> &[PriorCell] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Cells within great-circle distance `radius_m` of `p`, paired with
    /// that distance.
    pub fn within(&self, p: GeoPoint, radius_m: f64) -> Vec<(usize, f64)> {
        // small slack on the chord so boundary cells survive to the exact check
        let chord = chord_for_arc(radius_m) * (1.0 + 1e-9) + 1e-6;
        self.index
            .within_radius(&to_ecef(p).as_array(), chord)
            .into_iter()
            .filter_map(|i| {
                let d = haversine(p, self.cells[i].point);
                (d <= radius_m).then_some((i, d))
            })
            .collect()
    }
}

/// Builds the prior from training traces: coordinates rounded to three
/// decimals, probability proportional to occurrence count.
pub fn build_prior<'a, I>(training: I) -> Result<Prior>
where
    I: IntoIterator<Item = &'a UserTrace>,
{
    let scale = 10f64.powi(PRIOR_DECIMALS as i32);
    let mut counts: BTreeMap<(i64, i64), u64> = BTreeMap::new();
    let mut total = 0u64;
    for trace in training {
        for m in &trace.measurements {
            let key = (
                (m.point.lat() * scale).round() as i64,
                (m.point.lon() * scale).round() as i64,
            );
            *counts.entry(key).or_default() += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::EmptyInput("prior training set"));
    }
    let cells: Vec<PriorCell> = counts
        .into_iter()
        .map(|((la, lo), count)| {
            let point = GeoPoint::new(
                round_value(la as f64 / scale, PRIOR_DECIMALS),
                round_value(lo as f64 / scale, PRIOR_DECIMALS),
            )?;
            Ok(PriorCell {
                point,
                count,
                probability: count as f64 / total as f64,
            })
        })
        .collect::<Result<_>>()?;
    let ecef: Vec<[f64; 3]> = cells.iter().map(|c| to_ecef(c.point).as_array()).collect();
    Ok(Prior {
        index: KdTree::build(&ecef),
        cells,
    })
}

/// Σ wᵢ·‖y − xᵢ‖.
pub fn weighted_distance_sum(y: Planar, points: &[Planar], weights: &[f64]) -> f64 {
    points.iter().zip(weights).map(|(p, w)| w * y.dist(p)).sum()
}

/// Weighted geometric median by Weiszfeld iteration with the Vardi-Zhang
/// correction at data points.
pub fn geometric_median(points: &[Planar], weights: &[f64]) -> Result<Planar> {
    if points.is_empty() {
        return Err(Error::EmptyInput("geometric median points"));
    }
    if points.len() != weights.len() {
        return Err(Error::InvalidParameter("points and weights differ in length".into()));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::InvalidParameter("weights must be positive and finite".into()));
    }
    if points.len() == 1 {
        return Ok(points[0]);
    }

    let wsum: f64 = weights.iter().sum();
    let mut y = Planar::new(
        points.iter().zip(weights).map(|(p, w)| w * p.x).sum::<f64>() / wsum,
        points.iter().zip(weights).map(|(p, w)| w * p.y).sum::<f64>() / wsum,
    );

    for _ in 0..WEISZFELD_MAX_ITER {
        let next = weiszfeld_step(y, points, weights);
        let step = next.dist(&y);
        y = next;
        if step < WEISZFELD_TOLERANCE_M {
            break;
        }
    }

    // A median sitting on a data point is reached only sublinearly; test
    // the closest data point for optimality directly.
    let (k, _) = points
        .iter()
        .enumerate()
        .map(|(i, p)| (i, p.dist_sq(&y)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty");
    if vertex_is_optimal(k, points, weights) {
        return Ok(points[k]);
    }
    Ok(y)
}

fn weiszfeld_step(y: Planar, points: &[Planar], weights: &[f64]) -> Planar {
    let mut num_x = 0.0;
    let mut num_y = 0.0;
    let mut den = 0.0;
    let mut coincident_weight = 0.0;
    let mut rx = 0.0;
    let mut ry = 0.0;
    for (p, &w) in points.iter().zip(weights) {
        let d = y.dist(p);
        if d < COINCIDENCE_M {
            coincident_weight += w;
            continue;
        }
        num_x += w * p.x / d;
        num_y += w * p.y / d;
        den += w / d;
        rx += w * (p.x - y.x) / d;
        ry += w * (p.y - y.y) / d;
    }
    if den == 0.0 {
        return y;
    }
    let t = Planar::new(num_x / den, num_y / den);
    if coincident_weight == 0.0 {
        return t;
    }
    let r = (rx * rx + ry * ry).sqrt();
    if r <= coincident_weight {
        return y;
    }
    let a = coincident_weight / r;
    Planar::new((1.0 - a) * t.x + a * y.x, (1.0 - a) * t.y + a * y.y)
}

fn vertex_is_optimal(k: usize, points: &[Planar], weights: &[f64]) -> bool {
    let xk = points[k];
    let mut wk = 0.0;
    let mut rx = 0.0;
    let mut ry = 0.0;
    for (p, &w) in points.iter().zip(weights) {
        let d = xk.dist(p);
        if d < COINCIDENCE_M {
            wk += w;
            continue;
        }
        rx += w * (p.x - xk.x) / d;
        ry += w * (p.y - xk.y) / d;
    }
    // Only a strict optimum; on a flat optimal set the iterate is as good.
    (rx * rx + ry * ry).sqrt() < wk * (1.0 - 1e-9)
}

/// Radius containing the true location with 99% probability.
pub fn candidate_radius(cfg: &GeoIndConfig) -> f64 {
    PlanarLaplace::new(cfg.epsilon())
        .map(|d| d.radial_quantile(CANDIDATE_QUANTILE))
        .unwrap_or(0.0)
}

/// Remaps one noisy point. Returns the input unchanged when no prior cell
/// lies within the candidate radius.
pub fn remap_optimal(noisy: GeoPoint, prior: &Prior, cfg: &GeoIndConfig) -> GeoPoint {
    let radius = candidate_radius(cfg);
    let candidates = prior.within(noisy, radius);
    if candidates.is_empty() {
        return noisy;
    }
    let Ok(frame) = LocalFrame::new(noisy) else {
        return noisy;
    };
    let eps = cfg.epsilon();
    let points: Vec<Planar> = candidates
        .iter()
        .map(|&(i, _)| frame.to_local(prior.cells[i].point))
        .collect();
    let weights: Vec<f64> = candidates
        .iter()
        .map(|&(i, d)| prior.cells[i].probability * (-eps * d).exp())
        .collect();
    match geometric_median(&points, &weights) {
        Ok(m) => frame.from_local(m).unwrap_or(noisy),
        Err(_) => noisy,
    }
}
