//! DBSCAN over points in any fixed dimension, with k-d tree neighbor
//! queries.
//!
//! Border points reachable from several clusters join the cluster whose
//! lowest-index core point comes first, which is what the classic
//! index-order expansion produces.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::index::KdTree;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbscanParams {
    /// Neighborhood radius in meters.
    pub eps: f64,
    pub min_pts: usize,
}

impl DbscanParams {
    pub fn new(min_pts: usize, eps: f64) -> Result<Self> {
        let p = Self { eps, min_pts };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps.is_finite() && self.eps > 0.0) || self.min_pts == 0 {
            return Err(Error::InvalidParameter(format!(
                "DBSCAN needs eps > 0 and min_pts >= 1 (eps={}, min_pts={})",
                self.eps, self.min_pts
            )));
        }
        Ok(())
    }
}

/// Cluster labels, `None` for noise. Labels are dense, starting at 0.
pub fn dbscan<const D: usize>(points: &[[f64; D]], params: &DbscanParams) -> Vec<Option<usize>> {
    dbscan_weighted(points, &vec![1; points.len()], params)
}

/// DBSCAN where each point stands for `weights[i]` coincident points.
/// Equivalent to running [`dbscan`] on the expanded multiset.
pub fn dbscan_weighted<const D: usize>(
    points: &[[f64; D]],
    weights: &[usize],
    params: &DbscanParams,
) -> Vec<Option<usize>> {
    assert_eq!(points.len(), weights.len(), "one weight per point");
    let n = points.len();
    let tree = KdTree::build(points);
    let is_core: Vec<bool> = (0..n)
        .map(|i| {
            weights[i] >= params.min_pts
                || tree
                    .within_radius(&points[i], params.eps)
                    .iter()
                    .map(|&j| weights[j])
                    .sum::<usize>()
                    >= params.min_pts
        })
        .collect();

    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut next = 0;
    let mut queue = VecDeque::new();
    for start in 0..n {
        if labels[start].is_some() || !is_core[start] {
            continue;
        }
        let label = next;
        next += 1;
        labels[start] = Some(label);
        queue.push_back(start);
        while let Some(q) = queue.pop_front() {
            for nb in tree.within_radius(&points[q], params.eps) {
                if labels[nb].is_none() {
                    labels[nb] = Some(label);
                    if is_core[nb] {
                        queue.push_back(nb);
                    }
                }
            }
        }
    }
    labels
}
