//! Static k-d tree over fixed-dimension points.
//!
//! Built once, queried many times: fixed-radius neighborhoods for DBSCAN
//! and the remapping prior, nearest-neighbor lookups for raster
//! interpolation.

use std::cmp::Ordering;

#[derive(Debug, Clone)]
pub struct KdTree<const D: usize> {
    points: Vec<[f64; D]>,
    // original index of the point stored at each slot
    ids: Vec<usize>,
}

#[inline]
pub fn dist_sq<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    let mut acc = 0.0;
    for k in 0..D {
        let d = a[k] - b[k];
        acc += d * d;
    }
    acc
}

impl<const D: usize> KdTree<D> {
    pub fn build(points: &[[f64; D]]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        build_rec(points, &mut order, 0);
        Self {
            points: order.iter().map(|&i| points[i]).collect(),
            ids: order,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Indices of all points at Euclidean distance `<= radius` from `query`,
    /// in ascending index order.
    pub fn within_radius(&self, query: &[f64; D], radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.radius_rec(0, self.points.len(), 0, query, radius * radius, &mut out);
        out.sort_unstable();
        out
    }

    pub fn count_within_radius(&self, query: &[f64; D], radius: f64) -> usize {
        let mut n = 0;
        self.count_rec(0, self.points.len(), 0, query, radius * radius, &mut n);
        n
    }

    fn radius_rec(
        &self,
        lo: usize,
        hi: usize,
        depth: usize,
        q: &[f64; D],
        r2: f64,
        out: &mut Vec<usize>,
    ) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let axis = depth % D;
        let p = &self.points[mid];
        if dist_sq(p, q) <= r2 {
            out.push(self.ids[mid]);
        }
        let diff = q[axis] - p[axis];
        let (near, far) = if diff <= 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.radius_rec(near.0, near.1, depth + 1, q, r2, out);
        if diff * diff <= r2 {
            self.radius_rec(far.0, far.1, depth + 1, q, r2, out);
        }
    }

    fn count_rec(&self, lo: usize, hi: usize, depth: usize, q: &[f64; D], r2: f64, n: &mut usize) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let axis = depth % D;
        let p = &self.points[mid];
        if dist_sq(p, q) <= r2 {
            *n += 1;
        }
        let diff = q[axis] - p[axis];
        let (near, far) = if diff <= 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.count_rec(near.0, near.1, depth + 1, q, r2, n);
        if diff * diff <= r2 {
            self.count_rec(far.0, far.1, depth + 1, q, r2, n);
        }
    }

    /// Nearest point to `query`. Among points at exactly equal squared
    /// distance, the one for which `prefer(a, b) == Ordering::Less` wins.
    pub fn nearest_by<F>(&self, query: &[f64; D], prefer: F) -> Option<(usize, f64)>
    where
        F: Fn(usize, usize) -> Ordering,
    {
        if self.points.is_empty() {
            return None;
        }
        let mut best: Option<(usize, f64)> = None;
        self.nearest_rec(0, self.points.len(), 0, query, &prefer, &mut best);
        best
    }

    fn nearest_rec<F>(
        &self,
        lo: usize,
        hi: usize,
        depth: usize,
        q: &[f64; D],
        prefer: &F,
        best: &mut Option<(usize, f64)>,
    ) where
        F: Fn(usize, usize) -> Ordering,
    {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let axis = depth % D;
        let p = &self.points[mid];
        let d2 = dist_sq(p, q);
        let id = self.ids[mid];
        match best {
            None => *best = Some((id, d2)),
            Some((bid, bd2)) => {
                if d2 < *bd2 || (d2 == *bd2 && prefer(id, *bid) == Ordering::Less) {
                    *best = Some((id, d2));
                }
            }
        }
        let diff = q[axis] - p[axis];
        let (near, far) = if diff <= 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.nearest_rec(near.0, near.1, depth + 1, q, prefer, best);
        let bd2 = best.map(|b| b.1).unwrap_or(f64::INFINITY);
        if diff * diff <= bd2 {
            self.nearest_rec(far.0, far.1, depth + 1, q, prefer, best);
        }
    }
}

fn build_rec<const D: usize>(points: &[[f64; D]], order: &mut [usize], depth: usize) {
    if order.len() <= 1 {
        return;
    }
    let axis = depth % D;
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a][axis]
            .total_cmp(&points[b][axis])
            .then_with(|| a.cmp(&b))
    });
    let (left, right) = order.split_at_mut(mid);
    build_rec(points, left, depth + 1);
    build_rec(points, &mut right[1..], depth + 1);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, seed: u64) -> Vec<[f64; 2]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| [rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0)])
            .collect()
    }

    #[test]
    fn radius_query_matches_scan() {
        for seed in 0..20 {
            let pts = random_points(300, seed);
            let tree = KdTree::build(&pts);
            for q in pts.iter().take(30) {
                let expected: Vec<usize> = (0..pts.len())
                    .filter(|&i| dist_sq(&pts[i], q) <= 15.0 * 15.0)
                    .collect();
                assert_eq!(tree.within_radius(q, 15.0), expected);
                assert_eq!(tree.count_within_radius(q, 15.0), expected.len());
            }
        }
    }

    #[test]
    fn nearest_matches_scan_with_ties() {
        // integer lattice produces many exact ties
        let pts: Vec<[f64; 2]> = (0..10)
            .flat_map(|i| (0..10).map(move |j| [i as f64 * 2.0, j as f64 * 2.0]))
            .collect();
        let tree = KdTree::build(&pts);
        for qi in 0..19 {
            for qj in 0..19 {
                let q = [qi as f64, qj as f64];
                let (got, _) = tree.nearest_by(&q, |a, b| a.cmp(&b)).unwrap();
                let want = (0..pts.len())
                    .min_by(|&a, &b| {
                        dist_sq(&pts[a], &q)
                            .total_cmp(&dist_sq(&pts[b], &q))
                            .then(a.cmp(&b))
                    })
                    .unwrap();
                assert_eq!(got, want);
            }
        }
    }

    #[test]
    fn empty_tree() {
        let tree: KdTree<3> = KdTree::build(&[]);
        assert!(tree.is_empty());
        assert!(tree.within_radius(&[0.0; 3], 1.0).is_empty());
        assert!(tree.nearest_by(&[0.0; 3], |a, b| a.cmp(&b)).is_none());
    }
}
