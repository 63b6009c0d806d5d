//! Splitting a large cluster into two candidate places with seeded 2-means.

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::geo::{GeoPoint, LocalFrame, Planar};
use crate::seed::rng_from_seed;

pub const RESTARTS: usize = 10;
const MAX_LLOYD_ITER: usize = 100;

/// Centroids of a 2-means split, larger subcluster first.
pub fn split_subclusters(points: &[GeoPoint], seed: u64) -> Result<[GeoPoint; 2]> {
    match points.len() {
        0 => return Err(Error::EmptyInput("cluster to split")),
        1 => return Ok([points[0], points[0]]),
        _ => {}
    }
    let n = points.len() as f64;
    let origin = GeoPoint::new(
        points.iter().map(|p| p.lat()).sum::<f64>() / n,
        points.iter().map(|p| p.lon()).sum::<f64>() / n,
    )?;
    let frame = LocalFrame::new(origin)?;
    let xy: Vec<Planar> = points.iter().map(|p| frame.to_local(*p)).collect();

    let mut rng = rng_from_seed(seed);
    let mut best: Option<(f64, [Planar; 2], [usize; 2])> = None;
    for _ in 0..RESTARTS {
        let init = sample(&mut rng, xy.len(), 2);
        let (inertia, centers, sizes) = lloyd(&xy, [xy[init.index(0)], xy[init.index(1)]]);
        if best.as_ref().is_none_or(|b| inertia < b.0) {
            best = Some((inertia, centers, sizes));
        }
    }
    let (_, centers, sizes) = best.expect("at least one restart");
    let order = if sizes[1] > sizes[0] { [1, 0] } else { [0, 1] };
    Ok([
        frame.from_local(centers[order[0]])?,
        frame.from_local(centers[order[1]])?,
    ])
}

fn lloyd(xy: &[Planar], mut centers: [Planar; 2]) -> (f64, [Planar; 2], [usize; 2]) {
    let mut assign = vec![0usize; xy.len()];
    for _ in 0..MAX_LLOYD_ITER {
        let mut changed = false;
        for (a, p) in assign.iter_mut().zip(xy) {
            let k = usize::from(p.dist_sq(&centers[1]) < p.dist_sq(&centers[0]));
            if *a != k {
                *a = k;
                changed = true;
            }
        }
        let mut sum = [Planar::default(); 2];
        let mut cnt = [0usize; 2];
        for (&a, p) in assign.iter().zip(xy) {
            sum[a].x += p.x;
            sum[a].y += p.y;
            cnt[a] += 1;
        }
        for k in 0..2 {
            if cnt[k] > 0 {
                centers[k] = Planar::new(sum[k].x / cnt[k] as f64, sum[k].y / cnt[k] as f64);
            }
        }
        if !changed {
            break;
        }
    }
    let mut sizes = [0usize; 2];
    let mut inertia = 0.0;
    for (&a, p) in assign.iter().zip(xy) {
        sizes[a] += 1;
        inertia += p.dist_sq(&centers[a]);
    }
    (inertia, centers, sizes)
}
