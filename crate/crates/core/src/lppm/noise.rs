//! Planar Laplace noise for geo-indistinguishability.
//!
//! The radial distance has CDF `C(d) = 1 - (1 + eps*d) * exp(-eps*d)`, i.e.
//! a Gamma(2, 1/eps) distribution. Sampling inverts the CDF through the
//! lower branch of the Lambert W function.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::{E, PI};

/// Lower real branch `W_{-1}` of the Lambert W function on `[-1/e, 0)`.
///
/// Arguments below `-1/e` are clamped to the branch point. Evaluated by
/// Halley iteration until the update falls below 1e-12.
pub fn lambert_w_minus1(x: f64) -> f64 {
    let branch = -1.0 / E;
    if x <= branch {
        return -1.0;
    }
    if x >= 0.0 {
        return f64::NEG_INFINITY;
    }
    let mut w = if x < -0.25 {
        // series about the branch point
        let p = -(2.0 * (1.0 + E * x)).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else {
        let l1 = (-x).ln();
        let l2 = (-l1).ln();
        l1 - l2 + l2 / l1
    };
    for _ in 0..100 {
        let ew = w.exp();
        let f = w * ew - x;
        let wp1 = w + 1.0;
        if wp1 == 0.0 {
            break;
        }
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        if denom == 0.0 || !denom.is_finite() {
            break;
        }
        let step = f / denom;
        w -= step;
        if step.abs() < 1e-12 {
            break;
        }
    }
    w
}

/// Polar displacement: distance in meters and angle in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Displacement {
    pub distance: f64,
    pub angle: f64,
}

/// Planar Laplace distribution with privacy parameter `epsilon` (per meter).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarLaplace {
    epsilon: f64,
}

impl PlanarLaplace {
    pub fn new(epsilon: f64) -> Option<Self> {
        (epsilon.is_finite() && epsilon > 0.0).then_some(Self { epsilon })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn radial_cdf(&self, d: f64) -> f64 {
        if d <= 0.0 {
            return 0.0;
        }
        let ed = self.epsilon * d;
        1.0 - (1.0 + ed) * (-ed).exp()
    }

    /// `C^{-1}(p) = -(W_{-1}((p - 1)/e) + 1) / eps` for `p` in `[0, 1)`.
    pub fn radial_quantile(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        let w = lambert_w_minus1((p - 1.0) / E);
        (-(w + 1.0) / self.epsilon).max(0.0)
    }

    pub fn mean_distance(&self) -> f64 {
        2.0 / self.epsilon
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Displacement {
        let theta = rng.random::<f64>() * 2.0 * PI;
        let rho = rng.random::<f64>();
        Displacement {
            distance: self.radial_quantile(rho),
            angle: theta,
        }
    }
}

/// Draws one planar-Laplace displacement.
pub fn sample_planar_laplace<R: Rng + ?Sized>(epsilon: f64, rng: &mut R) -> Option<Displacement> {
    PlanarLaplace::new(epsilon).map(|d| d.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;

    fn bisect_quantile(eps: f64, p: f64) -> f64 {
        let cdf = |d: f64| 1.0 - (1.0 + eps * d) * (-eps * d).exp();
        let (mut lo, mut hi) = (0.0, 1.0);
        while cdf(hi) < p {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn lambert_identity() {
        for &x in &[-1.0 / E + 1e-12, -0.3, -0.2, -0.1, -1e-3, -1e-10, -1e-17] {
            let w = lambert_w_minus1(x);
            assert!(w <= -1.0);
            assert!((w * w.exp() - x).abs() <= 1e-12 * x.abs().max(1e-6), "x={x} w={w}");
        }
        assert_eq!(lambert_w_minus1(-1.0 / E), -1.0);
        assert_eq!(lambert_w_minus1(-0.5), -1.0);
    }

    #[test]
    fn zero_rho_is_zero_distance() {
        let d = PlanarLaplace::new(0.01).unwrap();
        assert_eq!(d.radial_quantile(0.0), 0.0);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &eps in &[(1.6f64).ln() / 50.0, (1.6f64).ln() / 300.0, 1.0] {
            let d = PlanarLaplace::new(eps).unwrap();
            for &p in &[0.01, 0.25, 0.5, 0.75, 0.95, 0.99, 0.999999] {
                let q = d.radial_quantile(p);
                let oracle = bisect_quantile(eps, p);
                assert!((q - oracle).abs() <= 1e-7 * oracle.max(1.0), "eps={eps} p={p}");
            }
        }
    }

    #[test]
    fn empirical_mean_matches_gamma() {
        for (r, expected) in [(50.0, 212.8), (300.0, 1276.6)] {
            let d = PlanarLaplace::new((1.6f64).ln() / r).unwrap();
            assert!((d.mean_distance() - expected).abs() < 0.1);
            let mut rng = rng_from_seed(42);
            let n = 100_000;
            let mean: f64 = (0..n).map(|_| d.sample(&mut rng).distance).sum::<f64>() / n as f64;
            assert!((mean - expected).abs() / expected < 0.02, "r={r} mean={mean}");
        }
    }

    #[test]
    fn rejects_bad_epsilon() {
        assert!(PlanarLaplace::new(0.0).is_none());
        assert!(PlanarLaplace::new(-1.0).is_none());
        assert!(PlanarLaplace::new(f64::NAN).is_none());
    }
}
