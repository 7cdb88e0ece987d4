//! Greatest convex minorant of the rate curve under a rate budget, with the
//! two-point time-sharing certificate.

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::outer::{search_c, Instance, OuterOptions, OuterResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub rate: f64,
    /// `None` when the search failed at this rate.
    pub value: Option<f64>,
    pub result: Option<OuterResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeCertificate {
    pub alpha: f64,
    pub r1: f64,
    pub r2: f64,
    pub c1: f64,
    pub c2: f64,
    pub value: f64,
    /// The query rate exceeded the grid and was lowered to its maximum.
    pub clamped: bool,
}

impl EnvelopeCertificate {
    fn single(r: f64, c: f64, clamped: bool) -> Self {
        Self {
            alpha: 1.0,
            r1: r,
            r2: r,
            c1: c,
            c2: c,
            value: c,
            clamped,
        }
    }

    /// Rate spent by the mixture.
    pub fn budget(&self) -> f64 {
        self.alpha * self.r1 + (1.0 - self.alpha) * self.r2
    }
}

/// `n` evenly spaced rates on `[0, max]`, both ends exact.
pub fn default_grid(max: f64, n: usize) -> Vec<f64> {
    if n <= 1 || max <= 0.0 {
        return vec![0.0];
    }
    let mut g: Vec<f64> = (0..n).map(|i| max * i as f64 / (n - 1) as f64).collect();
    g[n - 1] = max;
    g
}

pub fn build_curve(inst: &Instance, grid: &[f64], opts: &OuterOptions) -> Result<Vec<CurvePoint>> {
    if grid.is_empty() {
        return Err(Error::Input("empty rate grid".into()));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) || !(grid[0] >= 0.0) {
        return Err(Error::Input(
            "rate grid must be ascending and non-negative".into(),
        ));
    }
    let point = |&rate: &f64| match search_c(inst, rate, opts) {
        Ok(r) => CurvePoint {
            rate,
            value: Some(r.value),
            result: Some(r),
            error: None,
        },
        Err(e) => CurvePoint {
            rate,
            value: None,
            result: None,
            error: Some(e.to_string()),
        },
    };
    #[cfg(feature = "parallel")]
    let points: Vec<CurvePoint> = grid.par_iter().map(point).collect();
    #[cfg(not(feature = "parallel"))]
    let points: Vec<CurvePoint> = grid.iter().map(point).collect();
    if points.iter().all(|p| p.value.is_none()) {
        return Err(Error::Convergence {
            context: format!(
                "every grid point failed: {}",
                points[0].error.as_deref().unwrap_or("unknown")
            ),
            residual: f64::NAN,
        });
    }
    Ok(points)
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Vertices of the lower convex hull, by increasing rate.
pub fn lower_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    // keep the lowest value at each rate
    pts.dedup_by(|b, a| a.0 == b.0);
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for p in pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull
}

/// Minimum of `alpha C(r1) + (1 - alpha) C(r2)` over grid rates with
/// `alpha r1 + (1 - alpha) r2 <= rate`.
pub fn convexify(points: &[(f64, f64)], rate: f64) -> Result<EnvelopeCertificate> {
    let valid: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|(r, c)| r.is_finite() && c.is_finite())
        .collect();
    if valid.is_empty() {
        return Err(Error::Input("no valid curve points".into()));
    }
    if !(rate >= 0.0) {
        return Err(Error::Input(format!("rate {rate} must be non-negative")));
    }
    let lo = valid.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    if rate < lo {
        return Err(Error::Input(format!(
            "rate {rate} is below the grid start {lo}"
        )));
    }
    let hi = valid.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let clamped = rate > hi;
    let rate = rate.min(hi);
    let hull = lower_hull(&valid);

    // best single point within budget; among equal values the one closest to
    // the query rate
    let mut cert = valid
        .iter()
        .filter(|p| p.0 <= rate)
        .min_by(|a, b| a.1.total_cmp(&b.1).then(b.0.total_cmp(&a.0)))
        .map(|&(r, c)| EnvelopeCertificate::single(r, c, clamped))
        .expect("the lowest rate is within budget");

    // the hull segment through the query rate
    if let Some(k) = hull.windows(2).position(|w| w[0].0 < rate && rate < w[1].0) {
        let ((r1, c1), (r2, c2)) = (hull[k], hull[k + 1]);
        let alpha = (r2 - rate) / (r2 - r1);
        let value = alpha * c1 + (1.0 - alpha) * c2;
        if value < cert.value {
            cert = EnvelopeCertificate {
                alpha,
                r1,
                r2,
                c1,
                c2,
                value,
                clamped,
            };
        }
    }
    Ok(cert)
}

/// The envelope at every rate of `points`.
pub fn envelope_at_grid(points: &[(f64, f64)]) -> Result<Vec<EnvelopeCertificate>> {
    points.iter().map(|&(r, _)| convexify(points, r)).collect()
}
