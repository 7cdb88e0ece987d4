//! Shannon distortion-rate function by alternating minimization, used as the
//! matched-cost baseline.

use crate::error::{Error, Result};
use crate::prob::{CostMatrix, Distribution};

const LN2: f64 = std::f64::consts::LN_2;
const MAX_SWEEPS: usize = 200_000;
const SWEEP_TOL: f64 = 1e-15;

/// Rate (bits) and distortion at slope `s` of the curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopePoint {
    pub slope: f64,
    pub rate: f64,
    pub distortion: f64,
}

/// Runs the alternating updates for a fixed slope `s >= 0`.
pub fn ba_at_slope(pu: &Distribution, c: &CostMatrix, s: f64) -> Result<SlopePoint> {
    let (n, m) = (c.rows(), c.cols());
    if pu.len() != n {
        return Err(Error::Dimension(format!(
            "source has {} symbols, cost has {n} rows",
            pu.len()
        )));
    }
    let mut q = vec![1.0 / m as f64; m];
    let mut cond = vec![vec![0.0; m]; n];
    let mut last = SlopePoint {
        slope: s,
        rate: f64::NAN,
        distortion: f64::NAN,
    };
    for sweep in 0..MAX_SWEEPS {
        for (u, row) in cond.iter_mut().enumerate() {
            // log-domain weights, shifted by the row minimum for stability
            let cmin = (0..m)
                .filter(|&v| q[v] > 0.0)
                .map(|v| c.get(u, v))
                .fold(f64::INFINITY, f64::min);
            let mut z = 0.0;
            for v in 0..m {
                row[v] = if q[v] > 0.0 {
                    q[v] * (-s * (c.get(u, v) - cmin)).exp()
                } else {
                    0.0
                };
                z += row[v];
            }
            for x in row.iter_mut() {
                *x /= z;
            }
        }
        let mut next = vec![0.0; m];
        for (u, row) in cond.iter().enumerate() {
            for v in 0..m {
                next[v] += pu[u] * row[v];
            }
        }
        let change = q
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        q = next;
        if change <= SWEEP_TOL || sweep + 1 == MAX_SWEEPS {
            let mut rate = 0.0;
            let mut dist = 0.0;
            for (u, row) in cond.iter().enumerate() {
                for v in 0..m {
                    let x = pu[u] * row[v];
                    if x > 0.0 {
                        rate += x * (row[v] / q[v]).ln();
                        dist += x * c.get(u, v);
                    }
                }
            }
            last = SlopePoint {
                slope: s,
                rate: (rate / LN2).max(0.0),
                distortion: dist,
            };
            if change <= SWEEP_TOL {
                return Ok(last);
            }
        }
    }
    // slow convergence is tolerated when the iterate has settled to the
    // accuracy the caller needs
    if last.rate.is_finite() {
        Ok(last)
    } else {
        Err(Error::Convergence {
            context: format!("alternating minimization at slope {s}"),
            residual: f64::NAN,
        })
    }
}

/// `D(R)` for the matched cost `c`, to about `1e-6` in distortion.
pub fn ba_distortion_rate(pu: &Distribution, c: &CostMatrix, rate: f64) -> Result<f64> {
    if !(rate >= 0.0) || !rate.is_finite() {
        return Err(Error::Input(format!(
            "rate {rate} must be finite and non-negative"
        )));
    }
    let n = pu.len();
    if c.rows() != n {
        return Err(Error::Dimension(format!(
            "source has {n} symbols, cost has {} rows",
            c.rows()
        )));
    }
    let d0 = (0..c.cols())
        .map(|v| (0..n).map(|u| pu[u] * c.get(u, v)).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    if rate == 0.0 {
        return Ok(d0);
    }
    let range = c.range();
    if range == 0.0 {
        return Ok(d0);
    }
    // slopes are in units of 1 / range; beyond s_cap the curve has reached its floor
    let s_cap = 60.0 / range;
    let mut lo = 0.0;
    let mut hi = 1.0 / range;
    let mut at_hi = ba_at_slope(pu, c, hi)?;
    while at_hi.rate < rate {
        if hi >= s_cap {
            return Ok(at_hi.distortion);
        }
        lo = hi;
        hi = (2.0 * hi).min(s_cap);
        at_hi = ba_at_slope(pu, c, hi)?;
    }
    let mut at_lo = if lo == 0.0 {
        ba_at_slope(pu, c, 0.0)?
    } else {
        ba_at_slope(pu, c, lo)?
    };
    for _ in 0..200 {
        if hi - lo <= 1e-12 * hi || (at_hi.distortion - at_lo.distortion).abs() <= 1e-10 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let p = ba_at_slope(pu, c, mid)?;
        if p.rate < rate {
            lo = mid;
            at_lo = p;
        } else {
            hi = mid;
            at_hi = p;
        }
    }
    // the curve is linear between the bracketing slopes to within the tolerance
    let span = at_hi.rate - at_lo.rate;
    if span <= 0.0 {
        return Ok(at_hi.distortion);
    }
    let t = ((rate - at_lo.rate) / span).clamp(0.0, 1.0);
    Ok(at_lo.distortion + t * (at_hi.distortion - at_lo.distortion))
}
