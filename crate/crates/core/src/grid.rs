//! Brute-force search over small couplings, used as an independent check on
//! the convex solvers.
//!
//! A coupling with marginals `(a, b)` is written as `a_u b_w + d_uw` where the
//! displacement `d` is free on the leading `(n-1) x (m-1)` block and fixed by
//! the marginals elsewhere. The displacement grid always contains the
//! independent coupling.

use crate::error::{Error, Result};

const LN2: f64 = std::f64::consts::LN_2;

/// Incumbents refined at each level of the multi-resolution search.
const INCUMBENTS: usize = 16;

pub struct GridProblem {
    a: Vec<f64>,
    b: Vec<f64>,
    resolution: f64,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl GridProblem {
    pub fn new(a: &[f64], b: &[f64], resolution: f64) -> Result<Self> {
        let (n, m) = (a.len(), b.len());
        if n == 0 || m == 0 {
            return Err(Error::Dimension("empty marginal".into()));
        }
        let d = (n - 1) * (m - 1);
        if d > 4 {
            return Err(Error::Guard {
                what: "grid search dimension".into(),
                required: d as u128,
                limit: 4,
            });
        }
        if !(resolution > 0.0 && resolution <= 0.1) {
            return Err(Error::Input(format!(
                "grid resolution {resolution} out of range"
            )));
        }
        let mut lo = Vec::with_capacity(d);
        let mut hi = Vec::with_capacity(d);
        for u in 0..n - 1 {
            for w in 0..m - 1 {
                let base = a[u] * b[w];
                lo.push(-base);
                hi.push(a[u].min(b[w]) - base);
            }
        }
        Ok(Self {
            a: a.to_vec(),
            b: b.to_vec(),
            resolution,
            lo,
            hi,
        })
    }

    fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Row-major joint for displacement `d`, or `None` if an entry is negative.
    fn joint(&self, d: &[f64]) -> Option<Vec<f64>> {
        let (n, m) = (self.a.len(), self.b.len());
        let mut pi = vec![0.0; n * m];
        for u in 0..n {
            for w in 0..m {
                pi[u * m + w] = self.a[u] * self.b[w];
            }
        }
        for u in 0..n - 1 {
            for w in 0..m - 1 {
                let x = d[u * (m - 1) + w];
                pi[u * m + w] += x;
                pi[u * m + m - 1] -= x;
                pi[(n - 1) * m + w] -= x;
                pi[(n - 1) * m + m - 1] += x;
            }
        }
        for x in pi.iter_mut() {
            if *x < 0.0 {
                if *x < -1e-14 {
                    return None;
                }
                *x = 0.0;
            }
        }
        Some(pi)
    }

    /// Minimizes `objective` over grid couplings; the objective returns `None`
    /// for points outside the feasible set. Returns the value and the joint.
    pub fn minimize<F>(&self, objective: F) -> Option<(f64, Vec<f64>)>
    where
        F: Fn(&[f64]) -> Option<f64>,
    {
        self.minimize_from(&[], objective)
    }

    /// As [`GridProblem::minimize`], also refining around the given joints.
    /// Useful when the feasible set is too thin for the coarse lattice.
    pub fn minimize_from<F>(&self, seeds: &[Vec<f64>], objective: F) -> Option<(f64, Vec<f64>)>
    where
        F: Fn(&[f64]) -> Option<f64>,
    {
        let eval = |d: &[f64]| self.joint(d).and_then(|pi| objective(&pi).map(|v| (v, pi)));
        let dim = self.dim();
        if dim == 0 {
            return eval(&[]);
        }
        let mut incumbents: Vec<(f64, Vec<f64>)> = seeds
            .iter()
            .map(|pi| self.displacement(pi))
            .filter_map(|d| eval(&d).map(|(v, _)| (v, d)))
            .collect();
        let mut prev_step = f64::INFINITY;
        for step in self.ladder() {
            let radius = 1.5 * prev_step;
            let centers: Vec<Vec<f64>> = if prev_step.is_infinite() {
                vec![vec![0.0; dim]]
            } else {
                incumbents.iter().map(|(_, d)| d.clone()).collect()
            };
            let mut found: Vec<(f64, Vec<f64>)> = incumbents.clone();
            for center in &centers {
                self.scan(center, radius, step, |d| {
                    if let Some((v, _)) = eval(d) {
                        found.push((v, d.to_vec()));
                    }
                });
            }
            found.sort_by(|x, y| x.0.total_cmp(&y.0));
            found.dedup_by(|x, y| x.1 == y.1);
            found.truncate(INCUMBENTS);
            if found.is_empty() {
                break;
            }
            incumbents = found;
            prev_step = step;
        }
        incumbents
            .first()
            .and_then(|(_, d)| self.joint(d))
            .and_then(|pi| objective(&pi).map(|v| (v, pi)))
    }

    fn displacement(&self, pi: &[f64]) -> Vec<f64> {
        let (n, m) = (self.a.len(), self.b.len());
        let mut d = Vec::with_capacity(self.dim());
        for u in 0..n - 1 {
            for w in 0..m - 1 {
                d.push(pi[u * m + w] - self.a[u] * self.b[w]);
            }
        }
        d
    }

    /// Grid steps, coarse to fine. Small problems start exhaustively at the
    /// base resolution; every search ends with two local levels below it so
    /// that vertices off the lattice are approached.
    fn ladder(&self) -> Vec<f64> {
        let mut steps = if self.dim() <= 2 {
            vec![self.resolution]
        } else {
            let mut s = vec![0.04, 0.008, 0.002];
            s.retain(|&x| x > self.resolution);
            s.push(self.resolution);
            s
        };
        steps.push(self.resolution / 4.0);
        steps.push(self.resolution / 16.0);
        steps
    }

    /// Visits every grid point `k * step` inside the box and within `radius`
    /// of `center`, plus the box faces, where vertex optima live.
    fn scan<G: FnMut(&[f64])>(&self, center: &[f64], radius: f64, step: f64, mut visit: G) {
        let dim = self.dim();
        let mut values: Vec<Vec<f64>> = Vec::with_capacity(dim);
        for i in 0..dim {
            let lo = self.lo[i].max(center[i] - radius);
            let hi = self.hi[i].min(center[i] + radius);
            if lo > hi {
                return;
            }
            let k_lo = (lo / step - 1e-9).ceil() as i64;
            let k_hi = (hi / step + 1e-9).floor() as i64;
            let mut v: Vec<f64> = (k_lo..=k_hi)
                .map(|k| (k as f64 * step).clamp(self.lo[i], self.hi[i]))
                .collect();
            for face in [self.lo[i], self.hi[i]] {
                if face >= lo && face <= hi {
                    v.push(face);
                }
            }
            v.sort_by(f64::total_cmp);
            v.dedup();
            values.push(v);
        }
        let mut k = vec![0usize; dim];
        let mut d: Vec<f64> = values.iter().map(|v| v[0]).collect();
        loop {
            visit(&d);
            let mut i = 0;
            loop {
                if i == dim {
                    return;
                }
                if k[i] + 1 < values[i].len() {
                    k[i] += 1;
                    d[i] = values[i][k[i]];
                    break;
                }
                k[i] = 0;
                d[i] = values[i][0];
                i += 1;
            }
        }
    }
}

/// Mutual information, in bits, of a row-major joint with marginals `(a, b)`.
pub fn joint_info(a: &[f64], b: &[f64], pi: &[f64]) -> f64 {
    let m = b.len();
    let mut acc = 0.0;
    for (k, &x) in pi.iter().enumerate() {
        if x > 0.0 {
            acc += x * (x / (a[k / m] * b[k % m])).ln();
        }
    }
    (acc / LN2).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_is_on_the_grid() {
        let g = GridProblem::new(&[0.3, 0.7], &[0.2, 0.5, 0.3], 1e-3).unwrap();
        let (v, pi) = g
            .minimize(|pi| (joint_info(&[0.3, 0.7], &[0.2, 0.5, 0.3], pi) <= 1e-12).then_some(0.0))
            .unwrap();
        assert_eq!(v, 0.0);
        assert!((pi[0] - 0.06).abs() < 1e-15);
    }

    #[test]
    fn finds_transport_optimum_in_four_dimensions() {
        let a = [0.2, 0.3, 0.5];
        let b = [0.5, 0.3, 0.2];
        // anti-diagonal cost zero: optimum pushes mass off the diagonal
        let c = [1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0];
        let g = GridProblem::new(&a, &b, 1e-3).unwrap();
        let (v, _) = g
            .minimize(|pi| Some(pi.iter().zip(&c).map(|(x, y)| x * y).sum()))
            .unwrap();
        assert!(v.abs() < 1e-9, "{v}");
    }

    #[test]
    fn rejects_large_problems() {
        assert!(GridProblem::new(&[0.25; 4], &[0.5, 0.5], 1e-3).is_ok());
        assert!(GridProblem::new(&[0.25; 4], &[0.25; 4], 1e-3).is_err());
    }
}
