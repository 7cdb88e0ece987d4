//! Entropic transport kernel shared by the inner and tie-breaking solvers.
//!
//! For a temperature `eps` the minimizer of `<pi, C> - eps H(pi)` over the
//! couplings with marginals `(a, b)` has the Gibbs form
//! `pi = exp((f_u + g_w - C_uw) / eps)`. The dual `(f, g)` is found with a
//! damped Newton iteration on the concave dual objective. The state keeps
//! `log pi` directly and Newton steps are taken in units of `eps`, so the
//! marginals are matched to full double precision even when `eps` is tiny.
//!
//! Costs are normalized to `[0, 1]` on entry; temperatures in this module are
//! always relative to that normalized scale.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const LN2: f64 = std::f64::consts::LN_2;

#[derive(Debug, Clone)]
pub(crate) struct EntropicTransport {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// normalized cost, row-major n x m
    cost: Vec<f64>,
    pub shift: f64,
    pub scale: f64,
    tol: f64,
    max_iter: usize,
}

/// One Gibbs coupling and its dual potentials, in normalized units.
#[derive(Debug, Clone)]
pub(crate) struct GibbsPoint {
    pub eps: f64,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub log_pi: Vec<f64>,
    pub pi: Vec<f64>,
}

impl EntropicTransport {
    /// `cost` is row-major `a.len() x b.len()`.
    pub fn new(a: &[f64], b: &[f64], cost: &[f64], tol: f64, max_iter: usize) -> Self {
        let lo = cost.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = cost.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = hi - lo;
        let scale = if range > 1e-300 { range } else { 1.0 };
        Self {
            a: a.to_vec(),
            b: b.to_vec(),
            cost: cost.iter().map(|c| (c - lo) / scale).collect(),
            shift: lo,
            scale,
            tol,
            max_iter,
        }
    }

    pub fn n(&self) -> usize {
        self.a.len()
    }

    pub fn m(&self) -> usize {
        self.b.len()
    }

    /// Starting point near the independent coupling at temperature `eps`.
    pub fn initial(&self, eps: f64) -> Result<GibbsPoint> {
        let f: Vec<f64> = self.a.iter().map(|x| eps * x.ln()).collect();
        let g: Vec<f64> = self.b.iter().map(|x| eps * x.ln()).collect();
        self.newton(eps, f, g)
    }

    /// Re-solves at `eps`, walking the temperature geometrically from `from`.
    pub fn solve_from(&self, from: &GibbsPoint, eps: f64) -> Result<GibbsPoint> {
        let mut current = from.clone();
        let mut ratio_cap = 8.0f64;
        let mut attempts = 0;
        while current.eps != eps {
            let ratio = eps / current.eps;
            let step = if ratio > ratio_cap {
                current.eps * ratio_cap
            } else if ratio < 1.0 / ratio_cap {
                current.eps / ratio_cap
            } else {
                eps
            };
            match self.newton(step, current.f.clone(), current.g.clone()) {
                Ok(next) => {
                    current = next;
                    if ratio_cap < 8.0 {
                        ratio_cap = (ratio_cap * 2.0).min(8.0);
                    }
                }
                Err(e) => {
                    attempts += 1;
                    ratio_cap = ratio_cap.sqrt();
                    if attempts > 12 || ratio_cap < 1.0001 {
                        return Err(e);
                    }
                }
            }
        }
        Ok(current)
    }

    /// Newton iteration on the dual at fixed temperature, from potentials `(f, g)`.
    pub fn newton(&self, eps: f64, mut f: Vec<f64>, mut g: Vec<f64>) -> Result<GibbsPoint> {
        let (n, m) = (self.n(), self.m());
        let mut log_pi: Vec<f64> = (0..n * m)
            .map(|k| (f[k / m] + g[k % m] - self.cost[k]) / eps)
            .collect();
        let mut pi: Vec<f64> = log_pi.iter().map(|l| l.exp()).collect();
        let dim = n + m - 1;
        let mut residual = f64::INFINITY;

        for _ in 0..self.max_iter {
            let (rows, cols) = marginals(&pi, n, m);
            let grad: Vec<f64> = (0..n)
                .map(|u| self.a[u] - rows[u])
                .chain((0..m).map(|w| self.b[w] - cols[w]))
                .collect();
            residual = grad.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
            if !residual.is_finite() {
                return Err(Error::Convergence {
                    context: format!("entropic transport overflow at eps {eps:.3e}"),
                    residual,
                });
            }
            if residual <= self.tol {
                return Ok(GibbsPoint {
                    eps,
                    f,
                    g,
                    log_pi,
                    pi,
                });
            }

            // Hessian of the negated dual in eps units, last column potential pinned.
            let mut hess = DMatrix::<f64>::zeros(dim, dim);
            for u in 0..n {
                hess[(u, u)] = rows[u];
                for w in 0..m - 1 {
                    let x = pi[u * m + w];
                    hess[(u, n + w)] = x;
                    hess[(n + w, u)] = x;
                }
            }
            for w in 0..m - 1 {
                hess[(n + w, n + w)] = cols[w];
            }
            let rhs = DVector::from_iterator(dim, grad[..dim].iter().copied());
            let step = solve_spd(hess, rhs).ok_or_else(|| Error::Convergence {
                context: "singular transport Hessian".into(),
                residual,
            })?;
            let phi = &step.as_slice()[..n];
            let psi: Vec<f64> = step.as_slice()[n..]
                .iter()
                .copied()
                .chain(std::iter::once(0.0))
                .collect();

            let slope: f64 = (0..n).map(|u| grad[u] * phi[u]).sum::<f64>()
                + (0..m).map(|w| grad[n + w] * psi[w]).sum::<f64>();
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let gain = dual_gain(&pi, phi, &psi, slope, alpha);
                if gain.is_finite() && gain >= 1e-4 * alpha * slope {
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                // rounding floor reached; accept if already tight
                if residual <= self.tol * 1e3 {
                    return Ok(GibbsPoint {
                        eps,
                        f,
                        g,
                        log_pi,
                        pi,
                    });
                }
                return Err(Error::Convergence {
                    context: format!("line search stalled at eps {eps:.3e}"),
                    residual,
                });
            }
            for u in 0..n {
                f[u] += eps * alpha * phi[u];
            }
            for w in 0..m {
                g[w] += eps * alpha * psi[w];
            }
            for u in 0..n {
                for w in 0..m {
                    let k = u * m + w;
                    log_pi[k] += alpha * (phi[u] + psi[w]);
                    pi[k] = log_pi[k].exp();
                }
            }
        }
        Err(Error::Convergence {
            context: format!("Newton iteration limit at eps {eps:.3e}"),
            residual,
        })
    }

    /// Mutual information of a Gibbs coupling, in bits.
    pub fn info(&self, pt: &GibbsPoint) -> f64 {
        let m = self.m();
        let mut acc = 0.0;
        for (k, &x) in pt.pi.iter().enumerate() {
            if x > 0.0 {
                acc += x * (pt.log_pi[k] - self.a[k / m].ln() - self.b[k % m].ln());
            }
        }
        (acc / LN2).max(0.0)
    }

    /// Expected value of an arbitrary row-major cost under the coupling.
    pub fn expect(&self, pt: &GibbsPoint, cost: &[f64]) -> f64 {
        pt.pi.iter().zip(cost).map(|(p, c)| p * c).sum()
    }

    /// Temperature in original cost units, expressed as the bits multiplier.
    pub fn nu3(&self, pt: &GibbsPoint) -> f64 {
        pt.eps * self.scale * LN2
    }
}

fn marginals(pi: &[f64], n: usize, m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rows = vec![0.0; n];
    let mut cols = vec![0.0; m];
    for u in 0..n {
        for w in 0..m {
            let x = pi[u * m + w];
            rows[u] += x;
            cols[w] += x;
        }
    }
    (rows, cols)
}

/// `D(alpha) - D(0)` for the step `alpha (phi, psi)`, in eps units.
///
/// Equals `alpha * slope - sum pi (e^s - 1 - s)`; the curvature term is
/// summed separately so that the difference keeps its relative precision
/// near convergence.
fn dual_gain(pi: &[f64], phi: &[f64], psi: &[f64], slope: f64, alpha: f64) -> f64 {
    let m = psi.len();
    let mut curvature = 0.0;
    for (k, &x) in pi.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        let s = alpha * (phi[k / m] + psi[k % m]);
        let c = if s.abs() < 1e-3 {
            s * s * (0.5 + s * (1.0 / 6.0 + s / 24.0))
        } else {
            s.exp_m1() - s
        };
        curvature += x * c;
    }
    alpha * slope - curvature
}

/// Cholesky solve with a growing ridge for nearly singular systems.
fn solve_spd(mut hess: DMatrix<f64>, rhs: DVector<f64>) -> Option<DVector<f64>> {
    let scale = hess
        .diagonal()
        .iter()
        .copied()
        .fold(0.0f64, f64::max)
        .max(1e-300);
    let mut ridge = 0.0;
    for _ in 0..12 {
        if let Some(ch) = hess.clone().cholesky() {
            let x = ch.solve(&rhs);
            if x.iter().all(|v| v.is_finite()) {
                return Some(x);
            }
        }
        let next = if ridge == 0.0 {
            1e-14 * scale
        } else {
            ridge * 100.0
        };
        for i in 0..hess.nrows() {
            hess[(i, i)] += next - ridge;
        }
        ridge = next;
    }
    None
}
