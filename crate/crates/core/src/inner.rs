//! Encoder best response for a fixed decoder candidate.
//!
//! Minimizes `sum_w lambda_w sum_u p[u][w] c_e[u][w]` over conditional tables
//! `p` whose joint with `lambda` has source marginal `P_U` and mutual
//! information at most `R`. The optimum is a Gibbs coupling; the solver walks
//! its temperature (the rate multiplier) until the information budget is met
//! and reports the full multiplier certificate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::{EntropicTransport, GibbsPoint};
use crate::grid;
use crate::prob::{
    self, expected_cost, h_unchecked, marginal_deviation, CostMatrix, Coupling, Distribution,
};

const LN2: f64 = std::f64::consts::LN_2;

/// Entries below this are treated as exact zeros in stationarity checks.
pub const P_FLOOR: f64 = 1e-12;

/// Target for `nu3 * (R - info)` when the rate budget is slack.
const SLACKNESS_TARGET: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Newton iterations per temperature.
    pub max_iterations: usize,
    /// Marginal residual at which a Gibbs coupling counts as converged.
    pub fixed_point_tol: f64,
    /// Accuracy, in bits, of the temperature search on the rate constraint.
    pub bisection_tol: f64,
    /// Lowest temperature, relative to the range of the cost matrix.
    pub temperature_floor: f64,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            fixed_point_tol: 1e-13,
            bisection_tol: 1e-11,
            temperature_floor: 1e-7,
            seed: 0,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0
            || !(self.fixed_point_tol > 0.0)
            || !(self.bisection_tol > 0.0)
            || !(self.temperature_floor > 0.0)
        {
            return Err(Error::Input("solver tolerances must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RateStatus {
    RateActive,
    RateInactive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerSolution {
    pub p_star: Coupling,
    /// Source-marginal multipliers, one per source symbol.
    pub nu1: Vec<f64>,
    /// Column-normalization multipliers, in support order; gauge fixed by `sum = 0`.
    pub nu2: Vec<f64>,
    /// Rate multiplier (a temperature, in cost units per bit).
    pub nu3: f64,
    pub encoder_value: f64,
    pub info: f64,
    pub status: RateStatus,
}

/// Per-condition residuals of the optimality system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub stationarity: f64,
    pub marginal: f64,
    pub normalization: f64,
    pub info_excess: f64,
    pub slackness: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        [
            self.stationarity,
            self.marginal,
            self.normalization,
            self.info_excess,
            self.slackness,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn feasibility(&self) -> f64 {
        self.marginal.max(self.normalization).max(self.info_excess)
    }
}

/// Result of a rate-constrained Gibbs search.
#[derive(Debug, Clone)]
pub(crate) struct RatePoint {
    pub point: GibbsPoint,
    pub info: f64,
    pub status: RateStatus,
}

pub(crate) fn check_inputs(
    pu: &Distribution,
    lambda: &Distribution,
    cost: &CostMatrix,
    rate: f64,
) -> Result<()> {
    if cost.rows() != pu.len() || cost.cols() != lambda.len() {
        return Err(Error::Dimension(format!(
            "cost is {}x{}, expected {}x{}",
            cost.rows(),
            cost.cols(),
            pu.len(),
            lambda.len()
        )));
    }
    if !(rate >= 0.0) || !rate.is_finite() {
        return Err(Error::Input(format!(
            "rate must be finite and non-negative, got {rate}"
        )));
    }
    if let Some(u) = pu.probs().iter().position(|&x| x <= 0.0) {
        return Err(Error::Domain(format!("source symbol {u} has zero mass")));
    }
    Ok(())
}

/// Row-major restriction of `cost` to the listed columns.
pub(crate) fn restrict(cost: &CostMatrix, support: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(cost.rows() * support.len());
    for u in 0..cost.rows() {
        out.extend(support.iter().map(|&w| cost.get(u, w)));
    }
    out
}

/// Walks the temperature until `info = rate`, or down to the floor if the
/// budget never binds.
pub(crate) fn solve_rate(
    et: &EntropicTransport,
    rate: f64,
    opts: &SolverOptions,
) -> Result<RatePoint> {
    solve_rate_from(et, rate, opts, None)
}

/// As [`solve_rate`], starting from a nearby point, such as the solution of a
/// slightly different cost.
pub(crate) fn solve_rate_from(
    et: &EntropicTransport,
    rate: f64,
    opts: &SolverOptions,
    warm: Option<&GibbsPoint>,
) -> Result<RatePoint> {
    if rate == 0.0 {
        return solve_zero_rate(et);
    }
    let floor = opts.temperature_floor;
    let start = match warm {
        Some(w) if w.f.len() == et.n() && w.g.len() == et.m() => et
            .newton(w.eps, w.f.clone(), w.g.clone())
            .or_else(|_| et.initial(1.0))?,
        _ => et.initial(1.0)?,
    };
    let start_info = et.info(&start);

    let (mut lo, mut lo_info, mut hi, mut hi_info);
    if start_info > rate {
        // too informative even at unit temperature: heat up
        lo = start;
        lo_info = start_info;
        loop {
            let next = et.initial(lo.eps * 8.0)?;
            let info = et.info(&next);
            if info <= rate {
                hi = next;
                hi_info = info;
                break;
            }
            if next.eps > 1e15 {
                return Err(Error::Convergence {
                    context: "rate budget unreachable at high temperature".into(),
                    residual: info - rate,
                });
            }
            lo = next;
            lo_info = info;
        }
    } else {
        hi = start;
        hi_info = start_info;
        loop {
            if hi.eps <= floor {
                // the budget is slack at the floor
                let nu3 = et.nu3(&hi);
                let slack = rate - hi_info;
                if nu3 * slack <= SLACKNESS_TARGET {
                    return Ok(RatePoint {
                        point: hi,
                        info: hi_info,
                        status: RateStatus::RateInactive,
                    });
                }
                let eps = SLACKNESS_TARGET / (slack * LN2 * et.scale);
                let next = et.solve_from(&hi, eps)?;
                let info = et.info(&next);
                if info <= rate {
                    return Ok(RatePoint {
                        point: next,
                        info,
                        status: RateStatus::RateInactive,
                    });
                }
                lo = next;
                lo_info = info;
                break;
            }
            let eps = (hi.eps / 8.0).max(floor);
            let next = et.solve_from(&hi, eps)?;
            let info = et.info(&next);
            if info > rate {
                lo = next;
                lo_info = info;
                break;
            }
            hi = next;
            hi_info = info;
        }
    }

    // Illinois false position on log temperature; info falls as eps grows.
    let tol = opts.bisection_tol;
    let (mut f_lo, mut f_hi) = (lo_info - rate, hi_info - rate);
    if f_hi.abs() <= tol {
        return Ok(RatePoint {
            point: hi,
            info: hi_info,
            status: RateStatus::RateActive,
        });
    }
    let mut side = 0i8;
    for _ in 0..200 {
        let (x_lo, x_hi) = (lo.eps.ln(), hi.eps.ln());
        let mut x = (x_lo * f_hi - x_hi * f_lo) / (f_hi - f_lo);
        if !(x > x_lo.min(x_hi) && x < x_lo.max(x_hi)) {
            x = 0.5 * (x_lo + x_hi);
        }
        let eps = x.exp();
        let base = if (x - x_lo).abs() < (x - x_hi).abs() {
            &lo
        } else {
            &hi
        };
        let pt = et.solve_from(base, eps)?;
        let info = et.info(&pt);
        let fx = info - rate;
        if fx.abs() <= tol || (x_hi - x_lo).abs() < 1e-14 {
            if fx > tol {
                // bracket collapsed on the wrong side; return the feasible end
                return Ok(RatePoint {
                    point: hi,
                    info: hi_info,
                    status: RateStatus::RateActive,
                });
            }
            return Ok(RatePoint {
                point: pt,
                info,
                status: RateStatus::RateActive,
            });
        }
        if fx > 0.0 {
            lo = pt;
            lo_info = info;
            f_lo = fx;
            if side == -1 {
                f_hi *= 0.5;
            }
            side = -1;
        } else {
            hi = pt;
            hi_info = info;
            f_hi = fx;
            if side == 1 {
                f_lo *= 0.5;
            }
            side = 1;
        }
    }
    let _ = lo_info;
    if (hi_info - rate).abs() <= 1e3 * tol {
        return Ok(RatePoint {
            point: hi,
            info: hi_info,
            status: RateStatus::RateActive,
        });
    }
    Err(Error::Convergence {
        context: "temperature search on the rate constraint".into(),
        residual: hi_info - rate,
    })
}

/// At zero rate only the independent coupling is feasible, and it admits no
/// finite multipliers unless the cost is additive. The Gibbs coupling at a
/// high temperature is used instead: slackness shrinks like `1/nu3` while the
/// rounding in the stationarity check grows like `nu3`, so the temperature is
/// raised only until both sit well inside tolerance.
fn solve_zero_rate(et: &EntropicTransport) -> Result<RatePoint> {
    let mut eps = 1e4;
    loop {
        let pt = et.initial(eps)?;
        let info = et.info(&pt);
        if (et.nu3(&pt) * info <= 1e-8 && info <= 1e-10) || eps >= 1e12 {
            return Ok(RatePoint {
                point: pt,
                info,
                status: RateStatus::RateActive,
            });
        }
        eps *= 10.0;
    }
}

/// Builds the conditional table from a Gibbs joint on the support.
pub(crate) fn coupling_from_point(
    pt: &GibbsPoint,
    n_u: usize,
    lambda: &Distribution,
    support: &[usize],
) -> Coupling {
    let m = support.len();
    let mut p = vec![vec![0.0; lambda.len()]; n_u];
    for (j, &w) in support.iter().enumerate() {
        // the column sum equals lambda_w to solver accuracy; dividing by it
        // keeps small columns exactly normalized
        let total: f64 = (0..n_u).map(|u| pt.pi[u * m + j]).sum();
        let scale = if total > 0.0 { total } else { lambda[w] };
        for (u, row) in p.iter_mut().enumerate() {
            row[w] = pt.pi[u * m + j] / scale;
        }
    }
    Coupling::new(p, support.to_vec()).expect("Gibbs columns are normalized")
}

/// Solves the encoder's best-response program.
pub fn solve_inner(
    pu: &Distribution,
    lambda: &Distribution,
    ce_bar: &CostMatrix,
    rate: f64,
    opts: &SolverOptions,
) -> Result<InnerSolution> {
    opts.validate()?;
    check_inputs(pu, lambda, ce_bar, rate)?;
    let support = lambda.support();
    let b: Vec<f64> = support.iter().map(|&w| lambda[w]).collect();
    let cost = restrict(ce_bar, &support);
    let et = EntropicTransport::new(
        pu.probs(),
        &b,
        &cost,
        opts.fixed_point_tol,
        opts.max_iterations,
    );
    let rp = solve_rate(&et, rate, opts)?;
    let pt = &rp.point;

    let p_star = coupling_from_point(pt, pu.len(), lambda, &support);

    // potentials in original cost units
    let eps = pt.eps * et.scale;
    let f: Vec<f64> = pt.f.iter().map(|x| x * et.scale + et.shift).collect();
    let g: Vec<f64> = pt.g.iter().map(|x| x * et.scale).collect();
    let raw2: Vec<f64> = g
        .iter()
        .zip(&b)
        .map(|(gw, bw)| -gw + eps * (bw.ln() - 1.0))
        .collect();
    let gauge = raw2.iter().sum::<f64>() / raw2.len() as f64;
    let nu1 = f.iter().map(|fu| -fu + gauge).collect();
    let nu2 = raw2.iter().map(|x| x - gauge).collect();

    let encoder_value = expected_cost(lambda, &p_star, ce_bar);
    let info = prob::mutual_information_unchecked(pu, lambda, &p_star);
    Ok(InnerSolution {
        p_star,
        nu1,
        nu2,
        nu3: eps * LN2,
        encoder_value,
        info,
        status: rp.status,
    })
}

/// Residuals of stationarity, feasibility and complementary slackness.
pub fn kkt_residual(
    sol: &InnerSolution,
    pu: &Distribution,
    lambda: &Distribution,
    ce_bar: &CostMatrix,
    rate: f64,
) -> KktReport {
    let p = &sol.p_star;
    let support: Vec<usize> = p
        .support()
        .iter()
        .copied()
        .filter(|&w| lambda[w] > 0.0)
        .collect();
    let mut stationarity = 0.0f64;
    for (j, &w) in p.support().iter().enumerate() {
        if lambda[w] == 0.0 {
            continue;
        }
        let nu2 = sol.nu2.get(j).copied().unwrap_or(0.0);
        for u in 0..pu.len() {
            let base = ce_bar.get(u, w) + sol.nu1[u] + nu2;
            let x = p.get(u, w);
            let r = if x > P_FLOOR {
                (base + sol.nu3 * (x.log2() + 1.0 / LN2)).abs()
            } else if sol.nu3 > 0.0 {
                // the Gibbs value implied by the multipliers must sit below the floor
                (-(base + sol.nu3 * (P_FLOOR.log2() + 1.0 / LN2))).max(0.0)
            } else {
                (-base).max(0.0)
            };
            stationarity = stationarity.max(r);
        }
    }
    let restricted = p.with_support(support.clone());
    let marginal = marginal_deviation(pu, lambda, &restricted);
    let normalization = support
        .iter()
        .map(|&w| ((0..pu.len()).map(|u| p.get(u, w)).sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    let info = prob::mutual_information_unchecked(pu, lambda, &restricted);
    KktReport {
        stationarity,
        marginal,
        normalization,
        info_excess: (info - rate).max(0.0),
        slackness: (sol.nu3 * (info - rate)).abs(),
    }
}

/// Lagrangian of the best-response program at `(p, nu)`.
pub fn lagrangian(
    p: &[Vec<f64>],
    sol: &InnerSolution,
    pu: &Distribution,
    lambda: &Distribution,
    ce_bar: &CostMatrix,
    rate: f64,
) -> f64 {
    let h_u = prob::entropy(pu);
    let mut total = 0.0;
    for (j, &w) in sol.p_star.support().iter().enumerate() {
        let lw = lambda[w];
        for u in 0..pu.len() {
            let x = p[u][w];
            total += lw
                * (x * (ce_bar.get(u, w) + sol.nu1[u] + sol.nu2[j]) + sol.nu3 * h_unchecked(x)
                    - pu[u] * (sol.nu1[u] + sol.nu2[j]));
        }
        total += lw * sol.nu3 * (h_u - rate);
    }
    total
}

/// Grid-search value of the best-response program, independent of the Gibbs solver.
pub fn brute_force_inner(
    pu: &Distribution,
    lambda: &Distribution,
    ce_bar: &CostMatrix,
    rate: f64,
    grid_resolution: f64,
) -> Result<f64> {
    check_inputs(pu, lambda, ce_bar, rate)?;
    let support = lambda.support();
    let b: Vec<f64> = support.iter().map(|&w| lambda[w]).collect();
    let cost = restrict(ce_bar, &support);
    let problem = grid::GridProblem::new(pu.probs(), &b, grid_resolution)?;
    problem
        .minimize(|pi| {
            if grid::joint_info(pu.probs(), &b, pi) > rate + 1e-12 {
                return None;
            }
            Some(pi.iter().zip(&cost).map(|(x, c)| x * c).sum())
        })
        .map(|(v, _)| v)
        .ok_or_else(|| Error::Input("no feasible grid point".into()))
}
