//! Pessimistic tie-breaking: among the couplings that are optimal for the
//! encoder, pick the one that is worst for the decoder.
//!
//! An active rate cap with a positive multiplier leaves a single optimal
//! coupling, which is returned as is. Otherwise the optimal set is relaxed to `encoder cost <= C_e* + delta`. With a
//! multiplier `kappa` on that cap the program becomes another
//! rate-constrained Gibbs problem with cost `kappa c_e - c_d`, so the same
//! temperature search as the inner solver applies; `kappa` is then searched
//! until the cap binds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use std::cell::RefCell;

use crate::gibbs::{EntropicTransport, GibbsPoint};
use crate::grid;
use crate::inner::{
    self, check_inputs, coupling_from_point, restrict, solve_rate_from, InnerSolution, RateStatus,
    SolverOptions,
};
use crate::prob::{
    expected_cost, mutual_information_unchecked, CostMatrix, Coupling, Distribution,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiebreakSolution {
    pub p_tilde: Coupling,
    pub decoder_value: f64,
    /// Achieved encoder cost minus `C_e*`.
    pub encoder_slack: f64,
    pub info: f64,
    /// Multiplier on the encoder-cost cap, in units of `range(c_d) / range(c_e)`;
    /// `None` when the optimal set is a single coupling.
    pub kappa: Option<f64>,
}

/// Relative slack used when the caller does not choose one.
pub const DEFAULT_RELATIVE_DELTA: f64 = 1e-9;

/// Default optimality slack for an encoder cost matrix.
pub fn default_delta(ce_bar: &CostMatrix) -> f64 {
    let r = ce_bar.range();
    DEFAULT_RELATIVE_DELTA * if r > 0.0 { r } else { 1.0 }
}

/// Maximizes the decoder cost over the `delta`-optimal encoder couplings, or
/// returns the unique optimum when there is one.
#[allow(clippy::too_many_arguments)]
pub fn solve_tiebreak(
    pu: &Distribution,
    lambda: &Distribution,
    ce_bar: &CostMatrix,
    cd_bar: &CostMatrix,
    rate: f64,
    ce_star: f64,
    delta: f64,
    opts: &SolverOptions,
) -> Result<TiebreakSolution> {
    let sol = inner::solve_inner(pu, lambda, ce_bar, rate, opts)?;
    if sol.encoder_value > ce_star + delta {
        return Err(Error::Input(format!(
            "encoder optimum {} exceeds the stated C_e* {} + delta {}",
            sol.encoder_value, ce_star, delta
        )));
    }
    tiebreak_from_inner(&sol, pu, lambda, ce_bar, cd_bar, rate, ce_star, delta, opts)
}

/// Tie-breaking given an inner solution for the same instance.
#[allow(clippy::too_many_arguments)]
pub(crate) fn tiebreak_from_inner(
    sol: &InnerSolution,
    pu: &Distribution,
    lambda: &Distribution,
    ce_bar: &CostMatrix,
    cd_bar: &CostMatrix,
    rate: f64,
    ce_star: f64,
    delta: f64,
    opts: &SolverOptions,
) -> Result<TiebreakSolution> {
    check_inputs(pu, lambda, cd_bar, rate)?;
    if !(delta > 0.0) {
        return Err(Error::Input(format!("delta must be positive, got {delta}")));
    }

    if rate == 0.0 {
        // the feasible set is the single independent coupling
        let p = Coupling::product(pu, lambda).with_support(lambda.support());
        return Ok(TiebreakSolution {
            decoder_value: expected_cost(lambda, &p, cd_bar),
            encoder_slack: 0.0,
            info: 0.0,
            kappa: None,
            p_tilde: p,
        });
    }

    let fallback = TiebreakSolution {
        decoder_value: expected_cost(lambda, &sol.p_star, cd_bar),
        encoder_slack: sol.encoder_value - ce_star,
        info: sol.info,
        kappa: None,
        p_tilde: sol.p_star.clone(),
    };
    // an active rate cap with a positive multiplier pins a unique optimum,
    // since the entropy term is strictly convex in p
    if sol.status == RateStatus::RateActive && sol.nu3 > opts.temperature_floor {
        return Ok(fallback);
    }

    let ctx = Context::new(pu, lambda, ce_bar, cd_bar, rate, opts);
    let mut best = Best {
        sol: fallback,
        ce_star,
        delta,
    };
    // aim mixtures just inside the cap so rounding cannot push them out
    let mix_target = ce_star + delta * (1.0 - 1e-6);

    // the inner solution stays available as a feasible answer if this fails
    let Ok(first) = ctx.evaluate(0.0) else {
        return Ok(best.sol);
    };
    if first.ce - ce_star <= delta {
        best.offer(first);
        return Ok(best.sol);
    }

    // The dual g(k) = max over the rate-feasible set of cd - k unit (ce - cap)
    // is convex with slope -(ce(k) - cap) unit. Bracket its minimizer, then
    // cut with tangent lines; g at any k bounds the optimum from above.
    let slope = |e: &Evaluation| (e.ce - ce_star - delta) * ctx.unit;
    let dual = |e: &Evaluation| e.cd - e.kappa * slope(e);
    let mut lo = first;
    let mut upper = dual(&lo);
    let mut k = 1.0;
    let mut hi = loop {
        if let Ok(t) = ctx.evaluate(k) {
            upper = upper.min(dual(&t));
            if slope(&t) <= 0.0 {
                break t;
            }
            lo = t;
        }
        k *= 10.0;
        if k > 1e16 {
            return Ok(best.sol);
        }
    };

    // Illinois false position on log k for the root of the slope
    let value_tol = 1e-10 * ctx.range_d;
    let (mut f_lo, mut f_hi) = (slope(&lo), slope(&hi));
    let mut side = 0i8;
    let mut plateau = false;
    for _ in 0..60 {
        best.offer_ref(&hi);
        best.offer_ref(&ctx.mix(&lo, &hi, mix_target));
        if upper - best.sol.decoder_value <= value_tol || hi.kappa - lo.kappa <= 1e-13 * hi.kappa {
            break;
        }
        let (s_lo, s_hi) = (slope(&lo), slope(&hi));
        let cut = (lo.cd - hi.cd) / (s_lo - s_hi);
        let k = if plateau && cut > lo.kappa && cut < hi.kappa {
            // piecewise-linear dual: the tangents meet at the breakpoint
            cut
        } else if lo.kappa > 0.0 {
            let (x_lo, x_hi) = (lo.kappa.ln(), hi.kappa.ln());
            let mut x = (x_lo * f_hi - x_hi * f_lo) / (f_hi - f_lo);
            if !(x > x_lo && x < x_hi) {
                x = 0.5 * (x_lo + x_hi);
            }
            x.exp()
        } else {
            0.5 * hi.kappa
        };
        let Ok(t) = ctx.evaluate(k) else { break };
        upper = upper.min(dual(&t));
        let fx = slope(&t);
        let replaced = if fx <= 0.0 { s_hi } else { s_lo };
        plateau = (fx - replaced).abs() <= 1e-9 * replaced.abs();
        if fx <= 0.0 {
            hi = t;
            f_hi = fx;
            if side == 1 {
                f_lo *= 0.5;
            }
            side = 1;
        } else {
            lo = t;
            f_lo = fx;
            if side == -1 {
                f_hi *= 0.5;
            }
            side = -1;
        }
    }
    best.offer_ref(&hi);
    best.offer_ref(&ctx.mix(&lo, &hi, mix_target));
    Ok(best.sol)
}

#[derive(Clone)]
struct Evaluation {
    p: Coupling,
    ce: f64,
    cd: f64,
    info: f64,
    kappa: f64,
}

struct Context<'a> {
    pu: &'a Distribution,
    lambda: &'a Distribution,
    support: Vec<usize>,
    b: Vec<f64>,
    ce: Vec<f64>,
    cd: Vec<f64>,
    unit: f64,
    range_d: f64,
    rate: f64,
    opts: &'a SolverOptions,
    /// last Gibbs point, reused as the starting point of the next solve
    warm: RefCell<Option<GibbsPoint>>,
}

impl<'a> Context<'a> {
    fn new(
        pu: &'a Distribution,
        lambda: &'a Distribution,
        ce_bar: &CostMatrix,
        cd_bar: &CostMatrix,
        rate: f64,
        opts: &'a SolverOptions,
    ) -> Self {
        let support = lambda.support();
        let b = support.iter().map(|&w| lambda[w]).collect();
        let (re, rd) = (ce_bar.range(), cd_bar.range());
        Self {
            pu,
            lambda,
            b,
            ce: restrict(ce_bar, &support),
            cd: restrict(cd_bar, &support),
            support,
            unit: if re > 0.0 && rd > 0.0 { rd / re } else { 1.0 },
            range_d: if rd > 0.0 { rd } else { 1.0 },
            rate,
            opts,
            warm: RefCell::new(None),
        }
    }

    /// Rate-constrained Gibbs coupling for the cost `kappa unit c_e - c_d`.
    fn evaluate(&self, kappa: f64) -> Result<Evaluation> {
        let k = kappa * self.unit;
        let cost: Vec<f64> = self
            .ce
            .iter()
            .zip(&self.cd)
            .map(|(e, d)| k * e - d)
            .collect();
        let et = EntropicTransport::new(
            self.pu.probs(),
            &self.b,
            &cost,
            self.opts.fixed_point_tol,
            self.opts.max_iterations,
        );
        let warm = self.warm.borrow().clone();
        let rp = solve_rate_from(&et, self.rate, self.opts, warm.as_ref())?;
        *self.warm.borrow_mut() = Some(rp.point.clone());
        Ok(Evaluation {
            p: coupling_from_point(&rp.point, self.pu.len(), self.lambda, &self.support),
            ce: et.expect(&rp.point, &self.ce),
            cd: et.expect(&rp.point, &self.cd),
            info: rp.info,
            kappa,
        })
    }
}

impl Context<'_> {
    /// Convex combination of two iterates on the encoder cap. Feasible for the
    /// rate constraint because information is convex in the conditional table.
    fn mix(&self, lo: &Evaluation, hi: &Evaluation, cap: f64) -> Evaluation {
        let t = ((cap - hi.ce) / (lo.ce - hi.ce)).clamp(0.0, 1.0);
        let table: Vec<Vec<f64>> =
            lo.p.table()
                .iter()
                .zip(hi.p.table())
                .map(|(a, b)| {
                    a.iter()
                        .zip(b)
                        .map(|(x, y)| t * x + (1.0 - t) * y)
                        .collect()
                })
                .collect();
        let p = Coupling::new(table, self.support.clone()).expect("mixture of couplings");
        Evaluation {
            info: mutual_information_unchecked(self.pu, self.lambda, &p),
            ce: t * lo.ce + (1.0 - t) * hi.ce,
            cd: t * lo.cd + (1.0 - t) * hi.cd,
            kappa: hi.kappa,
            p,
        }
    }
}

/// Best feasible iterate seen so far.
struct Best {
    sol: TiebreakSolution,
    ce_star: f64,
    delta: f64,
}

impl Best {
    fn offer(&mut self, e: Evaluation) {
        self.offer_ref(&e);
    }

    fn offer_ref(&mut self, e: &Evaluation) {
        if e.cd > self.sol.decoder_value && e.ce - self.ce_star <= self.delta {
            self.sol = TiebreakSolution {
                p_tilde: e.p.clone(),
                decoder_value: e.cd,
                encoder_slack: e.ce - self.ce_star,
                info: e.info,
                kappa: Some(e.kappa),
            };
        }
    }
}

/// Grid maximum of the decoder cost over couplings within `delta` of the
/// encoder optimum. The lattice rarely meets the thin optimal face, so the
/// cap is taken from the larger of `ce_star` and the grid's own encoder
/// optimum, and the search is seeded at that grid optimum.
#[allow(clippy::too_many_arguments)]
pub fn brute_force_tiebreak(
    pu: &Distribution,
    lambda: &Distribution,
    ce_bar: &CostMatrix,
    cd_bar: &CostMatrix,
    rate: f64,
    ce_star: f64,
    delta: f64,
    grid_resolution: f64,
) -> Result<f64> {
    check_inputs(pu, lambda, ce_bar, rate)?;
    check_inputs(pu, lambda, cd_bar, rate)?;
    let support = lambda.support();
    let b: Vec<f64> = support.iter().map(|&w| lambda[w]).collect();
    let ce = restrict(ce_bar, &support);
    let cd = restrict(cd_bar, &support);
    let problem = grid::GridProblem::new(pu.probs(), &b, grid_resolution)?;
    let feasible = |pi: &[f64]| grid::joint_info(pu.probs(), &b, pi) <= rate + 1e-12;
    let dot = |pi: &[f64], c: &[f64]| pi.iter().zip(c).map(|(x, y)| x * y).sum::<f64>();

    let (grid_star, seed) = problem
        .minimize(|pi| feasible(pi).then(|| dot(pi, &ce)))
        .ok_or_else(|| Error::Input("no feasible grid point".into()))?;
    let cap = ce_star.max(grid_star) + delta;
    problem
        .minimize_from(&[seed], |pi| {
            (feasible(pi) && dot(pi, &ce) <= cap).then(|| -dot(pi, &cd))
        })
        .map(|(v, _)| -v)
        .ok_or_else(|| Error::Input("no feasible grid point".into()))
}
