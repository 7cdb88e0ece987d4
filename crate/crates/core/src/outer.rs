//! Search over decoder candidates `(lambda, Q_{V|W})`.
//!
//! The outer problem is nonconvex. The search combines an exhaustive sweep
//! over deterministic kernels and a few structured `lambda`s with seeded
//! multistart coordinate descent on a softmax parameterization. The result
//! is the best candidate evaluated, an upper bound on the infimum.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inner::{solve_inner, InnerSolution, SolverOptions};
use crate::prob::{expected_cost, reduce_cost, CostMatrix, Distribution, Kernel};
use crate::spec::ProblemSpec;
use crate::tiebreak::{default_delta, tiebreak_from_inner, TiebreakSolution};

/// Softmax weights below this are set to zero, so exact zeros are reachable.
const WEIGHT_FLOOR: f64 = 1e-6;
/// Half-width of the golden-section interval in logit space.
const LINE_SPAN: f64 = 4.0;
const INV_PHI: f64 = 0.618_033_988_749_894_8;
/// Sweep candidates scored against the same incumbent.
const SWEEP_CHUNK: usize = 32;

/// A problem in floating point with every source symbol carrying mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub pu: Distribution,
    pub ce: CostMatrix,
    pub cd: CostMatrix,
}

impl Instance {
    pub fn new(pu: Distribution, ce: CostMatrix, cd: CostMatrix) -> Result<Self> {
        if ce.rows() != pu.len() || cd.rows() != pu.len() || ce.cols() != cd.cols() {
            return Err(Error::Dimension(
                "cost matrices do not match the source".into(),
            ));
        }
        if let Some(u) = pu.probs().iter().position(|&p| p <= 0.0) {
            return Err(Error::Domain(format!("source symbol {u} has zero mass")));
        }
        Ok(Self { pu, ce, cd })
    }

    /// Drops zero-mass source symbols, which never affect any cost.
    pub fn from_spec(spec: &ProblemSpec) -> Result<Self> {
        spec.validate()?;
        let (kept, _) = spec.strip_zero_mass();
        Self::new(kept.source_distribution()?, kept.ce(), kept.cd())
    }

    pub fn n_u(&self) -> usize {
        self.pu.len()
    }

    pub fn n_v(&self) -> usize {
        self.ce.cols()
    }

    /// `min_v sum_u P(u) c_d(u, v)`.
    pub fn constant_value(&self) -> f64 {
        (0..self.n_v())
            .map(|v| {
                (0..self.n_u())
                    .map(|u| self.pu[u] * self.cd.get(u, v))
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterCandidate {
    pub lambda: Distribution,
    pub decoder_kernel: Kernel,
}

impl OuterCandidate {
    pub fn new(lambda: Distribution, decoder_kernel: Kernel) -> Result<Self> {
        if lambda.len() != decoder_kernel.n_inputs() {
            return Err(Error::Dimension(format!(
                "lambda has {} symbols, kernel has {} rows",
                lambda.len(),
                decoder_kernel.n_inputs()
            )));
        }
        Ok(Self {
            lambda,
            decoder_kernel,
        })
    }

    fn deterministic(lambda: Distribution, map: &[usize], n_v: usize) -> Self {
        Self {
            lambda,
            decoder_kernel: Kernel::deterministic(map, n_v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterOptions {
    /// Random starts of the local search.
    pub starts: usize,
    pub seed: u64,
    /// Run the deterministic-kernel sweep.
    pub sweep: bool,
    /// Largest `|V|^|W|` for which all deterministic kernels are swept.
    pub sweep_limit: usize,
    /// Golden-section steps per coordinate.
    pub golden_steps: usize,
    /// Coordinate passes per start.
    pub passes: usize,
    /// Auxiliary symbols beyond `|U| + 3`.
    pub extra_w: usize,
    /// Encoder-optimality slack of the tie-break; `None` means the default
    /// relative to each candidate's reduced encoder cost.
    pub delta: Option<f64>,
    pub solver: SolverOptions,
}

impl Default for OuterOptions {
    fn default() -> Self {
        Self {
            starts: 64,
            seed: 0,
            sweep: true,
            sweep_limit: 4096,
            golden_steps: 6,
            passes: 2,
            extra_w: 0,
            delta: None,
            solver: SolverOptions::default(),
        }
    }
}

impl OuterOptions {
    pub fn n_w(&self, n_u: usize) -> usize {
        n_u + 3 + self.extra_w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEvaluation {
    pub value: f64,
    pub inner: InnerSolution,
    pub tiebreak: TiebreakSolution,
}

/// Reduces the costs through the kernel, solves the encoder problem and
/// breaks ties pessimistically. Returns the decoder's value.
pub fn evaluate_candidate(
    inst: &Instance,
    cand: &OuterCandidate,
    rate: f64,
    opts: &OuterOptions,
) -> Result<CandidateEvaluation> {
    match score(inst, cand, rate, opts, f64::INFINITY)? {
        Score::Full(e) => Ok(*e),
        Score::Pruned(_) => unreachable!("infinite bound never prunes"),
    }
}

enum Score {
    Full(Box<CandidateEvaluation>),
    /// The tie-break was skipped: the value is at least this, which already
    /// exceeds the bound.
    Pruned(f64),
}

impl Score {
    fn value(&self) -> f64 {
        match self {
            Score::Full(e) => e.value,
            Score::Pruned(v) => *v,
        }
    }
}

fn score(
    inst: &Instance,
    cand: &OuterCandidate,
    rate: f64,
    opts: &OuterOptions,
    bound: f64,
) -> Result<Score> {
    let ce_bar = reduce_cost(&cand.decoder_kernel, &inst.ce)?;
    let cd_bar = reduce_cost(&cand.decoder_kernel, &inst.cd)?;
    let inner = solve_inner(&inst.pu, &cand.lambda, &ce_bar, rate, &opts.solver)?;
    // the encoder optimum is itself feasible for the tie-break
    let floor = expected_cost(&cand.lambda, &inner.p_star, &cd_bar);
    if floor > bound {
        return Ok(Score::Pruned(floor));
    }
    let delta = opts.delta.unwrap_or_else(|| default_delta(&ce_bar));
    let tiebreak = tiebreak_from_inner(
        &inner,
        &inst.pu,
        &cand.lambda,
        &ce_bar,
        &cd_bar,
        rate,
        inner.encoder_value,
        delta,
        &opts.solver,
    )?;
    Ok(Score::Full(Box::new(CandidateEvaluation {
        value: tiebreak.decoder_value,
        inner,
        tiebreak,
    })))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterResult {
    pub rate: f64,
    pub value: f64,
    pub best: OuterCandidate,
    pub inner: InnerSolution,
    pub tiebreak: TiebreakSolution,
    pub starts_used: usize,
    /// Best fully evaluated value per start; `None` when a start never beat
    /// the sweep or failed.
    pub value_trace: Vec<Option<f64>>,
    pub sweep_value: Option<f64>,
    pub sweep_size: usize,
    pub evaluations: usize,
    pub failures: Vec<String>,
    /// Always false: the search gives an upper bound only.
    pub certified: bool,
}

/// Lambdas tried with every deterministic kernel.
fn structured_lambdas(pu: &Distribution, n_w: usize) -> Vec<Distribution> {
    let mut out = vec![Distribution::uniform(n_w)];
    let mut padded = pu.probs().to_vec();
    padded.resize(n_w, 0.0);
    out.push(Distribution::from_weights(&padded).expect("padded source"));
    for k in 2..n_w {
        let mut w = vec![1.0; k];
        w.resize(n_w, 0.0);
        out.push(Distribution::from_weights(&w).expect("uniform prefix"));
    }
    // a perturbation of the uniform weights
    let tilt: Vec<f64> = (0..n_w)
        .map(|w| 1.0 + 0.5 * w as f64 / n_w as f64)
        .collect();
    out.push(Distribution::from_weights(&tilt).expect("positive weights"));
    out
}

/// Candidates of the deterministic sweep, without relabelings of `W`.
fn sweep_candidates(inst: &Instance, opts: &OuterOptions) -> Vec<OuterCandidate> {
    let n_w = opts.n_w(inst.n_u());
    let n_v = inst.n_v();
    let lambdas = structured_lambdas(&inst.pu, n_w);
    let full = (n_v as u128)
        .checked_pow(n_w as u32)
        .is_some_and(|k| k <= opts.sweep_limit as u128);
    let mut seen: HashSet<Vec<(u64, usize)>> = HashSet::new();
    let mut out = Vec::new();
    let mut push = |lambda: &Distribution, map: &[usize]| {
        let mut key: Vec<(u64, usize)> = (0..n_w)
            .filter(|&w| lambda[w] > 0.0)
            .map(|w| (lambda[w].to_bits(), map[w]))
            .collect();
        key.sort_unstable();
        if seen.insert(key) {
            out.push(OuterCandidate::deterministic(lambda.clone(), map, n_v));
        }
    };
    for v in 0..n_v {
        push(&lambdas[0], &vec![v; n_w]);
    }
    if full {
        for lambda in &lambdas {
            let mut map = vec![0usize; n_w];
            loop {
                push(lambda, &map);
                let mut i = 0;
                while i < n_w {
                    map[i] += 1;
                    if map[i] < n_v {
                        break;
                    }
                    map[i] = 0;
                    i += 1;
                }
                if i == n_w {
                    break;
                }
            }
        }
    }
    out
}

fn softmax(theta: &[f64]) -> Vec<f64> {
    let m = theta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = theta.iter().map(|t| (t - m).exp()).collect();
    let z: f64 = p.iter().sum();
    for x in p.iter_mut() {
        *x /= z;
        if *x < WEIGHT_FLOOR {
            *x = 0.0;
        }
    }
    let z: f64 = p.iter().sum();
    p.iter().map(|x| x / z).collect()
}

fn logits(p: &[f64]) -> Vec<f64> {
    p.iter().map(|&x| x.max(1e-12).ln()).collect()
}

/// Unconstrained coordinates: `n_w` lambda logits, then `n_w * n_v` kernel logits.
struct Params {
    n_w: usize,
    n_v: usize,
}

impl Params {
    fn len(&self) -> usize {
        self.n_w * (1 + self.n_v)
    }

    fn candidate(&self, theta: &[f64]) -> OuterCandidate {
        let lambda = Distribution::new(softmax(&theta[..self.n_w])).expect("softmax is stochastic");
        let rows = (0..self.n_w)
            .map(|w| {
                let s = self.n_w + w * self.n_v;
                Distribution::new(softmax(&theta[s..s + self.n_v])).expect("softmax is stochastic")
            })
            .collect();
        OuterCandidate {
            lambda,
            decoder_kernel: Kernel::new(rows).expect("rows of equal length"),
        }
    }

    fn encode(&self, cand: &OuterCandidate) -> Vec<f64> {
        let mut theta = logits(cand.lambda.probs());
        for row in cand.decoder_kernel.rows() {
            theta.extend(logits(row.probs()));
        }
        theta
    }
}

struct Start {
    best: Option<(OuterCandidate, CandidateEvaluation)>,
    evaluations: usize,
    failures: Vec<String>,
}

struct Search<'a> {
    inst: &'a Instance,
    rate: f64,
    opts: &'a OuterOptions,
    params: Params,
}

impl Search<'_> {
    /// Coordinate-wise golden-section descent from `theta`. Candidates whose
    /// value provably exceeds `ceiling` skip the tie-break.
    fn descend(&self, mut theta: Vec<f64>, ceiling: f64) -> Start {
        let mut st = Start {
            best: None,
            evaluations: 0,
            failures: Vec::new(),
        };
        let eval = |theta: &[f64], st: &mut Start| -> f64 {
            let cand = self.params.candidate(theta);
            let bound = st
                .best
                .as_ref()
                .map_or(ceiling, |(_, e)| e.value.min(ceiling));
            st.evaluations += 1;
            match score(self.inst, &cand, self.rate, self.opts, bound) {
                Ok(Score::Full(e)) => {
                    let v = e.value;
                    if st.best.as_ref().is_none_or(|(_, b)| v < b.value) {
                        st.best = Some((cand, *e));
                    }
                    v
                }
                Ok(s) => s.value(),
                Err(err) => {
                    st.failures.push(err.to_string());
                    f64::INFINITY
                }
            }
        };
        let mut current = eval(&theta, &mut st);
        for _ in 0..self.opts.passes {
            let before = current;
            for i in 0..self.params.len() {
                let x0 = theta[i];
                let (mut a, mut b) = (x0 - LINE_SPAN, x0 + LINE_SPAN);
                let at = |x: f64, st: &mut Start| {
                    let mut t = theta.clone();
                    t[i] = x;
                    eval(&t, st)
                };
                let mut c = b - INV_PHI * (b - a);
                let mut d = a + INV_PHI * (b - a);
                let mut fc = at(c, &mut st);
                let mut fd = at(d, &mut st);
                let (mut best_x, mut best_f) = (x0, current);
                for (x, f) in [(c, fc), (d, fd)] {
                    if f < best_f {
                        best_x = x;
                        best_f = f;
                    }
                }
                for _ in 2..self.opts.golden_steps.max(2) {
                    if fc <= fd {
                        b = d;
                        d = c;
                        fd = fc;
                        c = b - INV_PHI * (b - a);
                        fc = at(c, &mut st);
                        if fc < best_f {
                            best_x = c;
                            best_f = fc;
                        }
                    } else {
                        a = c;
                        c = d;
                        fc = fd;
                        d = a + INV_PHI * (b - a);
                        fd = at(d, &mut st);
                        if fd < best_f {
                            best_x = d;
                            best_f = fd;
                        }
                    }
                }
                theta[i] = best_x;
                current = best_f;
            }
            if !(current < before) {
                break;
            }
        }
        st
    }

    fn random_start(&self, index: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.opts.seed);
        rng.set_stream(index as u64 + 1);
        (0..self.params.len())
            .map(|_| rng.random_range(-3.0..3.0))
            .collect()
    }
}

fn better(a: &CandidateEvaluation, b: Option<&CandidateEvaluation>) -> bool {
    b.is_none_or(|b| a.value < b.value)
}

/// Best decoder candidate found at rate `rate`.
pub fn search_c(inst: &Instance, rate: f64, opts: &OuterOptions) -> Result<OuterResult> {
    if !(rate >= 0.0) || !rate.is_finite() {
        return Err(Error::Input(format!(
            "rate {rate} must be finite and non-negative"
        )));
    }
    opts.solver.validate()?;
    let n_w = opts.n_w(inst.n_u());
    let search = Search {
        inst,
        rate,
        opts,
        params: Params {
            n_w,
            n_v: inst.n_v(),
        },
    };
    let mut failures = Vec::new();
    let mut evaluations = 0;

    let sweep = if opts.sweep {
        sweep_candidates(inst, opts)
    } else {
        Vec::new()
    };
    let mut best: Option<(OuterCandidate, CandidateEvaluation)> = None;
    // chunks share the bound of the chunks before them, so pruning does not
    // depend on the thread schedule
    for chunk in sweep.chunks(SWEEP_CHUNK) {
        let bound = best.as_ref().map_or(f64::INFINITY, |b| b.1.value);
        let run = |c: &OuterCandidate| score(inst, c, rate, opts, bound);
        #[cfg(feature = "parallel")]
        let scored: Vec<Result<Score>> = chunk.par_iter().map(run).collect();
        #[cfg(not(feature = "parallel"))]
        let scored: Vec<Result<Score>> = chunk.iter().map(run).collect();
        evaluations += chunk.len();
        for (cand, r) in chunk.iter().zip(scored) {
            match r {
                Ok(Score::Full(e)) => {
                    if better(&e, best.as_ref().map(|b| &b.1)) {
                        best = Some((cand.clone(), *e));
                    }
                }
                Ok(Score::Pruned(_)) => {}
                Err(err) => failures.push(format!("sweep: {err}")),
            }
        }
    }
    let sweep_value = best.as_ref().map(|b| b.1.value);
    let ceiling = sweep_value.unwrap_or(f64::INFINITY);

    // the first start polishes the sweep winner, the rest are random
    let thetas: Vec<Vec<f64>> = (0..opts.starts)
        .map(|s| match (&best, s) {
            (Some((c, _)), 0) => search.params.encode(c),
            _ => search.random_start(s),
        })
        .collect();
    let go = |t: &Vec<f64>| search.descend(t.clone(), ceiling);
    #[cfg(feature = "parallel")]
    let starts: Vec<Start> = thetas.par_iter().map(go).collect();
    #[cfg(not(feature = "parallel"))]
    let starts: Vec<Start> = thetas.iter().map(go).collect();

    let mut value_trace = Vec::with_capacity(starts.len());
    for (s, st) in starts.into_iter().enumerate() {
        evaluations += st.evaluations;
        failures.extend(st.failures.into_iter().map(|e| format!("start {s}: {e}")));
        value_trace.push(st.best.as_ref().map(|b| b.1.value));
        if let Some((c, e)) = st.best {
            if better(&e, best.as_ref().map(|b| &b.1)) {
                best = Some((c, e));
            }
        }
    }
    let Some((cand, eval)) = best else {
        return Err(Error::Convergence {
            context: format!("no candidate could be evaluated at rate {rate}: {failures:?}"),
            residual: f64::NAN,
        });
    };
    Ok(OuterResult {
        rate,
        value: eval.value,
        best: cand,
        inner: eval.inner,
        tiebreak: eval.tiebreak,
        starts_used: opts.starts,
        value_trace,
        sweep_value,
        sweep_size: sweep.len(),
        evaluations,
        failures,
        certified: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary(ce: [[f64; 2]; 2]) -> Instance {
        let rows = |m: [[f64; 2]; 2]| CostMatrix::from_rows(&m.map(|r| r.to_vec())).unwrap();
        Instance::new(
            Distribution::uniform(2),
            rows(ce),
            rows([[0.0, 1.0], [1.0, 0.0]]),
        )
        .unwrap()
    }

    #[test]
    fn constant_kernel_ignores_lambda_and_rate() {
        let inst = binary([[0.3, 0.9], [0.2, 0.4]]);
        let opts = OuterOptions::default();
        let q = Distribution::new(vec![0.25, 0.75]).unwrap();
        let kernel = Kernel::new(vec![q; 5]).unwrap();
        let expect = 0.5 * (0.75) + 0.5 * (0.25);
        for (lam, rate) in [
            (Distribution::uniform(5), 0.3),
            (Distribution::point_mass(5, 2), 1.0),
        ] {
            let c = OuterCandidate::new(lam, kernel.clone()).unwrap();
            let v = evaluate_candidate(&inst, &c, rate, &opts).unwrap().value;
            assert!((v - expect).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn matched_identity_reaches_zero() {
        let inst = binary([[0.0, 1.0], [1.0, 0.0]]);
        let c = OuterCandidate::deterministic(
            Distribution::new(vec![0.5, 0.5, 0.0, 0.0, 0.0]).unwrap(),
            &[0, 1, 0, 0, 0],
            2,
        );
        let v = evaluate_candidate(&inst, &c, 1.0, &OuterOptions::default())
            .unwrap()
            .value;
        assert!(v.abs() < 1e-6, "{v}");
    }

    #[test]
    fn zero_rate_value_is_lambda_average() {
        let inst = binary([[0.1, 0.7], [0.5, 0.2]]);
        let lam = Distribution::new(vec![0.1, 0.2, 0.3, 0.2, 0.2]).unwrap();
        let c = OuterCandidate::deterministic(lam.clone(), &[0, 1, 1, 0, 1], 2);
        let v = evaluate_candidate(&inst, &c, 0.0, &OuterOptions::default())
            .unwrap()
            .value;
        // each w contributes sum_u pu(u) c_d(u, v(w)) = 0.5
        assert!((v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn sweep_removes_relabelings() {
        let inst = binary([[0.0, 1.0], [1.0, 0.0]]);
        let c = sweep_candidates(&inst, &OuterOptions::default());
        // uniform lambda over 5 symbols: 6 multisets of outputs
        let uniform = c
            .iter()
            .filter(|x| x.lambda == Distribution::uniform(5))
            .count();
        assert_eq!(uniform, 6);
    }

    #[test]
    fn search_examples() {
        let opts = OuterOptions {
            starts: 2,
            ..OuterOptions::default()
        };
        let matched = binary([[0.0, 1.0], [1.0, 0.0]]);
        let r = search_c(&matched, 0.0, &opts).unwrap();
        assert!((r.value - 0.5).abs() < 1e-9);
        let r = search_c(&matched, 0.5, &opts).unwrap();
        assert!((r.value - 0.110028).abs() < 1e-3, "{}", r.value);
        assert!(!r.certified);

        let opposed = binary([[1.0, 0.0], [0.0, 1.0]]);
        let r = search_c(&opposed, 1.0, &opts).unwrap();
        assert!((r.value - 0.5).abs() < 1e-3, "{}", r.value);
    }
}
