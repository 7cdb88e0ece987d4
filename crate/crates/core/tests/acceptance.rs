//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero on any failure.

use std::time::{Duration, Instant};

use mdr_core::cli::{cmd_curve, RunConfig};
use mdr_core::envelope::{build_curve, convexify};
use mdr_core::oracle::{ba_distortion_rate, oracle_value};
use mdr_core::outer::{Instance, OuterOptions};
use mdr_core::prob::entropy;
use mdr_core::spec::{ProblemSpec, Scalar};
use mdr_core::{
    brute_force_inner, kkt_residual, reduce_support, solve_inner, CostMatrix, Coupling,
    Distribution, SolverOptions,
};
use num_bigint::BigInt;
use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, msg: String) -> Outcome {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn random_distribution(rng: &mut ChaCha8Rng, n: usize) -> Distribution {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    Distribution::from_weights(&w).unwrap()
}

fn random_costs(rng: &mut ChaCha8Rng, n: usize, m: usize) -> CostMatrix {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..m).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    CostMatrix::from_rows(&rows).unwrap()
}

fn hamming() -> Vec<Vec<f64>> {
    vec![vec![0.0, 1.0], vec![1.0, 0.0]]
}

fn matched() -> ProblemSpec {
    ProblemSpec::from_floats(&[0.5, 0.5], &hamming(), &hamming()).unwrap()
}

fn opposed() -> ProblemSpec {
    ProblemSpec::from_floats(&[0.5, 0.5], &[vec![1.0, 0.0], vec![0.0, 1.0]], &hamming()).unwrap()
}

/// Envelope values of a searched curve at each query rate.
fn envelope(
    spec: &ProblemSpec,
    grid: &[f64],
    queries: &[f64],
    opts: &OuterOptions,
) -> Result<Vec<f64>, String> {
    let inst = Instance::from_spec(spec).map_err(|e| e.to_string())?;
    let pts = build_curve(&inst, grid, opts).map_err(|e| e.to_string())?;
    let values: Vec<(f64, f64)> = pts
        .iter()
        .filter_map(|p| p.value.map(|v| (p.rate, v)))
        .collect();
    queries
        .iter()
        .map(|&r| {
            convexify(&values, r)
                .map(|c| c.value)
                .map_err(|e| e.to_string())
        })
        .collect()
}

struct InnerCase {
    pu: Distribution,
    lambda: Distribution,
    ce: CostMatrix,
    rate: f64,
}

fn inner_suite() -> Vec<InnerCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    (0..20)
        .map(|k| {
            let n = rng.random_range(2..=3);
            let m = rng.random_range(2..=3);
            let pu = random_distribution(&mut rng, n);
            let lambda = random_distribution(&mut rng, m);
            let ce = random_costs(&mut rng, n, m);
            let rate = [0.0, 0.25, 0.5, entropy(&pu)][k % 4];
            InnerCase {
                pu,
                lambda,
                ce,
                rate,
            }
        })
        .collect()
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let opts = SolverOptions::default();
    let mut worst: f64 = 0.0;
    for (k, c) in inner_suite().iter().enumerate() {
        let sol = solve_inner(&c.pu, &c.lambda, &c.ce, c.rate, &opts)
            .map_err(|e| format!("case {k}: {e}"))?;
        let grid = brute_force_inner(&c.pu, &c.lambda, &c.ce, c.rate, 1e-3)
            .map_err(|e| format!("case {k}: {e}"))?;
        worst = worst.max((sol.encoder_value - grid).abs());
    }
    let secs = t.elapsed().as_secs_f64();
    check(
        worst <= 2e-3 && secs < 60.0,
        format!("max |solver - grid| = {worst:.3e} (<= 2e-3), {secs:.1} s (< 60 s)"),
    )
}

fn criterion_2() -> Outcome {
    let opts = SolverOptions::default();
    let (mut kkt, mut feas, mut slack): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for (k, c) in inner_suite().iter().enumerate() {
        let sol = solve_inner(&c.pu, &c.lambda, &c.ce, c.rate, &opts)
            .map_err(|e| format!("case {k}: {e}"))?;
        let r = kkt_residual(&sol, &c.pu, &c.lambda, &c.ce, c.rate);
        kkt = kkt.max(r.max());
        feas = feas.max(r.feasibility());
        slack = slack.max(r.slackness);
    }
    check(
        kkt <= 1e-6 && feas <= 1e-8 && slack <= 1e-6,
        format!("max KKT {kkt:.2e} (<= 1e-6), feasibility {feas:.2e} (<= 1e-8), slackness {slack:.2e} (<= 1e-6)"),
    )
}

fn criterion_3() -> Outcome {
    let t = Instant::now();
    let spec = matched();
    let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let queries: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
    let env = envelope(&spec, &grid, &queries, &OuterOptions::default())?;
    let secs = t.elapsed().as_secs_f64();
    let pu = Distribution::uniform(2);
    let c = CostMatrix::from_rows(&hamming()).unwrap();
    let mut worst: f64 = 0.0;
    for (r, v) in queries.iter().zip(&env) {
        let d = ba_distortion_rate(&pu, &c, *r).map_err(|e| e.to_string())?;
        worst = worst.max((v - d).abs());
    }
    let at_half = env[4];
    check(
        worst <= 5e-3 && (at_half - 0.1100).abs() <= 5e-3 && secs < 120.0,
        format!(
            "max |envelope - D(R)| = {worst:.2e} (<= 5e-3), C(0.5) = {at_half:.6} (0.1100 +- 5e-3), {secs:.1} s for 11 points x 64 starts (< 120 s)"
        ),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1004);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let n = rng.random_range(2..=4);
        let m = rng.random_range(2..=4);
        let pu = random_distribution(&mut rng, n);
        let ce = random_costs(&mut rng, n, m).to_rows();
        let cd = random_costs(&mut rng, n, m).to_rows();
        let spec = ProblemSpec::from_floats(pu.probs(), &ce, &cd).map_err(|e| e.to_string())?;
        let closed = (0..m)
            .map(|v| (0..n).map(|u| pu[u] * cd[u][v]).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        let opts = OuterOptions {
            starts: 8,
            ..OuterOptions::default()
        };
        let env = envelope(&spec, &[0.0, 0.5], &[0.0], &opts)?;
        worst = worst.max((env[0] - closed).abs());
    }
    check(
        worst <= 1e-9,
        format!("max |C(0) - min_v E c_d(U, v)| = {worst:.2e} over 10 specs (<= 1e-9)"),
    )
}

/// Source marginal, entropy term, encoder and decoder costs and total mass,
/// summed directly over the support of `lambda`.
fn aggregates(
    pu: &Distribution,
    lambda: &Distribution,
    p: &Coupling,
    ce: &CostMatrix,
    cd: &CostMatrix,
) -> Vec<f64> {
    let n = pu.len();
    let mut out = vec![0.0; n + 4];
    for w in lambda.support() {
        let l = lambda[w];
        out[n + 3] += l;
        for u in 0..n {
            let q = p.get(u, w);
            out[u] += l * q;
            if q > 0.0 {
                out[n] -= l * q * q.log2();
            }
            out[n + 1] += l * q * ce.get(u, w);
            out[n + 2] += l * q * cd.get(u, w);
        }
    }
    out
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1005);
    let opts = SolverOptions::default();
    let (mut support, mut dev): (usize, f64) = (0, 0.0);
    for k in 0..20 {
        let pu = random_distribution(&mut rng, 2);
        let lambda = random_distribution(&mut rng, 8);
        let ce = random_costs(&mut rng, 2, 8);
        let cd = random_costs(&mut rng, 2, 8);
        let rate = rng.random_range(0.05..1.0);
        let sol =
            solve_inner(&pu, &lambda, &ce, rate, &opts).map_err(|e| format!("case {k}: {e}"))?;
        let cert = reduce_support(&lambda, &sol.p_star, &ce, &cd, &pu)
            .map_err(|e| format!("case {k}: {e}"))?;
        support = support.max(cert.lambda_out.support().len());
        let before = aggregates(&pu, &lambda, &sol.p_star, &ce, &cd);
        let after = aggregates(&pu, &cert.lambda_out, &cert.p_out, &ce, &cd);
        let d = before
            .iter()
            .zip(&after)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        dev = dev.max(d);
    }
    check(
        support <= 5 && dev <= 1e-9,
        format!("max support {support} (<= 5), max aggregate deviation {dev:.2e} (<= 1e-9) over 20 instances"),
    )
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1006);
    let mut specs = vec![matched(), opposed()];
    for _ in 0..2 {
        let pu = random_distribution(&mut rng, 3);
        let ce = random_costs(&mut rng, 3, 3).to_rows();
        let cd = random_costs(&mut rng, 3, 3).to_rows();
        specs.push(ProblemSpec::from_floats(pu.probs(), &ce, &cd).unwrap());
    }
    let opts = OuterOptions {
        starts: 8,
        ..OuterOptions::default()
    };
    let (mut checks, mut bad) = (0usize, Vec::new());
    for (s, spec) in specs.iter().enumerate() {
        let top = (spec.n_u() as f64).log2();
        let grid: Vec<f64> = (0..=8).map(|i| top * i as f64 / 8.0).collect();
        let inst = Instance::from_spec(spec).map_err(|e| e.to_string())?;
        let pts = build_curve(&inst, &grid, &opts).map_err(|e| e.to_string())?;
        let values: Vec<(f64, f64)> = pts
            .iter()
            .filter_map(|p| p.value.map(|v| (p.rate, v)))
            .collect();
        let mut env = Vec::new();
        let mut queries = grid.clone();
        queries.extend(grid.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        for &r in &queries {
            let c = convexify(&values, r).map_err(|e| e.to_string())?;
            checks += 1;
            if c.alpha * c.c1 + (1.0 - c.alpha) * c.c2 != c.value || c.budget() > r + 1e-12 {
                bad.push(format!("spec {s}: certificate at {r}"));
            }
            env.push(c.value);
        }
        let k = grid.len();
        for i in 0..k - 1 {
            let (a, b, mid) = (env[i], env[i + 1], env[k + i]);
            checks += 1;
            if mid > 0.5 * (a + b) + 1e-12 || mid > a + 1e-12 || b > mid + 1e-12 {
                bad.push(format!("spec {s}: midpoint {i}"));
            }
        }
    }
    check(
        bad.is_empty(),
        format!("{checks} certificate and midpoint checks on 4 curves, failures: {bad:?}"),
    )
}

fn rational_spec(rng: &mut ChaCha8Rng) -> ProblemSpec {
    let q = |n: i64, d: i64| Scalar::Rational(BigRational::new(BigInt::from(n), BigInt::from(d)));
    let a = rng.random_range(1..4);
    let mut cost = || -> Vec<Vec<Scalar>> {
        (0..2)
            .map(|_| (0..2).map(|_| q(rng.random_range(0..5), 4)).collect())
            .collect()
    };
    let spec = ProblemSpec {
        source: vec![q(a, 4), q(4 - a, 4)],
        cost_encoder: cost(),
        cost_decoder: cost(),
        labels_u: None,
        labels_v: None,
    };
    spec.validate().unwrap();
    spec
}

fn exact(s: &str) -> BigRational {
    s.parse().unwrap()
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1007);
    let mut specs = vec![matched(), opposed()];
    specs.extend((0..4).map(|_| rational_spec(&mut rng)));
    let rates = [0.0, 0.5, 1.0];
    let opts = OuterOptions {
        starts: 16,
        ..OuterOptions::default()
    };
    let (mut gap, mut slowest) = (f64::NEG_INFINITY, Duration::ZERO);
    let mut bad = Vec::new();
    for (s, spec) in specs.iter().enumerate() {
        let env = envelope(spec, &rates, &rates, &opts)?;
        for (r, e) in rates.iter().zip(&env) {
            let one = oracle_value(spec, 1, *r).map_err(|e| e.to_string())?;
            let t = Instant::now();
            let two = oracle_value(spec, 2, *r).map_err(|e| e.to_string())?;
            slowest = slowest.max(t.elapsed());
            gap = gap.max(e - one.value);
            if *e > one.value + 1e-6 {
                bad.push(format!(
                    "spec {s} R {r}: envelope {e} > oracle {}",
                    one.value
                ));
            }
            if exact(&two.value_exact) > exact(&one.value_exact) {
                bad.push(format!(
                    "spec {s} R {r}: n=2 {} > n=1 {}",
                    two.value_exact, one.value_exact
                ));
            }
        }
    }
    check(
        bad.is_empty() && slowest < Duration::from_secs(30),
        format!(
            "6 specs x 3 rates: max envelope - oracle(n=1) = {gap:.2e} (<= 1e-6), n=2 <= n=1 exactly, slowest n=2 enumeration {slowest:.2?} (< 30 s); failures: {bad:?}"
        ),
    )
}

fn criterion_8() -> Outcome {
    let spec = opposed();
    let env = envelope(&spec, &[0.0, 0.5, 1.0], &[1.0], &OuterOptions::default())?;
    let o = oracle_value(&spec, 1, 1.0).map_err(|e| e.to_string())?;
    check(
        (env[0] - 0.5).abs() <= 1e-3 && o.value_exact == "1/2",
        format!(
            "envelope(1) = {:.9} (0.5 +- 1e-3), oracle(n=1, R=1) = {}",
            env[0], o.value_exact
        ),
    )
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1009);
    let pu = random_distribution(&mut rng, 2);
    let ce = random_costs(&mut rng, 2, 3).to_rows();
    let cd = random_costs(&mut rng, 2, 3).to_rows();
    let spec = ProblemSpec::from_floats(pu.probs(), &ce, &cd).unwrap();
    let grid = [0.0, 0.25, 0.5, 0.75, 1.0];
    let config = RunConfig {
        command: "curve".into(),
        spec_path: None,
        rate: None,
        grid: grid.to_vec(),
        n: None,
        outer: OuterOptions {
            seed: 17,
            ..OuterOptions::default()
        },
    };
    let many = std::thread::available_parallelism()
        .map_or(4, |n| n.get())
        .max(4);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| cmd_curve(&spec, &grid, &config))
            .map_err(|e| e.to_string())
    };
    let (a, b) = (run(1)?, run(many)?);
    check(
        a == b,
        format!(
            "curve CSV with 1 and {many} threads: {} bytes, identical: {}",
            a.len(),
            a == b
        ),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("inner oracle equivalence", criterion_1),
        ("KKT certification", criterion_2),
        ("matched-case anchor", criterion_3),
        ("zero-rate closed form", criterion_4),
        ("support reduction certificate", criterion_5),
        ("envelope structure", criterion_6),
        ("oracle bridge and subadditivity", criterion_7),
        ("mismatch sanity", criterion_8),
        ("determinism", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = f();
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("PASS [{}] {name}: {msg} ({secs:.1} s)", i + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL [{}] {name}: {msg} ({secs:.1} s)", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
