use mdr_core::oracle::game::{message_bits, source_block_probabilities};
use mdr_core::oracle::{
    ba_distortion_rate, encoder_best_response, oracle_value, pessimistic_value, DecoderTable,
};
use mdr_core::spec::{ProblemSpec, Scalar};
use mdr_core::{CostMatrix, Distribution};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn q(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// Random spec with small-denominator rational entries, so ties are common.
fn rational_spec(rng: &mut ChaCha8Rng, n_u: usize, n_v: usize) -> ProblemSpec {
    let weights: Vec<i64> = (0..n_u).map(|_| rng.random_range(1..5)).collect();
    let total: i64 = weights.iter().sum();
    let mut cost = || -> Vec<Vec<Scalar>> {
        (0..n_u)
            .map(|_| {
                (0..n_v)
                    .map(|_| Scalar::Rational(q(rng.random_range(0..4), 3)))
                    .collect()
            })
            .collect()
    };
    let spec = ProblemSpec {
        source: weights
            .iter()
            .map(|&w| Scalar::Rational(q(w, total)))
            .collect(),
        cost_encoder: cost(),
        cost_decoder: cost(),
        labels_u: None,
        labels_v: None,
    };
    spec.validate().unwrap();
    spec
}

fn blocks(alphabet: usize, n: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|b| {
                (0..alphabet).map(move |s| {
                    let mut c = b.clone();
                    c.push(s);
                    c
                })
            })
            .collect();
    }
    out
}

fn block_cost(c: &[Vec<Scalar>], u: &[usize], v: &[usize]) -> BigRational {
    u.iter().zip(v).map(|(&a, &b)| c[a][b].to_rational()).sum()
}

/// Max over every selection from the encoder's argmin sets, by brute force.
fn worst_selection(spec: &ProblemSpec, tau: &DecoderTable) -> BigRational {
    let n = tau.n;
    let src = blocks(spec.n_u(), n);
    let mut choices: Vec<Vec<usize>> = Vec::new();
    for u in &src {
        let costs: Vec<BigRational> = tau
            .messages
            .iter()
            .map(|v| block_cost(&spec.cost_encoder, u, v))
            .collect();
        let best = costs.iter().min().unwrap().clone();
        choices.push((0..costs.len()).filter(|&m| costs[m] == best).collect());
    }
    let mut worst: Option<BigRational> = None;
    let mut pick = vec![0usize; src.len()];
    loop {
        let mut total = BigRational::zero();
        for (k, u) in src.iter().enumerate() {
            let p: BigRational = u.iter().map(|&s| spec.source[s].to_rational()).product();
            let v = &tau.messages[choices[k][pick[k]]];
            total += p * block_cost(&spec.cost_decoder, u, v);
        }
        total /= q(n as i64, 1);
        if worst.as_ref().is_none_or(|w| total > *w) {
            worst = Some(total);
        }
        let mut i = 0;
        while i < src.len() {
            pick[i] += 1;
            if pick[i] < choices[i].len() {
                break;
            }
            pick[i] = 0;
            i += 1;
        }
        if i == src.len() {
            return worst.unwrap();
        }
    }
}

fn all_tables(n_v: usize, n: usize, messages: usize) -> Vec<DecoderTable> {
    let out = blocks(n_v, n);
    blocks(out.len(), messages)
        .into_iter()
        .map(|idx| DecoderTable::new(n, idx.iter().map(|&i| out[i].clone()).collect()).unwrap())
        .collect()
}

#[test]
fn blockwise_value_equals_worst_full_selection() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for (n, rate) in [(1, 1.0), (1, 2.0), (2, 0.5), (2, 1.0)] {
        for _ in 0..6 {
            let spec = rational_spec(&mut rng, 2, 2);
            let m = 1usize << message_bits(n, rate).unwrap();
            let tables = all_tables(2, n, m);
            let mut best: Option<BigRational> = None;
            for tau in &tables {
                let v = pessimistic_value(&spec, tau).unwrap();
                assert_eq!(v, worst_selection(&spec, tau), "n = {n}, tau = {tau:?}");
                if best.as_ref().is_none_or(|b| v < *b) {
                    best = Some(v);
                }
            }
            let o = oracle_value(&spec, n, rate).unwrap();
            assert_eq!(o.value_exact, best.unwrap().to_string());
            assert_eq!(o.decoders_enumerated, tables.len() as u64);
        }
    }
}

#[test]
fn best_response_sets_match_direct_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..10 {
        let spec = rational_spec(&mut rng, 3, 2);
        let tau =
            DecoderTable::new(2, vec![vec![0, 1], vec![1, 1], vec![0, 1], vec![1, 0]]).unwrap();
        let br = encoder_best_response(&spec, &tau, 2).unwrap();
        for row in &br.blocks {
            let costs: Vec<BigRational> = tau
                .messages
                .iter()
                .map(|v| block_cost(&spec.cost_encoder, &row.source_block, v))
                .collect();
            let best = costs.iter().min().unwrap();
            let expect: Vec<usize> = (0..4).filter(|&m| costs[m] == *best).collect();
            assert_eq!(row.argmin, expect);
            let cd = |m: usize| block_cost(&spec.cost_decoder, &row.source_block, &tau.messages[m]);
            assert!(row.argmin.iter().all(|&m| cd(m) <= cd(row.chosen)));
        }
    }
}

#[test]
fn longer_blocks_do_no_worse() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..8 {
        let spec = rational_spec(&mut rng, 2, 2);
        for rate in [0.5, 1.0] {
            let one = oracle_value(&spec, 1, rate).unwrap();
            let two = oracle_value(&spec, 2, rate).unwrap();
            let (a, b) = (
                two.value_exact.parse::<BigRational>().unwrap(),
                one.value_exact.parse::<BigRational>().unwrap(),
            );
            assert!(a <= b, "n=2 {a} > n=1 {b}");
        }
    }
}

#[test]
fn block_probabilities_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let spec = rational_spec(&mut rng, 3, 2);
    let p = source_block_probabilities(&spec, 3).unwrap();
    assert_eq!(p.len(), 27);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

/// Closed form for the uniform source on `k` symbols with Hamming cost:
/// `R(D) = log2 k - h(D) - D log2(k - 1)`.
fn uniform_hamming_rate(k: usize, d: f64) -> f64 {
    let h = if d <= 0.0 {
        0.0
    } else {
        -(d * d.log2() + (1.0 - d) * (1.0 - d).log2())
    };
    (k as f64).log2() - h - d * ((k - 1) as f64).log2()
}

#[test]
fn blahut_matches_closed_form_for_uniform_hamming() {
    for k in [2usize, 3, 4] {
        let pu = Distribution::uniform(k);
        let rows: Vec<Vec<f64>> = (0..k)
            .map(|u| (0..k).map(|v| if u == v { 0.0 } else { 1.0 }).collect())
            .collect();
        let c = CostMatrix::from_rows(&rows).unwrap();
        for d in [0.05, 0.15, 0.3] {
            if d >= 1.0 - 1.0 / k as f64 {
                continue;
            }
            let r = uniform_hamming_rate(k, d);
            let got = ba_distortion_rate(&pu, &c, r).unwrap();
            assert!((got - d).abs() < 1e-6, "k = {k}, D = {d}: {got}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn oracle_is_non_increasing_in_rate(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = rational_spec(&mut rng, 2, 2);
        let mut last: Option<BigRational> = None;
        for rate in [0.0, 1.0, 2.0] {
            let v: BigRational = oracle_value(&spec, 1, rate).unwrap().value_exact.parse().unwrap();
            if let Some(l) = &last {
                prop_assert!(v <= *l);
            }
            last = Some(v);
        }
    }

    #[test]
    fn blahut_is_non_increasing_in_rate(p in 0.05f64..0.5, r1 in 0.0f64..0.6, dr in 0.0f64..0.3) {
        let pu = Distribution::new(vec![1.0 - p, p]).unwrap();
        let c = CostMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let a = ba_distortion_rate(&pu, &c, r1).unwrap();
        let b = ba_distortion_rate(&pu, &c, r1 + dr).unwrap();
        prop_assert!(b <= a + 1e-9);
    }
}
