//! Exhaustive finite-blocklength game over deterministic decoders.
//!
//! The decoder commits to a table `m -> v^n`; the encoder answers each source
//! block with a message minimizing its block cost and, among those, the one
//! worst for the decoder. Block costs are additive, so the pessimistic value
//! is a sum of per-block choices, and that choice depends only on the set of
//! output blocks the table uses.

use std::collections::HashMap;

use num_rational::BigRational;
use num_traits::Zero;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spec::{rational_to_f64, ProblemSpec, Scalar};

/// Largest number of source blocks enumerated.
pub const MAX_SOURCE_BLOCKS: u128 = 4096;
/// Largest number of decoder tables enumerated.
pub const MAX_DECODERS: u128 = 1_000_000;
/// Encoder cost differences up to this size are ties when any cost is a float.
pub const FLOAT_TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderTable {
    pub n: usize,
    /// `messages[m]` is the output block, as symbol indices, sent for message `m`.
    pub messages: Vec<Vec<usize>>,
}

impl DecoderTable {
    pub fn new(n: usize, messages: Vec<Vec<usize>>) -> Result<Self> {
        if n == 0 || messages.is_empty() {
            return Err(Error::Input(
                "decoder needs n >= 1 and at least one message".into(),
            ));
        }
        if let Some(b) = messages.iter().find(|b| b.len() != n) {
            return Err(Error::Dimension(format!(
                "block {b:?} does not have length {n}"
            )));
        }
        Ok(Self { n, messages })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockResponse {
    pub source_block: Vec<usize>,
    /// Messages minimizing the encoder's block cost, ascending.
    pub argmin: Vec<usize>,
    /// The message in `argmin` with the largest decoder cost.
    pub chosen: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BestResponseTable {
    pub n: usize,
    pub blocks: Vec<BlockResponse>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleValue {
    pub n: usize,
    pub rate: f64,
    pub messages: usize,
    pub value: f64,
    /// The value as an exact fraction.
    pub value_exact: String,
    pub best_decoder: DecoderTable,
    pub best_response: BestResponseTable,
    pub decoders_enumerated: u64,
    /// Distinct sets of output blocks among the enumerated tables.
    pub distinct_images: usize,
}

/// `floor(n R)`, the number of message bits.
pub fn message_bits(n: usize, rate: f64) -> Result<u32> {
    if !(rate >= 0.0) || !rate.is_finite() {
        return Err(Error::Input(format!(
            "rate {rate} must be finite and non-negative"
        )));
    }
    let k = (n as f64 * rate).floor();
    if k > 126.0 {
        return Err(Error::Guard {
            what: "message count 2^floor(nR)".into(),
            required: u128::MAX,
            limit: MAX_DECODERS,
        });
    }
    Ok(k as u32)
}

fn checked_pow(base: usize, exp: u128, what: &str, limit: u128) -> Result<u128> {
    let guard = || Error::Guard {
        what: what.into(),
        required: u128::MAX,
        limit,
    };
    let mut acc: u128 = 1;
    if base <= 1 {
        return Ok(1);
    }
    for _ in 0..exp {
        acc = acc.checked_mul(base as u128).ok_or_else(guard)?;
        if acc > limit {
            return Err(Error::Guard {
                what: what.into(),
                required: acc,
                limit,
            });
        }
    }
    Ok(acc)
}

/// Exact block tables shared by every decoder.
struct Blocks {
    n: usize,
    n_u: usize,
    n_v: usize,
    n_ub: usize,
    n_vb: usize,
    prob: Vec<BigRational>,
    /// `order[ub]` ranks output blocks by encoder cost, then by decoder cost
    /// descending, then by index; `class[ub][vb]` numbers encoder-cost tie classes.
    order: Vec<Vec<usize>>,
    class: Vec<Vec<usize>>,
    cd: Vec<Vec<BigRational>>,
}

fn digits(mut x: usize, base: usize, n: usize) -> Vec<usize> {
    let mut out = vec![0; n];
    for d in out.iter_mut() {
        *d = x % base;
        x /= base;
    }
    out
}

fn index_of(block: &[usize], base: usize) -> usize {
    block.iter().rev().fold(0, |acc, &d| acc * base + d)
}

impl Blocks {
    fn new(spec: &ProblemSpec, n: usize, n_vb_needed: bool) -> Result<Self> {
        if n == 0 {
            return Err(Error::Input("blocklength must be at least 1".into()));
        }
        spec.validate()?;
        let (n_u, n_v) = (spec.n_u(), spec.n_v());
        let n_ub = checked_pow(n_u, n as u128, "source blocks |U|^n", MAX_SOURCE_BLOCKS)? as usize;
        let n_vb = if n_vb_needed {
            checked_pow(n_v, n as u128, "output blocks |V|^n", MAX_DECODERS)? as usize
        } else {
            0
        };
        let exact = all_rational(spec);
        let pu: Vec<BigRational> = spec.source.iter().map(Scalar::to_rational).collect();
        let to_q = |m: &[Vec<Scalar>]| -> Vec<Vec<BigRational>> {
            m.iter()
                .map(|r| r.iter().map(Scalar::to_rational).collect())
                .collect()
        };
        let (ce1, cd1) = (to_q(&spec.cost_encoder), to_q(&spec.cost_decoder));
        let mut prob = Vec::with_capacity(n_ub);
        let mut order = Vec::with_capacity(n_ub);
        let mut class = Vec::with_capacity(n_ub);
        let mut cd = Vec::with_capacity(n_ub);
        for ub in 0..n_ub {
            let u = digits(ub, n_u, n);
            prob.push(u.iter().map(|&s| pu[s].clone()).product());
            if !n_vb_needed {
                continue;
            }
            let mut ce_row = Vec::with_capacity(n_vb);
            let mut cd_row = Vec::with_capacity(n_vb);
            for vb in 0..n_vb {
                let v = digits(vb, n_v, n);
                let block = |c: &[Vec<BigRational>]| -> BigRational {
                    u.iter().zip(&v).map(|(&a, &b)| c[a][b].clone()).sum()
                };
                ce_row.push(block(&ce1));
                cd_row.push(block(&cd1));
            }
            let (o, c) = rank(&ce_row, &cd_row, exact, n);
            order.push(o);
            class.push(c);
            cd.push(cd_row);
        }
        Ok(Self {
            n,
            n_u,
            n_v,
            n_ub,
            n_vb,
            prob,
            order,
            class,
            cd,
        })
    }

    /// Pessimistic block choice among the output blocks in `used`.
    fn choose(&self, ub: usize, used: &[usize]) -> usize {
        let pos = &self.order[ub];
        *used
            .iter()
            .min_by_key(|&&vb| pos[vb])
            .expect("non-empty image")
    }

    /// Exact pessimistic value, per letter, of a decoder with image `used`.
    fn value(&self, used: &[usize]) -> BigRational {
        let mut total = BigRational::zero();
        for ub in 0..self.n_ub {
            if self.prob[ub].is_zero() {
                continue;
            }
            let vb = self.choose(ub, used);
            total += &self.prob[ub] * &self.cd[ub][vb];
        }
        total / BigRational::from_integer((self.n as i64).into())
    }

    fn response(&self, table: &[usize]) -> BestResponseTable {
        let blocks = (0..self.n_ub)
            .map(|ub| {
                let chosen_vb = self.choose(ub, table);
                let best_class = self.class[ub][chosen_vb];
                let argmin: Vec<usize> = (0..table.len())
                    .filter(|&m| self.class[ub][table[m]] == best_class)
                    .collect();
                let chosen = argmin
                    .iter()
                    .copied()
                    .find(|&m| table[m] == chosen_vb)
                    .expect("chosen block is in the image");
                BlockResponse {
                    source_block: digits(ub, self.n_u, self.n),
                    argmin,
                    chosen,
                }
            })
            .collect();
        BestResponseTable { n: self.n, blocks }
    }
}

fn all_rational(spec: &ProblemSpec) -> bool {
    let is_q = |x: &Scalar| matches!(x, Scalar::Rational(_));
    spec.source.iter().all(is_q)
        && spec.cost_encoder.iter().flatten().all(is_q)
        && spec.cost_decoder.iter().flatten().all(is_q)
}

/// Ranks output blocks for one source block. Returns the rank of each block
/// and its encoder-cost tie class.
fn rank(ce: &[BigRational], cd: &[BigRational], exact: bool, n: usize) -> (Vec<usize>, Vec<usize>) {
    let mut by_ce: Vec<usize> = (0..ce.len()).collect();
    by_ce.sort_by(|&a, &b| ce[a].cmp(&ce[b]).then(a.cmp(&b)));
    let mut class = vec![0; ce.len()];
    let tol = FLOAT_TIE_TOL * n as f64;
    let mut head = by_ce[0];
    let mut k = 0;
    for &vb in &by_ce[1..] {
        let tied = if exact {
            ce[vb] == ce[head]
        } else {
            rational_to_f64(&(&ce[vb] - &ce[head])) <= tol
        };
        if !tied {
            k += 1;
            head = vb;
        }
        class[vb] = k;
    }
    let mut ordered: Vec<usize> = (0..ce.len()).collect();
    ordered.sort_by(|&a, &b| {
        class[a]
            .cmp(&class[b])
            .then(cd[b].cmp(&cd[a]))
            .then(a.cmp(&b))
    });
    let mut pos = vec![0; ce.len()];
    for (r, &vb) in ordered.iter().enumerate() {
        pos[vb] = r;
    }
    (pos, class)
}

/// The encoder's best responses to `tau`, with pessimistic tie-breaking.
pub fn encoder_best_response(
    spec: &ProblemSpec,
    tau: &DecoderTable,
    n: usize,
) -> Result<BestResponseTable> {
    if tau.n != n {
        return Err(Error::Dimension(format!(
            "decoder blocklength {} differs from n = {n}",
            tau.n
        )));
    }
    let blocks = Blocks::new(spec, n, true)?;
    let mut table = Vec::with_capacity(tau.messages.len());
    for b in &tau.messages {
        if b.iter().any(|&v| v >= spec.n_v()) {
            return Err(Error::Dimension(format!(
                "block {b:?} uses an unknown symbol"
            )));
        }
        table.push(index_of(b, blocks.n_v));
    }
    Ok(blocks.response(&table))
}

/// Exact pessimistic decoder cost per letter of a single table.
pub fn pessimistic_value(spec: &ProblemSpec, tau: &DecoderTable) -> Result<BigRational> {
    let blocks = Blocks::new(spec, tau.n, true)?;
    let mut used = Vec::with_capacity(tau.messages.len());
    for b in &tau.messages {
        if b.len() != tau.n || b.iter().any(|&v| v >= spec.n_v()) {
            return Err(Error::Dimension(format!(
                "block {b:?} is not a valid output block"
            )));
        }
        used.push(index_of(b, blocks.n_v));
    }
    Ok(blocks.value(&used))
}

/// Minimum over deterministic decoders of the pessimistic decoder cost per letter.
pub fn oracle_value(spec: &ProblemSpec, n: usize, rate: f64) -> Result<OracleValue> {
    let bits = message_bits(n, rate)?;
    let messages = 1usize << bits;
    let n_v = spec.n_v();
    checked_pow(
        n_v,
        (n as u128) * messages as u128,
        "decoders |V|^(nM)",
        MAX_DECODERS,
    )?;
    let blocks = Blocks::new(spec, n, true)?;
    let n_vb = blocks.n_vb;

    // first decoder index for every distinct image
    let mut images: Vec<(u64, Vec<usize>)> = Vec::new();
    let mut seen: HashMap<Vec<usize>, ()> = HashMap::new();
    let mut table = vec![0usize; messages];
    let mut count: u64 = 0;
    loop {
        let mut used = table.clone();
        used.sort_unstable();
        used.dedup();
        if seen.insert(used.clone(), ()).is_none() {
            images.push((count, used));
        }
        count += 1;
        // lexicographic order over (tau(1), ..., tau(M))
        let mut i = messages;
        while i > 0 {
            table[i - 1] += 1;
            if table[i - 1] < n_vb {
                break;
            }
            table[i - 1] = 0;
            i -= 1;
        }
        if i == 0 {
            break;
        }
    }

    #[cfg(feature = "parallel")]
    let values: Vec<BigRational> = images
        .par_iter()
        .map(|(_, used)| blocks.value(used))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let values: Vec<BigRational> = images.iter().map(|(_, used)| blocks.value(used)).collect();

    let mut best = 0;
    for k in 1..values.len() {
        if values[k] < values[best] {
            best = k;
        }
    }
    let (index, _) = &images[best];
    let mut decoder: Vec<usize> = digits(*index as usize, n_vb, messages);
    decoder.reverse();
    let best_decoder =
        DecoderTable::new(n, decoder.iter().map(|&vb| digits(vb, n_v, n)).collect())?;
    Ok(OracleValue {
        n,
        rate,
        messages,
        value: rational_to_f64(&values[best]),
        value_exact: values[best].to_string(),
        best_response: blocks.response(&decoder),
        best_decoder,
        decoders_enumerated: count,
        distinct_images: images.len(),
    })
}

/// Probability of every source block, in the order used by [`BestResponseTable`].
pub fn source_block_probabilities(spec: &ProblemSpec, n: usize) -> Result<Vec<f64>> {
    let blocks = Blocks::new(spec, n, false)?;
    debug_assert_eq!(blocks.prob.len(), blocks.n_ub);
    Ok(blocks.prob.iter().map(rational_to_f64).collect())
}
