//! Support reduction for the auxiliary alphabet.
//!
//! Each active `w` contributes the vector
//! `(p_{.w}, sum_u h(p_uw), sum_u p_uw c_e, sum_u p_uw c_d, 1)`. Any linear
//! dependence `mu` among these vectors lets `lambda` move along `-mu` without
//! changing the source marginal, the information term or either cost, until
//! some `lambda_w` hits zero.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::{h_unchecked, CostMatrix, Coupling, Distribution};

/// Negative entries of the reduced weights down to this size are rounding.
const CLAMP: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyVector {
    /// Index of the auxiliary symbol this vector belongs to.
    pub w: usize,
    pub column: Vec<f64>,
}

/// The five quantities a reduction must preserve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub source_marginal: Vec<f64>,
    pub info_term: f64,
    pub encoder_cost: f64,
    pub decoder_cost: f64,
    pub total_mass: f64,
}

impl Aggregates {
    pub fn compute(lambda: &Distribution, family: &[FamilyVector]) -> Self {
        let n_u = family.first().map_or(0, |f| f.column.len() - 4);
        let mut total = vec![0.0; n_u + 4];
        for f in family {
            let l = lambda[f.w];
            for (t, x) in total.iter_mut().zip(&f.column) {
                *t += l * x;
            }
        }
        Self {
            source_marginal: total[..n_u].to_vec(),
            info_term: total[n_u],
            encoder_cost: total[n_u + 1],
            decoder_cost: total[n_u + 2],
            total_mass: total[n_u + 3],
        }
    }

    pub fn max_deviation(&self, other: &Self) -> f64 {
        self.source_marginal
            .iter()
            .zip(&other.source_marginal)
            .map(|(a, b)| (a - b).abs())
            .chain([
                (self.info_term - other.info_term).abs(),
                (self.encoder_cost - other.encoder_cost).abs(),
                (self.decoder_cost - other.decoder_cost).abs(),
                (self.total_mass - other.total_mass).abs(),
            ])
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionCertificate {
    pub lambda_out: Distribution,
    /// The conditional table restricted to the support of `lambda_out`.
    pub p_out: Coupling,
    /// Auxiliary symbols dropped, in removal order.
    pub removed: Vec<usize>,
    pub before: Aggregates,
    pub after: Aggregates,
}

impl ReductionCertificate {
    pub fn max_deviation(&self) -> f64 {
        self.before.max_deviation(&self.after)
    }
}

/// One family vector per `w` in the coupling's support.
pub fn build_family(
    p_star: &Coupling,
    ce_bar: &CostMatrix,
    cd_bar: &CostMatrix,
) -> Vec<FamilyVector> {
    p_star
        .support()
        .iter()
        .map(|&w| {
            let col = p_star.column(w);
            let mut column = col.clone();
            column.push(col.iter().map(|&x| h_unchecked(x)).sum());
            column.push(
                col.iter()
                    .enumerate()
                    .map(|(u, x)| x * ce_bar.get(u, w))
                    .sum(),
            );
            column.push(
                col.iter()
                    .enumerate()
                    .map(|(u, x)| x * cd_bar.get(u, w))
                    .sum(),
            );
            column.push(1.0);
            FamilyVector { w, column }
        })
        .collect()
}

/// A nonzero `mu` (aligned with `family`) with `sum_w mu_w x_w = 0`.
///
/// Only the first `dim` columns take part, which is enough for a dependence to
/// exist once the family is larger than the span. The vector is scaled to
/// `max |mu| = 1` with its first nonzero entry positive.
pub fn find_null_direction(family: &[FamilyVector]) -> Result<Option<Vec<f64>>> {
    let Some(first) = family.first() else {
        return Ok(None);
    };
    let dim = first.column.len();
    // entries of p sum to the last component, so the span has dimension dim - 1
    let forced = family.len() > dim - 1;
    let k = family.len().min(dim);
    let a = DMatrix::from_fn(dim, k, |i, j| family[j].column[i]);
    let scale = a.amax().max(1.0);
    // a square or tall SVD always yields k right singular vectors
    let svd = a.clone().svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let (idx, smallest) =
        svd.singular_values
            .iter()
            .copied()
            .enumerate()
            .fold(
                (0, f64::INFINITY),
                |acc, (i, s)| if s < acc.1 { (i, s) } else { acc },
            );
    if !forced && smallest > 1e-12 * scale {
        return Ok(None);
    }
    let mut mu: Vec<f64> = v_t.row(idx).iter().copied().collect();
    let peak = mu.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let sign = mu
        .iter()
        .find(|x| x.abs() > 1e-12 * peak)
        .map_or(1.0, |x| x.signum());
    for x in mu.iter_mut() {
        *x *= sign / peak;
    }
    let residual = (0..dim)
        .map(|i| (0..k).map(|j| a[(i, j)] * mu[j]).sum::<f64>().abs())
        .fold(0.0, f64::max);
    if residual > 1e-10 * scale {
        return Err(Error::Degeneracy(format!(
            "null direction residual {residual:.3e} exceeds tolerance"
        )));
    }
    mu.resize(family.len(), 0.0);
    Ok(Some(mu))
}

/// Moves `lambda` along `-mu` to the end of the admissible interval that
/// zeroes the coordinate with the largest `|mu_w| / lambda_w`. Ties prefer
/// the upper end. `mu` is indexed like `lambda`.
pub fn reduce_step(lambda: &Distribution, mu: &[f64]) -> Result<Distribution> {
    if mu.len() != lambda.len() {
        return Err(Error::Dimension(format!(
            "direction has {} entries, weights have {}",
            mu.len(),
            lambda.len()
        )));
    }
    let mut pick: Option<(usize, f64)> = None;
    for (w, &m) in mu.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        if lambda[w] <= 0.0 {
            return Err(Error::Input(format!("direction leaves the support at {w}")));
        }
        let ratio = m.abs() / lambda[w];
        let better = match pick {
            None => true,
            Some((v, r)) => ratio > r || (ratio == r && m > 0.0 && mu[v] < 0.0),
        };
        if better {
            pick = Some((w, ratio));
        }
    }
    let Some((w0, _)) = pick else {
        return Err(Error::Input("zero direction".into()));
    };
    let gamma = lambda[w0] / mu[w0];
    let mut out: Vec<f64> = lambda
        .probs()
        .iter()
        .zip(mu)
        .map(|(l, m)| l - gamma * m)
        .collect();
    out[w0] = 0.0;
    for (w, x) in out.iter_mut().enumerate() {
        if *x < 0.0 {
            if *x < -CLAMP {
                return Err(Error::Degeneracy(format!(
                    "reduced weight {x:.3e} at {w} is negative"
                )));
            }
            *x = 0.0;
        }
    }
    let total: f64 = out.iter().sum();
    Distribution::new(out.into_iter().map(|x| x / total).collect())
}

/// Repeats the reduction until at most `|U| + 3` auxiliary symbols remain.
pub fn reduce_support(
    lambda: &Distribution,
    p_star: &Coupling,
    ce_bar: &CostMatrix,
    cd_bar: &CostMatrix,
    pu: &Distribution,
) -> Result<ReductionCertificate> {
    if p_star.n_u() != pu.len() || p_star.n_w() != lambda.len() {
        return Err(Error::Dimension(
            "coupling does not match the marginals".into(),
        ));
    }
    let target = pu.len() + 3;
    let mut lam = lambda.clone();
    let mut p = p_star.with_support(lambda.support());
    let family = build_family(&p, ce_bar, cd_bar);
    let before = Aggregates::compute(&lam, &family);
    let mut removed = Vec::new();
    while p.support().len() > target {
        let family = build_family(&p, ce_bar, cd_bar);
        let Some(local) = find_null_direction(&family)? else {
            break;
        };
        let mut mu = vec![0.0; lam.len()];
        for (f, m) in family.iter().zip(&local) {
            mu[f.w] = *m;
        }
        let next = reduce_step(&lam, &mu)?;
        let support = next.support();
        removed.extend(p.support().iter().copied().filter(|w| !support.contains(w)));
        lam = next;
        p = p.with_support(support);
    }
    let after = Aggregates::compute(&lam, &build_family(&p, ce_bar, cd_bar));
    Ok(ReductionCertificate {
        lambda_out: lam,
        p_out: p,
        removed,
        before,
        after,
    })
}
