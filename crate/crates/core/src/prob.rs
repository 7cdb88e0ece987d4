//! Finite-alphabet probability primitives.
//!
//! Everything here works in bits. Tables are small and dense; the solver
//! never sees alphabets beyond a few dozen symbols.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Structural tolerance for probability vectors.
pub const STRUCT_TOL: f64 = 1e-12;
/// Tolerance for marginal consistency between a coupling and its source.
pub const MARGINAL_TOL: f64 = 1e-9;

/// `x log2 x`, extended by continuity with `h(0) = 0`.
pub fn h(x: f64) -> Result<f64> {
    if x.is_nan() || x < 0.0 {
        return Err(Error::Domain(format!("h undefined at {x}")));
    }
    if x > 1.0 + STRUCT_TOL {
        return Err(Error::Domain(format!("h expects a probability, got {x}")));
    }
    Ok(h_unchecked(x))
}

#[inline]
pub(crate) fn h_unchecked(x: f64) -> f64 {
    if x > 0.0 {
        x * x.log2()
    } else {
        0.0
    }
}

/// A probability vector over a finite alphabet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Distribution {
    probs: Vec<f64>,
}

impl Distribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty alphabet".into()));
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0)
        {
            return Err(Error::InvalidDistribution(format!(
                "entry {i} is {p}, expected a non-negative number"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > STRUCT_TOL {
            return Err(Error::InvalidDistribution(format!(
                "entries sum to {total}, expected 1"
            )));
        }
        Ok(Self { probs })
    }

    /// Normalizes non-negative weights into a distribution.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidDistribution(
                "weights must be non-negative with positive total".into(),
            ));
        }
        Self::new(weights.iter().map(|w| w / total).collect())
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn point_mass(n: usize, at: usize) -> Self {
        let mut probs = vec![0.0; n];
        probs[at] = 1.0;
        Self { probs }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn support(&self) -> Vec<usize> {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    /// Mixture `t * self + (1 - t) * other`.
    pub fn mix(&self, other: &Self, t: f64) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::Dimension(
                "mixing distributions of different size".into(),
            ));
        }
        Ok(Self {
            probs: self
                .probs
                .iter()
                .zip(&other.probs)
                .map(|(a, b)| t * a + (1.0 - t) * b)
                .collect(),
        })
    }
}

impl std::ops::Index<usize> for Distribution {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.probs[i]
    }
}

impl TryFrom<Vec<f64>> for Distribution {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Distribution> for Vec<f64> {
    fn from(d: Distribution) -> Self {
        d.probs
    }
}

/// Row-stochastic table: one distribution per conditioning symbol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    rows: Vec<Distribution>,
}

impl Kernel {
    pub fn new(rows: Vec<Distribution>) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::Dimension("kernel without rows".into()));
        };
        let width = first.len();
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Dimension("kernel rows of unequal length".into()));
        }
        Ok(Self { rows })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(
            rows.into_iter()
                .map(Distribution::new)
                .collect::<Result<Vec<_>>>()?,
        )
    }

    /// Deterministic kernel sending row `i` to output `map[i]`.
    pub fn deterministic(map: &[usize], outputs: usize) -> Self {
        Self {
            rows: map
                .iter()
                .map(|&v| Distribution::point_mass(outputs, v))
                .collect(),
        }
    }

    pub fn n_inputs(&self) -> usize {
        self.rows.len()
    }

    pub fn n_outputs(&self) -> usize {
        self.rows[0].len()
    }

    pub fn rows(&self) -> &[Distribution] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &Distribution {
        &self.rows[i]
    }

    pub fn get(&self, input: usize, output: usize) -> f64 {
        self.rows[input][output]
    }
}

/// Dense real matrix of costs, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} cost matrix with {} entries",
                data.len()
            )));
        }
        if data.iter().any(|c| !c.is_finite()) {
            return Err(Error::Input("cost entries must be finite".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::Dimension("cost matrix without rows".into()));
        };
        let cols = first.len();
        if let Some(i) = rows.iter().position(|r| r.len() != cols) {
            return Err(Error::Dimension(format!(
                "ragged cost matrix: row {i} has {} entries, row 0 has {cols}",
                rows[i].len()
            )));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn range(&self) -> f64 {
        self.max() - self.min()
    }

    /// Keeps only the listed columns, in order.
    pub fn select_cols(&self, cols: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.rows * cols.len());
        for r in 0..self.rows {
            data.extend(cols.iter().map(|&c| self.get(r, c)));
        }
        Self {
            rows: self.rows,
            cols: cols.len(),
            data,
        }
    }
}

/// Conditional table `p[u][w] = P(U = u | W = w)` on the active columns.
///
/// Inactive columns are carried as zeros so that indices into the full
/// auxiliary alphabet stay valid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    p: Vec<Vec<f64>>,
    support: Vec<usize>,
}

impl Coupling {
    pub fn new(p: Vec<Vec<f64>>, support: Vec<usize>) -> Result<Self> {
        let Some(first) = p.first() else {
            return Err(Error::Dimension("coupling without rows".into()));
        };
        let width = first.len();
        if p.iter().any(|r| r.len() != width) {
            return Err(Error::Dimension("coupling rows of unequal length".into()));
        }
        if support.iter().any(|&w| w >= width) {
            return Err(Error::Dimension("support index out of range".into()));
        }
        if p.iter().flatten().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Domain(
                "coupling entries must be non-negative".into(),
            ));
        }
        let c = Self { p, support };
        let dev = c.column_deviation();
        if dev > 1e-9 {
            return Err(Error::Consistency { max_deviation: dev });
        }
        Ok(c)
    }

    /// Builds the conditional table of a joint `pi[u][w]` on the support of `lambda`.
    pub fn from_joint(joint: &[Vec<f64>], lambda: &Distribution) -> Result<Self> {
        let support = lambda.support();
        let n_w = lambda.len();
        let p = joint
            .iter()
            .map(|row| {
                (0..n_w)
                    .map(|w| {
                        if lambda[w] > 0.0 {
                            row[w] / lambda[w]
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        Self::new(p, support)
    }

    /// Every active column equal to `pu`.
    pub fn product(pu: &Distribution, lambda: &Distribution) -> Self {
        let support = lambda.support();
        let p = (0..pu.len())
            .map(|u| {
                (0..lambda.len())
                    .map(|w| if lambda[w] > 0.0 { pu[u] } else { 0.0 })
                    .collect()
            })
            .collect();
        Self { p, support }
    }

    pub fn n_u(&self) -> usize {
        self.p.len()
    }

    pub fn n_w(&self) -> usize {
        self.p[0].len()
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    #[inline]
    pub fn get(&self, u: usize, w: usize) -> f64 {
        self.p[u][w]
    }

    pub fn table(&self) -> &[Vec<f64>] {
        &self.p
    }

    pub fn column(&self, w: usize) -> Vec<f64> {
        self.p.iter().map(|r| r[w]).collect()
    }

    /// Largest |sum_u p[u][w] - 1| over active columns.
    pub fn column_deviation(&self) -> f64 {
        self.support
            .iter()
            .map(|&w| (self.p.iter().map(|r| r[w]).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Same table, restricted to a smaller support.
    pub fn with_support(&self, support: Vec<usize>) -> Self {
        Self {
            p: self.p.clone(),
            support,
        }
    }

    /// Joint table `lambda_w * p[u][w]`.
    pub fn joint(&self, lambda: &Distribution) -> Vec<Vec<f64>> {
        self.p
            .iter()
            .map(|row| row.iter().enumerate().map(|(w, x)| lambda[w] * x).collect())
            .collect()
    }
}

/// Shannon entropy in bits.
pub fn entropy(d: &Distribution) -> f64 {
    -d.probs().iter().map(|&x| h_unchecked(x)).sum::<f64>()
}

/// Largest deviation of `sum_w lambda_w p[u][w]` from `pu(u)`.
pub fn marginal_deviation(pu: &Distribution, lambda: &Distribution, p: &Coupling) -> f64 {
    (0..pu.len())
        .map(|u| {
            let m: f64 = p.support().iter().map(|&w| lambda[w] * p.get(u, w)).sum();
            (m - pu[u]).abs()
        })
        .fold(0.0, f64::max)
}

fn check_shapes(pu: &Distribution, lambda: &Distribution, p: &Coupling) -> Result<()> {
    if p.n_u() != pu.len() || p.n_w() != lambda.len() {
        return Err(Error::Dimension(format!(
            "coupling is {}x{}, marginals are {} and {}",
            p.n_u(),
            p.n_w(),
            pu.len(),
            lambda.len()
        )));
    }
    if lambda.support().iter().any(|w| !p.support().contains(w)) {
        return Err(Error::Input(
            "lambda puts mass outside the coupling support".into(),
        ));
    }
    Ok(())
}

/// `I(U;W)` in bits for the joint `lambda_w p[u][w]`.
///
/// Evaluated as the lambda-average of `D(p[., w] || pu)`; this equals
/// `H(U) + sum_w lambda_w sum_u h(p[u][w])` whenever the marginals agree but
/// keeps full relative precision near independence.
pub fn mutual_information(pu: &Distribution, lambda: &Distribution, p: &Coupling) -> Result<f64> {
    check_shapes(pu, lambda, p)?;
    let dev = marginal_deviation(pu, lambda, p);
    if dev > MARGINAL_TOL {
        return Err(Error::Consistency { max_deviation: dev });
    }
    Ok(mutual_information_unchecked(pu, lambda, p))
}

pub(crate) fn mutual_information_unchecked(
    pu: &Distribution,
    lambda: &Distribution,
    p: &Coupling,
) -> f64 {
    let mut info = 0.0;
    for &w in p.support() {
        if lambda[w] == 0.0 {
            continue;
        }
        let mut kl = 0.0;
        for u in 0..pu.len() {
            let x = p.get(u, w);
            if x > 0.0 {
                kl += x * (x / pu[u]).log2();
            }
        }
        info += lambda[w] * kl;
    }
    info.max(0.0)
}

/// Left-hand side of the rate constraint without the `-R` term:
/// `sum_w lambda_w sum_u h(p[u][w]) + H(U)`.
pub fn info_by_entropy_form(pu: &Distribution, lambda: &Distribution, p: &Coupling) -> f64 {
    let cond: f64 = p
        .support()
        .iter()
        .map(|&w| lambda[w] * (0..pu.len()).map(|u| h_unchecked(p.get(u, w))).sum::<f64>())
        .sum();
    cond + entropy(pu)
}

/// `c_bar(u, w) = sum_v kernel(v | w) c(u, v)`.
pub fn reduce_cost(kernel: &Kernel, c: &CostMatrix) -> Result<CostMatrix> {
    if kernel.n_outputs() != c.cols() {
        return Err(Error::Dimension(format!(
            "kernel emits {} symbols, cost matrix has {} columns",
            kernel.n_outputs(),
            c.cols()
        )));
    }
    let n_w = kernel.n_inputs();
    let mut data = Vec::with_capacity(c.rows() * n_w);
    for u in 0..c.rows() {
        for w in 0..n_w {
            let row = kernel.row(w);
            data.push((0..c.cols()).map(|v| row[v] * c.get(u, v)).sum());
        }
    }
    CostMatrix::new(c.rows(), n_w, data)
}

/// Bayes inversion of `P(U|W)` into the forward kernel `P(W|U)`.
pub fn coupling_to_forward(
    pu: &Distribution,
    lambda: &Distribution,
    p: &Coupling,
) -> Result<Kernel> {
    check_shapes(pu, lambda, p)?;
    if let Some(u) = pu.probs().iter().position(|&x| x <= 0.0) {
        return Err(Error::Domain(format!("source symbol {u} has zero mass")));
    }
    let dev = marginal_deviation(pu, lambda, p);
    if dev > MARGINAL_TOL {
        return Err(Error::Consistency { max_deviation: dev });
    }
    let rows = (0..pu.len())
        .map(|u| {
            let raw: Vec<f64> = (0..lambda.len())
                .map(|w| lambda[w] * p.get(u, w) / pu[u])
                .collect();
            // rows are stochastic only up to the marginal tolerance
            let total: f64 = raw.iter().sum();
            Distribution::new(raw.iter().map(|x| x / total).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Kernel::new(rows)
}

/// Expected cost `sum_w lambda_w sum_u p[u][w] c(u, w)` over the coupling support.
pub fn expected_cost(lambda: &Distribution, p: &Coupling, c: &CostMatrix) -> f64 {
    p.support()
        .iter()
        .map(|&w| lambda[w] * (0..p.n_u()).map(|u| p.get(u, w) * c.get(u, w)).sum::<f64>())
        .sum()
}
