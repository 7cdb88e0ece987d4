//! Problem instances: a source distribution and the two cost matrices over
//! `(u, v)`, read from JSON. Entries may be numbers or rational strings such
//! as `"1/3"`; rationals are kept exactly for the game oracle.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::prob::{CostMatrix, Distribution, MARGINAL_TOL};

/// A number as written in a spec.
#[derive(Debug, Clone, PartialEq)]
pub enum Scalar {
    Float(f64),
    Rational(BigRational),
}

impl Scalar {
    pub fn to_f64(&self) -> f64 {
        match self {
            Scalar::Float(x) => *x,
            Scalar::Rational(r) => rational_to_f64(r),
        }
    }

    /// Exact value; binary floats are converted without rounding.
    pub fn to_rational(&self) -> BigRational {
        match self {
            Scalar::Float(x) => BigRational::from_float(*x).expect("finite by validation"),
            Scalar::Rational(r) => r.clone(),
        }
    }

    fn to_json(&self) -> Value {
        match self {
            Scalar::Float(x) => Value::from(*x),
            Scalar::Rational(r) => Value::String(r.to_string()),
        }
    }

    fn from_json(v: &Value, path: &str) -> Result<Self> {
        match v {
            Value::Number(n) => {
                let x = n
                    .as_f64()
                    .ok_or_else(|| schema(path, "number out of range"))?;
                Ok(Scalar::Float(x))
            }
            Value::String(s) => parse_rational(s)
                .map(Scalar::Rational)
                .ok_or_else(|| schema(path, &format!("`{s}` is not a rational number"))),
            _ => Err(schema(path, "expected a number or a rational string")),
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Float(x) => write!(f, "{x}"),
            Scalar::Rational(r) => write!(f, "{r}"),
        }
    }
}

fn parse_rational(s: &str) -> Option<BigRational> {
    let s = s.trim();
    let (num, den) = match s.split_once('/') {
        Some((a, b)) => (a.trim(), b.trim()),
        None => (s, "1"),
    };
    let num = BigInt::from_str(num).ok()?;
    let den = BigInt::from_str(den).ok()?;
    if den.is_zero() {
        return None;
    }
    Some(BigRational::new(num, den))
}

/// Nearest double to a rational, computed without overflow for large terms.
pub fn rational_to_f64(r: &BigRational) -> f64 {
    if let (Some(n), Some(d)) = (r.numer().to_f64(), r.denom().to_f64()) {
        if n.is_finite() && d.is_finite() && n.abs() < 9.0e15 && d < 9.0e15 {
            return n / d;
        }
    }
    // scale to 64 significant bits before dividing
    let bits = r.numer().bits() as i64 - r.denom().bits() as i64;
    let shift = 64 - bits;
    let scaled = if shift >= 0 {
        (r.numer() << shift as usize) / r.denom()
    } else {
        r.numer() / (r.denom() << (-shift) as usize)
    };
    scaled.to_f64().unwrap_or(f64::NAN) * 2f64.powi(-shift as i32)
}

fn schema(path: &str, message: &str) -> Error {
    Error::Schema {
        path: path.to_string(),
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub source: Vec<Scalar>,
    pub cost_encoder: Vec<Vec<Scalar>>,
    pub cost_decoder: Vec<Vec<Scalar>>,
    pub labels_u: Option<Vec<String>>,
    pub labels_v: Option<Vec<String>>,
}

impl ProblemSpec {
    /// Builds a validated spec from floating-point data.
    pub fn from_floats(source: &[f64], ce: &[Vec<f64>], cd: &[Vec<f64>]) -> Result<Self> {
        let wrap = |m: &[Vec<f64>]| -> Vec<Vec<Scalar>> {
            m.iter()
                .map(|r| r.iter().map(|&x| Scalar::Float(x)).collect())
                .collect()
        };
        let spec = Self {
            source: source.iter().map(|&x| Scalar::Float(x)).collect(),
            cost_encoder: wrap(ce),
            cost_decoder: wrap(cd),
            labels_u: None,
            labels_v: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn n_u(&self) -> usize {
        self.source.len()
    }

    pub fn n_v(&self) -> usize {
        self.cost_encoder.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let n_u = self.n_u();
        if n_u == 0 {
            return Err(schema("source", "empty source alphabet"));
        }
        let n_v = self.n_v();
        for (name, m) in [
            ("cost_encoder", &self.cost_encoder),
            ("cost_decoder", &self.cost_decoder),
        ] {
            if m.len() != n_u {
                return Err(Error::Dimension(format!(
                    "{name} has {} rows, source has {n_u} symbols",
                    m.len()
                )));
            }
            for (u, row) in m.iter().enumerate() {
                if row.len() != n_v || n_v == 0 {
                    return Err(Error::Dimension(format!(
                        "{name}[{u}] has {} entries, expected {n_v}",
                        row.len()
                    )));
                }
                for (v, x) in row.iter().enumerate() {
                    if !x.to_f64().is_finite() {
                        return Err(schema(&format!("{name}[{u}][{v}]"), "cost must be finite"));
                    }
                }
            }
        }
        for (u, x) in self.source.iter().enumerate() {
            let negative = match x {
                Scalar::Float(f) => !(*f >= 0.0) || !f.is_finite(),
                Scalar::Rational(r) => r.is_negative(),
            };
            if negative {
                return Err(Error::InvalidDistribution(format!(
                    "source[{u}] = {x} is negative or not finite"
                )));
            }
        }
        let exact = self.source.iter().all(|x| matches!(x, Scalar::Rational(_)));
        if exact {
            let total: BigRational = self.source.iter().map(Scalar::to_rational).sum();
            if !total.is_one() {
                return Err(Error::InvalidDistribution(format!(
                    "source sums to {total}"
                )));
            }
        } else {
            let total: f64 = self.source.iter().map(Scalar::to_f64).sum();
            if (total - 1.0).abs() > MARGINAL_TOL {
                return Err(Error::InvalidDistribution(format!(
                    "source sums to {total}"
                )));
            }
        }
        for (key, labels, n) in [
            ("labels_u", &self.labels_u, n_u),
            ("labels_v", &self.labels_v, n_v),
        ] {
            if let Some(l) = labels {
                if l.len() != n {
                    return Err(schema(
                        key,
                        &format!("expected {n} labels, found {}", l.len()),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| schema("$", &e.to_string()))?;
        Self::from_value(&value)
    }

    pub fn from_value(value: &Value) -> Result<Self> {
        let obj = value
            .as_object()
            .ok_or_else(|| schema("$", "expected an object"))?;
        for key in obj.keys() {
            if !matches!(
                key.as_str(),
                "source" | "cost_encoder" | "cost_decoder" | "labels_u" | "labels_v"
            ) {
                return Err(schema(key, "unknown key"));
            }
        }
        let field = |k: &str| obj.get(k).ok_or_else(|| schema(k, "missing"));
        let source = scalar_list(field("source")?, "source")?;
        let cost_encoder = scalar_matrix(field("cost_encoder")?, "cost_encoder")?;
        let cost_decoder = scalar_matrix(field("cost_decoder")?, "cost_decoder")?;
        let spec = Self {
            source,
            cost_encoder,
            cost_decoder,
            labels_u: labels(obj, "labels_u")?,
            labels_v: labels(obj, "labels_v")?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_value(&self) -> Value {
        let mut obj = Map::new();
        obj.insert(
            "source".into(),
            Value::Array(self.source.iter().map(Scalar::to_json).collect()),
        );
        for (k, m) in [
            ("cost_encoder", &self.cost_encoder),
            ("cost_decoder", &self.cost_decoder),
        ] {
            obj.insert(
                k.into(),
                Value::Array(
                    m.iter()
                        .map(|r| Value::Array(r.iter().map(Scalar::to_json).collect()))
                        .collect(),
                ),
            );
        }
        for (k, l) in [("labels_u", &self.labels_u), ("labels_v", &self.labels_v)] {
            if let Some(l) = l {
                obj.insert(k.into(), Value::from(l.clone()));
            }
        }
        Value::Object(obj)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_value()).expect("spec serializes")
    }

    /// Source distribution in floating point, renormalized.
    pub fn source_distribution(&self) -> Result<Distribution> {
        let w: Vec<f64> = self.source.iter().map(Scalar::to_f64).collect();
        Distribution::from_weights(&w)
    }

    pub fn ce(&self) -> CostMatrix {
        to_cost(&self.cost_encoder)
    }

    pub fn cd(&self) -> CostMatrix {
        to_cost(&self.cost_decoder)
    }

    /// Drops source symbols of zero probability; returns the kept indices.
    pub fn strip_zero_mass(&self) -> (Self, Vec<usize>) {
        let keep: Vec<usize> = (0..self.n_u())
            .filter(|&u| self.source[u].to_f64() > 0.0)
            .collect();
        let pick = |m: &[Vec<Scalar>]| keep.iter().map(|&u| m[u].clone()).collect();
        let spec = Self {
            source: keep.iter().map(|&u| self.source[u].clone()).collect(),
            cost_encoder: pick(&self.cost_encoder),
            cost_decoder: pick(&self.cost_decoder),
            labels_u: self
                .labels_u
                .as_ref()
                .map(|l| keep.iter().map(|&u| l[u].clone()).collect()),
            labels_v: self.labels_v.clone(),
        };
        (spec, keep)
    }

    /// `min_v sum_u P(u) c_d(u, v)`, the value of the best constant reproduction.
    pub fn constant_value(&self) -> f64 {
        let p: Vec<f64> = self.source.iter().map(Scalar::to_f64).collect();
        (0..self.n_v())
            .map(|v| {
                p.iter()
                    .zip(&self.cost_decoder)
                    .map(|(pu, row)| pu * row[v].to_f64())
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min)
    }
}

fn to_cost(m: &[Vec<Scalar>]) -> CostMatrix {
    let rows: Vec<Vec<f64>> = m
        .iter()
        .map(|r| r.iter().map(Scalar::to_f64).collect())
        .collect();
    CostMatrix::from_rows(&rows).expect("validated dimensions")
}

fn scalar_list(v: &Value, path: &str) -> Result<Vec<Scalar>> {
    v.as_array()
        .ok_or_else(|| schema(path, "expected an array"))?
        .iter()
        .enumerate()
        .map(|(i, x)| Scalar::from_json(x, &format!("{path}[{i}]")))
        .collect()
}

fn scalar_matrix(v: &Value, path: &str) -> Result<Vec<Vec<Scalar>>> {
    v.as_array()
        .ok_or_else(|| schema(path, "expected an array of rows"))?
        .iter()
        .enumerate()
        .map(|(i, row)| scalar_list(row, &format!("{path}[{i}]")))
        .collect()
}

fn labels(obj: &Map<String, Value>, key: &str) -> Result<Option<Vec<String>>> {
    let Some(v) = obj.get(key) else {
        return Ok(None);
    };
    let arr = v
        .as_array()
        .ok_or_else(|| schema(key, "expected an array of strings"))?;
    arr.iter()
        .enumerate()
        .map(|(i, x)| {
            x.as_str()
                .map(str::to_string)
                .ok_or_else(|| schema(&format!("{key}[{i}]"), "expected a string"))
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}
