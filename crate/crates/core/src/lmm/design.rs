//! Data frames, model formulas and design matrices.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column-oriented dataset with numeric and categorical columns.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Frame {
    n: usize,
    numeric: BTreeMap<String, Vec<f64>>,
    categorical: BTreeMap<String, Vec<String>>,
}

impl Frame {
    pub fn new(n: usize) -> Self {
        Frame {
            n,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn check_len(&self, name: &str, len: usize) -> Result<()> {
        if len != self.n {
            return Err(Error::Invalid(format!(
                "column {name} has {len} rows, frame has {}",
                self.n
            )));
        }
        Ok(())
    }

    pub fn with_numeric(mut self, name: &str, values: Vec<f64>) -> Result<Self> {
        self.check_len(name, values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("column {name} has missing or non-finite values")));
        }
        self.numeric.insert(name.to_string(), values);
        Ok(self)
    }

    pub fn with_categorical(mut self, name: &str, values: Vec<String>) -> Result<Self> {
        self.check_len(name, values.len())?;
        self.categorical.insert(name.to_string(), values);
        Ok(self)
    }

    pub fn numeric(&self, name: &str) -> Result<&[f64]> {
        self.numeric
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    pub fn categorical(&self, name: &str) -> Result<&[String]> {
        self.categorical
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    /// Rows reordered by `order`.
    pub fn permuted(&self, order: &[usize]) -> Frame {
        Frame {
            n: order.len(),
            numeric: self
                .numeric
                .iter()
                .map(|(k, v)| (k.clone(), order.iter().map(|&i| v[i]).collect()))
                .collect(),
            categorical: self
                .categorical
                .iter()
                .map(|(k, v)| (k.clone(), order.iter().map(|&i| v[i].clone()).collect()))
                .collect(),
        }
    }

    pub fn map_numeric(&self, name: &str, f: impl Fn(f64) -> f64) -> Result<Frame> {
        let v: Vec<f64> = self.numeric(name)?.iter().map(|x| f(*x)).collect();
        self.clone().with_numeric(name, v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum FixedTerm {
    Numeric(String),
    /// Treatment coding against `reference`.
    Categorical { name: String, reference: String },
}

/// `response ~ 1 + fixed + (1|random_1) + ... + (1|random_k)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormulaSpec {
    pub response: String,
    pub fixed: Vec<FixedTerm>,
    pub random: Vec<String>,
}

impl FormulaSpec {
    pub fn new(response: &str) -> Self {
        FormulaSpec {
            response: response.to_string(),
            fixed: Vec::new(),
            random: Vec::new(),
        }
    }

    pub fn numeric(mut self, name: &str) -> Self {
        self.fixed.push(FixedTerm::Numeric(name.to_string()));
        self
    }

    pub fn categorical(mut self, name: &str, reference: &str) -> Self {
        self.fixed.push(FixedTerm::Categorical {
            name: name.to_string(),
            reference: reference.to_string(),
        });
        self
    }

    pub fn random(mut self, name: &str) -> Self {
        self.random.push(name.to_string());
        self
    }
}

/// One random-intercept grouping factor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupFactor {
    pub name: String,
    pub levels: Vec<String>,
    /// Level index per row.
    pub index: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrices {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub x_names: Vec<String>,
    pub factors: Vec<GroupFactor>,
}

impl DesignMatrices {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn q(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.levels.len()).collect()
    }

    /// Dense `n × q_k` indicator matrix of factor `k`.
    pub fn z(&self, k: usize) -> DMatrix<f64> {
        let f = &self.factors[k];
        let mut z = DMatrix::zeros(self.n(), f.levels.len());
        for (i, &l) in f.index.iter().enumerate() {
            z[(i, l)] = 1.0;
        }
        z
    }
}

fn sorted_levels(values: &[String]) -> Vec<String> {
    values.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect()
}

/// Numerical rank via singular values relative to the largest.
pub fn rank(x: &DMatrix<f64>) -> usize {
    if x.ncols() == 0 {
        return 0;
    }
    let sv = x.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let tol = max * (x.nrows().max(x.ncols()) as f64) * f64::EPSILON * 10.0;
    sv.iter().filter(|s| **s > tol).count()
}

/// Treatment-coded fixed effects (intercept first) and level indices for each
/// grouping factor. Levels are sorted, so the result does not depend on row
/// order beyond the rows themselves.
pub fn build_design(frame: &Frame, spec: &FormulaSpec) -> Result<DesignMatrices> {
    let n = frame.len();
    let y = DVector::from_column_slice(frame.numeric(&spec.response)?);
    let mut cols: Vec<Vec<f64>> = vec![vec![1.0; n]];
    let mut names = vec!["(Intercept)".to_string()];
    for term in &spec.fixed {
        match term {
            FixedTerm::Numeric(name) => {
                cols.push(frame.numeric(name)?.to_vec());
                names.push(name.clone());
            }
            FixedTerm::Categorical { name, reference } => {
                let values = frame.categorical(name)?;
                let levels = sorted_levels(values);
                if !levels.contains(reference) {
                    return Err(Error::UnknownLevel {
                        term: name.clone(),
                        level: reference.clone(),
                    });
                }
                for level in levels.iter().filter(|l| *l != reference) {
                    cols.push(values.iter().map(|v| f64::from(u8::from(v == level))).collect());
                    names.push(format!("{name}[{level}]"));
                }
            }
        }
    }
    let p = cols.len();
    let flat: Vec<f64> = cols.into_iter().flatten().collect();
    let x = DMatrix::from_vec(n, p, flat);
    if n <= p {
        return Err(Error::Invalid(format!("need more rows ({n}) than fixed effects ({p})")));
    }
    let r = rank(&x);
    if r < p {
        return Err(Error::RankDeficient { rank: r, cols: p });
    }
    let mut factors = Vec::new();
    for name in &spec.random {
        let values = frame.categorical(name)?;
        let levels = sorted_levels(values);
        if levels.is_empty() {
            return Err(Error::Invalid(format!("grouping factor {name} has no levels")));
        }
        let pos: BTreeMap<&str, usize> = levels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        factors.push(GroupFactor {
            name: name.clone(),
            index: values.iter().map(|v| pos[v.as_str()]).collect(),
            levels,
        });
    }
    Ok(DesignMatrices { y, x, x_names: names, factors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_factor_coding() {
        let f = Frame::new(4)
            .with_numeric("y", vec![1.0, 2.0, 3.0, 4.0])
            .unwrap()
            .with_categorical("g", ["a", "b", "a", "b"].map(String::from).to_vec())
            .unwrap();
        let d = build_design(&f, &FormulaSpec::new("y").categorical("g", "a")).unwrap();
        assert_eq!(d.x.shape(), (4, 2));
        assert_eq!(d.x.column(1).as_slice(), &[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(d.x_names, vec!["(Intercept)", "g[b]"]);
    }

    #[test]
    fn errors() {
        let f = Frame::new(3)
            .with_numeric("y", vec![1.0, 2.0, 3.0])
            .unwrap()
            .with_numeric("c", vec![2.0, 2.0, 2.0])
            .unwrap()
            .with_categorical("g", ["a", "b", "a"].map(String::from).to_vec())
            .unwrap();
        assert!(matches!(
            build_design(&f, &FormulaSpec::new("y").numeric("missing")),
            Err(Error::MissingColumn(_))
        ));
        assert!(matches!(
            build_design(&f, &FormulaSpec::new("y").categorical("g", "z")),
            Err(Error::UnknownLevel { .. })
        ));
        assert!(matches!(
            build_design(&f, &FormulaSpec::new("y").numeric("c")),
            Err(Error::RankDeficient { rank: 1, cols: 2 })
        ));
    }
}
