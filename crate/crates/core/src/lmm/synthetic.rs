//! Simulated datasets with known fixed effects and variance components.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::design::{FormulaSpec, Frame};
use crate::error::Result;

/// `y = β₀ + β₁·[cond = b] + β₂·x1 + β₃·x2 + Σ u_k + ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDesign {
    pub n: usize,
    /// Level count of each crossed grouping factor.
    pub levels: Vec<usize>,
    pub beta: [f64; 4],
    pub group_variance: Vec<f64>,
    pub residual_variance: f64,
}

impl SyntheticDesign {
    pub fn new(n: usize, levels: &[usize], group_variance: &[f64]) -> Self {
        assert_eq!(levels.len(), group_variance.len());
        SyntheticDesign {
            n,
            levels: levels.to_vec(),
            beta: [0.4, -0.05, 0.02, 0.01],
            group_variance: group_variance.to_vec(),
            residual_variance: 0.01,
        }
    }

    pub fn factor_name(k: usize) -> String {
        format!("f{k}")
    }

    pub fn term_names() -> [&'static str; 4] {
        ["(Intercept)", "cond[b]", "x1", "x2"]
    }

    pub fn formula(&self) -> FormulaSpec {
        let mut f = FormulaSpec::new("y")
            .categorical("cond", "a")
            .numeric("x1")
            .numeric("x2");
        for k in 0..self.levels.len() {
            f = f.random(&Self::factor_name(k));
        }
        f
    }

    /// Every level of every factor appears; rows are otherwise assigned
    /// uniformly at random.
    pub fn simulate(&self, seed: u64) -> Result<Frame> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = Normal::new(0.0, 1.0).expect("unit normal");
        let effects: Vec<Vec<f64>> = self
            .levels
            .iter()
            .zip(&self.group_variance)
            .map(|(&l, &v)| (0..l).map(|_| v.sqrt() * std.sample(&mut rng)).collect())
            .collect();
        let mut y = Vec::with_capacity(self.n);
        let mut x1 = Vec::with_capacity(self.n);
        let mut x2 = Vec::with_capacity(self.n);
        let mut cond = Vec::with_capacity(self.n);
        let mut groups: Vec<Vec<String>> = vec![Vec::with_capacity(self.n); self.levels.len()];
        for i in 0..self.n {
            let b = rng.random_bool(0.5);
            let a1 = std.sample(&mut rng);
            let a2 = std.sample(&mut rng);
            let mut v = self.beta[0] + self.beta[2] * a1 + self.beta[3] * a2;
            if b {
                v += self.beta[1];
            }
            for (k, &l) in self.levels.iter().enumerate() {
                let g = if i < l { i } else { rng.random_range(0..l) };
                v += effects[k][g];
                groups[k].push(format!("L{g:03}"));
            }
            v += self.residual_variance.sqrt() * std.sample(&mut rng);
            y.push(v);
            x1.push(a1);
            x2.push(a2);
            cond.push(if b { "b" } else { "a" }.to_string());
        }
        let mut f = Frame::new(self.n)
            .with_numeric("y", y)?
            .with_numeric("x1", x1)?
            .with_numeric("x2", x2)?
            .with_categorical("cond", cond)?;
        for (k, g) in groups.into_iter().enumerate() {
            f = f.with_categorical(&Self::factor_name(k), g)?;
        }
        Ok(f)
    }
}
