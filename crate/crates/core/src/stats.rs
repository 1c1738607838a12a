//! Small descriptive statistics shared by the analysis modules.

use serde::{Deserialize, Serialize};

use crate::lmm::Z_95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

/// Wilson score interval for `wins / n` at 95%.
pub fn wilson(wins: usize, n: usize) -> Option<Interval> {
    if n == 0 {
        return None;
    }
    let (edge_lo, edge_hi) = (wins == 0, wins == n);
    let n = n as f64;
    let p = wins as f64 / n;
    let z2 = Z_95 * Z_95;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = Z_95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    // the bounds are exactly 0 and 1 at the edges; rounding would miss them
    Some(Interval {
        lo: if edge_lo { 0.0 } else { (centre - half).max(0.0) },
        hi: if edge_hi { 1.0 } else { (centre + half).min(1.0) },
    })
}

/// Sample mean and standard deviation (n - 1).
pub fn mean_sample_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let ss = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// `√(((n₁-1)s₁² + (n₂-1)s₂²) / (n₁+n₂-2))`.
pub fn pooled_sd(a: &[f64], b: &[f64]) -> f64 {
    let (_, sa) = mean_sample_sd(a);
    let (_, sb) = mean_sample_sd(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    (((na - 1.0) * sa * sa + (nb - 1.0) * sb * sb) / (na + nb - 2.0)).sqrt()
}

pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}
