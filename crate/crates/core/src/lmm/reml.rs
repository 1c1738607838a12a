//! The profiled REML criterion for `y = Xβ + Σ Z_k u_k + ε` as a function of
//! the variance ratios `θ_k = σ²_k / σ²`, with `H = I + Σ θ_k Z_k Z_kᵀ`:
//!
//! `-2 ℓ_R(θ) = (n-p)(1 + log(2π σ̂²)) + log|H| + log|Xᵀ H⁻¹ X|`,
//! `σ̂² = rᵀ H⁻¹ r / (n-p)`.
//!
//! Two routes compute it: a dense `n × n` Cholesky of `H`, and the Woodbury
//! form through the `q × q` matrix `M = I + Λ^½ ZᵀZ Λ^½`, which only needs
//! cross-products precomputed once.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::design::DesignMatrices;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub criterion: f64,
    pub beta: DVector<f64>,
    /// `(Xᵀ H⁻¹ X)⁻¹`; multiply by `sigma2` for the covariance of β̂.
    pub a_inv: DMatrix<f64>,
    pub sigma2: f64,
    pub log_det_h: f64,
    pub log_det_a: f64,
}

fn chol(m: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m).ok_or_else(|| Error::Singular(format!("{what} is not positive definite")))
}

fn log_det(c: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

fn finish(
    n: usize,
    p: usize,
    log_det_h: f64,
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: f64,
) -> Result<Evaluation> {
    let ca = chol(a, "XᵀH⁻¹X")?;
    let beta = ca.solve(&b);
    let rss = c - beta.dot(&b);
    let df = (n - p) as f64;
    if !(rss > 0.0) {
        return Err(Error::Singular(format!("non-positive weighted residual sum {rss}")));
    }
    let sigma2 = rss / df;
    let log_det_a = log_det(&ca);
    Ok(Evaluation {
        criterion: df * (1.0 + (2.0 * PI * sigma2).ln()) + log_det_h + log_det_a,
        beta,
        a_inv: ca.inverse(),
        sigma2,
        log_det_h,
        log_det_a,
    })
}

/// Cross-products of the design, accumulated once per fit.
#[derive(Debug, Clone)]
pub struct Sufficient {
    pub n: usize,
    pub p: usize,
    pub q: Vec<usize>,
    offsets: Vec<usize>,
    ztz: DMatrix<f64>,
    ztx: DMatrix<f64>,
    zty: DVector<f64>,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
}

/// Row order that depends only on row contents, so that sums are taken in the
/// same order however the input was shuffled.
pub fn canonical_order(d: &DesignMatrices) -> Vec<usize> {
    let mut order: Vec<usize> = (0..d.n()).collect();
    order.sort_by(|&i, &j| {
        for f in &d.factors {
            let c = f.index[i].cmp(&f.index[j]);
            if c.is_ne() {
                return c;
            }
        }
        for c in 0..d.p() {
            let o = d.x[(i, c)].total_cmp(&d.x[(j, c)]);
            if o.is_ne() {
                return o;
            }
        }
        d.y[i].total_cmp(&d.y[j])
    });
    order
}

impl Sufficient {
    pub fn new(d: &DesignMatrices) -> Self {
        let (n, p) = (d.n(), d.p());
        let q: Vec<usize> = d.q();
        let mut offsets = vec![0];
        for k in &q {
            offsets.push(offsets.last().unwrap() + k);
        }
        let qt = *offsets.last().unwrap();
        let mut ztz = DMatrix::zeros(qt, qt);
        let mut ztx = DMatrix::zeros(qt, p);
        let mut zty = DVector::zeros(qt);
        let mut xtx = DMatrix::zeros(p, p);
        let mut xty = DVector::zeros(p);
        let mut yty = 0.0;
        let mut cols = vec![0usize; d.factors.len()];
        for i in canonical_order(d) {
            for (k, f) in d.factors.iter().enumerate() {
                cols[k] = offsets[k] + f.index[i];
            }
            let yi = d.y[i];
            for &a in &cols {
                for &b in &cols {
                    ztz[(a, b)] += 1.0;
                }
                zty[a] += yi;
                for c in 0..p {
                    ztx[(a, c)] += d.x[(i, c)];
                }
            }
            for a in 0..p {
                let xa = d.x[(i, a)];
                xty[a] += xa * yi;
                for b in a..p {
                    xtx[(a, b)] += xa * d.x[(i, b)];
                }
            }
            yty += yi * yi;
        }
        for a in 0..p {
            for b in 0..a {
                xtx[(a, b)] = xtx[(b, a)];
            }
        }
        Sufficient {
            n,
            p,
            q,
            offsets,
            ztz,
            ztx,
            zty,
            xtx,
            xty,
            yty,
        }
    }

    pub fn total_q(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Per-column `√θ` for the stacked random effects.
    fn scale(&self, theta: &[f64]) -> DVector<f64> {
        let mut s = DVector::zeros(self.total_q());
        for (k, t) in theta.iter().enumerate() {
            let r = t.max(0.0).sqrt();
            for j in self.offsets[k]..self.offsets[k + 1] {
                s[j] = r;
            }
        }
        s
    }

    pub fn evaluate(&self, theta: &[f64]) -> Result<Evaluation> {
        assert_eq!(theta.len(), self.q.len());
        let qt = self.total_q();
        let s = self.scale(theta);
        let mut m = DMatrix::identity(qt, qt);
        for j in 0..qt {
            if s[j] == 0.0 {
                continue;
            }
            for i in 0..qt {
                if s[i] != 0.0 {
                    m[(i, j)] += s[i] * s[j] * self.ztz[(i, j)];
                }
            }
        }
        let cm = chol(m, "I + Λ½ZᵀZΛ½")?;
        let log_det_h = log_det(&cm);
        let mut w = self.ztx.clone();
        let mut v = self.zty.clone();
        for i in 0..qt {
            w.row_mut(i).scale_mut(s[i]);
            v[i] *= s[i];
        }
        let l = cm.l();
        let u = l
            .solve_lower_triangular(&w)
            .ok_or_else(|| Error::Singular("triangular solve".into()))?;
        let uv = l
            .solve_lower_triangular(&v)
            .ok_or_else(|| Error::Singular("triangular solve".into()))?;
        let a = &self.xtx - u.transpose() * &u;
        let b = &self.xty - u.transpose() * &uv;
        let c = self.yty - uv.dot(&uv);
        finish(self.n, self.p, log_det_h, a, b, c)
    }
}

impl Sufficient {
    /// `∂(-2ℓ_R)/∂θ_k = tr(Z_kᵀ P Z_k) - ‖Z_kᵀ P y‖² / σ̂²`, with
    /// `P = H⁻¹ - H⁻¹X A⁻¹ XᵀH⁻¹`, assembled from the cross-products.
    pub fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let qt = self.total_q();
        let s = self.scale(theta);
        let mut m = DMatrix::identity(qt, qt);
        let mut sg = self.ztz.clone();
        for i in 0..qt {
            sg.row_mut(i).scale_mut(s[i]);
        }
        for i in 0..qt {
            for j in 0..qt {
                m[(i, j)] += s[j] * sg[(i, j)];
            }
        }
        let cm = chol(m, "I + Λ½ZᵀZΛ½")?;
        let l = cm.l();
        let solve = |b: &DMatrix<f64>| {
            l.solve_lower_triangular(b)
                .ok_or_else(|| Error::Singular("triangular solve".into()))
        };
        // U = L⁻¹ Λ½ ZᵀZ, so Zᵀ H⁻¹ Z = ZᵀZ - UᵀU
        let u = solve(&sg)?;
        let mut w = self.ztx.clone();
        let mut v = DMatrix::from_column_slice(qt, 1, self.zty.as_slice());
        for i in 0..qt {
            w.row_mut(i).scale_mut(s[i]);
            v[(i, 0)] *= s[i];
        }
        let uw = solve(&w)?;
        let uv = solve(&v)?;
        let hx = &self.ztx - u.transpose() * &uw;
        let hy = &self.zty - u.transpose() * uv.column(0);
        let a = &self.xtx - uw.transpose() * &uw;
        let b = &self.xty - uw.transpose() * uv.column(0);
        let c = self.yty - uv.column(0).dot(&uv.column(0));
        let ca = chol(a, "XᵀH⁻¹X")?;
        let beta = ca.solve(&b);
        let sigma2 = (c - beta.dot(&b)) / (self.n - self.p) as f64;
        let py = &hy - &hx * &beta;
        // A⁻¹ (Zᵀ H⁻¹ X)ᵀ, for the projection term of the trace
        let ahx = ca.solve(&hx.transpose());
        let mut g = vec![0.0; self.q.len()];
        for (k, gk) in g.iter_mut().enumerate() {
            let mut tr = 0.0;
            let mut sq = 0.0;
            for i in self.offsets[k]..self.offsets[k + 1] {
                tr += self.ztz[(i, i)] - u.column(i).norm_squared() - hx.row(i).dot(&ahx.column(i).transpose());
                sq += py[i] * py[i];
            }
            *gk = tr - sq / sigma2;
        }
        Ok(g)
    }
}

/// Gradient of the criterion with respect to `θ` through dense `n × n`
/// algebra.
pub fn gradient_dense(d: &DesignMatrices, theta: &[f64]) -> Result<Vec<f64>> {
    let n = d.n();
    let mut h = DMatrix::identity(n, n);
    let zs: Vec<DMatrix<f64>> = (0..d.factors.len()).map(|k| d.z(k)).collect();
    for (z, t) in zs.iter().zip(theta) {
        h += z * z.transpose() * t.max(0.0);
    }
    let ch = chol(h, "H")?;
    let hinv = ch.inverse();
    let hx = &hinv * &d.x;
    let ca = chol(d.x.transpose() * &hx, "XᵀH⁻¹X")?;
    let p = &hinv - &hx * ca.solve(&hx.transpose());
    let py = &p * &d.y;
    let sigma2 = d.y.dot(&py) / (n - d.p()) as f64;
    Ok(zs
        .iter()
        .map(|z| {
            let zpz = z.transpose() * &p * z;
            let zpy = z.transpose() * &py;
            zpz.trace() - zpy.norm_squared() / sigma2
        })
        .collect())
}

/// The same criterion through a dense Cholesky of `H`.
pub fn evaluate_dense(d: &DesignMatrices, theta: &[f64]) -> Result<Evaluation> {
    let n = d.n();
    let mut h = DMatrix::identity(n, n);
    for (k, f) in d.factors.iter().enumerate() {
        let t = theta[k].max(0.0);
        if t == 0.0 {
            continue;
        }
        for i in 0..n {
            for j in 0..n {
                if f.index[i] == f.index[j] {
                    h[(i, j)] += t;
                }
            }
        }
    }
    let ch = chol(h, "H")?;
    let log_det_h = log_det(&ch);
    let hx = ch.solve(&d.x);
    let hy = ch.solve(&d.y);
    let a = d.x.transpose() * &hx;
    let b = d.x.transpose() * &hy;
    let c = d.y.dot(&hy);
    finish(n, d.p(), log_det_h, a, b, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmm::design::{build_design, FormulaSpec, Frame};

    fn small() -> DesignMatrices {
        let y = vec![1.0, 2.2, 2.9, 4.1, 5.3, 5.8, 7.4, 7.9, 9.2, 10.1];
        let x: Vec<f64> = (0..10).map(|i| (i as f64 * 0.7).sin()).collect();
        let g: Vec<String> = (0..10).map(|i| format!("g{}", i % 3)).collect();
        let h: Vec<String> = (0..10).map(|i| format!("h{}", i % 4)).collect();
        let f = Frame::new(10)
            .with_numeric("y", y)
            .unwrap()
            .with_numeric("x", x)
            .unwrap()
            .with_categorical("g", g)
            .unwrap()
            .with_categorical("h", h)
            .unwrap();
        build_design(&f, &FormulaSpec::new("y").numeric("x").random("g").random("h")).unwrap()
    }

    #[test]
    fn dense_and_woodbury_agree() {
        let d = small();
        let s = Sufficient::new(&d);
        for theta in [[0.0, 0.0], [0.3, 2.0], [5.0, 0.01]] {
            let a = s.evaluate(&theta).unwrap();
            let b = evaluate_dense(&d, &theta).unwrap();
            assert!((a.criterion - b.criterion).abs() < 1e-10);
            assert!((&a.beta - &b.beta).amax() < 1e-10);
        }
    }

    #[test]
    fn gradients_agree_with_finite_differences() {
        let d = small();
        let s = Sufficient::new(&d);
        for theta in [[0.3, 2.0], [5.0, 0.01], [0.0, 0.7]] {
            let g = s.gradient(&theta).unwrap();
            let gd = gradient_dense(&d, &theta).unwrap();
            for k in 0..2 {
                let h = 1e-6;
                let mut a = theta;
                let mut b = theta;
                a[k] += h;
                b[k] = (b[k] - h).max(0.0);
                let fd = (s.evaluate(&a).unwrap().criterion - s.evaluate(&b).unwrap().criterion) / (a[k] - b[k]);
                assert!((g[k] - gd[k]).abs() < 1e-9, "{g:?} {gd:?}");
                assert!((g[k] - fd).abs() < 1e-5 * (1.0 + fd.abs()), "{g:?} {fd}");
            }
        }
    }
}
