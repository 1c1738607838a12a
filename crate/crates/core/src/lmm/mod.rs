//! Linear mixed models with crossed random intercepts, fitted by profiled
//! REML, with Wald inference on the fixed effects.

pub mod design;
pub mod normal;
pub mod optim;
pub mod reml;
pub mod synthetic;

use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use design::{build_design, DesignMatrices, FixedTerm, FormulaSpec, Frame, GroupFactor};
use optim::{nelder_mead, NmOptions};
use reml::{evaluate_dense, gradient_dense, Evaluation, Sufficient};

use crate::error::{Error, Result};

/// Offset inside the log so that `θ = 0` is reachable.
pub const LOG_EPS: f64 = 1e-6;
const THETA_MAX: f64 = 1e8;
pub const Z_95: f64 = 1.959964;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    /// Woodbury whenever the random-effect columns do not outnumber rows.
    #[default]
    Auto,
    Dense,
    Woodbury,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Skip optimization and evaluate at these variance ratios.
    pub fixed_theta: Option<Vec<f64>>,
    /// Random starts on top of the two deterministic ones.
    pub extra_starts: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub route: Route,
    /// Bound on the projected finite-difference gradient for `converged`.
    pub grad_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            fixed_theta: None,
            extra_starts: 0,
            seed: 0,
            max_iter: 5000,
            route: Route::Auto,
            grad_tol: 1e-3,
        }
    }
}

impl FitOptions {
    pub fn fixed(theta: Vec<f64>) -> Self {
        FitOptions {
            fixed_theta: Some(theta),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponent {
    pub factor: String,
    pub levels: usize,
    pub variance: f64,
    /// `variance / residual_variance`.
    pub ratio: f64,
    /// Set when the component was held at zero because it is not identifiable.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pinned: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmmFit {
    pub terms: Vec<String>,
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub cov_beta: Vec<Vec<f64>>,
    pub variance_components: Vec<VarianceComponent>,
    pub residual_variance: f64,
    pub reml_loglik: f64,
    pub n: usize,
    pub p: usize,
    pub q: Vec<usize>,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    pub gradient_norm: f64,
}

impl LmmFit {
    pub fn theta(&self) -> Vec<f64> {
        self.variance_components.iter().map(|v| v.ratio).collect()
    }

    pub fn coef(&self, term: &str) -> Option<f64> {
        self.terms.iter().position(|t| t == term).map(|i| self.beta[i])
    }
}

enum Engine<'a> {
    Dense(&'a DesignMatrices),
    Woodbury(Sufficient),
}

impl Engine<'_> {
    fn eval(&self, theta: &[f64]) -> Result<Evaluation> {
        match self {
            Engine::Dense(d) => evaluate_dense(d, theta),
            Engine::Woodbury(s) => s.evaluate(theta),
        }
    }

    fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        match self {
            Engine::Dense(d) => gradient_dense(d, theta),
            Engine::Woodbury(s) => s.gradient(theta),
        }
    }
}

fn engine(d: &DesignMatrices, route: Route) -> Engine<'_> {
    let qt: usize = d.q().iter().sum();
    match route {
        Route::Dense => Engine::Dense(d),
        Route::Woodbury => Engine::Woodbury(Sufficient::new(d)),
        Route::Auto if qt <= d.n() => Engine::Woodbury(Sufficient::new(d)),
        Route::Auto => Engine::Dense(d),
    }
}

/// `-2 ℓ_R(θ)` at the given variance ratios.
pub fn reml_criterion(d: &DesignMatrices, theta: &[f64]) -> Result<f64> {
    if theta.len() != d.factors.len() {
        return Err(Error::Invalid(format!(
            "{} variance ratios for {} factors",
            theta.len(),
            d.factors.len()
        )));
    }
    Ok(engine(d, Route::Auto).eval(theta)?.criterion)
}

fn bijective(a: &GroupFactor, b: &GroupFactor) -> bool {
    if a.levels.len() != b.levels.len() {
        return false;
    }
    let mut fwd = vec![usize::MAX; a.levels.len()];
    let mut back = vec![usize::MAX; b.levels.len()];
    for (&i, &j) in a.index.iter().zip(&b.index) {
        if fwd[i] == usize::MAX && back[j] == usize::MAX {
            fwd[i] = j;
            back[j] = i;
        } else if fwd[i] != j || back[j] != i {
            return false;
        }
    }
    true
}

/// Factors whose variance is not identifiable under REML: a single level is
/// absorbed by the intercept, and a factor that relabels an earlier one
/// shares its variance.
fn pinned_factors(d: &DesignMatrices) -> Vec<Option<String>> {
    (0..d.factors.len())
        .map(|k| {
            let f = &d.factors[k];
            if f.levels.len() == 1 {
                return Some("single level".to_string());
            }
            d.factors[..k]
                .iter()
                .find(|g| bijective(g, f))
                .map(|g| format!("aliased with {}", g.name))
        })
        .collect()
}

fn to_theta(phi: f64) -> f64 {
    (phi.exp() - LOG_EPS).max(0.0)
}

fn to_phi(theta: f64) -> f64 {
    (theta + LOG_EPS).ln()
}

pub fn fit_reml(d: &DesignMatrices) -> Result<LmmFit> {
    fit_reml_with(d, &FitOptions::default())
}

pub fn fit_reml_with(d: &DesignMatrices, opts: &FitOptions) -> Result<LmmFit> {
    let k = d.factors.len();
    let eng = engine(d, opts.route);
    let pins = pinned_factors(d);
    for (f, p) in d.factors.iter().zip(&pins) {
        if let Some(reason) = p {
            log::warn!("variance of {} held at 0 ({reason})", f.name);
        }
    }
    let free: Vec<usize> = (0..k).filter(|&i| pins[i].is_none()).collect();
    let expand = |phi: &[f64]| {
        let mut theta = vec![0.0; k];
        for (j, &i) in free.iter().enumerate() {
            theta[i] = to_theta(phi[j]);
        }
        theta
    };
    let objective = |phi: &[f64]| match eng.eval(&expand(phi)) {
        Ok(e) => e.criterion,
        Err(_) => f64::INFINITY,
    };

    let (theta, converged, iterations, evaluations, gradient_norm) = if let Some(t) = &opts.fixed_theta {
        if t.len() != k || t.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Invalid(format!("fixed variance ratios {t:?} for {k} factors")));
        }
        (t.clone(), true, 0, 1, 0.0)
    } else if free.is_empty() {
        (vec![0.0; k], true, 0, 1, 0.0)
    } else {
        let m = free.len();
        let lo = vec![to_phi(0.0); m];
        let hi = vec![to_phi(THETA_MAX); m];
        let nm = NmOptions {
            max_iter: opts.max_iter,
            ..Default::default()
        };
        let mut starts = vec![vec![to_phi(0.1); m], vec![to_phi(1.0); m]];
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        for _ in 0..opts.extra_starts {
            starts.push((0..m).map(|_| rng.random_range(to_phi(1e-3)..to_phi(10.0))).collect());
        }
        let mut best: Option<optim::NmResult> = None;
        let mut iterations = 0;
        let mut evaluations = 0;
        for s in &starts {
            let r = nelder_mead(objective, s, &lo, &hi, &nm);
            iterations += r.iterations;
            evaluations += r.evaluations;
            if best.as_ref().is_none_or(|b| r.f < b.f) {
                best = Some(r);
            }
        }
        let mut best = best.expect("at least two starts");
        // restart from the incumbent; a collapsed simplex can stall early
        for _ in 0..10 {
            let r = nelder_mead(objective, &best.x, &lo, &hi, &nm);
            iterations += r.iterations;
            evaluations += r.evaluations;
            let gain = best.f - r.f;
            let done = gain < 1e-10;
            if r.f <= best.f {
                best = optim::NmResult {
                    converged: r.converged,
                    ..r
                };
            }
            if done {
                break;
            }
        }
        if !best.f.is_finite() {
            return Err(Error::Singular("REML criterion is not finite at any start".into()));
        }
        let grad = |phi: &[f64]| -> Result<Vec<f64>> {
            let g = eng.gradient(&expand(phi))?;
            Ok(free.iter().zip(phi).map(|(&i, p)| g[i] * p.exp()).collect())
        };
        let (x, f, polish_evals) = polish(&objective, &grad, best.x, best.f, &lo, &hi)?;
        evaluations += polish_evals;
        best.x = x;
        best.f = f;
        let g = projected_norm(&grad(&best.x)?, &best.x, &lo, &hi);
        let converged = best.converged && g <= opts.grad_tol;
        if !converged {
            log::warn!("REML optimization did not converge (gradient norm {g:.2e})");
        }
        (expand(&best.x), converged, iterations, evaluations, g)
    };

    let e = eng.eval(&theta)?;
    let cov = &e.a_inv * e.sigma2;
    let p = d.p();
    let se: Vec<f64> = (0..p).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
    if se.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::Singular("non-positive coefficient variance".into()));
    }
    Ok(LmmFit {
        terms: d.x_names.clone(),
        beta: e.beta.iter().copied().collect(),
        se,
        cov_beta: rows(&cov),
        variance_components: d
            .factors
            .iter()
            .zip(&theta)
            .zip(pins)
            .map(|((f, &t), pinned)| VarianceComponent {
                factor: f.name.clone(),
                levels: f.levels.len(),
                variance: t * e.sigma2,
                ratio: t,
                pinned,
            })
            .collect(),
        residual_variance: e.sigma2,
        reml_loglik: -0.5 * e.criterion,
        n: d.n(),
        p,
        q: d.q(),
        converged,
        iterations,
        evaluations,
        gradient_norm,
    })
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn at_bound(x: f64, g: f64, lo: f64, hi: f64) -> bool {
    (x <= lo && g > 0.0) || (x >= hi && g < 0.0)
}

/// Euclidean norm of the gradient with components pushing against an active
/// bound removed.
fn projected_norm(g: &[f64], x: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    (0..g.len())
        .filter(|&i| !at_bound(x[i], g[i], lo[i], hi[i]))
        .map(|i| g[i] * g[i])
        .sum::<f64>()
        .sqrt()
}

/// Projected Newton steps on the analytic gradient, with a finite-difference
/// Hessian. Takes the simplex result to full precision; steps that raise the
/// criterion or fail to shrink the gradient are halved, then abandoned.
fn polish(
    f: &impl Fn(&[f64]) -> f64,
    grad: &impl Fn(&[f64]) -> Result<Vec<f64>>,
    mut x: Vec<f64>,
    mut fx: f64,
    lo: &[f64],
    hi: &[f64],
) -> Result<(Vec<f64>, f64, usize)> {
    const H: f64 = 1e-5;
    let mut evals = 0;
    let mut g = grad(&x)?;
    for _ in 0..30 {
        let gnorm = projected_norm(&g, &x, lo, hi);
        if gnorm == 0.0 {
            break;
        }
        let act: Vec<usize> = (0..x.len()).filter(|&i| !at_bound(x[i], g[i], lo[i], hi[i])).collect();
        let m = act.len();
        let mut hess = DMatrix::zeros(m, m);
        for (a, &i) in act.iter().enumerate() {
            let mut up = x.clone();
            let mut dn = x.clone();
            up[i] = (x[i] + H).min(hi[i]);
            dn[i] = (x[i] - H).max(lo[i]);
            let (gu, gd) = (grad(&up)?, grad(&dn)?);
            for (b, &j) in act.iter().enumerate() {
                hess[(b, a)] = (gu[j] - gd[j]) / (up[i] - dn[i]);
            }
        }
        let hess = (&hess + hess.transpose()) * 0.5;
        let Some(ch) = hess.cholesky() else { break };
        let rhs = nalgebra::DVector::from_iterator(m, act.iter().map(|&i| -g[i]));
        let step = ch.solve(&rhs);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let mut xn = x.clone();
            for (a, &i) in act.iter().enumerate() {
                xn[i] = (x[i] + t * step[a]).clamp(lo[i], hi[i]);
            }
            let fnew = f(&xn);
            evals += 1;
            let gn = grad(&xn)?;
            if fnew <= fx + 1e-12 * (1.0 + fx.abs()) && projected_norm(&gn, &xn, lo, hi) < gnorm {
                let moved = xn.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                x = xn;
                fx = fnew;
                g = gn;
                accepted = moved > 0.0;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok((x, fx, evals))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefRow {
    pub term: String,
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub p: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl CoefRow {
    pub fn from_estimate(term: &str, estimate: f64, se: f64) -> Self {
        let z = estimate / se;
        CoefRow {
            term: term.to_string(),
            estimate,
            se,
            z,
            p: normal::two_sided_p(z),
            ci_lo: estimate - Z_95 * se,
            ci_hi: estimate + Z_95 * se,
        }
    }
}

pub fn wald_inference(fit: &LmmFit) -> Vec<CoefRow> {
    if !fit.converged {
        log::warn!("Wald table for a fit that did not converge");
    }
    fit.terms
        .iter()
        .zip(fit.beta.iter().zip(&fit.se))
        .map(|(t, (&b, &s))| CoefRow::from_estimate(t, b, s))
        .collect()
}

pub const COEF_COLUMNS: [&str; 7] = ["term", "coef", "se", "z", "p", "ci_lo", "ci_hi"];

pub fn write_coef_csv<W: Write>(w: W, rows: &[CoefRow]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(COEF_COLUMNS)?;
    for r in rows {
        csv.write_record([
            r.term.clone(),
            format!("{:.6}", r.estimate),
            format!("{:.6}", r.se),
            format!("{:.4}", r.z),
            format!("{:.6}", r.p),
            format!("{:.6}", r.ci_lo),
            format!("{:.6}", r.ci_hi),
        ])?;
    }
    csv.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_coefficient() {
        let r = CoefRow::from_estimate("x", 0.0, 0.1);
        assert_eq!(r.z, 0.0);
        assert!((r.p - 1.0).abs() < 1e-15);
    }

    #[test]
    fn aliased_factor_is_pinned() {
        let n = 40;
        let g: Vec<String> = (0..n).map(|i| format!("g{}", i % 5)).collect();
        let h: Vec<String> = (0..n).map(|i| format!("h{}", (i + 2) % 5)).collect();
        let y: Vec<f64> = (0..n).map(|i| (i % 5) as f64 + (i as f64 * 1.3).sin()).collect();
        let f = Frame::new(n)
            .with_numeric("y", y)
            .unwrap()
            .with_categorical("g", g)
            .unwrap()
            .with_categorical("h", h)
            .unwrap()
            .with_categorical("one", vec!["a".into(); n])
            .unwrap();
        let d = build_design(&f, &FormulaSpec::new("y").random("g").random("h").random("one")).unwrap();
        let fit = fit_reml(&d).unwrap();
        assert!(fit.variance_components[0].pinned.is_none());
        assert!(fit.variance_components[1].pinned.is_some());
        assert!(fit.variance_components[2].pinned.is_some());
        assert_eq!(fit.variance_components[1].variance, 0.0);
        assert!(fit.variance_components[0].variance > 0.5);
    }
}
