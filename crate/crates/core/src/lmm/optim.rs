//! Bounded Nelder–Mead. Vertices are projected onto the box after every
//! move, which is adequate for the handful of variance parameters here.

#[derive(Debug, Clone, Copy)]
pub struct NmOptions {
    /// Stop when the spread of objective values across the simplex is below this.
    pub f_tol: f64,
    /// ... and the simplex diameter (max-norm) is below this.
    pub x_tol: f64,
    pub max_iter: usize,
    pub initial_step: f64,
}

impl Default for NmOptions {
    fn default() -> Self {
        NmOptions {
            f_tol: 1e-10,
            x_tol: 1e-7,
            max_iter: 5000,
            initial_step: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

/// Minimizes `f` from `x0` inside `[lo, hi]`. Non-finite objective values are
/// treated as `+∞`.
pub fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    opts: &NmOptions,
) -> NmResult {
    let d = x0.len();
    let mut evals = 0;
    let mut eval = |x: &[f64]| {
        evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut start = x0.to_vec();
    project(&mut start, lo, hi);
    let mut simplex: Vec<Vec<f64>> = vec![start.clone()];
    for i in 0..d {
        let mut v = start.clone();
        // step away from the nearer bound so the vertex stays distinct
        v[i] = if v[i] + opts.initial_step <= hi[i] {
            v[i] + opts.initial_step
        } else {
            v[i] - opts.initial_step
        };
        project(&mut v, lo, hi);
        simplex.push(v);
    }
    let mut fs: Vec<f64> = simplex.iter().map(|v| eval(v)).collect();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        let mut idx: Vec<usize> = (0..=d).collect();
        idx.sort_by(|&a, &b| fs[a].total_cmp(&fs[b]));
        simplex = idx.iter().map(|&i| simplex[i].clone()).collect();
        fs = idx.iter().map(|&i| fs[i]).collect();

        let spread = fs[d] - fs[0];
        let diameter = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread.abs() < opts.f_tol && diameter < opts.x_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..d)
            .map(|j| simplex[..d].iter().map(|v| v[j]).sum::<f64>() / d as f64)
            .collect();
        let along = |t: f64| {
            let mut p: Vec<f64> = (0..d).map(|j| centroid[j] + t * (simplex[d][j] - centroid[j])).collect();
            project(&mut p, lo, hi);
            p
        };
        let xr = along(-1.0);
        let fr = eval(&xr);
        if fr < fs[0] {
            let xe = along(-2.0);
            let fe = eval(&xe);
            if fe < fr {
                simplex[d] = xe;
                fs[d] = fe;
            } else {
                simplex[d] = xr;
                fs[d] = fr;
            }
            continue;
        }
        if fr < fs[d - 1] {
            simplex[d] = xr;
            fs[d] = fr;
            continue;
        }
        let (xc, fc) = if fr < fs[d] {
            let xc = along(-0.5);
            let fc = eval(&xc);
            (xc, fc)
        } else {
            let xc = along(0.5);
            let fc = eval(&xc);
            (xc, fc)
        };
        if fc < fs[d].min(fr) {
            simplex[d] = xc;
            fs[d] = fc;
            continue;
        }
        for i in 1..=d {
            let mut v: Vec<f64> = (0..d)
                .map(|j| simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j]))
                .collect();
            project(&mut v, lo, hi);
            fs[i] = eval(&v);
            simplex[i] = v;
        }
    }
    let best = (0..=d).min_by(|&a, &b| fs[a].total_cmp(&fs[b])).unwrap();
    NmResult {
        x: simplex[best].clone(),
        f: fs[best],
        iterations,
        evaluations: evals,
        converged,
    }
}
