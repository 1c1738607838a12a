use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use storymoral_core::lmm::{
    build_design, fit_reml, fit_reml_with, normal, reml_criterion, synthetic::SyntheticDesign, wald_inference,
    DesignMatrices, FitOptions, FormulaSpec, Frame, Route,
};
use storymoral_core::Error;

pub fn random_frame(seed: u64, n: usize, levels: &[usize]) -> Frame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nrm = Normal::new(0.0, 1.0).unwrap();
    let effects: Vec<Vec<f64>> = levels
        .iter()
        .map(|&l| (0..l).map(|_| 0.7 * nrm.sample(&mut rng)).collect())
        .collect();
    let mut f = Frame::new(n);
    let x: Vec<f64> = (0..n).map(|_| nrm.sample(&mut rng)).collect();
    let c: Vec<String> = (0..n).map(|_| ["a", "b", "c"][rng.random_range(0..3)].to_string()).collect();
    let mut y: Vec<f64> = x.iter().map(|v| 1.0 + 0.5 * v + nrm.sample(&mut rng)).collect();
    for (k, &l) in levels.iter().enumerate() {
        let g: Vec<usize> = (0..n).map(|i| if i < l { i } else { rng.random_range(0..l) }).collect();
        for i in 0..n {
            y[i] += effects[k][g[i]];
        }
        f = f
            .with_categorical(&format!("g{k}"), g.iter().map(|v| format!("{v}")).collect())
            .unwrap();
    }
    f.with_numeric("x", x)
        .unwrap()
        .with_categorical("c", c)
        .unwrap()
        .with_numeric("y", y)
        .unwrap()
}

pub fn spec(k: usize) -> FormulaSpec {
    let mut s = FormulaSpec::new("y").numeric("x").categorical("c", "a");
    for i in 0..k {
        s = s.random(&format!("g{i}"));
    }
    s
}

/// `V/σ² = I + Σ θ_k Z_k Z_kᵀ`, built explicitly.
fn h_matrix(d: &DesignMatrices, theta: &[f64]) -> DMatrix<f64> {
    let mut h = DMatrix::identity(d.n(), d.n());
    for (k, t) in theta.iter().enumerate() {
        let z = d.z(k);
        h += &z * z.transpose() * *t;
    }
    h
}

fn gls(d: &DesignMatrices, theta: &[f64]) -> (DVector<f64>, DMatrix<f64>, f64) {
    let hinv = h_matrix(d, theta).try_inverse().unwrap();
    let a = d.x.transpose() * &hinv * &d.x;
    let ainv = a.try_inverse().unwrap();
    let beta = &ainv * d.x.transpose() * &hinv * &d.y;
    let r = &d.y - &d.x * &beta;
    let sigma2 = (r.transpose() * &hinv * &r)[(0, 0)] / (d.n() - d.p()) as f64;
    (beta, ainv, sigma2)
}

#[test]
fn one_binary_factor_design() {
    let f = Frame::new(4)
        .with_numeric("y", vec![1.0, 2.0, 3.0, 4.0])
        .unwrap()
        .with_categorical("t", ["u", "v", "u", "v"].map(String::from).to_vec())
        .unwrap();
    let d = build_design(&f, &FormulaSpec::new("y").categorical("t", "u")).unwrap();
    assert_eq!(d.x.shape(), (4, 2));
    assert_eq!(d.x.column(1).as_slice(), &[0.0, 1.0, 0.0, 1.0]);
    assert_eq!(d.x_names, vec!["(Intercept)", "t[v]"]);
}

#[test]
fn h3_shaped_design_has_ten_columns() {
    let kinds = ["HH", "m1", "m2", "m3", "m4", "m5", "m6", "m7"];
    let n = 80;
    let f = Frame::new(n)
        .with_numeric("y", (0..n).map(|i| (i as f64).sin()).collect())
        .unwrap()
        .with_categorical("kind", (0..n).map(|i| kinds[i % 8].to_string()).collect())
        .unwrap()
        .with_numeric("wc_a", (0..n).map(|i| (i as f64 * 0.37).cos()).collect())
        .unwrap()
        .with_numeric("wc_b", (0..n).map(|i| ((i * i) % 17) as f64).collect())
        .unwrap();
    let s = FormulaSpec::new("y")
        .categorical("kind", "HH")
        .numeric("wc_a")
        .numeric("wc_b");
    assert_eq!(build_design(&f, &s).unwrap().p(), 10);
}

#[test]
fn missing_column_and_unknown_level() {
    let f = random_frame(1, 30, &[3]);
    assert!(matches!(
        build_design(&f, &spec(1).numeric("nope")),
        Err(Error::MissingColumn(_))
    ));
    assert!(matches!(
        build_design(&f, &FormulaSpec::new("y").categorical("c", "zzz")),
        Err(Error::UnknownLevel { .. })
    ));
}

#[test]
fn rank_deficiency_is_an_error() {
    let f = random_frame(2, 30, &[3]);
    let x: Vec<f64> = f.numeric("x").unwrap().iter().map(|v| 2.0 * v).collect();
    let f = f.with_numeric("x2", x).unwrap();
    assert!(matches!(
        build_design(&f, &spec(1).numeric("x2")),
        Err(Error::RankDeficient { .. })
    ));
}

#[test]
fn zero_theta_collapses_to_ols() {
    for seed in 0..10 {
        let d = build_design(&random_frame(seed, 120, &[6, 4]), &spec(2)).unwrap();
        let fit = fit_reml_with(&d, &FitOptions::fixed(vec![0.0, 0.0])).unwrap();
        let ols = d.x.clone().svd(true, true).solve(&d.y, 1e-14).unwrap();
        for i in 0..d.p() {
            assert!((fit.beta[i] - ols[i]).abs() < 1e-6, "seed {seed}");
        }
    }
}

#[test]
fn no_factors_is_ols() {
    let d = build_design(&random_frame(3, 50, &[]), &spec(0)).unwrap();
    let fit = fit_reml(&d).unwrap();
    let ols = d.x.clone().svd(true, true).solve(&d.y, 1e-14).unwrap();
    assert!((DVector::from_vec(fit.beta.clone()) - ols).amax() < 1e-10);
    assert!(fit.converged);
}

#[test]
fn fixed_theta_matches_closed_form_gls() {
    for (seed, theta) in [(4, vec![0.5, 0.2]), (5, vec![2.0, 0.0]), (6, vec![0.05, 3.0])] {
        let d = build_design(&random_frame(seed, 150, &[7, 5]), &spec(2)).unwrap();
        let (beta, ainv, sigma2) = gls(&d, &theta);
        for route in [Route::Dense, Route::Woodbury] {
            let fit = fit_reml_with(
                &d,
                &FitOptions {
                    route,
                    ..FitOptions::fixed(theta.clone())
                },
            )
            .unwrap();
            for i in 0..d.p() {
                assert!((fit.beta[i] - beta[i]).abs() < 1e-8);
                assert!((fit.se[i] - (sigma2 * ainv[(i, i)]).sqrt()).abs() < 1e-9);
            }
            assert!((fit.residual_variance - sigma2).abs() < 1e-10);
        }
    }
}

#[test]
fn standard_errors_on_a_three_column_fixture() {
    // X has an intercept and two numeric columns; (XᵀX)⁻¹ is checked by hand.
    let x1 = [0.0, 1.0, 0.0, 1.0, 2.0, 0.0];
    let x2 = [0.0, 0.0, 1.0, 1.0, 0.0, 2.0];
    let y = [1.0, 2.0, 2.5, 3.0, 3.1, 5.2];
    let f = Frame::new(6)
        .with_numeric("x1", x1.to_vec())
        .unwrap()
        .with_numeric("x2", x2.to_vec())
        .unwrap()
        .with_numeric("y", y.to_vec())
        .unwrap()
        .with_categorical("g", ["a", "b", "a", "b", "a", "b"].map(String::from).to_vec())
        .unwrap();
    let d = build_design(&f, &FormulaSpec::new("y").numeric("x1").numeric("x2").random("g")).unwrap();
    let fit = fit_reml_with(&d, &FitOptions::fixed(vec![0.0])).unwrap();
    // XᵀX = [[6,4,4],[4,6,1],[4,1,6]], det = 6·35 − 4·20 + 4·(−20) = 50
    let inv = [
        [35.0 / 50.0, -20.0 / 50.0, -20.0 / 50.0],
        [-20.0 / 50.0, 20.0 / 50.0, 10.0 / 50.0],
        [-20.0 / 50.0, 10.0 / 50.0, 20.0 / 50.0],
    ];
    let mut xty = [0.0; 3];
    for i in 0..6 {
        let row = [1.0, x1[i], x2[i]];
        for a in 0..3 {
            xty[a] += row[a] * y[i];
        }
    }
    let beta: Vec<f64> = (0..3).map(|a| (0..3).map(|b| inv[a][b] * xty[b]).sum()).collect();
    let rss: f64 = (0..6)
        .map(|i| (y[i] - beta[0] - beta[1] * x1[i] - beta[2] * x2[i]).powi(2))
        .sum();
    let s2 = rss / 3.0;
    for a in 0..3 {
        assert!((fit.beta[a] - beta[a]).abs() < 1e-12);
        assert!((fit.se[a] - (s2 * inv[a][a]).sqrt()).abs() < 1e-12);
    }
}

#[test]
fn criterion_matches_unprofiled_restricted_likelihood() {
    let d = build_design(&random_frame(7, 60, &[5, 3]), &spec(2)).unwrap();
    let theta = [0.4, 1.3];
    let (beta, _, sigma2) = gls(&d, &theta);
    let n = d.n() as f64;
    let p = d.p() as f64;
    let v = h_matrix(&d, &theta) * sigma2;
    let vinv = v.clone().try_inverse().unwrap();
    let r = &d.y - &d.x * &beta;
    let xvx = d.x.transpose() * &vinv * &d.x;
    let oracle = v.determinant().ln()
        + xvx.determinant().ln()
        + (r.transpose() * &vinv * &r)[(0, 0)]
        + (n - p) * (2.0 * std::f64::consts::PI).ln();
    assert!((reml_criterion(&d, &theta).unwrap() - oracle).abs() < 1e-8);
}

#[test]
fn single_factor_recovery() {
    // 50 groups × 20 observations, β = (1, 2), σ²_group = 0.5, σ² = 1
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let nrm = Normal::new(0.0, 1.0).unwrap();
    let u: Vec<f64> = (0..50).map(|_| 0.5f64.sqrt() * nrm.sample(&mut rng)).collect();
    let mean_u = u.iter().sum::<f64>() / 50.0;
    let realized = u.iter().map(|v| (v - mean_u).powi(2)).sum::<f64>() / 49.0;
    let n = 1000;
    let x: Vec<f64> = (0..n).map(|_| nrm.sample(&mut rng)).collect();
    let g: Vec<usize> = (0..n).map(|i| i / 20).collect();
    let y: Vec<f64> = (0..n).map(|i| 1.0 + 2.0 * x[i] + u[g[i]] + nrm.sample(&mut rng)).collect();
    let f = Frame::new(n)
        .with_numeric("y", y)
        .unwrap()
        .with_numeric("x", x)
        .unwrap()
        .with_categorical("g", g.iter().map(|v| format!("{v}")).collect())
        .unwrap();
    let fit = fit_reml(&build_design(&f, &FormulaSpec::new("y").numeric("x").random("g")).unwrap()).unwrap();
    assert!(fit.converged);
    assert!((fit.beta[0] - 1.0).abs() < 2.0 * fit.se[0]);
    assert!((fit.beta[1] - 2.0).abs() < 2.0 * fit.se[1]);
    // 50 draws give the realized group variance a relative sd of √(2/49) ≈ 0.2,
    // so the 20% band is checked against what was drawn and the truth gets 3 sd.
    let est = fit.variance_components[0].variance;
    assert!((est / realized - 1.0).abs() < 0.2, "{est} vs {realized}");
    assert!((est / 0.5 - 1.0).abs() < 3.0 * (2.0f64 / 49.0).sqrt());
    assert!((fit.residual_variance - 1.0).abs() < 0.2);
}

#[test]
fn synthetic_designs_fit_quickly() {
    let sd = SyntheticDesign::new(5000, &[60, 50, 50, 50], &[0.004, 0.002, 0.003, 0.001]);
    let f = sd.simulate(0).unwrap();
    let t = std::time::Instant::now();
    let fit = fit_reml(&build_design(&f, &sd.formula()).unwrap()).unwrap();
    assert!(t.elapsed().as_secs_f64() < 5.0);
    assert!(fit.converged);
    assert_eq!(fit.terms, SyntheticDesign::term_names());
}

#[test]
fn wald_rows() {
    let d = build_design(&random_frame(8, 200, &[10]), &spec(1)).unwrap();
    let fit = fit_reml(&d).unwrap();
    for (i, r) in wald_inference(&fit).iter().enumerate() {
        assert_eq!(r.estimate, fit.beta[i]);
        assert!((r.z - fit.beta[i] / fit.se[i]).abs() < 1e-15);
        assert!((r.ci_hi - r.ci_lo - 2.0 * 1.959964 * r.se).abs() < 1e-12);
        assert!(r.p > 0.0 && r.p <= 1.0);
    }
    let mut buf = Vec::new();
    storymoral_core::lmm::write_coef_csv(&mut buf, &wald_inference(&fit)).unwrap();
    assert!(String::from_utf8(buf).unwrap().starts_with("term,coef,se,z,p,ci_lo,ci_hi\n"));
    let json = serde_json::to_value(&fit).unwrap();
    assert!(json["variance_components"][0]["variance"].is_number());
}

// libm erfc at quarter steps
const ERFC_TABLE: [(f64, f64); 49] = [
        (-6.0, 2.0),
        (-5.75, 1.9999999999999996),
        (-5.5, 1.9999999999999927),
        (-5.25, 1.999999999999887),
        (-5.0, 1.9999999999984626),
        (-4.75, 1.999999999981515),
        (-4.5, 1.999999999803384),
        (-4.25, 1.9999999981494259),
        (-4.0, 1.999999984582742),
        (-3.75, 1.9999998862727435),
        (-3.5, 1.9999992569016276),
        (-3.25, 1.9999956972205364),
        (-3.0, 1.9999779095030015),
        (-2.75, 1.9998993780778804),
        (-2.5, 1.999593047982555),
        (-2.25, 1.9985372834133188),
        (-2.0, 1.9953222650189528),
        (-1.75, 1.9866716712191825),
        (-1.5, 1.9661051464753108),
        (-1.25, 1.9229001282564582),
        (-1.0, 1.842700792949715),
        (-0.75, 1.7111556336535152),
        (-0.5, 1.5204998778130465),
        (-0.25, 1.276326390168237),
        (0.0, 1.0),
        (0.25, 0.7236736098317631),
        (0.5, 0.4795001221869535),
        (0.75, 0.28884436634648486),
        (1.0, 0.15729920705028513),
        (1.25, 0.07709987174354177),
        (1.5, 0.033894853524689274),
        (1.75, 0.013328328780817555),
        (2.0, 0.004677734981047265),
        (2.25, 0.0014627165866811518),
        (2.5, 0.0004069520174449589),
        (2.75, 0.00010062192211963684),
        (3.0, 2.2090496998585438e-05),
        (3.25, 4.302779463675122e-06),
        (3.5, 7.430983723414128e-07),
        (3.75, 1.1372725656979664e-07),
        (4.0, 1.541725790028002e-08),
        (4.25, 1.8505741373867425e-09),
        (4.5, 1.9661604415428873e-10),
        (4.75, 1.8485047721485312e-11),
        (5.0, 1.5374597944280351e-12),
        (5.25, 1.1310313266887154e-13),
        (5.5, 7.357847917974398e-15),
        (5.75, 4.2321366174257373e-16),
        (6.0, 2.1519736712498916e-17)
,
];

#[test]
fn erfc_against_libm_table() {
    for (x, v) in ERFC_TABLE {
        assert!((normal::erfc(x) - v).abs() <= 1e-15, "{x}");
    }
}

#[test]
fn erfc_and_phi_against_statrs() {
    // statrs is only accurate to about 5e-11 on this range
    use statrs::distribution::{ContinuousCDF, Normal as StNormal};
    use statrs::function::erf;
    for i in -600..=600 {
        let x = i as f64 / 100.0;
        assert!((normal::erfc(x) - erf::erfc(x)).abs() < 1e-10, "{x}");
    }
    let n = StNormal::new(0.0, 1.0).unwrap();
    for i in -80..=80 {
        let z = i as f64 / 10.0;
        assert!((normal::phi(z) - n.cdf(z)).abs() < 1e-10);
    }
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + y.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn permutation_invariance(seed in 0u64..1000, shuffle in 0u64..1000) {
        let f = random_frame(seed, 90, &[6, 4]);
        let mut order: Vec<usize> = (0..90).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(shuffle);
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let a = fit_reml(&build_design(&f, &spec(2)).unwrap()).unwrap();
        let b = fit_reml(&build_design(&f.permuted(&order), &spec(2)).unwrap()).unwrap();
        prop_assert!(close(&a.beta, &b.beta, 1e-9));
        prop_assert!(close(&a.se, &b.se, 1e-9));
        prop_assert!(close(&a.theta(), &b.theta(), 1e-9));
    }

    #[test]
    fn shift_moves_only_the_intercept(seed in 0u64..1000, c in -5.0f64..5.0) {
        let f = random_frame(seed, 90, &[6, 4]);
        let g = f.map_numeric("y", |v| v + c).unwrap();
        let a = fit_reml(&build_design(&f, &spec(2)).unwrap()).unwrap();
        let b = fit_reml(&build_design(&g, &spec(2)).unwrap()).unwrap();
        prop_assert!((b.beta[0] - a.beta[0] - c).abs() < 1e-9);
        prop_assert!(close(&a.beta[1..], &b.beta[1..], 1e-9));
    }

    #[test]
    fn scaling_scales_estimates(seed in 0u64..1000, s in 0.1f64..10.0) {
        let f = random_frame(seed, 90, &[6, 4]);
        let g = f.map_numeric("y", |v| v * s).unwrap();
        let a = fit_reml(&build_design(&f, &spec(2)).unwrap()).unwrap();
        let b = fit_reml(&build_design(&g, &spec(2)).unwrap()).unwrap();
        let scaled = |v: &[f64]| v.iter().map(|x| x * s).collect::<Vec<_>>();
        prop_assert!(close(&b.beta, &scaled(&a.beta), 1e-9));
        prop_assert!(close(&b.se, &scaled(&a.se), 1e-9));
        let (ra, rb) = (wald_inference(&a), wald_inference(&b));
        for (x, y) in ra.iter().zip(&rb) {
            prop_assert!((x.z - y.z).abs() < 1e-9 * (1.0 + x.z.abs()));
            prop_assert!((x.p - y.p).abs() < 1e-9);
        }
    }

    #[test]
    fn optimum_beats_zero_and_random_points(seed in 0u64..1000) {
        let d = build_design(&random_frame(seed, 90, &[6, 4, 3]), &spec(3)).unwrap();
        let fit = fit_reml(&d).unwrap();
        let best = reml_criterion(&d, &fit.theta()).unwrap();
        prop_assert!(best <= reml_criterion(&d, &[0.0; 3]).unwrap() + 1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
        for _ in 0..10 {
            let t: Vec<f64> = (0..3).map(|_| 10f64.powf(rng.random_range(-3.0..2.0))).collect();
            prop_assert!(best <= reml_criterion(&d, &t).unwrap() + 1e-9);
        }
        prop_assert!(fit.variance_components.iter().all(|v| v.variance >= 0.0));
        prop_assert!(fit.se.iter().all(|s| *s > 0.0));
    }
}
