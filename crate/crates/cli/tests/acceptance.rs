//! Acceptance suite. Prints one PASS / FAIL / SKIPPED line per criterion,
//! with indented detail lines below it. A FAIL does not fail the test run;
//! the process only exits non-zero when the suite itself cannot run.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{ensure, Context, Result};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use storymoral_cli::config::stub_config;
use storymoral_cli::pipeline::Stage;
use storymoral_cli::{run_pipeline, write_demo_corpus, RunConfig};
use storymoral_core::corpus::synthetic::{fixture_corpus, FixtureSpec};
use storymoral_core::hypotheses::HypothesisReport;
use storymoral_core::lmm::synthetic::SyntheticDesign;
use storymoral_core::lmm::{build_design, fit_reml, fit_reml_with, CoefRow, DesignMatrices, FitOptions, FormulaSpec, Frame, Z_95};
use storymoral_core::pairs::{enumerate_pairs, PairKind, PairOptions};
use storymoral_core::providers::stub::StubMt;
use storymoral_core::screening::{flag_candidates, ContaminationScore};
use storymoral_core::survey::{build_comparisons, verify_item, PlanOptions};
use storymoral_core::values::{grid_spearman, percent_agreement, spearman, FrequencyCell, SchwartzValue, ValueFrequencyTable, ValueLabels};
use storymoral_core::Translator;

enum Verdict {
    Pass,
    Fail(String),
    Skipped(String),
}

struct Outcome {
    verdict: Verdict,
    details: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Outcome {
            verdict: Verdict::Pass,
            details: Vec::new(),
        }
    }

    fn note(&mut self, s: impl Into<String>) {
        self.details.push(s.into());
    }

    /// Records a failed check; the first failure names the verdict.
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            let what = what.into();
            match &mut self.verdict {
                Verdict::Fail(w) => {
                    w.push_str("; ");
                    w.push_str(&what);
                }
                _ => self.verdict = Verdict::Fail(what),
            }
        }
    }
}

fn report(name: &str, r: Result<Outcome>) -> bool {
    let o = r.unwrap_or_else(|e| Outcome {
        verdict: Verdict::Fail(format!("error: {e:#}")),
        details: Vec::new(),
    });
    let pass = matches!(o.verdict, Verdict::Pass);
    match &o.verdict {
        Verdict::Pass => println!("PASS     {name}"),
        Verdict::Fail(why) => println!("FAIL     {name}: {why}"),
        Verdict::Skipped(why) => println!("SKIPPED  {name}: {why}"),
    }
    for d in &o.details {
        println!("         {d}");
    }
    pass
}

// ---------------------------------------------------------------- LMM

/// Designs fixed before any fit was run: one to four crossed factors with
/// 30 to 100 levels each, n = 5000.
const RECOVERY_DESIGNS: [(&[usize], &[f64]); 4] = [
    (&[60], &[0.004]),
    (&[100, 40], &[0.004, 0.002]),
    (&[90, 60, 30], &[0.004, 0.002, 0.003]),
    (&[100, 70, 50, 30], &[0.004, 0.002, 0.003, 0.001]),
];
const RECOVERY_SEEDS: u64 = 20;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn lmm_recovery() -> Result<Outcome> {
    let mut o = Outcome::new();
    o.note("per coefficient: |beta_hat - beta| <= 2 SE in >= 19 of 20 seeds; per variance component: median |rel. error| <= 0.20");
    let mut slowest = 0.0f64;
    for (levels, var) in RECOVERY_DESIGNS {
        let sd = SyntheticDesign::new(5000, levels, var);
        let mut covered = [0usize; 4];
        let mut rel: Vec<Vec<f64>> = vec![Vec::new(); levels.len() + 1];
        let mut est: Vec<Vec<f64>> = vec![Vec::new(); levels.len() + 1];
        for seed in 0..RECOVERY_SEEDS {
            let frame = sd.simulate(seed)?;
            let d = build_design(&frame, &sd.formula())?;
            let t = Instant::now();
            let fit = fit_reml(&d)?;
            slowest = slowest.max(t.elapsed().as_secs_f64());
            for (i, term) in SyntheticDesign::term_names().iter().enumerate() {
                let j = fit.terms.iter().position(|x| x == term).context("missing term")?;
                if (fit.beta[j] - sd.beta[i]).abs() <= 2.0 * fit.se[j] {
                    covered[i] += 1;
                }
            }
            for (k, vc) in fit.variance_components.iter().enumerate() {
                rel[k].push((vc.variance - var[k]).abs() / var[k]);
                est[k].push(vc.variance);
            }
            rel[levels.len()].push((fit.residual_variance - sd.residual_variance).abs() / sd.residual_variance);
            est[levels.len()].push(fit.residual_variance);
        }
        let label = format!("levels {levels:?}");
        let cov: Vec<String> = SyntheticDesign::term_names()
            .iter()
            .zip(covered)
            .map(|(t, c)| format!("{t} {c}/{RECOVERY_SEEDS}"))
            .collect();
        o.note(format!("{label}: coverage {}", cov.join(", ")));
        for (t, c) in SyntheticDesign::term_names().iter().zip(covered) {
            o.check(c >= 19, format!("{label} {t} covered {c}/{RECOVERY_SEEDS}"));
        }
        let mut vcs = Vec::new();
        for k in 0..rel.len() {
            let name = if k < levels.len() {
                format!("f{k}")
            } else {
                "residual".to_string()
            };
            let truth = if k < levels.len() { var[k] } else { sd.residual_variance };
            let m = median(rel[k].clone());
            vcs.push(format!(
                "{name} median rel. err {m:.3} (median estimate {:.5} vs {truth})",
                median(est[k].clone())
            ));
            o.check(m <= 0.20, format!("{label} {name} median rel. error {m:.3}"));
        }
        o.note(format!("{label}: {}", vcs.join("; ")));
    }
    o.note(format!("slowest fit {slowest:.2} s"));
    o.check(slowest < 5.0, format!("slowest fit {slowest:.2} s"));
    Ok(o)
}

fn random_frame(seed: u64, n: usize, levels: &[usize]) -> Frame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nrm = Normal::new(0.0, 1.0).unwrap();
    let mut f = Frame::new(n);
    let mut y: Vec<f64> = (0..n).map(|_| nrm.sample(&mut rng)).collect();
    for (k, &l) in levels.iter().enumerate() {
        let u: Vec<f64> = (0..l).map(|_| 0.5 * nrm.sample(&mut rng)).collect();
        let g: Vec<usize> = (0..n).map(|i| if i < l { i } else { rng.random_range(0..l) }).collect();
        for i in 0..n {
            y[i] += u[g[i]];
        }
        f = f
            .with_categorical(&format!("g{k}"), g.iter().map(|v| format!("{v}")).collect())
            .unwrap();
    }
    let x: Vec<f64> = (0..n).map(|_| nrm.sample(&mut rng)).collect();
    let c: Vec<String> = (0..n).map(|_| ["a", "b", "c"][rng.random_range(0..3)].to_string()).collect();
    for i in 0..n {
        y[i] += 0.3 * x[i] + if c[i] == "b" { 0.2 } else { 0.0 };
    }
    f.with_numeric("x", x)
        .unwrap()
        .with_categorical("c", c)
        .unwrap()
        .with_numeric("y", y)
        .unwrap()
}

fn formula(k: usize) -> FormulaSpec {
    let mut s = FormulaSpec::new("y").numeric("x").categorical("c", "a");
    for i in 0..k {
        s = s.random(&format!("g{i}"));
    }
    s
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn lmm_ols_collapse() -> Result<Outcome> {
    let mut o = Outcome::new();
    let mut worst = 0.0f64;
    for seed in 0..10u64 {
        let k = 1 + (seed % 3) as usize;
        let levels: Vec<usize> = (0..k).map(|i| 5 + 3 * i + seed as usize).collect();
        let d = build_design(&random_frame(seed, 150 + 20 * seed as usize, &levels), &formula(k))?;
        let fit = fit_reml_with(&d, &FitOptions::fixed(vec![0.0; k]))?;
        let xtx = d.x.transpose() * &d.x;
        let beta = xtx.cholesky().context("XᵀX not positive definite")?.solve(&(d.x.transpose() * &d.y));
        worst = worst.max(max_abs_diff(&fit.beta, beta.as_slice()));
    }
    o.note(format!("largest |beta - beta_ols| over 10 designs: {worst:.2e}"));
    o.check(worst <= 1e-6, format!("difference {worst:.2e} exceeds 1e-6"));
    Ok(o)
}

/// `(X'H⁻¹X)⁻¹ X'H⁻¹y` with `H = I + Σ θ_k Z_k Z_k'` formed explicitly.
fn gls(d: &DesignMatrices, theta: &[f64]) -> Result<DVector<f64>> {
    let mut h = DMatrix::identity(d.n(), d.n());
    for (k, t) in theta.iter().enumerate() {
        let z = d.z(k);
        h += &z * z.transpose() * *t;
    }
    let ch = h.cholesky().context("H not positive definite")?;
    let hx = ch.solve(&d.x);
    let hy = ch.solve(&d.y);
    let a = d.x.transpose() * hx;
    Ok(a.cholesky().context("X'H⁻¹X singular")?.solve(&(d.x.transpose() * hy)))
}

fn lmm_gls_oracle() -> Result<Outcome> {
    let mut o = Outcome::new();
    let mut worst = 0.0f64;
    for (seed, (levels, var)) in RECOVERY_DESIGNS.iter().enumerate() {
        let small: Vec<usize> = levels.iter().map(|l| l / 5).collect();
        let sd = SyntheticDesign::new(600, &small, var);
        let d = build_design(&sd.simulate(seed as u64)?, &sd.formula())?;
        let theta: Vec<f64> = var.iter().map(|v| v / sd.residual_variance).collect();
        let fit = fit_reml_with(&d, &FitOptions::fixed(theta.clone()))?;
        let want = gls(&d, &theta)?;
        worst = worst.max(max_abs_diff(&fit.beta, want.as_slice()));
    }
    o.note(format!("largest |beta - beta_gls| over 4 designs: {worst:.2e}"));
    o.check(worst <= 1e-8, format!("difference {worst:.2e} exceeds 1e-8"));
    Ok(o)
}

fn wald_arithmetic() -> Result<Outcome> {
    let mut o = Outcome::new();
    let rows = [("gpt-4o", 0.220, 0.003, 0.213, 0.226), ("gemini", 0.132, 0.003, 0.127, 0.137)];
    for (i, (label, est, se, lo, hi)) in rows.into_iter().enumerate() {
        let r = CoefRow::from_estimate(label, est, se);
        let (dl, dh) = ((r.ci_lo - lo).abs(), (r.ci_hi - hi).abs());
        o.note(format!(
            "{label}: {est} ± {Z_95}·{se} -> [{:.5}, {:.5}], reference [{lo}, {hi}], bound gaps {dl:.5} / {dh:.5}",
            r.ci_lo, r.ci_hi
        ));
        // the criterion names the first row; the second is informational
        if i == 0 {
            o.check(
                dl <= 0.001 + 1e-12 && dh <= 0.001 + 1e-12,
                format!(
                    "{label} lower bound {:.5} is {dl:.5} from {lo}; the reference interval is narrower than ±1.96 SE of the rounded inputs",
                    r.ci_lo
                ),
            );
        }
    }
    Ok(o)
}

fn combinatorics() -> Result<Outcome> {
    let mut o = Outcome::new();
    let c = fixture_corpus(&FixtureSpec::reference_shaped(1).with_models(&["gpt-4o", "gemini"]));
    let opts = PairOptions::default();
    let hh = enumerate_pairs(&c, PairKind::HhIntra, &opts).len();
    let inter = enumerate_pairs(&c, PairKind::HhInter, &opts).len();
    let mut per: BTreeMap<(String, String), usize> = BTreeMap::new();
    for p in enumerate_pairs(&c, PairKind::MmInter, &opts) {
        *per.entry((p.story_id.clone(), p.model_id.clone().unwrap_or_default())).or_default() += 1;
    }
    let mm: BTreeSet<usize> = per.values().copied().collect();
    o.note(format!(
        "passages {}, HH_intra {hh}, HH_inter {inter}, MM_inter per (story, model) {mm:?} over {} cells",
        c.passages.len(),
        per.len()
    ));
    o.check(c.passages.len() == 196, "passage count");
    o.check(hh == 588, "HH_intra count");
    o.check(inter == 11_466, "HH_inter count");
    o.check(per.len() == 28 && mm == BTreeSet::from([91]), "MM_inter count");
    Ok(o)
}

// ---------------------------------------------------------------- data

/// Path to a run configuration whose corpus is the released dataset and
/// whose output directory already holds the embedding caches.
const RELEASED_DATA_ENV: &str = "STORYMORAL_RELEASED_DATA";

fn read_report(cfg: &RunConfig, stem: &str) -> Result<HypothesisReport> {
    let p = cfg.out.join("reports").join(format!("{stem}.json"));
    Ok(serde_json::from_slice(&fs::read(&p).with_context(|| p.display().to_string())?)?)
}

fn released_data() -> Result<Outcome> {
    let Some(path) = std::env::var_os(RELEASED_DATA_ENV) else {
        return Ok(Outcome {
            verdict: Verdict::Skipped(format!("{RELEASED_DATA_ENV} not set")),
            details: Vec::new(),
        });
    };
    let mut o = Outcome::new();
    let cfg = RunConfig::load(&PathBuf::from(path))?;
    let t = Instant::now();
    run_pipeline(cfg.clone(), &[Stage::H1, Stage::H2, Stage::H3, Stage::H4].into())?;
    let secs = t.elapsed().as_secs_f64();
    o.note(format!("H1-H4 runtime {secs:.1} s"));
    o.check(secs < 600.0, format!("runtime {secs:.1} s"));

    let h2 = read_report(&cfg, "h2")?;
    let r = h2.regressions.first().context("h2 has no regression")?;
    let icpt = r.coefficient("(Intercept)").context("h2 intercept")?.estimate;
    let inter = r.contrast().context("h2 contrast")?.estimate;
    o.note(format!("H2 intercept {icpt:.4}, interlingual {inter:.4}"));
    o.check((icpt - 0.385).abs() <= 0.01, "H2 intercept");
    o.check((inter + 0.010).abs() <= 0.005, "H2 interlingual coefficient");

    let h1 = read_report(&cfg, "h1")?;
    let p = h1.regressions.first().and_then(|r| r.contrast()).context("h1 contrast")?.p;
    o.note(format!("H1 translated contrast p = {p:.3}"));
    o.check(p > 0.05, "H1 contrast significant");

    let frontier = |m: &str| m.contains("gpt") || m.contains("gemini");
    for (stem, want_small) in [("h3", -1.0), ("h4", 1.0)] {
        let rep = read_report(&cfg, stem)?;
        let mut signs = Vec::new();
        for r in rep.regressions.iter().filter(|r| r.model_id.is_some()) {
            let m = r.model_id.as_deref().unwrap_or_default();
            let est = r.contrast().context("contrast")?.estimate;
            let want = if frontier(m) { 1.0 } else { want_small };
            signs.push(format!("{m} {est:+.3}"));
            o.check(est * want > 0.0, format!("{stem} {m} sign"));
        }
        o.note(format!("{}: {}", stem.to_uppercase(), signs.join(", ")));
        o.check(signs.len() == 7, format!("{stem} has {} model contrasts", signs.len()));
    }
    Ok(o)
}

// ---------------------------------------------------------------- values

fn labels(id: &str, ones: &[SchwartzValue]) -> ValueLabels {
    ValueLabels {
        moral_id: id.into(),
        annotator_model_id: "x".into(),
        labels: SchwartzValue::ALL.iter().map(|v| (*v, u8::from(ones.contains(v)))).collect(),
    }
}

fn naive_ranks(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .map(|x| {
            let below = xs.iter().filter(|y| *y < x).count() as f64;
            let ties = xs.iter().filter(|y| *y == x).count() as f64;
            below + (ties + 1.0) / 2.0
        })
        .collect()
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[derive(serde::Deserialize)]
struct Tables {
    sources: Vec<String>,
    values: Vec<String>,
    annotator_a: Vec<Vec<f64>>,
    annotator_b: Vec<Vec<f64>>,
    reported_rho: f64,
}

fn table(t: &Tables, id: &str, grid: &[Vec<f64>]) -> Result<ValueFrequencyTable> {
    let mut cells = Vec::new();
    for (s, source) in t.sources.iter().enumerate() {
        for (v, row) in t.values.iter().zip(grid) {
            cells.push(FrequencyCell {
                source: source.clone(),
                value: v.parse()?,
                count: 0,
                total: 0,
                percent: row[s],
            });
        }
    }
    Ok(ValueFrequencyTable {
        annotator_model_id: id.into(),
        sources: t.sources.clone(),
        cells,
    })
}

fn values_statistics() -> Result<Outcome> {
    use SchwartzValue::*;
    let mut o = Outcome::new();
    let agreement = [
        (vec![labels("m1", &[]), labels("m2", &[])], vec![labels("m1", &[Power]), labels("m2", &[])], 19.0 / 20.0),
        (vec![labels("m1", &[Security, Tradition])], vec![labels("m1", &[Security, Tradition])], 1.0),
        (
            vec![labels("m1", &[Power, Hedonism, Security]), labels("m2", &[Benevolence]), labels("m3", &SchwartzValue::ALL)],
            vec![labels("m1", &[]), labels("m2", &[Benevolence]), labels("m3", &[])],
            17.0 / 30.0,
        ),
    ];
    for (i, (a, b, want)) in agreement.iter().enumerate() {
        let got = percent_agreement(a, b)?;
        o.check((got - want).abs() <= 1e-12, format!("agreement fixture {i}: {got} vs {want}"));
    }
    let rank_cases: [(&[f64], &[f64]); 3] = [
        (&[1., 2., 2., 3., 5.], &[2., 1., 4., 4., 9.]),
        (&[0.1, 0.5, 0.3, 0.9, 0.7, 0.2], &[3., 1., 2., 6., 5., 4.]),
        (&[1., 1., 2., 2., 3., 3., 4.], &[7., 6., 5., 5., 4., 1., 1.]),
    ];
    for (i, (xs, ys)) in rank_cases.iter().enumerate() {
        let want = pearson(&naive_ranks(xs), &naive_ranks(ys));
        let (got, _) = spearman(xs, ys)?;
        o.check((got - want).abs() <= 1e-12, format!("spearman fixture {i}: {got} vs {want}"));
    }
    o.note("3 agreement and 3 rank-correlation fixtures checked at 1e-12");

    let t: Tables = serde_json::from_str(include_str!("../../core/tests/fixtures/value_tables.json"))?;
    let (rho, p) = grid_spearman(&table(&t, "a", &t.annotator_a)?, &table(&t, "b", &t.annotator_b)?)?;
    let gap = rho - t.reported_rho;
    o.note(format!(
        "30-cell grid: rho = {rho:.4} (p = {p:.2e}) vs reference {}; discrepancy {gap:+.4} within ±0.07",
        t.reported_rho
    ));
    if gap.abs() > 1e-3 {
        o.note("the reference figure was likely computed over a different cell set or ranking");
    }
    o.check(gap.abs() <= 0.07, format!("grid rho {rho:.4} vs {}", t.reported_rho));
    Ok(o)
}

// ---------------------------------------------------------------- screening

fn scores(v: &[f64]) -> Vec<ContaminationScore> {
    v.iter()
        .enumerate()
        .map(|(i, s)| ContaminationScore {
            moral_id: format!("h{i:03}"),
            best_match_moral_id: "m".into(),
            max_similarity: *s,
            embedder_id: "e".into(),
        })
        .collect()
}

fn screening() -> Result<Outcome> {
    let mut o = Outcome::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut mismatches = 0;
    let mut monotone_violations = 0;
    for _ in 0..50 {
        let n = rng.random_range(2..300);
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-0.2..1.0)).collect();
        let mean = v.iter().sum::<f64>() / n as f64;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let want: Vec<String> = (0..n).filter(|&i| v[i] > mean + 2.0 * sd).map(|i| format!("h{i:03}")).collect();
        let s = scores(&v);
        if flag_candidates(&s, 2.0)? != want {
            mismatches += 1;
        }
        let mut prev: Option<BTreeSet<String>> = None;
        for k in [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0] {
            let cur: BTreeSet<String> = flag_candidates(&s, k)?.into_iter().collect();
            if prev.as_ref().is_some_and(|p| !cur.is_subset(p)) {
                monotone_violations += 1;
            }
            prev = Some(cur);
        }
    }
    o.note(format!(
        "50 vectors: {mismatches} mismatch(es) against brute force, {monotone_violations} monotonicity violation(s) over a k sweep"
    ));
    o.note("the randomized monotonicity property also runs as a proptest in the core screening tests");
    o.check(mismatches == 0, "flag sets differ from brute force");
    o.check(monotone_violations == 0, "flag set grew with k");
    Ok(o)
}

// ---------------------------------------------------------------- survey

fn survey_planning() -> Result<Outcome> {
    let mut o = Outcome::new();
    let c = fixture_corpus(&FixtureSpec::reference_shaped(3).with_models(&["gpt-4o"]));
    let stories: Vec<String> = c.stories.iter().take(5).map(|s| s.story_id.clone()).collect();
    let t = Translator::single(Arc::new(StubMt::tagging()));
    let plan = build_comparisons(&c, &stories, &PlanOptions::default(), &t)?;
    let langs: BTreeSet<&str> = plan.items.iter().map(|i| i.survey_language.as_str()).collect();
    let types: BTreeSet<u8> = plan.items.iter().map(|i| i.comparison_type).collect();
    let mut bad = 0;
    let mut hop_violations = 0;
    for item in &plan.items {
        if verify_item(item, &c).is_err() {
            bad += 1;
        }
        if item.side_a.hops.len() != 2 || item.side_b.hops.len() != 2 {
            hop_violations += 1;
        }
    }
    o.note(format!(
        "{} stories × {} languages × {} types: {} planned annotations; {bad} item(s) fail provenance, {hop_violations} with other than two hops per side",
        stories.len(),
        langs.len(),
        types.len(),
        plan.planned_annotations()
    ));
    o.check(plan.planned_annotations() == 2100, "planned annotation count");
    o.check(bad == 0, "provenance");
    o.check(hop_violations == 0, "hop count");
    Ok(o)
}

// ---------------------------------------------------------------- pipeline

fn determinism() -> Result<Outcome> {
    let mut o = Outcome::new();
    let mut manifests = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir()?;
        write_demo_corpus(&dir.path().join("corpus"), 14, 14, 7)?;
        let cfg = stub_config(dir.path().join("corpus"), dir.path().join("out"), 7);
        let t = Instant::now();
        let m = run_pipeline(cfg, &Stage::ALL.into_iter().collect())?;
        ensure!(m.stages.len() == Stage::ALL.len(), "not every stage ran");
        o.note(format!("full stub run in {:.1} s", t.elapsed().as_secs_f64()));
        manifests.push(fs::read(dir.path().join("out/manifest.json"))?);
    }
    o.check(manifests[0] == manifests[1], "manifests differ");
    Ok(o)
}

fn main() {
    let _ = env_logger::builder().is_test(true).filter_level(log::LevelFilter::Error).try_init();
    let checks: [(&str, fn() -> Result<Outcome>); 10] = [
        ("LMM synthetic recovery", lmm_recovery),
        ("LMM OLS collapse", lmm_ols_collapse),
        ("LMM GLS oracle", lmm_gls_oracle),
        ("Wald arithmetic", wald_arithmetic),
        ("Combinatorics", combinatorics),
        ("Released data (data-conditional)", released_data),
        ("Values statistics", values_statistics),
        ("Screening", screening),
        ("Survey planning", survey_planning),
        ("Determinism", determinism),
    ];
    let mut passed = 0;
    for (name, f) in checks {
        if report(name, f()) {
            passed += 1;
        }
    }
    println!("acceptance: {passed}/{} criteria pass", checks.len());
}
