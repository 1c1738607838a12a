//! The four similarity regressions, their report tables and forest-plot data,
//! the rerun with discarded morals, and keyword recurrence.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, PromptVariant};
use crate::embedding::{pairwise_similarity, MoralVectors, PairObservation};
use crate::error::{Error, Result};
use crate::lmm::{
    build_design, fit_reml_with, wald_inference, CoefRow, FitOptions, FormulaSpec, Frame, VarianceComponent,
};
use crate::pairs::{classify_h1, enumerate_pairs, standardize, PairKind, PairOptions, TranslatedCondition};
use crate::stats::{mean_sample_sd, pooled_sd};
use crate::translation::Translator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Hypothesis {
    H1,
    H2,
    H3,
    H4,
}

impl Hypothesis {
    pub fn as_str(self) -> &'static str {
        match self {
            Hypothesis::H1 => "H1",
            Hypothesis::H2 => "H2",
            Hypothesis::H3 => "H3",
            Hypothesis::H4 => "H4",
        }
    }
}

impl fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Hypothesis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "H1" => Ok(Hypothesis::H1),
            "H2" => Ok(Hypothesis::H2),
            "H3" => Ok(Hypothesis::H3),
            "H4" => Ok(Hypothesis::H4),
            _ => Err(Error::Invalid(format!("unknown hypothesis {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisOptions {
    pub include_discarded: bool,
    pub prompt_variant: PromptVariant,
    /// Models for H3/H4; `None` takes every model with morals in the variant.
    pub model_ids: Option<Vec<String>>,
    /// Also fit one categorical regression over all models.
    pub pooled: bool,
    #[serde(skip)]
    pub fit: FitOptions,
}

impl Default for HypothesisOptions {
    fn default() -> Self {
        HypothesisOptions {
            include_discarded: false,
            prompt_variant: PromptVariant::SocioDemographicEnglish,
            model_ids: None,
            pooled: false,
            fit: FitOptions::default(),
        }
    }
}

/// Similarity summaries of the reference and comparison groups, with the
/// effect-size columns in two readings each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Descriptives {
    pub reference: String,
    pub reference_n: usize,
    pub reference_mean: f64,
    pub reference_sd: f64,
    pub comparison: String,
    pub comparison_n: usize,
    pub comparison_mean: f64,
    pub comparison_sd: f64,
    pub mean_difference: f64,
    pub pooled_sd: f64,
    /// Fitted contrast over the pooled SD.
    pub cohens_d: f64,
    /// Raw mean difference over the pooled SD.
    pub cohens_d_means: f64,
    /// Fitted contrast over the reference mean.
    pub improvement: f64,
    /// Raw mean difference over the reference mean.
    pub improvement_means: f64,
}

impl Descriptives {
    fn new(reference: &str, a: &[f64], comparison: &str, b: &[f64], contrast: f64) -> Self {
        let (ma, sa) = mean_sample_sd(a);
        let (mb, sb) = mean_sample_sd(b);
        let sp = pooled_sd(a, b);
        Descriptives {
            reference: reference.into(),
            reference_n: a.len(),
            reference_mean: ma,
            reference_sd: sa,
            comparison: comparison.into(),
            comparison_n: b.len(),
            comparison_mean: mb,
            comparison_sd: sb,
            mean_difference: mb - ma,
            pooled_sd: sp,
            cohens_d: contrast / sp,
            cohens_d_means: (mb - ma) / sp,
            improvement: contrast / ma,
            improvement_means: (mb - ma) / ma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regression {
    pub label: String,
    pub model_id: Option<String>,
    pub formula: FormulaSpec,
    pub n: usize,
    pub contrast_term: Option<String>,
    pub coefficients: Vec<CoefRow>,
    pub variance_components: Vec<VarianceComponent>,
    pub residual_variance: f64,
    pub reml_loglik: f64,
    pub converged: bool,
    pub descriptives: Option<Descriptives>,
}

impl Regression {
    pub fn coefficient(&self, term: &str) -> Option<&CoefRow> {
        self.coefficients.iter().find(|c| c.term == term)
    }

    pub fn contrast(&self) -> Option<&CoefRow> {
        self.contrast_term.as_deref().and_then(|t| self.coefficient(t))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestRow {
    pub label: String,
    pub estimate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub p: f64,
    /// Mean similarity of the human reference group.
    pub baseline: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub hypothesis: Hypothesis,
    pub corpus_hash: String,
    pub embedders: Vec<String>,
    pub options: HypothesisOptions,
    pub dataset_sizes: BTreeMap<String, usize>,
    pub regressions: Vec<Regression>,
    pub forest: Vec<ForestRow>,
    pub notes: Vec<String>,
}

impl HypothesisReport {
    pub fn regression(&self, label: &str) -> Option<&Regression> {
        self.regressions.iter().find(|r| r.label == label)
    }
}

fn observations(
    corpus: &Corpus,
    vectors: &BTreeMap<String, MoralVectors>,
    kind: PairKind,
    opts: &PairOptions,
) -> Result<Vec<PairObservation>> {
    let pairs = enumerate_pairs(corpus, kind, opts);
    pairwise_similarity(&pairs, vectors)
}

fn pair_options(opts: &HypothesisOptions, model_ids: Option<Vec<String>>) -> PairOptions {
    PairOptions {
        include_discarded: opts.include_discarded,
        model_ids,
        variant: Some(opts.prompt_variant),
    }
}

fn strings(obs: &[&PairObservation], f: impl Fn(&PairObservation) -> String) -> Vec<String> {
    obs.iter().map(|o| f(o)).collect()
}

fn numbers(obs: &[&PairObservation], f: impl Fn(&PairObservation) -> f64) -> Vec<f64> {
    obs.iter().map(|o| f(o)).collect()
}

struct Job<'a> {
    label: String,
    model_id: Option<String>,
    obs: Vec<&'a PairObservation>,
    /// Group label per row; the first entry of `groups` is the reference.
    group: Vec<String>,
    groups: (String, String),
    group_column: &'static str,
}

fn fit_job(job: &Job, covariates: &Covariates, random: &[&str], fit: &FitOptions) -> Result<Regression> {
    let (reference, comparison) = &job.groups;
    let sims = numbers(&job.obs, |o| o.similarity);
    let split = |g: &str| -> Vec<f64> {
        sims.iter()
            .zip(&job.group)
            .filter(|(_, l)| *l == g)
            .map(|(s, _)| *s)
            .collect()
    };
    let (a, b) = (split(reference), split(comparison));
    if a.is_empty() || b.is_empty() {
        let which = if a.is_empty() { reference } else { comparison };
        return Err(Error::EmptyConditionCell(format!("{} has no {which} pairs", job.label)));
    }
    let mut frame = Frame::new(job.obs.len())
        .with_numeric("similarity", sims)?
        .with_categorical(job.group_column, job.group.clone())?;
    let mut spec = FormulaSpec::new("similarity").categorical(job.group_column, reference);
    match covariates {
        Covariates::RawPair => {
            frame = frame
                .with_numeric("wc_a", numbers(&job.obs, |o| o.pair.wc_a as f64))?
                .with_numeric("wc_b", numbers(&job.obs, |o| o.pair.wc_b as f64))?;
            spec = spec.numeric("wc_a").numeric("wc_b");
        }
        Covariates::Average => {
            frame = frame.with_numeric(
                "avg_word_count",
                numbers(&job.obs, |o| (o.pair.wc_a + o.pair.wc_b) as f64 / 2.0),
            )?;
            spec = spec.numeric("avg_word_count");
        }
        Covariates::Standardized => {
            // a constant count column standardizes to nothing and is dropped
            for (name, side) in [("z_wc_a", 0), ("z_wc_b", 1)] {
                let raw = numbers(&job.obs, |o| if side == 0 { o.pair.wc_a } else { o.pair.wc_b } as f64);
                match standardize(&raw) {
                    Ok(z) => {
                        frame = frame.with_numeric(name, z)?;
                        spec = spec.numeric(name);
                    }
                    Err(Error::ZeroVariance) => log::warn!("{}: {name} is constant, dropped", job.label),
                    Err(e) => return Err(e),
                }
            }
        }
    }
    for r in random {
        let col = match *r {
            "story" => strings(&job.obs, |o| o.pair.story_id.clone()),
            "country" => strings(&job.obs, |o| o.pair.origin_country.clone()),
            "language_pair" => strings(&job.obs, |o| o.pair.language_pair_key.clone()),
            "language" => strings(&job.obs, |o| o.pair.lang_a.clone()),
            "embedder" => strings(&job.obs, |o| o.embedder_id.clone()),
            other => return Err(Error::Invalid(format!("unknown grouping {other}"))),
        };
        frame = frame.with_categorical(r, col)?;
        spec = spec.random(r);
    }
    let design = build_design(&frame, &spec)?;
    let fit = fit_reml_with(&design, fit)?;
    if !fit.converged {
        log::warn!("{}: fit did not converge (gradient {:.2e})", job.label, fit.gradient_norm);
    }
    let coefficients = wald_inference(&fit);
    let term = format!("{}[{comparison}]", job.group_column);
    let contrast = coefficients
        .iter()
        .find(|c| c.term == term)
        .map(|c| c.estimate)
        .unwrap_or(f64::NAN);
    Ok(Regression {
        label: job.label.clone(),
        model_id: job.model_id.clone(),
        formula: spec,
        n: fit.n,
        contrast_term: Some(term),
        coefficients,
        variance_components: fit.variance_components.clone(),
        residual_variance: fit.residual_variance,
        reml_loglik: fit.reml_loglik,
        converged: fit.converged,
        descriptives: Some(Descriptives::new(reference, &a, comparison, &b, contrast)),
    })
}

enum Covariates {
    RawPair,
    Average,
    Standardized,
}

fn base_report(
    h: Hypothesis,
    corpus: &Corpus,
    vectors: &BTreeMap<String, MoralVectors>,
    opts: &HypothesisOptions,
) -> Result<HypothesisReport> {
    if vectors.is_empty() {
        return Err(Error::Invalid("embeddings missing".into()));
    }
    Ok(HypothesisReport {
        hypothesis: h,
        corpus_hash: corpus.content_hash()?,
        embedders: vectors.keys().cloned().collect(),
        options: opts.clone(),
        dataset_sizes: BTreeMap::new(),
        regressions: Vec::new(),
        forest: Vec::new(),
        notes: Vec::new(),
    })
}

fn finish_notes(report: &mut HypothesisReport, obs: &[PairObservation]) {
    let cjk: BTreeSet<&str> = obs
        .iter()
        .flat_map(|o| [o.pair.lang_a.as_str(), o.pair.lang_b.as_str()])
        .filter(|l| matches!(*l, "ja" | "ko" | "zh"))
        .collect();
    if !cjk.is_empty() {
        report.notes.push(format!(
            "word counts for {} are whitespace tokens and not comparable with other languages",
            cjk.into_iter().collect::<Vec<_>>().join("/")
        ));
    }
    for r in &report.regressions {
        for v in &r.variance_components {
            if let Some(why) = &v.pinned {
                report
                    .notes
                    .push(format!("{}: {} variance held at zero ({why})", r.label, v.factor));
            }
        }
        if !r.converged {
            report.notes.push(format!("{}: optimizer did not meet the gradient tolerance", r.label));
        }
    }
}

fn forest_row(r: &Regression) -> Option<ForestRow> {
    let c = r.contrast()?;
    Some(ForestRow {
        label: r.label.clone(),
        estimate: c.estimate,
        ci_lo: c.ci_lo,
        ci_hi: c.ci_hi,
        p: c.p,
        baseline: r.descriptives.as_ref().map_or(f64::NAN, |d| d.reference_mean),
    })
}

/// The translation regression on intralingual human observations; rows
/// that are not intralingual are ignored.
pub fn fit_h1(obs: &[PairObservation], fit: &FitOptions) -> Result<Regression> {
    let rows: Vec<&PairObservation> = obs.iter().filter(|o| classify_h1(&o.pair).is_some()).collect();
    let group: Vec<String> = rows
        .iter()
        .map(|o| classify_h1(&o.pair).expect("filtered").as_str().to_string())
        .collect();
    let job = Job {
        label: "translation".into(),
        model_id: None,
        obs: rows,
        group,
        groups: ("both_original".into(), "both_translated".into()),
        group_column: "translated",
    };
    fit_job(&job, &Covariates::RawPair, &["story"], fit)
}

/// Intralingual human pairs: does reading a translated passage change how
/// similar two readers' morals are.
pub fn run_h1(
    corpus: &Corpus,
    vectors: &BTreeMap<String, MoralVectors>,
    opts: &HypothesisOptions,
) -> Result<HypothesisReport> {
    let mut report = base_report(Hypothesis::H1, corpus, vectors, opts)?;
    let obs = observations(corpus, vectors, PairKind::H1Condition, &pair_options(opts, None))?;
    for c in [TranslatedCondition::BothOriginal, TranslatedCondition::BothTranslated] {
        let n = obs.iter().filter(|o| classify_h1(&o.pair) == Some(c)).count();
        report.dataset_sizes.insert(format!("{}_observations", c.as_str()), n);
    }
    report.regressions.push(fit_h1(&obs, &opts.fit)?);
    finish_notes(&mut report, &obs);
    Ok(report)
}

/// The culture regression on intralingual plus interlingual human
/// observations.
pub fn fit_h2(obs: &[PairObservation], fit: &FitOptions) -> Result<Regression> {
    let rows: Vec<&PairObservation> = obs.iter().collect();
    let group = strings(&rows, |o| {
        if o.pair.lang_a != o.pair.lang_b { "interlingual" } else { "intralingual" }.to_string()
    });
    let job = Job {
        label: "culture".into(),
        model_id: None,
        obs: rows,
        group,
        groups: ("intralingual".into(), "interlingual".into()),
        group_column: "pair_type",
    };
    fit_job(&job, &Covariates::Average, &["country", "language_pair", "embedder"], fit)
}

/// Human pairs within versus across languages.
pub fn run_h2(
    corpus: &Corpus,
    vectors: &BTreeMap<String, MoralVectors>,
    opts: &HypothesisOptions,
) -> Result<HypothesisReport> {
    let mut report = base_report(Hypothesis::H2, corpus, vectors, opts)?;
    let po = pair_options(opts, None);
    let mut obs = observations(corpus, vectors, PairKind::HhIntra, &po)?;
    let n_intra = obs.len();
    obs.extend(observations(corpus, vectors, PairKind::HhInter, &po)?);
    report.dataset_sizes.insert("HH_intra_observations".into(), n_intra);
    report
        .dataset_sizes
        .insert("HH_inter_observations".into(), obs.len() - n_intra);
    report.regressions.push(fit_h2(&obs, &opts.fit)?);
    finish_notes(&mut report, &obs);
    Ok(report)
}

fn resolve_models(corpus: &Corpus, opts: &HypothesisOptions) -> Result<Vec<String>> {
    let present: BTreeSet<String> = corpus
        .morals
        .iter()
        .filter(|m| opts.include_discarded || m.is_active())
        .filter_map(|m| match &m.source {
            crate::corpus::MoralSource::Model {
                model_id,
                prompt_variant,
            } if *prompt_variant == opts.prompt_variant => Some(model_id.clone()),
            _ => None,
        })
        .collect();
    match &opts.model_ids {
        Some(ids) => {
            for id in ids {
                if !present.contains(id) {
                    return Err(Error::InsufficientMorals(format!(
                        "model {id} has no {} morals",
                        opts.prompt_variant
                    )));
                }
            }
            Ok(ids.clone())
        }
        None if present.is_empty() => Err(Error::InsufficientMorals(format!(
            "no model morals for {}",
            opts.prompt_variant
        ))),
        None => Ok(present.into_iter().collect()),
    }
}

/// Builds and fits one regression per model, each against the same human
/// reference pairs, in parallel.
fn per_model(
    human: &[PairObservation],
    model_obs: &[PairObservation],
    models: &[String],
    random: &[&str],
    pooled: bool,
    fit: &FitOptions,
) -> Result<Vec<Regression>> {
    let mut by_model: HashMap<&str, Vec<&PairObservation>> = HashMap::new();
    for o in model_obs {
        by_model
            .entry(o.pair.model_id.as_deref().unwrap_or_default())
            .or_default()
            .push(o);
    }
    let jobs: Vec<Job> = models
        .iter()
        .map(|m| {
            let mine = by_model.get(m.as_str()).cloned().unwrap_or_default();
            let mut rows: Vec<&PairObservation> = human.iter().collect();
            rows.extend(mine);
            let group = strings(&rows, |o| o.pair.model_id.clone().unwrap_or_else(|| "human".into()));
            Job {
                label: m.clone(),
                model_id: Some(m.clone()),
                obs: rows,
                group,
                groups: ("human".into(), m.clone()),
                group_column: "source",
            }
        })
        .collect();
    let mut fits: Vec<Regression> = jobs
        .par_iter()
        .map(|j| fit_job(j, &Covariates::Standardized, random, fit))
        .collect::<Result<_>>()?;

    if pooled {
        let mut rows: Vec<&PairObservation> = human.iter().collect();
        rows.extend(model_obs.iter());
        let mut frame = Frame::new(rows.len())
            .with_numeric("similarity", numbers(&rows, |o| o.similarity))?
            .with_categorical(
                "source",
                strings(&rows, |o| o.pair.model_id.clone().unwrap_or_else(|| "human".into())),
            )?;
        let mut spec = FormulaSpec::new("similarity").categorical("source", "human");
        for (name, side) in [("z_wc_a", 0), ("z_wc_b", 1)] {
            let raw = numbers(&rows, |o| if side == 0 { o.pair.wc_a } else { o.pair.wc_b } as f64);
            if let Ok(z) = standardize(&raw) {
                frame = frame.with_numeric(name, z)?;
                spec = spec.numeric(name);
            }
        }
        for r in random {
            let col = match *r {
                "story" => strings(&rows, |o| o.pair.story_id.clone()),
                "country" => strings(&rows, |o| o.pair.origin_country.clone()),
                "language_pair" => strings(&rows, |o| o.pair.language_pair_key.clone()),
                "language" => strings(&rows, |o| o.pair.lang_a.clone()),
                _ => strings(&rows, |o| o.embedder_id.clone()),
            };
            frame = frame.with_categorical(r, col)?;
            spec = spec.random(r);
        }
        let fit = fit_reml_with(&build_design(&frame, &spec)?, fit)?;
        fits.push(Regression {
            label: "pooled".into(),
            model_id: None,
            formula: spec,
            n: fit.n,
            contrast_term: None,
            coefficients: wald_inference(&fit),
            variance_components: fit.variance_components.clone(),
            residual_variance: fit.residual_variance,
            reml_loglik: fit.reml_loglik,
            converged: fit.converged,
            descriptives: None,
        });
    }
    Ok(fits)
}

/// Per-model HM-versus-HH regressions; `human` holds HH_intra observations
/// and `model_obs` HM_intra observations of any number of models.
pub fn fit_h3(
    human: &[PairObservation],
    model_obs: &[PairObservation],
    models: &[String],
    pooled: bool,
    fit: &FitOptions,
) -> Result<Vec<Regression>> {
    per_model(human, model_obs, models, &["story", "embedder", "language"], pooled, fit)
}

/// Per-model MM-versus-HH regressions over interlingual observations.
pub fn fit_h4(
    human: &[PairObservation],
    model_obs: &[PairObservation],
    models: &[String],
    pooled: bool,
    fit: &FitOptions,
) -> Result<Vec<Regression>> {
    per_model(
        human,
        model_obs,
        models,
        &["country", "story", "embedder", "language_pair"],
        pooled,
        fit,
    )
}

fn attach(report: &mut HypothesisReport, fits: Vec<Regression>) {
    for r in fits.iter().filter(|r| r.model_id.is_some()) {
        report.dataset_sizes.insert(
            format!("{}_observations", r.label),
            r.descriptives.as_ref().map_or(0, |d| d.comparison_n),
        );
    }
    report.forest = fits.iter().filter_map(forest_row).collect();
    report.regressions = fits;
}

/// Human–model against human–human similarity within a passage, per model.
pub fn run_h3(
    corpus: &Corpus,
    vectors: &BTreeMap<String, MoralVectors>,
    opts: &HypothesisOptions,
) -> Result<HypothesisReport> {
    let mut report = base_report(Hypothesis::H3, corpus, vectors, opts)?;
    let models = resolve_models(corpus, opts)?;
    let po = pair_options(opts, Some(models.clone()));
    let human = observations(corpus, vectors, PairKind::HhIntra, &po)?;
    let hm = observations(corpus, vectors, PairKind::HmIntra, &po)?;
    report.dataset_sizes.insert("HH_intra_observations".into(), human.len());
    report.dataset_sizes.insert("HM_intra_observations".into(), hm.len());
    let fits = fit_h3(&human, &hm, &models, opts.pooled, &opts.fit)?;
    attach(&mut report, fits);
    let mut all = human;
    all.extend(hm);
    finish_notes(&mut report, &all);
    Ok(report)
}

/// Model–model against human–human similarity across languages, per model.
pub fn run_h4(
    corpus: &Corpus,
    vectors: &BTreeMap<String, MoralVectors>,
    opts: &HypothesisOptions,
) -> Result<HypothesisReport> {
    let mut report = base_report(Hypothesis::H4, corpus, vectors, opts)?;
    let models = resolve_models(corpus, opts)?;
    let po = pair_options(opts, Some(models.clone()));
    let human = observations(corpus, vectors, PairKind::HhInter, &po)?;
    let mm = observations(corpus, vectors, PairKind::MmInter, &po)?;
    report.dataset_sizes.insert("HH_inter_observations".into(), human.len());
    report.dataset_sizes.insert("MM_inter_observations".into(), mm.len());
    let fits = fit_h4(&human, &mm, &models, opts.pooled, &opts.fit)?;
    attach(&mut report, fits);
    let mut all = human;
    all.extend(mm);
    finish_notes(&mut report, &all);
    Ok(report)
}

pub fn run(
    h: Hypothesis,
    corpus: &Corpus,
    vectors: &BTreeMap<String, MoralVectors>,
    opts: &HypothesisOptions,
) -> Result<HypothesisReport> {
    match h {
        Hypothesis::H1 => run_h1(corpus, vectors, opts),
        Hypothesis::H2 => run_h2(corpus, vectors, opts),
        Hypothesis::H3 => run_h3(corpus, vectors, opts),
        Hypothesis::H4 => run_h4(corpus, vectors, opts),
    }
}

// ---- output ----

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WrittenReport {
    pub json: PathBuf,
    pub coefficients: PathBuf,
    pub forest: PathBuf,
}

/// Writes `<stem>.json`, `<stem>_coefficients.csv` and `<stem>_forest.dat`.
pub fn write_report(report: &HypothesisReport, dir: &Path, stem: &str) -> Result<WrittenReport> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let out = WrittenReport {
        json: dir.join(format!("{stem}.json")),
        coefficients: dir.join(format!("{stem}_coefficients.csv")),
        forest: dir.join(format!("{stem}_forest.dat")),
    };
    let mut json = serde_json::to_vec_pretty(report)?;
    json.push(b'\n');
    std::fs::write(&out.json, json).map_err(|e| Error::io(&out.json, e))?;

    let mut buf = Vec::new();
    write_coefficients_csv(&mut buf, report)?;
    std::fs::write(&out.coefficients, buf).map_err(|e| Error::io(&out.coefficients, e))?;

    let mut buf = Vec::new();
    write_forest_dat(&mut buf, report).map_err(|e| Error::io(&out.forest, e))?;
    std::fs::write(&out.forest, buf).map_err(|e| Error::io(&out.forest, e))?;
    Ok(out)
}

pub fn write_coefficients_csv<W: Write>(w: W, report: &HypothesisReport) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["hypothesis", "regression", "term", "coef", "se", "z", "p", "ci_lo", "ci_hi"])?;
    for r in &report.regressions {
        for c in &r.coefficients {
            csv.write_record([
                report.hypothesis.to_string(),
                r.label.clone(),
                c.term.clone(),
                format!("{:.6}", c.estimate),
                format!("{:.6}", c.se),
                format!("{:.4}", c.z),
                format!("{:.6}", c.p),
                format!("{:.6}", c.ci_lo),
                format!("{:.6}", c.ci_hi),
            ])?;
        }
    }
    csv.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Whitespace-separated columns for gnuplot: row index, quoted label,
/// estimate, interval and baseline.
pub fn write_forest_dat<W: Write>(mut w: W, report: &HypothesisReport) -> std::io::Result<()> {
    writeln!(w, "# {} forest rows", report.hypothesis)?;
    writeln!(w, "# idx label estimate ci_lo ci_hi baseline")?;
    for (i, r) in report.forest.iter().enumerate() {
        writeln!(
            w,
            "{i} \"{}\" {:.6} {:.6} {:.6} {:.6}",
            r.label, r.estimate, r.ci_lo, r.ci_hi, r.baseline
        )?;
    }
    Ok(())
}

// ---- robustness ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastComparison {
    pub hypothesis: Hypothesis,
    pub label: String,
    pub primary_estimate: f64,
    pub primary_p: f64,
    pub with_discarded_estimate: f64,
    pub with_discarded_p: f64,
    pub same_sign: bool,
    pub same_significance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    /// No discarded morals: nothing to compare.
    pub vacuous: bool,
    pub discarded_morals: usize,
    pub primary: Vec<HypothesisReport>,
    pub with_discarded: Vec<HypothesisReport>,
    pub comparisons: Vec<ContrastComparison>,
    pub consistent: bool,
}

pub const ALPHA: f64 = 0.05;

/// Reruns H3 and H4 with discarded morals put back and compares each
/// model contrast with the primary run.
pub fn robustness_with_discarded(
    corpus: &Corpus,
    vectors: &BTreeMap<String, MoralVectors>,
    opts: &HypothesisOptions,
) -> Result<RobustnessReport> {
    let discarded = corpus.morals.iter().filter(|m| m.discarded).count();
    if discarded == 0 {
        return Ok(RobustnessReport {
            vacuous: true,
            discarded_morals: 0,
            primary: Vec::new(),
            with_discarded: Vec::new(),
            comparisons: Vec::new(),
            consistent: true,
        });
    }
    let primary_opts = HypothesisOptions {
        include_discarded: false,
        ..opts.clone()
    };
    let robust_opts = HypothesisOptions {
        include_discarded: true,
        ..opts.clone()
    };
    let primary = vec![
        run_h3(corpus, vectors, &primary_opts)?,
        run_h4(corpus, vectors, &primary_opts)?,
    ];
    let with_discarded = vec![
        run_h3(corpus, vectors, &robust_opts)?,
        run_h4(corpus, vectors, &robust_opts)?,
    ];
    let mut comparisons = Vec::new();
    for (p, r) in primary.iter().zip(&with_discarded) {
        for pr in &p.forest {
            let Some(rr) = r.forest.iter().find(|f| f.label == pr.label) else { continue };
            comparisons.push(ContrastComparison {
                hypothesis: p.hypothesis,
                label: pr.label.clone(),
                primary_estimate: pr.estimate,
                primary_p: pr.p,
                with_discarded_estimate: rr.estimate,
                with_discarded_p: rr.p,
                same_sign: pr.estimate.signum() == rr.estimate.signum(),
                same_significance: (pr.p < ALPHA) == (rr.p < ALPHA),
            });
        }
    }
    let consistent = comparisons.iter().all(|c| c.same_sign && c.same_significance);
    Ok(RobustnessReport {
        vacuous: false,
        discarded_morals: discarded,
        primary,
        with_discarded,
        comparisons,
        consistent,
    })
}

// ---- keyword recurrence ----

/// Lemmas reported when they occur in at least this many morals.
pub const MIN_MORALS: usize = 3;

const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "also", "am", "an", "and", "any", "are", "as",
    "at", "be", "because", "been", "before", "being", "below", "between", "both", "but", "by", "can",
    "could", "did", "do", "does", "doing", "down", "during", "each", "few", "for", "from", "further", "had",
    "has", "have", "having", "he", "her", "here", "hers", "herself", "him", "himself", "his", "how", "i",
    "if", "in", "into", "is", "it", "its", "itself", "just", "may", "me", "might", "more", "most", "must",
    "my", "myself", "no", "nor", "not", "now", "of", "off", "on", "once", "one", "only", "or", "other",
    "our", "ours", "ourselves", "out", "over", "own", "same", "shall", "she", "should", "so", "some",
    "such", "than", "that", "the", "their", "theirs", "them", "themselves", "then", "there", "these",
    "they", "this", "those", "through", "to", "too", "under", "until", "up", "very", "was", "we", "were",
    "what", "when", "where", "which", "while", "who", "whom", "why", "will", "with", "would", "you",
    "your", "yours", "yourself", "yourselves",
];

/// Strips one plural, -ing or -ed suffix, then a trailing "e".
pub fn stem(word: &str) -> String {
    let w = word;
    let n = w.chars().count();
    let mut s = if n > 5 && w.ends_with("ing") {
        w[..w.len() - 3].to_string()
    } else if n > 4 && w.ends_with("ed") {
        w[..w.len() - 2].to_string()
    } else if n > 4 && w.ends_with("ies") {
        format!("{}y", &w[..w.len() - 3])
    } else if n > 3 && w.ends_with('s') && !w.ends_with("ss") && !w.ends_with("us") && !w.ends_with("is") {
        w[..w.len() - 1].to_string()
    } else {
        w.to_string()
    };
    if s.chars().count() > 3 && s.ends_with('e') {
        s.pop();
    }
    s
}

pub fn tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .map(|t| t.trim_matches('\''))
        .map(|t| t.strip_suffix("'s").unwrap_or(t))
        .filter(|t| !t.is_empty() && !t.chars().all(|c| c.is_numeric()) && !STOPWORDS.contains(t))
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordCount {
    pub lemma: String,
    /// Most frequent surface form.
    pub display: String,
    /// Morals containing the lemma at least once.
    pub morals: usize,
    pub occurrences: usize,
}

/// Lemmas shared by at least [`MIN_MORALS`] of `texts`, most widespread first.
pub fn keyword_counts(texts: &[String]) -> Vec<KeywordCount> {
    let mut morals: BTreeMap<String, usize> = BTreeMap::new();
    let mut occurrences: BTreeMap<String, usize> = BTreeMap::new();
    let mut forms: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for t in texts {
        let mut seen = BTreeSet::new();
        for tok in tokens(t) {
            let l = stem(&tok);
            *occurrences.entry(l.clone()).or_default() += 1;
            *forms.entry(l.clone()).or_default().entry(tok).or_default() += 1;
            seen.insert(l);
        }
        for l in seen {
            *morals.entry(l).or_default() += 1;
        }
    }
    let mut out: Vec<KeywordCount> = morals
        .into_iter()
        .filter(|(_, n)| *n >= MIN_MORALS)
        .map(|(lemma, n)| {
            let display = forms[&lemma]
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(f, _)| f.clone())
                .unwrap_or_default();
            KeywordCount {
                occurrences: occurrences[&lemma],
                lemma,
                display,
                morals: n,
            }
        })
        .collect();
    out.sort_by(|a, b| b.morals.cmp(&a.morals).then(a.lemma.cmp(&b.lemma)));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordTable {
    pub story_id: String,
    /// "human" or a model id.
    pub source: String,
    pub languages: Vec<String>,
    pub morals: usize,
    pub keywords: Vec<KeywordCount>,
}

/// Recurring lemmas across the morals one source wrote for one story.
/// Non-English morals go through `translator` first when one is given.
pub fn keyword_recurrence(
    corpus: &Corpus,
    story_id: &str,
    source: &str,
    languages: Option<&[String]>,
    variant: Option<PromptVariant>,
    translator: Option<&Translator>,
) -> Result<KeywordTable> {
    if corpus.story(story_id).is_none() {
        return Err(Error::Dangling(format!("story {story_id}")));
    }
    let selected: Vec<_> = corpus
        .morals
        .iter()
        .filter(|m| m.is_active() && m.story_id == story_id && m.source.label() == source)
        .filter(|m| languages.is_none_or(|ls| ls.contains(&m.passage_language)))
        .filter(|m| match (&m.source, variant) {
            (crate::corpus::MoralSource::Model { prompt_variant, .. }, Some(v)) => *prompt_variant == v,
            _ => true,
        })
        .collect();
    if selected.is_empty() {
        return Err(Error::InsufficientMorals(format!("no {source} morals for story {story_id}")));
    }
    let texts: Vec<String> = selected
        .iter()
        .map(|m| match translator {
            Some(t) if m.passage_language != "en" => t.translate(&m.text, &m.passage_language, "en"),
            _ => Ok(m.text.clone()),
        })
        .collect::<Result<_>>()?;
    let langs: BTreeSet<String> = selected.iter().map(|m| m.passage_language.clone()).collect();
    Ok(KeywordTable {
        story_id: story_id.into(),
        source: source.into(),
        languages: langs.into_iter().collect(),
        morals: texts.len(),
        keywords: keyword_counts(&texts),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stems_merge_inflections() {
        for (a, b) in [
            ("requires", "require"),
            ("required", "require"),
            ("protected", "protect"),
            ("protecting", "protect"),
            ("truths", "truth"),
            ("stories", "story"),
            ("loved", "love"),
        ] {
            assert_eq!(stem(a), stem(b), "{a} vs {b}");
        }
        assert_ne!(stem("justice"), stem("injustice"));
        assert_eq!(stem("glass"), "glass");
    }

    #[test]
    fn tokens_drop_stopwords_and_possessives() {
        assert_eq!(tokens("The law is in one's own hands."), vec!["law", "hands"]);
    }

    #[test]
    fn no_shared_lemma_gives_empty_table() {
        let t: Vec<String> = ["Cats purr.", "Dogs bark.", "Birds sing."].map(String::from).to_vec();
        assert!(keyword_counts(&t).is_empty());
    }

    #[test]
    fn duplicates_saturate() {
        let t = vec!["Honesty wins.".to_string(); 5];
        let k = keyword_counts(&t);
        assert!(k.iter().all(|k| k.morals == 5));
        assert_eq!(k.len(), 2);
    }
}
