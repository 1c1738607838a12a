//! Stage orchestration: grid → generate → clean → screen → embed →
//! hypotheses → keywords → values → survey plan.
//!
//! Stages run sequentially in the order of [`Stage::ALL`]. Corpus-changing
//! stages write snapshots under `<out>/corpus/` (see [`Snapshot`]); the
//! others read the newest snapshot, or the input corpus when there is none.
//! A stage whose input hash matches the last recorded run, with every output
//! intact, is skipped.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use storymoral_core::embedding::{
    cached_moral_vectors, embed_morals, text_hash, Embedder, MoralVectors, VectorCache,
};
use storymoral_core::generation::{
    clean_all, generate_all, open_archive, render_moral_prompt, CachedChat, CompletionArchive,
};
use storymoral_core::hypotheses::{self, Hypothesis, HypothesisOptions};
use storymoral_core::providers::config::Providers;
use storymoral_core::screening::{self, ContaminationScore};
use storymoral_core::survey::{self, PlanOptions, SurveyPlan};
use storymoral_core::translation::build_passage_grid;
use storymoral_core::values::{self, ValueLabels};
use storymoral_core::{load_corpus, save_corpus, Clock, Corpus, Translator};

use crate::config::RunConfig;
use crate::manifest::{
    self, read_index, sha256_hex, write_json, OutputFile, RunManifest, RunStatus, StageIndex,
    StageRecord, StageTiming,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Grid,
    Generate,
    Clean,
    Screen,
    Embed,
    H1,
    H2,
    H3,
    H4,
    Robustness,
    Keywords,
    Values,
    Survey,
}

impl Stage {
    /// Topological order.
    pub const ALL: [Stage; 13] = [
        Stage::Grid,
        Stage::Generate,
        Stage::Clean,
        Stage::Screen,
        Stage::Embed,
        Stage::H1,
        Stage::H2,
        Stage::H3,
        Stage::H4,
        Stage::Robustness,
        Stage::Keywords,
        Stage::Values,
        Stage::Survey,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Grid => "grid",
            Stage::Generate => "generate",
            Stage::Clean => "clean",
            Stage::Screen => "screen",
            Stage::Embed => "embed",
            Stage::H1 => "h1",
            Stage::H2 => "h2",
            Stage::H3 => "h3",
            Stage::H4 => "h4",
            Stage::Robustness => "robustness",
            Stage::Keywords => "keywords",
            Stage::Values => "values",
            Stage::Survey => "survey",
        }
    }

    fn hypothesis(self) -> Option<Hypothesis> {
        match self {
            Stage::H1 => Some(Hypothesis::H1),
            Stage::H2 => Some(Hypothesis::H2),
            Stage::H3 => Some(Hypothesis::H3),
            Stage::H4 => Some(Hypothesis::H4),
            _ => None,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| anyhow!("unknown stage {s:?}"))
    }
}

/// Parses a comma-separated stage list; `all` selects every stage.
pub fn parse_stages(s: &str) -> Result<BTreeSet<Stage>> {
    if s.trim() == "all" {
        return Ok(Stage::ALL.into_iter().collect());
    }
    s.split(',').map(|x| x.trim().parse()).collect()
}

pub const CORPUS_DIR: &str = "corpus";
pub const CACHE_DIR: &str = "cache";
pub const EMBEDDINGS_DIR: &str = "embeddings";
pub const REPORTS_DIR: &str = "reports";
pub const SCREENING_DIR: &str = "screening";
pub const VALUES_DIR: &str = "values";
pub const SURVEY_DIR: &str = "survey";
pub const PLAN_FILE: &str = "survey/plan.json";

/// Instantiated providers, caches and archives for one output directory.
pub struct Pipeline {
    pub cfg: RunConfig,
    providers: Providers,
    clock: Clock,
    translator: Arc<Translator>,
    archive: Arc<CompletionArchive>,
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let providers = Providers::build(&cfg.providers)?;
        let clock = match &cfg.timestamp {
            Some(t) => Clock::Fixed(t.clone()),
            None if cfg.all_stub() => Clock::fixed_epoch(),
            None => Clock::System,
        };
        let cache = cfg.out.join(CACHE_DIR);
        let translator = Translator::routed(providers.mt_routes())
            .with_cache_file(cache.join("translations.jsonl"))?
            .with_clock(clock.clone());
        let archive = open_archive(cache.join("completions.jsonl"))?;
        Ok(Pipeline {
            cfg,
            providers,
            clock,
            translator: Arc::new(translator),
            archive,
        })
    }

    pub fn out(&self) -> &Path {
        &self.cfg.out
    }

    pub fn translator(&self) -> &Translator {
        &self.translator
    }

    pub fn chat(&self, id: &str) -> Result<CachedChat> {
        Ok(CachedChat::new(self.providers.chat(id)?, self.archive.clone()).with_clock(self.clock.clone()))
    }

    fn embedder(&self, id: &str) -> Result<Embedder> {
        let backend = self.providers.embedder(id)?;
        let cache = VectorCache::open(self.out().join(EMBEDDINGS_DIR), backend.info().clone())?;
        Ok(Embedder::new(backend, cache).with_translator(self.translator.clone()))
    }

    fn snapshot_dir(&self, snap: Snapshot) -> PathBuf {
        self.out().join(CORPUS_DIR).join(snap.as_str())
    }

    /// The newest existing snapshot among `candidates` (ordered oldest first),
    /// falling back to the input corpus.
    fn latest(&self, candidates: &[Snapshot]) -> Result<Corpus> {
        let dir = candidates
            .iter()
            .rev()
            .map(|s| self.snapshot_dir(*s))
            .find(|d| d.join(storymoral_core::corpus::MANIFEST_FILE).exists())
            .unwrap_or_else(|| self.cfg.corpus.clone());
        load_corpus(&dir).with_context(|| format!("loading corpus from {}", dir.display()))
    }

    /// The corpus `stage` reads.
    pub fn corpus_for(&self, stage: Stage) -> Result<Corpus> {
        use Snapshot::*;
        match stage {
            Stage::Grid => self.latest(&[]),
            Stage::Generate => self.latest(&[Grid]),
            Stage::Clean => self.latest(&[Grid, Generate]),
            _ => self.latest(&Snapshot::ALL),
        }
    }

    /// The corpus the analyses read: the newest snapshot, or the input corpus.
    pub fn corpus(&self) -> Result<Corpus> {
        self.latest(&Snapshot::ALL)
    }

    fn save(&self, corpus: &Corpus, snap: Snapshot) -> Result<Vec<PathBuf>> {
        save_corpus(corpus, &self.snapshot_dir(snap))?;
        Ok(corpus_files(snap))
    }

    fn persist_caches(&self) -> Result<()> {
        self.translator.persist()?;
        self.archive.persist()?;
        Ok(())
    }

    /// Cached vectors for every configured embedder; fails with "embeddings
    /// missing" when any moral lacks one.
    pub fn load_vectors(&self, corpus: &Corpus) -> Result<BTreeMap<String, MoralVectors>> {
        let mut out = BTreeMap::new();
        for id in &self.cfg.embedders {
            let info = self.providers.embedder(id)?.info().clone();
            let cache = VectorCache::open(self.out().join(EMBEDDINGS_DIR), info)?;
            let v = cached_moral_vectors(corpus, &cache)
                .map_err(|e| anyhow!("embeddings missing for {id}: {e}; run the embed stage"))?;
            out.insert(id.clone(), v);
        }
        Ok(out)
    }

    fn hypothesis_options(&self) -> HypothesisOptions {
        HypothesisOptions {
            include_discarded: self.cfg.hypotheses.include_discarded,
            prompt_variant: self.cfg.prompt_variant,
            model_ids: Some(self.cfg.models.clone()),
            pooled: self.cfg.hypotheses.pooled,
            ..Default::default()
        }
    }

    fn embedding_files(&self, ids: &[String]) -> Vec<PathBuf> {
        ids.iter()
            .flat_map(|id| {
                // same file-name mapping as the vector cache
                let safe: String = id
                    .chars()
                    .map(|c| if c.is_ascii_alphanumeric() || "-._".contains(c) { c } else { '_' })
                    .collect();
                [
                    PathBuf::from(EMBEDDINGS_DIR).join(format!("{safe}.f32")),
                    PathBuf::from(EMBEDDINGS_DIR).join(format!("{safe}.json")),
                ]
            })
            .filter(|p| self.out().join(p).exists())
            .collect()
    }

    fn embeddings_hash(&self, ids: &[String]) -> Result<String> {
        let mut h = String::new();
        for p in self.embedding_files(ids) {
            h.push_str(&manifest::file_sha256(&self.out().join(p))?);
        }
        Ok(sha256_hex(h.as_bytes()))
    }

    /// Hash over everything a stage reads.
    fn input_hash(&self, stage: Stage, corpus: &Corpus) -> Result<String> {
        let mut parts = vec![
            stage.as_str().to_string(),
            self.cfg.content_hash()?,
            corpus.content_hash()?,
        ];
        match stage {
            Stage::H1
            | Stage::H2
            | Stage::H3
            | Stage::H4
            | Stage::Robustness => parts.push(self.embeddings_hash(&self.cfg.embedders)?),
            _ => {}
        }
        Ok(sha256_hex(parts.join("\n").as_bytes()))
    }

    /// Checks the artifacts a stage reads before running it.
    fn check_dependencies(&self, stage: Stage, corpus: &Corpus) -> Result<()> {
        let has_models = corpus.morals.iter().any(|m| !m.source.is_human());
        let full_grid = corpus
            .stories
            .iter()
            .all(|s| corpus.languages().iter().all(|l| corpus.passage(&s.story_id, &l.language_code).is_some()));
        match stage {
            Stage::Grid | Stage::Embed => {}
            Stage::Generate => {
                if !full_grid {
                    bail!("passage grid incomplete; run the grid stage first");
                }
            }
            Stage::Clean | Stage::Keywords | Stage::Values => {
                if !has_models {
                    bail!("model morals missing; run the generate stage first");
                }
            }
            Stage::Screen => {
                if !has_models {
                    bail!("model morals missing; run the generate stage first");
                }
                if corpus.morals.iter().any(|m| !m.cleaned) {
                    bail!("uncleaned morals present; run the clean stage first");
                }
            }
            Stage::H1 | Stage::H2 => {
                self.load_vectors(corpus)?;
            }
            Stage::H3 | Stage::H4 | Stage::Robustness => {
                self.load_vectors(corpus)?;
                if !has_models {
                    bail!("model morals missing; run the generate stage first");
                }
            }
            Stage::Survey => {
                let m = self.cfg.survey_model();
                if !corpus.morals.iter().any(|x| x.source.label() == m) {
                    bail!("no morals from {m}; run the generate stage first");
                }
            }
        }
        Ok(())
    }

    fn run_stage(&self, stage: Stage, corpus: &Corpus) -> Result<Vec<PathBuf>> {
        let out = self.out();
        let files = match stage {
            Stage::Grid => {
                let originals: Vec<_> = corpus.passages.iter().filter(|p| p.is_original).cloned().collect();
                let grid = build_passage_grid(
                    &corpus.stories,
                    corpus.languages(),
                    &originals,
                    &self.translator,
                    self.cfg.parallelism,
                )?;
                self.save(&corpus.with_passages(grid)?, Snapshot::Grid)?
            }
            Stage::Generate => {
                let chats = self
                    .cfg
                    .models
                    .iter()
                    .map(|m| self.chat(m))
                    .collect::<Result<Vec<_>>>()?;
                let fresh = generate_all(corpus, &chats, self.cfg.prompt_variant, Some(&self.translator))?;
                let ids: BTreeSet<&str> = fresh.iter().map(|m| m.moral_id.as_str()).collect();
                let mut morals: Vec<_> = corpus
                    .morals
                    .iter()
                    .filter(|m| !ids.contains(m.moral_id.as_str()))
                    .cloned()
                    .collect();
                morals.extend(fresh);
                self.save(&corpus.with_morals(morals)?, Snapshot::Generate)?
            }
            Stage::Clean => {
                let cleaner = self.chat(self.cfg.cleaner_id())?;
                self.save(&corpus.with_morals(clean_all(corpus, &cleaner)?)?, Snapshot::Clean)?
            }
            Stage::Screen => self.screen(corpus)?,
            Stage::Embed => {
                for id in &self.cfg.embedders {
                    let e = self.embedder(id)?;
                    embed_morals(corpus, &e)?;
                    e.cache().persist()?;
                }
                self.embedding_files(&self.cfg.embedders)
            }
            Stage::H1 | Stage::H2 | Stage::H3 | Stage::H4 => {
                let h = stage.hypothesis().expect("hypothesis stage");
                let vectors = self.load_vectors(corpus)?;
                let report = hypotheses::run(h, corpus, &vectors, &self.hypothesis_options())?;
                let w = hypotheses::write_report(&report, &out.join(REPORTS_DIR), stage.as_str())?;
                [w.json, w.coefficients, w.forest]
                    .into_iter()
                    .map(|p| p.strip_prefix(out).map(Path::to_path_buf))
                    .collect::<Result<_, _>>()?
            }
            Stage::Robustness => {
                let vectors = self.load_vectors(corpus)?;
                let r = hypotheses::robustness_with_discarded(corpus, &vectors, &self.hypothesis_options())?;
                let rel = PathBuf::from(REPORTS_DIR).join("robustness.json");
                write_json(&out.join(&rel), &r)?;
                vec![rel]
            }
            Stage::Keywords => {
                let rel = PathBuf::from(REPORTS_DIR).join("keywords.json");
                write_json(&out.join(&rel), &self.keywords(corpus)?)?;
                vec![rel]
            }
            Stage::Values => self.values(corpus)?,
            Stage::Survey => {
                let plan = self.survey_plan(corpus)?;
                write_json(&out.join(PLAN_FILE), &plan)?;
                vec![PathBuf::from(PLAN_FILE)]
            }
        };
        self.persist_caches()?;
        Ok(files)
    }

    fn screen(&self, corpus: &Corpus) -> Result<Vec<PathBuf>> {
        let id = self.cfg.screening_embedder()?.to_string();
        let e = self.embedder(&id)?;
        let vectors = embed_morals(corpus, &e)?;
        e.cache().persist()?;
        let scoring = screening::score_contamination(corpus, &vectors, &id)?;
        let flagged = screening::flag_candidates(&scoring.scores, self.cfg.screening.k)?;
        let dir = PathBuf::from(SCREENING_DIR);
        fs::create_dir_all(self.out().join(&dir))?;
        let summary = ScreeningSummary {
            embedder_id: id.clone(),
            k: self.cfg.screening.k,
            threshold: screening::threshold(&scoring.scores, self.cfg.screening.k)?,
            flagged,
            unscored: scoring.unscored,
            scores: scoring.scores,
        };
        write_json(&self.out().join(dir.join("scores.json")), &summary)?;
        let mut buf = Vec::new();
        screening::write_review_queue(&mut buf, corpus, &summary.scores, &summary.flagged)?;
        fs::write(self.out().join(dir.join("review_queue.csv")), buf)?;
        let mut files = vec![dir.join("scores.json"), dir.join("review_queue.csv")];
        files.extend(self.embedding_files(&[id]));
        Ok(files)
    }

    /// Applies a filled-in review queue to the newest corpus snapshot.
    pub fn review_apply(&self, decisions: &Path, replacements: Option<&Path>) -> Result<ReviewApplied> {
        let corpus = self.corpus()?;
        let summary: ScreeningSummary = serde_json::from_slice(
            &fs::read(self.out().join(SCREENING_DIR).join("scores.json"))
                .context("screening scores missing; run the screen stage first")?,
        )?;
        let file = fs::File::open(decisions).with_context(|| format!("opening {}", decisions.display()))?;
        let decisions = screening::read_decisions(file)?;
        let extra = match replacements {
            Some(p) => storymoral_core::jsonl::read_or_empty(p)?,
            None => Vec::new(),
        };
        let outcome = screening::apply_review(&corpus, &decisions, &summary.flagged, extra)?;
        self.save(&outcome.corpus, Snapshot::Reviewed)?;
        let log = PathBuf::from(SCREENING_DIR).join("review_log.jsonl");
        storymoral_core::jsonl::write_all(&self.out().join(&log), &outcome.log)?;
        Ok(ReviewApplied {
            discarded: outcome.discarded,
            replacements: outcome.replacements,
            log: self.out().join(log),
        })
    }

    fn keywords(&self, corpus: &Corpus) -> Result<Vec<hypotheses::KeywordTable>> {
        let mut sources = vec!["human".to_string()];
        sources.extend(self.cfg.models.iter().cloned());
        let mut out = Vec::new();
        for s in &corpus.stories {
            for src in &sources {
                let variant = (src != "human").then_some(self.cfg.prompt_variant);
                match hypotheses::keyword_recurrence(corpus, &s.story_id, src, None, variant, Some(&self.translator)) {
                    Ok(t) => out.push(t),
                    Err(storymoral_core::Error::InsufficientMorals(msg)) => log::warn!("{msg}"),
                    Err(e) => return Err(e.into()),
                }
            }
        }
        Ok(out)
    }

    /// Labels every active moral with both annotators.
    pub fn values_annotate(&self, corpus: &Corpus) -> Result<(Vec<ValueLabels>, Vec<ValueLabels>)> {
        let (a, b) = self.cfg.annotator_ids()?;
        let label = |id: &str| -> Result<Vec<ValueLabels>> {
            let chat = self.chat(id)?;
            Ok(values::annotate_all(corpus, |m| m.is_active(), &chat, Some(&self.translator))?)
        };
        Ok((label(&a)?, label(&b)?))
    }

    fn values(&self, corpus: &Corpus) -> Result<Vec<PathBuf>> {
        let dir = PathBuf::from(VALUES_DIR);
        fs::create_dir_all(self.out().join(&dir))?;
        let (la, lb) = self.values_annotate(corpus)?;
        let mut files = Vec::new();
        for labels in [&la, &lb] {
            let id = &labels[0].annotator_model_id;
            let p = dir.join(format!("labels_{id}.jsonl"));
            storymoral_core::jsonl::write_all(&self.out().join(&p), labels)?;
            files.push(p);
        }
        let ta = values::frequency_table(&la, corpus, |m| m.is_active())?;
        let tb = values::frequency_table(&lb, corpus, |m| m.is_active())?;
        for t in [&ta, &tb] {
            let p = dir.join(format!("table_{}.csv", t.annotator_model_id));
            let mut buf = Vec::new();
            t.write_csv(&mut buf)?;
            fs::write(self.out().join(&p), buf)?;
            files.push(p);
        }
        let (rho, p) = values::grid_spearman(&ta, &tb)?;
        let summary = ValuesSummary {
            annotator_a: ta.annotator_model_id.clone(),
            annotator_b: tb.annotator_model_id.clone(),
            percent_agreement: values::percent_agreement(&la, &lb)?,
            grid_spearman_rho: rho,
            grid_spearman_p: p,
            per_source_spearman: values::per_source_spearman(&ta, &tb)?,
            note: "labels are a comparative signal, not ground truth".into(),
        };
        let sp = dir.join("agreement.json");
        write_json(&self.out().join(&sp), &summary)?;
        files.push(sp);
        let texts: HashMap<String, String> = corpus
            .morals
            .iter()
            .filter(|m| m.is_active())
            .map(|m| Ok((m.moral_id.clone(), values::annotation_text(m, Some(&self.translator))?)))
            .collect::<Result<_>>()?;
        let ex = values::disagreement_examples(&la, &lb, corpus, Some(&texts))?;
        let ep = dir.join("examples.json");
        write_json(&self.out().join(&ep), &ex)?;
        files.push(ep);
        Ok(files)
    }

    pub fn survey_plan(&self, corpus: &Corpus) -> Result<SurveyPlan> {
        let s = &self.cfg.survey;
        let stories = match &s.stories {
            Some(v) => v.clone(),
            None => corpus.stories.iter().map(|x| x.story_id.clone()).collect(),
        };
        let opts = PlanOptions {
            n_per_cell: s.n_per_cell,
            languages: s.languages.clone(),
            llm_model_id: self.cfg.survey_model().to_string(),
            llm_variant: self.cfg.prompt_variant,
            seed: self.cfg.seed,
            items_per_session: s.items_per_session,
            ..Default::default()
        };
        Ok(survey::build_comparisons(corpus, &stories, &opts, &self.translator)?)
    }

    /// Runs the requested stages in topological order. On failure the
    /// manifest is written with the stages completed so far.
    pub fn run(&self, stages: &BTreeSet<Stage>) -> Result<RunManifest> {
        let out = self.out().to_path_buf();
        fs::create_dir_all(&out)?;
        let input = load_corpus(&self.cfg.corpus)
            .with_context(|| format!("loading input corpus {}", self.cfg.corpus.display()))?;
        let mut m = RunManifest {
            schema_version: manifest::SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed: self.cfg.seed,
            config_hash: self.cfg.content_hash()?,
            input_corpus_hash: input.content_hash()?,
            requested: stages.iter().copied().collect(),
            stages: Vec::new(),
            status: RunStatus::Complete,
            error: None,
        };
        let mut index = read_index(&out);
        let mut timings = Vec::new();
        for &stage in Stage::ALL.iter().filter(|s| stages.contains(s)) {
            let started = Instant::now();
            match self.step(stage, &mut index) {
                Ok((rec, reused)) => {
                    m.stages.push(rec);
                    timings.push(StageTiming {
                        stage,
                        millis: started.elapsed().as_millis(),
                        reused,
                    });
                }
                Err(e) => {
                    m.status = RunStatus::Failed;
                    m.error = Some(format!("{stage}: {e:#}"));
                    m.write(&out)?;
                    write_json(&out.join(manifest::TIMINGS_FILE), &timings)?;
                    return Err(e.context(format!("stage {stage} failed")));
                }
            }
        }
        m.write(&out)?;
        write_json(&out.join(manifest::TIMINGS_FILE), &timings)?;
        Ok(m)
    }

    fn step(&self, stage: Stage, index: &mut StageIndex) -> Result<(StageRecord, bool)> {
        let corpus = self.corpus_for(stage)?;
        self.check_dependencies(stage, &corpus)?;
        let input_hash = self.input_hash(stage, &corpus)?;
        if let Some(prev) = index.get(&stage) {
            if prev.input_hash == input_hash && prev.outputs.iter().all(|o| o.verify(self.out())) {
                log::info!("{stage}: inputs unchanged, reusing outputs");
                return Ok((prev.clone(), true));
            }
        }
        log::info!("{stage}: running");
        let mut files = self.run_stage(stage, &corpus)?;
        files.sort();
        files.dedup();
        let outputs = files
            .iter()
            .map(|f| OutputFile::describe(self.out(), f))
            .collect::<Result<Vec<_>>>()?;
        let rec = StageRecord {
            stage,
            input_hash,
            outputs,
        };
        index.insert(stage, rec.clone());
        write_json(&self.out().join(manifest::STAGE_INDEX_FILE), index)?;
        Ok((rec, false))
    }

    /// Provider calls the requested stages would issue, without issuing any.
    /// Counts for stages whose inputs do not exist yet are estimates.
    pub fn plan_calls(&self, stages: &BTreeSet<Stage>) -> Result<Vec<PlannedCalls>> {
        let corpus = self.corpus()?;
        let n_lang = corpus.languages().len();
        let n_story = corpus.stories.len();
        let mut out = Vec::new();
        let mut push = |stage: Stage, provider: String, calls: usize, exact: bool| {
            out.push(PlannedCalls {
                stage,
                provider,
                calls,
                exact,
            })
        };
        let has_grid = corpus.passages.len() == n_lang * n_story;
        let models_done = corpus.morals.iter().any(|m| !m.source.is_human());
        for &stage in Stage::ALL.iter().filter(|s| stages.contains(s)) {
            match stage {
                Stage::Grid => {
                    let mut n = 0;
                    for s in &corpus.stories {
                        let src = &s.origin.language_code;
                        let Some(orig) = corpus.passage(&s.story_id, src) else { continue };
                        for l in corpus.languages() {
                            if &l.language_code != src && !self.translator.is_cached(&orig.text, src, &l.language_code) {
                                n += 1;
                            }
                        }
                    }
                    push(stage, "mt".into(), n, true);
                }
                Stage::Generate => {
                    for id in &self.cfg.models {
                        let chat = self.chat(id)?;
                        let exact = has_grid && self.cfg.prompt_variant == storymoral_core::PromptVariant::SocioDemographicEnglish;
                        let n = if exact {
                            corpus
                                .passages
                                .iter()
                                .map(|p| {
                                    let pair = corpus.language(&p.language_code).expect("passage language");
                                    render_moral_prompt(p, pair, self.cfg.prompt_variant, None)
                                        .map(|prompt| usize::from(!chat.is_cached(&prompt, 0)))
                                })
                                .sum::<storymoral_core::Result<usize>>()?
                        } else {
                            n_lang * n_story
                        };
                        push(stage, format!("chat:{id}"), n, exact);
                    }
                }
                Stage::Clean => {
                    let pending = corpus.morals.iter().filter(|m| !m.cleaned).count();
                    let future = if models_done { 0 } else { self.cfg.models.len() * n_lang * n_story };
                    push(stage, format!("chat:{}", self.cfg.cleaner_id()), 2 * (pending + future), false);
                }
                Stage::Screen | Stage::Embed => {
                    let ids = if stage == Stage::Screen {
                        vec![self.cfg.screening_embedder()?.to_string()]
                    } else {
                        self.cfg.embedders.clone()
                    };
                    for id in ids {
                        let e = self.embedder(&id)?;
                        let texts: BTreeSet<String> = corpus
                            .morals
                            .iter()
                            .filter(|m| !e.is_cached(&m.text))
                            .map(|m| text_hash(&m.text))
                            .collect();
                        let future = if models_done { 0 } else { self.cfg.models.len() * n_lang * n_story };
                        push(stage, format!("embedder:{id}"), texts.len() + future, models_done);
                    }
                }
                Stage::Values => {
                    let (a, b) = self.cfg.annotator_ids()?;
                    let n = corpus.morals.iter().filter(|m| m.is_active()).count()
                        + if models_done { 0 } else { self.cfg.models.len() * n_lang * n_story };
                    push(stage, format!("chat:{a}"), n, false);
                    push(stage, format!("chat:{b}"), n, false);
                    push(stage, "mt".into(), n, false);
                }
                Stage::Keywords => push(stage, "mt".into(), corpus.morals.len(), false),
                Stage::Survey => {
                    let stories = self.cfg.survey.stories.as_ref().map_or(n_story, Vec::len);
                    let langs = self.cfg.survey.languages.as_ref().map_or(n_lang, Vec::len);
                    // two sides, two hops each
                    let items = stories * langs * self.cfg.survey.n_per_cell * survey::COMPARISON_TYPES.len();
                    push(stage, "mt".into(), items * 4, false);
                }
                Stage::H1 | Stage::H2 | Stage::H3 | Stage::H4 | Stage::Robustness => {
                    push(stage, "none".into(), 0, true)
                }
            }
        }
        Ok(out)
    }
}

fn corpus_files(snap: Snapshot) -> Vec<PathBuf> {
    use storymoral_core::corpus::{MANIFEST_FILE, MORALS_FILE, PASSAGES_FILE, STORIES_FILE};
    [MANIFEST_FILE, STORIES_FILE, PASSAGES_FILE, MORALS_FILE]
        .into_iter()
        .map(|f| PathBuf::from(CORPUS_DIR).join(snap.as_str()).join(f))
        .collect()
}

/// Corpus states written under `<out>/corpus/`, oldest first. Each
/// corpus-changing step reads its predecessor and writes its own directory,
/// so rerunning an early step never undoes a later one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Snapshot {
    Grid,
    Generate,
    Clean,
    Reviewed,
}

impl Snapshot {
    pub const ALL: [Snapshot; 4] = [Snapshot::Grid, Snapshot::Generate, Snapshot::Clean, Snapshot::Reviewed];

    pub fn as_str(self) -> &'static str {
        match self {
            Snapshot::Grid => "grid",
            Snapshot::Generate => "generate",
            Snapshot::Clean => "clean",
            Snapshot::Reviewed => "reviewed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningSummary {
    pub embedder_id: String,
    pub k: f64,
    pub threshold: f64,
    pub flagged: Vec<String>,
    pub unscored: Vec<String>,
    pub scores: Vec<ContaminationScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValuesSummary {
    pub annotator_a: String,
    pub annotator_b: String,
    pub percent_agreement: f64,
    pub grid_spearman_rho: f64,
    pub grid_spearman_p: f64,
    pub per_source_spearman: BTreeMap<String, (f64, f64)>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReviewApplied {
    pub discarded: usize,
    pub replacements: usize,
    pub log: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PlannedCalls {
    pub stage: Stage,
    pub provider: String,
    pub calls: usize,
    /// False when the count is an upper bound or estimate.
    pub exact: bool,
}

/// Convenience wrapper: build the pipeline and run `stages`.
pub fn run_pipeline(cfg: RunConfig, stages: &BTreeSet<Stage>) -> Result<RunManifest> {
    Pipeline::new(cfg)?.run(stages)
}
