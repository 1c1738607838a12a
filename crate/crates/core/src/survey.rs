//! Pairwise preference survey: the ten comparison types, the item and session
//! plan, the live session service, preference rates and exclusions.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::corpus::{Corpus, Moral, PromptVariant};
use crate::error::{Error, Result};
use crate::jsonl::Appender;
use crate::stats::{wilson, Interval};
use crate::text;
use crate::translation::{default_pivot, Hop, Translator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    ValidInCulture,
    ValidOutCulture,
    InvalidInCulture,
    InvalidOutCulture,
    Llm,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::ValidInCulture => "valid_in_culture",
            Condition::ValidOutCulture => "valid_out_culture",
            Condition::InvalidInCulture => "invalid_in_culture",
            Condition::InvalidOutCulture => "invalid_out_culture",
            Condition::Llm => "llm",
        }
    }

    /// Recomputes the tag of a moral shown with `story_id` to a reader of
    /// `language`.
    pub fn of(moral: &Moral, story_id: &str, language: &str) -> Condition {
        if !moral.source.is_human() {
            return Condition::Llm;
        }
        match (moral.story_id == story_id, moral.passage_language == language) {
            (true, true) => Condition::ValidInCulture,
            (true, false) => Condition::ValidOutCulture,
            (false, true) => Condition::InvalidInCulture,
            (false, false) => Condition::InvalidOutCulture,
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonType {
    pub id: u8,
    pub side_a: Condition,
    pub side_b: Condition,
}

use Condition::*;

pub const COMPARISON_TYPES: [ComparisonType; 10] = [
    ComparisonType { id: 1, side_a: ValidInCulture, side_b: ValidOutCulture },
    ComparisonType { id: 2, side_a: ValidInCulture, side_b: InvalidInCulture },
    ComparisonType { id: 3, side_a: ValidInCulture, side_b: InvalidOutCulture },
    ComparisonType { id: 4, side_a: ValidOutCulture, side_b: InvalidInCulture },
    ComparisonType { id: 5, side_a: InvalidInCulture, side_b: InvalidOutCulture },
    ComparisonType { id: 6, side_a: InvalidOutCulture, side_b: ValidOutCulture },
    ComparisonType { id: 7, side_a: Llm, side_b: ValidInCulture },
    ComparisonType { id: 8, side_a: Llm, side_b: ValidOutCulture },
    ComparisonType { id: 9, side_a: Llm, side_b: InvalidInCulture },
    ComparisonType { id: 10, side_a: Llm, side_b: InvalidOutCulture },
];

pub fn comparison_type(id: u8) -> Option<ComparisonType> {
    COMPARISON_TYPES.iter().copied().find(|t| t.id == id)
}

/// A moral as shown to a participant, with where it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServedMoral {
    pub moral_id: String,
    pub condition: Condition,
    pub source_story_id: String,
    pub source_language: String,
    pub text: String,
    pub hops: Vec<Hop>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyItem {
    pub item_id: String,
    pub story_id: String,
    pub survey_language: String,
    pub comparison_type: u8,
    /// Annotator slot within the (story, language, type) cell.
    pub slot: usize,
    pub side_a: ServedMoral,
    pub side_b: ServedMoral,
    /// Whether side a is shown first; balanced within each comparison type.
    pub a_first: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FluencyCheck {
    pub question: String,
    pub options: Vec<String>,
    pub correct: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionCheck {
    pub options: Vec<String>,
    pub nonsensical: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedSession {
    pub plan_session_id: String,
    pub story_id: String,
    pub language: String,
    pub seed: u64,
    /// Items in serving order.
    pub item_ids: Vec<String>,
    pub fluency: FluencyCheck,
    pub attention: AttentionCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyPlan {
    pub seed: u64,
    pub n_per_cell: usize,
    pub llm_model_id: String,
    pub items: Vec<SurveyItem>,
    pub sessions: Vec<PlannedSession>,
}

impl SurveyPlan {
    pub fn item(&self, item_id: &str) -> Option<&SurveyItem> {
        self.items.iter().find(|i| i.item_id == item_id)
    }

    pub fn session(&self, plan_session_id: &str) -> Option<&PlannedSession> {
        self.sessions.iter().find(|s| s.plan_session_id == plan_session_id)
    }

    pub fn planned_annotations(&self) -> usize {
        self.items.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanOptions {
    pub n_per_cell: usize,
    /// Survey languages; `None` uses every corpus language.
    pub languages: Option<Vec<String>>,
    pub llm_model_id: String,
    pub llm_variant: PromptVariant,
    pub seed: u64,
    pub items_per_session: usize,
    /// English sentence translated into each survey language for the
    /// attention check.
    pub nonsense: String,
}

impl Default for PlanOptions {
    fn default() -> Self {
        PlanOptions {
            n_per_cell: 3,
            languages: None,
            llm_model_id: "gpt-4o".into(),
            llm_variant: PromptVariant::SocioDemographicEnglish,
            seed: 0,
            items_per_session: 5,
            nonsense: "The purple staircase swallowed seven loud Tuesdays.".into(),
        }
    }
}

fn rng_for(seed: u64, parts: &[&str]) -> ChaCha8Rng {
    let mut all = vec![seed.to_string()];
    all.extend(parts.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = all.iter().map(String::as_str).collect();
    let h = text::key_hash(&refs);
    ChaCha8Rng::seed_from_u64(u64::from_str_radix(&h[..16], 16).expect("hex"))
}

struct Pools<'a> {
    corpus: &'a Corpus,
    opts: &'a PlanOptions,
    stories: &'a [String],
}

impl<'a> Pools<'a> {
    fn humans(&self, story: &str, pred: impl Fn(&str) -> bool) -> Vec<&'a Moral> {
        self.corpus
            .morals
            .iter()
            .filter(|m| m.source.is_human() && m.is_active() && m.story_id == story && pred(&m.passage_language))
            .collect()
    }

    /// Candidate morals for one side.
    fn candidates(&self, cond: Condition, story: &str, donor: &str, lang: &str) -> Vec<&'a Moral> {
        match cond {
            ValidInCulture => self.humans(story, |l| l == lang),
            ValidOutCulture => self.humans(story, |l| l != lang),
            InvalidInCulture => self.humans(donor, |l| l == lang),
            InvalidOutCulture => self.humans(donor, |l| l != lang),
            Llm => self
                .corpus
                .morals
                .iter()
                .filter(|m| {
                    m.is_active()
                        && m.story_id == story
                        && m.passage_language == lang
                        && matches!(&m.source, crate::corpus::MoralSource::Model { model_id, prompt_variant }
                            if *model_id == self.opts.llm_model_id && *prompt_variant == self.opts.llm_variant)
                })
                .collect(),
        }
    }

    fn donor(&self, story: &str, lang: &str, ty: u8, slot: usize) -> &'a str {
        let others: Vec<&String> = self.stories.iter().filter(|s| *s != story).collect();
        let mut rng = rng_for(self.opts.seed, &["donor", story, lang, &ty.to_string(), &slot.to_string()]);
        others[rng.random_range(0..others.len())]
    }
}

struct Draft<'a> {
    item_id: String,
    story: String,
    lang: String,
    ty: ComparisonType,
    slot: usize,
    a: &'a Moral,
    b: &'a Moral,
}

/// Serves a moral through two MT hops into `lang`, pivoting through a third
/// language so that no side skips translation.
pub fn serve(moral: &Moral, cond: Condition, lang: &str, translator: &Translator) -> Result<ServedMoral> {
    let pivot = default_pivot(&moral.passage_language, lang);
    let r = translator.relay(&moral.text, &moral.passage_language, pivot, lang)?;
    Ok(ServedMoral {
        moral_id: moral.moral_id.clone(),
        condition: cond,
        source_story_id: moral.story_id.clone(),
        source_language: moral.passage_language.clone(),
        text: r.text,
        hops: r.hops,
    })
}

/// A fluency question built from the passage: which sentence appears in the
/// story. Distractors are opening sentences of other stories' passages in the
/// same language.
pub fn default_fluency_check(corpus: &Corpus, story: &str, lang: &str, seed: u64) -> Result<FluencyCheck> {
    let first = |s: &str| -> Option<String> {
        corpus
            .passage(s, lang)
            .and_then(|p| text::split_sentences(&p.text).into_iter().next())
    };
    let correct = first(story).ok_or_else(|| Error::Invalid(format!("no passage for {story} in {lang}")))?;
    let mut rng = rng_for(seed, &["fluency", story, lang]);
    let mut others: Vec<String> = corpus
        .stories
        .iter()
        .filter(|s| s.story_id != story)
        .filter_map(|s| first(&s.story_id))
        .filter(|t| *t != correct)
        .collect();
    others.shuffle(&mut rng);
    others.truncate(3);
    let mut options = others;
    let at = rng.random_range(0..=options.len());
    options.insert(at, correct);
    Ok(FluencyCheck {
        question: "Which of these sentences appears in the story?".into(),
        options,
        correct: at,
    })
}

/// Plans `n_per_cell` annotations for every (story, language, comparison
/// type) and groups them into sessions of one story each.
pub fn build_comparisons(
    corpus: &Corpus,
    stories: &[String],
    opts: &PlanOptions,
    translator: &Translator,
) -> Result<SurveyPlan> {
    if stories.len() < 2 {
        return Err(Error::InsufficientMorals(
            "at least two stories are needed for out-of-story morals".into(),
        ));
    }
    for s in stories {
        if corpus.story(s).is_none() {
            return Err(Error::Dangling(format!("story {s}")));
        }
    }
    let languages = opts.languages.clone().unwrap_or_else(|| corpus.language_codes());
    let pools = Pools {
        corpus,
        opts,
        stories,
    };
    let mut drafts = Vec::new();
    for story in stories {
        for lang in &languages {
            for ty in COMPARISON_TYPES {
                for slot in 0..opts.n_per_cell {
                    let donor = pools.donor(story, lang, ty.id, slot);
                    let pick = |cond: Condition| -> Result<&Moral> {
                        let c = pools.candidates(cond, story, donor, lang);
                        if c.is_empty() {
                            return Err(Error::InsufficientMorals(format!(
                                "no {cond} moral for story {story} in {lang}"
                            )));
                        }
                        // slots walk a seeded permutation so annotators of one cell see different morals
                        let mut order: Vec<usize> = (0..c.len()).collect();
                        order.shuffle(&mut rng_for(opts.seed, &[story, lang, &ty.id.to_string(), cond.as_str()]));
                        Ok(c[order[slot % c.len()]])
                    };
                    let a = pick(ty.side_a)?;
                    let b = pick(ty.side_b)?;
                    drafts.push(Draft {
                        item_id: format!("{story}:{lang}:t{:02}:s{slot}", ty.id),
                        story: story.clone(),
                        lang: lang.clone(),
                        ty,
                        slot,
                        a,
                        b,
                    });
                }
            }
        }
    }

    // screen order alternates within each type, starting from a seeded side
    let mut seen: HashMap<u8, usize> = HashMap::new();
    let start: bool = ChaCha8Rng::seed_from_u64(opts.seed).random();
    let mut flags = Vec::with_capacity(drafts.len());
    for d in &drafts {
        let k = seen.entry(d.ty.id).or_default();
        flags.push((*k % 2 == 0) == start);
        *k += 1;
    }

    let items: Vec<SurveyItem> = drafts
        .par_iter()
        .zip(flags)
        .map(|(d, a_first)| {
            Ok(SurveyItem {
                item_id: d.item_id.clone(),
                story_id: d.story.clone(),
                survey_language: d.lang.clone(),
                comparison_type: d.ty.id,
                slot: d.slot,
                side_a: serve(d.a, d.ty.side_a, &d.lang, translator)?,
                side_b: serve(d.b, d.ty.side_b, &d.lang, translator)?,
                a_first,
            })
        })
        .collect::<Result<_>>()?;

    let mut sessions = Vec::new();
    let per = opts.items_per_session.max(1);
    for story in stories {
        for lang in &languages {
            let nonsense = translator.translate(&opts.nonsense, "en", lang)?;
            for slot in 0..opts.n_per_cell {
                let mut cell: Vec<&SurveyItem> = items
                    .iter()
                    .filter(|i| &i.story_id == story && &i.survey_language == lang && i.slot == slot)
                    .collect();
                cell.shuffle(&mut rng_for(opts.seed, &["sessions", story, lang, &slot.to_string()]));
                for (k, chunk) in cell.chunks(per).enumerate() {
                    let id = format!("{story}:{lang}:s{slot}:{k}");
                    let seed = u64::from_str_radix(&text::key_hash(&[&opts.seed.to_string(), &id])[..16], 16)
                        .expect("hex");
                    let real = &chunk[0].side_a.text;
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let nonsensical = rng.random_range(0..2);
                    let mut options = vec![real.clone()];
                    options.insert(nonsensical, nonsense.clone());
                    sessions.push(PlannedSession {
                        plan_session_id: id,
                        story_id: story.clone(),
                        language: lang.clone(),
                        seed,
                        item_ids: chunk.iter().map(|i| i.item_id.clone()).collect(),
                        fluency: default_fluency_check(corpus, story, lang, opts.seed)?,
                        attention: AttentionCheck { options, nonsensical },
                    });
                }
            }
        }
    }
    Ok(SurveyPlan {
        seed: opts.seed,
        n_per_cell: opts.n_per_cell,
        llm_model_id: opts.llm_model_id.clone(),
        items,
        sessions,
    })
}

/// Checks one item's provenance against the corpus: side tags recompute
/// from the source morals and each side went through exactly two hops into
/// the survey language.
pub fn verify_item(item: &SurveyItem, corpus: &Corpus) -> Result<()> {
    let ty = comparison_type(item.comparison_type)
        .ok_or_else(|| Error::Invalid(format!("comparison type {}", item.comparison_type)))?;
    for (side, want) in [(&item.side_a, ty.side_a), (&item.side_b, ty.side_b)] {
        let m = corpus
            .moral(&side.moral_id)
            .ok_or_else(|| Error::Dangling(side.moral_id.clone()))?;
        let got = Condition::of(m, &item.story_id, &item.survey_language);
        if got != want || side.condition != want {
            return Err(Error::Invalid(format!(
                "{}: side {} is {got}, expected {want}",
                item.item_id, side.moral_id
            )));
        }
        if side.source_story_id != m.story_id || side.source_language != m.passage_language {
            return Err(Error::Invalid(format!("{}: stale provenance", item.item_id)));
        }
        let h = &side.hops;
        let chained = h.len() == 2
            && h[0].src_lang == m.passage_language
            && h[0].input == m.text
            && h[0].tgt_lang == h[1].src_lang
            && h[0].output == h[1].input
            && h[1].tgt_lang == item.survey_language
            && h[1].output == side.text
            && h[0].tgt_lang != m.passage_language
            && h[0].tgt_lang != item.survey_language;
        if !chained {
            return Err(Error::Invalid(format!(
                "{}: side {} does not have two chained hops",
                item.item_id, side.moral_id
            )));
        }
    }
    Ok(())
}

// ---- live sessions ----

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Open,
    Complete,
    Excluded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Item,
    Fluency,
    Attention,
}

/// Where the checks sit in the serving order.
pub const FLUENCY_POSITION: usize = 0;
pub const ATTENTION_POSITION: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueEntry {
    pub entry_id: String,
    pub kind: EntryKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewSession {
    #[serde(default)]
    pub session_id: Option<String>,
    pub language: String,
    #[serde(default)]
    pub country: Option<String>,
    /// Planned session to serve; the first unassigned one in `language` by default.
    #[serde(default)]
    pub plan_session_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub plan_session_id: String,
    pub language: String,
    pub country: Option<String>,
    pub story_id: String,
    pub status: SessionStatus,
    pub exclusion_reasons: Vec<String>,
    pub answered: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptionView {
    pub key: String,
    pub text: String,
}

/// What the participant sees; carries no provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemView {
    pub session_id: String,
    pub entry_id: String,
    pub position: usize,
    pub total: usize,
    pub language: String,
    pub rtl: bool,
    pub passage: String,
    pub prompt: String,
    pub options: Vec<OptionView>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyResponse {
    pub session_id: String,
    pub entry_id: String,
    pub kind: EntryKind,
    /// Option key as shown on screen.
    pub choice: String,
    /// For comparison items, the side chosen after undoing screen order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub side: Option<String>,
    pub latency_ms: Option<u64>,
    pub timestamp: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub accepted: bool,
    pub status: SessionStatus,
    pub remaining: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    SessionCreated {
        session_id: String,
        plan_session_id: String,
        language: String,
        country: Option<String>,
        timestamp: String,
    },
    Response(SurveyResponse),
}

#[derive(Debug, Clone)]
struct SessionState {
    info: SessionInfo,
    queue: Vec<QueueEntry>,
    responses: BTreeMap<String, SurveyResponse>,
}

pub fn is_rtl(language: &str) -> bool {
    matches!(language, "ar" | "he" | "fa" | "ur")
}

const KEYS: [&str; 8] = ["a", "b", "c", "d", "e", "f", "g", "h"];

/// Session service over a fixed plan. Per-session updates are serialized by
/// a per-session lock; responses are appended to an event log when one is
/// configured, and replayed on open.
pub struct SurveyService {
    plan: SurveyPlan,
    corpus_passages: HashMap<(String, String), String>,
    sessions: RwLock<BTreeMap<String, Mutex<SessionState>>>,
    log: Option<Appender>,
    clock: Clock,
}

impl SurveyService {
    pub fn new(plan: SurveyPlan, corpus: &Corpus) -> Self {
        let corpus_passages = corpus
            .passages
            .iter()
            .map(|p| ((p.story_id.clone(), p.language_code.clone()), p.text.clone()))
            .collect();
        SurveyService {
            plan,
            corpus_passages,
            sessions: RwLock::new(BTreeMap::new()),
            log: None,
            clock: Clock::System,
        }
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    /// Replays and then appends to the event log at `path`.
    pub fn with_log(mut self, path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let events: Vec<Event> = crate::jsonl::read_or_empty(&path)?;
        for e in events {
            self.apply(e)?;
        }
        self.log = Some(Appender::open(path)?);
        Ok(self)
    }

    pub fn plan(&self) -> &SurveyPlan {
        &self.plan
    }

    pub fn log_path(&self) -> Option<&Path> {
        self.log.as_ref().map(|l| l.path())
    }

    fn record(&self, e: &Event) -> Result<()> {
        match &self.log {
            Some(l) => l.append(e),
            None => Ok(()),
        }
    }

    fn apply(&self, e: Event) -> Result<()> {
        match e {
            Event::SessionCreated {
                session_id,
                plan_session_id,
                language,
                country,
                ..
            } => {
                let st = self.fresh_state(&session_id, &plan_session_id, &language, country)?;
                self.sessions.write().unwrap().insert(session_id, Mutex::new(st));
                Ok(())
            }
            Event::Response(r) => {
                let sessions = self.sessions.read().unwrap();
                let mut st = sessions
                    .get(&r.session_id)
                    .ok_or_else(|| Error::UnknownSession(r.session_id.clone()))?
                    .lock()
                    .unwrap();
                Self::absorb(&self.plan, &mut st, r);
                Ok(())
            }
        }
    }

    fn fresh_state(
        &self,
        session_id: &str,
        plan_session_id: &str,
        language: &str,
        country: Option<String>,
    ) -> Result<SessionState> {
        let ps = self
            .plan
            .session(plan_session_id)
            .ok_or_else(|| Error::Invalid(format!("unknown planned session {plan_session_id}")))?;
        if ps.language != language {
            return Err(Error::Invalid(format!(
                "planned session {plan_session_id} is in {}, not {language}",
                ps.language
            )));
        }
        let mut queue: Vec<QueueEntry> = ps
            .item_ids
            .iter()
            .map(|i| QueueEntry {
                entry_id: i.clone(),
                kind: EntryKind::Item,
            })
            .collect();
        queue.insert(
            FLUENCY_POSITION.min(queue.len()),
            QueueEntry {
                entry_id: format!("{plan_session_id}:fluency"),
                kind: EntryKind::Fluency,
            },
        );
        queue.insert(
            ATTENTION_POSITION.min(queue.len()),
            QueueEntry {
                entry_id: format!("{plan_session_id}:attention"),
                kind: EntryKind::Attention,
            },
        );
        Ok(SessionState {
            info: SessionInfo {
                session_id: session_id.to_string(),
                plan_session_id: plan_session_id.to_string(),
                language: language.to_string(),
                country,
                story_id: ps.story_id.clone(),
                status: SessionStatus::Open,
                exclusion_reasons: Vec::new(),
                answered: 0,
                total: queue.len(),
            },
            queue,
            responses: BTreeMap::new(),
        })
    }

    pub fn create_session(&self, req: NewSession) -> Result<SessionInfo> {
        let mut sessions = self.sessions.write().unwrap();
        let plan_session_id = match req.plan_session_id {
            Some(p) => p,
            None => {
                let used: Vec<String> = sessions
                    .values()
                    .map(|s| s.lock().unwrap().info.plan_session_id.clone())
                    .collect();
                self.plan
                    .sessions
                    .iter()
                    .find(|s| s.language == req.language && !used.contains(&s.plan_session_id))
                    .map(|s| s.plan_session_id.clone())
                    .ok_or_else(|| Error::Invalid(format!("no unassigned planned session in {}", req.language)))?
            }
        };
        let session_id = req
            .session_id
            .unwrap_or_else(|| format!("S{:05}", sessions.len() + 1));
        if sessions.contains_key(&session_id) {
            return Err(Error::Invalid(format!("session {session_id} exists")));
        }
        let st = self.fresh_state(&session_id, &plan_session_id, &req.language, req.country.clone())?;
        self.record(&Event::SessionCreated {
            session_id: session_id.clone(),
            plan_session_id,
            language: req.language,
            country: req.country,
            timestamp: self.clock.now(),
        })?;
        let info = st.info.clone();
        sessions.insert(session_id, Mutex::new(st));
        Ok(info)
    }

    pub fn session(&self, session_id: &str) -> Result<SessionInfo> {
        let sessions = self.sessions.read().unwrap();
        let st = sessions
            .get(session_id)
            .ok_or_else(|| Error::UnknownSession(session_id.into()))?
            .lock()
            .unwrap();
        Ok(st.info.clone())
    }

    pub fn sessions(&self) -> Vec<SessionInfo> {
        self.sessions
            .read()
            .unwrap()
            .values()
            .map(|s| s.lock().unwrap().info.clone())
            .collect()
    }

    /// Screen order of an item's sides: `[first, second]` as "a"/"b".
    fn screen_sides(item: &SurveyItem) -> [&'static str; 2] {
        if item.a_first {
            ["a", "b"]
        } else {
            ["b", "a"]
        }
    }

    fn view(&self, st: &SessionState, pos: usize) -> Result<ItemView> {
        let entry = &st.queue[pos];
        let ps = self.plan.session(&st.info.plan_session_id).expect("checked at creation");
        let passage = self
            .corpus_passages
            .get(&(st.info.story_id.clone(), st.info.language.clone()))
            .cloned()
            .unwrap_or_default();
        let (prompt, texts): (String, Vec<String>) = match entry.kind {
            EntryKind::Item => {
                let item = self
                    .plan
                    .item(&entry.entry_id)
                    .ok_or_else(|| Error::Invalid(format!("plan lacks item {}", entry.entry_id)))?;
                let texts = Self::screen_sides(item)
                    .iter()
                    .map(|s| if *s == "a" { &item.side_a.text } else { &item.side_b.text })
                    .cloned()
                    .collect();
                ("Which moral best captures the story's central lesson?".into(), texts)
            }
            EntryKind::Fluency => (ps.fluency.question.clone(), ps.fluency.options.clone()),
            EntryKind::Attention => (
                "Which moral best captures the story's central lesson?".into(),
                ps.attention.options.clone(),
            ),
        };
        Ok(ItemView {
            session_id: st.info.session_id.clone(),
            entry_id: entry.entry_id.clone(),
            position: pos + 1,
            total: st.queue.len(),
            language: st.info.language.clone(),
            rtl: is_rtl(&st.info.language),
            passage,
            prompt,
            options: texts
                .into_iter()
                .zip(KEYS)
                .map(|(text, key)| OptionView { key: key.into(), text })
                .collect(),
        })
    }

    pub fn next_item(&self, session_id: &str) -> Result<ItemView> {
        let sessions = self.sessions.read().unwrap();
        let st = sessions
            .get(session_id)
            .ok_or_else(|| Error::UnknownSession(session_id.into()))?
            .lock()
            .unwrap();
        match st.info.status {
            SessionStatus::Complete => return Err(Error::SessionComplete(session_id.into())),
            SessionStatus::Excluded => return Err(Error::SessionClosed(session_id.into())),
            SessionStatus::Open => {}
        }
        let pos = st
            .queue
            .iter()
            .position(|e| !st.responses.contains_key(&e.entry_id))
            .ok_or_else(|| Error::SessionComplete(session_id.into()))?;
        self.view(&st, pos)
    }

    fn absorb(plan: &SurveyPlan, st: &mut SessionState, r: SurveyResponse) {
        let ps = plan.session(&st.info.plan_session_id).expect("checked at creation");
        let key_index = KEYS.iter().position(|k| *k == r.choice);
        match r.kind {
            EntryKind::Fluency if key_index != Some(ps.fluency.correct) => {
                st.info.status = SessionStatus::Excluded;
                st.info.exclusion_reasons.push("fluency check failed".into());
            }
            EntryKind::Attention if key_index == Some(ps.attention.nonsensical) => {
                st.info.status = SessionStatus::Excluded;
                st.info.exclusion_reasons.push("nonsensical option chosen".into());
            }
            _ => {}
        }
        st.responses.insert(r.entry_id.clone(), r);
        st.info.answered = st.responses.len();
        if st.info.status == SessionStatus::Open && st.responses.len() == st.queue.len() {
            st.info.status = SessionStatus::Complete;
        }
    }

    pub fn record_response(
        &self,
        session_id: &str,
        entry_id: &str,
        choice: &str,
        latency_ms: Option<u64>,
    ) -> Result<Ack> {
        let sessions = self.sessions.read().unwrap();
        let mut st = sessions
            .get(session_id)
            .ok_or_else(|| Error::UnknownSession(session_id.into()))?
            .lock()
            .unwrap();
        if st.info.status != SessionStatus::Open {
            return Err(Error::SessionClosed(session_id.into()));
        }
        let unknown = || Error::UnknownItem {
            session_id: session_id.into(),
            item_id: entry_id.into(),
        };
        let entry = st.queue.iter().find(|e| e.entry_id == entry_id).ok_or_else(unknown)?.clone();
        if st.responses.contains_key(entry_id) {
            return Err(Error::DuplicateResponse {
                session_id: session_id.into(),
                item_id: entry_id.into(),
            });
        }
        let n_options = match entry.kind {
            EntryKind::Item | EntryKind::Attention => 2,
            EntryKind::Fluency => {
                self.plan
                    .session(&st.info.plan_session_id)
                    .expect("checked")
                    .fluency
                    .options
                    .len()
            }
        };
        let Some(idx) = KEYS[..n_options].iter().position(|k| *k == choice) else {
            return Err(Error::Invalid(format!("choice {choice:?} for {entry_id}")));
        };
        let side = match entry.kind {
            EntryKind::Item => {
                let item = self.plan.item(entry_id).ok_or_else(unknown)?;
                Some(Self::screen_sides(item)[idx].to_string())
            }
            _ => None,
        };
        let r = SurveyResponse {
            session_id: session_id.into(),
            entry_id: entry_id.into(),
            kind: entry.kind,
            choice: choice.into(),
            side,
            latency_ms,
            timestamp: self.clock.now(),
        };
        self.record(&Event::Response(r.clone()))?;
        Self::absorb(&self.plan, &mut st, r);
        Ok(Ack {
            accepted: true,
            status: st.info.status,
            remaining: st.queue.len() - st.responses.len(),
        })
    }

    /// One row per comparison-item response, with the item's provenance and
    /// the session's status.
    pub fn export_rows(&self) -> Vec<ResponseRow> {
        let sessions = self.sessions.read().unwrap();
        let mut rows = Vec::new();
        for s in sessions.values() {
            let st = s.lock().unwrap();
            for e in &st.queue {
                let Some(r) = st.responses.get(&e.entry_id) else { continue };
                let item = if e.kind == EntryKind::Item { self.plan.item(&e.entry_id) } else { None };
                rows.push(ResponseRow {
                    session_id: st.info.session_id.clone(),
                    session_status: st.info.status,
                    language: st.info.language.clone(),
                    country: st.info.country.clone().unwrap_or_default(),
                    story_id: st.info.story_id.clone(),
                    entry_id: e.entry_id.clone(),
                    kind: e.kind,
                    comparison_type: item.map(|i| i.comparison_type),
                    side_a_condition: item.map(|i| i.side_a.condition),
                    side_b_condition: item.map(|i| i.side_b.condition),
                    side_a_moral_id: item.map(|i| i.side_a.moral_id.clone()),
                    side_b_moral_id: item.map(|i| i.side_b.moral_id.clone()),
                    side_a_source: item.map(|i| format!("{}/{}", i.side_a.source_story_id, i.side_a.source_language)),
                    side_b_source: item.map(|i| format!("{}/{}", i.side_b.source_story_id, i.side_b.source_language)),
                    a_first: item.map(|i| i.a_first),
                    choice: r.choice.clone(),
                    side: r.side.clone(),
                    latency_ms: r.latency_ms,
                    timestamp: r.timestamp.clone(),
                });
            }
        }
        rows
    }

    pub fn write_export<W: Write>(&self, w: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        for r in self.export_rows() {
            csv.serialize(r)?;
        }
        csv.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRow {
    pub session_id: String,
    pub session_status: SessionStatus,
    pub language: String,
    pub country: String,
    pub story_id: String,
    pub entry_id: String,
    pub kind: EntryKind,
    pub comparison_type: Option<u8>,
    pub side_a_condition: Option<Condition>,
    pub side_b_condition: Option<Condition>,
    pub side_a_moral_id: Option<String>,
    pub side_b_moral_id: Option<String>,
    pub side_a_source: Option<String>,
    pub side_b_source: Option<String>,
    pub a_first: Option<bool>,
    pub choice: String,
    pub side: Option<String>,
    pub latency_ms: Option<u64>,
    pub timestamp: String,
}

// ---- analysis ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceRow {
    pub label: String,
    pub comparison_types: Vec<u8>,
    /// Condition counted as a win.
    pub preferred: String,
    pub wins: usize,
    pub total: usize,
    pub rate: f64,
    pub ci: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceTable {
    pub per_type: Vec<PreferenceRow>,
    pub aggregates: Vec<PreferenceRow>,
    pub excluded_responses: usize,
}

fn row(label: String, types: Vec<u8>, preferred: String, wins: usize, total: usize) -> PreferenceRow {
    let ci = wilson(wins, total).expect("non-empty");
    PreferenceRow {
        label,
        comparison_types: types,
        preferred,
        wins,
        total,
        rate: wins as f64 / total as f64,
        ci,
    }
}

/// Side-a win rates per comparison type, plus the story, culture and
/// LLM-versus-human aggregates. Rows from excluded sessions are dropped.
pub fn preference_rates(rows: &[ResponseRow]) -> Result<PreferenceTable> {
    let kept: Vec<&ResponseRow> = rows
        .iter()
        .filter(|r| r.kind == EntryKind::Item && r.session_status != SessionStatus::Excluded)
        .collect();
    let excluded_responses = rows
        .iter()
        .filter(|r| r.kind == EntryKind::Item && r.session_status == SessionStatus::Excluded)
        .count();
    let mut counts: BTreeMap<u8, (usize, usize)> = BTreeMap::new();
    for r in &kept {
        let t = r.comparison_type.ok_or_else(|| Error::Invalid(format!("{} has no type", r.entry_id)))?;
        let c = counts.entry(t).or_default();
        c.1 += 1;
        if r.side.as_deref() == Some("a") {
            c.0 += 1;
        }
    }
    let mut per_type = Vec::new();
    for t in COMPARISON_TYPES {
        let &(w, n) = counts.get(&t.id).unwrap_or(&(0, 0));
        if n == 0 {
            return Err(Error::EmptyConditionCell(format!("comparison type {}", t.id)));
        }
        per_type.push(row(
            format!("{} vs {}", t.side_a, t.side_b),
            vec![t.id],
            t.side_a.to_string(),
            w,
            n,
        ));
    }
    // wins for the in-story / in-culture / llm side, whichever position it holds
    let agg = |label: &str, preferred: &str, types: &[(u8, bool)]| {
        let (mut w, mut n) = (0, 0);
        for &(t, a_is_preferred) in types {
            let (tw, tn) = counts[&t];
            n += tn;
            w += if a_is_preferred { tw } else { tn - tw };
        }
        row(label.into(), types.iter().map(|t| t.0).collect(), preferred.into(), w, n)
    };
    let aggregates = vec![
        agg("in-story vs out-story", "in-story", &[(2, true), (6, false)]),
        agg("in-culture vs out-culture", "in-culture", &[(1, true), (5, true)]),
        agg("llm vs human", "llm", &[(7, true), (8, true), (9, true), (10, true)]),
    ];
    Ok(PreferenceTable {
        per_type,
        aggregates,
        excluded_responses,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExclusionReport {
    pub sessions: usize,
    pub excluded: usize,
    pub rate: Option<f64>,
    pub reasons: BTreeMap<String, usize>,
}

pub fn exclusion_report(sessions: &[SessionInfo]) -> ExclusionReport {
    let mut r = ExclusionReport {
        sessions: sessions.len(),
        ..Default::default()
    };
    for s in sessions.iter().filter(|s| s.status == SessionStatus::Excluded) {
        r.excluded += 1;
        for reason in &s.exclusion_reasons {
            *r.reasons.entry(reason.clone()).or_default() += 1;
        }
    }
    if r.sessions > 0 {
        r.rate = Some(r.excluded as f64 / r.sessions as f64);
    }
    r
}
