//! Deterministic offline backends.
//!
//! [`StubChat`] in rules mode recognizes the shipped prompt templates and
//! applies their documented rules mechanically, so cleaning, generation,
//! translation and value annotation can all run without a network.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{ChatProvider, ChatRequest, EmbedderInfo, EmbeddingBackend, MtProvider, ProviderError};
use crate::corpus::reference;
use crate::text;
use crate::values::SchwartzValue;

/// The code in a leading `[xx]` language tag, if any.
pub fn leading_tag(s: &str) -> Option<&str> {
    let rest = s.trim_start().strip_prefix('[')?;
    let end = rest.find(']')?;
    let code = &rest[..end];
    let ok = !code.is_empty()
        && code.len() <= 8
        && code.chars().all(|c| c.is_ascii_alphanumeric() || c == '-');
    ok.then_some(code)
}

/// Removes a leading `[xx] ` language tag.
pub fn strip_tag(s: &str) -> &str {
    let t = s.trim_start();
    match leading_tag(t) {
        Some(code) => t[code.len() + 2..].trim_start(),
        None => t,
    }
}

pub fn tag(text: &str, lang: &str) -> String {
    format!("[{lang}] {}", strip_tag(text))
}

#[derive(Debug, Clone)]
pub enum MtMode {
    /// `"[tgt] text"`, replacing any existing tag.
    Tag,
    Identity,
    /// Every call fails with a retryable transport error.
    Fail,
}

pub struct StubMt {
    id: String,
    mode: MtMode,
    dictionary: HashMap<(String, String, String), String>,
    languages: Option<Vec<String>>,
    calls: AtomicUsize,
}

impl StubMt {
    pub fn new(id: impl Into<String>, mode: MtMode) -> Self {
        StubMt {
            id: id.into(),
            mode,
            dictionary: HashMap::new(),
            languages: None,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn tagging() -> Self {
        Self::new("stub-mt", MtMode::Tag)
    }

    pub fn identity() -> Self {
        Self::new("stub-identity", MtMode::Identity)
    }

    /// Adds a dictionary entry; entries take precedence over the mode.
    pub fn with_entry(mut self, src: &str, tgt: &str, text: &str, out: &str) -> Self {
        self.dictionary
            .insert((src.into(), tgt.into(), text.into()), out.into());
        self
    }

    pub fn with_languages(mut self, languages: &[&str]) -> Self {
        self.languages = Some(languages.iter().map(|s| s.to_string()).collect());
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl MtProvider for StubMt {
    fn id(&self) -> &str {
        &self.id
    }

    fn supports(&self, src: &str, tgt: &str) -> bool {
        match &self.languages {
            None => true,
            Some(l) => l.iter().any(|x| x == src) && l.iter().any(|x| x == tgt),
        }
    }

    fn translate(&self, text: &str, src: &str, tgt: &str) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if let Some(out) = self
            .dictionary
            .get(&(src.to_string(), tgt.to_string(), text.to_string()))
        {
            return Ok(out.clone());
        }
        match self.mode {
            MtMode::Tag => Ok(tag(text, tgt)),
            MtMode::Identity => Ok(text.to_string()),
            MtMode::Fail => Err(ProviderError::Transport("stub failure".into())),
        }
    }
}

#[derive(Debug, Clone)]
pub enum ChatMode {
    /// Applies each recognized template's rules.
    Rules,
    /// Returns the same completion for every prompt.
    Fixed(String),
    /// Returns the responses in order, repeating the last.
    Script(Vec<String>),
}

pub struct StubChat {
    model_id: String,
    mode: ChatMode,
    calls: AtomicUsize,
    /// Prompts received, in order.
    log: Mutex<Vec<String>>,
}

impl StubChat {
    pub fn new(model_id: impl Into<String>, mode: ChatMode) -> Self {
        StubChat {
            model_id: model_id.into(),
            mode,
            calls: AtomicUsize::new(0),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn rules(model_id: impl Into<String>) -> Self {
        Self::new(model_id, ChatMode::Rules)
    }

    pub fn fixed(model_id: impl Into<String>, reply: impl Into<String>) -> Self {
        Self::new(model_id, ChatMode::Fixed(reply.into()))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn prompts(&self) -> Vec<String> {
        self.log.lock().unwrap().clone()
    }
}

impl ChatProvider for StubChat {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        self.log.lock().unwrap().push(request.prompt.clone());
        match &self.mode {
            ChatMode::Fixed(s) => Ok(s.clone()),
            ChatMode::Script(v) => Ok(v
                .get(n)
                .or(v.last())
                .cloned()
                .unwrap_or_default()),
            ChatMode::Rules => rules_reply(&self.model_id, &request.prompt),
        }
    }
}

fn rules_reply(model_id: &str, prompt: &str) -> Result<String, ProviderError> {
    if let Some(i) = prompt.find("Here is the sample: ") {
        return Ok(grammar_rule(&prompt[i + "Here is the sample: ".len()..]));
    }
    if let Some(i) = prompt.find("Return ONLY the rewritten sentence") {
        let rest = &prompt[i..];
        let sample = rest.split_once("\n\n").map(|(_, s)| s).unwrap_or("");
        return Ok(story_reference_rule(sample));
    }
    if prompt.starts_with("Please translate the following text from ") {
        return translate_rule(prompt);
    }
    if prompt.contains("Imagine that you are a native speaker") {
        let passage = prompt.rsplit("\n\n").next().unwrap_or("");
        return Ok(moral_rule(model_id, passage));
    }
    if let Some(i) = prompt.find("Here is the text to evaluate:\n\n") {
        let rest = &prompt[i + "Here is the text to evaluate:\n\n".len()..];
        let body = rest.split("\n\nProvide your response").next().unwrap_or("");
        return Ok(values_rule(model_id, body));
    }
    Err(ProviderError::NoFixture(prompt.chars().take(60).collect()))
}

fn finish_sentence(s: &str) -> String {
    let s = s.trim().trim_matches('"').trim();
    if s.is_empty() {
        return String::new();
    }
    let mut out = text::capitalize_first(s);
    let ends = out
        .chars()
        .last()
        .is_some_and(|c| matches!(c, '.' | '!' | '?' | '。' | '！' | '？' | '؟' | '।'));
    if !ends {
        out.push('.');
    }
    out
}

/// Applies `f` to the text after any language tag and puts the tag back.
fn under_tag(s: &str, f: impl Fn(&str) -> String) -> String {
    match leading_tag(s) {
        Some(code) => tag(&f(strip_tag(s)), code),
        None => f(s),
    }
}

/// First sentence, capitalized and terminated.
pub fn grammar_rule(sample: &str) -> String {
    under_tag(sample, grammar_body)
}

fn grammar_body(sample: &str) -> String {
    let first = text::split_sentences(sample)
        .into_iter()
        .next()
        .unwrap_or_default();
    finish_sentence(&first)
}

const FRAMINGS: [&str; 12] = [
    "the moral of the story is that ",
    "the moral of the story is ",
    "the moral of this story is that ",
    "the moral is that ",
    "the moral is ",
    "the story shows that ",
    "the story teaches us that ",
    "the story teaches that ",
    "this story shows that ",
    "this story teaches us that ",
    "the lesson is that ",
    "the story suggests that ",
];

const META: [&str; 6] = [
    "let me know",
    "i hope",
    "feel free",
    "would you like",
    "as an ai",
    "here is",
];

fn is_emoji(c: char) -> bool {
    matches!(c as u32, 0x1F000..=0x1FAFF | 0x2600..=0x27BF | 0xFE0F)
}

/// Drops framing phrases, meta-commentary sentences and emoji; otherwise
/// returns the sentence unchanged.
pub fn story_reference_rule(sample: &str) -> String {
    under_tag(sample.trim().trim_matches('"'), story_reference_body)
}

fn story_reference_body(sample: &str) -> String {
    let cleaned: String = sample.chars().filter(|c| !is_emoji(*c)).collect();
    let sentences: Vec<String> = text::split_sentences(&cleaned)
        .into_iter()
        .filter(|s| {
            let l = s.to_lowercase();
            !META.iter().any(|m| l.starts_with(m))
        })
        .collect();
    let Some(first) = sentences.into_iter().next() else {
        return String::new();
    };
    let first = first.trim().trim_matches('"').trim().to_string();
    let lower = first.to_lowercase();
    let body = FRAMINGS
        .iter()
        .find(|f| lower.starts_with(*f))
        .map(|f| first[f.len()..].to_string())
        .unwrap_or(first);
    finish_sentence(&body)
}

fn code_for_name(name: &str) -> String {
    reference::languages()
        .into_iter()
        .find(|l| l.display_name == name)
        .map(|l| l.language_code)
        .unwrap_or_else(|| name.to_lowercase())
}

fn translate_rule(prompt: &str) -> Result<String, ProviderError> {
    let head = &prompt["Please translate the following text from ".len()..];
    let bad = || ProviderError::BadResponse("unrecognized translation prompt".into());
    let (_, rest) = head.split_once(" to ").ok_or_else(bad)?;
    let (target, _) = rest.split_once(" (").ok_or_else(bad)?;
    let (_, body) = prompt.split_once("\n\n").ok_or_else(bad)?;
    Ok(tag(body, &code_for_name(target)))
}

const STOP: [&str; 16] = [
    "that", "this", "with", "from", "through", "their", "they", "have", "were", "been", "summary",
    "plot", "narrative", "follows", "characters", "story",
];

fn content_words(s: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for w in strip_tag(s).split(|c: char| !c.is_alphanumeric()) {
        let w = w.to_lowercase();
        if w.chars().count() >= 4 && !STOP.contains(&w.as_str()) && !out.contains(&w) {
            out.push(w);
        }
    }
    out
}

fn seed_of(parts: &[&str]) -> u64 {
    let h = text::key_hash(parts);
    u64::from_str_radix(&h[..16], 16).unwrap_or(0)
}

/// A short moral built from the passage's content words, varied by model.
pub fn moral_rule(model_id: &str, passage: &str) -> String {
    let words = content_words(passage);
    if words.is_empty() {
        return "Every story carries a lesson.".into();
    }
    let s = seed_of(&[model_id]) as usize;
    let a = &words[s % words.len()];
    let b = &words[(s / 7 + 1) % words.len()];
    let templates = [
        "True {a} requires {b}.",
        "{a} and {b} shape who we become.",
        "Without {b} there is no lasting {a}.",
    ];
    let t = templates[(s / 31) % templates.len()];
    let moral = text::capitalize_first(&t.replace("{a}", a).replace("{b}", b));
    match leading_tag(passage) {
        Some(code) => tag(&moral, code),
        None => moral,
    }
}

const VALUE_KEYWORDS: [(SchwartzValue, &[&str]); 10] = [
    (SchwartzValue::Power, &["power", "control", "authority", "wealth", "dominance", "rule"]),
    (SchwartzValue::Achievement, &["success", "ambition", "achieve", "capable", "competence", "progress"]),
    (SchwartzValue::Hedonism, &["pleasure", "enjoy", "joy", "delight"]),
    (SchwartzValue::Stimulation, &["adventure", "excitement", "novelty", "challenge", "daring", "change"]),
    (SchwartzValue::SelfDirection, &["freedom", "independence", "curiosity", "choice", "identity", "rebellion"]),
    (SchwartzValue::Universalism, &["justice", "equality", "peace", "nature", "humanity", "tolerance", "truth"]),
    (SchwartzValue::Benevolence, &["kindness", "love", "friendship", "family", "loyalty", "help", "care", "forgiveness"]),
    (SchwartzValue::Tradition, &["tradition", "faith", "custom", "religion", "heritage", "legacy"]),
    (SchwartzValue::Conformity, &["obedience", "politeness", "rules", "restraint", "respect", "patience"]),
    (SchwartzValue::Security, &["safety", "security", "stability", "order", "belonging", "protection", "trust"]),
];

/// Keyword presence per value, with a small annotator-specific disagreement
/// rate so that two stub annotators do not agree perfectly.
pub fn values_rule(model_id: &str, body: &str) -> String {
    let lower = strip_tag(body).to_lowercase();
    let words: Vec<&str> = lower.split(|c: char| !c.is_alphanumeric()).collect();
    let mut fields = Vec::new();
    for (value, keys) in VALUE_KEYWORDS {
        let hit = words
            .iter()
            .any(|w| keys.iter().any(|k| w.starts_with(k)));
        let flip = seed_of(&[model_id, body, value.as_str()]) % 12 == 0;
        fields.push(format!("  \"{}\": {}", value.as_str(), u8::from(hit ^ flip)));
    }
    format!("{{\n{}\n}}", fields.join(",\n"))
}

pub struct StubEmbedder {
    info: EmbedderInfo,
    fixtures: HashMap<String, Vec<f32>>,
    calls: AtomicUsize,
}

impl StubEmbedder {
    pub fn new(embedder_id: impl Into<String>, dimensionality: usize, multilingual: bool) -> Self {
        StubEmbedder {
            info: EmbedderInfo {
                embedder_id: embedder_id.into(),
                dimensionality,
                multilingual,
            },
            fixtures: HashMap::new(),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn with_fixture(mut self, text: &str, vector: Vec<f32>) -> Self {
        assert_eq!(vector.len(), self.info.dimensionality);
        self.fixtures.insert(text.to_string(), vector);
        self
    }

    /// Number of texts embedded so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn hashed(&self, s: &str) -> Vec<f32> {
        let d = self.info.dimensionality;
        let mut v = vec![0f32; d];
        v[0] = 0.25;
        for w in strip_tag(s).split(|c: char| !c.is_alphanumeric()) {
            if w.is_empty() {
                continue;
            }
            let w = w.to_lowercase();
            let w = w.strip_suffix('s').filter(|r| r.len() > 2).unwrap_or(&w);
            let h = seed_of(&[&self.info.embedder_id, w]);
            let idx = 1 + (h as usize) % (d - 1).max(1);
            let sign = if (h >> 40) & 1 == 0 { 1.0 } else { -1.0 };
            v[idx.min(d - 1)] += sign;
        }
        v
    }
}

impl EmbeddingBackend for StubEmbedder {
    fn info(&self) -> &EmbedderInfo {
        &self.info
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        self.calls.fetch_add(texts.len(), Ordering::SeqCst);
        Ok(texts
            .iter()
            .map(|t| self.fixtures.get(t).cloned().unwrap_or_else(|| self.hashed(t)))
            .collect())
    }
}
