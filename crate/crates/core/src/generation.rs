//! Moral elicitation from chat models and the two cleaning passes.
//!
//! Every completion goes through [`CachedChat`], which archives the prompt
//! hash, parameters and raw text so that any run replays offline.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::corpus::{Corpus, LanguageCulturePair, Moral, MoralSource, Passage, PromptVariant};
use crate::error::{Error, Result};
use crate::jsonl::KeyedStore;
use crate::prompts::{self, Template};
use crate::providers::{ChatProvider, ChatRequest, DecodingParams, RetryPolicy};
use crate::text;
use crate::translation::Translator;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub prompt_hash: String,
    pub template_id: String,
    pub model_id: String,
    pub params: DecodingParams,
    #[serde(default)]
    pub attempt: u32,
    pub prompt: String,
    pub raw_text: String,
    pub timestamp: String,
}

impl CompletionRecord {
    pub fn key(&self) -> String {
        completion_key(&self.model_id, &self.prompt, &self.params, self.attempt)
    }
}

fn completion_key(model_id: &str, prompt: &str, params: &DecodingParams, attempt: u32) -> String {
    let params = serde_json::to_string(params).expect("params serialize");
    text::key_hash(&[model_id, prompt, &params, &attempt.to_string()])
}

pub type CompletionArchive = KeyedStore<CompletionRecord>;

pub fn open_archive(path: impl Into<PathBuf>) -> Result<Arc<CompletionArchive>> {
    Ok(Arc::new(KeyedStore::open(path, CompletionRecord::key)?))
}

/// A chat provider behind the completion archive.
#[derive(Clone)]
pub struct CachedChat {
    provider: Arc<dyn ChatProvider>,
    archive: Arc<CompletionArchive>,
    params: DecodingParams,
    retry: RetryPolicy,
    clock: Clock,
    calls: Arc<AtomicUsize>,
}

impl CachedChat {
    pub fn new(provider: Arc<dyn ChatProvider>, archive: Arc<CompletionArchive>) -> Self {
        CachedChat {
            provider,
            archive,
            params: DecodingParams::default(),
            retry: RetryPolicy::default(),
            clock: Clock::System,
            calls: Arc::new(AtomicUsize::new(0)),
        }
    }

    pub fn uncached(provider: Arc<dyn ChatProvider>) -> Self {
        Self::new(provider, Arc::new(CompletionArchive::in_memory()))
    }

    pub fn with_params(mut self, params: DecodingParams) -> Self {
        self.params = params;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn model_id(&self) -> &str {
        self.provider.model_id()
    }

    pub fn archive(&self) -> &Arc<CompletionArchive> {
        &self.archive
    }

    pub fn provider_calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn is_cached(&self, prompt: &str, attempt: u32) -> bool {
        self.archive
            .contains(&completion_key(self.model_id(), prompt, &self.params, attempt))
    }

    pub fn complete(&self, template: &Template, prompt: &str, attempt: u32) -> Result<CompletionRecord> {
        let key = completion_key(self.model_id(), prompt, &self.params, attempt);
        if let Some(r) = self.archive.get(&key) {
            return Ok(r);
        }
        let request = ChatRequest {
            prompt: prompt.to_string(),
            params: self.params.clone(),
            attempt,
        };
        let raw = self
            .retry
            .run(|| {
                self.calls.fetch_add(1, Ordering::SeqCst);
                self.provider.complete(&request)
            })
            .map_err(|source| Error::Provider {
                provider: self.model_id().into(),
                source,
            })?;
        let rec = CompletionRecord {
            prompt_hash: text::sha256_hex(prompt),
            template_id: template.id(),
            model_id: self.model_id().into(),
            params: self.params.clone(),
            attempt,
            prompt: prompt.into(),
            raw_text: raw,
            timestamp: self.clock.now(),
        };
        Ok(self.archive.insert(key, rec))
    }
}

/// Fills the generation template. The in-language variant translates the
/// filled instruction text (everything before the passage) from English and
/// then appends the passage unchanged.
pub fn render_moral_prompt(
    passage: &Passage,
    pair: &LanguageCulturePair,
    variant: PromptVariant,
    translator: Option<&Translator>,
) -> Result<String> {
    if passage.text.trim().is_empty() {
        return Err(Error::EmptyPassage);
    }
    if passage.language_code != pair.language_code {
        return Err(Error::Invalid(format!(
            "passage language {} does not match {}",
            passage.language_code, pair.language_code
        )));
    }
    let t = prompts::MORAL_GENERATION;
    let fill = |s: &str| {
        s.replace("{LANGUAGE}", &pair.display_name)
            .replace("{COUNTRY}", &pair.country_name)
    };
    match variant {
        PromptVariant::SocioDemographicEnglish => t.render(&[
            ("LANGUAGE", &pair.display_name),
            ("COUNTRY", &pair.country_name),
            ("PASSAGE", &passage.text),
        ]),
        PromptVariant::InLanguage => {
            let prefix = t
                .prefix_before("PASSAGE")
                .ok_or_else(|| Error::Template("generation template lacks {PASSAGE}".into()))?;
            let instruction = fill(prefix.trim_end());
            let translated = match translator {
                Some(tr) => tr.translate(&instruction, "en", &pair.language_code)?,
                None if pair.language_code == "en" => instruction,
                None => {
                    return Err(Error::Invalid(
                        "in-language prompting needs a translator".into(),
                    ))
                }
            };
            Ok(format!("{translated}\n\n{}", passage.text))
        }
    }
}

pub fn model_moral_id(model_id: &str, variant: PromptVariant, story_id: &str, lang: &str) -> String {
    format!("m:{model_id}:{variant}:{story_id}:{lang}")
}

/// One raw (uncleaned) model moral for `passage`.
pub fn generate_moral(
    passage: &Passage,
    pair: &LanguageCulturePair,
    chat: &CachedChat,
    variant: PromptVariant,
    translator: Option<&Translator>,
) -> Result<Moral> {
    let prompt = render_moral_prompt(passage, pair, variant, translator)?;
    let rec = chat.complete(&prompts::MORAL_GENERATION, &prompt, 0)?;
    let body = text::nfc(rec.raw_text.trim());
    if body.is_empty() {
        return Err(Error::EmptyCompletion(chat.model_id().into()));
    }
    Ok(Moral {
        moral_id: model_moral_id(chat.model_id(), variant, &passage.story_id, &passage.language_code),
        story_id: passage.story_id.clone(),
        passage_language: passage.language_code.clone(),
        text: body,
        source: MoralSource::Model {
            model_id: chat.model_id().into(),
            prompt_variant: variant,
        },
        cleaned: false,
        discarded: false,
        discard_reason: None,
        prompt_hash: Some(rec.prompt_hash),
    })
}

/// Generates one moral per passage for every model, in corpus order.
pub fn generate_all(
    corpus: &Corpus,
    chats: &[CachedChat],
    variant: PromptVariant,
    translator: Option<&Translator>,
) -> Result<Vec<Moral>> {
    let mut jobs = Vec::new();
    for chat in chats {
        for p in &corpus.passages {
            jobs.push((chat, p));
        }
    }
    jobs.par_iter()
        .map(|(chat, p)| {
            let pair = corpus
                .language(&p.language_code)
                .ok_or_else(|| Error::Dangling(p.language_code.clone()))?;
            generate_moral(p, pair, chat, variant, translator)
        })
        .collect()
}

fn single_line(raw: &str) -> String {
    let t = raw.trim().trim_matches('"').trim();
    text::nfc(t)
}

/// Grammar pass: a single complete sentence in the same language.
pub fn clean_grammar(moral: &Moral, language_name: &str, cleaner: &CachedChat) -> Result<Moral> {
    if moral.cleaned {
        return Err(Error::Invalid(format!("moral {} is already cleaned", moral.moral_id)));
    }
    let prompt = prompts::GRAMMAR_CLEAN.render(&[("LANGUAGE", language_name), ("SAMPLE", &moral.text)])?;
    let rec = cleaner.complete(&prompts::GRAMMAR_CLEAN, &prompt, 0)?;
    let out = single_line(&rec.raw_text);
    if out.is_empty() {
        return Err(Error::EmptyCompletion(cleaner.model_id().into()));
    }
    Ok(Moral {
        text: out,
        ..moral.clone()
    })
}

/// Story-reference pass: drops framing phrases and meta-commentary and marks
/// the moral cleaned.
pub fn strip_story_reference(moral: &Moral, language_name: &str, cleaner: &CachedChat) -> Result<Moral> {
    let prompt = prompts::STORY_REFERENCE_CLEAN
        .render(&[("LANGUAGE", language_name), ("SAMPLE", &moral.text)])?;
    let rec = cleaner.complete(&prompts::STORY_REFERENCE_CLEAN, &prompt, 0)?;
    let out = single_line(&rec.raw_text);
    if out.is_empty() {
        return Err(Error::EmptyCompletion(cleaner.model_id().into()));
    }
    Ok(Moral {
        text: out,
        cleaned: true,
        ..moral.clone()
    })
}

pub fn clean_moral(moral: &Moral, language_name: &str, cleaner: &CachedChat) -> Result<Moral> {
    let m = clean_grammar(moral, language_name, cleaner)?;
    strip_story_reference(&m, language_name, cleaner)
}

/// Cleans every uncleaned moral (human and model alike); cleaned morals pass
/// through.
pub fn clean_all(corpus: &Corpus, cleaner: &CachedChat) -> Result<Vec<Moral>> {
    corpus
        .morals
        .par_iter()
        .map(|m| {
            if m.cleaned {
                return Ok(m.clone());
            }
            let name = corpus
                .language(&m.passage_language)
                .map(|l| l.display_name.clone())
                .unwrap_or_else(|| m.passage_language.clone());
            clean_moral(m, &name, cleaner)
        })
        .collect()
}
