//! Machine translation with per-pair routing, a content-addressed JSONL
//! cache, retries, relay translation and the passage-grid builder.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::corpus::{LanguageCulturePair, Passage, Provenance, Story};
use crate::error::{Error, Result};
use crate::jsonl::KeyedStore;
use crate::providers::config::RouteSpec;
use crate::providers::{MtProvider, RetryPolicy};
use crate::text;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslationRecord {
    pub src_lang: String,
    pub tgt_lang: String,
    pub src_text: String,
    pub tgt_text: String,
    pub provider_id: String,
    pub timestamp: String,
}

impl TranslationRecord {
    pub fn key(&self) -> String {
        cache_key(&self.src_lang, &self.tgt_lang, &self.src_text, &self.provider_id)
    }
}

pub fn cache_key(src: &str, tgt: &str, text: &str, provider_id: &str) -> String {
    text::key_hash(&[src, tgt, text, provider_id])
}

/// One hop of a relay translation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hop {
    pub src_lang: String,
    pub tgt_lang: String,
    pub provider_id: String,
    pub input: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relayed {
    pub text: String,
    pub hops: Vec<Hop>,
}

pub struct Translator {
    routes: Vec<(RouteSpec, Arc<dyn MtProvider>)>,
    cache: KeyedStore<TranslationRecord>,
    retry: RetryPolicy,
    clock: Clock,
    calls: AtomicUsize,
}

impl Translator {
    /// A translator with one provider for every pair and an in-memory cache.
    pub fn single(provider: Arc<dyn MtProvider>) -> Self {
        Self::routed(vec![(
            RouteSpec {
                src: None,
                tgt: None,
                provider: provider.id().to_string(),
            },
            provider,
        )])
    }

    pub fn routed(routes: Vec<(RouteSpec, Arc<dyn MtProvider>)>) -> Self {
        Translator {
            routes,
            cache: KeyedStore::in_memory(),
            retry: RetryPolicy::default(),
            clock: Clock::System,
            calls: AtomicUsize::new(0),
        }
    }

    /// Backs the cache with a JSONL file; call [`Translator::persist`] to write it.
    pub fn with_cache_file(mut self, path: impl Into<PathBuf>) -> Result<Self> {
        self.cache = KeyedStore::open(path, TranslationRecord::key)?;
        Ok(self)
    }

    pub fn persist(&self) -> Result<()> {
        self.cache.persist()
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn cache_path(&self) -> Option<&Path> {
        self.cache.path()
    }

    /// Provider calls issued by this translator, including failed attempts.
    pub fn provider_calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn cached_records(&self) -> usize {
        self.cache.len()
    }

    /// The provider a pair routes to.
    pub fn route(&self, src: &str, tgt: &str) -> Result<&Arc<dyn MtProvider>> {
        self.routes
            .iter()
            .find(|(r, p)| {
                r.src.as_deref().is_none_or(|s| s == src)
                    && r.tgt.as_deref().is_none_or(|t| t == tgt)
                    && p.supports(src, tgt)
            })
            .map(|(_, p)| p)
            .ok_or_else(|| Error::UnsupportedPair {
                src: src.into(),
                tgt: tgt.into(),
                provider: self
                    .routes
                    .iter()
                    .map(|(r, _)| r.provider.as_str())
                    .collect::<Vec<_>>()
                    .join(","),
            })
    }

    /// True when the call would be served from cache (or needs no call).
    pub fn is_cached(&self, text: &str, src: &str, tgt: &str) -> bool {
        if src == tgt {
            return true;
        }
        match self.route(src, tgt) {
            Ok(p) => self.cache.contains(&cache_key(src, tgt, text, p.id())),
            Err(_) => false,
        }
    }

    /// Translates `text`; same-language requests return the input unchanged.
    pub fn translate(&self, text: &str, src: &str, tgt: &str) -> Result<String> {
        Ok(self.translate_record(text, src, tgt)?.tgt_text)
    }

    pub fn translate_record(&self, text: &str, src: &str, tgt: &str) -> Result<TranslationRecord> {
        if text.trim().is_empty() {
            return Err(Error::Invalid("cannot translate empty text".into()));
        }
        if src == tgt {
            return Ok(TranslationRecord {
                src_lang: src.into(),
                tgt_lang: tgt.into(),
                src_text: text.into(),
                tgt_text: text.into(),
                provider_id: "identity".into(),
                timestamp: self.clock.now(),
            });
        }
        let provider = self.route(src, tgt)?;
        let key = cache_key(src, tgt, text, provider.id());
        if let Some(r) = self.cache.get(&key) {
            return Ok(r);
        }
        let out = self
            .retry
            .run(|| {
                self.calls.fetch_add(1, Ordering::SeqCst);
                provider.translate(text, src, tgt)
            })
            .map_err(|source| Error::Provider {
                provider: provider.id().into(),
                source,
            })?;
        let out = text::nfc(out.trim());
        if out.is_empty() {
            return Err(Error::EmptyCompletion(provider.id().into()));
        }
        let rec = TranslationRecord {
            src_lang: src.into(),
            tgt_lang: tgt.into(),
            src_text: text.into(),
            tgt_text: out,
            provider_id: provider.id().into(),
            timestamp: self.clock.now(),
        };
        Ok(self.cache.insert(key, rec))
    }

    /// `src → pivot → tgt`, recording both hops.
    pub fn relay(&self, text: &str, src: &str, pivot: &str, tgt: &str) -> Result<Relayed> {
        if pivot == src || pivot == tgt {
            return Err(Error::PivotMustDiffer(pivot.into()));
        }
        let first = self.translate_record(text, src, pivot)?;
        let second = self.translate_record(&first.tgt_text, pivot, tgt)?;
        let hop = |r: TranslationRecord| Hop {
            src_lang: r.src_lang,
            tgt_lang: r.tgt_lang,
            provider_id: r.provider_id,
            input: r.src_text,
            output: r.tgt_text,
        };
        Ok(Relayed {
            text: second.tgt_text.clone(),
            hops: vec![hop(first), hop(second)],
        })
    }

    /// `lang → pivot → lang`.
    pub fn round_trip(&self, text: &str, lang: &str, pivot: &str) -> Result<Relayed> {
        self.relay(text, lang, pivot, lang)
    }
}

/// English, unless English is one of the endpoints; then French; then German.
pub fn default_pivot(src: &str, tgt: &str) -> &'static str {
    ["en", "fr", "de"]
        .into_iter()
        .find(|p| *p != src && *p != tgt)
        .expect("three candidates cover two endpoints")
}

/// Fills every (story, language) cell. Originals are passed through; every
/// other cell is a translation of the story's original passage.
pub fn build_passage_grid(
    stories: &[Story],
    languages: &[LanguageCulturePair],
    originals: &[Passage],
    translator: &Translator,
    parallelism: usize,
) -> Result<Vec<Passage>> {
    let mut jobs = Vec::new();
    for s in stories {
        let origin = &s.origin.language_code;
        let original = originals
            .iter()
            .find(|p| p.story_id == s.story_id && &p.language_code == origin)
            .ok_or_else(|| {
                Error::Invalid(format!("story {} has no original passage in {origin}", s.story_id))
            })?;
        for l in languages {
            jobs.push((original, l.language_code.as_str()));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Invalid(e.to_string()))?;
    pool.install(|| {
        jobs.par_iter()
            .map(|(orig, tgt)| {
                if orig.language_code == *tgt {
                    let mut p = (*orig).clone();
                    p.is_original = true;
                    p.provenance = Provenance::Original;
                    p.mt_provider = None;
                    return Ok(p);
                }
                let rec = translator
                    .translate_record(&orig.text, &orig.language_code, tgt)
                    .map_err(|e| Error::GridCell {
                        story_id: orig.story_id.clone(),
                        language: tgt.to_string(),
                        source: Box::new(e),
                    })?;
                Ok(Passage {
                    story_id: orig.story_id.clone(),
                    language_code: tgt.to_string(),
                    text: rec.tgt_text,
                    is_original: false,
                    provenance: Provenance::MachineTranslated,
                    mt_provider: Some(rec.provider_id),
                })
            })
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::stub::{MtMode, StubMt};

    #[test]
    fn pivots() {
        assert_eq!(default_pivot("fr", "de"), "en");
        assert_eq!(default_pivot("en", "de"), "fr");
        assert_eq!(default_pivot("en", "fr"), "de");
        assert_eq!(default_pivot("fr", "en"), "de");
    }

    #[test]
    fn identity_pair_short_circuits() {
        let mt = Arc::new(StubMt::tagging());
        let t = Translator::single(mt.clone());
        assert_eq!(t.translate("Bonjour", "fr", "fr").unwrap(), "Bonjour");
        assert_eq!(mt.calls(), 0);
    }

    #[test]
    fn failing_provider_retries_then_errors() {
        let mt = Arc::new(StubMt::new("down", MtMode::Fail));
        let t = Translator::single(mt.clone()).with_retry(RetryPolicy::immediate(3));
        assert!(matches!(t.translate("x", "en", "fr"), Err(Error::Provider { .. })));
        assert_eq!(mt.calls(), 3);
    }

    #[test]
    fn unsupported_pair() {
        let mt = Arc::new(StubMt::tagging().with_languages(&["en", "fr"]));
        let t = Translator::single(mt);
        assert!(matches!(t.translate("x", "en", "ko"), Err(Error::UnsupportedPair { .. })));
    }

    #[test]
    fn routing_prefers_first_match() {
        let he = Arc::new(StubMt::new("he-vendor", MtMode::Tag));
        let rest = Arc::new(StubMt::new("main", MtMode::Identity));
        let t = Translator::routed(vec![
            (
                RouteSpec {
                    src: None,
                    tgt: Some("he".into()),
                    provider: "he-vendor".into(),
                },
                he.clone(),
            ),
            (
                RouteSpec {
                    src: None,
                    tgt: None,
                    provider: "main".into(),
                },
                rest,
            ),
        ]);
        assert_eq!(t.translate("x", "en", "he").unwrap(), "[he] x");
        assert_eq!(t.translate("x", "en", "fr").unwrap(), "x");
        assert_eq!(he.calls(), 1);
    }
}
