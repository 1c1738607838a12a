//! Stories, passages and morals with their provenance.
//!
//! A corpus lives on disk as four files: `manifest.json` plus one JSON record
//! per line in `stories.jsonl`, `passages.jsonl` and `morals.jsonl`. A loaded
//! [`Corpus`] is immutable; changes produce a new corpus that is written as a
//! new version (see [`store`]).

pub mod reference;
pub mod store;
pub mod synthetic;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text;

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const STORIES_FILE: &str = "stories.jsonl";
pub const PASSAGES_FILE: &str = "passages.jsonl";
pub const MORALS_FILE: &str = "morals.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LanguageCulturePair {
    /// ISO-639-1 code.
    pub language_code: String,
    /// ISO-3166 alpha-2 code.
    pub country_code: String,
    /// Language name as used in prompts, e.g. "Portuguese".
    pub display_name: String,
    /// Country name as used in prompts, e.g. "Brazil".
    pub country_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub languages: Vec<LanguageCulturePair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Story {
    pub story_id: String,
    pub origin: LanguageCulturePair,
    pub title: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Original,
    MachineTranslated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Passage {
    pub story_id: String,
    pub language_code: String,
    pub text: String,
    pub is_original: bool,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mt_provider: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptVariant {
    SocioDemographicEnglish,
    InLanguage,
}

impl PromptVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptVariant::SocioDemographicEnglish => "socio_demographic_english",
            PromptVariant::InLanguage => "in_language",
        }
    }
}

impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PromptVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "socio_demographic_english" | "english" => Ok(PromptVariant::SocioDemographicEnglish),
            "in_language" | "in-language" => Ok(PromptVariant::InLanguage),
            other => Err(Error::Invalid(format!("unknown prompt variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MoralSource {
    Human {
        annotator_id: String,
    },
    Model {
        model_id: String,
        prompt_variant: PromptVariant,
    },
}

impl MoralSource {
    pub fn is_human(&self) -> bool {
        matches!(self, MoralSource::Human { .. })
    }

    pub fn model_id(&self) -> Option<&str> {
        match self {
            MoralSource::Model { model_id, .. } => Some(model_id),
            MoralSource::Human { .. } => None,
        }
    }

    /// "human" or the model id.
    pub fn label(&self) -> &str {
        match self {
            MoralSource::Human { .. } => "human",
            MoralSource::Model { model_id, .. } => model_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moral {
    pub moral_id: String,
    pub story_id: String,
    pub passage_language: String,
    pub text: String,
    pub source: MoralSource,
    pub cleaned: bool,
    pub discarded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discard_reason: Option<String>,
    /// Hash of the prompt that produced a model moral; links to the completion archive.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_hash: Option<String>,
}

impl Moral {
    pub fn is_active(&self) -> bool {
        !self.discarded
    }
}

/// An in-memory corpus with resolved cross references.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub manifest: Manifest,
    pub stories: Vec<Story>,
    pub passages: Vec<Passage>,
    pub morals: Vec<Moral>,
    story_index: HashMap<String, usize>,
    passage_index: HashMap<(String, String), usize>,
    moral_index: HashMap<String, usize>,
}

impl Corpus {
    /// Builds a corpus, resolving every cross reference.
    pub fn from_parts(
        manifest: Manifest,
        stories: Vec<Story>,
        passages: Vec<Passage>,
        morals: Vec<Moral>,
    ) -> Result<Self> {
        if stories.is_empty() {
            return Err(Error::NoStories);
        }
        let mut langs = std::collections::HashSet::new();
        for l in &manifest.languages {
            if !langs.insert(l.language_code.as_str()) {
                return Err(Error::Invalid(format!(
                    "language code {} listed twice in manifest",
                    l.language_code
                )));
            }
        }
        let mut story_index = HashMap::new();
        for (i, s) in stories.iter().enumerate() {
            if story_index.insert(s.story_id.clone(), i).is_some() {
                return Err(Error::Invalid(format!("duplicate story id {}", s.story_id)));
            }
        }
        let mut passage_index = HashMap::new();
        for (i, p) in passages.iter().enumerate() {
            if !story_index.contains_key(&p.story_id) {
                return Err(Error::Dangling(format!(
                    "passage references unknown story {}",
                    p.story_id
                )));
            }
            let key = (p.story_id.clone(), p.language_code.clone());
            if passage_index.insert(key, i).is_some() {
                return Err(Error::DuplicatePassage {
                    story_id: p.story_id.clone(),
                    language: p.language_code.clone(),
                });
            }
        }
        let mut moral_index = HashMap::new();
        for (i, m) in morals.iter().enumerate() {
            if !story_index.contains_key(&m.story_id) {
                return Err(Error::Dangling(format!(
                    "moral {} references unknown story {}",
                    m.moral_id, m.story_id
                )));
            }
            if moral_index.insert(m.moral_id.clone(), i).is_some() {
                return Err(Error::Invalid(format!("duplicate moral id {}", m.moral_id)));
            }
        }
        Ok(Corpus {
            manifest,
            stories,
            passages,
            morals,
            story_index,
            passage_index,
            moral_index,
        })
    }

    pub fn into_parts(self) -> (Manifest, Vec<Story>, Vec<Passage>, Vec<Moral>) {
        (self.manifest, self.stories, self.passages, self.morals)
    }

    pub fn languages(&self) -> &[LanguageCulturePair] {
        &self.manifest.languages
    }

    pub fn language_codes(&self) -> Vec<String> {
        self.manifest
            .languages
            .iter()
            .map(|l| l.language_code.clone())
            .collect()
    }

    pub fn language(&self, code: &str) -> Option<&LanguageCulturePair> {
        self.manifest.languages.iter().find(|l| l.language_code == code)
    }

    pub fn story(&self, story_id: &str) -> Option<&Story> {
        self.story_index.get(story_id).map(|&i| &self.stories[i])
    }

    pub fn passage(&self, story_id: &str, language: &str) -> Option<&Passage> {
        self.passage_index
            .get(&(story_id.to_string(), language.to_string()))
            .map(|&i| &self.passages[i])
    }

    pub fn moral(&self, moral_id: &str) -> Option<&Moral> {
        self.moral_index.get(moral_id).map(|&i| &self.morals[i])
    }

    pub fn morals_in_cell<'a>(
        &'a self,
        story_id: &'a str,
        language: &'a str,
    ) -> impl Iterator<Item = &'a Moral> + 'a {
        self.morals
            .iter()
            .filter(move |m| m.story_id == story_id && m.passage_language == language)
    }

    pub fn human_morals(&self) -> impl Iterator<Item = &Moral> {
        self.morals.iter().filter(|m| m.source.is_human())
    }

    /// Distinct model ids present, in first-seen order.
    pub fn model_ids(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for m in &self.morals {
            if let Some(id) = m.source.model_id() {
                if !out.iter().any(|o| o == id) {
                    out.push(id.to_string());
                }
            }
        }
        out
    }

    /// Returns a corpus with the given morals appended.
    pub fn with_added_morals(&self, extra: Vec<Moral>) -> Result<Corpus> {
        let mut morals = self.morals.clone();
        morals.extend(extra);
        Corpus::from_parts(
            self.manifest.clone(),
            self.stories.clone(),
            self.passages.clone(),
            morals,
        )
    }

    /// Returns a corpus with the moral list replaced.
    pub fn with_morals(&self, morals: Vec<Moral>) -> Result<Corpus> {
        Corpus::from_parts(
            self.manifest.clone(),
            self.stories.clone(),
            self.passages.clone(),
            morals,
        )
    }

    pub fn with_passages(&self, passages: Vec<Passage>) -> Result<Corpus> {
        Corpus::from_parts(
            self.manifest.clone(),
            self.stories.clone(),
            passages,
            self.morals.clone(),
        )
    }

    /// Serialized file contents in the on-disk format, in a fixed order.
    pub fn to_files(&self) -> Result<Vec<(&'static str, Vec<u8>)>> {
        let mut manifest = serde_json::to_vec_pretty(&self.manifest)?;
        manifest.push(b'\n');
        Ok(vec![
            (MANIFEST_FILE, manifest),
            (STORIES_FILE, jsonl(&self.stories)?),
            (PASSAGES_FILE, jsonl(&self.passages)?),
            (MORALS_FILE, jsonl(&self.morals)?),
        ])
    }

    /// Content hash over the serialized corpus; identifies a corpus version.
    pub fn content_hash(&self) -> Result<String> {
        let mut parts = Vec::new();
        for (name, bytes) in self.to_files()? {
            parts.push(name.to_string());
            parts.push(text::sha256_hex(&bytes));
        }
        let refs: Vec<&str> = parts.iter().map(String::as_str).collect();
        Ok(text::key_hash(&refs))
    }
}

fn jsonl<T: Serialize>(items: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for it in items {
        serde_json::to_writer(&mut out, it)?;
        out.push(b'\n');
    }
    Ok(out)
}

pub(crate) fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|source| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Loads a corpus from a directory in the documented layout.
pub fn load_corpus(root: &Path) -> Result<Corpus> {
    let stories_path = root.join(STORIES_FILE);
    if !stories_path.exists() {
        return Err(Error::NoStories);
    }
    let mut stories: Vec<Story> = read_jsonl(&stories_path)?;
    if stories.is_empty() {
        return Err(Error::NoStories);
    }
    let manifest_path = root.join(MANIFEST_FILE);
    if !manifest_path.exists() {
        return Err(Error::MissingFile(manifest_path));
    }
    let raw = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut manifest: Manifest = serde_json::from_str(&raw).map_err(|source| Error::Parse {
        path: manifest_path.clone(),
        line: 1,
        source,
    })?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(Error::Invalid(format!(
            "unsupported corpus schema version {}",
            manifest.schema_version
        )));
    }
    for name in [PASSAGES_FILE, MORALS_FILE] {
        if !root.join(name).exists() {
            return Err(Error::MissingFile(root.join(name)));
        }
    }
    let mut passages: Vec<Passage> = read_jsonl(&root.join(PASSAGES_FILE))?;
    let mut morals: Vec<Moral> = read_jsonl(&root.join(MORALS_FILE))?;

    for l in &mut manifest.languages {
        l.display_name = text::nfc(&l.display_name);
        l.country_name = text::nfc(&l.country_name);
    }
    for s in &mut stories {
        s.title = text::nfc(&s.title);
    }
    for p in &mut passages {
        p.text = text::nfc(&p.text);
    }
    for m in &mut morals {
        m.text = text::nfc(&m.text);
    }
    Corpus::from_parts(manifest, stories, passages, morals)
}

/// Writes the corpus files into `root`, creating it if needed.
pub fn save_corpus(corpus: &Corpus, root: &Path) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    for (name, bytes) in corpus.to_files()? {
        let path = root.join(name);
        write_atomic(&path, &bytes)?;
    }
    Ok(())
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "finding", rename_all = "snake_case")]
pub enum Finding {
    GridGap { story_id: String, language: String },
    UnknownLanguage { story_id: String, language: String },
    OriginNotInLanguageSet { story_id: String, language: String },
    OriginalFlagMismatch { story_id: String, language: String },
    MoralCountShortfall { story_id: String, language: String, found: usize, expected: usize },
    NotSingleSentence { moral_id: String },
    DiscardWithoutReason { moral_id: String },
    LanguageCount { found: usize, expected: usize },
}

#[derive(Debug, Clone)]
pub struct ValidationOptions {
    /// Active human morals expected per (story, language) cell.
    pub human_morals_per_cell: usize,
    /// Expected number of languages, if the corpus must match a fixed shape.
    pub expected_languages: Option<usize>,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        ValidationOptions {
            human_morals_per_cell: 3,
            expected_languages: None,
        }
    }
}

impl ValidationOptions {
    pub fn reference() -> Self {
        ValidationOptions {
            human_morals_per_cell: 3,
            expected_languages: Some(reference::LANGUAGE_COUNT),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }
}

pub fn validate_corpus(corpus: &Corpus, opts: &ValidationOptions) -> ValidationReport {
    let mut findings = Vec::new();
    let codes = corpus.language_codes();
    if let Some(expected) = opts.expected_languages {
        if codes.len() != expected {
            findings.push(Finding::LanguageCount {
                found: codes.len(),
                expected,
            });
        }
    }
    for story in &corpus.stories {
        let origin = &story.origin.language_code;
        if !codes.contains(origin) {
            findings.push(Finding::OriginNotInLanguageSet {
                story_id: story.story_id.clone(),
                language: origin.clone(),
            });
        }
        for lang in &codes {
            match corpus.passage(&story.story_id, lang) {
                None => findings.push(Finding::GridGap {
                    story_id: story.story_id.clone(),
                    language: lang.clone(),
                }),
                Some(p) => {
                    if p.is_original != (lang == origin) {
                        findings.push(Finding::OriginalFlagMismatch {
                            story_id: story.story_id.clone(),
                            language: lang.clone(),
                        });
                    }
                }
            }
            let humans = corpus
                .morals_in_cell(&story.story_id, lang)
                .filter(|m| m.source.is_human() && m.is_active())
                .count();
            if humans != opts.human_morals_per_cell {
                findings.push(Finding::MoralCountShortfall {
                    story_id: story.story_id.clone(),
                    language: lang.clone(),
                    found: humans,
                    expected: opts.human_morals_per_cell,
                });
            }
        }
    }
    for p in &corpus.passages {
        if !codes.contains(&p.language_code) {
            findings.push(Finding::UnknownLanguage {
                story_id: p.story_id.clone(),
                language: p.language_code.clone(),
            });
        }
    }
    for m in &corpus.morals {
        if m.cleaned && !text::is_single_sentence(&m.text) {
            findings.push(Finding::NotSingleSentence {
                moral_id: m.moral_id.clone(),
            });
        }
        if m.discarded && m.discard_reason.as_deref().map_or(true, |r| r.trim().is_empty()) {
            findings.push(Finding::DiscardWithoutReason {
                moral_id: m.moral_id.clone(),
            });
        }
    }
    ValidationReport { findings }
}

/// Active human moral counts per (story, language) cell.
pub fn human_cell_counts(corpus: &Corpus) -> BTreeMap<(String, String), usize> {
    let mut out = BTreeMap::new();
    for m in corpus.human_morals().filter(|m| m.is_active()) {
        *out.entry((m.story_id.clone(), m.passage_language.clone()))
            .or_insert(0) += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synthetic::{fixture_corpus, FixtureSpec};

    #[test]
    fn empty_directory_has_no_stories() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_corpus(dir.path()).unwrap_err();
        assert_eq!(err.to_string(), "no stories found");
    }

    #[test]
    fn two_by_two_fixture_resolves() {
        let c = fixture_corpus(&FixtureSpec::grid(2, 2));
        let dir = tempfile::tempdir().unwrap();
        save_corpus(&c, dir.path()).unwrap();
        let back = load_corpus(dir.path()).unwrap();
        assert_eq!(back.passages.len(), 4);
        for p in &back.passages {
            assert!(back.story(&p.story_id).is_some());
        }
        assert!(validate_corpus(&back, &ValidationOptions::default()).is_empty());
    }

    #[test]
    fn missing_passage_is_one_grid_gap() {
        let c = fixture_corpus(&FixtureSpec::grid(2, 2));
        let (m, s, mut p, mo) = c.into_parts();
        let target_story = s[0].story_id.clone();
        let target_lang = m
            .languages
            .iter()
            .map(|l| l.language_code.clone())
            .find(|l| *l != s[0].origin.language_code)
            .unwrap();
        p.retain(|x| !(x.story_id == target_story && x.language_code == target_lang));
        let c = Corpus::from_parts(m, s, p, mo).unwrap();
        let report = validate_corpus(&c, &ValidationOptions::default());
        let gaps: Vec<_> = report
            .findings
            .iter()
            .filter(|f| matches!(f, Finding::GridGap { .. }))
            .collect();
        assert_eq!(gaps.len(), 1);
        assert_eq!(
            gaps[0],
            &Finding::GridGap {
                story_id: target_story,
                language: target_lang
            }
        );
    }

    #[test]
    fn short_cell_is_one_count_finding() {
        let c = fixture_corpus(&FixtureSpec::grid(2, 2));
        let victim = c.human_morals().next().unwrap().moral_id.clone();
        let morals: Vec<Moral> = c.morals.iter().filter(|m| m.moral_id != victim).cloned().collect();
        let c = c.with_morals(morals).unwrap();
        let report = validate_corpus(&c, &ValidationOptions::default());
        assert_eq!(report.findings.len(), 1);
        assert!(matches!(
            report.findings[0],
            Finding::MoralCountShortfall { found: 2, expected: 3, .. }
        ));
    }

    #[test]
    fn duplicate_passage_rejected_on_load() {
        let c = fixture_corpus(&FixtureSpec::grid(1, 2));
        let dir = tempfile::tempdir().unwrap();
        save_corpus(&c, dir.path()).unwrap();
        let path = dir.path().join(PASSAGES_FILE);
        let mut raw = fs::read_to_string(&path).unwrap();
        let first = raw.lines().next().unwrap().to_string();
        raw.push_str(&first);
        raw.push('\n');
        fs::write(&path, raw).unwrap();
        assert!(matches!(
            load_corpus(dir.path()),
            Err(Error::DuplicatePassage { .. })
        ));
    }

    #[test]
    fn dangling_story_rejected_on_load() {
        let c = fixture_corpus(&FixtureSpec::grid(1, 1));
        let dir = tempfile::tempdir().unwrap();
        save_corpus(&c, dir.path()).unwrap();
        let path = dir.path().join(MORALS_FILE);
        let raw = fs::read_to_string(&path).unwrap().replace(&c.stories[0].story_id, "Q0");
        fs::write(&path, raw).unwrap();
        assert!(matches!(load_corpus(dir.path()), Err(Error::Dangling(_))));
    }

    #[test]
    fn missing_morals_file() {
        let c = fixture_corpus(&FixtureSpec::grid(1, 1));
        let dir = tempfile::tempdir().unwrap();
        save_corpus(&c, dir.path()).unwrap();
        fs::remove_file(dir.path().join(MORALS_FILE)).unwrap();
        assert!(matches!(load_corpus(dir.path()), Err(Error::MissingFile(_))));
    }

    #[test]
    fn two_sentence_cleaned_moral_is_flagged() {
        let c = fixture_corpus(&FixtureSpec::grid(1, 1));
        let mut morals = c.morals.clone();
        morals[0].cleaned = true;
        morals[0].text = "Be kind. Let me know if you want more!".into();
        let c = c.with_morals(morals).unwrap();
        let r = validate_corpus(&c, &ValidationOptions::default());
        assert_eq!(r.findings.len(), 1);
        assert!(matches!(r.findings[0], Finding::NotSingleSentence { .. }));
    }
}
