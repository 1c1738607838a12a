//! Run configuration, read from a single TOML file. Provider credentials are
//! named by environment variable only, so the file (and its hash) never holds
//! a secret.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use storymoral_core::corpus::PromptVariant;
use storymoral_core::providers::config::{ProvidersConfig, Providers};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Input corpus directory (stories, original passages, human morals).
    pub corpus: PathBuf,
    /// Output directory; holds the working corpus, caches, reports and the manifest.
    pub out: PathBuf,
    /// Root seed. Every seeded step derives from it.
    #[serde(default)]
    pub seed: u64,
    pub models: Vec<String>,
    pub embedders: Vec<String>,
    #[serde(default = "default_variant")]
    pub prompt_variant: PromptVariant,
    /// Chat provider for the two cleaning passes; the first model by default.
    #[serde(default)]
    pub cleaner: Option<String>,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Timestamp stamped on archived records. Defaults to the epoch when every
    /// provider is a stub and to the wall clock otherwise.
    #[serde(default)]
    pub timestamp: Option<String>,
    #[serde(default)]
    pub screening: ScreeningConfig,
    #[serde(default)]
    pub hypotheses: HypothesesConfig,
    #[serde(default)]
    pub values: ValuesConfig,
    #[serde(default)]
    pub survey: SurveyConfig,
    pub providers: ProvidersConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScreeningConfig {
    /// Multilingual embedder used for contamination scores; the first
    /// multilingual entry of `embedders` by default.
    #[serde(default)]
    pub embedder: Option<String>,
    #[serde(default = "default_k")]
    pub k: f64,
}

impl Default for ScreeningConfig {
    fn default() -> Self {
        ScreeningConfig { embedder: None, k: default_k() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypothesesConfig {
    #[serde(default)]
    pub include_discarded: bool,
    /// Adds a pooled fit next to the per-model H3/H4 fits.
    #[serde(default)]
    pub pooled: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValuesConfig {
    /// Two annotator chat providers; the first two models by default.
    #[serde(default)]
    pub annotators: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurveyConfig {
    /// Stories to survey; all stories by default.
    #[serde(default)]
    pub stories: Option<Vec<String>>,
    #[serde(default)]
    pub languages: Option<Vec<String>>,
    #[serde(default = "default_n_per_cell")]
    pub n_per_cell: usize,
    /// Model whose morals fill the LLM side; the first model by default.
    #[serde(default)]
    pub llm_model_id: Option<String>,
    #[serde(default = "default_items_per_session")]
    pub items_per_session: usize,
}

impl Default for SurveyConfig {
    fn default() -> Self {
        SurveyConfig {
            stories: None,
            languages: None,
            n_per_cell: default_n_per_cell(),
            llm_model_id: None,
            items_per_session: default_items_per_session(),
        }
    }
}

fn default_variant() -> PromptVariant {
    PromptVariant::SocioDemographicEnglish
}
fn default_parallelism() -> usize {
    8
}
fn default_k() -> f64 {
    2.0
}
fn default_n_per_cell() -> usize {
    3
}
fn default_items_per_session() -> usize {
    5
}

impl RunConfig {
    /// Parses `path`; relative `corpus` and `out` resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&raw).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.corpus.is_relative() {
            cfg.corpus = base.join(&cfg.corpus);
        }
        if cfg.out.is_relative() {
            cfg.out = base.join(&cfg.out);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Every referenced provider must resolve.
    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            bail!("config lists no models");
        }
        if self.embedders.is_empty() {
            bail!("config lists no embedders");
        }
        Providers::build(&self.providers)?;
        let chat = &self.providers.chat;
        for m in self.models.iter().chain(&self.values.annotators).chain(&self.cleaner) {
            if !chat.contains_key(m) {
                bail!("no chat provider configured for {m}");
            }
        }
        for e in self.embedders.iter().chain(&self.screening.embedder) {
            if !self.providers.embedders.contains_key(e) {
                bail!("no embedder configured for {e}");
            }
        }
        if let Some(e) = &self.screening.embedder {
            if !self.embedders.contains(e) {
                bail!("screening embedder {e} is not in the embedder list");
            }
        }
        if let Some(m) = &self.survey.llm_model_id {
            if !self.models.contains(m) {
                bail!("survey model {m} is not in the model list");
            }
        }
        if self.providers.routes.is_empty() {
            bail!("config defines no MT routes");
        }
        Ok(())
    }

    pub fn cleaner_id(&self) -> &str {
        self.cleaner.as_deref().unwrap_or(&self.models[0])
    }

    pub fn screening_embedder(&self) -> Result<&str> {
        if let Some(e) = &self.screening.embedder {
            return Ok(e);
        }
        self.embedders
            .iter()
            .find(|e| self.providers.embedders[*e].multilingual)
            .map(String::as_str)
            .context("no multilingual embedder available for screening")
    }

    pub fn annotator_ids(&self) -> Result<(String, String)> {
        let ids = if self.values.annotators.is_empty() {
            &self.models
        } else {
            &self.values.annotators
        };
        match ids.as_slice() {
            [a, b, ..] => Ok((a.clone(), b.clone())),
            _ => bail!("value annotation needs two annotators"),
        }
    }

    pub fn survey_model(&self) -> &str {
        self.survey.llm_model_id.as_deref().unwrap_or(&self.models[0])
    }

    /// True when no configured provider leaves the machine.
    pub fn all_stub(&self) -> bool {
        self.providers.remote_providers().is_empty()
    }

    /// Hash of the configuration with the two directory paths blanked, so
    /// identical runs in different directories hash alike.
    pub fn content_hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.corpus = PathBuf::new();
        c.out = PathBuf::new();
        Ok(crate::manifest::sha256_hex(&serde_json::to_vec(&c)?))
    }
}

/// A configuration for the reference design with every provider stubbed.
pub fn stub_config(corpus: PathBuf, out: PathBuf, seed: u64) -> RunConfig {
    use storymoral_core::corpus::reference::{EMBEDDER_IDS, MODEL_IDS};
    let mut providers = ProvidersConfig::all_stub(&MODEL_IDS, &EMBEDDER_IDS);
    // the annotators are separate chat providers
    for a in ["annotator-a", "annotator-b"] {
        providers.chat.insert(
            a.into(),
            storymoral_core::providers::config::ChatSpec::Stub { fixed: None },
        );
    }
    RunConfig {
        corpus,
        out,
        seed,
        models: MODEL_IDS.iter().map(|s| s.to_string()).collect(),
        embedders: EMBEDDER_IDS.iter().map(|(s, _)| s.to_string()).collect(),
        prompt_variant: default_variant(),
        cleaner: None,
        parallelism: default_parallelism(),
        timestamp: None,
        screening: ScreeningConfig::default(),
        hypotheses: HypothesesConfig::default(),
        values: ValuesConfig {
            annotators: vec!["annotator-a".into(), "annotator-b".into()],
        },
        survey: SurveyConfig::default(),
        providers,
    }
}
