//! Cross-lingual story-moral evaluation toolkit.
//!
//! Corpus storage, provider abstractions (machine translation, chat models,
//! sentence embedders), moral generation and cleaning, contamination
//! screening, pair construction, a REML linear mixed-model fitter, the
//! hypothesis regressions, Schwartz-value statistics and the preference
//! survey.

pub mod clock;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod generation;
pub mod hypotheses;
pub mod jsonl;
pub mod lmm;
pub mod pairs;
pub mod prompts;
pub mod providers;
pub mod screening;
pub mod stats;
pub mod survey;
pub mod text;
pub mod translation;
pub mod values;

pub use clock::Clock;
pub use corpus::{
    load_corpus, save_corpus, validate_corpus, Corpus, LanguageCulturePair, Moral, MoralSource,
    Passage, PromptVariant, Provenance, Story,
};
pub use error::{Error, Result};
pub use translation::Translator;
