//! Moral pair families behind the regressions, plus pair-level covariates.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Moral, PromptVariant};
use crate::embedding::PairObservation;
use crate::error::{Error, Result};
use crate::text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PairKind {
    #[serde(rename = "HH_intra")]
    HhIntra,
    #[serde(rename = "HM_intra")]
    HmIntra,
    #[serde(rename = "HH_inter")]
    HhInter,
    #[serde(rename = "MM_inter")]
    MmInter,
    /// Human–human intralingual pairs carrying a translated condition.
    #[serde(rename = "H1_condition")]
    H1Condition,
}

impl PairKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PairKind::HhIntra => "HH_intra",
            PairKind::HmIntra => "HM_intra",
            PairKind::HhInter => "HH_inter",
            PairKind::MmInter => "MM_inter",
            PairKind::H1Condition => "H1_condition",
        }
    }
}

impl fmt::Display for PairKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PairKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            PairKind::HhIntra,
            PairKind::HmIntra,
            PairKind::HhInter,
            PairKind::MmInter,
            PairKind::H1Condition,
        ]
        .into_iter()
        .find(|k| k.as_str().eq_ignore_ascii_case(s))
        .ok_or_else(|| Error::Invalid(format!("unknown pair kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranslatedCondition {
    BothOriginal,
    BothTranslated,
}

impl TranslatedCondition {
    pub fn as_str(self) -> &'static str {
        match self {
            TranslatedCondition::BothOriginal => "both_original",
            TranslatedCondition::BothTranslated => "both_translated",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoralPair {
    pub moral_a: String,
    pub moral_b: String,
    pub story_id: String,
    pub lang_a: String,
    pub lang_b: String,
    pub language_pair_key: String,
    pub kind: PairKind,
    pub model_id: Option<String>,
    pub wc_a: usize,
    pub wc_b: usize,
    pub translated_condition: Option<TranslatedCondition>,
    /// Language of the story's original passage.
    pub origin_language: String,
    /// Country of the story's origin culture.
    pub origin_country: String,
}

pub fn language_pair_key(a: &str, b: &str) -> String {
    if a <= b {
        format!("{a}_{b}")
    } else {
        format!("{b}_{a}")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairOptions {
    pub include_discarded: bool,
    /// Restricts model-side morals; `None` keeps every model.
    pub model_ids: Option<Vec<String>>,
    /// Restricts model-side morals to one prompt variant.
    pub variant: Option<PromptVariant>,
}

impl PairOptions {
    fn keeps(&self, m: &Moral) -> bool {
        if m.discarded && !self.include_discarded {
            return false;
        }
        match &m.source {
            crate::corpus::MoralSource::Human { .. } => true,
            crate::corpus::MoralSource::Model {
                model_id,
                prompt_variant,
            } => {
                self.model_ids.as_ref().is_none_or(|ids| ids.contains(model_id))
                    && self.variant.is_none_or(|v| v == *prompt_variant)
            }
        }
    }
}

/// The kind implied by two morals' sources and languages, if any.
pub fn kind_of(a: &Moral, b: &Moral) -> Option<PairKind> {
    let same_lang = a.passage_language == b.passage_language;
    match (a.source.is_human(), b.source.is_human(), same_lang) {
        (true, true, true) => Some(PairKind::HhIntra),
        (true, true, false) => Some(PairKind::HhInter),
        (true, false, true) | (false, true, true) => Some(PairKind::HmIntra),
        (false, false, false) if a.source.model_id() == b.source.model_id() => Some(PairKind::MmInter),
        _ => None,
    }
}

fn make_pair(corpus: &Corpus, a: &Moral, b: &Moral, kind: PairKind) -> MoralPair {
    let story = corpus.story(&a.story_id).expect("validated corpus");
    let model_id = a
        .source
        .model_id()
        .or(b.source.model_id())
        .map(str::to_string);
    let mut p = MoralPair {
        moral_a: a.moral_id.clone(),
        moral_b: b.moral_id.clone(),
        story_id: a.story_id.clone(),
        lang_a: a.passage_language.clone(),
        lang_b: b.passage_language.clone(),
        language_pair_key: language_pair_key(&a.passage_language, &b.passage_language),
        kind,
        model_id,
        wc_a: word_count(a),
        wc_b: word_count(b),
        translated_condition: None,
        origin_language: story.origin.language_code.clone(),
        origin_country: story.origin.country_code.clone(),
    };
    if kind == PairKind::H1Condition {
        p.translated_condition = classify_h1(&p);
    }
    p
}

/// All unique unordered pairs of `kind`, in corpus order.
pub fn enumerate_pairs(corpus: &Corpus, kind: PairKind, opts: &PairOptions) -> Vec<MoralPair> {
    let langs = corpus.language_codes();
    let mut out = Vec::new();
    for story in &corpus.stories {
        let mut morals: Vec<&Moral> = corpus
            .morals
            .iter()
            .filter(|m| m.story_id == story.story_id && opts.keeps(m))
            .collect();
        let lang_pos = |m: &Moral| langs.iter().position(|l| *l == m.passage_language).unwrap_or(usize::MAX);
        morals.sort_by(|a, b| lang_pos(a).cmp(&lang_pos(b)).then(a.moral_id.cmp(&b.moral_id)));
        let humans: Vec<&Moral> = morals.iter().copied().filter(|m| m.source.is_human()).collect();
        let models: Vec<&Moral> = morals.iter().copied().filter(|m| !m.source.is_human()).collect();
        match kind {
            PairKind::HhIntra | PairKind::H1Condition | PairKind::HhInter => {
                let want_same = kind != PairKind::HhInter;
                for (i, a) in humans.iter().enumerate() {
                    for b in &humans[i + 1..] {
                        if (a.passage_language == b.passage_language) == want_same {
                            out.push(make_pair(corpus, a, b, kind));
                        }
                    }
                }
            }
            PairKind::HmIntra => {
                for h in &humans {
                    for m in &models {
                        if h.passage_language == m.passage_language {
                            out.push(make_pair(corpus, h, m, kind));
                        }
                    }
                }
            }
            PairKind::MmInter => {
                for (i, a) in models.iter().enumerate() {
                    for b in &models[i + 1..] {
                        if a.passage_language != b.passage_language && a.source == b.source {
                            out.push(make_pair(corpus, a, b, kind));
                        }
                    }
                }
            }
        }
    }
    out
}

/// Whether an intralingual human pair was written in the story's original
/// language or in a translation. Non-intralingual pairs are skipped.
pub fn classify_h1(pair: &MoralPair) -> Option<TranslatedCondition> {
    if !matches!(pair.kind, PairKind::HhIntra | PairKind::H1Condition) || pair.lang_a != pair.lang_b {
        return None;
    }
    Some(if pair.lang_a == pair.origin_language {
        TranslatedCondition::BothOriginal
    } else {
        TranslatedCondition::BothTranslated
    })
}

pub fn word_count(moral: &Moral) -> usize {
    text::word_count(&moral.text)
}

/// Population mean and standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// z-scores with the population standard deviation.
pub fn standardize(values: &[f64]) -> Result<Vec<f64>> {
    if values.len() < 2 {
        return Err(Error::TooFewValues {
            needed: 2,
            got: values.len(),
        });
    }
    let (mean, sd) = mean_sd(values);
    if sd == 0.0 || !sd.is_finite() {
        return Err(Error::ZeroVariance);
    }
    Ok(values.iter().map(|v| (v - mean) / sd).collect())
}

pub const CSV_COLUMNS: [&str; 16] = [
    "similarity",
    "kind",
    "model_id",
    "language_pair_key",
    "story_id",
    "embedder_id",
    "wc_a",
    "wc_b",
    "z_wc_a",
    "z_wc_b",
    "translated_condition",
    "moral_a",
    "moral_b",
    "lang_a",
    "lang_b",
    "origin_country",
];

/// Writes observations as CSV. Word-count z-scores are computed over the rows
/// written; a constant column leaves its z-scores empty.
pub fn write_observations_csv<W: Write>(w: W, rows: &[PairObservation]) -> Result<()> {
    let za = standardize(&rows.iter().map(|r| r.pair.wc_a as f64).collect::<Vec<_>>()).ok();
    let zb = standardize(&rows.iter().map(|r| r.pair.wc_b as f64).collect::<Vec<_>>()).ok();
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(CSV_COLUMNS)?;
    let fmt_z = |z: &Option<Vec<f64>>, i: usize| z.as_ref().map(|z| format!("{:.12}", z[i])).unwrap_or_default();
    for (i, r) in rows.iter().enumerate() {
        let p = &r.pair;
        csv.write_record([
            format!("{:.12}", r.similarity),
            p.kind.to_string(),
            p.model_id.clone().unwrap_or_default(),
            p.language_pair_key.clone(),
            p.story_id.clone(),
            r.embedder_id.clone(),
            p.wc_a.to_string(),
            p.wc_b.to_string(),
            fmt_z(&za, i),
            fmt_z(&zb, i),
            p.translated_condition.map(|c| c.as_str().to_string()).unwrap_or_default(),
            p.moral_a.clone(),
            p.moral_b.clone(),
            p.lang_a.clone(),
            p.lang_b.clone(),
            p.origin_country.clone(),
        ])?;
    }
    csv.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synthetic::{fixture_corpus, FixtureSpec};

    #[test]
    fn standardize_examples() {
        let z = standardize(&[1.0, 2.0, 3.0]).unwrap();
        let e = 1.5f64.sqrt();
        assert!((z[0] + e).abs() < 1e-12 && z[1].abs() < 1e-12 && (z[2] - e).abs() < 1e-12);
        assert!(matches!(standardize(&[2.0, 2.0]), Err(Error::ZeroVariance)));
        let again = standardize(&z).unwrap();
        for (a, b) in z.iter().zip(&again) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn kind_parse() {
        assert_eq!("hh_inter".parse::<PairKind>().unwrap(), PairKind::HhInter);
        assert!("HX".parse::<PairKind>().is_err());
    }

    #[test]
    fn small_grid_counts() {
        let c = fixture_corpus(&FixtureSpec::grid(2, 3).with_models(&["m1", "m2"]));
        let o = PairOptions::default();
        // per story: 3 cells × C(3,2)
        assert_eq!(enumerate_pairs(&c, PairKind::HhIntra, &o).len(), 2 * 3 * 3);
        // per story: C(9,2) − 3·C(3,2) = 27
        assert_eq!(enumerate_pairs(&c, PairKind::HhInter, &o).len(), 2 * 27);
        // per story: 3 cells × 3 humans × 2 models
        assert_eq!(enumerate_pairs(&c, PairKind::HmIntra, &o).len(), 2 * 18);
        // per story and model: C(3,2)
        assert_eq!(enumerate_pairs(&c, PairKind::MmInter, &o).len(), 2 * 2 * 3);
    }
}
