//! Contamination screening: flags human morals whose nearest model moral for
//! the same passage is unusually similar, and applies reviewer decisions.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Moral};
use crate::embedding::{cosine, MoralVectors};
use crate::error::{Error, Result};
use crate::pairs::mean_sd;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContaminationScore {
    pub moral_id: String,
    pub best_match_moral_id: String,
    pub max_similarity: f64,
    pub embedder_id: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Scoring {
    pub scores: Vec<ContaminationScore>,
    /// Human morals left unscored because their passage has no model morals.
    pub unscored: Vec<String>,
}

/// Max cosine similarity of every active human moral to the model morals of
/// its own (story, language) cell.
pub fn score_contamination(corpus: &Corpus, vectors: &MoralVectors, embedder_id: &str) -> Result<Scoring> {
    let mut cells: BTreeMap<(&str, &str), Vec<&Moral>> = BTreeMap::new();
    for m in corpus.morals.iter().filter(|m| !m.source.is_human()) {
        cells
            .entry((m.story_id.as_str(), m.passage_language.as_str()))
            .or_default()
            .push(m);
    }
    let humans: Vec<&Moral> = corpus.human_morals().filter(|m| !m.discarded).collect();
    let vec_of = |id: &str| {
        vectors
            .get(id)
            .ok_or_else(|| Error::MissingEmbedding(format!("{id} for {embedder_id}")))
    };
    let results: Vec<Result<Option<ContaminationScore>>> = humans
        .par_iter()
        .map(|h| {
            let Some(models) = cells.get(&(h.story_id.as_str(), h.passage_language.as_str())) else {
                return Ok(None);
            };
            let hv = vec_of(&h.moral_id)?;
            let mut best: Option<(&str, f64)> = None;
            for m in models {
                let s = cosine(&hv[..], &vec_of(&m.moral_id)?[..])?;
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((&m.moral_id, s));
                }
            }
            Ok(best.map(|(id, s)| ContaminationScore {
                moral_id: h.moral_id.clone(),
                best_match_moral_id: id.to_string(),
                max_similarity: s,
                embedder_id: embedder_id.to_string(),
            }))
        })
        .collect();
    let mut out = Scoring::default();
    for (h, r) in humans.iter().zip(results) {
        match r? {
            Some(s) => out.scores.push(s),
            None => {
                log::warn!(
                    "no model morals for {} / {}; {} left unscored",
                    h.story_id,
                    h.passage_language,
                    h.moral_id
                );
                out.unscored.push(h.moral_id.clone());
            }
        }
    }
    Ok(out)
}

/// `mean + k·sd` over the pooled scores, population standard deviation.
pub fn threshold(scores: &[ContaminationScore], k: f64) -> Result<f64> {
    if scores.len() < 2 {
        return Err(Error::TooFewValues {
            needed: 2,
            got: scores.len(),
        });
    }
    let v: Vec<f64> = scores.iter().map(|s| s.max_similarity).collect();
    let (mean, sd) = mean_sd(&v);
    Ok(mean + k * sd)
}

/// Moral ids whose score strictly exceeds the threshold, in input order.
pub fn flag_candidates(scores: &[ContaminationScore], k: f64) -> Result<Vec<String>> {
    let t = threshold(scores, k)?;
    Ok(scores
        .iter()
        .filter(|s| s.max_similarity > t)
        .map(|s| s.moral_id.clone())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Keep,
    Discard,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub moral_id: String,
    pub decision: Decision,
    pub reviewer: String,
    #[serde(default)]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewLogEntry {
    pub decision: ReviewDecision,
    pub was_flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReviewOutcome {
    pub corpus: Corpus,
    pub log: Vec<ReviewLogEntry>,
    pub discarded: usize,
    pub replacements: usize,
}

/// Applies decisions and ingests replacement morals. Decisions on unflagged
/// morals are applied with a warning.
pub fn apply_review(
    corpus: &Corpus,
    decisions: &[ReviewDecision],
    flagged: &[String],
    replacements: Vec<Moral>,
) -> Result<ReviewOutcome> {
    let flagged: HashSet<&str> = flagged.iter().map(String::as_str).collect();
    let mut morals = corpus.morals.clone();
    let mut log = Vec::new();
    let mut discarded = 0;
    for d in decisions {
        let m = morals
            .iter_mut()
            .find(|m| m.moral_id == d.moral_id)
            .ok_or_else(|| Error::Dangling(format!("review decision for unknown moral {}", d.moral_id)))?;
        let was_flagged = flagged.contains(d.moral_id.as_str());
        if !was_flagged {
            log::warn!("decision on unflagged moral {}", d.moral_id);
        }
        if d.decision == Decision::Discard {
            let note = d
                .note
                .as_deref()
                .filter(|n| !n.trim().is_empty())
                .ok_or_else(|| Error::Invalid(format!("discard of {} needs a note", d.moral_id)))?;
            if !m.discarded {
                discarded += 1;
            }
            m.discarded = true;
            m.discard_reason = Some(note.to_string());
        }
        log.push(ReviewLogEntry {
            decision: d.clone(),
            was_flagged,
        });
    }
    let n_repl = replacements.len();
    morals.extend(replacements);
    Ok(ReviewOutcome {
        corpus: corpus.with_morals(morals)?,
        log,
        discarded,
        replacements: n_repl,
    })
}

const QUEUE_COLUMNS: [&str; 10] = [
    "moral_id",
    "story_id",
    "language",
    "moral_text",
    "best_match_moral_id",
    "best_match_text",
    "similarity",
    "decision",
    "reviewer",
    "note",
];

/// Review queue for the flagged morals, most similar first. The last three
/// columns are left blank for the reviewer.
pub fn write_review_queue<W: Write>(
    w: W,
    corpus: &Corpus,
    scores: &[ContaminationScore],
    flagged: &[String],
) -> Result<()> {
    let flagged: HashSet<&str> = flagged.iter().map(String::as_str).collect();
    let mut rows: Vec<&ContaminationScore> = scores
        .iter()
        .filter(|s| flagged.contains(s.moral_id.as_str()))
        .collect();
    rows.sort_by(|a, b| {
        b.max_similarity
            .total_cmp(&a.max_similarity)
            .then(a.moral_id.cmp(&b.moral_id))
    });
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(QUEUE_COLUMNS)?;
    for s in rows {
        let m = corpus
            .moral(&s.moral_id)
            .ok_or_else(|| Error::Dangling(s.moral_id.clone()))?;
        let b = corpus
            .moral(&s.best_match_moral_id)
            .ok_or_else(|| Error::Dangling(s.best_match_moral_id.clone()))?;
        csv.write_record([
            m.moral_id.as_str(),
            m.story_id.as_str(),
            m.passage_language.as_str(),
            m.text.as_str(),
            b.moral_id.as_str(),
            b.text.as_str(),
            &format!("{:.6}", s.max_similarity),
            "",
            "",
            "",
        ])?;
    }
    csv.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct DecisionRow {
    moral_id: String,
    #[serde(default)]
    decision: String,
    #[serde(default)]
    reviewer: String,
    #[serde(default)]
    note: String,
}

/// Reads a filled-in review queue (or any CSV with `moral_id, decision,
/// reviewer, note`). Rows without a decision are skipped.
pub fn read_decisions<R: Read>(r: R) -> Result<Vec<ReviewDecision>> {
    let mut out = Vec::new();
    for row in csv::Reader::from_reader(r).deserialize::<DecisionRow>() {
        let row = row?;
        let decision = match row.decision.trim().to_ascii_lowercase().as_str() {
            "" => continue,
            "keep" => Decision::Keep,
            "discard" => Decision::Discard,
            other => return Err(Error::Invalid(format!("decision {other:?} for {}", row.moral_id))),
        };
        out.push(ReviewDecision {
            moral_id: row.moral_id,
            decision,
            reviewer: row.reviewer,
            note: Some(row.note).filter(|n| !n.trim().is_empty()),
        });
    }
    Ok(out)
}
