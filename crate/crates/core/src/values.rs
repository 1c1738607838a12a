//! Schwartz value annotation, frequency tables and agreement statistics.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::corpus::{Corpus, Moral};
use crate::error::{Error, Result};
use crate::generation::CachedChat;
use crate::prompts::MOVA_VALUES;
use crate::translation::Translator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SchwartzValue {
    Power,
    Achievement,
    Hedonism,
    Stimulation,
    #[serde(rename = "Self-direction")]
    SelfDirection,
    Universalism,
    Benevolence,
    Tradition,
    Conformity,
    Security,
}

impl SchwartzValue {
    pub const ALL: [SchwartzValue; 10] = [
        SchwartzValue::Power,
        SchwartzValue::Achievement,
        SchwartzValue::Hedonism,
        SchwartzValue::Stimulation,
        SchwartzValue::SelfDirection,
        SchwartzValue::Universalism,
        SchwartzValue::Benevolence,
        SchwartzValue::Tradition,
        SchwartzValue::Conformity,
        SchwartzValue::Security,
    ];

    /// Row order of the published frequency tables.
    pub const TABLE_ORDER: [SchwartzValue; 10] = [
        SchwartzValue::Security,
        SchwartzValue::SelfDirection,
        SchwartzValue::Benevolence,
        SchwartzValue::Universalism,
        SchwartzValue::Conformity,
        SchwartzValue::Achievement,
        SchwartzValue::Stimulation,
        SchwartzValue::Tradition,
        SchwartzValue::Hedonism,
        SchwartzValue::Power,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SchwartzValue::Power => "Power",
            SchwartzValue::Achievement => "Achievement",
            SchwartzValue::Hedonism => "Hedonism",
            SchwartzValue::Stimulation => "Stimulation",
            SchwartzValue::SelfDirection => "Self-direction",
            SchwartzValue::Universalism => "Universalism",
            SchwartzValue::Benevolence => "Benevolence",
            SchwartzValue::Tradition => "Tradition",
            SchwartzValue::Conformity => "Conformity",
            SchwartzValue::Security => "Security",
        }
    }
}

impl fmt::Display for SchwartzValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SchwartzValue {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchwartzValue::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Invalid(format!("unknown Schwartz value {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueLabels {
    pub moral_id: String,
    pub annotator_model_id: String,
    pub labels: BTreeMap<SchwartzValue, u8>,
}

impl ValueLabels {
    pub fn get(&self, v: SchwartzValue) -> u8 {
        self.labels.get(&v).copied().unwrap_or(0)
    }
}

/// Parses the JSON object in an annotator completion. Text around the
/// outermost braces (code fences, preambles) is ignored, as are extra keys.
pub fn parse_labels(raw: &str) -> Result<BTreeMap<SchwartzValue, u8>> {
    let (Some(a), Some(b)) = (raw.find('{'), raw.rfind('}')) else {
        return Err(Error::MalformedAnnotation(format!("no JSON object in {raw:?}")));
    };
    if b < a {
        return Err(Error::MalformedAnnotation(format!("no JSON object in {raw:?}")));
    }
    let obj: serde_json::Map<String, serde_json::Value> =
        serde_json::from_str(&raw[a..=b]).map_err(|e| Error::MalformedAnnotation(e.to_string()))?;
    SchwartzValue::ALL
        .into_iter()
        .map(|v| {
            let x = obj.get(v.as_str()).ok_or_else(|| Error::MissingKey(v.as_str().into()))?;
            match x.as_u64() {
                Some(b @ (0 | 1)) => Ok((v, b as u8)),
                _ => Err(Error::NonBinary(v.as_str().into())),
            }
        })
        .collect()
}

/// The text an annotator sees: the moral itself, or its English translation
/// when a translator is supplied.
pub fn annotation_text(moral: &Moral, translator: Option<&Translator>) -> Result<String> {
    match translator {
        Some(t) if moral.passage_language != "en" => t.translate(&moral.text, &moral.passage_language, "en"),
        _ => Ok(moral.text.clone()),
    }
}

/// Labels one moral; a completion that fails to parse is retried once as a
/// fresh attempt.
pub fn annotate_values(moral: &Moral, text: &str, annotator: &CachedChat) -> Result<ValueLabels> {
    let prompt = MOVA_VALUES.render(&[("TEXT", text)])?;
    let mut last = None;
    for attempt in 0..2 {
        let rec = annotator.complete(&MOVA_VALUES, &prompt, attempt)?;
        match parse_labels(&rec.raw_text) {
            Ok(labels) => {
                return Ok(ValueLabels {
                    moral_id: moral.moral_id.clone(),
                    annotator_model_id: annotator.model_id().to_string(),
                    labels,
                })
            }
            Err(e) => {
                log::warn!("annotation of {} attempt {attempt} unusable: {e}", moral.moral_id);
                last = Some(e);
            }
        }
    }
    Err(last.expect("two attempts"))
}

/// Annotates every selected moral, in corpus order.
pub fn annotate_all(
    corpus: &Corpus,
    include: impl Fn(&Moral) -> bool + Sync,
    annotator: &CachedChat,
    translator: Option<&Translator>,
) -> Result<Vec<ValueLabels>> {
    let morals: Vec<&Moral> = corpus.morals.iter().filter(|m| include(m)).collect();
    morals
        .par_iter()
        .map(|m| annotate_values(m, &annotation_text(m, translator)?, annotator))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyCell {
    pub source: String,
    pub value: SchwartzValue,
    pub count: usize,
    pub total: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFrequencyTable {
    pub annotator_model_id: String,
    /// "human" first, then model ids in sorted order.
    pub sources: Vec<String>,
    pub cells: Vec<FrequencyCell>,
}

impl ValueFrequencyTable {
    pub fn cell(&self, source: &str, value: SchwartzValue) -> Option<&FrequencyCell> {
        self.cells.iter().find(|c| c.source == source && c.value == value)
    }

    pub fn percent(&self, source: &str, value: SchwartzValue) -> Option<f64> {
        self.cell(source, value).map(|c| c.percent)
    }

    /// Percentages in table order: values as rows, sources as columns.
    pub fn grid(&self) -> Vec<f64> {
        SchwartzValue::TABLE_ORDER
            .iter()
            .flat_map(|v| self.sources.iter().map(move |s| (s, *v)))
            .map(|(s, v)| self.percent(s, v).unwrap_or(f64::NAN))
            .collect()
    }

    /// `Value,<source>...` with one row per value, percentages to one decimal.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        let mut header = vec!["Value".to_string()];
        header.extend(self.sources.iter().cloned());
        csv.write_record(&header)?;
        for v in SchwartzValue::TABLE_ORDER {
            let mut row = vec![v.as_str().to_string()];
            for s in &self.sources {
                row.push(self.percent(s, v).map(|p| format!("{p:.1}")).unwrap_or_default());
            }
            csv.write_record(&row)?;
        }
        csv.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

fn by_moral(labels: &[ValueLabels]) -> Result<BTreeMap<&str, &ValueLabels>> {
    let mut out = BTreeMap::new();
    for l in labels {
        if out.insert(l.moral_id.as_str(), l).is_some() {
            return Err(Error::CoverageMismatch(format!("two label sets for {}", l.moral_id)));
        }
    }
    Ok(out)
}

/// Share of selected morals labeled 1, per source and value.
pub fn frequency_table(
    labels: &[ValueLabels],
    corpus: &Corpus,
    include: impl Fn(&Moral) -> bool,
) -> Result<ValueFrequencyTable> {
    let annotators: BTreeSet<&str> = labels.iter().map(|l| l.annotator_model_id.as_str()).collect();
    if annotators.len() > 1 {
        return Err(Error::Invalid(format!("labels from several annotators: {annotators:?}")));
    }
    let index = by_moral(labels)?;
    let mut groups: BTreeMap<String, Vec<&ValueLabels>> = BTreeMap::new();
    for m in corpus.morals.iter().filter(|m| include(m)) {
        let l = index
            .get(m.moral_id.as_str())
            .ok_or_else(|| Error::CoverageMismatch(format!("no labels for {}", m.moral_id)))?;
        groups.entry(m.source.label().to_string()).or_default().push(l);
    }
    if groups.is_empty() {
        return Err(Error::EmptySelection("no morals selected for the frequency table".into()));
    }
    let mut sources: Vec<String> = groups.keys().cloned().collect();
    sources.sort_by_key(|s| (s != "human", s.clone()));
    let mut cells = Vec::new();
    for s in &sources {
        let g = &groups[s];
        for v in SchwartzValue::TABLE_ORDER {
            let count = g.iter().filter(|l| l.get(v) == 1).count();
            cells.push(FrequencyCell {
                source: s.clone(),
                value: v,
                count,
                total: g.len(),
                percent: 100.0 * count as f64 / g.len() as f64,
            });
        }
    }
    Ok(ValueFrequencyTable {
        annotator_model_id: annotators.into_iter().next().unwrap_or_default().to_string(),
        sources,
        cells,
    })
}

/// Fraction of (moral, value) cells on which two annotators agree.
pub fn percent_agreement(a: &[ValueLabels], b: &[ValueLabels]) -> Result<f64> {
    let (ia, ib) = (by_moral(a)?, by_moral(b)?);
    if ia.is_empty() || !ia.keys().eq(ib.keys()) {
        return Err(Error::CoverageMismatch(format!(
            "annotators cover {} and {} morals",
            ia.len(),
            ib.len()
        )));
    }
    let mut agree = 0usize;
    for (id, la) in &ia {
        let lb = ib[id];
        agree += SchwartzValue::ALL.iter().filter(|v| la.get(**v) == lb.get(**v)).count();
    }
    Ok(agree as f64 / (ia.len() * SchwartzValue::ALL.len()) as f64)
}

/// Ranks starting at 1, ties given their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ConstantInput);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's ρ with a two-sided p-value from the t approximation.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() {
        return Err(Error::Invalid(format!("lengths {} and {}", xs.len(), ys.len())));
    }
    if xs.len() < 3 {
        return Err(Error::TooFewValues {
            needed: 3,
            got: xs.len(),
        });
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Invalid("non-finite input to spearman".into()));
    }
    let rho = pearson(&average_ranks(xs), &average_ranks(ys))?;
    let df = (xs.len() - 2) as f64;
    let p = if rho.abs() >= 1.0 {
        0.0
    } else {
        // two-sided t tail as I_x(df/2, 1/2), exact in the far tail
        let t2 = rho * rho * df / (1.0 - rho * rho);
        beta_reg(df / 2.0, 0.5, df / (df + t2))
    };
    Ok((rho, p))
}

/// Spearman over the (value × source) grid shared by two annotators' tables.
pub fn grid_spearman(a: &ValueFrequencyTable, b: &ValueFrequencyTable) -> Result<(f64, f64)> {
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for c in &a.cells {
        if let Some(p) = b.percent(&c.source, c.value) {
            xs.push(c.percent);
            ys.push(p);
        }
    }
    spearman(&xs, &ys)
}

/// Spearman over the ten values within each source separately.
pub fn per_source_spearman(a: &ValueFrequencyTable, b: &ValueFrequencyTable) -> Result<BTreeMap<String, (f64, f64)>> {
    a.sources
        .iter()
        .filter(|s| b.sources.contains(s))
        .map(|s| {
            let xs: Vec<f64> = SchwartzValue::TABLE_ORDER.iter().map(|v| a.percent(s, *v).unwrap()).collect();
            let ys: Vec<f64> = SchwartzValue::TABLE_ORDER.iter().map(|v| b.percent(s, *v).unwrap()).collect();
            Ok((s.clone(), spearman(&xs, &ys)?))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleMoral {
    pub moral_id: String,
    pub text: String,
    pub label_a: u8,
    pub label_b: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueExamples {
    pub value: SchwartzValue,
    pub both_positive: Option<ExampleMoral>,
    pub disagreement: Option<ExampleMoral>,
    pub notes: Vec<String>,
}

/// Per value, the lowest moral id both annotators label 1 and the lowest
/// moral id they disagree on. `texts` overrides corpus text (e.g. English
/// translations).
pub fn disagreement_examples(
    a: &[ValueLabels],
    b: &[ValueLabels],
    corpus: &Corpus,
    texts: Option<&HashMap<String, String>>,
) -> Result<Vec<ValueExamples>> {
    let (ia, ib) = (by_moral(a)?, by_moral(b)?);
    let text_of = |id: &str| -> Result<String> {
        if let Some(t) = texts.and_then(|t| t.get(id)) {
            return Ok(t.clone());
        }
        corpus
            .moral(id)
            .map(|m| m.text.clone())
            .ok_or_else(|| Error::Dangling(id.to_string()))
    };
    let mut out = Vec::new();
    for v in SchwartzValue::ALL {
        let mut both = None;
        let mut dis = None;
        for (id, la) in &ia {
            let Some(lb) = ib.get(id) else { continue };
            let (x, y) = (la.get(v), lb.get(v));
            let pick = || -> Result<ExampleMoral> {
                Ok(ExampleMoral {
                    moral_id: id.to_string(),
                    text: text_of(id)?,
                    label_a: x,
                    label_b: y,
                })
            };
            if both.is_none() && x == 1 && y == 1 {
                both = Some(pick()?);
            }
            if dis.is_none() && x != y {
                dis = Some(pick()?);
            }
            if both.is_some() && dis.is_some() {
                break;
            }
        }
        let mut notes = Vec::new();
        if both.is_none() {
            notes.push(format!("no moral labeled {v} by both annotators"));
        }
        if dis.is_none() {
            notes.push(format!("no disagreement on {v}"));
        }
        out.push(ValueExamples {
            value: v,
            both_positive: both,
            disagreement: dis,
            notes,
        });
    }
    Ok(out)
}
