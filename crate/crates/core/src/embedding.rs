//! Sentence embeddings: provider calls, a persistent vector cache, cosine
//! similarity and pair-level similarity rows.
//!
//! Cache layout per embedder: `<id>.f32` holds little-endian f32 vectors back
//! to back, `<id>.json` indexes them by text hash.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::corpus::{write_atomic, Corpus};
use crate::error::{Error, Result};
use crate::pairs::MoralPair;
use crate::providers::{EmbedderInfo, EmbeddingBackend, RetryPolicy};
use crate::text;
use crate::translation::Translator;

const BATCH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputVariant {
    Original,
    EnglishTranslated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub text_hash: String,
    pub embedder_id: String,
    pub input_variant: InputVariant,
    pub vector: Vec<f32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Sidecar {
    embedder_id: String,
    dimensionality: usize,
    multilingual: bool,
    entries: Vec<SidecarEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SidecarEntry {
    text_hash: String,
    input_variant: InputVariant,
    /// Index of the vector in the binary file.
    slot: usize,
}

/// In-memory vectors for one embedder, optionally backed by files.
#[derive(Debug)]
pub struct VectorCache {
    info: EmbedderInfo,
    dir: Option<PathBuf>,
    map: RwLock<BTreeMap<String, (InputVariant, Arc<[f32]>)>>,
}

impl VectorCache {
    pub fn in_memory(info: EmbedderInfo) -> Self {
        VectorCache {
            info,
            dir: None,
            map: RwLock::new(BTreeMap::new()),
        }
    }

    fn paths(dir: &Path, id: &str) -> (PathBuf, PathBuf) {
        let safe: String = id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' || c == '_' { c } else { '_' })
            .collect();
        (dir.join(format!("{safe}.f32")), dir.join(format!("{safe}.json")))
    }

    /// Opens (or starts) the cache for `info` under `dir`.
    pub fn open(dir: impl Into<PathBuf>, info: EmbedderInfo) -> Result<Self> {
        let dir = dir.into();
        let (bin, idx) = Self::paths(&dir, &info.embedder_id);
        let mut map = BTreeMap::new();
        if idx.exists() {
            let raw = fs::read_to_string(&idx).map_err(|e| Error::io(&idx, e))?;
            let side: Sidecar = serde_json::from_str(&raw)?;
            if side.dimensionality != info.dimensionality {
                return Err(Error::DimensionMismatch {
                    expected: info.dimensionality,
                    got: side.dimensionality,
                });
            }
            let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
            let d = side.dimensionality;
            for e in side.entries {
                let start = e.slot * d * 4;
                let chunk = bytes
                    .get(start..start + d * 4)
                    .ok_or_else(|| Error::Invalid(format!("{} is truncated", bin.display())))?;
                let v: Vec<f32> = chunk
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect();
                map.insert(e.text_hash, (e.input_variant, Arc::from(v)));
            }
        }
        Ok(VectorCache {
            info,
            dir: Some(dir),
            map: RwLock::new(map),
        })
    }

    pub fn info(&self) -> &EmbedderInfo {
        &self.info
    }

    pub fn get(&self, text_hash: &str) -> Option<Arc<[f32]>> {
        self.map.read().unwrap().get(text_hash).map(|(_, v)| v.clone())
    }

    pub fn record(&self, text_hash: &str) -> Option<EmbeddingRecord> {
        self.map
            .read()
            .unwrap()
            .get(text_hash)
            .map(|(variant, v)| EmbeddingRecord {
                text_hash: text_hash.to_string(),
                embedder_id: self.info.embedder_id.clone(),
                input_variant: *variant,
                vector: v.to_vec(),
            })
    }

    pub fn insert(&self, text_hash: String, variant: InputVariant, vector: Vec<f32>) -> Result<()> {
        if vector.len() != self.info.dimensionality {
            return Err(Error::DimensionMismatch {
                expected: self.info.dimensionality,
                got: vector.len(),
            });
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::Invalid(format!(
                "non-finite vector from {}",
                self.info.embedder_id
            )));
        }
        self.map
            .write()
            .unwrap()
            .entry(text_hash)
            .or_insert((variant, Arc::from(vector)));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.map.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes both files, entries sorted by text hash.
    pub fn persist(&self) -> Result<Option<(PathBuf, PathBuf)>> {
        let Some(dir) = &self.dir else {
            return Ok(None);
        };
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (bin, idx) = Self::paths(dir, &self.info.embedder_id);
        let map = self.map.read().unwrap();
        let mut bytes = Vec::with_capacity(map.len() * self.info.dimensionality * 4);
        let mut entries = Vec::with_capacity(map.len());
        for (slot, (h, (variant, v))) in map.iter().enumerate() {
            for x in v.iter() {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
            entries.push(SidecarEntry {
                text_hash: h.clone(),
                input_variant: *variant,
                slot,
            });
        }
        let side = Sidecar {
            embedder_id: self.info.embedder_id.clone(),
            dimensionality: self.info.dimensionality,
            multilingual: self.info.multilingual,
            entries,
        };
        write_atomic(&bin, &bytes)?;
        write_atomic(&idx, &serde_json::to_vec_pretty(&side)?)?;
        Ok(Some((bin, idx)))
    }
}

pub fn text_hash(text: &str) -> String {
    text::sha256_hex(text)
}

/// An embedding backend with its cache and, for English-only models, the
/// translator used to route inputs through English.
pub struct Embedder {
    backend: Option<Arc<dyn EmbeddingBackend>>,
    cache: VectorCache,
    translator: Option<Arc<Translator>>,
    retry: RetryPolicy,
}

impl Embedder {
    pub fn new(backend: Arc<dyn EmbeddingBackend>, cache: VectorCache) -> Self {
        Embedder {
            backend: Some(backend),
            cache,
            translator: None,
            retry: RetryPolicy::default(),
        }
    }

    /// Cache-only embedder; any miss is an error.
    pub fn cached_only(cache: VectorCache) -> Self {
        Embedder {
            backend: None,
            cache,
            translator: None,
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_translator(mut self, translator: Arc<Translator>) -> Self {
        self.translator = Some(translator);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn info(&self) -> &EmbedderInfo {
        self.cache.info()
    }

    pub fn cache(&self) -> &VectorCache {
        &self.cache
    }

    pub fn is_cached(&self, text: &str) -> bool {
        self.cache.get(&text_hash(text)).is_some()
    }

    /// One vector per `(text, language)` input, in order.
    pub fn embed(&self, inputs: &[(&str, &str)]) -> Result<Vec<Arc<[f32]>>> {
        let multilingual = self.info().multilingual;
        let mut todo: Vec<(String, String)> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (t, lang) in inputs {
            let h = text_hash(t);
            if self.cache.get(&h).is_none() && seen.insert(h.clone()) {
                let input = if multilingual || *lang == "en" {
                    t.to_string()
                } else {
                    let tr = self.translator.as_ref().ok_or_else(|| {
                        Error::Invalid(format!(
                            "{} is English-only and no translator is configured",
                            self.info().embedder_id
                        ))
                    })?;
                    tr.translate(t, lang, "en")?
                };
                todo.push((h, input));
            }
        }
        let variant = if multilingual {
            InputVariant::Original
        } else {
            InputVariant::EnglishTranslated
        };
        for chunk in todo.chunks(BATCH) {
            let backend = self
                .backend
                .as_ref()
                .ok_or_else(|| Error::MissingEmbedding(chunk[0].0.clone()))?;
            let texts: Vec<String> = chunk.iter().map(|(_, s)| s.clone()).collect();
            let vecs = self
                .retry
                .run(|| backend.embed_batch(&texts))
                .map_err(|source| Error::Provider {
                    provider: self.info().embedder_id.clone(),
                    source,
                })?;
            if vecs.len() != texts.len() {
                return Err(Error::Invalid(format!(
                    "{} returned {} vectors for {} texts",
                    self.info().embedder_id,
                    vecs.len(),
                    texts.len()
                )));
            }
            for ((h, _), v) in chunk.iter().zip(vecs) {
                self.cache.insert(h.clone(), variant, v)?;
            }
        }
        inputs
            .iter()
            .map(|(t, _)| {
                let h = text_hash(t);
                self.cache.get(&h).ok_or(Error::MissingEmbedding(h))
            })
            .collect()
    }
}

/// Vectors for every moral of a corpus, keyed by moral id.
pub type MoralVectors = HashMap<String, Arc<[f32]>>;

pub fn embed_morals(corpus: &Corpus, embedder: &Embedder) -> Result<MoralVectors> {
    let inputs: Vec<(&str, &str)> = corpus
        .morals
        .iter()
        .map(|m| (m.text.as_str(), m.passage_language.as_str()))
        .collect();
    let vecs = embedder.embed(&inputs)?;
    Ok(corpus
        .morals
        .iter()
        .map(|m| m.moral_id.clone())
        .zip(vecs)
        .collect())
}

/// Looks up cached vectors for every moral without calling any provider.
pub fn cached_moral_vectors(corpus: &Corpus, cache: &VectorCache) -> Result<MoralVectors> {
    corpus
        .morals
        .iter()
        .map(|m| {
            let h = text_hash(&m.text);
            cache
                .get(&h)
                .map(|v| (m.moral_id.clone(), v))
                .ok_or_else(|| Error::MissingEmbedding(format!("{} ({})", h, m.moral_id)))
        })
        .collect()
}

/// `dot(u, v) / (|u| |v|)`, accumulated in f64 and clamped to [-1, 1].
pub fn cosine<T: Copy + Into<f64>>(u: &[T], v: &[T]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    let (mut dot, mut uu, mut vv) = (0.0f64, 0.0f64, 0.0f64);
    for (a, b) in u.iter().zip(v) {
        let (a, b): (f64, f64) = ((*a).into(), (*b).into());
        dot += a * b;
        uu += a * a;
        vv += b * b;
    }
    if uu == 0.0 || vv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot / (uu.sqrt() * vv.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairObservation {
    pub pair: MoralPair,
    pub embedder_id: String,
    pub similarity: f64,
}

/// One row per (pair, embedder).
pub fn pairwise_similarity(
    pairs: &[MoralPair],
    vectors: &BTreeMap<String, MoralVectors>,
) -> Result<Vec<PairObservation>> {
    let mut out = Vec::with_capacity(pairs.len() * vectors.len());
    for (embedder_id, vecs) in vectors {
        for p in pairs {
            let get = |id: &str| {
                vecs.get(id)
                    .ok_or_else(|| Error::MissingEmbedding(format!("{id} for {embedder_id}")))
            };
            let sim = cosine(&get(&p.moral_a)?[..], &get(&p.moral_b)?[..])?;
            out.push(PairObservation {
                pair: p.clone(),
                embedder_id: embedder_id.clone(),
                similarity: sim,
            });
        }
    }
    Ok(out)
}
