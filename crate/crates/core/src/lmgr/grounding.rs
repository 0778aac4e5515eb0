//! Embedded title + first-sentence entries and exhaustive cosine search.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::provider::{normalize, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::model::Document;

const CACHE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingEntry {
    pub doc_id: String,
    pub title: String,
    pub first_sentence: String,
    pub vector: Vec<f32>,
}

/// Text embedded for a document: `"title. first_sentence"`.
pub fn entry_text(title: &str, first_sentence: &str) -> String {
    if first_sentence.trim().is_empty() {
        title.to_string()
    } else {
        format!("{title}. {first_sentence}")
    }
}

fn text_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundingCorpus {
    pub model_id: String,
    /// Hash over all entry texts in corpus order.
    pub corpus_hash: String,
    pub entries: Vec<GroundingEntry>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BuildStats {
    pub embedded: usize,
    pub reused: usize,
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    doc_id: String,
    text_hash: String,
    vector: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct CacheFile {
    format_version: u32,
    model_id: String,
    corpus_hash: String,
    entries: Vec<CacheEntry>,
}

fn load_cache(path: &Path, model_id: &str) -> Result<HashMap<(String, String), Vec<f32>>> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(HashMap::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let cache: CacheFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line(),
        reason: e.to_string(),
    })?;
    if cache.format_version != CACHE_VERSION || cache.model_id != model_id {
        return Ok(HashMap::new());
    }
    Ok(cache
        .entries
        .into_iter()
        .map(|e| ((e.doc_id, e.text_hash), e.vector))
        .collect())
}

impl GroundingCorpus {
    /// Embeds every document, reusing vectors from `cache` whose document
    /// text is unchanged, and rewrites the cache when anything was embedded.
    pub fn build(
        docs: &[Document],
        embedder: &dyn EmbeddingProvider,
        cache: Option<&Path>,
        batch_size: usize,
    ) -> Result<(Self, BuildStats)> {
        let cached = match cache {
            Some(p) => load_cache(p, embedder.model_id())?,
            None => HashMap::new(),
        };
        let texts: Vec<String> = docs
            .iter()
            .map(|d| entry_text(&d.title, &d.first_sentence))
            .collect();
        let hashes: Vec<String> = texts.iter().map(|t| text_hash(t)).collect();

        let mut vectors: Vec<Option<Vec<f32>>> = docs
            .iter()
            .zip(&hashes)
            .map(|(d, h)| cached.get(&(d.doc_id.clone(), h.clone())).cloned())
            .collect();
        let missing: Vec<usize> = (0..docs.len()).filter(|&i| vectors[i].is_none()).collect();
        let stats = BuildStats {
            embedded: missing.len(),
            reused: docs.len() - missing.len(),
        };
        for chunk in missing.chunks(batch_size.max(1)) {
            let batch: Vec<String> = chunk.iter().map(|&i| texts[i].clone()).collect();
            let embedded = embed_normalized(embedder, &batch)?;
            for (&i, v) in chunk.iter().zip(embedded) {
                vectors[i] = Some(v);
            }
        }

        let mut hasher = Sha256::new();
        for h in &hashes {
            hasher.update(h.as_bytes());
        }
        let corpus = GroundingCorpus {
            model_id: embedder.model_id().to_string(),
            corpus_hash: hex::encode(hasher.finalize()),
            entries: docs
                .iter()
                .zip(vectors)
                .map(|(d, v)| GroundingEntry {
                    doc_id: d.doc_id.clone(),
                    title: d.title.clone(),
                    first_sentence: d.first_sentence.clone(),
                    vector: v.expect("every entry embedded"),
                })
                .collect(),
        };
        if let Some(path) = cache {
            if stats.embedded > 0 || !path.exists() {
                corpus.save_cache(path, &hashes)?;
            }
        }
        corpus.check_dimensions()?;
        Ok((corpus, stats))
    }

    fn save_cache(&self, path: &Path, hashes: &[String]) -> Result<()> {
        let file = CacheFile {
            format_version: CACHE_VERSION,
            model_id: self.model_id.clone(),
            corpus_hash: self.corpus_hash.clone(),
            entries: self
                .entries
                .iter()
                .zip(hashes)
                .map(|(e, h)| CacheEntry {
                    doc_id: e.doc_id.clone(),
                    text_hash: h.clone(),
                    vector: e.vector.clone(),
                })
                .collect(),
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let tmp = path.with_extension("tmp");
        let json = serde_json::to_vec(&file).expect("cache serializes");
        std::fs::write(&tmp, json).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    fn check_dimensions(&self) -> Result<()> {
        let mut dims = self.entries.iter().map(|e| e.vector.len());
        if let Some(first) = dims.next() {
            if dims.any(|d| d != first) {
                return Err(Error::Provider("embeddings differ in dimension".into()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Exhaustive cosine search; ties broken by doc id ascending.
    pub fn nearest(&self, query: &[f32], k: usize) -> Vec<Neighbor> {
        let mut scored: Vec<Neighbor> = self
            .entries
            .par_iter()
            .enumerate()
            .map(|(i, e)| Neighbor {
                entry: i,
                cosine: cosine(query, &e.vector),
            })
            .collect();
        scored.sort_by(|a, b| {
            b.cosine
                .total_cmp(&a.cosine)
                .then_with(|| self.entries[a.entry].doc_id.cmp(&self.entries[b.entry].doc_id))
        });
        scored.truncate(k);
        scored
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub entry: usize,
    pub cosine: f64,
}

/// Dot product of unit vectors, accumulated in f64.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| f64::from(*x) * f64::from(*y))
        .sum()
}

/// Embeds and unit-normalizes a batch, checking the provider's output shape.
pub fn embed_normalized(embedder: &dyn EmbeddingProvider, texts: &[String]) -> Result<Vec<Vec<f32>>> {
    if texts.is_empty() {
        return Ok(Vec::new());
    }
    let mut vectors = embedder.embed(texts)?;
    if vectors.len() != texts.len() {
        return Err(Error::Provider(format!(
            "embedding provider returned {} vectors for {} texts",
            vectors.len(),
            texts.len()
        )));
    }
    for v in &mut vectors {
        normalize(v)?;
    }
    Ok(vectors)
}
