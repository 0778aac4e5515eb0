//! Tokenizer, inverted index and BM25 ranked retrieval.
//!
//! Documents are indexed as `title + " " + text`. Query-side term frequency
//! is ignored: each unique query term contributes once, so whole
//! conversations can be used as queries.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Document, ScoredDoc};

/// Lowercases and splits on non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc_ordinal: u32,
    pub term_frequency: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn new(k1: f64, b: f64) -> Result<Self> {
        if k1.is_nan() || k1 <= 0.0 || !(0.0..=1.0).contains(&b) {
            return Err(Error::InvalidArgument(format!(
                "BM25 parameters require k1 > 0 and 0 <= b <= 1, got k1={k1} b={b}"
            )));
        }
        Ok(Bm25Params { k1, b })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexMeta {
    pub doc_count: usize,
    pub avg_doc_length: f64,
    pub doc_lengths: Vec<u32>,
    pub params: Bm25Params,
}

/// BM25 inverse document frequency, always positive.
pub fn idf(doc_count: usize, doc_freq: usize) -> f64 {
    let n = doc_count as f64;
    let df = doc_freq as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

/// Saturated, length-normalized term frequency component.
pub fn tf_component(tf: u32, doc_len: u32, avg_doc_len: f64, params: Bm25Params) -> f64 {
    let tf = f64::from(tf);
    let norm = if avg_doc_len > 0.0 {
        1.0 - params.b + params.b * f64::from(doc_len) / avg_doc_len
    } else {
        1.0
    };
    tf * (params.k1 + 1.0) / (tf + params.k1 * norm)
}

/// An immutable inverted index. Safe to query from many threads.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    doc_ids: Vec<String>,
    terms: HashMap<String, u32>,
    postings: Vec<Vec<Posting>>,
    meta: IndexMeta,
}

const FORMAT_VERSION: u32 = 1;
const SHARD_SIZE: usize = 4096;

#[derive(Serialize, Deserialize)]
struct MetaFile {
    format_version: u32,
    doc_count: usize,
    term_count: usize,
    avg_doc_length: f64,
    k1: f64,
    b: f64,
}

impl Bm25Index {
    pub fn build<I>(docs: I, params: Bm25Params) -> Result<Self>
    where
        I: IntoIterator<Item = Document>,
    {
        let mut doc_ids = Vec::new();
        let mut seen = HashSet::new();
        let mut texts = Vec::new();
        for d in docs {
            if !seen.insert(d.doc_id.clone()) {
                return Err(Error::validation(format!("duplicate doc_id {}", d.doc_id)));
            }
            texts.push(format!("{} {}", d.title, d.text));
            doc_ids.push(d.doc_id);
        }

        // Shards are tokenized in parallel and merged in ordinal order, so the
        // result does not depend on scheduling.
        let shards: Vec<Vec<(u32, HashMap<String, u32>)>> = texts
            .par_chunks(SHARD_SIZE)
            .map(|chunk| {
                chunk
                    .iter()
                    .map(|text| {
                        let tokens = tokenize(text);
                        let len = tokens.len() as u32;
                        let mut tf: HashMap<String, u32> = HashMap::new();
                        for t in tokens {
                            *tf.entry(t).or_default() += 1;
                        }
                        (len, tf)
                    })
                    .collect()
            })
            .collect();

        let mut terms: HashMap<String, u32> = HashMap::new();
        let mut postings: Vec<Vec<Posting>> = Vec::new();
        let mut doc_lengths = Vec::with_capacity(doc_ids.len());
        let mut ordinal = 0u32;
        for shard in shards {
            for (len, tf) in shard {
                doc_lengths.push(len);
                let mut entries: Vec<_> = tf.into_iter().collect();
                entries.sort_unstable();
                for (term, count) in entries {
                    let next_id = postings.len() as u32;
                    let id = *terms.entry(term).or_insert(next_id);
                    if id == next_id {
                        postings.push(Vec::new());
                    }
                    postings[id as usize].push(Posting {
                        doc_ordinal: ordinal,
                        term_frequency: count,
                    });
                }
                ordinal += 1;
            }
        }
        let meta = IndexMeta {
            doc_count: doc_ids.len(),
            avg_doc_length: mean_len(&doc_lengths),
            doc_lengths,
            params,
        };
        Ok(Bm25Index {
            doc_ids,
            terms,
            postings,
            meta,
        })
    }

    pub fn meta(&self) -> &IndexMeta {
        &self.meta
    }

    pub fn doc_id(&self, ordinal: u32) -> &str {
        &self.doc_ids[ordinal as usize]
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.terms
            .get(term)
            .map(|&id| self.postings[id as usize].as_slice())
            .unwrap_or(&[])
    }

    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    /// Top-`k` documents by BM25; ties broken by doc id ascending.
    pub fn search(&self, query: &str, k: usize) -> Vec<ScoredDoc> {
        self.search_terms(&tokenize(query), k)
    }

    pub fn search_terms(&self, query_terms: &[String], k: usize) -> Vec<ScoredDoc> {
        if k == 0 {
            return Vec::new();
        }
        let unique: HashSet<&str> = query_terms.iter().map(String::as_str).collect();
        let mut unique: Vec<&str> = unique.into_iter().collect();
        // Fixed accumulation order keeps scores bit-identical across runs.
        unique.sort_unstable();
        let mut acc: HashMap<u32, f64> = HashMap::new();
        let n = self.meta.doc_count;
        for term in unique {
            let plist = self.postings(term);
            if plist.is_empty() {
                continue;
            }
            let w = idf(n, plist.len());
            for p in plist {
                let len = self.meta.doc_lengths[p.doc_ordinal as usize];
                *acc.entry(p.doc_ordinal).or_default() +=
                    w * tf_component(p.term_frequency, len, self.meta.avg_doc_length, self.meta.params);
            }
        }
        let mut hits: Vec<(u32, f64)> = acc.into_iter().collect();
        let cmp = |a: &(u32, f64), b: &(u32, f64)| -> Ordering {
            b.1.total_cmp(&a.1)
                .then_with(|| self.doc_ids[a.0 as usize].cmp(&self.doc_ids[b.0 as usize]))
        };
        if hits.len() > k {
            hits.select_nth_unstable_by(k - 1, cmp);
            hits.truncate(k);
        }
        hits.sort_unstable_by(cmp);
        hits.into_iter()
            .map(|(ord, score)| ScoredDoc::new(self.doc_ids[ord as usize].clone(), score))
            .collect()
    }

    /// Writes the index as plain text files under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = MetaFile {
            format_version: FORMAT_VERSION,
            doc_count: self.meta.doc_count,
            term_count: self.terms.len(),
            avg_doc_length: self.meta.avg_doc_length,
            k1: self.meta.params.k1,
            b: self.meta.params.b,
        };
        let meta_path = dir.join("meta.json");
        let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
        std::fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))?;

        let docs_path = dir.join("docs.tsv");
        let mut w = BufWriter::new(File::create(&docs_path).map_err(|e| Error::io(&docs_path, e))?);
        for (id, len) in self.doc_ids.iter().zip(&self.meta.doc_lengths) {
            writeln!(w, "{id}\t{len}").map_err(|e| Error::io(&docs_path, e))?;
        }
        w.flush().map_err(|e| Error::io(&docs_path, e))?;

        let post_path = dir.join("postings.tsv");
        let mut w = BufWriter::new(File::create(&post_path).map_err(|e| Error::io(&post_path, e))?);
        let mut terms: Vec<(&String, &u32)> = self.terms.iter().collect();
        terms.sort_unstable();
        for (term, &id) in terms {
            write!(w, "{term}").map_err(|e| Error::io(&post_path, e))?;
            for p in &self.postings[id as usize] {
                write!(w, "\t{}:{}", p.doc_ordinal, p.term_frequency)
                    .map_err(|e| Error::io(&post_path, e))?;
            }
            writeln!(w).map_err(|e| Error::io(&post_path, e))?;
        }
        w.flush().map_err(|e| Error::io(&post_path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta.json");
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: MetaFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: meta_path.display().to_string(),
            line: e.line(),
            reason: e.to_string(),
        })?;
        if meta.format_version != FORMAT_VERSION {
            return Err(Error::validation(format!(
                "unsupported index format version {} (expected {FORMAT_VERSION})",
                meta.format_version
            )));
        }
        let params = Bm25Params::new(meta.k1, meta.b)?;

        let bad = |path: &Path, line: usize, reason: &str| Error::Parse {
            path: path.display().to_string(),
            line,
            reason: reason.to_string(),
        };

        let docs_path = dir.join("docs.tsv");
        let mut doc_ids = Vec::with_capacity(meta.doc_count);
        let mut doc_lengths = Vec::with_capacity(meta.doc_count);
        let f = File::open(&docs_path).map_err(|e| Error::io(&docs_path, e))?;
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&docs_path, e))?;
            let (id, len) = line
                .split_once('\t')
                .ok_or_else(|| bad(&docs_path, i + 1, "expected doc_id<TAB>length"))?;
            doc_ids.push(id.to_string());
            doc_lengths.push(len.parse().map_err(|_| bad(&docs_path, i + 1, "invalid length"))?);
        }
        if doc_ids.len() != meta.doc_count {
            return Err(Error::validation("docs.tsv does not match meta.json doc_count"));
        }

        let post_path = dir.join("postings.tsv");
        let mut terms = HashMap::with_capacity(meta.term_count);
        let mut postings = Vec::with_capacity(meta.term_count);
        let f = File::open(&post_path).map_err(|e| Error::io(&post_path, e))?;
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&post_path, e))?;
            let mut fields = line.split('\t');
            let term = fields.next().unwrap_or_default().to_string();
            let mut plist = Vec::new();
            for f in fields {
                let (ord, tf) = f
                    .split_once(':')
                    .ok_or_else(|| bad(&post_path, i + 1, "expected ordinal:tf"))?;
                let p = Posting {
                    doc_ordinal: ord.parse().map_err(|_| bad(&post_path, i + 1, "invalid ordinal"))?,
                    term_frequency: tf.parse().map_err(|_| bad(&post_path, i + 1, "invalid tf"))?,
                };
                if p.doc_ordinal as usize >= doc_ids.len() {
                    return Err(bad(&post_path, i + 1, "ordinal out of range"));
                }
                plist.push(p);
            }
            terms.insert(term, postings.len() as u32);
            postings.push(plist);
        }
        Ok(Bm25Index {
            doc_ids,
            terms,
            postings,
            meta: IndexMeta {
                doc_count: meta.doc_count,
                avg_doc_length: mean_len(&doc_lengths),
                doc_lengths,
                params,
            },
        })
    }
}

fn mean_len(lengths: &[u32]) -> f64 {
    if lengths.is_empty() {
        0.0
    } else {
        lengths.iter().map(|&l| f64::from(l)).sum::<f64>() / lengths.len() as f64
    }
}
