//! Judgment pools, label aggregation, agreement, and qrels export.

use std::collections::{BTreeMap, HashSet};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::Record;
use crate::model::{Conversation, EvidenceSpan, Grade, Judgment, Qrel, Qrels, TurnRun};

/// Documents pooled for one conversation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub conversation_id: String,
    pub doc_ids: Vec<String>,
    pub source_runs: Vec<String>,
}

impl PoolEntry {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        if let Some(dup) = self.doc_ids.iter().find(|d| !seen.insert(*d)) {
            return Err(Error::validation(format!(
                "pool for {} lists {dup} twice",
                self.conversation_id
            )));
        }
        Ok(())
    }
}

impl Record for PoolEntry {
    fn check(&self) -> Result<()> {
        self.validate()
    }
}

/// Unions the top `depth` documents of each run's final-turn list per
/// conversation.
///
/// `runs` is visited in the given order; within a run file, each run tag
/// is a separate run in first-seen order. Pool documents keep their
/// first-seen order and pools are sorted by conversation id.
pub fn build_pools(runs: &[Vec<TurnRun>], depth: usize) -> Result<Vec<PoolEntry>> {
    if depth == 0 {
        return Err(Error::InvalidArgument("pool depth must be >= 1".into()));
    }
    let mut pools: BTreeMap<&str, PoolEntry> = BTreeMap::new();
    for file in runs {
        let mut tags: Vec<&str> = Vec::new();
        for r in file {
            if !tags.contains(&r.run_tag.as_str()) {
                tags.push(&r.run_tag);
            }
        }
        for tag in tags {
            let mut last: BTreeMap<&str, &TurnRun> = BTreeMap::new();
            for r in file.iter().filter(|r| r.run_tag == tag && !r.ranked.is_empty()) {
                let slot = last.entry(&r.conversation_id).or_insert(r);
                if r.turn_index > slot.turn_index {
                    *slot = r;
                }
            }
            for (conv, r) in last {
                let entry = pools.entry(conv).or_insert_with(|| PoolEntry {
                    conversation_id: conv.to_string(),
                    doc_ids: Vec::new(),
                    source_runs: Vec::new(),
                });
                if !entry.source_runs.iter().any(|t| t == tag) {
                    entry.source_runs.push(tag.to_string());
                }
                for d in r.ranked.iter().take(depth) {
                    if !entry.doc_ids.contains(&d.doc_id) {
                        entry.doc_ids.push(d.doc_id.clone());
                    }
                }
            }
        }
    }
    Ok(pools.into_values().collect())
}

/// Final grade from one pair's labels.
///
/// A strict majority wins. Otherwise, if labels of 1 or above hold a strict
/// majority, the highest label given is assigned (for three raters this is
/// the `{2,1,0}` split, resolved to 2). Any remaining split goes to the most
/// frequent label, preferring the higher grade on ties.
pub fn aggregate_labels(labels: &[Grade]) -> Option<Grade> {
    if labels.is_empty() {
        return None;
    }
    let mut counts = [0usize; 3];
    for g in labels {
        counts[g.value() as usize] += 1;
    }
    let n = labels.len();
    if let Some(g) = (0..3).find(|&g| 2 * counts[g] > n) {
        return Some(Grade::ALL[g]);
    }
    if 2 * (counts[1] + counts[2]) > n {
        return labels.iter().copied().max();
    }
    (0..3)
        .rev()
        .max_by_key(|&g| (counts[g], std::cmp::Reverse(2 - g)))
        .map(|g| Grade::ALL[g])
}

/// Fleiss' kappa over items rated into three categories.
///
/// Every item must have the same number of ratings, at least two. Returns
/// `None` when chance agreement is 1 (a single category used throughout).
pub fn fleiss_kappa(items: &[[usize; 3]]) -> Result<Option<f64>> {
    let Some(first) = items.first() else {
        return Ok(None);
    };
    let raters: usize = first.iter().sum();
    if raters < 2 {
        return Err(Error::InvalidArgument("fleiss kappa needs at least 2 ratings per item".into()));
    }
    if items.iter().any(|c| c.iter().sum::<usize>() != raters) {
        return Err(Error::InvalidArgument("fleiss kappa needs equal ratings per item".into()));
    }
    let n = raters as f64;
    let total = items.len() as f64 * n;
    let mut column = [0f64; 3];
    let mut p_bar = 0.0;
    for c in items {
        let agree: f64 = c.iter().map(|&x| (x * x) as f64).sum::<f64>() - n;
        p_bar += agree / (n * (n - 1.0));
        for j in 0..3 {
            column[j] += c[j] as f64;
        }
    }
    p_bar /= items.len() as f64;
    let p_e: f64 = column.iter().map(|c| (c / total).powi(2)).sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return Ok(None);
    }
    Ok(Some((p_bar - p_e) / (1.0 - p_e)))
}

/// Earliest evidence turn among judgments with label ≥ 1.
pub fn ideal_turn<'a>(judgments: impl IntoIterator<Item = &'a Judgment>) -> Option<u32> {
    judgments
        .into_iter()
        .filter(|j| j.label >= Grade::PARTIAL)
        .flat_map(|j| j.evidence.iter().map(|s| s.turn_index))
        .min()
}

static SENTENCE_END: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[.!?]+[\])'\x22]*\s+").unwrap());

/// Sentence extents of `text` as char offsets `(start, end)`, end exclusive
/// and excluding trailing whitespace.
pub fn sentence_bounds(text: &str) -> Vec<(usize, usize)> {
    let char_at = |byte: usize| text[..byte].chars().count();
    let mut out = Vec::new();
    let mut start = 0;
    let push = |out: &mut Vec<(usize, usize)>, from: usize, to: usize| {
        let piece = &text[from..to];
        let lead = piece.len() - piece.trim_start().len();
        let trimmed = piece.trim();
        if !trimmed.is_empty() {
            let s = char_at(from + lead);
            out.push((s, s + trimmed.chars().count()));
        }
    };
    for m in SENTENCE_END.find_iter(text) {
        push(&mut out, start, m.end());
        start = m.end();
    }
    push(&mut out, start, text.len());
    out
}

/// Widens a span to the sentences it touches.
pub fn snap_span(text: &str, span: EvidenceSpan) -> EvidenceSpan {
    let sentences = sentence_bounds(text);
    let containing = |pos: usize| sentences.iter().find(|(s, e)| *s <= pos && pos < *e);
    let start = containing(span.char_start).map_or(span.char_start, |(s, _)| *s);
    let end = span
        .char_end
        .checked_sub(1)
        .and_then(containing)
        .map_or(span.char_end, |(_, e)| *e);
    EvidenceSpan {
        char_start: start,
        char_end: end,
        ..span
    }
}

/// Snaps every span of `judgment` to sentence boundaries, merging spans
/// that end up overlapping within a turn.
pub fn snap_evidence(conversation: &Conversation, evidence: &[EvidenceSpan]) -> Vec<EvidenceSpan> {
    let mut snapped: Vec<EvidenceSpan> = evidence
        .iter()
        .map(|s| match conversation.utterance(s.turn_index) {
            Some(u) => snap_span(&u.text, *s),
            None => *s,
        })
        .collect();
    snapped.sort();
    let mut merged: Vec<EvidenceSpan> = Vec::with_capacity(snapped.len());
    for s in snapped {
        match merged.last_mut() {
            Some(last) if last.turn_index == s.turn_index && s.char_start <= last.char_end => {
                last.char_end = last.char_end.max(s.char_end);
            }
            _ => merged.push(s),
        }
    }
    merged
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IncompletePair {
    pub conversation_id: String,
    pub doc_id: String,
    pub judgments: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportReport {
    pub qrels: Qrels,
    pub incomplete: Vec<IncompletePair>,
    /// Relevant pairs whose ideal turn defaulted to 1 for lack of evidence.
    pub defaulted_ideal_turn: Vec<(String, String)>,
}

/// Aggregates judgments into qrels. Each worker counts once per pair (their
/// first judgment); pairs with fewer than `required` workers are reported
/// as incomplete and left out.
pub fn export_qrels(judgments: &[Judgment], required: usize) -> Result<ExportReport> {
    let mut by_pair: BTreeMap<(&str, &str), Vec<&Judgment>> = BTreeMap::new();
    for j in judgments {
        let pair = by_pair.entry((&j.conversation_id, &j.doc_id)).or_default();
        if !pair.iter().any(|p| p.worker_id == j.worker_id) {
            pair.push(j);
        }
    }
    let mut report = ExportReport {
        qrels: Qrels::default(),
        incomplete: Vec::new(),
        defaulted_ideal_turn: Vec::new(),
    };
    for ((conv, doc), js) in by_pair {
        if js.len() < required.max(1) {
            report.incomplete.push(IncompletePair {
                conversation_id: conv.to_string(),
                doc_id: doc.to_string(),
                judgments: js.len(),
            });
            continue;
        }
        let labels: Vec<Grade> = js.iter().map(|j| j.label).collect();
        let grade = aggregate_labels(&labels).expect("non-empty labels");
        let turn = if grade >= Grade::PARTIAL {
            ideal_turn(js.iter().copied()).unwrap_or_else(|| {
                log::warn!("{conv}/{doc} graded {grade} without evidence; ideal turn set to 1");
                report.defaulted_ideal_turn.push((conv.to_string(), doc.to_string()));
                1
            })
        } else {
            1
        };
        report.qrels.insert(Qrel::new(conv, doc, grade.value(), turn)?)?;
    }
    Ok(report)
}

/// Per-pair category counts for pairs with exactly `raters` workers.
pub fn rating_matrix(judgments: &[Judgment], raters: usize) -> Vec<[usize; 3]> {
    type Raters<'a> = (HashSet<&'a str>, [usize; 3]);
    let mut by_pair: BTreeMap<(&str, &str), Raters<'_>> = BTreeMap::new();
    for j in judgments {
        let (workers, counts) = by_pair.entry((&j.conversation_id, &j.doc_id)).or_default();
        if workers.insert(&j.worker_id) {
            counts[j.label.value() as usize] += 1;
        }
    }
    by_pair
        .into_values()
        .filter(|(w, _)| w.len() == raters)
        .map(|(_, c)| c)
        .collect()
}
