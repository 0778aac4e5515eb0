//! Reactive ranking metrics and the proactive pDCG / ipDCG / npDCG family.
//!
//! All logarithms are base 2. Gains are linear in the grade unless
//! [`GainMode::Exponential`] is selected for reactive nDCG.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Conversation, ConversationQrels, Grade, Qrels, TurnRun};

/// Delay-penalized gain of a document shown at turn `shown` whose ideal turn is `ideal`.
///
/// Zero before the ideal turn, the full grade at it, and
/// `grade / log2(1 + shown - (ideal - 1))` afterwards.
pub fn rel_gain(grade: Grade, shown: u32, ideal: u32) -> f64 {
    if shown < ideal {
        return 0.0;
    }
    if shown == ideal {
        return grade.gain();
    }
    let delay = f64::from(shown - ideal) + 2.0;
    grade.gain() / delay.log2()
}

/// `sum_{j=1..min(k, len)} gain_j / log2(j + 1)`.
pub fn dcg(gains: &[f64], k: usize) -> f64 {
    gains
        .iter()
        .take(k)
        .enumerate()
        .map(|(j, g)| g / ((j + 2) as f64).log2())
        .sum()
}

/// Per-turn result lists of one conversation. Turns without a list are waits.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProactiveRun {
    turns: BTreeMap<u32, Vec<String>>,
}

impl ProactiveRun {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds the list shown after turn `turn`. A turn may be given once.
    pub fn push(&mut self, turn: u32, docs: Vec<String>) -> Result<()> {
        if turn < 1 {
            return Err(Error::validation("turn indices are 1-based"));
        }
        if self.turns.insert(turn, docs).is_some() {
            return Err(Error::validation(format!("more than one result list at turn {turn}")));
        }
        Ok(())
    }

    pub fn from_turn_runs<'a>(runs: impl IntoIterator<Item = &'a TurnRun>) -> Result<Self> {
        let mut run = ProactiveRun::new();
        for tr in runs {
            run.push(tr.turn_index, tr.doc_ids().map(str::to_string).collect())?;
        }
        Ok(run)
    }

    pub fn last_turn(&self) -> Option<u32> {
        self.turns.keys().next_back().copied()
    }

    pub fn turns(&self) -> impl Iterator<Item = (u32, &[String])> {
        self.turns.iter().map(|(t, d)| (*t, d.as_slice()))
    }

    pub fn validate(&self, m: u32) -> Result<()> {
        match self.last_turn() {
            Some(t) if t > m => Err(Error::validation(format!(
                "result list at turn {t} but the conversation has {m} turns"
            ))),
            _ => Ok(()),
        }
    }
}

fn grade_of(qrels: Option<&ConversationQrels>, doc: &str) -> Option<(Grade, u32)> {
    qrels
        .and_then(|q| q.get(doc))
        .map(|e| (e.grade, e.ideal_turn))
}

/// Proactive DCG: mean DCG over engagements, where each list is first
/// stripped of documents shown at earlier engagements, then cut at `k`.
/// Returns 0 when the run never engages.
pub fn pdcg(run: &ProactiveRun, qrels: Option<&ConversationQrels>, m: u32, k: usize) -> Result<f64> {
    run.validate(m)?;
    let mut shown: HashSet<&str> = HashSet::new();
    let mut total = 0.0;
    let mut engagements = 0usize;
    for (turn, docs) in run.turns() {
        if docs.is_empty() {
            continue;
        }
        engagements += 1;
        let gains: Vec<f64> = docs
            .iter()
            .filter(|d| !shown.contains(d.as_str()))
            .take(k)
            .map(|d| match grade_of(qrels, d) {
                Some((g, ideal)) => rel_gain(g, turn, ideal),
                None => 0.0,
            })
            .collect();
        total += dcg(&gains, k);
        shown.extend(docs.iter().map(String::as_str));
    }
    Ok(if engagements == 0 {
        0.0
    } else {
        total / engagements as f64
    })
}

/// The run of the ideal model: at every turn `i <= m` it shows all documents
/// with grade >= 1 and ideal turn `i`, by grade descending then doc id.
pub fn ideal_run(qrels: Option<&ConversationQrels>, m: u32) -> ProactiveRun {
    let mut by_turn: BTreeMap<u32, Vec<(Grade, &str)>> = BTreeMap::new();
    for (doc, e) in qrels.into_iter().flatten() {
        if e.grade >= Grade::PARTIAL && e.ideal_turn <= m {
            by_turn.entry(e.ideal_turn).or_default().push((e.grade, doc));
        }
    }
    let mut run = ProactiveRun::new();
    for (turn, mut docs) in by_turn {
        docs.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        run.turns
            .insert(turn, docs.into_iter().map(|(_, d)| d.to_string()).collect());
    }
    run
}

/// pDCG of [`ideal_run`], normalized by the ideal model's own engagement count.
pub fn ipdcg(qrels: Option<&ConversationQrels>, m: u32, k: usize) -> f64 {
    let ideal = ideal_run(qrels, m);
    pdcg(&ideal, qrels, m, k).expect("ideal run stays within m")
}

/// `pdcg / ipdcg`; `None` when there is nothing relevant to retrieve.
pub fn npdcg(
    run: &ProactiveRun,
    qrels: Option<&ConversationQrels>,
    m: u32,
    k: usize,
) -> Result<Option<f64>> {
    let ideal = ipdcg(qrels, m, k);
    let system = pdcg(run, qrels, m, k)?;
    Ok(if ideal > 0.0 { Some(system / ideal) } else { None })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GainMode {
    #[default]
    Linear,
    Exponential,
}

impl GainMode {
    fn gain(self, grade: Grade) -> f64 {
        match self {
            GainMode::Linear => grade.gain(),
            GainMode::Exponential => 2f64.powi(i32::from(grade.value())) - 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReactiveOptions {
    pub cutoffs: Vec<usize>,
    pub gain: GainMode,
    /// Minimum grade counted as relevant by MRR, MAP and Recall.
    pub relevant_from: Grade,
}

impl ReactiveOptions {
    pub fn new(cutoffs: Vec<usize>) -> Self {
        ReactiveOptions {
            cutoffs,
            gain: GainMode::Linear,
            relevant_from: Grade::PARTIAL,
        }
    }
}

/// Per-conversation and mean metric values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Metric names in column order.
    pub metrics: Vec<String>,
    pub cutoffs: Vec<usize>,
    pub per_conversation: BTreeMap<String, BTreeMap<String, f64>>,
    /// Conversations without relevant documents, excluded from means.
    pub undefined: Vec<String>,
    pub mean: BTreeMap<String, f64>,
}

impl MetricReport {
    fn assemble(
        metrics: Vec<String>,
        cutoffs: Vec<usize>,
        rows: Vec<(String, Option<Vec<f64>>)>,
    ) -> Self {
        let mut per_conversation = BTreeMap::new();
        let mut undefined = Vec::new();
        for (conv, values) in rows {
            match values {
                Some(v) => {
                    per_conversation.insert(conv, metrics.iter().cloned().zip(v).collect());
                }
                None => undefined.push(conv),
            }
        }
        undefined.sort();
        let mut mean = BTreeMap::new();
        if !per_conversation.is_empty() {
            let n = per_conversation.len() as f64;
            for name in &metrics {
                let sum: f64 = per_conversation
                    .values()
                    .map(|row: &BTreeMap<String, f64>| row[name])
                    .sum();
                mean.insert(name.clone(), sum / n);
            }
        }
        MetricReport {
            metrics,
            cutoffs,
            per_conversation,
            undefined,
            mean,
        }
    }

    pub fn values(&self, metric: &str) -> Vec<(&str, f64)> {
        self.per_conversation
            .iter()
            .filter_map(|(c, row)| row.get(metric).map(|v| (c.as_str(), *v)))
            .collect()
    }

    /// Tab-separated table: header, one row per conversation, then a `mean` row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("conversation");
        for m in &self.metrics {
            out.push('\t');
            out.push_str(m);
        }
        out.push('\n');
        for (conv, row) in &self.per_conversation {
            out.push_str(conv);
            for m in &self.metrics {
                out.push_str(&format!("\t{:.4}", row[m]));
            }
            out.push('\n');
        }
        out.push_str("mean");
        for m in &self.metrics {
            match self.mean.get(m) {
                Some(v) => out.push_str(&format!("\t{v:.4}")),
                None => out.push_str("\tundefined"),
            }
        }
        out.push('\n');
        out
    }
}

fn check_cutoffs(cutoffs: &[usize]) -> Result<()> {
    if cutoffs.is_empty() || cutoffs.contains(&0) {
        return Err(Error::InvalidArgument(
            "cutoffs must be a non-empty list of positive integers".into(),
        ));
    }
    Ok(())
}

/// Reactive metrics for one ranked list; `None` if nothing is relevant.
pub fn reactive_row(
    ranked: &[&str],
    qrels: Option<&ConversationQrels>,
    opts: &ReactiveOptions,
) -> Option<Vec<f64>> {
    let qrels = qrels?;
    let relevant_total = qrels
        .values()
        .filter(|e| e.grade >= opts.relevant_from)
        .count();
    let mut ideal: Vec<f64> = qrels.values().map(|e| opts.gain.gain(e.grade)).collect();
    ideal.sort_by(|a, b| b.total_cmp(a));
    if relevant_total == 0 || ideal.first().is_none_or(|g| *g <= 0.0) {
        return None;
    }
    let gains: Vec<f64> = ranked
        .iter()
        .map(|d| qrels.get(*d).map_or(0.0, |e| opts.gain.gain(e.grade)))
        .collect();
    let is_rel: Vec<bool> = ranked
        .iter()
        .map(|d| qrels.get(*d).is_some_and(|e| e.grade >= opts.relevant_from))
        .collect();

    let mut row = Vec::new();
    for &k in &opts.cutoffs {
        row.push(dcg(&gains, k) / dcg(&ideal, k));
    }
    let mrr = is_rel
        .iter()
        .position(|&r| r)
        .map_or(0.0, |p| 1.0 / (p + 1) as f64);
    row.push(mrr);
    let mut hits = 0usize;
    let mut ap = 0.0;
    for (i, &r) in is_rel.iter().enumerate() {
        if r {
            hits += 1;
            ap += hits as f64 / (i + 1) as f64;
        }
    }
    row.push(ap / relevant_total as f64);
    for &k in &opts.cutoffs {
        let found = is_rel.iter().take(k).filter(|&&r| r).count();
        row.push(found as f64 / relevant_total as f64);
    }
    Some(row)
}

pub fn reactive_metric_names(cutoffs: &[usize]) -> Vec<String> {
    let mut names: Vec<String> = cutoffs.iter().map(|k| format!("ndcg@{k}")).collect();
    names.push("mrr".into());
    names.push("map".into());
    names.extend(cutoffs.iter().map(|k| format!("recall@{k}")));
    names
}

/// Reactive evaluation. The latest-turn list of each conversation is the
/// system's answer; conversations in the qrels but absent from the run score 0.
pub fn reactive_metrics(runs: &[TurnRun], qrels: &Qrels, opts: &ReactiveOptions) -> Result<MetricReport> {
    check_cutoffs(&opts.cutoffs)?;
    let mut finals: HashMap<&str, &TurnRun> = HashMap::new();
    for r in runs {
        let slot = finals.entry(r.conversation_id.as_str()).or_insert(r);
        if r.turn_index > slot.turn_index {
            *slot = r;
        }
    }
    let convs: Vec<&str> = qrels.conversation_ids().collect();
    let rows: Vec<(String, Option<Vec<f64>>)> = convs
        .par_iter()
        .map(|c| {
            let ranked: Vec<&str> = finals
                .get(c)
                .map(|r| r.doc_ids().collect())
                .unwrap_or_default();
            (c.to_string(), reactive_row(&ranked, qrels.conversation(c), opts))
        })
        .collect();
    Ok(MetricReport::assemble(
        reactive_metric_names(&opts.cutoffs),
        opts.cutoffs.clone(),
        rows,
    ))
}

/// Proactive evaluation: npDCG@k per conversation.
///
/// `lengths` gives each conversation's turn count. Conversations missing from
/// it use the largest turn seen in the run or in their relevant qrels.
pub fn proactive_metrics(
    runs: &[TurnRun],
    qrels: &Qrels,
    lengths: &HashMap<String, u32>,
    cutoffs: &[usize],
) -> Result<MetricReport> {
    check_cutoffs(cutoffs)?;
    let mut grouped: BTreeMap<&str, Vec<&TurnRun>> = BTreeMap::new();
    for r in runs {
        grouped.entry(r.conversation_id.as_str()).or_default().push(r);
    }
    let convs: BTreeSet<&str> = qrels
        .conversation_ids()
        .chain(grouped.keys().copied())
        .collect();
    let convs: Vec<&str> = convs.into_iter().collect();
    let rows: Result<Vec<(String, Option<Vec<f64>>)>> = convs
        .par_iter()
        .map(|c| {
            let run = ProactiveRun::from_turn_runs(grouped.get(c).into_iter().flatten().copied())
                .map_err(|e| Error::validation(format!("conversation {c}: {e}")))?;
            let q = qrels.conversation(c);
            let m = match lengths.get(*c) {
                Some(m) => *m,
                None => {
                    let from_qrels = q
                        .into_iter()
                        .flatten()
                        .filter(|(_, e)| e.grade >= Grade::PARTIAL)
                        .map(|(_, e)| e.ideal_turn)
                        .max();
                    run.last_turn().max(from_qrels).unwrap_or(1)
                }
            };
            let mut row = Vec::with_capacity(cutoffs.len());
            for &k in cutoffs {
                match npdcg(&run, q, m, k)
                    .map_err(|e| Error::validation(format!("conversation {c}: {e}")))?
                {
                    Some(v) => row.push(v),
                    None => return Ok((c.to_string(), None)),
                }
            }
            Ok((c.to_string(), Some(row)))
        })
        .collect();
    Ok(MetricReport::assemble(
        cutoffs.iter().map(|k| format!("npdcg@{k}")).collect(),
        cutoffs.to_vec(),
        rows?,
    ))
}

/// Turn counts keyed by conversation id.
pub fn conversation_lengths<'a>(convs: impl IntoIterator<Item = &'a Conversation>) -> HashMap<String, u32> {
    convs
        .into_iter()
        .map(|c| (c.id.clone(), c.len() as u32))
        .collect()
}
