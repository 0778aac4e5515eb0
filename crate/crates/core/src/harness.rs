//! Reactive and proactive run generation.
//!
//! Reactive mode issues one query per conversation built from the whole
//! conversation. Proactive mode streams turns through a [`DecisionPolicy`]
//! and retrieves, with the prefix up to the current turn, whenever the
//! policy engages.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{tokenize, Bm25Index};
use crate::metrics::MetricReport;
use crate::model::{Conversation, Grade, Qrel, Qrels, ScoredDoc, TurnRun, Utterance};

/// Anything that maps a context text to a ranked list.
pub trait Retriever: Send + Sync {
    fn retrieve(&self, context: &str, k: usize) -> Result<Vec<ScoredDoc>>;
}

impl Retriever for Bm25Index {
    fn retrieve(&self, context: &str, k: usize) -> Result<Vec<ScoredDoc>> {
        Ok(self.search(context, k))
    }
}

impl<R: Retriever + ?Sized> Retriever for Arc<R> {
    fn retrieve(&self, context: &str, k: usize) -> Result<Vec<ScoredDoc>> {
        (**self).retrieve(context, k)
    }
}

/// What a policy may look at when deciding on turn `current`.
#[derive(Debug, Clone, Copy)]
pub struct TurnView<'a> {
    pub conversation_id: &'a str,
    pub title: &'a str,
    /// Utterances `1..i-1`.
    pub history: &'a [Utterance],
    pub current: &'a Utterance,
}

/// Decides, turn by turn, whether to retrieve.
pub trait DecisionPolicy: Send + Sync {
    fn decide(&self, view: &TurnView<'_>) -> bool;
}

/// Retrieval context: the title followed by each utterance on its own line.
pub fn context_text(title: &str, utterances: &[Utterance]) -> String {
    let mut out = String::from(title);
    for u in utterances {
        out.push('\n');
        out.push_str(&u.text);
    }
    out
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        Err(Error::InvalidArgument("cutoff k must be >= 1".into()))
    } else {
        Ok(())
    }
}

fn to_turn_run(conv: &Conversation, turn: u32, mut ranked: Vec<ScoredDoc>, k: usize, tag: &str) -> Result<TurnRun> {
    ranked.truncate(k);
    TurnRun::new(conv.id.clone(), turn, ranked, tag)
        .map_err(|e| Error::validation(format!("retriever output for {}: {e}", conv.id)))
}

/// One result list per conversation at its last turn.
pub fn run_reactive(
    retriever: &dyn Retriever,
    conversations: &[Conversation],
    k: usize,
    tag: &str,
) -> Result<Vec<TurnRun>> {
    check_k(k)?;
    let runs: Result<Vec<TurnRun>> = conversations
        .par_iter()
        .map(|c| {
            let ranked = retriever.retrieve(&context_text(&c.title, &c.utterances), k)?;
            to_turn_run(c, c.len() as u32, ranked, k, tag)
        })
        .collect();
    Ok(runs?.into_iter().filter(|r| !r.is_wait()).collect())
}

/// Result lists at the turns where the policy engages. Documents repeated
/// across turns are left in place; the proactive metric discounts them.
pub fn run_proactive(
    policy: &dyn DecisionPolicy,
    retriever: &dyn Retriever,
    conversations: &[Conversation],
    k: usize,
    tag: &str,
) -> Result<Vec<TurnRun>> {
    check_k(k)?;
    let per_conv: Result<Vec<Vec<TurnRun>>> = conversations
        .par_iter()
        .map(|c| proactive_conversation(policy, retriever, c, k, tag))
        .collect();
    Ok(per_conv?.into_iter().flatten().collect())
}

fn proactive_conversation(
    policy: &dyn DecisionPolicy,
    retriever: &dyn Retriever,
    conv: &Conversation,
    k: usize,
    tag: &str,
) -> Result<Vec<TurnRun>> {
    let mut out = Vec::new();
    for (i, current) in conv.utterances.iter().enumerate() {
        let view = TurnView {
            conversation_id: &conv.id,
            title: &conv.title,
            history: &conv.utterances[..i],
            current,
        };
        if !policy.decide(&view) {
            continue;
        }
        let ranked = retriever.retrieve(&context_text(&conv.title, &conv.utterances[..=i]), k)?;
        let run = to_turn_run(conv, current.turn_index, ranked, k, tag)?;
        if !run.is_wait() {
            out.push(run);
        }
    }
    Ok(out)
}

pub struct AlwaysPolicy;

impl DecisionPolicy for AlwaysPolicy {
    fn decide(&self, _: &TurnView<'_>) -> bool {
        true
    }
}

pub struct NeverPolicy;

impl DecisionPolicy for NeverPolicy {
    fn decide(&self, _: &TurnView<'_>) -> bool {
        false
    }
}

/// Engages when an externally computed score for the turn exceeds `tau`.
/// Turns without a score never engage.
pub struct ThresholdPolicy {
    scores: HashMap<(String, u32), f64>,
    tau: f64,
}

impl ThresholdPolicy {
    pub fn new(scores: HashMap<(String, u32), f64>, tau: f64) -> Self {
        ThresholdPolicy { scores, tau }
    }
}

impl DecisionPolicy for ThresholdPolicy {
    fn decide(&self, view: &TurnView<'_>) -> bool {
        self.scores
            .get(&(view.conversation_id.to_string(), view.current.turn_index))
            .is_some_and(|s| *s > self.tau)
    }
}

/// Engages when the current utterance's top-1 BM25 score, divided by its
/// number of unique query terms, exceeds `tau`. No hits means no engagement.
pub struct LexicalPolicy {
    index: Arc<Bm25Index>,
    tau: f64,
}

impl LexicalPolicy {
    pub fn new(index: Arc<Bm25Index>, tau: f64) -> Self {
        LexicalPolicy { index, tau }
    }

    pub fn score(&self, text: &str) -> Option<f64> {
        let terms = tokenize(text);
        let unique = terms.iter().collect::<HashSet<_>>().len();
        let top = self.index.search_terms(&terms, 1);
        top.first().map(|d| d.score / unique as f64)
    }
}

impl DecisionPolicy for LexicalPolicy {
    fn decide(&self, view: &TurnView<'_>) -> bool {
        self.score(&view.current.text).is_some_and(|s| s > self.tau)
    }
}

/// Sparse labels: every linked document is relevant from the turn it was linked.
pub fn sparse_qrels(conversations: &[Conversation]) -> Result<Qrels> {
    let mut qrels = Qrels::new();
    for c in conversations {
        for link in &c.wiki_links {
            qrels.insert(Qrel {
                conversation_id: c.id.clone(),
                doc_id: link.doc_id.clone(),
                grade: Grade::RELEVANT,
                ideal_turn: link.turn_index,
            })?;
        }
    }
    Ok(qrels)
}

/// One classifier training example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyExample {
    pub conversation_id: String,
    pub turn: u32,
    /// Title and utterances before `turn`.
    pub history: String,
    pub utterance: String,
    pub label: bool,
}

fn example(conv: &Conversation, turn: u32, label: bool) -> PolicyExample {
    let i = turn as usize - 1;
    PolicyExample {
        conversation_id: conv.id.clone(),
        turn,
        history: context_text(&conv.title, &conv.utterances[..i]),
        utterance: conv.utterances[i].text.clone(),
        label,
    }
}

/// Balanced training pairs: every positive utterance (one that is the ideal
/// turn of a relevant document) followed by one uniformly sampled negative
/// utterance from the same split.
///
/// Negatives are sampled without replacement when there are enough of them.
pub fn make_policy_training_pairs(
    conversations: &[Conversation],
    qrels: &Qrels,
    seed: u64,
) -> Result<Vec<PolicyExample>> {
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for (ci, c) in conversations.iter().enumerate() {
        let ideal: HashSet<u32> = qrels
            .conversation(&c.id)
            .into_iter()
            .flatten()
            .filter(|(_, e)| e.grade >= Grade::PARTIAL)
            .map(|(_, e)| e.ideal_turn)
            .collect();
        for u in &c.utterances {
            if ideal.contains(&u.turn_index) {
                positives.push((ci, u.turn_index));
            } else {
                negatives.push((ci, u.turn_index));
            }
        }
    }
    if positives.is_empty() {
        return Ok(Vec::new());
    }
    if negatives.is_empty() {
        return Err(Error::Insufficient(
            "no negative utterances available for balanced sampling".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<usize> = if negatives.len() >= positives.len() {
        let mut p = index::sample(&mut rng, negatives.len(), positives.len()).into_vec();
        p.shuffle(&mut rng);
        p
    } else {
        (0..positives.len())
            .map(|_| rng.gen_range(0..negatives.len()))
            .collect()
    };
    let mut out = Vec::with_capacity(positives.len() * 2);
    for (&(ci, turn), &neg) in positives.iter().zip(&picks) {
        out.push(example(&conversations[ci], turn, true));
        let (nci, nturn) = negatives[neg];
        out.push(example(&conversations[nci], nturn, false));
    }
    Ok(out)
}

/// Two-sided paired sign-flip permutation test on per-conversation values.
///
/// Small samples (`2^n <= iterations`) are enumerated exactly; larger ones
/// use `iterations` random sign vectors and the `(hits + 1) / (iterations + 1)`
/// estimate.
pub fn paired_permutation_test(a: &[f64], b: &[f64], iterations: usize, seed: u64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n == 0 {
        return Ok(1.0);
    }
    let deltas: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let observed = (deltas.iter().sum::<f64>() / n as f64).abs();
    let tolerance = 1e-12 * observed.max(1.0);
    let extreme = |signs: &mut dyn FnMut(usize) -> bool| {
        let s: f64 = deltas
            .iter()
            .enumerate()
            .map(|(i, d)| if signs(i) { -d } else { *d })
            .sum();
        (s / n as f64).abs() >= observed - tolerance
    };

    if n < 63 && (1u64 << n) <= iterations as u64 {
        let total = 1u64 << n;
        let hits = (0..total)
            .filter(|mask| extreme(&mut |i| mask >> i & 1 == 1))
            .count();
        return Ok(hits as f64 / total as f64);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..iterations {
        let flips: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
        if extreme(&mut |i| flips[i]) {
            hits += 1;
        }
    }
    Ok((hits + 1) as f64 / (iterations + 1) as f64)
}

/// Values of `metric` for conversations present in both reports, ordered by id.
pub fn paired_values(a: &MetricReport, b: &MetricReport, metric: &str) -> (Vec<f64>, Vec<f64>) {
    let bv: HashMap<&str, f64> = b.values(metric).into_iter().collect();
    a.values(metric)
        .into_iter()
        .filter_map(|(c, x)| bv.get(c).map(|y| (x, *y)))
        .unzip()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::Bm25Params;
    use crate::model::Document;

    fn conv(id: &str, texts: &[&str]) -> Conversation {
        Conversation {
            id: id.into(),
            category: "c".into(),
            title: format!("title {id}"),
            utterances: texts
                .iter()
                .enumerate()
                .map(|(i, t)| Utterance::new(i as u32 + 1, "a", *t).unwrap())
                .collect(),
            wiki_links: vec![],
            post_id: None,
            created_at: None,
            score: None,
        }
    }

    fn index() -> Arc<Bm25Index> {
        let docs = vec![
            Document::new("d1", "Rust", "Rust is a programming language.").unwrap(),
            Document::new("d2", "Python", "Python is a programming language.").unwrap(),
            Document::new("d3", "Coffee", "Coffee is a drink.").unwrap(),
        ];
        Arc::new(Bm25Index::build(docs, Bm25Params::default()).unwrap())
    }

    #[test]
    fn single_utterance_context() {
        let c = conv("c", &["only turn"]);
        assert_eq!(context_text(&c.title, &c.utterances), "title c\nonly turn");
    }

    #[test]
    fn reactive_equals_direct_search() {
        let idx = index();
        let convs = vec![conv("c1", &["I like rust", "and coffee"])];
        let runs = run_reactive(&*idx, &convs, 2, "bm25").unwrap();
        assert_eq!(runs.len(), 1);
        assert_eq!(runs[0].turn_index, 2);
        assert_eq!(runs[0].ranked, idx.search("title c1\nI like rust\nand coffee", 2));
    }

    #[test]
    fn zero_k_rejected() {
        let idx = index();
        assert!(run_reactive(&*idx, &[], 0, "t").is_err());
        assert!(run_proactive(&AlwaysPolicy, &*idx, &[], 0, "t").is_err());
    }

    #[test]
    fn always_and_never() {
        let idx = index();
        let convs = vec![conv("c1", &["rust", "python", "coffee"])];
        let always = run_proactive(&AlwaysPolicy, &*idx, &convs, 3, "t").unwrap();
        assert_eq!(always.iter().map(|r| r.turn_index).collect::<Vec<_>>(), [1, 2, 3]);
        let never = run_proactive(&NeverPolicy, &*idx, &convs, 3, "t").unwrap();
        assert!(never.is_empty());
    }

    #[test]
    fn always_last_turn_matches_reactive() {
        let idx = index();
        let convs = vec![conv("c1", &["rust", "python", "coffee"])];
        let pro = run_proactive(&AlwaysPolicy, &*idx, &convs, 3, "t").unwrap();
        let re = run_reactive(&*idx, &convs, 3, "t").unwrap();
        assert_eq!(pro.last().unwrap(), &re[0]);
    }

    #[test]
    fn threshold_policy() {
        let idx = index();
        let convs = vec![conv("c1", &["rust", "python", "coffee", "rust again"])];
        let scores: HashMap<_, _> = [(1, 0.2), (2, 0.9), (3, 0.5), (4, 0.51)]
            .into_iter()
            .map(|(t, s)| (("c1".to_string(), t), s))
            .collect();
        let p = ThresholdPolicy::new(scores.clone(), 0.5);
        let runs = run_proactive(&p, &*idx, &convs, 3, "t").unwrap();
        assert_eq!(runs.iter().map(|r| r.turn_index).collect::<Vec<_>>(), [2, 4]);

        let all = run_proactive(&ThresholdPolicy::new(scores.clone(), f64::NEG_INFINITY), &*idx, &convs, 3, "t").unwrap();
        assert_eq!(all, run_proactive(&AlwaysPolicy, &*idx, &convs, 3, "t").unwrap());
        let none = run_proactive(&ThresholdPolicy::new(scores, f64::INFINITY), &*idx, &convs, 3, "t").unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn lexical_policy_without_hits_waits() {
        let p = LexicalPolicy::new(index(), f64::NEG_INFINITY);
        let c = conv("c", &["zzz qqq", "rust"]);
        let view = |i: usize| TurnView {
            conversation_id: "c",
            title: "",
            history: &c.utterances[..i],
            current: &c.utterances[i],
        };
        assert!(!p.decide(&view(0)));
        assert!(p.decide(&view(1)));
    }

    #[test]
    fn training_pairs_balanced_and_deterministic() {
        let mut c1 = conv("c1", &["a", "b", "c", "d"]);
        c1.wiki_links = vec![crate::model::WikiLink { doc_id: "x".into(), turn_index: 2 }];
        let mut c2 = conv("c2", &["e", "f", "g"]);
        c2.wiki_links = vec![
            crate::model::WikiLink { doc_id: "y".into(), turn_index: 1 },
            crate::model::WikiLink { doc_id: "z".into(), turn_index: 3 },
        ];
        let convs = vec![c1, c2];
        let q = sparse_qrels(&convs).unwrap();
        let pairs = make_policy_training_pairs(&convs, &q, 5).unwrap();
        assert_eq!(pairs.len(), 6);
        assert_eq!(pairs.iter().filter(|p| p.label).count(), 3);
        for pair in pairs.chunks(2) {
            assert!(pair[0].label && !pair[1].label);
        }
        assert_eq!(pairs, make_policy_training_pairs(&convs, &q, 5).unwrap());
    }

    #[test]
    fn training_pairs_need_negatives() {
        let mut c = conv("c", &["a"]);
        c.wiki_links = vec![crate::model::WikiLink { doc_id: "x".into(), turn_index: 1 }];
        let convs = vec![c];
        let q = sparse_qrels(&convs).unwrap();
        assert!(matches!(
            make_policy_training_pairs(&convs, &q, 1),
            Err(Error::Insufficient(_))
        ));
    }

    #[test]
    fn permutation_test_cases() {
        let a: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        assert_eq!(paired_permutation_test(&a, &a, 10_000, 1).unwrap(), 1.0);
        let b: Vec<f64> = a.iter().map(|x| x - 1.0).collect();
        assert!(paired_permutation_test(&a, &b, 10_000, 1).unwrap() <= 0.001);
        assert_eq!(paired_permutation_test(&[0.7], &[0.2], 10_000, 1).unwrap(), 1.0);
        assert!(paired_permutation_test(&[1.0], &[], 10, 1).is_err());
    }

    #[test]
    fn permutation_exact_enumeration() {
        // deltas 1, 1, 1: of 8 sign vectors only all-plus and all-minus reach |mean| = 1.
        let p = paired_permutation_test(&[1.0, 1.0, 1.0], &[0.0, 0.0, 0.0], 1000, 0).unwrap();
        assert_eq!(p, 0.25);
    }
}
