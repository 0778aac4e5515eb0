//! Language-model grounded retrieval.
//!
//! A chat model proposes `(title, description)` concepts for a conversation.
//! Each concept is embedded, matched against the embedded corpus entries by
//! cosine similarity, and the chat model then picks which of the `k` nearest
//! entries (if any) names the same concept. Grounded documents are returned in
//! generation order.

pub mod grounding;
pub mod mock;
pub mod prompt;
pub mod provider;

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::Retriever;
use crate::model::ScoredDoc;

pub use grounding::{cosine, entry_text, BuildStats, GroundingCorpus, GroundingEntry, Neighbor};
pub use prompt::{parse_candidates, parse_choice, Choice, PromptTemplates};
pub use provider::{
    ChatMessage, CompletionParams, EmbeddingProvider, LlmProvider, RetryPolicy, Retrying, Role,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedCandidate {
    /// 1-based position among the parsed candidates.
    pub rank_in_generation: usize,
    pub title: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmgrConfig {
    /// Maximum number of generated candidates, and of returned documents.
    pub n: usize,
    /// Corpus entries shown to the grounding prompt per candidate.
    pub k: usize,
    pub generation: CompletionParams,
    pub grounding: CompletionParams,
    /// Upper bound on candidates grounded in parallel.
    pub concurrency: usize,
    pub templates: PromptTemplates,
}

impl Default for LmgrConfig {
    fn default() -> Self {
        LmgrConfig {
            n: 20,
            k: 5,
            generation: CompletionParams {
                temperature: 0.7,
                max_tokens: 1024,
            },
            grounding: CompletionParams {
                temperature: 0.0,
                max_tokens: 16,
            },
            concurrency: 4,
            templates: PromptTemplates::default(),
        }
    }
}

impl LmgrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidArgument("n must be >= 1".into()));
        }
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be >= 1".into()));
        }
        if self.concurrency == 0 {
            return Err(Error::InvalidArgument("concurrency must be >= 1".into()));
        }
        Ok(())
    }
}

fn chat(
    llm: &dyn LlmProvider,
    (system, user): (String, String),
    params: &CompletionParams,
) -> Result<String> {
    llm.complete(&[ChatMessage::system(system), ChatMessage::user(user)], params)
}

/// Asks the model for up to `n` candidates and parses its answer.
pub fn generate_candidates(
    llm: &dyn LlmProvider,
    templates: &PromptTemplates,
    conversation: &str,
    n: usize,
    params: &CompletionParams,
) -> Result<Vec<GeneratedCandidate>> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    let answer = chat(llm, templates.generation(conversation, n), params)?;
    Ok(parse_candidates(&answer)
        .into_iter()
        .take(n)
        .enumerate()
        .map(|(i, (title, description))| GeneratedCandidate {
            rank_in_generation: i + 1,
            title,
            description,
        })
        .collect())
}

/// Nearest `k` corpus entries to the candidate's `"title. description"` text.
pub fn retrieve_for_candidate(
    embedder: &dyn EmbeddingProvider,
    corpus: &GroundingCorpus,
    candidate: &GeneratedCandidate,
    k: usize,
) -> Result<Vec<Neighbor>> {
    let text = entry_text(&candidate.title, &candidate.description);
    let query = grounding::embed_normalized(embedder, &[text])?
        .pop()
        .expect("one vector per text");
    Ok(corpus.nearest(&query, k))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "doc_id", rename_all = "snake_case")]
pub enum Outcome {
    Grounded(String),
    Rejected,
    /// The answer was not understood; the nearest entry was taken.
    Fallback(String),
    /// No corpus entries to choose from.
    NoOptions,
}

impl Outcome {
    pub fn doc_id(&self) -> Option<&str> {
        match self {
            Outcome::Grounded(d) | Outcome::Fallback(d) => Some(d),
            Outcome::Rejected | Outcome::NoOptions => None,
        }
    }
}

/// Lets the model choose among `options` for `candidate`.
pub fn ground(
    llm: &dyn LlmProvider,
    templates: &PromptTemplates,
    params: &CompletionParams,
    candidate: &GeneratedCandidate,
    options: &[&GroundingEntry],
) -> Result<(Outcome, String)> {
    if options.is_empty() {
        return Ok((Outcome::NoOptions, String::new()));
    }
    let listed: Vec<(&str, &str)> = options
        .iter()
        .map(|e| (e.title.as_str(), e.first_sentence.as_str()))
        .collect();
    let prompt = templates.grounding(&candidate.title, &candidate.description, &listed);
    let answer = chat(llm, prompt, params)?;
    let outcome = match parse_choice(&answer, options.len()) {
        Choice::Option(i) => Outcome::Grounded(options[i].doc_id.clone()),
        Choice::None => Outcome::Rejected,
        Choice::Unparseable => {
            log::warn!(
                "unparseable grounding answer {:?} for {:?}; using nearest entry {}",
                answer,
                candidate.title,
                options[0].doc_id
            );
            Outcome::Fallback(options[0].doc_id.clone())
        }
    };
    Ok((outcome, answer))
}

/// Record of how one candidate was handled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateTrace {
    pub candidate: GeneratedCandidate,
    pub neighbors: Vec<(String, f64)>,
    pub answer: String,
    pub outcome: Outcome,
    /// Generation rank of an earlier candidate grounded to the same document.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duplicate_of: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmgrOutput {
    pub ranked: Vec<ScoredDoc>,
    pub trace: Vec<CandidateTrace>,
}

pub struct Lmgr {
    llm: Arc<dyn LlmProvider>,
    embedder: Arc<dyn EmbeddingProvider>,
    corpus: Arc<GroundingCorpus>,
    config: LmgrConfig,
    pool: rayon::ThreadPool,
}

impl Lmgr {
    pub fn new(
        llm: Arc<dyn LlmProvider>,
        embedder: Arc<dyn EmbeddingProvider>,
        corpus: Arc<GroundingCorpus>,
        config: LmgrConfig,
    ) -> Result<Self> {
        config.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.concurrency)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
        Ok(Lmgr {
            llm,
            embedder,
            corpus,
            config,
            pool,
        })
    }

    pub fn config(&self) -> &LmgrConfig {
        &self.config
    }

    pub fn corpus(&self) -> &GroundingCorpus {
        &self.corpus
    }

    fn handle(&self, candidate: GeneratedCandidate) -> Result<CandidateTrace> {
        let neighbors = retrieve_for_candidate(&*self.embedder, &self.corpus, &candidate, self.config.k)?;
        let options: Vec<&GroundingEntry> = neighbors.iter().map(|n| &self.corpus.entries[n.entry]).collect();
        let (outcome, answer) = ground(
            &*self.llm,
            &self.config.templates,
            &self.config.grounding,
            &candidate,
            &options,
        )?;
        Ok(CandidateTrace {
            neighbors: options
                .iter()
                .zip(&neighbors)
                .map(|(e, n)| (e.doc_id.clone(), n.cosine))
                .collect(),
            candidate,
            answer,
            outcome,
            duplicate_of: None,
        })
    }

    /// Full pipeline for one conversation text. The returned list holds one
    /// document per surviving candidate in generation order, without
    /// duplicates, scored `1/rank`.
    pub fn retrieve_traced(&self, conversation: &str) -> Result<LmgrOutput> {
        let candidates = generate_candidates(
            &*self.llm,
            &self.config.templates,
            conversation,
            self.config.n,
            &self.config.generation,
        )?;
        let mut trace: Vec<CandidateTrace> = self
            .pool
            .install(|| candidates.into_par_iter().map(|c| self.handle(c)).collect::<Result<_>>())?;

        let mut first_rank: std::collections::HashMap<String, usize> = Default::default();
        let mut ranked = Vec::new();
        for t in &mut trace {
            let Some(doc) = t.outcome.doc_id() else { continue };
            if let Some(&earlier) = first_rank.get(doc) {
                t.duplicate_of = Some(earlier);
                continue;
            }
            first_rank.insert(doc.to_string(), t.candidate.rank_in_generation);
            let rank = ranked.len() + 1;
            ranked.push(ScoredDoc {
                doc_id: doc.to_string(),
                score: 1.0 / rank as f64,
            });
        }
        ranked.truncate(self.config.n);
        Ok(LmgrOutput { ranked, trace })
    }
}

impl Retriever for Lmgr {
    fn retrieve(&self, context: &str, k: usize) -> Result<Vec<ScoredDoc>> {
        let mut ranked = self.retrieve_traced(context)?.ranked;
        ranked.truncate(k);
        Ok(ranked)
    }
}
