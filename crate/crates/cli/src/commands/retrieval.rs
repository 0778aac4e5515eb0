use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, ValueEnum};
use proact_core::harness::{
    context_text, run_proactive, run_reactive, AlwaysPolicy, DecisionPolicy, LexicalPolicy, NeverPolicy, Retriever,
    ThresholdPolicy,
};
use proact_core::index::Bm25Index;
use proact_core::lmgr::mock::{MockEmbedder, MockLlm};
use proact_core::lmgr::{
    CandidateTrace, CompletionParams, EmbeddingProvider, GroundingCorpus, LlmProvider, Lmgr, LmgrConfig, RetryPolicy,
    Retrying,
};
use proact_core::model::TurnRun;
use proact_core::{io, Error, Result};
use proact_providers::{HttpChat, HttpEmbeddings};
use serde::Serialize;
use serde_json::json;

use super::{load_conversations, load_corpus};
use crate::config::require_path;
use crate::Context;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Reactive,
    Proactive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RetrieverKind {
    Bm25,
    Lmgr,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PolicyKind {
    Always,
    Never,
    /// Precomputed per-turn scores compared against `--tau`.
    Threshold,
    /// Best BM25 score of the current utterance compared against `--tau`.
    Lexical,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(value_enum)]
    mode: Mode,
    #[arg(long, value_enum, default_value_t = RetrieverKind::Bm25)]
    retriever: RetrieverKind,
    #[arg(long, value_enum, default_value_t = PolicyKind::Always)]
    policy: PolicyKind,
    #[arg(long)]
    tau: Option<f64>,
    /// TSV of `conversation_id turn score` used by the threshold policy.
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long)]
    conversations: Option<PathBuf>,
    #[arg(short, long, default_value_t = 20)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    index: Option<PathBuf>,
    /// Corpus for the lmgr retriever.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    tag: Option<String>,
}

pub fn run(ctx: &mut Context, a: RunArgs) -> Result<()> {
    let conv_path = require_path(a.conversations, &ctx.config.paths.conversations, "conversations")?;
    let convs = load_conversations(&conv_path)?;
    let mut index: Option<Arc<Bm25Index>> = None;
    let mut load_index = |ctx: &Context| -> Result<Arc<Bm25Index>> {
        if let Some(i) = &index {
            return Ok(i.clone());
        }
        let dir = require_path(a.index.clone(), &ctx.config.paths.index, "index")?;
        let i = Arc::new(Bm25Index::load(&dir)?);
        index = Some(i.clone());
        Ok(i)
    };
    let retriever: Box<dyn Retriever> = match a.retriever {
        RetrieverKind::Bm25 => Box::new(load_index(ctx)?),
        RetrieverKind::Lmgr => {
            let corpus = require_path(a.corpus.clone(), &ctx.config.paths.corpus, "corpus")?;
            let settings = LmgrSettings::from_config(ctx, None, None, None, false);
            Box::new(build_lmgr(ctx, &corpus, &settings)?)
        }
    };
    let default_tag = match a.retriever {
        RetrieverKind::Bm25 => "bm25",
        RetrieverKind::Lmgr => "lmgr",
    };
    let tag = a.tag.clone().unwrap_or_else(|| match a.mode {
        Mode::Reactive => default_tag.to_string(),
        Mode::Proactive => format!("{default_tag}-{}", format!("{:?}", a.policy).to_lowercase()),
    });
    let runs = match a.mode {
        Mode::Reactive => run_reactive(retriever.as_ref(), &convs, a.k, &tag)?,
        Mode::Proactive => {
            let tau = || {
                a.tau
                    .or(ctx.config.policy.tau)
                    .ok_or_else(|| Error::InvalidArgument("--tau is required for this policy".into()))
            };
            let policy: Box<dyn DecisionPolicy> = match a.policy {
                PolicyKind::Always => Box::new(AlwaysPolicy),
                PolicyKind::Never => Box::new(NeverPolicy),
                PolicyKind::Threshold => {
                    let scores = require_path(a.scores.clone(), &ctx.config.policy.scores, "scores")?;
                    Box::new(ThresholdPolicy::new(io::read_turn_scores(&scores)?, tau()?))
                }
                PolicyKind::Lexical => Box::new(LexicalPolicy::new(load_index(ctx)?, tau()?)),
            };
            run_proactive(policy.as_ref(), retriever.as_ref(), &convs, a.k, &tag)?
        }
    };
    io::write_run(&runs, &a.out)?;
    let summary = run_summary(&runs, convs.len(), &tag, &a.out);
    let text = format!(
        "{} result lists for {} conversations ({}) -> {}\n",
        runs.len(),
        convs.len(),
        tag,
        a.out.display()
    );
    ctx.out.emit(&text, &summary);
    Ok(())
}

fn run_summary(runs: &[TurnRun], conversations: usize, tag: &str, out: &Path) -> serde_json::Value {
    json!({
        "tag": tag,
        "conversations": conversations,
        "result_lists": runs.len(),
        "out": out,
    })
}

/// Resolved LMGR settings: flags over the config file.
pub struct LmgrSettings {
    pub n: usize,
    pub k: usize,
    pub cache: Option<PathBuf>,
    pub mock: bool,
}

impl LmgrSettings {
    fn from_config(ctx: &Context, n: Option<usize>, k: Option<usize>, cache: Option<PathBuf>, mock: bool) -> Self {
        let section = &ctx.config.lmgr;
        LmgrSettings {
            n: n.unwrap_or(section.n),
            k: k.unwrap_or(section.k),
            cache: cache.or_else(|| section.embedding_cache.clone()),
            mock: mock || ctx.mock_providers,
        }
    }
}

fn providers(ctx: &Context, mock: bool) -> Result<(Arc<dyn LlmProvider>, Arc<dyn EmbeddingProvider>)> {
    let section = &ctx.config.lmgr;
    if mock {
        log::info!("using mock language model and embedding providers");
        return Ok((
            Arc::new(MockLlm::new(section.templates.clone())),
            Arc::new(MockEmbedder::default()),
        ));
    }
    let retry = RetryPolicy {
        max_retries: section.max_retries,
        initial_backoff: Duration::from_millis(500),
    };
    let chat = HttpChat::new(section.chat.clone())?;
    let embed = HttpEmbeddings::new(section.embedding.clone(), section.embedding_batch)?;
    Ok((
        Arc::new(Retrying::new(chat, retry)),
        Arc::new(Retrying::new(embed, retry)),
    ))
}

pub fn build_lmgr(ctx: &Context, corpus: &Path, s: &LmgrSettings) -> Result<Lmgr> {
    let section = &ctx.config.lmgr;
    let (llm, embedder) = providers(ctx, s.mock)?;
    let docs = load_corpus(corpus)?;
    let (grounding, stats) =
        GroundingCorpus::build(&docs, embedder.as_ref(), s.cache.as_deref(), section.embedding_batch)?;
    log::info!(
        "grounding corpus ready: {} embedded, {} reused from cache",
        stats.embedded,
        stats.reused
    );
    let defaults = LmgrConfig::default();
    let config = LmgrConfig {
        n: s.n,
        k: s.k,
        generation: CompletionParams {
            temperature: section.generation_temperature,
            ..defaults.generation
        },
        concurrency: section.concurrency,
        templates: section.templates.clone(),
        ..defaults
    };
    Lmgr::new(llm, embedder, Arc::new(grounding), config)
}

#[derive(Args, Debug)]
pub struct LmgrArgs {
    #[arg(long)]
    conversations: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Number of generated candidates.
    #[arg(short, long)]
    n: Option<usize>,
    /// Corpus entries offered per candidate.
    #[arg(short, long)]
    k: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Offline providers, same as the global `--mock-providers`.
    #[arg(long)]
    mock: bool,
    /// JSONL file receiving one trace record per conversation.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    embedding_cache: Option<PathBuf>,
    #[arg(long, default_value = "lmgr")]
    tag: String,
}

#[derive(Serialize)]
struct TraceRecord<'a> {
    conversation_id: &'a str,
    candidates: &'a [CandidateTrace],
}

pub fn lmgr(ctx: &mut Context, a: LmgrArgs) -> Result<()> {
    let conv_path = require_path(a.conversations, &ctx.config.paths.conversations, "conversations")?;
    let corpus = require_path(a.corpus, &ctx.config.paths.corpus, "corpus")?;
    let settings = LmgrSettings::from_config(ctx, a.n, a.k, a.embedding_cache, a.mock);
    let convs = load_conversations(&conv_path)?;
    let lmgr = build_lmgr(ctx, &corpus, &settings)?;
    let mut runs = Vec::with_capacity(convs.len());
    let mut traces = Vec::new();
    let mut grounded = 0usize;
    for c in &convs {
        let output = lmgr.retrieve_traced(&context_text(&c.title, &c.utterances))?;
        grounded += output.ranked.len();
        let run = TurnRun::new(c.id.clone(), c.len() as u32, output.ranked, &a.tag)
            .map_err(|e| Error::validation(format!("lmgr output for {}: {e}", c.id)))?;
        if !run.is_wait() {
            runs.push(run);
        }
        if a.trace.is_some() {
            traces.push((c.id.clone(), output.trace));
        }
    }
    io::write_run(&runs, &a.out)?;
    if let Some(path) = &a.trace {
        let records: Vec<TraceRecord<'_>> = traces
            .iter()
            .map(|(id, t)| TraceRecord {
                conversation_id: id,
                candidates: t,
            })
            .collect();
        io::write_jsonl(path, &records)?;
    }
    let summary = json!({
        "conversations": convs.len(),
        "grounded_documents": grounded,
        "out": a.out,
        "trace": a.trace,
    });
    ctx.out.emit(
        &format!(
            "{} conversations, {} grounded documents -> {}\n",
            convs.len(),
            grounded,
            a.out.display()
        ),
        &summary,
    );
    Ok(())
}
