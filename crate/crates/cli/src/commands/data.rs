use std::path::PathBuf;

use clap::Args;
use proact_core::harness::{make_policy_training_pairs, sparse_qrels};
use proact_core::index::{Bm25Index, Bm25Params};
use proact_core::ingest::{
    build_conversations, compute_stats, make_splits, HeuristicLanguageId, RawThread, SplitConfig, TitleIndex,
};
use proact_core::model::{Conversation, Document};
use proact_core::{io, Error, Result};
use serde_json::json;

use super::{load_conversations, write_json};
use crate::config::require_path;
use crate::Context;

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Raw threads, one JSON object per line.
    #[arg(long)]
    threads: PathBuf,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 20)]
    test_min_score: i64,
    #[arg(long, default_value_t = 4165)]
    dev_size: usize,
    #[arg(long, default_value_t = 100)]
    test_size: usize,
    #[arg(long, default_value_t = 3385)]
    future_dev_size: usize,
}

pub fn ingest(ctx: &mut Context, a: IngestArgs) -> Result<()> {
    let corpus = require_path(a.corpus, &ctx.config.paths.corpus, "corpus")?;
    let mut titles = TitleIndex::default();
    for (i, doc) in io::read_corpus(&corpus)?.enumerate() {
        let doc = doc.map_err(|e| Error::Parse {
            path: corpus.display().to_string(),
            line: e.line,
            reason: e.reason,
        })?;
        titles.add(&doc.title, &doc.doc_id);
        if (i + 1) % 1_000_000 == 0 {
            log::info!("indexed {} titles", i + 1);
        }
    }
    let mut threads = Vec::new();
    let mut malformed = 0usize;
    for t in io::read_records::<RawThread>(&a.threads)? {
        match t {
            Ok(t) => threads.push(t),
            Err(e) => {
                log::warn!("{}: {e}", a.threads.display());
                malformed += 1;
            }
        }
    }
    let (conversations, report) = build_conversations(&threads, &titles, &HeuristicLanguageId::default());
    let cfg = SplitConfig {
        dev_size: a.dev_size,
        test_size: a.test_size,
        future_dev_size: a.future_dev_size,
        test_min_score: a.test_min_score,
        seed: a.seed.unwrap_or(ctx.config.seed),
    };
    io::write_jsonl(&a.out.join("conversations.jsonl"), &conversations)?;
    let splits = make_splits(conversations, &cfg)?;
    for (name, split) in [
        ("train", &splits.train),
        ("dev", &splits.dev),
        ("future_dev", &splits.future_dev),
        ("test", &splits.test),
    ] {
        io::write_jsonl(&a.out.join(format!("{name}.jsonl")), split)?;
    }
    let summary = json!({
        "report": report,
        "malformed_lines": malformed,
        "splits": {
            "train": splits.train.len(),
            "dev": splits.dev.len(),
            "future_dev": splits.future_dev.len(),
            "test": splits.test.len(),
            "dropped": splits.dropped,
        },
        "config": cfg,
    });
    write_json(&a.out.join("ingest_report.json"), &summary)?;
    let text = format!(
        "threads {} (accepted {}, malformed lines {})\nconversations {}\ntrain {}  dev {}  future_dev {}  test {}  dropped {}\n",
        report.threads,
        report.accepted_threads,
        malformed,
        report.conversations,
        splits.train.len(),
        splits.dev.len(),
        splits.future_dev.len(),
        splits.test.len(),
        splits.dropped
    );
    ctx.out.emit(&text, &summary);
    Ok(())
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    #[arg(long)]
    split: PathBuf,
}

pub fn stats(ctx: &mut Context, a: StatsArgs) -> Result<()> {
    let convs = load_conversations(&a.split)?;
    let stats = compute_stats(&convs);
    let text = serde_json::to_string_pretty(&stats).expect("stats serialize") + "\n";
    ctx.out.emit(&text, &stats);
    Ok(())
}

#[derive(Args, Debug)]
pub struct IndexBuildArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    k1: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
}

pub fn index_build(ctx: &mut Context, a: IndexBuildArgs) -> Result<()> {
    let corpus = require_path(a.corpus, &ctx.config.paths.corpus, "corpus")?;
    let params = Bm25Params::new(
        a.k1.unwrap_or(ctx.config.bm25.k1),
        a.b.unwrap_or(ctx.config.bm25.b),
    )?;
    let docs: Vec<Document> = io::read_all(&corpus)?;
    let index = Bm25Index::build(docs, params)?;
    index.save(&a.out)?;
    let meta = index.meta();
    let summary = json!({
        "documents": meta.doc_count,
        "terms": index.term_count(),
        "avg_doc_length": meta.avg_doc_length,
        "k1": params.k1,
        "b": params.b,
        "out": a.out,
    });
    let text = format!(
        "indexed {} documents, {} terms -> {}\n",
        meta.doc_count,
        index.term_count(),
        a.out.display()
    );
    ctx.out.emit(&text, &summary);
    Ok(())
}

#[derive(Args, Debug)]
pub struct IndexSearchArgs {
    #[arg(long)]
    index: Option<PathBuf>,
    /// Text file with one query per line.
    #[arg(long, conflicts_with = "query")]
    query_file: Option<PathBuf>,
    #[arg(long)]
    query: Option<String>,
    #[arg(short, long, default_value_t = 100)]
    k: usize,
}

pub fn index_search(ctx: &mut Context, a: IndexSearchArgs) -> Result<()> {
    let dir = require_path(a.index, &ctx.config.paths.index, "index")?;
    let queries: Vec<String> = match (a.query_file, a.query) {
        (Some(p), _) => std::fs::read_to_string(&p)
            .map_err(|e| Error::io(&p, e))?
            .lines()
            .map(str::to_string)
            .filter(|l| !l.trim().is_empty())
            .collect(),
        (None, Some(q)) => vec![q],
        (None, None) => return Err(Error::InvalidArgument("--query-file or --query is required".into())),
    };
    if a.k == 0 {
        return Err(Error::InvalidArgument("-k must be >= 1".into()));
    }
    let index = Bm25Index::load(&dir)?;
    let mut text = String::new();
    let mut results = Vec::new();
    for (qi, q) in queries.iter().enumerate() {
        let hits = index.search(q, a.k);
        for (rank, h) in hits.iter().enumerate() {
            text.push_str(&format!("{}\t{}\t{}\t{}\n", qi + 1, rank + 1, h.doc_id, h.score));
        }
        results.push(json!({ "query": q, "hits": hits }));
    }
    ctx.out.emit(&text, &results);
    Ok(())
}

#[derive(Args, Debug)]
pub struct PairsArgs {
    #[arg(long)]
    conversations: Option<PathBuf>,
    /// Qrels to take positives from; defaults to the conversations' own links.
    #[arg(long)]
    qrels: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

pub fn pairs(ctx: &mut Context, a: PairsArgs) -> Result<()> {
    let path = require_path(a.conversations, &ctx.config.paths.conversations, "conversations")?;
    let convs: Vec<Conversation> = load_conversations(&path)?;
    let qrels = match a.qrels.or_else(|| ctx.config.paths.qrels.clone()) {
        Some(p) => io::read_qrels(&p)?,
        None => sparse_qrels(&convs)?,
    };
    let pairs = make_policy_training_pairs(&convs, &qrels, a.seed.unwrap_or(ctx.config.seed))?;
    io::write_jsonl(&a.out, &pairs)?;
    let positives = pairs.iter().filter(|p| p.label).count();
    let summary = json!({ "pairs": pairs.len(), "positives": positives, "out": a.out });
    ctx.out.emit(
        &format!("{} pairs ({} positive) -> {}\n", pairs.len(), positives, a.out.display()),
        &summary,
    );
    Ok(())
}
