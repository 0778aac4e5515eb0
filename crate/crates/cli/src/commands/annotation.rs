use std::collections::HashSet;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::Args;
use proact_core::annotation::{AnnotationStore, StoreConfig, SystemClock};
use proact_core::model::Document;
use proact_core::pooling::{build_pools, fleiss_kappa, rating_matrix, PoolEntry};
use proact_core::{io, Error, Result};
use serde_json::json;

use super::load_conversations;
use crate::Context;

#[derive(Args, Debug)]
pub struct PoolArgs {
    /// Comma-separated run files; defaults to `paths.runs` from the config.
    #[arg(long, value_delimiter = ',')]
    runs: Vec<PathBuf>,
    #[arg(long, default_value_t = 10)]
    depth: usize,
    #[arg(long)]
    out: PathBuf,
}

pub fn pool(ctx: &mut Context, a: PoolArgs) -> Result<()> {
    let files = if a.runs.is_empty() {
        ctx.config.paths.runs.clone()
    } else {
        a.runs
    };
    if files.is_empty() {
        return Err(Error::InvalidArgument("--runs is required (or set paths.runs)".into()));
    }
    let runs = files.iter().map(|p| io::read_run(p)).collect::<Result<Vec<_>>>()?;
    let pools = build_pools(&runs, a.depth)?;
    io::write_jsonl(&a.out, &pools)?;
    let docs: usize = pools.iter().map(|p| p.doc_ids.len()).sum();
    let summary = json!({ "conversations": pools.len(), "pairs": docs, "out": a.out });
    ctx.out.emit(
        &format!(
            "{} conversations, {} pooled pairs -> {}\n",
            pools.len(),
            docs,
            a.out.display()
        ),
        &summary,
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct StoreArgs {
    #[arg(long)]
    pools: PathBuf,
    #[arg(long)]
    conversations: PathBuf,
    /// Corpus used for document titles and first sentences.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    replication: usize,
    #[arg(long, default_value_t = 30)]
    lease_minutes: u64,
}

/// Corpus documents that appear in some pool.
fn pooled_documents(corpus: &Path, pools: &[PoolEntry]) -> Result<Vec<Document>> {
    let wanted: HashSet<&str> = pools.iter().flat_map(|p| p.doc_ids.iter().map(String::as_str)).collect();
    let mut out = Vec::new();
    for doc in io::read_corpus(corpus)? {
        let doc = doc.map_err(|e| Error::Parse {
            path: corpus.display().to_string(),
            line: e.line,
            reason: e.reason,
        })?;
        if wanted.contains(doc.doc_id.as_str()) {
            out.push(doc);
        }
    }
    Ok(out)
}

fn open_store(s: &StoreArgs, data_dir: Option<&Path>) -> Result<AnnotationStore> {
    let pools: Vec<PoolEntry> = io::read_all(&s.pools)?;
    let conversations = load_conversations(&s.conversations)?;
    let documents = match &s.corpus {
        Some(c) => pooled_documents(c, &pools)?,
        None => Vec::new(),
    };
    let config = StoreConfig {
        replication: s.replication,
        lease: Duration::from_secs(s.lease_minutes * 60),
        ..StoreConfig::default()
    };
    AnnotationStore::open(pools, conversations, &documents, config, Box::new(SystemClock), data_dir)
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[command(flatten)]
    store: StoreArgs,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
    /// Directory with the annotation front end, served at `/`.
    #[arg(long)]
    ui: Option<PathBuf>,
}

pub fn serve(_ctx: &mut Context, a: ServeArgs) -> Result<()> {
    if a.store.data_dir.is_none() {
        log::warn!("no --data-dir given; judgments will not be persisted");
    }
    let store = Arc::new(open_store(&a.store, a.store.data_dir.as_deref())?);
    let app = proact_annotate::router(store.clone(), a.ui);
    let addr = SocketAddr::new(a.host, a.port);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::io("tokio runtime", e))?;
    runtime
        .block_on(proact_annotate::serve(addr, app))
        .map_err(|e| Error::io(addr.to_string(), e))?;
    if a.store.data_dir.is_some() {
        store.snapshot()?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[command(flatten)]
    store: StoreArgs,
    #[arg(long)]
    out: PathBuf,
}

pub fn export(ctx: &mut Context, a: ExportArgs) -> Result<()> {
    let dir = a
        .store
        .data_dir
        .clone()
        .ok_or_else(|| Error::InvalidArgument("--data-dir is required".into()))?;
    if !dir.is_dir() {
        return Err(Error::io(
            &dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "data directory does not exist"),
        ));
    }
    let store = open_store(&a.store, Some(&dir))?;
    let report = store.export()?;
    io::write_qrels(&report.qrels, &a.out)?;
    let kappa = fleiss_kappa(&rating_matrix(&store.judgments(), a.store.replication))?;
    for p in &report.incomplete {
        log::warn!(
            "{}/{} has {} of {} judgments; left out",
            p.conversation_id,
            p.doc_id,
            p.judgments,
            a.store.replication
        );
    }
    let summary = json!({
        "qrels": report.qrels.len(),
        "incomplete_pairs": report.incomplete,
        "defaulted_ideal_turn": report.defaulted_ideal_turn.len(),
        "fleiss_kappa": kappa,
        "out": a.out,
    });
    let kappa_text = kappa.map_or_else(|| "undefined".to_string(), |k| format!("{k:.4}"));
    let text = format!(
        "{} qrels -> {}\nincomplete pairs {}\ndefaulted ideal turns {}\nfleiss kappa {}\n",
        report.qrels.len(),
        a.out.display(),
        report.incomplete.len(),
        report.defaulted_ideal_turn.len(),
        kappa_text
    );
    ctx.out.emit(&text, &summary);
    Ok(())
}
