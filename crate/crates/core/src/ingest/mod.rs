//! Corpus construction from raw discussion threads.
//!
//! Threads are filtered and cleaned ([`filter`]), expanded into linear
//! reply chains ([`chains`]), their Wikipedia links resolved against the
//! corpus ([`links`]), and finally split ([`splits`]) and summarised ([`stats`]).

pub mod chains;
pub mod filter;
pub mod links;
pub mod splits;
pub mod stats;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::Conversation;

pub use chains::{chain_to_draft, sample_nested_chains, DraftConversation};
pub use filter::{filter_thread, FilteredThread, HeuristicLanguageId, LanguagePredicate, Rejection};
pub use links::{map_links, LinkRejection, TitleIndex};
pub use splits::{make_splits, SplitConfig, Splits};
pub use stats::{compute_stats, MeanStd, SplitStats};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawPost {
    pub id: String,
    pub subreddit: String,
    pub title: String,
    #[serde(default)]
    pub body: String,
    pub author: String,
    pub created_at: i64,
    #[serde(default)]
    pub score: i64,
    #[serde(default)]
    pub nsfw: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawComment {
    pub id: String,
    /// Id of the post or of another comment.
    pub parent: String,
    pub author: String,
    pub body: String,
    pub created_at: i64,
}

/// A post with its comment tree, as found in public dumps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawThread {
    pub post: RawPost,
    #[serde(default)]
    pub comments: Vec<RawComment>,
}

impl crate::io::Record for RawThread {
    fn check(&self) -> Result<()> {
        Ok(())
    }
}

/// Counts of what happened to each thread during ingestion.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub threads: usize,
    pub accepted_threads: usize,
    pub rejected_threads: BTreeMap<String, usize>,
    pub chains: usize,
    pub rejected_chains: BTreeMap<String, usize>,
    pub conversations: usize,
}

/// Runs filter, chain sampling and link mapping over every thread.
///
/// Threads are processed in parallel; the output keeps input order.
pub fn build_conversations(
    threads: &[RawThread],
    titles: &TitleIndex,
    lang: &dyn LanguagePredicate,
) -> (Vec<Conversation>, IngestReport) {
    let per_thread: Vec<std::result::Result<Vec<std::result::Result<Conversation, LinkRejection>>, Rejection>> =
        threads
            .par_iter()
            .map(|t| {
                let filtered = filter_thread(t, lang)?;
                Ok(sample_nested_chains(&filtered)
                    .iter()
                    .map(|chain| map_links(chain_to_draft(&filtered, chain), titles))
                    .collect())
            })
            .collect();

    let mut report = IngestReport {
        threads: threads.len(),
        ..Default::default()
    };
    let mut out = Vec::new();
    for result in per_thread {
        match result {
            Err(r) => *report.rejected_threads.entry(r.kind().to_string()).or_default() += 1,
            Ok(chains) => {
                report.accepted_threads += 1;
                for c in chains {
                    report.chains += 1;
                    match c {
                        Ok(conv) => out.push(conv),
                        Err(r) => *report.rejected_chains.entry(r.kind().to_string()).or_default() += 1,
                    }
                }
            }
        }
    }
    report.conversations = out.len();
    (out, report)
}
