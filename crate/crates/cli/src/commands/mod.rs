pub mod annotation;
pub mod data;
pub mod evaluate;
pub mod retrieval;

use std::path::Path;

use proact_core::model::{Conversation, Document};
use proact_core::{io, Error, Result};

pub fn load_conversations(path: &Path) -> Result<Vec<Conversation>> {
    let convs: Vec<Conversation> = io::read_all(path)?;
    log::info!("read {} conversations from {}", convs.len(), path.display());
    Ok(convs)
}

pub fn load_corpus(path: &Path) -> Result<Vec<Document>> {
    let docs: Vec<Document> = io::read_all(path)?;
    log::info!("read {} documents from {}", docs.len(), path.display());
    Ok(docs)
}

/// Parses `5,20,100`.
pub fn parse_cutoffs(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .ok()
                .filter(|k| *k > 0)
                .ok_or_else(|| Error::InvalidArgument(format!("invalid cutoff {t:?} in {text:?}")))
        })
        .collect()
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let json = serde_json::to_vec_pretty(value).expect("report serializes");
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}
