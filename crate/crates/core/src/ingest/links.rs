//! Resolution of Wikipedia link titles to corpus documents.

use std::collections::HashMap;

use super::chains::DraftConversation;
use crate::model::{Conversation, Document, WikiLink};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LinkRejection {
    /// The conversation mentions no Wikipedia article.
    NoLinks,
    /// A linked title is not in the corpus.
    Unresolved(String),
}

impl LinkRejection {
    pub fn kind(&self) -> &'static str {
        match self {
            LinkRejection::NoLinks => "no_links",
            LinkRejection::Unresolved(_) => "unresolved_link",
        }
    }
}

/// Canonical title form: underscores become spaces, whitespace collapsed.
pub fn normalize_title(title: &str) -> String {
    title
        .replace('_', " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Title lookup with an exact (case-preserving) map and a case-insensitive fallback.
#[derive(Debug, Clone, Default)]
pub struct TitleIndex {
    exact: HashMap<String, String>,
    folded: HashMap<String, String>,
}

impl TitleIndex {
    pub fn new<'a>(docs: impl IntoIterator<Item = &'a Document>) -> Self {
        let mut idx = TitleIndex::default();
        for d in docs {
            idx.add(&d.title, &d.doc_id);
        }
        idx
    }

    /// Ambiguous titles resolve to the smallest doc id.
    pub fn add(&mut self, title: &str, doc_id: &str) {
        let norm = normalize_title(title);
        let keep_min = |slot: &mut String| {
            if doc_id < slot.as_str() {
                *slot = doc_id.to_string();
            }
        };
        self.folded
            .entry(norm.to_lowercase())
            .and_modify(keep_min)
            .or_insert_with(|| doc_id.to_string());
        self.exact
            .entry(norm)
            .and_modify(keep_min)
            .or_insert_with(|| doc_id.to_string());
    }

    pub fn resolve(&self, title: &str) -> Option<&str> {
        let norm = normalize_title(title);
        self.exact
            .get(&norm)
            .or_else(|| self.folded.get(&norm.to_lowercase()))
            .map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.exact.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exact.is_empty()
    }
}

/// Resolves every link title. A document linked several times keeps its
/// earliest turn. Conversations without links, or with any unresolved link,
/// are rejected.
pub fn map_links(draft: DraftConversation, titles: &TitleIndex) -> Result<Conversation, LinkRejection> {
    if draft.link_titles.is_empty() {
        return Err(LinkRejection::NoLinks);
    }
    let mut conv = draft.conversation;
    let mut links: Vec<WikiLink> = Vec::new();
    for (title, turn) in draft.link_titles {
        let doc_id = titles
            .resolve(&title)
            .ok_or_else(|| LinkRejection::Unresolved(title.clone()))?;
        match links.iter_mut().find(|l| l.doc_id == doc_id) {
            Some(l) => l.turn_index = l.turn_index.min(turn),
            None => links.push(WikiLink {
                doc_id: doc_id.to_string(),
                turn_index: turn,
            }),
        }
    }
    conv.wiki_links = links;
    Ok(conv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Utterance;

    fn draft(links: &[(&str, u32)]) -> DraftConversation {
        DraftConversation {
            conversation: Conversation {
                id: "p_c".into(),
                category: "physics".into(),
                title: "t".into(),
                utterances: vec![
                    Utterance::new(1, "a", "one").unwrap(),
                    Utterance::new(2, "b", "two").unwrap(),
                ],
                wiki_links: vec![],
                post_id: Some("p".into()),
                created_at: Some(1),
                score: Some(1),
            },
            link_titles: links.iter().map(|(t, n)| (t.to_string(), *n)).collect(),
        }
    }

    fn titles() -> TitleIndex {
        let docs = [
            Document::new("12", "Albert Einstein", "Albert Einstein was a physicist.").unwrap(),
            Document::new("13", "Ulm", "Ulm is a city.").unwrap(),
        ];
        TitleIndex::new(&docs)
    }

    #[test]
    fn underscore_title_resolves() {
        let c = map_links(draft(&[("Albert_Einstein", 1)]), &titles()).unwrap();
        assert_eq!(c.wiki_links, [WikiLink { doc_id: "12".into(), turn_index: 1 }]);
    }

    #[test]
    fn case_insensitive_fallback() {
        let c = map_links(draft(&[("albert einstein", 2)]), &titles()).unwrap();
        assert_eq!(c.wiki_links[0].doc_id, "12");
    }

    #[test]
    fn exact_case_preferred() {
        let mut idx = TitleIndex::default();
        idx.add("Ulm", "1");
        idx.add("ULM", "2");
        assert_eq!(idx.resolve("ULM"), Some("2"));
        assert_eq!(idx.resolve("Ulm"), Some("1"));
        assert_eq!(idx.resolve("uLm"), Some("1"));
    }

    #[test]
    fn absent_title_rejects() {
        assert_eq!(
            map_links(draft(&[("Ulm", 1), ("Nowhere", 2)]), &titles()),
            Err(LinkRejection::Unresolved("Nowhere".into()))
        );
    }

    #[test]
    fn no_links_rejects() {
        assert_eq!(map_links(draft(&[]), &titles()), Err(LinkRejection::NoLinks));
    }

    #[test]
    fn repeated_links_keep_earliest_turn() {
        let c = map_links(draft(&[("Ulm", 2), ("Albert Einstein", 1), ("ulm", 1)]), &titles()).unwrap();
        assert_eq!(
            c.wiki_links,
            [
                WikiLink { doc_id: "13".into(), turn_index: 1 },
                WikiLink { doc_id: "12".into(), turn_index: 1 },
            ]
        );
    }
}
