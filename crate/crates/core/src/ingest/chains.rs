//! Linear reply chains from a comment tree.

use std::collections::HashMap;

use super::filter::{CleanNode, FilteredThread};
use crate::model::{Conversation, Utterance};

/// Comment indices of one root-to-leaf path, top-level comment first.
pub type Chain = Vec<usize>;

/// Enumerates every root-to-leaf path that contains at least one comment.
///
/// Paths come out in depth-first order following the input comment order.
pub fn sample_nested_chains(thread: &FilteredThread) -> Vec<Chain> {
    let mut children: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, c) in thread.comments.iter().enumerate() {
        if let Some(parent) = c.parent.as_deref() {
            children.entry(parent).or_default().push(i);
        }
    }
    let mut chains = Vec::new();
    let mut stack: Vec<Chain> = children
        .get(thread.post.id.as_str())
        .into_iter()
        .flatten()
        .rev()
        .map(|&i| vec![i])
        .collect();
    while let Some(path) = stack.pop() {
        let last = *path.last().expect("paths are non-empty");
        match children.get(thread.comments[last].id.as_str()) {
            None => chains.push(path),
            Some(kids) => {
                for &k in kids.iter().rev() {
                    let mut next = path.clone();
                    next.push(k);
                    stack.push(next);
                }
            }
        }
    }
    chains
}

/// A conversation whose links are still raw Wikipedia titles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DraftConversation {
    pub conversation: Conversation,
    /// (title, turn) in order of appearance.
    pub link_titles: Vec<(String, u32)>,
}

/// Turns the post plus one chain into a conversation draft.
pub fn chain_to_draft(thread: &FilteredThread, chain: &Chain) -> DraftConversation {
    let nodes: Vec<&CleanNode> = std::iter::once(&thread.post)
        .chain(chain.iter().map(|&i| &thread.comments[i]))
        .collect();
    let leaf = nodes.last().expect("post is always present");
    let mut utterances = Vec::with_capacity(nodes.len());
    let mut link_titles = Vec::new();
    for (i, node) in nodes.iter().enumerate() {
        let turn = i as u32 + 1;
        utterances.push(Utterance {
            turn_index: turn,
            author_id: node.author.clone(),
            text: node.text.clone(),
        });
        link_titles.extend(node.link_titles.iter().map(|t| (t.clone(), turn)));
    }
    DraftConversation {
        conversation: Conversation {
            id: format!("{}_{}", thread.post.id, leaf.id),
            category: thread.category.clone(),
            title: thread.title.clone(),
            utterances,
            wiki_links: Vec::new(),
            post_id: Some(thread.post.id.clone()),
            created_at: Some(thread.post.created_at),
            score: Some(thread.score),
        },
        link_titles,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::filter::filter_thread;
    use crate::ingest::{RawComment, RawPost, RawThread};

    fn thread(comments: &[(&str, &str)]) -> FilteredThread {
        let raw = RawThread {
            post: RawPost {
                id: "p".into(),
                subreddit: "science".into(),
                title: "Title here".into(),
                body: "Post body".into(),
                author: "op".into(),
                created_at: 10,
                score: 1,
                nsfw: false,
            },
            comments: comments
                .iter()
                .map(|(id, parent)| RawComment {
                    id: id.to_string(),
                    parent: parent.to_string(),
                    author: format!("a_{id}"),
                    body: format!("comment {id}"),
                    created_at: 11,
                })
                .collect(),
        };
        filter_thread(&raw, &|_: &str| true).unwrap()
    }

    fn ids(t: &FilteredThread, chains: &[Chain]) -> Vec<Vec<String>> {
        chains
            .iter()
            .map(|c| c.iter().map(|&i| t.comments[i].id.clone()).collect())
            .collect()
    }

    #[test]
    fn single_chain_of_depth_three() {
        let t = thread(&[("a", "p"), ("b", "a"), ("c", "b")]);
        let chains = sample_nested_chains(&t);
        assert_eq!(chains.len(), 1);
        let draft = chain_to_draft(&t, &chains[0]);
        assert_eq!(draft.conversation.utterances.len(), 4);
        assert_eq!(draft.conversation.id, "p_c");
        draft.conversation.validate().unwrap();
    }

    #[test]
    fn two_top_level_comments() {
        let t = thread(&[("a", "p"), ("b", "p")]);
        let chains = sample_nested_chains(&t);
        assert_eq!(ids(&t, &chains), [vec!["a"], vec!["b"]]);
        for c in &chains {
            assert_eq!(chain_to_draft(&t, c).conversation.len(), 2);
        }
    }

    #[test]
    fn no_comments_no_chains() {
        let t = thread(&[]);
        assert!(sample_nested_chains(&t).is_empty());
    }

    #[test]
    fn branching_tree_enumerates_all_leaves() {
        // p -> a -> {b, c -> d}, p -> e
        let t = thread(&[("a", "p"), ("b", "a"), ("c", "a"), ("d", "c"), ("e", "p")]);
        let chains = sample_nested_chains(&t);
        assert_eq!(
            ids(&t, &chains),
            [vec!["a", "b"], vec!["a", "c", "d"], vec!["e"]]
        );
    }

    #[test]
    fn replies_before_parents_in_input() {
        let t = thread(&[("b", "a"), ("a", "p")]);
        let chains = sample_nested_chains(&t);
        assert_eq!(ids(&t, &chains), [vec!["a", "b"]]);
    }
}
