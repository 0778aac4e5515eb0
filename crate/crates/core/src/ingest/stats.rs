//! Split-level dataset statistics.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::index::tokenize;
use crate::model::Conversation;

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let values: Vec<f64> = values.into_iter().collect();
        if values.is_empty() {
            return MeanStd::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        MeanStd {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SplitStats {
    pub total_conversations: usize,
    pub total_posts: usize,
    pub num_categories: usize,
    pub total_unique_users: usize,
    pub avg_turns: MeanStd,
    pub avg_words_per_conversation: MeanStd,
    pub avg_words_per_turn: MeanStd,
    pub avg_links: MeanStd,
    pub avg_unique_users: MeanStd,
    /// Utterances per distinct author across the whole split.
    pub avg_comments_per_user: MeanStd,
}

/// Computes statistics over a split. Words are counted with the index tokenizer.
pub fn compute_stats<'a>(split: impl IntoIterator<Item = &'a Conversation>) -> SplitStats {
    let split: Vec<&Conversation> = split.into_iter().collect();
    let mut posts = HashSet::new();
    let mut categories = HashSet::new();
    let mut per_user: HashMap<&str, usize> = HashMap::new();
    let mut turn_words = Vec::new();
    let mut conv_words = Vec::with_capacity(split.len());
    let mut unique_users = Vec::with_capacity(split.len());

    for c in &split {
        posts.insert(c.post_id.as_deref().unwrap_or(&c.id));
        categories.insert(c.category.as_str());
        let mut authors = HashSet::new();
        let mut words = 0usize;
        for u in &c.utterances {
            let w = tokenize(&u.text).len();
            words += w;
            turn_words.push(w as f64);
            authors.insert(u.author_id.as_str());
            *per_user.entry(u.author_id.as_str()).or_default() += 1;
        }
        conv_words.push(words as f64);
        unique_users.push(authors.len() as f64);
    }

    SplitStats {
        total_conversations: split.len(),
        total_posts: posts.len(),
        num_categories: categories.len(),
        total_unique_users: per_user.len(),
        avg_turns: MeanStd::of(split.iter().map(|c| c.len() as f64)),
        avg_words_per_conversation: MeanStd::of(conv_words),
        avg_words_per_turn: MeanStd::of(turn_words),
        avg_links: MeanStd::of(split.iter().map(|c| c.wiki_links.len() as f64)),
        avg_unique_users: MeanStd::of(unique_users),
        avg_comments_per_user: MeanStd::of(per_user.values().map(|&n| n as f64)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Utterance, WikiLink};

    fn conv(id: &str, turns: usize, links: usize) -> Conversation {
        Conversation {
            id: id.into(),
            category: "c".into(),
            title: "t".into(),
            utterances: (1..=turns)
                .map(|t| Utterance::new(t as u32, format!("{id}-{}", t % 2), "two words").unwrap())
                .collect(),
            wiki_links: (0..links)
                .map(|i| WikiLink {
                    doc_id: format!("d{i}"),
                    turn_index: 1,
                })
                .collect(),
            post_id: None,
            created_at: None,
            score: None,
        }
    }

    #[test]
    fn single_conversation() {
        let s = compute_stats(&[conv("a", 4, 1)]);
        assert_eq!(s.avg_turns, MeanStd { mean: 4.0, std: 0.0 });
        assert_eq!(s.avg_words_per_conversation.mean, 8.0);
        assert_eq!(s.total_unique_users, 2);
        assert_eq!(s.avg_comments_per_user.mean, 2.0);
    }

    #[test]
    fn two_conversations_population_std() {
        let s = compute_stats(&[conv("a", 2, 0), conv("b", 6, 2)]);
        assert_eq!(s.avg_turns, MeanStd { mean: 4.0, std: 2.0 });
        assert_eq!(s.avg_links, MeanStd { mean: 1.0, std: 1.0 });
        assert_eq!(s.total_posts, 2);
    }

    #[test]
    fn empty_split() {
        let s = compute_stats(&[]);
        assert_eq!(s.total_conversations, 0);
        assert_eq!(s.avg_turns, MeanStd::default());
    }
}
