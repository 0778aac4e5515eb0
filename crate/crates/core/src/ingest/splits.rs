//! Train / dev / future-dev / test split generation.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Conversation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub dev_size: usize,
    pub test_size: usize,
    pub future_dev_size: usize,
    pub test_min_score: i64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            dev_size: 4165,
            test_size: 100,
            future_dev_size: 3385,
            test_min_score: 20,
            seed: 13,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<Conversation>,
    pub dev: Vec<Conversation>,
    pub future_dev: Vec<Conversation>,
    pub test: Vec<Conversation>,
    /// Conversations left out because they tie with or follow the future-dev
    /// cutoff but were not sampled into dev or test.
    pub dropped: usize,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Slot {
    Unassigned,
    Train,
    Dev,
    FutureDev,
    Test,
}

/// Partitions conversations.
///
/// * future-dev: the `future_dev_size` chronologically latest conversations;
///   train only keeps conversations strictly earlier than all of them.
/// * test: a seeded random sample, one conversation per category, each with
///   post score >= `test_min_score`.
/// * dev: a seeded random sample of what remains.
///
/// Within each split the input order is preserved.
pub fn make_splits(conversations: Vec<Conversation>, cfg: &SplitConfig) -> Result<Splits> {
    if cfg.test_min_score < 0 {
        return Err(Error::InvalidArgument("test_min_score must be >= 0".into()));
    }
    let n = conversations.len();
    let mut slots = vec![Slot::Unassigned; n];

    let mut cutoff = None;
    if cfg.future_dev_size > 0 {
        let mut by_time = Vec::with_capacity(n);
        for (i, c) in conversations.iter().enumerate() {
            let ts = c.created_at.ok_or_else(|| {
                Error::validation(format!("conversation {} has no created_at timestamp", c.id))
            })?;
            by_time.push((ts, c.id.as_str(), i));
        }
        if cfg.future_dev_size > n {
            return Err(Error::Insufficient(format!(
                "future_dev_size {} exceeds the {n} available conversations",
                cfg.future_dev_size
            )));
        }
        by_time.sort_unstable();
        let future = &by_time[n - cfg.future_dev_size..];
        cutoff = Some(future[0].0);
        for &(_, _, i) in future {
            slots[i] = Slot::FutureDev;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pool: Vec<usize> = (0..n).filter(|&i| slots[i] == Slot::Unassigned).collect();
    pool.shuffle(&mut rng);

    let mut categories = HashSet::new();
    let mut test_count = 0;
    for &i in &pool {
        if test_count == cfg.test_size {
            break;
        }
        let c = &conversations[i];
        if c.score.is_some_and(|s| s >= cfg.test_min_score) && categories.insert(c.category.as_str()) {
            slots[i] = Slot::Test;
            test_count += 1;
        }
    }
    if test_count < cfg.test_size {
        return Err(Error::Insufficient(format!(
            "test split needs {} conversations from distinct categories with score >= {}, found {test_count}",
            cfg.test_size, cfg.test_min_score
        )));
    }

    let mut dev_count = 0;
    for &i in &pool {
        if dev_count == cfg.dev_size {
            break;
        }
        if slots[i] == Slot::Unassigned {
            slots[i] = Slot::Dev;
            dev_count += 1;
        }
    }
    if dev_count < cfg.dev_size {
        return Err(Error::Insufficient(format!(
            "dev split needs {} conversations, only {dev_count} remain",
            cfg.dev_size
        )));
    }

    let mut dropped = 0;
    for (i, c) in conversations.iter().enumerate() {
        if slots[i] != Slot::Unassigned {
            continue;
        }
        match (cutoff, c.created_at) {
            (Some(cut), Some(ts)) if ts >= cut => dropped += 1,
            _ => slots[i] = Slot::Train,
        }
    }

    let mut splits = Splits {
        dropped,
        ..Default::default()
    };
    for (c, slot) in conversations.into_iter().zip(slots) {
        match slot {
            Slot::Train => splits.train.push(c),
            Slot::Dev => splits.dev.push(c),
            Slot::FutureDev => splits.future_dev.push(c),
            Slot::Test => splits.test.push(c),
            Slot::Unassigned => {}
        }
    }
    Ok(splits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Utterance;

    fn conv(i: usize, ts: i64, score: i64, category: &str) -> Conversation {
        Conversation {
            id: format!("c{i}"),
            category: category.into(),
            title: "t".into(),
            utterances: vec![Utterance::new(1, "a", "text").unwrap()],
            wiki_links: vec![],
            post_id: Some(format!("p{i}")),
            created_at: Some(ts),
            score: Some(score),
        }
    }

    fn ids(v: &[Conversation]) -> Vec<&str> {
        v.iter().map(|c| c.id.as_str()).collect()
    }

    fn cfg(dev: usize, test: usize, future: usize, min: i64, seed: u64) -> SplitConfig {
        SplitConfig {
            dev_size: dev,
            test_size: test,
            future_dev_size: future,
            test_min_score: min,
            seed,
        }
    }

    #[test]
    fn future_dev_is_latest_beyond_train() {
        // Timestamps shuffled; the two latest are c3 (ts 95) and c7 (ts 99).
        let ts = [50, 10, 40, 95, 20, 30, 60, 99, 70, 80];
        let convs: Vec<_> = ts.iter().enumerate().map(|(i, &t)| conv(i, t, 0, "x")).collect();
        let s = make_splits(convs, &cfg(0, 0, 2, 0, 1)).unwrap();
        assert_eq!(ids(&s.future_dev), ["c3", "c7"]);
        assert_eq!(s.train.len(), 8);
        let train_max = s.train.iter().map(|c| c.created_at.unwrap()).max().unwrap();
        assert!(s.future_dev.iter().all(|c| c.created_at.unwrap() > train_max));
    }

    #[test]
    fn deterministic_under_seed() {
        let make = || (0..40).map(|i| conv(i, i as i64, 30, &format!("cat{}", i % 7))).collect::<Vec<_>>();
        let a = make_splits(make(), &cfg(5, 4, 3, 20, 42)).unwrap();
        let b = make_splits(make(), &cfg(5, 4, 3, 20, 42)).unwrap();
        assert_eq!(a, b);
        let c = make_splits(make(), &cfg(5, 4, 3, 20, 7)).unwrap();
        assert_ne!(ids(&a.dev), ids(&c.dev));
    }

    #[test]
    fn insufficient_scores() {
        let convs: Vec<_> = (0..10).map(|i| conv(i, i as i64, 5, &format!("c{i}"))).collect();
        let err = make_splits(convs, &cfg(0, 2, 0, 20, 1)).unwrap_err();
        assert!(matches!(err, Error::Insufficient(ref m) if m.contains("score >= 20")));
    }

    #[test]
    fn test_categories_distinct_and_splits_disjoint() {
        let convs: Vec<_> = (0..60).map(|i| conv(i, (i * 7 % 60) as i64, (i % 40) as i64, &format!("cat{}", i % 9))).collect();
        let s = make_splits(convs, &cfg(10, 5, 6, 20, 3)).unwrap();
        let cats: HashSet<_> = s.test.iter().map(|c| c.category.as_str()).collect();
        assert_eq!(cats.len(), 5);
        assert!(s.test.iter().all(|c| c.score.unwrap() >= 20));
        let mut all: Vec<&str> = Vec::new();
        for part in [&s.train, &s.dev, &s.future_dev, &s.test] {
            all.extend(ids(part));
        }
        let unique: HashSet<_> = all.iter().collect();
        assert_eq!(unique.len(), all.len());
        assert_eq!(all.len() + s.dropped, 60);
    }

    #[test]
    fn missing_timestamp_is_an_error_when_future_dev_requested() {
        let mut c = conv(0, 1, 1, "x");
        c.created_at = None;
        assert!(make_splits(vec![c.clone()], &cfg(0, 0, 1, 0, 1)).is_err());
        assert!(make_splits(vec![c], &cfg(0, 0, 0, 0, 1)).is_ok());
    }
}
