use std::collections::HashSet;

use proact_core::io::{read_qrels_from, read_run_from, write_qrels_to, write_run_to};
use proact_core::metrics::{pdcg, ProactiveRun};
use proact_core::model::{
    Conversation, ConversationQrels, Grade, Qrel, QrelEntry, Qrels, ScoredDoc, TurnRun, Utterance,
};
use proact_core::pooling::{aggregate_labels, build_pools};
use proptest::prelude::*;

fn token() -> impl Strategy<Value = String> {
    "[a-z0-9_]{1,6}"
}

fn turn_run() -> impl Strategy<Value = TurnRun> {
    (token(), 1u32..20, prop::collection::hash_set(token(), 1..8), token(), prop::collection::vec(-1e6f64..1e6, 8))
        .prop_map(|(conv, turn, docs, tag, mut scores)| {
            scores.sort_by(|a, b| b.total_cmp(a));
            let ranked = docs
                .into_iter()
                .zip(scores)
                .map(|(d, s)| ScoredDoc::new(d, s))
                .collect();
            TurnRun::new(conv, turn, ranked, tag).unwrap()
        })
}

proptest! {
    #[test]
    fn run_files_round_trip(runs in prop::collection::vec(turn_run(), 0..6)) {
        let mut seen = HashSet::new();
        let runs: Vec<TurnRun> = runs
            .into_iter()
            .filter(|r| seen.insert((r.conversation_id.clone(), r.turn_index, r.run_tag.clone())))
            .collect();
        let mut buf = Vec::new();
        write_run_to(&mut buf, &runs).unwrap();
        let back = read_run_from(buf.as_slice(), "prop").unwrap();
        prop_assert_eq!(back, runs);
    }

    #[test]
    fn qrels_round_trip(entries in prop::collection::btree_map((token(), token()), (0u8..3, 1u32..50), 0..30)) {
        let qrels = Qrels::from_qrels(
            entries.iter().map(|((c, d), (g, l))| Qrel::new(c.clone(), d.clone(), *g, *l).unwrap()),
        ).unwrap();
        let mut buf = Vec::new();
        write_qrels_to(&mut buf, &qrels).unwrap();
        prop_assert_eq!(read_qrels_from(buf.as_slice(), "prop").unwrap(), qrels);
    }

    #[test]
    fn zero_turn_index_fails_validation(m in 1usize..6, zero_at in 0usize..6) {
        let zero_at = zero_at % m;
        let utterances = (0..m)
            .map(|i| Utterance {
                turn_index: if i == zero_at { 0 } else { i as u32 + 1 },
                author_id: "a".into(),
                text: "hello".into(),
            })
            .collect();
        let conv = Conversation {
            id: "c".into(),
            category: "x".into(),
            title: "t".into(),
            utterances,
            wiki_links: vec![],
            post_id: None,
            created_at: None,
            score: None,
        };
        prop_assert!(conv.validate().is_err());
    }

    #[test]
    fn aggregation_ignores_worker_order(labels in prop::collection::vec(0u8..3, 1..9), seed in any::<u64>()) {
        let grades: Vec<Grade> = labels.iter().map(|&l| Grade::new(l).unwrap()).collect();
        let mut shuffled = grades.clone();
        let n = shuffled.len();
        for i in 0..n {
            shuffled.swap(i, (seed as usize).wrapping_add(i * 7) % n);
        }
        prop_assert_eq!(aggregate_labels(&grades), aggregate_labels(&shuffled));
    }

    #[test]
    fn pools_are_unique_and_bounded(
        lists in prop::collection::vec(prop::collection::hash_set(0u8..40, 0..25), 1..6),
        depth in 1usize..12,
    ) {
        let runs: Vec<Vec<TurnRun>> = lists
            .iter()
            .enumerate()
            .map(|(i, docs)| {
                let ranked = docs
                    .iter()
                    .enumerate()
                    .map(|(r, d)| ScoredDoc::new(format!("d{d}"), -(r as f64)))
                    .collect();
                vec![TurnRun::new("c", 3, ranked, format!("r{i}")).unwrap()]
            })
            .collect();
        let pools = build_pools(&runs, depth).unwrap();
        for p in &pools {
            let unique: HashSet<&String> = p.doc_ids.iter().collect();
            prop_assert_eq!(unique.len(), p.doc_ids.len());
            prop_assert!(p.doc_ids.len() <= runs.len() * depth);
        }
    }

    #[test]
    fn pdcg_is_nonnegative_and_zero_without_engagement(
        grades in prop::collection::vec((0u8..3, 1u32..5), 1..5),
        lists in prop::collection::vec(prop::collection::vec(0usize..5, 0..5), 1..5),
        k in 1usize..6,
    ) {
        let q: ConversationQrels = grades
            .iter()
            .enumerate()
            .map(|(i, (g, l))| (format!("d{i}"), QrelEntry { grade: Grade::new(*g).unwrap(), ideal_turn: *l }))
            .collect();
        let m = lists.len() as u32;
        let mut run = ProactiveRun::new();
        for (t, docs) in lists.iter().enumerate() {
            let mut seen = HashSet::new();
            let docs: Vec<String> = docs.iter().filter(|d| seen.insert(**d)).map(|d| format!("d{d}")).collect();
            run.push(t as u32 + 1, docs).unwrap();
        }
        prop_assert!(pdcg(&run, Some(&q), m.max(4), k).unwrap() >= 0.0);
        prop_assert_eq!(pdcg(&ProactiveRun::new(), Some(&q), 4, k).unwrap(), 0.0);
    }
}
