//! Raw threads to evaluation scores through the on-disk formats.

use std::collections::HashMap;

use proact_core::harness::{run_proactive, run_reactive, sparse_qrels, AlwaysPolicy, ThresholdPolicy};
use proact_core::index::{Bm25Index, Bm25Params};
use proact_core::ingest::{
    build_conversations, compute_stats, make_splits, HeuristicLanguageId, RawComment, RawPost, RawThread,
    SplitConfig, TitleIndex,
};
use proact_core::io;
use proact_core::metrics::{conversation_lengths, proactive_metrics, reactive_metrics, ReactiveOptions};
use proact_core::model::{Conversation, Document};

fn corpus() -> Vec<Document> {
    [
        ("w1", "Black hole", "A black hole is a region of spacetime where gravity is extreme."),
        ("w2", "Neutron star", "A neutron star is the collapsed core of a massive star."),
        ("w3", "Sourdough", "Sourdough is bread made by fermenting dough with wild yeast."),
        ("w4", "Yeast", "Yeast are single-celled fungi used in baking and brewing."),
        ("w5", "Chess opening", "A chess opening is the initial sequence of moves in a game."),
    ]
    .into_iter()
    .map(|(id, title, text)| Document::new(id, title, text).unwrap())
    .collect()
}

fn comment(id: &str, parent: &str, body: &str, t: i64) -> RawComment {
    RawComment {
        id: id.into(),
        parent: parent.into(),
        author: format!("user_{id}"),
        body: body.into(),
        created_at: t,
    }
}

fn thread(id: &str, sub: &str, t: i64, score: i64, topic: &str, link: &str) -> RawThread {
    RawThread {
        post: RawPost {
            id: id.into(),
            subreddit: sub.into(),
            title: format!("Question about {topic}"),
            body: format!("I have been reading about {topic} and I want to know what you all think of it."),
            author: format!("op_{id}"),
            created_at: t,
            score,
            nsfw: false,
        },
        comments: vec![
            comment(
                &format!("{id}a"),
                id,
                &format!("There is a good overview of the {topic} at [the wiki](https://en.wikipedia.org/wiki/{link}) if you want it."),
                t + 10,
            ),
            comment(&format!("{id}b"), &format!("{id}a"), "Thanks, that was what I was looking for and it helped a lot.", t + 20),
            comment(&format!("{id}c"), &format!("{id}a"), "I think that the article is missing some of the history of it.", t + 30),
        ],
    }
}

fn threads() -> Vec<RawThread> {
    let mut out = Vec::new();
    let topics = [
        ("space", "black holes", "Black_hole"),
        ("space", "neutron stars", "Neutron_star"),
        ("baking", "sourdough bread", "Sourdough"),
        ("baking", "baking yeast", "Yeast"),
        ("chess", "chess openings", "Chess_opening"),
    ];
    for (i, (sub, topic, link)) in topics.iter().enumerate() {
        out.push(thread(&format!("p{i}"), sub, 1000 + i as i64 * 100, 25 + i as i64, topic, link));
    }
    let mut nsfw = thread("px", "space", 5000, 50, "black holes", "Black_hole");
    nsfw.post.nsfw = true;
    out.push(nsfw);
    out
}

#[test]
fn ingest_split_index_run_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let docs = corpus();
    let titles = TitleIndex::new(&docs);
    let (convs, report) = build_conversations(&threads(), &titles, &HeuristicLanguageId::default());
    assert_eq!(report.threads, 6);
    assert_eq!(report.rejected_threads.get("nsfw"), Some(&1));
    assert_eq!(convs.len(), 10, "two root-to-leaf chains per accepted thread");
    for c in &convs {
        assert!(!c.utterances.iter().any(|u| u.text.contains("wikipedia.org")));
        assert_eq!(c.wiki_links.len(), 1);
        assert_eq!(c.wiki_links[0].turn_index, 2);
    }

    let conv_path = dir.path().join("conversations.jsonl");
    io::write_jsonl(&conv_path, &convs).unwrap();
    let convs: Vec<Conversation> = io::read_all(&conv_path).unwrap();

    let cfg = SplitConfig {
        dev_size: 2,
        test_size: 2,
        future_dev_size: 2,
        test_min_score: 20,
        seed: 1,
    };
    let splits = make_splits(convs.clone(), &cfg).unwrap();
    // The chess thread is the latest, so both of its chains form future-dev
    // and only two categories are left for test.
    assert_eq!(splits.future_dev.len(), 2);
    assert!(splits.future_dev.iter().all(|c| c.category == "chess"));
    assert_eq!(splits.test.len(), 2);
    let categories: std::collections::HashSet<&str> = splits.test.iter().map(|c| c.category.as_str()).collect();
    assert_eq!(categories.len(), 2);
    let stats = compute_stats(&splits.test);
    assert_eq!(stats.total_conversations, 2);
    assert_eq!(stats.avg_links.mean, 1.0);

    let index = Bm25Index::build(docs, Bm25Params::default()).unwrap();
    let index_dir = dir.path().join("index");
    index.save(&index_dir).unwrap();
    let index = Bm25Index::load(&index_dir).unwrap();

    let qrels = sparse_qrels(&convs).unwrap();
    let reactive = run_reactive(&index, &convs, 5, "bm25").unwrap();
    let run_path = dir.path().join("run.tsv");
    io::write_run(&reactive, &run_path).unwrap();
    let reactive = io::read_run(&run_path).unwrap();
    let report = reactive_metrics(&reactive, &qrels, &ReactiveOptions::new(vec![5])).unwrap();
    // Each conversation names its topic, so BM25 ranks the linked article first.
    assert_eq!(report.mean["mrr"], 1.0);

    let proactive = run_proactive(&AlwaysPolicy, &index, &convs, 5, "always").unwrap();
    let lengths: HashMap<String, u32> = conversation_lengths(&convs);
    let report = proactive_metrics(&proactive, &qrels, &lengths, &[5]).unwrap();
    // Showing the article at turn 1, before it is linked, earns nothing and
    // the repeat at turn 2 is discarded.
    assert_eq!(report.mean["npdcg@5"], 0.0);

    let scores: HashMap<(String, u32), f64> = convs.iter().map(|c| ((c.id.clone(), 2), 1.0)).collect();
    let at_link = run_proactive(&ThresholdPolicy::new(scores, 0.5), &index, &convs, 5, "timed").unwrap();
    assert!(at_link.iter().all(|r| r.turn_index == 2));
    let report = proactive_metrics(&at_link, &qrels, &lengths, &[5]).unwrap();
    assert_eq!(report.mean["npdcg@5"], 1.0);
    let tsv = report.to_tsv();
    assert!(tsv.lines().last().unwrap().starts_with("mean"));
}
