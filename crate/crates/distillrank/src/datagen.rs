//! Synthetic topical datasets for offline runs and tests.
//!
//! Each topic carries three disjoint vocabularies: question words (used only
//! by queries), document words (shared by every passage of the topic) and
//! per-passage specific words. Queries and passages share no surface tokens,
//! so an untrained encoder retrieves at chance level and any lift is learned.
//! Cross-topic passages share no tokens at all, which keeps planted
//! hallucinations cleanly separable from gold passages.
//!
//! Relevance is graded: the first passage of a topic is the gold answer
//! (grade 2), the next two are related (grade 1), the rest are same-topic
//! confusers (unjudged). Distillation mostly fixes which topic cluster ranks
//! on top; ordering *within* the cluster is what preference alignment has to
//! learn, mirroring how the two stages divide work at full scale.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::data::{Corpus, Passage, Qrels, Query, QuerySet};
use crate::encoder::seeded_fnv1a;
use crate::error::{Error, Result};

/// Seed of the dataset bundled with the `demo` subcommand. Training and
/// synthesis randomness flow from the user seed; the bundled data itself is
/// fixed.
pub const DEMO_DATASET_SEED: u64 = 0x5eed_da7a;

const QUESTION_WORDS: [&str; 6] = ["what", "how", "why", "which", "where", "explain"];
const QUESTION_TOKENS_PER_TOPIC: usize = 6;
const DOC_TOKENS_PER_TOPIC: usize = 10;
const SPECIFIC_TOKENS_PER_PASSAGE: usize = 3;

#[derive(Debug, Clone)]
pub struct DatagenConfig {
    pub topics: usize,
    pub passages_per_topic: usize,
    /// Train queries, assigned to topics round-robin.
    pub train_queries: usize,
    /// Test queries, assigned to topics round-robin (re-asking the same
    /// golds with different phrasings).
    pub test_queries: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub corpus: Corpus,
    pub queries: QuerySet,
    pub train_qrels: Qrels,
    pub test_qrels: Qrels,
}

impl DatagenConfig {
    /// The dataset behind the bundled demo: 200 passages over 50 topics,
    /// 50 train and 20 test queries.
    pub fn demo() -> Self {
        DatagenConfig {
            topics: 50,
            passages_per_topic: 4,
            train_queries: 50,
            test_queries: 20,
            seed: DEMO_DATASET_SEED,
        }
    }
}

fn topic_question_vocab(topic: usize) -> Vec<String> {
    (0..QUESTION_TOKENS_PER_TOPIC)
        .map(|i| format!("qw{topic}{}", (b'a' + i as u8) as char))
        .collect()
}

fn topic_doc_vocab(topic: usize) -> Vec<String> {
    (0..DOC_TOKENS_PER_TOPIC)
        .map(|i| format!("dw{topic}{}", (b'a' + i as u8) as char))
        .collect()
}

fn passage_specific_vocab(topic: usize, slot: usize) -> Vec<String> {
    (0..SPECIFIC_TOKENS_PER_PASSAGE)
        .map(|i| format!("sp{topic}x{slot}{}", (b'a' + i as u8) as char))
        .collect()
}

pub fn generate(config: &DatagenConfig) -> GeneratedDataset {
    assert!(config.topics > 0 && config.passages_per_topic > 0);
    let mut passages = Vec::with_capacity(config.topics * config.passages_per_topic);
    for topic in 0..config.topics {
        let doc_vocab = topic_doc_vocab(topic);
        for slot in 0..config.passages_per_topic {
            let id = format!("d{:05}", topic * config.passages_per_topic + slot);
            let mut tokens = doc_vocab.clone();
            tokens.extend(passage_specific_vocab(topic, slot));
            let mut rng = ChaCha12Rng::seed_from_u64(seeded_fnv1a(config.seed, &id));
            tokens.shuffle(&mut rng);
            passages.push(Passage {
                id,
                title: String::new(),
                body: tokens.join(" "),
            });
        }
    }
    let corpus = Corpus::from_passages(passages).expect("generated ids are unique");

    let mut queries = Vec::with_capacity(config.train_queries + config.test_queries);
    let mut used_texts = std::collections::BTreeSet::new();
    let mut make_query = |id: String, topic: usize, salt: &str| {
        let vocab = topic_question_vocab(topic);
        let mut attempt = 0usize;
        loop {
            let mut rng = ChaCha12Rng::seed_from_u64(seeded_fnv1a(
                config.seed,
                &format!("{id}-{salt}-{attempt}"),
            ));
            let mut picked: Vec<&String> = vocab.iter().collect();
            picked.shuffle(&mut rng);
            picked.truncate(4);
            let opener = QUESTION_WORDS[rng.gen_range(0..QUESTION_WORDS.len())];
            let filler = QUESTION_WORDS[rng.gen_range(0..QUESTION_WORDS.len())];
            let text = format!(
                "{opener} {} {} {filler} {} {}",
                picked[0], picked[1], picked[2], picked[3]
            );
            if used_texts.insert(text.clone()) {
                return Query { id, text };
            }
            attempt += 1;
        }
    };

    // Grades per topic: slot 0 is the gold answer (2), the next two slots
    // are related (1), further slots are unjudged confusers.
    let judge = |qrels: &mut Qrels, query_id: &str, topic: usize| {
        let base = topic * config.passages_per_topic;
        qrels.insert(query_id, format!("d{base:05}"), 2);
        for slot in 1..config.passages_per_topic.min(3) {
            qrels.insert(query_id, format!("d{:05}", base + slot), 1);
        }
    };

    let mut train_qrels = Qrels::new();
    for i in 0..config.train_queries {
        let topic = i % config.topics;
        let id = format!("q{i:05}");
        let query = make_query(id.clone(), topic, "train");
        judge(&mut train_qrels, &id, topic);
        queries.push(query);
    }
    let mut test_qrels = Qrels::new();
    for i in 0..config.test_queries {
        let topic = i % config.topics;
        let id = format!("t{i:05}");
        let query = make_query(id.clone(), topic, "test");
        judge(&mut test_qrels, &id, topic);
        queries.push(query);
    }
    let queries = QuerySet::from_queries(queries).expect("generated query ids are unique");

    GeneratedDataset {
        corpus,
        queries,
        train_qrels,
        test_qrels,
    }
}

/// Write the dataset in the standard on-disk layout: `corpus.jsonl`,
/// `queries.jsonl`, `qrels/train.tsv` and `qrels/test.tsv`.
pub fn write_beir_dir(dataset: &GeneratedDataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir.join("qrels")).map_err(|e| Error::io(dir, e))?;
    let write = |path: &Path, contents: String| -> Result<()> {
        std::fs::write(path, contents).map_err(|e| Error::io(path, e))
    };

    let corpus_lines: String = dataset
        .corpus
        .iter()
        .map(|p| {
            format!(
                "{}\n",
                serde_json::json!({"_id": p.id, "title": p.title, "text": p.body})
            )
        })
        .collect();
    write(&dir.join("corpus.jsonl"), corpus_lines)?;

    let query_lines: String = dataset
        .queries
        .iter()
        .map(|q| format!("{}\n", serde_json::json!({"_id": q.id, "text": q.text})))
        .collect();
    write(&dir.join("queries.jsonl"), query_lines)?;

    for (split, qrels) in [("train", &dataset.train_qrels), ("test", &dataset.test_qrels)] {
        let mut out = String::from("query-id\tcorpus-id\tscore\n");
        for qid in qrels.query_ids() {
            for (pid, grade) in qrels.judged(qid) {
                out.push_str(&format!("{qid}\t{pid}\t{grade}\n"));
            }
        }
        write(&dir.join("qrels").join(format!("{split}.tsv")), out)?;
    }
    Ok(())
}
