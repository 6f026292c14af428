//! Dataset I/O: write a corpus/queries/qrels directory in the standard
//! layout, load it back with strict validation, and persist synthesis
//! records with a lossless round trip.
//!
//! Run with: cargo run --example dataset_io

use distillrank::data::{load_dataset, read_records, write_records, SynthesisRecord, ValidationMode};
use distillrank::datagen::{generate, write_beir_dir, DatagenConfig};

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;

    // a small topical dataset in the corpus.jsonl / queries.jsonl /
    // qrels/{split}.tsv layout that public benchmark dumps use
    let dataset = generate(&DatagenConfig {
        topics: 8,
        passages_per_topic: 4,
        train_queries: 8,
        test_queries: 4,
        seed: 1,
    });
    write_beir_dir(&dataset, dir.path())?;

    let (corpus, queries, qrels, warnings) = load_dataset(
        &dir.path().join("corpus.jsonl"),
        &dir.path().join("queries.jsonl"),
        &dir.path().join("qrels/train.tsv"),
        ValidationMode::Strict,
    )?;
    println!("loaded {} passages, {} queries, {} qrels rows, {} warnings",
        corpus.len(), queries.len(), qrels.num_pairs(), warnings.len());

    let first = queries.iter().next().unwrap();
    println!("query {}: \"{}\"", first.id, first.text);
    println!("  gold passage: {:?}", qrels.gold_passage(&first.id));

    // records persist as newline-delimited JSON and round-trip exactly
    let records = vec![SynthesisRecord {
        query_id: first.id.clone(),
        q_cot: "the question broken into steps".into(),
        p_plus: "a synthetic relevant passage".into(),
        p_minus: "a plausible but irrelevant passage".into(),
        relabeled: false,
        llm_model: "example".into(),
        created_at: 0,
    }];
    let records_path = dir.path().join("records.jsonl");
    write_records(&records, &records_path)?;
    assert_eq!(read_records(&records_path)?, records);
    println!("round-tripped {} synthesis record(s) through {}", records.len(), records_path.display());
    Ok(())
}
