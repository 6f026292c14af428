//! Offline synthesis with the mock oracle: render the prompt templates,
//! generate per-query records (chain-of-thought, synthetic positive,
//! synthetic hard-negative), and watch self-verification catch planted
//! hallucinations.
//!
//! Run with: cargo run --example synthesize_offline

use distillrank::data::read_records;
use distillrank::datagen::{generate, DatagenConfig};
use distillrank::llm::{MockOracle, MockOracleConfig};
use distillrank::synthesis::{run_synthesis, PromptKind, PromptSet, SynthesisOptions};

fn main() -> anyhow::Result<()> {
    let prompts = PromptSet::builtin();
    println!(
        "--- rendered positive-passage prompt ---\n{}",
        prompts.render(PromptKind::Positive, &[("question", "why is the sky blue")])?
    );

    let dataset = generate(&DatagenConfig {
        topics: 30,
        passages_per_topic: 4,
        train_queries: 30,
        test_queries: 0,
        seed: 11,
    });
    let oracle = MockOracle::new(
        MockOracleConfig {
            hallucination_rate: 0.25,
            verify_overlap_threshold: 0.3,
            seed: 11,
        },
        &dataset.corpus,
        &dataset.queries,
        &dataset.train_qrels,
    )?;

    let dir = tempfile::tempdir()?;
    let records_path = dir.path().join("records.jsonl");
    let summary = run_synthesis(
        &oracle,
        &prompts,
        &dataset.corpus,
        &dataset.queries,
        &dataset.train_qrels,
        &records_path,
        4,
        &SynthesisOptions::default(),
    )?;
    println!(
        "--- synthesis summary ---\n{} records, {} relabeled as hallucinations, {} failed ({} completions issued)",
        summary.total, summary.relabeled, summary.failed, oracle.total_calls()
    );

    let records = read_records(&records_path)?;
    let kept = records.iter().find(|r| !r.relabeled).unwrap();
    println!("\nkept synthetic positive for {}:\n  {}", kept.query_id, kept.p_plus);
    if let Some(flagged) = records.iter().find(|r| r.relabeled) {
        println!(
            "\nrelabeled record {} (positive judged irrelevant, reused as a hard-negative):\n  {}",
            flagged.query_id, flagged.p_plus
        );
    }
    Ok(())
}
