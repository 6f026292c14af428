//! The alignment stage in isolation: retrieve top-K with a distilled
//! encoder, sample passage pairs, collect judge preferences, and continue
//! training with the top-2 ranking loss. Also runs the pairwise-loss
//! variant on the identical triples for comparison.
//!
//! Run with: cargo run --example align_stage2

use distillrank::align::{
    collect_preferences, train_align, AlignConfig, AlignLoss, CollectOptions,
};
use distillrank::data::read_records;
use distillrank::datagen::{generate, DatagenConfig};
use distillrank::distill::{join_examples, train_distill, TrainConfig};
use distillrank::encoder::EncoderModel;
use distillrank::llm::{MockOracle, MockOracleConfig};
use distillrank::retrieval::evaluate;
use distillrank::synthesis::{run_synthesis, PromptSet, SynthesisOptions};

fn main() -> anyhow::Result<()> {
    let dataset = generate(&DatagenConfig::demo());
    let oracle = MockOracle::new(
        MockOracleConfig {
            hallucination_rate: 0.15,
            verify_overlap_threshold: 0.3,
            seed: 7,
        },
        &dataset.corpus,
        &dataset.queries,
        &dataset.train_qrels,
    )?;
    let prompts = PromptSet::builtin();
    let dir = tempfile::tempdir()?;

    // stage 1, compressed (see the train_stage1 example)
    let records_path = dir.path().join("records.jsonl");
    run_synthesis(
        &oracle, &prompts, &dataset.corpus, &dataset.queries, &dataset.train_qrels,
        &records_path, 4, &SynthesisOptions::default(),
    )?;
    let examples = join_examples(
        &read_records(&records_path)?,
        &dataset.corpus,
        &dataset.queries,
        &dataset.train_qrels,
    )?;
    let mut distilled = EncoderModel::new(32, 4096, 0.5, 7)?;
    train_distill(
        &mut distilled,
        &examples,
        &TrainConfig {
            batch_size: 60,
            learning_rate: 2e-2,
            epochs: 30,
            warmup_steps: 10,
            weight_decay: 0.01,
            seed: 7,
        },
        None,
    )?;

    // stage 2: judge preferences over pairs from the top-5, then fine-tune
    let config = AlignConfig {
        k: 5,
        n_pairs: 10,
        batch_size: 10,
        epochs: 20,
        learning_rate: 5e-4,
        warmup_steps: 5,
        weight_decay: 0.01,
        seed: 7,
        loss: AlignLoss::PartialPl,
    };
    let (triples, log) = collect_preferences(
        &oracle,
        &prompts,
        &distilled,
        &dataset.corpus,
        &dataset.queries,
        &dataset.train_qrels,
        &config,
        &dir.path().join("triples.jsonl"),
        &dir.path().join("comparisons.jsonl"),
        &CollectOptions::default(),
    )?;
    println!(
        "collected {} triples from {} comparisons ({} skipped)",
        triples.len(),
        log.len(),
        log.iter().filter(|r| r.skipped).count()
    );
    let sample = &triples[0];
    println!(
        "example preference for {}: {} (rank {}) over {} (rank {})",
        sample.query_id, sample.winner_id, sample.winner_rank, sample.loser_id, sample.loser_rank
    );

    // alignment runs sharp; ranking quality is temperature-invariant
    let ndcg10 = |model: &EncoderModel| -> anyhow::Result<f64> {
        Ok(evaluate(model, &dataset.corpus, &dataset.queries, &dataset.test_qrels, &[10])?.macro_avg[0])
    };
    let base = ndcg10(&distilled)?;

    let mut aligned = distilled.clone().with_tau(0.05)?;
    train_align(&mut aligned, &triples, &dataset.corpus, &dataset.queries, &config, None)?;

    let mut pairwise_only = distilled.clone().with_tau(0.05)?;
    let bt_config = AlignConfig { loss: AlignLoss::Bt, ..config };
    train_align(&mut pairwise_only, &triples, &dataset.corpus, &dataset.queries, &bt_config, None)?;

    println!("\nheld-out nDCG@10:");
    println!("  distilled           {base:.4}");
    println!("  aligned, partial-pl {:.4}", ndcg10(&aligned)?);
    println!("  aligned, bt         {:.4}", ndcg10(&pairwise_only)?);
    Ok(())
}
