//! The distillation stage in isolation: synthesize records, join them with
//! the dataset, train the encoder on the clustering loss, and compare
//! held-out retrieval before and after.
//!
//! Run with: cargo run --example train_stage1

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
    let records_path = dir.path().join("records.jsonl");
    run_synthesis(
        &oracle,
        &prompts,
        &dataset.corpus,
        &dataset.queries,
        &dataset.train_qrels,
        &records_path,
        4,
        &SynthesisOptions::default(),
    )?;
    let examples = join_examples(
        &read_records(&records_path)?,
        &dataset.corpus,
        &dataset.queries,
        &dataset.train_qrels,
    )?;
    println!("{} training examples ({} with relabeled positives)",
        examples.len(),
        examples.iter().filter(|e| e.relabeled).count());

    // the hashed bag encoder wants a softer temperature than a transformer
    let mut model = EncoderModel::new(32, 4096, 0.5, 7)?;
    let ks = [1usize, 3, 5, 10];
    let before = evaluate(&model, &dataset.corpus, &dataset.queries, &dataset.test_qrels, &ks)?;

    let curve = train_distill(
        &mut model,
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
    println!(
        "trained {} steps: loss {:.4} -> {:.4}",
        curve.len(),
        curve.first().unwrap().mean_loss,
        curve.last().unwrap().mean_loss
    );

    let after = evaluate(&model, &dataset.corpus, &dataset.queries, &dataset.test_qrels, &ks)?;
    println!("\nheld-out nDCG before and after distillation:");
    for (i, k) in ks.iter().enumerate() {
        println!("  nDCG@{k:<3} {:.4} -> {:.4}", before.macro_avg[i], after.macro_avg[i]);
    }
    Ok(())
}
