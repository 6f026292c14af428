//! Two-stage training for dense text retrievers, driven by a black-box LLM.
//!
//! Stage 1 (distillation) synthesizes training signal per query — a
//! chain-of-thought expansion, a synthetic positive, a synthetic
//! hard-negative — self-verifies the positive for hallucination (demoting
//! failures to extra hard-negatives), and trains the encoder with a
//! clustering loss over all of it. Stage 2 (alignment) retrieves top-K
//! passages with the distilled encoder, collects LLM pairwise preferences
//! over sampled pairs, and continues training with a top-2 ranking loss that
//! keeps both compared passages separated from in-batch negatives.
//!
//! The encoder is a deliberately small hashed bag-of-tokens model with exact
//! analytic gradients: the training machinery, not the network, is the point,
//! and everything runs in seconds on a CPU. A seeded mock LLM grounded in the
//! dataset's relevance judgments stands in for the remote model, so the whole
//! loop is reproducible offline; the HTTP client targets any
//! chat-completions-compatible endpoint when real feedback is wanted.
//!
//! Start with the runnable examples (`cargo run --example end_to_end`) or
//! the bundled demo (`cargo run --bin distillrank -- demo`).

pub mod align;
pub mod config;
pub mod data;
pub mod datagen;
pub mod distill;
pub mod encoder;
pub mod error;
pub mod llm;
pub mod losses;
pub mod optim;
pub mod pipeline;
pub mod retrieval;
pub mod synthesis;

pub use align::{
    collect_preferences, sample_pairs, train_align, AlignConfig, AlignLoss, CollectOptions,
};
pub use data::{
    load_dataset, Corpus, Dataset, Passage, PreferenceTriple, Qrels, Query, QuerySet,
    SynthesisRecord, ValidationMode,
};
pub use distill::{build_batches, distill_step, join_examples, train_distill, DistillExample, TrainConfig};
pub use encoder::{tokenize, EmbeddingVector, EncoderModel, TokenBag};
pub use error::{Error, Result};
pub use llm::{ChatClient, HttpChatClient, LlmEndpoint, MockOracle, MockOracleConfig};
pub use losses::{
    bt_loss, distill_loss, info_nce_loss, marginal_top2_prob, partial_pl_loss,
    pl_brute_force_prob, AlignBatchScores, DistillBatchScores, RewardVector,
};
pub use optim::{cosine_lr, AdamState, LossCurvePoint};
pub use pipeline::{format_demo_report, run_demo, DemoOptions, DemoReport};
pub use retrieval::{build_index, evaluate, ndcg_at_k, retrieve_topk, DenseIndex, EvalReport, RankedList};
pub use synthesis::{run_synthesis, synthesize_record, PromptKind, PromptSet, SynthesisOptions};
