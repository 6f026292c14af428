//! Stage-1 training: batch assembly from synthesis records and gradient
//! descent on the clustering loss.
//!
//! Each example contributes five texts per step: the query, its manually
//! labeled passage, the synthetic positive, the chain-of-thought expansion
//! and the synthetic hard-negative. Both the query side and the passage side
//! of the shared encoder receive gradients.

use std::collections::{HashSet, VecDeque};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::data::{Corpus, Passage, Qrels, Query, QuerySet, SynthesisRecord};
use crate::encoder::{seeded_fnv1a, EmbeddingVector, EncoderModel, SparseGrad, TokenBag};
use crate::error::{Error, Result};
use crate::losses::{distill_loss, DistillBatchScores};
use crate::optim::{cosine_lr, AdamState, LossCurvePoint};

/// Learning rate commonly used when the encoder is a full-scale pretrained
/// transformer. The hashed desk encoder trains at [`TrainConfig::default`]'s
/// much larger rate; both are plain config values.
pub const FULL_SCALE_LEARNING_RATE: f64 = 2e-5;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 60,
            learning_rate: 5e-2,
            epochs: 1,
            warmup_steps: 1000,
            weight_decay: 0.01,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::validation(
                "batch_size must be >= 2: every loss term needs in-batch company",
            ));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::validation("learning_rate must be positive"));
        }
        Ok(())
    }
}

/// One synthesis record joined with its dataset context.
#[derive(Debug, Clone)]
pub struct DistillExample {
    pub query: Query,
    pub gold: Passage,
    pub q_cot: String,
    pub p_plus: String,
    pub p_minus: String,
    pub relabeled: bool,
}

/// Join records against the dataset: every record's query must exist and
/// have a gold passage.
pub fn join_examples(
    records: &[SynthesisRecord],
    corpus: &Corpus,
    queries: &QuerySet,
    qrels: &Qrels,
) -> Result<Vec<DistillExample>> {
    records
        .iter()
        .map(|r| {
            let query = queries
                .get(&r.query_id)
                .ok_or_else(|| Error::validation(format!("record query '{}' not in dataset", r.query_id)))?;
            let gold_id = qrels
                .gold_passage(&r.query_id)
                .ok_or_else(|| Error::validation(format!("query '{}' has no gold passage", r.query_id)))?;
            let gold = corpus
                .get(gold_id)
                .ok_or_else(|| Error::validation(format!("gold passage '{gold_id}' not in corpus")))?;
            Ok(DistillExample {
                query: query.clone(),
                gold: gold.clone(),
                q_cot: r.q_cot.clone(),
                p_plus: r.p_plus.clone(),
                p_minus: r.p_minus.clone(),
                relabeled: r.relabeled,
            })
        })
        .collect()
}

/// Seeded shuffle, then batches of `batch_size` with all query ids distinct
/// within a batch; clashing examples are deferred to later batches. A final
/// short batch is kept only if it has at least 2 examples (a dropped leftover
/// re-enters the next epoch's shuffle).
pub fn build_batches(
    examples: &[DistillExample],
    config: &TrainConfig,
    epoch: usize,
) -> Vec<Vec<usize>> {
    let ids: Vec<&str> = examples.iter().map(|e| e.query.id.as_str()).collect();
    batch_indices(&ids, config.batch_size, config.seed, epoch, "distill-batches")
}

pub(crate) fn batch_indices(
    query_ids: &[&str],
    batch_size: usize,
    seed: u64,
    epoch: usize,
    tag: &str,
) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..query_ids.len()).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seeded_fnv1a(seed, &format!("{tag}-{epoch}")));
    order.shuffle(&mut rng);

    let mut remaining: VecDeque<usize> = order.into();
    let mut batches = Vec::new();
    while !remaining.is_empty() {
        let mut batch = Vec::with_capacity(batch_size);
        let mut seen: HashSet<&str> = HashSet::with_capacity(batch_size);
        let mut deferred: Vec<usize> = Vec::new();
        while batch.len() < batch_size {
            let Some(idx) = remaining.pop_front() else { break };
            if seen.insert(query_ids[idx]) {
                batch.push(idx);
            } else {
                deferred.push(idx);
            }
        }
        for idx in deferred.into_iter().rev() {
            remaining.push_front(idx);
        }
        if batch.len() >= 2 {
            batches.push(batch);
        }
    }
    batches
}

/// Loss-structure counts for one anchor, for auditing the relabel plumbing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnchorAudit {
    pub query_id: String,
    pub active_positives: usize,
    pub denominator_terms: usize,
}

#[derive(Debug)]
pub struct StepOutcome {
    pub mean_loss: f64,
    pub audit: Vec<AnchorAudit>,
}

struct EncodedExample {
    bags: [TokenBag; 5],
    units: [EmbeddingVector; 5],
}

/// Text slots per example: query, manually labeled passage, synthetic
/// positive, chain-of-thought expansion, synthetic hard-negative.
const QUERY: usize = 0;
const SLOT_TEXTS: [usize; 4] = [1, 2, 3, 4];

fn encode_example(model: &EncoderModel, example: &DistillExample) -> EncodedExample {
    let texts = [
        example.query.text.clone(),
        example.gold.full_text(),
        example.p_plus.clone(),
        example.q_cot.clone(),
        example.p_minus.clone(),
    ];
    let bags = texts.map(|t| model.tokenize(&t));
    let units = [
        model.encode(&bags[0]),
        model.encode(&bags[1]),
        model.encode(&bags[2]),
        model.encode(&bags[3]),
        model.encode(&bags[4]),
    ];
    EncodedExample { bags, units }
}

/// One optimizer step on a batch: encode all five texts per example, average
/// the clustering loss over anchors, backpropagate through similarity,
/// normalization and pooling, and apply one Adam update at `lr`.
pub fn distill_step(
    model: &mut EncoderModel,
    examples: &[DistillExample],
    batch: &[usize],
    optimizer: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<StepOutcome> {
    if batch.len() < 2 {
        return Err(Error::validation("distill step needs a batch of at least 2"));
    }
    let n = batch.len();
    let tau = model.tau();
    let encoded: Vec<EncodedExample> = batch
        .iter()
        .map(|&idx| encode_example(model, &examples[idx]))
        .collect();

    let mut total_loss = 0.0;
    let mut max_abs_similarity: f64 = 0.0;
    let mut audit = Vec::with_capacity(n);
    // upstream[j][slot] = d(mean loss)/d(unit embedding of text slot of j)
    let mut upstream: Vec<[Vec<f64>; 5]> = (0..n)
        .map(|_| std::array::from_fn(|_| vec![0.0; model.dim()]))
        .collect();

    let scale = 1.0 / n as f64;
    for (i, anchor) in encoded.iter().enumerate() {
        let example = &examples[batch[i]];
        let mut scores = DistillBatchScores {
            anchor_index: i,
            s_manual: Vec::with_capacity(n),
            s_synth_pos: Vec::with_capacity(n),
            s_cot: Vec::with_capacity(n),
            s_synth_neg: Vec::with_capacity(n),
            positive_mask: [true, !example.relabeled, true],
        };
        for member in &encoded {
            let q = &anchor.units[QUERY];
            scores.s_manual.push(model.similarity(q, &member.units[1]));
            scores.s_synth_pos.push(model.similarity(q, &member.units[2]));
            scores.s_cot.push(model.similarity(q, &member.units[3]));
            scores.s_synth_neg.push(model.similarity(q, &member.units[4]));
        }
        for s in scores
            .s_manual
            .iter()
            .chain(&scores.s_synth_pos)
            .chain(&scores.s_cot)
            .chain(&scores.s_synth_neg)
        {
            max_abs_similarity = max_abs_similarity.max(s.abs());
        }

        let (loss, grads) = distill_loss(&scores)?;
        total_loss += loss;
        audit.push(AnchorAudit {
            query_id: example.query.id.clone(),
            active_positives: scores.active_positives(),
            denominator_terms: scores.denominator_terms(),
        });

        // s = dot(u_q, u_x) / tau, so d s/d u_q = u_x / tau and vice versa.
        for (j, member) in encoded.iter().enumerate() {
            let slot_grads = [
                grads.s_manual[j],
                grads.s_synth_pos[j],
                grads.s_cot[j],
                grads.s_synth_neg[j],
            ];
            for (slot, &g) in SLOT_TEXTS.iter().zip(&slot_grads) {
                if g == 0.0 {
                    continue;
                }
                let w = g * scale / tau;
                let q_unit = anchor.units[QUERY].values();
                let x_unit = member.units[*slot].values();
                let q_up = &mut upstream[i][QUERY];
                for (u, x) in q_up.iter_mut().zip(x_unit) {
                    *u += w * x;
                }
                let x_up = &mut upstream[j][*slot];
                for (u, q) in x_up.iter_mut().zip(q_unit) {
                    *u += w * q;
                }
            }
        }
    }

    let mean_loss = total_loss / n as f64;
    if !mean_loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            step: optimizer.step_count() + 1,
            max_abs_similarity,
            batch_queries: batch
                .iter()
                .map(|&idx| examples[idx].query.id.clone())
                .collect(),
        });
    }

    let mut grad = SparseGrad::new();
    for (j, enc) in encoded.iter().enumerate() {
        for slot in 0..5 {
            grad.merge(&model.encode_backward(&enc.bags[slot], &upstream[j][slot]));
        }
    }
    optimizer.apply(model, &grad, lr, weight_decay);

    Ok(StepOutcome { mean_loss, audit })
}

/// Run the full stage-1 loop: per-epoch seeded batches, cosine schedule with
/// warmup, a checkpoint per epoch when `ckpt_dir` is given, and the loss
/// curve as the return value.
pub fn train_distill(
    model: &mut EncoderModel,
    examples: &[DistillExample],
    config: &TrainConfig,
    ckpt_dir: Option<&Path>,
) -> Result<Vec<LossCurvePoint>> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::validation("no distill examples"));
    }
    if let Some(dir) = ckpt_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    // Batch composition is seed-driven, so the whole plan is known up front
    // and the cosine schedule gets an exact step count.
    let plan: Vec<Vec<Vec<usize>>> = (0..config.epochs)
        .map(|epoch| build_batches(examples, config, epoch))
        .collect();
    let total_steps: u64 = plan.iter().map(|epoch| epoch.len() as u64).sum();

    let mut optimizer = AdamState::new();
    let mut curve = Vec::with_capacity(total_steps as usize);
    let mut step: u64 = 0;
    for (epoch, batches) in plan.iter().enumerate() {
        for batch in batches {
            let lr = cosine_lr(step, total_steps, config.warmup_steps as u64, config.learning_rate);
            let outcome = distill_step(model, examples, batch, &mut optimizer, lr, config.weight_decay)?;
            step += 1;
            curve.push(LossCurvePoint {
                step,
                mean_loss: outcome.mean_loss,
                lr,
            });
        }
        if let Some(dir) = ckpt_dir {
            model.save(&dir.join(format!("epoch_{:04}.ckpt", epoch + 1)))?;
        }
    }
    Ok(curve)
}
