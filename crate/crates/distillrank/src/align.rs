//! Stage-2 alignment: pair sampling from top-K retrievals, LLM pairwise
//! comparison, triple batching with distinct queries, and training with the
//! top-2 ranking loss (or plain pairwise loss for the ablation harness).

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::data::{
    read_comparison_log, read_triples, write_comparison_log, write_triples, ComparisonRecord,
    Corpus, PreferenceTriple, Qrels, Query, QuerySet,
};
use crate::encoder::{seeded_fnv1a, EmbeddingVector, EncoderModel, SparseGrad, TokenBag};
use crate::error::{Error, Result};
use crate::losses::{bt_loss, partial_pl_loss, AlignBatchScores};
use crate::optim::{cosine_lr, AdamState, LossCurvePoint};
use crate::retrieval::{build_index, retrieve_topk, RankedList};
use crate::synthesis::{PromptKind, PromptSet, JUDGMENT_TEMPERATURE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlignLoss {
    /// Winner over loser over the rest of the batch (two-factor ranking).
    #[default]
    PartialPl,
    /// Winner over loser only, ignoring the batch.
    Bt,
}

impl AlignLoss {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "partial-pl" => Ok(AlignLoss::PartialPl),
            "bt" => Ok(AlignLoss::Bt),
            other => Err(Error::validation(format!(
                "unknown alignment loss '{other}', expected 'partial-pl' or 'bt'"
            ))),
        }
    }
}

impl std::fmt::Display for AlignLoss {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AlignLoss::PartialPl => "partial-pl",
            AlignLoss::Bt => "bt",
        })
    }
}

#[derive(Debug, Clone)]
pub struct AlignConfig {
    /// Retrieval depth for preference collection.
    pub k: usize,
    /// Pairs sampled per query; at most K(K-1)/2.
    pub n_pairs: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub loss: AlignLoss,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            k: 5,
            n_pairs: 10,
            batch_size: 100,
            epochs: 1,
            learning_rate: 5e-2,
            warmup_steps: 1000,
            weight_decay: 0.01,
            seed: 0,
            loss: AlignLoss::PartialPl,
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::validation("alignment K must be >= 2"));
        }
        let max_pairs = self.k * (self.k - 1) / 2;
        if self.n_pairs == 0 || self.n_pairs > max_pairs {
            return Err(Error::validation(format!(
                "n_pairs must be in [1, {max_pairs}] for K = {}, got {}",
                self.k, self.n_pairs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("alignment batch_size must be >= 1"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::validation("learning_rate must be positive"));
        }
        Ok(())
    }
}

/// N distinct unordered pairs from a top-K list, sampled uniformly without
/// replacement. The slot order within each pair (which passage is presented
/// first) is randomized too, to offset position bias in the judge.
pub fn sample_pairs(ranked: &RankedList, n: usize, seed: u64) -> Result<Vec<(String, String)>> {
    let k = ranked.len();
    let max_pairs = k * (k.saturating_sub(1)) / 2;
    if n == 0 || n > max_pairs {
        return Err(Error::validation(format!(
            "cannot sample {n} distinct pairs from a list of {k} (max {max_pairs})"
        )));
    }
    let mut all: Vec<(usize, usize)> = Vec::with_capacity(max_pairs);
    for i in 0..k {
        for j in i + 1..k {
            all.push((i, j));
        }
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    all.shuffle(&mut rng);
    Ok(all
        .into_iter()
        .take(n)
        .map(|(i, j)| {
            let a = ranked.entries[i].0.clone();
            let b = ranked.entries[j].0.clone();
            if rng.gen::<bool>() {
                (b, a)
            } else {
                (a, b)
            }
        })
        .collect())
}

/// Winning slot of a comparison reply: the earliest case-insensitive
/// occurrence of "Passage #1" / "Passage #2" decides; neither label means
/// the reply is unresolvable.
fn resolve_reply(reply: &str) -> Option<u8> {
    let lower = reply.to_lowercase();
    match (lower.find("passage #1"), lower.find("passage #2")) {
        (Some(a), Some(b)) => Some(if a < b { 1 } else { 2 }),
        (Some(_), None) => Some(1),
        (None, Some(_)) => Some(2),
        (None, None) => None,
    }
}

#[derive(Debug, Clone)]
pub struct CompareOutcome {
    /// 1 or 2; `None` after an unresolvable reply and one retry.
    pub winner_slot: Option<u8>,
    /// The reply that decided the outcome (the retry's reply if one ran).
    pub raw_answer: String,
}

/// Ask the judge which slot is more relevant. An unresolvable reply is
/// retried once at temperature zero; a second failure is reported as a skip,
/// never fabricated.
pub fn compare_pair(
    client: &dyn crate::llm::ChatClient,
    prompts: &PromptSet,
    question: &str,
    slot1_text: &str,
    slot2_text: &str,
) -> Result<CompareOutcome> {
    let prompt = prompts.render(
        PromptKind::Compare,
        &[
            ("question", question),
            ("passage1", slot1_text),
            ("passage2", slot2_text),
        ],
    )?;
    let first = client.complete(&prompt, JUDGMENT_TEMPERATURE)?;
    if let Some(slot) = resolve_reply(&first) {
        return Ok(CompareOutcome {
            winner_slot: Some(slot),
            raw_answer: first,
        });
    }
    let retry = client.complete(&prompt, JUDGMENT_TEMPERATURE)?;
    Ok(CompareOutcome {
        winner_slot: resolve_reply(&retry),
        raw_answer: retry,
    })
}

#[derive(Debug, Clone)]
pub struct CollectOptions {
    pub parallelism: usize,
    /// Abort once skipped comparisons exceed this fraction of those planned.
    pub max_skip_ratio: f64,
}

impl Default for CollectOptions {
    fn default() -> Self {
        CollectOptions {
            parallelism: 4,
            max_skip_ratio: 0.10,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct CollectSummary {
    pub queries: usize,
    pub new_queries: usize,
    pub comparisons: usize,
    pub skipped: usize,
    pub triples: usize,
}

/// For every train query: retrieve top-K with the stage-1 model, sample N
/// pairs, and ask the judge for each. Output files are ordered by query id;
/// queries already present in the comparison log are skipped on resume.
#[allow(clippy::too_many_arguments)]
pub fn collect_preferences(
    client: &dyn crate::llm::ChatClient,
    prompts: &PromptSet,
    model: &EncoderModel,
    corpus: &Corpus,
    queries: &QuerySet,
    qrels: &Qrels,
    config: &AlignConfig,
    triples_path: &Path,
    log_path: &Path,
    options: &CollectOptions,
) -> Result<(Vec<PreferenceTriple>, Vec<ComparisonRecord>)> {
    config.validate()?;
    if config.k > corpus.len() {
        return Err(Error::validation(format!(
            "alignment K = {} exceeds corpus size {}",
            config.k,
            corpus.len()
        )));
    }

    let existing_triples = if triples_path.exists() {
        read_triples(triples_path)?
    } else {
        Vec::new()
    };
    let existing_log = if log_path.exists() {
        read_comparison_log(log_path)?
    } else {
        Vec::new()
    };
    let done: std::collections::BTreeSet<&str> =
        existing_log.iter().map(|r| r.query_id.as_str()).collect();

    let index = build_index(model, corpus);
    let tasks: Vec<&Query> = queries
        .iter()
        .filter(|q| qrels.judged(&q.id).next().is_some())
        .filter(|q| !done.contains(q.id.as_str()))
        .collect();

    type QueryResult = Result<(Vec<PreferenceTriple>, Vec<ComparisonRecord>)>;
    let next_task = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, QueryResult)>();
    let workers = options.parallelism.max(1);

    let run_query = |query: &Query| -> QueryResult {
        let ranked = retrieve_topk(&index, model, query, config.k)?;
        let pair_seed = seeded_fnv1a(config.seed, &format!("pairs-{}", query.id));
        let pairs = sample_pairs(&ranked, config.n_pairs, pair_seed)?;
        let mut triples = Vec::new();
        let mut log = Vec::new();
        for (slot1_id, slot2_id) in pairs {
            let slot1 = corpus.get(&slot1_id).expect("retrieved id in corpus");
            let slot2 = corpus.get(&slot2_id).expect("retrieved id in corpus");
            let outcome = compare_pair(
                client,
                prompts,
                &query.text,
                &slot1.full_text(),
                &slot2.full_text(),
            )?;
            let winner_id = outcome.winner_slot.map(|slot| {
                if slot == 1 {
                    slot1_id.clone()
                } else {
                    slot2_id.clone()
                }
            });
            if let Some(winner) = &winner_id {
                let loser = if winner == &slot1_id { &slot2_id } else { &slot1_id };
                triples.push(PreferenceTriple {
                    query_id: query.id.clone(),
                    winner_id: winner.clone(),
                    loser_id: loser.clone(),
                    winner_rank: ranked.rank_of(winner).expect("winner in list"),
                    loser_rank: ranked.rank_of(loser).expect("loser in list"),
                });
            }
            log.push(ComparisonRecord {
                query_id: query.id.clone(),
                slot1_id: slot1_id.clone(),
                slot2_id: slot2_id.clone(),
                raw_answer: outcome.raw_answer,
                winner_id,
                skipped: outcome.winner_slot.is_none(),
            });
        }
        Ok((triples, log))
    };

    let mut new_triples: Vec<PreferenceTriple> = Vec::new();
    let mut new_log: Vec<ComparisonRecord> = Vec::new();
    let mut skipped = 0usize;
    std::thread::scope(|scope| -> Result<()> {
        for _ in 0..workers {
            let tx = tx.clone();
            let tasks = &tasks;
            let next_task = &next_task;
            let run_query = &run_query;
            scope.spawn(move || loop {
                let i = next_task.fetch_add(1, Ordering::SeqCst);
                if i >= tasks.len() {
                    break;
                }
                if tx.send((i, run_query(tasks[i]))).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        let mut pending: BTreeMap<usize, QueryResult> = BTreeMap::new();
        let mut next_to_take = 0usize;
        for (i, result) in rx {
            pending.insert(i, result);
            while let Some(result) = pending.remove(&next_to_take) {
                next_to_take += 1;
                let (triples, log) = result?;
                skipped += log.iter().filter(|r| r.skipped).count();
                new_triples.extend(triples);
                new_log.extend(log);
            }
        }
        Ok(())
    })?;

    let planned = tasks.len() * config.n_pairs;
    if planned > 0 && (skipped as f64) > options.max_skip_ratio * planned as f64 {
        return Err(Error::ComparisonSkipRatio {
            skipped,
            total: planned,
            limit: options.max_skip_ratio * 100.0,
        });
    }

    let mut all_triples = existing_triples;
    all_triples.extend(new_triples);
    let mut all_log = existing_log;
    all_log.extend(new_log);
    for path in [triples_path, log_path] {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    write_triples(&all_triples, triples_path)?;
    write_comparison_log(&all_log, log_path)?;

    Ok((all_triples, all_log))
}

/// Round-robin batching: triples of the same query are dealt into different
/// rounds, and each round is chunked to the batch size, so query ids within
/// a batch are always distinct. Order is seeded per epoch.
pub fn build_align_batches(
    triples: &[PreferenceTriple],
    config: &AlignConfig,
    epoch: usize,
) -> Vec<Vec<usize>> {
    let mut by_query: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (idx, t) in triples.iter().enumerate() {
        by_query.entry(t.query_id.as_str()).or_default().push(idx);
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seeded_fnv1a(
        config.seed,
        &format!("align-batches-{epoch}"),
    ));
    let mut query_order: Vec<&str> = by_query.keys().copied().collect();
    query_order.shuffle(&mut rng);
    for list in by_query.values_mut() {
        list.shuffle(&mut rng);
    }

    let max_rounds = by_query.values().map(Vec::len).max().unwrap_or(0);
    let mut batches = Vec::new();
    for round in 0..max_rounds {
        let round_items: Vec<usize> = query_order
            .iter()
            .filter_map(|qid| by_query[qid].get(round).copied())
            .collect();
        for chunk in round_items.chunks(config.batch_size) {
            batches.push(chunk.to_vec());
        }
    }
    batches
}

/// Per-step training diagnostics.
#[derive(Debug)]
pub struct AlignStepOutcome {
    pub mean_loss: f64,
    /// (factor-1 terms, factor-2 terms) per anchor; present only for the
    /// two-factor ranking loss.
    pub factor_terms: Vec<(usize, usize)>,
}

struct AlignEntity {
    bag: TokenBag,
    unit: EmbeddingVector,
}

fn entity(model: &EncoderModel, text: &str) -> AlignEntity {
    let bag = model.tokenize(text);
    let unit = model.encode(&bag);
    AlignEntity { bag, unit }
}

/// One optimizer step over a batch of triples.
pub fn align_step(
    model: &mut EncoderModel,
    triples: &[PreferenceTriple],
    batch: &[usize],
    corpus: &Corpus,
    queries: &QuerySet,
    optimizer: &mut AdamState,
    lr: f64,
    weight_decay: f64,
    loss_kind: AlignLoss,
) -> Result<AlignStepOutcome> {
    if batch.is_empty() {
        return Err(Error::validation("empty alignment batch"));
    }
    let n = batch.len();
    let tau = model.tau();

    let mut query_entities = Vec::with_capacity(n);
    let mut winner_entities = Vec::with_capacity(n);
    let mut loser_entities = Vec::with_capacity(n);
    let mut query_ids = Vec::with_capacity(n);
    for &idx in batch {
        let t = &triples[idx];
        let query = queries
            .get(&t.query_id)
            .ok_or_else(|| Error::validation(format!("triple query '{}' not in dataset", t.query_id)))?;
        let winner = corpus
            .get(&t.winner_id)
            .ok_or_else(|| Error::validation(format!("winner '{}' not in corpus", t.winner_id)))?;
        let loser = corpus
            .get(&t.loser_id)
            .ok_or_else(|| Error::validation(format!("loser '{}' not in corpus", t.loser_id)))?;
        query_ids.push(query.id.clone());
        query_entities.push(entity(model, &query.text));
        winner_entities.push(entity(model, &winner.full_text()));
        loser_entities.push(entity(model, &loser.full_text()));
    }

    let mut total_loss = 0.0;
    let mut max_abs_similarity: f64 = 0.0;
    let mut factor_terms = Vec::new();
    let scale = 1.0 / n as f64;
    // upstream gradients per entity: query / winner / loser per member
    let mut up_query = vec![vec![0.0; model.dim()]; n];
    let mut up_winner = vec![vec![0.0; model.dim()]; n];
    let mut up_loser = vec![vec![0.0; model.dim()]; n];

    for i in 0..n {
        let q = &query_entities[i].unit;
        let s_win: Vec<f64> = winner_entities
            .iter()
            .map(|w| model.similarity(q, &w.unit))
            .collect();
        let s_lose: Vec<f64> = loser_entities
            .iter()
            .map(|l| model.similarity(q, &l.unit))
            .collect();
        for s in s_win.iter().chain(&s_lose) {
            max_abs_similarity = max_abs_similarity.max(s.abs());
        }

        // gradients with respect to the similarity slots of this anchor
        let (loss, grad_win, grad_lose) = match loss_kind {
            AlignLoss::PartialPl => {
                let result = partial_pl_loss(&AlignBatchScores {
                    anchor_index: i,
                    s_win,
                    s_lose,
                })?;
                factor_terms.push((result.factor1_terms, result.factor2_terms));
                (result.loss, result.grad_win, result.grad_lose)
            }
            AlignLoss::Bt => {
                let (loss, (gw, gl)) = bt_loss(s_win[i], s_lose[i]);
                let mut grad_win = vec![0.0; n];
                let mut grad_lose = vec![0.0; n];
                grad_win[i] = gw;
                grad_lose[i] = gl;
                (loss, grad_win, grad_lose)
            }
        };
        total_loss += loss;

        for j in 0..n {
            for (g, passage_entity, up_passage) in [
                (grad_win[j], &winner_entities[j], &mut up_winner[j]),
                (grad_lose[j], &loser_entities[j], &mut up_loser[j]),
            ] {
                if g == 0.0 {
                    continue;
                }
                let w = g * scale / tau;
                for (u, x) in up_query[i].iter_mut().zip(passage_entity.unit.values()) {
                    *u += w * x;
                }
                for (u, qv) in up_passage.iter_mut().zip(q.values()) {
                    *u += w * qv;
                }
            }
        }
    }

    let mean_loss = total_loss / n as f64;
    if !mean_loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            step: optimizer.step_count() + 1,
            max_abs_similarity,
            batch_queries: query_ids,
        });
    }

    let mut grad = SparseGrad::new();
    for j in 0..n {
        grad.merge(&model.encode_backward(&query_entities[j].bag, &up_query[j]));
        grad.merge(&model.encode_backward(&winner_entities[j].bag, &up_winner[j]));
        grad.merge(&model.encode_backward(&loser_entities[j].bag, &up_loser[j]));
    }
    optimizer.apply(model, &grad, lr, weight_decay);

    Ok(AlignStepOutcome {
        mean_loss,
        factor_terms,
    })
}

/// Continue training a stage-1 model on collected preference triples.
pub fn train_align(
    model: &mut EncoderModel,
    triples: &[PreferenceTriple],
    corpus: &Corpus,
    queries: &QuerySet,
    config: &AlignConfig,
    ckpt_dir: Option<&Path>,
) -> Result<Vec<LossCurvePoint>> {
    config.validate()?;
    if triples.is_empty() {
        return Err(Error::validation("no preference triples to train on"));
    }
    if let Some(dir) = ckpt_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let plan: Vec<Vec<Vec<usize>>> = (0..config.epochs)
        .map(|epoch| build_align_batches(triples, config, epoch))
        .collect();
    let total_steps: u64 = plan.iter().map(|epoch| epoch.len() as u64).sum();

    let mut optimizer = AdamState::new();
    let mut curve = Vec::with_capacity(total_steps as usize);
    let mut step: u64 = 0;
    for (epoch, batches) in plan.iter().enumerate() {
        for batch in batches {
            let lr = cosine_lr(step, total_steps, config.warmup_steps as u64, config.learning_rate);
            let outcome = align_step(
                model,
                triples,
                batch,
                corpus,
                queries,
                &mut optimizer,
                lr,
                config.weight_decay,
                config.loss,
            )?;
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
