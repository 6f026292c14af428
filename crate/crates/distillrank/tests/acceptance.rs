//! Acceptance suite: one test per criterion, each printing a pass/fail line
//! (visible with `cargo test --test acceptance -- --nocapture`).

mod common;

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use common::{
    assert_grad_close, central_diff, marginal_top2_by_enumeration, permutations, random_rewards,
};
use distillrank::align::sample_pairs;
use distillrank::data::read_records;
use distillrank::datagen::{generate, DatagenConfig};
use distillrank::distill::{distill_step, join_examples, DistillExample, TrainConfig};
use distillrank::encoder::EncoderModel;
use distillrank::llm::{MockOracle, MockOracleConfig};
use distillrank::losses::{
    bt_loss, distill_loss, info_nce_loss, marginal_top2_prob, partial_pl_loss,
    pl_brute_force_prob, AlignBatchScores, DistillBatchScores, RewardVector,
};
use distillrank::optim::AdamState;
use distillrank::pipeline::{run_demo, DemoOptions, DemoReport};
use distillrank::retrieval::{build_index, ndcg_at_k, retrieve_topk, RankedList};
use distillrank::synthesis::{run_synthesis, PromptKind, PromptSet, SynthesisOptions};
use distillrank::data::{Corpus, Passage, Qrels, Query};

const FD_STEP: f64 = 1e-5;
const SIM_RTOL: f64 = 1e-8;
const SIM_ATOL: f64 = 5e-10;

struct Outcome {
    label: &'static str,
    passed: bool,
    detail: String,
}

fn report(outcome: Outcome) {
    println!(
        "{} criterion {}: {}",
        if outcome.passed { "PASS" } else { "FAIL" },
        outcome.label,
        outcome.detail
    );
    assert!(outcome.passed, "criterion {} failed: {}", outcome.label, outcome.detail);
}

fn pseudo_uniform(seed: u64, lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let mut state = seed.wrapping_mul(0x2545_f491_4f6c_dd1d).wrapping_add(1);
    (0..n)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            lo + (hi - lo) * ((state >> 11) as f64 / (1u64 << 53) as f64)
        })
        .collect()
}

#[test]
fn criterion_1_marginalization_theorem() {
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    for m in 3..=7usize {
        for trial in 0..200u64 {
            let z = random_rewards(m, 1000 * m as u64 + trial);
            // rotate through index pairs so every (first, second) shape is hit
            let first = (trial as usize) % m;
            let second = (first + 1 + (trial as usize / m) % (m - 1)) % m;
            let closed = marginal_top2_prob(&z, first, second).unwrap();
            let enumerated = marginal_top2_by_enumeration(&z, first, second);
            worst = worst.max((closed - enumerated).abs());
        }
    }
    let elapsed = started.elapsed();
    report(Outcome {
        label: "1 (top-2 marginal equals exhaustive permutation sum)",
        passed: worst <= 1e-9 && elapsed < Duration::from_secs(10),
        detail: format!("max |closed - enumerated| = {worst:.3e} over 1000 cases in {elapsed:.2?}"),
    });
}

#[test]
fn criterion_2_ranking_probabilities_normalize() {
    let mut worst: f64 = 0.0;
    for m in 2..=6usize {
        for trial in 0..100u64 {
            let z = random_rewards(m, 77 * m as u64 + trial);
            let items: Vec<usize> = (0..m).collect();
            let total: f64 = permutations(&items)
                .into_iter()
                .map(|ranking| pl_brute_force_prob(&z, &ranking).unwrap())
                .sum();
            worst = worst.max((total - 1.0).abs());
        }
    }
    report(Outcome {
        label: "2 (ranking probabilities sum to 1 over all permutations)",
        passed: worst <= 1e-9,
        detail: format!("max |sum - 1| = {worst:.3e} for M in 2..=6, 100 vectors each"),
    });
}

#[test]
fn criterion_3_reduction_identities() {
    let mut worst: f64 = 0.0;
    // singleton batch reduces to the pairwise loss
    for trial in 0..50u64 {
        let s = pseudo_uniform(trial, -3.0, 3.0, 2);
        let single = partial_pl_loss(&AlignBatchScores {
            anchor_index: 0,
            s_win: vec![s[0]],
            s_lose: vec![s[1]],
        })
        .unwrap();
        let (bt, (gw, gl)) = bt_loss(s[0], s[1]);
        worst = worst.max((single.loss - bt).abs());
        worst = worst.max((single.grad_win[0] - gw).abs());
        worst = worst.max((single.grad_lose[0] - gl).abs());
    }
    // two-item ranking probability reduces to the pairwise probability
    for trial in 0..50u64 {
        let r = pseudo_uniform(500 + trial, -3.0, 3.0, 2);
        let z = RewardVector::from_rewards(&r).unwrap();
        let ranked = pl_brute_force_prob(&z, &[0, 1]).unwrap();
        let pairwise = (-bt_loss(r[0], r[1]).0).exp();
        worst = worst.max((ranked - pairwise).abs());
    }
    // all-equal clustering loss has the closed form -log(p/(4B))
    for n in [2usize, 5, 60] {
        for (mask, positives) in [([true, true, true], 3.0), ([true, false, true], 2.0)] {
            let batch = DistillBatchScores {
                anchor_index: n / 2,
                s_manual: vec![0.4; n],
                s_synth_pos: vec![0.4; n],
                s_cot: vec![0.4; n],
                s_synth_neg: vec![0.4; n],
                positive_mask: mask,
            };
            let (loss, _) = distill_loss(&batch).unwrap();
            let expected = -(positives / (4.0 * n as f64)).ln();
            worst = worst.max((loss - expected).abs());
        }
    }
    report(Outcome {
        label: "3 (reduction identities)",
        passed: worst <= 1e-12,
        detail: format!("max deviation {worst:.3e} across all identities"),
    });
}

#[test]
fn criterion_4_gradient_suite() {
    let started = Instant::now();

    // similarity-level gradients against central differences
    for trial in 0..20u64 {
        let s_all = pseudo_uniform(trial, -2.0, 2.0, 8);
        let pos = (trial as usize) % 8;
        let (_, analytic) = info_nce_loss(pos, &s_all);
        let numeric = central_diff(|x| info_nce_loss(pos, x).0, &s_all, FD_STEP);
        assert_grad_close(&analytic, &numeric, SIM_RTOL, SIM_ATOL, "info_nce");
    }

    for trial in 0..20u64 {
        let n = 4;
        let flat = pseudo_uniform(100 + trial, -2.0, 2.0, 4 * n);
        let relabeled = trial % 3 == 0;
        let build = |flat: &[f64]| DistillBatchScores {
            anchor_index: (trial as usize) % n,
            s_manual: flat[0..n].to_vec(),
            s_synth_pos: flat[n..2 * n].to_vec(),
            s_cot: flat[2 * n..3 * n].to_vec(),
            s_synth_neg: flat[3 * n..4 * n].to_vec(),
            positive_mask: [true, !relabeled, true],
        };
        let (_, grads) = distill_loss(&build(&flat)).unwrap();
        let analytic: Vec<f64> = grads
            .s_manual
            .iter()
            .chain(&grads.s_synth_pos)
            .chain(&grads.s_cot)
            .chain(&grads.s_synth_neg)
            .copied()
            .collect();
        let numeric = central_diff(|x| distill_loss(&build(x)).unwrap().0, &flat, FD_STEP);
        assert_grad_close(&analytic, &numeric, SIM_RTOL, SIM_ATOL, "distill_loss");
    }

    for trial in 0..20u64 {
        let s = pseudo_uniform(200 + trial, -3.0, 3.0, 2);
        let (_, (gw, gl)) = bt_loss(s[0], s[1]);
        let numeric = central_diff(|x| bt_loss(x[0], x[1]).0, &s, FD_STEP);
        assert_grad_close(&[gw, gl], &numeric, SIM_RTOL, SIM_ATOL, "bt_loss");
    }

    for trial in 0..20u64 {
        let n = 3;
        let flat = pseudo_uniform(300 + trial, -2.0, 2.0, 2 * n);
        let anchor = (trial as usize) % n;
        let build = |flat: &[f64]| AlignBatchScores {
            anchor_index: anchor,
            s_win: flat[0..n].to_vec(),
            s_lose: flat[n..2 * n].to_vec(),
        };
        let result = partial_pl_loss(&build(&flat)).unwrap();
        let analytic: Vec<f64> = result
            .grad_win
            .iter()
            .chain(&result.grad_lose)
            .copied()
            .collect();
        let numeric = central_diff(|x| partial_pl_loss(&build(x)).unwrap().loss, &flat, FD_STEP);
        assert_grad_close(&analytic, &numeric, SIM_RTOL, SIM_ATOL, "partial_pl_loss");
    }

    // whole-model gradient through pooling and normalization on a dim=4 toy
    let examples: Vec<DistillExample> = (0..2)
        .map(|i| DistillExample {
            query: Query {
                id: format!("q{i}"),
                text: format!("alpha{i} beta{i} query"),
            },
            gold: Passage {
                id: format!("d{i}"),
                title: String::new(),
                body: format!("gold{i} body words here"),
            },
            q_cot: format!("alpha{i} beta{i} expanded"),
            p_plus: format!("gold{i} body again"),
            p_minus: format!("junk{i} other words"),
            relabeled: i == 1,
        })
        .collect();
    let model = EncoderModel::new(4, 64, 0.05, 13).unwrap();
    let batch = vec![0usize, 1];

    let loss_of = |m: &EncoderModel| -> f64 {
        let mut m = m.clone();
        let mut opt = AdamState::new();
        distill_step(&mut m, &examples, &batch, &mut opt, 0.0, 0.0)
            .unwrap()
            .mean_loss
    };
    // recover the assembled gradient by reading what one zero-lr step fed the
    // optimizer: recompute analytically through the public pieces instead
    let analytic = whole_model_distill_grad(&model, &examples, &batch);
    let mut checked = 0;
    for (bucket, row_grad) in analytic.rows() {
        for k in 0..4 {
            let mut perturbed = model.clone();
            perturbed.row_mut(bucket)[k] += FD_STEP;
            let plus = loss_of(&perturbed);
            perturbed.row_mut(bucket)[k] -= 2.0 * FD_STEP;
            let minus = loss_of(&perturbed);
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let tol = 1e-8 + 1e-5 * numeric.abs();
            assert!(
                (row_grad[k] - numeric).abs() <= tol,
                "whole-model grad bucket {bucket}[{k}]: {} vs {numeric}",
                row_grad[k]
            );
            checked += 1;
        }
    }
    assert!(checked >= 40, "expected to check many parameters, got {checked}");

    let elapsed = started.elapsed();
    report(Outcome {
        label: "4 (gradient suite)",
        passed: elapsed < Duration::from_secs(30),
        detail: format!(
            "80 similarity-level cases at rtol 1e-8 and {checked} model parameters at rtol 1e-5 in {elapsed:.2?}"
        ),
    });
}

/// Assemble the whole-model gradient of the mean clustering loss the same
/// way the training step does, but through the public API only.
fn whole_model_distill_grad(
    model: &EncoderModel,
    examples: &[DistillExample],
    batch: &[usize],
) -> distillrank::encoder::SparseGrad {
    let n = batch.len();
    let tau = model.tau();
    let texts: Vec<[String; 5]> = batch
        .iter()
        .map(|&i| {
            let e = &examples[i];
            [
                e.query.text.clone(),
                e.gold.full_text(),
                e.p_plus.clone(),
                e.q_cot.clone(),
                e.p_minus.clone(),
            ]
        })
        .collect();
    let bags: Vec<Vec<distillrank::encoder::TokenBag>> = texts
        .iter()
        .map(|t| t.iter().map(|s| model.tokenize(s)).collect())
        .collect();
    let units: Vec<Vec<distillrank::encoder::EmbeddingVector>> = bags
        .iter()
        .map(|b| b.iter().map(|bag| model.encode(bag)).collect())
        .collect();

    let mut upstream = vec![vec![vec![0.0; model.dim()]; 5]; n];
    for i in 0..n {
        let scores = DistillBatchScores {
            anchor_index: i,
            s_manual: (0..n).map(|j| model.similarity(&units[i][0], &units[j][1])).collect(),
            s_synth_pos: (0..n).map(|j| model.similarity(&units[i][0], &units[j][2])).collect(),
            s_cot: (0..n).map(|j| model.similarity(&units[i][0], &units[j][3])).collect(),
            s_synth_neg: (0..n).map(|j| model.similarity(&units[i][0], &units[j][4])).collect(),
            positive_mask: [true, !examples[batch[i]].relabeled, true],
        };
        let (_, grads) = distill_loss(&scores).unwrap();
        for j in 0..n {
            for (slot, g) in [
                (1usize, grads.s_manual[j]),
                (2, grads.s_synth_pos[j]),
                (3, grads.s_cot[j]),
                (4, grads.s_synth_neg[j]),
            ] {
                let w = g / (n as f64) / tau;
                for k in 0..model.dim() {
                    upstream[i][0][k] += w * units[j][slot].values()[k];
                    upstream[j][slot][k] += w * units[i][0].values()[k];
                }
            }
        }
    }
    let mut total = distillrank::encoder::SparseGrad::new();
    for j in 0..n {
        for slot in 0..5 {
            total.merge(&model.encode_backward(&bags[j][slot], &upstream[j][slot]));
        }
    }
    total
}

#[test]
fn criterion_5_ndcg_and_exact_retrieval() {
    // hand-derived single-gold case
    let mut qrels = Qrels::new();
    qrels.insert("q", "d2", 1);
    let ranked = RankedList {
        query_id: "q".into(),
        entries: vec![("d1".into(), 2.0), ("d2".into(), 1.0)],
    };
    let hand = ndcg_at_k(&ranked, &qrels, 2).value;
    let hand_ok = (hand - 0.6309).abs() <= 1e-4;

    // perfect ranking scores exactly 1
    let mut qrels2 = Qrels::new();
    qrels2.insert("q", "a", 2);
    qrels2.insert("q", "b", 1);
    let perfect = RankedList {
        query_id: "q".into(),
        entries: vec![("a".into(), 3.0), ("b".into(), 2.0), ("c".into(), 1.0)],
    };
    let perfect_ok = ndcg_at_k(&perfect, &qrels2, 3).value == 1.0;

    // exactness: top-K agrees with a full sort on 100 random instances
    let mut mismatches = 0;
    for trial in 0..100u64 {
        let n = 20 + (trial as usize % 30);
        let corpus = Corpus::from_passages(
            (0..n)
                .map(|i| Passage {
                    id: format!("p{i:03}"),
                    title: String::new(),
                    body: format!("w{} w{} w{}", (i * 7 + trial as usize) % 13, i % 5, i % 3),
                })
                .collect(),
        )
        .unwrap();
        let model = EncoderModel::new(8, 128, 0.05, trial).unwrap();
        let index = build_index(&model, &corpus);
        let query = Query {
            id: "q".into(),
            text: format!("w{} w{}", trial % 13, trial % 5),
        };
        let k = 1 + (trial as usize % n);
        let fast = retrieve_topk(&index, &model, &query, k).unwrap();

        // oracle: full sort of every score with the same tie rule
        let qv = model.encode_text(&query.text);
        let mut all: Vec<(String, f64)> = corpus
            .iter()
            .map(|p| (p.id.clone(), model.similarity(&qv, &model.encode_text(&p.full_text()))))
            .collect();
        all.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap()
                .then_with(|| a.0.cmp(&b.0))
        });
        all.truncate(k);
        let same = fast.entries.iter().zip(&all).all(|(x, y)| x.0 == y.0 && (x.1 - y.1).abs() < 1e-12);
        if !same {
            mismatches += 1;
        }
    }

    report(Outcome {
        label: "5 (nDCG oracle and exact top-K)",
        passed: hand_ok && perfect_ok && mismatches == 0,
        detail: format!(
            "hand case {hand:.4} (want 0.6309), perfect ranking exact, {mismatches}/100 retrieval mismatches"
        ),
    });
}

fn demo_state() -> &'static (DemoReport, Duration) {
    static STATE: OnceLock<(DemoReport, Duration)> = OnceLock::new();
    STATE.get_or_init(|| {
        let dir = std::env::temp_dir().join(format!("distillrank-acceptance-{}", std::process::id()));
        let started = Instant::now();
        let report = run_demo(&DemoOptions::new(7, dir)).expect("demo runs");
        (report, started.elapsed())
    })
}

#[test]
fn criterion_6_closed_loop_demo() {
    let (demo, elapsed) = demo_state();
    let random = demo.ndcg10_random();
    let distilled = demo.ndcg10_distilled();
    let aligned = demo.ndcg10_aligned();
    let improves = random < distilled && distilled < aligned;
    let margin = distilled >= random + 0.20;
    let fast = *elapsed < Duration::from_secs(300);
    report(Outcome {
        label: "6 (closed-loop demo improves at every stage)",
        passed: improves && margin && fast,
        detail: format!(
            "nDCG@10 random {random:.4} -> distilled {distilled:.4} -> aligned {aligned:.4} in {elapsed:.2?}"
        ),
    });
}

#[test]
fn criterion_7_relabel_pipeline() {
    let dataset = generate(&DatagenConfig {
        topics: 250,
        passages_per_topic: 4,
        train_queries: 1000,
        test_queries: 0,
        seed: 11,
    });
    let oracle = MockOracle::new(
        MockOracleConfig {
            hallucination_rate: 0.15,
            verify_overlap_threshold: 0.3,
            seed: 11,
        },
        &dataset.corpus,
        &dataset.queries,
        &dataset.train_qrels,
    )
    .unwrap();
    let prompts = PromptSet::builtin();
    let dir = tempfile::tempdir().unwrap();
    let records_path = dir.path().join("records.jsonl");
    let summary = run_synthesis(
        &oracle,
        &prompts,
        &dataset.corpus,
        &dataset.queries,
        &dataset.train_qrels,
        &records_path,
        8,
        &SynthesisOptions::default(),
    )
    .unwrap();
    let in_band = (100..=200).contains(&summary.relabeled);

    // every relabeled record contributes 2 numerator terms and all 4 of its
    // similarity groups stay in the denominator
    let records = read_records(&records_path).unwrap();
    let examples = join_examples(
        &records,
        &dataset.corpus,
        &dataset.queries,
        &dataset.train_qrels,
    )
    .unwrap();
    let mut model = EncoderModel::new(8, 1024, 0.5, 11).unwrap();
    let mut opt = AdamState::new();
    let config = TrainConfig {
        batch_size: 60,
        seed: 11,
        ..TrainConfig::default()
    };
    let mut audited_relabeled = 0;
    let mut structure_ok = true;
    for batch in distillrank::distill::build_batches(&examples, &config, 0) {
        let outcome = distill_step(&mut model, &examples, &batch, &mut opt, 1e-4, 0.0).unwrap();
        for (anchor, &idx) in outcome.audit.iter().zip(&batch) {
            let expected = if examples[idx].relabeled { 2 } else { 3 };
            if anchor.active_positives != expected || anchor.denominator_terms != 4 * batch.len() {
                structure_ok = false;
            }
            if examples[idx].relabeled {
                audited_relabeled += 1;
            }
        }
    }
    report(Outcome {
        label: "7 (relabel pipeline)",
        passed: summary.total == 1000 && in_band && structure_ok && audited_relabeled > 0,
        detail: format!(
            "{} of 1000 records relabeled (expect 100..=200); {audited_relabeled} relabeled anchors audited with 2 numerator terms and 4 denominator groups",
            summary.relabeled
        ),
    });
}

#[test]
fn criterion_8_pair_sampling_defaults() {
    let ranked = RankedList {
        query_id: "q".into(),
        entries: (0..5).map(|i| (format!("p{i}"), 5.0 - i as f64)).collect(),
    };
    let all = sample_pairs(&ranked, 10, 3).unwrap();
    let normalize = |pairs: &[(String, String)]| {
        let mut set: Vec<(String, String)> = pairs
            .iter()
            .map(|(a, b)| {
                if a < b {
                    (a.clone(), b.clone())
                } else {
                    (b.clone(), a.clone())
                }
            })
            .collect();
        set.sort();
        set.dedup();
        set
    };
    let exhaustive = normalize(&all).len() == 10 && all.len() == 10;

    let five_a = sample_pairs(&ranked, 5, 42).unwrap();
    let five_b = sample_pairs(&ranked, 5, 42).unwrap();
    let five_distinct = normalize(&five_a).len() == 5;
    report(Outcome {
        label: "8 (pair sampling defaults)",
        passed: exhaustive && five_distinct && five_a == five_b,
        detail: format!(
            "K=5, N=10 gives all 10 unordered pairs; K=5, N=5 gives {} distinct pairs, seed-reproducible",
            normalize(&five_a).len()
        ),
    });
}

#[test]
fn criterion_9_loss_ablation_parity() {
    let (demo, _) = demo_state();
    let ab = &demo.ablation;
    let recorded = ab.ndcg10_partial_pl.is_finite()
        && ab.ndcg10_bt.is_finite()
        && (0.0..=1.0).contains(&ab.ndcg10_partial_pl)
        && (0.0..=1.0).contains(&ab.ndcg10_bt);
    report(Outcome {
        label: "9 (loss ablation parity)",
        passed: ab.identical_batching && recorded && ab.triples > 0,
        detail: format!(
            "identical triples ({}) and batching; report records partial-pl {:.4} and bt {:.4}",
            ab.triples, ab.ndcg10_partial_pl, ab.ndcg10_bt
        ),
    });
}

#[test]
fn criterion_10_template_golden_files() {
    let golden: &[(PromptKind, &str)] = &[
        (
            PromptKind::Positive,
            "You are a subject matter expert in your field with substantial accumulated knowledge in a specific subject or topic, validated by academic degrees, certifications, and/or years of professional experience in that field.\n\nQuestion: {question}\n\nWrite a passage that elaborates on the question. Ensure that no false information is provided; all content must be entirely accurate. Present everything you are aware of, offering a comprehensive and detailed explanation. Do not include any unverified or speculative information.\n",
        ),
        (
            PromptKind::Negative,
            "You are a subject matter expert in your field with substantial accumulated knowledge in a specific subject or topic, validated by academic degrees, certifications, and/or years of professional experience in that field.\n\nQuestion: {question}\n\nWrite a passage that contains plausible but irrelevant context given the question.\n",
        ),
        (
            PromptKind::Relabel,
            "You are a subject matter expert in your field with substantial accumulated knowledge in a specific subject or topic, validated by academic degrees, certifications, and/or years of professional experience in that field.\n\nQuestion: {question}\n\nPassage: {passage}\nIs the above passage relevant to the aforementioned question?\nAnswer with yes or no.\n",
        ),
        (
            PromptKind::Compare,
            "You are a subject matter expert in your field with substantial accumulated knowledge in a specific subject or topic, validated by academic degrees, certifications, and/or years of professional experience in that field.\n\nPassage #1: {passage1}\nPassage #2: {passage2}\nQuestion: {question}\n\nBased on your professional knowledge, choose which passage is more relevant to answer the given question.\nOnly answer as Passage #1 or Passage #2\n",
        ),
        (
            PromptKind::Cot,
            "You are a subject matter expert in your field with substantial accumulated knowledge in a specific subject or topic, validated by academic degrees, certifications, and/or years of professional experience in that field.\n\nQuestion: {question}\n\nLet's think step-by-step.\n",
        ),
    ];
    let prompts = PromptSet::builtin();
    let prompts_dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("prompts");
    let mut bad = Vec::new();
    for (kind, expected) in golden {
        if prompts.template(*kind) != *expected {
            bad.push(format!("built-in {kind:?}"));
        }
        let on_disk = std::fs::read_to_string(prompts_dir.join(kind.file_name())).unwrap();
        if on_disk != *expected {
            bad.push(format!("file {}", kind.file_name()));
        }
    }
    report(Outcome {
        label: "10 (template golden files)",
        passed: bad.is_empty(),
        detail: if bad.is_empty() {
            "all five templates byte-match the golden wording".to_string()
        } else {
            format!("mismatches: {bad:?}")
        },
    });
}
