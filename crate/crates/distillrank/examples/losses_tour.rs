//! The training objectives and their structure: the clustering loss with
//! its relabel behavior, the pairwise loss, the full ranking model, and the
//! top-2 marginal the alignment loss is built on.
//!
//! Run with: cargo run --example losses_tour

use distillrank::losses::{
    bt_loss, distill_loss, marginal_top2_prob, partial_pl_loss, pl_brute_force_prob,
    AlignBatchScores, DistillBatchScores, RewardVector,
};

fn main() -> anyhow::Result<()> {
    // Clustering loss: the anchor's three positives against four similarity
    // groups per batch member. All scores equal makes the value exact:
    // -log(3 / (4 * |B|)).
    let n = 4;
    let batch = DistillBatchScores {
        anchor_index: 0,
        s_manual: vec![0.5; n],
        s_synth_pos: vec![0.5; n],
        s_cot: vec![0.5; n],
        s_synth_neg: vec![0.5; n],
        positive_mask: [true, true, true],
    };
    let (loss, _) = distill_loss(&batch)?;
    println!("distill loss, all-equal scores, |B|={n}: {loss:.6} (= -ln(3/16) = {:.6})", -(3f64 / 16.0).ln());

    // Relabeling removes the synthetic positive from the numerator but keeps
    // it in the denominator, so the loss rises.
    let relabeled = DistillBatchScores {
        positive_mask: [true, false, true],
        ..batch.clone()
    };
    let (loss, _) = distill_loss(&relabeled)?;
    println!("same batch with the synthetic positive relabeled: {loss:.6} (= -ln(2/16))");

    // Pairwise preference loss and its margin behavior.
    let (even, _) = bt_loss(1.0, 1.0);
    let (easy, _) = bt_loss(4.0, -4.0);
    println!("\npairwise loss at zero margin: {even:.6} (= ln 2), at margin 8: {easy:.2e}");

    // The ranking model: sequential softmax over a permutation.
    let z = RewardVector::new(vec![4.0, 2.0, 1.0])?;
    for ranking in [[0usize, 1, 2], [2, 1, 0]] {
        let p = pl_brute_force_prob(&z, &ranking)?;
        println!("p(ranking {ranking:?}) = {p:.4}");
    }

    // Marginalizing the tail: first and second fixed, the rest in any order.
    let z = RewardVector::new(vec![4.0, 2.0, 1.0, 1.0, 0.5])?;
    let marginal = marginal_top2_prob(&z, 0, 1)?;
    println!("\np(item 0 first, item 1 second, rest anywhere) = {marginal:.4}");

    // The alignment loss is that marginal over the batch's 2|B| slots; with
    // a single triple it collapses to the pairwise loss.
    let single = partial_pl_loss(&AlignBatchScores {
        anchor_index: 0,
        s_win: vec![1.2],
        s_lose: vec![0.3],
    })?;
    let (pairwise, _) = bt_loss(1.2, 0.3);
    println!("partial ranking loss at |B|=1: {:.6} (pairwise: {pairwise:.6})", single.loss);

    let batch = partial_pl_loss(&AlignBatchScores {
        anchor_index: 0,
        s_win: vec![1.2, 0.1, -0.4],
        s_lose: vec![0.3, -0.2, 0.6],
    })?;
    println!(
        "partial ranking loss at |B|=3: {:.6} (factor terms: {} and {})",
        batch.loss, batch.factor1_terms, batch.factor2_terms
    );
    Ok(())
}
