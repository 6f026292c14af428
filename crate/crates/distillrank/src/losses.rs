//! Training objectives and ranking-probability machinery.
//!
//! Every loss returns its value together with exact analytic gradients with
//! respect to the similarity inputs. All computations run in log space with
//! log-sum-exp stabilization, so similarities of magnitude 1/tau (hundreds,
//! for small temperatures) stay safe in double precision.

use crate::error::{Error, Result};

/// log(sum(exp(x))) with the usual max shift.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn softmax(values: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(values);
    values.iter().map(|v| (v - lse).exp()).collect()
}

/// Contrastive loss over one positive among a score vector:
/// `-log(exp(s_all[pos]) / sum_j exp(s_all[j]))`.
///
/// Returns the loss and the gradient with respect to every entry of `s_all`
/// (softmax minus the one-hot at the positive).
pub fn info_nce_loss(pos_index: usize, s_all: &[f64]) -> (f64, Vec<f64>) {
    assert!(pos_index < s_all.len(), "positive index out of range");
    let lse = log_sum_exp(s_all);
    let loss = lse - s_all[pos_index];
    let mut grad = softmax(s_all);
    grad[pos_index] -= 1.0;
    (loss, grad)
}

/// Which of the anchor's three candidate positives are active. Order:
/// manually labeled passage, synthetic positive, chain-of-thought expansion.
/// Relabeling deactivates the synthetic positive: it leaves the numerator but
/// stays in the denominator as a repulsion-only term.
pub type PositiveMask = [bool; 3];

/// Similarities of one anchor query against every batch member's four texts.
///
/// Slot `j` holds `s(q_anchor, .)` against member `j`'s manually labeled
/// passage, synthetic positive, chain-of-thought expansion, and synthetic
/// hard-negative, respectively.
#[derive(Debug, Clone)]
pub struct DistillBatchScores {
    pub anchor_index: usize,
    pub s_manual: Vec<f64>,
    pub s_synth_pos: Vec<f64>,
    pub s_cot: Vec<f64>,
    pub s_synth_neg: Vec<f64>,
    pub positive_mask: PositiveMask,
}

impl DistillBatchScores {
    pub fn batch_size(&self) -> usize {
        self.s_manual.len()
    }

    /// Number of active numerator terms for the anchor.
    pub fn active_positives(&self) -> usize {
        self.positive_mask.iter().filter(|&&m| m).count()
    }

    /// Number of exponential terms in the denominator: four per batch member.
    pub fn denominator_terms(&self) -> usize {
        4 * self.batch_size()
    }

    fn check(&self) -> Result<()> {
        let n = self.batch_size();
        if self.s_synth_pos.len() != n || self.s_cot.len() != n || self.s_synth_neg.len() != n {
            return Err(Error::validation("distill score vectors have mismatched lengths"));
        }
        if self.anchor_index >= n {
            return Err(Error::validation("distill anchor index out of range"));
        }
        if self.active_positives() == 0 {
            return Err(Error::validation(
                "distill batch has no active positive for the anchor",
            ));
        }
        let all_finite = self
            .s_manual
            .iter()
            .chain(&self.s_synth_pos)
            .chain(&self.s_cot)
            .chain(&self.s_synth_neg)
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::validation("distill batch contains non-finite similarity"));
        }
        Ok(())
    }
}

/// Gradients for every slot of a [`DistillBatchScores`], same layout.
#[derive(Debug, Clone)]
pub struct DistillGrads {
    pub s_manual: Vec<f64>,
    pub s_synth_pos: Vec<f64>,
    pub s_cot: Vec<f64>,
    pub s_synth_neg: Vec<f64>,
}

/// Clustering loss for one anchor: the anchor's active positives are
/// attracted against a denominator holding all four similarity groups of
/// every batch member (the hard-negative group is repulsion-only).
pub fn distill_loss(batch: &DistillBatchScores) -> Result<(f64, DistillGrads)> {
    batch.check()?;
    let n = batch.batch_size();
    let i = batch.anchor_index;

    let mut numerator = Vec::with_capacity(3);
    if batch.positive_mask[0] {
        numerator.push(batch.s_manual[i]);
    }
    if batch.positive_mask[1] {
        numerator.push(batch.s_synth_pos[i]);
    }
    if batch.positive_mask[2] {
        numerator.push(batch.s_cot[i]);
    }

    let mut denominator = Vec::with_capacity(4 * n);
    denominator.extend_from_slice(&batch.s_manual);
    denominator.extend_from_slice(&batch.s_synth_pos);
    denominator.extend_from_slice(&batch.s_cot);
    denominator.extend_from_slice(&batch.s_synth_neg);

    let lse_num = log_sum_exp(&numerator);
    let lse_den = log_sum_exp(&denominator);
    let loss = lse_den - lse_num;

    // d loss / d s = p_den(s) - p_num(s), the latter only for the anchor's
    // active positives.
    let mut grads = DistillGrads {
        s_manual: batch.s_manual.iter().map(|s| (s - lse_den).exp()).collect(),
        s_synth_pos: batch.s_synth_pos.iter().map(|s| (s - lse_den).exp()).collect(),
        s_cot: batch.s_cot.iter().map(|s| (s - lse_den).exp()).collect(),
        s_synth_neg: batch.s_synth_neg.iter().map(|s| (s - lse_den).exp()).collect(),
    };
    if batch.positive_mask[0] {
        grads.s_manual[i] -= (batch.s_manual[i] - lse_num).exp();
    }
    if batch.positive_mask[1] {
        grads.s_synth_pos[i] -= (batch.s_synth_pos[i] - lse_num).exp();
    }
    if batch.positive_mask[2] {
        grads.s_cot[i] -= (batch.s_cot[i] - lse_num).exp();
    }
    Ok((loss, grads))
}

/// Pairwise preference loss: `-log(e^{s_win} / (e^{s_win} + e^{s_lose}))`,
/// i.e. `softplus(s_lose - s_win)`. Returns `(loss, (d/d s_win, d/d s_lose))`.
pub fn bt_loss(s_win: f64, s_lose: f64) -> (f64, (f64, f64)) {
    let margin = s_lose - s_win;
    // softplus(x) = log(1 + e^x), computed piecewise for stability
    let loss = if margin > 0.0 {
        margin + (-margin).exp().ln_1p()
    } else {
        margin.exp().ln_1p()
    };
    // sigma(margin)
    let sigma = if margin > 0.0 {
        1.0 / (1.0 + (-margin).exp())
    } else {
        let e = margin.exp();
        e / (1.0 + e)
    };
    (loss, (-sigma, sigma))
}

/// Exponentiated rewards, strictly positive and finite.
#[derive(Debug, Clone)]
pub struct RewardVector {
    z: Vec<f64>,
}

impl RewardVector {
    pub fn new(z: Vec<f64>) -> Result<Self> {
        if z.is_empty() {
            return Err(Error::validation("reward vector must be non-empty"));
        }
        if z.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::validation("reward vector entries must be positive and finite"));
        }
        Ok(RewardVector { z })
    }

    /// From raw rewards: `z_k = exp(r_k)`. Kept in log space internally via
    /// [`Self::log_rewards`], so large rewards are fine.
    pub fn from_rewards(rewards: &[f64]) -> Result<Self> {
        Self::new(rewards.iter().map(|r| r.exp()).collect())
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.z
    }

    fn log_rewards(&self) -> Vec<f64> {
        self.z.iter().map(|v| v.ln()).collect()
    }
}

/// Maximum list length accepted by the brute-force ranking probability; it is
/// an enumeration oracle, not a production path.
pub const BRUTE_FORCE_MAX_ITEMS: usize = 9;

/// Probability of a full ranking under the sequential-softmax ranking model:
/// the product over positions m of `z_{pi(m)} / sum_{j >= m} z_{pi(j)}`.
///
/// `ranking[m]` is the item placed at position m (0-based items).
pub fn pl_brute_force_prob(z: &RewardVector, ranking: &[usize]) -> Result<f64> {
    let m = z.len();
    if m > BRUTE_FORCE_MAX_ITEMS {
        return Err(Error::validation(format!(
            "brute-force ranking probability supports at most {BRUTE_FORCE_MAX_ITEMS} items, got {m}"
        )));
    }
    if ranking.len() != m {
        return Err(Error::validation("ranking length must match reward vector length"));
    }
    let mut seen = vec![false; m];
    for &item in ranking {
        if item >= m || seen[item] {
            return Err(Error::validation("ranking is not a permutation of the items"));
        }
        seen[item] = true;
    }

    let log_z = z.log_rewards();
    let mut log_prob = 0.0;
    for pos in 0..m {
        let tail: Vec<f64> = ranking[pos..].iter().map(|&item| log_z[item]).collect();
        log_prob += log_z[ranking[pos]] - log_sum_exp(&tail);
    }
    Ok(log_prob.exp())
}

/// Probability that `first` ranks top and `second` ranks second with the
/// remaining items in any order:
/// `z_first / sum_j z_j * z_second / (z_second + sum_{j != first,second} z_j)`.
///
/// This closed form equals the sum of the full-ranking probability over all
/// orderings of the tail; the brute-force enumeration serves as its oracle in
/// tests.
pub fn marginal_top2_prob(z: &RewardVector, first: usize, second: usize) -> Result<f64> {
    let m = z.len();
    if m < 2 {
        return Err(Error::validation("marginal top-2 probability needs at least 2 items"));
    }
    if first >= m || second >= m {
        return Err(Error::validation("marginal top-2 index out of range"));
    }
    if first == second {
        return Err(Error::validation("marginal top-2 indices must differ"));
    }
    let log_z = z.log_rewards();
    let lse_all = log_sum_exp(&log_z);
    let rest: Vec<f64> = (0..m)
        .filter(|&j| j != first)
        .map(|j| log_z[j])
        .collect();
    let lse_rest = log_sum_exp(&rest);
    Ok((log_z[first] - lse_all + log_z[second] - lse_rest).exp())
}

/// Similarities of one anchor query against every batch triple's preferred
/// and rejected passages: `s_win[j] = s(q_anchor, winner_j)`,
/// `s_lose[j] = s(q_anchor, loser_j)`.
#[derive(Debug, Clone)]
pub struct AlignBatchScores {
    pub anchor_index: usize,
    pub s_win: Vec<f64>,
    pub s_lose: Vec<f64>,
}

impl AlignBatchScores {
    pub fn batch_size(&self) -> usize {
        self.s_win.len()
    }

    fn check(&self) -> Result<()> {
        if self.s_win.len() != self.s_lose.len() {
            return Err(Error::validation("align score vectors have mismatched lengths"));
        }
        if self.s_win.is_empty() || self.anchor_index >= self.s_win.len() {
            return Err(Error::validation("align anchor index out of range"));
        }
        if self.s_win.iter().chain(&self.s_lose).any(|v| !v.is_finite()) {
            return Err(Error::validation("align batch contains non-finite similarity"));
        }
        Ok(())
    }
}

/// Loss, per-slot gradients, and the structural term counts of the two
/// factors (the first ranges over all `2|B|` slots, the second over all but
/// the anchor's winner).
#[derive(Debug, Clone)]
pub struct PartialPlResult {
    pub loss: f64,
    pub grad_win: Vec<f64>,
    pub grad_lose: Vec<f64>,
    pub factor1_terms: usize,
    pub factor2_terms: usize,
}

/// Top-2 ranking loss over the batch: the anchor's winner against every slot,
/// then the anchor's loser against every remaining slot. Equivalent to the
/// negative log of [`marginal_top2_prob`] over the `2|B|` slots with the
/// anchor's winner first and its loser second.
pub fn partial_pl_loss(batch: &AlignBatchScores) -> Result<PartialPlResult> {
    batch.check()?;
    let n = batch.batch_size();
    let i = batch.anchor_index;

    // Slot layout: [win_0 .. win_{n-1}, lose_0 .. lose_{n-1}]
    let mut all = Vec::with_capacity(2 * n);
    all.extend_from_slice(&batch.s_win);
    all.extend_from_slice(&batch.s_lose);

    let lse_all = log_sum_exp(&all);
    let rest: Vec<f64> = all
        .iter()
        .enumerate()
        .filter(|&(idx, _)| idx != i)
        .map(|(_, &s)| s)
        .collect();
    let lse_rest = log_sum_exp(&rest);

    let loss = (lse_all - batch.s_win[i]) + (lse_rest - batch.s_lose[i]);

    // Softmax of factor 1 over all slots; factor 2 over all slots except the
    // anchor's winner.
    let mut grad_win = vec![0.0; n];
    let mut grad_lose = vec![0.0; n];
    for j in 0..n {
        grad_win[j] = (batch.s_win[j] - lse_all).exp();
        grad_lose[j] = (batch.s_lose[j] - lse_all).exp();
        if j != i {
            grad_win[j] += (batch.s_win[j] - lse_rest).exp();
        }
        grad_lose[j] += (batch.s_lose[j] - lse_rest).exp();
    }
    grad_win[i] -= 1.0;
    grad_lose[i] -= 1.0;

    Ok(PartialPlResult {
        loss,
        grad_win,
        grad_lose,
        factor1_terms: 2 * n,
        factor2_terms: 2 * n - 1,
    })
}
