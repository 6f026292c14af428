//! Finite-difference checks of the encoder backward pass, independent of the
//! loss-level suite: an arbitrary nonlinear loss composed with encode.

mod common;

use common::central_diff;
use distillrank::encoder::{EmbeddingVector, EncoderModel};

/// A fixed nonlinear scalar of the embedding with a hand-derived gradient.
fn head_loss(v: &EmbeddingVector) -> f64 {
    v.values()
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let w = 0.3 + 0.1 * i as f64;
            w * x * x + 0.05 * (i as f64 + 1.0) * x
        })
        .sum()
}

fn head_grad(v: &EmbeddingVector) -> Vec<f64> {
    v.values()
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let w = 0.3 + 0.1 * i as f64;
            2.0 * w * x + 0.05 * (i as f64 + 1.0)
        })
        .collect()
}

fn check_bag(model: &EncoderModel, text: &str, what: &str) {
    let bag = model.tokenize(text);
    let upstream = head_grad(&model.encode(&bag));
    let analytic = model.encode_backward(&bag, &upstream);

    let touched: Vec<u32> = analytic.rows().map(|(b, _)| b).collect();
    for &bucket in &touched {
        let base: Vec<f64> = model.row(bucket).to_vec();
        let numeric = central_diff(
            |row| {
                let mut m = model.clone();
                m.row_mut(bucket).copy_from_slice(row);
                head_loss(&m.encode(&bag))
            },
            &base,
            1e-5,
        );
        let analytic_row = analytic.row(bucket).unwrap();
        for (k, (a, n)) in analytic_row.iter().zip(&numeric).enumerate() {
            let tol = 1e-10 + 1e-6 * n.abs();
            assert!(
                (a - n).abs() <= tol,
                "{what}: bucket {bucket}[{k}]: analytic {a:e} vs numeric {n:e}"
            );
        }
    }
    assert!(!touched.is_empty(), "{what}: no gradient rows");
}

#[test]
fn encode_backward_matches_finite_differences() {
    for seed in 0..5u64 {
        let model = EncoderModel::new(6, 128, 0.05, seed).unwrap();
        check_bag(&model, "several distinct words in the bag", &format!("seed {seed}"));
    }
}

#[test]
fn repeated_buckets_accumulate_and_match_finite_differences() {
    let model = EncoderModel::new(6, 128, 0.05, 3).unwrap();
    // the same token twice hashes into the same bucket twice
    check_bag(&model, "echo echo", "repeated bucket");

    // with mean pooling, the doubled occurrence of the only token yields the
    // same pooled vector as one occurrence, so the accumulated row gradient
    // matches the singleton's exactly
    let single = model.tokenize("echo");
    let double = model.tokenize("echo echo");
    assert_eq!(double.len(), 2);
    let upstream = head_grad(&model.encode(&single));
    let g1 = model.encode_backward(&single, &upstream);
    let g2 = model.encode_backward(&double, &upstream);
    let bucket = single.buckets()[0];
    for (a, b) in g1.row(bucket).unwrap().iter().zip(g2.row(bucket).unwrap()) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn untouched_rows_have_no_gradient() {
    let model = EncoderModel::new(6, 128, 0.05, 9).unwrap();
    let bag = model.tokenize("only these words");
    let upstream = head_grad(&model.encode(&bag));
    let grad = model.encode_backward(&bag, &upstream);
    let touched: std::collections::BTreeSet<u32> = grad.rows().map(|(b, _)| b).collect();
    for bucket in 0..128u32 {
        if !touched.contains(&bucket) {
            assert!(grad.row(bucket).is_none());
        }
    }
    assert_eq!(touched.len(), 3);
}
