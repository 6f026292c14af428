//! Adam over the sparse embedding gradients, plus the cosine learning-rate
//! schedule with linear warmup shared by both training stages.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::encoder::{EncoderModel, SparseGrad};
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment accumulators, allocated lazily per embedding row.
/// Rows outside a step's gradient support are left untouched (sparse-Adam
/// semantics); decoupled weight decay applies to touched rows only.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    step: u64,
    m: BTreeMap<u32, Vec<f64>>,
    v: BTreeMap<u32, Vec<f64>>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn apply(
        &mut self,
        model: &mut EncoderModel,
        grads: &SparseGrad,
        lr: f64,
        weight_decay: f64,
    ) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        let dim = model.dim();
        for (bucket, grad) in grads.rows() {
            let m = self.m.entry(bucket).or_insert_with(|| vec![0.0; dim]);
            let v = self.v.entry(bucket).or_insert_with(|| vec![0.0; dim]);
            let row = model.row_mut(bucket);
            for k in 0..dim {
                m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * grad[k];
                v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * grad[k] * grad[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                row[k] -= lr * (m_hat / (v_hat.sqrt() + ADAM_EPS) + weight_decay * row[k]);
            }
        }
    }
}

/// Linear warmup from zero to `peak` over `warmup_steps`, then cosine decay
/// to zero across the remaining steps. `step` is the 0-based index of the
/// upcoming update.
pub fn cosine_lr(step: u64, total_steps: u64, warmup_steps: u64, peak: f64) -> f64 {
    if warmup_steps > 0 && step < warmup_steps {
        return peak * (step + 1) as f64 / warmup_steps as f64;
    }
    if total_steps <= warmup_steps {
        return peak;
    }
    let progress = (step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64;
    let progress = progress.min(1.0);
    peak * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// One training step's record in the emitted loss curve.
#[derive(Debug, Clone, PartialEq)]
pub struct LossCurvePoint {
    pub step: u64,
    pub mean_loss: f64,
    pub lr: f64,
}

/// CSV with header `step,mean_loss,lr`.
pub fn write_loss_curve(points: &[LossCurvePoint], path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(file, "step,mean_loss,lr").map_err(|e| Error::io(path, e))?;
    for p in points {
        writeln!(file, "{},{},{}", p.step, p.mean_loss, p.lr).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
