//! Trainable text encoder: hashed bag-of-tokens, mean pooling, L2
//! normalization, temperature-scaled cosine similarity, and the exact
//! backward pass through pooling and normalization.
//!
//! Tokenization is deterministic: lowercase, split on non-alphanumeric runs,
//! FNV-1a hash of each token seeded with [`TOKEN_HASH_SEED`], reduced modulo
//! the bucket count. Empty text maps to the reserved bucket 0.
//!
//! # Checkpoint format
//!
//! Little-endian binary, documented so fixtures are portable:
//!
//! | offset | size | field                                |
//! |--------|------|--------------------------------------|
//! | 0      | 4    | magic `DRCK`                         |
//! | 4      | 4    | format version (u32, currently 1)    |
//! | 8      | 4    | dim (u32)                            |
//! | 12     | 4    | vocab_buckets (u32)                  |
//! | 16     | 8    | token hash seed (u64)                |
//! | 24     | 8    | tau (f64)                            |
//! | 32     | ...  | embeddings, row-major f64, vocab_buckets x dim |

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Seed folded into the token hash. Published so tokenizations are
/// reproducible across processes and machines.
pub const TOKEN_HASH_SEED: u64 = 0x9e37_79b9_7f4a_7c15;

/// Bucket that empty text maps to.
pub const RESERVED_EMPTY_BUCKET: u32 = 0;

/// Pre-normalization vectors with a norm below this are replaced by the
/// first standard basis vector so a randomly initialized model always yields
/// a valid retrieval.
pub const DEGENERATE_NORM: f64 = 1e-12;

const CHECKPOINT_MAGIC: &[u8; 4] = b"DRCK";
const CHECKPOINT_VERSION: u32 = 1;

/// FNV-1a over the seed bytes followed by the payload bytes.
pub(crate) fn seeded_fnv1a(seed: u64, payload: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut hash = OFFSET;
    for b in seed.to_le_bytes().iter().chain(payload.as_bytes()) {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(PRIME);
    }
    hash
}

/// Multiset of hash buckets for one text, in order of appearance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenBag {
    bucket_ids: Vec<u32>,
}

impl TokenBag {
    pub fn buckets(&self) -> &[u32] {
        &self.bucket_ids
    }

    pub fn len(&self) -> usize {
        self.bucket_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bucket_ids.is_empty()
    }
}

/// Lowercase, split on non-alphanumeric runs, hash into `[0, vocab_buckets)`.
pub fn tokenize(text: &str, vocab_buckets: u32) -> TokenBag {
    let lowered = text.to_lowercase();
    let bucket_ids: Vec<u32> = lowered
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| (seeded_fnv1a(TOKEN_HASH_SEED, t) % u64::from(vocab_buckets)) as u32)
        .collect();
    if bucket_ids.is_empty() {
        TokenBag {
            bucket_ids: vec![RESERVED_EMPTY_BUCKET],
        }
    } else {
        TokenBag { bucket_ids }
    }
}

/// Unit-norm embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }
}

/// Per-bucket gradient contributions, keyed by bucket id for deterministic
/// iteration.
#[derive(Debug, Clone, Default)]
pub struct SparseGrad {
    rows: BTreeMap<u32, Vec<f64>>,
}

impl SparseGrad {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_row(&mut self, bucket: u32, grad: &[f64]) {
        let row = self
            .rows
            .entry(bucket)
            .or_insert_with(|| vec![0.0; grad.len()]);
        for (r, g) in row.iter_mut().zip(grad) {
            *r += g;
        }
    }

    pub fn merge(&mut self, other: &SparseGrad) {
        for (&bucket, grad) in &other.rows {
            self.add_row(bucket, grad);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for row in self.rows.values_mut() {
            for g in row.iter_mut() {
                *g *= factor;
            }
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = (u32, &[f64])> {
        self.rows.iter().map(|(&b, g)| (b, g.as_slice()))
    }

    pub fn row(&self, bucket: u32) -> Option<&[f64]> {
        self.rows.get(&bucket).map(|v| v.as_slice())
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// The trainable model: an embedding table over hash buckets plus the
/// similarity temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    dim: usize,
    vocab_buckets: u32,
    tau: f64,
    embeddings: Vec<f64>,
}

impl EncoderModel {
    /// Rows initialized uniform in (-0.5/dim, +0.5/dim), seeded.
    pub fn new(dim: usize, vocab_buckets: u32, tau: f64, seed: u64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::validation(format!("dim must be >= 2, got {dim}")));
        }
        if vocab_buckets == 0 {
            return Err(Error::validation("vocab_buckets must be positive"));
        }
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::validation(format!("tau must be a positive real, got {tau}")));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let half = 0.5 / dim as f64;
        let embeddings = (0..vocab_buckets as usize * dim)
            .map(|_| rng.gen_range(-half..half))
            .collect();
        Ok(EncoderModel {
            dim,
            vocab_buckets,
            tau,
            embeddings,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_buckets(&self) -> u32 {
        self.vocab_buckets
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Same embeddings at a different similarity temperature. Rankings are
    /// temperature-invariant; training dynamics are not, so the two stages
    /// may want different concentrations.
    pub fn with_tau(mut self, tau: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::validation(format!("tau must be a positive real, got {tau}")));
        }
        self.tau = tau;
        Ok(self)
    }

    pub fn row(&self, bucket: u32) -> &[f64] {
        let start = bucket as usize * self.dim;
        &self.embeddings[start..start + self.dim]
    }

    pub fn row_mut(&mut self, bucket: u32) -> &mut [f64] {
        let start = bucket as usize * self.dim;
        &mut self.embeddings[start..start + self.dim]
    }

    pub fn tokenize(&self, text: &str) -> TokenBag {
        tokenize(text, self.vocab_buckets)
    }

    /// Mean of the bag's embedding rows, L2-normalized. A pre-normalization
    /// norm below [`DEGENERATE_NORM`] yields the first standard basis vector.
    pub fn encode(&self, bag: &TokenBag) -> EmbeddingVector {
        let mut pooled = vec![0.0; self.dim];
        for &bucket in bag.buckets() {
            for (p, e) in pooled.iter_mut().zip(self.row(bucket)) {
                *p += e;
            }
        }
        let inv_len = 1.0 / bag.len() as f64;
        for p in pooled.iter_mut() {
            *p *= inv_len;
        }
        let norm = pooled.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < DEGENERATE_NORM {
            let mut basis = vec![0.0; self.dim];
            basis[0] = 1.0;
            return EmbeddingVector { values: basis };
        }
        for p in pooled.iter_mut() {
            *p /= norm;
        }
        EmbeddingVector { values: pooled }
    }

    pub fn encode_text(&self, text: &str) -> EmbeddingVector {
        self.encode(&self.tokenize(text))
    }

    /// Temperature-scaled cosine similarity of two unit-norm embeddings.
    pub fn similarity(&self, a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
        a.dot(b) / self.tau
    }

    /// Chain rule through normalization and mean pooling. `upstream_grad` is
    /// the loss gradient with respect to the normalized embedding. Repeated
    /// buckets accumulate. Degenerate bags (see [`Self::encode`]) produce an
    /// empty gradient.
    pub fn encode_backward(&self, bag: &TokenBag, upstream_grad: &[f64]) -> SparseGrad {
        assert_eq!(upstream_grad.len(), self.dim, "upstream gradient length");
        let mut pooled = vec![0.0; self.dim];
        for &bucket in bag.buckets() {
            for (p, e) in pooled.iter_mut().zip(self.row(bucket)) {
                *p += e;
            }
        }
        let inv_len = 1.0 / bag.len() as f64;
        for p in pooled.iter_mut() {
            *p *= inv_len;
        }
        let norm = pooled.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut grad = SparseGrad::new();
        if norm < DEGENERATE_NORM {
            return grad;
        }
        let unit: Vec<f64> = pooled.iter().map(|x| x / norm).collect();
        let dot: f64 = unit.iter().zip(upstream_grad).map(|(u, g)| u * g).sum();
        // d/dv of v/||v|| applied to g: (g - (u . g) u) / ||v||, then the
        // mean-pooling factor 1/|bag| per occurrence.
        let pooled_grad: Vec<f64> = upstream_grad
            .iter()
            .zip(&unit)
            .map(|(g, u)| (g - dot * u) / norm * inv_len)
            .collect();
        for &bucket in bag.buckets() {
            grad.add_row(bucket, &pooled_grad);
        }
        grad
    }

    /// Serialized checkpoint bytes (see module docs for the layout).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.embeddings.len() * 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&self.vocab_buckets.to_le_bytes());
        out.extend_from_slice(&TOKEN_HASH_SEED.to_le_bytes());
        out.extend_from_slice(&self.tau.to_le_bytes());
        for value in &self.embeddings {
            out.extend_from_slice(&value.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |message: &str| Error::Checkpoint {
            path: path.to_path_buf(),
            message: message.to_string(),
        };
        if bytes.len() < 32 || &bytes[0..4] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let read_u32 = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let read_u64 = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        let version = read_u32(4);
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported format version {version}")));
        }
        let dim = read_u32(8) as usize;
        let vocab_buckets = read_u32(12);
        let hash_seed = read_u64(16);
        if hash_seed != TOKEN_HASH_SEED {
            return Err(bad(&format!(
                "checkpoint hash seed {hash_seed:#x} does not match this build's {TOKEN_HASH_SEED:#x}"
            )));
        }
        let tau = f64::from_le_bytes(bytes[24..32].try_into().unwrap());
        let expected = 32 + vocab_buckets as usize * dim * 8;
        if bytes.len() != expected {
            return Err(bad(&format!(
                "expected {expected} bytes for {vocab_buckets} x {dim} rows, got {}",
                bytes.len()
            )));
        }
        let embeddings: Vec<f64> = bytes[32..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if !(tau > 0.0) || embeddings.iter().any(|v| !v.is_finite()) {
            return Err(bad("checkpoint contains non-finite values"));
        }
        Ok(EncoderModel {
            dim,
            vocab_buckets,
            tau,
            embeddings,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// SHA-256 of the checkpoint bytes; changes when any parameter changes.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
