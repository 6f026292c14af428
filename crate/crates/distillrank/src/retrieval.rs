//! Brute-force dense index, exact top-K retrieval, and nDCG@K evaluation.
//!
//! The index is exhaustive by design: corpus sizes here never justify an
//! approximate structure, and exactness keeps evaluation assertions simple.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;
use std::path::Path;

use crate::data::{Corpus, Qrels, Query, QuerySet};
use crate::encoder::{EmbeddingVector, EncoderModel};
use crate::error::{Error, Result};

/// Every passage of a corpus encoded once, rows in corpus (id) order.
#[derive(Debug, Clone)]
pub struct DenseIndex {
    ids: Vec<String>,
    rows: Vec<EmbeddingVector>,
    /// Fingerprint of the model checkpoint that produced the rows.
    fingerprint: String,
}

impl DenseIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, idx: usize) -> &EmbeddingVector {
        &self.rows[idx]
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }
}

/// Encode every passage (title, space, body) in corpus order.
pub fn build_index(model: &EncoderModel, corpus: &Corpus) -> DenseIndex {
    let mut ids = Vec::with_capacity(corpus.len());
    let mut rows = Vec::with_capacity(corpus.len());
    for passage in corpus.iter() {
        ids.push(passage.id.clone());
        rows.push(model.encode_text(&passage.full_text()));
    }
    DenseIndex {
        ids,
        rows,
        fingerprint: model.fingerprint(),
    }
}

/// Top-K passages for one query, scores non-increasing, ties broken by
/// ascending passage id.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<(String, f64)>,
}

impl RankedList {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// 1-based rank of a passage id, if present.
    pub fn rank_of(&self, passage_id: &str) -> Option<u32> {
        self.entries
            .iter()
            .position(|(id, _)| id == passage_id)
            .map(|p| p as u32 + 1)
    }
}

/// Heap entry ordered so the binary heap's top is the current worst keeper:
/// lowest score first, and for equal scores the largest id (which loses ties).
struct Keeper {
    score: f64,
    idx: usize,
    id_rank: usize,
}

impl PartialEq for Keeper {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Keeper {}
impl PartialOrd for Keeper {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Keeper {
    fn cmp(&self, other: &Self) -> Ordering {
        // max-heap: greater = worse candidate (lower score, then larger id)
        other
            .score
            .partial_cmp(&self.score)
            .unwrap_or(Ordering::Equal)
            .then(self.id_rank.cmp(&other.id_rank))
    }
}

/// Exact brute-force top-K by similarity score. Errors when K exceeds the
/// corpus size.
pub fn retrieve_topk(
    index: &DenseIndex,
    model: &EncoderModel,
    query: &Query,
    k: usize,
) -> Result<RankedList> {
    if k == 0 || k > index.len() {
        return Err(Error::validation(format!(
            "K = {k} out of range for a corpus of {}",
            index.len()
        )));
    }
    let query_vec = model.encode_text(&query.text);
    let mut heap: BinaryHeap<Keeper> = BinaryHeap::with_capacity(k + 1);
    for idx in 0..index.len() {
        let score = model.similarity(&query_vec, index.row(idx));
        heap.push(Keeper {
            score,
            idx,
            id_rank: idx, // rows are in id order, so the row index orders ids
        });
        if heap.len() > k {
            heap.pop();
        }
    }
    let mut entries: Vec<(String, f64)> = heap
        .into_iter()
        .map(|keeper| (index.ids()[keeper.idx].clone(), keeper.score))
        .collect();
    entries.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
    Ok(RankedList {
        query_id: query.id.clone(),
        entries,
    })
}

/// nDCG with exponential gain `2^grade - 1` and `log2(rank + 1)` discount.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NdcgValue {
    pub value: f64,
    /// The query has no relevant passage in the judgments; the value is
    /// pinned to 0.
    pub no_relevant: bool,
}

pub fn ndcg_at_k(ranked: &RankedList, qrels: &Qrels, k: usize) -> NdcgValue {
    assert!(k <= ranked.len(), "nDCG cutoff beyond the ranked list");
    let gain = |grade: u32| -> f64 { (grade as f64).exp2() - 1.0 };
    let discount = |rank: usize| -> f64 { 1.0 / ((rank as f64 + 1.0).log2()) };

    let mut ideal_grades: Vec<u32> = qrels
        .relevant(&ranked.query_id)
        .map(|(_, grade)| grade)
        .collect();
    if ideal_grades.is_empty() {
        return NdcgValue {
            value: 0.0,
            no_relevant: true,
        };
    }
    ideal_grades.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal_grades
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain(g) * discount(i + 1))
        .sum();

    let dcg: f64 = ranked
        .entries
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, (id, _))| gain(qrels.grade(&ranked.query_id, id)) * discount(i + 1))
        .sum();

    NdcgValue {
        value: dcg / idcg,
        no_relevant: false,
    }
}

/// Per-query and macro-averaged nDCG at the requested cutoffs.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub ks: Vec<usize>,
    pub per_query: Vec<QueryEval>,
    pub macro_avg: Vec<f64>,
    pub query_count: usize,
    /// Queries whose judgments contain no relevant passage.
    pub no_relevant_count: usize,
}

#[derive(Debug, Clone)]
pub struct QueryEval {
    pub query_id: String,
    pub ndcg: Vec<f64>,
}

impl EvalReport {
    pub fn macro_at(&self, k: usize) -> Option<f64> {
        self.ks
            .iter()
            .position(|&a| a == k)
            .map(|i| self.macro_avg[i])
    }
}

/// Evaluate the model over every query of the split that has judgments.
pub fn evaluate(
    model: &EncoderModel,
    corpus: &Corpus,
    queries: &QuerySet,
    qrels: &Qrels,
    ks: &[usize],
) -> Result<EvalReport> {
    if ks.is_empty() {
        return Err(Error::validation("no nDCG cutoffs requested"));
    }
    let max_k = *ks.iter().max().unwrap();
    if max_k > corpus.len() {
        return Err(Error::validation(format!(
            "nDCG cutoff {max_k} exceeds corpus size {}",
            corpus.len()
        )));
    }
    let split_queries: Vec<&Query> = queries
        .iter()
        .filter(|q| qrels.judged(&q.id).next().is_some())
        .collect();
    if split_queries.is_empty() {
        return Err(Error::validation("split has no judged queries"));
    }

    let index = build_index(model, corpus);
    let mut per_query = Vec::with_capacity(split_queries.len());
    let mut sums = vec![0.0; ks.len()];
    let mut no_relevant_count = 0;
    for query in &split_queries {
        let ranked = retrieve_topk(&index, model, query, max_k)?;
        let mut ndcg = Vec::with_capacity(ks.len());
        let mut flagged = false;
        for (i, &k) in ks.iter().enumerate() {
            let v = ndcg_at_k(&ranked, qrels, k);
            flagged |= v.no_relevant;
            sums[i] += v.value;
            ndcg.push(v.value);
        }
        if flagged {
            no_relevant_count += 1;
        }
        per_query.push(QueryEval {
            query_id: query.id.clone(),
            ndcg,
        });
    }
    let n = per_query.len() as f64;
    Ok(EvalReport {
        ks: ks.to_vec(),
        macro_avg: sums.iter().map(|s| s / n).collect(),
        query_count: per_query.len(),
        no_relevant_count,
        per_query,
    })
}

/// CSV rows `query_id,ndcg@K...` with a final `__macro__` row.
pub fn write_report_csv(report: &EvalReport, path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let header: Vec<String> = std::iter::once("query_id".to_string())
        .chain(report.ks.iter().map(|k| format!("ndcg@{k}")))
        .collect();
    writeln!(file, "{}", header.join(",")).map_err(|e| Error::io(path, e))?;
    for q in &report.per_query {
        let row: Vec<String> = std::iter::once(q.query_id.clone())
            .chain(q.ndcg.iter().map(|v| format!("{v:.6}")))
            .collect();
        writeln!(file, "{}", row.join(",")).map_err(|e| Error::io(path, e))?;
    }
    let row: Vec<String> = std::iter::once("__macro__".to_string())
        .chain(report.macro_avg.iter().map(|v| format!("{v:.6}")))
        .collect();
    writeln!(file, "{}", row.join(",")).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Fixed-width table for terminal output.
pub fn format_report_table(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<12}", "query"));
    for k in &report.ks {
        out.push_str(&format!("{:>10}", format!("nDCG@{k}")));
    }
    out.push('\n');
    for q in &report.per_query {
        out.push_str(&format!("{:<12}", q.query_id));
        for v in &q.ndcg {
            out.push_str(&format!("{v:>10.4}"));
        }
        out.push('\n');
    }
    out.push_str(&format!("{:<12}", "macro"));
    for v in &report.macro_avg {
        out.push_str(&format!("{v:>10.4}"));
    }
    out.push('\n');
    out
}
