//! Domain types and dataset I/O.
//!
//! Corpora, query sets and relevance judgments follow the common
//! retrieval-benchmark layout: newline-delimited JSON records for passages
//! and queries, tab-separated judgments with a header row. Synthesis records
//! and preference triples are persisted as newline-delimited JSON with the
//! field names given on the types below.

mod beir;
mod records;

pub use beir::{load_dataset, Dataset, LoadWarning, ValidationMode};
pub use records::{
    read_comparison_log, read_records, read_triples, write_comparison_log, write_records,
    write_triples,
};

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One retrievable text unit. `title` may be empty; `body` must not be.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    pub title: String,
    pub body: String,
}

impl Passage {
    /// Text form used everywhere a passage is encoded: title, a space, body.
    pub fn full_text(&self) -> String {
        if self.title.trim().is_empty() {
            self.body.clone()
        } else {
            format!("{} {}", self.title, self.body)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
}

/// Immutable passage collection with stable iteration order (sorted by id).
#[derive(Debug, Clone)]
pub struct Corpus {
    passages: Vec<Passage>,
    id_lookup: HashMap<String, usize>,
}

impl Corpus {
    pub fn from_passages(mut passages: Vec<Passage>) -> Result<Self> {
        passages.sort_by(|a, b| a.id.cmp(&b.id));
        let mut id_lookup = HashMap::with_capacity(passages.len());
        for (idx, p) in passages.iter().enumerate() {
            if p.id.is_empty() {
                return Err(Error::validation("passage with empty id"));
            }
            if p.body.trim().is_empty() {
                return Err(Error::validation(format!("passage '{}' has empty body", p.id)));
            }
            if id_lookup.insert(p.id.clone(), idx).is_some() {
                return Err(Error::validation(format!("duplicate passage id '{}'", p.id)));
            }
        }
        Ok(Corpus { passages, id_lookup })
    }

    pub fn get(&self, id: &str) -> Option<&Passage> {
        self.id_lookup.get(id).map(|&i| &self.passages[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.id_lookup.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    /// Passages in id order.
    pub fn iter(&self) -> std::slice::Iter<'_, Passage> {
        self.passages.iter()
    }
}

/// Query collection with unique ids, iterated in id order.
#[derive(Debug, Clone)]
pub struct QuerySet {
    queries: Vec<Query>,
    id_lookup: HashMap<String, usize>,
}

impl QuerySet {
    pub fn from_queries(mut queries: Vec<Query>) -> Result<Self> {
        queries.sort_by(|a, b| a.id.cmp(&b.id));
        let mut id_lookup = HashMap::with_capacity(queries.len());
        for (idx, q) in queries.iter().enumerate() {
            if q.id.is_empty() {
                return Err(Error::validation("query with empty id"));
            }
            if q.text.trim().is_empty() {
                return Err(Error::validation(format!("query '{}' has empty text", q.id)));
            }
            if id_lookup.insert(q.id.clone(), idx).is_some() {
                return Err(Error::validation(format!("duplicate query id '{}'", q.id)));
            }
        }
        Ok(QuerySet { queries, id_lookup })
    }

    pub fn get(&self, id: &str) -> Option<&Query> {
        self.id_lookup.get(id).map(|&i| &self.queries[i])
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Query> {
        self.queries.iter()
    }
}

/// Relevance judgments: (query id, passage id) -> non-negative grade.
#[derive(Debug, Clone, Default)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: impl Into<String>, passage_id: impl Into<String>, grade: u32) {
        self.judgments
            .entry(query_id.into())
            .or_default()
            .insert(passage_id.into(), grade);
    }

    /// Grade for a pair; unjudged pairs are grade 0.
    pub fn grade(&self, query_id: &str, passage_id: &str) -> u32 {
        self.judgments
            .get(query_id)
            .and_then(|m| m.get(passage_id))
            .copied()
            .unwrap_or(0)
    }

    /// Judged (passage id, grade) pairs for a query, in passage-id order.
    pub fn judged(&self, query_id: &str) -> impl Iterator<Item = (&str, u32)> {
        self.judgments
            .get(query_id)
            .into_iter()
            .flat_map(|m| m.iter().map(|(p, &g)| (p.as_str(), g)))
    }

    /// Passages with grade >= 1 for a query.
    pub fn relevant(&self, query_id: &str) -> impl Iterator<Item = (&str, u32)> {
        self.judged(query_id).filter(|&(_, g)| g >= 1)
    }

    /// The manually labeled positive for a query: highest grade, ties broken
    /// by ascending passage id. `None` when no passage has grade >= 1.
    pub fn gold_passage(&self, query_id: &str) -> Option<&str> {
        self.relevant(query_id)
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(a.0)))
            .map(|(p, _)| p)
    }

    /// Query ids that have at least one judgment, in id order.
    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(|s| s.as_str())
    }

    pub fn num_pairs(&self) -> usize {
        self.judgments.values().map(|m| m.len()).sum()
    }
}

/// One synthesized training example for a query: chain-of-thought expansion,
/// synthetic positive, synthetic hard-negative, and the self-verification
/// verdict. `relabeled = true` means the synthetic positive was judged a
/// hallucination and is consumed as a hard-negative downstream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesisRecord {
    pub query_id: String,
    pub q_cot: String,
    pub p_plus: String,
    pub p_minus: String,
    pub relabeled: bool,
    pub llm_model: String,
    pub created_at: u64,
}

/// An LLM preference over two passages retrieved for one query. Ranks are
/// 1-based positions within the top-K list the pair was drawn from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceTriple {
    pub query_id: String,
    pub winner_id: String,
    pub loser_id: String,
    pub winner_rank: u32,
    pub loser_rank: u32,
}

/// One pairwise comparison as issued, including the raw reply, for auditing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonRecord {
    pub query_id: String,
    pub slot1_id: String,
    pub slot2_id: String,
    pub raw_answer: String,
    pub winner_id: Option<String>,
    pub skipped: bool,
}
