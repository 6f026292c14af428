//! Deterministic offline stand-in for a black-box LLM.
//!
//! The oracle is grounded in a loaded dataset: it parses the rendered prompt
//! back into its slots, looks the query and passages up, and answers from
//! the relevance judgments. Because hallucinations are *planted* (a low
//! overlap unrelated passage body substituted for the synthetic positive),
//! the self-verification step has a ground truth to be measured against.
//!
//! Every reply is a pure function of (seed, prompt), so synthesis output is
//! byte-identical across runs and across parallelism settings.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use super::{ChatClient, LlmError};
use crate::data::{Corpus, Qrels, QuerySet};
use crate::encoder::seeded_fnv1a;
use crate::synthesis::PromptKind;

/// Fraction of gold-passage tokens dropped when fabricating a non-hallucinated
/// synthetic positive.
pub const MOCK_POSITIVE_DROPOUT: f64 = 0.2;

#[derive(Debug, Clone)]
pub struct MockOracleConfig {
    /// Probability that a synthetic positive is a planted hallucination.
    pub hallucination_rate: f64,
    /// Minimum token Jaccard overlap with the gold passage for the
    /// self-verification step to answer "yes".
    pub verify_overlap_threshold: f64,
    pub seed: u64,
}

impl Default for MockOracleConfig {
    fn default() -> Self {
        MockOracleConfig {
            hallucination_rate: 0.15,
            verify_overlap_threshold: 0.3,
            seed: 0,
        }
    }
}

impl MockOracleConfig {
    fn check(&self) -> Result<(), LlmError> {
        for (name, v) in [
            ("hallucination_rate", self.hallucination_rate),
            ("verify_overlap_threshold", self.verify_overlap_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(LlmError::Mock(format!("{name} must be in [0,1], got {v}")));
            }
        }
        Ok(())
    }
}

pub struct MockOracle {
    config: MockOracleConfig,
    corpus: Corpus,
    qrels: Qrels,
    query_id_by_text: BTreeMap<String, String>,
    passage_id_by_text: BTreeMap<String, String>,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    call_delay: Duration,
}

impl MockOracle {
    pub fn new(
        config: MockOracleConfig,
        corpus: &Corpus,
        queries: &QuerySet,
        qrels: &Qrels,
    ) -> Result<Self, LlmError> {
        config.check()?;
        let mut query_id_by_text = BTreeMap::new();
        for q in queries.iter() {
            // Ids are iterated in order, so duplicate texts deterministically
            // resolve to the smallest id.
            query_id_by_text.entry(q.text.clone()).or_insert_with(|| q.id.clone());
        }
        let mut passage_id_by_text = BTreeMap::new();
        for p in corpus.iter() {
            passage_id_by_text.entry(p.body.clone()).or_insert_with(|| p.id.clone());
            passage_id_by_text.entry(p.full_text()).or_insert_with(|| p.id.clone());
        }
        Ok(MockOracle {
            config,
            corpus: corpus.clone(),
            qrels: qrels.clone(),
            query_id_by_text,
            passage_id_by_text,
            calls: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
            call_delay: Duration::ZERO,
        })
    }

    /// Test hook: hold each call open for `delay` so concurrency limits are
    /// observable.
    pub fn with_call_delay(mut self, delay: Duration) -> Self {
        self.call_delay = delay;
        self
    }

    pub fn total_calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Highest number of concurrently open calls observed so far.
    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }

    fn rng_for(&self, prompt: &str) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seeded_fnv1a(self.config.seed, prompt))
    }

    fn lookup_query(&self, question: &str) -> Result<&str, LlmError> {
        self.query_id_by_text
            .get(question)
            .map(|s| s.as_str())
            .ok_or_else(|| LlmError::Mock(format!("prompt question not in dataset: '{question}'")))
    }

    fn gold_body(&self, query_id: &str) -> Result<&str, LlmError> {
        let gold_id = self
            .qrels
            .gold_passage(query_id)
            .ok_or_else(|| LlmError::Mock(format!("query '{query_id}' has no gold passage")))?;
        Ok(&self
            .corpus
            .get(gold_id)
            .ok_or_else(|| LlmError::Mock(format!("gold passage '{gold_id}' missing from corpus")))?
            .body)
    }

    /// Grade-0 passages for the query, in id order.
    fn irrelevant_passages(&self, query_id: &str) -> Vec<&crate::data::Passage> {
        self.corpus
            .iter()
            .filter(|p| self.qrels.grade(query_id, &p.id) == 0)
            .collect()
    }

    /// Deterministic reply for a known prompt kind.
    pub fn mock_complete(&self, kind: PromptKind, prompt: &str) -> Result<String, LlmError> {
        let mut rng = self.rng_for(prompt);
        match kind {
            PromptKind::Cot => {
                let question = extract(prompt, "Question: ", "\n\n")?;
                Ok(expand_query(&question))
            }
            PromptKind::Positive => {
                let question = extract(prompt, "Question: ", "\n\n")?;
                let query_id = self.lookup_query(&question)?;
                let gold = self.gold_body(query_id)?;
                if rng.gen::<f64>() < self.config.hallucination_rate {
                    let gold_tokens = unique_tokens(gold);
                    let candidates: Vec<&crate::data::Passage> = self
                        .irrelevant_passages(query_id)
                        .into_iter()
                        .filter(|p| {
                            jaccard(&unique_tokens(&p.body), &gold_tokens)
                                < self.config.verify_overlap_threshold
                        })
                        .collect();
                    if candidates.is_empty() {
                        return Err(LlmError::Mock(format!(
                            "no low-overlap irrelevant passage to plant for query '{query_id}'"
                        )));
                    }
                    let pick = rng.gen_range(0..candidates.len());
                    Ok(candidates[pick].body.clone())
                } else {
                    Ok(dropout_tokens(gold, MOCK_POSITIVE_DROPOUT, &mut rng))
                }
            }
            PromptKind::Negative => {
                let question = extract(prompt, "Question: ", "\n\n")?;
                let query_id = self.lookup_query(&question)?;
                let candidates = self.irrelevant_passages(query_id);
                if candidates.is_empty() {
                    return Err(LlmError::Mock(format!(
                        "no irrelevant passage available for query '{query_id}'"
                    )));
                }
                let pick = rng.gen_range(0..candidates.len());
                let prefix = simple_tokens(&question).join(" ");
                Ok(format!("{prefix} {}", candidates[pick].body))
            }
            PromptKind::Relabel => {
                let question = extract(prompt, "Question: ", "\n\nPassage: ")?;
                let candidate = extract(prompt, "\n\nPassage: ", "\nIs the above passage relevant")?;
                let query_id = self.lookup_query(&question)?;
                let gold = self.gold_body(query_id)?;
                let overlap = jaccard(&unique_tokens(&candidate), &unique_tokens(gold));
                Ok(if overlap >= self.config.verify_overlap_threshold {
                    "yes".to_string()
                } else {
                    "no".to_string()
                })
            }
            PromptKind::Compare => {
                let passage1 = extract(prompt, "Passage #1: ", "\nPassage #2: ")?;
                let passage2 = extract(prompt, "\nPassage #2: ", "\nQuestion: ")?;
                let question = extract(prompt, "\nQuestion: ", "\n\nBased on")?;
                let query_id = self.lookup_query(&question)?;
                let id1 = self.passage_id_by_text.get(&passage1).ok_or_else(|| {
                    LlmError::Mock("compare slot 1 text not in corpus".to_string())
                })?;
                let id2 = self.passage_id_by_text.get(&passage2).ok_or_else(|| {
                    LlmError::Mock("compare slot 2 text not in corpus".to_string())
                })?;
                let question_tokens = unique_tokens(&question);
                let key = |id: &str, text: &str| {
                    (
                        self.qrels.grade(query_id, id),
                        unique_tokens(text).intersection(&question_tokens).count(),
                    )
                };
                let (g1, o1) = key(id1, &passage1);
                let (g2, o2) = key(id2, &passage2);
                let first_wins = match (g1.cmp(&g2), o1.cmp(&o2)) {
                    (std::cmp::Ordering::Greater, _) => true,
                    (std::cmp::Ordering::Less, _) => false,
                    (_, std::cmp::Ordering::Greater) => true,
                    (_, std::cmp::Ordering::Less) => false,
                    _ => id1 <= id2,
                };
                Ok(if first_wins {
                    "Passage #1".to_string()
                } else {
                    "Passage #2".to_string()
                })
            }
        }
    }
}

impl ChatClient for MockOracle {
    fn complete(&self, prompt: &str, _temperature: f64) -> Result<String, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        if !self.call_delay.is_zero() {
            // prompt-dependent jitter so concurrent callers finish out of
            // submission order, the way a real endpoint would
            let spread = 1 + (seeded_fnv1a(0, prompt) % 4) as u32;
            std::thread::sleep(self.call_delay * spread);
        }
        let kind = detect_prompt_kind(prompt);
        let result = match kind {
            Some(kind) => self.mock_complete(kind, prompt),
            None => Err(LlmError::Mock("prompt matches no known template".to_string())),
        };
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        result
    }

    fn model_name(&self) -> &str {
        "mock-oracle"
    }

    fn timestamp(&self) -> u64 {
        0
    }
}

/// Recover the prompt kind from the template's distinguishing phrases.
pub fn detect_prompt_kind(prompt: &str) -> Option<PromptKind> {
    if prompt.contains("Passage #1: ") {
        Some(PromptKind::Compare)
    } else if prompt.contains("Is the above passage relevant") {
        Some(PromptKind::Relabel)
    } else if prompt.contains("Let's think step-by-step.") {
        Some(PromptKind::Cot)
    } else if prompt.contains("Write a passage that elaborates") {
        Some(PromptKind::Positive)
    } else if prompt.contains("Write a passage that contains plausible but irrelevant") {
        Some(PromptKind::Negative)
    } else {
        None
    }
}

fn extract(prompt: &str, start_marker: &str, end_marker: &str) -> Result<String, LlmError> {
    let start = prompt
        .find(start_marker)
        .ok_or_else(|| LlmError::Mock(format!("prompt missing marker '{start_marker}'")))?
        + start_marker.len();
    let end = prompt[start..]
        .find(end_marker)
        .ok_or_else(|| LlmError::Mock(format!("prompt missing marker '{}'", end_marker.trim())))?;
    Ok(prompt[start..start + end].to_string())
}

/// Lowercased alphanumeric tokens, in order.
fn simple_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_string())
        .collect()
}

fn unique_tokens(text: &str) -> BTreeSet<String> {
    simple_tokens(text).into_iter().collect()
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// The query followed by two sub-question expansions built from its tokens.
fn expand_query(question: &str) -> String {
    let tokens = simple_tokens(question);
    if tokens.is_empty() {
        return question.to_string();
    }
    let mid = tokens.len().div_ceil(2);
    let head = tokens[..mid].join(" ");
    let tail = tokens[mid..].join(" ");
    let second = if tail.is_empty() { head.clone() } else { tail };
    format!("{question} What is known about {head}? How does {second} bear on the question?")
}

fn dropout_tokens(text: &str, rate: f64, rng: &mut ChaCha12Rng) -> String {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let kept: Vec<&str> = tokens
        .iter()
        .filter(|_| rng.gen::<f64>() >= rate)
        .copied()
        .collect();
    if kept.is_empty() {
        tokens.first().copied().unwrap_or("").to_string()
    } else {
        kept.join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Passage, Query};
    use crate::synthesis::PromptSet;

    fn fixture() -> (Corpus, QuerySet, Qrels) {
        let corpus = Corpus::from_passages(vec![
            Passage {
                id: "d1".into(),
                title: "alpha".into(),
                body: "felines use whiskers as sensory organs near walls".into(),
            },
            Passage {
                id: "d2".into(),
                title: "beta".into(),
                body: "canines enjoy fetch obedience training daily".into(),
            },
            Passage {
                id: "d3".into(),
                title: "gamma".into(),
                body: "orbits trace ellipses around massive planets".into(),
            },
        ])
        .unwrap();
        let queries = QuerySet::from_queries(vec![Query {
            id: "q1".into(),
            text: "what do felines use whiskers for".into(),
        }])
        .unwrap();
        let mut qrels = Qrels::new();
        qrels.insert("q1", "d1", 1);
        (corpus, queries, qrels)
    }

    fn oracle(hallucination_rate: f64, seed: u64) -> MockOracle {
        let (corpus, queries, qrels) = fixture();
        MockOracle::new(
            MockOracleConfig {
                hallucination_rate,
                verify_overlap_threshold: 0.3,
                seed,
            },
            &corpus,
            &queries,
            &qrels,
        )
        .unwrap()
    }

    fn prompt(kind: PromptKind, question: &str) -> String {
        let prompts = PromptSet::builtin();
        prompts
            .render(kind, &[("question", question)])
            .unwrap()
    }

    #[test]
    fn kind_detection_covers_all_templates() {
        let prompts = PromptSet::builtin();
        let q = [("question", "q")];
        let qp = [("question", "q"), ("passage", "p")];
        let qpp = [("question", "q"), ("passage1", "p1"), ("passage2", "p2")];
        for (kind, slots) in [
            (PromptKind::Cot, &q[..]),
            (PromptKind::Positive, &q[..]),
            (PromptKind::Negative, &q[..]),
            (PromptKind::Relabel, &qp[..]),
            (PromptKind::Compare, &qpp[..]),
        ] {
            let rendered = prompts.render(kind, slots).unwrap();
            assert_eq!(detect_prompt_kind(&rendered), Some(kind), "{kind:?}");
        }
        assert_eq!(detect_prompt_kind("free-form text"), None);
    }

    #[test]
    fn positive_without_hallucination_overlaps_gold() {
        let oracle = oracle(0.0, 7);
        let p = prompt(PromptKind::Positive, "what do felines use whiskers for");
        let reply = oracle.mock_complete(PromptKind::Positive, &p).unwrap();
        let overlap = jaccard(
            &unique_tokens(&reply),
            &unique_tokens("felines use whiskers as sensory organs near walls"),
        );
        assert!(overlap >= 0.3, "overlap {overlap} below threshold");
    }

    #[test]
    fn forced_hallucination_is_flagged_by_relabel() {
        let oracle = oracle(1.0, 7);
        let p = prompt(PromptKind::Positive, "what do felines use whiskers for");
        let planted = oracle.mock_complete(PromptKind::Positive, &p).unwrap();
        assert!(planted.contains("canines") || planted.contains("orbits"));

        let relabel_prompt = PromptSet::builtin()
            .render(
                PromptKind::Relabel,
                &[
                    ("question", "what do felines use whiskers for"),
                    ("passage", planted.as_str()),
                ],
            )
            .unwrap();
        let verdict = oracle.mock_complete(PromptKind::Relabel, &relabel_prompt).unwrap();
        assert_eq!(verdict, "no");
    }

    #[test]
    fn compare_prefers_higher_grade_then_overlap_then_id() {
        let oracle = oracle(0.0, 7);
        let render = |p1: &str, p2: &str| {
            PromptSet::builtin()
                .render(
                    PromptKind::Compare,
                    &[
                        ("question", "what do felines use whiskers for"),
                        ("passage1", p1),
                        ("passage2", p2),
                    ],
                )
                .unwrap()
        };
        // gold (d1) vs non-gold (d2): grade dominance, regardless of slot
        let p = render(
            "canines enjoy fetch obedience training daily",
            "felines use whiskers as sensory organs near walls",
        );
        assert_eq!(oracle.mock_complete(PromptKind::Compare, &p).unwrap(), "Passage #2");
        // two non-golds: d2 and d3 tie on grade and on query overlap (zero),
        // so the smaller id d2 wins
        let p = render(
            "orbits trace ellipses around massive planets",
            "canines enjoy fetch obedience training daily",
        );
        assert_eq!(oracle.mock_complete(PromptKind::Compare, &p).unwrap(), "Passage #2");
    }

    #[test]
    fn same_seed_same_prompt_is_reproducible() {
        let p = prompt(PromptKind::Positive, "what do felines use whiskers for");
        let a = oracle(0.5, 42).mock_complete(PromptKind::Positive, &p).unwrap();
        let b = oracle(0.5, 42).mock_complete(PromptKind::Positive, &p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cot_reply_contains_query_and_two_expansions() {
        let oracle = oracle(0.0, 7);
        let p = prompt(PromptKind::Cot, "what do felines use whiskers for");
        let reply = oracle.mock_complete(PromptKind::Cot, &p).unwrap();
        assert!(reply.starts_with("what do felines use whiskers for"));
        assert_eq!(reply.matches('?').count(), 2);
    }
}
