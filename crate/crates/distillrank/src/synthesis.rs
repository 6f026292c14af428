//! Stage-1 data generation: prompt templates, per-query synthesis of the
//! chain-of-thought expansion, synthetic positive and hard-negative, and the
//! self-verification relabeling step.
//!
//! Templates are stored verbatim under `prompts/` and also compiled in; the
//! two must stay identical (a golden test pins both).

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write as IoWrite;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;

use crate::data::{read_records, Corpus, Passage, Qrels, Query, QuerySet, SynthesisRecord};
use crate::error::{Error, Result};
use crate::llm::ChatClient;

/// Sampling temperature for generation prompts (chain-of-thought, positive,
/// negative). Judgment prompts (relabel, compare) run at
/// [`JUDGMENT_TEMPERATURE`].
pub const GENERATION_TEMPERATURE: f64 = 0.7;
/// Deterministic sampling for yes/no and either/or judgments.
pub const JUDGMENT_TEMPERATURE: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PromptKind {
    Cot,
    Positive,
    Negative,
    Relabel,
    Compare,
}

impl PromptKind {
    pub const ALL: [PromptKind; 5] = [
        PromptKind::Cot,
        PromptKind::Positive,
        PromptKind::Negative,
        PromptKind::Relabel,
        PromptKind::Compare,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            PromptKind::Cot => "cot.txt",
            PromptKind::Positive => "positive.txt",
            PromptKind::Negative => "negative.txt",
            PromptKind::Relabel => "relabel.txt",
            PromptKind::Compare => "compare.txt",
        }
    }

    fn label(self) -> &'static str {
        match self {
            PromptKind::Cot => "cot",
            PromptKind::Positive => "positive",
            PromptKind::Negative => "negative",
            PromptKind::Relabel => "relabel",
            PromptKind::Compare => "compare",
        }
    }
}

/// Placeholder names a template may carry.
const PLACEHOLDERS: [&str; 4] = ["question", "passage", "passage1", "passage2"];

/// The five templates, one per [`PromptKind`].
#[derive(Debug, Clone)]
pub struct PromptSet {
    templates: BTreeMap<&'static str, String>,
}

impl PromptSet {
    /// The templates compiled into the binary.
    pub fn builtin() -> Self {
        let mut templates = BTreeMap::new();
        templates.insert("cot", include_str!("../prompts/cot.txt").to_string());
        templates.insert("positive", include_str!("../prompts/positive.txt").to_string());
        templates.insert("negative", include_str!("../prompts/negative.txt").to_string());
        templates.insert("relabel", include_str!("../prompts/relabel.txt").to_string());
        templates.insert("compare", include_str!("../prompts/compare.txt").to_string());
        PromptSet { templates }
    }

    /// Load `cot.txt`, `positive.txt`, `negative.txt`, `relabel.txt` and
    /// `compare.txt` from a directory.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut templates = BTreeMap::new();
        for kind in PromptKind::ALL {
            let path = dir.join(kind.file_name());
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            templates.insert(kind.label(), text);
        }
        Ok(PromptSet { templates })
    }

    pub fn template(&self, kind: PromptKind) -> &str {
        &self.templates[kind.label()]
    }

    /// Byte-exact substitution of `{placeholder}` slots. Every placeholder in
    /// the template must be bound, every binding must appear in the template,
    /// and substituted text is never re-scanned.
    pub fn render(&self, kind: PromptKind, slots: &[(&str, &str)]) -> Result<String> {
        let template = self.template(kind);
        let bindings: BTreeMap<&str, &str> = slots.iter().copied().collect();

        for name in bindings.keys() {
            let pattern = format!("{{{name}}}");
            if !PLACEHOLDERS.contains(name) || !template.contains(&pattern) {
                return Err(Error::UnknownSlot {
                    kind: kind.label().to_string(),
                    name: name.to_string(),
                });
            }
        }

        let mut out = String::with_capacity(template.len());
        let mut rest = template;
        'outer: while !rest.is_empty() {
            if let Some(brace) = rest.find('{') {
                out.push_str(&rest[..brace]);
                let tail = &rest[brace..];
                for name in PLACEHOLDERS {
                    let pattern = format!("{{{name}}}");
                    if tail.starts_with(pattern.as_str()) {
                        let value = bindings.get(name).ok_or_else(|| Error::MissingSlot {
                            kind: kind.label().to_string(),
                            name: name.to_string(),
                        })?;
                        out.push_str(value);
                        rest = &tail[pattern.len()..];
                        continue 'outer;
                    }
                }
                out.push('{');
                rest = &tail[1..];
            } else {
                out.push_str(rest);
                break;
            }
        }
        Ok(out)
    }
}

/// Parse a self-verification reply. `Some(true)` means the passage was judged
/// relevant ("yes"), `Some(false)` means hallucination ("no").
fn parse_relabel_answer(reply: &str) -> Option<bool> {
    let normalized = reply.trim().to_lowercase();
    if normalized.starts_with("yes") {
        Some(true)
    } else if normalized.starts_with("no") {
        Some(false)
    } else {
        None
    }
}

/// Outcome of synthesizing one query.
#[derive(Debug)]
pub struct SynthesisOutcome {
    pub record: SynthesisRecord,
    /// The relabel reply was unparseable even after one retry and the record
    /// fell open to `relabeled = false`.
    pub relabel_parse_warning: bool,
}

/// Issue the four completions for one query, in order: chain-of-thought,
/// synthetic positive, synthetic hard-negative, self-verification of the
/// positive. `relabeled` is set when the verification answer starts with
/// "no" (case-insensitive, trimmed).
pub fn synthesize_record(
    client: &dyn ChatClient,
    prompts: &PromptSet,
    query: &Query,
    gold: &Passage,
    gen_temperature: f64,
) -> Result<SynthesisOutcome> {
    debug_assert!(!gold.body.trim().is_empty());
    let question = query.text.as_str();

    let q_cot = client.complete(
        &prompts.render(PromptKind::Cot, &[("question", question)])?,
        gen_temperature,
    )?;
    let p_plus = client.complete(
        &prompts.render(PromptKind::Positive, &[("question", question)])?,
        gen_temperature,
    )?;
    let p_minus = client.complete(
        &prompts.render(PromptKind::Negative, &[("question", question)])?,
        gen_temperature,
    )?;

    let relabel_prompt = prompts.render(
        PromptKind::Relabel,
        &[("question", question), ("passage", p_plus.as_str())],
    )?;
    let first = client.complete(&relabel_prompt, JUDGMENT_TEMPERATURE)?;
    let mut relabel_parse_warning = false;
    let relevant = match parse_relabel_answer(&first) {
        Some(v) => v,
        None => match parse_relabel_answer(&client.complete(&relabel_prompt, JUDGMENT_TEMPERATURE)?) {
            Some(v) => v,
            None => {
                // Fail open: dropping the record would silently shrink the
                // training set.
                relabel_parse_warning = true;
                true
            }
        },
    };

    Ok(SynthesisOutcome {
        record: SynthesisRecord {
            query_id: query.id.clone(),
            q_cot,
            p_plus,
            p_minus,
            relabeled: !relevant,
            llm_model: client.model_name().to_string(),
            created_at: client.timestamp(),
        },
        relabel_parse_warning,
    })
}

#[derive(Debug, Clone)]
pub struct SynthesisOptions {
    /// Abort once failures exceed this fraction of the queries attempted in
    /// this run.
    pub max_failure_ratio: f64,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            max_failure_ratio: 0.10,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynthesisSummary {
    /// Records present in the output file after the run (existing + new).
    pub total: usize,
    /// Records with `relabeled = true` in the output file.
    pub relabeled: usize,
    /// Records written by this run.
    pub new_records: usize,
    /// Queries that failed in this run.
    pub failed: usize,
    /// Train queries skipped because they have no gold passage.
    pub skipped_no_gold: usize,
    /// Unparseable relabel replies that fell open to `relabeled = false`.
    pub relabel_parse_warnings: usize,
}

/// Synthesize records for every train query (those with at least one
/// judgment in `qrels`), with at most `parallelism` in-flight completions.
///
/// The output file holds one record per line in input query order regardless
/// of completion order. Queries already present in the file are skipped, so
/// an interrupted run resumes where it stopped.
pub fn run_synthesis(
    client: &dyn ChatClient,
    prompts: &PromptSet,
    corpus: &Corpus,
    queries: &QuerySet,
    qrels: &Qrels,
    out_path: &Path,
    parallelism: usize,
    options: &SynthesisOptions,
) -> Result<SynthesisSummary> {
    let existing: Vec<SynthesisRecord> = if out_path.exists() {
        read_records(out_path)?
    } else {
        Vec::new()
    };
    let done: std::collections::BTreeSet<&str> =
        existing.iter().map(|r| r.query_id.as_str()).collect();

    let mut summary = SynthesisSummary::default();
    let mut tasks: Vec<(&Query, &Passage)> = Vec::new();
    for query in queries.iter() {
        if qrels.judged(&query.id).next().is_none() {
            continue; // not part of this split
        }
        if done.contains(query.id.as_str()) {
            continue;
        }
        match qrels.gold_passage(&query.id).and_then(|id| corpus.get(id)) {
            Some(gold) => tasks.push((query, gold)),
            None => summary.skipped_no_gold += 1,
        }
    }

    if let Some(parent) = out_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(out_path)
        .map_err(|e| Error::io(out_path, e))?;
    let mut writer = std::io::BufWriter::new(file);

    let failure_budget = (options.max_failure_ratio * tasks.len() as f64).floor() as usize;
    let stop = AtomicBool::new(false);
    let next_task = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, Result<SynthesisOutcome>)>();

    let workers = parallelism.max(1);
    std::thread::scope(|scope| -> Result<()> {
        for _ in 0..workers {
            let tx = tx.clone();
            let tasks = &tasks;
            let stop = &stop;
            let next_task = &next_task;
            scope.spawn(move || loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let i = next_task.fetch_add(1, Ordering::SeqCst);
                if i >= tasks.len() {
                    break;
                }
                let (query, gold) = tasks[i];
                let outcome = synthesize_record(client, prompts, query, gold, GENERATION_TEMPERATURE);
                if tx.send((i, outcome)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        let mut pending: BTreeMap<usize, Result<SynthesisOutcome>> = BTreeMap::new();
        let mut next_to_write = 0usize;
        for (i, outcome) in rx.iter() {
            pending.insert(i, outcome);
            while let Some(outcome) = pending.remove(&next_to_write) {
                next_to_write += 1;
                match outcome {
                    Ok(out) => {
                        if out.relabel_parse_warning {
                            summary.relabel_parse_warnings += 1;
                        }
                        if out.record.relabeled {
                            summary.relabeled += 1;
                        }
                        summary.new_records += 1;
                        let line = serde_json::to_string(&out.record)
                            .map_err(|e| Error::validation(format!("serialize failure: {e}")))?;
                        writeln!(writer, "{line}").map_err(|e| Error::io(out_path, e))?;
                    }
                    Err(_) => {
                        summary.failed += 1;
                        if summary.failed > failure_budget {
                            stop.store(true, Ordering::SeqCst);
                            writer.flush().map_err(|e| Error::io(out_path, e))?;
                            // Drain remaining results so workers can exit.
                            for _ in rx.iter() {}
                            return Err(Error::SynthesisFailureRatio {
                                failed: summary.failed,
                                attempted: tasks.len(),
                                limit: options.max_failure_ratio * 100.0,
                            });
                        }
                    }
                }
            }
        }
        writer.flush().map_err(|e| Error::io(out_path, e))
    })?;

    summary.total = existing.len() + summary.new_records;
    summary.relabeled += existing.iter().filter(|r| r.relabeled).count();
    Ok(summary)
}
