//! Loading of corpus / queries / qrels files.
//!
//! Layout:
//! - `corpus.jsonl`: one JSON object per line with fields `_id`, `title`, `text`
//! - `queries.jsonl`: one JSON object per line with fields `_id`, `text`
//! - `qrels/{split}.tsv`: header `query-id<TAB>corpus-id<TAB>score`, then rows
//!
//! Unknown JSON fields are ignored so that files from public benchmark dumps
//! load unchanged.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{Corpus, Passage, Qrels, Query, QuerySet};
use crate::error::{Error, Result};

/// How to treat qrels rows that reference unknown query or passage ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ValidationMode {
    /// Dangling ids are errors.
    #[default]
    Strict,
    /// Dangling ids are collected as warnings and the row is kept.
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadWarning {
    pub path: PathBuf,
    pub line: usize,
    pub message: String,
}

#[derive(Deserialize)]
struct CorpusLine {
    #[serde(rename = "_id")]
    id: String,
    #[serde(default)]
    title: String,
    text: String,
}

#[derive(Deserialize)]
struct QueryLine {
    #[serde(rename = "_id")]
    id: String,
    text: String,
}

/// A corpus, its query set and one split's judgments, loaded together.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub corpus: Corpus,
    pub queries: QuerySet,
    pub qrels: Qrels,
}

impl Dataset {
    /// Load `dir/corpus.jsonl`, `dir/queries.jsonl` and `dir/qrels/{split}.tsv`.
    pub fn load_dir(dir: &Path, split: &str, mode: ValidationMode) -> Result<(Self, Vec<LoadWarning>)> {
        let (corpus, queries, qrels, warnings) = load_dataset(
            &dir.join("corpus.jsonl"),
            &dir.join("queries.jsonl"),
            &dir.join("qrels").join(format!("{split}.tsv")),
            mode,
        )?;
        Ok((Dataset { corpus, queries, qrels }, warnings))
    }
}

/// Load and validate a corpus, a query set and one qrels file.
pub fn load_dataset(
    corpus_path: &Path,
    queries_path: &Path,
    qrels_path: &Path,
    mode: ValidationMode,
) -> Result<(Corpus, QuerySet, Qrels, Vec<LoadWarning>)> {
    let corpus = load_corpus(corpus_path)?;
    let queries = load_queries(queries_path)?;
    let (qrels, warnings) = load_qrels(qrels_path, &corpus, &queries, mode)?;
    Ok((corpus, queries, qrels, warnings))
}

pub(crate) fn load_corpus(path: &Path) -> Result<Corpus> {
    let mut passages = Vec::new();
    for (line_no, line) in read_lines(path)? {
        let rec: CorpusLine = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, line_no, format!("bad corpus record: {e}")))?;
        passages.push(Passage {
            id: rec.id,
            title: rec.title,
            body: rec.text,
        });
    }
    Corpus::from_passages(passages)
}

pub(crate) fn load_queries(path: &Path) -> Result<QuerySet> {
    let mut queries = Vec::new();
    for (line_no, line) in read_lines(path)? {
        let rec: QueryLine = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, line_no, format!("bad query record: {e}")))?;
        queries.push(Query {
            id: rec.id,
            text: rec.text,
        });
    }
    QuerySet::from_queries(queries)
}

pub(crate) fn load_qrels(
    path: &Path,
    corpus: &Corpus,
    queries: &QuerySet,
    mode: ValidationMode,
) -> Result<(Qrels, Vec<LoadWarning>)> {
    let mut qrels = Qrels::new();
    let mut warnings = Vec::new();
    let mut lines = read_lines(path)?;

    let Some((_, header)) = lines.next() else {
        return Err(Error::parse(path, 1, "empty qrels file, expected header row"));
    };
    let head: Vec<&str> = header.split('\t').collect();
    if head.len() < 3 || head[0] != "query-id" || head[1] != "corpus-id" || head[2] != "score" {
        return Err(Error::parse(
            path,
            1,
            format!("bad qrels header '{header}', expected 'query-id\\tcorpus-id\\tscore'"),
        ));
    }

    for (line_no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 3 {
            return Err(Error::parse(path, line_no, format!("expected 3 tab-separated columns, got {}", cols.len())));
        }
        let (qid, pid) = (cols[0], cols[1]);
        let grade: u32 = cols[2]
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, line_no, format!("bad relevance grade '{}'", cols[2])))?;

        let mut dangling = Vec::new();
        if queries.get(qid).is_none() {
            dangling.push(format!("unknown query id '{qid}'"));
        }
        if !corpus.contains(pid) {
            dangling.push(format!("unknown passage id '{pid}'"));
        }
        if !dangling.is_empty() {
            let message = dangling.join("; ");
            match mode {
                ValidationMode::Strict => return Err(Error::parse(path, line_no, message)),
                ValidationMode::Lenient => warnings.push(LoadWarning {
                    path: path.to_path_buf(),
                    line: line_no,
                    message,
                }),
            }
        }
        qrels.insert(qid, pid, grade);
    }
    Ok((qrels, warnings))
}

/// Numbered, newline-split file reader. Line numbers are 1-based.
fn read_lines(path: &Path) -> Result<impl Iterator<Item = (usize, String)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    Ok(reader
        .lines()
        .enumerate()
        .map(|(i, r)| match r {
            Ok(l) => (i + 1, l),
            // I/O failures mid-file surface as a poisoned line so the caller
            // reports the position; in practice this only happens on
            // non-UTF-8 bytes.
            Err(e) => (i + 1, format!("\u{0}read error: {e}")),
        })
        .filter(|(_, l)| !l.is_empty()))
}

impl std::fmt::Display for LoadWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}: {}", self.path.display(), self.line, self.message)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(dir: &Path, name: &str, contents: &str) -> PathBuf {
        let path = dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).unwrap();
        }
        let mut f = File::create(&path).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        path
    }

    fn sample_dir() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        write_file(
            dir.path(),
            "corpus.jsonl",
            concat!(
                "{\"_id\": \"d1\", \"title\": \"T1\", \"text\": \"body one\"}\n",
                "{\"_id\": \"d2\", \"title\": \"\", \"text\": \"body two\"}\n",
            ),
        );
        write_file(
            dir.path(),
            "queries.jsonl",
            "{\"_id\": \"q1\", \"text\": \"a question\"}\n",
        );
        write_file(
            dir.path(),
            "qrels/train.tsv",
            "query-id\tcorpus-id\tscore\nq1\td1\t1\n",
        );
        dir
    }

    #[test]
    fn loads_small_dataset() {
        let dir = sample_dir();
        let (ds, warnings) = Dataset::load_dir(dir.path(), "train", ValidationMode::Strict).unwrap();
        assert_eq!(ds.corpus.len(), 2);
        assert_eq!(ds.queries.len(), 1);
        assert_eq!(ds.qrels.grade("q1", "d1"), 1);
        assert!(warnings.is_empty());
    }

    #[test]
    fn dangling_qrels_id_errors_in_strict_mode() {
        let dir = sample_dir();
        write_file(
            dir.path(),
            "qrels/train.tsv",
            "query-id\tcorpus-id\tscore\nq1\td9\t1\n",
        );
        let err = Dataset::load_dir(dir.path(), "train", ValidationMode::Strict).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("d9"), "error should name the dangling id: {msg}");
        assert!(msg.contains(":2:"), "error should name the line: {msg}");

        let (ds, warnings) = Dataset::load_dir(dir.path(), "train", ValidationMode::Lenient).unwrap();
        assert_eq!(warnings.len(), 1);
        assert_eq!(ds.qrels.grade("q1", "d9"), 1);
    }

    #[test]
    fn malformed_record_reports_line_number() {
        let dir = sample_dir();
        write_file(
            dir.path(),
            "corpus.jsonl",
            "{\"_id\": \"d1\", \"text\": \"ok\"}\n{not json}\n",
        );
        let err = Dataset::load_dir(dir.path(), "train", ValidationMode::Lenient).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn unknown_fields_are_ignored() {
        let dir = sample_dir();
        write_file(
            dir.path(),
            "corpus.jsonl",
            "{\"_id\": \"d1\", \"title\": \"\", \"text\": \"b\", \"metadata\": {\"x\": 1}}\n",
        );
        write_file(dir.path(), "qrels/train.tsv", "query-id\tcorpus-id\tscore\nq1\td1\t1\n");
        let (ds, _) = Dataset::load_dir(dir.path(), "train", ValidationMode::Strict).unwrap();
        assert_eq!(ds.corpus.get("d1").unwrap().body, "b");
    }

    #[test]
    fn loading_twice_yields_equal_structures() {
        let dir = sample_dir();
        let (a, _) = Dataset::load_dir(dir.path(), "train", ValidationMode::Strict).unwrap();
        let (b, _) = Dataset::load_dir(dir.path(), "train", ValidationMode::Strict).unwrap();
        let ids_a: Vec<_> = a.corpus.iter().map(|p| p.id.clone()).collect();
        let ids_b: Vec<_> = b.corpus.iter().map(|p| p.id.clone()).collect();
        assert_eq!(ids_a, ids_b);
        assert_eq!(a.qrels.num_pairs(), b.qrels.num_pairs());
    }
}
