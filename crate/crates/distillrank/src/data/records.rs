//! Newline-delimited JSON persistence for synthesis records, preference
//! triples and comparison logs. Unknown fields are ignored on read so files
//! written by newer versions still load.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{ComparisonRecord, PreferenceTriple, SynthesisRecord};
use crate::error::{Error, Result};

pub(crate) fn write_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item)
            .map_err(|e| Error::validation(format!("serialize failure: {e}")))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, i + 1, format!("bad record: {e}")))?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_records(records: &[SynthesisRecord], path: &Path) -> Result<()> {
    write_jsonl(records, path)
}

pub fn read_records(path: &Path) -> Result<Vec<SynthesisRecord>> {
    read_jsonl(path)
}

pub fn write_triples(triples: &[PreferenceTriple], path: &Path) -> Result<()> {
    write_jsonl(triples, path)
}

pub fn read_triples(path: &Path) -> Result<Vec<PreferenceTriple>> {
    read_jsonl(path)
}

pub fn write_comparison_log(log: &[ComparisonRecord], path: &Path) -> Result<()> {
    write_jsonl(log, path)
}

pub fn read_comparison_log(path: &Path) -> Result<Vec<ComparisonRecord>> {
    read_jsonl(path)
}
