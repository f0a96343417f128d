use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::AmrGraph;
use crate::error::{Error, Result};

/// Parses and validates one corpus line. `line_no` is 1-based.
pub fn parse_jsonl_line(line: &str, line_no: usize) -> Result<AmrGraph> {
    let g: AmrGraph = serde_json::from_str(line).map_err(|e| Error::Json {
        line: line_no,
        message: e.to_string(),
    })?;
    g.validate(&format!("line {line_no}"))?;
    Ok(g)
}

/// Reads a JSON Lines corpus, one sentence graph per non-blank line.
pub fn read_corpus_jsonl(path: impl AsRef<Path>) -> Result<Vec<AmrGraph>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_jsonl_line(l, i + 1))
        .collect()
}

pub fn to_jsonl_line(g: &AmrGraph) -> String {
    serde_json::to_string(g).expect("graph serialization cannot fail")
}

pub fn write_corpus_jsonl(path: impl AsRef<Path>, graphs: &[AmrGraph]) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for g in graphs {
        writeln!(w, "{}", to_jsonl_line(g)).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
