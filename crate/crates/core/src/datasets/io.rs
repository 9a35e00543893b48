use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{DatasetError, Sequence};

/// One JSON object per line. Floats use the shortest decimal that parses
/// back to the same bits.
pub fn to_jsonl(seqs: &[Sequence]) -> Result<String, DatasetError> {
    let mut out = String::new();
    for (index, s) in seqs.iter().enumerate() {
        s.validate()
            .map_err(|message| DatasetError::Invalid { index, message })?;
        out.push_str(&serde_json::to_string(s).expect("finite sequence serialises"));
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, seqs: &[Sequence]) -> Result<(), DatasetError> {
    let text = to_jsonl(seqs)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn parse_line(line: &str, number: usize) -> Result<Sequence, DatasetError> {
    let s: Sequence = serde_json::from_str(line).map_err(|e| DatasetError::Parse {
        line: number,
        message: e.to_string(),
    })?;
    s.validate()
        .map_err(|message| DatasetError::Parse { line: number, message })?;
    Ok(s)
}

/// Parse JSON-lines text; blank lines are skipped, errors carry 1-based line numbers.
pub fn parse_jsonl(text: &str) -> Result<Vec<Sequence>, DatasetError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_line(l, i + 1))
        .collect()
}

pub fn read_jsonl(path: &Path) -> Result<Vec<Sequence>, DatasetError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(parse_line(&line, i + 1)?);
        }
    }
    Ok(out)
}
