use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::trainer::IterationRecord;
use crate::error::{Error, Result};

/// Appends records as newline-delimited JSON.
pub fn append_history(path: &Path, records: &[IterationRecord]) -> Result<()> {
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_history(path: &Path) -> Result<Vec<IterationRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            offset: lineno as u64 + 1,
            message: format!("history line: {e}"),
        })?);
    }
    Ok(out)
}

/// Drops records past `iteration`, so a resumed run can append cleanly.
pub fn truncate_history(path: &Path, iteration: u64) -> Result<()> {
    let kept: Vec<IterationRecord> = read_history(path)?
        .into_iter()
        .filter(|r| r.iteration <= iteration)
        .collect();
    std::fs::remove_file(path).map_err(|e| Error::io(path, e))?;
    append_history(path, &kept)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(i: u64) -> IterationRecord {
        IterationRecord {
            iteration: i,
            train_loss: 0.5 / i as f64,
            grad_norm: 1.0,
            policy: None,
        }
    }

    #[test]
    fn append_read_truncate() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.ndjson");
        append_history(&p, &[rec(1), rec(2)]).unwrap();
        append_history(&p, &[rec(3)]).unwrap();
        assert_eq!(read_history(&p).unwrap(), vec![rec(1), rec(2), rec(3)]);
        truncate_history(&p, 2).unwrap();
        assert_eq!(read_history(&p).unwrap(), vec![rec(1), rec(2)]);
    }
}
