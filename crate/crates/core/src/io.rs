//! File formats: JSON Lines for corpora and n-best lists, single JSON
//! documents for everything else. Floats are written in shortest round-trip
//! form, so every file reads back to the identical doubles.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn json_err(path: &Path, line: usize) -> impl FnOnce(serde_json::Error) -> Error + '_ {
    move |source| Error::Json {
        path: path.to_path_buf(),
        line,
        source,
    }
}

/// Reads one record per non-blank line; errors carry the 1-based line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(json_err(path, i + 1))?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(json_err(path, 0))?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads a single JSON document; parse errors report the line they occur on.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| {
        let line = e.line();
        json_err(path, line)(e)
    })
}

/// Pretty-printed JSON followed by a newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(json_err(path, 0))?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn create_file(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Hypothesis, NBestList, ScaleSet};

    #[test]
    fn jsonl_round_trip_and_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nb.jsonl");
        let h = Hypothesis::new(
            vec![1, 2].into(),
            vec![-0.1, -1.0 / 3.0],
            vec![-2.0, -1e-300],
        )
        .unwrap();
        let lists = vec![
            NBestList::new("a", vec![1].into(), vec![h.clone()]).unwrap(),
            NBestList::new("b", vec![2].into(), vec![h]).unwrap(),
        ];
        write_jsonl(&p, &lists).unwrap();
        let back: Vec<NBestList> = read_jsonl(&p).unwrap();
        assert_eq!(back, lists);

        std::fs::write(
            &p,
            format!(
                "{}\n\n{{\"id\": 3}}\n",
                serde_json::to_string(&lists[0]).unwrap()
            ),
        )
        .unwrap();
        match read_jsonl::<NBestList>(&p) {
            Err(Error::Json { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        let s = ScaleSet::subword(vec![0.1, 1.0 / 7.0], vec![2.0, -0.3]).unwrap();
        write_json(&p, &s).unwrap();
        assert_eq!(read_json::<ScaleSet>(&p).unwrap(), s);
        assert!(matches!(
            read_json::<ScaleSet>(&dir.path().join("missing")),
            Err(Error::Io { .. })
        ));
    }
}
