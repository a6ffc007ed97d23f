//! Readers for external sample files.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;

use ofw_core::gradients::{Features, LabeledVector, McSample};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn malformed(line: u64, message: impl Into<String>) -> IngestError {
    IngestError::Malformed {
        line,
        message: message.into(),
    }
}

/// Reads `k,l,y` triplets (0-based indices), skipping an optional `k,l,y` header.
/// Indices are checked against `dims` when given.
pub fn ingest_mc_triplets(
    path: &Path,
    dims: Option<(usize, usize)>,
) -> Result<Vec<McSample>, IngestError> {
    read_mc_triplets(File::open(path)?, dims)
}

pub fn read_mc_triplets<R: Read>(
    reader: R,
    dims: Option<(usize, usize)>,
) -> Result<Vec<McSample>, IngestError> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let mut out = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        let line = csv.position().line();
        let more = csv.read_record(&mut record).map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => IngestError::Io(io::Error::other(e.to_string())),
            _ => malformed(line, e.to_string()),
        })?;
        if !more {
            break;
        }
        let line = record.position().map_or(line, |p| p.line());
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if out.is_empty() && record.iter().eq(["k", "l", "y"]) {
            continue;
        }
        if record.len() != 3 {
            return Err(malformed(
                line,
                format!("expected 3 fields, found {}", record.len()),
            ));
        }
        let index = |i: usize, name: &str| {
            record[i].parse::<usize>().map_err(|_| {
                malformed(
                    line,
                    format!("{name} index {:?} is not a nonnegative integer", &record[i]),
                )
            })
        };
        let row = index(0, "row")?;
        let col = index(1, "column")?;
        let value: f64 = record[2]
            .parse()
            .map_err(|_| malformed(line, format!("value {:?} is not a number", &record[2])))?;
        if !value.is_finite() {
            return Err(malformed(line, format!("value {value} is not finite")));
        }
        if let Some((rows, cols)) = dims {
            if row >= rows || col >= cols {
                return Err(malformed(
                    line,
                    format!("index ({row}, {col}) outside {rows}x{cols}"),
                ));
            }
        }
        out.push(McSample { row, col, value });
    }
    Ok(out)
}

/// Labelled sparse vectors plus the dimension they were read with.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledData {
    pub dim: usize,
    pub samples: Vec<LabeledVector>,
}

/// Reads `label index:value ...` lines with 1-based indices. Labels `0` and `-1`
/// both map to `-1`. Without `dim`, the dimension is the largest index seen.
pub fn ingest_labeled_sparse(path: &Path, dim: Option<usize>) -> Result<LabeledData, IngestError> {
    read_labeled_sparse(BufReader::new(File::open(path)?), dim)
}

pub fn read_labeled_sparse<R: BufRead>(
    reader: R,
    dim: Option<usize>,
) -> Result<LabeledData, IngestError> {
    let mut rows = Vec::new();
    let mut max_index = 0;
    for (i, text) in reader.lines().enumerate() {
        let line = i as u64 + 1;
        let text = text?;
        let mut tokens = text.split_whitespace();
        let Some(label) = tokens.next() else { continue };
        let y = match label.parse::<f64>() {
            Ok(v) if [1.0, 0.0, -1.0].contains(&v) => {
                if v > 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
            _ => {
                return Err(malformed(
                    line,
                    format!("label {label:?} is not one of -1, 0, +1"),
                ))
            }
        };
        let mut pairs: Vec<(usize, f64)> = Vec::new();
        for token in tokens {
            let (index, value) = token
                .split_once(':')
                .ok_or_else(|| malformed(line, format!("pair {token:?} is not index:value")))?;
            let index: usize = index.parse().ok().filter(|&i| i >= 1).ok_or_else(|| {
                malformed(line, format!("index {index:?} is not a positive integer"))
            })?;
            let value: f64 = value
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| {
                    malformed(line, format!("value {value:?} is not a finite number"))
                })?;
            if let Some(d) = dim {
                if index > d {
                    return Err(malformed(
                        line,
                        format!("index {index} exceeds dimension {d}"),
                    ));
                }
            }
            if pairs.last().is_some_and(|&(prev, _)| prev >= index - 1) {
                return Err(malformed(
                    line,
                    format!("index {index} is not strictly increasing"),
                ));
            }
            max_index = max_index.max(index);
            pairs.push((index - 1, value));
        }
        rows.push((y, pairs));
    }
    let dim = dim.unwrap_or(max_index);
    let samples = rows
        .into_iter()
        .map(|(y, pairs)| {
            let (indices, values) = pairs.into_iter().unzip();
            LabeledVector {
                x: Features::Sparse {
                    dim,
                    indices,
                    values,
                },
                y,
            }
        })
        .collect();
    Ok(LabeledData { dim, samples })
}

/// Writes samples in the format read by [`read_labeled_sparse`]. Zero entries of
/// dense features are skipped.
pub fn write_labeled_sparse<W: Write>(mut out: W, samples: &[LabeledVector]) -> io::Result<()> {
    for s in samples {
        write!(out, "{}", if s.y > 0.0 { "+1" } else { "-1" })?;
        match &s.x {
            Features::Dense(x) => {
                for (i, v) in x.iter().enumerate().filter(|(_, v)| **v != 0.0) {
                    write!(out, " {}:{v:?}", i + 1)?;
                }
            }
            Features::Sparse {
                indices, values, ..
            } => {
                for (i, v) in indices.iter().zip(values) {
                    write!(out, " {}:{v:?}", i + 1)?;
                }
            }
        }
        writeln!(out)?;
    }
    Ok(())
}
