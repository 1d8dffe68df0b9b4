//! Prediction and dataset files.
//!
//! CSV prediction files have a header `l0,...,l{K-1},label` (logits) or
//! `p0,...,p{K-1},label` (probabilities). Files ending in `.gz` are
//! gunzipped first. Files starting with the magic `CALP` are binary:
//! little-endian `u32 N`, `u32 K`, `N·K` f32 probabilities row-major, then
//! `N` u32 labels.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::Dataset;
use crate::error::{Error, Result};
use crate::metrics::PredictionSet;
use crate::tensor::Tensor;

pub const BINARY_MAGIC: &[u8; 4] = b"CALP";

/// Row-sum tolerance for probability files.
const FILE_ROW_SUM_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictionKind {
    Logits,
    Probs,
}

impl PredictionKind {
    fn prefix(self) -> char {
        match self {
            PredictionKind::Logits => 'l',
            PredictionKind::Probs => 'p',
        }
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    let mut reader: Box<dyn Read> = if is_gz(path) {
        Box::new(GzDecoder::new(BufReader::new(file)))
    } else {
        Box::new(BufReader::new(file))
    };
    reader.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("gz"))
}

fn create(path: &Path) -> Result<Box<dyn Write>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let w = BufWriter::new(file);
    Ok(if is_gz(path) {
        Box::new(GzEncoder::new(w, Compression::default()))
    } else {
        Box::new(w)
    })
}

/// Loads a prediction file, sniffing gzip by extension and the binary
/// format by magic bytes.
pub fn load_predictions(path: impl AsRef<Path>) -> Result<PredictionSet> {
    let path = path.as_ref();
    let bytes = read_all(path)?;
    if bytes.starts_with(BINARY_MAGIC) {
        return read_binary(path, &bytes);
    }
    read_predictions(path, &bytes[..])
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Parses CSV predictions; `origin` is only used in error messages.
pub fn read_predictions(origin: &Path, reader: impl Read) -> Result<PredictionSet> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = csv.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| parse_err(origin, 1, e.to_string()))?,
        None => return Err(parse_err(origin, 1, "empty file")),
    };
    let (kind, k) = parse_header(origin, &header)?;

    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in records.enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(origin, line, e.to_string()))?;
        if rec.len() != k + 1 {
            return Err(parse_err(
                origin,
                line,
                format!("expected {} fields, found {}", k + 1, rec.len()),
            ));
        }
        let start = values.len();
        for field in rec.iter().take(k) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(origin, line, format!("`{field}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(origin, line, format!("non-finite value `{field}`")));
            }
            values.push(v);
        }
        let label = parse_label(&rec[k]).ok_or_else(|| parse_err(origin, line, format!("bad label `{}`", &rec[k])))?;
        if label >= k {
            return Err(parse_err(origin, line, format!("label {label} out of range for {k} classes")));
        }
        labels.push(label);
        if kind == PredictionKind::Probs {
            let row = &values[start..];
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(parse_err(origin, line, format!("probability {v} outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > FILE_ROW_SUM_TOL {
                return Err(parse_err(origin, line, format!("row {} probabilities sum to {sum}", i + 1)));
            }
        }
    }
    if labels.is_empty() {
        return Err(parse_err(origin, 2, "no prediction rows"));
    }
    let n = labels.len();
    let matrix = Tensor::new(n, k, values)?;
    match kind {
        PredictionKind::Logits => PredictionSet::from_logits(matrix, labels),
        PredictionKind::Probs => PredictionSet::from_probs_with_tolerance(matrix, labels, FILE_ROW_SUM_TOL),
    }
}

fn parse_label(field: &str) -> Option<usize> {
    let field = field.trim();
    if let Ok(v) = field.parse::<usize>() {
        return Some(v);
    }
    let v: f64 = field.parse().ok()?;
    (v >= 0.0 && v.fract() == 0.0 && v < u32::MAX as f64).then_some(v as usize)
}

fn parse_header(path: &Path, header: &csv::StringRecord) -> Result<(PredictionKind, usize)> {
    let fields: Vec<&str> = header.iter().map(str::trim).collect();
    if fields.len() < 3 || fields.last() != Some(&"label") {
        return Err(parse_err(
            path,
            1,
            "header must be `l0,...,l{K-1},label` or `p0,...,p{K-1},label` with K >= 2",
        ));
    }
    let kind = match fields[0].chars().next() {
        Some('l') => PredictionKind::Logits,
        Some('p') => PredictionKind::Probs,
        _ => return Err(parse_err(path, 1, format!("unknown column `{}`", fields[0]))),
    };
    let k = fields.len() - 1;
    for (c, f) in fields[..k].iter().enumerate() {
        if *f != format!("{}{c}", kind.prefix()) {
            return Err(parse_err(path, 1, format!("column {} should be `{}{c}`, found `{f}`", c + 1, kind.prefix())));
        }
    }
    Ok((kind, k))
}

fn read_binary(path: &Path, bytes: &[u8]) -> Result<PredictionSet> {
    let u32_at = |off: usize| -> Option<u32> { Some(u32::from_le_bytes(bytes.get(off..off + 4)?.try_into().ok()?)) };
    let truncated = || parse_err(path, 0, "truncated binary prediction file");
    let n = u32_at(4).ok_or_else(truncated)? as usize;
    let k = u32_at(8).ok_or_else(truncated)? as usize;
    let expected = 12 + 4 * n * k + 4 * n;
    if bytes.len() != expected {
        return Err(parse_err(
            path,
            0,
            format!("binary file has {} bytes, expected {expected} for N={n}, K={k}", bytes.len()),
        ));
    }
    let probs: Vec<f64> = (0..n * k)
        .map(|i| {
            let off = 12 + 4 * i;
            f64::from(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()))
        })
        .collect();
    let labels: Vec<usize> = (0..n)
        .map(|i| u32_at(12 + 4 * n * k + 4 * i).unwrap() as usize)
        .collect();
    PredictionSet::from_probs_with_tolerance(Tensor::new(n, k, probs)?, labels, FILE_ROW_SUM_TOL)
}

/// Writes the binary `CALP` format (probabilities stored as f32).
pub fn write_binary_predictions(mut w: impl Write, preds: &PredictionSet) -> std::io::Result<()> {
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&(preds.n() as u32).to_le_bytes())?;
    w.write_all(&(preds.k() as u32).to_le_bytes())?;
    for &p in preds.probs().data() {
        w.write_all(&(p as f32).to_le_bytes())?;
    }
    for &y in preds.labels() {
        w.write_all(&(y as u32).to_le_bytes())?;
    }
    Ok(())
}

/// Formats with 17 significant digits, enough to round-trip any f64.
fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes predictions as CSV. Logits are only available when the set was
/// built from logits.
pub fn write_predictions(mut w: impl Write, preds: &PredictionSet, kind: PredictionKind) -> Result<()> {
    let matrix = match kind {
        PredictionKind::Probs => preds.probs(),
        PredictionKind::Logits => preds
            .logits()
            .ok_or_else(|| Error::Input("prediction set carries no logits".into()))?,
    };
    let io = |e| Error::io("<output>", e);
    let header: Vec<String> = (0..preds.k())
        .map(|c| format!("{}{c}", kind.prefix()))
        .chain(std::iter::once("label".to_string()))
        .collect();
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for (row, y) in matrix.iter_rows().zip(preds.labels()) {
        let cells: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        writeln!(w, "{},{y}", cells.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn save_predictions(path: impl AsRef<Path>, preds: &PredictionSet, kind: PredictionKind) -> Result<()> {
    let path = path.as_ref();
    write_predictions(create(path)?, preds, kind).map_err(|e| relabel(e, path))
}

fn relabel(e: Error, path: &Path) -> Error {
    match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    }
}

/// Writes `x0,...,x{d-1},label` CSV.
pub fn write_dataset(mut w: impl Write, data: &Dataset) -> Result<()> {
    let io = |e| Error::io("<output>", e);
    let header: Vec<String> = (0..data.dim())
        .map(|j| format!("x{j}"))
        .chain(std::iter::once("label".to_string()))
        .collect();
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for (row, y) in data.features.iter_rows().zip(&data.labels) {
        let cells: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        writeln!(w, "{},{y}", cells.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn save_dataset(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let path = path.as_ref();
    write_dataset(create(path)?, data).map_err(|e| relabel(e, path))
}

/// Reads a dataset CSV. The class count is `max(label) + 1` unless
/// `classes` is given.
pub fn load_dataset(path: impl AsRef<Path>, classes: Option<usize>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = read_all(path)?;
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(&bytes[..]);
    let mut records = csv.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| parse_err(path, 1, e.to_string()))?,
        None => return Err(parse_err(path, 1, "empty file")),
    };
    let d = header.len().saturating_sub(1);
    if d == 0 || header.iter().next_back().map(str::trim) != Some("label") {
        return Err(parse_err(path, 1, "header must be `x0,...,x{d-1},label`"));
    }
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in records.enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(path, line, e.to_string()))?;
        if rec.len() != d + 1 {
            return Err(parse_err(path, line, format!("expected {} fields, found {}", d + 1, rec.len())));
        }
        for field in rec.iter().take(d) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(path, line, format!("`{field}` is not a number")))?;
            values.push(v);
        }
        labels.push(parse_label(&rec[d]).ok_or_else(|| parse_err(path, line, format!("bad label `{}`", &rec[d])))?);
    }
    if labels.is_empty() {
        return Err(parse_err(path, 2, "no data rows"));
    }
    let k = classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    let n = labels.len();
    Dataset::new(Tensor::new(n, d, values)?, labels, k)
}
