//! Dataset manifests: delimited text with a header row.
//!
//! Required columns: `path`, `label` (0 or 1), `left_eye_x`, `left_eye_y`,
//! `right_eye_x`, `right_eye_y`. Landmark cells may be left empty only
//! for images that are already 32×32 and aligned. An optional
//! `provenance` column is carried through. Relative paths are resolved
//! against the manifest's directory. The delimiter (comma, tab or
//! semicolon) is taken from the header line.

use std::path::{Path, PathBuf};

use facehop_core::preprocess::{Landmarks, Point};

use crate::error::{Error, Result};

pub const COLUMNS: [&str; 6] = ["path", "label", "left_eye_x", "left_eye_y", "right_eye_x", "right_eye_y"];

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub path: PathBuf,
    pub label: u8,
    pub landmarks: Option<Landmarks>,
    pub provenance: Option<String>,
    /// 1-based line in the manifest, for error messages.
    pub line: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub source: PathBuf,
    pub records: Vec<Record>,
}

impl Manifest {
    pub fn labels(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.label).collect()
    }
}

fn sniff_delimiter(text: &str) -> u8 {
    let header = text.lines().next().unwrap_or("");
    [b',', b'\t', b';']
        .into_iter()
        .max_by_key(|&d| header.bytes().filter(|&b| b == d).count())
        .filter(|&d| header.as_bytes().contains(&d))
        .unwrap_or(b',')
}

pub fn read(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text, path)
}

/// Parse manifest text; `source` names the file in errors and anchors
/// relative image paths.
pub fn parse(text: &str, source: &Path) -> Result<Manifest> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(sniff_delimiter(text))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::manifest(source, 1, e.to_string()))?.clone();
    let mut index = [0usize; 6];
    for (slot, name) in index.iter_mut().zip(COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::manifest(source, 1, format!("missing required column `{name}`")))?;
    }
    let provenance = headers.iter().position(|h| h.eq_ignore_ascii_case("provenance"));
    let base = source.parent().unwrap_or(Path::new("."));

    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::manifest(source, line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let err = |m: String| Error::manifest(source, line, m);
        let cell = |i: usize| row.get(i).unwrap_or("");

        let rel = cell(index[0]);
        if rel.is_empty() {
            return Err(err("empty path".into()));
        }
        let label = match cell(index[1]) {
            "0" => 0,
            "1" => 1,
            other => return Err(err(format!("label must be 0 or 1, got {other:?}"))),
        };
        let coords: Vec<&str> = index[2..].iter().map(|&i| cell(i)).collect();
        let landmarks = if coords.iter().all(|c| c.is_empty()) {
            None
        } else {
            let mut v = [0.0; 4];
            for ((slot, text), name) in v.iter_mut().zip(&coords).zip(&COLUMNS[2..]) {
                *slot = text
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| err(format!("`{name}` must be a number, got {text:?}")))?;
            }
            Some(Landmarks::new(Point::new(v[0], v[1]), Point::new(v[2], v[3])))
        };
        let path = Path::new(rel);
        records.push(Record {
            path: if path.is_relative() { base.join(path) } else { path.to_path_buf() },
            label,
            landmarks,
            provenance: provenance.map(|i| cell(i).to_string()).filter(|s| !s.is_empty()),
            line,
        });
    }
    if records.is_empty() {
        return Err(Error::manifest(source, 1, "manifest has no rows"));
    }
    Ok(Manifest { source: source.to_path_buf(), records })
}

/// One output row of [`write`].
#[derive(Debug, Clone)]
pub struct Row {
    pub path: PathBuf,
    pub label: u8,
    pub landmarks: Option<Landmarks>,
    pub provenance: String,
}

/// Write a comma-separated manifest with a `provenance` column. Paths are
/// written relative to the manifest's directory when possible.
pub fn write(path: &Path, rows: &[Row]) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let io = |e: csv::Error| Error::io(path, e.into());
    let mut header: Vec<&str> = COLUMNS.to_vec();
    header.push("provenance");
    w.write_record(&header).map_err(io)?;
    for r in rows {
        let shown = r.path.strip_prefix(base).unwrap_or(&r.path).to_string_lossy().into_owned();
        let lm = r.landmarks.map_or_else(
            || vec![String::new(); 4],
            |l| [l.left_eye.x, l.left_eye.y, l.right_eye.x, l.right_eye.y].map(|v| v.to_string()).to_vec(),
        );
        let mut record = vec![shown, r.label.to_string()];
        record.extend(lm);
        record.push(r.provenance.clone());
        w.write_record(&record).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
