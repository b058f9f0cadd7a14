//! Small CSV/sidecar formatting helpers shared by the field and measurement
//! serializers. Floats are written with 17 significant digits so values
//! round-trip bit-exactly.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
}

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn push_fields(out: &mut String, fields: &[String]) {
    let mut first = true;
    for f in fields {
        if !first {
            out.push(',');
        }
        let _ = write!(out, "{f}");
        first = false;
    }
    out.push('\n');
}

pub(crate) fn parse_f64(s: &str, line: usize) -> Result<f64, CsvError> {
    s.trim().parse().map_err(|_| CsvError::Malformed {
        line,
        msg: format!("expected a real number, got {s:?}"),
    })
}

pub(crate) fn parse_usize(s: &str, line: usize) -> Result<usize, CsvError> {
    s.trim().parse().map_err(|_| CsvError::Malformed {
        line,
        msg: format!("expected an integer, got {s:?}"),
    })
}

/// Splits a CSV body into trimmed field rows, skipping the header.
pub(crate) fn data_rows(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.split(',').collect()))
}
