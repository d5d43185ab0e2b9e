//! Score tables as CSV: `image_id,tokens,dreamsim,nima_mu`, rows sorted by
//! `(image_id, tokens)`, LF line endings.

use std::fs;
use std::path::Path;

use semcom_core::metrics::{Breakpoint, ScoreTable};

use crate::error::{LabError, Result};

pub const HEADER: [&str; 4] = ["image_id", "tokens", "dreamsim", "nima_mu"];

pub fn parse_score_table(text: &str, path: &Path) -> Result<ScoreTable> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| LabError::format(path, e.to_string()))?;
    if header.iter().ne(HEADER) {
        return Err(LabError::format(path, format!("header must be `{}`", HEADER.join(","))));
    }
    let mut table = ScoreTable::new();
    let mut last: Option<(String, f64)> = None;
    for (k, record) in reader.records().enumerate() {
        let line = k + 2;
        let record = record.map_err(|e| LabError::format(path, format!("line {line}: {e}")))?;
        if record.len() != 4 {
            return Err(LabError::format(path, format!("line {line}: expected 4 fields")));
        }
        let num = |i: usize| -> Result<f64> {
            record[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| LabError::format(path, format!("line {line}: {} is not a number", HEADER[i])))
        };
        let id = record[0].to_string();
        let bp = Breakpoint {
            tokens: num(1)?,
            dreamsim: num(2)?,
            nima_mu: num(3)?,
        };
        if bp.tokens < 0.0 || bp.dreamsim < 0.0 {
            return Err(LabError::format(
                path,
                format!("line {line}: tokens and dreamsim must be non-negative"),
            ));
        }
        if let Some((prev_id, prev_tokens)) = &last {
            let sorted = (prev_id.as_str(), *prev_tokens) < (id.as_str(), bp.tokens);
            if !sorted {
                return Err(LabError::format(
                    path,
                    format!("line {line}: rows must be sorted by (image_id, tokens)"),
                ));
            }
        }
        table
            .push(&id, bp)
            .map_err(|e| LabError::format(path, format!("line {line}: {e}")))?;
        last = Some((id, bp.tokens));
    }
    Ok(table)
}

pub fn load_score_table(path: impl AsRef<Path>) -> Result<ScoreTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    parse_score_table(&text, path)
}

/// Shortest round-trip formatting, so write-then-load is exact.
pub fn render_score_table(table: &ScoreTable) -> String {
    let mut out = HEADER.join(",");
    out.push('\n');
    for (id, bp) in table.rows() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            csv_field(id),
            bp.tokens,
            bp.dreamsim,
            bp.nima_mu
        ));
    }
    out
}

pub fn save_score_table(table: &ScoreTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, render_score_table(table)).map_err(|e| LabError::io(path, e))
}

/// Quotes a field when CSV requires it.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
