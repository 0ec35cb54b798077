//! Text format for lighting coefficients.
//!
//! One line per color channel, nine whitespace-separated coefficients per
//! line, printed with Rust's shortest round-trip float formatting so values
//! survive a write/read cycle exactly. `#` starts a comment.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::shading::{Lighting, SH_COEFFS};

/// Writes lighting as one row of nine coefficients per channel.
pub fn write_lighting(path: &Path, lighting: &Lighting) -> Result<()> {
    let mut text = String::new();
    for c in 0..lighting.channels() {
        let row: Vec<String> = lighting.row(c).iter().map(|v| format!("{v}")).collect();
        text.push_str(&row.join(" "));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads lighting rows, reporting the 1-based line number of anything that
/// fails to parse.
pub fn read_lighting(path: &Path) -> Result<Lighting> {
    let name = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::io(name.as_str(), e))?;
    let mut rows = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != SH_COEFFS {
            return Err(Error::parse(
                name.as_str(),
                line_no,
                format!("expected {SH_COEFFS} coefficients, got {}", fields.len()),
            ));
        }
        let mut row = [0.0; SH_COEFFS];
        for (slot, field) in row.iter_mut().zip(&fields) {
            *slot = field.parse().map_err(|_| {
                Error::parse(
                    name.as_str(),
                    line_no,
                    format!("expected a number, got {field:?}"),
                )
            })?;
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::parse(name.as_str(), 1, "no lighting rows found"));
    }
    Lighting::new(rows)
}
