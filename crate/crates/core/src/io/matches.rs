//! Text format for sparse cross-view pixel correspondences.
//!
//! One match per line: `i x_i y_i j x_j y_j`, where `i` and `j` are 0-based
//! view indices and the pixel coordinates are 0-based column and row.
//! Anything after `#` is a comment; blank lines are skipped.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::multiview::{CorrespondenceSet, Match};

/// Writes matches in the one-per-line text format.
pub fn write_matches(path: &Path, matches: &CorrespondenceSet) -> Result<()> {
    let mut text = String::from("# view_i x_i y_i view_j x_j y_j\n");
    for m in matches.matches() {
        text.push_str(&format!(
            "{} {} {} {} {} {}\n",
            m.view_i, m.pixel_i.0, m.pixel_i.1, m.view_j, m.pixel_j.0, m.pixel_j.1
        ));
    }
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads matches from the text format, reporting the 1-based line number of
/// anything that fails to parse.
pub fn read_matches(path: &Path) -> Result<CorrespondenceSet> {
    let name = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::io(name.as_str(), e))?;
    let mut matches = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(Error::parse(
                name.as_str(),
                line_no,
                format!("expected 6 fields, got {}", fields.len()),
            ));
        }
        let mut parsed = [0u32; 6];
        for (slot, field) in parsed.iter_mut().zip(&fields) {
            *slot = field.parse().map_err(|_| {
                Error::parse(
                    name.as_str(),
                    line_no,
                    format!("expected a non-negative integer, got {field:?}"),
                )
            })?;
        }
        matches.push(Match {
            view_i: parsed[0] as usize,
            pixel_i: (parsed[1], parsed[2]),
            view_j: parsed[3] as usize,
            pixel_j: (parsed[4], parsed[5]),
        });
    }
    CorrespondenceSet::new(matches)
}
