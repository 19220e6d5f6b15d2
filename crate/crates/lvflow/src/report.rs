//! Data emission: CSV tables and JSON summaries.
//!
//! Data files are plot-ready and deterministic: CSV with RFC 4180
//! quoting and a header row naming each column, JSON with the key order
//! fixed by struct declaration, floating point written with enough
//! digits to round-trip.  No file contains a timestamp; provenance lives
//! in the manifest.

use crate::{LvError, Result};

use serde::Serialize;
use std::path::Path;

/// Formats a float so it parses back to the same bits.
pub fn fmt_f64(v: f64) -> String {
    let mut out = format!("{v}");
    if out.parse::<f64>() != Ok(v) {
        out = format!("{v:.17e}");
    }
    out
}

/// Writes one CSV table with a header row.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| LvError::Io(format!("{}: {e}", path.display())))?;
    writer
        .write_record(header)
        .map_err(|e| LvError::Io(e.to_string()))?;
    for row in rows {
        if row.len() != header.len() {
            return Err(LvError::Io(format!(
                "row with {got} fields under a {want}-column header",
                got = row.len(),
                want = header.len()
            )));
        }
        writer.write_record(row).map_err(|e| LvError::Io(e.to_string()))?;
    }
    writer.flush().map_err(|e| LvError::Io(e.to_string()))
}

/// Writes a JSON summary with stable key order and a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| LvError::Io(e.to_string()))?;
    std::fs::write(path, text + "\n")
        .map_err(|e| LvError::Io(format!("{}: {e}", path.display())))
}

/// Flattens every `*.json` summary in `dir` (except the manifest) into
/// `(file stem, key path, value)` rows, sorted for stable output.
pub fn aggregate_json_dir(dir: &Path) -> Result<Vec<(String, String, String)>> {
    let mut rows = Vec::new();
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| LvError::Io(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.extension().is_some_and(|x| x == "json")
                && p.file_name().is_some_and(|f| f != "manifest.json")
        })
        .collect();
    entries.sort();
    for path in entries {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let text = std::fs::read_to_string(&path)
            .map_err(|e| LvError::Io(format!("{}: {e}", path.display())))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| LvError::Io(e.to_string()))?;
        flatten(&stem, "", &value, &mut rows);
    }
    Ok(rows)
}

fn flatten(
    stem: &str,
    prefix: &str,
    value: &serde_json::Value,
    rows: &mut Vec<(String, String, String)>,
) {
    match value {
        serde_json::Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(stem, &key, v, rows);
            }
        }
        serde_json::Value::Array(items) => {
            // Arrays of scalars flatten by index; arrays of objects are
            // usually per-replica detail and stay out of the aggregate.
            for (i, v) in items.iter().enumerate() {
                if v.is_object() || v.is_array() {
                    return;
                }
                flatten(stem, &format!("{prefix}[{i}]"), v, rows);
            }
        }
        scalar => {
            rows.push((stem.to_string(), prefix.to_string(), scalar.to_string()));
        }
    }
}
