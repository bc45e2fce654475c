//! Loading univariate integer series from text files.

use std::fs;
use std::path::Path;

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    pub values: Vec<i64>,
    pub source_path: String,
    /// Header text if the file had one, otherwise the file stem.
    pub label: String,
}

/// Reads one integer per line. A non-numeric first line is taken as a
/// header; a single column separated by `,` or `;` is accepted. Decimals
/// are rejected rather than rounded.
pub fn load(path: &Path) -> Result<DataSet, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let (values, header) = parse(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if let Some(h) = &header {
        eprintln!("note: skipping header line '{h}' in {}", path.display());
    }
    Ok(DataSet { values, source_path: path.display().to_string(), label: header.unwrap_or(stem) })
}

fn field(line: &str) -> Result<&str, String> {
    let fields: Vec<&str> = line.split([',', ';']).map(str::trim).filter(|f| !f.is_empty()).collect();
    match fields.as_slice() {
        [single] => Ok(single),
        [] => Err("empty record".into()),
        _ => Err(format!("expected a single column, found {}", fields.len())),
    }
}

/// Returns the values and the skipped header, if any.
pub fn parse(text: &str) -> Result<(Vec<i64>, Option<String>), String> {
    let mut values = Vec::new();
    let mut header = None;
    let mut first = true;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim().trim_start_matches('\u{feff}');
        if line.is_empty() {
            continue;
        }
        let f = field(line).map_err(|e| format!("line {}: {e}", lineno + 1))?;
        match f.parse::<i64>() {
            Ok(v) => values.push(v),
            Err(_) if first && f.parse::<f64>().is_err() => header = Some(f.to_string()),
            Err(_) => return Err(format!("line {}: '{f}' is not an integer", lineno + 1)),
        }
        first = false;
    }
    if values.is_empty() {
        return Err("no observations".into());
    }
    Ok((values, header))
}
