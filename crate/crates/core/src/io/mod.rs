//! Comma-separated file formats: trajectories, sensor series and field
//! dumps. Files carry their units in the header.

mod fields;
mod sensors;
mod trajectories;

use std::path::Path;

pub use fields::{read_field, write_field, write_fields, FieldDump};
pub use sensors::{load_sensors, parse_sensors, write_sensors, SENSOR_HEADER};
pub use trajectories::{
    load_trajectories, parse_trajectories, write_trajectories, Rejection, TRAJECTORY_HEADER,
};

use crate::error::{Error, Result};

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// One data row: 1-based line number and trimmed fields.
pub(crate) struct Row<'a> {
    pub line: usize,
    pub fields: Vec<&'a str>,
}

/// Split comma-separated text into rows, skipping blank and `#` lines. The
/// first row is checked against the expected header; trailing optional
/// columns may be absent from it.
pub(crate) fn rows<'a>(text: &'a str, path: &Path, expected: &[&str], required: usize) -> Result<Vec<Row<'a>>> {
    let mut out = Vec::new();
    let mut header_seen = false;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if !header_seen {
            header_seen = true;
            if fields.len() < required || fields.len() > expected.len() || fields[..] != expected[..fields.len()] {
                return Err(parse_error(
                    path,
                    line,
                    format!("expected header {:?}, found {:?}", expected.join(","), fields.join(",")),
                ));
            }
            continue;
        }
        out.push(Row { line, fields });
    }
    Ok(out)
}

impl Row<'_> {
    pub fn parse<T: std::str::FromStr>(&self, index: usize, name: &str, path: &Path) -> Result<T> {
        let raw = self
            .fields
            .get(index)
            .ok_or_else(|| parse_error(path, self.line, format!("missing column {name}")))?;
        raw.parse()
            .map_err(|_| parse_error(path, self.line, format!("column {name}: cannot parse {raw:?}")))
    }

    pub fn finite(&self, index: usize, name: &str, path: &Path) -> Result<f64> {
        let v: f64 = self.parse(index, name, path)?;
        if !v.is_finite() {
            return Err(parse_error(path, self.line, format!("column {name}: {v} is not finite")));
        }
        Ok(v)
    }
}
