use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{parse_error, read_text, write_text};
use crate::error::{Error, Result};
use crate::grid::SpatialGrid;

/// Recorded time series of one cell field.
///
/// On disk: `# key=value` metadata lines, a header `t_h,c0,c1,...`, then
/// one row per recorded step with 17 significant digits.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldDump {
    pub quantity: String,
    pub unit: String,
    /// Free-form grid metadata, written in key order.
    pub meta: BTreeMap<String, String>,
    pub columns: usize,
    /// Recorded times (h).
    pub times: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
}

impl FieldDump {
    pub fn new(quantity: impl Into<String>, unit: impl Into<String>, columns: usize) -> Self {
        Self {
            quantity: quantity.into(),
            unit: unit.into(),
            meta: BTreeMap::new(),
            columns,
            times: Vec::new(),
            rows: Vec::new(),
        }
    }

    /// Dump over a road grid with step `dt` (h), recording every
    /// `record_every`-th step.
    pub fn on_grid(
        quantity: impl Into<String>,
        unit: impl Into<String>,
        grid: &SpatialGrid,
        dt: f64,
        record_every: usize,
    ) -> Self {
        let mut d = Self::new(quantity, unit, grid.n_cells());
        d.set_meta("a_km", grid.a());
        d.set_meta("b_km", grid.b());
        d.set_meta("dx_km", grid.dx());
        d.set_meta("dt_h", dt);
        d.set_meta("record_every", record_every);
        d
    }

    pub fn set_meta(&mut self, key: &str, value: impl std::fmt::Display) {
        self.meta.insert(key.to_string(), value.to_string());
    }

    pub fn push(&mut self, t: f64, row: Vec<f64>) -> Result<()> {
        if row.len() != self.columns {
            return Err(Error::config(format!(
                "dump {}: row of {} values for {} columns",
                self.quantity,
                row.len(),
                self.columns
            )));
        }
        self.times.push(t);
        self.rows.push(row);
        Ok(())
    }

    pub fn file_name(&self) -> String {
        format!("{}.csv", self.quantity)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# quantity={}", self.quantity);
        let _ = writeln!(out, "# unit={}", self.unit);
        for (k, v) in &self.meta {
            let _ = writeln!(out, "# {k}={v}");
        }
        out.push_str("t_h");
        for j in 0..self.columns {
            let _ = write!(out, ",c{j}");
        }
        out.push('\n');
        for (t, row) in self.times.iter().zip(&self.rows) {
            let _ = write!(out, "{t:.16e}");
            for v in row {
                let _ = write!(out, ",{v:.16e}");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut quantity = None;
        let mut unit = None;
        let mut meta = BTreeMap::new();
        let mut columns = None;
        let mut times = Vec::new();
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            if let Some(rest) = line.strip_prefix('#') {
                let (k, v) = rest
                    .trim()
                    .split_once('=')
                    .ok_or_else(|| parse_error(path, n, "metadata line without '='"))?;
                match k {
                    "quantity" => quantity = Some(v.to_string()),
                    "unit" => unit = Some(v.to_string()),
                    _ => {
                        meta.insert(k.to_string(), v.to_string());
                    }
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            match columns {
                None => {
                    if fields[0] != "t_h" {
                        return Err(parse_error(path, n, "expected header starting with t_h"));
                    }
                    columns = Some(fields.len() - 1);
                }
                Some(c) => {
                    if fields.len() != c + 1 {
                        return Err(parse_error(path, n, format!("expected {} values, found {}", c + 1, fields.len())));
                    }
                    let values = fields
                        .iter()
                        .map(|f| f.trim().parse::<f64>())
                        .collect::<std::result::Result<Vec<f64>, _>>()
                        .map_err(|e| parse_error(path, n, e.to_string()))?;
                    times.push(values[0]);
                    rows.push(values[1..].to_vec());
                }
            }
        }
        let quantity = quantity.ok_or_else(|| parse_error(path, 0, "missing quantity"))?;
        Ok(Self {
            quantity,
            unit: unit.unwrap_or_default(),
            meta,
            columns: columns.ok_or_else(|| parse_error(path, 0, "missing header row"))?,
            times,
            rows,
        })
    }

    /// Metadata value parsed as `f64`.
    pub fn meta_f64(&self, key: &str) -> Option<f64> {
        self.meta.get(key)?.parse().ok()
    }
}

pub fn write_field(dump: &FieldDump, path: &Path) -> Result<()> {
    write_text(path, &dump.to_text())
}

pub fn read_field(path: &Path) -> Result<FieldDump> {
    FieldDump::parse(&read_text(path)?, path)
}

/// Write each dump as `<quantity>.csv` under `dir`.
pub fn write_fields(dumps: &[FieldDump], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    dumps
        .iter()
        .map(|d| {
            let path = dir.join(d.file_name());
            write_field(d, &path)?;
            Ok(path)
        })
        .collect()
}
