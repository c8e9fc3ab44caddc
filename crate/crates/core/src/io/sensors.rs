use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{parse_error, read_text, rows, write_text};
use crate::error::{Error, Result};
use crate::network::{SensorRecord, SensorSeries, SensorSet};

pub const SENSOR_HEADER: [&str; 4] = ["road_id", "minute", "flux_veh_per_h", "speed_kmh"];

/// Parse per-minute sensor rows into one series per road.
pub fn parse_sensors(text: &str, path: &Path) -> Result<SensorSet> {
    let mut set = SensorSet::new();
    if text.trim().is_empty() {
        return Ok(set);
    }
    let mut by_road: BTreeMap<u32, Vec<SensorRecord>> = BTreeMap::new();
    for row in rows(text, path, &SENSOR_HEADER, 4)? {
        if row.fields.len() != 4 {
            return Err(parse_error(path, row.line, format!("expected 4 columns, found {}", row.fields.len())));
        }
        let road: u32 = row.parse(0, "road_id", path)?;
        let minute: u32 = row.parse(1, "minute", path)?;
        let flux = row.finite(2, "flux_veh_per_h", path)?;
        let speed = row.finite(3, "speed_kmh", path)?;
        by_road.entry(road).or_default().push(SensorRecord { minute, flux, speed });
    }
    for (road, records) in by_road {
        let series = SensorSeries::new(road, records).map_err(|e| match e {
            Error::Config(m) => parse_error(path, 0, m),
            other => other,
        })?;
        set.insert(road, series);
    }
    Ok(set)
}

pub fn load_sensors(path: &Path) -> Result<SensorSet> {
    parse_sensors(&read_text(path)?, path)
}

pub fn write_sensors(set: &SensorSet, path: &Path) -> Result<()> {
    let mut out = SENSOR_HEADER.join(",");
    out.push('\n');
    for (road, series) in set {
        for r in series.records() {
            let _ = writeln!(out, "{road},{},{},{}", r.minute, r.flux, r.speed);
        }
    }
    write_text(path, &out)
}
