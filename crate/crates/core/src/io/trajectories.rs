use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{parse_error, read_text, rows, write_text};
use crate::error::Result;
use crate::lagrangian::{Fleet, Trajectory, TrajectorySample};
use crate::units::SECONDS_PER_HOUR;

pub const TRAJECTORY_HEADER: [&str; 5] = ["vehicle_id", "road_id", "t_seconds", "x_km", "v_kmh"];

/// A vehicle dropped while loading, with the reason.
#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub vehicle_id: String,
    pub road_id: u32,
    pub reason: String,
}

/// Parse trajectory rows. Samples are grouped by vehicle and road and
/// sorted by time. Vehicles whose samples go backwards or repeat a time
/// are dropped and reported; malformed rows are errors.
pub fn parse_trajectories(text: &str, path: &Path) -> Result<(Fleet, Vec<Rejection>)> {
    if text.trim().is_empty() {
        return Ok((Fleet::empty(), Vec::new()));
    }
    let mut groups: BTreeMap<(String, u32), Vec<TrajectorySample>> = BTreeMap::new();
    for row in rows(text, path, &TRAJECTORY_HEADER, 4)? {
        let line = row.line;
        if row.fields.len() < 4 || row.fields.len() > 5 {
            return Err(parse_error(path, line, format!("expected 4 or 5 columns, found {}", row.fields.len())));
        }
        let id = row.fields[0].to_string();
        if id.is_empty() {
            return Err(parse_error(path, line, "empty vehicle_id"));
        }
        let road: u32 = row.parse(1, "road_id", path)?;
        let t_s = row.finite(2, "t_seconds", path)?;
        let x = row.finite(3, "x_km", path)?;
        let v = match row.fields.get(4).filter(|s| !s.is_empty()) {
            Some(_) => Some(row.finite(4, "v_kmh", path)?),
            None => None,
        };
        groups.entry((id, road)).or_default().push(TrajectorySample {
            t: t_s / SECONDS_PER_HOUR,
            x,
            v,
        });
    }
    let mut trajectories = Vec::with_capacity(groups.len());
    let mut rejected = Vec::new();
    for ((id, road), mut samples) in groups {
        samples.sort_by(|a, b| a.t.total_cmp(&b.t));
        match Trajectory::new(id.clone(), road, samples) {
            Ok(t) => trajectories.push(t),
            Err(e) => {
                log::warn!("{}: dropping vehicle {id} on road {road}: {e}", path.display());
                rejected.push(Rejection {
                    vehicle_id: id,
                    road_id: road,
                    reason: e.to_string(),
                });
            }
        }
    }
    Ok((Fleet::new(trajectories), rejected))
}

/// Load a trajectory file; dropped vehicles are logged.
pub fn load_trajectories(path: &Path) -> Result<Fleet> {
    let text = read_text(path)?;
    parse_trajectories(&text, path).map(|(fleet, _)| fleet)
}

/// Write a fleet in the format read by [`load_trajectories`]. The speed
/// column is left empty for samples without a recorded speed.
pub fn write_trajectories(fleet: &Fleet, path: &Path) -> Result<()> {
    let mut out = TRAJECTORY_HEADER.join(",");
    out.push('\n');
    for traj in fleet.trajectories() {
        for s in traj.samples() {
            let _ = write!(out, "{},{},{},{},", traj.vehicle_id, traj.road_id, s.t * SECONDS_PER_HOUR, s.x);
            if let Some(v) = s.v {
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
    }
    write_text(path, &out)
}
