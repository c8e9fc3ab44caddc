//! Road networks of second-order roads joined by diverge and merge
//! junctions.
//!
//! Junctions have no length. A diverge splits the demand of its incoming
//! road with fraction `alpha` towards its main branch; each branch ends on
//! a road or on one input of a merge. A merge joins two inputs (a road or
//! a diverge branch) into one road with priority `beta` for its main
//! input. Roads without an upstream junction are fed by sensor data, and
//! roads without a downstream junction discharge freely.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::diagram::CgarzDiagram;
use crate::error::{Error, Result};
use crate::grid::SpatialGrid;
use crate::gsom::{sensor_boundary, GsomConfig, GsomSolver, MacroState2};
use crate::lagrangian::Fleet;
use crate::lwr::{check_cfl, PreparedStep};

/// Split of a diverge demand, with both branches throttled together
/// (first in, first out).
///
/// Returns `(q_main, q_side)` with `q_main : q_side = alpha : 1 - alpha`.
pub fn diverge_fluxes(s_in: f64, r_main: f64, r_side: f64, alpha: f64) -> (f64, f64) {
    let d_main = alpha * s_in;
    let d_side = (1.0 - alpha) * s_in;
    let mut scale: f64 = 1.0;
    if d_main > 0.0 {
        scale = scale.min(r_main / d_main);
    }
    if d_side > 0.0 {
        scale = scale.min(r_side / d_side);
    }
    let scale = scale.max(0.0);
    (d_main * scale, d_side * scale)
}

fn median3(a: f64, b: f64, c: f64) -> f64 {
    a.max(b).min(a.min(b).max(c))
}

/// Priority merge. Demands that fit pass through; otherwise the main
/// input gets `median{S_main, R - S_side, beta R}` and the side input the
/// rest of the supply.
pub fn merge_fluxes(s_main: f64, s_side: f64, r_out: f64, beta: f64) -> (f64, f64) {
    if s_main + s_side <= r_out {
        return (s_main, s_side);
    }
    let q_main = median3(s_main, r_out - s_side, beta * r_out).clamp(0.0, s_main);
    let q_side = (r_out - q_main).clamp(0.0, s_side);
    (q_main, q_side)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadSpec {
    pub id: u32,
    /// km.
    pub length: f64,
}

/// Where a diverge branch ends.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchTarget {
    Road(u32),
    MergeMain(String),
    MergeSide(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergeJunction {
    pub id: String,
    pub in_road: u32,
    pub out_main: BranchTarget,
    pub out_side: BranchTarget,
    pub alpha: f64,
}

/// A merge input fed directly by a road is named here; an input left as
/// `None` must be the target of a diverge branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeJunction {
    pub id: String,
    #[serde(default)]
    pub in_main: Option<u32>,
    #[serde(default)]
    pub in_side: Option<u32>,
    pub out_road: u32,
    pub beta: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub roads: Vec<RoadSpec>,
    #[serde(default)]
    pub diverges: Vec<DivergeJunction>,
    #[serde(default)]
    pub merges: Vec<MergeJunction>,
}

/// The six-road motorway stretch with three diverges and three merges.
/// Road lengths are inputs.
pub fn motorway_topology(lengths: [f64; 6]) -> NetworkSpec {
    let roads = (1..=6)
        .map(|id| RoadSpec {
            id,
            length: lengths[id as usize - 1],
        })
        .collect();
    let d = |id: &str, in_road, out_main, out_side, alpha| DivergeJunction {
        id: id.into(),
        in_road,
        out_main,
        out_side,
        alpha,
    };
    let m = |id: &str, out_road, beta| MergeJunction {
        id: id.into(),
        in_main: None,
        in_side: None,
        out_road,
        beta,
    };
    use BranchTarget::{MergeMain, MergeSide};
    NetworkSpec {
        roads,
        diverges: vec![
            d("D1", 1, MergeMain("M1".into()), MergeSide("M3".into()), 0.78),
            d("D2", 3, MergeMain("M2".into()), MergeMain("M3".into()), 0.78),
            d("D3", 5, MergeSide("M2".into()), MergeSide("M1".into()), 0.48),
        ],
        merges: vec![m("M1", 2, 0.2), m("M2", 4, 0.5), m("M3", 6, 0.2)],
    }
}

/// One minute of loop-detector data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorRecord {
    pub minute: u32,
    /// veh/h.
    pub flux: f64,
    /// km/h.
    pub speed: f64,
}

/// Contiguous per-minute records for the upstream end of one road.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorSeries {
    pub road_id: u32,
    records: Vec<SensorRecord>,
}

impl SensorSeries {
    /// Records must cover contiguous minutes with non-negative values.
    pub fn new(road_id: u32, mut records: Vec<SensorRecord>) -> Result<Self> {
        records.sort_by_key(|r| r.minute);
        let mut missing = Vec::new();
        for w in records.windows(2) {
            if w[1].minute == w[0].minute {
                return Err(Error::config(format!(
                    "sensor road {road_id}: minute {} appears twice",
                    w[0].minute
                )));
            }
            missing.extend(w[0].minute + 1..w[1].minute);
        }
        if !missing.is_empty() {
            return Err(Error::config(format!(
                "sensor road {road_id}: missing minutes {missing:?}"
            )));
        }
        if let Some(r) = records.iter().find(|r| !(r.flux >= 0.0 && r.speed >= 0.0)) {
            return Err(Error::config(format!(
                "sensor road {road_id}: negative or invalid datum at minute {}",
                r.minute
            )));
        }
        Ok(Self { road_id, records })
    }

    /// Same datum for `minutes` minutes starting at minute 0.
    pub fn constant(road_id: u32, flux: f64, speed: f64, minutes: u32) -> Result<Self> {
        Self::new(
            road_id,
            (0..minutes).map(|minute| SensorRecord { minute, flux, speed }).collect(),
        )
    }

    pub fn records(&self) -> &[SensorRecord] {
        &self.records
    }

    /// Datum of minute `floor(60 t)`, if recorded.
    pub fn at(&self, t: f64) -> Option<SensorRecord> {
        let first = self.records.first()?.minute as f64;
        let minute = (60.0 * t + 1e-9).floor();
        let k = minute - first;
        if k < 0.0 || k >= self.records.len() as f64 {
            return None;
        }
        Some(self.records[k as usize])
    }
}

/// Per-road fleets; roads without an entry have no tracked vehicles.
pub type RoadFleets = BTreeMap<u32, Fleet>;

/// Sensor series by road.
pub type SensorSet = BTreeMap<u32, SensorSeries>;

#[derive(Debug, Clone)]
pub struct Road {
    pub id: u32,
    pub length: f64,
    pub solver: GsomSolver,
    pub state: MacroState2,
}

impl Road {
    pub fn grid(&self) -> &SpatialGrid {
        &self.solver.grid
    }

    pub fn mass(&self) -> f64 {
        self.state.mass(self.grid().dx())
    }
}

/// Boundary fluxes of one network step (veh/h).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepReport {
    /// Sensor inflow summed over source roads.
    pub inflow: f64,
    /// Free outflow summed over sink roads.
    pub outflow: f64,
    /// `(q_main, q_side)` per diverge, in declaration order.
    pub diverge_flows: Vec<(f64, f64)>,
    /// `(q_main, q_side)` per merge, in declaration order.
    pub merge_flows: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Feeder {
    Road(usize),
    Branch { diverge: usize, main: bool },
}

#[derive(Debug, Clone)]
pub struct Network {
    pub roads: Vec<Road>,
    pub diverges: Vec<DivergeJunction>,
    pub merges: Vec<MergeJunction>,
    merge_feeders: Vec<[Feeder; 2]>,
    /// Road index -> junction fed by its downstream end.
    has_downstream: Vec<bool>,
    has_upstream: Vec<bool>,
    warned: BTreeSet<u32>,
}

impl Network {
    /// Empty network with `w` at the middle of its range on every road.
    pub fn new(spec: &NetworkSpec, diagram: CgarzDiagram, config: GsomConfig, dx: f64) -> Result<Self> {
        let mut ids = BTreeSet::new();
        let mut roads = Vec::new();
        for r in &spec.roads {
            if !ids.insert(r.id) {
                return Err(Error::config(format!("network: road {} declared twice", r.id)));
            }
            if !(r.length > 0.0) {
                return Err(Error::config(format!("network: road {} has length {}", r.id, r.length)));
            }
            let grid = SpatialGrid::with_spacing(0.0, r.length, dx)?;
            let n = grid.n_cells();
            roads.push(Road {
                id: r.id,
                length: r.length,
                solver: GsomSolver::new(diagram, grid, config)?,
                state: MacroState2::uniform(n, 0.0, diagram.w_mid()),
            });
        }
        let road_index = |id: u32| -> Result<usize> {
            roads
                .iter()
                .position(|r| r.id == id)
                .ok_or_else(|| Error::config(format!("network: unknown road {id}")))
        };
        let merge_index = |id: &str| -> Result<usize> {
            spec.merges
                .iter()
                .position(|m| m.id == id)
                .ok_or_else(|| Error::config(format!("network: unknown merge {id:?}")))
        };
        let mut has_downstream = vec![false; roads.len()];
        let mut has_upstream = vec![false; roads.len()];
        let mut claim_down = |i: usize, what: &str| -> Result<()> {
            if std::mem::replace(&mut has_downstream[i], true) {
                return Err(Error::config(format!("network: road {} feeds more than one junction ({what})", spec.roads[i].id)));
            }
            Ok(())
        };
        let mut feeders: Vec<[Option<Feeder>; 2]> = vec![[None, None]; spec.merges.len()];
        for m in &spec.merges {
            if !(0.0..=1.0).contains(&m.beta) {
                return Err(Error::config(format!("merge {}: beta {} outside [0, 1]", m.id, m.beta)));
            }
        }
        for (mi, m) in spec.merges.iter().enumerate() {
            for (slot, input) in [m.in_main, m.in_side].into_iter().enumerate() {
                if let Some(id) = input {
                    let i = road_index(id)?;
                    claim_down(i, &m.id)?;
                    feeders[mi][slot] = Some(Feeder::Road(i));
                }
            }
        }
        for (di, d) in spec.diverges.iter().enumerate() {
            if !(0.0..=1.0).contains(&d.alpha) {
                return Err(Error::config(format!("diverge {}: alpha {} outside [0, 1]", d.id, d.alpha)));
            }
            claim_down(road_index(d.in_road)?, &d.id)?;
            for (target, main) in [(&d.out_main, true), (&d.out_side, false)] {
                let feeder = Feeder::Branch { diverge: di, main };
                match target {
                    BranchTarget::Road(id) => {
                        let i = road_index(*id)?;
                        if std::mem::replace(&mut has_upstream[i], true) {
                            return Err(Error::config(format!("network: road {id} is fed twice")));
                        }
                    }
                    BranchTarget::MergeMain(m) | BranchTarget::MergeSide(m) => {
                        let mi = merge_index(m)?;
                        let slot = usize::from(matches!(target, BranchTarget::MergeSide(_)));
                        if feeders[mi][slot].replace(feeder).is_some() {
                            return Err(Error::config(format!("merge {m}: input fed twice")));
                        }
                    }
                }
            }
        }
        for m in &spec.merges {
            let i = road_index(m.out_road)?;
            if std::mem::replace(&mut has_upstream[i], true) {
                return Err(Error::config(format!("network: road {} is fed twice", m.out_road)));
            }
        }
        let merge_feeders = feeders
            .into_iter()
            .zip(&spec.merges)
            .map(|(f, m)| match f {
                [Some(a), Some(b)] => Ok([a, b]),
                _ => Err(Error::config(format!("merge {}: an input has no feeder", m.id))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            roads,
            diverges: spec.diverges.clone(),
            merges: spec.merges.clone(),
            merge_feeders,
            has_downstream,
            has_upstream,
            warned: BTreeSet::new(),
        })
    }

    pub fn road(&self, id: u32) -> Option<&Road> {
        self.roads.iter().find(|r| r.id == id)
    }

    pub fn road_mut(&mut self, id: u32) -> Option<&mut Road> {
        self.roads.iter_mut().find(|r| r.id == id)
    }

    /// Total number of vehicles on the network.
    pub fn mass(&self) -> f64 {
        self.roads.iter().map(Road::mass).sum()
    }

    /// Roads fed by sensors (no upstream junction).
    pub fn source_roads(&self) -> Vec<u32> {
        self.roads
            .iter()
            .zip(&self.has_upstream)
            .filter(|(_, &up)| !up)
            .map(|(r, _)| r.id)
            .collect()
    }

    /// Roads discharging freely (no downstream junction).
    pub fn sink_roads(&self) -> Vec<u32> {
        self.roads
            .iter()
            .zip(&self.has_downstream)
            .filter(|(_, &down)| !down)
            .map(|(r, _)| r.id)
            .collect()
    }

    /// Smallest per-road step bound.
    pub fn max_dt(&self, fleets: &RoadFleets) -> f64 {
        let empty = Fleet::empty();
        self.roads
            .iter()
            .map(|r| r.solver.max_dt(fleets.get(&r.id).unwrap_or(&empty)))
            .fold(f64::INFINITY, f64::min)
    }

    /// Advance every road by `dt` from time `t`.
    pub fn step(&mut self, t: f64, fleets: &RoadFleets, sensors: &SensorSet, dt: f64) -> Result<StepReport> {
        check_cfl(dt, self.max_dt(fleets))?;
        let empty = Fleet::empty();
        let preps: Vec<PreparedStep> = self
            .roads
            .iter()
            .map(|r| {
                let fleet = fleets.get(&r.id).unwrap_or(&empty);
                r.solver.prepare(&r.state, &fleet.snapshot(t))
            })
            .collect();
        let n_roads = self.roads.len();
        let last = |i: usize| self.roads[i].state.rho.len() - 1;
        let demand = |i: usize| preps[i].sending[last(i)];
        let supply = |i: usize| preps[i].receiving[0];
        let w_last = |i: usize| self.roads[i].state.w[last(i)];
        let index = |id: u32| self.roads.iter().position(|r| r.id == id).expect("validated");

        // Merge capacities from demands: roads send S, diverge branches
        // their share of the incoming demand.
        let branch_demand = |d: usize, main: bool| {
            let j = &self.diverges[d];
            let s = demand(index(j.in_road));
            if main {
                j.alpha * s
            } else {
                (1.0 - j.alpha) * s
            }
        };
        let feeder_demand = |f: Feeder| match f {
            Feeder::Road(i) => demand(i),
            Feeder::Branch { diverge, main } => branch_demand(diverge, main),
        };
        let caps: Vec<(f64, f64)> = self
            .merges
            .iter()
            .zip(&self.merge_feeders)
            .map(|(m, f)| {
                merge_fluxes(feeder_demand(f[0]), feeder_demand(f[1]), supply(index(m.out_road)), m.beta)
            })
            .collect();
        let merge_pos = |id: &str| self.merges.iter().position(|m| m.id == id).expect("validated");

        let mut inflow = vec![0.0; n_roads];
        let mut outflow = vec![0.0; n_roads];
        let mut ghost_w: Vec<Option<f64>> = vec![None; n_roads];
        let mut diverge_flows = Vec::with_capacity(self.diverges.len());
        for d in &self.diverges {
            let i = index(d.in_road);
            let cap = |target: &BranchTarget| match target {
                BranchTarget::Road(id) => supply(index(*id)),
                BranchTarget::MergeMain(m) => caps[merge_pos(m)].0,
                BranchTarget::MergeSide(m) => caps[merge_pos(m)].1,
            };
            let (q_main, q_side) = diverge_fluxes(demand(i), cap(&d.out_main), cap(&d.out_side), d.alpha);
            outflow[i] = q_main + q_side;
            for (target, q) in [(&d.out_main, q_main), (&d.out_side, q_side)] {
                if let BranchTarget::Road(id) = target {
                    let k = index(*id);
                    inflow[k] = q;
                    ghost_w[k] = Some(w_last(i));
                }
            }
            diverge_flows.push((q_main, q_side));
        }

        let mut merge_flows = Vec::with_capacity(self.merges.len());
        for (mi, m) in self.merges.iter().enumerate() {
            let mut q = [0.0; 2];
            let mut w_up = [0.0; 2];
            for slot in 0..2 {
                let (flow, w) = match self.merge_feeders[mi][slot] {
                    Feeder::Road(i) => {
                        let f = if slot == 0 { caps[mi].0 } else { caps[mi].1 };
                        outflow[i] = f;
                        (f, w_last(i))
                    }
                    Feeder::Branch { diverge, main } => {
                        let (a, b) = diverge_flows[diverge];
                        (if main { a } else { b }, w_last(index(self.diverges[diverge].in_road)))
                    }
                };
                q[slot] = flow;
                w_up[slot] = w;
            }
            let k = index(m.out_road);
            let total = q[0] + q[1];
            inflow[k] = total;
            if total > 0.0 {
                ghost_w[k] = Some((q[0] * w_up[0] + q[1] * w_up[1]) / total);
            }
            merge_flows.push((q[0], q[1]));
        }

        let mut report = StepReport {
            diverge_flows,
            merge_flows,
            ..StepReport::default()
        };
        let mut next = Vec::with_capacity(n_roads);
        for (i, road) in self.roads.iter().enumerate() {
            let prep = &preps[i];
            let w_first = road.state.w[0];
            let (q_in, w_in) = if self.has_upstream[i] {
                (inflow[i], ghost_w[i].unwrap_or(w_first))
            } else {
                match sensors.get(&road.id).and_then(|s| s.at(t)) {
                    Some(rec) => sensor_boundary(&road.solver.diagram, rec.flux, rec.speed, supply(i))?,
                    None => {
                        if sensors.contains_key(&road.id) && self.warned.insert(road.id) {
                            log::warn!("road {}: no sensor datum at t={t} h, using zero inflow", road.id);
                        }
                        (0.0, w_first)
                    }
                }
            };
            let q_out = if self.has_downstream[i] {
                outflow[i]
            } else {
                prep.free_outflow()
            };
            if !self.has_upstream[i] {
                report.inflow += q_in;
            }
            if !self.has_downstream[i] {
                report.outflow += q_out;
            }
            next.push(road.solver.advance(&road.state, prep, q_in, w_in, q_out, dt));
        }
        for (road, state) in self.roads.iter_mut().zip(next) {
            road.state = state;
        }
        Ok(report)
    }

    /// Fill the network by stepping from `t = 0` for `duration` hours with
    /// the given data; the scenario proper continues from `duration`.
    pub fn warm_start(
        &mut self,
        sensors: &SensorSet,
        fleets: &RoadFleets,
        duration: f64,
        dt: f64,
    ) -> Result<usize> {
        if !(duration > 0.0) {
            return Err(Error::config(format!("warm start: duration must be positive, got {duration}")));
        }
        let steps = (duration / dt - 1e-9).ceil() as usize;
        for n in 0..steps {
            self.step(n as f64 * dt, fleets, sensors, dt)?;
        }
        Ok(steps)
    }
}
