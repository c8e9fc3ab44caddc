use crate::cutoff::CutoffShape;

use super::trajectory::{Kinematics, Trajectory};

/// The set of tracked vehicles on one road.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Fleet {
    trajectories: Vec<Trajectory>,
    max_speed: f64,
}

/// A tracked vehicle's state at one instant; `index` refers to the fleet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub index: usize,
    pub position: f64,
    pub speed: f64,
    pub acceleration: f64,
}

/// The vehicles active at one instant, in fleet order.
#[derive(Debug, Clone, Default)]
pub struct FleetSnapshot {
    pub vehicles: Vec<VehicleState>,
}

impl Fleet {
    pub fn new(trajectories: Vec<Trajectory>) -> Self {
        let max_speed = trajectories.iter().map(Trajectory::max_speed).fold(0.0, f64::max);
        Self {
            trajectories,
            max_speed,
        }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Supremum of tracked speeds over the whole record (km/h).
    pub fn max_speed(&self) -> f64 {
        self.max_speed
    }

    /// Sub-fleet keeping the trajectories whose position in the fleet
    /// satisfies `keep`.
    pub fn select(&self, mut keep: impl FnMut(usize) -> bool) -> Fleet {
        Fleet::new(
            self.trajectories
                .iter()
                .enumerate()
                .filter(|(i, _)| keep(*i))
                .map(|(_, t)| t.clone())
                .collect(),
        )
    }

    /// Trajectories recorded on one road.
    pub fn on_road(&self, road_id: u32) -> Fleet {
        Fleet::new(
            self.trajectories
                .iter()
                .filter(|t| t.road_id == road_id)
                .cloned()
                .collect(),
        )
    }

    pub fn snapshot(&self, t: f64) -> FleetSnapshot {
        let vehicles = self
            .trajectories
            .iter()
            .enumerate()
            .filter_map(|(index, tr)| {
                tr.interpolate(t).map(|Kinematics { position, speed, acceleration }| VehicleState {
                    index,
                    position,
                    speed,
                    acceleration,
                })
            })
            .collect();
        FleetSnapshot { vehicles }
    }

    /// Index of the active vehicle closest to `x` at time `t`; ties go to
    /// the lowest index.
    pub fn closest_vehicle(&self, x: f64, t: f64) -> Option<usize> {
        self.snapshot(t).closest(x).map(|v| v.index)
    }

    /// Number of active vehicles whose cutoff is positive at `x`.
    pub fn coverage_count(&self, x: f64, t: f64, shape: &CutoffShape) -> usize {
        self.snapshot(t).covering(x, shape).count()
    }
}

impl FleetSnapshot {
    pub fn is_empty(&self) -> bool {
        self.vehicles.is_empty()
    }

    pub fn closest(&self, x: f64) -> Option<&VehicleState> {
        let mut best: Option<&VehicleState> = None;
        for v in &self.vehicles {
            match best {
                Some(b) if (x - v.position).abs() >= (x - b.position).abs() => {}
                _ => best = Some(v),
            }
        }
        best
    }

    pub fn covering<'a>(&'a self, x: f64, shape: &'a CutoffShape) -> impl Iterator<Item = &'a VehicleState> + 'a {
        self.vehicles
            .iter()
            .filter(move |v| shape.cutoff(x - v.position) > 0.0)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::lagrangian::TrajectorySample;

    fn parked(id: &str, x: f64) -> Trajectory {
        Trajectory::new(
            id,
            1,
            vec![
                TrajectorySample { t: 0.0, x, v: Some(0.0) },
                TrajectorySample { t: 1.0, x, v: Some(0.0) },
            ],
        )
        .unwrap()
    }

    fn fleet_at(positions: &[f64]) -> Fleet {
        Fleet::new(
            positions
                .iter()
                .enumerate()
                .map(|(i, &x)| parked(&i.to_string(), x))
                .collect(),
        )
    }

    #[test]
    fn closest_examples() {
        assert_eq!(fleet_at(&[2.0]).closest_vehicle(3.0, 0.5), Some(0));
        assert_eq!(fleet_at(&[1.0, 5.0]).closest_vehicle(2.9, 0.5), Some(0));
        assert_eq!(fleet_at(&[1.0, 3.0]).closest_vehicle(2.0, 0.5), Some(0));
        assert_eq!(fleet_at(&[3.0, 1.0]).closest_vehicle(2.0, 0.5), Some(0));
        assert_eq!(Fleet::empty().closest_vehicle(2.0, 0.5), None);
        // inactive at t = 2
        assert_eq!(fleet_at(&[1.0]).closest_vehicle(1.0, 2.0), None);
    }

    #[test]
    fn coverage_examples() {
        let shape = CutoffShape::new(0.2, 0.6).unwrap();
        assert_eq!(Fleet::empty().coverage_count(1.0, 0.0, &shape), 0);
        assert_eq!(fleet_at(&[1.3]).coverage_count(1.0, 0.0, &shape), 1);
        assert_eq!(fleet_at(&[1.0, 1.001, 1.002]).coverage_count(1.0, 0.0, &shape), 3);
        assert_eq!(fleet_at(&[1.6]).coverage_count(1.0, 0.0, &shape), 0);
    }

    proptest! {
        #[test]
        fn closest_matches_linear_scan(
            positions in proptest::collection::vec(0.0f64..10.0, 1..12),
            x in -1.0f64..11.0,
        ) {
            let fleet = fleet_at(&positions);
            let got = fleet.closest_vehicle(x, 0.5).unwrap();
            let best = positions.iter().map(|p| (x - p).abs()).fold(f64::INFINITY, f64::min);
            prop_assert_eq!((x - positions[got]).abs(), best);
            let first = positions.iter().position(|p| (x - p).abs() == best).unwrap();
            prop_assert_eq!(got, first);
        }

        #[test]
        fn coverage_iff_closest_inside_support(
            positions in proptest::collection::vec(0.0f64..10.0, 1..12),
            x in -1.0f64..11.0,
        ) {
            let shape = CutoffShape::new(0.2, 0.6).unwrap();
            let fleet = fleet_at(&positions);
            let k = fleet.closest_vehicle(x, 0.5).unwrap();
            let covered = fleet.coverage_count(x, 0.5, &shape) >= 1;
            prop_assert_eq!(covered, (x - positions[k]).abs() < shape.big_l);
        }
    }
}
