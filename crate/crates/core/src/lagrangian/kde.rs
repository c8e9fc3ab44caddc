//! Parzen-Rosenblatt reconstruction of density and speed fields from
//! vehicle positions.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::Fleet;
use crate::error::{Error, Result};
use crate::grid::SpatialGrid;

/// Constant in front of the Gaussian kernel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelNormalization {
    /// `1 / (2 pi h)`. The kernel then integrates to `1 / sqrt(2 pi)`.
    #[default]
    TwoPi,
    /// `1 / (sqrt(2 pi) h)`, a probability density.
    Standard,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KdeConfig {
    /// km.
    pub bandwidth: f64,
    #[serde(default)]
    pub normalization: KernelNormalization,
}

impl KdeConfig {
    pub fn new(bandwidth: f64, normalization: KernelNormalization) -> Result<Self> {
        if !(bandwidth > 0.0) {
            return Err(Error::config(format!("kde: bandwidth must be positive, got {bandwidth}")));
        }
        Ok(Self {
            bandwidth,
            normalization,
        })
    }

    pub fn kernel(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let c = match self.normalization {
            KernelNormalization::TwoPi => 1.0 / (2.0 * PI * h),
            KernelNormalization::Standard => 1.0 / ((2.0 * PI).sqrt() * h),
        };
        c * (-x * x / (2.0 * h * h)).exp()
    }
}

pub fn kde_density_at(positions: &[f64], x: f64, cfg: &KdeConfig) -> f64 {
    positions.iter().map(|p| cfg.kernel(x - p)).sum()
}

/// Kernel-weighted mean speed at `x`. `None` without vehicles.
///
/// Weights are scaled relative to the nearest vehicle, so far from the
/// platoon, where every raw kernel weight underflows, the result tends to
/// the nearest vehicle's speed instead of `0/0`.
pub fn kde_velocity_at(positions: &[f64], speeds: &[f64], x: f64, cfg: &KdeConfig) -> Option<f64> {
    let nearest = positions
        .iter()
        .map(|p| (x - p) * (x - p))
        .fold(f64::INFINITY, f64::min);
    if !nearest.is_finite() {
        return None;
    }
    let two_h2 = 2.0 * cfg.bandwidth * cfg.bandwidth;
    let (mut num, mut den) = (0.0, 0.0);
    for (p, v) in positions.iter().zip(speeds) {
        let k = (-((x - p) * (x - p) - nearest) / two_h2).exp();
        num += k * v;
        den += k;
    }
    Some(num / den)
}

fn active(fleet: &Fleet, t: f64) -> (Vec<f64>, Vec<f64>) {
    fleet
        .snapshot(t)
        .vehicles
        .iter()
        .map(|v| (v.position, v.speed))
        .unzip()
}

/// Density at every cell center of `grid` from the vehicles active at `t`.
pub fn kde_density(fleet: &Fleet, t: f64, cfg: &KdeConfig, grid: &SpatialGrid) -> Vec<f64> {
    let (positions, _) = active(fleet, t);
    grid.centers()
        .into_iter()
        .map(|x| kde_density_at(&positions, x, cfg))
        .collect()
}

/// Speed at every cell center of `grid` from the vehicles active at `t`.
pub fn kde_velocity(fleet: &Fleet, t: f64, cfg: &KdeConfig, grid: &SpatialGrid) -> Result<Vec<f64>> {
    let (positions, speeds) = active(fleet, t);
    if positions.is_empty() {
        return Err(Error::config(format!("kde: no vehicle is active at t={t} h")));
    }
    Ok(grid
        .centers()
        .into_iter()
        .map(|x| kde_velocity_at(&positions, &speeds, x, cfg).unwrap_or_default())
        .collect())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn cfg(norm: KernelNormalization) -> KdeConfig {
        KdeConfig::new(0.1, norm).unwrap()
    }

    #[test]
    fn no_vehicles_gives_zero_density() {
        assert_eq!(kde_density_at(&[], 1.0, &cfg(KernelNormalization::Standard)), 0.0);
    }

    #[test]
    fn single_vehicle_is_symmetric_peak() {
        let c = cfg(KernelNormalization::TwoPi);
        let at = |x| kde_density_at(&[2.0], x, &c);
        assert!(at(2.0) > at(2.05));
        assert!((at(1.9) - at(2.1)).abs() < 1e-14);
        assert!((at(2.0) - 1.0 / (2.0 * PI * 0.1)).abs() < 1e-12);
    }

    #[test]
    fn platoon_interior_is_flat() {
        let c = cfg(KernelNormalization::Standard);
        let positions: Vec<f64> = (0..41).map(|i| 1.0 + 0.05 * i as f64).collect();
        let interior: Vec<f64> = (0..=100)
            .map(|k| 1.5 + k as f64 * 0.01)
            .map(|x| kde_density_at(&positions, x, &c))
            .collect();
        let max = interior.iter().cloned().fold(f64::MIN, f64::max);
        let min = interior.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max / min < 1.05, "{max} {min}");
        // spacing 50 m means 20 veh/km
        assert!((min - 20.0).abs() < 0.1);
    }

    #[test]
    fn mass_matches_vehicle_count() {
        let positions: Vec<f64> = (0..41).map(|i| 1.0 + 0.05 * i as f64).collect();
        let grid = SpatialGrid::new(0.0, 4.0, 4000).unwrap();
        let mass = |norm| {
            let c = cfg(norm);
            grid.centers()
                .iter()
                .map(|&x| kde_density_at(&positions, x, &c))
                .sum::<f64>()
                * grid.dx()
        };
        assert!((mass(KernelNormalization::Standard) - 41.0).abs() < 0.41);
        let two_pi = mass(KernelNormalization::TwoPi);
        assert!((two_pi - 41.0 / (2.0 * PI).sqrt()).abs() < 0.41);
    }

    #[test]
    fn velocity_examples() {
        let c = cfg(KernelNormalization::TwoPi);
        assert_eq!(kde_velocity_at(&[1.0], &[20.0], 3.0, &c), Some(20.0));
        let v = kde_velocity_at(&[1.0, 2.0], &[10.0, 30.0], 1.5, &c).unwrap();
        assert!((v - 20.0).abs() < 1e-12);
        assert_eq!(kde_velocity_at(&[], &[], 1.0, &c), None);
        // weights underflow far away: nearest vehicle wins
        assert_eq!(kde_velocity_at(&[1.0, 2.0], &[10.0, 30.0], 500.0, &c), Some(30.0));
    }

    proptest! {
        #[test]
        fn velocity_is_bounded_by_vehicle_speeds(
            data in proptest::collection::vec((0.0f64..5.0, 0.0f64..100.0), 1..10),
            x in -1.0f64..6.0,
        ) {
            let c = cfg(KernelNormalization::Standard);
            let (p, v): (Vec<f64>, Vec<f64>) = data.into_iter().unzip();
            let got = kde_velocity_at(&p, &v, x, &c).unwrap();
            let lo = v.iter().cloned().fold(f64::MAX, f64::min);
            let hi = v.iter().cloned().fold(f64::MIN, f64::max);
            prop_assert!(got >= lo - 1e-9 && got <= hi + 1e-9);
        }

        #[test]
        fn same_speed_gives_constant_field(
            p in proptest::collection::vec(0.0f64..5.0, 1..10),
            speed in 0.0f64..100.0,
            x in -1.0f64..6.0,
        ) {
            let c = cfg(KernelNormalization::TwoPi);
            let v = vec![speed; p.len()];
            let got = kde_velocity_at(&p, &v, x, &c).unwrap();
            prop_assert!((got - speed).abs() <= 1e-12 * speed.max(1.0));
        }
    }
}
