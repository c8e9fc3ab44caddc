//! Oscillating platoon with closed-form kinematics.
//!
//! Vehicle `i` (1-based) follows
//! `v_i(t) = c V (sin(k_i pi t / T) + 1)` with `k_i = 20 + 5 (i-1)/(n-1)`
//! and starts at `x_{0,i} = 1 + 0.05 (i-1)` km, so the platoon is initially
//! spaced every 50 m.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{Fleet, Trajectory, TrajectorySample};
use crate::error::{Error, Result};

/// Which acceleration the platoon reports.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccelerationForm {
    /// `dv/dt = c V (k pi / T) cos(k pi t / T)`.
    #[default]
    Derivative,
    /// `c V (T / (k pi)) cos(k pi t / T)`; not the derivative of the speed.
    InvertedFactor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPlatoon {
    pub n: usize,
    pub c: f64,
    /// Horizon in h.
    pub horizon: f64,
    /// km/h.
    pub v_max: f64,
    pub acceleration_form: AccelerationForm,
}

pub fn generate_synthetic(n: usize, c: f64, horizon: f64, v_max: f64) -> Result<SyntheticPlatoon> {
    if n < 2 {
        return Err(Error::config(format!("synthetic platoon needs n >= 2, got {n}")));
    }
    if !(horizon > 0.0 && v_max > 0.0 && c > 0.0) {
        return Err(Error::config("synthetic platoon: c, horizon and v_max must be positive"));
    }
    Ok(SyntheticPlatoon {
        n,
        c,
        horizon,
        v_max,
        acceleration_form: AccelerationForm::Derivative,
    })
}

impl SyntheticPlatoon {
    /// Frequency factor `k_i` for the 0-based vehicle index `i`.
    pub fn k(&self, i: usize) -> f64 {
        20.0 + 5.0 * i as f64 / (self.n - 1) as f64
    }

    pub fn initial_position(&self, i: usize) -> f64 {
        1.0 + 0.05 * i as f64
    }

    fn omega(&self, i: usize) -> f64 {
        self.k(i) * PI / self.horizon
    }

    /// km.
    pub fn position(&self, i: usize, t: f64) -> f64 {
        let om = self.omega(i);
        self.c * self.v_max * (t - (om * t).cos() / om + 1.0 / om) + self.initial_position(i)
    }

    /// km/h.
    pub fn speed(&self, i: usize, t: f64) -> f64 {
        self.c * self.v_max * ((self.omega(i) * t).sin() + 1.0)
    }

    /// km/h².
    pub fn acceleration(&self, i: usize, t: f64) -> f64 {
        let om = self.omega(i);
        let factor = match self.acceleration_form {
            AccelerationForm::Derivative => om,
            AccelerationForm::InvertedFactor => 1.0 / om,
        };
        self.c * self.v_max * factor * (om * t).cos()
    }

    /// Sampled trajectories (positions and speeds) every `sample_dt` hours
    /// over `[0, horizon]`, one per vehicle, all on `road_id`.
    pub fn to_fleet(&self, sample_dt: f64, road_id: u32) -> Result<Fleet> {
        if !(sample_dt > 0.0) {
            return Err(Error::config("sample_dt must be positive"));
        }
        let steps = (self.horizon / sample_dt - 1e-9).ceil() as usize;
        let trajectories = (0..self.n)
            .map(|i| {
                let samples = (0..=steps)
                    .map(|s| {
                        let t = (s as f64 * sample_dt).min(self.horizon);
                        TrajectorySample {
                            t,
                            x: self.position(i, t),
                            v: Some(self.speed(i, t)),
                        }
                    })
                    .collect();
                Trajectory::new(format!("veh{}", i + 1), road_id, samples)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Fleet::new(trajectories))
    }
}
