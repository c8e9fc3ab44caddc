use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One recorded point of a trajectory. Times in h, positions in km, speeds
/// in km/h.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub x: f64,
    pub v: Option<f64>,
}

/// Position, speed and acceleration of a vehicle at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinematics {
    pub position: f64,
    pub speed: f64,
    pub acceleration: f64,
}

/// Time-stamped positions of one tracked vehicle on one road.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub vehicle_id: String,
    pub road_id: u32,
    samples: Vec<TrajectorySample>,
}

impl Trajectory {
    /// Build a trajectory; sample times must increase strictly and positions
    /// must not decrease.
    pub fn new(vehicle_id: impl Into<String>, road_id: u32, samples: Vec<TrajectorySample>) -> Result<Self> {
        let vehicle_id = vehicle_id.into();
        if samples.is_empty() {
            return Err(Error::config(format!("trajectory {vehicle_id}: no samples")));
        }
        for pair in samples.windows(2) {
            if !(pair[1].t > pair[0].t) {
                return Err(Error::config(format!(
                    "trajectory {vehicle_id}: sample times not strictly increasing at t={} h",
                    pair[1].t
                )));
            }
            if pair[1].x < pair[0].x {
                return Err(Error::config(format!(
                    "trajectory {vehicle_id}: position decreases at t={} h",
                    pair[1].t
                )));
            }
        }
        if let Some(s) = samples.iter().find(|s| s.v.is_some_and(|v| !(v >= 0.0))) {
            return Err(Error::config(format!(
                "trajectory {vehicle_id}: negative speed at t={} h",
                s.t
            )));
        }
        Ok(Self {
            vehicle_id,
            road_id,
            samples,
        })
    }

    pub fn samples(&self) -> &[TrajectorySample] {
        &self.samples
    }

    pub fn start_time(&self) -> f64 {
        self.samples[0].t
    }

    pub fn end_time(&self) -> f64 {
        self.samples[self.samples.len() - 1].t
    }

    fn has_speeds(&self) -> bool {
        self.samples.iter().all(|s| s.v.is_some())
    }

    fn slope(&self, k: usize) -> f64 {
        let (a, b) = (&self.samples[k], &self.samples[k + 1]);
        (b.x - a.x) / (b.t - a.t)
    }

    /// Largest speed the trajectory ever reports (recorded or segment slope).
    pub fn max_speed(&self) -> f64 {
        if self.has_speeds() {
            self.samples.iter().filter_map(|s| s.v).fold(0.0, f64::max)
        } else {
            (0..self.samples.len().saturating_sub(1))
                .map(|k| self.slope(k))
                .fold(0.0, f64::max)
        }
    }

    /// Kinematics at time `t`, or `None` when the vehicle is not on the
    /// road at that time.
    ///
    /// Position is linearly interpolated. Speed is the interpolated
    /// recorded speed when every sample carries one, otherwise the segment
    /// slope. Acceleration is the derivative of that speed reconstruction:
    /// the slope of the recorded speeds over the segment, or the difference
    /// of adjacent segment slopes across segment midpoints.
    pub fn interpolate(&self, t: f64) -> Option<Kinematics> {
        let s = &self.samples;
        if t < s[0].t || t > s[s.len() - 1].t {
            return None;
        }
        if s.len() == 1 {
            return Some(Kinematics {
                position: s[0].x,
                speed: s[0].v.unwrap_or(0.0),
                acceleration: 0.0,
            });
        }
        // segment k with s[k].t <= t < s[k+1].t; the last node uses the last segment
        let k = match s.partition_point(|p| p.t <= t) {
            0 => 0,
            i => (i - 1).min(s.len() - 2),
        };
        let (a, b) = (&s[k], &s[k + 1]);
        let span = b.t - a.t;
        let frac = (t - a.t) / span;
        let position = a.x + frac * (b.x - a.x);

        if let (true, Some(va), Some(vb)) = (self.has_speeds(), a.v, b.v) {
            return Some(Kinematics {
                position,
                speed: va + frac * (vb - va),
                acceleration: (vb - va) / span,
            });
        }

        let speed = self.slope(k);
        let mid = |k: usize| 0.5 * (s[k].t + s[k + 1].t);
        let last_segment = s.len() - 2;
        let acceleration = if t >= mid(k) && k < last_segment {
            (self.slope(k + 1) - speed) / (mid(k + 1) - mid(k))
        } else if t < mid(k) && k > 0 {
            (speed - self.slope(k - 1)) / (mid(k) - mid(k - 1))
        } else if k < last_segment {
            (self.slope(k + 1) - speed) / (mid(k + 1) - mid(k))
        } else if k > 0 {
            (speed - self.slope(k - 1)) / (mid(k) - mid(k - 1))
        } else {
            0.0
        };
        Some(Kinematics {
            position,
            speed,
            acceleration,
        })
    }
}
