//! Follow-the-leader microscopic model used to manufacture trajectories.
//!
//! Followers obey
//! `dV_i/dt = gain (V_{i+1} - V_i) + (V_opt(gap_i) - V_i) / tau`
//! with the optimal-velocity curve
//! `V_opt(g) = V_lead (tanh(g/g* - 1) + tanh 1) / tanh 1`, which vanishes at
//! zero gap and returns the leader speed at the preferred gap `g*`. The
//! leader (last index) drives at constant speed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Fleet, Trajectory, TrajectorySample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FtlConfig {
    pub n_vehicles: usize,
    /// 1/h.
    pub accel_gain: f64,
    /// km.
    pub preferred_gap: f64,
    /// km/h.
    pub leader_speed: f64,
    /// h.
    pub relaxation_time: f64,
}

impl Default for FtlConfig {
    /// Parameters in the string-unstable regime: perturbations grow into
    /// stop-and-go waves.
    fn default() -> Self {
        Self {
            n_vehicles: 50,
            accel_gain: 0.1 * 3600.0,
            preferred_gap: 0.025,
            leader_speed: 50.0,
            relaxation_time: 1.5 / 3600.0,
        }
    }
}

impl FtlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_vehicles == 0
            || !(self.accel_gain > 0.0)
            || !(self.preferred_gap > 0.0)
            || !(self.leader_speed > 0.0)
            || !(self.relaxation_time > 0.0)
        {
            return Err(Error::config(format!("ftl: all parameters must be positive: {self:?}")));
        }
        Ok(())
    }

    pub fn target_speed(&self, gap: f64) -> f64 {
        let t1 = 1f64.tanh();
        self.leader_speed * ((gap / self.preferred_gap - 1.0).tanh() + t1) / t1
    }
}

/// Positions (km, increasing; the leader is last) and speeds (km/h).
#[derive(Debug, Clone, PartialEq)]
pub struct FtlState {
    pub positions: Vec<f64>,
    pub speeds: Vec<f64>,
}

impl FtlState {
    /// Equally spaced platoon at the preferred gap, everyone at the leader
    /// speed; the last follower sits at `x0`.
    pub fn equilibrium(cfg: &FtlConfig, x0: f64) -> Self {
        let n = cfg.n_vehicles;
        Self {
            positions: (0..n).map(|i| x0 + i as f64 * cfg.preferred_gap).collect(),
            speeds: vec![cfg.leader_speed; n],
        }
    }

    /// Equilibrium platoon with seeded uniform speed perturbations of
    /// relative size `amplitude` on the followers.
    pub fn perturbed(cfg: &FtlConfig, x0: f64, amplitude: f64, seed: u64) -> Self {
        let mut state = Self::equilibrium(cfg, x0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = state.speeds.len();
        for v in state.speeds.iter_mut().take(n.saturating_sub(1)) {
            *v *= 1.0 + amplitude * rng.random_range(-1.0..=1.0);
        }
        state
    }
}

/// One explicit Euler step.
pub fn step_ftl(state: &FtlState, cfg: &FtlConfig, dt: f64) -> Result<FtlState> {
    let n = state.positions.len();
    if n != state.speeds.len() {
        return Err(Error::config("ftl: positions and speeds differ in length"));
    }
    let mut positions = Vec::with_capacity(n);
    let mut speeds = Vec::with_capacity(n);
    for i in 0..n {
        let v = state.speeds[i];
        let accel = if i + 1 < n {
            let gap = state.positions[i + 1] - state.positions[i];
            cfg.accel_gain * (state.speeds[i + 1] - v) + (cfg.target_speed(gap) - v) / cfg.relaxation_time
        } else {
            0.0
        };
        positions.push(state.positions[i] + dt * v);
        speeds.push((v + dt * accel).max(0.0));
    }
    for i in 0..n.saturating_sub(1) {
        let gap = positions[i + 1] - positions[i];
        if !(gap > 0.0) {
            return Err(Error::Collision {
                follower: i,
                leader: i + 1,
                gap,
            });
        }
    }
    Ok(FtlState { positions, speeds })
}

/// Integrate the platoon for `steps` steps and record every
/// `record_every`-th state as trajectories on `road_id`.
pub fn simulate_ftl(
    cfg: &FtlConfig,
    initial: FtlState,
    dt: f64,
    steps: usize,
    record_every: usize,
    road_id: u32,
) -> Result<Fleet> {
    cfg.validate()?;
    let record_every = record_every.max(1);
    let n = initial.positions.len();
    let mut samples: Vec<Vec<TrajectorySample>> = vec![Vec::new(); n];
    let mut state = initial;
    let mut record = |state: &FtlState, t: f64| {
        for (i, s) in samples.iter_mut().enumerate() {
            s.push(TrajectorySample {
                t,
                x: state.positions[i],
                v: Some(state.speeds[i]),
            });
        }
    };
    record(&state, 0.0);
    for k in 1..=steps {
        state = step_ftl(&state, cfg, dt)?;
        if k % record_every == 0 || k == steps {
            record(&state, k as f64 * dt);
        }
    }
    let trajectories = samples
        .into_iter()
        .enumerate()
        .map(|(i, s)| Trajectory::new(format!("ftl{}", i + 1), road_id, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(Fleet::new(trajectories))
}
