//! Second-order GSOM (CGARZ flux) with trajectory-embedded velocity.
//!
//! Density follows `rho_t + (rho V)_x = 0` and the driver invariant
//! `w_t + V w_x = 0`, where `V(x, t, rho, w)` blends `v(rho, w)` with the
//! closest tracked vehicle. Density is advanced by the CTM with per-cell
//! critical densities that depend on the cell's `w`; `w` is advanced by an
//! upwind difference.

use serde::{Deserialize, Serialize};

use crate::cutoff::CutoffShape;
use crate::diagram::{CgarzDiagram, FrozenInvariant};
use crate::error::{Error, Result};
use crate::grid::SpatialGrid;
use crate::lagrangian::{Fleet, FleetSnapshot};
use crate::lwr::{
    check_cfl, conservative_update, critical_point, numerical_flux, CriticalCache, EmbeddingMode,
    Embedding, FluxSamplingConfig, PreparedStep, RightBoundary,
};
use crate::units::{kmh2_to_ms2, kmh_to_ms};

/// Accelerations handed to the emission formulas are clamped to this
/// magnitude (m/s²).
pub const ACCEL_CLAMP_MS2: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GsomConfig {
    pub mode: EmbeddingMode,
    pub shape: CutoffShape,
    #[serde(default)]
    pub sampling: FluxSamplingConfig,
}

/// Density and invariant fields.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroState2 {
    pub rho: Vec<f64>,
    pub w: Vec<f64>,
}

impl MacroState2 {
    pub fn uniform(n: usize, rho: f64, w: f64) -> Self {
        Self {
            rho: vec![rho; n],
            w: vec![w; n],
        }
    }

    /// Total number of vehicles, `sum rho_j dx`.
    pub fn mass(&self, dx: f64) -> f64 {
        self.rho.iter().sum::<f64>() * dx
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GsomLeft {
    /// Requested inflow carrying invariant `w`; capped by the supply of the
    /// first cell.
    Flux { flux: f64, w: f64 },
    /// Ghost cell with this state, sharing the first cell's embedding.
    Density { rho: f64, w: f64 },
    /// Loop-detector datum: flow (veh/h) and speed (km/h).
    Sensor { flux: f64, speed: f64 },
}

/// Inflow flux and ghost invariant from a sensor datum.
///
/// The flow is clamped to `[0, supply]`; the boundary density is the
/// clamped flow over the sensor speed, and `w` is chosen so that
/// `v(rho_b, w)` matches the sensor speed.
pub fn sensor_boundary(diag: &CgarzDiagram, flux: f64, speed: f64, supply: f64) -> Result<(f64, f64)> {
    let q = flux.max(0.0).min(supply);
    if !(speed > 0.0) {
        return Ok((q, diag.w_mid()));
    }
    let rho_b = (q / speed).min(diag.rho_max);
    Ok((q, diag.invert_speed_in_w(rho_b, speed)?))
}

#[derive(Debug, Clone)]
pub struct GsomSolver {
    pub diagram: CgarzDiagram,
    pub grid: SpatialGrid,
    pub config: GsomConfig,
}

impl GsomSolver {
    pub fn new(diagram: CgarzDiagram, grid: SpatialGrid, config: GsomConfig) -> Result<Self> {
        FluxSamplingConfig::new(config.sampling.n_rho_samples)?;
        if config.mode == EmbeddingMode::AverageClosestVehicles {
            return Err(Error::config(
                "gsom: only the closest-vehicle embedding (or none) is supported",
            ));
        }
        Ok(Self {
            diagram,
            grid,
            config,
        })
    }

    /// `dx / max(sup p', V_max)`.
    pub fn max_dt(&self, fleet: &Fleet) -> f64 {
        max_dt_2(fleet, &self.diagram, &self.grid)
    }

    fn law(&self, w: f64) -> FrozenInvariant {
        FrozenInvariant {
            diagram: self.diagram,
            w,
        }
    }

    fn check_state(&self, state: &MacroState2) -> Result<()> {
        let n = self.grid.n_cells();
        if state.rho.len() != n || state.w.len() != n {
            return Err(Error::config(format!(
                "gsom: state has {}/{} cells, grid has {n}",
                state.rho.len(),
                state.w.len()
            )));
        }
        Ok(())
    }

    /// Cell-wise sending/receiving, speeds and interior fluxes.
    pub fn prepare(&self, state: &MacroState2, snapshot: &FleetSnapshot) -> PreparedStep {
        let n = self.config.sampling.n_rho_samples;
        let mut cache = CriticalCache::default();
        let cells = state.rho.len();
        let embeddings: Vec<Embedding> = (0..cells)
            .map(|j| Embedding::resolve(snapshot, self.grid.center(j), &self.config.shape, self.config.mode))
            .collect();
        let mut critical = Vec::with_capacity(cells);
        let mut sending = Vec::with_capacity(cells);
        let mut receiving = Vec::with_capacity(cells);
        let mut speed = Vec::with_capacity(cells);
        for j in 0..cells {
            let (r, w) = (state.rho[j], state.w[j]);
            let law = self.law(w);
            let cp = cache.get(&law, &[w.to_bits()], &embeddings[j], n);
            let v = embeddings[j].speed(&law, r);
            let q = r * v;
            critical.push(cp);
            sending.push(cp.sending(q, r));
            receiving.push(cp.receiving(q, r));
            speed.push(v);
        }
        let interior_flux = (0..cells.saturating_sub(1))
            .map(|j| numerical_flux(sending[j], receiving[j + 1]))
            .collect();
        PreparedStep {
            embeddings,
            critical,
            sending,
            receiving,
            speed,
            interior_flux,
        }
    }

    /// Inflow flux and upwind ghost invariant at the left end.
    pub fn inflow(&self, prep: &PreparedStep, left: GsomLeft) -> Result<(f64, f64)> {
        let supply = prep.receiving[0];
        match left {
            GsomLeft::Flux { flux, w } => Ok((flux.max(0.0).min(supply), w)),
            GsomLeft::Density { rho, w } => {
                let law = self.law(w);
                let emb = &prep.embeddings[0];
                let cp = critical_point(&law, emb, self.config.sampling.n_rho_samples);
                let q = emb.flux(&law, rho);
                Ok((numerical_flux(cp.sending(q, rho), supply), w))
            }
            GsomLeft::Sensor { flux, speed } => sensor_boundary(&self.diagram, flux, speed, supply),
        }
    }

    /// Outflow at the right end.
    pub fn outflow(&self, state: &MacroState2, prep: &PreparedStep, right: RightBoundary) -> f64 {
        let j = state.rho.len() - 1;
        match right {
            RightBoundary::Free => prep.free_outflow(),
            RightBoundary::Flux(q) => q.max(0.0).min(prep.sending[j]),
            RightBoundary::Density(rb) => {
                let law = self.law(state.w[j]);
                let q = prep.embeddings[j].flux(&law, rb);
                numerical_flux(prep.sending[j], prep.critical[j].receiving(q, rb))
            }
        }
    }

    /// Apply a prepared step: conservative density update and upwind
    /// invariant update with `w_ghost` upstream of the first cell.
    pub fn advance(
        &self,
        state: &MacroState2,
        prep: &PreparedStep,
        inflow: f64,
        w_ghost: f64,
        outflow: f64,
        dt: f64,
    ) -> MacroState2 {
        let lambda = dt / self.grid.dx();
        let rho = conservative_update(&state.rho, &prep.interior_flux, inflow, outflow, lambda);
        let w = (0..state.w.len())
            .map(|j| {
                let up = if j == 0 { w_ghost } else { state.w[j - 1] };
                state.w[j] - lambda * prep.speed[j] * (state.w[j] - up)
            })
            .collect();
        MacroState2 { rho, w }
    }

    pub fn step(
        &self,
        state: &MacroState2,
        t: f64,
        fleet: &Fleet,
        dt: f64,
        left: GsomLeft,
        right: RightBoundary,
    ) -> Result<MacroState2> {
        check_cfl(dt, self.max_dt(fleet))?;
        self.step_unchecked(state, &fleet.snapshot(t), dt, left, right)
    }

    /// One step with a caller-supplied snapshot and no CFL check.
    pub fn step_unchecked(
        &self,
        state: &MacroState2,
        snapshot: &FleetSnapshot,
        dt: f64,
        left: GsomLeft,
        right: RightBoundary,
    ) -> Result<MacroState2> {
        self.check_state(state)?;
        let prep = self.prepare(state, snapshot);
        let (inflow, w_ghost) = self.inflow(&prep, left)?;
        let outflow = self.outflow(state, &prep, right);
        Ok(self.advance(state, &prep, inflow, w_ghost, outflow, dt))
    }

    /// Embedded speed of every cell (km/h).
    pub fn speed_field(&self, state: &MacroState2, snapshot: &FleetSnapshot) -> Vec<f64> {
        (0..state.rho.len())
            .map(|j| {
                Embedding::resolve(snapshot, self.grid.center(j), &self.config.shape, self.config.mode)
                    .speed(&self.law(state.w[j]), state.rho[j])
            })
            .collect()
    }

    /// Material derivative of the embedded speed in every cell (km/h²).
    ///
    /// `a = -rho V_rho V_x + V_t + V dV/dx`, where `V_x` in the first term
    /// is the total spatial derivative (centered difference of the discrete
    /// speed field, one-sided at the ends) and `dV/dx` in the last term is
    /// the explicit dependence on `x` through the cutoff. `V_rho` and the
    /// explicit time derivative `V_t` are closed-form. On smooth states
    /// this equals `dV/dt + V V_x` along the flow.
    pub fn acceleration_field(&self, state: &MacroState2, snapshot: &FleetSnapshot) -> Vec<f64> {
        let n = state.rho.len();
        let dx = self.grid.dx();
        let speed = self.speed_field(state, snapshot);
        let vx_total = |j: usize| -> f64 {
            if n < 2 {
                0.0
            } else if j == 0 {
                (speed[1] - speed[0]) / dx
            } else if j + 1 == n {
                (speed[n - 1] - speed[n - 2]) / dx
            } else {
                (speed[j + 1] - speed[j - 1]) / (2.0 * dx)
            }
        };
        (0..n)
            .map(|j| {
                let (rho, w) = (state.rho[j], state.w[j]);
                let x = self.grid.center(j);
                let v = self.diagram.speed_unchecked(rho, w);
                let v_rho = self.diagram.speed_drho_unchecked(rho, w);
                let vehicle = match self.config.mode {
                    EmbeddingMode::None => None,
                    _ => snapshot.closest(x),
                };
                let (chi, dchi, p, pa) = match vehicle {
                    Some(k) => (
                        self.config.shape.cutoff(x - k.position),
                        self.config.shape.derivative(x - k.position),
                        k.speed,
                        k.acceleration,
                    ),
                    None => (0.0, 0.0, 0.0, 0.0),
                };
                let (vv_rho, v_t, v_x_explicit) = if chi == 0.0 && dchi == 0.0 {
                    (v_rho, 0.0, 0.0)
                } else {
                    let s = p + v;
                    if s == 0.0 {
                        return 0.0;
                    }
                    (
                        chi * 2.0 * v_rho * p * p / (s * s) + (1.0 - chi) * v_rho,
                        dchi * p * v * (v - p) / s + chi * 2.0 * pa * v * v / (s * s),
                        dchi * v * (p - v) / s,
                    )
                };
                -rho * vv_rho * vx_total(j) + v_t + speed[j] * v_x_explicit
            })
            .collect()
    }
}

/// `dx / max(sup p', V_max)`.
pub fn max_dt_2(fleet: &Fleet, diag: &CgarzDiagram, grid: &SpatialGrid) -> f64 {
    grid.dx() / fleet.max_speed().max(diag.max_speed())
}

/// Convert solver speed (km/h) and acceleration (km/h²) to the emission
/// units m/s and m/s², clamping accelerations to `±ACCEL_CLAMP_MS2`.
/// Returns the converted fields and the number of clamped cells.
pub fn emission_kinematics(speed_kmh: &[f64], accel_kmh2: &[f64]) -> (Vec<f64>, Vec<f64>, usize) {
    let mut clamped = 0;
    let v = speed_kmh.iter().map(|&s| kmh_to_ms(s.max(0.0))).collect();
    let a = accel_kmh2
        .iter()
        .map(|&a| {
            let a = kmh2_to_ms2(a);
            if a.abs() > ACCEL_CLAMP_MS2 {
                clamped += 1;
            }
            a.clamp(-ACCEL_CLAMP_MS2, ACCEL_CLAMP_MS2)
        })
        .collect();
    if clamped > 0 {
        log::debug!("clamped {clamped} accelerations to ±{ACCEL_CLAMP_MS2} m/s²");
    }
    (v, a, clamped)
}
