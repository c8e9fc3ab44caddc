//! First-order LWR model with trajectory-embedded velocity, solved by the
//! Cell Transmission Model.
//!
//! The macroscopic speed `u(rho)` is blended with the speed of tracked
//! vehicles near each point through the cutoff `chi`:
//! `U = chi * 2 p' u / (p' + u) + (1 - chi) u`. In closest-vehicle mode
//! only the nearest tracked vehicle contributes; in average mode `U` is
//! the mean of the blends over every vehicle whose cutoff support covers
//! the point. The flux `rho U` changes from cell to cell, so sending and
//! receiving functions are built per cell around a critical density found
//! by sampling.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::cutoff::CutoffShape;
use crate::diagram::SpeedLaw;
use crate::error::{Error, Result};
use crate::grid::SpatialGrid;
use crate::lagrangian::{Fleet, FleetSnapshot};

/// Relative slack allowed on the time step before a CFL error is raised.
const CFL_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingMode {
    #[default]
    #[serde(alias = "cv")]
    ClosestVehicle,
    #[serde(alias = "acv")]
    AverageClosestVehicles,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FluxSamplingConfig {
    pub n_rho_samples: usize,
}

impl Default for FluxSamplingConfig {
    fn default() -> Self {
        Self { n_rho_samples: 256 }
    }
}

impl FluxSamplingConfig {
    pub fn new(n_rho_samples: usize) -> Result<Self> {
        if n_rho_samples < 16 {
            return Err(Error::config(format!(
                "flux sampling: need at least 16 samples, got {n_rho_samples}"
            )));
        }
        Ok(Self { n_rho_samples })
    }
}

/// Harmonic-mean blend of a vehicle speed `p_dot` with the model speed `u`,
/// weighted by `chi`. Zero when both speeds vanish.
pub fn blend(chi: f64, p_dot: f64, u: f64) -> f64 {
    let s = p_dot + u;
    if s == 0.0 {
        return 0.0;
    }
    chi * 2.0 * p_dot * u / s + (1.0 - chi) * u
}

/// How tracked vehicles modify the speed law in one cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Embedding {
    /// No vehicle in range: the plain speed law.
    Native,
    /// A single vehicle with cutoff weight `chi` and speed `speed`.
    Closest { chi: f64, speed: f64 },
    /// Mean of the blends with several covering vehicles.
    Average(Vec<(f64, f64)>),
}

impl Embedding {
    pub fn resolve(snapshot: &FleetSnapshot, x: f64, shape: &CutoffShape, mode: EmbeddingMode) -> Self {
        match mode {
            EmbeddingMode::None => Embedding::Native,
            EmbeddingMode::ClosestVehicle => match snapshot.closest(x) {
                Some(v) => {
                    let chi = shape.cutoff(x - v.position);
                    if chi > 0.0 {
                        Embedding::Closest { chi, speed: v.speed }
                    } else {
                        Embedding::Native
                    }
                }
                None => Embedding::Native,
            },
            EmbeddingMode::AverageClosestVehicles => {
                let covering: Vec<(f64, f64)> = snapshot
                    .covering(x, shape)
                    .map(|v| (shape.cutoff(x - v.position), v.speed))
                    .collect();
                match covering.len() {
                    0 => Embedding::Native,
                    // a mean over one vehicle is that vehicle's blend
                    1 => Embedding::Closest {
                        chi: covering[0].0,
                        speed: covering[0].1,
                    },
                    _ => Embedding::Average(covering),
                }
            }
        }
    }

    pub fn speed<L: SpeedLaw + ?Sized>(&self, law: &L, rho: f64) -> f64 {
        let u = law.speed(rho);
        match self {
            Embedding::Native => u,
            Embedding::Closest { chi, speed } => blend(*chi, *speed, u),
            Embedding::Average(list) => {
                list.iter().map(|&(chi, p)| blend(chi, p, u)).sum::<f64>() / list.len() as f64
            }
        }
    }

    pub fn flux<L: SpeedLaw + ?Sized>(&self, law: &L, rho: f64) -> f64 {
        rho * self.speed(law, rho)
    }

    /// Bit pattern identifying the flux function, used for caching.
    fn key(&self) -> Vec<u64> {
        match self {
            Embedding::Native => Vec::new(),
            Embedding::Closest { chi, speed } => vec![chi.to_bits(), speed.to_bits()],
            Embedding::Average(list) => list
                .iter()
                .flat_map(|(c, s)| [c.to_bits(), s.to_bits()])
                .collect(),
        }
    }
}

/// Maximiser of a cell flux and its value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalPoint {
    pub sigma: f64,
    pub flux_max: f64,
}

impl CriticalPoint {
    /// Demand. The flux branch is capped at `flux_max` so that sampling
    /// error near the maximiser cannot break monotonicity.
    pub fn sending(&self, flux: f64, rho: f64) -> f64 {
        if rho <= self.sigma {
            flux.min(self.flux_max)
        } else {
            self.flux_max
        }
    }

    /// Supply, capped like [`CriticalPoint::sending`].
    pub fn receiving(&self, flux: f64, rho: f64) -> f64 {
        if rho <= self.sigma {
            self.flux_max
        } else {
            flux.min(self.flux_max)
        }
    }
}

/// Sampled argmax of `rho -> rho U(rho)` over `n` equispaced densities in
/// `[0, rho_max]`. The first maximum wins ties; an identically zero flux
/// gives `sigma = 0`.
pub fn critical_point<L: SpeedLaw + ?Sized>(law: &L, emb: &Embedding, n: usize) -> CriticalPoint {
    let rho_max = law.rho_max();
    let mut best = CriticalPoint {
        sigma: 0.0,
        flux_max: 0.0,
    };
    for k in 0..n {
        let rho = rho_max * k as f64 / (n - 1) as f64;
        let q = emb.flux(law, rho);
        if q > best.flux_max {
            best = CriticalPoint { sigma: rho, flux_max: q };
        }
    }
    best
}

/// Embedded speed at `(x, t)` for density `rho`.
#[allow(clippy::too_many_arguments)]
pub fn embedded_speed<L: SpeedLaw + ?Sized>(
    x: f64,
    t: f64,
    rho: f64,
    fleet: &Fleet,
    law: &L,
    shape: &CutoffShape,
    mode: EmbeddingMode,
) -> f64 {
    Embedding::resolve(&fleet.snapshot(t), x, shape, mode).speed(law, rho)
}

/// `rho` times [`embedded_speed`].
#[allow(clippy::too_many_arguments)]
pub fn embedded_flux<L: SpeedLaw + ?Sized>(
    x: f64,
    t: f64,
    rho: f64,
    fleet: &Fleet,
    law: &L,
    shape: &CutoffShape,
    mode: EmbeddingMode,
) -> f64 {
    rho * embedded_speed(x, t, rho, fleet, law, shape, mode)
}

/// Critical density and maximal flux of the embedded flux at `(x, t)`.
#[allow(clippy::too_many_arguments)]
pub fn critical_density<L: SpeedLaw + ?Sized>(
    x: f64,
    t: f64,
    fleet: &Fleet,
    law: &L,
    shape: &CutoffShape,
    mode: EmbeddingMode,
    sampling: FluxSamplingConfig,
) -> CriticalPoint {
    let emb = Embedding::resolve(&fleet.snapshot(t), x, shape, mode);
    critical_point(law, &emb, sampling.n_rho_samples)
}

/// `min(S_up, R_down)`.
pub fn numerical_flux(sending_up: f64, receiving_down: f64) -> f64 {
    sending_up.min(receiving_down)
}

/// Per-step cache of critical points keyed by the flux function.
#[derive(Debug, Default)]
pub(crate) struct CriticalCache {
    map: HashMap<Vec<u64>, CriticalPoint>,
}

impl CriticalCache {
    pub(crate) fn get<L: SpeedLaw + ?Sized>(
        &mut self,
        law: &L,
        law_key: &[u64],
        emb: &Embedding,
        n: usize,
    ) -> CriticalPoint {
        let mut key = law_key.to_vec();
        key.extend(emb.key());
        *self
            .map
            .entry(key)
            .or_insert_with(|| critical_point(law, emb, n))
    }
}

/// Cell-wise quantities of one CTM step, before boundary fluxes are known.
#[derive(Debug, Clone)]
pub struct PreparedStep {
    pub embeddings: Vec<Embedding>,
    pub critical: Vec<CriticalPoint>,
    pub sending: Vec<f64>,
    pub receiving: Vec<f64>,
    /// Embedded speed of each cell at its current density.
    pub speed: Vec<f64>,
    /// Interface fluxes `F_{j+1/2}` between cells `j` and `j+1`.
    pub interior_flux: Vec<f64>,
}

impl PreparedStep {
    /// Outflow through the right end with a ghost cell copying the last
    /// cell.
    pub fn free_outflow(&self) -> f64 {
        let j = self.sending.len() - 1;
        numerical_flux(self.sending[j], self.receiving[j])
    }
}

/// Check `dt` against `bound`.
pub(crate) fn check_cfl(dt: f64, bound: f64) -> Result<()> {
    if !(dt > 0.0) || dt > bound * (1.0 + CFL_SLACK) {
        return Err(Error::Cfl { dt, bound });
    }
    Ok(())
}

/// Conservative update with the given interface fluxes.
pub(crate) fn conservative_update(rho: &[f64], interior: &[f64], inflow: f64, outflow: f64, lambda: f64) -> Vec<f64> {
    let n = rho.len();
    (0..n)
        .map(|j| {
            let left = if j == 0 { inflow } else { interior[j - 1] };
            let right = if j + 1 == n { outflow } else { interior[j] };
            rho[j] - lambda * (right - left)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LwrConfig {
    pub mode: EmbeddingMode,
    pub shape: CutoffShape,
    #[serde(default)]
    pub sampling: FluxSamplingConfig,
}

/// Density field.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroState1 {
    pub rho: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LeftBoundary {
    /// Requested inflow; capped by the supply of the first cell.
    Flux(f64),
    /// Ghost cell at this density, sharing the first cell's flux function.
    Density(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RightBoundary {
    /// Ghost cell copying the last cell.
    Free,
    /// Requested outflow; capped by the demand of the last cell.
    Flux(f64),
    /// Ghost cell at this density, sharing the last cell's flux function.
    Density(f64),
}

#[derive(Debug, Clone)]
pub struct LwrSolver<L: SpeedLaw> {
    pub law: L,
    pub grid: SpatialGrid,
    pub config: LwrConfig,
}

impl<L: SpeedLaw> LwrSolver<L> {
    pub fn new(law: L, grid: SpatialGrid, config: LwrConfig) -> Result<Self> {
        FluxSamplingConfig::new(config.sampling.n_rho_samples)?;
        Ok(Self { law, grid, config })
    }

    /// `dx / max(sup p', u_max)`.
    pub fn max_dt(&self, fleet: &Fleet) -> f64 {
        max_dt(fleet, &self.law, &self.grid)
    }

    pub fn prepare(&self, rho: &[f64], snapshot: &FleetSnapshot) -> PreparedStep {
        let n = self.config.sampling.n_rho_samples;
        let mut cache = CriticalCache::default();
        let embeddings: Vec<Embedding> = (0..rho.len())
            .map(|j| Embedding::resolve(snapshot, self.grid.center(j), &self.config.shape, self.config.mode))
            .collect();
        let mut critical = Vec::with_capacity(rho.len());
        let mut sending = Vec::with_capacity(rho.len());
        let mut receiving = Vec::with_capacity(rho.len());
        let mut speed = Vec::with_capacity(rho.len());
        for (emb, &r) in embeddings.iter().zip(rho) {
            let cp = cache.get(&self.law, &[], emb, n);
            let u = emb.speed(&self.law, r);
            let q = r * u;
            critical.push(cp);
            sending.push(cp.sending(q, r));
            receiving.push(cp.receiving(q, r));
            speed.push(u);
        }
        let interior_flux = (0..rho.len().saturating_sub(1))
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

    /// Flux entering the first cell.
    pub fn inflow(&self, prep: &PreparedStep, left: LeftBoundary) -> f64 {
        match left {
            LeftBoundary::Flux(q) => q.max(0.0).min(prep.receiving[0]),
            LeftBoundary::Density(rb) => {
                let q = prep.embeddings[0].flux(&self.law, rb);
                numerical_flux(prep.critical[0].sending(q, rb), prep.receiving[0])
            }
        }
    }

    /// Flux leaving the last cell.
    pub fn outflow(&self, rho: &[f64], prep: &PreparedStep, right: RightBoundary) -> f64 {
        let j = rho.len() - 1;
        match right {
            RightBoundary::Free => prep.free_outflow(),
            RightBoundary::Flux(q) => q.max(0.0).min(prep.sending[j]),
            RightBoundary::Density(rb) => {
                let q = prep.embeddings[j].flux(&self.law, rb);
                numerical_flux(prep.sending[j], prep.critical[j].receiving(q, rb))
            }
        }
    }

    /// Apply a prepared step with the given boundary fluxes.
    pub fn advance(&self, state: &MacroState1, prep: &PreparedStep, inflow: f64, outflow: f64, dt: f64) -> MacroState1 {
        let lambda = dt / self.grid.dx();
        MacroState1 {
            rho: conservative_update(&state.rho, &prep.interior_flux, inflow, outflow, lambda),
        }
    }

    /// One CTM step from time `t`.
    pub fn step(
        &self,
        state: &MacroState1,
        t: f64,
        fleet: &Fleet,
        dt: f64,
        left: LeftBoundary,
        right: RightBoundary,
    ) -> Result<MacroState1> {
        check_cfl(dt, self.max_dt(fleet))?;
        self.step_unchecked(state, &fleet.snapshot(t), dt, left, right)
    }

    /// One CTM step with a caller-supplied fleet snapshot and no CFL check.
    pub fn step_unchecked(
        &self,
        state: &MacroState1,
        snapshot: &FleetSnapshot,
        dt: f64,
        left: LeftBoundary,
        right: RightBoundary,
    ) -> Result<MacroState1> {
        if state.rho.len() != self.grid.n_cells() {
            return Err(Error::config(format!(
                "lwr: state has {} cells, grid has {}",
                state.rho.len(),
                self.grid.n_cells()
            )));
        }
        let prep = self.prepare(&state.rho, snapshot);
        let inflow = self.inflow(&prep, left);
        let outflow = self.outflow(&state.rho, &prep, right);
        Ok(self.advance(state, &prep, inflow, outflow, dt))
    }
}

/// `dx / max(sup p', u_max)`: the step bound under which the scheme is
/// stated to be stable.
pub fn max_dt<L: SpeedLaw + ?Sized>(fleet: &Fleet, law: &L, grid: &SpatialGrid) -> f64 {
    grid.dx() / fleet.max_speed().max(law.max_speed())
}

/// `dx / max(sup p', 2 u_max)` with a fleet, [`max_dt`] without one.
///
/// The harmonic blend can steepen the flux near `rho_max` up to
/// `|dF/drho| = (1 + chi) u_max`, which [`max_dt`] does not cover; this
/// bound does, for speed laws with `rho |u'(rho)| <= u_max`.
pub fn monotone_dt<L: SpeedLaw + ?Sized>(fleet: &Fleet, law: &L, grid: &SpatialGrid) -> f64 {
    if fleet.is_empty() {
        return max_dt(fleet, law, grid);
    }
    grid.dx() / fleet.max_speed().max(2.0 * law.max_speed())
}
