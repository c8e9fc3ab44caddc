//! Scenario configuration and the end-to-end pipeline: fleet, macroscopic
//! simulation, emissions, optional diffusion, field dumps and manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cutoff::CutoffShape;
use crate::diagram::{CgarzDiagram, GreenshieldsDiagram};
use crate::diffusion::{build_source, diffusion_step, refine_emissions, Domain2D, RoadStrip, SourceScaling};
use crate::emissions::{emission_field, EmissionCoefficients, EmissionFormula, ExpMatrix};
use crate::error::{Error, Result};
use crate::grid::{SpatialGrid, TimeGrid};
use crate::gsom::{emission_kinematics, GsomConfig, GsomLeft, GsomSolver, MacroState2};
use crate::io::{load_sensors, load_trajectories, write_fields, FieldDump};
use crate::lagrangian::{
    generate_synthetic, kde_density, kde_velocity, simulate_ftl, Fleet, FtlConfig, FtlState, KdeConfig,
    KernelNormalization, Trajectory, TrajectorySample,
};
use crate::lwr::{EmbeddingMode, FluxSamplingConfig, LeftBoundary, LwrConfig, LwrSolver, MacroState1, RightBoundary};
use crate::network::{Network, NetworkSpec, RoadFleets};
use crate::units::SECONDS_PER_HOUR;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Lwr,
    Gsom,
    Network,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum DiagramConfig {
    Greenshields {
        rho_max: f64,
        u_max: f64,
    },
    /// `w_l`, `w_r` default to `g(rho_f)` and `g(rho_max / 2)`.
    Cgarz {
        rho_max: f64,
        rho_f: f64,
        v_max: f64,
        #[serde(default)]
        w_l: Option<f64>,
        #[serde(default)]
        w_r: Option<f64>,
    },
}

impl DiagramConfig {
    fn greenshields(&self) -> Result<GreenshieldsDiagram> {
        match *self {
            DiagramConfig::Greenshields { rho_max, u_max } => GreenshieldsDiagram::new(rho_max, u_max),
            DiagramConfig::Cgarz { .. } => Err(Error::config("diagram.kind: the lwr model needs \"greenshields\"")),
        }
    }

    fn cgarz(&self) -> Result<CgarzDiagram> {
        match *self {
            DiagramConfig::Cgarz {
                rho_max,
                rho_f,
                v_max,
                w_l,
                w_r,
            } => {
                let base = CgarzDiagram::with_standard_invariant_range(rho_max, rho_f, v_max)?;
                CgarzDiagram::new(rho_max, rho_f, v_max, w_l.unwrap_or(base.w_l), w_r.unwrap_or(base.w_r))
            }
            DiagramConfig::Greenshields { .. } => {
                Err(Error::config("diagram.kind: second-order models need \"cgarz\""))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingConfig {
    #[serde(default)]
    pub mode: EmbeddingMode,
    /// km.
    pub ell: f64,
    /// km.
    pub big_l: f64,
    #[serde(default = "default_samples")]
    pub n_rho_samples: usize,
}

fn default_samples() -> usize {
    FluxSamplingConfig::default().n_rho_samples
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            mode: EmbeddingMode::ClosestVehicle,
            ell: 0.2,
            big_l: 0.6,
            n_rho_samples: default_samples(),
        }
    }
}

impl EmbeddingConfig {
    fn shape(&self) -> Result<CutoffShape> {
        CutoffShape::new(self.ell, self.big_l)
    }

    fn sampling(&self) -> Result<FluxSamplingConfig> {
        FluxSamplingConfig::new(self.n_rho_samples)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadConfig {
    /// km.
    pub a: f64,
    /// km.
    pub b: f64,
    /// km.
    pub dx: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    /// h.
    pub horizon_h: f64,
    /// h; defaults to the stability bound of the model and fleet.
    #[serde(default)]
    pub dt_h: Option<f64>,
    #[serde(default = "one")]
    pub record_every: usize,
}

fn one() -> usize {
    1
}

/// Initial macroscopic state. `w` defaults to the middle of its range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum InitialConfig {
    Uniform {
        rho: f64,
        #[serde(default)]
        w: Option<f64>,
    },
    /// Piecewise constant with a jump at `x_split`.
    Riemann {
        rho_left: f64,
        rho_right: f64,
        x_split: f64,
        #[serde(default)]
        w_left: Option<f64>,
        #[serde(default)]
        w_right: Option<f64>,
    },
    /// Kernel density estimate of the whole fleet at the start time; `w`
    /// matches the estimated speed.
    Kde {
        /// km.
        bandwidth: f64,
        #[serde(default)]
        normalization: KernelNormalization,
    },
}

impl Default for InitialConfig {
    fn default() -> Self {
        InitialConfig::Uniform { rho: 0.0, w: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum LeftConfig {
    /// veh/h; `w` of the entering vehicles defaults to the middle value.
    Flux {
        flux: f64,
        #[serde(default)]
        w: Option<f64>,
    },
    Density {
        rho: f64,
        #[serde(default)]
        w: Option<f64>,
    },
}

impl Default for LeftConfig {
    fn default() -> Self {
        LeftConfig::Flux { flux: 0.0, w: None }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum RightConfig {
    #[default]
    Free,
    Flux {
        flux: f64,
    },
    Density {
        rho: f64,
    },
}

impl RightConfig {
    fn boundary(self) -> RightBoundary {
        match self {
            RightConfig::Free => RightBoundary::Free,
            RightConfig::Flux { flux } => RightBoundary::Flux(flux),
            RightConfig::Density { rho } => RightBoundary::Density(rho),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConfig {
    #[serde(default)]
    pub left: LeftConfig,
    #[serde(default)]
    pub right: RightConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
#[derive(Default)]
pub enum FleetConfig {
    #[default]
    None,
    /// Trajectory file (see [`crate::io::load_trajectories`]).
    File { path: PathBuf },
    /// Oscillating platoon; `keep_every = k > 1` tracks every k-th vehicle
    /// except the last.
    Synthetic {
        n: usize,
        c: f64,
        v_max: f64,
        #[serde(default = "one_second")]
        sample_dt_s: f64,
        #[serde(default = "one")]
        keep_every: usize,
    },
    /// Follow-the-leader platoon starting at `x0` with random speed
    /// perturbations of relative size `amplitude`, drawn from the seed.
    Ftl {
        #[serde(default)]
        params: Option<FtlConfig>,
        x0: f64,
        #[serde(default)]
        amplitude: f64,
        #[serde(default = "one_tenth_second")]
        dt_s: f64,
    },
}

fn one_second() -> f64 {
    1.0
}

fn one_tenth_second() -> f64 {
    0.1
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    #[serde(flatten)]
    pub spec: NetworkSpec,
    /// km.
    pub dx: f64,
    pub sensors: PathBuf,
    /// h.
    #[serde(default)]
    pub warm_start_h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmissionsConfig {
    #[serde(default)]
    pub formula: EmissionFormula,
    /// Coefficient file; the petrol-car NOx set is used when absent.
    #[serde(default)]
    pub coefficients: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionConfig {
    /// Half-widths of the rectangle (km).
    pub lx: f64,
    pub ly: f64,
    /// km.
    pub dx: f64,
    pub dy: f64,
    /// km²/h.
    pub mu: f64,
    #[serde(default)]
    pub scaling: SourceScaling,
    pub strips: Vec<RoadStrip>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub model: ModelKind,
    #[serde(default)]
    pub seed: u64,
    pub diagram: DiagramConfig,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub road: Option<RoadConfig>,
    pub time: TimeConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub boundary: BoundaryConfig,
    #[serde(default)]
    pub fleet: FleetConfig,
    #[serde(default)]
    pub network: Option<NetworkConfig>,
    #[serde(default)]
    pub emissions: Option<EmissionsConfig>,
    #[serde(default)]
    pub diffusion: Option<DiffusionConfig>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl ScenarioConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |s| text[..s.start].matches('\n').count() + 1);
            Error::Parse {
                path: path.to_path_buf(),
                line,
                message: e.message().to_string(),
            }
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Check every parameter and referenced file; errors name the field.
    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, e: Error| match e {
            Error::Config(m) => Error::config(format!("{name}: {m}")),
            Error::Domain { .. } => Error::config(format!("{name}: {e}")),
            other => other,
        };
        match self.model {
            ModelKind::Lwr => {
                self.diagram.greenshields().map_err(|e| field("diagram", e))?;
            }
            ModelKind::Gsom | ModelKind::Network => {
                self.diagram.cgarz().map_err(|e| field("diagram", e))?;
            }
        }
        self.embedding.shape().map_err(|e| field("embedding", e))?;
        self.embedding.sampling().map_err(|e| field("embedding.n_rho_samples", e))?;
        if self.model == ModelKind::Gsom && self.embedding.mode == EmbeddingMode::AverageClosestVehicles {
            return Err(Error::config("embedding.mode: the second-order model supports \"cv\" and \"none\""));
        }
        if !(self.time.horizon_h > 0.0) {
            return Err(Error::config(format!("time.horizon_h: must be positive, got {}", self.time.horizon_h)));
        }
        if let Some(dt) = self.time.dt_h {
            if !(dt > 0.0) {
                return Err(Error::config(format!("time.dt_h: must be positive, got {dt}")));
            }
        }
        if self.time.record_every == 0 {
            return Err(Error::config("time.record_every: must be at least 1"));
        }
        match self.model {
            ModelKind::Lwr | ModelKind::Gsom => {
                let road = self.road.ok_or_else(|| Error::config("road: required for single-road models"))?;
                SpatialGrid::with_spacing(road.a, road.b, road.dx).map_err(|e| field("road", e))?;
                if self.network.is_some() {
                    return Err(Error::config("network: only used by the network model"));
                }
            }
            ModelKind::Network => {
                let net = self.network.as_ref().ok_or_else(|| Error::config("network: required for the network model"))?;
                let sensors = self.resolve(&net.sensors);
                if !sensors.is_file() {
                    return Err(Error::config(format!("network.sensors: {} does not exist", sensors.display())));
                }
                if !(net.warm_start_h >= 0.0) {
                    return Err(Error::config("network.warm_start_h: must be non-negative"));
                }
                let diag = self.diagram.cgarz()?;
                Network::new(&net.spec, diag, self.gsom_config()?, net.dx).map_err(|e| field("network", e))?;
            }
        }
        if let FleetConfig::File { path } = &self.fleet {
            let p = self.resolve(path);
            if !p.is_file() {
                return Err(Error::config(format!("fleet.path: {} does not exist", p.display())));
            }
        }
        if let FleetConfig::Synthetic { n, c, v_max, sample_dt_s, keep_every } = self.fleet {
            generate_synthetic(n, c, self.time.horizon_h, v_max).map_err(|e| field("fleet", e))?;
            if !(sample_dt_s > 0.0) || keep_every == 0 {
                return Err(Error::config("fleet: sample_dt_s and keep_every must be positive"));
            }
        }
        if let FleetConfig::Ftl { params, dt_s, amplitude, .. } = self.fleet {
            params.unwrap_or_default().validate().map_err(|e| field("fleet.params", e))?;
            if !(dt_s > 0.0) || !(amplitude >= 0.0) {
                return Err(Error::config("fleet: dt_s must be positive and amplitude non-negative"));
            }
        }
        if let InitialConfig::Kde { bandwidth, normalization } = self.initial {
            KdeConfig::new(bandwidth, normalization).map_err(|e| field("initial", e))?;
            if matches!(self.fleet, FleetConfig::None) {
                return Err(Error::config("initial: kde needs a fleet"));
            }
        }
        if let Some(em) = &self.emissions {
            if self.model == ModelKind::Lwr {
                return Err(Error::config("emissions: need a second-order model (gsom or network)"));
            }
            if let Some(p) = &em.coefficients {
                EmissionCoefficients::load(&self.resolve(p)).map_err(|e| field("emissions.coefficients", e))?;
            }
        }
        if let Some(d) = &self.diffusion {
            if self.emissions.is_none() {
                return Err(Error::config("diffusion: needs an emissions block"));
            }
            Domain2D::new(d.lx, d.ly, d.dx, d.dy, d.strips.clone()).map_err(|e| field("diffusion", e))?;
            if !(d.mu >= 0.0) {
                return Err(Error::config("diffusion.mu: must be non-negative"));
            }
        }
        Ok(())
    }

    fn gsom_config(&self) -> Result<GsomConfig> {
        Ok(GsomConfig {
            mode: self.embedding.mode,
            shape: self.embedding.shape()?,
            sampling: self.embedding.sampling()?,
        })
    }

    fn lwr_config(&self) -> Result<LwrConfig> {
        Ok(LwrConfig {
            mode: self.embedding.mode,
            shape: self.embedding.shape()?,
            sampling: self.embedding.sampling()?,
        })
    }

    /// Fleet described by the `fleet` block.
    pub fn build_fleet(&self) -> Result<Fleet> {
        match &self.fleet {
            FleetConfig::None => Ok(Fleet::empty()),
            FleetConfig::File { path } => load_trajectories(&self.resolve(path)),
            &FleetConfig::Synthetic {
                n,
                c,
                v_max,
                sample_dt_s,
                keep_every,
            } => {
                let platoon = generate_synthetic(n, c, self.time.horizon_h, v_max)?;
                let fleet = platoon.to_fleet(sample_dt_s / SECONDS_PER_HOUR, 1)?;
                Ok(fleet.select(|i| tracked(i, n, keep_every)))
            }
            &FleetConfig::Ftl {
                params,
                x0,
                amplitude,
                dt_s,
            } => {
                let cfg = params.unwrap_or_default();
                let dt = dt_s / SECONDS_PER_HOUR;
                let steps = (self.time.horizon_h / dt).ceil() as usize;
                let initial = FtlState::perturbed(&cfg, x0, amplitude, self.seed);
                simulate_ftl(&cfg, initial, dt, steps, 1, 1)
            }
        }
    }
}

/// Whether vehicle `i` of `n` is tracked when keeping every `k`-th one;
/// `k > 1` leaves out the last vehicle so that `n = 41` gives 20 and 10.
pub fn tracked(i: usize, n: usize, k: usize) -> bool {
    k <= 1 || (i.is_multiple_of(k) && i + 1 < n)
}

/// One written file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub quantity: String,
    pub path: PathBuf,
    pub sha256: String,
}

/// Run summary. Everything except `wall_clock_s` is deterministic given the
/// configuration; `digest` covers exactly those fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub model: ModelKind,
    pub seed: u64,
    pub dt_h: f64,
    /// Stability bound the step was checked against (h).
    pub cfl_bound_h: f64,
    pub diffusion_dt_bound_h: Option<f64>,
    pub steps: usize,
    pub warm_start_steps: usize,
    pub record_every: usize,
    pub clamped_accelerations: usize,
    pub files: Vec<ManifestFile>,
    pub digest: String,
    pub wall_clock_s: f64,
}

/// Dumps and run facts, before anything is written.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub dumps: Vec<FieldDump>,
    pub dt_h: f64,
    pub cfl_bound_h: f64,
    pub diffusion_dt_bound_h: Option<f64>,
    pub steps: usize,
    pub warm_start_steps: usize,
    pub clamped_accelerations: usize,
}

struct EmissionModel {
    formula: EmissionFormula,
    coeffs: EmissionCoefficients,
    matrix: ExpMatrix,
}

struct Diffuser {
    domain: Domain2D,
    mu: f64,
    scaling: SourceScaling,
    psi: Vec<f64>,
}

impl Diffuser {
    /// Advance with emission rows keyed by road id.
    fn step(&mut self, rows: &BTreeMap<u32, (Vec<f64>, f64)>, dt: f64) -> Result<()> {
        let fine_dx = self.domain.dx();
        let refined = self
            .domain
            .strips
            .iter()
            .map(|s| match rows.get(&s.road_id) {
                Some((row, dx)) => refine_emissions(row, *dx, fine_dx),
                None => Err(Error::config(format!("diffusion: no road {} to place", s.road_id))),
            })
            .collect::<Result<Vec<_>>>()?;
        let source = build_source(&refined, &self.domain, self.scaling)?;
        self.psi = diffusion_step(&self.psi, &source, self.mu, dt, &self.domain)?;
        Ok(())
    }

    fn dump(&self, dt: f64, record_every: usize) -> FieldDump {
        let mut d = FieldDump::new("psi", "", self.domain.len());
        d.set_meta("lx_km", self.domain.lx);
        d.set_meta("ly_km", self.domain.ly);
        d.set_meta("nx", self.domain.nx);
        d.set_meta("ny", self.domain.ny);
        d.set_meta("dt_h", dt);
        d.set_meta("record_every", record_every);
        d
    }
}

impl ScenarioConfig {
    fn emission_model(&self) -> Result<Option<EmissionModel>> {
        let Some(em) = &self.emissions else {
            return Ok(None);
        };
        let coeffs = match &em.coefficients {
            Some(p) => EmissionCoefficients::load(&self.resolve(p))?,
            None => EmissionCoefficients::petrol_car_nox(),
        };
        Ok(Some(EmissionModel {
            formula: em.formula,
            coeffs,
            matrix: ExpMatrix::default(),
        }))
    }

    fn diffuser(&self) -> Result<Option<Diffuser>> {
        let Some(d) = &self.diffusion else {
            return Ok(None);
        };
        let domain = Domain2D::new(d.lx, d.ly, d.dx, d.dy, d.strips.clone())?;
        let psi = vec![0.0; domain.len()];
        Ok(Some(Diffuser {
            domain,
            mu: d.mu,
            scaling: d.scaling,
            psi,
        }))
    }
}

/// Run the configured scenario in memory.
pub fn simulate(config: &ScenarioConfig) -> Result<RunOutput> {
    config.validate()?;
    match config.model {
        ModelKind::Lwr => run_lwr(config),
        ModelKind::Gsom => run_gsom(config),
        ModelKind::Network => run_network(config),
    }
}

fn should_record(n: usize, steps: usize, every: usize) -> bool {
    n.is_multiple_of(every) || n == steps
}

fn step_size(config: &ScenarioConfig, bound: f64) -> Result<(f64, TimeGrid)> {
    let dt = config.time.dt_h.unwrap_or(bound);
    let time = TimeGrid::new(config.time.horizon_h, dt)?;
    Ok((time.dt, time))
}

fn run_lwr(config: &ScenarioConfig) -> Result<RunOutput> {
    let road = config.road.expect("validated");
    let grid = SpatialGrid::with_spacing(road.a, road.b, road.dx)?;
    let law = config.diagram.greenshields()?;
    let solver = LwrSolver::new(law, grid, config.lwr_config()?)?;
    let fleet = config.build_fleet()?;
    let bound = solver.max_dt(&fleet);
    let (dt, time) = step_size(config, bound)?;
    let mut state = MacroState1 {
        rho: initial_density(config, &grid, &fleet)?,
    };
    let left = match config.boundary.left {
        LeftConfig::Flux { flux, .. } => LeftBoundary::Flux(flux),
        LeftConfig::Density { rho, .. } => LeftBoundary::Density(rho),
    };
    let right = config.boundary.right.boundary();
    let every = config.time.record_every;
    let mut rho_dump = FieldDump::on_grid("rho", "veh/km", &grid, dt, every);
    let mut speed_dump = FieldDump::on_grid("speed", "km/h", &grid, dt, every);
    for n in 0..=time.n_steps {
        let t = time.time(n);
        let snapshot = fleet.snapshot(t);
        let prep = solver.prepare(&state.rho, &snapshot);
        if should_record(n, time.n_steps, every) {
            rho_dump.push(t, state.rho.clone())?;
            speed_dump.push(t, prep.speed.clone())?;
        }
        if n == time.n_steps {
            break;
        }
        crate::lwr::check_cfl(dt, bound)?;
        let inflow = solver.inflow(&prep, left);
        let outflow = solver.outflow(&state.rho, &prep, right);
        state = solver.advance(&state, &prep, inflow, outflow, dt);
    }
    Ok(RunOutput {
        dumps: vec![rho_dump, speed_dump],
        dt_h: dt,
        cfl_bound_h: bound,
        diffusion_dt_bound_h: None,
        steps: time.n_steps,
        warm_start_steps: 0,
        clamped_accelerations: 0,
    })
}

fn initial_density(config: &ScenarioConfig, grid: &SpatialGrid, fleet: &Fleet) -> Result<Vec<f64>> {
    Ok(match config.initial {
        InitialConfig::Uniform { rho, .. } => vec![rho; grid.n_cells()],
        InitialConfig::Riemann {
            rho_left,
            rho_right,
            x_split,
            ..
        } => grid
            .centers()
            .into_iter()
            .map(|x| if x < x_split { rho_left } else { rho_right })
            .collect(),
        InitialConfig::Kde { bandwidth, normalization } => {
            kde_density(fleet, 0.0, &KdeConfig::new(bandwidth, normalization)?, grid)
        }
    })
}

/// Density and invariant from the `initial` block. For `kde`, `w` matches
/// the kernel speed estimate.
fn initial_state2(config: &ScenarioConfig, diag: &CgarzDiagram, grid: &SpatialGrid, fleet: &Fleet) -> Result<MacroState2> {
    let rho = initial_density(config, grid, fleet)?;
    let w_mid = diag.w_mid();
    let w = match config.initial {
        InitialConfig::Uniform { w, .. } => vec![w.unwrap_or(w_mid); rho.len()],
        InitialConfig::Riemann {
            x_split,
            w_left,
            w_right,
            ..
        } => grid
            .centers()
            .into_iter()
            .map(|x| if x < x_split { w_left } else { w_right }.unwrap_or(w_mid))
            .collect(),
        InitialConfig::Kde { bandwidth, normalization } => {
            let speed = kde_velocity(fleet, 0.0, &KdeConfig::new(bandwidth, normalization)?, grid)?;
            rho.iter()
                .zip(&speed)
                .map(|(&r, &v)| diag.invert_speed_in_w(r.min(diag.rho_max), v))
                .collect::<Result<Vec<_>>>()?
        }
    };
    Ok(MacroState2 { rho, w })
}

/// Speed, acceleration and emission fields of one road state.
fn road_fields(
    solver: &GsomSolver,
    state: &MacroState2,
    snapshot: &crate::lagrangian::FleetSnapshot,
    em: &EmissionModel,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, usize)> {
    let speed = solver.speed_field(state, snapshot);
    let accel = solver.acceleration_field(state, snapshot);
    let (v, a, clamped) = emission_kinematics(&speed, &accel);
    let e = emission_field(em.formula, &state.rho, &v, &a, solver.grid.dx(), &em.coeffs, &em.matrix)?;
    Ok((speed, accel, e, clamped))
}

fn run_gsom(config: &ScenarioConfig) -> Result<RunOutput> {
    let road = config.road.expect("validated");
    let grid = SpatialGrid::with_spacing(road.a, road.b, road.dx)?;
    let diag = config.diagram.cgarz()?;
    let solver = GsomSolver::new(diag, grid, config.gsom_config()?)?;
    let fleet = config.build_fleet()?;
    let bound = solver.max_dt(&fleet);
    let (dt, time) = step_size(config, bound)?;
    let mut state = initial_state2(config, &diag, &grid, &fleet)?;
    let left = match config.boundary.left {
        LeftConfig::Flux { flux, w } => GsomLeft::Flux {
            flux,
            w: w.unwrap_or(diag.w_mid()),
        },
        LeftConfig::Density { rho, w } => GsomLeft::Density {
            rho,
            w: w.unwrap_or(diag.w_mid()),
        },
    };
    let right = config.boundary.right.boundary();
    let emissions = config.emission_model()?;
    let mut diffuser = config.diffuser()?;
    let every = config.time.record_every;
    let mut dumps: Vec<FieldDump> = ["rho:veh/km", "w:", "speed:km/h"]
        .iter()
        .chain(if emissions.is_some() {
            ["accel:km/h2", "emission:g/s"].iter()
        } else {
            [].iter()
        })
        .map(|q| {
            let (name, unit) = q.split_once(':').expect("name:unit");
            FieldDump::on_grid(name, unit, &grid, dt, every)
        })
        .collect();
    let mut psi_dump = diffuser.as_ref().map(|d| d.dump(dt, every));
    let mut clamped = 0;
    for n in 0..=time.n_steps {
        let t = time.time(n);
        let snapshot = fleet.snapshot(t);
        let record = should_record(n, time.n_steps, every);
        let mut rows = BTreeMap::new();
        if let Some(em) = &emissions {
            let (speed, accel, e, c) = road_fields(&solver, &state, &snapshot, em)?;
            clamped += c;
            if record {
                for (d, row) in dumps.iter_mut().zip([state.rho.clone(), state.w.clone(), speed, accel, e.clone()]) {
                    d.push(t, row)?;
                }
            }
            rows.insert(1, (e, grid.dx()));
        } else if record {
            let speed = solver.speed_field(&state, &snapshot);
            for (d, row) in dumps.iter_mut().zip([state.rho.clone(), state.w.clone(), speed]) {
                d.push(t, row)?;
            }
        }
        if let (Some(diff), Some(d)) = (&diffuser, &mut psi_dump) {
            if record {
                d.push(t, diff.psi.clone())?;
            }
        }
        if n == time.n_steps {
            break;
        }
        if let Some(diff) = &mut diffuser {
            diff.step(&rows, dt)?;
        }
        crate::lwr::check_cfl(dt, bound)?;
        state = solver.step_unchecked(&state, &snapshot, dt, left, right)?;
    }
    dumps.extend(psi_dump);
    Ok(RunOutput {
        dumps,
        dt_h: dt,
        cfl_bound_h: bound,
        diffusion_dt_bound_h: config
            .diffusion
            .as_ref()
            .map(|d| crate::diffusion::stable_dt(d.mu, d.dx, d.dy)),
        steps: time.n_steps,
        warm_start_steps: 0,
        clamped_accelerations: clamped,
    })
}

fn run_network(config: &ScenarioConfig) -> Result<RunOutput> {
    let net_cfg = config.network.as_ref().expect("validated");
    let diag = config.diagram.cgarz()?;
    let mut net = Network::new(&net_cfg.spec, diag, config.gsom_config()?, net_cfg.dx)?;
    let sensors = load_sensors(&config.resolve(&net_cfg.sensors))?;
    let all = config.build_fleet()?;
    let fleets: RoadFleets = net.roads.iter().map(|r| (r.id, all.on_road(r.id))).collect();
    let bound = net.max_dt(&fleets);
    let dt = config.time.dt_h.unwrap_or(bound);
    let warm_start_steps = if net_cfg.warm_start_h > 0.0 {
        net.warm_start(&sensors, &fleets, net_cfg.warm_start_h, dt)?
    } else {
        0
    };
    let t0 = warm_start_steps as f64 * dt;
    let time = TimeGrid::new(config.time.horizon_h, dt)?;
    let emissions = config.emission_model()?;
    let mut diffuser = config.diffuser()?;
    let every = config.time.record_every;
    let mut dumps: BTreeMap<(u32, &str), FieldDump> = BTreeMap::new();
    for r in &net.roads {
        let mut names = vec![("rho", "veh/km"), ("w", "")];
        if emissions.is_some() {
            names.push(("emission", "g/s"));
        }
        for (q, unit) in names {
            let mut d = FieldDump::on_grid(format!("{q}_road{}", r.id), unit, r.grid(), dt, every);
            d.set_meta("road_id", r.id);
            d.set_meta("t0_h", t0);
            dumps.insert((r.id, q), d);
        }
    }
    let mut psi_dump = diffuser.as_ref().map(|d| d.dump(dt, every));
    let mut clamped = 0;
    for n in 0..=time.n_steps {
        let t = t0 + time.time(n);
        let record = should_record(n, time.n_steps, every);
        let mut rows = BTreeMap::new();
        for r in &net.roads {
            if record {
                dumps.get_mut(&(r.id, "rho")).expect("created").push(t, r.state.rho.clone())?;
                dumps.get_mut(&(r.id, "w")).expect("created").push(t, r.state.w.clone())?;
            }
            if let Some(em) = &emissions {
                let snapshot = fleets[&r.id].snapshot(t);
                let (_, _, e, c) = road_fields(&r.solver, &r.state, &snapshot, em)?;
                clamped += c;
                if record {
                    dumps.get_mut(&(r.id, "emission")).expect("created").push(t, e.clone())?;
                }
                rows.insert(r.id, (e, r.grid().dx()));
            }
        }
        if let (Some(diff), Some(d)) = (&diffuser, &mut psi_dump) {
            if record {
                d.push(t, diff.psi.clone())?;
            }
        }
        if n == time.n_steps {
            break;
        }
        if let Some(diff) = &mut diffuser {
            diff.step(&rows, dt)?;
        }
        net.step(t, &fleets, &sensors, dt)?;
    }
    let mut out: Vec<FieldDump> = dumps.into_values().collect();
    out.extend(psi_dump);
    Ok(RunOutput {
        dumps: out,
        dt_h: dt,
        cfl_bound_h: bound,
        diffusion_dt_bound_h: config
            .diffusion
            .as_ref()
            .map(|d| crate::diffusion::stable_dt(d.mu, d.dx, d.dy)),
        steps: time.n_steps,
        warm_start_steps,
        clamped_accelerations: clamped,
    })
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Run the scenario, write one file per dump plus `manifest.json` into
/// `out_dir`, and return the manifest.
pub fn run_scenario(config: &ScenarioConfig, out_dir: &Path) -> Result<Manifest> {
    let start = Instant::now();
    let run = simulate(config)?;
    let paths = write_fields(&run.dumps, out_dir)?;
    let mut files = Vec::with_capacity(paths.len());
    for (d, p) in run.dumps.iter().zip(&paths) {
        let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
        files.push(ManifestFile {
            quantity: d.quantity.clone(),
            path: PathBuf::from(d.file_name()),
            sha256: sha256_hex(&bytes),
        });
    }
    let mut manifest = Manifest {
        config_hash: config.hash(),
        model: config.model,
        seed: config.seed,
        dt_h: run.dt_h,
        cfl_bound_h: run.cfl_bound_h,
        diffusion_dt_bound_h: run.diffusion_dt_bound_h,
        steps: run.steps,
        warm_start_steps: run.warm_start_steps,
        record_every: config.time.record_every,
        clamped_accelerations: run.clamped_accelerations,
        files,
        digest: String::new(),
        wall_clock_s: 0.0,
    };
    let body = serde_json::to_string(&manifest).expect("manifest serializes");
    manifest.digest = sha256_hex(body.as_bytes());
    manifest.wall_clock_s = start.elapsed().as_secs_f64();
    let path = out_dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Three vehicles leaving `x = 1 km` with spacings of 1 m at 10, 25 and
/// 50 km/h; they separate as the simulation proceeds.
pub fn spreading_trio(horizon: f64) -> Result<Fleet> {
    let trajectories = [(1.0, 10.0), (1.001, 25.0), (1.002, 50.0)]
        .iter()
        .enumerate()
        .map(|(i, &(x0, v))| {
            let samples = [0.0, horizon]
                .iter()
                .map(|&t| TrajectorySample {
                    t,
                    x: x0 + v * t,
                    v: Some(v),
                })
                .collect();
            Trajectory::new(format!("p{}", i + 1), 1, samples)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Fleet::new(trajectories))
}

/// Macroscopic versus microscopic emissions for the oscillating platoon on
/// a 10 km road.
#[derive(Debug, Clone, PartialEq)]
pub struct PlatoonStudy {
    pub n: usize,
    pub c: f64,
    /// h.
    pub horizon: f64,
    /// km.
    pub road_length: f64,
    pub dx: f64,
    /// h.
    pub dt: f64,
    pub kde: KdeConfig,
    /// Cells and vehicles counted lie in `[window.0, window.1]` (km).
    pub window: (f64, f64),
    pub diagram: CgarzDiagram,
    pub shape: CutoffShape,
    pub formula: EmissionFormula,
    pub coeffs: EmissionCoefficients,
    pub matrix: ExpMatrix,
}

impl Default for PlatoonStudy {
    fn default() -> Self {
        Self {
            n: 41,
            c: 0.3,
            horizon: 20.0 / 60.0,
            road_length: 10.0,
            dx: 0.1,
            dt: 0.2 / SECONDS_PER_HOUR,
            kde: KdeConfig::new(0.1, KernelNormalization::Standard).expect("valid bandwidth"),
            window: (4.0, 7.0),
            diagram: CgarzDiagram::with_standard_invariant_range(100.0, 10.0, 90.0).expect("valid diagram"),
            shape: CutoffShape::new(0.2, 0.6).expect("valid cutoff"),
            formula: EmissionFormula::Max,
            coeffs: EmissionCoefficients::petrol_car_nox(),
            matrix: ExpMatrix::default(),
        }
    }
}

/// Emission totals over the window at each step and their time-L¹ gap.
#[derive(Debug, Clone, PartialEq)]
pub struct PlatoonComparison {
    pub times: Vec<f64>,
    /// Macroscopic total (g/s).
    pub macro_totals: Vec<f64>,
    /// Microscopic total (g/s).
    pub micro_totals: Vec<f64>,
    /// `sum |E - e| dt` with `dt` in hours.
    pub l1_error: f64,
    pub tracked: usize,
}

impl PlatoonStudy {
    /// Compare totals when the model tracks every `keep_every`-th vehicle
    /// (see [`tracked`]); `None` runs without embedding.
    pub fn compare(&self, keep_every: Option<usize>) -> Result<PlatoonComparison> {
        let platoon = generate_synthetic(self.n, self.c, self.horizon, self.diagram.v_max)?;
        let full = platoon.to_fleet(self.dt, 1)?;
        let grid = SpatialGrid::with_spacing(0.0, self.road_length, self.dx)?;
        let time = TimeGrid::new(self.horizon, self.dt)?;
        let (mode, fleet) = match keep_every {
            Some(k) => (EmbeddingMode::ClosestVehicle, full.select(|i| tracked(i, self.n, k))),
            None => (EmbeddingMode::None, Fleet::empty()),
        };
        let solver = GsomSolver::new(
            self.diagram,
            grid,
            GsomConfig {
                mode,
                shape: self.shape,
                sampling: FluxSamplingConfig::default(),
            },
        )?;
        let rho = kde_density(&full, 0.0, &self.kde, &grid);
        let speed = kde_velocity(&full, 0.0, &self.kde, &grid)?;
        let w = rho
            .iter()
            .zip(&speed)
            .map(|(&r, &v)| self.diagram.invert_speed_in_w(r.min(self.diagram.rho_max), v))
            .collect::<Result<Vec<_>>>()?;
        let mut state = MacroState2 { rho, w };
        let em = EmissionModel {
            formula: self.formula,
            coeffs: self.coeffs,
            matrix: self.matrix,
        };
        let left = GsomLeft::Flux {
            flux: 0.0,
            w: self.diagram.w_mid(),
        };
        let in_window = |x: f64| x >= self.window.0 && x <= self.window.1;
        let cells: Vec<usize> = (0..grid.n_cells()).filter(|&j| in_window(grid.center(j))).collect();
        let mut out = PlatoonComparison {
            times: Vec::new(),
            macro_totals: Vec::new(),
            micro_totals: Vec::new(),
            l1_error: 0.0,
            tracked: fleet.len(),
        };
        for n in 0..=time.n_steps {
            let t = time.time(n);
            let snapshot = fleet.snapshot(t);
            if n > 0 {
                let (_, _, e, _) = road_fields(&solver, &state, &snapshot, &em)?;
                let macro_total: f64 = cells.iter().map(|&j| e[j]).sum();
                let mut micro_total = 0.0;
                for i in 0..self.n {
                    if in_window(platoon.position(i, t)) {
                        let v = crate::units::kmh_to_ms(platoon.speed(i, t));
                        let a = crate::units::kmh2_to_ms2(platoon.acceleration(i, t));
                        micro_total += crate::emissions::emission_micro(self.formula, v, a, &self.coeffs, &self.matrix)?;
                    }
                }
                out.times.push(t);
                out.macro_totals.push(macro_total);
                out.micro_totals.push(micro_total);
                out.l1_error += (macro_total - micro_total).abs() * self.dt;
            }
            if n == time.n_steps {
                break;
            }
            state = solver.step_unchecked(&state, &snapshot, self.dt, left, RightBoundary::Free)?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
model = "gsom"
seed = 7

[diagram]
kind = "cgarz"
rho_max = 100.0
rho_f = 10.0
v_max = 90.0

[road]
a = 0.0
b = 2.0
dx = 0.1

[time]
horizon_h = 0.01
dt_h = 0.0001
record_every = 10

[initial]
kind = "riemann"
rho_left = 40.0
rho_right = 20.0
x_split = 1.0

[emissions]
formula = "max"
"#;

    #[test]
    fn parses_and_validates() {
        let cfg = ScenarioConfig::parse(BASIC, Path::new("/tmp/s.toml")).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.embedding.mode, EmbeddingMode::ClosestVehicle);
        assert_eq!(cfg.base_dir, PathBuf::from("/tmp"));
    }

    #[test]
    fn parse_errors_carry_lines() {
        let bad = BASIC.replace("dx = 0.1", "dx = \"wide\"");
        match ScenarioConfig::parse(&bad, Path::new("s.toml")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 14),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn validation_names_fields() {
        let cfg = ScenarioConfig::parse(&BASIC.replace("record_every = 10", "record_every = 0"), Path::new("s.toml")).unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("time.record_every"));
        let cfg = ScenarioConfig::parse(&BASIC.replace("model = \"gsom\"", "model = \"lwr\""), Path::new("s.toml")).unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("diagram"));
        let cfg = ScenarioConfig::parse(&BASIC.replace("b = 2.0", "b = -2.0"), Path::new("s.toml")).unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("road"));
    }

    #[test]
    fn simulate_records_every_kth_step() {
        let cfg = ScenarioConfig::parse(BASIC, Path::new("s.toml")).unwrap();
        let run = simulate(&cfg).unwrap();
        assert_eq!(run.steps, 100);
        let names: Vec<&str> = run.dumps.iter().map(|d| d.quantity.as_str()).collect();
        assert_eq!(names, ["rho", "w", "speed", "accel", "emission"]);
        assert!(run.dumps.iter().all(|d| d.rows.len() == 11));
    }

    #[test]
    fn tracked_subsets() {
        assert_eq!((0..41).filter(|&i| tracked(i, 41, 1)).count(), 41);
        assert_eq!((0..41).filter(|&i| tracked(i, 41, 2)).count(), 20);
        assert_eq!((0..41).filter(|&i| tracked(i, 41, 4)).count(), 10);
    }
}
