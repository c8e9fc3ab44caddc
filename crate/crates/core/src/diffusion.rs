//! Explicit finite-difference solver for `psi_t - mu Lap(psi) = S` on a
//! rectangle with zero-flux boundaries, fed by road emissions.
//!
//! Roads are horizontal strips one cell tall. Each traffic cell's emission
//! rate is copied onto the fine cells it covers and divided by a cell
//! volume to obtain the source.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Placement of a road in the 2D domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoadStrip {
    pub road_id: u32,
    /// Domain x-coordinate of the road's origin (km).
    pub x_start: f64,
    /// Domain y-coordinate of the strip (km).
    pub y: f64,
    /// The road runs towards decreasing x.
    #[serde(default)]
    pub reversed: bool,
}

/// Volume the emission rate of one fine cell is spread over.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SourceScaling {
    /// `S = E / dx³`.
    #[default]
    CubicCell,
    /// `S = E / (dx dy H)` with mixing height `H` (km).
    MixingHeight { height: f64 },
}

/// Cell-centred grid on `[-lx, lx] x [-ly, ly]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain2D {
    pub lx: f64,
    pub ly: f64,
    pub nx: usize,
    pub ny: usize,
    pub strips: Vec<RoadStrip>,
}

impl Domain2D {
    pub fn new(lx: f64, ly: f64, dx: f64, dy: f64, strips: Vec<RoadStrip>) -> Result<Self> {
        if !(lx > 0.0 && ly > 0.0 && dx > 0.0 && dy > 0.0) {
            return Err(Error::config(format!(
                "diffusion domain: need positive sizes, got lx={lx}, ly={ly}, dx={dx}, dy={dy}"
            )));
        }
        let nx = (2.0 * lx / dx).round() as usize;
        let ny = (2.0 * ly / dy).round() as usize;
        if nx == 0 || ny == 0 {
            return Err(Error::config("diffusion domain: grid has no cells"));
        }
        let d = Self { lx, ly, nx, ny, strips };
        for s in &d.strips {
            let first = if s.reversed {
                s.x_start - 0.5 * dx
            } else {
                s.x_start + 0.5 * dx
            };
            if d.row_of(s.y).is_none() || d.col_of(first).is_none() {
                return Err(Error::config(format!(
                    "diffusion domain: road {} starts outside the rectangle",
                    s.road_id
                )));
            }
        }
        Ok(d)
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.lx / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        2.0 * self.ly / self.ny as f64
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.nx + col
    }

    pub fn col_of(&self, x: f64) -> Option<usize> {
        let c = ((x + self.lx) / self.dx()).floor();
        (c >= 0.0 && (c as usize) < self.nx).then_some(c as usize)
    }

    pub fn row_of(&self, y: f64) -> Option<usize> {
        let r = ((y + self.ly) / self.dy()).floor();
        (r >= 0.0 && (r as usize) < self.ny).then_some(r as usize)
    }

    /// `sum psi dx dy`.
    pub fn integral(&self, psi: &[f64]) -> f64 {
        psi.iter().sum::<f64>() * self.dx() * self.dy()
    }
}

/// Copy each coarse value onto the `traffic_dx / fine_dx` fine cells it
/// covers.
pub fn refine_emissions(coarse: &[f64], traffic_dx: f64, fine_dx: f64) -> Result<Vec<f64>> {
    let ratio = traffic_dx / fine_dx;
    let k = ratio.round();
    if !(k >= 1.0) || (ratio - k).abs() > 1e-9 * ratio {
        return Err(Error::config(format!(
            "refinement: traffic dx {traffic_dx} is not a multiple of the diffusion dx {fine_dx}"
        )));
    }
    let k = k as usize;
    Ok(coarse.iter().flat_map(|&e| std::iter::repeat_n(e, k)).collect())
}

/// Source field from refined emission rows, one per road, in the order of
/// `domain.strips`. Fine cells falling outside the rectangle are dropped.
pub fn build_source(rows: &[Vec<f64>], domain: &Domain2D, scaling: SourceScaling) -> Result<Vec<f64>> {
    if rows.len() != domain.strips.len() {
        return Err(Error::config(format!(
            "source: {} emission rows for {} road strips",
            rows.len(),
            domain.strips.len()
        )));
    }
    let dx = domain.dx();
    let volume = match scaling {
        SourceScaling::CubicCell => dx * dx * dx,
        SourceScaling::MixingHeight { height } => {
            if !(height > 0.0) {
                return Err(Error::config(format!("source: mixing height must be positive, got {height}")));
            }
            dx * domain.dy() * height
        }
    };
    let mut s = vec![0.0; domain.len()];
    for (strip, row) in domain.strips.iter().zip(rows) {
        let r = domain.row_of(strip.y).expect("validated at construction");
        for (k, &e) in row.iter().enumerate() {
            let offset = (k as f64 + 0.5) * dx;
            let x = if strip.reversed {
                strip.x_start - offset
            } else {
                strip.x_start + offset
            };
            if let Some(c) = domain.col_of(x) {
                s[domain.index(r, c)] += e / volume;
            }
        }
    }
    Ok(s)
}

/// `1 / (2 mu (1/dx² + 1/dy²))`; infinite for `mu = 0`.
pub fn stable_dt(mu: f64, dx: f64, dy: f64) -> f64 {
    if mu <= 0.0 {
        return f64::INFINITY;
    }
    1.0 / (2.0 * mu * (1.0 / (dx * dx) + 1.0 / (dy * dy)))
}

/// One explicit Euler step with a five-point Laplacian and mirrored ghost
/// cells.
pub fn diffusion_step(psi: &[f64], source: &[f64], mu: f64, dt: f64, domain: &Domain2D) -> Result<Vec<f64>> {
    if psi.len() != domain.len() || source.len() != domain.len() {
        return Err(Error::config("diffusion: field size does not match the domain"));
    }
    if !(mu >= 0.0) {
        return Err(Error::config(format!("diffusion: mu must be non-negative, got {mu}")));
    }
    let (dx, dy) = (domain.dx(), domain.dy());
    let bound = stable_dt(mu, dx, dy);
    if !(dt > 0.0) || dt > bound * (1.0 + 1e-12) {
        return Err(Error::Cfl { dt, bound });
    }
    let (nx, ny) = (domain.nx, domain.ny);
    let (cx, cy) = (mu * dt / (dx * dx), mu * dt / (dy * dy));
    let mut out = vec![0.0; psi.len()];
    for r in 0..ny {
        for c in 0..nx {
            let i = r * nx + c;
            let p = psi[i];
            let west = if c == 0 { p } else { psi[i - 1] };
            let east = if c + 1 == nx { p } else { psi[i + 1] };
            let south = if r == 0 { p } else { psi[i - nx] };
            let north = if r + 1 == ny { p } else { psi[i + nx] };
            out[i] = p + cx * (west - 2.0 * p + east) + cy * (south - 2.0 * p + north) + dt * source[i];
        }
    }
    Ok(out)
}
