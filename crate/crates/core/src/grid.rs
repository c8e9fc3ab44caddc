use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform 1D finite-volume grid on `[a, b]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    a: f64,
    b: f64,
    n_cells: usize,
}

impl SpatialGrid {
    pub fn new(a: f64, b: f64, n_cells: usize) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) || b <= a {
            return Err(Error::config(format!("grid: need a < b, got a={a}, b={b}")));
        }
        if n_cells == 0 {
            return Err(Error::config("grid: n_cells must be positive"));
        }
        Ok(Self { a, b, n_cells })
    }

    /// Grid on `[a, b]` with cells of (approximately) the requested width.
    pub fn with_spacing(a: f64, b: f64, dx: f64) -> Result<Self> {
        if !(dx > 0.0) {
            return Err(Error::config(format!("grid: dx must be positive, got {dx}")));
        }
        let n = ((b - a) / dx).round().max(1.0) as usize;
        Self::new(a, b, n)
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn dx(&self) -> f64 {
        (self.b - self.a) / self.n_cells as f64
    }

    /// Center of cell `j`: `a + (j + 1/2) dx`.
    pub fn center(&self, j: usize) -> f64 {
        self.a + (j as f64 + 0.5) * self.dx()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_cells).map(|j| self.center(j)).collect()
    }

    /// Index of the cell containing `x`, if any.
    pub fn cell_of(&self, x: f64) -> Option<usize> {
        if x < self.a || x > self.b {
            return None;
        }
        let j = ((x - self.a) / self.dx()).floor() as usize;
        Some(j.min(self.n_cells - 1))
    }
}

/// Uniform time discretisation of `[0, horizon]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub dt: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !(horizon >= 0.0) {
            return Err(Error::config(format!(
                "time grid: need dt > 0 and horizon >= 0, got dt={dt}, horizon={horizon}"
            )));
        }
        let n_steps = (horizon / dt - 1e-9).ceil().max(0.0) as usize;
        Ok(Self {
            horizon,
            dt,
            n_steps,
        })
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }
}
