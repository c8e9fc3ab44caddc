//! Fundamental diagrams.
//!
//! [`GreenshieldsDiagram`] is the first-order speed law used by the LWR
//! solver. [`CgarzDiagram`] is the collapsed generalized Aw-Rascle-Zhang
//! flux family used by the second-order solver: a single free-flow curve
//! `g` for `rho <= rho_f` and, above it, a convex combination of the linear
//! congested branch `f` and `g` weighted by `theta(w)`.

use serde::{Deserialize, Serialize};

use crate::error::{clamp_checked, Error, Result};

/// A density-only speed law `u(rho)` on `[0, rho_max]`.
///
/// Implementations may assume `rho` is already inside the domain.
pub trait SpeedLaw {
    fn rho_max(&self) -> f64;

    fn speed(&self, rho: f64) -> f64;

    /// `u(0)`, the fastest speed the law produces.
    fn max_speed(&self) -> f64;
}

/// `u(rho) = u_max (rho_max - rho) / rho_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreenshieldsDiagram {
    pub rho_max: f64,
    pub u_max: f64,
}

impl GreenshieldsDiagram {
    pub fn new(rho_max: f64, u_max: f64) -> Result<Self> {
        if !(rho_max > 0.0 && u_max > 0.0) {
            return Err(Error::config(format!(
                "greenshields: rho_max and u_max must be positive, got {rho_max}, {u_max}"
            )));
        }
        Ok(Self { rho_max, u_max })
    }

    /// Checked speed evaluation.
    pub fn greenshields_speed(&self, rho: f64) -> Result<f64> {
        let rho = clamp_checked("rho", rho, 0.0, self.rho_max)?;
        Ok(self.speed(rho))
    }
}

impl SpeedLaw for GreenshieldsDiagram {
    fn rho_max(&self) -> f64 {
        self.rho_max
    }

    fn speed(&self, rho: f64) -> f64 {
        self.u_max * (self.rho_max - rho) / self.rho_max
    }

    fn max_speed(&self) -> f64 {
        self.u_max
    }
}

/// Collapsed GARZ fundamental diagram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CgarzDiagram {
    pub rho_max: f64,
    pub rho_f: f64,
    pub v_max: f64,
    pub w_l: f64,
    pub w_r: f64,
}

/// Absolute speed tolerance of the w-inversion bisection (km/h).
pub const INVERSION_SPEED_TOL: f64 = 1e-9;

impl CgarzDiagram {
    pub fn new(rho_max: f64, rho_f: f64, v_max: f64, w_l: f64, w_r: f64) -> Result<Self> {
        if !(rho_f > 0.0 && rho_f < rho_max) {
            return Err(Error::config(format!(
                "cgarz: need 0 < rho_f < rho_max, got rho_f={rho_f}, rho_max={rho_max}"
            )));
        }
        if !(v_max > 0.0) {
            return Err(Error::config(format!("cgarz: v_max must be positive, got {v_max}")));
        }
        if !(w_l < w_r) {
            return Err(Error::config(format!("cgarz: need w_l < w_r, got {w_l}, {w_r}")));
        }
        Ok(Self {
            rho_max,
            rho_f,
            v_max,
            w_l,
            w_r,
        })
    }

    /// Diagram with the usual invariant range `w_l = g(rho_f)`,
    /// `w_r = g(rho_max / 2)`.
    pub fn with_standard_invariant_range(rho_max: f64, rho_f: f64, v_max: f64) -> Result<Self> {
        let slope = v_max / rho_max;
        let g = |rho: f64| slope * rho * (rho_max - rho);
        Self::new(rho_max, rho_f, v_max, g(rho_f), g(rho_max / 2.0))
    }

    /// Linear congested branch `f(rho) = (V/rho_max) rho_f (rho_max - rho)`.
    pub fn f(&self, rho: f64) -> f64 {
        self.v_max / self.rho_max * self.rho_f * (self.rho_max - rho)
    }

    /// Free-flow curve `g(rho) = (V/rho_max) rho (rho_max - rho)`.
    pub fn g(&self, rho: f64) -> f64 {
        self.v_max / self.rho_max * rho * (self.rho_max - rho)
    }

    pub fn theta(&self, w: f64) -> f64 {
        (w - self.w_l) / (self.w_r - self.w_l)
    }

    pub fn w_mid(&self) -> f64 {
        0.5 * (self.w_l + self.w_r)
    }

    /// `V_max = max_w v(0, w)`.
    pub fn max_speed(&self) -> f64 {
        self.v_max
    }

    /// Checked flux `Q(rho, w)`.
    pub fn cgarz_flux(&self, rho: f64, w: f64) -> Result<f64> {
        let (rho, w) = self.check(rho, w)?;
        Ok(self.flux_unchecked(rho, w))
    }

    /// Checked speed `v(rho, w) = Q(rho, w) / rho`, with `v(0, w) = V_max`.
    pub fn cgarz_speed(&self, rho: f64, w: f64) -> Result<f64> {
        let (rho, w) = self.check(rho, w)?;
        Ok(self.speed_unchecked(rho, w))
    }

    pub(crate) fn check(&self, rho: f64, w: f64) -> Result<(f64, f64)> {
        Ok((
            clamp_checked("rho", rho, 0.0, self.rho_max)?,
            clamp_checked("w", w, self.w_l, self.w_r)?,
        ))
    }

    pub(crate) fn flux_unchecked(&self, rho: f64, w: f64) -> f64 {
        if rho <= self.rho_f {
            self.g(rho)
        } else {
            let theta = self.theta(w);
            (1.0 - theta) * self.f(rho) + theta * self.g(rho)
        }
    }

    /// Speed written without the division by `rho` so that `rho = 0` is
    /// covered by the analytic limit.
    pub(crate) fn speed_unchecked(&self, rho: f64, w: f64) -> f64 {
        let free = self.v_max * (self.rho_max - rho) / self.rho_max;
        if rho <= self.rho_f {
            free
        } else {
            let theta = self.theta(w);
            let congested = self.f(rho) / rho;
            (1.0 - theta) * congested + theta * free
        }
    }

    /// `dv/drho` at fixed `w`.
    pub(crate) fn speed_drho_unchecked(&self, rho: f64, w: f64) -> f64 {
        let free = -self.v_max / self.rho_max;
        if rho <= self.rho_f {
            free
        } else {
            let theta = self.theta(w);
            let congested = -self.v_max * self.rho_f / (rho * rho);
            (1.0 - theta) * congested + theta * free
        }
    }

    /// Find `w` in `[w_l, w_r]` with `v(rho, w)` as close as possible to
    /// `v_target`.
    ///
    /// Bisection on `w`; `v` is non-decreasing in `w`. Targets outside the
    /// reachable speed range return the nearer endpoint. In the free-flow
    /// phase the speed does not depend on `w` and the midpoint is returned.
    pub fn invert_speed_in_w(&self, rho: f64, v_target: f64) -> Result<f64> {
        let rho = clamp_checked("rho", rho, 0.0, self.rho_max)?;
        if !(v_target >= 0.0) {
            return Err(Error::Domain {
                quantity: "v_target",
                value: v_target,
                lo: 0.0,
                hi: f64::INFINITY,
            });
        }
        if rho <= self.rho_f {
            return Ok(self.w_mid());
        }
        let (mut lo, mut hi) = (self.w_l, self.w_r);
        if v_target <= self.speed_unchecked(rho, lo) {
            return Ok(lo);
        }
        if v_target >= self.speed_unchecked(rho, hi) {
            return Ok(hi);
        }
        let mut mid = 0.5 * (lo + hi);
        for _ in 0..200 {
            mid = 0.5 * (lo + hi);
            let v = self.speed_unchecked(rho, mid);
            if (v - v_target).abs() <= INVERSION_SPEED_TOL {
                break;
            }
            if v < v_target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= f64::EPSILON * hi.abs() {
                break;
            }
        }
        Ok(mid)
    }
}

/// CGARZ diagram with the invariant frozen at one value, seen as a
/// first-order speed law `u(rho) = v(rho, w)`.
#[derive(Debug, Clone, Copy)]
pub struct FrozenInvariant {
    pub diagram: CgarzDiagram,
    pub w: f64,
}

impl SpeedLaw for FrozenInvariant {
    fn rho_max(&self) -> f64 {
        self.diagram.rho_max
    }

    fn speed(&self, rho: f64) -> f64 {
        self.diagram.speed_unchecked(rho, self.w)
    }

    fn max_speed(&self) -> f64 {
        self.diagram.v_max
    }
}
