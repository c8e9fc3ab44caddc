//! Trapezoidal cutoff localising the influence of a tracked vehicle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `chi(xi) = 1` on `|xi| <= ell`, `0` on `|xi| >= big_l`, linear in between.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffShape {
    pub ell: f64,
    pub big_l: f64,
}

impl CutoffShape {
    pub fn new(ell: f64, big_l: f64) -> Result<Self> {
        if !(ell > 0.0 && ell < big_l) {
            return Err(Error::config(format!(
                "cutoff: need 0 < ell < L, got ell={ell}, L={big_l}"
            )));
        }
        Ok(Self { ell, big_l })
    }

    pub fn cutoff(&self, xi: f64) -> f64 {
        let d = xi.abs();
        if d <= self.ell {
            1.0
        } else if d >= self.big_l {
            0.0
        } else {
            (d - self.big_l) / (self.ell - self.big_l)
        }
    }

    /// `chi'(xi)`; zero on the plateau, outside the support and at the kinks.
    pub fn derivative(&self, xi: f64) -> f64 {
        let d = xi.abs();
        if d <= self.ell || d >= self.big_l {
            0.0
        } else {
            -xi.signum() / (self.big_l - self.ell)
        }
    }
}
