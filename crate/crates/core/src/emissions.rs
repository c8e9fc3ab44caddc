//! NOx emission rates from speed and acceleration.
//!
//! Two pointwise laws are provided: the floored quadratic form with
//! regime-dependent coefficients ("E-max") and the exponential bilinear
//! form `exp(v^T P a)` with `v = [1, v, v², v³]`, `a = [1, a, a², a³]`
//! ("E-exp"). Macroscopic rates for a cell holding `M = rho dx` vehicles
//! moving with the cell speed and acceleration are `M` times the
//! microscopic rate.
//!
//! Every function here takes speeds in m/s and accelerations in m/s² and
//! returns g/s.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest exponent magnitude accepted by the exponential law.
pub const MAX_EXPONENT: f64 = 700.0;

/// Coefficients `f1..f6` and floor `E0` of the quadratic law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmissionCoefficients {
    /// m/s². The `high` row applies for `a >= regime_threshold`.
    pub regime_threshold: f64,
    pub high: [f64; 6],
    pub low: [f64; 6],
    /// g/s.
    pub e0_floor: f64,
}

impl Default for EmissionCoefficients {
    fn default() -> Self {
        Self::petrol_car_nox()
    }
}

impl EmissionCoefficients {
    /// NOx, internal combustion petrol car.
    pub fn petrol_car_nox() -> Self {
        Self {
            regime_threshold: -0.5,
            high: [6.19e-4, 8e-5, -4.03e-6, -4.13e-4, 3.80e-4, 1.77e-4],
            low: [2.17e-4, 0.0, 0.0, 0.0, 0.0, 0.0],
            e0_floor: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.high.iter().chain(&self.low).all(|c| c.is_finite()) && self.regime_threshold.is_finite();
        if !finite {
            return Err(Error::config("emission coefficients must be finite"));
        }
        if !(self.e0_floor >= 0.0) {
            return Err(Error::config(format!(
                "emission coefficients: e0 must be non-negative, got {}",
                self.e0_floor
            )));
        }
        Ok(())
    }

    /// Parse a coefficient table.
    ///
    /// One record per line, comma separated, `#` starts a comment:
    ///
    /// ```text
    /// threshold,-0.5
    /// high,6.19e-4,8e-5,-4.03e-6,-4.13e-4,3.80e-4,1.77e-4
    /// low,2.17e-4,0,0,0,0,0
    /// e0,0
    /// ```
    ///
    /// `threshold` and `e0` default to -0.5 and 0; `high` and `low` are
    /// required.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut threshold = -0.5;
        let mut e0 = 0.0;
        let mut high = None;
        let mut low = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(',').map(str::trim);
            let key = fields.next().unwrap_or("");
            let values = fields
                .map(|f| f.parse::<f64>().map_err(|e| err(line_no, format!("bad number {f:?}: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            let single = |values: &[f64]| -> Result<f64> {
                match values {
                    [v] => Ok(*v),
                    _ => Err(err(line_no, format!("{key}: expected one value, got {}", values.len()))),
                }
            };
            let row = |values: &[f64]| -> Result<[f64; 6]> {
                values
                    .try_into()
                    .map_err(|_| err(line_no, format!("{key}: expected six values, got {}", values.len())))
            };
            match key {
                "threshold" => threshold = single(&values)?,
                "e0" => e0 = single(&values)?,
                "high" => high = Some(row(&values)?),
                "low" => low = Some(row(&values)?),
                other => return Err(err(line_no, format!("unknown record {other:?}"))),
            }
        }
        let missing = |name: &str| err(0, format!("missing {name} row"));
        let coeffs = Self {
            regime_threshold: threshold,
            high: high.ok_or_else(|| missing("high"))?,
            low: low.ok_or_else(|| missing("low"))?,
            e0_floor: e0,
        };
        coeffs.validate()?;
        Ok(coeffs)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn row(&self, a: f64) -> &[f64; 6] {
        if a >= self.regime_threshold {
            &self.high
        } else {
            &self.low
        }
    }
}

/// Matrix `P` of the exponential law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpMatrix {
    pub p: [[f64; 4]; 4],
}

impl Default for ExpMatrix {
    fn default() -> Self {
        let raw = [
            [-1488.31, 83.4524, 9.5433, -3.3549],
            [15.2306, 16.6647, 10.1565, -3.7076],
            [-0.1830, -0.4591, -0.6836, 0.0737],
            [0.0020, 0.0038, 0.0091, -0.0016],
        ];
        Self {
            p: raw.map(|row| row.map(|c| 0.01 * c)),
        }
    }
}

impl ExpMatrix {
    /// `[1, v, v², v³] P [1, a, a², a³]^T`.
    pub fn exponent(&self, v: f64, a: f64) -> f64 {
        let vv = [1.0, v, v * v, v * v * v];
        let aa = [1.0, a, a * a, a * a * a];
        let mut s = 0.0;
        for (vi, row) in vv.iter().zip(&self.p) {
            for (aj, pij) in aa.iter().zip(row) {
                s += vi * pij * aj;
            }
        }
        s
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmissionFormula {
    #[default]
    Max,
    Exp,
}

/// `max{E0, f1 + f2 v + f3 v² + f4 a + f5 a² + f6 v a}` with the row
/// selected by `a`.
pub fn emission_max_micro(v: f64, a: f64, coeffs: &EmissionCoefficients) -> f64 {
    let f = coeffs.row(a);
    let q = f[0] + f[1] * v + f[2] * v * v + f[3] * a + f[4] * a * a + f[5] * v * a;
    q.max(coeffs.e0_floor)
}

/// `exp([1, v, v², v³] P [1, a, a², a³]^T)`; an exponent beyond
/// `±MAX_EXPONENT` is reported as a domain error.
pub fn emission_exp_micro(v: f64, a: f64, m: &ExpMatrix) -> Result<f64> {
    let e = m.exponent(v, a);
    if !(e.abs() <= MAX_EXPONENT) {
        log::warn!("emission exponent {e} at v={v} m/s, a={a} m/s² is out of range");
        return Err(Error::Domain {
            quantity: "emission exponent",
            value: e,
            lo: -MAX_EXPONENT,
            hi: MAX_EXPONENT,
        });
    }
    Ok(e.exp())
}

pub fn emission_max_macro(rho: f64, v: f64, a: f64, dx: f64, coeffs: &EmissionCoefficients) -> f64 {
    rho * dx * emission_max_micro(v, a, coeffs)
}

pub fn emission_exp_macro(rho: f64, v: f64, a: f64, dx: f64, m: &ExpMatrix) -> Result<f64> {
    Ok(rho * dx * emission_exp_micro(v, a, m)?)
}

/// Micro rate with the selected law.
pub fn emission_micro(
    formula: EmissionFormula,
    v: f64,
    a: f64,
    coeffs: &EmissionCoefficients,
    m: &ExpMatrix,
) -> Result<f64> {
    match formula {
        EmissionFormula::Max => Ok(emission_max_micro(v, a, coeffs)),
        EmissionFormula::Exp => emission_exp_micro(v, a, m),
    }
}

/// Per-cell macroscopic rates.
pub fn emission_field(
    formula: EmissionFormula,
    rho: &[f64],
    v: &[f64],
    a: &[f64],
    dx: f64,
    coeffs: &EmissionCoefficients,
    m: &ExpMatrix,
) -> Result<Vec<f64>> {
    rho.iter()
        .zip(v)
        .zip(a)
        .map(|((&r, &v), &a)| Ok(r * dx * emission_micro(formula, v, a, coeffs, m)?))
        .collect()
}

pub fn total_emission(field: &[f64]) -> f64 {
    field.iter().sum()
}
