use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{quantity} = {value} is outside [{lo}, {hi}]")]
    Domain {
        quantity: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("time step {dt} h exceeds the stability bound {bound} h")]
    Cfl { dt: f64, bound: f64 },

    #[error("vehicle {follower} ran into vehicle {leader} (gap {gap} km)")]
    Collision {
        follower: usize,
        leader: usize,
        gap: f64,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse { .. } => 2,
            Error::Domain { .. } | Error::Cfl { .. } | Error::Collision { .. } => 3,
            Error::Io { .. } => 4,
        }
    }
}

/// Relative width of the band in which out-of-range inputs are clamped
/// instead of rejected.
pub(crate) const CLAMP_TOL: f64 = 1e-12;

/// Clamp `value` into `[lo, hi]` if it lies within the tolerance band,
/// otherwise report a domain error.
pub(crate) fn clamp_checked(quantity: &'static str, value: f64, lo: f64, hi: f64) -> Result<f64> {
    let band = CLAMP_TOL * lo.abs().max(hi.abs()).max(1.0);
    if value.is_nan() || value < lo - band || value > hi + band {
        return Err(Error::Domain {
            quantity,
            value,
            lo,
            hi,
        });
    }
    Ok(value.clamp(lo, hi))
}
