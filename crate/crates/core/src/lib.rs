//! Macroscopic traffic simulation with embedded vehicle trajectories.
//!
//! The crate couples sparse Lagrangian data (GPS-like trajectories of a few
//! tracked vehicles) with first-order (LWR) and second-order (GSOM, CGARZ
//! flavour) macroscopic models solved by the Cell Transmission Model. The
//! resulting speed and acceleration fields feed NOx emission formulas, and
//! the emissions can be spread over a 2D domain with an explicit diffusion
//! solver.
//!
//! Internal units: positions in km, times in h, densities in veh/km, speeds
//! in km/h. The emission formulas work in m/s and m/s²; see [`units`].

// `!(x > 0.0)` style checks reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cutoff;
pub mod diagram;
pub mod diffusion;
pub mod emissions;
pub mod error;
pub mod grid;
pub mod gsom;
pub mod io;
pub mod lagrangian;
pub mod lwr;
pub mod network;
pub mod scenario;
pub mod units;

pub use cutoff::CutoffShape;
pub use diagram::{CgarzDiagram, GreenshieldsDiagram, SpeedLaw};
pub use error::{Error, Result};
pub use grid::{SpatialGrid, TimeGrid};
pub use lagrangian::{Fleet, Trajectory};
