//! Tracked-vehicle data: trajectories, nearest-vehicle queries, synthetic
//! and follow-the-leader generators, and kernel density reconstruction.

mod fleet;
mod ftl;
mod kde;
mod synthetic;
mod trajectory;

pub use fleet::{Fleet, FleetSnapshot, VehicleState};
pub use ftl::{simulate_ftl, step_ftl, FtlConfig, FtlState};
pub use kde::{kde_density, kde_density_at, kde_velocity, kde_velocity_at, KdeConfig, KernelNormalization};
pub use synthetic::{generate_synthetic, AccelerationForm, SyntheticPlatoon};
pub use trajectory::{Kinematics, Trajectory, TrajectorySample};
