//! Continuous-time elastic LiDAR odometry.
//!
//! Each scan gets two poses, one at its first and one at its last firing;
//! points are deskewed by interpolating between them. Scans are registered
//! point-to-plane against a sparse voxel map. An optional back-end builds
//! elevation grids over windows of scans, matches them to detect loops and
//! corrects the trajectory with a pose graph.
//!
//! The numeric core is generic over [`scalar::Real`] (`f32` or `f64`); the
//! aliases below fix the scalar to `f64`.

pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod io;
pub mod loop_closure;
pub mod pipeline;
pub mod pose_graph;
pub mod scalar;
pub mod scan;
pub mod sim;
pub mod slam;
pub mod solver;
pub mod voxel_map;

pub use error::{Error, Result};
pub use pipeline::{run_odometry, PipelineConfig, Profile};
pub use scalar::Real;
pub use slam::{run_slam, SlamConfig};
pub use solver::SolverMode;

pub type Pose = geometry::Pose<f64>;
pub type TrajectoryFrame = geometry::TrajectoryFrame<f64>;
pub type Scan = scan::Scan<f64>;
pub type ScanPoint = scan::ScanPoint<f64>;
pub type VoxelMap = voxel_map::VoxelMap<f64>;
pub type Odometry = pipeline::Odometry<f64>;
pub type SlamResult = slam::SlamResult<f64>;
