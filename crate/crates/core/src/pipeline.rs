//! Frame-to-map odometry: motion prediction, keypoint sampling, registration,
//! failure handling and map maintenance, one scan at a time.

use std::time::Instant;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose, TrajectoryFrame};
use crate::scalar::{lit, to_f64, Real};
use crate::scan::{clip_by_range, grid_sample_keypoints, Scan, ScanPoint};
use crate::solver::{solve, SolveReport, SolverConfig, SolverMode};
use crate::voxel_map::{VoxelMap, VoxelMapConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Vehicle-mounted sensors: smooth motion, long ranges.
    #[default]
    Driving,
    /// Handheld or legged platforms with abrupt rotations.
    #[serde(alias = "high-frequency")]
    HighFrequency,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "driving" => Ok(Self::Driving),
            "high-frequency" | "high_frequency" => Ok(Self::HighFrequency),
            other => Err(Error::InvalidArgument(format!("unknown profile `{other}`"))),
        }
    }
}

/// Detection of doubtful registrations and the conservative retry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobustConfig {
    pub enabled: bool,
    /// Largest accepted distance between this scan's begin and the previous
    /// scan's end, meters.
    pub max_location_gap: f64,
    /// Largest accepted fraction of keypoints falling in empty voxels.
    pub max_empty_voxel_fraction: f64,
    /// Keypoint cell multiplier on retry.
    pub retry_cell_factor: f64,
    pub retry_search_ring: i32,
    pub retry_max_iterations: usize,
    /// Scans rotating at least this much since the previous scan are
    /// registered but not inserted in the map, degrees.
    pub max_insert_rotation_deg: f64,
}

impl Default for RobustConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            max_location_gap: 0.3,
            max_empty_voxel_fraction: 0.2,
            retry_cell_factor: 0.5,
            retry_search_ring: 2,
            retry_max_iterations: 10,
            max_insert_rotation_deg: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub profile: Profile,
    pub map: VoxelMapConfig,
    /// Edge of the grid used to sample keypoints, meters.
    pub keypoint_cell: f64,
    pub eviction_radius: f64,
    pub min_range: f64,
    pub max_range: f64,
    pub solver: SolverConfig,
    pub robust: RobustConfig,
    /// Normalized time of the pose reported per scan for evaluation.
    pub metric_alpha: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::driving()
    }
}

impl PipelineConfig {
    pub fn driving() -> Self {
        Self {
            profile: Profile::Driving,
            map: VoxelMapConfig { voxel_size: 1.0, ..VoxelMapConfig::default() },
            keypoint_cell: 1.5,
            eviction_radius: 150.0,
            min_range: 1.0,
            max_range: 100.0,
            solver: SolverConfig { robust_scale: 0.3, ..SolverConfig::default() },
            robust: RobustConfig::default(),
            metric_alpha: 0.5,
        }
    }

    pub fn high_frequency() -> Self {
        Self {
            profile: Profile::HighFrequency,
            map: VoxelMapConfig { voxel_size: 0.8, ..VoxelMapConfig::default() },
            keypoint_cell: 0.5,
            eviction_radius: 60.0,
            min_range: 0.5,
            max_range: 60.0,
            solver: SolverConfig { robust_scale: 0.1, max_iterations: 10, ..SolverConfig::default() },
            robust: RobustConfig::default(),
            metric_alpha: 0.5,
        }
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Driving => Self::driving(),
            Profile::HighFrequency => Self::high_frequency(),
        }
    }
}

/// Outcome of one scan registration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScanReport {
    pub scan_index: usize,
    pub num_points: usize,
    pub num_keypoints: usize,
    pub solve: Option<SolveReport>,
    pub retried: bool,
    /// Set when the scan could not be registered; the frame is the prediction.
    pub failure: Option<String>,
    pub inserted: bool,
    /// Rotation between this scan's end pose and the previous one, degrees.
    pub orientation_change_deg: f64,
    /// Distance between this scan's begin and the previous scan's end, meters.
    pub location_gap: f64,
    pub map_size_before: usize,
    pub map_size_after: usize,
    pub elapsed_ms: f64,
}

/// Constant-velocity prediction of the next frame from the registered ones.
pub fn predict_initial_frame<T: Real>(prev_frames: &[TrajectoryFrame<T>]) -> TrajectoryFrame<T> {
    let index = prev_frames.len();
    match prev_frames {
        [] => TrajectoryFrame::rigid(Pose::identity(), 0),
        [only] => TrajectoryFrame::rigid(only.end, index),
        [.., before, last] => {
            let motion = before.end.inverse().compose(&last.end);
            TrajectoryFrame::new(last.end, last.end.compose(&motion), index)
        }
    }
}

/// Odometry state: registered frames, the local map and per-scan reports.
#[derive(Debug, Clone)]
pub struct Odometry<T: Real> {
    config: PipelineConfig,
    frames: Vec<TrajectoryFrame<T>>,
    map: VoxelMap<T>,
    reports: Vec<ScanReport>,
}

impl<T: Real> Odometry<T> {
    pub fn new(config: PipelineConfig) -> Self {
        Self {
            map: VoxelMap::new(config.map),
            config,
            frames: Vec::new(),
            reports: Vec::new(),
        }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn frames(&self) -> &[TrajectoryFrame<T>] {
        &self.frames
    }

    pub fn map(&self) -> &VoxelMap<T> {
        &self.map
    }

    pub fn reports(&self) -> &[ScanReport] {
        &self.reports
    }

    /// Per-scan poses at the configured metric time.
    pub fn metric_poses(&self) -> Vec<Pose<T>> {
        let alpha = lit::<T>(self.config.metric_alpha);
        self.frames.iter().map(|f| f.interpolate(alpha)).collect()
    }

    /// Registers the next scan and appends its frame. On
    /// [`Error::RegistrationFailed`] the predicted frame is still appended and
    /// the scan is not inserted in the map.
    pub fn register_scan(&mut self, scan: &Scan<T>) -> Result<ScanReport> {
        let start = Instant::now();
        let cfg = self.config;
        let index = self.frames.len();
        let mut report = ScanReport {
            scan_index: index,
            num_points: scan.len(),
            map_size_before: self.map.len(),
            ..ScanReport::default()
        };

        let clipped = clip_by_range(scan, lit(cfg.min_range), lit(cfg.max_range));
        let mut points: Vec<ScanPoint<T>> = match &clipped {
            Ok(s) => s.points.clone(),
            Err(_) => Vec::new(),
        };
        if !scan.has_alpha {
            // Without timing every point is attributed to the end pose.
            points.iter_mut().for_each(|p| p.alpha = T::one());
        }
        let prediction = predict_initial_frame(&self.frames);

        let outcome = if index == 0 {
            Ok((prediction, None, false))
        } else if let Err(e) = clipped {
            Err(e.to_string())
        } else {
            self.solve_with_retry(&points, &prediction, &mut report)
        };

        let (frame, inserted) = match outcome {
            Ok((frame, solve_report, retried)) => {
                report.solve = solve_report;
                report.retried = retried;
                let insert = if let Some(prev) = self.frames.last() {
                    report.orientation_change_deg = to_f64(prev.end.angle_to(&frame.end)).to_degrees();
                    report.orientation_change_deg < cfg.robust.max_insert_rotation_deg
                } else {
                    true
                };
                (frame, insert)
            }
            Err(reason) => {
                report.failure = Some(reason);
                (prediction, false)
            }
        };
        if let Some(prev) = self.frames.last() {
            report.location_gap = to_f64((frame.begin.translation - prev.end.translation).norm());
        }

        if inserted {
            let world: Vec<_> = points
                .iter()
                .map(|p| frame.interpolate(p.alpha).transform_point(&p.position))
                .collect();
            self.map.insert_scan(&world);
        }
        self.map.evict_far_voxels(&frame.end.translation, lit(cfg.eviction_radius));
        self.frames.push(frame);

        report.inserted = inserted;
        report.num_keypoints = report.solve.as_ref().map_or(0, |s| s.num_keypoints);
        report.map_size_after = self.map.len();
        report.elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
        debug!(
            "scan {index}: {:.1} ms, map {} points, inserted {}, rotation {:.2} deg",
            report.elapsed_ms, report.map_size_after, report.inserted, report.orientation_change_deg
        );
        self.reports.push(report.clone());
        match &report.failure {
            Some(reason) => Err(Error::RegistrationFailed { scan_index: index, reason: reason.clone() }),
            None => Ok(report),
        }
    }

    fn solve_with_retry(
        &self,
        points: &[ScanPoint<T>],
        prediction: &TrajectoryFrame<T>,
        report: &mut ScanReport,
    ) -> std::result::Result<(TrajectoryFrame<T>, Option<SolveReport>, bool), String> {
        let cfg = &self.config;
        let prev = self.frames.last().expect("registration needs a previous frame");
        let first = self.attempt(points, prediction, prev, cfg.keypoint_cell, &cfg.solver);
        match first {
            Ok((frame, solve_report)) => return Ok((frame, Some(solve_report), false)),
            Err(reason) if !cfg.robust.enabled => return Err(reason),
            Err(reason) => debug!("scan {}: retrying ({reason})", report.scan_index),
        }
        let retry_solver = SolverConfig {
            search_ring: cfg.robust.retry_search_ring,
            max_iterations: cfg.robust.retry_max_iterations,
            ..cfg.solver
        };
        let cell = cfg.keypoint_cell * cfg.robust.retry_cell_factor;
        match self.attempt(points, prediction, prev, cell, &retry_solver) {
            Ok((frame, solve_report)) => Ok((frame, Some(solve_report), true)),
            Err(reason) => {
                warn!("scan {}: registration failed after retry: {reason}", report.scan_index);
                report.retried = true;
                Err(reason)
            }
        }
    }

    /// One solve plus the robust-profile checks.
    fn attempt(
        &self,
        points: &[ScanPoint<T>],
        prediction: &TrajectoryFrame<T>,
        prev: &TrajectoryFrame<T>,
        cell: f64,
        solver: &SolverConfig,
    ) -> std::result::Result<(TrajectoryFrame<T>, SolveReport), String> {
        let keypoints = grid_sample_keypoints(points, lit(cell));
        let (frame, solve_report) =
            solve(&self.map, &keypoints, prediction, prev, solver).map_err(|e| e.to_string())?;
        let robust = &self.config.robust;
        if !robust.enabled {
            return Ok((frame, solve_report));
        }
        // A single-pose solve has no begin/end continuity to check.
        if solver.mode != SolverMode::None {
            let gap = to_f64((frame.begin.translation - prev.end.translation).norm());
            if gap > robust.max_location_gap {
                return Err(format!("location gap of {gap:.3} m"));
            }
        }
        if solve_report.empty_voxel_fraction > robust.max_empty_voxel_fraction {
            return Err(format!(
                "{:.0}% of keypoints in empty voxels",
                solve_report.empty_voxel_fraction * 100.0
            ));
        }
        Ok((frame, solve_report))
    }
}

/// Registers every scan in order. Registration failures are recorded in the
/// reports and never abort the run; source errors do.
pub fn run_odometry<T: Real, I>(scans: I, config: PipelineConfig) -> Result<Odometry<T>>
where
    I: IntoIterator<Item = Result<Scan<T>>>,
{
    let mut odometry = Odometry::new(config);
    for scan in scans {
        match odometry.register_scan(&scan?) {
            Ok(_) | Err(Error::RegistrationFailed { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    if odometry.frames.is_empty() {
        return Err(Error::EmptyScan("scan source yielded no scan".into()));
    }
    Ok(odometry)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{UnitQuaternion, Vector3};
    use rand::{Rng, SeedableRng};

    #[test]
    fn prediction_examples() {
        let empty: [TrajectoryFrame<f64>; 0] = [];
        assert_eq!(predict_initial_frame(&empty), TrajectoryFrame::rigid(Pose::identity(), 0));

        let f0 = TrajectoryFrame::rigid(Pose::from_translation(Vector3::new(0.0, 0.0, 0.0)), 0);
        let f1 = TrajectoryFrame::new(f0.end, Pose::from_translation(Vector3::new(1.0, 0.0, 0.0)), 1);
        let p1 = predict_initial_frame(&[f0]);
        assert_eq!(p1.begin, f0.end);
        assert_eq!(p1.end, f0.end);
        let p2 = predict_initial_frame(&[f0, f1]);
        assert!((p2.end.translation - Vector3::new(2.0, 0.0, 0.0)).norm() < 1e-12);
        assert_eq!(p2.begin, f1.end);
    }

    #[test]
    fn prediction_matches_matrix_composition() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mut pose = || {
            Pose::new(
                UnitQuaternion::from_scaled_axis(Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))),
                Vector3::new(rng.random_range(-9.0..9.0), rng.random_range(-9.0..9.0), rng.random_range(-9.0..9.0)),
            )
        };
        for _ in 0..50 {
            let frames = [TrajectoryFrame::new(pose(), pose(), 0), TrajectoryFrame::new(pose(), pose(), 1)];
            let h = |p: &Pose<f64>| p.to_homogeneous_oracle();
            let expected = h(&frames[1].end) * h(&frames[0].end).try_inverse().unwrap() * h(&frames[1].end);
            let predicted = predict_initial_frame(&frames);
            assert!((h(&predicted.end) - expected).amax() < 1e-9);
        }
    }

    trait Homogeneous {
        fn to_homogeneous_oracle(&self) -> nalgebra::Matrix4<f64>;
    }

    impl Homogeneous for Pose<f64> {
        fn to_homogeneous_oracle(&self) -> nalgebra::Matrix4<f64> {
            let mut m = nalgebra::Matrix4::identity();
            m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.to_rotation_matrix().matrix());
            m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
            m
        }
    }

    #[test]
    fn profiles_differ_in_voxel_size() {
        assert_eq!(PipelineConfig::driving().map.voxel_size, 1.0);
        assert_eq!(PipelineConfig::high_frequency().map.voxel_size, 0.8);
        assert_eq!("high-frequency".parse::<Profile>().unwrap(), Profile::HighFrequency);
    }

    #[test]
    fn empty_source_is_an_error() {
        let scans: Vec<Result<Scan<f64>>> = Vec::new();
        assert!(run_odometry(scans, PipelineConfig::default()).is_err());
    }
}
