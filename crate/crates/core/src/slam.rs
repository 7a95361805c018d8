//! Odometry plus loop closure: elevation grids every `n_map - n_overlap`
//! scans, loop detection against earlier grids, and pose-graph optimization
//! whenever new loops appear.

use std::collections::VecDeque;
use std::time::Instant;

use log::{info, warn};
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose, TrajectoryFrame};
use crate::loop_closure::{build_elevation_grid, detect_new_loops, ElevationGrid, LoopClosureConfig, LoopConstraint};
use crate::pipeline::{Odometry, PipelineConfig, ScanReport};
use crate::pose_graph::{apply_corrections, build_graph, optimize, GraphConfig, OptimizationReport, PoseGraph};
use crate::scalar::{lit, Real};
use crate::scan::{grid_sample_keypoints, Scan};

/// Synthetic odometry drift: every scan-to-scan motion is perturbed by a yaw
/// error and a translation error before the back-end sees it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriftConfig {
    pub enabled: bool,
    pub seed: u64,
    /// Constant yaw error per scan, degrees.
    pub yaw_bias_deg: f64,
    /// Random yaw error per scan, degrees (standard deviation).
    pub yaw_sigma_deg: f64,
    /// Random translation error per scan and axis, meters.
    pub translation_sigma: f64,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            seed: 0,
            yaw_bias_deg: 0.01,
            yaw_sigma_deg: 0.005,
            translation_sigma: 0.005,
        }
    }
}

/// Applies [`DriftConfig`] online.
#[derive(Debug, Clone)]
pub struct DriftInjector {
    config: DriftConfig,
    rng: ChaCha8Rng,
    last: Option<(Pose<f64>, Pose<f64>)>,
}

impl DriftInjector {
    pub fn new(config: DriftConfig) -> Self {
        Self { config, rng: ChaCha8Rng::seed_from_u64(config.seed), last: None }
    }

    /// Drifted copy of `frame`, the next frame of the trajectory.
    pub fn apply<T: Real>(&mut self, frame: &TrajectoryFrame<T>) -> TrajectoryFrame<T> {
        if !self.config.enabled {
            return *frame;
        }
        let pose = frame.mid_pose().cast::<f64>();
        let drifted = match self.last {
            None => pose,
            Some((prev, prev_drifted)) => {
                let yaw = Normal::new(self.config.yaw_bias_deg, self.config.yaw_sigma_deg.max(0.0))
                    .expect("finite sigma")
                    .sample(&mut self.rng)
                    .to_radians();
                let t = Normal::new(0.0, self.config.translation_sigma.max(0.0)).expect("finite sigma");
                let dt = Vector3::new(t.sample(&mut self.rng), t.sample(&mut self.rng), t.sample(&mut self.rng));
                prev_drifted.compose(&Pose::from_yaw(yaw, dt)).compose(&prev.inverse().compose(&pose))
            }
        };
        self.last = Some((pose, drifted));
        frame.left_multiplied(&drifted.compose(&pose.inverse()).cast())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlamConfig {
    pub pipeline: PipelineConfig,
    pub loop_closure: LoopClosureConfig,
    pub graph: GraphConfig,
    pub drift: DriftConfig,
    /// Scans are thinned to one point per cube of this size before being kept
    /// for grid building, meters.
    pub grid_sample_cell: f64,
}

impl Default for SlamConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            loop_closure: LoopClosureConfig::default(),
            graph: GraphConfig::default(),
            drift: DriftConfig::default(),
            grid_sample_cell: 0.25,
        }
    }
}

/// Summary of one built grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSummary {
    pub first_scan: usize,
    pub last_scan: usize,
    pub anchor_scan: usize,
    pub valid_cells: usize,
    pub total_cells: usize,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone)]
pub struct SlamResult<T: Real> {
    /// Odometry frames as handed to the back-end (drift included).
    pub odometry: Vec<TrajectoryFrame<T>>,
    /// Frames after the final pose-graph optimization; equal to `odometry`
    /// when no loop was found.
    pub optimized: Vec<TrajectoryFrame<T>>,
    pub loops: Vec<LoopConstraint>,
    pub grids: Vec<GridSummary>,
    /// One report per optimization, the last one over the full trajectory.
    pub optimizations: Vec<OptimizationReport>,
    pub reports: Vec<ScanReport>,
    pub graph: Option<PoseGraph>,
    pub elevation_grids: Vec<ElevationGrid>,
}

/// Runs odometry and loop closure over `scans`.
pub fn run_slam<T: Real, I>(scans: I, config: &SlamConfig) -> Result<SlamResult<T>>
where
    I: IntoIterator<Item = Result<Scan<T>>>,
{
    let lc = &config.loop_closure;
    let mut odometry = Odometry::<T>::new(config.pipeline);
    let mut drift = DriftInjector::new(config.drift);
    let mut frames: Vec<TrajectoryFrame<T>> = Vec::new();
    let mut window: VecDeque<Scan<T>> = VecDeque::with_capacity(lc.n_map);
    let mut grids: Vec<ElevationGrid> = Vec::new();
    let mut summaries = Vec::new();
    let mut loops: Vec<LoopConstraint> = Vec::new();
    let mut optimizations = Vec::new();
    let sample_cell: T = lit(config.grid_sample_cell);

    for scan in scans {
        let scan = scan?;
        match odometry.register_scan(&scan) {
            Ok(_) | Err(Error::RegistrationFailed { .. }) => {}
            Err(e) => return Err(e),
        }
        let frame = *odometry.frames().last().expect("registered frame");
        frames.push(drift.apply(&frame));

        let mut thinned = scan;
        thinned.points = grid_sample_keypoints(&thinned.points, sample_cell);
        if window.len() == lc.n_map {
            window.pop_front();
        }
        window.push_back(thinned);

        let n = frames.len();
        if lc.n_map == 0 || n < lc.n_map || (n - lc.n_map) % lc.window_step() != 0 {
            continue;
        }
        let started = Instant::now();
        let scans: Vec<Scan<T>> = window.iter().cloned().collect();
        let grid = match build_elevation_grid(&frames[n - lc.n_map..], &scans, lc) {
            Ok(grid) => grid,
            Err(e @ Error::DegenerateGrid { .. }) => {
                warn!("skipping grid ending at scan {}: {e}", n - 1);
                continue;
            }
            Err(e) => return Err(e),
        };
        summaries.push(GridSummary {
            first_scan: grid.first_scan,
            last_scan: grid.last_scan,
            anchor_scan: grid.anchor_scan,
            valid_cells: grid.num_valid(),
            total_cells: grid.num_cells(),
            elapsed_ms: 0.0,
        });
        grids.push(grid);
        let found = detect_new_loops(&grids, lc);
        let elapsed_ms = started.elapsed().as_secs_f64() * 1e3;
        summaries.last_mut().expect("summary").elapsed_ms = elapsed_ms;
        info!(
            "grid {} (scans {}..={}): {} new loops, {:.0} ms",
            grids.len() - 1,
            n - lc.n_map,
            n - 1,
            found.len(),
            elapsed_ms
        );
        if !found.is_empty() {
            loops.extend(found);
            let graph = build_graph(&frames, &loops, &config.graph);
            let (_, report) = optimize(&graph, &config.graph)?;
            optimizations.push(report);
        }
    }
    if frames.is_empty() {
        return Err(Error::EmptyScan("scan source yielded no scan".into()));
    }

    let (optimized, graph) = if loops.is_empty() {
        (frames.clone(), None)
    } else {
        let graph = build_graph(&frames, &loops, &config.graph);
        let (nodes, report) = optimize(&graph, &config.graph)?;
        optimizations.push(report);
        (apply_corrections(&frames, &graph.nodes, &nodes), Some(graph))
    };
    Ok(SlamResult {
        odometry: frames,
        optimized,
        loops,
        grids: summaries,
        optimizations,
        reports: odometry.reports().to_vec(),
        graph,
        elevation_grids: grids,
    })
}
