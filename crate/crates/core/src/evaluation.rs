//! Trajectory metrics: segment-based relative translation error and
//! rigidly aligned absolute trajectory error.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{fit_rigid_transform, Pose};

/// Segment lengths of the relative translation error, meters.
pub const RTE_LENGTHS: [f64; 8] = [100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RteConfig {
    pub lengths: Vec<f64>,
    /// Spacing between segment start indices.
    pub stride: usize,
}

impl Default for RteConfig {
    fn default() -> Self {
        Self { lengths: RTE_LENGTHS.to_vec(), stride: 1 }
    }
}

/// Cumulative distance travelled along a trajectory.
pub fn path_lengths(poses: &[Pose<f64>]) -> Vec<f64> {
    let mut out = Vec::with_capacity(poses.len());
    let mut total = 0.0;
    for (i, p) in poses.iter().enumerate() {
        if i > 0 {
            total += (p.translation - poses[i - 1].translation).norm();
        }
        out.push(total);
    }
    out
}

fn check_lengths(estimate: &[Pose<f64>], ground_truth: &[Pose<f64>], min: usize) -> Result<()> {
    if estimate.len() != ground_truth.len() {
        return Err(Error::InvalidArgument(format!(
            "trajectories differ in length ({} vs {})",
            estimate.len(),
            ground_truth.len()
        )));
    }
    if estimate.len() < min {
        return Err(Error::DegenerateInput(format!("at least {min} poses are needed")));
    }
    Ok(())
}

/// Mean relative translation error over all segments, in percent.
pub fn relative_translation_error(estimate: &[Pose<f64>], ground_truth: &[Pose<f64>]) -> Result<f64> {
    relative_translation_error_with(estimate, ground_truth, &RteConfig::default()).map(|(rte, _)| rte)
}

/// Like [`relative_translation_error`], also returning the segment count.
pub fn relative_translation_error_with(
    estimate: &[Pose<f64>],
    ground_truth: &[Pose<f64>],
    cfg: &RteConfig,
) -> Result<(f64, usize)> {
    check_lengths(estimate, ground_truth, 2)?;
    let dist = path_lengths(ground_truth);
    let mut sum = 0.0;
    let mut count = 0usize;
    for first in (0..ground_truth.len()).step_by(cfg.stride.max(1)) {
        for &length in &cfg.lengths {
            let target = dist[first] + length;
            let last = first + dist[first..].partition_point(|&d| d < target);
            if last >= ground_truth.len() {
                continue;
            }
            let gt_rel = ground_truth[first].inverse().compose(&ground_truth[last]);
            let est_rel = estimate[first].inverse().compose(&estimate[last]);
            let error = est_rel.inverse().compose(&gt_rel);
            sum += error.translation.norm() / length;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::NoSegments);
    }
    Ok((100.0 * sum / count as f64, count))
}

/// Mean position error after the best rigid alignment of the estimate onto
/// the ground truth.
pub fn absolute_trajectory_error(estimate: &[Pose<f64>], ground_truth: &[Pose<f64>]) -> Result<f64> {
    check_lengths(estimate, ground_truth, 3)?;
    let est: Vec<Vector3<f64>> = estimate.iter().map(|p| p.translation).collect();
    let gt: Vec<Vector3<f64>> = ground_truth.iter().map(|p| p.translation).collect();
    let align = fit_rigid_transform(&est, &gt)?;
    let total: f64 = est.iter().zip(&gt).map(|(e, g)| (align.transform_point(e) - g).norm()).sum();
    Ok(total / est.len() as f64)
}

/// Machine-readable summary of both metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub num_poses: usize,
    pub path_length_m: f64,
    /// `None` when the trajectory is shorter than the smallest segment.
    pub rte_percent: Option<f64>,
    pub rte_segments: usize,
    /// `None` when the positions are collinear and no alignment exists.
    pub ate_m: Option<f64>,
}

pub fn evaluate(estimate: &[Pose<f64>], ground_truth: &[Pose<f64>]) -> Result<MetricReport> {
    let ate_m = match absolute_trajectory_error(estimate, ground_truth) {
        Ok(ate) => Some(ate),
        Err(Error::DegenerateInput(_)) if estimate.len() == ground_truth.len() => None,
        Err(e) => return Err(e),
    };
    let (rte_percent, rte_segments) = match relative_translation_error_with(estimate, ground_truth, &RteConfig::default()) {
        Ok((rte, n)) => (Some(rte), n),
        Err(Error::NoSegments) => (None, 0),
        Err(e) => return Err(e),
    };
    Ok(MetricReport {
        num_poses: estimate.len(),
        path_length_m: path_lengths(ground_truth).last().copied().unwrap_or(0.0),
        rte_percent,
        rte_segments,
        ate_m,
    })
}
