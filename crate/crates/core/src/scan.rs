//! Scan and point representations with normalized timestamps, plus the
//! preprocessing applied before registration.

use std::collections::HashMap;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::cast;
use crate::scalar::{lit, Real};
use crate::voxel_map::VoxelKey;

/// One LiDAR return in the sensor frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanPoint<T: Real> {
    pub position: Vector3<T>,
    /// Normalized acquisition time within the scan, in `[0, 1]`.
    pub alpha: T,
    /// Absolute acquisition time in seconds, when known.
    pub timestamp: Option<f64>,
}

impl<T: Real> ScanPoint<T> {
    pub fn new(position: Vector3<T>, alpha: T) -> Self {
        Self {
            position,
            alpha,
            timestamp: None,
        }
    }

    pub fn with_timestamp(position: Vector3<T>, alpha: T, timestamp: f64) -> Self {
        Self {
            position,
            alpha,
            timestamp: Some(timestamp),
        }
    }

    pub fn range(&self) -> T {
        self.position.norm()
    }

    pub fn cast<U: Real>(&self) -> ScanPoint<U> {
        ScanPoint {
            position: self.position.map(cast),
            alpha: cast(self.alpha),
            timestamp: self.timestamp,
        }
    }
}

/// One sensor revolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Scan<T: Real> {
    pub points: Vec<ScanPoint<T>>,
    pub index: usize,
    pub tau_begin: Option<f64>,
    pub tau_end: Option<f64>,
    /// Whether the per-point `alpha` values carry timing information. Scans
    /// read from files without timestamps have all `alpha = 0` and this unset
    /// until timestamps are estimated.
    pub has_alpha: bool,
}

impl<T: Real> Scan<T> {
    pub fn new(points: Vec<ScanPoint<T>>, index: usize) -> Self {
        Self {
            points,
            index,
            tau_begin: None,
            tau_end: None,
            has_alpha: true,
        }
    }

    /// Builds a scan from points whose absolute timestamps are all set;
    /// `alpha` is derived as `(tau - tau_b) / (tau_e - tau_b)`.
    pub fn from_timestamped(positions: Vec<Vector3<T>>, timestamps: Vec<f64>, index: usize) -> Self {
        let tau_begin = timestamps.iter().copied().fold(f64::INFINITY, f64::min);
        let tau_end = timestamps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = tau_end - tau_begin;
        let has_alpha = span > 0.0 && span.is_finite();
        let points = positions
            .into_iter()
            .zip(timestamps)
            .map(|(position, tau)| {
                let alpha = if has_alpha { (tau - tau_begin) / span } else { 0.0 };
                ScanPoint::with_timestamp(position, lit(alpha.clamp(0.0, 1.0)), tau)
            })
            .collect();
        Self {
            points,
            index,
            tau_begin: has_alpha.then_some(tau_begin),
            tau_end: has_alpha.then_some(tau_end),
            has_alpha,
        }
    }

    /// A scan without timing information (`alpha` unset).
    pub fn untimed(positions: Vec<Vector3<T>>, index: usize) -> Self {
        Self {
            points: positions
                .into_iter()
                .map(|p| ScanPoint::new(p, T::zero()))
                .collect(),
            index,
            tau_begin: None,
            tau_end: None,
            has_alpha: false,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> impl Iterator<Item = &Vector3<T>> {
        self.points.iter().map(|p| &p.position)
    }

    pub fn cast<U: Real>(&self) -> Scan<U> {
        Scan {
            points: self.points.iter().map(ScanPoint::cast).collect(),
            index: self.index,
            tau_begin: self.tau_begin,
            tau_end: self.tau_end,
            has_alpha: self.has_alpha,
        }
    }
}

/// Keeps at most one point per cubic cell of side `cell_size`: the one closest
/// to the cell center, lowest index on ties. Output is in input order.
pub fn grid_sample_keypoints<T: Real>(points: &[ScanPoint<T>], cell_size: T) -> Vec<ScanPoint<T>> {
    assert!(cell_size > T::zero(), "cell size must be positive");
    let mut best: HashMap<VoxelKey, (usize, T)> = HashMap::with_capacity(points.len() / 4);
    for (index, point) in points.iter().enumerate() {
        let key = VoxelKey::from_point(&point.position, cell_size);
        let center = key.center(cell_size);
        let d2 = (point.position - center).norm_squared();
        best.entry(key)
            .and_modify(|(best_index, best_d2)| {
                if d2 < *best_d2 {
                    *best_index = index;
                    *best_d2 = d2;
                }
            })
            .or_insert((index, d2));
    }
    let mut kept: Vec<usize> = best.into_values().map(|(index, _)| index).collect();
    kept.sort_unstable();
    kept.into_iter().map(|i| points[i]).collect()
}

/// Keeps points whose range lies in `[r_min, r_max]`.
pub fn clip_by_range<T: Real>(scan: &Scan<T>, r_min: T, r_max: T) -> Result<Scan<T>> {
    if r_min < T::zero() || r_max <= r_min {
        return Err(Error::InvalidArgument(format!(
            "range gate must satisfy 0 <= r_min < r_max (got {r_min}, {r_max})"
        )));
    }
    let points: Vec<_> = scan
        .points
        .iter()
        .filter(|p| {
            let r = p.range();
            r >= r_min && r <= r_max && p.position.iter().all(|c| c.is_finite())
        })
        .copied()
        .collect();
    if points.is_empty() {
        return Err(Error::EmptyScan(format!(
            "scan {} has no point within [{r_min}, {r_max}] m",
            scan.index
        )));
    }
    Ok(Scan {
        points,
        ..scan.clone()
    })
}
