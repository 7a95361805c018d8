//! Elevation grids over windows of registered scans and yaw/translation
//! matching between grids, producing loop constraints.
//!
//! Grids live in the gravity-aligned frame of their anchor scan. Cells are
//! indexed absolutely (`floor(x / cell_size)`), so a raster shifted by whole
//! cells keeps its values and only moves its origin index.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use log::debug;
use nalgebra::{Matrix3, UnitQuaternion, Vector2, Vector3};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose, TrajectoryFrame};
use crate::scalar::{to_f64, Real};
use crate::scan::Scan;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopClosureConfig {
    /// Scans aggregated per grid.
    pub n_map: usize,
    /// Scans shared by consecutive grids.
    pub n_overlap: usize,
    pub cell_size: f64,
    /// Height of the kept z band above `z_min`, meters.
    pub z_band: f64,
    /// `z_min` is this far below the ground estimate, meters.
    pub ground_margin: f64,
    /// Ground height in the anchor frame. Estimated from the points around
    /// the anchor when unset.
    pub ground_z: Option<f64>,
    /// Points farther than this from the anchor (horizontally) are dropped.
    pub max_range: f64,
    pub min_valid_fraction: f64,
    pub yaw_step_deg: f64,
    /// Cell multiplier of the coarse raster used for the exhaustive search.
    pub coarse_factor: usize,
    /// Coarse hypotheses re-scored at full resolution.
    pub candidates: usize,
    pub min_correlation: f64,
    /// Minimum overlap as a fraction of the smaller grid's valid cells.
    pub min_overlap: f64,
    pub search_radius: f64,
    /// Grids closer than this many indices are never matched.
    pub min_separation: usize,
}

impl Default for LoopClosureConfig {
    fn default() -> Self {
        Self {
            n_map: 100,
            n_overlap: 30,
            cell_size: 0.5,
            z_band: 10.0,
            ground_margin: 0.5,
            ground_z: None,
            max_range: 80.0,
            min_valid_fraction: 0.1,
            yaw_step_deg: 1.0,
            coarse_factor: 4,
            candidates: 4,
            min_correlation: 0.7,
            min_overlap: 0.3,
            search_radius: 100.0,
            min_separation: 3,
        }
    }
}

impl LoopClosureConfig {
    /// Scans between the starts of consecutive windows.
    pub fn window_step(&self) -> usize {
        self.n_map.saturating_sub(self.n_overlap).max(1)
    }

    /// Inclusive scan ranges of every complete window over `num_scans` scans.
    pub fn windows(&self, num_scans: usize) -> Vec<(usize, usize)> {
        if self.n_map == 0 {
            return Vec::new();
        }
        (0..)
            .map(|k| k * self.window_step())
            .take_while(|start| start + self.n_map <= num_scans)
            .map(|start| (start, start + self.n_map - 1))
            .collect()
    }
}

/// Raster of per-cell maximum heights in the anchor frame. Invalid cells hold
/// `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct ElevationGrid {
    pub first_scan: usize,
    pub last_scan: usize,
    pub anchor_scan: usize,
    /// Gravity-aligned pose of the middle scan: its position and yaw.
    pub anchor: Pose<f64>,
    pub cell_size: f64,
    pub z_min: f64,
    pub z_max: f64,
    /// Absolute index of cell `(0, 0)`.
    pub origin: (i64, i64),
    pub width: usize,
    pub height: usize,
    cells: Vec<f64>,
}

impl ElevationGrid {
    /// Rasterizes points already expressed in the anchor frame.
    pub fn from_points(
        points: impl IntoIterator<Item = Vector3<f64>>,
        z_min: f64,
        z_max: f64,
        cell_size: f64,
        min_valid_fraction: f64,
    ) -> Result<Self> {
        let mut buckets: Vec<((i64, i64), f64)> = points
            .into_iter()
            .filter(|p| p.z >= z_min && p.z <= z_max)
            .map(|p| (cell_index(p.x, p.y, cell_size), p.z))
            .collect();
        if buckets.is_empty() {
            return Err(Error::DegenerateGrid { valid: 0, total: 0 });
        }
        let (mut lo, mut hi) = (buckets[0].0, buckets[0].0);
        for ((i, j), _) in &buckets {
            lo = (lo.0.min(*i), lo.1.min(*j));
            hi = (hi.0.max(*i), hi.1.max(*j));
        }
        let width = (hi.0 - lo.0 + 1) as usize;
        let height = (hi.1 - lo.1 + 1) as usize;
        let mut cells = vec![f64::NAN; width * height];
        for ((i, j), z) in buckets.drain(..) {
            let c = &mut cells[(j - lo.1) as usize * width + (i - lo.0) as usize];
            if c.is_nan() || z > *c {
                *c = z;
            }
        }
        let grid = Self {
            first_scan: 0,
            last_scan: 0,
            anchor_scan: 0,
            anchor: Pose::identity(),
            cell_size,
            z_min,
            z_max,
            origin: lo,
            width,
            height,
            cells,
        };
        let (valid, total) = (grid.num_valid(), grid.cells.len());
        if (valid as f64) < min_valid_fraction * total as f64 {
            return Err(Error::DegenerateGrid { valid, total });
        }
        Ok(grid)
    }

    pub fn num_valid(&self) -> usize {
        self.cells.iter().filter(|z| !z.is_nan()).count()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    /// Height of the cell with absolute index `(i, j)`.
    pub fn get(&self, i: i64, j: i64) -> Option<f64> {
        let (u, v) = (i - self.origin.0, j - self.origin.1);
        if u < 0 || v < 0 || u >= self.width as i64 || v >= self.height as i64 {
            return None;
        }
        let z = self.cells[v as usize * self.width + u as usize];
        (!z.is_nan()).then_some(z)
    }

    /// Height of the cell containing `(x, y)`.
    pub fn at(&self, x: f64, y: f64) -> Option<f64> {
        let (i, j) = cell_index(x, y, self.cell_size);
        self.get(i, j)
    }

    /// Valid cells as `(center x, center y, z)`.
    pub fn valid_cells(&self) -> Vec<Vector3<f64>> {
        let mut out = Vec::with_capacity(self.num_valid());
        for v in 0..self.height {
            for u in 0..self.width {
                let z = self.cells[v * self.width + u];
                if !z.is_nan() {
                    let (x, y) = self.cell_center(self.origin.0 + u as i64, self.origin.1 + v as i64);
                    out.push(Vector3::new(x, y, z));
                }
            }
        }
        out
    }

    pub fn cell_center(&self, i: i64, j: i64) -> (f64, f64) {
        ((i as f64 + 0.5) * self.cell_size, (j as f64 + 0.5) * self.cell_size)
    }

    /// Bilinear height over cell centers with its gradient; `None` unless the
    /// four surrounding cells are valid.
    fn bilinear(&self, x: f64, y: f64) -> Option<(f64, Vector2<f64>)> {
        let c = self.cell_size;
        let (gx, gy) = (x / c - 0.5, y / c - 0.5);
        let (i, j) = (gx.floor() as i64, gy.floor() as i64);
        let (fx, fy) = (gx - i as f64, gy - j as f64);
        let z00 = self.get(i, j)?;
        let z10 = self.get(i + 1, j)?;
        let z01 = self.get(i, j + 1)?;
        let z11 = self.get(i + 1, j + 1)?;
        let z = z00 * (1.0 - fx) * (1.0 - fy) + z10 * fx * (1.0 - fy) + z01 * (1.0 - fx) * fy + z11 * fx * fy;
        let dx = ((z10 - z00) * (1.0 - fy) + (z11 - z01) * fy) / c;
        let dy = ((z01 - z00) * (1.0 - fx) + (z11 - z10) * fx) / c;
        Some((z, Vector2::new(dx, dy)))
    }

    /// Writes the raster as a binary PGM. Heights map linearly from
    /// `[z_min, z_max]` to `1..=255`; invalid cells are 0. The first row is the
    /// largest y.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut bytes = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        let span = (self.z_max - self.z_min).max(f64::EPSILON);
        for v in (0..self.height).rev() {
            for u in 0..self.width {
                let z = self.cells[v * self.width + u];
                bytes.push(if z.is_nan() {
                    0
                } else {
                    (1.0 + 254.0 * ((z - self.z_min) / span).clamp(0.0, 1.0)).round() as u8
                });
            }
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&bytes))
            .map_err(|e| Error::io(path, e))
    }
}

fn cell_index(x: f64, y: f64, cell_size: f64) -> (i64, i64) {
    ((x / cell_size).floor() as i64, (y / cell_size).floor() as i64)
}

/// Gravity-aligned version of `pose`: same position and heading, no roll or
/// pitch.
pub fn gravity_aligned<T: Real>(pose: &Pose<T>) -> Pose<T> {
    Pose::from_yaw(pose.yaw(), pose.translation)
}

/// Builds the grid of one window. `frames[k]` must be the registered frame of
/// `scans[k]`; the anchor is the middle one.
pub fn build_elevation_grid<T: Real>(
    frames: &[TrajectoryFrame<T>],
    scans: &[Scan<T>],
    config: &LoopClosureConfig,
) -> Result<ElevationGrid> {
    if frames.is_empty() || frames.len() != scans.len() {
        return Err(Error::InvalidArgument(format!(
            "grid window needs matching frames and scans, got {} and {}",
            frames.len(),
            scans.len()
        )));
    }
    let mid = frames.len() / 2;
    let anchor = gravity_aligned(&frames[mid].mid_pose().cast::<f64>());
    let to_anchor = anchor.inverse();
    let max_range_sq = config.max_range * config.max_range;

    let mut points = Vec::new();
    for (frame, scan) in frames.iter().zip(scans) {
        let frame = frame.cast::<f64>();
        for p in &scan.points {
            let alpha = if scan.has_alpha { to_f64(p.alpha) } else { 1.0 };
            let world = frame.interpolate(alpha).transform_point(&p.position.map(to_f64));
            let local = to_anchor.transform_point(&world);
            if local.xy().norm_squared() <= max_range_sq {
                points.push(local);
            }
        }
    }
    let ground = match config.ground_z {
        Some(z) => z,
        None => estimate_ground(&points)?,
    };
    let z_min = ground - config.ground_margin;
    let mut grid = ElevationGrid::from_points(
        points,
        z_min,
        z_min + config.z_band,
        config.cell_size,
        config.min_valid_fraction,
    )?;
    grid.first_scan = frames[0].scan_index;
    grid.last_scan = frames[frames.len() - 1].scan_index;
    grid.anchor_scan = frames[mid].scan_index;
    grid.anchor = anchor;
    Ok(grid)
}

/// Low percentile of the heights of points near the anchor.
fn estimate_ground(points: &[Vector3<f64>]) -> Result<f64> {
    const RADIUS: f64 = 10.0;
    const PERCENTILE: f64 = 0.05;
    let mut near: Vec<f64> = points
        .iter()
        .filter(|p| p.xy().norm_squared() <= RADIUS * RADIUS)
        .map(|p| p.z)
        .collect();
    if near.is_empty() {
        near = points.iter().map(|p| p.z).collect();
    }
    if near.is_empty() {
        return Err(Error::DegenerateGrid { valid: 0, total: 0 });
    }
    let k = ((near.len() - 1) as f64 * PERCENTILE) as usize;
    let (_, z, _) = near.select_nth_unstable_by(k, f64::total_cmp);
    Ok(*z)
}

/// Accepted match between two grids.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopConstraint {
    pub grid_a: usize,
    pub grid_b: usize,
    pub anchor_scan_a: usize,
    pub anchor_scan_b: usize,
    /// Maps points of b's anchor frame into a's: `p_a = relative * p_b`. Yaw
    /// and planar translation come from the match, the z offset from the mean
    /// height difference over the overlap.
    pub relative: Pose<f64>,
    /// Normalized cross-correlation at the solution, in `[0, 1]`.
    pub score: f64,
    /// Overlap as a fraction of the smaller grid's valid cells.
    pub overlap: f64,
}

/// Planar transform `p_a = R(yaw) p_b + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Planar {
    yaw: f64,
    t: Vector2<f64>,
}

impl Planar {
    fn apply(&self, p: &Vector2<f64>) -> Vector2<f64> {
        let (s, c) = self.yaw.sin_cos();
        Vector2::new(c * p.x - s * p.y, s * p.x + c * p.y) + self.t
    }

    fn apply_inverse(&self, p: &Vector2<f64>) -> Vector2<f64> {
        let (s, c) = self.yaw.sin_cos();
        let d = p - self.t;
        Vector2::new(c * d.x + s * d.y, -s * d.x + c * d.y)
    }
}

/// Correlation statistics of one hypothesis over the overlap.
#[derive(Debug, Clone, Copy, Default)]
struct Overlap {
    n: usize,
    ncc: f64,
    mean_offset: f64,
}

fn ncc_from_sums(n: f64, sa: f64, sb: f64, sab: f64, saa: f64, sbb: f64) -> Option<f64> {
    let var_a = saa - sa * sa / n;
    let var_b = sbb - sb * sb / n;
    // Flat overlaps (ground only) carry no information.
    if var_a <= 1e-6 * n || var_b <= 1e-6 * n {
        return None;
    }
    Some((sab - sa * sb / n) / (var_a * var_b).sqrt())
}

/// Scores `transform` by sampling b at every valid cell of a.
fn score(a_cells: &[Vector3<f64>], b: &ElevationGrid, transform: &Planar) -> Overlap {
    let (mut n, mut sa, mut sb, mut sab, mut saa, mut sbb) = (0usize, 0.0, 0.0, 0.0, 0.0, 0.0);
    for p in a_cells {
        let q = transform.apply_inverse(&p.xy());
        if let Some(zb) = b.at(q.x, q.y) {
            let za = p.z;
            n += 1;
            sa += za;
            sb += zb;
            sab += za * zb;
            saa += za * za;
            sbb += zb * zb;
        }
    }
    if n < 3 {
        return Overlap { n, ncc: f64::NEG_INFINITY, mean_offset: 0.0 };
    }
    let nf = n as f64;
    let ncc = ncc_from_sums(nf, sa, sb, sab, saa, sbb).unwrap_or(f64::NEG_INFINITY);
    Overlap { n, ncc, mean_offset: (sa - sb) / nf }
}

/// 2D FFT over a row-major `ny x nx` buffer.
struct Fft2 {
    nx: usize,
    ny: usize,
    rows: Arc<dyn Fft<f64>>,
    cols: Arc<dyn Fft<f64>>,
    rows_inv: Arc<dyn Fft<f64>>,
    cols_inv: Arc<dyn Fft<f64>>,
    column: Vec<Complex<f64>>,
}

impl Fft2 {
    fn new(nx: usize, ny: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            nx,
            ny,
            rows: planner.plan_fft_forward(nx),
            cols: planner.plan_fft_forward(ny),
            rows_inv: planner.plan_fft_inverse(nx),
            cols_inv: planner.plan_fft_inverse(ny),
            column: vec![Complex::default(); ny],
        }
    }

    fn len(&self) -> usize {
        self.nx * self.ny
    }

    fn run(&mut self, data: &mut [Complex<f64>], inverse: bool) {
        let (rows, cols) = if inverse {
            (&self.rows_inv, &self.cols_inv)
        } else {
            (&self.rows, &self.cols)
        };
        rows.process(data);
        for x in 0..self.nx {
            for y in 0..self.ny {
                self.column[y] = data[y * self.nx + x];
            }
            cols.process(&mut self.column);
            for y in 0..self.ny {
                data[y * self.nx + x] = self.column[y];
            }
        }
    }

    /// Spectra of two real images packed as `re + i im`.
    fn forward_pair(&mut self, re: &[f64], im: &[f64]) -> (Vec<Complex<f64>>, Vec<Complex<f64>>) {
        let mut z: Vec<Complex<f64>> = re.iter().zip(im).map(|(&r, &i)| Complex::new(r, i)).collect();
        self.run(&mut z, false);
        let (nx, ny) = (self.nx, self.ny);
        let mut fr = vec![Complex::default(); z.len()];
        let mut fi = vec![Complex::default(); z.len()];
        for y in 0..ny {
            for x in 0..nx {
                let k = y * nx + x;
                let m = ((ny - y) % ny) * nx + (nx - x) % nx;
                let zc = z[m].conj();
                fr[k] = (z[k] + zc) * 0.5;
                fi[k] = (z[k] - zc) * Complex::new(0.0, -0.5);
            }
        }
        (fr, fi)
    }

    /// Inverse transforms of two Hermitian spectra, returned as real images.
    fn inverse_pair(&mut self, p: &[Complex<f64>], q: &[Complex<f64>]) -> (Vec<f64>, Vec<f64>) {
        let mut z: Vec<Complex<f64>> = p.iter().zip(q).map(|(a, b)| a + Complex::new(-b.im, b.re)).collect();
        self.run(&mut z, true);
        let scale = 1.0 / self.len() as f64;
        (z.iter().map(|c| c.re * scale).collect(), z.iter().map(|c| c.im * scale).collect())
    }
}

/// Smallest size `>= n` whose only prime factors are 2, 3 and 5.
fn fft_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// Max-z raster at coarse resolution placed in a zero-padded buffer.
struct CoarseImage {
    /// Absolute coarse index of buffer element `(0, 0)`.
    origin: (i64, i64),
    z: Vec<f64>,
    z2: Vec<f64>,
    mask: Vec<f64>,
    valid: usize,
}

impl CoarseImage {
    fn rasterize(points: impl Iterator<Item = Vector3<f64>>, cell: f64, nx: usize, ny: usize, origin: (i64, i64)) -> Self {
        let mut z = vec![f64::NAN; nx * ny];
        for p in points {
            let (i, j) = cell_index(p.x, p.y, cell);
            let (u, v) = (i - origin.0, j - origin.1);
            debug_assert!(u >= 0 && v >= 0 && (u as usize) < nx && (v as usize) < ny);
            let c = &mut z[v as usize * nx + u as usize];
            if c.is_nan() || p.z > *c {
                *c = p.z;
            }
        }
        let mask: Vec<f64> = z.iter().map(|v| if v.is_nan() { 0.0 } else { 1.0 }).collect();
        let z: Vec<f64> = z.iter().map(|v| if v.is_nan() { 0.0 } else { *v }).collect();
        let z2 = z.iter().map(|v| v * v).collect();
        let valid = mask.iter().filter(|m| **m > 0.0).count();
        Self { origin, z, z2, mask, valid }
    }
}

fn coarse_bounds(points: &[Vector3<f64>], cell: f64) -> ((i64, i64), (i64, i64)) {
    let mut lo = (i64::MAX, i64::MAX);
    let mut hi = (i64::MIN, i64::MIN);
    for p in points {
        let (i, j) = cell_index(p.x, p.y, cell);
        lo = (lo.0.min(i), lo.1.min(j));
        hi = (hi.0.max(i), hi.1.max(j));
    }
    (lo, hi)
}

#[derive(Debug, Clone, Copy)]
struct Hypothesis {
    yaw: f64,
    t: Vector2<f64>,
    ncc: f64,
}

/// Exhaustive yaw sweep with FFT-based masked cross-correlation on coarse
/// rasters. Returns the best translation for every yaw.
fn coarse_search(a_cells: &[Vector3<f64>], b_cells: &[Vector3<f64>], cell: f64, config: &LoopClosureConfig) -> Vec<Hypothesis> {
    let (a_lo, a_hi) = coarse_bounds(a_cells, cell);
    let a_extent = ((a_hi.0 - a_lo.0 + 1) as usize, (a_hi.1 - a_lo.1 + 1) as usize);
    // Any rotation keeps b within this span; buffers of a + b cells never
    // wrap a valid shift onto another.
    let centroid = b_cells.iter().map(|p| p.xy()).sum::<Vector2<f64>>() / b_cells.len() as f64;
    let b_radius = b_cells.iter().map(|p| (p.xy() - centroid).norm()).fold(0.0, f64::max);
    let b_extent = (2.0 * b_radius / cell).ceil() as usize + 2;
    let nx = fft_size(a_extent.0 + b_extent);
    let ny = fft_size(a_extent.1 + b_extent);
    let mut fft = Fft2::new(nx, ny);

    let a = CoarseImage::rasterize(a_cells.iter().copied(), cell, nx, ny, a_lo);
    let (fa, fa2) = fft.forward_pair(&a.z, &a.z2);
    let (fma, _) = fft.forward_pair(&a.mask, &vec![0.0; nx * ny]);

    let steps = (360.0 / config.yaw_step_deg).round().max(1.0) as usize;
    let mut out = Vec::with_capacity(steps);
    let mut rotated = Vec::with_capacity(b_cells.len());
    for k in 0..steps {
        let yaw = (k as f64 * config.yaw_step_deg).to_radians();
        let rotation = Planar { yaw, t: Vector2::zeros() };
        rotated.clear();
        rotated.extend(b_cells.iter().map(|p| {
            let q = rotation.apply(&p.xy());
            Vector3::new(q.x, q.y, p.z)
        }));
        let (b_lo, _) = coarse_bounds(&rotated, cell);
        let b = CoarseImage::rasterize(rotated.iter().copied(), cell, nx, ny, b_lo);
        let min_n = (config.min_overlap * a.valid.min(b.valid) as f64).max(3.0);

        let (fb, fb2) = fft.forward_pair(&b.z, &b.z2);
        let (fmb, _) = fft.forward_pair(&b.mask, &vec![0.0; nx * ny]);
        let spectra = |f: &[Complex<f64>], g: &[Complex<f64>]| -> Vec<Complex<f64>> {
            f.iter().zip(g).map(|(x, y)| x * y.conj()).collect()
        };
        let (n, sa) = fft.inverse_pair(&spectra(&fma, &fmb), &spectra(&fa, &fmb));
        let (sb, sab) = fft.inverse_pair(&spectra(&fma, &fb), &spectra(&fa, &fb));
        let (saa, sbb) = fft.inverse_pair(&spectra(&fa2, &fmb), &spectra(&fma, &fb2));

        let mut best: Option<(f64, usize)> = None;
        for idx in 0..nx * ny {
            let count = n[idx].round();
            if count < min_n {
                continue;
            }
            if let Some(ncc) = ncc_from_sums(count, sa[idx], sb[idx], sab[idx], saa[idx], sbb[idx]) {
                if best.is_none_or(|(v, _)| ncc > v) {
                    best = Some((ncc, idx));
                }
            }
        }
        if let Some((ncc, idx)) = best {
            // Circular buffer shift d in (-b extent, a extent), then absolute
            // cell shift.
            let unwrap = |d: usize, extent: usize, n: usize| if d >= extent { d as i64 - n as i64 } else { d as i64 };
            let dx = unwrap(idx % nx, a_extent.0, nx);
            let dy = unwrap(idx / nx, a_extent.1, ny);
            let sx = dx + a.origin.0 - b.origin.0;
            let sy = dy + a.origin.1 - b.origin.1;
            out.push(Hypothesis { yaw, t: Vector2::new(sx as f64, sy as f64) * cell, ncc });
        }
    }
    out
}

/// Best yaw/translation around `seed` at full resolution.
fn fine_search(a: &ElevationGrid, a_cells: &[Vector3<f64>], b: &ElevationGrid, seed: &Hypothesis, config: &LoopClosureConfig) -> (Planar, Overlap) {
    let c = a.cell_size;
    let radius = config.coarse_factor as i64 + 1;
    let step = config.yaw_step_deg.to_radians();
    let mut best = (Planar { yaw: seed.yaw, t: seed.t }, Overlap { ncc: f64::NEG_INFINITY, ..Overlap::default() });
    for dyaw in [-1.0, 0.0, 1.0] {
        for di in -radius..=radius {
            for dj in -radius..=radius {
                let candidate = Planar {
                    yaw: seed.yaw + dyaw * step,
                    t: seed.t + Vector2::new(di as f64, dj as f64) * c,
                };
                let overlap = score(a_cells, b, &candidate);
                if overlap.ncc > best.1.ncc {
                    best = (candidate, overlap);
                }
            }
        }
    }
    best
}

/// One Gauss-Newton step of b's cells against a's bilinear height surface
/// over `(tx, ty, yaw)`, with the height offset eliminated.
fn refine(a: &ElevationGrid, b_cells: &[Vector3<f64>], transform: &Planar) -> Option<Planar> {
    const GATE: f64 = 1.0;
    let evaluate = |t: &Planar| -> Vec<(f64, Vector3<f64>)> {
        let (s, c) = t.yaw.sin_cos();
        b_cells
            .iter()
            .filter_map(|p| {
                let q = t.apply(&p.xy());
                let (z, g) = a.bilinear(q.x, q.y)?;
                let dq_dyaw = Vector2::new(-s * p.x - c * p.y, c * p.x - s * p.y);
                Some((z - p.z, Vector3::new(g.x, g.y, g.dot(&dq_dyaw))))
            })
            .collect()
    };
    let residuals = evaluate(transform);
    if residuals.len() < 10 {
        return None;
    }
    let offset = median(residuals.iter().map(|(r, _)| *r).collect());
    let inliers: Vec<_> = residuals.iter().filter(|(r, _)| (r - offset).abs() < GATE).collect();
    if inliers.len() < 10 {
        return None;
    }
    let nf = inliers.len() as f64;
    let mean_r = inliers.iter().map(|(r, _)| r).sum::<f64>() / nf;
    let mean_j = inliers.iter().map(|(_, j)| j).sum::<Vector3<f64>>() / nf;
    let mut h = Matrix3::zeros();
    let mut g = Vector3::zeros();
    for (r, j) in &inliers {
        let (r, j) = (r - mean_r, j - mean_j);
        h += j * j.transpose();
        g += j * r;
    }
    let delta = h.cholesky()?.solve(&(-g));
    let step = Planar { yaw: transform.yaw + delta.z, t: transform.t + delta.xy() };
    let cost = |t: &Planar| {
        let r: Vec<f64> = evaluate(t).into_iter().map(|(r, _)| r).filter(|r| (r - offset).abs() < GATE).collect();
        let m = r.iter().sum::<f64>() / r.len().max(1) as f64;
        (r.iter().map(|v| (v - m).powi(2)).sum::<f64>(), r.len())
    };
    let (before, n_before) = cost(transform);
    let (after, n_after) = cost(&step);
    let bounded = delta.xy().norm() <= a.cell_size && delta.z.abs() <= 1f64.to_radians();
    (bounded && n_after >= n_before && after < before).then_some(step)
}

fn median(mut values: Vec<f64>) -> f64 {
    let k = values.len() / 2;
    let (_, m, _) = values.select_nth_unstable_by(k, f64::total_cmp);
    *m
}

/// Matches b against a. On success the constraint maps b's anchor frame into
/// a's; `grid_a`/`grid_b` are left at 0 for the caller to fill.
pub fn match_grids(a: &ElevationGrid, b: &ElevationGrid, config: &LoopClosureConfig) -> Option<LoopConstraint> {
    if (a.cell_size - b.cell_size).abs() > 1e-12 {
        return None;
    }
    let a_cells = a.valid_cells();
    let b_cells = b.valid_cells();
    let min_valid = a_cells.len().min(b_cells.len());
    if min_valid == 0 {
        return None;
    }
    let coarse_cell = a.cell_size * config.coarse_factor.max(1) as f64;
    let mut hypotheses = coarse_search(&a_cells, &b_cells, coarse_cell, config);
    hypotheses.sort_by(|x, y| y.ncc.total_cmp(&x.ncc).then(x.yaw.total_cmp(&y.yaw)));

    // Distinct yaws only: neighbors of a peak re-find the same solution.
    let separation = 3.0 * config.yaw_step_deg.to_radians();
    let mut seeds: Vec<Hypothesis> = Vec::new();
    for h in hypotheses {
        if seeds.len() >= config.candidates {
            break;
        }
        if seeds.iter().all(|s| angle_diff(s.yaw, h.yaw).abs() > separation) {
            seeds.push(h);
        }
    }

    let mut best: Option<(Planar, Overlap)> = None;
    for seed in &seeds {
        let found = fine_search(a, &a_cells, b, seed, config);
        if best.is_none_or(|(_, o)| found.1.ncc > o.ncc) {
            best = Some(found);
        }
    }
    let (mut transform, mut overlap) = best?;
    if let Some(refined) = refine(a, &b_cells, &transform) {
        let refined_overlap = score(&a_cells, b, &refined);
        if refined_overlap.ncc >= overlap.ncc {
            transform = refined;
            overlap = refined_overlap;
        }
    }
    let overlap_fraction = overlap.n as f64 / min_valid as f64;
    debug!(
        "grid match: ncc {:.3}, overlap {:.2}, yaw {:.1} deg, t ({:.2}, {:.2})",
        overlap.ncc,
        overlap_fraction,
        transform.yaw.to_degrees(),
        transform.t.x,
        transform.t.y
    );
    if overlap.ncc < config.min_correlation || overlap_fraction < config.min_overlap {
        return None;
    }
    let yaw = angle_diff(transform.yaw, 0.0);
    Some(LoopConstraint {
        grid_a: 0,
        grid_b: 0,
        anchor_scan_a: a.anchor_scan,
        anchor_scan_b: b.anchor_scan,
        relative: Pose::new(
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw),
            Vector3::new(transform.t.x, transform.t.y, overlap.mean_offset),
        ),
        score: overlap.ncc.clamp(0.0, 1.0),
        overlap: overlap_fraction,
    })
}

/// `x - y` wrapped to `(-pi, pi]`.
fn angle_diff(x: f64, y: f64) -> f64 {
    let d = (x - y).rem_euclid(std::f64::consts::TAU);
    if d > std::f64::consts::PI {
        d - std::f64::consts::TAU
    } else {
        d
    }
}

/// Matches the last grid against every earlier one within the search radius
/// and at least `min_separation` indices away.
pub fn detect_new_loops(grids: &[ElevationGrid], config: &LoopClosureConfig) -> Vec<LoopConstraint> {
    let Some(j) = grids.len().checked_sub(1) else {
        return Vec::new();
    };
    let b = &grids[j];
    let mut loops = Vec::new();
    for (i, a) in grids[..j].iter().enumerate() {
        if j - i < config.min_separation {
            continue;
        }
        if (a.anchor.translation - b.anchor.translation).xy().norm() > config.search_radius {
            continue;
        }
        if let Some(mut constraint) = match_grids(a, b, config) {
            constraint.grid_a = i;
            constraint.grid_b = j;
            loops.push(constraint);
        }
    }
    loops
}

/// Runs [`detect_new_loops`] as if the grids had arrived one at a time.
pub fn detect_loops(grids: &[ElevationGrid], config: &LoopClosureConfig) -> Vec<LoopConstraint> {
    (1..=grids.len()).flat_map(|n| detect_new_loops(&grids[..n], config)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn test_config() -> LoopClosureConfig {
        LoopClosureConfig { min_valid_fraction: 0.0, ..LoopClosureConfig::default() }
    }

    /// Ground plus a few boxes of random heights, sampled densely.
    fn blocks(seed: u64) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let boxes: Vec<(f64, f64, f64, f64, f64)> = (0..14)
            .map(|_| {
                (
                    rng.random_range(-18.0..14.0),
                    rng.random_range(-18.0..14.0),
                    rng.random_range(1.5..5.0),
                    rng.random_range(1.5..5.0),
                    rng.random_range(1.0..8.0),
                )
            })
            .collect();
        // Quarter-meter lattice: shifts by whole cells are exact.
        let mut pts = Vec::new();
        for u in 0..160 {
            let x = u as f64 * 0.25 - 20.0;
            for v in 0..160 {
                let y = v as f64 * 0.25 - 20.0;
                let mut z: f64 = 0.0;
                for (bx, by, w, d, h) in &boxes {
                    if x >= *bx && x < bx + w && y >= *by && y < by + d {
                        z = z.max(*h);
                    }
                }
                pts.push(Vector3::new(x, y, z));
            }
        }
        pts
    }

    fn grid(points: impl IntoIterator<Item = Vector3<f64>>) -> ElevationGrid {
        ElevationGrid::from_points(points, -0.5, 9.5, 0.5, 0.0).unwrap()
    }

    #[test]
    fn flat_ground_has_single_height() {
        let pts = (0..400).map(|k| Vector3::new((k % 20) as f64 * 0.3, (k / 20) as f64 * 0.3, -1.8));
        let g = ElevationGrid::from_points(pts, -2.3, 7.7, 0.5, 0.1).unwrap();
        let cells = g.valid_cells();
        assert!(!cells.is_empty());
        assert!(cells.iter().all(|c| c.z == -1.8));
    }

    #[test]
    fn wall_along_x_is_one_raster_line() {
        let mut pts = Vec::new();
        for i in 0..100 {
            let x = i as f64 * 0.1;
            pts.push(Vector3::new(x, -3.0, 0.0));
            pts.push(Vector3::new(x, 3.0, 0.0));
            for k in 0..30 {
                pts.push(Vector3::new(x, 0.1, k as f64 * 0.2));
            }
        }
        let g = grid(pts);
        let high: Vec<_> = g.valid_cells().into_iter().filter(|c| c.z > 1.0).collect();
        assert_eq!(high.len(), 20);
        assert!(high.iter().all(|c| c.y == 0.25 && (c.z - 5.8).abs() < 1e-12));
    }

    #[test]
    fn raster_matches_bucketing_oracle() {
        let pts = blocks(3);
        let g = grid(pts.iter().copied());
        let mut oracle = std::collections::BTreeMap::new();
        for p in &pts {
            let key = ((p.x / 0.5).floor() as i64, (p.y / 0.5).floor() as i64);
            let e = oracle.entry(key).or_insert(f64::MIN);
            *e = e.max(p.z);
        }
        assert_eq!(oracle.len(), g.num_valid());
        for ((i, j), z) in oracle {
            assert_eq!(g.get(i, j), Some(z));
        }
    }

    #[test]
    fn degenerate_grid_is_reported() {
        let pts = [Vector3::new(0.0, 0.0, 0.0), Vector3::new(30.0, 30.0, 0.0)];
        let err = ElevationGrid::from_points(pts, -1.0, 9.0, 0.5, 0.1).unwrap_err();
        assert!(matches!(err, Error::DegenerateGrid { valid: 2, .. }));
    }

    #[test]
    fn integer_cell_shift_moves_origin_only() {
        let pts = blocks(4);
        let g = grid(pts.iter().copied());
        let shifted = grid(pts.iter().map(|p| p + Vector3::new(1.5, -2.0, 0.0)));
        assert_eq!(shifted.origin, (g.origin.0 + 3, g.origin.1 - 4));
        assert_eq!((shifted.width, shifted.height), (g.width, g.height));
        assert_eq!(shifted.valid_cells().len(), g.valid_cells().len());
        for (p, q) in g.valid_cells().iter().zip(shifted.valid_cells()) {
            assert_eq!(p.z, q.z);
        }
    }

    #[test]
    fn self_match_is_identity() {
        let g = grid(blocks(5));
        let m = match_grids(&g, &g, &test_config()).expect("self match");
        assert!(m.relative.translation.norm() < 1e-9, "{:?}", m.relative);
        assert!(m.relative.rotation_angle() < 1e-9);
        assert!((m.score - 1.0).abs() < 1e-9);
    }

    #[test]
    fn two_cell_shift_is_recovered() {
        let pts = blocks(6);
        let a = grid(pts.iter().copied());
        let b = grid(pts.iter().map(|p| p - Vector3::new(1.0, 0.0, 0.0)));
        let m = match_grids(&a, &b, &test_config()).expect("shift match");
        assert!((m.relative.translation - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-9, "{:?}", m.relative);
        assert!(m.relative.rotation_angle() < 1e-9);
    }

    #[test]
    fn rotation_about_center_is_recovered() {
        let pts = blocks(7);
        let a = grid(pts.iter().copied());
        let rot = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 30f64.to_radians());
        let b = grid(pts.iter().map(|p| rot * p));
        let m = match_grids(&a, &b, &test_config()).expect("rotation match");
        let yaw = m.relative.yaw().to_degrees();
        assert!((yaw + 30.0).abs() <= 1.0, "yaw {yaw}");
        assert!(m.relative.translation.xy().norm() < 0.75, "{:?}", m.relative);
    }

    #[test]
    fn reverse_match_is_inverse() {
        let pts = blocks(8);
        let a = grid(pts.iter().copied());
        let motion = Pose::from_yaw(12f64.to_radians(), Vector3::new(3.2, -1.1, 0.0));
        let b = grid(pts.iter().map(|p| motion.transform_point(p)));
        let ab = match_grids(&a, &b, &test_config()).unwrap().relative;
        let ba = match_grids(&b, &a, &test_config()).unwrap().relative;
        let round_trip = ab.compose(&ba);
        assert!(round_trip.translation.xy().norm() < 0.5 + 1.0, "{round_trip:?}");
        assert!(round_trip.rotation_angle().to_degrees() < 1.0 + 1e-9);
        let truth = motion.inverse();
        assert!((ab.translation.xy() - truth.translation.xy()).norm() < 0.5);
        assert!(ab.angle_to(&truth).to_degrees() < 1.0);
    }

    #[test]
    fn disjoint_areas_do_not_match() {
        let a = grid(blocks(9));
        let b = grid(blocks(10).into_iter().map(|p| p + Vector3::new(500.0, 0.0, 0.0)));
        assert!(match_grids(&a, &b, &test_config()).is_none());
    }

    #[test]
    fn detection_respects_separation_and_radius() {
        let mut grids: Vec<ElevationGrid> = (0..4).map(|k| grid(blocks(20 + k))).collect();
        grids.push(grid(blocks(20)));
        for (k, g) in grids.iter_mut().enumerate() {
            g.anchor_scan = k * 70 + 50;
        }
        let config = test_config();
        let loops = detect_loops(&grids, &config);
        assert_eq!(loops.len(), 1);
        assert_eq!((loops[0].grid_a, loops[0].grid_b), (0, 4));
        assert_eq!((loops[0].anchor_scan_a, loops[0].anchor_scan_b), (50, 330));
        assert_eq!(detect_loops(&grids, &config), loops);

        grids[4].anchor.translation.x = 150.0;
        assert!(detect_loops(&grids, &config).is_empty());
    }

    #[test]
    fn windows_follow_step() {
        let config = LoopClosureConfig::default();
        assert_eq!(config.window_step(), 70);
        assert_eq!(config.windows(99), vec![]);
        assert_eq!(config.windows(240), vec![(0, 99), (70, 169), (140, 239)]);
    }

    #[test]
    fn pgm_has_header_and_payload() {
        let g = grid(blocks(11));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.pgm");
        g.write_pgm(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header = format!("P5\n{} {}\n255\n", g.width, g.height);
        assert!(bytes.starts_with(header.as_bytes()));
        assert_eq!(bytes.len(), header.len() + g.width * g.height);
    }
}
