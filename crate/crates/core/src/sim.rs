//! Synthetic spinning LiDAR over analytic worlds with an exact continuous
//! ground-truth trajectory.
//!
//! Every ray is cast from the sensor pose at its own firing time, so scans
//! carry the same motion distortion as real data. Worlds are built from a
//! fixed per-scenario seed; only range noise depends on the user seed.

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{so3_exp, so3_log, Pose, TrajectoryFrame};
use crate::scan::{Scan, ScanPoint};

const RAY_EPS: f64 = 1e-9;

/// Infinite plane through `point` with unit `normal`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
}

impl Plane {
    pub fn new(point: Vector3<f64>, normal: Vector3<f64>) -> Self {
        Self { point, normal: normal.normalize() }
    }

    /// Horizontal plane at height `z`.
    pub fn ground(z: f64) -> Self {
        Self::new(Vector3::new(0.0, 0.0, z), Vector3::z())
    }

    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let denom = self.normal.dot(dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = self.normal.dot(&(self.point - origin)) / denom;
        (t > RAY_EPS).then_some(t)
    }

    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(&(p - self.point)).abs()
    }
}

/// Box with half extents `half` in its own frame; `pose` maps box to world.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox {
    pub pose: Pose<f64>,
    pub half: Vector3<f64>,
}

impl OrientedBox {
    pub fn new(pose: Pose<f64>, half: Vector3<f64>) -> Self {
        Self { pose, half }
    }

    /// Box standing on `ground_z` with footprint centered at `(x, y)`, rotated
    /// by `yaw`.
    pub fn standing(x: f64, y: f64, ground_z: f64, size: Vector3<f64>, yaw: f64) -> Self {
        let half = size * 0.5;
        Self::new(Pose::from_yaw(yaw, Vector3::new(x, y, ground_z + half.z)), half)
    }

    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let inv = self.pose.rotation.inverse();
        let o = inv * (origin - self.pose.translation);
        let d = inv * dir;
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        for axis in 0..3 {
            if d[axis].abs() < 1e-15 {
                if o[axis].abs() > self.half[axis] {
                    return None;
                }
                continue;
            }
            let a = (-self.half[axis] - o[axis]) / d[axis];
            let b = (self.half[axis] - o[axis]) / d[axis];
            let (a, b) = if a < b { (a, b) } else { (b, a) };
            t_near = t_near.max(a);
            t_far = t_far.min(b);
            if t_near > t_far {
                return None;
            }
        }
        if t_far <= RAY_EPS {
            None
        } else if t_near > RAY_EPS {
            Some(t_near)
        } else {
            Some(t_far)
        }
    }

    /// Distance from `p` to the box surface.
    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        let q = self.pose.rotation.inverse() * (p - self.pose.translation);
        let d = q.abs() - self.half;
        let outside = d.map(|v| v.max(0.0)).norm();
        let inside = d.max().min(0.0);
        (outside + inside).abs()
    }

    /// Axis-aligned footprint `(min_x, min_y, max_x, max_y)`.
    fn footprint(&self) -> (f64, f64, f64, f64) {
        let r = self.pose.rotation_matrix();
        let ex = (r.row(0).abs() * self.half)[0];
        let ey = (r.row(1).abs() * self.half)[0];
        let c = self.pose.translation;
        (c.x - ex, c.y - ey, c.x + ex, c.y + ey)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    Plane(Plane),
    Box(OrientedBox),
}

/// Uniform xy grid over box footprints, traversed per ray.
#[derive(Debug, Clone, Default)]
struct BoxGrid {
    min: (f64, f64),
    cell: f64,
    dims: (usize, usize),
    cells: Vec<Vec<u32>>,
}

impl BoxGrid {
    fn build(boxes: &[OrientedBox], cell: f64) -> Self {
        if boxes.is_empty() {
            return Self::default();
        }
        let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        let prints: Vec<_> = boxes.iter().map(OrientedBox::footprint).collect();
        for &(a, b, c, d) in &prints {
            x0 = x0.min(a);
            y0 = y0.min(b);
            x1 = x1.max(c);
            y1 = y1.max(d);
        }
        let nx = (((x1 - x0) / cell).ceil() as usize).max(1);
        let ny = (((y1 - y0) / cell).ceil() as usize).max(1);
        let mut cells = vec![Vec::new(); nx * ny];
        for (index, &(a, b, c, d)) in prints.iter().enumerate() {
            let ix0 = (((a - x0) / cell).floor() as usize).min(nx - 1);
            let ix1 = (((c - x0) / cell).floor() as usize).min(nx - 1);
            let iy0 = (((b - y0) / cell).floor() as usize).min(ny - 1);
            let iy1 = (((d - y0) / cell).floor() as usize).min(ny - 1);
            for ix in ix0..=ix1 {
                for iy in iy0..=iy1 {
                    cells[iy * nx + ix].push(index as u32);
                }
            }
        }
        Self { min: (x0, y0), cell, dims: (nx, ny), cells }
    }

    /// Nearest box hit closer than `t_max`.
    fn cast(&self, boxes: &[OrientedBox], origin: &Vector3<f64>, dir: &Vector3<f64>, t_max: f64) -> Option<f64> {
        if self.cells.is_empty() {
            return None;
        }
        let (nx, ny) = self.dims;
        let size = (nx as f64 * self.cell, ny as f64 * self.cell);
        // Clip the ray to the grid rectangle.
        let mut t0 = 0.0f64;
        let mut t1 = t_max;
        for (o, d, lo, extent) in [(origin.x, dir.x, self.min.0, size.0), (origin.y, dir.y, self.min.1, size.1)] {
            if d.abs() < 1e-15 {
                if o < lo || o > lo + extent {
                    return None;
                }
            } else {
                let a = (lo - o) / d;
                let b = (lo + extent - o) / d;
                t0 = t0.max(a.min(b));
                t1 = t1.min(a.max(b));
            }
        }
        if t0 > t1 {
            return None;
        }
        let start = origin + dir * t0;
        let cell_of = |v: f64, lo: f64, n: usize| (((v - lo) / self.cell).floor().max(0.0) as usize).min(n - 1);
        let mut ix = cell_of(start.x, self.min.0, nx);
        let mut iy = cell_of(start.y, self.min.1, ny);
        let axis_setup = |d: f64, o: f64, lo: f64, i: usize| -> (isize, f64, f64) {
            if d > 1e-15 {
                let boundary = lo + (i + 1) as f64 * self.cell;
                (1, (boundary - o) / d, self.cell / d)
            } else if d < -1e-15 {
                let boundary = lo + i as f64 * self.cell;
                (-1, (boundary - o) / d, -self.cell / d)
            } else {
                (0, f64::INFINITY, f64::INFINITY)
            }
        };
        let (sx, mut next_x, dx) = axis_setup(dir.x, origin.x, self.min.0, ix);
        let (sy, mut next_y, dy) = axis_setup(dir.y, origin.y, self.min.1, iy);

        let mut best = t_max;
        let mut hit = false;
        loop {
            for &b in &self.cells[iy * nx + ix] {
                if let Some(t) = boxes[b as usize].intersect(origin, dir) {
                    if t < best {
                        best = t;
                        hit = true;
                    }
                }
            }
            let next = next_x.min(next_y);
            if next > best || next > t1 {
                break;
            }
            if next_x < next_y {
                let n = ix as isize + sx;
                if n < 0 || n >= nx as isize {
                    break;
                }
                ix = n as usize;
                next_x += dx;
            } else {
                let n = iy as isize + sy;
                if n < 0 || n >= ny as isize {
                    break;
                }
                iy = n as usize;
                next_y += dy;
            }
        }
        hit.then_some(best)
    }
}

/// A static scene of analytic primitives.
#[derive(Debug, Clone)]
pub struct World {
    planes: Vec<Plane>,
    boxes: Vec<OrientedBox>,
    grid: BoxGrid,
}

impl World {
    pub fn new(primitives: Vec<Primitive>) -> Self {
        let mut planes = Vec::new();
        let mut boxes = Vec::new();
        for p in primitives {
            match p {
                Primitive::Plane(plane) => planes.push(plane),
                Primitive::Box(b) => boxes.push(b),
            }
        }
        let grid = BoxGrid::build(&boxes, 8.0);
        Self { planes, boxes, grid }
    }

    pub fn planes(&self) -> &[Plane] {
        &self.planes
    }

    pub fn boxes(&self) -> &[OrientedBox] {
        &self.boxes
    }

    /// Distance along the unit direction `dir` to the nearest surface, if
    /// closer than `max_range`.
    pub fn cast_ray(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, max_range: f64) -> Option<f64> {
        let mut best = f64::INFINITY;
        for plane in &self.planes {
            if let Some(t) = plane.intersect(origin, dir) {
                best = best.min(t);
            }
        }
        let limit = best.min(max_range);
        if let Some(t) = self.grid.cast(&self.boxes, origin, dir, limit) {
            best = best.min(t);
        }
        (best <= max_range).then_some(best)
    }

    /// Distance from `p` to the closest primitive surface.
    pub fn distance_to_surface(&self, p: &Vector3<f64>) -> f64 {
        let planes = self.planes.iter().map(|pl| pl.distance(p));
        let boxes = self.boxes.iter().map(|b| b.distance(p));
        planes.chain(boxes).fold(f64::INFINITY, f64::min)
    }
}

/// Spinning multi-beam sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorSpec {
    pub beams: usize,
    /// Elevation of the lowest beam, degrees.
    pub fov_down_deg: f64,
    /// Elevation of the highest beam, degrees.
    pub fov_up_deg: f64,
    pub horizontal_step_deg: f64,
    pub max_range: f64,
    /// Standard deviation of the Gaussian range noise, meters.
    pub noise_sigma: f64,
    /// Duration of one revolution, seconds.
    pub scan_period: f64,
    /// Azimuth of the first column, degrees counter-clockwise from the
    /// sensor x axis. 180 starts the sweep facing backwards.
    pub start_azimuth_deg: f64,
}

impl Default for SensorSpec {
    fn default() -> Self {
        Self {
            beams: 32,
            fov_down_deg: -20.0,
            fov_up_deg: 10.0,
            horizontal_step_deg: 0.4,
            max_range: 80.0,
            noise_sigma: 0.01,
            scan_period: 0.1,
            start_azimuth_deg: 180.0,
        }
    }
}

impl SensorSpec {
    pub fn columns(&self) -> usize {
        (360.0 / self.horizontal_step_deg).round() as usize
    }

    /// Beam elevations in radians, evenly spread over the vertical field of view.
    pub fn elevations(&self) -> Vec<f64> {
        match self.beams {
            0 => Vec::new(),
            1 => vec![self.fov_down_deg.to_radians()],
            n => (0..n)
                .map(|b| {
                    let f = b as f64 / (n - 1) as f64;
                    (self.fov_down_deg + f * (self.fov_up_deg - self.fov_down_deg)).to_radians()
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TranslationSegment {
    pub duration: f64,
    /// World-frame acceleration, m/s².
    pub acceleration: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationSegment {
    pub duration: f64,
    /// Body-frame angular velocity, rad/s.
    pub angular_velocity: Vector3<f64>,
}

/// Continuous pose as a function of time: piecewise constant acceleration for
/// the position, piecewise constant body rate for the orientation. Motion
/// continues at constant velocity (and fixed orientation) after the last
/// segment.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthTrajectory {
    start: Pose<f64>,
    start_velocity: Vector3<f64>,
    translation: Vec<TranslationSegment>,
    rotation: Vec<RotationSegment>,
    // Knot states at the start of each segment: (time, position, velocity).
    translation_knots: Vec<(f64, Vector3<f64>, Vector3<f64>)>,
    rotation_knots: Vec<(f64, UnitQuaternion<f64>)>,
}

impl GroundTruthTrajectory {
    pub fn new(
        start: Pose<f64>,
        start_velocity: Vector3<f64>,
        translation: Vec<TranslationSegment>,
        rotation: Vec<RotationSegment>,
    ) -> Self {
        let mut translation_knots = Vec::with_capacity(translation.len() + 1);
        let (mut t, mut p, mut v) = (0.0, start.translation, start_velocity);
        for seg in &translation {
            translation_knots.push((t, p, v));
            p += v * seg.duration + seg.acceleration * (0.5 * seg.duration * seg.duration);
            v += seg.acceleration * seg.duration;
            t += seg.duration;
        }
        translation_knots.push((t, p, v));

        let mut rotation_knots = Vec::with_capacity(rotation.len() + 1);
        let (mut t, mut r) = (0.0, start.rotation);
        for seg in &rotation {
            rotation_knots.push((t, r));
            r = UnitQuaternion::new_normalize((r * so3_exp(&(seg.angular_velocity * seg.duration))).into_inner());
            t += seg.duration;
        }
        rotation_knots.push((t, r));

        Self { start, start_velocity, translation, rotation, translation_knots, rotation_knots }
    }

    /// Fits segments through poses sampled every `dt` seconds: accelerations
    /// reproduce `velocities` at the knots, body rates reproduce the sampled
    /// orientations exactly.
    pub fn from_samples(dt: f64, poses: &[Pose<f64>], velocities: &[Vector3<f64>]) -> Self {
        assert!(poses.len() >= 2 && poses.len() == velocities.len());
        let translation = velocities
            .windows(2)
            .map(|w| TranslationSegment { duration: dt, acceleration: (w[1] - w[0]) / dt })
            .collect();
        let rotation = poses
            .windows(2)
            .map(|w| RotationSegment {
                duration: dt,
                angular_velocity: so3_log(&(w[0].rotation.inverse() * w[1].rotation)) / dt,
            })
            .collect();
        Self::new(poses[0], velocities[0], translation, rotation)
    }

    pub fn start(&self) -> &Pose<f64> {
        &self.start
    }

    pub fn start_velocity(&self) -> &Vector3<f64> {
        &self.start_velocity
    }

    pub fn translation_segments(&self) -> &[TranslationSegment] {
        &self.translation
    }

    pub fn rotation_segments(&self) -> &[RotationSegment] {
        &self.rotation
    }

    /// Total duration covered by segments.
    pub fn duration(&self) -> f64 {
        let tt = self.translation_knots.last().map_or(0.0, |k| k.0);
        let rt = self.rotation_knots.last().map_or(0.0, |k| k.0);
        tt.max(rt)
    }

    pub fn position_at(&self, t: f64) -> Vector3<f64> {
        let t = t.max(0.0);
        let i = self.translation_knots.partition_point(|k| k.0 <= t).saturating_sub(1);
        let (t0, p0, v0) = self.translation_knots[i];
        let tau = t - t0;
        match self.translation.get(i) {
            Some(seg) => p0 + v0 * tau + seg.acceleration * (0.5 * tau * tau),
            None => p0 + v0 * tau,
        }
    }

    pub fn velocity_at(&self, t: f64) -> Vector3<f64> {
        let t = t.max(0.0);
        let i = self.translation_knots.partition_point(|k| k.0 <= t).saturating_sub(1);
        let (t0, _, v0) = self.translation_knots[i];
        match self.translation.get(i) {
            Some(seg) => v0 + seg.acceleration * (t - t0),
            None => v0,
        }
    }

    pub fn rotation_at(&self, t: f64) -> UnitQuaternion<f64> {
        let t = t.max(0.0);
        let i = self.rotation_knots.partition_point(|k| k.0 <= t).saturating_sub(1);
        let (t0, r0) = self.rotation_knots[i];
        match self.rotation.get(i) {
            Some(seg) => r0 * so3_exp(&(seg.angular_velocity * (t - t0))),
            None => r0,
        }
    }

    pub fn pose_at(&self, t: f64) -> Pose<f64> {
        Pose::new(self.rotation_at(t), self.position_at(t))
    }

    pub fn frame(&self, t_begin: f64, t_end: f64, scan_index: usize) -> TrajectoryFrame<f64> {
        TrajectoryFrame::new(self.pose_at(t_begin), self.pose_at(t_end), scan_index)
    }
}

/// Mixes the noise seed with scan and column indices so each column owns an
/// independent random stream.
fn column_seed(seed: u64, scan: usize, column: usize) -> u64 {
    let mut z = seed ^ (scan as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (column as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Simulates one revolution over `[t_begin, t_end]`. Column `c` fires at
/// `alpha = c / columns`, azimuth increasing counter-clockwise from
/// `start_azimuth_deg`. Returns the scan in the sensor frame and the exact
/// begin/end poses.
pub fn simulate_scan(
    world: &World,
    trajectory: &GroundTruthTrajectory,
    t_begin: f64,
    t_end: f64,
    sensor: &SensorSpec,
    scan_index: usize,
    seed: u64,
) -> (Scan<f64>, TrajectoryFrame<f64>) {
    let frame = trajectory.frame(t_begin, t_end, scan_index);
    let elevations = sensor.elevations();
    let columns = sensor.columns();
    let noise = (sensor.noise_sigma > 0.0).then(|| Normal::new(0.0, sensor.noise_sigma).expect("valid sigma"));
    let mut points = Vec::with_capacity(columns * elevations.len());
    let dirs: Vec<(f64, f64)> = elevations.iter().map(|e| (e.cos(), e.sin())).collect();

    let start = sensor.start_azimuth_deg.to_radians();
    for c in 0..columns {
        let alpha = c as f64 / columns as f64;
        let t = t_begin + alpha * (t_end - t_begin);
        let pose = trajectory.pose_at(t);
        let azimuth = start + alpha * std::f64::consts::TAU;
        let (sa, ca) = azimuth.sin_cos();
        let mut rng = ChaCha8Rng::seed_from_u64(column_seed(seed, scan_index, c));
        for &(ce, se) in &dirs {
            let local = Vector3::new(ce * ca, ce * sa, se);
            let world_dir = pose.rotation * local;
            let Some(range) = world.cast_ray(&pose.translation, &world_dir, sensor.max_range) else {
                continue;
            };
            let noisy = match &noise {
                Some(n) => range + n.sample(&mut rng),
                None => range,
            };
            points.push(ScanPoint::with_timestamp(local * noisy, alpha, t));
        }
    }

    let scan = Scan {
        points,
        index: scan_index,
        tau_begin: Some(t_begin),
        tau_end: Some(t_end),
        has_alpha: true,
    };
    (scan, frame)
}

/// Named scenario: world, trajectory, sensor and scan count.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub world: World,
    pub trajectory: GroundTruthTrajectory,
    pub sensor: SensorSpec,
    pub num_scans: usize,
}

pub const SCENARIO_NAMES: [&str; 4] = ["straight_corridor", "curved_town_loop", "shaky_handheld", "yaw_jump"];

impl Scenario {
    pub fn scan_interval(&self, index: usize) -> (f64, f64) {
        let p = self.sensor.scan_period;
        (index as f64 * p, (index + 1) as f64 * p)
    }

    pub fn ground_truth_frame(&self, index: usize) -> TrajectoryFrame<f64> {
        let (b, e) = self.scan_interval(index);
        self.trajectory.frame(b, e, index)
    }

    pub fn ground_truth(&self) -> Vec<TrajectoryFrame<f64>> {
        (0..self.num_scans).map(|i| self.ground_truth_frame(i)).collect()
    }

    pub fn simulate(&self, index: usize, seed: u64) -> (Scan<f64>, TrajectoryFrame<f64>) {
        let (b, e) = self.scan_interval(index);
        simulate_scan(&self.world, &self.trajectory, b, e, &self.sensor, index, seed)
    }

    pub fn with_num_scans(mut self, num_scans: usize) -> Self {
        self.num_scans = num_scans;
        self
    }

    pub fn with_sensor(mut self, sensor: SensorSpec) -> Self {
        self.sensor = sensor;
        self
    }
}

/// Builds one of [`SCENARIO_NAMES`].
pub fn make_scenario(name: &str) -> Result<Scenario> {
    let (world, trajectory, sensor, num_scans) = match name {
        "straight_corridor" => straight_corridor(),
        "curved_town_loop" => curved_town_loop(),
        "shaky_handheld" => shaky_handheld(),
        "yaw_jump" => yaw_jump(),
        other => return Err(Error::UnknownScenario(other.to_string())),
    };
    Ok(Scenario { name: name.to_string(), world, trajectory, sensor, num_scans })
}

const GROUND_Z: f64 = -1.8;
const SAMPLE_DT: f64 = 0.025;

/// Samples `motion(t) -> (pose, velocity)` every [`SAMPLE_DT`] up to `duration`.
fn sampled(duration: f64, motion: impl Fn(f64) -> (Pose<f64>, Vector3<f64>)) -> GroundTruthTrajectory {
    let n = (duration / SAMPLE_DT).ceil() as usize + 1;
    let (poses, velocities): (Vec<_>, Vec<_>) = (0..n).map(|k| motion(k as f64 * SAMPLE_DT)).unzip();
    GroundTruthTrajectory::from_samples(SAMPLE_DT, &poses, &velocities)
}

/// Distance and speed along a straight path accelerating uniformly from rest
/// to `v_max` at `accel`, then cruising.
fn ramp_profile(t: f64, accel: f64, v_max: f64) -> (f64, f64) {
    let t_ramp = v_max / accel;
    if t <= t_ramp {
        (0.5 * accel * t * t, accel * t)
    } else {
        (0.5 * accel * t_ramp * t_ramp + v_max * (t - t_ramp), v_max)
    }
}

/// Building facades, pillars and clutter lining both sides of a straight
/// street along x.
fn street_world(rng: &mut ChaCha8Rng, x_range: (f64, f64), half_width: (f64, f64)) -> Vec<Primitive> {
    let mut prims = vec![Primitive::Plane(Plane::ground(GROUND_Z))];
    for side in [-1.0, 1.0] {
        let mut x = x_range.0;
        while x < x_range.1 {
            let length = rng.random_range(6.0..18.0);
            let depth = rng.random_range(4.0..12.0);
            let height = rng.random_range(3.0..14.0);
            let offset = rng.random_range(half_width.0..half_width.1);
            let yaw = rng.random_range(-0.08..0.08);
            let y = side * (offset + depth * 0.5);
            prims.push(Primitive::Box(OrientedBox::standing(x + length * 0.5, y, GROUND_Z, Vector3::new(length, depth, height), yaw)));
            x += length + rng.random_range(1.0..5.0);
        }
        let mut x = x_range.0;
        while x < x_range.1 {
            let y = side * rng.random_range(half_width.0 - 2.5..half_width.0 - 0.8);
            let w = rng.random_range(0.25..0.6);
            let h = rng.random_range(2.5..6.0);
            prims.push(Primitive::Box(OrientedBox::standing(x, y, GROUND_Z, Vector3::new(w, w, h), 0.0)));
            x += rng.random_range(4.0..11.0);
        }
        let mut x = x_range.0;
        while x < x_range.1 {
            let y = side * rng.random_range(half_width.0 - 4.0..half_width.0 - 2.0);
            let size = Vector3::new(rng.random_range(1.5..4.5), rng.random_range(1.2..2.0), rng.random_range(1.0..1.8));
            prims.push(Primitive::Box(OrientedBox::standing(x, y, GROUND_Z, size, rng.random_range(-0.3..0.3))));
            x += rng.random_range(9.0..25.0);
        }
    }
    prims
}

fn straight_corridor() -> (World, GroundTruthTrajectory, SensorSpec, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let world = World::new(street_world(&mut rng, (-90.0, 340.0), (6.0, 7.0)));
    let trajectory = sampled(31.0, |t| {
        let (s, v) = ramp_profile(t, 4.0, 8.0);
        (Pose::from_translation(Vector3::new(s, 0.0, 0.0)), Vector3::new(v, 0.0, 0.0))
    });
    (world, trajectory, SensorSpec::default(), 300)
}

/// Radius of the 400 m loop.
pub const TOWN_LOOP_RADIUS: f64 = 400.0 / std::f64::consts::TAU;

fn curved_town_loop() -> (World, GroundTruthTrajectory, SensorSpec, usize) {
    let radius = TOWN_LOOP_RADIUS;
    let center = Vector3::new(0.0, radius, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0002);
    let mut prims = vec![Primitive::Plane(Plane::ground(GROUND_Z))];
    // Buildings outside and inside the ring road, facing the road.
    for (r_min, r_max, outward) in [(radius + 9.0, radius + 11.0, true), (radius - 11.0, radius - 9.0, false)] {
        let mut arc = 0.0;
        let r_mid = (r_min + r_max) * 0.5;
        while arc < std::f64::consts::TAU * r_mid {
            let length = rng.random_range(8.0..20.0);
            let depth = rng.random_range(6.0..16.0);
            let height = rng.random_range(4.0..18.0);
            let theta = (arc + length * 0.5) / r_mid;
            let face = rng.random_range(r_min..r_max);
            let r = if outward { face + depth * 0.5 } else { face - depth * 0.5 };
            let yaw = theta + std::f64::consts::FRAC_PI_2 + rng.random_range(-0.15..0.15);
            let (s, c) = theta.sin_cos();
            prims.push(Primitive::Box(OrientedBox::standing(center.x + r * c, center.y + r * s, GROUND_Z, Vector3::new(length, depth, height), yaw)));
            arc += length + rng.random_range(2.0..9.0);
        }
    }
    // Poles and small clutter along both curbs.
    for (r_lo, r_hi) in [(radius + 5.0, radius + 7.5), (radius - 7.5, radius - 5.0)] {
        let mut arc = 0.0;
        while arc < std::f64::consts::TAU * radius {
            let theta = arc / radius;
            let r = rng.random_range(r_lo..r_hi);
            let (s, c) = theta.sin_cos();
            let pole = rng.random_bool(0.6);
            let size = if pole {
                let w = rng.random_range(0.3..0.6);
                Vector3::new(w, w, rng.random_range(3.0..7.0))
            } else {
                Vector3::new(rng.random_range(1.5..4.0), rng.random_range(1.2..2.0), rng.random_range(1.0..2.0))
            };
            prims.push(Primitive::Box(OrientedBox::standing(center.x + r * c, center.y + r * s, GROUND_Z, size, rng.random_range(-1.0..1.0))));
            arc += rng.random_range(5.0..14.0);
        }
    }
    // A few tall landmarks further out.
    for _ in 0..12 {
        let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let r = if rng.random_bool(0.5) { rng.random_range(radius + 30.0..radius + 50.0) } else { rng.random_range(5.0..radius - 30.0) };
        let (s, c) = theta.sin_cos();
        let size = Vector3::new(rng.random_range(8.0..20.0), rng.random_range(8.0..20.0), rng.random_range(15.0..35.0));
        prims.push(Primitive::Box(OrientedBox::standing(center.x + r * c, center.y + r * s, GROUND_Z, size, rng.random_range(0.0..1.5))));
    }

    // Two laps of the ring: accelerate from rest at 5 m/s² to 16 m/s. The
    // last scan ends exactly where the first began.
    let (accel, v_max) = (5.0, 16.0);
    let laps = 2.0;
    let length = laps * std::f64::consts::TAU * radius;
    let t_ramp = v_max / accel;
    let duration = t_ramp + (length - 0.5 * accel * t_ramp * t_ramp) / v_max;
    let trajectory = sampled(duration, |t| {
        let (s, v) = ramp_profile(t, accel, v_max);
        let theta = -std::f64::consts::FRAC_PI_2 + s / radius;
        let (sn, cs) = theta.sin_cos();
        let position = center + Vector3::new(radius * cs, radius * sn, 0.0);
        let heading = theta + std::f64::consts::FRAC_PI_2;
        let velocity = Vector3::new(-sn, cs, 0.0) * v;
        (Pose::from_yaw(heading, position), velocity)
    });
    let num_scans = (duration / SensorSpec::default().scan_period).round() as usize;
    (World::new(prims), trajectory, SensorSpec::default(), num_scans)
}

fn shaky_handheld() -> (World, GroundTruthTrajectory, SensorSpec, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0003);
    let world = World::new(street_world(&mut rng, (-90.0, 240.0), (7.0, 9.0)));
    let amplitude = 10f64.to_radians();
    let freq = 2.0;
    // A 20 Hz sensor keeps the per-scan rotation near the 5 degree mark.
    let (period, speed) = (0.05, 12.0);
    let sensor = SensorSpec { scan_period: period, ..SensorSpec::default() };
    let trajectory = sampled(201.0 * period + 1.0, |t| {
        let (s, v) = ramp_profile(t, speed / 2.0, speed);
        // Oscillation amplitude ramps up over the first second.
        let a = amplitude * (t / 1.0).min(1.0);
        let yaw = a * (std::f64::consts::TAU * freq * t).sin();
        let pitch = 0.2 * a * (std::f64::consts::TAU * 1.3 * t + 0.7).sin();
        let rotation = UnitQuaternion::from_euler_angles(0.0, pitch, yaw);
        (Pose::new(rotation, Vector3::new(s, 0.0, 0.0)), Vector3::new(v, 0.0, 0.0))
    });
    (world, trajectory, sensor, 200)
}

/// Scans between consecutive yaw jumps.
pub const YAW_JUMP_PERIOD: usize = 20;
/// Magnitude of each yaw jump, degrees.
pub const YAW_JUMP_DEG: f64 = 6.0;

fn yaw_jump() -> (World, GroundTruthTrajectory, SensorSpec, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0004);
    let world = World::new(street_world(&mut rng, (-90.0, 150.0), (6.0, 8.0)));
    let num_scans = 120;
    let period = SensorSpec::default().scan_period;
    let duration = (num_scans + 1) as f64 * period;
    let translation = sampled(duration, |t| {
        let (s, v) = ramp_profile(t, 2.5, 5.0);
        (Pose::from_translation(Vector3::new(s, 0.0, 0.0)), Vector3::new(v, 0.0, 0.0))
    });
    // Each jump turns the sensor within a single scan window, alternating sign.
    let mut rotation = Vec::new();
    let rate = YAW_JUMP_DEG.to_radians() / period;
    let mut sign = 1.0;
    let mut scan = 0;
    while scan < num_scans {
        let next = (scan / YAW_JUMP_PERIOD + 1) * YAW_JUMP_PERIOD;
        let still = next.min(num_scans) - scan;
        rotation.push(RotationSegment { duration: still as f64 * period, angular_velocity: Vector3::zeros() });
        scan += still;
        if scan < num_scans {
            rotation.push(RotationSegment { duration: period, angular_velocity: Vector3::new(0.0, 0.0, sign * rate) });
            sign = -sign;
            scan += 1;
        }
    }
    let trajectory = GroundTruthTrajectory::new(
        Pose::identity(),
        Vector3::zeros(),
        translation.translation_segments().to_vec(),
        rotation,
    );
    (world, trajectory, SensorSpec::default(), num_scans)
}
