//! Sparse voxel hash storing the dense local map in world coordinates.
//!
//! Each voxel keeps at most `max_points_per_voxel` points, no two closer than
//! `min_point_distance`; a full voxel is frozen. Neighborhoods are gathered from
//! the `(2 ring + 1)^3` voxels around the query's voxel.

use std::collections::HashMap;
use std::hash::{BuildHasherDefault, Hasher};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{from_usize, lit, Real};

/// Integer voxel coordinates, `floor(coordinate / voxel_size)` per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VoxelKey {
    pub i: i32,
    pub j: i32,
    pub k: i32,
}

impl VoxelKey {
    pub const fn new(i: i32, j: i32, k: i32) -> Self {
        Self { i, j, k }
    }

    #[inline]
    pub fn from_point<T: Real>(p: &Vector3<T>, voxel_size: T) -> Self {
        let idx = |c: T| -> i32 {
            let v = (c / voxel_size).floor();
            crate::scalar::to_f64(v) as i32
        };
        Self::new(idx(p.x), idx(p.y), idx(p.z))
    }

    pub fn center<T: Real>(&self, voxel_size: T) -> Vector3<T> {
        let half = lit::<T>(0.5);
        Vector3::new(
            (lit::<T>(self.i as f64) + half) * voxel_size,
            (lit::<T>(self.j as f64) + half) * voxel_size,
            (lit::<T>(self.k as f64) + half) * voxel_size,
        )
    }

    #[inline]
    pub fn offset(&self, di: i32, dj: i32, dk: i32) -> Self {
        Self::new(self.i + di, self.j + dj, self.k + dk)
    }
}

/// Spatial hash for voxel keys: the classic prime-multiply mix, finished with
/// a 64-bit avalanche so that neighboring keys spread over buckets.
#[derive(Default, Clone, Copy)]
pub struct VoxelHasher {
    state: u64,
}

impl Hasher for VoxelHasher {
    fn finish(&self) -> u64 {
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.state = (self.state ^ b as u64).wrapping_mul(0x0100_0000_01b3);
        }
    }

    fn write_i32(&mut self, value: i32) {
        // Called once per field (i, j, k) by the derived Hash impl.
        self.state = self.state.rotate_left(21) ^ (value as u32 as u64).wrapping_mul(73_856_093);
    }
}

pub type VoxelBuildHasher = BuildHasherDefault<VoxelHasher>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VoxelMapConfig {
    /// Voxel edge in meters; also the neighborhood search radius.
    pub voxel_size: f64,
    pub max_points_per_voxel: usize,
    /// Minimum spacing between two points of one voxel, meters.
    pub min_point_distance: f64,
}

impl Default for VoxelMapConfig {
    fn default() -> Self {
        Self {
            voxel_size: 1.0,
            max_points_per_voxel: 20,
            min_point_distance: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Voxel<T: Real> {
    pub points: Vec<Vector3<T>>,
}

impl<T: Real> Voxel<T> {
    fn with_capacity(capacity: usize) -> Self {
        Self {
            points: Vec::with_capacity(capacity),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InsertionReport {
    pub inserted: usize,
    pub rejected: usize,
}

/// Local geometry of a map neighborhood.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodStats<T: Real> {
    /// Neighbors sorted by increasing distance to the query.
    pub neighbors: Vec<Vector3<T>>,
    /// Unit normal: eigenvector of the smallest covariance eigenvalue.
    pub normal: Vector3<T>,
    /// Planarity `(sigma2 - sigma3) / sigma1`.
    pub a2d: T,
    /// Square roots of the covariance eigenvalues, decreasing.
    pub sigmas: [T; 3],
}

impl<T: Real> NeighborhoodStats<T> {
    /// Computes normal and planarity of a point set. The normal is flipped to
    /// face `viewpoint` (seen from `query`) when one is given.
    pub fn from_points(
        neighbors: Vec<Vector3<T>>,
        query: &Vector3<T>,
        viewpoint: Option<&Vector3<T>>,
    ) -> Result<Self> {
        if neighbors.is_empty() {
            return Err(Error::EmptyNeighborhood);
        }
        let n = from_usize::<T>(neighbors.len());
        let mean = neighbors.iter().fold(Vector3::zeros(), |acc, p| acc + p) / n;
        let mut cov = Matrix3::<T>::zeros();
        for p in &neighbors {
            let d = p - mean;
            cov += d * d.transpose();
        }
        cov /= n;

        let eigen = cov.symmetric_eigen();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            eigen.eigenvalues[b]
                .partial_cmp(&eigen.eigenvalues[a])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let sigma = |i: usize| eigen.eigenvalues[order[i]].max(T::zero()).sqrt();
        let sigmas = [sigma(0), sigma(1), sigma(2)];
        let a2d = if sigmas[0] > T::zero() {
            ((sigmas[1] - sigmas[2]) / sigmas[0]).max(T::zero()).min(T::one())
        } else {
            T::zero()
        };
        let mut normal: Vector3<T> = eigen.eigenvectors.column(order[2]).into_owned();
        let norm = normal.norm();
        if norm > T::zero() {
            normal /= norm;
        } else {
            normal = Vector3::z();
        }
        if let Some(view) = viewpoint {
            if normal.dot(&(view - query)) < T::zero() {
                normal = -normal;
            }
        }
        Ok(Self {
            neighbors,
            normal,
            a2d,
            sigmas,
        })
    }

    /// Closest neighbor to the query.
    pub fn closest(&self) -> &Vector3<T> {
        &self.neighbors[0]
    }
}

/// Options for a neighborhood query.
#[derive(Debug, Clone, Copy)]
pub struct NeighborhoodQuery<'a, T: Real> {
    pub k: usize,
    /// 1 searches 27 voxels, 2 searches 125.
    pub ring: i32,
    pub min_neighbors: usize,
    pub viewpoint: Option<&'a Vector3<T>>,
}

impl<T: Real> Default for NeighborhoodQuery<'_, T> {
    fn default() -> Self {
        Self {
            k: 20,
            ring: 1,
            min_neighbors: 5,
            viewpoint: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VoxelMap<T: Real> {
    config: VoxelMapConfig,
    voxel_size: T,
    min_distance_sq: T,
    voxels: HashMap<VoxelKey, Voxel<T>, VoxelBuildHasher>,
    num_points: usize,
}

impl<T: Real> VoxelMap<T> {
    pub fn new(config: VoxelMapConfig) -> Self {
        assert!(config.voxel_size > 0.0, "voxel size must be positive");
        let min_distance = lit::<T>(config.min_point_distance);
        Self {
            config,
            voxel_size: lit(config.voxel_size),
            min_distance_sq: min_distance * min_distance,
            voxels: HashMap::default(),
            num_points: 0,
        }
    }

    pub fn with_voxel_size(voxel_size: f64) -> Self {
        Self::new(VoxelMapConfig {
            voxel_size,
            ..VoxelMapConfig::default()
        })
    }

    pub fn config(&self) -> &VoxelMapConfig {
        &self.config
    }

    pub fn voxel_size(&self) -> T {
        self.voxel_size
    }

    pub fn len(&self) -> usize {
        self.num_points
    }

    pub fn is_empty(&self) -> bool {
        self.num_points == 0
    }

    pub fn num_voxels(&self) -> usize {
        self.voxels.len()
    }

    pub fn key_of(&self, p: &Vector3<T>) -> VoxelKey {
        VoxelKey::from_point(p, self.voxel_size)
    }

    pub fn voxel(&self, key: &VoxelKey) -> Option<&Voxel<T>> {
        self.voxels.get(key)
    }

    pub fn voxels(&self) -> impl Iterator<Item = (&VoxelKey, &Voxel<T>)> {
        self.voxels.iter()
    }

    pub fn points(&self) -> impl Iterator<Item = &Vector3<T>> {
        self.voxels.values().flat_map(|v| v.points.iter())
    }

    /// Whether the voxel containing `p` holds any point.
    pub fn is_occupied(&self, p: &Vector3<T>) -> bool {
        self.voxels
            .get(&self.key_of(p))
            .is_some_and(|v| !v.points.is_empty())
    }

    /// Inserts one point; returns whether it was stored.
    pub fn insert_point(&mut self, p: &Vector3<T>) -> bool {
        let key = self.key_of(p);
        let capacity = self.config.max_points_per_voxel;
        let min_distance_sq = self.min_distance_sq;
        let voxel = self
            .voxels
            .entry(key)
            .or_insert_with(|| Voxel::with_capacity(capacity));
        if voxel.points.len() >= capacity {
            return false;
        }
        if voxel
            .points
            .iter()
            .any(|q| (q - p).norm_squared() < min_distance_sq)
        {
            return false;
        }
        voxel.points.push(*p);
        self.num_points += 1;
        true
    }

    /// Inserts world-frame points in order.
    pub fn insert_scan(&mut self, points: &[Vector3<T>]) -> InsertionReport {
        let mut report = InsertionReport::default();
        for p in points {
            if self.insert_point(p) {
                report.inserted += 1;
            } else {
                report.rejected += 1;
            }
        }
        report
    }

    /// Visits every point in the `(2 ring + 1)^3` voxels around `query`'s voxel.
    pub fn for_each_candidate(&self, query: &Vector3<T>, ring: i32, mut f: impl FnMut(&Vector3<T>)) {
        let center = self.key_of(query);
        for di in -ring..=ring {
            for dj in -ring..=ring {
                for dk in -ring..=ring {
                    if let Some(voxel) = self.voxels.get(&center.offset(di, dj, dk)) {
                        voxel.points.iter().for_each(&mut f);
                    }
                }
            }
        }
    }

    /// The `k` nearest map points among the candidate voxels, closest first.
    pub fn nearest_neighbors(&self, query: &Vector3<T>, k: usize, ring: i32) -> Vec<Vector3<T>> {
        if k == 0 {
            return Vec::new();
        }
        let mut best: Vec<(T, Vector3<T>)> = Vec::with_capacity(k);
        // Squared distance of the k-th neighbor once `best` is full.
        let mut worst: Option<T> = None;
        let center = self.key_of(query);
        // Visit voxels roughly nearest first so that far ones can be skipped
        // once their box lies beyond the current k-th distance.
        for &(di, dj, dk) in ring_offsets(ring).iter() {
            let key = center.offset(di, dj, dk);
            if worst.is_some_and(|w| self.box_distance_squared(&key, query) > w) {
                continue;
            }
            let Some(voxel) = self.voxels.get(&key) else { continue };
            for p in &voxel.points {
                let (dx, dy, dz) = (p.x - query.x, p.y - query.y, p.z - query.z);
                let d = dx * dx + dy * dy + dz * dz;
                if worst.is_some_and(|w| d > w) {
                    continue;
                }
                let candidate = (d, *p);
                if worst.is_some() {
                    if !closer(&candidate, &best[k - 1]) {
                        continue;
                    }
                    best.pop();
                }
                let at = best.partition_point(|e| closer(e, &candidate));
                best.insert(at, candidate);
                if best.len() == k {
                    worst = Some(best[k - 1].0);
                }
            }
        }
        best.into_iter().map(|(_, p)| p).collect()
    }

    fn box_distance_squared(&self, key: &VoxelKey, p: &Vector3<T>) -> T {
        let axis = |idx: i32, c: T| {
            let lo = lit::<T>(idx as f64) * self.voxel_size;
            let hi = lo + self.voxel_size;
            if c < lo {
                lo - c
            } else if c > hi {
                c - hi
            } else {
                T::zero()
            }
        };
        let (dx, dy, dz) = (axis(key.i, p.x), axis(key.j, p.y), axis(key.k, p.z));
        dx * dx + dy * dy + dz * dz
    }

    /// Neighborhood statistics around `query` (normal, planarity).
    pub fn neighborhood(&self, query: &Vector3<T>, options: &NeighborhoodQuery<'_, T>) -> Result<NeighborhoodStats<T>> {
        let neighbors = self.nearest_neighbors(query, options.k, options.ring);
        if neighbors.is_empty() {
            return Err(Error::EmptyNeighborhood);
        }
        if neighbors.len() < options.min_neighbors {
            return Err(Error::DegenerateNeighborhood {
                found: neighbors.len(),
                required: options.min_neighbors,
            });
        }
        NeighborhoodStats::from_points(neighbors, query, options.viewpoint)
    }

    /// Removes voxels whose center is farther than `radius` from `center`.
    pub fn evict_far_voxels(&mut self, center: &Vector3<T>, radius: T) -> usize {
        let radius_sq = radius * radius;
        let voxel_size = self.voxel_size;
        let before = self.voxels.len();
        let mut removed_points = 0;
        self.voxels.retain(|key, voxel| {
            let keep = (key.center(voxel_size) - center).norm_squared() <= radius_sq;
            if !keep {
                removed_points += voxel.points.len();
            }
            keep
        });
        self.num_points -= removed_points;
        before - self.voxels.len()
    }
}

/// Offsets of the `(2 ring + 1)^3` candidate voxels ordered by Manhattan
/// distance from the center.
fn ring_offsets(ring: i32) -> std::borrow::Cow<'static, [(i32, i32, i32)]> {
    use std::sync::OnceLock;
    static CACHE: [OnceLock<Vec<(i32, i32, i32)>>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
    let build = || {
        let mut v = Vec::new();
        for di in -ring..=ring {
            for dj in -ring..=ring {
                for dk in -ring..=ring {
                    v.push((di, dj, dk));
                }
            }
        }
        v.sort_by_key(|&(a, b, c)| a.abs() + b.abs() + c.abs());
        v
    };
    match usize::try_from(ring) {
        Ok(r) if r < CACHE.len() => std::borrow::Cow::Borrowed(CACHE[r].get_or_init(build).as_slice()),
        _ => std::borrow::Cow::Owned(build()),
    }
}

/// Strict ordering by distance, ties broken lexicographically on the point.
fn closer<T: Real>(a: &(T, Vector3<T>), b: &(T, Vector3<T>)) -> bool {
    if a.0 != b.0 {
        return a.0 < b.0;
    }
    for (x, y) in a.1.iter().zip(b.1.iter()) {
        if x != y {
            return x < y;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Normal};

    fn check_invariants(map: &VoxelMap<f64>) {
        let mut count = 0;
        for (key, voxel) in map.voxels() {
            assert!(voxel.points.len() <= 20);
            for (a, p) in voxel.points.iter().enumerate() {
                assert_eq!(map.key_of(p), *key);
                for q in &voxel.points[a + 1..] {
                    assert!((p - q).norm() >= 0.1);
                }
            }
            count += voxel.points.len();
        }
        assert_eq!(count, map.len());
    }

    #[test]
    fn keys_use_floor_for_negative_coordinates() {
        let key = VoxelKey::from_point(&Vector3::new(-0.2, 0.2, -1.0), 1.0);
        assert_eq!(key, VoxelKey::new(-1, 0, -1));
        let key = VoxelKey::from_point(&Vector3::new(-2.5f32, 2.5, 0.0), 0.8);
        assert_eq!(key, VoxelKey::new(-4, 3, 0));
    }

    #[test]
    fn identical_points_are_rejected_by_spacing() {
        let mut map = VoxelMap::<f64>::with_voxel_size(1.0);
        let pts = vec![Vector3::new(0.5, 0.5, 0.5); 25];
        assert_eq!(map.insert_scan(&pts), InsertionReport { inserted: 1, rejected: 24 });
        check_invariants(&map);
    }

    #[test]
    fn full_voxel_rejects_further_points() {
        let mut map = VoxelMap::<f64>::with_voxel_size(1.0);
        let pts: Vec<_> = (0..25)
            .map(|i| Vector3::new(0.05 + 0.18 * (i % 5) as f64, 0.05 + 0.18 * (i / 5) as f64, 0.5))
            .collect();
        assert_eq!(map.insert_scan(&pts), InsertionReport { inserted: 20, rejected: 5 });
        assert_eq!(map.num_voxels(), 1);
        check_invariants(&map);
    }

    #[test]
    fn insertion_matches_sequential_reference() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<_> = (0..5000)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        let mut map = VoxelMap::<f64>::with_voxel_size(1.0);
        map.insert_scan(&pts);
        check_invariants(&map);

        // Naive list-of-voxels reference.
        let mut reference: Vec<((i64, i64, i64), Vec<Vector3<f64>>)> = Vec::new();
        for p in &pts {
            let key = (p.x.floor() as i64, p.y.floor() as i64, p.z.floor() as i64);
            let slot = match reference.iter().position(|(k, _)| *k == key) {
                Some(i) => i,
                None => {
                    reference.push((key, Vec::new()));
                    reference.len() - 1
                }
            };
            let voxel = &mut reference[slot].1;
            if voxel.len() < 20 && voxel.iter().all(|q| (q - p).norm() >= 0.1) {
                voxel.push(*p);
            }
        }
        assert_eq!(reference.len(), map.num_voxels());
        for ((i, j, k), points) in &reference {
            let voxel = map.voxel(&VoxelKey::new(*i as i32, *j as i32, *k as i32)).unwrap();
            assert_eq!(&voxel.points, points);
        }
    }

    #[test]
    fn planar_neighborhood_has_vertical_normal() {
        let mut map = VoxelMap::<f64>::with_voxel_size(1.0);
        let pts: Vec<_> = (0..400)
            .map(|i| Vector3::new(-1.0 + 0.15 * (i % 20) as f64, -1.0 + 0.15 * (i / 20) as f64, 0.0))
            .collect();
        map.insert_scan(&pts);
        let view = Vector3::new(0.0, 0.0, 2.0);
        let query = Vector3::new(0.3, 0.2, 0.05);
        let stats = map
            .neighborhood(&query, &NeighborhoodQuery { viewpoint: Some(&view), ..Default::default() })
            .unwrap();
        assert_eq!(stats.neighbors.len(), 20);
        assert!((stats.normal - Vector3::z()).norm() < 1e-9);
        assert!(stats.sigmas[2].abs() < 1e-9);
        assert!((stats.a2d - stats.sigmas[1] / stats.sigmas[0]).abs() < 1e-9);
    }

    /// Cyclic Jacobi eigenvalue iteration, independent of the library solver.
    fn jacobi_eigenvalues(mut a: [[f64; 3]; 3]) -> [f64; 3] {
        for _ in 0..100 {
            for (p, q) in [(0, 1), (0, 2), (1, 2)] {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let mut b = a;
                for r in 0..3 {
                    b[r][p] = c * a[r][p] - s * a[r][q];
                    b[r][q] = s * a[r][p] + c * a[r][q];
                }
                let mut d = b;
                for r in 0..3 {
                    d[p][r] = c * b[p][r] - s * b[q][r];
                    d[q][r] = s * b[p][r] + c * b[q][r];
                }
                a = d;
            }
        }
        let mut ev = [a[0][0], a[1][1], a[2][2]];
        ev.sort_by(|x, y| y.partial_cmp(x).unwrap());
        ev
    }

    #[test]
    fn isotropic_cloud_has_low_planarity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let pts: Vec<Vector3<f64>> = (0..1000)
            .map(|_| Vector3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng)))
            .collect();
        let stats = NeighborhoodStats::from_points(pts.clone(), &Vector3::zeros(), None).unwrap();

        let mean = pts.iter().sum::<Vector3<f64>>() / 1000.0;
        let mut cov = [[0.0; 3]; 3];
        for p in &pts {
            let d = p - mean;
            for r in 0..3 {
                for c in 0..3 {
                    cov[r][c] += d[r] * d[c] / 1000.0;
                }
            }
        }
        let ev = jacobi_eigenvalues(cov);
        let oracle_a2d = (ev[1].sqrt() - ev[2].sqrt()) / ev[0].sqrt();
        assert!((stats.a2d - oracle_a2d).abs() < 1e-9);
        assert!(oracle_a2d < 0.2);
        for i in 0..3 {
            assert!((stats.sigmas[i] - ev[i].sqrt()).abs() < 1e-9);
        }
    }

    #[test]
    fn far_query_has_empty_neighborhood() {
        let mut map = VoxelMap::<f64>::with_voxel_size(1.0);
        map.insert_scan(&[Vector3::new(0.5, 0.5, 0.5), Vector3::new(0.2, 0.5, 0.5)]);
        let r = map.neighborhood(&Vector3::new(10.0, 0.0, 0.0), &NeighborhoodQuery::default());
        assert!(matches!(r, Err(Error::EmptyNeighborhood)));
        let r = map.neighborhood(&Vector3::new(0.5, 0.5, 0.5), &NeighborhoodQuery::default());
        assert!(matches!(r, Err(Error::DegenerateNeighborhood { found: 2, required: 5 })));
    }

    #[test]
    fn knn_matches_brute_force_over_candidate_voxels() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let mut map = VoxelMap::<f64>::with_voxel_size(1.0);
        let pts: Vec<_> = (0..20_000)
            .map(|_| Vector3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-2.0..2.0)))
            .collect();
        map.insert_scan(&pts);
        let stored: Vec<Vector3<f64>> = map.points().copied().collect();
        for _ in 0..200 {
            let q = Vector3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-2.0..2.0));
            let qk = VoxelKey::from_point(&q, 1.0);
            let mut brute: Vec<(f64, Vector3<f64>)> = stored
                .iter()
                .filter(|p| {
                    let k = VoxelKey::from_point(*p, 1.0);
                    (k.i - qk.i).abs() <= 1 && (k.j - qk.j).abs() <= 1 && (k.k - qk.k).abs() <= 1
                })
                .map(|p| ((p - q).norm_squared(), *p))
                .collect();
            brute.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            brute.truncate(20);
            let fast = map.nearest_neighbors(&q, 20, 1);
            assert_eq!(fast, brute.into_iter().map(|(_, p)| p).collect::<Vec<_>>());
        }
    }

    #[test]
    fn eviction_examples() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<_> = (0..3000)
            .map(|_| Vector3::new(rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0), 0.0))
            .collect();
        let mut map = VoxelMap::<f64>::with_voxel_size(1.0);
        map.insert_scan(&pts);
        let before = map.num_voxels();

        let mut untouched = map.clone();
        assert_eq!(untouched.evict_far_voxels(&Vector3::zeros(), f64::INFINITY), 0);

        let center = Vector3::new(5.0, -3.0, 0.0);
        let survivors: Vec<VoxelKey> = map
            .voxels()
            .map(|(k, _)| *k)
            .filter(|k| (k.center(1.0) - center).norm() <= 12.0)
            .collect();
        let evicted = map.evict_far_voxels(&center, 12.0);
        assert_eq!(evicted, before - survivors.len());
        assert_eq!(map.num_voxels(), survivors.len());
        for k in survivors {
            assert!(map.voxel(&k).is_some());
        }
        check_invariants(&map);

        let mut far = untouched.clone();
        far.evict_far_voxels(&Vector3::new(1000.0, 0.0, 0.0), 1.0);
        assert!(far.is_empty() && far.num_voxels() == 0);
        untouched.insert_scan(&pts);
        check_invariants(&untouched);
    }

    #[test]
    fn insertion_is_deterministic() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<_> = (0..2000)
            .map(|_| Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)))
            .collect();
        let mut a = VoxelMap::<f64>::with_voxel_size(0.8);
        let mut b = VoxelMap::<f64>::with_voxel_size(0.8);
        a.insert_scan(&pts);
        b.insert_scan(&pts);
        let pa: Vec<_> = a.points().collect();
        let pb: Vec<_> = b.points().collect();
        assert_eq!(pa, pb);
    }
}
