//! Continuous-time point-to-plane registration of one scan against the map.
//!
//! The scan trajectory is parameterized by its begin and end poses; each
//! keypoint is placed in the world with the pose interpolated at its
//! normalized timestamp. The objective is a robust point-to-plane term plus
//! two soft constraints tying the begin pose and the velocity to the
//! previous scan.

use nalgebra::{Matrix3, Matrix6, SMatrix, SVector, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    skew, so3_exp, so3_left_jacobian_inv, so3_log, so3_right_jacobian, so3_right_jacobian_inv, Pose,
    TrajectoryFrame,
};
use crate::scalar::{from_usize, lit, to_f64, Real};
use crate::scan::ScanPoint;
use crate::voxel_map::{NeighborhoodQuery, VoxelMap};

pub type Vector12<T> = SVector<T, 12>;
pub type Matrix12<T> = SMatrix<T, 12, 12>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMode {
    /// Begin and end poses estimated jointly.
    #[default]
    Elastic,
    /// Keypoints distorted once with the predicted motion, then a single end
    /// pose is estimated.
    ConstantVelocityRigid,
    /// No motion compensation, a single pose.
    None,
}

impl SolverMode {
    pub fn is_elastic(self) -> bool {
        self == SolverMode::Elastic
    }
}

impl std::str::FromStr for SolverMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "elastic" => Ok(Self::Elastic),
            "constant_velocity_rigid" | "cv_rigid" => Ok(Self::ConstantVelocityRigid),
            "none" => Ok(Self::None),
            other => Err(Error::InvalidArgument(format!("unknown solver mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Weight of the location consistency term.
    pub beta_loc: f64,
    /// Weight of the constant velocity term.
    pub beta_vel: f64,
    /// Weight of an optional rotation continuity term `|Log(R_e_prev^T R_b)|^2`.
    pub beta_rot: f64,
    pub max_iterations: usize,
    /// Translation step threshold, meters.
    pub trans_tol: f64,
    /// Rotation step threshold, degrees.
    pub rot_tol: f64,
    /// Cauchy loss scale, meters.
    pub robust_scale: f64,
    /// Point-to-plane distances above this are discarded, meters.
    pub outlier_gate: f64,
    pub knn: usize,
    pub min_neighbors: usize,
    /// 1 searches 27 voxels around the query, 2 searches 125.
    pub search_ring: i32,
    pub min_residuals: usize,
    pub damping: f64,
    pub max_halvings: usize,
    pub mode: SolverMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            beta_loc: 0.001,
            beta_vel: 0.001,
            beta_rot: 0.0,
            max_iterations: 5,
            trans_tol: 0.001,
            rot_tol: 0.01,
            robust_scale: 0.3,
            outlier_gate: 0.5,
            knn: 20,
            min_neighbors: 5,
            search_ring: 1,
            min_residuals: 20,
            damping: 1e-6,
            max_halvings: 4,
            mode: SolverMode::Elastic,
        }
    }
}

/// One point-to-plane association.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residual<T: Real> {
    pub keypoint: ScanPoint<T>,
    /// Closest map neighbor.
    pub neighbor_closest: Vector3<T>,
    pub normal: Vector3<T>,
    /// Planarity of the neighborhood, in `[0, 1]`.
    pub weight: T,
}

impl<T: Real> Residual<T> {
    /// `a (p_W - q) . n` with the keypoint placed by `frame`.
    pub fn value(&self, frame: &TrajectoryFrame<T>) -> T {
        let pose = frame.interpolate(self.keypoint.alpha);
        let pw = pose.transform_point(&self.keypoint.position);
        self.weight * (pw - self.neighbor_closest).dot(&self.normal)
    }
}

/// Associations for one frame guess.
#[derive(Debug, Clone)]
pub struct ResidualSet<T: Real> {
    pub residuals: Vec<Residual<T>>,
    pub num_keypoints: usize,
    /// Fraction of keypoints whose world position falls in an unoccupied voxel.
    pub empty_voxel_fraction: f64,
}

/// Associates each keypoint with the local map plane around its world position.
pub fn build_residuals<T: Real>(
    map: &VoxelMap<T>,
    frame_guess: &TrajectoryFrame<T>,
    keypoints: &[ScanPoint<T>],
    cfg: &SolverConfig,
) -> Result<ResidualSet<T>> {
    let gate = lit::<T>(cfg.outlier_gate);
    let mut residuals = Vec::with_capacity(keypoints.len());
    let mut empty = 0usize;
    for kp in keypoints {
        let pose = frame_guess.interpolate(kp.alpha);
        let pw = pose.transform_point(&kp.position);
        if !map.is_occupied(&pw) {
            empty += 1;
        }
        let query = NeighborhoodQuery {
            k: cfg.knn,
            ring: cfg.search_ring,
            min_neighbors: cfg.min_neighbors,
            viewpoint: Some(&pose.translation),
        };
        let Ok(stats) = map.neighborhood(&pw, &query) else {
            continue;
        };
        let q = *stats.closest();
        if (pw - q).dot(&stats.normal).abs() > gate {
            continue;
        }
        residuals.push(Residual {
            keypoint: *kp,
            neighbor_closest: q,
            normal: stats.normal,
            weight: stats.a2d,
        });
    }
    if residuals.len() < cfg.min_residuals {
        return Err(Error::TooFewResiduals {
            found: residuals.len(),
            required: cfg.min_residuals,
        });
    }
    Ok(ResidualSet {
        residuals,
        num_keypoints: keypoints.len(),
        empty_voxel_fraction: if keypoints.is_empty() {
            0.0
        } else {
            empty as f64 / keypoints.len() as f64
        },
    })
}

/// Cauchy loss `c^2 log(1 + s / c^2)` of a squared residual `s`.
#[inline]
pub fn cauchy_loss<T: Real>(s: T, c: T) -> T {
    let c2 = c * c;
    c2 * (T::one() + s / c2).ln()
}

/// Derivative of [`cauchy_loss`] with respect to `s`.
#[inline]
pub fn cauchy_weight<T: Real>(s: T, c: T) -> T {
    T::one() / (T::one() + s / (c * c))
}

/// Value of the full objective at `frame`.
pub fn objective<T: Real>(
    residuals: &[Residual<T>],
    frame: &TrajectoryFrame<T>,
    prev_frame: &TrajectoryFrame<T>,
    cfg: &SolverConfig,
) -> T {
    icp_term(residuals, frame, cfg) + constraint_term(frame, prev_frame, cfg)
}

fn icp_term<T: Real>(residuals: &[Residual<T>], frame: &TrajectoryFrame<T>, cfg: &SolverConfig) -> T {
    if residuals.is_empty() {
        return T::zero();
    }
    let c = lit::<T>(cfg.robust_scale);
    let sum = residuals.iter().fold(T::zero(), |acc, r| {
        let v = r.value(frame);
        acc + cauchy_loss(v * v, c)
    });
    sum / from_usize(residuals.len())
}

fn constraint_term<T: Real>(frame: &TrajectoryFrame<T>, prev: &TrajectoryFrame<T>, cfg: &SolverConfig) -> T {
    let loc = (frame.begin.translation - prev.end.translation).norm_squared();
    let vel = ((frame.end.translation - frame.begin.translation) - (prev.end.translation - prev.begin.translation))
        .norm_squared();
    let mut total = lit::<T>(cfg.beta_loc) * loc + lit::<T>(cfg.beta_vel) * vel;
    if cfg.beta_rot > 0.0 {
        let gap = so3_log(&(prev.end.rotation.inverse() * frame.begin.rotation));
        total += lit::<T>(cfg.beta_rot) * gap.norm_squared();
    }
    total
}

/// Derivative of the interpolated rotation `R_b Exp(alpha Log(R_b^T R_e))`
/// with respect to right perturbations of `R_b` and `R_e`, expressed as right
/// perturbations of the interpolated rotation.
pub fn slerp_tangent_jacobians<T: Real>(frame: &TrajectoryFrame<T>, alpha: T) -> (Matrix3<T>, Matrix3<T>) {
    let phi = so3_log(&(frame.begin.rotation.inverse() * frame.end.rotation));
    let a_phi = phi * alpha;
    let jr_a = so3_right_jacobian(&a_phi) * alpha;
    let exp_a_t = so3_exp(&a_phi).to_rotation_matrix().into_inner().transpose();
    let d_begin = exp_a_t - jr_a * so3_left_jacobian_inv(&phi);
    let d_end = jr_a * so3_right_jacobian_inv(&phi);
    (d_begin, d_end)
}

/// Gradient row of a residual with respect to
/// `(dtheta_b, dt_b, dtheta_e, dt_e)`, together with its value.
pub fn linearize<T: Real>(residual: &Residual<T>, frame: &TrajectoryFrame<T>, alpha: T) -> (Vector12<T>, T) {
    let alpha = alpha.max(T::zero()).min(T::one());
    let pose = frame.interpolate(alpha);
    let p = residual.keypoint.position;
    let pw = pose.transform_point(&p);
    let value = residual.weight * (pw - residual.neighbor_closest).dot(&residual.normal);

    let an = residual.normal * residual.weight;
    // d pW / d omega = -R_alpha [p]x for a right perturbation omega of R_alpha.
    let d_omega = -(pose.rotation_matrix() * skew(&p)).transpose() * an;
    let (d_begin, d_end) = slerp_tangent_jacobians(frame, alpha);
    let mut row = Vector12::zeros();
    row.fixed_rows_mut::<3>(0).copy_from(&(d_begin.transpose() * d_omega));
    row.fixed_rows_mut::<3>(3).copy_from(&(an * (T::one() - alpha)));
    row.fixed_rows_mut::<3>(6).copy_from(&(d_end.transpose() * d_omega));
    row.fixed_rows_mut::<3>(9).copy_from(&(an * alpha));
    (row, value)
}

/// Applies a 12-dimensional update to a frame.
pub fn apply_update<T: Real>(frame: &TrajectoryFrame<T>, delta: &Vector12<T>) -> TrajectoryFrame<T> {
    let apply = |pose: &Pose<T>, offset: usize| {
        let dtheta: Vector3<T> = delta.fixed_rows::<3>(offset).into_owned();
        let dt: Vector3<T> = delta.fixed_rows::<3>(offset + 3).into_owned();
        Pose::new(pose.rotation * so3_exp(&dtheta), pose.translation + dt)
    };
    TrajectoryFrame::new(apply(&frame.begin, 0), apply(&frame.end, 6), frame.scan_index)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub converged: bool,
    pub final_objective: f64,
    pub num_residuals: usize,
    pub num_keypoints: usize,
    pub empty_voxel_fraction: f64,
    /// Last accepted step: translation norm (m) and rotation angle (deg)
    /// of the begin and end updates.
    pub step_trans_begin: f64,
    pub step_rot_begin: f64,
    pub step_trans_end: f64,
    pub step_rot_end: f64,
}

/// Registers `keypoints` against `map`, starting from `frame_init`.
pub fn solve<T: Real>(
    map: &VoxelMap<T>,
    keypoints: &[ScanPoint<T>],
    frame_init: &TrajectoryFrame<T>,
    prev_frame: &TrajectoryFrame<T>,
    cfg: &SolverConfig,
) -> Result<(TrajectoryFrame<T>, SolveReport)> {
    let elastic = cfg.mode.is_elastic();
    // Rigid modes optimize the end pose only; every keypoint is expressed in
    // the end frame and given alpha = 1.
    let (working, begin_offset): (Vec<ScanPoint<T>>, Pose<T>) = match cfg.mode {
        SolverMode::Elastic => (keypoints.to_vec(), Pose::identity()),
        SolverMode::ConstantVelocityRigid => {
            let end_inv = frame_init.end.inverse();
            let pts = keypoints
                .iter()
                .map(|kp| {
                    let world = frame_init.interpolate(kp.alpha).transform_point(&kp.position);
                    ScanPoint { position: end_inv.transform_point(&world), alpha: T::one(), ..*kp }
                })
                .collect();
            (pts, end_inv.compose(&frame_init.begin))
        }
        SolverMode::None => (
            keypoints.iter().map(|kp| ScanPoint { alpha: T::one(), ..*kp }).collect(),
            Pose::identity(),
        ),
    };
    let tie_begin = |f: TrajectoryFrame<T>| {
        if elastic {
            f
        } else {
            TrajectoryFrame::new(f.end.compose(&begin_offset), f.end, f.scan_index)
        }
    };
    let cost = |residuals: &[Residual<T>], f: &TrajectoryFrame<T>| {
        let icp = icp_term(residuals, f, cfg);
        if elastic {
            icp + constraint_term(f, prev_frame, cfg)
        } else {
            icp
        }
    };

    let mut frame = tie_begin(*frame_init);
    let mut report = SolveReport::default();
    let trans_tol = lit::<T>(cfg.trans_tol);
    let rot_tol = lit::<T>(cfg.rot_tol.to_radians());
    let c = lit::<T>(cfg.robust_scale);

    for iteration in 0..cfg.max_iterations {
        let set = build_residuals(map, &frame, &working, cfg)?;
        let n = from_usize::<T>(set.residuals.len());
        let mut h = Matrix12::<T>::zeros();
        let mut g = Vector12::<T>::zeros();
        for r in &set.residuals {
            let (row, value) = linearize(r, &frame, r.keypoint.alpha);
            let w = cauchy_weight(value * value, c) / n;
            h.syger(w, &row, &row, T::one());
            g.axpy(w * value, &row, T::one());
        }
        if elastic {
            add_constraints(&mut h, &mut g, &frame, prev_frame, cfg);
        }

        let delta = if elastic {
            solve_damped(h, g, cfg.damping)?
        } else {
            let h6: Matrix6<T> = h.fixed_view::<6, 6>(6, 6).into_owned();
            let g6: Vector6<T> = g.fixed_rows::<6>(6).into_owned();
            let d6 = solve_damped(h6, g6, cfg.damping)?;
            let mut d = Vector12::zeros();
            d.fixed_rows_mut::<6>(6).copy_from(&d6);
            d
        };

        let current = cost(&set.residuals, &frame);
        let mut scale = T::one();
        let mut candidate = tie_begin(apply_update(&frame, &delta));
        for _ in 0..cfg.max_halvings {
            if cost(&set.residuals, &candidate) <= current {
                break;
            }
            scale *= lit(0.5);
            candidate = tie_begin(apply_update(&frame, &(delta * scale)));
        }
        let step = delta * scale;
        frame = candidate;

        let norm3 = |o: usize| step.fixed_rows::<3>(o).norm();
        report.iterations = iteration + 1;
        report.step_rot_begin = to_f64(norm3(0)).to_degrees();
        report.step_trans_begin = to_f64(norm3(3));
        report.step_rot_end = to_f64(norm3(6)).to_degrees();
        report.step_trans_end = to_f64(norm3(9));
        let converged = norm3(0) < rot_tol && norm3(6) < rot_tol && norm3(3) < trans_tol && norm3(9) < trans_tol;
        if converged {
            report.converged = true;
            break;
        }
    }

    let set = build_residuals(map, &frame, &working, cfg)?;
    report.final_objective = to_f64(cost(&set.residuals, &frame));
    report.num_residuals = set.residuals.len();
    report.num_keypoints = set.num_keypoints;
    report.empty_voxel_fraction = set.empty_voxel_fraction;
    Ok((frame, report))
}

fn add_constraints<T: Real>(
    h: &mut Matrix12<T>,
    g: &mut Vector12<T>,
    frame: &TrajectoryFrame<T>,
    prev: &TrajectoryFrame<T>,
    cfg: &SolverConfig,
) {
    let i3 = Matrix3::<T>::identity();
    let beta_loc = lit::<T>(cfg.beta_loc);
    let loc = frame.begin.translation - prev.end.translation;
    add_block(h, 3, 3, &(i3 * beta_loc));
    add_segment(g, 3, &(loc * beta_loc));

    // Velocity residual (t_e - t_b) - v_prev, Jacobian [-I, I] on (t_b, t_e).
    let beta_vel = lit::<T>(cfg.beta_vel);
    let vel = (frame.end.translation - frame.begin.translation) - (prev.end.translation - prev.begin.translation);
    add_block(h, 3, 3, &(i3 * beta_vel));
    add_block(h, 9, 9, &(i3 * beta_vel));
    add_block(h, 3, 9, &(-i3 * beta_vel));
    add_block(h, 9, 3, &(-i3 * beta_vel));
    add_segment(g, 3, &(-vel * beta_vel));
    add_segment(g, 9, &(vel * beta_vel));

    if cfg.beta_rot > 0.0 {
        let beta_rot = lit::<T>(cfg.beta_rot);
        let gap = so3_log(&(prev.end.rotation.inverse() * frame.begin.rotation));
        let j = so3_right_jacobian_inv(&gap);
        add_block(h, 0, 0, &(j.transpose() * j * beta_rot));
        add_segment(g, 0, &(j.transpose() * gap * beta_rot));
    }
}

fn add_block<T: Real>(h: &mut Matrix12<T>, row: usize, col: usize, m: &Matrix3<T>) {
    for r in 0..3 {
        for c in 0..3 {
            h[(row + r, col + c)] += m[(r, c)];
        }
    }
}

fn add_segment<T: Real>(g: &mut Vector12<T>, row: usize, v: &Vector3<T>) {
    for r in 0..3 {
        g[row + r] += v[r];
    }
}

/// Solves `(H + lambda I) x = -g` by Cholesky.
fn solve_damped<T: Real, const N: usize>(
    mut h: SMatrix<T, N, N>,
    g: SVector<T, N>,
    damping: f64,
) -> Result<SVector<T, N>> {
    let lambda = lit::<T>(damping);
    for i in 0..N {
        h[(i, i)] += lambda;
    }
    let chol = h
        .cholesky()
        .ok_or_else(|| Error::SolverFailure("normal equations are not positive definite".into()))?;
    let x = -chol.solve(&g);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SolverFailure("non-finite update".into()));
    }
    Ok(x)
}
