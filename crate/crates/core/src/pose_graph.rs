//! Pose-graph back-end: one node per scan (its mid pose), odometry edges
//! along the chain and loop edges between grid anchors, optimized with sparse
//! Gauss-Newton.
//!
//! The edge residual is `[t; log(R)]` of `measurement⁻¹ ∘ (node_i⁻¹ ∘ node_j)`,
//! weighted by the edge weight. Nodes are perturbed as
//! `R <- R exp(phi)`, `t <- t + rho`.

use std::io::Write;

use log::debug;
use nalgebra::{DMatrix, DVector, SMatrix, Vector3, Vector6};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{so3_exp, so3_log, so3_right_jacobian_inv, skew, Pose, TrajectoryFrame};
use crate::loop_closure::{gravity_aligned, LoopConstraint};
use crate::scalar::Real;

type Matrix6 = SMatrix<f64, 6, 6>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Odometry,
    Loop,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    /// Expected `node_from⁻¹ ∘ node_to`.
    pub measurement: Pose<f64>,
    pub weight: f64,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PoseGraph {
    pub nodes: Vec<Pose<f64>>,
    pub edges: Vec<Edge>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphConfig {
    pub max_iterations: usize,
    /// Convergence threshold on the norm of the applied step.
    pub step_tolerance: f64,
    pub odometry_weight: f64,
    /// Loop edge weight per unit of match score.
    pub loop_weight_per_score: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            max_iterations: 20,
            step_tolerance: 1e-6,
            odometry_weight: 1.0,
            loop_weight_per_score: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizationReport {
    pub iterations: usize,
    /// Total weighted squared residual before each iteration, then the final
    /// value.
    pub costs: Vec<f64>,
    pub converged: bool,
}

impl OptimizationReport {
    pub fn initial_cost(&self) -> f64 {
        self.costs.first().copied().unwrap_or(0.0)
    }

    pub fn final_cost(&self) -> f64 {
        self.costs.last().copied().unwrap_or(0.0)
    }
}

impl PoseGraph {
    pub fn num_loop_edges(&self) -> usize {
        self.edges.iter().filter(|e| e.kind == EdgeKind::Loop).count()
    }

    pub fn cost(&self) -> f64 {
        total_cost(&self.nodes, &self.edges)
    }

    /// Writes `VERTEX_SE3:QUAT` and `EDGE_SE3:QUAT` lines. Edge information
    /// matrices are the weight times identity, upper triangle row by row.
    pub fn write_g2o(&self, mut out: impl Write) -> std::io::Result<()> {
        for (k, p) in self.nodes.iter().enumerate() {
            writeln!(out, "VERTEX_SE3:QUAT {k} {}", pose_fields(p))?;
        }
        for e in &self.edges {
            write!(out, "EDGE_SE3:QUAT {} {} {}", e.from, e.to, pose_fields(&e.measurement))?;
            for r in 0..6 {
                for c in r..6 {
                    write!(out, " {}", if r == c { e.weight } else { 0.0 })?;
                }
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

fn pose_fields(p: &Pose<f64>) -> String {
    let q = p.rotation.quaternion();
    let t = p.translation;
    format!("{} {} {} {} {} {} {}", t.x, t.y, t.z, q.i, q.j, q.k, q.w)
}

/// Nodes are the mid poses of `frames`. Loop constraints relate gravity-aligned
/// anchors; they are re-expressed between the full node poses.
pub fn build_graph<T: Real>(frames: &[TrajectoryFrame<T>], loops: &[LoopConstraint], config: &GraphConfig) -> PoseGraph {
    let nodes: Vec<Pose<f64>> = frames.iter().map(|f| f.mid_pose().cast()).collect();
    let mut edges: Vec<Edge> = nodes
        .windows(2)
        .enumerate()
        .map(|(k, w)| Edge {
            from: k,
            to: k + 1,
            measurement: w[0].inverse().compose(&w[1]),
            weight: config.odometry_weight,
            kind: EdgeKind::Odometry,
        })
        .collect();
    for lc in loops {
        let (i, j) = (lc.anchor_scan_a, lc.anchor_scan_b);
        if i >= nodes.len() || j >= nodes.len() {
            continue;
        }
        // node = anchor ∘ tilt, with the tilt known from odometry.
        let tilt = |n: &Pose<f64>| gravity_aligned(n).inverse().compose(n);
        let measurement = tilt(&nodes[i]).inverse().compose(&lc.relative).compose(&tilt(&nodes[j]));
        edges.push(Edge {
            from: i,
            to: j,
            measurement,
            weight: lc.score * config.loop_weight_per_score,
            kind: EdgeKind::Loop,
        });
    }
    PoseGraph { nodes, edges }
}

fn edge_residual(nodes: &[Pose<f64>], e: &Edge) -> Vector6<f64> {
    let (ni, nj) = (&nodes[e.from], &nodes[e.to]);
    let err = e.measurement.inverse().compose(&ni.inverse().compose(nj));
    let r = so3_log(&err.rotation);
    Vector6::new(err.translation.x, err.translation.y, err.translation.z, r.x, r.y, r.z)
}

/// Residual and its Jacobians with respect to the `from` and `to` nodes.
fn linearize(nodes: &[Pose<f64>], e: &Edge) -> (Vector6<f64>, Matrix6, Matrix6) {
    let (ni, nj) = (&nodes[e.from], &nodes[e.to]);
    let res = edge_residual(nodes, e);
    let rz_t = e.measurement.rotation_matrix().transpose();
    let ri = ni.rotation_matrix();
    let rj = nj.rotation_matrix();
    let v = ri.transpose() * (nj.translation - ni.translation);
    let jr_inv = so3_right_jacobian_inv(&res.fixed_rows::<3>(3).into_owned());

    let mut ji = Matrix6::zeros();
    let mut jj = Matrix6::zeros();
    let dt_drho = rz_t * ri.transpose();
    ji.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-dt_drho));
    ji.fixed_view_mut::<3, 3>(0, 3).copy_from(&(rz_t * skew(&v)));
    ji.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-jr_inv * rj.transpose() * ri));
    jj.fixed_view_mut::<3, 3>(0, 0).copy_from(&dt_drho);
    jj.fixed_view_mut::<3, 3>(3, 3).copy_from(&jr_inv);
    (res, ji, jj)
}

fn total_cost(nodes: &[Pose<f64>], edges: &[Edge]) -> f64 {
    edges.iter().map(|e| e.weight * edge_residual(nodes, e).norm_squared()).sum()
}

fn retract(nodes: &[Pose<f64>], delta: &DVector<f64>, scale: f64) -> Vec<Pose<f64>> {
    let mut out = nodes.to_vec();
    for (k, node) in out.iter_mut().enumerate().skip(1) {
        let d = delta.fixed_rows::<6>((k - 1) * 6) * scale;
        node.translation += Vector3::new(d[0], d[1], d[2]);
        node.rotation *= so3_exp(&Vector3::new(d[3], d[4], d[5]));
    }
    out
}

/// Gauss-Newton with node 0 fixed. Steps that would increase the cost are
/// halved until they do not; when no halving helps the solve stops.
pub fn optimize(graph: &PoseGraph, config: &GraphConfig) -> Result<(Vec<Pose<f64>>, OptimizationReport)> {
    let n = graph.nodes.len();
    let mut nodes = graph.nodes.clone();
    let mut report = OptimizationReport { costs: vec![total_cost(&nodes, &graph.edges)], ..Default::default() };
    if n < 2 || graph.edges.is_empty() {
        report.converged = true;
        return Ok((nodes, report));
    }
    let dim = 6 * (n - 1);
    for _ in 0..config.max_iterations {
        let mut coo = CooMatrix::new(dim, dim);
        let mut rhs = DVector::zeros(dim);
        for e in &graph.edges {
            let (res, ji, jj) = linearize(&nodes, e);
            let blocks = [(e.from, ji), (e.to, jj)];
            for (a, ja) in &blocks {
                if *a == 0 {
                    continue;
                }
                let ra = (a - 1) * 6;
                rhs.rows_mut(ra, 6).axpy(-e.weight, &(ja.transpose() * res), 1.0);
                for (b, jb) in &blocks {
                    if *b == 0 {
                        continue;
                    }
                    let h = ja.transpose() * jb * e.weight;
                    coo.push_matrix((b - 1) * 6, ra, &h.transpose());
                }
            }
        }
        let hessian = CscMatrix::from(&coo);
        let cholesky = CscCholesky::factor(&hessian)
            .map_err(|e| Error::SolverFailure(format!("pose graph system is not positive definite: {e:?}")))?;
        let delta: DVector<f64> = cholesky.solve(&DMatrix::from_column_slice(dim, 1, rhs.as_slice())).column(0).into_owned();

        let current = *report.costs.last().expect("initial cost");
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let candidate = retract(&nodes, &delta, scale);
            let cost = total_cost(&candidate, &graph.edges);
            if cost <= current {
                accepted = Some((candidate, cost));
                break;
            }
            scale *= 0.5;
        }
        report.iterations += 1;
        let Some((candidate, cost)) = accepted else {
            report.converged = true;
            break;
        };
        nodes = candidate;
        report.costs.push(cost);
        let step = delta.norm() * scale;
        debug!("pose graph iteration {}: cost {cost:.6e}, step {step:.3e}", report.iterations);
        if step < config.step_tolerance {
            report.converged = true;
            break;
        }
    }
    Ok((nodes, report))
}

/// Moves each frame rigidly by the correction of its node,
/// `after ∘ before⁻¹`, applied on the left of both poses.
pub fn apply_corrections<T: Real>(frames: &[TrajectoryFrame<T>], before: &[Pose<f64>], after: &[Pose<f64>]) -> Vec<TrajectoryFrame<T>> {
    frames
        .iter()
        .zip(before.iter().zip(after))
        .map(|(f, (b, a))| f.left_multiplied(&a.compose(&b.inverse()).cast()))
        .collect()
}

/// Weighted residual of a single edge, exposed for diagnostics.
pub fn edge_error(graph: &PoseGraph, edge: usize) -> Vector6<f64> {
    edge_residual(&graph.nodes, &graph.edges[edge])
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;

    fn chain(n: usize) -> Vec<TrajectoryFrame<f64>> {
        (0..n)
            .map(|k| {
                let p = Pose::from_yaw(0.1 * k as f64, Vector3::new(k as f64, 0.5 * k as f64, 0.0));
                TrajectoryFrame::rigid(p, k)
            })
            .collect()
    }

    fn unit_loop(a: usize, b: usize, relative: Pose<f64>) -> LoopConstraint {
        LoopConstraint { grid_a: 0, grid_b: 1, anchor_scan_a: a, anchor_scan_b: b, relative, score: 0.9, overlap: 0.5 }
    }

    #[test]
    fn edge_count_is_chain_plus_loops() {
        let frames = chain(10);
        let loops = [unit_loop(0, 9, Pose::identity()), unit_loop(2, 7, Pose::identity())];
        let graph = build_graph(&frames, &loops, &GraphConfig::default());
        assert_eq!(graph.nodes.len(), 10);
        assert_eq!(graph.edges.len(), 9 + 2);
        assert_eq!(graph.num_loop_edges(), 2);
        assert!((graph.edges[9].weight - 9.0).abs() < 1e-12);
    }

    #[test]
    fn consistent_chain_is_unchanged() {
        let graph = build_graph(&chain(20), &[], &GraphConfig::default());
        let (nodes, report) = optimize(&graph, &GraphConfig::default()).unwrap();
        assert!(report.converged);
        for (a, b) in nodes.iter().zip(&graph.nodes) {
            assert!((a.translation - b.translation).norm() < 1e-9);
            assert!(a.angle_to(b) < 1e-9);
        }
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let ni = Pose::new(UnitQuaternion::from_euler_angles(0.3, -0.2, 1.1), Vector3::new(1.0, 2.0, -0.5));
        let nj = Pose::new(UnitQuaternion::from_euler_angles(-0.1, 0.4, 2.0), Vector3::new(4.0, -1.0, 0.3));
        let z = Pose::new(UnitQuaternion::from_euler_angles(0.05, 0.1, 0.8), Vector3::new(2.5, -2.0, 1.0));
        let nodes = [ni, nj];
        let edge = Edge { from: 0, to: 1, measurement: z, weight: 1.0, kind: EdgeKind::Loop };
        let (_, ji, jj) = linearize(&nodes, &edge);
        let h = 1e-6;
        for (node, analytic) in [(0, ji), (1, jj)] {
            for k in 0..6 {
                let perturb = |sign: f64| {
                    let mut d = Vector6::zeros();
                    d[k] = sign * h;
                    let mut ns = nodes;
                    ns[node].translation += d.fixed_rows::<3>(0);
                    ns[node].rotation *= so3_exp(&d.fixed_rows::<3>(3).into_owned());
                    edge_residual(&ns, &edge)
                };
                let numeric = (perturb(1.0) - perturb(-1.0)) / (2.0 * h);
                assert!((numeric - analytic.column(k)).norm() < 1e-6, "node {node} column {k}");
            }
        }
    }

    #[test]
    fn g2o_dump_layout() {
        let graph = build_graph(&chain(3), &[unit_loop(0, 2, Pose::identity())], &GraphConfig::default());
        let mut out = Vec::new();
        graph.write_g2o(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3 + 3);
        assert!(lines[0].starts_with("VERTEX_SE3:QUAT 0 "));
        assert_eq!(lines[0].split_whitespace().count(), 9);
        assert!(lines[5].starts_with("EDGE_SE3:QUAT 0 2 "));
        assert_eq!(lines[5].split_whitespace().count(), 3 + 7 + 21);
    }

    #[test]
    fn corrections_move_both_poses() {
        let frames = vec![TrajectoryFrame::new(Pose::identity(), Pose::from_translation(Vector3::new(1.0, 0.0, 0.0)), 0)];
        let before = [frames[0].mid_pose()];
        let after = [Pose::from_yaw(0.5, Vector3::new(0.0, 3.0, 0.0)).compose(&before[0])];
        let fixed = apply_corrections(&frames, &before, &after);
        assert!((fixed[0].mid_pose().translation - after[0].translation).norm() < 1e-12);
        assert!(((fixed[0].end.translation - fixed[0].begin.translation).norm() - 1.0).abs() < 1e-12);
    }
}
