//! Independent oracles shared by the integration tests and the acceptance
//! harness. Nothing here calls into the code under test beyond plain data
//! types.
#![allow(dead_code)]

use ct_icp::geometry::Pose;
use ct_icp::pose_graph::Edge;
use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Rotation3, UnitQuaternion, Vector3};

pub fn homogeneous(p: &Pose<f64>) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(p.rotation.to_rotation_matrix().matrix());
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&p.translation);
    m
}

/// Per-edge residual `[t; axis-angle]` of `Z⁻¹ Ni⁻¹ Nj`, from 4x4 matrices.
fn matrix_residual(ni: &Matrix4<f64>, nj: &Matrix4<f64>, z: &Matrix4<f64>) -> [f64; 6] {
    let e = z.try_inverse().unwrap() * ni.try_inverse().unwrap() * nj;
    let r: Matrix3<f64> = e.fixed_view::<3, 3>(0, 0).into_owned();
    let w = Rotation3::from_matrix(&r).scaled_axis();
    [e[(0, 3)], e[(1, 3)], e[(2, 3)], w.x, w.y, w.z]
}

/// Nodes 1.. parameterized by absolute rotation vector and translation.
fn unpack(x: &DVector<f64>, fixed: &Matrix4<f64>) -> Vec<Matrix4<f64>> {
    let mut out = vec![*fixed];
    for k in 0..x.len() / 6 {
        let w = Vector3::new(x[6 * k], x[6 * k + 1], x[6 * k + 2]);
        let t = Vector3::new(x[6 * k + 3], x[6 * k + 4], x[6 * k + 5]);
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(Rotation3::new(w).matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        out.push(m);
    }
    out
}

fn stacked(x: &DVector<f64>, fixed: &Matrix4<f64>, edges: &[Edge]) -> DVector<f64> {
    let nodes = unpack(x, fixed);
    let mut r = DVector::zeros(6 * edges.len());
    for (k, e) in edges.iter().enumerate() {
        let res = matrix_residual(&nodes[e.from], &nodes[e.to], &homogeneous(&e.measurement));
        for c in 0..6 {
            r[6 * k + c] = res[c] * e.weight.sqrt();
        }
    }
    r
}

/// Minimizes the weighted pose-graph cost with node 0 fixed by
/// Levenberg-Marquardt over a global rotation-vector parameterization, with
/// central-difference Jacobians, run to machine precision.
pub fn brute_force_graph(nodes: &[Pose<f64>], edges: &[Edge]) -> Vec<Pose<f64>> {
    let fixed = homogeneous(&nodes[0]);
    let mut x = DVector::zeros(6 * (nodes.len() - 1));
    for (k, n) in nodes.iter().enumerate().skip(1) {
        let w = n.rotation.scaled_axis();
        x.fixed_rows_mut::<3>(6 * (k - 1)).copy_from(&w);
        x.fixed_rows_mut::<3>(6 * (k - 1) + 3).copy_from(&n.translation);
    }
    let mut lambda = 1e-3;
    let mut r = stacked(&x, &fixed, edges);
    for _ in 0..2000 {
        let h = 1e-6;
        let mut jac = DMatrix::zeros(r.len(), x.len());
        for c in 0..x.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[c] += h;
            xm[c] -= h;
            jac.set_column(c, &((stacked(&xp, &fixed, edges) - stacked(&xm, &fixed, edges)) / (2.0 * h)));
        }
        let jt = jac.transpose();
        let mut a = &jt * &jac;
        for d in 0..a.nrows() {
            a[(d, d)] *= 1.0 + lambda;
        }
        let step = a.lu().solve(&(-(&jt * &r))).unwrap();
        let candidate = &x + &step;
        let rc = stacked(&candidate, &fixed, edges);
        if rc.norm_squared() <= r.norm_squared() {
            x = candidate;
            r = rc;
            lambda = (lambda * 0.3).max(1e-12);
            if step.norm() < 1e-13 {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }
    unpack(&x, &fixed)
        .iter()
        .map(|m| {
            let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
            Pose::new(
                UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix(&r)),
                m.fixed_view::<3, 1>(0, 3).into_owned(),
            )
        })
        .collect()
}
