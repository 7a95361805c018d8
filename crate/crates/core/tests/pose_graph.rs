mod support;

use ct_icp::evaluation::absolute_trajectory_error;
use ct_icp::geometry::Pose;
use ct_icp::pose_graph::{optimize, Edge, EdgeKind, GraphConfig, PoseGraph};
use nalgebra::{UnitQuaternion, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noisy(rng: &mut ChaCha8Rng, p: Pose<f64>, sigma_t: f64, sigma_r: f64) -> Pose<f64> {
    let mut v = || rng.random_range(-1.0..1.0);
    let dr = UnitQuaternion::from_scaled_axis(Vector3::new(v(), v(), v()) * sigma_r);
    let dt = Vector3::new(v(), v(), v()) * sigma_t;
    Pose::new(p.rotation * dr, p.translation + dt)
}

/// Square of side 10 m; three noisy odometry edges and a noisy closure.
fn square(seed: u64) -> PoseGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = Pose::from_yaw(std::f64::consts::FRAC_PI_2, Vector3::new(10.0, 0.0, 0.0));
    let mut edges = Vec::new();
    for k in 0..3 {
        edges.push(Edge { from: k, to: k + 1, measurement: noisy(&mut rng, step, 0.3, 0.05), weight: 1.0, kind: EdgeKind::Odometry });
    }
    edges.push(Edge { from: 3, to: 0, measurement: noisy(&mut rng, step, 0.3, 0.05), weight: 9.0, kind: EdgeKind::Loop });
    let mut nodes = vec![Pose::identity()];
    for e in &edges[..3] {
        let last = *nodes.last().unwrap();
        nodes.push(last.compose(&e.measurement));
    }
    PoseGraph { nodes, edges }
}

#[test]
fn square_matches_brute_force_minimizer() {
    for seed in 0..5 {
        let graph = square(seed);
        let (ours, report) = optimize(&graph, &GraphConfig::default()).unwrap();
        assert!(report.converged);
        let oracle = support::brute_force_graph(&graph.nodes, &graph.edges);
        for (a, b) in ours.iter().zip(&oracle) {
            assert!((a.translation - b.translation).norm() < 1e-5, "seed {seed}: {a:?} vs {b:?}");
            assert!(a.angle_to(b) < 1e-5, "seed {seed}");
        }
    }
}

#[test]
fn drifted_chain_snaps_to_heavy_loop() {
    // Ground truth: a 36-node circle; odometry has a yaw bias.
    let n = 36;
    let step = Pose::from_yaw(std::f64::consts::TAU / n as f64, Vector3::new(2.0, 0.0, 0.0));
    let biased = Pose::from_yaw(std::f64::consts::TAU / n as f64 + 0.01, Vector3::new(2.02, 0.0, 0.0));
    let mut truth = vec![Pose::identity()];
    let mut drifted = vec![Pose::identity()];
    for _ in 1..n {
        truth.push(truth.last().unwrap().compose(&step));
        drifted.push(drifted.last().unwrap().compose(&biased));
    }
    let mut edges: Vec<Edge> = (0..n - 1)
        .map(|k| Edge { from: k, to: k + 1, measurement: biased, weight: 1.0, kind: EdgeKind::Odometry })
        .collect();
    edges.push(Edge { from: n - 1, to: 0, measurement: step, weight: 1e4, kind: EdgeKind::Loop });
    let graph = PoseGraph { nodes: drifted.clone(), edges };
    let (nodes, report) = optimize(&graph, &GraphConfig::default()).unwrap();

    assert!(report.costs.windows(2).all(|w| w[1] <= w[0]), "{:?}", report.costs);
    let closure = nodes[n - 1].compose(&step);
    assert!(closure.translation.norm() < 0.05, "{closure:?}");
    let positions = |p: &[Pose<f64>]| p.to_vec();
    let before = absolute_trajectory_error(&positions(&drifted), &truth).unwrap();
    let after = absolute_trajectory_error(&nodes, &truth).unwrap();
    assert!(after < 0.5 * before, "ATE {before} -> {after}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn optimization_is_gauge_invariant(seed in 0u64..1000, yaw in -3.0f64..3.0, tx in -50.0f64..50.0, roll in -0.5f64..0.5) {
        let graph = square(seed);
        let t = Pose::new(UnitQuaternion::from_euler_angles(roll, 0.2, yaw), Vector3::new(tx, -tx * 0.5, 3.0));
        let moved = PoseGraph { nodes: graph.nodes.iter().map(|p| t.compose(p)).collect(), edges: graph.edges.clone() };
        let config = GraphConfig { step_tolerance: 1e-12, ..GraphConfig::default() };
        let (a, _) = optimize(&graph, &config).unwrap();
        let (b, _) = optimize(&moved, &config).unwrap();
        for (p, q) in a.iter().zip(&b) {
            let expected = t.compose(p);
            prop_assert!((expected.translation - q.translation).norm() < 1e-7);
            prop_assert!(expected.angle_to(q) < 1e-7);
        }
    }

    #[test]
    fn cost_never_increases(seed in 0u64..1000) {
        let (_, report) = optimize(&square(seed), &GraphConfig::default()).unwrap();
        prop_assert!(report.costs.windows(2).all(|w| w[1] <= w[0]));
    }
}
