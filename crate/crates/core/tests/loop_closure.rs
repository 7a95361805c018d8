use ct_icp::loop_closure::{build_elevation_grid, detect_loops, gravity_aligned, ElevationGrid, LoopClosureConfig};
use ct_icp::scan::grid_sample_keypoints;
use ct_icp::sim::make_scenario;

fn town_grids(config: &LoopClosureConfig) -> (Vec<ElevationGrid>, Vec<ct_icp::TrajectoryFrame>) {
    let scenario = make_scenario("curved_town_loop").unwrap();
    let truth = scenario.ground_truth();
    let scans: Vec<_> = (0..scenario.num_scans)
        .map(|i| {
            let mut scan = scenario.simulate(i, 11).0;
            scan.points = grid_sample_keypoints(&scan.points, 0.25);
            scan
        })
        .collect();
    let grids = config
        .windows(scenario.num_scans)
        .into_iter()
        .map(|(first, last)| build_elevation_grid(&truth[first..=last], &scans[first..=last], config).unwrap())
        .collect();
    (grids, truth)
}

#[test]
fn loops_on_ground_truth_windows_match_true_relative_pose() {
    let config = LoopClosureConfig::default();
    let (grids, truth) = town_grids(&config);
    assert!(grids.len() >= 5);
    let loops = detect_loops(&grids, &config);
    assert!(!loops.is_empty());
    for l in &loops {
        assert!(l.grid_b >= l.grid_a + config.min_separation);
        let a = gravity_aligned(&truth[l.anchor_scan_a].mid_pose());
        let b = gravity_aligned(&truth[l.anchor_scan_b].mid_pose());
        let expected = a.inverse().compose(&b);
        let error = expected.inverse().compose(&l.relative);
        assert!(error.translation.norm() < 0.5, "{}-{}: {:?}", l.grid_a, l.grid_b, error.translation);
        assert!(error.rotation_angle().to_degrees() < 2.0, "{}-{}", l.grid_a, l.grid_b);
        assert!(l.score >= config.min_correlation);
    }
}

#[test]
fn windows_step_by_map_minus_overlap() {
    let config = LoopClosureConfig::default();
    let windows = config.windows(300);
    assert_eq!(windows, vec![(0, 99), (70, 169), (140, 239)]);
}
