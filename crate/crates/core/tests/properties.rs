//! Cross-module invariants checked on generated inputs.

use approx::assert_relative_eq;
use proptest::prelude::*;
use replay_dagger::dataset::{make_synthetic_scenario, ScenarioKind};
use replay_dagger::geometry::{EgoFrame, Point2, ReferencePath};
use replay_dagger::planner::{step_node, PlanNode, DEFAULT_ACCELS};
use replay_dagger::policy::{heatmap, knn_bc_fit, Dataset, LabeledSample, RasterConfig, Source};
use replay_dagger::refine::{blend_to_ego, qp_objective, qp_smooth, RefineConfig};
use replay_dagger::simulator::{EgoState, Metrics, Outcome, Trajectory, Waypoint};

fn arb_outcome() -> impl Strategy<Value = Outcome> {
    prop_oneof![
        Just(Outcome::Success),
        Just(Outcome::FailVehicle),
        Just(Outcome::FailCurb),
        Just(Outcome::Timeout),
    ]
}

fn x_axis() -> ReferencePath {
    ReferencePath::new("x", vec![Point2::new(-20.0, 0.0), Point2::new(300.0, 0.0)], 1.0).unwrap()
}

fn rough_on_x(speed: f64, dt: f64, steps: usize) -> Trajectory {
    Trajectory::new(
        (0..=steps)
            .map(|k| Waypoint {
                t: dt * k as f64,
                pos: Point2::new(speed * dt * k as f64, 0.0),
                heading: Some(0.0),
            })
            .collect(),
    )
    .unwrap()
}

fn sample(features: Vec<f64>, targets: Vec<Point2>, multiplicity: u32) -> LabeledSample {
    LabeledSample {
        features,
        targets,
        source: Source::Original,
        multiplicity,
        context: None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn ego_frame_round_trips(ox in -100.0..100.0f64, oy in -100.0..100.0f64, h in -4.0..4.0f64,
                             px in -100.0..100.0f64, py in -100.0..100.0f64) {
        let f = EgoFrame::new(Point2::new(ox, oy), h);
        let p = Point2::new(px, py);
        let back = f.to_world(f.to_local(p));
        prop_assert!(back.distance(p) < 1e-9);
        prop_assert!((f.to_local(p).norm() - p.distance(f.origin)).abs() < 1e-9);
    }

    #[test]
    fn step_node_never_reverses(s in 0.0..100.0f64, v in 0.0..20.0f64, ai in 0usize..9, dt in 0.05..1.5f64) {
        let a = DEFAULT_ACCELS[ai];
        let n = step_node(&PlanNode::root(s, v), a, dt);
        prop_assert!(n.v >= 0.0);
        prop_assert!(n.s >= s);
        prop_assert_eq!(n.t, dt);
        prop_assert_eq!(n.accel_in, Some(a));
    }

    #[test]
    fn partition_holds_for_any_outcomes(outcomes in proptest::collection::vec(arb_outcome(), 1..300)) {
        let m = Metrics::from_outcomes(outcomes.iter().copied());
        prop_assert!(m.counts_partition());
        prop_assert_eq!(m.successes + m.fail_vehicle + m.fail_curb + m.timeouts, outcomes.len());
        prop_assert!((m.suc_rate + m.fail_v_rate + m.fail_c_rate + m.timeout_rate - 1.0).abs() < 1e-12);
    }

    #[test]
    fn blend_starts_at_ego_and_rejoins(d in -3.0..3.0f64, speed in 3.0..15.0f64) {
        prop_assume!(d.abs() > 1e-3);
        let rough = rough_on_x(speed, 0.5, 16);
        let ego = EgoState { pos: Point2::new(0.0, d), heading: 0.0, speed, t: 0.0 };
        let out = blend_to_ego(&rough, &ego, &x_axis(), &RefineConfig::default()).unwrap();
        let w = out.waypoints();
        prop_assert_eq!(w.len(), rough.len());
        prop_assert_eq!(w[0].pos, ego.pos);
        prop_assert_eq!(w.last().unwrap().pos, rough.waypoints().last().unwrap().pos);
        let mut prev = d.abs();
        for p in w {
            prop_assert!(p.pos.y.abs() <= prev + 1e-12, "offset grew");
            prev = p.pos.y.abs();
        }
        for (a, b) in w.iter().zip(rough.waypoints()) {
            prop_assert_eq!(a.t, b.t);
        }
    }

    #[test]
    fn smoothing_never_worse_than_targets(raw in proptest::collection::vec((-1.0..1.0f64, -0.5..0.5f64), 3..12),
                                          heading in -3.0..3.0f64) {
        let offsets: Vec<Point2> = raw.iter().enumerate().map(|(i, (x, y))| Point2::new(*x, 2.0 * (i + 1) as f64 + y)).collect();
        let ego = EgoState { pos: Point2::new(3.0, -4.0), heading, speed: 6.0, t: 1.5 };
        let cfg = RefineConfig::default();
        let traj = qp_smooth(&offsets, 0.3, &ego, &cfg).unwrap();
        let w = traj.waypoints();
        prop_assert_eq!(w.len(), offsets.len() + 1);
        prop_assert_eq!(w[0].pos, ego.pos);
        let f = EgoFrame::new(ego.pos, ego.heading);
        let targets: Vec<Point2> = offsets.iter().map(|o| f.to_world(*o)).collect();
        let pts: Vec<Point2> = w[1..].iter().map(|p| p.pos).collect();
        let best = qp_objective(ego.pos, &pts, &targets, &cfg);
        prop_assert!(best <= qp_objective(ego.pos, &targets, &targets, &cfg) + 1e-9);
        for (k, p) in w.iter().enumerate() {
            prop_assert!((p.t - (1.5 + 0.3 * k as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn smoothing_commutes_with_rigid_motions(raw in proptest::collection::vec((-1.0..1.0f64, -0.5..0.5f64), 3..12),
                                             h0 in -3.0..3.0f64, rot in -3.0..3.0f64,
                                             tx in -50.0..50.0f64, ty in -50.0..50.0f64) {
        let offsets: Vec<Point2> = raw.iter().enumerate().map(|(i, (x, y))| Point2::new(*x, 2.0 * (i + 1) as f64 + y)).collect();
        let cfg = RefineConfig::default();
        let ego = EgoState { pos: Point2::new(1.0, 2.0), heading: h0, speed: 6.0, t: 0.0 };
        let motion = EgoFrame::new(Point2::new(tx, ty), rot);
        // to_world turns local +y onto `rot`, a rotation by rot - pi/2.
        let moved = EgoState { pos: motion.to_world(ego.pos), heading: h0 + rot - std::f64::consts::FRAC_PI_2, ..ego };
        let a = qp_smooth(&offsets, 0.3, &ego, &cfg).unwrap();
        let b = qp_smooth(&offsets, 0.3, &moved, &cfg).unwrap();
        for (p, q) in a.waypoints().iter().zip(b.waypoints()) {
            prop_assert!(motion.to_world(p.pos).distance(q.pos) < 1e-8);
        }
    }

    #[test]
    fn heatmap_is_bounded_with_unit_peak(x in -30.0..30.0f64, y in -30.0..30.0f64, sigma in 0.5..4.0f64) {
        let cfg = RasterConfig { resolution: 0.5, height: 48, width: 40 };
        let h = heatmap(&cfg, Point2::new(x, y), sigma);
        prop_assert_eq!(h.len(), 48 * 40);
        prop_assert!(h.iter().all(|v| (0.0..=1.0).contains(v)));
        let (r, c) = cfg.cell_of(Point2::new(x, y));
        if (0..48).contains(&r) && (0..40).contains(&c) {
            prop_assert_eq!(h[r as usize * 40 + c as usize], 1.0);
        }
    }

    #[test]
    fn knn_prediction_stays_in_target_hull(rows in proptest::collection::vec((-5.0..5.0f64, -5.0..5.0f64, -3.0..3.0f64, 1u32..4), 1..40),
                                           qx in -6.0..6.0f64, qy in -6.0..6.0f64, k in 1usize..8) {
        let mut ds = Dataset::new(1, 0.1).unwrap();
        for (a, b, t, m) in &rows {
            ds.push(sample(vec![*a, *b], vec![Point2::new(*t, 2.0 * t)], *m)).unwrap();
        }
        let policy = knn_bc_fit(&ds, k).unwrap();
        let p = policy.predict_features(&[qx, qy]).unwrap().offsets[0];
        let lo = rows.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
        let hi = rows.iter().map(|r| r.2).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(p.x >= lo - 1e-9 && p.x <= hi + 1e-9);
        prop_assert!((p.y - 2.0 * p.x).abs() < 1e-9);
    }

    #[test]
    fn dataset_jsonl_round_trips(rows in proptest::collection::vec((proptest::collection::vec(-1e6..1e6f64, 3), -50.0..50.0f64, 1u32..20), 1..20)) {
        let mut ds = Dataset::new(2, 0.3).unwrap();
        for (f, t, m) in &rows {
            ds.push(sample(f.clone(), vec![Point2::new(*t, -t), Point2::new(t / 3.0, 0.1)], *m)).unwrap();
        }
        let mut buf = Vec::new();
        ds.write_jsonl(&mut buf).unwrap();
        let back = Dataset::read_jsonl(buf.as_slice()).unwrap();
        prop_assert_eq!(back, ds);
    }
}

#[test]
fn synthetic_scenes_are_seed_deterministic() {
    for kind in [ScenarioKind::Roundabout, ScenarioKind::Intersection, ScenarioKind::Merging] {
        let a = make_synthetic_scenario(kind, 8, 99).unwrap();
        let b = make_synthetic_scenario(kind, 8, 99).unwrap();
        let c = make_synthetic_scenario(kind, 8, 100).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}

#[test]
fn smoothing_leaves_evenly_spaced_straight_targets_alone() {
    let ego = EgoState { pos: Point2::new(1.0, 2.0), heading: 0.4, speed: 5.0, t: 0.0 };
    let offsets: Vec<Point2> = (1..=8).map(|k| Point2::new(0.0, 1.5 * k as f64)).collect();
    let traj = qp_smooth(&offsets, 0.3, &ego, &RefineConfig::default()).unwrap();
    let f = EgoFrame::new(ego.pos, ego.heading);
    for (w, o) in traj.waypoints()[1..].iter().zip(&offsets) {
        let want = f.to_world(*o);
        assert_relative_eq!(w.pos.x, want.x, epsilon = 1e-9);
        assert_relative_eq!(w.pos.y, want.y, epsilon = 1e-9);
    }
}
