use proptest::prelude::*;

use uavplan::energy::{propulsion_power, propulsion_power_slack, induced_factor, EnergyParams};
use uavplan::output::fmt_sig;
use uavplan::spline::{fit_spline, Knot};
use uavplan::tdoa::{crlb, Emitter, NoiseModel};
use uavplan::{Point, TimeGrid};

fn point() -> impl Strategy<Value = Point> {
    (-300.0..300.0f64, -300.0..300.0f64).prop_map(|(x, y)| Point::new(x, y))
}

proptest! {
    #[test]
    fn crlb_is_rigid_motion_invariant(
        u in proptest::collection::vec(point(), 3..6),
        s in point(),
        shift in point(),
        angle in 0.0..std::f64::consts::TAU,
    ) {
        let noise = NoiseModel::independent(1.0);
        let base = crlb(&u, 100.0, &Emitter::new(s, 0.0), &noise);
        prop_assume!(base.as_ref().is_ok_and(|c| c.condition_ok()));
        let rot = nalgebra::Rotation2::new(angle);
        let moved: Vec<Point> = u.iter().map(|p| rot * p + shift).collect();
        let other = crlb(&moved, 100.0, &Emitter::new(rot * s + shift, 0.0), &noise).unwrap();
        let b = base.unwrap().bound;
        prop_assert!((other.bound - b).abs() <= 1e-6 * b);
    }

    #[test]
    fn crlb_scales_with_noise_variance(
        u in proptest::collection::vec(point(), 3..5),
        s in point(),
        delta in 0.1..5.0f64,
    ) {
        let unit = crlb(&u, 100.0, &Emitter::new(s, 0.0), &NoiseModel::independent(1.0));
        prop_assume!(unit.as_ref().is_ok_and(|c| c.condition_ok()));
        let scaled = crlb(&u, 100.0, &Emitter::new(s, 0.0), &NoiseModel::independent(delta)).unwrap();
        let b = unit.unwrap().bound;
        prop_assert!((scaled.bound - delta * delta * b).abs() <= 1e-9 * scaled.bound);
    }

    #[test]
    fn slack_identity_and_power_floor(v in 0.0..60.0f64) {
        let p = EnergyParams::default();
        let exact = propulsion_power(v, &p);
        let slack = propulsion_power_slack(v, induced_factor(v, &p), &p);
        prop_assert!((exact - slack).abs() <= 1e-12 * exact);
        prop_assert!(exact > 0.0);
    }

    #[test]
    fn spline_interpolates_random_knots(
        pts in proptest::collection::vec(point(), 2..7),
        gaps in proptest::collection::vec(1usize..6, 6),
    ) {
        let mut slot = 0;
        let mut knots = Vec::new();
        for (i, p) in pts.iter().enumerate() {
            knots.push(Knot::new(slot, *p, i > 0 && i + 1 < pts.len()));
            slot += gaps[i % gaps.len()];
        }
        let grid = TimeGrid::new(knots.last().unwrap().slot, 1.0);
        let plan = fit_spline(&knots, &grid).unwrap();
        prop_assert_eq!(plan.trajectory.waypoints.len(), grid.slot_count + 1);
        for k in &knots {
            prop_assert!((plan.trajectory.waypoints[k.slot] - k.point).norm() < 1e-6);
        }
    }

    #[test]
    fn formatted_floats_keep_nine_digits(x in -1e12..1e12f64) {
        let back: f64 = fmt_sig(x).parse().unwrap();
        prop_assert!((back - x).abs() <= 5e-9 * x.abs().max(1e-300));
    }
}
