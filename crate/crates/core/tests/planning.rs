use uavplan::bcd::{run_bcd, BcdOptions, Initializer};
use uavplan::model::straight_line_trajectory;
use uavplan::pipeline::{optimize_pops, pops_artifacts, run_all, sp1_artifacts, PipelineConfig, SimOptions};
use uavplan::pso::PsoParams;
use uavplan::spline::check_feasibility;
use uavplan::{Execution, Scenario, Trajectory};

fn min_distance(t: &Trajectory, p: &uavplan::Point) -> f64 {
    t.waypoints.iter().map(|u| (u - p).norm()).fold(f64::INFINITY, f64::min)
}

#[test]
fn reference_bcd_improves_on_straight_line() {
    let sc = Scenario::reference();
    let r = run_bcd(&sc, &BcdOptions { max_iterations: 12, early_stop: false, ..Default::default() }).unwrap();
    for w in r.lambda_history.windows(2) {
        assert!(w[1] >= w[0] - 1e-6, "{:?}", r.lambda_history);
    }
    let lam = r.final_lambda();
    assert!(lam >= 1.0, "requirement not met: {lam}");
    for bits in &r.uploaded_bits {
        assert!(*bits >= lam * sc.data_requirement * (1.0 - 1e-6));
    }
    // true positions lie inside the uncertainty disks, so they receive at least the worst case
    for (t, w) in r.true_uploaded_bits.iter().zip(&r.uploaded_bits) {
        assert!(t >= &(w * (1.0 - 1e-9)));
    }
    assert!(r.trajectory.violations(&sc.fleet, &sc.grid).is_empty());
    assert!(r.energy <= sc.fleet.max_energy * (1.0 + 1e-6));

    let line = straight_line_trajectory(&sc.fleet, &sc.grid).unwrap();
    let closer = sc
        .sensors
        .iter()
        .filter(|s| min_distance(&r.trajectory, &s.rough_center) < min_distance(&line, &s.rough_center))
        .count();
    assert!(closer + 1 >= sc.sensor_count(), "{closer} sensors got closer");
}

#[test]
fn greedy_initializer_also_meets_requirement() {
    let sc = Scenario::reference();
    let r = run_bcd(&sc, &BcdOptions { init: Initializer::GreedyVisit, max_iterations: 6, ..Default::default() }).unwrap();
    for w in r.lambda_history.windows(2) {
        assert!(w[1] >= w[0] - 1e-6);
    }
    assert!(r.final_lambda() >= 1.0);
}

#[test]
fn pops_follow_optimized_trajectory() {
    let sc = Scenario::reference();
    let r = run_bcd(&sc, &BcdOptions::default()).unwrap();
    let params = PsoParams { population: 30, iterations: 60, ..Default::default() };
    let run = optimize_pops(&r.trajectory, &sc, &params, 4, Execution::Parallel).unwrap();
    let pops = run.pops();
    let line = straight_line_trajectory(&sc.fleet, &sc.grid).unwrap();
    for (m, s) in sc.sensors.iter().enumerate() {
        assert_eq!(r.trajectory.waypoints[pops.main_slots[m]], pops.main_pops[m]);
        assert!((pops.main_pops[m] - s.rough_center).norm() <= min_distance(&line, &s.rough_center) + 1e-9);
        for a in &pops.aux_pops[m] {
            assert!((a - pops.main_pops[m]).norm() <= sc.fleet.max_range + 1e-9);
        }
    }
    for (n, plan) in run.plans.iter().enumerate() {
        let rep = check_feasibility(plan, &r.trajectory, &sc.fleet, &sc.grid, &sc.energy);
        assert!(rep.is_feasible(), "UAV {}: {rep:?}", n + 2);
        for m in 0..sc.sensor_count() {
            let at = plan.trajectory.waypoints[pops.main_slots[m]];
            assert!((at - pops.aux_pops[m][n]).norm() < 1e-6);
        }
        assert_eq!(plan.trajectory.waypoints[0], sc.fleet.start);
        assert_eq!(*plan.trajectory.waypoints.last().unwrap(), sc.fleet.end);
    }
    let names: Vec<String> = pops_artifacts(&run, &r.trajectory, &sc).into_iter().map(|a| a.0).collect();
    assert_eq!(names, ["pops.csv", "aux_trajectories.csv", "pso_history.csv"]);
}

#[test]
fn artifacts_have_expected_shape() {
    let sc = Scenario::reference();
    let r = run_bcd(&sc, &BcdOptions { max_iterations: 2, ..Default::default() }).unwrap();
    let files = sp1_artifacts(&r, &sc, "_t100");
    let get = |name: &str| files.iter().find(|f| f.0 == name).unwrap().1.clone();
    let traj = get("trajectory_t100.csv");
    assert_eq!(traj.lines().count(), sc.grid.slot_count + 2);
    assert_eq!(traj.lines().next().unwrap(), "slot,x,y,speed");
    let sched = get("schedule_t100.csv");
    assert_eq!(sched.lines().next().unwrap(), "slot,sensor_1,sensor_2,sensor_3,sensor_4,sensor_5");
    assert_eq!(sched.lines().count(), sc.grid.slot_count + 1);
    assert_eq!(get("lambda_history_t100.csv").lines().count(), r.lambda_history.len() + 1);
}

#[test]
fn mini_pipeline_is_reproducible() {
    let sc = Scenario::mini();
    let cfg = PipelineConfig {
        pso: PsoParams { population: 10, iterations: 10, ..Default::default() },
        sim: SimOptions { trials: 100, variances: vec![0.5, 1.0], distances: vec![10.0, 20.0], ..Default::default() },
        bcd: BcdOptions { max_iterations: 3, ..Default::default() },
        seed: 11,
    };
    let a = run_all(&sc, &cfg).unwrap();
    let seq = PipelineConfig { bcd: BcdOptions { execution: Execution::Sequential, ..cfg.bcd }, ..cfg.clone() };
    let b = run_all(&sc, &seq).unwrap();
    assert_eq!(a, b);
    let c = run_all(&sc, &PipelineConfig { seed: 12, ..cfg }).unwrap();
    let hist = |f: &[(String, String)]| f.iter().find(|x| x.0 == "pso_history.csv").unwrap().1.clone();
    assert_ne!(hist(&a), hist(&c));
}
