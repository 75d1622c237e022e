//! End-to-end runs: UAV-1 trajectory and schedule, positioning points with
//! auxiliary trajectories, and positioning-error simulation. Each stage
//! returns its artifacts as named CSV texts.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::bcd::{run_bcd, BcdOptions, BcdReport};
use crate::error::{Error, Result};
use crate::model::{Scenario, TimeGrid, Trajectory};
use crate::output::{self, NoiseRow};
use crate::par::Execution;
use crate::pso::{run_pso, PopSet, PsoOutcome, PsoParams};
use crate::spline::{check_feasibility, fit_spline, repair_plan, FeasibilityReport, SplinePlan};
use crate::tdoa::{crlb, monte_carlo, rmse_vs_distance, Emitter, Formation, NoiseModel, RmsePoint};

/// `(file name, contents)`.
pub type Artifact = (String, String);

pub fn sp1_artifacts(report: &BcdReport, scenario: &Scenario, suffix: &str) -> Vec<Artifact> {
    let name = |base: &str| format!("{base}{suffix}.csv");
    vec![
        (name("trajectory"), output::trajectory_csv(&report.trajectory, scenario.grid.slot_length)),
        (name("schedule"), output::schedule_csv(report)),
        (name("rates"), output::rates_csv(report)),
        (name("lambda_history"), output::lambda_history_csv(report)),
        (name("sca_log"), output::sca_log_csv(report)),
        (name("data"), output::data_csv(report, scenario)),
    ]
}

/// Same scenario with period `T`, keeping the slot length.
pub fn with_period(scenario: &Scenario, period: f64) -> Result<Scenario> {
    let tau = scenario.grid.slot_length;
    let slots = (period / tau).round();
    if !(slots >= 1.0) || ((slots * tau - period).abs() > 1e-9 * period.max(1.0)) {
        return Err(Error::InvalidArgument(format!("period {period} s is not a multiple of the slot length {tau} s")));
    }
    let mut s = scenario.clone();
    s.grid = TimeGrid::new(slots as usize, tau);
    Ok(s)
}

pub fn with_max_energy(scenario: &Scenario, max_energy: f64) -> Scenario {
    let mut s = scenario.clone();
    s.fleet.max_energy = max_energy;
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct PopsRun {
    pub pso: PsoOutcome,
    /// One plan per auxiliary UAV.
    pub plans: Vec<SplinePlan>,
    pub feasibility: Vec<FeasibilityReport>,
}

impl PopsRun {
    pub fn pops(&self) -> &PopSet {
        &self.pso.pops
    }
}

/// PSO placement followed by spline trajectories for every auxiliary UAV.
pub fn optimize_pops(main: &Trajectory, scenario: &Scenario, params: &PsoParams, seed: u64, exec: Execution) -> Result<PopsRun> {
    let pso = run_pso(main, scenario, params, seed, exec)?;
    let (fleet, grid) = (&scenario.fleet, &scenario.grid);
    let mut plans = Vec::new();
    let mut feasibility = Vec::new();
    for n in 0..pso.pops.aux_count() {
        let mut plan = fit_spline(&pso.pops.aux_knots(n, scenario), grid)?;
        let mut report = check_feasibility(&plan, main, fleet, grid, &scenario.energy);
        if !report.speed_violations.is_empty() {
            plan = repair_plan(&plan, fleet, grid)?;
            report = check_feasibility(&plan, main, fleet, grid, &scenario.energy);
        }
        if !report.is_feasible() {
            warn!("auxiliary UAV {}: plan violates energy or observation-point range", n + 2);
        }
        plans.push(plan);
        feasibility.push(report);
    }
    Ok(PopsRun { pso, plans, feasibility })
}

pub fn pops_artifacts(run: &PopsRun, main: &Trajectory, scenario: &Scenario) -> Vec<Artifact> {
    vec![
        ("pops.csv".into(), output::pops_csv(run.pops())),
        (
            "aux_trajectories.csv".into(),
            output::aux_trajectories_csv(&run.plans, main, scenario.grid.slot_length),
        ),
        ("pso_history.csv".into(), output::pso_history_csv(&run.pso.history)),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    /// UAV-1 horizontal distances for the distance sweep (m).
    pub distances: Vec<f64>,
    /// Range-difference noise variances `delta^2` (m²).
    pub variances: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            distances: (1..=10).map(|k| 10.0 * k as f64).collect(),
            variances: (1..=10).map(|k| k as f64 / 5.0).collect(),
            trials: 1000,
            seed: 0,
            execution: Execution::Parallel,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimRun {
    pub distance: Vec<RmsePoint>,
    pub noise: Vec<NoiseRow>,
}

/// Error at each sensor's true position, observed from `pops`, for every
/// noise variance. Sensor `m` uses trial streams of `seed + m + 1` at every
/// variance, so the curves differ only by the noise scale.
pub fn noise_sweep(pops: &PopSet, scenario: &Scenario, opts: &SimOptions) -> Result<Vec<NoiseRow>> {
    let mut rows = Vec::new();
    for &variance in &opts.variances {
        if !(variance >= 0.0) {
            return Err(Error::InvalidArgument(format!("negative noise variance {variance}")));
        }
        let noise = NoiseModel { delta: variance.sqrt(), ..scenario.noise };
        for (m, s) in scenario.sensors.iter().enumerate() {
            let mut uavs = vec![pops.main_pops[m]];
            uavs.extend_from_slice(&pops.aux_pops[m]);
            let e = Emitter::new(s.true_position, s.height);
            let bound = crlb(&uavs, scenario.fleet.altitude, &e, &noise)?.bound;
            let seed = opts.seed.wrapping_add(m as u64 + 1);
            let mc = monte_carlo(&uavs, scenario.fleet.altitude, &e, s.rough_center, &noise, opts.trials, seed, opts.execution)?;
            rows.push(NoiseRow { variance, sensor: m, crlb: bound, rmse: mc.rmse, trials: opts.trials });
        }
    }
    Ok(rows)
}

pub fn simulate(pops: &PopSet, scenario: &Scenario, opts: &SimOptions) -> Result<SimRun> {
    let distance = rmse_vs_distance(
        &opts.distances,
        &Formation::trailing(scenario.fleet.max_range),
        scenario.fleet.altitude,
        0.0,
        &scenario.noise,
        opts.trials,
        opts.seed,
        opts.execution,
    )?;
    Ok(SimRun { distance, noise: noise_sweep(pops, scenario, opts)? })
}

pub fn sim_artifacts(run: &SimRun) -> Vec<Artifact> {
    vec![
        ("rmse_vs_distance.csv".into(), output::rmse_vs_distance_csv(&run.distance)),
        ("rmse_vs_noise.csv".into(), output::rmse_vs_noise_csv(&run.noise)),
    ]
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PipelineConfig {
    pub bcd: BcdOptions,
    pub pso: PsoParams,
    pub sim: SimOptions,
    pub seed: u64,
}

/// All three stages in sequence; returns every artifact.
pub fn run_all(scenario: &Scenario, cfg: &PipelineConfig) -> Result<Vec<Artifact>> {
    let report = run_bcd(scenario, &cfg.bcd)?;
    let pops = optimize_pops(&report.trajectory, scenario, &cfg.pso, cfg.seed, cfg.bcd.execution)?;
    let sim = simulate(pops.pops(), scenario, &SimOptions { seed: cfg.seed, ..cfg.sim.clone() })?;
    let mut files = sp1_artifacts(&report, scenario, "");
    files.extend(pops_artifacts(&pops, &report.trajectory, scenario));
    files.extend(sim_artifacts(&sim));
    Ok(files)
}
