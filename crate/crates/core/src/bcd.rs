//! Block coordinate descent over (schedule, trajectory) for UAV 1.
//!
//! Each round re-solves the schedule LP on the current trajectory, then takes
//! one SCA step on the trajectory with that schedule fixed. Neither block can
//! lower `lambda`, so the history is non-decreasing.

use log::info;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::channel::{data_from_rates, rate_matrix, true_rate_matrix};
use crate::energy::trajectory_energy;
use crate::error::{Error, Result};
use crate::model::{straight_line_trajectory, Point, Scenario, Schedule, Trajectory};
use crate::par::Execution;
use crate::sca::{build_expansion, solve_subproblem, ScaOptions};
use crate::schedule::{solve_schedule, LpSolution};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initializer {
    #[default]
    StraightLine,
    /// Constant-speed tour through the rough sensor positions, ordered along
    /// the start-to-end direction and pulled toward the straight line if too
    /// long to fly.
    GreedyVisit,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BcdOptions {
    pub max_iterations: usize,
    pub early_stop: bool,
    pub early_stop_tol: f64,
    pub early_stop_patience: usize,
    pub init: Initializer,
    pub sca: ScaOptions,
    pub execution: Execution,
}

impl Default for BcdOptions {
    fn default() -> Self {
        Self {
            max_iterations: 30,
            early_stop: true,
            early_stop_tol: 1e-4,
            early_stop_patience: 3,
            init: Initializer::StraightLine,
            sca: ScaOptions::default(),
            execution: Execution::Parallel,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub lambda: f64,
    pub kkt_residual: f64,
    pub energy: f64,
    pub newton_steps: usize,
    pub fell_back: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BcdReport {
    /// LP value of the initial trajectory followed by one entry per round.
    pub lambda_history: Vec<f64>,
    pub trajectory: Trajectory,
    pub schedule: Schedule,
    /// Worst-case rates of the final trajectory (W x M).
    pub rates: DMatrix<f64>,
    /// Worst-case bits per sensor.
    pub uploaded_bits: Vec<f64>,
    /// Bits per sensor at the true sensor positions.
    pub true_uploaded_bits: Vec<f64>,
    pub energy: f64,
    pub log: Vec<IterationLog>,
    pub stopped_early: bool,
}

impl BcdReport {
    pub fn final_lambda(&self) -> f64 {
        *self.lambda_history.last().unwrap_or(&0.0)
    }
}

/// Resamples a polyline at `n + 1` equally spaced arc-length positions.
fn resample(path: &[Point], n: usize) -> Vec<Point> {
    let mut cum = vec![0.0];
    for s in path.windows(2) {
        cum.push(cum.last().unwrap() + (s[1] - s[0]).norm());
    }
    let total = *cum.last().unwrap();
    let mut seg = 0;
    (0..=n)
        .map(|k| {
            let target = total * k as f64 / n as f64;
            while seg + 2 < cum.len() && cum[seg + 1] < target {
                seg += 1;
            }
            let len = cum[seg + 1] - cum[seg];
            if len == 0.0 {
                path[seg]
            } else {
                let f = ((target - cum[seg]) / len).clamp(0.0, 1.0);
                path[seg] + (path[seg + 1] - path[seg]) * f
            }
        })
        .collect()
}

pub fn greedy_visit_trajectory(scenario: &Scenario) -> Result<Trajectory> {
    let f = &scenario.fleet;
    let g = &scenario.grid;
    let axis = f.end - f.start;
    let axis_len2 = axis.norm_squared();
    let mut centers: Vec<(f64, Point)> = scenario
        .sensors
        .iter()
        .map(|s| {
            let t = if axis_len2 > 0.0 { (s.rough_center - f.start).dot(&axis) / axis_len2 } else { 0.0 };
            (t, s.rough_center)
        })
        .collect();
    centers.sort_by(|a, b| a.0.total_cmp(&b.0));
    let reach = 0.95 * g.slot_count as f64 * g.slot_length * f.max_speed;
    let mut beta: f64 = 1.0;
    loop {
        let mut path = vec![f.start];
        for &(t, c) in &centers {
            let on_line = f.start + axis * t.clamp(0.0, 1.0);
            path.push(on_line + (c - on_line) * beta);
        }
        path.push(f.end);
        let len: f64 = path.windows(2).map(|s| (s[1] - s[0]).norm()).sum();
        if len <= reach || beta < 1e-3 {
            if len > reach {
                return straight_line_trajectory(f, g);
            }
            return Ok(Trajectory::new(resample(&path, g.slot_count)));
        }
        beta *= 0.8;
    }
}

fn initial_trajectory(scenario: &Scenario, init: Initializer) -> Result<Trajectory> {
    let traj = match init {
        Initializer::StraightLine => straight_line_trajectory(&scenario.fleet, &scenario.grid),
        Initializer::GreedyVisit => greedy_visit_trajectory(scenario),
    }
    .map_err(|e| Error::InitializationInfeasible(e.to_string()))?;
    let energy = trajectory_energy(&traj, &scenario.grid, &scenario.energy);
    if energy > scenario.fleet.max_energy {
        return Err(Error::InitializationInfeasible(format!(
            "initial trajectory needs {energy:.1} J, budget is {:.1} J",
            scenario.fleet.max_energy
        )));
    }
    Ok(traj)
}

fn schedule_for(traj: &Trajectory, scenario: &Scenario, exec: Execution) -> Result<(DMatrix<f64>, LpSolution)> {
    let rates = rate_matrix(traj, scenario, exec);
    let lp = solve_schedule(&rates, &scenario.grid, scenario.data_requirement)?;
    Ok((rates, lp))
}

pub fn run_bcd(scenario: &Scenario, opts: &BcdOptions) -> Result<BcdReport> {
    let mut traj = initial_trajectory(scenario, opts.init)?;
    let (mut rates, mut lp) = schedule_for(&traj, scenario, opts.execution)?;
    let mut history = vec![lp.lambda];
    let mut log = Vec::new();
    let mut flat_rounds = 0;
    let mut stopped_early = false;

    for l in 1..=opts.max_iterations {
        let step = build_expansion(&traj, scenario, opts.execution)
            .and_then(|exp| solve_subproblem(&lp.schedule, &exp, scenario, &opts.sca))
            .map_err(|e| Error::Bcd { iteration: l, source: Box::new(e) })?;
        traj = step.trajectory;
        (rates, lp) = schedule_for(&traj, scenario, opts.execution).map_err(|e| Error::Bcd {
            iteration: l,
            source: Box::new(e),
        })?;
        let prev = *history.last().unwrap();
        history.push(lp.lambda);
        log.push(IterationLog {
            iteration: l,
            lambda: lp.lambda,
            kkt_residual: step.kkt_residual,
            energy: step.energy,
            newton_steps: step.newton_steps,
            fell_back: step.fell_back,
        });
        info!("BCD {l}: lambda {:.6}, energy {:.1} J", lp.lambda, step.energy);

        if (lp.lambda - prev).abs() < opts.early_stop_tol {
            flat_rounds += 1;
        } else {
            flat_rounds = 0;
        }
        if opts.early_stop && flat_rounds >= opts.early_stop_patience {
            info!("BCD stopped after {l} rounds: lambda changed < {:e} for {flat_rounds} rounds", opts.early_stop_tol);
            stopped_early = true;
            break;
        }
    }

    let tau = scenario.grid.slot_length;
    let uploaded_bits = data_from_rates(&rates, &lp.schedule, tau)?;
    let true_uploaded_bits = data_from_rates(&true_rate_matrix(&traj, scenario), &lp.schedule, tau)?;
    Ok(BcdReport {
        lambda_history: history,
        energy: trajectory_energy(&traj, &scenario.grid, &scenario.energy),
        trajectory: traj,
        schedule: lp.schedule,
        rates,
        uploaded_bits,
        true_uploaded_bits,
        log,
        stopped_early,
    })
}
