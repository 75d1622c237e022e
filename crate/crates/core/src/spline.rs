//! Auxiliary-UAV trajectories: natural cubic splines through timed knots.
//!
//! Knot times are slot indices. Positioning needs every receiver at its
//! observation point in the same slot, so knot slots are fixed; repair only
//! reshapes the curve between them.

use serde::Serialize;

use crate::energy::{trajectory_energy, EnergyParams};
use crate::error::{Error, Result};
use crate::model::{FleetSpec, Point, TimeGrid, Trajectory, GEOM_TOL};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Knot {
    pub slot: usize,
    pub point: Point,
    /// False for endpoints and filler knots added by repair.
    pub pop: bool,
}

impl Knot {
    pub fn new(slot: usize, point: Point, pop: bool) -> Self {
        Self { slot, point, pop }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplinePlan {
    pub knots: Vec<Knot>,
    pub trajectory: Trajectory,
}

/// Second derivatives of a natural cubic spline (Thomas algorithm).
fn natural_moments(t: &[f64], y: &[f64]) -> Vec<f64> {
    let n = t.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    let h: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    // interior equations i = 1..n-2
    let k = n - 2;
    let mut diag = vec![0.0; k];
    let mut rhs = vec![0.0; k];
    let mut upper = vec![0.0; k];
    for i in 1..n - 1 {
        diag[i - 1] = 2.0 * (h[i - 1] + h[i]);
        upper[i - 1] = h[i];
        rhs[i - 1] = 6.0 * ((y[i + 1] - y[i]) / h[i] - (y[i] - y[i - 1]) / h[i - 1]);
    }
    for i in 1..k {
        let f = h[i] / diag[i - 1];
        diag[i] -= f * upper[i - 1];
        rhs[i] -= f * rhs[i - 1];
    }
    m[k] = rhs[k - 1] / diag[k - 1];
    for i in (0..k - 1).rev() {
        m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
    }
    m
}

fn eval(t: &[f64], y: &[f64], m: &[f64], x: f64) -> f64 {
    let i = match t.iter().rposition(|&ti| ti <= x) {
        Some(i) if i + 1 < t.len() => i,
        Some(i) => i - 1,
        None => 0,
    };
    let h = t[i + 1] - t[i];
    let a = (t[i + 1] - x) / h;
    let b = (x - t[i]) / h;
    a * y[i] + b * y[i + 1] + ((a * a * a - a) * m[i] + (b * b * b - b) * m[i + 1]) * h * h / 6.0
}

/// Natural cubic spline through `knots`, sampled at every slot `0..=W`.
pub fn fit_spline(knots: &[Knot], grid: &TimeGrid) -> Result<SplinePlan> {
    if knots.len() < 2 {
        return Err(Error::InvalidArgument("a spline needs at least two knots".into()));
    }
    for w in knots.windows(2) {
        if w[1].slot == w[0].slot {
            return Err(Error::DuplicateKnotSlot(w[0].slot));
        }
        if w[1].slot < w[0].slot {
            return Err(Error::InvalidArgument("knot slots must be increasing".into()));
        }
    }
    if knots[0].slot != 0 || knots.last().unwrap().slot != grid.slot_count {
        return Err(Error::InvalidArgument(format!(
            "knots must span slots 0..={}",
            grid.slot_count
        )));
    }
    let t: Vec<f64> = knots.iter().map(|k| k.slot as f64).collect();
    let xs: Vec<f64> = knots.iter().map(|k| k.point.x).collect();
    let ys: Vec<f64> = knots.iter().map(|k| k.point.y).collect();
    let mx = natural_moments(&t, &xs);
    let my = natural_moments(&t, &ys);
    let mut waypoints: Vec<Point> = (0..=grid.slot_count)
        .map(|w| Point::new(eval(&t, &xs, &mx, w as f64), eval(&t, &ys, &my, w as f64)))
        .collect();
    // exact interpolation at knots
    for k in knots {
        waypoints[k.slot] = k.point;
    }
    Ok(SplinePlan {
        knots: knots.to_vec(),
        trajectory: Trajectory::new(waypoints),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FeasibilityReport {
    /// Slots (1-based) whose speed exceeds `V_max`.
    pub speed_violations: Vec<usize>,
    pub max_speed: f64,
    pub energy: f64,
    pub energy_ok: bool,
    /// `(slot, distance to UAV 1)` at each observation-point knot.
    pub pop_ranges: Vec<(usize, f64)>,
    pub pop_range_ok: bool,
    /// Slots where the distance to UAV 1 exceeds `R_max` (advisory).
    pub range_advisories: Vec<usize>,
}

impl FeasibilityReport {
    /// Speed, energy and observation-point range all satisfied.
    pub fn is_feasible(&self) -> bool {
        self.speed_violations.is_empty() && self.energy_ok && self.pop_range_ok
    }
}

pub fn check_feasibility(
    plan: &SplinePlan,
    main: &Trajectory,
    fleet: &FleetSpec,
    grid: &TimeGrid,
    energy: &EnergyParams,
) -> FeasibilityReport {
    let tau = grid.slot_length;
    let speeds = plan.trajectory.speeds(tau);
    let speed_violations = speeds
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > fleet.max_speed + GEOM_TOL / tau)
        .map(|(i, _)| i + 1)
        .collect();
    let e = trajectory_energy(&plan.trajectory, grid, energy);
    let dist = |w: usize| (plan.trajectory.waypoints[w] - main.waypoints[w]).norm();
    let pop_ranges: Vec<(usize, f64)> = plan.knots.iter().filter(|k| k.pop).map(|k| (k.slot, dist(k.slot))).collect();
    FeasibilityReport {
        speed_violations,
        max_speed: speeds.iter().cloned().fold(0.0, f64::max),
        energy: e,
        energy_ok: e <= fleet.max_energy,
        pop_range_ok: pop_ranges.iter().all(|&(_, d)| d <= fleet.max_range + GEOM_TOL),
        pop_ranges,
        range_advisories: (0..=grid.slot_count).filter(|&w| dist(w) > fleet.max_range + GEOM_TOL).collect(),
    }
}

/// Whether consecutive knots can be joined at `V_max` at all.
pub fn knots_reachable(knots: &[Knot], fleet: &FleetSpec, grid: &TimeGrid) -> bool {
    knots.windows(2).all(|w| {
        let gap = (w[1].slot - w[0].slot) as f64 * grid.slot_length;
        (w[1].point - w[0].point).norm() <= fleet.max_speed * gap + GEOM_TOL
    })
}

const REPAIR_ROUNDS: usize = 10;

/// Removes speed violations by pinning violating knot intervals to their
/// straight chord (filler knots at every slot of the interval) and re-fitting.
pub fn repair_plan(plan: &SplinePlan, fleet: &FleetSpec, grid: &TimeGrid) -> Result<SplinePlan> {
    let original: Vec<Knot> = plan.knots.iter().copied().filter(|k| k.pop || k.slot == 0 || k.slot == grid.slot_count).collect();
    if !knots_reachable(&original, fleet, grid) {
        return Err(Error::Unrepairable(
            "consecutive observation points are farther apart than V_max allows".into(),
        ));
    }
    let tau = grid.slot_length;
    let violating = |p: &SplinePlan| -> Vec<usize> {
        p.trajectory
            .speeds(tau)
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > fleet.max_speed + GEOM_TOL / tau)
            .map(|(i, _)| i + 1)
            .collect()
    };
    let mut current = plan.clone();
    for _ in 0..REPAIR_ROUNDS {
        let bad = violating(&current);
        if bad.is_empty() {
            return Ok(current);
        }
        let mut knots = current.knots.clone();
        for &w in &bad {
            // enclosing pair of knots for slot interval (w-1, w)
            let hi = knots.iter().position(|k| k.slot >= w).unwrap();
            let (a, b) = (knots[hi - 1], knots[hi]);
            for s in a.slot + 1..b.slot {
                let f = (s - a.slot) as f64 / (b.slot - a.slot) as f64;
                knots.push(Knot::new(s, a.point + (b.point - a.point) * f, false));
            }
            knots.sort_by_key(|k| k.slot);
            knots.dedup_by_key(|k| k.slot);
        }
        current = fit_spline(&knots, grid)?;
    }
    if violating(&current).is_empty() {
        Ok(current)
    } else {
        Err(Error::Unrepairable(format!(
            "speed violations remain after {REPAIR_ROUNDS} rounds"
        )))
    }
}
