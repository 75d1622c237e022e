//! Positioning observation points (POPs) for TDoA localisation.
//!
//! UAV 1 observes each sensor from the waypoint of its trajectory nearest to
//! the sensor's rough position. Particle swarm optimisation then places the
//! auxiliary UAVs around that waypoint to minimise the average worst-case
//! CRLB over each sensor's uncertainty disk.

use std::f64::consts::TAU;

use log::{debug, info};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::energy::trajectory_energy;
use crate::error::{Error, Result};
use crate::model::{Point, Scenario, SensorSpec, Trajectory, GEOM_TOL};
use crate::par::{stream_rng, Execution};
use crate::spline::{fit_spline, Knot};
use crate::tdoa::{crlb, Emitter};

/// CRLB assigned to a sample point whose geometry is singular.
pub const SINGULAR_CRLB: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PsoParams {
    pub population: usize,
    pub iterations: usize,
    pub inertia_max: f64,
    pub inertia_min: f64,
    pub c1: f64,
    pub c2: f64,
    pub c_crlb: f64,
    pub c_energy: f64,
    pub c_speed: f64,
    /// Velocity bound as a fraction of each dimension's range.
    pub velocity_fraction: f64,
    pub samples: usize,
}

impl Default for PsoParams {
    fn default() -> Self {
        Self {
            population: 50,
            iterations: 200,
            inertia_max: 0.9,
            inertia_min: 0.4,
            c1: 2.0,
            c2: 2.0,
            c_crlb: 1.0,
            c_energy: 1e6,
            c_speed: 1e6,
            velocity_fraction: 0.2,
            samples: 17,
        }
    }
}

impl PsoParams {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.population < 1 {
            v.push("population must be at least 1".into());
        }
        if !(self.inertia_max > self.inertia_min) {
            v.push("inertia_max must exceed inertia_min".into());
        }
        if self.samples < 1 {
            v.push("samples must be at least 1".into());
        }
        for (name, x) in [("c_crlb", self.c_crlb), ("c_energy", self.c_energy), ("c_speed", self.c_speed)] {
            if !(x > 0.0) {
                v.push(format!("{name} must be positive"));
            }
        }
        v
    }
}

/// Linearly decreasing inertia weight.
pub fn inertia(r: usize, p: &PsoParams) -> f64 {
    if p.iterations == 0 {
        return p.inertia_max;
    }
    p.inertia_max - (p.inertia_max - p.inertia_min) * r as f64 / p.iterations as f64
}

/// Waypoint of `traj` nearest each sensor's rough centre, as `(point, slot)`.
/// Ties go to the earliest slot.
pub fn select_main_pops(traj: &Trajectory, sensors: &[SensorSpec]) -> Vec<(Point, usize)> {
    sensors
        .iter()
        .map(|s| {
            let mut best = (f64::INFINITY, 0);
            for (w, u) in traj.waypoints.iter().enumerate() {
                let d = (u - s.rough_center).norm_squared();
                if d < best.0 {
                    best = (d, w);
                }
            }
            (traj.waypoints[best.1], best.1)
        })
        .collect()
}

/// Centre, 8 boundary points at 45° spacing, then a Vogel spiral over the
/// disk interior. Fewer than 9 points takes the leading prefix of that list.
pub fn sample_uncertainty_points(sensor: &SensorSpec, count: usize) -> Vec<Point> {
    let c = sensor.rough_center;
    let r = sensor.uncertainty_radius;
    let mut pts = vec![c];
    for k in 0..8 {
        let a = k as f64 * TAU / 8.0;
        pts.push(c + Point::new(a.cos(), a.sin()) * r);
    }
    let interior = count.saturating_sub(9);
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    for i in 0..interior {
        let rho = r * ((i as f64 + 0.5) / interior as f64).sqrt();
        let a = i as f64 * golden;
        pts.push(c + Point::new(a.cos(), a.sin()) * rho);
    }
    pts.truncate(count);
    pts
}

/// Worst CRLB (m²) over `samples` for receivers at `uavs` (main first).
pub fn worst_case_crlb(uavs: &[Point], samples: &[Point], sensor_height: f64, scenario: &Scenario) -> f64 {
    samples
        .iter()
        .map(|&p| {
            crlb(uavs, scenario.fleet.altitude, &Emitter::new(p, sensor_height), &scenario.noise)
                .ok()
                .filter(|c| c.condition_ok() && c.bound.is_finite())
                .map_or(SINGULAR_CRLB, |c| c.bound.min(SINGULAR_CRLB))
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PopSet {
    /// UAV-1 slot index of each sensor's observation.
    pub main_slots: Vec<usize>,
    pub main_pops: Vec<Point>,
    /// `aux_pops[m][n]`: auxiliary UAV `n + 2` when observing sensor `m`.
    pub aux_pops: Vec<Vec<Point>>,
    /// Worst-case CRLB per sensor (m²).
    pub crlb: Vec<f64>,
    pub average_crlb: f64,
    pub feasible: bool,
}

impl PopSet {
    /// Worst-case RMS error bound per sensor (m).
    pub fn rms_errors(&self) -> Vec<f64> {
        self.crlb.iter().map(|c| c.sqrt()).collect()
    }

    pub fn average_rms_error(&self) -> f64 {
        let e = self.rms_errors();
        e.iter().sum::<f64>() / e.len().max(1) as f64
    }

    pub fn aux_count(&self) -> usize {
        self.aux_pops.first().map_or(0, Vec::len)
    }

    /// Knots for auxiliary UAV `n` (0-based), ordered by slot.
    /// Observations in the same slot at the same place are merged.
    pub fn aux_knots(&self, n: usize, scenario: &Scenario) -> Vec<Knot> {
        let mut knots: Vec<Knot> = self
            .main_slots
            .iter()
            .zip(&self.aux_pops)
            .map(|(&s, a)| Knot::new(s, a[n], true))
            .collect();
        knots.sort_by_key(|k| k.slot);
        knots.insert(0, Knot::new(0, scenario.fleet.start, false));
        knots.push(Knot::new(scenario.grid.slot_count, scenario.fleet.end, false));
        knots.dedup_by(|b, a| {
            let same = a.slot == b.slot && (a.point - b.point).norm() <= GEOM_TOL;
            a.pop |= same && b.pop;
            same
        });
        knots
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Fitness {
    pub value: f64,
    pub average_crlb: f64,
    pub energy_violated: bool,
    pub speed_violated: bool,
}

impl Fitness {
    pub fn feasible(&self) -> bool {
        !self.energy_violated && !self.speed_violated
    }
}

/// Everything fitness evaluation needs that does not depend on the particle.
#[derive(Clone, Debug)]
pub struct PopContext<'a> {
    pub scenario: &'a Scenario,
    pub main_slots: Vec<usize>,
    pub main_pops: Vec<Point>,
    pub samples: Vec<Vec<Point>>,
    pub aux_count: usize,
}

impl<'a> PopContext<'a> {
    pub fn new(traj: &Trajectory, scenario: &'a Scenario, samples: usize) -> Result<Self> {
        if traj.waypoints.is_empty() {
            return Err(Error::InvalidArgument("empty trajectory".into()));
        }
        if scenario.fleet.uav_count < 3 {
            return Err(Error::InvalidArgument("TDoA positioning needs at least 3 UAVs".into()));
        }
        let (main_pops, main_slots) = select_main_pops(traj, &scenario.sensors).into_iter().unzip();
        Ok(Self {
            scenario,
            main_slots,
            main_pops,
            samples: scenario.sensors.iter().map(|s| sample_uncertainty_points(s, samples)).collect(),
            aux_count: scenario.fleet.uav_count - 1,
        })
    }

    pub fn dimension(&self) -> usize {
        2 * self.main_pops.len() * self.aux_count
    }

    /// Decodes `[(d, θ)]` pairs laid out sensor-major into auxiliary points.
    pub fn decode(&self, position: &[f64]) -> Vec<Vec<Point>> {
        self.main_pops
            .iter()
            .enumerate()
            .map(|(m, &c)| {
                (0..self.aux_count)
                    .map(|n| {
                        let k = 2 * (m * self.aux_count + n);
                        let (d, th) = (position[k], position[k + 1]);
                        c + Point::new(th.cos(), th.sin()) * d
                    })
                    .collect()
            })
            .collect()
    }

    fn pop_set(&self, aux_pops: Vec<Vec<Point>>) -> (PopSet, Fitness) {
        let sc = self.scenario;
        let crlbs: Vec<f64> = (0..self.main_pops.len())
            .map(|m| {
                let mut uavs = vec![self.main_pops[m]];
                uavs.extend_from_slice(&aux_pops[m]);
                worst_case_crlb(&uavs, &self.samples[m], sc.sensors[m].height, sc)
            })
            .collect();
        let average_crlb = crlbs.iter().sum::<f64>() / crlbs.len().max(1) as f64;
        let mut set = PopSet {
            main_slots: self.main_slots.clone(),
            main_pops: self.main_pops.clone(),
            aux_pops,
            crlb: crlbs,
            average_crlb,
            feasible: false,
        };
        let (mut speed_violated, mut energy_violated) = (false, false);
        let (fleet, grid) = (&sc.fleet, &sc.grid);
        for n in 0..self.aux_count {
            let knots = set.aux_knots(n, sc);
            let reachable = knots.windows(2).all(|w| {
                let gap = (w[1].slot - w[0].slot) as f64 * grid.slot_length;
                (w[1].point - w[0].point).norm() <= fleet.max_speed * gap + GEOM_TOL
            });
            if !reachable {
                speed_violated = true;
                continue;
            }
            match fit_spline(&knots, grid) {
                Ok(plan) => {
                    if trajectory_energy(&plan.trajectory, grid, &sc.energy) > fleet.max_energy {
                        energy_violated = true;
                    }
                }
                Err(_) => speed_violated = true,
            }
        }
        set.feasible = !speed_violated && !energy_violated;
        let fit = Fitness {
            value: 0.0,
            average_crlb,
            energy_violated,
            speed_violated,
        };
        (set, fit)
    }

    pub fn evaluate(&self, position: &[f64], params: &PsoParams) -> (PopSet, Fitness) {
        let (set, mut fit) = self.pop_set(self.decode(position));
        fit.value = fitness_value(fit.average_crlb, fit.energy_violated, fit.speed_violated, params);
        (set, fit)
    }
}

/// `1 / (c_CRLB f_CRLB + c_e f_e + c_v f_v)` with violation flags as 0/1.
pub fn fitness_value(average_crlb: f64, energy_violated: bool, speed_violated: bool, p: &PsoParams) -> f64 {
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    1.0 / (p.c_crlb * average_crlb + p.c_energy * flag(energy_violated) + p.c_speed * flag(speed_violated))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Particle {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub pbest: Vec<f64>,
    pub pbest_fitness: f64,
}

/// Per-dimension position and velocity bounds for a `(d, θ)` layout.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bounds {
    pub max_distance: f64,
    pub velocity_fraction: f64,
}

impl Bounds {
    fn span(&self, k: usize) -> f64 {
        if k.is_multiple_of(2) {
            self.max_distance
        } else {
            TAU
        }
    }

    fn vmax(&self, k: usize) -> f64 {
        self.velocity_fraction * self.span(k)
    }

    fn clamp_position(&self, k: usize, x: f64) -> f64 {
        if k.is_multiple_of(2) {
            x.clamp(0.0, self.max_distance)
        } else {
            x.rem_euclid(TAU)
        }
    }
}

fn random_particle<R: Rng>(dim: usize, b: &Bounds, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let pos = (0..dim).map(|k| rng.random::<f64>() * b.span(k)).collect::<Vec<_>>();
    let pos = pos.into_iter().enumerate().map(|(k, x)| b.clamp_position(k, x)).collect();
    let vel = (0..dim).map(|k| (2.0 * rng.random::<f64>() - 1.0) * b.vmax(k)).collect();
    (pos, vel)
}

/// One velocity/position update of a single particle.
#[allow(clippy::needless_range_loop)]
pub fn step_particle<R: Rng>(
    particle: &mut Particle,
    gbest: &[f64],
    omega: f64,
    params: &PsoParams,
    bounds: &Bounds,
    rng: &mut R,
) {
    for k in 0..particle.position.len() {
        let x = particle.position[k];
        let (r1, r2): (f64, f64) = (rng.random(), rng.random());
        let mut dp = particle.pbest[k] - x;
        let mut dg = gbest[k] - x;
        if k % 2 == 1 {
            // shortest way round the circle
            dp = (dp + std::f64::consts::PI).rem_euclid(TAU) - std::f64::consts::PI;
            dg = (dg + std::f64::consts::PI).rem_euclid(TAU) - std::f64::consts::PI;
        }
        let vmax = bounds.vmax(k);
        let v = (omega * particle.velocity[k] + params.c1 * r1 * dp + params.c2 * r2 * dg).clamp(-vmax, vmax);
        particle.velocity[k] = v;
        particle.position[k] = bounds.clamp_position(k, x + v);
    }
}

/// Updates every particle of `swarm` for iteration `r` (1-based). Each
/// particle draws from its own stream, so the result is order-independent.
pub fn step_swarm(
    swarm: &mut [Particle],
    gbest: &[f64],
    r: usize,
    params: &PsoParams,
    bounds: &Bounds,
    seed: u64,
) {
    let omega = inertia(r - 1, params);
    let np = swarm.len() as u64;
    for (i, p) in swarm.iter_mut().enumerate() {
        let mut rng = stream_rng(seed, r as u64 * np + i as u64);
        step_particle(p, gbest, omega, params, bounds, &mut rng);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PsoHistoryEntry {
    pub iteration: usize,
    pub best_fitness: f64,
    pub avg_crlb_m2: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PsoOutcome {
    pub pops: PopSet,
    pub history: Vec<PsoHistoryEntry>,
    pub best_fitness: f64,
    pub best_position: Vec<f64>,
}

pub fn run_pso(traj: &Trajectory, scenario: &Scenario, params: &PsoParams, seed: u64, exec: Execution) -> Result<PsoOutcome> {
    let bad = params.violations();
    if !bad.is_empty() {
        return Err(Error::InvalidArgument(bad.join("; ")));
    }
    let ctx = PopContext::new(traj, scenario, params.samples)?;
    let bounds = Bounds { max_distance: scenario.fleet.max_range, velocity_fraction: params.velocity_fraction };
    let dim = ctx.dimension();
    let np = params.population;

    let init: Vec<(Particle, (PopSet, Fitness))> = exec.map(np, |i| {
        let mut rng = stream_rng(seed, i as u64);
        let (position, velocity) = random_particle(dim, &bounds, &mut rng);
        let eval = ctx.evaluate(&position, params);
        let p = Particle { pbest: position.clone(), pbest_fitness: eval.1.value, position, velocity };
        (p, eval)
    });
    let mut swarm = Vec::with_capacity(np);
    let mut best: Option<(Vec<f64>, PopSet, Fitness)> = None;
    for (p, (set, fit)) in init {
        if best.as_ref().is_none_or(|b| fit.value > b.2.value) {
            best = Some((p.position.clone(), set, fit));
        }
        swarm.push(p);
    }
    let (mut gbest, mut gset, mut gfit) = best.expect("population is non-empty");
    let mut history = vec![PsoHistoryEntry { iteration: 0, best_fitness: gfit.value, avg_crlb_m2: gfit.average_crlb }];

    for r in 1..=params.iterations {
        step_swarm(&mut swarm, &gbest, r, params, &bounds, seed);
        let evals: Vec<(PopSet, Fitness)> = exec.map(np, |i| ctx.evaluate(&swarm[i].position, params));
        for (p, (set, fit)) in swarm.iter_mut().zip(evals) {
            if fit.value > p.pbest_fitness {
                p.pbest_fitness = fit.value;
                p.pbest.clone_from(&p.position);
            }
            if fit.value > gfit.value {
                gbest.clone_from(&p.position);
                gset = set;
                gfit = fit;
            }
        }
        debug!("PSO {r}: best fitness {:.6e}, avg CRLB {:.4} m^2", gfit.value, gfit.average_crlb);
        history.push(PsoHistoryEntry { iteration: r, best_fitness: gfit.value, avg_crlb_m2: gfit.average_crlb });
    }

    if !gfit.feasible() {
        return Err(Error::NoFeasibleParticle { best: Box::new(gset) });
    }
    info!("PSO done: average worst-case CRLB {:.4} m^2", gset.average_crlb);
    Ok(PsoOutcome { pops: gset, history, best_fitness: gfit.value, best_position: gbest })
}

/// Fixed-formation baseline: auxiliaries at bearings `±90°` (or evenly spread
/// for more than two) from the direction toward the sensor, at `R_max`.
pub fn baseline_pops(traj: &Trajectory, scenario: &Scenario, samples: usize) -> Result<PopSet> {
    let ctx = PopContext::new(traj, scenario, samples)?;
    let mut position = Vec::with_capacity(ctx.dimension());
    for (m, c) in ctx.main_pops.iter().enumerate() {
        let to = scenario.sensors[m].rough_center - c;
        let base = if to.norm() > 0.0 { to.y.atan2(to.x) } else { 0.0 };
        for n in 0..ctx.aux_count {
            let off = if ctx.aux_count == 2 {
                if n == 0 { std::f64::consts::FRAC_PI_2 } else { -std::f64::consts::FRAC_PI_2 }
            } else {
                std::f64::consts::FRAC_PI_2 + n as f64 * TAU / ctx.aux_count as f64
            };
            position.push(scenario.fleet.max_range);
            position.push((base + off).rem_euclid(TAU));
        }
    }
    Ok(ctx.evaluate(&position, &PsoParams::default()).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{straight_line_trajectory, TimeGrid};
    use crate::tdoa::NoiseModel;

    /// UAV 1 passes through the origin at slot 15; sensor at (20, 100).
    pub(crate) fn single_sensor_scenario() -> (Scenario, Trajectory) {
        let mut sc = Scenario::defaults_with_sensors(vec![SensorSpec::exact(Point::new(20.0, 100.0), 0.0)]);
        sc.fleet.start = Point::new(-150.0, 30.0);
        sc.fleet.end = Point::new(150.0, -30.0);
        sc.fleet.max_range = 50.0;
        sc.fleet.uav_count = 3;
        sc.fleet.altitude = 100.0;
        sc.noise = NoiseModel::independent(1.0);
        sc.grid = TimeGrid::new(30, 1.0);
        let t = straight_line_trajectory(&sc.fleet, &sc.grid).unwrap();
        (sc, t)
    }

    #[test]
    fn inertia_schedule() {
        let p = PsoParams::default();
        assert_eq!(inertia(0, &p), 0.9);
        assert!((inertia(200, &p) - 0.4).abs() < 1e-15);
        assert!((inertia(100, &p) - 0.65).abs() < 1e-15);
    }

    #[test]
    fn main_pop_selection() {
        let t = Trajectory::new((0..=10).map(|i| Point::new(i as f64, 0.0)).collect());
        let at_start = SensorSpec::exact(Point::new(0.0, 0.0), 0.0);
        let between = SensorSpec::exact(Point::new(5.0, 3.0), 0.0);
        let t2 = Trajectory::new(
            [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 4.0, 3.0]
                .iter()
                .map(|&x| Point::new(x, 0.0))
                .collect(),
        );
        let tie = SensorSpec::exact(Point::new(3.0, 1.0), 0.0);
        assert_eq!(select_main_pops(&t, &[at_start])[0].1, 0);
        assert_eq!(select_main_pops(&t, &[between])[0].1, 5);
        assert_eq!(select_main_pops(&t2, &[tie])[0].1, 3);
    }

    #[test]
    fn sample_layout() {
        let mut s = SensorSpec::exact(Point::new(10.0, -5.0), 0.0);
        assert!(sample_uncertainty_points(&s, 17).iter().all(|p| *p == s.rough_center));
        s.uncertainty_radius = 10.0;
        let nine = sample_uncertainty_points(&s, 9);
        assert_eq!(nine[0], s.rough_center);
        for (k, p) in nine[1..].iter().enumerate() {
            let d = p - s.rough_center;
            assert!((d.norm() - 10.0).abs() < 1e-12);
            let a = (k as f64 * 45f64).to_radians();
            assert!((d.y.atan2(d.x).rem_euclid(TAU) - a).abs() < 1e-12);
        }
        let many = sample_uncertainty_points(&s, 40);
        assert_eq!(many.len(), 40);
        assert!(many.iter().all(|p| (p - s.rough_center).norm() <= 10.0 + 1e-12));
    }

    #[test]
    fn fitness_formula() {
        let p = PsoParams::default();
        assert_eq!(fitness_value(2.0, false, false, &p), 0.5);
        assert!(fitness_value(0.0, false, true, &p) <= 1e-6);
        assert!(fitness_value(0.0, true, false, &p) <= 1e-6);
    }

    #[test]
    fn zero_radius_is_single_point_crlb() {
        let (sc, t) = single_sensor_scenario();
        let ctx = PopContext::new(&t, &sc, 17).unwrap();
        let pos = [50.0, 0.0, 50.0, std::f64::consts::FRAC_PI_2];
        let (set, fit) = ctx.evaluate(&pos, &PsoParams::default());
        let direct = crlb(
            &[Point::zeros(), Point::new(50.0, 0.0), Point::new(0.0, 50.0)],
            100.0,
            &Emitter::new(Point::new(20.0, 100.0), 0.0),
            &sc.noise,
        )
        .unwrap()
        .bound;
        assert!((set.crlb[0] - direct).abs() < 1e-9 * direct);
        assert!((direct - 23.094_203_93).abs() < 1e-6);
        assert!(fit.feasible());
        assert!((fit.value - 1.0 / direct).abs() < 1e-12);
    }

    #[test]
    fn swarm_update_rules() {
        let params = PsoParams { c1: 0.0, c2: 0.0, ..Default::default() };
        let b = Bounds { max_distance: 50.0, velocity_fraction: 0.2 };
        let mut rng = stream_rng(0, 0);
        let mut p = Particle { position: vec![10.0, 1.0], velocity: vec![3.0, 0.5], pbest: vec![0.0, 0.0], pbest_fitness: 0.0 };
        step_particle(&mut p, &[0.0, 0.0], 1.0, &params, &b, &mut rng);
        assert_eq!(p.position, vec![13.0, 1.5]);

        let params = PsoParams::default();
        let mut still = Particle { position: vec![20.0, 2.0], velocity: vec![0.0, 0.0], pbest: vec![20.0, 2.0], pbest_fitness: 1.0 };
        step_particle(&mut still, &[20.0, 2.0], 0.7, &params, &b, &mut rng);
        assert_eq!(still.position, vec![20.0, 2.0]);

        let mut over = Particle { position: vec![48.0, 6.2], velocity: vec![10.0, 1.0], pbest: vec![48.0, 6.2], pbest_fitness: 1.0 };
        step_particle(&mut over, &[48.0, 6.2], 1.0, &params, &b, &mut rng);
        assert_eq!(over.position[0], 50.0);
        assert!((0.0..TAU).contains(&over.position[1]));
        assert!((over.position[1] - (7.2 - TAU)).abs() < 1e-12);
    }

    #[test]
    fn single_particle_no_iterations() {
        let (sc, t) = single_sensor_scenario();
        let params = PsoParams { population: 1, iterations: 0, ..Default::default() };
        let out = run_pso(&t, &sc, &params, 3, Execution::Sequential).unwrap();
        assert_eq!(out.history.len(), 1);
        let mut rng = stream_rng(3, 0);
        let ctx = PopContext::new(&t, &sc, params.samples).unwrap();
        let b = Bounds { max_distance: 50.0, velocity_fraction: 0.2 };
        let (pos, _) = random_particle(ctx.dimension(), &b, &mut rng);
        assert_eq!(out.best_position, pos);
        assert_eq!(out.pops.aux_pops, ctx.decode(&pos));
    }

    #[test]
    fn single_sensor_run_beats_baseline_and_spreads_to_range() {
        let (sc, t) = single_sensor_scenario();
        let params = PsoParams { iterations: 100, ..Default::default() };
        let out = run_pso(&t, &sc, &params, 0, Execution::Parallel).unwrap();
        for w in out.history.windows(2) {
            assert!(w[1].best_fitness >= w[0].best_fitness);
        }
        let base = baseline_pops(&t, &sc, params.samples).unwrap();
        assert!(out.pops.average_crlb <= base.average_crlb, "{} vs {}", out.pops.average_crlb, base.average_crlb);
        for a in &out.pops.aux_pops[0] {
            let d = (a - out.pops.main_pops[0]).norm();
            assert!((45.0..=50.0 + 1e-9).contains(&d), "{d}");
        }
        assert!(out.pops.average_crlb < out.history[0].avg_crlb_m2);
    }

    #[test]
    fn unreachable_pops_are_penalised() {
        let (mut sc, t) = single_sensor_scenario();
        sc.fleet.max_speed = 1.0; // cannot leave the start line fast enough
        sc.fleet.max_range = 400.0;
        let ctx = PopContext::new(&t, &sc, 1).unwrap();
        let (set, fit) = ctx.evaluate(&[400.0, 1.0, 400.0, 2.0], &PsoParams::default());
        assert!(fit.speed_violated && !set.feasible);
        assert!(fit.value <= 1e-6);
        let params = PsoParams { population: 4, iterations: 2, ..Default::default() };
        let mut strict = sc.clone();
        strict.fleet.max_speed = 1e-3;
        match run_pso(&t, &strict, &params, 0, Execution::Sequential) {
            Err(Error::NoFeasibleParticle { best }) => assert!(!best.feasible),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn deterministic_across_execution_modes() {
        let (sc, t) = single_sensor_scenario();
        let params = PsoParams { population: 12, iterations: 10, ..Default::default() };
        let a = run_pso(&t, &sc, &params, 9, Execution::Parallel).unwrap();
        let b = run_pso(&t, &sc, &params, 9, Execution::Sequential).unwrap();
        assert_eq!(a, b);
    }
}
