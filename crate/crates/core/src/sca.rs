//! Trajectory block: one successive-convex-approximation step.
//!
//! With the schedule fixed, the worst-case rate is replaced by its tangent
//! in the squared horizontal distance (a global under-estimator, since the
//! rate is convex and decreasing in that distance) and the induced-power
//! slack identity by its first-order expansion. What remains is a convex
//! program in the waypoints, the slacks and the epigraph variable `lambda`,
//! solved by the barrier method in [`crate::barrier`].

use nalgebra::{DMatrix, DVector, Matrix2};
use serde::{Deserialize, Serialize};

use crate::barrier::{self, BarrierOptions, ConstraintEval, ConvexProgram, HessBlock};
use crate::channel::{rate_matrix, worst_case_point};
use crate::energy::{induced_factor, max_flight_energy, propulsion_power_slack, trajectory_energy, EnergyParams};
use crate::error::{Error, Result};
use crate::model::{Point, Scenario, Schedule, Trajectory, GEOM_TOL};
use crate::par::Execution;

/// Taylor data of one SCA step. Matrices are W x M with row `w - 1` for slot `w`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaExpansion {
    pub base_trajectory: Trajectory,
    /// Slack `varsigma^l[w]` at the base speeds (index `w - 1`).
    pub base_slack: Vec<f64>,
    /// Base velocity vectors `v^l[w]`.
    pub base_velocity: Vec<Point>,
    /// Spectral efficiency (rate / bandwidth) at the base point.
    pub a1: DMatrix<f64>,
    /// Minus its derivative with respect to the squared horizontal distance.
    pub a2: DMatrix<f64>,
    /// Squared horizontal distance to the worst-case point.
    pub base_sq_distance: DMatrix<f64>,
    /// Worst-case sensor positions `[w - 1][m]`.
    pub worst_points: Vec<Vec<Point>>,
}

/// `(log2(1 + c0 / D^(a/2)), -d/dq of it)` with `D = q + dh^2`.
fn efficiency_and_slope(q: f64, dh: f64, c0: f64, alpha: f64) -> (f64, f64) {
    let d2 = q + dh * dh;
    let g = c0 * d2.powf(-alpha / 2.0);
    let a1 = g.ln_1p() / std::f64::consts::LN_2;
    let a2 = (alpha / 2.0) * g / d2 / ((1.0 + g) * std::f64::consts::LN_2);
    (a1, a2)
}

pub fn build_expansion(traj: &Trajectory, scenario: &Scenario, exec: Execution) -> Result<ScaExpansion> {
    let w_count = scenario.grid.slot_count;
    if traj.slot_count() != w_count {
        return Err(Error::DimensionMismatch(format!(
            "trajectory has {} slots, grid has {w_count}",
            traj.slot_count()
        )));
    }
    let tau = scenario.grid.slot_length;
    let ch = &scenario.channel;
    let c0 = ch.c0();
    let h = scenario.fleet.altitude;
    let rows = exec.map(w_count, |w| {
        let u = traj.waypoints[w + 1];
        scenario
            .sensors
            .iter()
            .map(|s| {
                let wp = worst_case_point(&u, s);
                let q = (u - wp).norm_squared();
                let (a1, a2) = efficiency_and_slope(q, h - s.height, c0, ch.alpha);
                (a1, a2, q, wp)
            })
            .collect::<Vec<_>>()
    });
    let m_count = scenario.sensor_count();
    let base_velocity: Vec<Point> = (1..=w_count)
        .map(|w| (traj.waypoints[w] - traj.waypoints[w - 1]) / tau)
        .collect();
    Ok(ScaExpansion {
        base_trajectory: traj.clone(),
        base_slack: base_velocity
            .iter()
            .map(|v| induced_factor(v.norm(), &scenario.energy))
            .collect(),
        base_velocity,
        a1: DMatrix::from_fn(w_count, m_count, |w, m| rows[w][m].0),
        a2: DMatrix::from_fn(w_count, m_count, |w, m| rows[w][m].1),
        base_sq_distance: DMatrix::from_fn(w_count, m_count, |w, m| rows[w][m].2),
        worst_points: rows.iter().map(|r| r.iter().map(|e| e.3).collect()).collect(),
    })
}

/// Tangent bound on the rate towards the fixed worst-case point of slot `w`
/// (1-based) and sensor `m` (0-based).
pub fn rate_lower_bound(u: &Point, exp: &ScaExpansion, w: usize, m: usize, bandwidth: f64) -> f64 {
    let s = exp.worst_points[w - 1][m];
    let (a1, a2) = (exp.a1[(w - 1, m)], exp.a2[(w - 1, m)]);
    bandwidth * (a1 - a2 * ((u - s).norm_squared() - exp.base_sq_distance[(w - 1, m)]))
}

/// Tangent bound on the worst-case rate over the whole uncertainty disk,
/// `B (A1 - A2 ((|u - c| + r_u)^2 - q^l))`. This is the surrogate the
/// optimizer uses: it stays below the worst-case rate at every `u`.
pub fn disk_rate_lower_bound(
    u: &Point,
    exp: &ScaExpansion,
    w: usize,
    m: usize,
    sensor: &crate::model::SensorSpec,
    bandwidth: f64,
) -> f64 {
    let q = ((u - sensor.rough_center).norm() + sensor.uncertainty_radius).powi(2);
    let (a1, a2) = (exp.a1[(w - 1, m)], exp.a2[(w - 1, m)]);
    bandwidth * (a1 - a2 * (q - exp.base_sq_distance[(w - 1, m)]))
}

/// `-(s^l)^2 + 2 s^l s - |v^l|^2 / v0^2 + 2 |v^l| v / v0^2` for speed `v`.
pub fn slack_lower_bound(v: f64, varsigma: f64, exp: &ScaExpansion, w: usize, p: &EnergyParams) -> f64 {
    let sl = exp.base_slack[w - 1];
    let vl = exp.base_velocity[w - 1].norm();
    let v02 = p.v0 * p.v0;
    -sl * sl + 2.0 * sl * varsigma - vl * vl / v02 + 2.0 * vl * v / v02
}

/// Same expansion with the inner product `<v^l, v>` in place of `|v^l| |v|`.
/// It is affine in the velocity, which keeps the slack constraint convex,
/// and it is never larger than [`slack_lower_bound`].
pub fn slack_lower_bound_vec(v: &Point, varsigma: f64, exp: &ScaExpansion, w: usize, p: &EnergyParams) -> f64 {
    let sl = exp.base_slack[w - 1];
    let vl = exp.base_velocity[w - 1];
    let v02 = p.v0 * p.v0;
    -sl * sl + 2.0 * sl * varsigma - vl.norm_squared() / v02 + 2.0 * vl.dot(v) / v02
}

/// `min_m (tau / I_min) sum_w R_m[w] x_m[w]` with worst-case rates.
pub fn min_data_ratio(traj: &Trajectory, sched: &Schedule, scenario: &Scenario) -> f64 {
    let rates = rate_matrix(traj, scenario, Execution::Sequential);
    let k = scenario.grid.slot_length / scenario.data_requirement;
    (0..sched.x.ncols())
        .map(|m| k * rates.column(m).dot(&sched.x.column(m)))
        .fold(f64::INFINITY, f64::min)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaOptions {
    /// Half-width of the per-waypoint box around the expansion point (m);
    /// `None` disables it.
    pub trust_region: Option<f64>,
    /// Smoothing length (m) for `|u - c|` when `r_u > 0`.
    pub smoothing: f64,
    /// Duality-gap target relative to `max(1, lambda)`.
    pub relative_gap: f64,
    #[serde(skip)]
    pub barrier: BarrierOptions,
}

impl Default for ScaOptions {
    fn default() -> Self {
        Self {
            trust_region: Some(50.0),
            smoothing: 1e-3,
            relative_gap: 1e-6,
            barrier: BarrierOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScaOutcome {
    pub trajectory: Trajectory,
    pub slacks: Vec<f64>,
    /// Min data ratio of `trajectory` with the true worst-case rates.
    pub lambda: f64,
    /// Epigraph value reached by the convex program.
    pub surrogate_lambda: f64,
    /// Min data ratio of the expansion trajectory.
    pub expansion_lambda: f64,
    pub kkt_residual: f64,
    pub duality_gap: f64,
    pub newton_steps: usize,
    /// Propulsion energy with the exact induced term.
    pub energy: f64,
    pub surrogate_energy: f64,
    /// True when the expansion point was returned unchanged.
    pub fell_back: bool,
}

struct Subproblem<'a> {
    scenario: &'a Scenario,
    exp: &'a ScaExpansion,
    kappa: DMatrix<f64>,
    trust: Option<f64>,
    eps: f64,
    lambda_floor: f64,
    lambda_scale: f64,
}

const BAND: usize = 4;

impl Subproblem<'_> {
    fn w(&self) -> usize {
        self.scenario.grid.slot_count
    }
    fn sig(w: usize) -> usize {
        3 * (w - 1)
    }
    fn px(w: usize) -> usize {
        3 * (w - 1) + 1
    }
    fn lam(&self) -> usize {
        3 * self.w() - 2
    }
    fn point(&self, z: &DVector<f64>, k: usize) -> Point {
        if k == 0 {
            self.scenario.fleet.start
        } else if k == self.w() {
            self.scenario.fleet.end
        } else {
            Point::new(z[Self::px(k)], z[Self::px(k) + 1])
        }
    }
    /// Free waypoint indices entering `d_w = p_w - p_{w-1}`, with sign.
    fn d_terms(&self, w: usize) -> Vec<(usize, f64)> {
        let mut t = Vec::with_capacity(2);
        if w > 1 {
            t.push((Self::px(w - 1), -1.0));
        }
        if w < self.w() {
            t.push((Self::px(w), 1.0));
        }
        t
    }
    /// Maps a gradient/Hessian in `d_w` space (plus an optional slack term)
    /// onto the variables.
    fn d_block(
        &self,
        w: usize,
        g: &Point,
        h: &Matrix2<f64>,
        slack: Option<(f64, f64)>,
        grad: &mut Vec<(usize, f64)>,
        hess: &mut Vec<HessBlock>,
    ) {
        let terms = self.d_terms(w);
        let mut idx = Vec::with_capacity(5);
        let mut signs = Vec::with_capacity(5);
        for &(base, sign) in &terms {
            grad.push((base, sign * g.x));
            grad.push((base + 1, sign * g.y));
            idx.extend([base, base + 1]);
            signs.extend([(sign, 0usize), (sign, 1usize)]);
        }
        let mut k = idx.len();
        if let Some((gs, _)) = slack {
            grad.push((Self::sig(w), gs));
            idx.push(Self::sig(w));
            k += 1;
        }
        if k == 0 {
            return;
        }
        let mut mat = DMatrix::zeros(k, k);
        for a in 0..signs.len() {
            for b in 0..signs.len() {
                mat[(a, b)] = signs[a].0 * signs[b].0 * h[(signs[a].1, signs[b].1)];
            }
        }
        if let Some((_, hs)) = slack {
            mat[(k - 1, k - 1)] = hs;
        }
        hess.push(HessBlock { idx, mat });
    }

    /// Smoothed squared worst-case distance and its derivatives.
    fn q_smooth(&self, p: &Point, m: usize) -> (f64, Point, Matrix2<f64>) {
        let s = &self.scenario.sensors[m];
        let r = s.uncertainty_radius;
        let e = p - s.rough_center;
        if r == 0.0 {
            return (e.norm_squared(), e * 2.0, Matrix2::identity() * 2.0);
        }
        let rho = (e.norm_squared() + self.eps * self.eps).sqrt();
        let q = (rho + r).powi(2);
        let g = e * (2.0 * (rho + r) / rho);
        let h = Matrix2::identity() * (2.0 * (rho + r) / rho) - e * e.transpose() * (2.0 * r / rho.powi(3));
        (q, g, h)
    }

    fn surrogate_data(&self, z: &DVector<f64>, m: usize) -> f64 {
        let mut total = 0.0;
        for w in 1..=self.w() {
            let k = self.kappa[(w - 1, m)];
            if k == 0.0 {
                continue;
            }
            let (a1, a2) = (self.exp.a1[(w - 1, m)], self.exp.a2[(w - 1, m)]);
            let ql = self.exp.base_sq_distance[(w - 1, m)];
            let q = if w < self.w() { self.q_smooth(&self.point(z, w), m).0 } else { ql };
            total += k * (a1 - a2 * (q - ql));
        }
        total
    }
}

impl ConvexProgram for Subproblem<'_> {
    fn dim(&self) -> usize {
        3 * self.w() - 1
    }
    fn border(&self) -> usize {
        1
    }
    fn bandwidth(&self) -> usize {
        BAND
    }
    fn cost(&self) -> DVector<f64> {
        let mut c = DVector::zeros(self.dim());
        c[self.lam()] = -1.0;
        c
    }
    fn constraint_count(&self) -> usize {
        let w = self.w();
        2 * w + 1 + self.scenario.sensor_count() + if self.trust.is_some() { 4 * (w - 1) } else { 0 } + 1
    }
    fn constraint_name(&self, i: usize) -> String {
        let w = self.w();
        let m = self.scenario.sensor_count();
        if i < w {
            format!("speed[{}]", i + 1)
        } else if i < 2 * w {
            format!("energy-slack[{}]", i - w + 1)
        } else if i == 2 * w {
            "energy budget".into()
        } else if i < 2 * w + 1 + m {
            format!("data[sensor {}]", i - 2 * w)
        } else if i + 1 < self.constraint_count() {
            format!("trust-region[{}]", (i - 2 * w - 1 - m) / 4 + 1)
        } else {
            "lambda floor".into()
        }
    }
    fn in_domain(&self, z: &DVector<f64>) -> bool {
        (1..=self.w()).all(|w| z[Self::sig(w)] > 0.0) && z.iter().all(|v| v.is_finite())
    }
    fn values(&self, z: &DVector<f64>) -> Vec<f64> {
        self.evaluate(z).into_iter().map(|e| e.value).collect()
    }
    fn evaluate(&self, z: &DVector<f64>) -> Vec<ConstraintEval> {
        let sc = self.scenario;
        let w_count = self.w();
        let tau = sc.grid.slot_length;
        let ep = &sc.energy;
        let r = tau * sc.fleet.max_speed;
        let r2 = r * r;
        let v02 = ep.v0 * ep.v0;
        let mut out = Vec::with_capacity(self.constraint_count());

        let d: Vec<Point> = (1..=w_count).map(|w| self.point(z, w) - self.point(z, w - 1)).collect();

        for w in 1..=w_count {
            let dw = d[w - 1];
            let mut grad = Vec::new();
            let mut hess = Vec::new();
            self.d_block(w, &(dw * (2.0 / r2)), &(Matrix2::identity() * (2.0 / r2)), None, &mut grad, &mut hess);
            out.push(ConstraintEval { value: (dw.norm_squared() - r2) / r2, grad, hess });
        }
        for w in 1..=w_count {
            let s = z[Self::sig(w)];
            let sl = self.exp.base_slack[w - 1];
            let vl = self.exp.base_velocity[w - 1];
            let theta = slack_lower_bound_vec(&(d[w - 1] / tau), s, self.exp, w, ep);
            let mut grad = Vec::new();
            let mut hess = Vec::new();
            self.d_block(
                w,
                &(vl * (-2.0 / (tau * v02))),
                &Matrix2::zeros(),
                Some((-2.0 / s.powi(3) - 2.0 * sl, 6.0 / s.powi(4))),
                &mut grad,
                &mut hess,
            );
            out.push(ConstraintEval { value: 1.0 / (s * s) - theta, grad, hess });
        }
        {
            let e_max = effective_budget(sc);
            let cp = ep.parasitic_coeff();
            let quad = 3.0 * ep.k_b / (tau * tau * ep.v_t * ep.v_t);
            let cub = cp / tau.powi(3);
            let mut total = 0.0;
            let mut grad = Vec::with_capacity(5 * w_count);
            let mut hess = Vec::with_capacity(w_count);
            for w in 1..=w_count {
                let dw = d[w - 1];
                let n = dw.norm();
                let s = z[Self::sig(w)];
                total += ep.k_b + quad * n * n + cub * n.powi(3) + ep.k_i * s;
                let g = (dw * (2.0 * quad) + dw * (3.0 * cub * n)) * (tau / e_max);
                let mut h = Matrix2::identity() * (2.0 * quad);
                if n > 0.0 {
                    h += (Matrix2::identity() * n + dw * dw.transpose() / n) * (3.0 * cub);
                }
                self.d_block(
                    w,
                    &g,
                    &(h * (tau / e_max)),
                    Some((tau * ep.k_i / e_max, 0.0)),
                    &mut grad,
                    &mut hess,
                );
            }
            out.push(ConstraintEval { value: (tau * total - e_max) / e_max, grad, hess });
        }
        for m in 0..sc.sensor_count() {
            let lam = z[self.lam()];
            let mut grad = vec![(self.lam(), 1.0)];
            let mut hess = Vec::new();
            for w in 1..w_count {
                let k = self.kappa[(w - 1, m)];
                if k == 0.0 {
                    continue;
                }
                let a2 = self.exp.a2[(w - 1, m)];
                let (_, g, h) = self.q_smooth(&self.point(z, w), m);
                let base = Self::px(w);
                grad.push((base, k * a2 * g.x));
                grad.push((base + 1, k * a2 * g.y));
                hess.push(HessBlock {
                    idx: vec![base, base + 1],
                    mat: DMatrix::from_column_slice(2, 2, (h * (k * a2)).as_slice()),
                });
            }
            out.push(ConstraintEval { value: lam - self.surrogate_data(z, m), grad, hess });
        }
        if let Some(delta) = self.trust {
            for w in 1..w_count {
                let base = Self::px(w);
                let pl = self.exp.base_trajectory.waypoints[w];
                for c in 0..2 {
                    let off = z[base + c] - pl[c];
                    out.push(ConstraintEval { value: off / delta - 1.0, grad: vec![(base + c, 1.0 / delta)], hess: vec![] });
                    out.push(ConstraintEval { value: -off / delta - 1.0, grad: vec![(base + c, -1.0 / delta)], hess: vec![] });
                }
            }
        }
        out.push(ConstraintEval {
            value: (self.lambda_floor - z[self.lam()]) / self.lambda_scale,
            grad: vec![(self.lam(), -1.0 / self.lambda_scale)],
            hess: vec![],
        });
        out
    }
}

/// Energy budget used inside the subproblem. A budget no flight can exhaust
/// is replaced by a fixed multiple of the physical maximum: the feasible set
/// is unchanged, and the (inactive) barrier term then no longer depends on
/// how generous the budget is.
pub fn effective_budget(sc: &Scenario) -> f64 {
    let cap = 2.0 * max_flight_energy(&sc.grid, &sc.energy, sc.fleet.max_speed);
    sc.fleet.max_energy.min(cap)
}

fn surrogate_energy(traj: &Trajectory, slacks: &[f64], scenario: &Scenario) -> f64 {
    let tau = scenario.grid.slot_length;
    traj.speeds(tau)
        .iter()
        .zip(slacks)
        .map(|(&v, &s)| tau * propulsion_power_slack(v, s, &scenario.energy))
        .sum()
}

/// Solves the convexified trajectory problem around `exp` for schedule `sched`.
pub fn solve_subproblem(
    sched: &Schedule,
    exp: &ScaExpansion,
    scenario: &Scenario,
    opts: &ScaOptions,
) -> Result<ScaOutcome> {
    let w_count = scenario.grid.slot_count;
    let m_count = scenario.sensor_count();
    if sched.x.shape() != (w_count, m_count) || exp.a1.shape() != (w_count, m_count) {
        return Err(Error::DimensionMismatch(format!(
            "schedule {:?}, expansion {:?}, scenario ({w_count}, {m_count})",
            sched.x.shape(),
            exp.a1.shape()
        )));
    }
    let base = &exp.base_trajectory;
    let expansion_lambda = min_data_ratio(base, sched, scenario);
    let base_energy = trajectory_energy(base, &scenario.grid, &scenario.energy);
    let base_feasible = base.violations(&scenario.fleet, &scenario.grid).is_empty()
        && base_energy <= scenario.fleet.max_energy * (1.0 + 1e-9);
    let fallback = |kkt: f64, gap: f64, steps: usize| ScaOutcome {
        trajectory: base.clone(),
        slacks: exp.base_slack.clone(),
        lambda: expansion_lambda,
        surrogate_lambda: expansion_lambda,
        expansion_lambda,
        kkt_residual: kkt,
        duality_gap: gap,
        newton_steps: steps,
        energy: base_energy,
        surrogate_energy: base_energy,
        fell_back: true,
    };

    let kappa = &sched.x * (scenario.grid.slot_length * scenario.channel.bandwidth / scenario.data_requirement);
    let lambda_scale = expansion_lambda.abs().max(1.0);
    let prob = Subproblem {
        scenario,
        exp,
        kappa,
        trust: opts.trust_region,
        eps: opts.smoothing,
        lambda_floor: expansion_lambda - 0.5 * lambda_scale,
        lambda_scale,
    };

    let mut z0 = DVector::zeros(prob.dim());
    for w in 1..=w_count {
        z0[Subproblem::sig(w)] = exp.base_slack[w - 1] * (1.0 + 1e-3);
        if w < w_count {
            z0[Subproblem::px(w)] = base.waypoints[w].x;
            z0[Subproblem::px(w) + 1] = base.waypoints[w].y;
        }
    }
    let surrogate0 = (0..m_count).map(|m| prob.surrogate_data(&z0, m)).fold(f64::INFINITY, f64::min);
    z0[prob.lam()] = surrogate0.min(expansion_lambda) - 0.1 * lambda_scale;

    // a tighter absolute gap only amplifies rounding in the data constraints
    let bopts = BarrierOptions {
        gap_tol: opts.relative_gap * lambda_scale,
        ..opts.barrier
    };
    let start = match barrier::find_interior(&prob, &z0, &bopts) {
        Ok(z) => z,
        Err(fail) => {
            if base_feasible {
                return Ok(fallback(f64::NAN, f64::NAN, 0));
            }
            return Err(Error::SubproblemInfeasible {
                violated: fail.violated.iter().map(|&i| prob.constraint_name(i)).collect(),
            });
        }
    };
    let res = barrier::minimize(&prob, start, &bopts, None);
    let z = &res.z;
    let trajectory = Trajectory::new((0..=w_count).map(|k| prob.point(z, k)).collect());
    let slacks: Vec<f64> = (1..=w_count).map(|w| z[Subproblem::sig(w)]).collect();
    let lambda = min_data_ratio(&trajectory, sched, scenario);
    let energy = trajectory_energy(&trajectory, &scenario.grid, &scenario.energy);
    let speed_ok = trajectory
        .speeds(scenario.grid.slot_length)
        .iter()
        .all(|&v| v <= scenario.fleet.max_speed + GEOM_TOL);

    if !(lambda >= expansion_lambda) || !speed_ok || energy > scenario.fleet.max_energy * (1.0 + 1e-9) {
        if base_feasible {
            return Ok(fallback(res.kkt_residual, res.duality_gap, res.newton_steps));
        }
        return Err(Error::SubproblemInfeasible {
            violated: vec!["no feasible improvement over an infeasible expansion point".into()],
        });
    }
    Ok(ScaOutcome {
        surrogate_energy: surrogate_energy(&trajectory, &slacks, scenario),
        trajectory,
        slacks,
        lambda,
        surrogate_lambda: z[prob.lam()],
        expansion_lambda,
        kkt_residual: res.kkt_residual,
        duality_gap: res.duality_gap,
        newton_steps: res.newton_steps,
        energy,
        fell_back: false,
    })
}
